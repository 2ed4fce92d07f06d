use std::f64::consts::{PI, TAU};

use rayon::prelude::*;

use super::{smooth_l1, AngleEstimator, CropDescriptor, EstimatorError, SmoothL1Config};
use crate::geometry::Angle;

/// 72 bins of 5° each.
pub const DEFAULT_BINS: usize = 72;

const GRID_POINTS: usize = 720;
const SEARCH_TOLERANCE: f64 = 1e-4;

/// One supervised pair for [`fit_binned`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub feature: Angle,
    pub target: Angle,
    pub weight: f64,
}

/// Piecewise model over `K` equal bins of the feature circle. Bin `k`
/// covers `(−π + k·w, −π + (k+1)·w]` with `w = 2π/K` and holds an offset;
/// the prediction is the feature plus the offset interpolated linearly
/// between neighboring bin centers. All-zero offsets are the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedEstimator {
    offsets: Vec<Angle>,
    counts: Vec<usize>,
}

impl BinnedEstimator {
    pub fn from_parts(offsets: Vec<Angle>, counts: Vec<usize>) -> Result<Self, EstimatorError> {
        if offsets.len() < 2 {
            return Err(EstimatorError::TooFewBins(offsets.len()));
        }
        if counts.len() != offsets.len() {
            return Err(EstimatorError::Format(format!(
                "{} offsets but {} counts",
                offsets.len(),
                counts.len()
            )));
        }
        Ok(Self { offsets, counts })
    }

    pub fn bins(&self) -> usize {
        self.offsets.len()
    }

    pub fn bin_width(&self) -> f64 {
        TAU / self.bins() as f64
    }

    /// `(lower, upper]` edges of bin `k`.
    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        let w = self.bin_width();
        (-PI + k as f64 * w, -PI + (k + 1) as f64 * w)
    }

    pub fn bin_of(&self, feature: Angle) -> usize {
        bin_index(feature, self.bins())
    }

    pub fn bin_offset(&self, k: usize) -> Angle {
        self.offsets[k]
    }

    pub fn bin_count(&self, k: usize) -> usize {
        self.counts[k]
    }

    pub fn offsets(&self) -> &[Angle] {
        &self.offsets
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn predict(&self, feature: Angle) -> Angle {
        let k = self.bins();
        let pos = (feature.radians() + PI) / self.bin_width() - 0.5;
        let lo = pos.floor();
        let frac = pos - lo;
        let i0 = (lo as i64).rem_euclid(k as i64) as usize;
        let i1 = (i0 + 1) % k;
        let (o0, o1) = (self.offsets[i0], self.offsets[i1]);
        Angle::wrap(feature.radians() + o0.radians() + frac * (o1 - o0).radians())
    }
}

impl AngleEstimator for BinnedEstimator {
    fn estimate(&self, crop: &CropDescriptor) -> Result<Angle, EstimatorError> {
        Ok(self.predict(crop.feature))
    }
}

fn bin_index(feature: Angle, bins: usize) -> usize {
    let w = TAU / bins as f64;
    let k = ((feature.radians() + PI) / w).ceil() as i64 - 1;
    k.clamp(0, bins as i64 - 1) as usize
}

/// Fits one offset per bin minimizing the summed weighted smooth-L1 loss of
/// circular residuals `target − feature − offset`. Zero-weight samples are ignored; bins without
/// samples are filled by circular interpolation between the nearest
/// populated neighbors.
pub fn fit_binned(
    samples: &[TrainingSample],
    bins: usize,
    cfg: &SmoothL1Config,
) -> Result<BinnedEstimator, EstimatorError> {
    if bins < 2 {
        return Err(EstimatorError::TooFewBins(bins));
    }
    let mut per_bin: Vec<Vec<(f64, f64)>> = vec![Vec::new(); bins];
    for s in samples.iter().filter(|s| s.weight > 0.0) {
        let residual = (s.target - s.feature).radians();
        per_bin[bin_index(s.feature, bins)].push((residual, s.weight));
    }
    if per_bin.iter().all(Vec::is_empty) {
        return Err(EstimatorError::NoTargets);
    }
    for b in per_bin.iter_mut() {
        // summation order fixed so the fit does not depend on input order
        b.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    }
    let counts: Vec<usize> = per_bin.iter().map(Vec::len).collect();
    let fitted: Vec<Option<Angle>> = per_bin
        .par_iter()
        .map(|b| (!b.is_empty()).then(|| minimize_circular_loss(b, cfg)))
        .collect();

    let offsets = (0..bins)
        .map(|k| fitted[k].unwrap_or_else(|| interpolate_empty(&fitted, k)))
        .collect();
    Ok(BinnedEstimator { offsets, counts })
}

fn interpolate_empty(fitted: &[Option<Angle>], k: usize) -> Angle {
    let n = fitted.len();
    let (mut dl, mut dr) = (1, 1);
    while fitted[(k + n - dl) % n].is_none() {
        dl += 1;
    }
    while fitted[(k + dr) % n].is_none() {
        dr += 1;
    }
    let left = fitted[(k + n - dl) % n].unwrap_or(Angle::ZERO);
    let right = fitted[(k + dr) % n].unwrap_or(Angle::ZERO);
    let t = dl as f64 / (dl + dr) as f64;
    Angle::wrap(left.radians() + t * (right - left).radians())
}

fn circular_loss(targets: &[(f64, f64)], p: f64, cfg: &SmoothL1Config) -> f64 {
    targets
        .iter()
        .map(|&(t, w)| w * smooth_l1(Angle::wrap(t - p).radians(), cfg))
        .sum()
}

/// Grid scan over the circle to bracket the global minimum, then
/// golden-section refinement inside the bracket.
fn minimize_circular_loss(targets: &[(f64, f64)], cfg: &SmoothL1Config) -> Angle {
    let step = TAU / GRID_POINTS as f64;
    let (mut best_p, mut best_f) = (f64::NAN, f64::INFINITY);
    for i in 0..GRID_POINTS {
        let p = -PI + (i + 1) as f64 * step;
        let f = circular_loss(targets, p, cfg);
        if f < best_f {
            best_f = f;
            best_p = p;
        }
    }
    let refined = golden_section(|p| circular_loss(targets, p, cfg), best_p - step, best_p + step);
    if circular_loss(targets, refined, cfg) <= best_f {
        Angle::wrap(refined)
    } else {
        Angle::wrap(best_p)
    }
}

fn golden_section<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > SEARCH_TOLERANCE {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn deg(d: f64) -> Angle {
        Angle::from_degrees(d).unwrap()
    }

    fn sample(feature: f64, target: f64) -> TrainingSample {
        TrainingSample {
            feature: deg(feature),
            target: deg(target),
            weight: 1.0,
        }
    }

    /// Dense brute-force minimizer used as an oracle.
    fn brute_force_min(targets: &[f64], beta: f64) -> f64 {
        let cfg = SmoothL1Config::new(beta).unwrap();
        let n = 2_000_000;
        (0..n)
            .map(|i| -PI + (i + 1) as f64 * TAU / n as f64)
            .map(|p| {
                let f: f64 = targets
                    .iter()
                    .map(|t| smooth_l1(Angle::wrap(t - p).radians(), &cfg))
                    .sum();
                (f, p)
            })
            .fold((f64::INFINITY, 0.0), |acc, x| if x.0 < acc.0 { x } else { acc })
            .1
    }

    #[test]
    fn point_mass_bin_predicts_its_target() {
        let samples = vec![sample(12.0, 33.0); 5];
        let est = fit_binned(&samples, DEFAULT_BINS, &SmoothL1Config::default()).unwrap();
        let k = est.bin_of(deg(12.0));
        assert!((est.bin_offset(k).degrees() - 21.0).abs() < 0.01);
        assert!((est.predict(deg(12.0)).degrees() - 33.0).abs() < 0.01);
        assert_eq!(est.bin_count(k), 5);
    }

    #[test]
    fn outlier_exerts_constant_pull() {
        let targets = [0.0, 0.0, 90f64.to_radians()];
        let beta = 10f64.to_radians();
        let oracle = brute_force_min(&targets, beta).to_degrees();
        assert!((oracle - 5.0).abs() < 1e-3, "oracle {oracle}");
        let samples: Vec<_> = [1.0, 1.0, 91.0].iter().map(|&t| sample(1.0, t)).collect();
        let est = fit_binned(&samples, 36, &SmoothL1Config::new(beta).unwrap()).unwrap();
        let got = est.bin_offset(est.bin_of(deg(1.0))).degrees();
        assert!((got - oracle).abs() < 0.01, "got {got}, oracle {oracle}");
    }

    #[test]
    fn fit_across_the_seam() {
        let samples: Vec<_> = [178.0, -178.0, 179.0, -179.0]
            .iter()
            .map(|&t| sample(0.0, t))
            .collect();
        let est = fit_binned(&samples, 8, &SmoothL1Config::default()).unwrap();
        let o = est.bin_offset(est.bin_of(deg(0.0)));
        assert!(o.distance(deg(180.0)).to_degrees() < 0.01);
        assert!(est.predict(deg(0.0)).distance(deg(180.0)).to_degrees() < 0.01);
    }

    #[test]
    fn empty_bins_interpolate_circularly() {
        // bins of 90°: populated bins 0 and 2 (offsets 10° and 50°), empty 1 and 3
        let samples = vec![sample(-150.0, -140.0), sample(30.0, 80.0)];
        let est = fit_binned(&samples, 4, &SmoothL1Config::default()).unwrap();
        assert!((est.bin_offset(1).degrees() - 30.0).abs() < 0.02);
        assert!((est.bin_offset(3).degrees() - 30.0).abs() < 0.02);
        assert_eq!(est.bin_count(1), 0);

        // interpolation takes the short way around the circle
        let samples = vec![sample(-150.0, 20.0), sample(30.0, -140.0)];
        let est = fit_binned(&samples, 4, &SmoothL1Config::default()).unwrap();
        assert!(est.bin_offset(1).distance(deg(180.0)).to_degrees() < 0.02);
    }

    #[test]
    fn single_populated_bin_fills_everything() {
        let est = fit_binned(&[sample(0.0, 42.0)], 6, &SmoothL1Config::default()).unwrap();
        for k in 0..6 {
            assert!((est.bin_offset(k).degrees() - 42.0).abs() < 0.01);
        }
        assert!((est.predict(deg(-100.0)).degrees() + 58.0).abs() < 0.01);
    }

    #[test]
    fn zero_weight_targets_are_ignored() {
        let mut samples = vec![sample(0.0, 10.0)];
        samples.push(TrainingSample {
            weight: 0.0,
            ..sample(0.0, 120.0)
        });
        let est = fit_binned(&samples, 12, &SmoothL1Config::default()).unwrap();
        assert!((est.predict(deg(0.0)).degrees() - 10.0).abs() < 0.01);
        let none = [TrainingSample {
            weight: 0.0,
            ..sample(0.0, 1.0)
        }];
        assert_eq!(
            fit_binned(&none, 12, &SmoothL1Config::default()),
            Err(EstimatorError::NoTargets)
        );
        assert_eq!(fit_binned(&[], 12, &SmoothL1Config::default()), Err(EstimatorError::NoTargets));
        assert_eq!(
            fit_binned(&samples, 1, &SmoothL1Config::default()),
            Err(EstimatorError::TooFewBins(1))
        );
    }

    #[test]
    fn bin_edges_are_half_open_on_the_left() {
        let est = BinnedEstimator::from_parts(vec![Angle::ZERO; 4], vec![0; 4]).unwrap();
        assert_eq!(est.bin_of(Angle::wrap(PI)), 3);
        assert_eq!(est.bin_of(Angle::wrap(-PI + 1e-12)), 0);
        assert_eq!(est.bin_of(Angle::wrap(-PI / 2.0)), 0);
        assert_eq!(est.bin_of(Angle::wrap(-PI / 2.0 + 1e-12)), 1);
    }

    #[test]
    fn interpolation_hits_bin_centers() {
        let preds = (0..8).map(|k| deg(10.0 * k as f64)).collect();
        let est = BinnedEstimator::from_parts(preds, vec![1; 8]).unwrap();
        for k in 0..8 {
            let (lo, hi) = est.bin_edges(k);
            let c = Angle::wrap(0.5 * (lo + hi));
            assert!(est.predict(c).distance(c + est.bin_offset(k)) < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn offsets_in_range_and_order_invariant(
            raw in prop::collection::vec((-PI..PI, -PI..PI), 1..60), seed in any::<u64>()
        ) {
            let samples: Vec<_> = raw.iter().map(|&(f, t)| TrainingSample {
                feature: Angle::wrap(f), target: Angle::wrap(t), weight: 1.0,
            }).collect();
            let mut shuffled = samples.clone();
            use rand::{seq::SliceRandom, SeedableRng};
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let cfg = SmoothL1Config::default();
            let a = fit_binned(&samples, 16, &cfg).unwrap();
            let b = fit_binned(&shuffled, 16, &cfg).unwrap();
            prop_assert_eq!(&a, &b);
            for p in a.offsets() {
                prop_assert!(p.radians() > -PI && p.radians() <= PI);
            }
        }

        #[test]
        fn large_beta_tends_to_circular_mean(
            center in -PI..PI, offsets in prop::collection::vec(-0.3f64..0.3, 2..20)
        ) {
            let targets: Vec<Angle> = offsets.iter().map(|o| Angle::wrap(center + o)).collect();
            let samples: Vec<_> = targets.iter().map(|&t| TrainingSample {
                feature: Angle::wrap(0.01), target: t, weight: 1.0,
            }).collect();
            let est = fit_binned(&samples, 4, &SmoothL1Config::new(10.0).unwrap()).unwrap();
            // the quadratic minimizer is the arithmetic mean of unwrapped offsets
            let mean = Angle::wrap(center + offsets.iter().sum::<f64>() / offsets.len() as f64);
            let p = est.predict(Angle::wrap(0.01));
            prop_assert!(p.distance(mean) < 2e-4);
            let circ = crate::geometry::circular_mean(targets.iter().copied()).unwrap();
            prop_assert!(p.distance(circ) < 5e-3);
        }
    }
}
