//! Versioned flat text format for estimator parameters.
//!
//! ```text
//! orient-estimator 1
//! kind binned
//! bins 4
//! # bin lower upper offset count
//! 0 -3.141592653589793 -1.5707963267948966 0.25 12
//! ...
//! ```
//!
//! or, for the analytic model,
//!
//! ```text
//! orient-estimator 1
//! kind sinusoidal
//! terms 1
//! # amplitude frequency phase
//! 0.6 6 0.3
//! ```

use super::{
    AngleEstimator, BinnedEstimator, CropDescriptor, EstimatorError, SinTerm, SinusoidalEstimator,
};
use crate::geometry::Angle;

pub const ESTIMATOR_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "orient-estimator";

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorModel {
    Binned(BinnedEstimator),
    Sinusoidal(SinusoidalEstimator),
}

impl AngleEstimator for EstimatorModel {
    fn estimate(&self, crop: &CropDescriptor) -> Result<Angle, EstimatorError> {
        match self {
            EstimatorModel::Binned(m) => m.estimate(crop),
            EstimatorModel::Sinusoidal(m) => m.estimate(crop),
        }
    }
}

impl From<BinnedEstimator> for EstimatorModel {
    fn from(m: BinnedEstimator) -> Self {
        EstimatorModel::Binned(m)
    }
}

impl From<SinusoidalEstimator> for EstimatorModel {
    fn from(m: SinusoidalEstimator) -> Self {
        EstimatorModel::Sinusoidal(m)
    }
}

fn fmt_err(msg: impl Into<String>) -> EstimatorError {
    EstimatorError::Format(msg.into())
}

impl EstimatorModel {
    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {ESTIMATOR_FORMAT_VERSION}\n");
        match self {
            EstimatorModel::Binned(m) => {
                out.push_str(&format!("kind binned\nbins {}\n", m.bins()));
                out.push_str("# bin lower upper offset count\n");
                for k in 0..m.bins() {
                    let (lo, hi) = m.bin_edges(k);
                    out.push_str(&format!(
                        "{k} {lo} {hi} {} {}\n",
                        m.bin_offset(k).radians(),
                        m.bin_count(k)
                    ));
                }
            }
            EstimatorModel::Sinusoidal(m) => {
                out.push_str(&format!("kind sinusoidal\nterms {}\n", m.terms.len()));
                out.push_str("# amplitude frequency phase\n");
                for t in &m.terms {
                    out.push_str(&format!("{} {} {}\n", t.amplitude, t.frequency, t.phase));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, EstimatorError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));

        let header = lines.next().ok_or_else(|| fmt_err("empty file"))?;
        match header.split_whitespace().collect::<Vec<_>>().as_slice() {
            [MAGIC, v] if v.parse::<u32>().ok() == Some(ESTIMATOR_FORMAT_VERSION) => {}
            [MAGIC, v] => return Err(fmt_err(format!("unsupported format version {v}"))),
            _ => return Err(fmt_err(format!("missing '{MAGIC}' header"))),
        }
        let kind = keyed(lines.next(), "kind")?;
        match kind {
            "binned" => {
                let bins: usize = parse(keyed(lines.next(), "bins")?, "bins")?;
                if bins < 2 {
                    return Err(EstimatorError::TooFewBins(bins));
                }
                let mut preds = Vec::with_capacity(bins);
                let mut counts = Vec::with_capacity(bins);
                let mut edges = Vec::with_capacity(bins);
                for k in 0..bins {
                    let line = lines
                        .next()
                        .ok_or_else(|| fmt_err(format!("expected {bins} bin rows, got {k}")))?;
                    let f: Vec<&str> = line.split_whitespace().collect();
                    if f.len() != 5 {
                        return Err(fmt_err(format!("bin row {k}: expected 5 fields")));
                    }
                    if parse::<usize>(f[0], "bin index")? != k {
                        return Err(fmt_err(format!("bin rows out of order at {k}")));
                    }
                    edges.push((parse::<f64>(f[1], "bin edge")?, parse::<f64>(f[2], "bin edge")?));
                    let pred: f64 = parse(f[3], "offset")?;
                    preds.push(Angle::new(pred).map_err(|e| fmt_err(e.to_string()))?);
                    counts.push(parse(f[4], "count")?);
                }
                let model = BinnedEstimator::from_parts(preds, counts)?;
                for (k, (lo_read, hi_read)) in edges.into_iter().enumerate() {
                    let (lo, hi) = model.bin_edges(k);
                    if (lo_read - lo).abs() > 1e-9 || (hi_read - hi).abs() > 1e-9 {
                        return Err(fmt_err(format!("bin {k}: edges do not match {bins} bins")));
                    }
                }
                ensure_end(lines)?;
                Ok(EstimatorModel::Binned(model))
            }
            "sinusoidal" => {
                let n: usize = parse(keyed(lines.next(), "terms")?, "terms")?;
                let mut terms = Vec::with_capacity(n);
                for i in 0..n {
                    let line = lines
                        .next()
                        .ok_or_else(|| fmt_err(format!("expected {n} terms, got {i}")))?;
                    let f: Vec<&str> = line.split_whitespace().collect();
                    if f.len() != 3 {
                        return Err(fmt_err(format!("term {i}: expected 3 fields")));
                    }
                    terms.push(SinTerm {
                        amplitude: parse(f[0], "amplitude")?,
                        frequency: parse(f[1], "frequency")?,
                        phase: parse(f[2], "phase")?,
                    });
                }
                ensure_end(lines)?;
                Ok(EstimatorModel::Sinusoidal(SinusoidalEstimator { terms }))
            }
            other => Err(fmt_err(format!("unknown estimator kind '{other}'"))),
        }
    }
}

fn keyed<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str, EstimatorError> {
    let line = line.ok_or_else(|| fmt_err(format!("missing '{key}' line")))?;
    match line.split_once(char::is_whitespace) {
        Some((k, v)) if k == key => Ok(v.trim()),
        _ => Err(fmt_err(format!("expected '{key} <value>', got '{line}'"))),
    }
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, EstimatorError> {
    s.parse()
        .map_err(|_| fmt_err(format!("invalid {what} '{s}'")))
}

fn ensure_end<'a>(mut lines: impl Iterator<Item = &'a str>) -> Result<(), EstimatorError> {
    match lines.next() {
        None => Ok(()),
        Some(l) => Err(fmt_err(format!("unexpected trailing line '{l}'"))),
    }
}
