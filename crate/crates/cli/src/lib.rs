//! `orient` command-line front end.
//!
//! Every command is a pure function of its inputs and flags; reports go to
//! the supplied writer so tests can capture them.

pub mod report;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use orient_core::box_fitter::{detections_to_boxes, FitConfig, VehicleSizePrior};
use orient_core::estimator::{
    run_cycles, CycleConfig, CycleError, EstimatorModel, ESTIMATOR_FORMAT_VERSION,
};
use orient_core::evaluation::{
    average_precision, component_errors, EvalError, match_by_2d_iou, median_angle_error, Difficulty,
    FrameLabels, Interpolation, IouMode, MatchCriteria,
};
use orient_core::formats::{
    attach_truth, export_scene, label_file_name, parse_calib, parse_detections,
    parse_tracks_truth, read_file, read_label_dir, read_tracks, write_file, write_labels,
    FormatError, KittiLabel, SCENE_FORMAT_VERSION, TRACKS_FORMAT_VERSION,
};
use orient_core::geometry::BoxSize;
use orient_core::robust_selfsup::{
    build_sequences_from_rough, finish_track, process_tracks, SelfSupTargets, Thresholds,
    TrackResult,
};
use orient_core::simulator::{generate_scene, initial_estimator, ScenarioConfig, SCENARIO_VERSION};

use report::{deg, OutputFormat, Report};

/// Colon-separated directories searched for relative `--config` paths.
pub const CONFIG_PATH_ENV: &str = "ORIENT_CONFIG_PATH";
pub const TARGETS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "orient", version, about = "Self-supervised vehicle orientation from ego-motion")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scene and write its files.
    Simulate(SimulateArgs),
    /// Compute self-supervised target angles for a tracks file.
    Targets(TargetsArgs),
    /// Alternate target computation and estimator fitting.
    Cycle(CycleArgs),
    /// Fit 3D boxes to 2D detections.
    Fit3d(Fit3dArgs),
    /// Compare predicted labels with ground truth.
    Eval(EvalArgs),
    /// Print program and file format versions.
    Version,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario TOML; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the effective scenario as TOML and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ThresholdArgs {
    /// Pruning ratio threshold.
    #[arg(long = "t-p", alias = "t_p", default_value_t = 1.0)]
    pub t_p: f64,
    /// Removal threshold in degrees.
    #[arg(long = "t-r", alias = "t_r", default_value_t = 1.0)]
    pub t_r_deg: f64,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Result<Thresholds, CliError> {
        Thresholds::new(self.t_p, self.t_r_deg.to_radians()).map_err(|e| CliError::input(e.into()))
    }
}

#[derive(Debug, Args)]
pub struct TargetsArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Estimator file; without it the rough_local column is used.
    #[arg(long)]
    pub estimator: Option<PathBuf>,
    /// Ground truth for reporting target accuracy.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CycleArgs {
    #[arg(long)]
    pub tracks: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    /// Ground truth, needed for the validation error.
    #[arg(long)]
    pub truth: PathBuf,
    /// Initial estimator M0.
    #[arg(long)]
    pub initial: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub cycles: usize,
    #[arg(long, default_value_t = 72)]
    pub bins: usize,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub thresholds: ThresholdArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Fit3dArgs {
    #[arg(long)]
    pub detections: PathBuf,
    #[arg(long)]
    pub calib: PathBuf,
    #[arg(long)]
    pub estimator: PathBuf,
    #[arg(long, default_value_t = 1.53)]
    pub prior_h: f64,
    #[arg(long, default_value_t = 1.63)]
    pub prior_w: f64,
    #[arg(long, default_value_t = 3.88)]
    pub prior_l: f64,
    #[arg(long, default_value_t = 30.0)]
    pub z_init: f64,
    /// Write label files for frames 0..N even without detections.
    #[arg(long)]
    pub frames: Option<u32>,
    /// Output label directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Angle,
    Components,
    Ap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ApMode {
    #[value(name = "2d")]
    TwoD,
    Bev,
    #[value(name = "3d")]
    ThreeD,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, value_enum, default_value_t = Metric::Ap)]
    pub metric: Metric,
    #[arg(long, value_enum, default_value_t = ApMode::All)]
    pub mode: ApMode,
    /// Use 11-point instead of 40-point interpolation.
    #[arg(long)]
    pub eleven_point: bool,
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
    #[arg(long, default_value_t = 0.5)]
    pub match_iou: f64,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, unreadable or malformed input: exit 2.
    Input(anyhow::Error),
    /// The pipeline ran but could not finish: exit 1.
    Pipeline(anyhow::Error),
}

impl CliError {
    fn input(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }

    fn pipeline(e: anyhow::Error) -> Self {
        CliError::Pipeline(e)
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Pipeline(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(e) | CliError::Pipeline(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Input(e.into())
    }
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::pipeline(anyhow!(e).context("writing output"))
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::input(anyhow!("--threads must be at least 1")));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::pipeline(e.into()))?;
    let text = pool.install(|| dispatch(cli))?;
    out.write_all(text.as_bytes()).map_err(io_err)
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    let report = match &cli.command {
        Command::Simulate(a) => {
            if a.print_config {
                return Ok(load_scenario(a)?.to_toml());
            }
            simulate(a)?
        }
        Command::Targets(a) => targets(a)?,
        Command::Cycle(a) => cycle(a, cli.format)?,
        Command::Fit3d(a) => fit3d(a)?,
        Command::Eval(a) => eval(a, cli.format)?,
        Command::Version => version(),
    };
    Ok(report.render(cli.format))
}

fn version() -> Report {
    let mut r = Report::new(format!("orient {}", env!("CARGO_PKG_VERSION")));
    r.fact("version", env!("CARGO_PKG_VERSION"))
        .fact("scenario_format", SCENARIO_VERSION)
        .fact("scene_format", SCENE_FORMAT_VERSION)
        .fact("tracks_format", TRACKS_FORMAT_VERSION)
        .fact("targets_format", TARGETS_FORMAT_VERSION)
        .fact("estimator_format", ESTIMATOR_FORMAT_VERSION);
    r
}

/// Resolves a relative config path against the working directory, then the
/// directories in [`CONFIG_PATH_ENV`].
pub fn resolve_config(path: &Path) -> Option<PathBuf> {
    if path.exists() {
        return Some(path.to_path_buf());
    }
    if path.is_absolute() {
        return None;
    }
    let dirs = std::env::var_os(CONFIG_PATH_ENV)?;
    std::env::split_paths(&dirs)
        .map(|d| d.join(path))
        .find(|p| p.exists())
}

fn load_scenario(a: &SimulateArgs) -> Result<ScenarioConfig, CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            let path = resolve_config(p)
                .ok_or_else(|| CliError::input(anyhow!("config not found: {}", p.display())))?;
            let text = read_file(&path)?;
            ScenarioConfig::from_toml(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(CliError::input)?
        }
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::input(e.into()))?;
    Ok(cfg)
}

fn simulate(a: &SimulateArgs) -> Result<Report, CliError> {
    let out = a
        .out
        .as_ref()
        .ok_or_else(|| CliError::input(anyhow!("--out is required")))?;
    let cfg = load_scenario(a)?;
    let scene = generate_scene(&cfg).map_err(|e| CliError::pipeline(e.into()))?;
    export_scene(&scene, out).map_err(|e| CliError::pipeline(e.into()))?;
    let m0 = EstimatorModel::from(initial_estimator(&cfg.noise));
    write_file(&out.join("m0.txt"), &m0.to_text()).map_err(|e| CliError::pipeline(e.into()))?;
    write_file(&out.join("scenario.toml"), &cfg.to_toml())
        .map_err(|e| CliError::pipeline(e.into()))?;

    let tracks = scene.tracks().len();
    let mut r = Report::new(format!("scene written to {}", out.display()));
    r.fact("seed", cfg.seed)
        .fact("frames", scene.frames.len())
        .fact("vehicles", scene.vehicles.len())
        .fact("observations", scene.observations.len())
        .fact("tracks", tracks)
        .fact("slam_bias_deg", deg(scene.slam_bias.degrees()));
    Ok(r)
}

fn load_estimator(path: &Path) -> Result<EstimatorModel, CliError> {
    let text = read_file(path)?;
    EstimatorModel::from_text(&text)
        .with_context(|| format!("reading estimator {}", path.display()))
        .map_err(CliError::input)
}

/// Usable targets only: entries of removed tracks (weight 0) are skipped.
pub fn write_targets(targets: &[SelfSupTargets]) -> String {
    let mut out = format!(
        "# orient-targets {TARGETS_FORMAT_VERSION}\n# track_id frame timestamp global local weight\n"
    );
    for t in targets {
        for e in t.entries.iter().filter(|e| e.weight > 0.0) {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                t.track_id,
                e.frame,
                e.timestamp,
                e.global.radians(),
                e.local.radians(),
                e.weight
            );
        }
    }
    out
}

fn targets(a: &TargetsArgs) -> Result<Report, CliError> {
    let cam = parse_calib(&read_file(&a.calib)?)?;
    let mut tracks = read_tracks(&read_file(&a.tracks)?, &cam)?;
    if let Some(t) = &a.truth {
        attach_truth(&mut tracks, &parse_tracks_truth(&read_file(t)?)?);
    }
    let th = a.thresholds.thresholds()?;
    let results: Vec<TrackResult> = match &a.estimator {
        Some(p) => {
            let est = load_estimator(p)?;
            process_tracks(&tracks, &est, &th).map_err(|e| CliError::pipeline(e.into()))?
        }
        None => tracks
            .iter()
            .map(|t| {
                let seq = build_sequences_from_rough(t).ok_or_else(|| {
                    CliError::input(anyhow!(
                        "track {} lacks rough_local values; pass --estimator",
                        t.track_id
                    ))
                })?;
                Ok(finish_track(t, seq, &th))
            })
            .collect::<Result<_, CliError>>()?,
    };
    let all: Vec<SelfSupTargets> = results.iter().map(|r| r.targets.clone()).collect();
    write_file(&a.out, &write_targets(&all)).map_err(|e| CliError::pipeline(e.into()))?;

    let removed = results.iter().filter(|r| r.bias.removed).count();
    let pruned: usize = results
        .iter()
        .filter(|r| !r.bias.removed)
        .map(|r| r.bias.pruned.len())
        .sum();
    let mut r = Report::new(format!("targets written to {}", a.out.display()));
    r.fact("tracks", results.len())
        .fact("tracks_kept", results.len() - removed)
        .fact("tracks_removed", removed)
        .fact("entries_pruned", pruned)
        .fact("t_p", a.thresholds.t_p)
        .fact("t_r_deg", a.thresholds.t_r_deg);

    let (mut preds, mut truths) = (Vec::new(), Vec::new());
    for (t, res) in tracks.iter().zip(&results) {
        if res.bias.removed {
            continue;
        }
        for (f, e) in t.frames.iter().zip(&res.targets.entries) {
            if let Some(truth) = f.truth_local {
                preds.push(e.local);
                truths.push(truth);
            }
        }
    }
    if let Ok(m) = median_angle_error(&preds, &truths) {
        r.fact("target_median_error_deg", deg(m));
    }
    Ok(r)
}

fn cycle(a: &CycleArgs, format: OutputFormat) -> Result<Report, CliError> {
    let cam = parse_calib(&read_file(&a.calib)?)?;
    let mut tracks = read_tracks(&read_file(&a.tracks)?, &cam)?;
    attach_truth(&mut tracks, &parse_tracks_truth(&read_file(&a.truth)?)?);
    let initial = load_estimator(&a.initial)?;
    if a.cycles == 0 {
        return Err(CliError::input(anyhow!("--cycles must be at least 1")));
    }
    let cfg = CycleConfig {
        cycles: a.cycles,
        thresholds: a.thresholds.thresholds()?,
        bins: a.bins,
        validation_fraction: a.validation_fraction,
        seed: a.seed,
        ..Default::default()
    };
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(CliError::pipeline)?;

    let (report, failure) = match run_cycles(&tracks, &initial, &cfg) {
        Ok(rep) => (rep, None),
        Err(CycleError::AllTracksRemoved { cycle, completed }) => {
            let msg = format!("cycle {cycle}: every training track was removed");
            (completed, Some(msg))
        }
        Err(
            e @ (CycleError::TooFewTracks(_)
            | CycleError::InvalidSplit(_)
            | CycleError::ZeroCycles
            | CycleError::MissingTruth { .. }),
        ) => return Err(CliError::input(e.into())),
        Err(e) => return Err(CliError::pipeline(e.into())),
    };

    for c in &report.cycles {
        let model = EstimatorModel::from(c.model.clone());
        write_file(&a.out.join(format!("m{}.txt", c.cycle)), &model.to_text())
            .map_err(|e| CliError::pipeline(e.into()))?;
    }
    let mut r = Report::new("cycling");
    r.fact("train_tracks", report.train_tracks)
        .fact("validation_tracks", report.validation_tracks)
        .fact("cycles_completed", report.cycles.len())
        .columns(&["cycle", "median_error_deg", "tracks_kept", "tracks_removed", "entries_pruned"]);
    r.row(vec![
        "0".into(),
        deg(report.initial_error_deg),
        "-".into(),
        "-".into(),
        "-".into(),
    ]);
    for c in &report.cycles {
        r.row(vec![
            c.cycle.to_string(),
            deg(c.median_error_deg),
            c.tracks_kept.to_string(),
            c.tracks_removed.to_string(),
            c.entries_pruned.to_string(),
        ]);
    }
    write_file(&a.out.join("report.txt"), &r.render(format))
        .map_err(|e| CliError::pipeline(e.into()))?;
    if let Some(msg) = failure {
        return Err(CliError::pipeline(anyhow!(
            "{msg}; outputs of {} completed cycles kept in {}",
            report.cycles.len(),
            a.out.display()
        )));
    }
    Ok(r)
}

fn fit3d(a: &Fit3dArgs) -> Result<Report, CliError> {
    let cam = parse_calib(&read_file(&a.calib)?)?;
    let dets = parse_detections(&read_file(&a.detections)?)?;
    let est = load_estimator(&a.estimator)?;
    let prior = VehicleSizePrior(
        BoxSize::new(a.prior_h, a.prior_w, a.prior_l).map_err(|e| CliError::input(e.into()))?,
    );
    let cfg = FitConfig {
        z_init: a.z_init,
        ..Default::default()
    };
    cfg.validate().map_err(|e| CliError::input(e.into()))?;

    let plain: Vec<_> = dets.iter().map(|d| d.detection).collect();
    let batch = detections_to_boxes(&plain, &est, &prior, &cam, &cfg);
    for (i, e) in &batch.failures {
        eprintln!("warning: detection {i} (frame {}): {e}", dets[*i].frame);
    }

    let max_frame = dets.iter().map(|d| d.frame + 1).max().unwrap_or(0);
    let n_frames = max_frame.max(a.frames.unwrap_or(0)).max(1);
    let mut per_frame: BTreeMap<u32, Vec<KittiLabel>> = (0..n_frames).map(|k| (k, Vec::new())).collect();
    for b in &batch.boxes {
        let d = &dets[b.index];
        per_frame.entry(d.frame).or_default().push(KittiLabel::from_box3d(
            "Car",
            &b.bbox,
            d.detection.bbox,
            b.local,
            0.0,
            0,
            Some(b.score),
        ));
    }
    std::fs::create_dir_all(&a.out)
        .with_context(|| format!("creating {}", a.out.display()))
        .map_err(CliError::pipeline)?;
    for (k, labels) in &per_frame {
        write_file(&a.out.join(label_file_name(*k)), &write_labels(labels))
            .map_err(|e| CliError::pipeline(e.into()))?;
    }
    let not_converged = batch.boxes.iter().filter(|b| !b.fit.converged).count();
    let mut r = Report::new(format!("labels written to {}", a.out.display()));
    r.fact("detections", dets.len())
        .fact("fitted", batch.boxes.len())
        .fact("failed", batch.dropped())
        .fact("low_iou", not_converged)
        .fact("label_files", per_frame.len());
    Ok(r)
}

/// Pairs label files by name; unmatched names on either side are an error.
pub fn load_label_pairs(pred: &Path, gt: &Path) -> Result<Vec<FrameLabels>, CliError> {
    let p = read_label_dir(pred)?;
    let g = read_label_dir(gt)?;
    let pm: BTreeMap<String, Vec<KittiLabel>> = p.into_iter().collect();
    let gm: BTreeMap<String, Vec<KittiLabel>> = g.into_iter().collect();
    let only_pred: Vec<&String> = pm.keys().filter(|k| !gm.contains_key(*k)).collect();
    let only_gt: Vec<&String> = gm.keys().filter(|k| !pm.contains_key(*k)).collect();
    if !only_pred.is_empty() || !only_gt.is_empty() {
        let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" ");
        return Err(CliError::input(anyhow!(
            "frame ids differ\n  only in predictions: {}\n  only in ground truth: {}",
            list(&only_pred),
            list(&only_gt)
        )));
    }
    Ok(gm
        .into_iter()
        .map(|(id, gt)| {
            let pred = pm.get(&id).cloned().unwrap_or_default();
            FrameLabels { id, pred, gt }
        })
        .collect())
}

fn eval(a: &EvalArgs, format: OutputFormat) -> Result<Report, CliError> {
    let frames = load_label_pairs(&a.pred, &a.gt)?;
    let crit = MatchCriteria {
        iou_2d_match: a.match_iou,
        iou_positive: a.iou,
    };
    let mut r = match a.metric {
        Metric::Angle => eval_angle(&frames, &crit),
        Metric::Components => eval_components(&frames, &crit),
        Metric::Ap => eval_ap(a, &frames, &crit),
    };
    r.fact("frames", frames.len());
    r.facts.rotate_right(1);
    if let Some(path) = &a.out {
        write_file(path, &r.render(format)).map_err(|e| CliError::pipeline(e.into()))?;
    }
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    Ok(r)
}

fn eval_angle(frames: &[FrameLabels], crit: &MatchCriteria) -> Report {
    let (mut pa, mut ga, mut py, mut gy) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for f in frames {
        for (i, j) in match_by_2d_iou(&f.pred, &f.gt, crit.iou_2d_match) {
            pa.push(f.pred[i].alpha);
            ga.push(f.gt[j].alpha);
            py.push(f.pred[i].rotation_y);
            gy.push(f.gt[j].rotation_y);
        }
    }
    let mut r = Report::new("orientation error");
    r.fact("matched", pa.len());
    let fmt = |x: Result<f64, EvalError>| x.map_or_else(|_| "-".to_string(), deg);
    r.fact("median_local_error_deg", fmt(median_angle_error(&pa, &ga)));
    r.fact("median_global_error_deg", fmt(median_angle_error(&py, &gy)));
    if pa.is_empty() {
        r.warnings.push("no prediction matched any ground truth".into());
    }
    r
}

fn eval_components(frames: &[FrameLabels], crit: &MatchCriteria) -> Report {
    let c = component_errors(frames, crit);
    let mut r = Report::new("median 3D component errors");
    r.fact("matched", c.matched)
        .fact("unmatched_pred", c.unmatched_pred)
        .fact("unmatched_gt", c.unmatched_gt);
    if let Some(m) = c.medians {
        r.columns(&["component", "median_error"]);
        for (name, v) in [
            ("h_m", m.h),
            ("w_m", m.w),
            ("l_m", m.l),
            ("x_m", m.x),
            ("y_m", m.y),
            ("z_m", m.z),
            ("yaw_deg", m.yaw),
        ] {
            r.row(vec![name.into(), format!("{v:.3}")]);
        }
    } else {
        r.warnings.push("no pair reached the matching IoU".into());
    }
    r
}

fn eval_ap(a: &EvalArgs, frames: &[FrameLabels], crit: &MatchCriteria) -> Report {
    let interp = if a.eleven_point {
        Interpolation::ElevenPoint
    } else {
        Interpolation::FortyPoint
    };
    let modes: Vec<IouMode> = match a.mode {
        ApMode::TwoD => vec![IouMode::TwoD],
        ApMode::Bev => vec![IouMode::Bev],
        ApMode::ThreeD => vec![IouMode::ThreeD],
        ApMode::All => IouMode::ALL.to_vec(),
    };
    let mut r = Report::new("average precision (Car)");
    r.fact(
        "interpolation",
        if a.eleven_point { "11-point" } else { "40-point" },
    )
    .fact("iou_threshold", a.iou)
    .columns(&["mode", "easy", "moderate", "hard"]);
    let mut empty_bins = Vec::new();
    for mode in modes {
        let mut row = vec![mode.as_str().to_string()];
        for bin in Difficulty::ALL {
            let ap = average_precision(frames, mode, bin, crit, interp);
            if ap.num_gt == 0 && !empty_bins.contains(&bin) {
                empty_bins.push(bin);
            }
            row.push(format!("{:.4}", ap.ap));
        }
        r.row(row);
    }
    for bin in empty_bins {
        r.warnings.push(format!("no ground truth in the {} bin; AP is 0", bin.as_str()));
    }
    r
}

/// Prints the error, if any, and returns the process exit code.
pub fn exit_with(result: Result<(), CliError>) -> i32 {
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
