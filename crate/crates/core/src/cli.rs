//! Command-line front end: `synth`, `labelgen`, `train`, `evaluate`,
//! `fit-curve` and `inspect`.
//!
//! Configuration is layered as defaults, then the `--config` TOML file, then
//! flags. Every subcommand that writes an output directory also writes the
//! effective configuration there as `config.toml`; passing that file back
//! with `--config` reproduces the run.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for
//! failures while running.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::curvefit::{detect_correction, eval_curve, eval_derivative, CorrectionSchedule, LearningCurve};
use crate::eval::{emit_report, label_accuracy, ConfusionMatrix, LabelQuality, MetricsReport};
use crate::labelgen::{voxel_vote, Frame, FrameSequence, LabelDictionary, UnprojectMode};
use crate::scene::{self, CropBox, SampleScene};
use crate::synth::{self, class_histogram, SynthConfig};
use crate::trainer::{self, predict_scene, ModelParams, TrainConfig, TrainSample};

/// Name of the frozen effective configuration in every output directory.
pub const CONFIG_SNAPSHOT: &str = "config.toml";
/// Optional default for `--threads`.
pub const THREADS_ENV: &str = "ADACO_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

impl From<trainer::TrainError> for CliError {
    fn from(e: trainer::TrainError) -> Self {
        match e {
            trainer::TrainError::InvalidConfig(_) | trainer::TrainError::EmptyDataset => invalid(e),
            other => runtime(other),
        }
    }
}

impl From<synth::SynthError> for CliError {
    fn from(e: synth::SynthError) -> Self {
        match e {
            synth::SynthError::InvalidConfig(_) => invalid(e),
            other => runtime(other),
        }
    }
}

/// Label generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelGenConfig {
    /// Voxel side in meters for inter-frame voting.
    pub voxel: f64,
    /// Neighbor frames per side.
    pub adjacency: usize,
    pub mode: UnprojectMode,
}

impl Default for LabelGenConfig {
    fn default() -> Self {
        Self {
            voxel: 0.05,
            adjacency: 2,
            mode: UnprojectMode::AllInFrustum,
        }
    }
}

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Drop points outside this box when reading scenes.
    pub crop: Option<CropBox>,
    pub synth: SynthConfig,
    pub labelgen: LabelGenConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(m) => invalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Point every seed at `seed`.
    pub fn set_seed(&mut self, seed: u64) {
        self.synth.rng_seed = seed;
        self.train.seed = seed;
        self.train.corrector.rng_seed = seed;
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.synth.validate()?;
        self.train.validate()?;
        let lg = &self.labelgen;
        if !(lg.voxel > 0.0 && lg.voxel.is_finite()) {
            return Err(invalid(format!("labelgen.voxel = {} must be positive", lg.voxel)));
        }
        if let Some(c) = &self.crop {
            if (0..3).any(|i| !(c.min[i] <= c.max[i])) {
                return Err(invalid("crop.min must not exceed crop.max"));
            }
        }
        Ok(())
    }

    fn freeze(&self, out: &Path) -> Result<(), CliError> {
        fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        let p = out.join(CONFIG_SNAPSHOT);
        fs::write(&p, self.to_toml()).map_err(|e| runtime(format!("{}: {e}", p.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "adaco", version, about = "Label-free 3D segmentation with adaptive label correction")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random generator (synthesis, initialization, shuffling, voting).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bit-identical results. Defaults to $ADACO_THREADS, else all cores.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenes with clean and noisy labels.
    Synth(SynthArgs),
    /// Turn 2D label maps into per-point labels with inter-frame voxel voting.
    Labelgen(LabelgenArgs),
    /// Train the per-point classifier with learning-curve-triggered label correction.
    Train(TrainArgs),
    /// Score a trained model against clean labels and write metrics and plots.
    Evaluate(EvaluateArgs),
    /// Fit the saturation curve to an `epoch,miou` CSV and report the trigger epoch.
    FitCurve(FitCurveArgs),
    /// Summarize a scene, dataset, run directory or checkpoint.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory; scenes go to <OUT>/scenes/<id>/.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenes.
    #[arg(long)]
    pub scenes: Option<usize>,
    /// Index of the first scene; scene ids and random streams follow it.
    #[arg(long, default_value_t = 0)]
    pub first_index: u64,
}

#[derive(Debug, Args)]
pub struct LabelgenArgs {
    /// Scene directory (or a dataset root containing scenes/), one frame per scene in id order.
    #[arg(long)]
    pub scenes: PathBuf,
    /// Label-map root with one sub-directory per scene id holding <view>.pgm and <view>.json.
    #[arg(long)]
    pub maps: PathBuf,
    /// Dictionary JSON (class -> synonyms), or the built-in `semantickitti` / `nuscenes`.
    #[arg(long)]
    pub dict: String,
    /// Voxel side in meters.
    #[arg(long)]
    pub voxel: Option<f64>,
    /// Neighbor frames on each side used in voting.
    #[arg(long)]
    pub adjacency: Option<usize>,
    /// Let only the nearest point per pixel take its label.
    #[arg(long)]
    pub nearest_depth: bool,
    /// Output directory; labeled scenes go to <OUT>/scenes/<id>/.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene directory (or a dataset root containing scenes/).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `adaco` or `ce-baseline`.
    #[arg(long)]
    pub method: Option<String>,
    /// Tracked training epochs (burn-in not included)
    #[arg(long)]
    pub epochs: Option<usize>,
    /// SGD learning rate
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Scenes with clean labels (or a dataset root containing scenes/).
    #[arg(long)]
    pub data: PathBuf,
    /// Run directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Report directory; defaults to <RUN>/report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitCurveArgs {
    /// CSV of `epoch,miou` rows; a header line is optional.
    #[arg(long)]
    pub csv: PathBuf,
    /// Derivative-drop threshold.
    #[arg(long)]
    pub r: Option<f64>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// A scene directory, dataset root, run directory or model checkpoint.
    pub path: PathBuf,
}

/// Parse `argv` (program name first), run, and return the exit code.
/// Diagnostics go to standard error.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            print!("{report}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("adaco: {e}");
            e.exit_code()
        }
    }
}

/// Run a parsed command; returns the text meant for standard output.
pub fn execute(cli: &Cli) -> Result<String, CliError> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.parse().map_err(|_| invalid(format!("{THREADS_ENV} = {v:?}")))?),
            Err(_) => None,
        },
    };
    if threads == Some(0) {
        return Err(invalid("--threads must be at least 1"));
    }
    // evaluation reuses the run's snapshot unless a config is given
    let snapshot = match &cli.command {
        Command::Evaluate(a) => Some(a.run.join(CONFIG_SNAPSHOT)).filter(|p| p.is_file()),
        _ => None,
    };
    let mut cfg = match cli.config.clone().or(snapshot) {
        Some(p) => RunConfig::read(&p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(runtime)?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(cfg, a),
        Command::Labelgen(a) => cmd_labelgen(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Evaluate(a) => cmd_evaluate(cfg, a),
        Command::FitCurve(a) => cmd_fit_curve(cfg, a),
        Command::Inspect(a) => cmd_inspect(a),
    })
}

/// `dir/scenes` when it exists, else `dir`.
pub fn scenes_root(dir: &Path) -> PathBuf {
    let nested = dir.join("scenes");
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn load_scenes(dir: &Path, crop: Option<&CropBox>) -> Result<(scene::ClassVocabulary, Vec<SampleScene>), CliError> {
    if !dir.is_dir() {
        return Err(invalid(format!("{} is not a directory", dir.display())));
    }
    scene::read_dataset(&scenes_root(dir), crop).map_err(runtime)
}

fn cmd_synth(mut cfg: RunConfig, a: &SynthArgs) -> Result<String, CliError> {
    if let Some(n) = a.scenes {
        cfg.synth.n_scenes = n;
    }
    cfg.validate()?;
    let scenes = synth::generate_dataset(&cfg.synth, a.first_index)?;
    let vocab = cfg.synth.vocabulary()?;
    cfg.freeze(&a.out)?;
    synth::write_dataset(&a.out, &vocab, &scenes)?;
    let points: usize = scenes.iter().map(SampleScene::len).sum();
    Ok(format!(
        "wrote {} scenes ({points} points) to {}\n",
        scenes.len(),
        scenes_root(&a.out).display()
    ))
}

fn cmd_labelgen(mut cfg: RunConfig, a: &LabelgenArgs) -> Result<String, CliError> {
    if let Some(v) = a.voxel {
        cfg.labelgen.voxel = v;
    }
    if let Some(n) = a.adjacency {
        cfg.labelgen.adjacency = n;
    }
    if a.nearest_depth {
        cfg.labelgen.mode = UnprojectMode::NearestDepth;
    }
    cfg.validate()?;
    let dict = match a.dict.as_str() {
        "semantickitti" => LabelDictionary::semantic_kitti(),
        "nuscenes" => LabelDictionary::nuscenes(),
        path => LabelDictionary::read(Path::new(path)).map_err(invalid)?,
    };
    let vocab = dict.vocabulary().clone();
    let (scene_vocab, scenes) = load_scenes(&a.scenes, cfg.crop.as_ref())?;
    let mut frames = Vec::with_capacity(scenes.len());
    for mut s in scenes {
        let dir = a.maps.join(&s.id);
        let maps = if dir.is_dir() {
            crate::labelgen::read_label_maps(&dir, vocab.len()).map_err(runtime)?
        } else {
            Vec::new()
        };
        if scene_vocab != vocab {
            s.clean_labels = None;
        }
        s.num_classes = vocab.len();
        s.features = None;
        frames.push(Frame { scene: s, maps });
    }
    let mut seq = FrameSequence::new(frames, cfg.labelgen.adjacency);
    seq.unproject(cfg.labelgen.mode);
    let voted = voxel_vote(&seq, cfg.labelgen.voxel).map_err(runtime)?;
    cfg.freeze(&a.out)?;
    let root = a.out.join("scenes");
    let mut labeled = 0usize;
    let mut total = 0usize;
    for (frame, labels) in seq.frames.iter_mut().zip(voted) {
        labeled += labels.iter().filter(|&&l| l != vocab.unlabeled_id()).count();
        total += labels.len();
        frame.scene.noisy_labels = labels;
        scene::write_scene(&frame.scene, &vocab, &root.join(&frame.scene.id)).map_err(runtime)?;
    }
    Ok(format!(
        "labeled {labeled} of {total} points in {} frames; wrote {}\n",
        seq.frames.len(),
        root.display()
    ))
}

fn parse_method(s: &str) -> Result<trainer::Method, CliError> {
    match s {
        "adaco" => Ok(trainer::Method::Adaco),
        "ce-baseline" => Ok(trainer::Method::CeBaseline),
        other => Err(invalid(format!("unknown method {other:?}; expected adaco or ce-baseline"))),
    }
}

fn cmd_train(mut cfg: RunConfig, a: &TrainArgs) -> Result<String, CliError> {
    if let Some(m) = &a.method {
        cfg.train.method = parse_method(m)?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;
    let (_, scenes) = load_scenes(&a.data, cfg.crop.as_ref())?;
    let samples: Vec<TrainSample> = scenes.iter().map(TrainSample::from_scene).collect();
    let out = trainer::train(&samples, &cfg.train)?;
    cfg.freeze(&a.out)?;
    trainer::write_run(&a.out, &out)?;
    let last = out.epochs.last();
    Ok(format!(
        "trained {} epochs on {} samples; {} corrections; final train mIoU {:.4}; wrote {}\n",
        out.epochs.len(),
        samples.len(),
        out.reports.len(),
        last.map_or(0.0, |e| e.mean_train_miou),
        a.out.display()
    ))
}

fn cmd_evaluate(cfg: RunConfig, a: &EvaluateArgs) -> Result<String, CliError> {
    cfg.validate()?;
    let model = ModelParams::load(&a.run.join("model.bin"))?;
    let curves = trainer::read_curves(&a.run)?;
    let (vocab, scenes) = load_scenes(&a.data, cfg.crop.as_ref())?;
    if model.classes != vocab.len() {
        return Err(invalid(format!(
            "model predicts {} classes, data has {}",
            model.classes,
            vocab.len()
        )));
    }
    let params = cfg.train.cluster_params();
    let mut cm = ConfusionMatrix::new(vocab.len());
    let (mut noisy_ok, mut refurb_ok, mut audited) = (0u64, 0u64, 0u64);
    let mut have_labels = true;
    for s in &scenes {
        let clean = s
            .clean_labels
            .as_ref()
            .ok_or_else(|| invalid(format!("scene {} has no clean labels", s.id)))?;
        let pred = predict_scene(&model, s, params)?;
        cm.accumulate(clean, &pred).map_err(runtime)?;
        let labels_path = a.run.join("labels").join(format!("{}.labels", s.id));
        if have_labels && labels_path.is_file() {
            let refurb = scene::read_labels(&labels_path).map_err(runtime)?;
            let (n, t) = label_accuracy(clean, &s.noisy_labels).map_err(runtime)?;
            let (r, _) = label_accuracy(clean, &refurb).map_err(runtime)?;
            noisy_ok += n;
            refurb_ok += r;
            audited += t;
        } else {
            have_labels = false;
        }
    }
    let quality = (have_labels && audited > 0).then(|| LabelQuality::from_counts(noisy_ok, refurb_ok, audited));
    let metrics = MetricsReport::new(cm, vocab.names().to_vec(), quality, &curves, scenes.len()).map_err(runtime)?;
    let out = a.out.clone().unwrap_or_else(|| a.run.join("report"));
    cfg.freeze(&out)?;
    let files = emit_report(&out, &metrics, &curves).map_err(runtime)?;
    let mut text = format!("mIoU {:.4}  mAcc {:.4}\n", metrics.miou, metrics.macc);
    for (name, iou) in metrics.class_names.iter().zip(&metrics.per_class_iou) {
        match iou {
            Some(v) => {
                let _ = writeln!(text, "  {name:<16} {v:.4}");
            }
            None => {
                let _ = writeln!(text, "  {name:<16} -");
            }
        }
    }
    if let Some(q) = &metrics.label_quality {
        let _ = writeln!(
            text,
            "label accuracy: noisy {:.4} -> refurbished {:.4}",
            q.noisy_accuracy, q.refurbished_accuracy
        );
    }
    let _ = writeln!(text, "wrote {}", files.metrics.display());
    Ok(text)
}

/// Read `epoch,miou` rows; rows must be in epoch order starting at 1.
pub fn read_series_csv(path: &Path) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let mut series = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(invalid(format!("{}:{}: expected epoch,miou", path.display(), n + 1)));
        }
        let (Ok(epoch), Ok(value)) = (fields[0].parse::<usize>(), fields[1].parse::<f64>()) else {
            if n == 0 {
                continue;
            }
            return Err(invalid(format!("{}:{}: cannot parse {line:?}", path.display(), n + 1)));
        };
        if epoch != series.len() + 1 {
            return Err(invalid(format!(
                "{}:{}: expected epoch {}, found {epoch}",
                path.display(),
                n + 1,
                series.len() + 1
            )));
        }
        series.push(value);
    }
    Ok(series)
}

fn cmd_fit_curve(cfg: RunConfig, a: &FitCurveArgs) -> Result<String, CliError> {
    let r = a.r.unwrap_or(cfg.train.corrector.r);
    if !(r > 0.0 && r <= 1.0) {
        return Err(invalid(format!("r = {r} not in (0, 1]")));
    }
    let series = read_series_csv(&a.csv)?;
    let fit = crate::curvefit::fit_curve(&series).map_err(invalid)?;
    // replay the per-epoch refit used during training
    let mut curve = LearningCurve::new("csv");
    let mut trigger = None;
    for &v in &series {
        curve.push(v);
        curve.refit().map_err(runtime)?;
        match detect_correction(&curve, r, CorrectionSchedule::Once) {
            Ok(Some(t)) => {
                trigger = Some(t);
                break;
            }
            Ok(None) | Err(crate::curvefit::FitError::FlatCurve) => {}
            Err(e) => return Err(runtime(e)),
        }
    }
    let mut text = format!("a {:.6}\nb {:.6}\nc {:.6}\n", fit.a, fit.b, fit.c);
    let _ = writeln!(text, "residual {:.6e}", crate::curvefit::residual(&fit, &series));
    match trigger {
        Some(t) => {
            let _ = writeln!(text, "trigger {t}");
        }
        None => text.push_str("trigger none\n"),
    }
    text.push_str("epoch,miou,fitted,derivative\n");
    for (i, v) in series.iter().enumerate() {
        let t = (i + 1) as f64;
        let _ = writeln!(
            text,
            "{},{v:.6},{:.6},{:.6}",
            i + 1,
            eval_curve(&fit, t),
            eval_derivative(&fit, t)
        );
    }
    Ok(text)
}

fn describe_scene(s: &SampleScene, vocab: &scene::ClassVocabulary) -> String {
    let mut text = format!("scene {}: {} points, {} classes\n", s.id, s.len(), vocab.len());
    let hist = |labels: &[u16]| -> String {
        let h = class_histogram(labels, vocab.len());
        let unlabeled = labels.len() - h.iter().sum::<usize>();
        let mut parts: Vec<String> = vocab.names().iter().zip(&h).map(|(n, c)| format!("{n}={c}")).collect();
        parts.push(format!("unlabeled={unlabeled}"));
        parts.join(" ")
    };
    let _ = writeln!(text, "  noisy: {}", hist(&s.noisy_labels));
    if let Some(c) = &s.clean_labels {
        let _ = writeln!(text, "  clean: {}", hist(c));
        if let Ok((ok, n)) = label_accuracy(c, &s.noisy_labels) {
            if n > 0 {
                let _ = writeln!(text, "  noisy accuracy: {:.4}", ok as f64 / n as f64);
            }
        }
    }
    text
}

fn describe_model(m: &ModelParams) -> String {
    format!(
        "model: {} features -> {} hidden -> {} classes ({} parameters)\n",
        m.input,
        m.hidden,
        m.classes,
        m.w1.len() + m.b1.len() + m.w2.len() + m.b2.len()
    )
}

fn cmd_inspect(a: &InspectArgs) -> Result<String, CliError> {
    let p = &a.path;
    if p.is_file() {
        return Ok(describe_model(&ModelParams::load(p)?));
    }
    if !p.is_dir() {
        return Err(invalid(format!("{} does not exist", p.display())));
    }
    if p.join(scene::META_FILE).is_file() {
        let (s, vocab) = scene::read_scene(p).map_err(runtime)?;
        return Ok(describe_scene(&s, &vocab));
    }
    if p.join("model.bin").is_file() {
        let mut text = describe_model(&ModelParams::load(&p.join("model.bin"))?);
        let curves = trainer::read_curves(p)?;
        let corrected: Vec<&LearningCurve> = curves.iter().filter(|c| c.corrected).collect();
        let epochs = curves.first().map_or(0, |c| c.miou_series.len());
        let _ = writeln!(
            text,
            "{} samples, {epochs} epochs, {} corrected",
            curves.len(),
            corrected.len()
        );
        for c in &curves {
            let last = c.miou_series.last().copied().unwrap_or(f64::NAN);
            let tc = c.t_c.map_or("-".to_string(), |t| t.to_string());
            let _ = writeln!(text, "  {} t_c {tc} final train mIoU {last:.4}", c.sample_id);
        }
        return Ok(text);
    }
    let (vocab, scenes) = scene::read_dataset(&scenes_root(p), None).map_err(runtime)?;
    let mut text = format!("{} scenes, classes: {}\n", scenes.len(), vocab.names().join(", "));
    for s in &scenes {
        text.push_str(&describe_scene(s, &vocab));
    }
    Ok(text)
}
