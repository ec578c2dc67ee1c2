//! The `mtp` command line: `synth | train | score | eval | inspect`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{require_file, require_writable_dir, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{align, frame_auc, roc_curve, write_roc_csv, EvalReport};
use crate::loss::node_errors;
use crate::model::{Direction, MtpModel};
use crate::score::{score_dataset, ScoreOutput, ScoreSeries};
use crate::synth::generate;
use crate::train::{prepare_dataset, write_reports_csv, TrainReport, Trainer};
use crate::trajectory::{load_jsonl, Dataset, Labels};

#[derive(Debug, Parser)]
#[command(name = "mtp", version, about = "Pose-track anomaly detection by forward and backward pose prediction")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthesis, initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. 1 gives bitwise-reproducible output.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic train/test dataset into the output directory.
    Synth,
    /// Train the future and past models.
    Train(TrainArgs),
    /// Score every frame of the test data.
    Score(ScoreArgs),
    /// Frame-level ROC-AUC of a score file.
    Eval(EvalArgs),
    /// Describe checkpoints and dump per-timescale errors.
    Inspect(InspectArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Training data (JSON Lines).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Total epochs per model.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from the checkpoints and report in the output directory.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    Future,
    Past,
    Both,
}

impl DirectionArg {
    pub fn directions(self) -> Vec<Direction> {
        match self {
            DirectionArg::Future => vec![Direction::Future],
            DirectionArg::Past => vec![Direction::Past],
            DirectionArg::Both => Direction::BOTH.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct ScoreArgs {
    /// Test data (JSON Lines).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Directory holding future.ckpt and past.ckpt.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Restrict scoring to these timescales, e.g. `3,25`.
    #[arg(long, value_delimiter = ',')]
    pub timescales: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    /// Offset between consecutive test windows.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Flag frames scoring above this value.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Score for labeled frames without any scored person.
    #[arg(long)]
    pub no_person_score: Option<f64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct InspectArgs {
    /// Trajectories to dump errors for. Defaults to the test data when it
    /// exists.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    /// Only this video.
    #[arg(long)]
    pub video: Option<String>,
    /// Also write every node's per-frame errors to nodes.csv.
    #[arg(long)]
    pub nodes: bool,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.common.seed {
        cfg.set_seed(seed);
    }
    if let Some(threads) = cli.common.threads {
        cfg.set_threads(threads);
    }
    if let Some(out) = cli.common.out {
        cfg.paths.out = out;
    }
    match cli.command {
        Command::Synth => cmd_synth(&cfg).map(|_| ()),
        Command::Train(a) => {
            if let Some(d) = a.data {
                cfg.paths.train_data = Some(d);
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            cmd_train(&cfg, a.resume).map(|_| ())
        }
        Command::Score(a) => {
            if let Some(d) = a.data {
                cfg.paths.test_data = Some(d);
            }
            if let Some(c) = a.checkpoints {
                cfg.paths.checkpoints = Some(c);
            }
            if let Some(t) = a.timescales {
                cfg.score.timescales = t;
            }
            if let Some(d) = a.direction {
                cfg.score.directions = d.directions();
            }
            if let Some(s) = a.stride {
                cfg.score.stride = s;
            }
            if a.threshold.is_some() {
                cfg.score.threshold = a.threshold;
            }
            cmd_score(&cfg).map(|_| ())
        }
        Command::Eval(a) => {
            if let Some(s) = a.scores {
                cfg.paths.scores = Some(s);
            }
            if let Some(l) = a.labels {
                cfg.paths.labels = Some(l);
            }
            if let Some(v) = a.no_person_score {
                cfg.score.no_person_score = v;
            }
            cmd_eval(&cfg).map(|_| ())
        }
        Command::Inspect(a) => {
            if let Some(d) = &a.data {
                cfg.paths.test_data = Some(d.clone());
            }
            if let Some(c) = &a.checkpoints {
                cfg.paths.checkpoints = Some(c.clone());
            }
            cmd_inspect(&cfg, &a)
        }
    }
}

pub const REPORT_FILE: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const EVAL_FILE: &str = "eval.json";
pub const ROC_FILE: &str = "roc.csv";
pub const TIMESCALES_FILE: &str = "timescales.csv";
pub const NODES_FILE: &str = "nodes.csv";

pub fn checkpoint_path(dir: &Path, direction: Direction) -> PathBuf {
    dir.join(format!("{direction}.ckpt"))
}

/// Counts written by `synth`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthCounts {
    pub train: usize,
    pub test: usize,
    pub anomalies: usize,
}

pub fn cmd_synth(cfg: &RunConfig) -> Result<SynthCounts> {
    cfg.synth.validate()?;
    require_writable_dir(&cfg.paths.out)?;
    let data = generate(&cfg.synth)?;
    data.write(&cfg.paths.out)?;
    let counts = SynthCounts {
        train: data.train.len(),
        test: data.test.len(),
        anomalies: data.anomalies.len(),
    };
    println!(
        "wrote {} training and {} test trajectories ({} anomalous, {} labeled frames) to {}",
        counts.train,
        counts.test,
        counts.anomalies,
        data.test.labels.as_ref().map_or(0, Labels::len),
        cfg.paths.out.display()
    );
    Ok(counts)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn save_reports(out: &Path, reports: &BTreeMap<Direction, TrainReport>) -> Result<()> {
    write_json(&out.join(REPORT_FILE), reports)?;
    let all: Vec<&TrainReport> = reports.values().collect();
    write_reports_csv(&all, create(&out.join(REPORT_CSV))?)
}

fn check_model_config(cfg: &RunConfig, model: &MtpModel, path: &Path) -> Result<()> {
    match &cfg.model {
        Some(want) if want != model.config() => Err(Error::ModelMismatch(format!(
            "{} was trained with a different model config than the run config",
            path.display()
        ))),
        _ => Ok(()),
    }
}

/// Trains (or resumes) both direction models; writes `future.ckpt`,
/// `past.ckpt`, `report.json` and `report.csv`.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> Result<BTreeMap<Direction, TrainReport>> {
    cfg.validate()?;
    let data_path = cfg.paths.train_data();
    require_file(&data_path)?;
    let ckpt_dir = cfg.paths.checkpoint_dir();
    require_writable_dir(&ckpt_dir)?;
    require_writable_dir(&cfg.paths.out)?;
    let mut reports: BTreeMap<Direction, TrainReport> = if resume {
        let path = cfg.paths.out.join(REPORT_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text)?
    } else {
        BTreeMap::new()
    };
    let dataset = load_jsonl(&data_path)?;
    log::info!("loaded {} trajectories from {}", dataset.len(), data_path.display());

    for direction in Direction::BOTH {
        let path = checkpoint_path(&ckpt_dir, direction);
        let mut report = reports.remove(&direction).unwrap_or_default();
        let mut trainer = if resume {
            let (model, steps) = MtpModel::load(&path)?;
            if model.direction != direction {
                return Err(Error::ModelMismatch(format!("{} holds a {} model", path.display(), model.direction)));
            }
            check_model_config(cfg, &model, &path)?;
            Trainer::resume(model, cfg.train.clone(), steps, report.epoch_losses.len())?
        } else {
            Trainer::new(MtpModel::new(cfg.model_config(), direction)?, cfg.train.clone())?
        };
        let data = prepare_dataset(&dataset, direction, cfg.train.normalize)?;
        let remaining = cfg.train.epochs.saturating_sub(trainer.epochs_done);
        let every = cfg.paths.checkpoint_every;
        let snapshot = reports.clone();
        trainer.fit(&data, remaining, &mut report, |t, r| {
            if every > 0 && t.epochs_done % every == 0 {
                t.model.save(&path, t.adam.step_count)?;
                let mut all = snapshot.clone();
                all.insert(direction, r.clone());
                save_reports(&cfg.paths.out, &all)?;
            }
            Ok(())
        })?;
        trainer.model.save(&path, trainer.adam.step_count)?;
        if let Some(last) = report.epoch_losses.last() {
            println!(
                "{direction}: {} epochs, {} optimizer steps, final loss {last:.6e}",
                trainer.epochs_done, trainer.adam.step_count
            );
        }
        reports.insert(direction, report);
        save_reports(&cfg.paths.out, &reports)?;
    }
    Ok(reports)
}

/// Loads the checkpoints for `directions`; all must share one model config,
/// which must equal the run config's model section when that is given.
pub fn load_models(cfg: &RunConfig, directions: &[Direction]) -> Result<Vec<MtpModel>> {
    let dir = cfg.paths.checkpoint_dir();
    let paths: Vec<PathBuf> = directions.iter().map(|&d| checkpoint_path(&dir, d)).collect();
    for p in &paths {
        require_file(p)?;
    }
    let mut models: Vec<MtpModel> = Vec::with_capacity(paths.len());
    for (&d, p) in directions.iter().zip(&paths) {
        let (model, _) = MtpModel::load(p)?;
        if model.direction != d {
            return Err(Error::ModelMismatch(format!("{} holds a {} model", p.display(), model.direction)));
        }
        check_model_config(cfg, &model, p)?;
        if let Some(first) = models.first() {
            if first.config() != model.config() {
                return Err(Error::ModelMismatch("future and past checkpoints differ in architecture".into()));
            }
        }
        models.push(model);
    }
    Ok(models)
}

/// Scores the test data with the selected models; writes `scores.csv`.
pub fn cmd_score(cfg: &RunConfig) -> Result<ScoreOutput> {
    cfg.score.validate()?;
    let data_path = cfg.paths.test_data();
    require_file(&data_path)?;
    let scores_path = cfg.paths.scores();
    if let Some(parent) = scores_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        require_writable_dir(parent)?;
    }
    let models = load_models(cfg, &cfg.score.directions)?;
    let dataset = load_jsonl(&data_path)?;
    let refs: Vec<&MtpModel> = models.iter().collect();
    let out = score_dataset(&refs, &dataset, &cfg.score)?;
    out.scores.write_csv(create(&scores_path)?)?;
    println!(
        "scored {} frames ({} without coverage) into {}",
        out.scores.len(),
        out.uncovered_frames,
        scores_path.display()
    );
    Ok(out)
}

/// Frame-AUC of `scores.csv` against the labels; writes `eval.json` and
/// `roc.csv`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let (scores_path, labels_path) = (cfg.paths.scores(), cfg.paths.labels());
    require_file(&scores_path)?;
    require_file(&labels_path)?;
    require_writable_dir(&cfg.paths.out)?;
    let scores = ScoreSeries::read_csv(File::open(&scores_path).map_err(|e| Error::io(&scores_path, e))?)?;
    let labels = Labels::read_csv(&labels_path)?;
    let report = frame_auc(&scores, &labels, cfg.score.no_person_score)?;
    let (s, l, _) = align(&scores, &labels, cfg.score.no_person_score);
    write_roc_csv(&roc_curve(&s, &l)?, create(&cfg.paths.out.join(ROC_FILE))?)?;
    write_json(&cfg.paths.out.join(EVAL_FILE), &report)?;
    println!(
        "frame AUC {:.4} over {} positive and {} negative frames ({} unscored)",
        report.frame_auc, report.positives, report.negatives, report.unscored_labeled
    );
    Ok(report)
}

/// Prints a summary of each checkpoint. With test data, writes
/// `timescales.csv` and optionally `nodes.csv`.
pub fn cmd_inspect(cfg: &RunConfig, args: &InspectArgs) -> Result<()> {
    let models = load_models(cfg, &cfg.score.directions)?;
    for m in &models {
        let c = m.config();
        let sup: Vec<String> = c
            .supervision
            .iter()
            .map(|s| format!("{}->{}", s.layer, s.timescale))
            .collect();
        println!(
            "{}: width {}, kernels {:?}, receptive fields {:?}, supervised {}, {} parameters",
            m.direction,
            c.width,
            c.kernel_sizes,
            c.receptive_fields(),
            sup.join(" "),
            c.param_count()
        );
    }
    let data_path = cfg.paths.test_data();
    if args.data.is_none() && !data_path.is_file() {
        return Ok(());
    }
    require_file(&data_path)?;
    require_writable_dir(&cfg.paths.out)?;
    let mut dataset = load_jsonl(&data_path)?;
    if let Some(v) = &args.video {
        dataset.trajectories.retain(|t| &t.video_id == v);
        if dataset.is_empty() {
            return Err(Error::Data(format!("no trajectory of video {v:?} in {}", data_path.display())));
        }
    }
    let refs: Vec<&MtpModel> = models.iter().collect();
    let out = score_dataset(&refs, &dataset, &cfg.score)?;
    let path = cfg.paths.out.join(TIMESCALES_FILE);
    out.write_timescale_csv(create(&path)?)?;
    println!("wrote {}", path.display());
    if args.nodes {
        let path = cfg.paths.out.join(NODES_FILE);
        write_nodes_csv(&refs, &dataset, cfg.score.normalize, create(&path)?)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

/// `video_id,track_id,direction,timescale,node,frame,error` for every
/// defined node error. Node indices count along the model's own time axis,
/// which runs backwards for the past model; frames are video frames.
pub fn write_nodes_csv(
    models: &[&MtpModel],
    dataset: &Dataset,
    normalize: bool,
    out: impl std::io::Write,
) -> Result<()> {
    let data = if normalize {
        dataset.normalized()?
    } else {
        dataset.clone()
    };
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["video_id", "track_id", "direction", "timescale", "node", "frame", "error"])?;
    for traj in &data.trajectories {
        for m in models {
            let work = match m.direction {
                Direction::Future => traj.clone(),
                Direction::Past => traj.reversed(),
            };
            let n = work.len();
            let layers: Vec<usize> = m
                .config()
                .supervision
                .iter()
                .filter(|s| n >= 2 * s.timescale)
                .map(|s| s.layer)
                .collect();
            if layers.is_empty() {
                continue;
            }
            let (poses, weights) = (work.poses(), work.weights());
            for (layer, pred) in m.predict_nodes(&poses, &layers)? {
                let ts = m.config().timescale_of(layer).expect("supervised layer");
                let matrix = node_errors(layer, ts, &pred, &poses, &weights)?;
                for node in 0..matrix.nodes {
                    for t in 0..n {
                        let Some(e) = matrix.get(t, node) else { continue };
                        let frame_offset = match m.direction {
                            Direction::Future => t,
                            Direction::Past => n - 1 - t,
                        };
                        w.write_record([
                            traj.video_id.clone(),
                            traj.track_id.clone(),
                            m.direction.to_string(),
                            ts.to_string(),
                            node.to_string(),
                            (traj.first_frame() + frame_offset as i64).to_string(),
                            e.to_string(),
                        ])?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))
}
