//! The `occkit` command line.
//!
//! Every metric command writes a [`MetricReport`] that embeds the resolved
//! arguments and seeds. Exit codes: 0 success, 1 runtime failure, 2 invalid
//! input, 3 metric undefined (zero generalisation gap).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::distort::{distort_dataset, DistortContext, DistortionSpec, Fill, SaliencyChoice, SpecArgs};
use crate::error::{Error, Result};
use crate::mask::DEFAULT_DECAY;
use crate::metrics::{
    affinity, class_increases, cut_occlusion, di_from_increases, di_null, di_worst_case_from_increases,
    dominant_class, i_occlusion_curve, subset_filter, CurveConfig, NullVariant, OcclusionSource, RunEnsemble,
    RunPair,
};
use crate::modelio::{
    predict_dataset, read_log, read_log_with_classes, train_tiny_with_history, write_log, Arch, Donor, InterMix,
    LrSchedule, Msda, PredictionProvider, RemoteProvider, ReplayProvider, SaliencyProvider, TinyModel, TrainConfig,
};
use crate::report::{curve_svg, merge_reports, write_curve_csv, write_increases_csv, MetricReport};
use crate::rng::SeededRng;
use crate::{LabeledDataset, Split};

/// Environment variable holding the default root seed.
pub const SEED_ENV: &str = "OCCKIT_SEED";

#[derive(Parser, Debug)]
#[command(name = "occkit", version, about = "Image distortions and bias/robustness metrics for classifiers")]
pub struct Cli {
    /// Print machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,

    /// Root seed for every random stream.
    #[arg(long, global = true, env = SEED_ENV, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for distortion and null trials. Results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Apply a distortion to a dataset and save it with a provenance sidecar.
    Distort(DistortArgs),
    /// Run a provider over a dataset and write a JSONL prediction log.
    Predict(PredictArgs),
    /// Data Interference index over paired original/distorted logs.
    Di(DiArgs),
    /// Accuracy on distorted data, in percent.
    Cutocc(CutoccArgs),
    /// iOcclusion curve over a list of occluded fractions.
    Iocc(IoccArgs),
    /// Affinity: augmented minus clean test accuracy.
    Affinity(AffinityArgs),
    /// Train the built-in tiny classifier.
    Traintiny(TrainArgs),
    /// Monte-Carlo null distribution of the DI index.
    Null(NullArgs),
    /// Merge reports into one comparison table.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Manifest CSV (`id,path,label[,label2]`).
    #[arg(long)]
    pub data: PathBuf,
    /// Number of classes K.
    #[arg(long)]
    pub classes: usize,
    #[arg(long, default_value = "test")]
    pub split: String,
}

impl DataArgs {
    fn load(&self) -> Result<LabeledDataset> {
        LabeledDataset::load(&self.data, self.classes, self.split.parse()?)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DistortArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Distortion, e.g. `patch_shuffle:g=4` or `occlude:mask=fourier,p=0.3`.
    #[arg(long)]
    pub spec: String,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Donor manifest for `fill=donor`, mixup, cutmix, fmix and rm.
    #[arg(long)]
    pub donor: Option<PathBuf>,
    /// Saliency provider for `mask=saliency` (`tiny:MODEL` or `remote:URL`).
    #[arg(long)]
    pub saliency: Option<String>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `tiny:MODEL.json`, `replay:LOG.jsonl|DIR` or `remote:URL`.
    #[arg(long)]
    pub provider: String,
    /// Condition tag for the log (default: the split name).
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Record logits when the provider returns them.
    #[arg(long)]
    pub logits: bool,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct RunLogs {
    /// Original-data logs, one per run.
    #[arg(long, num_args = 1.., required = true)]
    pub orig: Vec<PathBuf>,
    /// Distorted-data logs, paired with `--orig` by position.
    #[arg(long, num_args = 1.., required = true)]
    pub dist: Vec<PathBuf>,
    /// Class count; inferred from the logs when omitted.
    #[arg(long)]
    pub classes: Option<usize>,
}

impl RunLogs {
    fn load(&self) -> Result<RunEnsemble> {
        if self.orig.len() != self.dist.len() {
            return Err(Error::Unpaired(format!(
                "{} original logs but {} distorted logs",
                self.orig.len(),
                self.dist.len()
            )));
        }
        let read = |p: &PathBuf| match self.classes {
            Some(k) => read_log_with_classes(p, k),
            None => read_log(p),
        };
        let mut runs = Vec::with_capacity(self.orig.len());
        for (o, d) in self.orig.iter().zip(&self.dist) {
            runs.push(RunPair {
                original: read(o)?,
                distorted: read(d)?,
            });
        }
        // Logs read without a class count may disagree on K; align to the largest.
        if self.classes.is_none() {
            let k = runs
                .iter()
                .flat_map(|r| [r.original.num_classes(), r.distorted.num_classes()])
                .max()
                .unwrap_or(1);
            let mut aligned = Vec::with_capacity(runs.len());
            for (o, d) in self.orig.iter().zip(&self.dist) {
                aligned.push(RunPair {
                    original: read_log_with_classes(o, k)?,
                    distorted: read_log_with_classes(d, k)?,
                });
            }
            runs = aligned;
        }
        RunEnsemble::new(runs)
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DiArgs {
    #[command(flatten)]
    pub logs: RunLogs,
    /// Also run the null: `trials=N[,variant=per_example|all_to_one]`.
    #[arg(long)]
    pub null: Option<String>,
    /// Report JSON path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CSV of per-run, per-class increases.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct CutoccArgs {
    /// Prediction log on distorted data.
    #[arg(long, conflicts_with_all = ["data", "provider"])]
    pub log: Option<PathBuf>,
    /// Manifest to distort and evaluate (with `--provider` and `--spec`).
    #[arg(long, requires_all = ["classes", "provider"])]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub provider: Option<String>,
    /// Occluder; uniform-size rectangles by default.
    #[arg(long)]
    pub spec: Option<String>,
    /// File of sample ids (one per line) restricting the evaluation.
    #[arg(long)]
    pub subset: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct IoccArgs {
    /// Training manifest.
    #[arg(long)]
    pub train: PathBuf,
    /// Test manifest.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub classes: usize,
    /// `tiny:MODEL.json`, `replay:DIR` or `remote:URL`.
    #[arg(long)]
    pub provider: String,
    /// Occluder: `fourier[:decay=D]`, `rect`, `grid:g=G` or `saliency[:mode=coin|most|least]`.
    #[arg(long, default_value = "fourier")]
    pub source: String,
    /// Saliency provider when it differs from `--provider`.
    #[arg(long)]
    pub saliency: Option<String>,
    /// Comma-separated occluded fractions in (0, 1). May be empty.
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9", allow_hyphen_values = true)]
    pub fractions: String,
    #[arg(long, default_value = "black")]
    pub fill: String,
    #[arg(long, default_value_t = crate::distort::DEFAULT_BATCH_SIZE)]
    pub batch: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long)]
    pub svg: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AffinityArgs {
    /// Clean-model test accuracy in percent.
    #[arg(long, required_unless_present = "clean_log")]
    pub clean: Option<f64>,
    /// Augmented-model test accuracy in percent.
    #[arg(long, required_unless_present = "aug_log")]
    pub aug: Option<f64>,
    #[arg(long, conflicts_with = "clean")]
    pub clean_log: Option<PathBuf>,
    #[arg(long, conflicts_with = "aug")]
    pub aug_log: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: TrainData,
    /// Model output path.
    #[arg(long)]
    pub out: PathBuf,
    /// `linear` or `mlp:hidden=N`.
    #[arg(long, default_value = "linear")]
    pub arch: String,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Epoch at which the rate drops (default: half of `--epochs`).
    #[arg(long)]
    pub lr_drop_epoch: Option<usize>,
    #[arg(long, default_value_t = 0.001)]
    pub lr_dropped: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// `none`, `mixup:alpha=A`, `cutmix:alpha=A`, `fmix:alpha=A,decay=D`,
    /// `rm:k=K,decay=D,alpha=A` or `interdataset:alpha=A,h=H,mix=mixup|cutmix|fmix`.
    #[arg(long, default_value = "none")]
    pub msda: String,
    /// Donor manifest for `interdataset`.
    #[arg(long)]
    pub donor: Option<PathBuf>,
    /// Fixed mixing coefficient instead of a Beta draw.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Report JSON path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainData {
    /// Training manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub classes: usize,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct NullArgs {
    #[command(flatten)]
    pub logs: RunLogs,
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value = "per_example")]
    pub variant: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ReportArgs {
    /// Report JSON files; row names are the file stems.
    #[arg(num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// CSV output for the merged table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::ZeroGap => 3,
        Error::InvalidParameter(_)
        | Error::Shape(_)
        | Error::Manifest { .. }
        | Error::Empty(_)
        | Error::Unpaired(_)
        | Error::UnknownId(_)
        | Error::DuplicateId(_)
        | Error::LogParse { .. } => 2,
        _ => 1,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    let mut buf = Vec::new();
    let result = match cli.workers {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build() {
            Ok(pool) => pool.install(|| dispatch(&cli, &mut buf)),
            Err(e) => Err(Error::param(format!("cannot start {n} workers: {e}"))),
        },
        None => dispatch(&cli, &mut buf),
    };
    let _ = out.write_all(&buf);
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli, out: &mut Vec<u8>) -> Result<i32> {
    match &cli.command {
        Command::Distort(a) => cmd_distort(cli, a, out),
        Command::Predict(a) => cmd_predict(cli, a, out),
        Command::Di(a) => cmd_di(cli, a, out),
        Command::Cutocc(a) => cmd_cutocc(cli, a, out),
        Command::Iocc(a) => cmd_iocc(cli, a, out),
        Command::Affinity(a) => cmd_affinity(cli, a, out),
        Command::Traintiny(a) => cmd_traintiny(cli, a, out),
        Command::Null(a) => cmd_null(cli, a, out),
        Command::Report(a) => cmd_report(cli, a, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn config(command: &str, seed: u64, args: &impl Serialize) -> Result<serde_json::Value> {
    Ok(json!({ "command": command, "seed": seed, "args": serde_json::to_value(args)? }))
}

/// Writes the report if asked, then prints it (JSON) or a one-line summary.
fn finish(cli: &Cli, report: &MetricReport, path: Option<&Path>, summary: String, out: &mut dyn Write) -> Result<()> {
    if let Some(p) = path {
        report.write(p)?;
    }
    if cli.json {
        emit(out, &report.to_json()?)
    } else {
        emit(out, &(summary + "\n"))
    }
}

/// A loaded `kind:target` provider.
pub enum Provider {
    Tiny(TinyModel),
    Replay(ReplayProvider),
    Remote(RemoteProvider),
}

impl Provider {
    pub fn load(spec: &str) -> Result<Self> {
        let (kind, target) = spec
            .split_once(':')
            .ok_or_else(|| Error::param(format!("provider {spec:?}: expected tiny:PATH, replay:PATH or remote:URL")))?;
        match kind {
            "tiny" => Ok(Provider::Tiny(TinyModel::load(target)?)),
            "replay" => {
                let p = Path::new(target);
                Ok(Provider::Replay(if p.is_dir() {
                    ReplayProvider::from_dir(p)?
                } else {
                    ReplayProvider::from_path(p)?
                }))
            }
            "remote" => Ok(Provider::Remote(RemoteProvider::connect(target)?)),
            other => Err(Error::param(format!("unknown provider kind {other:?} (tiny|replay|remote)"))),
        }
    }

    pub fn predictor(&self) -> &dyn PredictionProvider {
        match self {
            Provider::Tiny(m) => m,
            Provider::Replay(r) => r,
            Provider::Remote(r) => r,
        }
    }

    pub fn saliency(&self) -> Option<&dyn SaliencyProvider> {
        match self {
            Provider::Tiny(m) => Some(m),
            Provider::Replay(_) => None,
            Provider::Remote(r) => Some(r),
        }
    }
}

fn saliency_of(p: &Provider) -> Result<&dyn SaliencyProvider> {
    p.saliency()
        .ok_or_else(|| Error::param("replay providers cannot produce saliency maps"))
}

fn cmd_distort(cli: &Cli, a: &DistortArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = a.data.load()?;
    let spec: DistortionSpec = a.spec.parse()?;
    let donor = match &a.donor {
        Some(p) => Some(LabeledDataset::load(p, a.data.classes, Split::Train)?),
        None => None,
    };
    let sal = a.saliency.as_deref().map(Provider::load).transpose()?;
    let ctx = DistortContext {
        donor: donor.as_ref(),
        saliency: sal.as_ref().map(saliency_of).transpose()?,
        workers: cli.workers,
    };
    let d = distort_dataset(&ds, &spec, cli.seed, ctx)?;
    d.save(&a.out)?;
    let summary = json!({
        "command": "distort",
        "out": a.out,
        "count": d.dataset.len(),
        "spec": d.provenance.spec,
        "seed": cli.seed,
    });
    if cli.json {
        emit(out, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    } else {
        emit(out, &format!("distorted {} images with {} -> {}\n", d.dataset.len(), d.provenance.spec, a.out.display()))?;
    }
    Ok(0)
}

fn cmd_predict(cli: &Cli, a: &PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = a.data.load()?;
    let provider = Provider::load(&a.provider)?;
    let condition = a.condition.clone().unwrap_or_else(|| a.data.split.clone());
    let log = predict_dataset(provider.predictor(), &ds, &condition, a.logits)?;
    write_log(&log, &a.out)?;
    let acc = log.accuracy()?;
    if cli.json {
        let summary = json!({
            "command": "predict",
            "out": a.out,
            "count": log.len(),
            "condition": condition,
            "accuracy": 100.0 * acc,
        });
        emit(out, &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    } else {
        emit(out, &format!("{} predictions, accuracy {:.2}% -> {}\n", log.len(), 100.0 * acc, a.out.display()))?;
    }
    Ok(0)
}

fn parse_null(s: &str) -> Result<(usize, NullVariant)> {
    let mut a = SpecArgs::parse(&format!("null:{s}"))?;
    let trials = a.or("trials", 1000)?;
    let variant = a.or("variant", NullVariant::PerExample)?;
    a.finish()?;
    Ok((trials, variant))
}

fn cmd_di(cli: &Cli, a: &DiArgs, out: &mut dyn Write) -> Result<i32> {
    let e = a.logs.load()?;
    let incs: Vec<Vec<f64>> = e
        .runs()
        .iter()
        .map(|r| class_increases(&r.original, &r.distorted).map(|c| c.0))
        .collect::<Result<_>>()?;
    let di = di_from_increases(&incs)?;
    let worst = di_worst_case_from_increases(&incs)?;
    let mut report = MetricReport::new("di", Some(di), config("di", cli.seed, a)?)?
        .with_extra("worst_case", worst)?
        .with_extra("dominant_class", dominant_class(&incs)?)?
        .with_extra("runs", e.len())?;
    report.per_class_increases = Some(incs.clone());
    let mut summary = format!("DI {di:.6} (worst-case {worst:.6}) over {} runs", e.len());
    if let Some(spec) = &a.null {
        let (trials, variant) = parse_null(spec)?;
        let stats = di_null(&e, variant, trials, cli.seed)?;
        summary.push_str(&format!("; null {variant} mean {:.6} std {:.6}", stats.mean, stats.std));
        report = report
            .with_extra("null_mean", stats.mean)?
            .with_extra("null_std", stats.std)?
            .with_extra("null", &stats)?
            .with_seed("null", cli.seed);
    }
    if let Some(p) = &a.csv {
        write_increases_csv(p, &incs)?;
    }
    finish(cli, &report, a.out.as_deref(), summary, out)?;
    Ok(0)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn cmd_cutocc(cli: &Cli, a: &CutoccArgs, out: &mut dyn Write) -> Result<i32> {
    let log = match (&a.log, &a.data) {
        (Some(p), None) => read_log(p)?,
        (None, Some(data)) => {
            let k = a.classes.ok_or_else(|| Error::param("--classes is required with --data"))?;
            let provider = Provider::load(a.provider.as_deref().unwrap_or_default())?;
            let ds = LabeledDataset::load(data, k, Split::Test)?;
            let spec: DistortionSpec = a
                .spec
                .as_deref()
                .unwrap_or("occlude:mask=rect,lo=0.25,hi=0.25,placement=inside")
                .parse()?;
            let d = distort_dataset(
                &ds,
                &spec,
                cli.seed,
                DistortContext {
                    donor: None,
                    saliency: provider.saliency(),
                    workers: cli.workers,
                },
            )?;
            predict_dataset(provider.predictor(), &d.dataset, &format!("test@{spec}"), false)?
        }
        _ => return Err(Error::param("give either --log or --data with --classes and --provider")),
    };
    let log = match &a.subset {
        Some(p) => {
            let ids = read_ids(p)?;
            subset_filter(&log, ids.iter().map(String::as_str))?
        }
        None => log,
    };
    let v = cut_occlusion(&log)?;
    let report = MetricReport::new("cut_occlusion", Some(v), config("cutocc", cli.seed, a)?)?.with_seed("distort", cli.seed);
    finish(cli, &report, a.out.as_deref(), format!("CutOcclusion {v:.2}% over {} samples", log.len()), out)?;
    Ok(0)
}

fn parse_fractions(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| Error::param(format!("bad fraction {t:?}"))))
        .collect()
}

fn cmd_iocc(cli: &Cli, a: &IoccArgs, out: &mut dyn Write) -> Result<i32> {
    let fractions = parse_fractions(&a.fractions)?;
    let mut src = SpecArgs::parse(&a.source)?;
    let provider = Provider::load(&a.provider)?;
    let extra_sal = a.saliency.as_deref().map(Provider::load).transpose()?;
    let source = match src.name.as_str() {
        "fourier" => OcclusionSource::Fourier {
            decay: src.or("decay", DEFAULT_DECAY)?,
        },
        "rect" => OcclusionSource::Rect,
        "grid" => OcclusionSource::Grid { g: src.req("g")? },
        "saliency" => OcclusionSource::Saliency {
            provider: saliency_of(extra_sal.as_ref().unwrap_or(&provider))?,
            mode: src.or("mode", SaliencyChoice::Coin)?,
        },
        other => {
            return Err(Error::param(format!(
                "unknown occluder {other:?} (fourier|rect|grid|saliency)"
            )))
        }
    };
    src.finish()?;
    let train = LabeledDataset::load(&a.train, a.classes, Split::Train)?;
    let test = LabeledDataset::load(&a.test, a.classes, Split::Test)?;
    let cfg = CurveConfig {
        fractions,
        seed: cli.seed,
        batch_size: a.batch,
        fill: a.fill.parse::<Fill>()?,
        workers: cli.workers,
    };
    let cfg_json = config("iocc", cli.seed, a)?;
    match i_occlusion_curve(provider.predictor(), &source, &train, &test, &cfg) {
        Ok(curve) => {
            let value = (!curve.points.is_empty())
                .then(|| curve.points.iter().map(|p| p.i_occlusion).sum::<f64>() / curve.points.len() as f64);
            let mut report = MetricReport::new("i_occlusion", value, cfg_json)?.with_curve(&curve)?;
            for pt in &curve.points {
                report = report
                    .with_seed(format!("train@p={}", pt.p), pt.train_seed)
                    .with_seed(format!("test@p={}", pt.p), pt.test_seed);
            }
            if let Some(p) = &a.csv {
                write_curve_csv(p, &curve)?;
            }
            if let Some(p) = &a.svg {
                let svg = curve_svg(&curve, &format!("iOcclusion ({})", curve.source));
                fs::write(p, svg).map_err(|e| Error::io(p, e))?;
            }
            let mut summary = format!("iOcclusion ({}), {} levels", curve.source, curve.points.len());
            for pt in &curve.points {
                summary.push_str(&format!("\n  p={:<5} train {:.2}%  test {:.2}%  iOcc {:.6}", pt.p, 100.0 * pt.acc_train_p, 100.0 * pt.acc_test_p, pt.i_occlusion));
            }
            finish(cli, &report, a.out.as_deref(), summary, out)?;
            Ok(0)
        }
        Err(Error::ZeroGap) => {
            let mut report = MetricReport::new("i_occlusion", None, cfg_json)?;
            report.status = Some("zero_gap".into());
            finish(
                cli,
                &report,
                a.out.as_deref(),
                "iOcclusion undefined: train and test accuracy are equal (zero generalisation gap)".into(),
                out,
            )?;
            Ok(3)
        }
        Err(e) => Err(e),
    }
}

fn cmd_affinity(cli: &Cli, a: &AffinityArgs, out: &mut dyn Write) -> Result<i32> {
    let acc = |v: Option<f64>, log: &Option<PathBuf>| -> Result<f64> {
        match (v, log) {
            (Some(x), _) => Ok(x),
            (None, Some(p)) => Ok(100.0 * read_log(p)?.accuracy()?),
            (None, None) => Err(Error::param("accuracy or log required")),
        }
    };
    let clean = acc(a.clean, &a.clean_log)?;
    let aug = acc(a.aug, &a.aug_log)?;
    let v = affinity(clean, aug)?;
    let report = MetricReport::new("affinity", Some(v), config("affinity", cli.seed, a)?)?
        .with_extra("clean", clean)?
        .with_extra("aug", aug)?;
    finish(cli, &report, a.out.as_deref(), format!("affinity {v:.6} (aug {aug:.2}% - clean {clean:.2}%)"), out)?;
    Ok(0)
}

fn parse_msda(s: &str, donor: Option<LabeledDataset>, donor_path: Option<&Path>) -> Result<Msda> {
    let mut a = SpecArgs::parse(s)?;
    let msda = match a.name.as_str() {
        "none" => Msda::None,
        "mixup" => Msda::Mixup { alpha: a.or("alpha", 1.0)? },
        "cutmix" => Msda::Cutmix { alpha: a.or("alpha", 1.0)? },
        "fmix" => Msda::Fmix {
            alpha: a.or("alpha", 1.0)?,
            decay: a.or("decay", DEFAULT_DECAY)?,
        },
        "rm" => Msda::Rm {
            k: a.or("k", 3)?,
            decay: a.or("decay", DEFAULT_DECAY)?,
            alpha: a.or("alpha", 1.0)?,
        },
        "interdataset" => {
            let mix: String = a.or("mix", "mixup".to_string())?;
            let mix = match mix.as_str() {
                "mixup" => InterMix::Mixup,
                "cutmix" => InterMix::Cutmix,
                "fmix" => InterMix::Fmix {
                    decay: a.or("decay", DEFAULT_DECAY)?,
                },
                other => return Err(Error::param(format!("unknown mix {other:?} (mixup|cutmix|fmix)"))),
            };
            let data = donor.ok_or_else(|| Error::param("interdataset needs --donor"))?;
            let description = donor_path.map(|p| p.display().to_string()).unwrap_or_default();
            Msda::Interdataset {
                donor: Donor::new(description, data),
                mix,
                alpha: a.or("alpha", 1.0)?,
                h: a.or("h", 1.0)?,
            }
        }
        other => {
            return Err(Error::param(format!(
                "unknown msda {other:?} (none|mixup|cutmix|fmix|rm|interdataset)"
            )))
        }
    };
    a.finish()?;
    Ok(msda)
}

fn cmd_traintiny(cli: &Cli, a: &TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let ds = LabeledDataset::load(&a.data.data, a.data.classes, Split::Train)?;
    let donor = a
        .donor
        .as_ref()
        .map(|p| LabeledDataset::load(p, a.data.classes, Split::Train))
        .transpose()?;
    let cfg = TrainConfig {
        arch: a.arch.parse::<Arch>()?,
        epochs: a.epochs,
        batch_size: a.batch,
        lr: LrSchedule {
            value: a.lr,
            drop_epoch: Some(a.lr_drop_epoch.unwrap_or(a.epochs / 2)),
            dropped_value: a.lr_dropped,
        },
        momentum: a.momentum,
        msda: parse_msda(&a.msda, donor, a.donor.as_deref())?,
        seed: cli.seed,
        lambda: a.lambda,
    };
    let (model, hist) = train_tiny_with_history(&ds, &cfg)?;
    model.save(&a.out)?;
    let acc = 100.0 * hist.train_accuracy;
    let root = SeededRng::new(cli.seed);
    let report = MetricReport::new("train_accuracy", Some(acc), config("traintiny", cli.seed, a)?)?
        .with_seed("train", cli.seed)
        .with_seed("rm_bank", root.child_seed("rm_bank", 0))
        .with_extra("final_loss", hist.clean_loss.last().copied())?
        .with_extra("clean_loss", &hist.clean_loss)?;
    finish(
        cli,
        &report,
        a.report.as_deref(),
        format!("trained {} for {} epochs: train accuracy {acc:.2}% -> {}", model.arch, cfg.epochs, a.out.display()),
        out,
    )?;
    Ok(0)
}

fn cmd_null(cli: &Cli, a: &NullArgs, out: &mut dyn Write) -> Result<i32> {
    let e = a.logs.load()?;
    let variant: NullVariant = a.variant.parse()?;
    let stats = di_null(&e, variant, a.trials, cli.seed)?;
    let mut report = MetricReport::new("di_null", Some(stats.mean), config("null", cli.seed, a)?)?
        .with_seed("null", cli.seed)
        .with_extra("variant", variant)?
        .with_extra("trials", stats.trials)?
        .with_extra("reassigned", &stats.reassigned)?;
    report.std = Some(stats.std);
    finish(
        cli,
        &report,
        a.out.as_deref(),
        format!("null DI ({variant}, {} trials): mean {:.6} std {:.6}", stats.trials, stats.mean, stats.std),
        out,
    )?;
    Ok(0)
}

fn cmd_report(cli: &Cli, a: &ReportArgs, out: &mut dyn Write) -> Result<i32> {
    let reports = a
        .inputs
        .iter()
        .map(|p| {
            let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            MetricReport::read(p).map(|r| (name, r))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = merge_reports(&reports);
    if let Some(p) = &a.out {
        table.write_csv(p)?;
    }
    if cli.json {
        let rows: Vec<serde_json::Map<String, serde_json::Value>> = table
            .rows
            .iter()
            .map(|r| table.columns.iter().cloned().zip(r.iter().map(|c| json!(c))).collect())
            .collect();
        emit(out, &(serde_json::to_string_pretty(&json!({ "columns": table.columns, "rows": rows }))? + "\n"))?;
    } else {
        emit(out, &table.to_text())?;
    }
    Ok(0)
}
