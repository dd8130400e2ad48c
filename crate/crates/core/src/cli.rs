//! Command-line front end: `train`, `fuse`, `eval`, `rank` and `gradcheck`.
//!
//! Failures print one line `error[<category>]: <message>` on stderr, where the
//! category is one of `config`, `io`, `shape`, `numeric`, and exit nonzero.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use indexmap::IndexMap;
use rayon::prelude::*;

use crate::dataio::{discover_pairs, list_images, load_gray, save_gray, to_tensor, ImagePair};
use crate::error::{Error, Result};
use crate::fusion::{FusionKind, FusionStrategy};
use crate::gradsuite::run_suite;
use crate::metrics::{evaluate, MetricReport, RankingTable};
use crate::nn::{fuse_forward, load_weights, save_weights, ArchConfig};
use crate::training::{train, write_trace, TrainConfig};

/// Gradient-suite tolerance used by `gradcheck` for its exit status.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "amfuse", version, about = "Infrared/visible image fusion toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the autoencoder on paired infrared/visible images.
    Train(TrainArgs),
    /// Fuse one infrared/visible pair with a trained model.
    Fuse(FuseArgs),
    /// Compute the nine quality metrics for fused images.
    Eval(EvalArgs),
    /// Rank methods by normalized index from metric reports.
    Rank(RankArgs),
    /// Finite-difference check of every op and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// `key = value` settings file (`#` starts a comment).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Infrared image directory.
    #[arg(long)]
    pub ir_dir: PathBuf,
    /// Visible image directory (files matched to infrared ones by stem).
    #[arg(long)]
    pub vis_dir: PathBuf,
    /// Output weight file (AMFW).
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV [default: <out>.trace.csv].
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Override one setting, `key=value`; repeatable, applied after the file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Trained weight file (AMFW).
    #[arg(long)]
    pub model: PathBuf,
    /// Infrared image (PGM or PNG).
    #[arg(long)]
    pub ir: PathBuf,
    /// Visible image, same size as the infrared one.
    #[arg(long)]
    pub vis: PathBuf,
    /// Feature fusion rule.
    #[arg(long, default_value = "l1", value_parser = ["avg", "l1", "mean"])]
    pub strategy: String,
    /// Output image; format follows the extension (.pgm or .png).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ir_dir: PathBuf,
    #[arg(long)]
    pub vis_dir: PathBuf,
    /// Fused images, matched to the pairs by stem.
    #[arg(long)]
    pub fused_dir: PathBuf,
    /// Report CSV with one row per pair and a mean row.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Comma-separated report CSVs, one per method.
    #[arg(long, value_delimiter = ',', required = true)]
    pub reports: Vec<PathBuf>,
    /// Comma-separated method names [default: report file stems].
    #[arg(long, value_delimiter = ',')]
    pub names: Vec<String>,
    /// Ranking CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// First of five consecutive seeds.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Flat `key = value` settings covering architecture, losses, SSIM, optimizer and run length.
#[derive(Clone, Debug, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
}

/// Keys accepted in a config file, in documentation order.
pub const CONFIG_KEYS: &[&str] = &[
    "profile",
    "base_channels",
    "ca_reduction",
    "image_side",
    "attention",
    "alpha1",
    "alpha2",
    "alpha3",
    "alpha4",
    "beta",
    "ssim_window",
    "ssim_sigma",
    "ssim_k1",
    "ssim_k2",
    "dynamic_range",
    "msssim_scales",
    "learning_rate",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "batch_size",
    "iterations",
    "epochs",
    "seed",
    "checkpoint",
    "checkpoint_interval",
];

fn parse_num<V: std::str::FromStr>(key: &str, value: &str) -> std::result::Result<V, String> {
    value
        .parse()
        .map_err(|_| format!("{key}: cannot parse {value:?} as {}", std::any::type_name::<V>()))
}

impl Default for CliConfig {
    fn default() -> Self {
        Self { train: TrainConfig::toy() }
    }
}

impl CliConfig {
    /// Parses config text. A `profile` line (`toy` or `paper`) picks the base
    /// values wherever it appears; every other line then overrides that base.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::ConfigLine { line, message: format!("expected `key = value`, got {content:?}") });
            };
            entries.push((line, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = Self::default();
        for (line, k, v) in entries.iter().filter(|e| e.1 == "profile") {
            cfg.set(k, v).map_err(|message| Error::ConfigLine { line: *line, message })?;
        }
        for (line, k, v) in entries.iter().filter(|e| e.1 != "profile") {
            cfg.set(k, v).map_err(|message| Error::ConfigLine { line: *line, message })?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Applies a `KEY=VALUE` command-line override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {spec:?}")))?;
        self.set(k.trim(), v.trim()).map_err(|m| Error::Config(format!("--set {m}")))
    }

    /// Sets one key. Values are range-checked later by [`TrainConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        match key {
            "profile" => {
                *t = match value {
                    "toy" => TrainConfig::toy(),
                    "paper" => TrainConfig::paper(),
                    _ => return Err(format!("profile must be toy or paper, got {value:?}")),
                }
            }
            "base_channels" => t.arch.base_channels = parse_num(key, value)?,
            "ca_reduction" => t.arch.ca_reduction = parse_num(key, value)?,
            "image_side" => t.arch.image_side = parse_num(key, value)?,
            "attention" => t.arch.attention = parse_num(key, value)?,
            "alpha1" => t.weights.alpha1 = parse_num(key, value)?,
            "alpha2" => t.weights.alpha2 = parse_num(key, value)?,
            "alpha3" => t.weights.alpha3 = parse_num(key, value)?,
            "alpha4" => t.weights.alpha4 = parse_num(key, value)?,
            "beta" => t.weights.beta = parse_num(key, value)?,
            "ssim_window" => t.ssim.window = parse_num(key, value)?,
            "ssim_sigma" => t.ssim.sigma = parse_num(key, value)?,
            "ssim_k1" => t.ssim.k1 = parse_num(key, value)?,
            "ssim_k2" => t.ssim.k2 = parse_num(key, value)?,
            "dynamic_range" => t.ssim.dynamic_range = parse_num(key, value)?,
            "msssim_scales" => t.ssim.scales = parse_num(key, value)?,
            "learning_rate" => t.adam.learning_rate = parse_num(key, value)?,
            "adam_beta1" => t.adam.beta1 = parse_num(key, value)?,
            "adam_beta2" => t.adam.beta2 = parse_num(key, value)?,
            "adam_eps" => t.adam.eps = parse_num(key, value)?,
            "batch_size" => t.batch_size = parse_num(key, value)?,
            "iterations" => t.iterations = parse_num(key, value)?,
            "epochs" => {
                t.epochs = match value {
                    "" | "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "seed" => t.seed = parse_num(key, value)?,
            "checkpoint" => t.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "checkpoint_interval" => t.checkpoint_interval = parse_num(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    let cfg = cfg.train;
    cfg.validate()?;
    let listing = discover_pairs(&args.ir_dir, &args.vis_dir)?;
    warn_all(&listing.warnings);
    if listing.pairs.is_empty() {
        return Err(Error::Input("no matching infrared/visible pairs found".into()));
    }
    let pairs = listing
        .pairs
        .iter()
        .map(|p| ImagePair::load(p, cfg.arch.image_side))
        .collect::<Result<Vec<_>>>()?;
    let outcome = train(&pairs, &cfg)?;
    save_weights(&outcome.params, &args.out)?;
    let trace = args.trace.clone().unwrap_or_else(|| {
        let mut s = args.out.clone().into_os_string();
        s.push(".trace.csv");
        PathBuf::from(s)
    });
    write_trace(&outcome.trace, &trace)?;
    if let (Some(first), Some(last)) = (outcome.trace.first(), outcome.trace.last()) {
        println!(
            "trained {} steps on {} pairs: L_total {:.5} -> {:.5}",
            outcome.trace.len(),
            pairs.len(),
            first.total,
            last.total
        );
    }
    Ok(())
}

pub fn cmd_fuse(args: &FuseArgs) -> Result<()> {
    let strategy = FusionStrategy::new(args.strategy.parse::<FusionKind>()?);
    let params = load_weights(&args.model, ArchConfig::toy())?;
    let ir = load_gray(&args.ir)?;
    let vis = load_gray(&args.vis)?;
    let fused = fuse_forward::<f32>(&to_tensor(&ir), &to_tensor(&vis), &params, strategy)?;
    save_gray(&fused, &args.out)
}

/// Worker count for `eval`: `AMFUSE_THREADS` when set, else rayon's default.
pub fn eval_threads() -> Result<Option<usize>> {
    match std::env::var("AMFUSE_THREADS") {
        Err(_) => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::Config(format!("AMFUSE_THREADS must be a positive integer, got {s:?}"))),
        },
    }
}

/// Metrics for every pair that has a fused image, in pair order.
pub fn eval_dirs(ir_dir: &Path, vis_dir: &Path, fused_dir: &Path) -> Result<MetricReport> {
    let listing = discover_pairs(ir_dir, vis_dir)?;
    let mut warnings = listing.warnings;
    let fused = list_images(fused_dir, &mut warnings)?;
    let mut jobs = Vec::new();
    for p in listing.pairs {
        match fused.get(&p.id) {
            Some(f) => jobs.push((p, f.clone())),
            None => warnings.push(format!("{}: no fused image", p.id)),
        }
    }
    warn_all(&warnings);
    if jobs.is_empty() {
        return Err(Error::Input("no pair has a fused image".into()));
    }
    let run = || {
        jobs.par_iter()
            .map(|(p, f)| {
                let values = evaluate(&load_gray(&p.ir)?, &load_gray(&p.vis)?, &load_gray(f)?)
                    .map_err(|e| match e {
                        Error::Numeric(m) => Error::Numeric(format!("{}: {m}", p.id)),
                        other => other,
                    })?;
                Ok((p.id.clone(), values))
            })
            .collect::<Result<Vec<_>>>()
    };
    let rows = match eval_threads()? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(run)?,
        None => run()?,
    };
    let mut report = MetricReport::new();
    for (id, v) in rows {
        report.push(id, v);
    }
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let report = eval_dirs(&args.ir_dir, &args.vis_dir, &args.fused_dir)?;
    report.write_csv(&args.out)?;
    println!("evaluated {} pairs", report.len());
    Ok(())
}

/// Mean metric row of each report under its method name.
pub fn rank_reports(reports: &[PathBuf], names: &[String]) -> Result<RankingTable> {
    if !names.is_empty() && names.len() != reports.len() {
        return Err(Error::Usage(format!("{} names given for {} reports", names.len(), reports.len())));
    }
    let mut methods = IndexMap::new();
    for (k, path) in reports.iter().enumerate() {
        let name = match names.get(k) {
            Some(n) => n.clone(),
            None => path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let mean = MetricReport::read_csv(path)?.mean()?;
        if methods.insert(name.clone(), mean).is_some() {
            return Err(Error::Usage(format!("method name {name:?} given twice")));
        }
    }
    RankingTable::new(methods)
}

pub fn cmd_rank(args: &RankArgs) -> Result<()> {
    let table = rank_reports(&args.reports, &args.names)?;
    std::fs::write(&args.out, table.to_csv()?).map_err(|e| Error::io(&args.out, e))?;
    print!("{}", table.to_text());
    Ok(())
}

pub fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let seeds: Vec<u64> = (0..5).map(|k| args.seed.wrapping_add(k)).collect();
    let report = run_suite(&seeds)?;
    let mut worst: f64 = 0.0;
    for r in &report {
        println!("{:<24} {:.3e}", r.op, r.worst);
        worst = worst.max(r.worst);
    }
    println!("worst {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:e})");
    if worst > GRADCHECK_TOLERANCE {
        let bad: Vec<&str> = report.iter().filter(|r| r.worst > GRADCHECK_TOLERANCE).map(|r| r.op).collect();
        return Err(Error::Numeric(format!("gradient mismatch in {}", bad.join(", "))));
    }
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Rank(a) => cmd_rank(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Exit status for an error category.
pub fn exit_code(category: &str) -> i32 {
    match category {
        "config" => 2,
        "io" => 3,
        "shape" => 4,
        _ => 5,
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[config]: {first}");
            return exit_code("config");
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.category());
            exit_code(e.category())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn config_file_values_and_errors() {
        let c = CliConfig::parse("# comment\nbase_channels = 8 # inline\n\nseed=3\nprofile = paper\n").unwrap();
        assert_eq!(c.train.arch.base_channels, 8);
        assert_eq!(c.train.seed, 3);
        assert_eq!(c.train.batch_size, 12);
        match CliConfig::parse("seed = 1\nlearning_rat = 0.1\n") {
            Err(Error::ConfigLine { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("learning_rat"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(CliConfig::parse("batch_size = -1"), Err(Error::ConfigLine { line: 1, .. })));
        assert!(matches!(CliConfig::parse("just words"), Err(Error::ConfigLine { line: 1, .. })));
    }

    #[test]
    fn overrides_win() {
        let mut c = CliConfig::parse("iterations = 10").unwrap();
        c.apply_override("iterations=3").unwrap();
        assert_eq!(c.train.iterations, 3);
        assert!(c.apply_override("nope=1").is_err());
        assert!(c.apply_override("iterations").is_err());
    }

    #[test]
    fn every_key_is_accepted() {
        let sample = |k: &str| match k {
            "profile" => "toy",
            "attention" => "true",
            "checkpoint" => "ck.amfw",
            _ => "1",
        };
        for k in CONFIG_KEYS {
            let mut c = CliConfig::default();
            c.set(k, sample(k)).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn help_lists_every_flag() {
        let mut cmd = Cli::command();
        for sub in ["train", "fuse", "eval", "rank", "gradcheck"] {
            let help = cmd.find_subcommand_mut(sub).unwrap().render_long_help().to_string();
            let flags: &[&str] = match sub {
                "train" => &["--config", "--ir-dir", "--vis-dir", "--out", "--trace", "--set"],
                "fuse" => &["--model", "--ir", "--vis", "--strategy", "--out"],
                "eval" => &["--ir-dir", "--vis-dir", "--fused-dir", "--out"],
                "rank" => &["--reports", "--names", "--out"],
                _ => &["--seed"],
            };
            for f in flags {
                assert!(help.contains(f), "{sub} help lacks {f}");
            }
        }
    }

    #[test]
    fn bad_usage_is_a_config_error() {
        assert_eq!(run(["amfuse", "fuse", "--strategy", "max"]), 2);
        assert_eq!(run(["amfuse", "frobnicate"]), 2);
    }
}
