//! The `rocnet` command line: dataset generation, training, registration and
//! evaluation.

pub mod config;
pub mod format;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use rocnet_core::datagen::{load_dataset, make_dataset, write_dataset, ShapeKind};
use rocnet_core::geometry::io::read_cloud;
use rocnet_core::model::Model;
use rocnet_core::pipeline::{evaluate, register, EvalConfig, EvalReport, Estimator};
use rocnet_core::training::{append_log_line, load_checkpoint, prepare_pairs, save_checkpoint, split_holdout, train};
use rocnet_core::{Error, Result};

use config::{Ablation, Preset, RunConfig};
use format::{opt_sig6, sig6};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parameter(_) => EXIT_CONFIG,
        Error::InvalidCloud(_) | Error::Format { .. } | Error::Io { .. } => EXIT_IO,
        Error::Degenerate(_) | Error::Numerical(_) => EXIT_NUMERICAL,
    }
}

#[derive(Debug, Parser)]
#[command(name = "rocnet", version, about = "Learned point cloud registration")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// clean, partial or partial-noisy.
    #[arg(long, global = true)]
    preset: Option<Preset>,
    /// Any configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        pairs: Option<usize>,
        #[arg(long)]
        points: Option<usize>,
        #[arg(long)]
        shape: Option<ShapeKind>,
    },
    /// Train on a manifest, checkpointing every epoch.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Per-epoch log; defaults to the checkpoint path with a .log extension.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Estimate the transform taking SOURCE onto TARGET.
    Register {
        #[arg(long)]
        checkpoint: PathBuf,
        source: PathBuf,
        target: PathBuf,
        #[command(flatten)]
        pose: PoseArgs,
    },
    /// Pose and matching metrics over a manifest.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        pose: PoseArgs,
        /// Use ground-truth matches instead of the network's.
        #[arg(long)]
        oracle_matches: bool,
        /// Fraction of correspondences corrupted before pose estimation.
        #[arg(long)]
        outliers: Option<f64>,
    },
}

#[derive(Debug, Args)]
struct PoseArgs {
    /// ransac, svd or icp.
    #[arg(long)]
    estimator: Option<Estimator>,
    /// no-normals or mdgat-attention-off.
    #[arg(long)]
    ablate: Option<Ablation>,
}

impl Cli {
    /// Default, then preset, then file, then command-line values.
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = self.preset {
            cfg.apply_preset(p);
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
            cfg.apply_text(&text, path)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            cfg.set(k.trim(), v)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        match &self.command {
            Command::Gen { pairs, points, shape, .. } => {
                if let Some(p) = pairs {
                    cfg.pairs = *p;
                }
                if let Some(n) = points {
                    cfg.pair.n_points = *n;
                }
                if let Some(s) = shape {
                    cfg.shape = *s;
                }
            }
            Command::Train { epochs, lr, .. } => {
                if let Some(e) = epochs {
                    cfg.train.epochs = *e;
                }
                if let Some(l) = lr {
                    cfg.train.lr = *l;
                }
            }
            Command::Register { pose, .. } => pose.apply(&mut cfg),
            Command::Eval { pose, outliers, .. } => {
                pose.apply(&mut cfg);
                if let Some(o) = outliers {
                    cfg.outlier_fraction = *o;
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl PoseArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(e) = self.estimator {
            cfg.estimator = e;
        }
        if let Some(a) = self.ablate {
            cfg.ablation = a;
        }
    }
}

/// Parses `args` (including the program name) and runs the command, writing
/// reports to `out` and diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut (dyn Write + Send)) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code == 0 {
                let _ = write!(out, "{}", e.render());
            } else {
                eprint!("{}", e.render());
            }
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_CONFIG;
        }
    };
    match pool.install(|| dispatch(&cli, out)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io { path: PathBuf::from("<stdout>"), source: e }
}

fn dispatch(cli: &Cli, out: &mut (dyn Write + Send)) -> Result<()> {
    let cfg = cli.run_config()?;
    match &cli.command {
        Command::Gen { out: dir, .. } => cmd_gen(&cfg, dir, out),
        Command::Train { manifest, checkpoint, log, .. } => {
            let log = log.clone().unwrap_or_else(|| checkpoint.with_extension("log"));
            cmd_train(&cfg, manifest, checkpoint, &log, out)
        }
        Command::Register { checkpoint, source, target, .. } => cmd_register(&cfg, checkpoint, source, target, out),
        Command::Eval { checkpoint, manifest, oracle_matches, .. } => {
            cmd_eval(&cfg, checkpoint, manifest, *oracle_matches, out)
        }
    }
}

fn cmd_gen(cfg: &RunConfig, dir: &Path, out: &mut (dyn Write + Send)) -> Result<()> {
    let pairs = make_dataset(&cfg.dataset())?;
    let manifest = write_dataset(dir, &pairs)?;
    let overlap: Vec<f64> = pairs
        .iter()
        .map(|p| 100.0 * p.matches.matched_count() as f64 / p.source.len().max(p.target.len()) as f64)
        .collect();
    let mean = overlap.iter().sum::<f64>() / overlap.len() as f64;
    let min = overlap.iter().copied().fold(f64::INFINITY, f64::min);
    let max = overlap.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    writeln!(out, "generated {} pairs ({} points, shape {})", pairs.len(), cfg.pair.n_points, cfg.shape.name()).map_err(io_err)?;
    writeln!(out, "manifest  {}", manifest.display()).map_err(io_err)?;
    writeln!(out, "overlap   mean {} %  min {} %  max {} %", sig6(mean), sig6(min), sig6(max)).map_err(io_err)?;
    writeln!(
        out,
        "GEN pairs={} overlap_mean_pct={} overlap_min_pct={} overlap_max_pct={} manifest={}",
        pairs.len(),
        sig6(mean),
        sig6(min),
        sig6(max),
        manifest.display()
    )
    .map_err(io_err)
}

fn cmd_train(cfg: &RunConfig, manifest: &Path, checkpoint: &Path, log: &Path, out: &mut (dyn Write + Send)) -> Result<()> {
    let pairs = load_dataset(manifest)?;
    if pairs.is_empty() {
        return Err(Error::Parameter(format!("{}: manifest lists no pairs", manifest.display())));
    }
    let mut model = Model::new(cfg.model.clone())?;
    let prepared = prepare_pairs(&model, &pairs)?;
    let (train_set, val_set) = split_holdout(&prepared, cfg.holdout)?;
    std::fs::write(log, "").map_err(|e| Error::Io { path: log.to_path_buf(), source: e })?;
    writeln!(out, "training on {} pairs, validating on {}", train_set.len(), val_set.len()).map_err(io_err)?;
    let records = train(&mut model, &train_set, &val_set, &cfg.train_config(), |rec, m| {
        save_checkpoint(m, checkpoint)?;
        append_log_line(log, &rec.to_line())?;
        writeln!(
            out,
            "epoch {:>3}  train_loss {}  val_loss {}  P {} %  A {} %  R {} %  F1 {} %",
            rec.epoch,
            sig6(rec.train_loss),
            sig6(rec.val_loss),
            opt_sig6(rec.metrics.precision),
            opt_sig6(rec.metrics.accuracy),
            opt_sig6(rec.metrics.recall),
            opt_sig6(rec.metrics.f1)
        )
        .map_err(io_err)
    })?;
    writeln!(out, "checkpoint {}", checkpoint.display()).map_err(io_err)?;
    writeln!(out, "log        {}", log.display()).map_err(io_err)?;
    let last = records.last().expect("train returns at least the epoch-0 record");
    writeln!(
        out,
        "TRAIN epochs={} final_val_loss={} final_f1_pct={} checkpoint={}",
        last.epoch,
        sig6(last.val_loss),
        opt_sig6(last.metrics.f1),
        checkpoint.display()
    )
    .map_err(io_err)
}

fn cmd_register(cfg: &RunConfig, checkpoint: &Path, source: &Path, target: &Path, out: &mut (dyn Write + Send)) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let x = read_cloud(source)?;
    let y = read_cloud(target)?;
    let reg = register(&model, &x, &y, &cfg.pipeline())?;
    let r = reg.transform.rotation();
    let t = reg.transform.translation();
    writeln!(out, "estimator    {}", cfg.estimator).map_err(io_err)?;
    writeln!(out, "rotation     (row-major, unitless)").map_err(io_err)?;
    for i in 0..3 {
        writeln!(out, "  {:>12} {:>12} {:>12}", sig6(r[(i, 0)]), sig6(r[(i, 1)]), sig6(r[(i, 2)])).map_err(io_err)?;
    }
    writeln!(out, "translation  {} {} {} m", sig6(t.x), sig6(t.y), sig6(t.z)).map_err(io_err)?;
    writeln!(out, "matches      {}", reg.matches).map_err(io_err)?;
    let inliers = reg.inliers.map_or_else(|| "n/a".to_string(), |n| n.to_string());
    writeln!(out, "inliers      {inliers}").map_err(io_err)?;
    let rot: Vec<String> = (0..9).map(|k| sig6(r[(k / 3, k % 3)])).collect();
    writeln!(
        out,
        "REGISTER estimator={} R={} t_m={},{},{} matches={} inliers={}",
        cfg.estimator,
        rot.join(","),
        sig6(t.x),
        sig6(t.y),
        sig6(t.z),
        reg.matches,
        inliers
    )
    .map_err(io_err)
}

pub fn format_report(report: &EvalReport) -> String {
    let rows = [
        ("RMSE(R)", sig6(report.rmse_r_deg), "deg"),
        ("MAE(R)", sig6(report.mae_r_deg), "deg"),
        ("RMSE(t)", sig6(report.rmse_t_m), "m"),
        ("MAE(t)", sig6(report.mae_t_m), "m"),
        ("RMSE(geo)", sig6(report.rmse_geodesic_deg), "deg"),
        ("MAE(geo)", sig6(report.mae_geodesic_deg), "deg"),
        ("P", opt_sig6(report.matching.precision), "%"),
        ("A", opt_sig6(report.matching.accuracy), "%"),
        ("R", opt_sig6(report.matching.recall), "%"),
        ("F1", opt_sig6(report.matching.f1), "%"),
    ];
    let mut s = format!("{:<9} {:>14}  unit\n", "metric", "value");
    for (name, value, unit) in &rows {
        s += &format!("{name:<9} {value:>14}  {unit}\n");
    }
    s += &format!("{:<9} {:>14}\n", "pairs", report.pairs);
    s += &format!("{:<9} {:>14}\n", "failures", report.failures);
    for (name, value, unit) in &rows {
        s += &format!("METRIC name={name} value={value} unit={unit}\n");
    }
    s += &format!("METRIC name=pairs value={} unit=count\n", report.pairs);
    s += &format!("METRIC name=failures value={} unit=count\n", report.failures);
    s
}

fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, manifest: &Path, oracle: bool, out: &mut (dyn Write + Send)) -> Result<()> {
    let model = load_checkpoint(checkpoint)?;
    let pairs = load_dataset(manifest)?;
    if pairs.is_empty() {
        return Err(Error::Parameter(format!("{}: manifest lists no pairs", manifest.display())));
    }
    let eval_cfg = EvalConfig {
        pipeline: cfg.pipeline(),
        oracle_matches: oracle,
        outlier_fraction: cfg.outlier_fraction,
        seed: cfg.seed,
    };
    let report = evaluate(&model, &pairs, &eval_cfg)?;
    write!(out, "{}", format_report(&report)).map_err(io_err)
}
