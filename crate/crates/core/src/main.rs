use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lipbarrier::certify::{estimate_lipschitz_with, norm_product_bound, CertMode};
use lipbarrier::lipschitz::bound_at_multipliers;
use lipbarrier::trainer::{
    bench_barrier, bench_csv, gen_blobs_2d, load_csv, load_mnist_dir, load_model, parse_sizes,
    save_model, to_csv_string, train, BenchConfig, Dataset, ModelMeta, TrainConfig, TrainMode,
};
use lipbarrier::wgan::{sample_ring, wgan_train, ConstraintMethod, GanConfig};

const EXIT_FAILURE: u8 = 1;
const EXIT_INFEASIBLE_INIT: u8 = 2;
const EXIT_INVALID_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "lipbarrier", version, about = "Train and certify Lipschitz-bounded networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, optionally under a certified Lipschitz bound.
    Train {
        /// key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV dataset, or a directory with the MNIST IDX files. Defaults to generated blobs.
        #[arg(long)]
        data: Option<PathBuf>,
        /// nominal, barrier-linear or barrier-bilinear.
        #[arg(long)]
        mode: Option<TrainMode>,
        #[arg(long)]
        lipschitz: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Extra configuration overrides, `key=value`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Where to write the trained model.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write per-epoch metrics.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Certify an upper bound on the Lipschitz constant of a saved model.
    Certify {
        #[arg(long)]
        model: PathBuf,
        /// full, scalar or split.
        #[arg(long, default_value = "full")]
        mode: CertMode,
        #[arg(long, default_value_t = 1e-3)]
        tol: f64,
    },
    /// Time blocked against dense barrier evaluation.
    Bench {
        /// Comma separated `depth x width` pairs.
        #[arg(long, default_value = "2x16,5x32,10x64")]
        sizes: String,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic 3-class 2D dataset as CSV.
    #[command(name = "gen-2d")]
    Gen2d {
        #[arg(long, default_value_t = 300)]
        n_train: usize,
        #[arg(long, default_value_t = 300)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a toy Wasserstein GAN on a ring of Gaussians.
    Wgan {
        /// barrier, clip[:c] or gp[:mu].
        #[arg(long, default_value = "barrier")]
        method: ConstraintMethod,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of data points.
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long, default_value_t = 100)]
        data_seed: u64,
        #[arg(long)]
        out_metrics: Option<PathBuf>,
        #[arg(long)]
        out_samples: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl ToString) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn input(message: impl ToString) -> Self {
        Self::new(EXIT_INVALID_INPUT, message)
    }

    fn other(message: impl ToString) -> Self {
        Self::new(EXIT_FAILURE, message)
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| Failure::other(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_data(path: Option<&Path>, cfg: &TrainConfig) -> Result<Dataset, Failure> {
    match path {
        None => Ok(gen_blobs_2d(300, 300, 0)),
        Some(p) if p.is_dir() => {
            load_mnist_dir(p, cfg.image_size, cfg.train_limit, cfg.test_limit).map_err(Failure::input)
        }
        Some(p) => load_csv(p).map_err(Failure::input),
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<PathBuf>,
    data: Option<PathBuf>,
    mode: Option<TrainMode>,
    lipschitz: Option<f64>,
    seed: Option<u64>,
    overrides: Vec<String>,
    out: Option<PathBuf>,
    metrics: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = match &config {
        Some(p) => TrainConfig::load(p).map_err(Failure::input)?,
        None => TrainConfig::default(),
    };
    for kv in &overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::input(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim()).map_err(Failure::input)?;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    if let Some(l) = lipschitz {
        cfg.lipschitz = l;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(Failure::input)?;
    let dataset = load_data(data.as_deref(), &cfg)?;

    let (p, m, run) = train(&cfg, &dataset).map_err(|e| {
        if e.is_init_failure() {
            Failure::new(EXIT_INFEASIBLE_INIT, e)
        } else if matches!(e, lipbarrier::trainer::TrainError::Network(_)) {
            Failure::other(e)
        } else {
            Failure::input(e)
        }
    })?;

    if let Some(path) = &metrics {
        write_out(Some(path), &run.to_csv())?;
    }
    if let Some(path) = &out {
        let meta = ModelMeta {
            lipschitz_target: cfg.mode.is_barrier().then_some(cfg.lipschitz),
            mode: Some(cfg.mode.to_string()),
            seed: Some(cfg.seed),
        };
        save_model(path, &p, &m, &meta).map_err(Failure::other)?;
    }
    println!("mode: {}", cfg.mode);
    println!("rho0: {}", run.rho0);
    if let Some(acc) = run.test_accuracy {
        println!("test accuracy: {acc:.4}");
    }
    for (mode, bound) in &run.certified {
        println!("certified bound ({mode}): {bound:.6}");
    }
    println!("train seconds: {:.2}", run.train_seconds);
    println!("certify seconds: {:.2}", run.certify_seconds);
    Ok(())
}

fn cmd_certify(model: &Path, mode: CertMode, tol: f64) -> Result<(), Failure> {
    if !(tol > 0.0) {
        return Err(Failure::input("tol must be positive"));
    }
    let (p, m, _) = load_model(model).map_err(Failure::input)?;
    if let Some(b) = bound_at_multipliers(&p, &m) {
        println!("stored multipliers: {b:.6}");
    }
    println!("norm product: {:.6}", norm_product_bound(&p));
    let est = estimate_lipschitz_with(&p, mode, tol, Some(&m));
    println!("certified bound ({}): {:.6}", est.mode, est.bound);
    Ok(())
}

fn cmd_wgan(
    method: ConstraintMethod,
    epochs: Option<usize>,
    seed: u64,
    n: usize,
    data_seed: u64,
    out_metrics: Option<PathBuf>,
    out_samples: Option<PathBuf>,
) -> Result<(), Failure> {
    let mut cfg = match method {
        ConstraintMethod::Barrier => GanConfig::barrier(),
        ConstraintMethod::WeightClip { c } => GanConfig::weight_clip(c),
        ConstraintMethod::GradientPenalty { mu } => GanConfig::gradient_penalty(mu),
    };
    cfg.seed = seed;
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate().map_err(Failure::input)?;
    let ring = cfg.ring;
    let data = sample_ring(n, ring.modes, ring.radius, ring.sigma, data_seed);
    let (_, _, mut metrics) = wgan_train(&cfg, &data).map_err(|e| match e {
        lipbarrier::wgan::GanError::Lipschitz(ref l)
            if matches!(l, lipbarrier::LipschitzError::InitFailure { .. }) =>
        {
            Failure::new(EXIT_INFEASIBLE_INIT, e)
        }
        lipbarrier::wgan::GanError::Config(_) | lipbarrier::wgan::GanError::Data(_) => {
            Failure::input(e)
        }
        _ => Failure::other(e),
    })?;
    if let Some(path) = &out_samples {
        write_out(Some(path), &metrics.samples_csv())?;
        metrics.snapshot_path = Some(path.display().to_string());
    }
    match &out_metrics {
        Some(path) => write_out(Some(path), &metrics.to_csv())?,
        None => print!("{}", metrics.to_csv()),
    }
    if let Some(last) = metrics.epochs.last() {
        eprintln!(
            "{}: final W {:.4}, certified bound {:.6}, coverage {:.3}",
            method.name(),
            last.wasserstein,
            last.certified_bound,
            last.coverage
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            data,
            mode,
            lipschitz,
            seed,
            overrides,
            out,
            metrics,
        } => cmd_train(config, data, mode, lipschitz, seed, overrides, out, metrics),
        Command::Certify { model, mode, tol } => cmd_certify(&model, mode, tol),
        Command::Bench {
            sizes,
            reps,
            seed,
            out,
        } => {
            let sizes = parse_sizes(&sizes).map_err(Failure::input)?;
            let cfg = BenchConfig {
                reps,
                seed,
                ..BenchConfig::default()
            };
            let rows = bench_barrier(&cfg, &sizes).map_err(Failure::other)?;
            write_out(out.as_deref(), &bench_csv(&rows))
        }
        Command::Gen2d {
            n_train,
            n_test,
            seed,
            out,
        } => {
            let text = to_csv_string(&gen_blobs_2d(n_train, n_test, seed)).map_err(Failure::other)?;
            write_out(out.as_deref(), &text)
        }
        Command::Wgan {
            method,
            epochs,
            seed,
            n,
            data_seed,
            out_metrics,
            out_samples,
        } => cmd_wgan(method, epochs, seed, n, data_seed, out_metrics, out_samples),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
