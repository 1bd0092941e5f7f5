use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lsim::bench::{
    envelope, make_test_set, run_study, work_precision, write_records, write_study_csv, ExportFormat, Method, StudyKind,
};
use lsim::config::{ExperimentConfig, SystemConfig};
use lsim::latent::{simulate_original, LatentSystem};
use lsim::net::{load_checkpoint, save_checkpoint, PseudoInvertibleNet};
use lsim::systems::{OdeSystem, VlmSystem};
use lsim::train::{train, TrainConfig};
use lsim::{Error, Result};

#[derive(Parser)]
#[command(name = "lsim", version, about = "Accelerate ODE simulation through a learned slow latent space")]
struct Cli {
    /// Overrides the training seed of the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write its checkpoint.
    Train { config: PathBuf },
    /// Simulate one initial condition, in the original or the latent space.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        latent: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Work-precision sweep of the original and latent systems.
    Bench {
        config: PathBuf,
        /// Networks to train (ignored with --checkpoint).
        #[arg(long, default_value_t = 1)]
        reps: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: ExportFormat,
    },
    /// Sensitivity study: sample-size, latent-dim or panel-count.
    Study {
        kind: StudyKind,
        config: PathBuf,
        /// Repetitions per sweep value; the config value when absent.
        #[arg(long)]
        reps: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Train { config } => {
            let cfg = load(&config, cli.seed)?;
            let sys = cfg.system.build()?;
            dump_geometry(&cfg.system, &cli.out)?;
            let net = train_logged(sys.as_ref(), &cfg.train, &cli.out.join("train_log.jsonl"))?;
            let path = cfg.checkpoint.clone().unwrap_or_else(|| cli.out.join("net.lsim"));
            save_checkpoint(&net, &path)?;
            println!("checkpoint written to {}", path.display());
        }
        Command::Simulate { config, latent, checkpoint } => {
            let cfg = load(&config, cli.seed)?;
            let sys = cfg.system.build()?;
            dump_geometry(&cfg.system, &cli.out)?;
            let x0 = cfg.simulate.x0.clone().unwrap_or_else(|| {
                let d = sys.domain();
                d.lower.iter().zip(&d.upper).map(|(a, b)| 0.5 * (a + b)).collect()
            });
            if x0.len() != sys.dim() {
                return Err(Error::Config(format!("x0 has {} entries, the system has {}", x0.len(), sys.dim())));
            }
            let horizon = cfg.simulate.horizon.unwrap_or(sys.horizon());
            let spec = cfg.simulate.spec();
            let res = if latent {
                let net = load_net(checkpoint.as_deref(), &cfg)?;
                LatentSystem::new(&net, sys.as_ref()).simulate(&x0, 0.0, horizon, &spec)?
            } else {
                simulate_original(sys.as_ref(), &x0, 0.0, horizon, &spec)?
            };
            let path = cli.out.join(if latent { "trajectory_latent.csv" } else { "trajectory_original.csv" });
            let mut w = BufWriter::new(File::create(&path)?);
            let header: Vec<String> = (0..sys.dim()).map(|i| format!("x{i}")).collect();
            writeln!(w, "t,{}", header.join(","))?;
            for (t, x) in res.times.iter().zip(&res.states) {
                let row: Vec<String> = x.iter().map(f64::to_string).collect();
                writeln!(w, "{t},{}", row.join(","))?;
            }
            w.flush()?;
            println!(
                "n_fcalls={} n_base_fcalls={} n_steps={} n_rejected={} wall_time_s={:.6}",
                res.n_fcalls, res.n_base_fcalls, res.n_steps, res.n_rejected, res.wall_time
            );
            println!("trajectory written to {}", path.display());
        }
        Command::Bench { config, reps, checkpoint, format } => {
            let cfg = load(&config, cli.seed)?;
            let sys = cfg.system.build()?;
            let sweep = &cfg.bench;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            rng.set_stream(3);
            let horizon = sweep.horizon.unwrap_or(sys.horizon());
            let tests = make_test_set(sys.as_ref(), sweep.test_ics, sweep.ic_box_factor, horizon, sweep.grid_points, &mut rng)?;
            let specs = sweep.specs();
            let mut records = work_precision(sys.as_ref(), None, &specs, &tests, sweep.final_only, cfg.train.seed)?;
            let nets: Vec<(u64, PseudoInvertibleNet)> = match checkpoint.as_deref().or(cfg.checkpoint.as_deref()) {
                Some(p) => vec![(cfg.train.seed, load_checkpoint(p)?)],
                None => (0..reps.max(1) as u64)
                    .map(|r| {
                        let tc = TrainConfig { seed: cfg.train.seed + r, ..cfg.train.clone() };
                        let log = cli.out.join(format!("train_log_rep{r}.jsonl"));
                        train_logged(sys.as_ref(), &tc, &log).map(|n| (tc.seed, n))
                    })
                    .collect::<Result<_>>()?,
            };
            let orig_env = envelope(&records, Method::Original);
            let [lo, hi] = sweep.mse_band_for(sys.name());
            for (seed, net) in &nets {
                let latent = work_precision(sys.as_ref(), Some(net), &specs, &tests, sweep.final_only, *seed)?;
                match lsim::bench::best_speedup(&orig_env, &envelope(&latent, Method::Latent), lo, hi) {
                    Some((at, s)) => println!("seed {seed}: best speedup {s:.3}x at mse {at:.3e}"),
                    None => println!("seed {seed}: envelopes do not overlap in [{lo:e}, {hi:e}]"),
                }
                records.extend(latent);
            }
            let ext = match format {
                ExportFormat::Csv => "csv",
                ExportFormat::Jsonl => "jsonl",
            };
            let path = cli.out.join(format!("work_precision.{ext}"));
            write_records(&records, &path, format)?;
            println!("{} records written to {}", records.len(), path.display());
        }
        Command::Study { kind, config, reps } => {
            let cfg = load(&config, cli.seed)?;
            let mut opts = cfg.study.clone();
            if let Some(r) = reps {
                opts.repetitions = r;
            }
            let records =
                run_study(kind, &cfg.system, &cfg.train, &cfg.bench, &opts, cfg.train.seed, &mut |m| println!("{m}"))?;
            let path = cli.out.join(format!("study_{}.csv", kind.as_str()));
            write_study_csv(&records, &path)?;
            println!("{} records written to {}", records.len(), path.display());
        }
    }
    Ok(())
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

fn load_net(flag: Option<&Path>, cfg: &ExperimentConfig) -> Result<PseudoInvertibleNet> {
    let path = flag
        .or(cfg.checkpoint.as_deref())
        .ok_or_else(|| Error::Config("--latent needs --checkpoint or a `checkpoint` key".into()))?;
    load_checkpoint(path)
}

/// Trains while streaming loss records to stdout and to a JSONL log.
fn train_logged(sys: &dyn OdeSystem, cfg: &TrainConfig, log_path: &Path) -> Result<PseudoInvertibleNet> {
    let mut log = BufWriter::new(File::create(log_path)?);
    let mut io_error = None;
    let report = train(sys, cfg, &mut |rec| {
        let line = serde_json::to_string(rec).expect("loss record serializes");
        println!("{line}");
        if let Err(e) = writeln!(log, "{line}").and_then(|_| log.flush()) {
            io_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = io_error {
        return Err(e.into());
    }
    if let (Some(loss), Some(epoch)) = (report.best_loss, report.best_epoch) {
        println!("best loss {loss:.6e} at epoch {epoch}");
    }
    Ok(report.net)
}

fn dump_geometry(system: &SystemConfig, out: &Path) -> Result<()> {
    if let SystemConfig::Vlm(c) = system {
        fs::write(out.join("panels.txt"), VlmSystem::new_layout(c.clone()).panel_listing())?;
    }
    Ok(())
}
