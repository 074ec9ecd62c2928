use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use float_core::costmodel::{ArchSpec, HwParams};
use float_lab::checkpoint::{load_trainer, Checkpoint};
use float_lab::config::{parse_attack, ExperimentConfig, Overrides};
use float_lab::dataset::{load_dataset, save_dataset};
use float_lab::report::{cost_csv, cost_totals, inspect};
use float_lab::run::{evaluation_rows, run, sweep, EvalPlan, SweepSpec, METRICS_FILE};
use float_lab::synth::{make_synthetic, SynthSpec};
use float_lab::{LabError, Result};

#[derive(Parser)]
#[command(name = "float-lab", version, about = "Noise-conditioned adversarial training experiments")]
#[command(after_help = "Environment:\n  FLOAT_LAB_THREADS  evaluation worker threads (default 1)")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a JSON config.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the eval settings stored in it.
    Eval(EvalArgs),
    /// Evaluate a checkpoint over a λ_n set and write trade-off tables.
    Sweep(SweepArgs),
    /// Delay and size report for a reference architecture.
    Cost(CostArgs),
    /// Write a synthetic dataset file.
    Synth(SynthArgs),
    /// Describe a checkpoint as JSON.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_id: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated λ_n values.
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.7,1")]
    lambda_n: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    lambda_th: f64,
    /// `fgsm` or `pgd<steps>`; repeatable.
    #[arg(long = "attack", default_value = "pgd7")]
    attacks: Vec<String>,
    /// Attack budget; defaults to the checkpoint's eval setting.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CostArgs {
    /// resnet34, wrn16_8 or wrn40_2.
    #[arg(long, default_value = "resnet34")]
    arch: String,
    #[arg(long, default_value_t = 10)]
    classes: u64,
    #[arg(long, default_value_t = HwParams::default().b_io)]
    b_io: u64,
    #[arg(long, default_value_t = HwParams::default().b_w)]
    b_w: u64,
    #[arg(long, default_value_t = HwParams::default().n_bank)]
    n_bank: u64,
    #[arg(long, default_value_t = HwParams::default().n_mult)]
    n_mult: u64,
    #[arg(long, default_value_t = HwParams::default().tau_read)]
    tau_read: f64,
    #[arg(long, default_value_t = HwParams::default().tau_mult)]
    tau_mult: f64,
    /// Per-layer CSV destination (stdout when omitted).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Totals JSON destination (stdout when omitted).
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 1000)]
    per_class: usize,
    #[arg(long, default_value_t = 1)]
    channels: usize,
    #[arg(long, default_value_t = 8)]
    height: usize,
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Seed of the class textures; keep it equal across train and test sets.
    #[arg(long, default_value_t = 0)]
    pattern_seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long)]
    checkpoint: PathBuf,
}

/// Writes to stdout; a reader that closed the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(LabError::io("stdout", e)),
        _ => Ok(()),
    }
}

fn write_or_print(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| LabError::io(p, e)),
        None => emit(text),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut cfg = ExperimentConfig::load(&a.config)?;
            cfg.apply(&Overrides { run_id: a.run_id, seed: a.seed, epochs: a.epochs, train: a.train, test: a.test, out: a.out })?;
            let outcome = run(&cfg)?;
            for m in &outcome.epochs {
                eprintln!(
                    "epoch {:>3}  lr {:.4}  loss {:.4} (clean {:.4}, adv {:.4})  acc clean {:.1}%  adv {:.1}%  density {:.4}",
                    m.epoch + 1, m.lr, m.loss, m.loss_clean, m.loss_adv, m.acc_clean, m.acc_adv, m.density
                );
            }
            eprintln!("wrote {}", outcome.out_dir.join(METRICS_FILE).display());
        }
        Command::Eval(a) => {
            let (cfg, trainer) = load_trainer(&Checkpoint::load(&a.checkpoint)?)?;
            let data = load_dataset(&a.data)?;
            let plan = EvalPlan {
                run_id: cfg.run_id.clone(),
                epoch: trainer.epoch,
                lambda_n: cfg.eval.lambda_n.clone(),
                lambda_th: cfg.eval.lambda_th,
                attacks: cfg.eval_attacks()?,
                seed: cfg.eval.seed,
                batch_size: cfg.eval.batch_size,
                record_wall_time: cfg.record_wall_time,
            };
            let rows = evaluation_rows(&trainer, &data, &plan)?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| LabError::io("stdout", e.into()))?;
            }
            let body = w.into_inner().map_err(|e| LabError::io("stdout", e.into_error()))?;
            emit(&format!("{}\n{}", float_lab::metrics::HEADER, String::from_utf8_lossy(&body)))?;
        }
        Command::Sweep(a) => {
            let (cfg, _) = load_trainer(&Checkpoint::load(&a.checkpoint)?)?;
            let eps = a.epsilon.unwrap_or(cfg.eval.epsilon);
            let attacks = a.attacks.iter().map(|n| parse_attack(n, eps, cfg.eval.random_start)).collect::<Result<Vec<_>>>()?;
            let spec = SweepSpec {
                lambda_n: a.lambda_n,
                lambda_th: a.lambda_th,
                attacks,
                seed: a.seed.unwrap_or(cfg.eval.seed),
                batch_size: cfg.eval.batch_size,
            };
            let data = load_dataset(&a.data)?;
            let rows = sweep(&a.checkpoint, &data, &spec, &a.out)?;
            for r in rows {
                emit(&format!(
                    "{:<6} sf {:<4} λ_n {:<4} CA {:6.2}  RA {:6.2}\n",
                    r.attack_name, r.slim_factor, r.lambda_n, r.ca_percent, r.ra_percent
                ))?;
            }
        }
        Command::Cost(a) => {
            let arch = ArchSpec::preset(&a.arch, a.classes).ok_or_else(|| LabError::Config(format!("unknown architecture {:?}", a.arch)))?;
            let hw = HwParams { b_io: a.b_io, b_w: a.b_w, n_bank: a.n_bank, n_mult: a.n_mult, tau_read: a.tau_read, tau_mult: a.tau_mult };
            let csv_text = cost_csv(&arch, &hw)?;
            let json = serde_json::to_string_pretty(&cost_totals(&arch, &hw)?).expect("json") + "\n";
            write_or_print(a.csv.as_ref(), &csv_text)?;
            write_or_print(a.json.as_ref(), &json)?;
        }
        Command::Synth(a) => {
            let spec = SynthSpec {
                classes: a.classes,
                per_class: a.per_class,
                channels: a.channels,
                height: a.height,
                width: a.width,
                seed: a.seed,
                pattern_seed: a.pattern_seed,
                ..SynthSpec::default()
            };
            save_dataset(&a.out, &make_synthetic(&spec)?)?;
        }
        Command::Inspect(a) => {
            let (cfg, trainer) = load_trainer(&Checkpoint::load(&a.checkpoint)?)?;
            emit(&(serde_json::to_string_pretty(&inspect(&cfg, &trainer)?).expect("json") + "\n"))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("float-lab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
