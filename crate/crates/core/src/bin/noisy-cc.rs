use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use noisy_cc::analysis::{self, TailForm};
use noisy_cc::decision::RecoveryMode;
use noisy_cc::graph::{query_budget, SamplingMode};
use noisy_cc::harness::{self, ExperimentConfig, ExperimentRecord, SamplingChoice, SweepAxis};
use noisy_cc::{NoiseSpec, Result};

#[derive(Parser)]
#[command(name = "noisy-cc", version, about = "Noisy-oracle correlation clustering simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run seeded trials of one configuration.
    Simulate(RunArgs),
    /// Run a configuration once per value of one parameter.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        axis: SweepAxis,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Evaluate a formula and print it as JSON.
    Analyze {
        #[command(subcommand)]
        formula: Formula,
    },
    /// Check closed forms against brute-force oracles.
    Verify {
        #[arg(long)]
        json: bool,
    },
    /// Print the query budget for n items at gap c.
    Budget {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 20.0)]
        constant: f64,
    },
}

#[derive(Subcommand)]
enum Formula {
    /// Probability a length-L path agrees with the truth.
    AgreeProb {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        len: u32,
    },
    /// t-step distribution of the lazy walk on Z_k.
    Chain {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        t: u32,
    },
    PluralityGap {
        #[arg(long)]
        q: f64,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        t: u32,
    },
    ReadKTail {
        #[arg(long)]
        r: usize,
        #[arg(long)]
        k_read: usize,
        #[arg(long)]
        q: f64,
        #[arg(long)]
        epsilon: f64,
        #[arg(long, value_enum, default_value = "kl")]
        form: TailForm,
    },
    Kl {
        #[arg(long)]
        a: f64,
        #[arg(long)]
        b: f64,
    },
    MajorityMean {
        #[arg(long)]
        paths: usize,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        len: u32,
    },
    Budget {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 20.0)]
        constant: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Sign,
    ModularPm,
    ModularGeneral,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config; flags given explicitly override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: Option<f64>,
    #[arg(long, value_enum)]
    noise: Option<NoiseKind>,
    /// Step weights for the general modular model, comma-separated.
    #[arg(long, value_delimiter = ',')]
    weights: Option<Vec<f64>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<RecoveryMode>,
    #[arg(long, value_enum)]
    sampling: Option<SamplingMode>,
    #[arg(long)]
    budget_constant: Option<f64>,
    #[arg(long)]
    branch_first: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    dump_paths: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_slice(&fs::read(p)?)?,
            None => ExperimentConfig::new(400, 2, NoiseSpec::SignFlip { q: 0.1 }),
        };
        if let Some(n) = self.n {
            c.n = n;
        }
        let kind = self.noise.unwrap_or(match (&c.noise, self.k, &self.weights) {
            (_, _, Some(_)) => NoiseKind::ModularGeneral,
            (NoiseSpec::SignFlip { .. }, Some(k), _) if k > 2 => NoiseKind::ModularPm,
            (NoiseSpec::SignFlip { .. }, _, _) => NoiseKind::Sign,
            (NoiseSpec::ModularPlusMinus { .. }, _, _) => NoiseKind::ModularPm,
            (NoiseSpec::ModularGeneral { .. }, _, _) => NoiseKind::ModularGeneral,
        });
        let q = self.q.unwrap_or(c.noise.corruption());
        c.noise = match kind {
            NoiseKind::Sign => NoiseSpec::SignFlip { q },
            NoiseKind::ModularPm => NoiseSpec::ModularPlusMinus { q },
            NoiseKind::ModularGeneral => match (&self.weights, &c.noise) {
                (Some(w), _) => NoiseSpec::ModularGeneral { weights: w.clone() },
                (None, NoiseSpec::ModularGeneral { weights }) => NoiseSpec::ModularGeneral {
                    weights: weights.clone(),
                },
                _ => return Err(noisy_cc::Error::InvalidArgument("--weights is required".into())),
            },
        };
        c.k = match (self.k, kind) {
            (Some(k), _) => k,
            (None, NoiseKind::Sign) => 2,
            (None, NoiseKind::ModularGeneral) => match &c.noise {
                NoiseSpec::ModularGeneral { weights } => weights.len(),
                _ => c.k,
            },
            (None, NoiseKind::ModularPm) if c.k < 3 => 3,
            (None, _) => c.k,
        };
        if self.sampling.is_some() || self.budget_constant.is_some() {
            let (mut mode, mut constant) = match c.sampling {
                SamplingChoice::Auto { mode, budget_constant } => (mode, budget_constant),
                SamplingChoice::Plan { .. } => (SamplingMode::Bernoulli, 20.0),
            };
            mode = self.sampling.unwrap_or(mode);
            constant = self.budget_constant.unwrap_or(constant);
            c.sampling = SamplingChoice::Auto {
                mode,
                budget_constant: constant,
            };
        }
        if let Some(v) = self.trials {
            c.trials = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.branch_first {
            c.branch_first_override = Some(v);
        }
        if let Some(v) = &self.out {
            c.output = Some(v.clone());
        }
        if let Some(v) = self.workers {
            c.workers = v;
        }
        if let Some(v) = &self.dump_paths {
            c.dump_paths = Some(v.clone());
        }
        Ok(c)
    }
}

fn summarize(records: &[ExperimentRecord]) -> io::Result<()> {
    let mut out = io::stdout().lock();
    let exact = records.iter().filter(|r| r.exact_recovery).count();
    let shift = records.iter().filter(|r| r.exact_up_to_shift).count();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    writeln!(
        out,
        "{} trials: exact {exact}, exact up to shift {shift}, failed {failed}",
        records.len()
    )?;
    for r in records {
        let tag = match (&r.sweep_axis, r.sweep_value) {
            (Some(a), Some(v)) => format!("{a}={v} "),
            _ => String::new(),
        };
        match &r.error {
            Some(e) => writeln!(out, "  {tag}trial {}: error: {e}", r.trial)?,
            None => writeln!(
                out,
                "  {tag}trial {}: exact={} misclassified={} paths/pair={:.1} L={} ({:.2}s)",
                r.trial, r.exact_recovery, r.misclassified, r.mean_paths_per_pair, r.path_len, r.wall_time
            )?,
        }
    }
    Ok(())
}

fn analyze(formula: Formula) -> Result<Value> {
    Ok(match formula {
        Formula::AgreeProb { q, len } => json!({
            "formula": "agree-prob",
            "inputs": { "q": q, "len": len },
            "agree_prob": analysis::path_agree_prob(q, len),
        }),
        Formula::Chain { q, k, t } => json!({
            "formula": "chain",
            "inputs": { "q": q, "k": k, "t": t },
            "probs": analysis::chain_closed_form(q, k, t)?.probs,
        }),
        Formula::PluralityGap { q, k, t } => json!({
            "formula": "plurality-gap",
            "inputs": { "q": q, "k": k, "t": t },
            "output": analysis::plurality_gap(q, k, t)?,
        }),
        Formula::ReadKTail { r, k_read, q, epsilon, form } => json!({
            "formula": "read-k-tail",
            "inputs": { "r": r, "k_read": k_read, "q": q, "epsilon": epsilon, "form": form },
            "bound": analysis::read_k_tail(r, k_read, q, epsilon, form)?.bound,
        }),
        Formula::Kl { a, b } => json!({
            "formula": "kl",
            "inputs": { "a": a, "b": b },
            "kl": analysis::kl_divergence(a, b)?,
        }),
        Formula::MajorityMean { paths, c, len } => json!({
            "formula": "majority-mean",
            "inputs": { "paths": paths, "c": c, "len": len },
            "mean": analysis::expected_majority_mean(paths, c, len),
        }),
        Formula::Budget { n, c, constant } => json!({
            "formula": "budget",
            "inputs": { "n": n, "c": c, "constant": constant },
            "output": query_budget(n, c, constant)?,
        }),
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => quiet_pipe(summarize(&harness::run_experiment(&args.config()?)?))?,
        Command::Sweep { run, axis, values } => {
            quiet_pipe(summarize(&harness::run_sweep(&run.config()?, axis, &values)?))?
        }
        Command::Analyze { formula } => emit(&serde_json::to_string_pretty(&analyze(formula)?)?)?,
        Command::Budget { n, c, constant } => {
            let b = query_budget(n, c, constant)?;
            emit(&b.queries.to_string())?;
            if b.clamped {
                eprintln!("clamped to n(n-1)/2; formula gives {}", b.formula);
            }
        }
        Command::Verify { json } => {
            let report = harness::verify_oracles();
            if json {
                emit(&serde_json::to_string_pretty(&report)?)?;
            } else {
                for c in &report.checks {
                    emit(&format!(
                        "{} {} ({} points, max discrepancy {:.3e}, tol {:.1e}){}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.points,
                        c.max_abs_discrepancy,
                        c.tolerance,
                        if c.worst_point.is_empty() {
                            String::new()
                        } else {
                            format!(" at {}", c.worst_point)
                        }
                    ))?;
                }
            }
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn emit(line: &str) -> io::Result<()> {
    quiet_pipe(writeln!(io::stdout().lock(), "{line}"))
}

fn quiet_pipe(r: io::Result<()>) -> io::Result<()> {
    match r {
        Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
        r => r,
    }
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
