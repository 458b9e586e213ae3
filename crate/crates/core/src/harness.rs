//! Seeded experiments, sweeps and the oracle self-check.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, ReadKFamily, TailForm};
use crate::decision::{clustering_error, recover_clusters_with, shift_error, RecoveryMode};
use crate::error::{invalid, Result};
use crate::graph::{query_budget, sample_query_graph, SamplingMode, SamplingPlan};
use crate::oracle::{Labeling, NoiseSpec};
use crate::paths::{fit_params, GraphShape, PathFamily, PathParams};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ClusterSizes {
    #[default]
    Balanced,
    /// Each item's group drawn uniformly.
    Uniform,
    Explicit { sizes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SamplingChoice {
    /// Spend the query budget `constant * n ln n (2c)^-L`.
    Auto { mode: SamplingMode, budget_constant: f64 },
    Plan { plan: SamplingPlan },
}

impl Default for SamplingChoice {
    fn default() -> Self {
        SamplingChoice::Auto {
            mode: SamplingMode::Bernoulli,
            budget_constant: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ParamChoice {
    /// Theoretical parameters shrunk to fit the sampled graph.
    Auto { level1_constant: f64 },
    /// Theoretical parameters as they are.
    Theoretical { level1_constant: f64 },
    Explicit { params: PathParams },
}

impl Default for ParamChoice {
    fn default() -> Self {
        ParamChoice::Auto { level1_constant: 4.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub k: usize,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub clusters: ClusterSizes,
    #[serde(default)]
    pub sampling: SamplingChoice,
    #[serde(default)]
    pub path_params: ParamChoice,
    /// Replaces the root branching after parameters are derived.
    #[serde(default)]
    pub branch_first_override: Option<usize>,
    #[serde(default)]
    pub mode: RecoveryMode,
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; 0 uses all cores.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub dump_paths: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(n: usize, k: usize, noise: NoiseSpec) -> Self {
        Self {
            n,
            k,
            noise,
            clusters: ClusterSizes::default(),
            sampling: SamplingChoice::default(),
            path_params: ParamChoice::default(),
            branch_first_override: None,
            mode: RecoveryMode::default(),
            trials: 1,
            seed: 0,
            workers: 0,
            output: None,
            dump_paths: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(invalid("trials must be >= 1"));
        }
        if self.n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        self.noise.validate(self.k)?;
        if !self.noise.is_modular() && self.k != 2 {
            return Err(invalid("the sign model needs k = 2"));
        }
        if let ClusterSizes::Explicit { sizes } = &self.clusters {
            if sizes.len() != self.k || sizes.iter().sum::<usize>() != self.n {
                return Err(invalid("explicit cluster sizes must have k entries summing to n"));
            }
        }
        if let SamplingChoice::Plan { plan } = &self.sampling {
            plan.validate(self.n)?;
        }
        Ok(())
    }

    fn sizes(&self) -> Option<Vec<usize>> {
        match &self.clusters {
            ClusterSizes::Balanced => Some(Labeling::balanced_sizes(self.n, self.k)),
            ClusterSizes::Uniform => None,
            ClusterSizes::Explicit { sizes } => Some(sizes.clone()),
        }
    }
}

/// One trial's outcome; flat so it maps onto one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub sweep_axis: Option<String>,
    pub sweep_value: Option<f64>,
    pub trial: usize,
    pub trial_seed: u64,
    pub n: usize,
    pub k: usize,
    pub noise: String,
    pub q: f64,
    pub mode: String,
    pub sampling: String,
    pub budget_clamped: bool,
    pub queries: usize,
    pub depth1: usize,
    pub depth2: usize,
    pub branch_first: usize,
    pub branch_rest: usize,
    pub path_len: usize,
    pub shrunk: String,
    pub exact_recovery: bool,
    pub exact_up_to_shift: bool,
    pub misclassified: usize,
    pub pairs_failed: usize,
    pub ties: usize,
    pub inconsistent_triangles: Option<u64>,
    pub mean_paths_per_pair: f64,
    pub mean_max_read: f64,
    pub max_bad_edges: usize,
    pub error: Option<String>,
    pub wall_time: f64,
}

impl ExperimentRecord {
    fn blank(config: &ExperimentConfig, trial: usize, trial_seed: u64) -> Self {
        Self {
            sweep_axis: None,
            sweep_value: None,
            trial,
            trial_seed,
            n: config.n,
            k: config.k,
            noise: config.noise.name().to_string(),
            q: config.noise.corruption(),
            mode: match config.mode {
                RecoveryMode::Anchored => "anchored",
                RecoveryMode::AllPairs => "all-pairs",
            }
            .to_string(),
            sampling: String::new(),
            budget_clamped: false,
            queries: 0,
            depth1: 0,
            depth2: 0,
            branch_first: 0,
            branch_rest: 0,
            path_len: 0,
            shrunk: String::new(),
            exact_recovery: false,
            exact_up_to_shift: false,
            misclassified: config.n,
            pairs_failed: 0,
            ties: 0,
            inconsistent_triangles: None,
            mean_paths_per_pair: 0.0,
            mean_max_read: 0.0,
            max_bad_edges: 0,
            error: None,
            wall_time: 0.0,
        }
    }
}

/// Per-trial seed derived from the master seed and the trial index.
pub fn trial_seed(master: u64, trial: usize) -> u64 {
    seed::derive(master, &[seed::TAG_TRIAL, trial as u64])
}

/// Resolve path parameters for one sampled graph.
pub fn resolve_params(
    config: &ExperimentConfig,
    graph: &crate::QueryGraph,
) -> Result<(PathParams, Vec<String>)> {
    let gap = config.noise.gap(config.k);
    let (mut params, shrunk) = match &config.path_params {
        ParamChoice::Auto { level1_constant } => {
            let theo = PathParams::theoretical(config.n, gap, *level1_constant)?;
            let d = fit_params(&theo, GraphShape::of(graph), config.noise.contraction(config.k));
            (d.chosen, d.shrunk)
        }
        ParamChoice::Theoretical { level1_constant } => {
            (PathParams::theoretical(config.n, gap, *level1_constant)?, Vec::new())
        }
        ParamChoice::Explicit { params } => (params.clone(), Vec::new()),
    };
    if let Some(bf) = config.branch_first_override {
        params.branch_first = bf;
    }
    params.validate()?;
    Ok((params, shrunk))
}

/// Run one trial. Errors become a failed record rather than aborting.
pub fn run_trial(config: &ExperimentConfig, trial: usize) -> ExperimentRecord {
    let start = Instant::now();
    let ts = trial_seed(config.seed, trial);
    let mut rec = ExperimentRecord::blank(config, trial, ts);
    if let Err(e) = run_trial_into(config, trial, ts, &mut rec) {
        rec.error = Some(e.to_string());
    }
    rec.wall_time = start.elapsed().as_secs_f64();
    rec
}

fn run_trial_into(config: &ExperimentConfig, trial: usize, ts: u64, rec: &mut ExperimentRecord) -> Result<()> {
    let labeling = Labeling::generate(config.n, config.k, config.sizes().as_deref(), ts)?;
    let plan = match &config.sampling {
        SamplingChoice::Plan { plan } => *plan,
        SamplingChoice::Auto { mode, budget_constant } => {
            let b = query_budget(config.n, config.noise.gap(config.k), *budget_constant)?;
            rec.budget_clamped = b.clamped;
            SamplingPlan::for_budget(*mode, config.n, b.queries)
        }
    };
    rec.sampling = match plan {
        SamplingPlan::FixedCount { queries } => format!("fixed:{queries}"),
        SamplingPlan::Bernoulli { p } => format!("bernoulli:{p}"),
    };
    let graph = sample_query_graph(&labeling, &config.noise, plan, ts)?;
    rec.queries = graph.edge_count();
    let (params, shrunk) = resolve_params(config, &graph)?;
    rec.depth1 = params.depth1;
    rec.depth2 = params.depth2;
    rec.branch_first = params.branch_first;
    rec.branch_rest = params.branch_rest;
    rec.path_len = params.path_len();
    rec.shrunk = shrunk.join("; ");

    let dump = config.dump_paths.as_ref().map(|dir| {
        let dir = dir.clone();
        move |f: &PathFamily| {
            let path = dir.join(format!("trial{trial}_{}_{}.txt", f.u, f.v));
            if let Ok(file) = File::create(&path) {
                let _ = f.write_dump(BufWriter::new(file));
            }
        }
    });
    if let Some(dir) = &config.dump_paths {
        fs::create_dir_all(dir)?;
    }
    let inspect = dump.as_ref().map(|f| f as &(dyn Fn(&PathFamily) + Sync));
    let recovery = recover_clusters_with(&graph, &params, config.mode, inspect)?;
    let perm = clustering_error(&recovery.clustering, &labeling)?;
    let shift = shift_error(&recovery.clustering, &labeling)?;
    let d = &recovery.diagnostics;
    rec.exact_recovery = perm.exact;
    rec.exact_up_to_shift = shift.exact;
    rec.misclassified = perm.misclassified;
    rec.pairs_failed = d.pairs_failed;
    rec.ties = d.ties;
    rec.inconsistent_triangles = d.inconsistent_triangles;
    rec.mean_paths_per_pair = d.mean_paths_per_pair;
    rec.mean_max_read = d.mean_max_read;
    rec.max_bad_edges = d.max_bad_edges;
    Ok(())
}

/// CSV rows plus a JSON sidecar holding the configuration.
struct RecordSink {
    csv: csv::Writer<File>,
}

impl RecordSink {
    fn create(path: &Path, config: &impl Serialize) -> Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        let sidecar = path.with_extension("json");
        let tmp = sidecar.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(config)?)?;
        fs::rename(&tmp, &sidecar)?;
        Ok(Self {
            csv: csv::Writer::from_writer(File::create(path)?),
        })
    }

    fn emit(&mut self, rec: &ExperimentRecord) -> Result<()> {
        self.csv.serialize(rec)?;
        self.csv.flush()?;
        Ok(())
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| invalid(format!("thread pool: {e}")))
}

/// Run `trials` jobs on `workers` threads, handing results to `emit` in
/// trial order as soon as each prefix is complete.
fn run_ordered(
    config: &ExperimentConfig,
    workers: usize,
    mut emit: impl FnMut(ExperimentRecord) -> Result<()>,
) -> Result<()> {
    let pool = pool(workers)?;
    let (tx, rx) = mpsc::channel();
    let mut status = Ok(());
    std::thread::scope(|s| {
        s.spawn(|| {
            pool.install(|| {
                (0..config.trials)
                    .into_par_iter()
                    .for_each_with(tx, |tx, t| {
                        let _ = tx.send((t, run_trial(config, t)));
                    })
            })
        });
        let mut pending = BTreeMap::new();
        let mut next = 0;
        for (t, rec) in rx {
            pending.insert(t, rec);
            while let Some(rec) = pending.remove(&next) {
                if status.is_ok() {
                    status = emit(rec);
                }
                next += 1;
            }
        }
    });
    status
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let mut sink = match &config.output {
        Some(p) => Some(RecordSink::create(p, config)?),
        None => None,
    };
    let mut out = Vec::with_capacity(config.trials);
    run_ordered(config, config.workers, |rec| {
        if let Some(s) = sink.as_mut() {
            s.emit(&rec)?;
        }
        out.push(rec);
        Ok(())
    })?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Q,
    N,
    K,
    BudgetConstant,
    BranchFirst,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Q => "q",
            SweepAxis::N => "n",
            SweepAxis::K => "k",
            SweepAxis::BudgetConstant => "budget_constant",
            SweepAxis::BranchFirst => "branch_first",
        }
    }

    fn apply(self, base: &ExperimentConfig, value: f64) -> Result<ExperimentConfig> {
        let mut c = base.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(invalid(format!("{} must be a whole number, got {v}", self.name())))
            }
        };
        match self {
            SweepAxis::Q => match &mut c.noise {
                NoiseSpec::SignFlip { q } | NoiseSpec::ModularPlusMinus { q } => *q = value,
                NoiseSpec::ModularGeneral { .. } => {
                    return Err(invalid("cannot sweep q for the general step law"))
                }
            },
            SweepAxis::N => {
                c.n = as_count(value)?;
                if let ClusterSizes::Explicit { .. } = c.clusters {
                    c.clusters = ClusterSizes::Balanced;
                }
            }
            SweepAxis::K => c.k = as_count(value)?,
            SweepAxis::BudgetConstant => match &mut c.sampling {
                SamplingChoice::Auto { budget_constant, .. } => *budget_constant = value,
                SamplingChoice::Plan { .. } => {
                    return Err(invalid("budget constant sweep needs auto sampling"))
                }
            },
            SweepAxis::BranchFirst => c.branch_first_override = Some(as_count(value)?),
        }
        c.output = None;
        Ok(c)
    }
}

/// Run `base` once per value of `axis`, streaming records as they finish.
pub fn run_sweep(base: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<ExperimentRecord>> {
    let configs: Vec<ExperimentConfig> = values
        .iter()
        .map(|&v| axis.apply(base, v).and_then(|c| c.validate().map(|_| c)))
        .collect::<Result<_>>()?;
    #[derive(Serialize)]
    struct SweepManifest<'a> {
        base: &'a ExperimentConfig,
        axis: &'static str,
        values: &'a [f64],
    }
    let mut sink = match &base.output {
        Some(p) if !values.is_empty() => Some(RecordSink::create(
            p,
            &SweepManifest {
                base,
                axis: axis.name(),
                values,
            },
        )?),
        _ => None,
    };
    let mut out = Vec::new();
    for (cfg, &value) in configs.iter().zip(values) {
        run_ordered(cfg, base.workers, |mut rec| {
            rec.sweep_axis = Some(axis.name().to_string());
            rec.sweep_value = Some(value);
            if let Some(s) = sink.as_mut() {
                s.emit(&rec)?;
            }
            out.push(rec);
            Ok(())
        })?;
    }
    Ok(out)
}

/// One identity or dominance check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub points: usize,
    pub max_abs_discrepancy: f64,
    pub tolerance: f64,
    /// Grid point with the largest discrepancy, or the first failure.
    pub worst_point: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Closed forms under test. Swapped out in tests to confirm the checks bite.
pub struct ClosedForms {
    pub agree_prob: fn(f64, u32) -> f64,
    pub chain: fn(f64, usize, u32) -> Result<analysis::ChainDistribution>,
}

impl Default for ClosedForms {
    fn default() -> Self {
        Self {
            agree_prob: analysis::path_agree_prob,
            chain: analysis::chain_closed_form,
        }
    }
}

struct Tracker {
    name: String,
    tolerance: f64,
    points: usize,
    worst: f64,
    worst_point: String,
    failed: bool,
}

impl Tracker {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            tolerance,
            points: 0,
            worst: 0.0,
            worst_point: String::new(),
            failed: false,
        }
    }

    fn diff(&mut self, got: f64, want: f64, at: impl FnOnce() -> String) {
        self.points += 1;
        let d = (got - want).abs();
        let d = if d.is_nan() { f64::INFINITY } else { d };
        if d > self.worst || self.worst_point.is_empty() {
            self.worst = d;
            self.worst_point = at();
        }
        self.failed |= d > self.tolerance;
    }

    fn require(&mut self, ok: bool, at: impl FnOnce() -> String) {
        self.points += 1;
        if !ok && !self.failed {
            self.failed = true;
            self.worst_point = at();
        }
    }

    fn finish(self) -> CheckResult {
        CheckResult {
            name: self.name,
            passed: !self.failed,
            points: self.points,
            max_abs_discrepancy: self.worst,
            tolerance: self.tolerance,
            worst_point: self.worst_point,
        }
    }
}

pub fn agree_prob_grid() -> impl Iterator<Item = (f64, u32)> {
    (0..=10).flat_map(|i| (0..=50u32).map(move |l| (i as f64 * 0.05, l)))
}

pub fn chain_grid() -> impl Iterator<Item = (usize, f64, u32)> {
    (3..=8usize).flat_map(|k| (0..=5).flat_map(move |i| (0..=60u32).map(move |t| (k, i as f64 * 0.1, t))))
}

pub fn verify_oracles() -> VerifyReport {
    verify_with(&ClosedForms::default())
}

pub fn verify_with(forms: &ClosedForms) -> VerifyReport {
    let mut checks = Vec::new();

    let mut t = Tracker::new("path agreement closed form vs parity DP", 1e-12);
    for (q, l) in agree_prob_grid() {
        t.diff((forms.agree_prob)(q, l), analysis::parity_prob_oracle(q, l), || format!("q={q}, L={l}"));
    }
    checks.push(t.finish());

    let mut t = Tracker::new("chain closed form vs convolution powering", 1e-10);
    let mut k3 = Tracker::new("k=3 chain vs 1/3 + 2/3 (1-3q/2)^t", 1e-12);
    let mut dom = Tracker::new("offset 0 is the strict plurality and exceeds 1/k", 0.0);
    let mut sym = Tracker::new("chain distribution symmetric under j -> k-j", 1e-12);
    for (k, q, tt) in chain_grid() {
        let at = || format!("k={k}, q={q}, t={tt}");
        let closed = match (forms.chain)(q, k, tt) {
            Ok(d) => d,
            Err(_) => {
                t.require(false, at);
                continue;
            }
        };
        let power = analysis::chain_power_oracle(&analysis::lazy_walk_step(q, k), tt).expect("valid step");
        for j in 0..k {
            t.diff(closed.probs[j], power.probs[j], || format!("k={k}, q={q}, t={tt}, j={j}"));
            sym.diff(closed.probs[j], closed.probs[(k - j) % k], || format!("k={k}, q={q}, t={tt}, j={j}"));
        }
        if k == 3 {
            let r = (1.0 - 1.5 * q).powi(tt as i32);
            k3.diff(closed.probs[0], 1.0 / 3.0 + 2.0 / 3.0 * r, at);
            k3.diff(closed.probs[1], 1.0 / 3.0 - r / 3.0, at);
            k3.diff(closed.probs[2], 1.0 / 3.0 - r / 3.0, at);
        }
        if q < 0.5 {
            dom.require(closed.zero_is_strict_max() && closed.excess[0] > 0.0, at);
        }
    }
    checks.extend([t.finish(), k3.finish(), dom.finish(), sym.finish()]);

    let mut rng = seed::rng(0x5eed, &[]);
    let mut t = Tracker::new("Monte Carlo parity, 1e5 length-7 paths at q=0.2 (3 sigma)", 0.0);
    let (f, sigma) = simulate_parity(0.2, 7, 100_000, &mut rng);
    let want = analysis::path_agree_prob(0.2, 7);
    t.tolerance = 3.0 * sigma;
    t.diff(f, want, || format!("empirical {f}"));
    checks.push(t.finish());

    let mut t = Tracker::new("read-10 empirical upper tail below KL bound", 0.0);
    for &eps in &[0.05, 0.1] {
        let bound = analysis::read_k_tail(1000, 10, 0.3, eps, TailForm::Kl).expect("valid").bound;
        for fam in [ReadKFamily::Blocks, ReadKFamily::SharedXor] {
            let emp = analysis::simulate_read_k_upper_tail(fam, 1000, 10, 0.3, eps, 10_000, &mut rng);
            t.require(emp <= bound, || format!("{fam:?}, eps={eps}: {emp} > {bound}"));
            t.worst = t.worst.max(emp - bound);
        }
    }
    checks.push(t.finish());

    VerifyReport { checks }
}

/// Fraction of simulated length-`len` paths with an even number of flips,
/// plus the binomial standard deviation of that fraction.
pub fn simulate_parity<R: Rng>(q: f64, len: u32, paths: usize, rng: &mut R) -> (f64, f64) {
    let even = (0..paths)
        .filter(|_| (0..len).filter(|_| rng.gen::<f64>() < q).count() % 2 == 0)
        .count();
    let p = analysis::path_agree_prob(q, len);
    (even as f64 / paths as f64, (p * (1.0 - p) / paths as f64).sqrt())
}
