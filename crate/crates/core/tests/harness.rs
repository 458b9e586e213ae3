use std::fs;

use noisy_cc::graph::SamplingPlan;
use noisy_cc::harness::{run_experiment, run_sweep, ExperimentConfig, ExperimentRecord, SamplingChoice, SweepAxis};
use noisy_cc::NoiseSpec;

fn sign(n: usize, q: f64, trials: usize, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(n, 2, NoiseSpec::SignFlip { q });
    c.trials = trials;
    c.seed = seed;
    c
}

fn rate(recs: &[ExperimentRecord]) -> f64 {
    recs.iter().filter(|r| r.exact_recovery).count() as f64 / recs.len() as f64
}

#[test]
fn recovers_at_moderate_noise() {
    let recs = run_experiment(&sign(400, 0.1, 20, 2024)).unwrap();
    assert_eq!(recs.len(), 20);
    assert!(rate(&recs) >= 0.9, "rate {}", rate(&recs));
}

#[test]
fn same_seed_gives_identical_records() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in 0..2 {
        let mut c = sign(120, 0.1, 6, 99);
        c.workers = 1 + run * 3;
        c.output = Some(dir.path().join(format!("run{run}.csv")));
        let recs = run_experiment(&c).unwrap();
        assert_eq!(recs.iter().map(|r| r.trial).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());
        let text = fs::read_to_string(c.output.as_ref().unwrap()).unwrap();
        // wall_time is the last column and the only one allowed to differ
        csvs.push(
            text.lines()
                .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head).to_string())
                .collect::<Vec<_>>(),
        );
    }
    assert_eq!(csvs[0], csvs[1]);
    assert_eq!(csvs[0].len(), 7);
}

#[test]
fn csv_and_sidecar_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = sign(60, 0.05, 3, 1);
    c.output = Some(dir.path().join("nested/out.csv"));
    run_experiment(&c).unwrap();
    let sidecar: ExperimentConfig =
        serde_json::from_slice(&fs::read(dir.path().join("nested/out.json")).unwrap()).unwrap();
    assert_eq!(sidecar, c);
    let mut rdr = csv::Reader::from_path(dir.path().join("nested/out.csv")).unwrap();
    let rows: Vec<ExperimentRecord> = rdr.deserialize().collect::<Result<_, _>>().unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.depth1 >= 1 && r.branch_first >= 1 && r.path_len >= 3));
}

#[test]
fn recovery_falls_as_noise_rises() {
    let recs = run_sweep(&sign(400, 0.0, 10, 7), SweepAxis::Q, &[0.05, 0.15, 0.25, 0.35]).unwrap();
    assert_eq!(recs.len(), 40);
    let rates: Vec<f64> = recs.chunks(10).map(rate).collect();
    let inversions = rates.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(inversions <= 1, "{rates:?}");
    assert!(recs.iter().all(|r| r.sweep_axis.as_deref() == Some("q")));
}

#[test]
fn paths_per_pair_grow_with_n() {
    let recs = run_sweep(&sign(100, 0.1, 3, 5), SweepAxis::N, &[100.0, 200.0, 400.0]).unwrap();
    let means: Vec<f64> = recs
        .chunks(3)
        .map(|c| c.iter().map(|r| r.mean_paths_per_pair).sum::<f64>() / 3.0)
        .collect();
    assert!(means.windows(2).all(|w| w[1] > w[0]), "{means:?}");
}

#[test]
fn sweep_streams_one_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = sign(60, 0.1, 2, 3);
    c.output = Some(dir.path().join("sweep.csv"));
    let recs = run_sweep(&c, SweepAxis::BranchFirst, &[2.0, 4.0, 8.0]).unwrap();
    assert_eq!(recs.iter().map(|r| r.branch_first).collect::<Vec<_>>(), [2, 2, 4, 4, 8, 8]);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
    assert!(dir.path().join("sweep.json").exists());
    assert!(run_sweep(&c, SweepAxis::N, &[1.5]).is_err());
}

#[test]
fn budget_constant_sweep_changes_queries() {
    let recs = run_sweep(&sign(300, 0.2, 1, 3), SweepAxis::BudgetConstant, &[0.5, 2.0]).unwrap();
    assert!(recs[0].queries < recs[1].queries);
}

#[test]
fn modular_k_sweep() {
    let mut c = ExperimentConfig::new(90, 3, NoiseSpec::ModularPlusMinus { q: 0.0 });
    c.sampling = SamplingChoice::Plan {
        plan: SamplingPlan::Bernoulli { p: 1.0 },
    };
    let recs = run_sweep(&c, SweepAxis::K, &[3.0, 4.0, 5.0]).unwrap();
    assert!(recs.iter().all(|r| r.exact_up_to_shift), "{recs:?}");
    assert_eq!(recs.iter().map(|r| r.k).collect::<Vec<_>>(), [3, 4, 5]);
}

#[test]
fn dumps_one_file_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = sign(20, 0.0, 1, 3);
    c.sampling = SamplingChoice::Plan {
        plan: SamplingPlan::Bernoulli { p: 1.0 },
    };
    c.dump_paths = Some(dir.path().to_path_buf());
    run_experiment(&c).unwrap();
    let files = fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 19);
    let one = fs::read_to_string(dir.path().join("trial0_0_5.txt")).unwrap();
    for line in one.lines() {
        let items: Vec<usize> = line.split(' ').map(|t| t.parse().unwrap()).collect();
        assert_eq!((items[0], *items.last().unwrap()), (0, 5));
    }
}
