//! Path votes, pairwise verdicts and cluster assembly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oracle::Labeling;
use crate::paths::{build_path_family, PathFamily, PathParams};
use crate::QueryGraph;

/// Product of the edge signs along `path`.
pub fn path_sign(path: &[usize], graph: &QueryGraph) -> Result<i32> {
    if graph.modulus().is_some() {
        return Err(invalid("path_sign needs a sign-response graph"));
    }
    path.windows(2).try_fold(1, |acc, w| {
        graph
            .response(w[0], w[1])
            .map(|s| acc * s)
            .ok_or(Error::MissingEdge(w[0], w[1]))
    })
}

/// Oriented sum of modular responses along `path`, in `[0, k)`. With no
/// noise this is `g(first) - g(last) mod k`.
pub fn path_difference(path: &[usize], graph: &QueryGraph) -> Result<u32> {
    let k = graph
        .modulus()
        .ok_or_else(|| invalid("path_difference needs a modular-response graph"))?;
    path.windows(2)
        .try_fold(0u32, |acc, w| {
            graph
                .response(w[0], w[1])
                .map(|d| (acc + d as u32) % k)
                .ok_or(Error::MissingEdge(w[0], w[1]))
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Same,
    Different,
    /// Estimated `g(u) - g(v) mod k`.
    Difference(u32),
}

impl Verdict {
    /// The verdict as a difference modulo `k` (sign model: `k = 2`).
    pub fn as_difference(self) -> u32 {
        match self {
            Verdict::Same => 0,
            Verdict::Different => 1,
            Verdict::Difference(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Sum of path signs.
    SignSum(i64),
    /// Number of paths reporting each difference.
    Counts(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub u: usize,
    pub v: usize,
    pub statistic: Statistic,
    pub verdict: Verdict,
    pub n_paths: usize,
    pub max_read: usize,
    /// The vote was tied and the tie rule decided it.
    pub tie: bool,
}

/// Plurality over differences; ties go to the value nearest 0 mod k, then
/// to the smaller value.
pub(crate) fn plurality(counts: &[usize]) -> (u32, bool) {
    let k = counts.len();
    let top = counts.iter().copied().max().unwrap_or(0);
    let winners: Vec<usize> = (0..k).filter(|&d| counts[d] == top).collect();
    let best = *winners
        .iter()
        .min_by_key(|&&d| (d.min(k - d), d))
        .expect("k >= 1");
    (best as u32, winners.len() > 1)
}

/// Majority (sign model) or plurality (modular model) over the family.
pub fn decide_pair(family: &PathFamily, graph: &QueryGraph) -> Result<PairVerdict> {
    if family.paths.is_empty() {
        return Err(invalid("cannot decide on an empty path family"));
    }
    let (statistic, verdict, tie) = match graph.modulus() {
        None => {
            let sum = family
                .paths
                .iter()
                .map(|p| path_sign(p, graph).map(i64::from))
                .sum::<Result<i64>>()?;
            let verdict = if sum >= 0 {
                Verdict::Same
            } else {
                Verdict::Different
            };
            (Statistic::SignSum(sum), verdict, sum == 0)
        }
        Some(k) => {
            let mut counts = vec![0usize; k as usize];
            for p in &family.paths {
                counts[path_difference(p, graph)? as usize] += 1;
            }
            let (d, tie) = plurality(&counts);
            (Statistic::Counts(counts), Verdict::Difference(d), tie)
        }
    };
    Ok(PairVerdict {
        u: family.u,
        v: family.v,
        statistic,
        verdict,
        n_paths: family.paths.len(),
        max_read: family.max_read,
        tie,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clustering {
    pub n: usize,
    pub k: usize,
    pub assignment: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RecoveryMode {
    /// Decide every item against item 0.
    #[default]
    Anchored,
    /// Decide every pair, then vote each item against item 0 through all
    /// intermediaries.
    AllPairs,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RecoveryDiagnostics {
    pub decide_calls: usize,
    pub pairs_failed: usize,
    /// Items placed in cluster 0 because no verdict could be formed.
    pub unassigned: Vec<usize>,
    pub ties: usize,
    /// Triangles whose three verdicts do not compose (all-pairs mode only).
    pub inconsistent_triangles: Option<u64>,
    pub mean_paths_per_pair: f64,
    pub mean_max_read: f64,
    pub max_bad_edges: usize,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Recovery {
    pub clustering: Clustering,
    pub diagnostics: RecoveryDiagnostics,
}

struct PairOutcome {
    verdict: Option<PairVerdict>,
    bad_edges: usize,
    failure: Option<String>,
}

fn decide(graph: &QueryGraph, params: &PathParams, u: usize, v: usize, inspect: Option<&(dyn Fn(&PathFamily) + Sync)>) -> PairOutcome {
    match build_path_family(graph, u, v, params).and_then(|f| {
        if let Some(cb) = inspect {
            cb(&f);
        }
        decide_pair(&f, graph).map(|verdict| (verdict, f.max_bad_edges))
    }) {
        Ok((verdict, bad_edges)) => PairOutcome {
            verdict: Some(verdict),
            bad_edges,
            failure: None,
        },
        Err(e) => PairOutcome {
            verdict: None,
            bad_edges: 0,
            failure: Some(format!("({u}, {v}): {e}")),
        },
    }
}

pub fn recover_clusters(graph: &QueryGraph, params: &PathParams, mode: RecoveryMode) -> Result<Recovery> {
    recover_clusters_with(graph, params, mode, None)
}

/// As [`recover_clusters`], calling `inspect` on every built family.
pub fn recover_clusters_with(
    graph: &QueryGraph,
    params: &PathParams,
    mode: RecoveryMode,
    inspect: Option<&(dyn Fn(&PathFamily) + Sync)>,
) -> Result<Recovery> {
    params.validate()?;
    let n = graph.n();
    if graph.edge_count() == 0 && n > 1 {
        return Err(invalid("query graph has no edges"));
    }
    let pairs: Vec<(usize, usize)> = match mode {
        RecoveryMode::Anchored => (1..n).map(|v| (0, v)).collect(),
        RecoveryMode::AllPairs => (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect(),
    };
    let outcomes: Vec<PairOutcome> = pairs
        .par_iter()
        .map(|&(u, v)| decide(graph, params, u, v, inspect))
        .collect();

    let mut diag = RecoveryDiagnostics {
        decide_calls: pairs.len(),
        ..Default::default()
    };
    let mut paths_total = 0usize;
    let mut read_total = 0usize;
    let mut decided = 0usize;
    for o in &outcomes {
        diag.max_bad_edges = diag.max_bad_edges.max(o.bad_edges);
        match &o.verdict {
            Some(pv) => {
                decided += 1;
                paths_total += pv.n_paths;
                read_total += pv.max_read;
                diag.ties += usize::from(pv.tie);
            }
            None => {
                diag.pairs_failed += 1;
                diag.failures.extend(o.failure.clone());
            }
        }
    }
    if decided > 0 {
        diag.mean_paths_per_pair = paths_total as f64 / decided as f64;
        diag.mean_max_read = read_total as f64 / decided as f64;
    }

    let modulus = graph.modulus().unwrap_or(2);
    let to_group = |d: u32| (modulus - d % modulus) % modulus;
    let mut assignment = vec![0u32; n];
    match mode {
        RecoveryMode::Anchored => {
            for (i, o) in outcomes.iter().enumerate() {
                match &o.verdict {
                    Some(pv) => assignment[i + 1] = to_group(pv.verdict.as_difference()),
                    None => diag.unassigned.push(i + 1),
                }
            }
        }
        RecoveryMode::AllPairs => {
            // diff[u][v] = estimated g(u) - g(v)
            let mut diff: Vec<Vec<Option<u32>>> = vec![vec![None; n]; n];
            for (o, &(u, v)) in outcomes.iter().zip(&pairs) {
                if let Some(pv) = &o.verdict {
                    let d = pv.verdict.as_difference();
                    diff[u][v] = Some(d);
                    diff[v][u] = Some((modulus - d) % modulus);
                }
            }
            for (x, row) in diff.iter_mut().enumerate() {
                row[x] = Some(0);
            }
            for v in 1..n {
                let mut counts = vec![0usize; modulus as usize];
                for w in 0..n {
                    if w == v {
                        continue;
                    }
                    if let (Some(a), Some(b)) = (diff[0][w], diff[w][v]) {
                        counts[((a + b) % modulus) as usize] += 1;
                    }
                }
                if counts.iter().all(|&c| c == 0) {
                    diag.unassigned.push(v);
                    continue;
                }
                let (d, _) = plurality(&counts);
                assignment[v] = to_group(d);
            }
            let mut bad = 0u64;
            for a in 0..n {
                for b in a + 1..n {
                    let Some(ab) = diff[a][b] else { continue };
                    for c in b + 1..n {
                        if let (Some(bc), Some(ac)) = (diff[b][c], diff[a][c]) {
                            bad += u64::from((ab + bc) % modulus != ac);
                        }
                    }
                }
            }
            diag.inconsistent_triangles = Some(bad);
        }
    }
    Ok(Recovery {
        clustering: Clustering {
            n,
            k: modulus as usize,
            assignment,
        },
        diagnostics: diag,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusteringError {
    pub exact: bool,
    pub misclassified: usize,
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for j in 0..used.len() {
            if !used[j] {
                used[j] = true;
                prefix.push(j);
                rec(prefix, used, out);
                prefix.pop();
                used[j] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; k], &mut out);
    out
}

/// Misclassified items under the best relabeling of predicted clusters.
/// Exhaustive over permutations for up to 7 labels, greedy beyond.
pub fn clustering_error(predicted: &Clustering, truth: &Labeling) -> Result<ClusteringError> {
    if predicted.n != truth.n() || predicted.assignment.len() != truth.n() {
        return Err(invalid(format!(
            "predicted clustering has {} items, truth has {}",
            predicted.n,
            truth.n()
        )));
    }
    let k = predicted.k.max(truth.k());
    if let Some(&bad) = predicted.assignment.iter().find(|&&a| a as usize >= k) {
        return Err(invalid(format!("cluster id {bad} out of range")));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predicted.assignment.iter().zip(truth.groups()) {
        confusion[p as usize][t as usize] += 1;
    }
    let matched = if k <= 7 {
        permutations(k)
            .iter()
            .map(|perm| (0..k).map(|p| confusion[p][perm[p]]).sum::<usize>())
            .max()
            .unwrap_or(0)
    } else {
        let mut cells: Vec<(usize, usize, usize)> = (0..k)
            .flat_map(|p| (0..k).map(move |t| (p, t)))
            .map(|(p, t)| (confusion[p][t], p, t))
            .collect();
        cells.sort_unstable_by(|a, b| b.cmp(a));
        let (mut rows, mut cols) = (vec![false; k], vec![false; k]);
        let mut total = 0;
        for (c, p, t) in cells {
            if !rows[p] && !cols[t] {
                rows[p] = true;
                cols[t] = true;
                total += c;
            }
        }
        total
    };
    let misclassified = truth.n() - matched;
    Ok(ClusteringError {
        exact: misclassified == 0,
        misclassified,
    })
}

/// Misclassified items under the best cyclic shift of predicted labels.
pub fn shift_error(predicted: &Clustering, truth: &Labeling) -> Result<ClusteringError> {
    if predicted.assignment.len() != truth.n() {
        return Err(invalid("size mismatch"));
    }
    let k = predicted.k.max(truth.k()) as u32;
    let misclassified = (0..k)
        .map(|s| {
            predicted
                .assignment
                .iter()
                .zip(truth.groups())
                .filter(|(&p, &t)| (p + s) % k != t)
                .count()
        })
        .min()
        .unwrap_or(0);
    Ok(ClusteringError {
        exact: misclassified == 0,
        misclassified,
    })
}
