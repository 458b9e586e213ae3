//! The observed query graph: which pairs were queried and what came back.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::oracle::{negate_mod, Labeling, NoiseSpec, NoisyOracle};
use crate::seed;

/// Response family carried by the edges of a graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    SignFlip,
    ModularPm,
    ModularGeneral,
}

impl Variant {
    pub fn of(noise: &NoiseSpec) -> Self {
        match noise {
            NoiseSpec::SignFlip { .. } => Variant::SignFlip,
            NoiseSpec::ModularPlusMinus { .. } => Variant::ModularPm,
            NoiseSpec::ModularGeneral { .. } => Variant::ModularGeneral,
        }
    }

    pub fn is_modular(self) -> bool {
        self != Variant::SignFlip
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::SignFlip => "sign-flip",
            Variant::ModularPm => "modular-pm",
            Variant::ModularGeneral => "modular-general",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sign-flip" => Ok(Variant::SignFlip),
            "modular-pm" => Ok(Variant::ModularPm),
            "modular-general" => Ok(Variant::ModularGeneral),
            other => Err(invalid(format!("unknown variant {other:?}"))),
        }
    }
}

#[inline]
fn pair_key(a: usize, b: usize) -> u64 {
    ((a.min(b) as u64) << 32) | b.max(a) as u64
}

/// Undirected graph of answered queries.
///
/// Neighbor lists are kept sorted ascending. Responses live in a hashed map
/// keyed by the unordered pair and are stored in the orientation
/// `(min, max)`; modular values read in the other direction are negated.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryGraph {
    n: usize,
    k: usize,
    variant: Variant,
    adj: Vec<Vec<u32>>,
    responses: FxHashMap<u64, i32>,
}

impl QueryGraph {
    /// Build from `(x, y, value)` triples where `value` is read from `x` to `y`.
    pub fn from_edges(
        n: usize,
        k: usize,
        variant: Variant,
        edges: impl IntoIterator<Item = (usize, usize, i32)>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(invalid("graph needs at least one vertex"));
        }
        if variant == Variant::SignFlip && k != 2 {
            return Err(invalid("sign responses require k = 2"));
        }
        let mut g = Self {
            n,
            k,
            variant,
            adj: vec![Vec::new(); n],
            responses: FxHashMap::default(),
        };
        for (x, y, value) in edges {
            g.insert(x, y, value)?;
        }
        for list in &mut g.adj {
            list.sort_unstable();
        }
        Ok(g)
    }

    fn insert(&mut self, x: usize, y: usize, value: i32) -> Result<()> {
        if x == y {
            return Err(invalid(format!("self-loop at {x}")));
        }
        if x >= self.n || y >= self.n {
            return Err(invalid(format!("edge ({x}, {y}) out of range for n = {}", self.n)));
        }
        let stored = match self.modulus() {
            None if value == 1 || value == -1 => value,
            None => return Err(invalid(format!("sign response {value} is not +1/-1"))),
            Some(k) if (0..k as i32).contains(&value) => {
                if x < y {
                    value
                } else {
                    negate_mod(value, k)
                }
            }
            Some(k) => return Err(invalid(format!("modular response {value} outside [0, {k})"))),
        };
        if self.responses.insert(pair_key(x, y), stored).is_some() {
            return Err(invalid(format!("duplicate pair ({x}, {y})")));
        }
        self.adj[x].push(y as u32);
        self.adj[y].push(x as u32);
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    /// `Some(k)` for modular responses.
    pub fn modulus(&self) -> Option<u32> {
        self.variant.is_modular().then_some(self.k as u32)
    }

    pub fn edge_count(&self) -> usize {
        self.responses.len()
    }

    pub fn neighbors(&self, x: usize) -> &[u32] {
        &self.adj[x]
    }

    pub fn degree(&self, x: usize) -> usize {
        self.adj[x].len()
    }

    pub fn has_edge(&self, x: usize, y: usize) -> bool {
        self.responses.contains_key(&pair_key(x, y))
    }

    /// Response read walking from `x` to `y`.
    pub fn response(&self, x: usize, y: usize) -> Option<i32> {
        let v = *self.responses.get(&pair_key(x, y))?;
        Some(match self.modulus() {
            Some(k) if x > y => negate_mod(v, k),
            _ => v,
        })
    }

    /// Edges as `(min, max, value)` in ascending pair order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, i32)> + '_ {
        self.adj.iter().enumerate().flat_map(move |(a, list)| {
            list.iter()
                .filter(move |&&b| (b as usize) > a)
                .map(move |&b| (a, b as usize, self.responses[&pair_key(a, b as usize)]))
        })
    }

    pub fn mean_degree(&self) -> f64 {
        2.0 * self.edge_count() as f64 / self.n as f64
    }

    /// Fraction of all pairs that were queried.
    pub fn density(&self) -> f64 {
        let pairs = pair_count(self.n);
        if pairs == 0 {
            0.0
        } else {
            self.edge_count() as f64 / pairs as f64
        }
    }

    /// Line format: header `n k variant`, then one `x y value` line per edge.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {} {}", self.n, self.k, self.variant)?;
        for (a, b, v) in self.edges() {
            writeln!(w, "{a} {b} {v}")?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter(|(_, l)| {
            l.as_ref().map(|s| !s.trim().is_empty()).unwrap_or(true)
        });
        let parse_err = |line: usize, msg: &str| Error::Parse {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (hl, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
        let header = header?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 3 {
            return Err(parse_err(hl, "header must be `n k variant`"));
        }
        let n: usize = h[0].parse().map_err(|_| parse_err(hl, "bad n"))?;
        let k: usize = h[1].parse().map_err(|_| parse_err(hl, "bad k"))?;
        let variant: Variant = h[2].parse()?;
        let mut edges = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(parse_err(i, "edge line must be `x y value`"));
            }
            let x = f[0].parse().map_err(|_| parse_err(i, "bad x"))?;
            let y = f[1].parse().map_err(|_| parse_err(i, "bad y"))?;
            let v = f[2].parse().map_err(|_| parse_err(i, "bad value"))?;
            edges.push((x, y, v));
        }
        Self::from_edges(n, k, variant, edges)
    }
}

pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// How the up-front query set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SamplingPlan {
    /// Exactly `queries` distinct pairs, uniformly without replacement.
    FixedCount { queries: usize },
    /// Each pair independently with probability `p`.
    Bernoulli { p: f64 },
}

impl SamplingPlan {
    pub fn validate(&self, n: usize) -> Result<()> {
        match *self {
            SamplingPlan::FixedCount { queries } if queries > pair_count(n) => Err(invalid(format!(
                "{queries} queries exceed the {} pairs available at n = {n}",
                pair_count(n)
            ))),
            SamplingPlan::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                Err(invalid(format!("edge probability {p} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    /// Plan spending `queries` queries in the given mode. The Bernoulli form
    /// uses `p = queries / C(n, 2)` so both have the same expected size.
    pub fn for_budget(mode: SamplingMode, n: usize, queries: usize) -> Self {
        match mode {
            SamplingMode::Fixed => SamplingPlan::FixedCount { queries },
            SamplingMode::Bernoulli => SamplingPlan::Bernoulli {
                p: (queries as f64 / pair_count(n).max(1) as f64).min(1.0),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    Fixed,
    #[default]
    Bernoulli,
}

/// Draw the query set and answer every query through a seeded oracle.
pub fn sample_query_graph(
    labeling: &Labeling,
    noise: &NoiseSpec,
    plan: SamplingPlan,
    seed: u64,
) -> Result<QueryGraph> {
    let n = labeling.n();
    plan.validate(n)?;
    let oracle = NoisyOracle::new(labeling, noise.clone(), seed)?;
    let variant = Variant::of(noise);
    if variant == Variant::SignFlip && labeling.k() != 2 {
        return Err(invalid("the sign model needs a two-group labeling"));
    }
    let mut rng = seed::rng(seed, &[seed::TAG_SAMPLING]);
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    match plan {
        SamplingPlan::Bernoulli { p } => {
            for a in 0..n {
                for b in a + 1..n {
                    if rng.gen::<f64>() < p {
                        pairs.push((a, b));
                    }
                }
            }
        }
        SamplingPlan::FixedCount { queries } => {
            let mut idx = rand::seq::index::sample(&mut rng, pair_count(n), queries).into_vec();
            idx.sort_unstable();
            let mut row = 0usize;
            let mut row_start = 0usize;
            for i in idx {
                while i >= row_start + (n - 1 - row) {
                    row_start += n - 1 - row;
                    row += 1;
                }
                pairs.push((row, row + 1 + (i - row_start)));
            }
        }
    }
    let mut edges = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        edges.push((a, b, oracle.query(a, b)?.value));
    }
    QueryGraph::from_edges(n, labeling.k(), variant, edges)
}

/// Characteristic path length `ln n / ln ln n`; defined for `n >= 3`.
pub fn path_scale(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(invalid(format!("path scale needs n >= 3, got {n}")));
    }
    let ln = (n as f64).ln();
    Ok(ln / ln.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueryBudget {
    /// `constant * n * ln n * (2c)^(-L)` before rounding and clamping.
    pub formula: f64,
    pub queries: usize,
    pub clamped: bool,
    pub path_scale: f64,
}

/// Number of up-front queries: `ceil(constant * n * ln n * (2c)^(-L))`,
/// clamped to the number of available pairs.
pub fn query_budget(n: usize, gap: f64, constant: f64) -> Result<QueryBudget> {
    if !(gap > 0.0 && gap <= 0.5) {
        return Err(invalid(format!("gap c = {gap} must lie in (0, 1/2]")));
    }
    if !(constant > 0.0) {
        return Err(invalid("budget constant must be positive"));
    }
    let l = path_scale(n)?;
    let formula = constant * n as f64 * (n as f64).ln() * (2.0 * gap).powf(-l);
    let cap = pair_count(n);
    let raw = formula.ceil();
    let clamped = raw >= cap as f64;
    Ok(QueryBudget {
        formula,
        queries: if clamped { cap } else { raw as usize },
        clamped,
        path_scale: l,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegreeReport {
    pub min_degree: usize,
    /// Items whose degree is strictly below the threshold.
    pub violating: Vec<usize>,
}

pub fn check_min_degree(graph: &QueryGraph, threshold: f64) -> DegreeReport {
    let min_degree = (0..graph.n()).map(|x| graph.degree(x)).min().unwrap_or(0);
    let violating = (0..graph.n())
        .filter(|&x| (graph.degree(x) as f64) < threshold)
        .collect();
    DegreeReport {
        min_degree,
        violating,
    }
}

/// Histogram of degrees, for reports.
pub fn degree_histogram(graph: &QueryGraph) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for x in 0..graph.n() {
        *h.entry(graph.degree(x)).or_insert(0) += 1;
    }
    h
}
