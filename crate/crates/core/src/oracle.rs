//! Ground-truth labelings and the noisy pairwise query oracles.
//!
//! Two query models are supported. The sign model answers "same group or
//! not" as `+1`/`-1`, flipped with probability `q`. The modular models
//! answer the group difference `g(x) - g(y) mod k`, perturbed by a random
//! offset drawn from a fixed step distribution.

use dashmap::DashMap;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LabelingRepr")]
pub struct Labeling {
    n: usize,
    k: usize,
    groups: Vec<u32>,
}

#[derive(Deserialize)]
struct LabelingRepr {
    n: usize,
    k: usize,
    groups: Vec<u32>,
}

impl TryFrom<LabelingRepr> for Labeling {
    type Error = crate::Error;

    fn try_from(r: LabelingRepr) -> Result<Self> {
        let l = Labeling::from_groups(r.k, r.groups)?;
        if l.n != r.n {
            return Err(invalid(format!("n = {} but {} groups given", r.n, l.n)));
        }
        Ok(l)
    }
}

impl Labeling {
    pub fn from_groups(k: usize, groups: Vec<u32>) -> Result<Self> {
        if groups.is_empty() {
            return Err(invalid("labeling needs at least one item"));
        }
        if k < 2 {
            return Err(invalid(format!("group count k = {k} must be >= 2")));
        }
        if let Some(g) = groups.iter().find(|&&g| g as usize >= k) {
            return Err(invalid(format!("group {g} out of range for k = {k}")));
        }
        Ok(Self {
            n: groups.len(),
            k,
            groups,
        })
    }

    /// Build a labeling. With `sizes`, exactly `sizes[j]` items land in group
    /// `j` at seeded random positions; without, each item's group is uniform.
    pub fn generate(n: usize, k: usize, sizes: Option<&[usize]>, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(invalid("n must be >= 1"));
        }
        if k < 2 {
            return Err(invalid(format!("group count k = {k} must be >= 2")));
        }
        let mut rng = seed::rng(seed, &[seed::TAG_LABELING]);
        let groups = match sizes {
            Some(sizes) => {
                if sizes.len() != k {
                    return Err(invalid(format!(
                        "size vector has {} entries, expected k = {k}",
                        sizes.len()
                    )));
                }
                let total: usize = sizes.iter().sum();
                if total != n {
                    return Err(invalid(format!("group sizes sum to {total}, expected {n}")));
                }
                let mut g: Vec<u32> = sizes
                    .iter()
                    .enumerate()
                    .flat_map(|(j, &s)| std::iter::repeat_n(j as u32, s))
                    .collect();
                g.shuffle(&mut rng);
                g
            }
            None => {
                use rand::Rng;
                (0..n).map(|_| rng.gen_range(0..k as u32)).collect()
            }
        };
        Ok(Self { n, k, groups })
    }

    /// Sizes that split `n` as evenly as possible over `k` groups.
    pub fn balanced_sizes(n: usize, k: usize) -> Vec<usize> {
        (0..k).map(|j| n / k + usize::from(j < n % k)).collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn group(&self, item: usize) -> u32 {
        self.groups[item]
    }

    pub fn groups(&self) -> &[u32] {
        &self.groups
    }

    /// The labeling with every group shifted by `s` modulo `k`.
    pub fn shifted(&self, s: u32) -> Self {
        let k = self.k as u32;
        Self {
            n: self.n,
            k: self.k,
            groups: self.groups.iter().map(|&g| (g + s) % k).collect(),
        }
    }

    /// The labeling with group `j` renamed to `perm[j]`.
    pub fn relabeled(&self, perm: &[u32]) -> Result<Self> {
        let mut seen = vec![false; self.k];
        if perm.len() != self.k
            || perm
                .iter()
                .any(|&p| (p as usize) >= self.k || std::mem::replace(&mut seen[p as usize], true))
        {
            return Err(invalid("relabeling must be a permutation of 0..k"));
        }
        Ok(Self {
            n: self.n,
            k: self.k,
            groups: self.groups.iter().map(|&g| perm[g as usize]).collect(),
        })
    }
}

/// Corruption law applied to each query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "kebab-case")]
pub enum NoiseSpec {
    /// Sign answer, flipped with probability `q`.
    SignFlip { q: f64 },
    /// Modular difference, shifted by +1 or -1 each with probability `q/2`.
    ModularPlusMinus { q: f64 },
    /// Modular difference, shifted by `j` with probability `weights[j]`.
    ModularGeneral { weights: Vec<f64> },
}

impl NoiseSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        match self {
            NoiseSpec::SignFlip { q } | NoiseSpec::ModularPlusMinus { q } => {
                if !(0.0..0.5).contains(q) {
                    return Err(invalid(format!("corruption probability q = {q} must lie in [0, 1/2)")));
                }
            }
            NoiseSpec::ModularGeneral { weights } => {
                if weights.len() != k {
                    return Err(invalid(format!(
                        "{} step weights given for k = {k}",
                        weights.len()
                    )));
                }
                if weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(invalid("step weights must be nonnegative"));
                }
                let s: f64 = weights.iter().sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("step weights sum to {s}, expected 1")));
                }
            }
        }
        if k < 2 {
            return Err(invalid("k must be >= 2"));
        }
        Ok(())
    }

    pub fn is_modular(&self) -> bool {
        !matches!(self, NoiseSpec::SignFlip { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            NoiseSpec::SignFlip { .. } => "sign-flip",
            NoiseSpec::ModularPlusMinus { .. } => "modular-pm",
            NoiseSpec::ModularGeneral { .. } => "modular-general",
        }
    }

    /// Scalar corruption probability; `1 - weights[0]` for the general law.
    pub fn corruption(&self) -> f64 {
        match self {
            NoiseSpec::SignFlip { q } | NoiseSpec::ModularPlusMinus { q } => *q,
            NoiseSpec::ModularGeneral { weights } => 1.0 - weights.first().copied().unwrap_or(1.0),
        }
    }

    /// Gap `c = 1/2 - q`. For the general law, half the per-edge contraction.
    pub fn gap(&self, k: usize) -> f64 {
        match self {
            NoiseSpec::SignFlip { q } | NoiseSpec::ModularPlusMinus { q } => 0.5 - q,
            NoiseSpec::ModularGeneral { .. } => 0.5 * self.contraction(k),
        }
    }

    /// Distribution of the additive error on one edge, indexed by offset mod `k`.
    /// For the sign model (`k = 2`) offset 1 is a flip.
    pub fn step_distribution(&self, k: usize) -> Vec<f64> {
        let mut d = vec![0.0; k];
        match self {
            NoiseSpec::SignFlip { q } => {
                d[0] = 1.0 - q;
                d[1 % k] += q;
            }
            NoiseSpec::ModularPlusMinus { q } => {
                d[0] = 1.0 - q;
                d[1 % k] += q / 2.0;
                d[k - 1] += q / 2.0;
            }
            NoiseSpec::ModularGeneral { weights } => d.copy_from_slice(weights),
        }
        d
    }

    /// Largest modulus of a nontrivial Fourier coefficient of the step
    /// distribution. Along a path of length `l` the bias towards the true
    /// answer decays like `contraction^l`; for the sign model this is `1 - 2q`.
    pub fn contraction(&self, k: usize) -> f64 {
        let d = self.step_distribution(k);
        (1..k)
            .map(|j| {
                let (re, im) = d.iter().enumerate().fold((0.0, 0.0), |(re, im), (m, w)| {
                    let a = 2.0 * PI * (j * m) as f64 / k as f64;
                    (re + w * a.cos(), im + w * a.sin())
                });
                re.hypot(im)
            })
            .fold(0.0, f64::max)
    }
}

/// One answered query. `pair` is the stored orientation; `value` is the sign
/// (`+1`/`-1`) or the modular difference read from `pair.0` to `pair.1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryResponse {
    pub pair: (usize, usize),
    pub value: i32,
}

impl QueryResponse {
    /// Value read walking from `from` to the other endpoint. Modular values
    /// are negated when walking against the stored orientation.
    pub fn read_from(&self, from: usize, modulus: Option<u32>) -> i32 {
        match modulus {
            Some(k) if from == self.pair.1 => negate_mod(self.value, k),
            _ => self.value,
        }
    }
}

#[inline]
pub(crate) fn negate_mod(value: i32, k: u32) -> i32 {
    ((k as i32 - value) % k as i32 + k as i32) % k as i32
}

/// Answers pairwise queries about a fixed labeling.
///
/// Each unordered pair is answered once: the answer is a pure function of
/// the master seed and the pair, cached on first use, and stored with the
/// orientation `(min, max)`.
pub struct NoisyOracle<'a> {
    labeling: &'a Labeling,
    noise: NoiseSpec,
    seed: u64,
    cache: DashMap<(u32, u32), i32>,
}

impl<'a> NoisyOracle<'a> {
    pub fn new(labeling: &'a Labeling, noise: NoiseSpec, seed: u64) -> Result<Self> {
        noise.validate(labeling.k())?;
        Ok(Self {
            labeling,
            noise,
            seed,
            cache: DashMap::new(),
        })
    }

    pub fn labeling(&self) -> &Labeling {
        self.labeling
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    /// Number of distinct pairs answered so far.
    pub fn queries_answered(&self) -> usize {
        self.cache.len()
    }

    pub fn query(&self, x: usize, y: usize) -> Result<QueryResponse> {
        let n = self.labeling.n();
        if x == y {
            return Err(invalid(format!("cannot query item {x} against itself")));
        }
        if x >= n || y >= n {
            return Err(invalid(format!("pair ({x}, {y}) out of range for n = {n}")));
        }
        let (a, b) = (x.min(y), x.max(y));
        let value = *self
            .cache
            .entry((a as u32, b as u32))
            .or_insert_with(|| self.draw(a, b));
        Ok(QueryResponse { pair: (a, b), value })
    }

    fn draw(&self, a: usize, b: usize) -> i32 {
        let u = seed::uniform(self.seed, &[seed::TAG_ORACLE, a as u64, b as u64]);
        let (ga, gb) = (self.labeling.group(a), self.labeling.group(b));
        let k = self.labeling.k() as i32;
        let diff = (ga as i32 - gb as i32).rem_euclid(k);
        match &self.noise {
            NoiseSpec::SignFlip { q } => {
                let truth = if ga == gb { 1 } else { -1 };
                if u < *q {
                    -truth
                } else {
                    truth
                }
            }
            NoiseSpec::ModularPlusMinus { q } => {
                let stay = 1.0 - q;
                let off = if u < stay {
                    0
                } else if u < stay + q / 2.0 {
                    1
                } else {
                    -1
                };
                (diff + off).rem_euclid(k)
            }
            NoiseSpec::ModularGeneral { weights } => {
                let mut acc = 0.0;
                let j = weights
                    .iter()
                    .position(|w| {
                        acc += w;
                        u < acc
                    })
                    .unwrap_or_else(|| weights.iter().rposition(|w| *w > 0.0).unwrap_or(0));
                (diff + j as i32).rem_euclid(k)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_one_cluster_sizes() {
        let l = Labeling::generate(4, 2, Some(&[4, 0]), 1).unwrap();
        assert!(l.groups().iter().all(|&g| g == 0));
    }

    #[test]
    fn sizes_are_respected() {
        let l = Labeling::generate(6, 3, Some(&[2, 2, 2]), 5).unwrap();
        for j in 0..3 {
            assert_eq!(l.groups().iter().filter(|&&g| g == j).count(), 2);
        }
    }

    #[test]
    fn labeling_is_deterministic() {
        let a = Labeling::generate(1000, 2, None, 7).unwrap();
        let b = Labeling::generate(1000, 2, None, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Labeling::generate(1000, 2, None, 8).unwrap());
    }

    #[test]
    fn size_mismatch_is_rejected() {
        assert!(Labeling::generate(5, 2, Some(&[2, 2]), 0).is_err());
        assert!(Labeling::generate(5, 2, Some(&[5]), 0).is_err());
        assert!(Labeling::generate(0, 2, None, 0).is_err());
        assert!(Labeling::generate(3, 1, None, 0).is_err());
    }

    #[test]
    fn labeling_json_shape() {
        let l = Labeling::from_groups(3, vec![0, 2, 1]).unwrap();
        let s = serde_json::to_string(&l).unwrap();
        assert_eq!(s, r#"{"n":3,"k":3,"groups":[0,2,1]}"#);
        let back: Labeling = serde_json::from_str(&s).unwrap();
        assert_eq!(back, l);
        assert!(serde_json::from_str::<Labeling>(r#"{"n":2,"k":3,"groups":[0,2,1]}"#).is_err());
        assert!(serde_json::from_str::<Labeling>(r#"{"n":1,"k":2,"groups":[2]}"#).is_err());
    }

    #[test]
    fn noiseless_sign() {
        let l = Labeling::from_groups(2, vec![0, 0, 1]).unwrap();
        for s in 0..50 {
            let o = NoisyOracle::new(&l, NoiseSpec::SignFlip { q: 0.0 }, s).unwrap();
            assert_eq!(o.query(0, 1).unwrap().value, 1);
            assert_eq!(o.query(2, 0).unwrap().value, -1);
        }
    }

    #[test]
    fn noiseless_modular_difference() {
        let l = Labeling::from_groups(5, vec![3, 1]).unwrap();
        let o = NoisyOracle::new(&l, NoiseSpec::ModularPlusMinus { q: 0.0 }, 0).unwrap();
        let r = o.query(0, 1).unwrap();
        assert_eq!(r.value, 2);
        assert_eq!(r.read_from(1, Some(5)), 3);
        // reversed query returns the stored orientation
        let r2 = o.query(1, 0).unwrap();
        assert_eq!(r2, r);
    }

    #[test]
    fn self_query_rejected() {
        let l = Labeling::from_groups(2, vec![0, 1]).unwrap();
        let o = NoisyOracle::new(&l, NoiseSpec::SignFlip { q: 0.1 }, 0).unwrap();
        assert!(o.query(1, 1).is_err());
        assert!(o.query(0, 2).is_err());
    }

    #[test]
    fn responses_are_cached_and_order_free() {
        let l = Labeling::generate(50, 3, None, 1).unwrap();
        let noise = NoiseSpec::ModularPlusMinus { q: 0.4 };
        let a = NoisyOracle::new(&l, noise.clone(), 9).unwrap();
        let b = NoisyOracle::new(&l, noise, 9).unwrap();
        let forward: Vec<_> = (1..50).map(|y| a.query(0, y).unwrap()).collect();
        let backward: Vec<_> = (1..50).rev().map(|y| b.query(y, 0).unwrap()).collect();
        assert_eq!(forward, backward.into_iter().rev().collect::<Vec<_>>());
        assert_eq!(a.query(0, 7).unwrap(), a.query(7, 0).unwrap());
        assert_eq!(a.queries_answered(), 49);
    }

    #[test]
    fn sign_flip_rate_within_three_sigma() {
        // same-group pairs, 1e5 fresh pairs: +1 frequency ~ 0.8
        let n = 448; // C(448, 2) > 1e5
        let l = Labeling::from_groups(2, vec![0; n]).unwrap();
        let o = NoisyOracle::new(&l, NoiseSpec::SignFlip { q: 0.2 }, 11).unwrap();
        let m = 100_000usize;
        let mut plus = 0usize;
        let mut drawn = 0usize;
        'outer: for x in 0..n {
            for y in x + 1..n {
                if drawn == m {
                    break 'outer;
                }
                plus += usize::from(o.query(x, y).unwrap().value == 1);
                drawn += 1;
            }
        }
        assert_eq!(drawn, m);
        let sigma = (0.8 * 0.2 / m as f64).sqrt();
        let f = plus as f64 / m as f64;
        assert!((f - 0.8).abs() < 3.0 * sigma, "{f}");
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseSpec::SignFlip { q: 0.5 }.validate(2).is_err());
        assert!(NoiseSpec::SignFlip { q: -0.1 }.validate(2).is_err());
        assert!(NoiseSpec::ModularGeneral { weights: vec![0.5, 0.5] }.validate(3).is_err());
        assert!(NoiseSpec::ModularGeneral { weights: vec![0.5, 0.6, -0.1] }.validate(3).is_err());
        assert!(NoiseSpec::ModularGeneral { weights: vec![0.5, 0.3, 0.2] }.validate(3).is_ok());
    }

    #[test]
    fn contraction_of_sign_model() {
        let c = NoiseSpec::SignFlip { q: 0.2 }.contraction(2);
        assert!((c - 0.6).abs() < 1e-12);
        // k = 3 plus-minus: 1 - 3q/2
        let c = NoiseSpec::ModularPlusMinus { q: 0.2 }.contraction(3);
        assert!((c - 0.7).abs() < 1e-12);
    }
}
