//! Closed-form probability calculators and the brute-force oracles that
//! check them.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Probability that a length-`len` path with independent flip probability
/// `q` per edge reports the true relation: `(1 + (1 - 2q)^len) / 2`.
pub fn path_agree_prob(q: f64, len: u32) -> f64 {
    (1.0 + (1.0 - 2.0 * q).powi(len as i32)) / 2.0
}

/// Same quantity by dynamic programming over the flip count parity.
pub fn parity_prob_oracle(q: f64, len: u32) -> f64 {
    let (mut even, mut odd) = (1.0, 0.0);
    for _ in 0..len {
        (even, odd) = (even * (1.0 - q) + odd * q, odd * (1.0 - q) + even * q);
    }
    even
}

/// Expected signed vote `N (2c)^len` of `N` independent length-`len` paths.
pub fn expected_majority_mean(paths: usize, gap: f64, len: u32) -> f64 {
    paths as f64 * (2.0 * gap).powi(len as i32)
}

/// Distribution of the accumulated noise after `t` steps of the walk on
/// `Z_k`, started at 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDistribution {
    pub k: usize,
    pub t: u32,
    /// `probs[j]` is the probability of sitting at offset `j`.
    pub probs: Vec<f64>,
    /// `probs[j] - 1/k`, computed without cancellation against `1/k`.
    pub excess: Vec<f64>,
}

impl ChainDistribution {
    /// Index of the largest entry, by `excess`.
    pub fn argmax(&self) -> usize {
        self.excess
            .iter()
            .enumerate()
            .fold(0, |best, (j, &e)| if e > self.excess[best] { j } else { best })
    }

    /// Whether offset 0 beats every other offset strictly.
    pub fn zero_is_strict_max(&self) -> bool {
        self.excess[1..].iter().all(|&e| self.excess[0] > e)
    }
}

/// Eigenvalues `1 - q + q cos(2 pi j / k)` of the lazy walk that stays put
/// with probability `1 - q` and steps by +1 or -1 with probability `q/2` each.
pub fn lazy_walk_eigenvalues(q: f64, k: usize) -> Vec<f64> {
    (0..k)
        .map(|j| 1.0 - q + q * (2.0 * PI * j as f64 / k as f64).cos())
        .collect()
}

/// `p_0m^t = 1/k + (1/k) sum_{j>=1} cos(2 pi j m / k) lambda_j^t`, evaluated
/// with real cosine sums.
pub fn chain_closed_form(q: f64, k: usize, t: u32) -> Result<ChainDistribution> {
    if k < 2 {
        return Err(invalid(format!("k = {k} must be >= 2")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("q = {q} outside [0, 1]")));
    }
    let lambda_t: Vec<f64> = lazy_walk_eigenvalues(q, k)
        .into_iter()
        .map(|l| l.powi(t as i32))
        .collect();
    let kf = k as f64;
    let excess: Vec<f64> = (0..k)
        .map(|m| {
            (1..k)
                .map(|j| (2.0 * PI * ((j * m) % k) as f64 / kf).cos() * lambda_t[j])
                .sum::<f64>()
                / kf
        })
        .collect();
    Ok(ChainDistribution {
        k,
        t,
        probs: excess.iter().map(|e| 1.0 / kf + e).collect(),
        excess,
    })
}

/// Step distribution `[1-q, q/2, 0, ..., 0, q/2]` of the lazy walk.
pub fn lazy_walk_step(q: f64, k: usize) -> Vec<f64> {
    let mut d = vec![0.0; k];
    d[0] = 1.0 - q;
    d[1 % k] += q / 2.0;
    d[k - 1] += q / 2.0;
    d
}

/// `t`-fold circular convolution of `step` starting from the point mass at 0.
pub fn chain_power_oracle(step: &[f64], t: u32) -> Result<ChainDistribution> {
    let k = step.len();
    if k < 2 {
        return Err(invalid("step distribution needs at least two states"));
    }
    if step.iter().any(|w| !(*w >= 0.0)) || (step.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid("step distribution must be nonnegative and sum to 1"));
    }
    let mut probs = vec![0.0; k];
    probs[0] = 1.0;
    for _ in 0..t {
        let mut next = vec![0.0; k];
        for (i, &p) in probs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (j, &w) in step.iter().enumerate() {
                next[(i + j) % k] += p * w;
            }
        }
        probs = next;
    }
    let kf = k as f64;
    Ok(ChainDistribution {
        k,
        t,
        excess: probs.iter().map(|p| p - 1.0 / kf).collect(),
        probs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluralityGap {
    /// `p_00^t - p_01^t`.
    pub exact: f64,
    /// `2 (1 - cos(2 pi / k)) (1 - q + q cos(2 pi / k))^t`.
    pub bound_expression: f64,
    pub exact_at_least_bound: bool,
}

/// Gap between staying at offset 0 and the runner-up offset 1. The closed
/// lower-bound expression is reported next to the exact value; it is not
/// a valid bound for every `(k, q, t)`.
pub fn plurality_gap(q: f64, k: usize, t: u32) -> Result<PluralityGap> {
    if k < 3 {
        return Err(invalid(format!("k = {k} must be >= 3")));
    }
    if !(0.0..=0.5).contains(&q) {
        return Err(invalid(format!("q = {q} outside [0, 1/2]")));
    }
    let lambda_t: Vec<f64> = lazy_walk_eigenvalues(q, k)
        .into_iter()
        .map(|l| l.powi(t as i32))
        .collect();
    let kf = k as f64;
    let exact = (1..k)
        .map(|j| (1.0 - (2.0 * PI * j as f64 / kf).cos()) * lambda_t[j])
        .sum::<f64>()
        / kf;
    let c = (2.0 * PI / kf).cos();
    let bound_expression = 2.0 * (1.0 - c) * (1.0 - q + q * c).powi(t as i32);
    Ok(PluralityGap {
        exact,
        bound_expression,
        exact_at_least_bound: exact >= bound_expression,
    })
}

/// Binary relative entropy `a ln(a/b) + (1-a) ln((1-a)/(1-b))`.
pub fn kl_divergence(a: f64, b: f64) -> Result<f64> {
    let open = |x: f64| x > 0.0 && x < 1.0;
    if !open(a) || !open(b) {
        return Err(invalid(format!("KL arguments ({a}, {b}) must lie in (0, 1)")));
    }
    Ok(a * (a / b).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - b)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TailForm {
    /// `P(sum >= (q+eps) r) <= exp(-D(q+eps || q) r / k)`.
    Kl,
    /// `P(sum <= (q-eps) r) <= exp(-D(q-eps || q) r / k)`.
    KlLower,
    /// `P(Y >= (1+eps) E[Y]) <= exp(-eps^2 E[Y] / (2k (1 + eps/3)))`.
    MultiplicativeUpper,
    /// `P(Y <= (1-eps) E[Y]) <= exp(-eps^2 E[Y] / (2k))`.
    MultiplicativeLower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub r: usize,
    pub k_read: usize,
    pub q: f64,
    pub epsilon: f64,
    pub form: TailForm,
    pub bound: f64,
}

/// Tail bound for the sum of `r` read-`k_read` indicators with mean `q`.
pub fn read_k_tail(r: usize, k_read: usize, q: f64, epsilon: f64, form: TailForm) -> Result<TailBound> {
    if r == 0 || k_read == 0 {
        return Err(invalid("r and k_read must be >= 1"));
    }
    if !(epsilon > 0.0) {
        return Err(invalid(format!("epsilon = {epsilon} must be positive")));
    }
    if !(q > 0.0 && q < 1.0) {
        return Err(invalid(format!("q = {q} must lie in (0, 1)")));
    }
    let (rf, kf) = (r as f64, k_read as f64);
    let mean = q * rf;
    let exponent = match form {
        TailForm::Kl => kl_divergence(q + epsilon, q)? * rf / kf,
        TailForm::KlLower => kl_divergence(q - epsilon, q)? * rf / kf,
        TailForm::MultiplicativeUpper => epsilon * epsilon * mean / (2.0 * kf * (1.0 + epsilon / 3.0)),
        TailForm::MultiplicativeLower => {
            if epsilon > 1.0 {
                return Err(invalid("lower multiplicative form needs epsilon <= 1"));
            }
            epsilon * epsilon * mean / (2.0 * kf)
        }
    };
    Ok(TailBound {
        r,
        k_read,
        q,
        epsilon,
        form,
        bound: (-exponent).exp().clamp(0.0, 1.0),
    })
}

/// Read-k indicator families used to test the tail bounds empirically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ReadKFamily {
    /// `Y_j = X_{j / k}`: each base variable is copied into `k` indicators.
    Blocks,
    /// `Y_j = S_{j / k} xor P_j`: a shared bit read `k` times plus a private bit.
    SharedXor,
}

/// Fraction of `trials` simulated families whose indicator count reaches
/// `(q + eps) r`.
pub fn simulate_read_k_upper_tail<R: Rng>(
    family: ReadKFamily,
    r: usize,
    k_read: usize,
    q: f64,
    epsilon: f64,
    trials: usize,
    rng: &mut R,
) -> f64 {
    let threshold = (q + epsilon) * r as f64;
    // shared bit probability for the xor family; the private bit makes up the rest
    let s = q * 2.0 / 3.0;
    let private = (q - s) / (1.0 - 2.0 * s);
    let mut hits = 0usize;
    for _ in 0..trials {
        let mut count = 0usize;
        let mut shared = false;
        for j in 0..r {
            if j % k_read == 0 {
                shared = rng.gen::<f64>() < match family {
                    ReadKFamily::Blocks => q,
                    ReadKFamily::SharedXor => s,
                };
            }
            let y = match family {
                ReadKFamily::Blocks => shared,
                ReadKFamily::SharedXor => shared ^ (rng.gen::<f64>() < private),
            };
            count += usize::from(y);
        }
        if count as f64 >= threshold - 1e-9 {
            hits += 1;
        }
    }
    hits as f64 / trials as f64
}
