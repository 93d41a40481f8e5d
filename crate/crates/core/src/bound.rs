//! Runtime monitor for the generalization-gap upper bound: per-round
//! convergence-rate terms, the recursively maintained unreliability term,
//! and estimation of the smoothness constants on the synthetic task.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::{self, SyntheticTask, TaskMode};
use crate::rng::Stream;

/// Constants of the smoothness / strong-convexity / gradient-bound
/// assumptions. `eta` is pinned to 1/epsilon when the bound is evaluated.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SmoothnessConstants {
    pub epsilon: f64,
    pub xi: f64,
    pub zeta1: f64,
    pub zeta2: f64,
    pub eta: f64,
}

impl SmoothnessConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.epsilon >= self.xi) {
            return Err(Error::InvalidParameter {
                name: "constants",
                reason: format!("need epsilon >= xi > 0, got epsilon={} xi={}", self.epsilon, self.xi),
            });
        }
        if self.zeta1 < 0.0 || self.zeta2 < 0.0 {
            return Err(Error::InvalidParameter {
                name: "constants",
                reason: "zeta1, zeta2 must be nonnegative".to_string(),
            });
        }
        Ok(())
    }
}

/// Per-module convergence-rate pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateTerms {
    pub a: f64,
    pub b: f64,
}

/// Global rate terms: for each module n,
/// A_n = (2 xi / eps)[1 - 8 zeta2 sum_k rho_k (1-lambda)(1-beta) - 4 zeta2 K - eps/2],
/// B_n = (2 zeta1 / eps)[K + 2 sum_k rho_k (1-lambda)(1-beta)].
///
/// `lambda` and `beta` are [module][ue].
pub fn rate_terms_global(
    consts: &SmoothnessConstants,
    rho: &[f64],
    lambda: &[Vec<f64>],
    beta: &[Vec<u8>],
) -> Result<Vec<RateTerms>> {
    let sum: f64 = rho.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadWeights { sum });
    }
    let k = rho.len() as f64;
    let mut out = Vec::with_capacity(lambda.len());
    for (lam_n, beta_n) in lambda.iter().zip(beta) {
        let s: f64 = rho
            .iter()
            .zip(lam_n.iter().zip(beta_n))
            .map(|(&r, (&l, &b))| r * (1.0 - l) * (1.0 - b as f64))
            .sum();
        out.push(rate_pair(consts, k, s));
    }
    Ok(out)
}

/// Per-UE rate terms: the same expressions with the rho-weighted sum replaced
/// by (1 - lambda_{n,k})(1 - beta_{n,k}).
pub fn rate_terms_per_ue(
    consts: &SmoothnessConstants,
    lambda_k: &[f64],
    beta_k: &[u8],
    k_ues: usize,
) -> Vec<RateTerms> {
    lambda_k
        .iter()
        .zip(beta_k)
        .map(|(&l, &b)| rate_pair(consts, k_ues as f64, (1.0 - l) * (1.0 - b as f64)))
        .collect()
}

fn rate_pair(consts: &SmoothnessConstants, k: f64, unreliable: f64) -> RateTerms {
    let a = 2.0 * consts.xi / consts.epsilon
        * (1.0 - 8.0 * consts.zeta2 * unreliable - 4.0 * consts.zeta2 * k - consts.epsilon / 2.0);
    let b = 2.0 * consts.zeta1 / consts.epsilon * (k + 2.0 * unreliable);
    RateTerms { a, b }
}

/// Running state of the bound across rounds. The double-product
/// unreliability term is maintained recursively:
/// T2(t) = [sum_n (1 - A_n^t)] * T2(t-1) + sum_n B_n^t, with T2(-1) = 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct BoundState {
    pub t2: f64,
    pub rounds: usize,
    pub history_a: Vec<Vec<f64>>,
    pub history_b: Vec<Vec<f64>>,
}

impl BoundState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fold one round of rate terms into the state. Returns true when every
    /// A_n of the round sits in the contraction interval (0, 1].
    pub fn push_round(&mut self, terms: &[RateTerms]) -> bool {
        let contraction: f64 = terms.iter().map(|t| 1.0 - t.a).sum();
        let b_sum: f64 = terms.iter().map(|t| t.b).sum();
        self.t2 = contraction * self.t2 + b_sum;
        self.history_a.push(terms.iter().map(|t| t.a).collect());
        self.history_b.push(terms.iter().map(|t| t.b).collect());
        self.rounds += 1;
        terms.iter().all(|t| t.a > 0.0 && t.a <= 1.0)
    }

    /// Literal O(t^2) evaluation of the double-product term, for cross-checks.
    pub fn t2_literal(&self) -> f64 {
        let t = self.rounds;
        let mut total = 0.0;
        for q in 0..t {
            let mut prod = 1.0;
            for p in (q + 1)..t {
                prod *= self.history_a[p].iter().map(|a| 1.0 - a).sum::<f64>();
            }
            total += prod * self.history_b[q].iter().sum::<f64>();
        }
        total
    }
}

/// The four bound terms and their sum for one round.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BoundTerms {
    pub term1: f64,
    pub term2: f64,
    pub term3: f64,
    pub term4: f64,
    pub total: f64,
    /// True when every A_n^t of this round lies in (0, 1]. Violations are
    /// reported, never clamped.
    pub a_in_range: bool,
}

/// Evaluate the full bound at round t. `current_gaps[k][n]` holds
/// F_k(delta_w_n^t) - F_k(w*_{k,t}) on the k-th test shard, and `a_t` the
/// round-t global rate terms already pushed into `state`.
#[allow(clippy::too_many_arguments)]
pub fn risk_gap_bound(
    state: &BoundState,
    consts: &SmoothnessConstants,
    rho: &[f64],
    a_t: &[RateTerms],
    current_gaps: &[Vec<f64>],
    d_te: &[f64],
    w0_norm_sq: f64,
) -> Result<BoundTerms> {
    if d_te.iter().any(|&d| d <= 0.0) {
        return Err(Error::InvalidParameter {
            name: "d_te",
            reason: "test-set sizes must be positive".to_string(),
        });
    }
    let n = a_t.len() as f64;
    let mut term1 = 0.0;
    let mut term3 = 0.0;
    for (k, &rk) in rho.iter().enumerate() {
        for (nn, terms) in a_t.iter().enumerate() {
            term1 += rk * (1.0 - terms.a) * current_gaps[k][nn] / n;
            term3 += consts.epsilon / n
                * rk
                * terms.a
                * (4.0 * consts.zeta1 / (consts.xi * consts.xi * d_te[k])).sqrt();
        }
    }
    let term2 = state.t2;
    let term4 = (consts.epsilon + 2.0) / 4.0 * rho.iter().sum::<f64>() * w0_norm_sq;
    let a_in_range = a_t.iter().all(|t| t.a > 0.0 && t.a <= 1.0);
    Ok(BoundTerms {
        term1,
        term2,
        term3,
        term4,
        total: term1 + term2 + term3 + term4,
        a_in_range,
    })
}

/// Make the assumption constants concrete for the synthetic task:
/// epsilon from the closed-form Hessian bound, xi from the ridge
/// coefficient, and zeta1 by sampling gradients at probe points with a 1.2
/// safety factor for a fixed zeta2.
pub fn estimate_constants(task: &SyntheticTask, zeta2: f64, rng: &mut Stream) -> SmoothnessConstants {
    let r_sq = task
        .dataset
        .samples
        .iter()
        .map(|s| s.x.norm_squared())
        .fold(0.0f64, f64::max);
    let epsilon = match task.mode {
        TaskMode::Quadratic => r_sq + task.ridge,
        TaskMode::Logistic => 0.25 * r_sq + task.ridge,
    };
    let xi = task.ridge;
    // Probe the region the trajectory can visit: a ball around the
    // foundation vector wide enough to cover every shard optimum.
    let radius = 2.0 * (task.foundation.norm() + 1.0);
    let all: Vec<&crate::fedsim::Sample> = task.dataset.samples.iter().collect();
    let mut worst: f64 = 0.0;
    for _ in 0..64 {
        let dir = DVector::from_fn(task.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let scale = radius * rng.gen::<f64>() / dir.norm().max(1e-12);
        let w = &task.foundation + dir * scale;
        let grad_f_sq = fedsim::batch_gradient(task.mode, task.ridge, &w, &all)
            .expect("dataset is nonempty")
            .norm_squared();
        for s in &task.dataset.samples {
            let g_sq = fedsim::sample_gradient(task.mode, task.ridge, &w, s).norm_squared();
            worst = worst.max(g_sq - zeta2 * grad_f_sq);
        }
    }
    let zeta1 = 1.2 * worst.max(0.0);
    SmoothnessConstants {
        epsilon,
        xi,
        zeta1,
        zeta2,
        eta: 1.0 / epsilon,
    }
}
