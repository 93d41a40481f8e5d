//! Online per-UE model-switching: the relaxed linear cost, dual ascent on
//! the long-term participation constraint, the linearized primal step, and
//! randomized rounding back to binary subscriptions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bound::SmoothnessConstants;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// Primal/dual state of one UE's switching optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SwitchState {
    /// Fractional subscription vector, entries in [0, 1].
    pub beta_hat: Vec<f64>,
    /// Lagrange multipliers for the participation constraints, >= 0.
    pub dual: Vec<f64>,
    /// Dual step size.
    pub varsigma: f64,
    /// Per-round subscription cap.
    pub s_t: usize,
    /// Participation-rate floor per module.
    pub v: Vec<f64>,
}

impl SwitchState {
    pub fn new(n_modules: usize, s_t: usize, v: Vec<f64>, varsigma: f64) -> Self {
        SwitchState {
            beta_hat: vec![0.0; n_modules],
            dual: vec![0.0; n_modules],
            varsigma,
            s_t,
            v,
        }
    }
}

/// Relaxed per-round switching cost Q of a fractional subscription vector:
/// (16 xi zeta2 / eps) sum_n B_n (1-lambda_n)(1-beta_n)
/// + (4 zeta1 / eps) sum_n (1-lambda_n)(1-beta_n)
/// + mu sum_n beta_n C_n.
pub fn switching_cost(
    beta: &[f64],
    b_prev: &[f64],
    lambda_nk: &[f64],
    consts: &SmoothnessConstants,
    mu: f64,
    energy: &[f64],
) -> f64 {
    let c_b = 16.0 * consts.xi * consts.zeta2 / consts.epsilon;
    let c_1 = 4.0 * consts.zeta1 / consts.epsilon;
    beta.iter()
        .zip(b_prev.iter().zip(lambda_nk.iter().zip(energy)))
        .map(|(&bn, (&bp, (&lam, &c)))| {
            let miss = (1.0 - lam) * (1.0 - bn);
            c_b * bp * miss + c_1 * miss + mu * bn * c
        })
        .sum()
}

/// Gradient of [`switching_cost`] in beta; the cost is linear so this does
/// not depend on the evaluation point.
pub fn switching_cost_gradient(
    b_prev: &[f64],
    lambda_nk: &[f64],
    consts: &SmoothnessConstants,
    mu: f64,
    energy: &[f64],
) -> Vec<f64> {
    let c_b = 16.0 * consts.xi * consts.zeta2 / consts.epsilon;
    let c_1 = 4.0 * consts.zeta1 / consts.epsilon;
    b_prev
        .iter()
        .zip(lambda_nk.iter().zip(energy))
        .map(|(&bp, (&lam, &c))| -(c_b * bp + c_1) * (1.0 - lam) + mu * c)
        .collect()
}

/// Dual ascent with projection onto the nonnegative orthant:
/// dual' = max(0, dual + varsigma * z) with slack z = v - beta_hat.
pub fn dual_update(state: &mut SwitchState) {
    for n in 0..state.dual.len() {
        let z = state.v[n] - state.beta_hat[n];
        state.dual[n] = (state.dual[n] + state.varsigma * z).max(0.0);
    }
}

/// Linearized primal step: minimize <grad_q, beta> + <dual, v - beta> over
/// the box [0,1]^N with sum beta <= s_t. The objective is linear with
/// coefficients c_n = grad_q_n - dual_n, so the optimum subscribes the (at
/// most s_t) strictly-negative coefficients, most negative first, ties broken
/// by lowest module index.
pub fn primal_step(state: &mut SwitchState, grad_q: &[f64]) {
    let n = grad_q.len();
    let mut order: Vec<usize> = (0..n).collect();
    let coeff: Vec<f64> = grad_q.iter().zip(&state.dual).map(|(&g, &d)| g - d).collect();
    order.sort_by(|&i, &j| coeff[i].partial_cmp(&coeff[j]).unwrap().then(i.cmp(&j)));
    let mut beta = vec![0.0; n];
    for &i in order.iter().take(state.s_t) {
        if coeff[i] < 0.0 {
            beta[i] = 1.0;
        }
    }
    state.beta_hat = beta;
}

/// Randomized rounding of a fractional subscription vector.
///
/// s_t = 1: categorical choice of one module with probability beta_n (or no
/// module with the remaining mass). s_t > 1: pairwise dependent rounding that
/// preserves each marginal and the cardinality cap.
pub fn round_beta(beta_hat: &[f64], s_t: usize, rng: &mut Stream) -> Result<Vec<u8>> {
    let total: f64 = beta_hat.iter().sum();
    if total > s_t as f64 + 1e-9 {
        return Err(Error::InvalidParameter {
            name: "beta_hat",
            reason: format!("fractional mass {total} exceeds the cap {s_t}"),
        });
    }
    if beta_hat.iter().all(|&b| b <= 1e-12 || b >= 1.0 - 1e-12) {
        return Ok(beta_hat.iter().map(|&b| u8::from(b >= 0.5)).collect());
    }
    if s_t == 1 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let mut acc = 0.0;
        let mut out = vec![0u8; beta_hat.len()];
        for (n, &b) in beta_hat.iter().enumerate() {
            acc += b;
            if u < acc {
                out[n] = 1;
                return Ok(out);
            }
        }
        return Ok(out);
    }
    // Pairwise rounding: repeatedly resolve two fractional entries while
    // keeping the sum fixed and each marginal intact.
    let mut b: Vec<f64> = beta_hat.to_vec();
    let frac = |x: f64| x > 1e-12 && x < 1.0 - 1e-12;
    loop {
        let fracs: Vec<usize> = (0..b.len()).filter(|&i| frac(b[i])).collect();
        if fracs.len() < 2 {
            break;
        }
        let (i, j) = (fracs[0], fracs[1]);
        let up_i = (1.0 - b[i]).min(b[j]);
        let up_j = b[i].min(1.0 - b[j]);
        let p = up_j / (up_i + up_j);
        if rng.gen_range(0.0..1.0) < p {
            b[i] += up_i;
            b[j] -= up_i;
        } else {
            b[i] -= up_j;
            b[j] += up_j;
        }
    }
    let mut out = vec![0u8; b.len()];
    for (n, &x) in b.iter().enumerate() {
        if x >= 1.0 - 1e-12 {
            out[n] = 1;
        } else if frac(x) {
            out[n] = u8::from(rng.gen_range(0.0..1.0) < x);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn consts() -> SmoothnessConstants {
        SmoothnessConstants { epsilon: 2.0, xi: 1.0, zeta1: 1.0, zeta2: 0.05, eta: 0.5 }
    }

    #[test]
    fn cost_all_ones_is_pure_energy() {
        let c = consts();
        let beta = vec![1.0; 3];
        let energy = vec![2.0, 3.0, 4.0];
        let q = switching_cost(&beta, &[1.0; 3], &[0.5; 3], &c, 0.1, &energy);
        assert!((q - 0.1 * 9.0).abs() < 1e-14);
    }

    #[test]
    fn cost_all_zeros_is_pure_unreliability() {
        let c = consts();
        let beta = vec![0.0; 2];
        let b_prev = vec![2.0, 3.0];
        let lam = vec![0.25, 0.5];
        let q = switching_cost(&beta, &b_prev, &lam, &c, 123.0, &[1.0, 1.0]);
        let expected = 16.0 * 0.05 / 2.0 * (2.0 * 0.75 + 3.0 * 0.5) + 4.0 / 2.0 * (0.75 + 0.5);
        assert!((q - expected).abs() < 1e-13);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = consts();
        let b_prev = vec![1.5, 0.7, 2.2];
        let lam = vec![0.2, 0.9, 0.6];
        let energy = vec![1.0, 5.0, 0.3];
        let mu = 0.4;
        let g = switching_cost_gradient(&b_prev, &lam, &c, mu, &energy);
        let beta = vec![0.3, 0.6, 0.1];
        let h = 1e-6;
        for n in 0..3 {
            let mut bp = beta.clone();
            let mut bm = beta.clone();
            bp[n] += h;
            bm[n] -= h;
            let fd = (switching_cost(&bp, &b_prev, &lam, &c, mu, &energy)
                - switching_cost(&bm, &b_prev, &lam, &c, mu, &energy))
                / (2.0 * h);
            assert!((fd - g[n]).abs() < 1e-7, "component {n}: fd {fd} vs {g:?}");
        }
    }

    #[test]
    fn dual_update_hand_cases() {
        let mut s = SwitchState::new(1, 1, vec![0.1], 1.0);
        s.beta_hat = vec![0.1];
        s.dual = vec![0.5];
        dual_update(&mut s);
        assert_eq!(s.dual[0], 0.5, "zero slack leaves the dual unchanged");

        let mut s = SwitchState::new(1, 1, vec![0.1], 1.0);
        s.beta_hat = vec![1.0];
        dual_update(&mut s);
        assert_eq!(s.dual[0], 0.0, "projection clips at zero");

        let mut s = SwitchState::new(1, 1, vec![0.1], 1.0);
        s.beta_hat = vec![0.0];
        dual_update(&mut s);
        assert!((s.dual[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn primal_step_selects_most_negative() {
        let mut s = SwitchState::new(3, 1, vec![0.1; 3], 0.1);
        primal_step(&mut s, &[-3.0, -1.0, 2.0]);
        assert_eq!(s.beta_hat, vec![1.0, 0.0, 0.0]);
        let mut s = SwitchState::new(3, 2, vec![0.1; 3], 0.1);
        primal_step(&mut s, &[-3.0, -1.0, 2.0]);
        assert_eq!(s.beta_hat, vec![1.0, 1.0, 0.0]);
        let mut s = SwitchState::new(3, 2, vec![0.1; 3], 0.1);
        primal_step(&mut s, &[3.0, 1.0, 2.0]);
        assert_eq!(s.beta_hat, vec![0.0, 0.0, 0.0], "no profitable subscription");
    }

    #[test]
    fn primal_step_matches_enumeration() {
        let mut rng = substream(20, "switch");
        for trial in 0..1000 {
            let n = 2 + rng.gen_range(0..9usize);
            let s_t = 1 + rng.gen_range(0..3usize);
            let grad: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let dual: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
            let mut state = SwitchState::new(n, s_t, vec![0.1; n], 0.1);
            state.dual = dual.clone();
            primal_step(&mut state, &grad);
            let obj = |beta: &[f64]| -> f64 {
                beta.iter().zip(grad.iter().zip(&dual)).map(|(&b, (&g, &d))| (g - d) * b).sum()
            };
            // Brute force over every binary vector with sum <= s_t. The
            // objective is linear so a binary optimum exists.
            let mut best = f64::INFINITY;
            for mask in 0u32..(1 << n) {
                if mask.count_ones() as usize > s_t {
                    continue;
                }
                let beta: Vec<f64> = (0..n).map(|i| ((mask >> i) & 1) as f64).collect();
                best = best.min(obj(&beta));
            }
            let got = obj(&state.beta_hat);
            assert!((got - best).abs() < 1e-12, "trial {trial}: {got} vs brute force {best}");
        }
    }

    #[test]
    fn rounding_fixed_points() {
        let mut rng = substream(21, "switch");
        assert_eq!(round_beta(&[0.0, 1.0, 0.0], 1, &mut rng).unwrap(), vec![0, 1, 0]);
        assert_eq!(round_beta(&[0.0, 0.0], 1, &mut rng).unwrap(), vec![0, 0]);
        assert!(round_beta(&[0.9, 0.9], 1, &mut rng).is_err());
    }

    #[test]
    fn rounding_marginals_single_slot() {
        let mut rng = substream(22, "switch");
        let beta = [0.5, 0.5, 0.0, 0.0];
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let b = round_beta(&beta, 1, &mut rng).unwrap();
            assert!(b.iter().map(|&x| x as usize).sum::<usize>() <= 1, "never both");
            for (i, &x) in b.iter().enumerate() {
                counts[i] += x as usize;
            }
        }
        let sigma = (0.25f64 / draws as f64).sqrt();
        for (i, &c) in counts.iter().enumerate().take(2) {
            let p = c as f64 / draws as f64;
            assert!((p - 0.5).abs() < 3.0 * sigma, "module {i} marginal {p}");
        }
        assert_eq!(counts[2] + counts[3], 0);
    }

    #[test]
    fn rounding_marginals_and_cap_multi_slot() {
        let mut rng = substream(23, "switch");
        let beta = [0.7, 0.4, 0.6, 0.3];
        let s_t = 2;
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            let b = round_beta(&beta, s_t, &mut rng).unwrap();
            assert!(b.iter().map(|&x| x as usize).sum::<usize>() <= s_t);
            for (i, &x) in b.iter().enumerate() {
                counts[i] += x as usize;
            }
        }
        for (i, &target) in beta.iter().enumerate() {
            let p = counts[i] as f64 / draws as f64;
            let sigma = (target * (1.0 - target) / draws as f64).sqrt();
            assert!((p - target).abs() < 4.0 * sigma, "module {i}: {p} vs {target}");
        }
    }

    #[test]
    fn duals_stay_nonnegative() {
        let mut rng = substream(24, "switch");
        let mut s = SwitchState::new(4, 2, vec![0.2; 4], 0.3);
        for _ in 0..500 {
            s.beta_hat = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
            dual_update(&mut s);
            assert!(s.dual.iter().all(|&d| d >= 0.0));
        }
    }

    #[test]
    fn long_run_participation_floor() {
        // Closed loop with stationary costs: the primal-dual iteration must
        // keep average participation of every module near its floor.
        let mut rng = substream(25, "switch");
        let n = 4;
        let v = vec![0.1; n];
        let mut state = SwitchState::new(n, 1, v.clone(), 0.1);
        // Module 0 is strictly cheapest; without duals it would win always.
        let grad = vec![-1.0, -0.2, -0.1, 0.4];
        let t_rounds = 2000;
        let mut totals = vec![0.0; n];
        for _ in 0..t_rounds {
            primal_step(&mut state, &grad);
            let b = round_beta(&state.beta_hat, 1, &mut rng).unwrap();
            for i in 0..n {
                totals[i] += b[i] as f64;
            }
            // Dual reacts to the realized subscription.
            state.beta_hat = b.iter().map(|&x| x as f64).collect();
            dual_update(&mut state);
        }
        for i in 0..n {
            let rate = totals[i] / t_rounds as f64;
            assert!(rate >= 0.9 * v[i], "module {i} participation {rate} below 0.9 * {}", v[i]);
        }
    }
}
