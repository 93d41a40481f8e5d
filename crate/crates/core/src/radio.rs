//! Wireless resource management: the Lambert W function, the implicit
//! per-link bandwidth equation, the two-tier binary search that spends the
//! whole band, and transmit power control.

use serde::{Deserialize, Serialize};

use crate::bound::SmoothnessConstants;
use crate::channel::{self, LinkParams, DELTA_MIN};
use crate::error::{Error, Result};
use crate::numeric;

const INV_E: f64 = 0.367_879_441_171_442_33;

/// Principal branch W0 of the Lambert W function, by Halley iteration from a
/// regime-dependent initial guess (branch-point series near -1/e, the value
/// itself near 0, log-based for large arguments).
pub fn lambert_w(x: f64) -> Result<f64> {
    if x < -INV_E || x.is_nan() {
        return Err(Error::LambertDomain { x });
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let guess = if x < -0.25 {
        branch_point_series(x, 1.0)
    } else if x < 1.0 {
        // w ~ x (1 - x + 3/2 x^2) for small |x|
        x * (1.0 - x + 1.5 * x * x)
    } else {
        let l = x.ln();
        l - l.ln().max(0.0)
    };
    halley(x, guess)
}

/// Secondary real branch W_{-1}, defined on [-1/e, 0).
pub fn lambert_w_m1(x: f64) -> Result<f64> {
    if !(-INV_E..0.0).contains(&x) || x.is_nan() {
        return Err(Error::LambertDomain { x });
    }
    let guess = if x < -0.25 {
        branch_point_series(x, -1.0)
    } else {
        let l = (-x).ln();
        l - (-l).ln()
    };
    halley(x, guess)
}

fn branch_point_series(x: f64, sign: f64) -> f64 {
    let p = sign * (2.0 * (std::f64::consts::E * x + 1.0)).max(0.0).sqrt();
    -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
}

fn halley(x: f64, mut w: f64) -> Result<f64> {
    for _ in 0..60 {
        let ew = w.exp();
        let f = w * ew - x;
        if f == 0.0 {
            return Ok(w);
        }
        let denom = ew * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0);
        let step = f / denom;
        let next = w - step;
        if (next - w).abs() <= 1e-16 * (1.0 + next.abs()) {
            return Ok(next);
        }
        w = next;
    }
    let residual = (w * w.exp() - x).abs();
    if residual <= 1e-12 * x.abs().max(1e-300) {
        Ok(w)
    } else {
        Err(Error::NoConvergence(format!(
            "lambert W stalled at w = {w} for x = {x} (residual {residual:e})"
        )))
    }
}

/// Root of the implicit bandwidth equation for one link and one delay
/// target. `varphi` and its Lambert W value (on whichever real branch solves
/// the equation) are returned together.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VarphiSolution {
    pub varphi: f64,
    /// W(varphi) on the solving branch; negative for every feasible link.
    pub lw: f64,
}

/// Solve the implicit equation
///   varphi = [ G N0 ln2 / (E S) - (I/S) W(varphi) ] (varphi / W(varphi) - 1)
/// for the link with received signal power `signal` (|h|^2 P d^-alpha) and
/// aggregate interference `interference`.
///
/// Internally this is solved in w = W(varphi): substituting varphi = w e^w
/// turns the fixed point into psi(w) = w e^w - (c - r w)(e^w - 1) = 0 with
/// c = G N0 ln2 / (E S) and r = I/S, which has a unique root on (-inf, 0)
/// whenever the target delay is attainable.
pub fn solve_varphi(
    e_target: f64,
    signal: f64,
    interference: f64,
    g_dw: f64,
    noise_density: f64,
) -> Result<VarphiSolution> {
    if e_target <= 0.0 || signal <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "solve_varphi",
            reason: format!("need e_target > 0 and signal > 0, got {e_target}, {signal}"),
        });
    }
    let c = g_dw * noise_density * std::f64::consts::LN_2 / (e_target * signal);
    let r = interference / signal;
    if c >= 1.0 {
        // ln(1+x) < x for x > 0: no bandwidth fraction can reach the target.
        return Err(Error::InfeasibleDelay {
            e_target,
            floor: g_dw * noise_density * std::f64::consts::LN_2 / signal,
        });
    }
    let psi = |w: f64| w * w.exp() - (c - r * w) * w.exp_m1();
    // psi < 0 just below zero (psi ~ w (1 - c)) and psi > 0 for very
    // negative w; expand geometrically until the sign flips.
    let mut hi = -1e-12;
    let mut lo = hi;
    let mut found = false;
    for _ in 0..80 {
        lo *= 2.0;
        if psi(lo) > 0.0 {
            found = true;
            break;
        }
        hi = lo;
    }
    if !found {
        return Err(Error::VarphiBracket(format!(
            "no sign change of the implicit equation down to w = {lo} (c = {c:e}, r = {r:e})"
        )));
    }
    let dpsi = |w: f64| {
        let ew = w.exp();
        ew * (1.0 + w) + r * w.exp_m1() - (c - r * w) * ew
    };
    let w = numeric::newton_bisect(psi, dpsi, lo, hi, 1e-15, 200)?;
    let sol = VarphiSolution { varphi: w * w.exp(), lw: w };
    let residual = varphi_residual(&sol, c, r);
    if residual > 1e-10 {
        return Err(Error::VarphiBracket(format!(
            "root accepted with residual {residual:e} > 1e-10 (w = {w}, c = {c:e}, r = {r:e})"
        )));
    }
    Ok(sol)
}

/// Absolute residual of the fixed-point map evaluated at a candidate solution.
pub fn varphi_residual(sol: &VarphiSolution, c_over_s: f64, interference_over_s: f64) -> f64 {
    let rhs = (c_over_s - interference_over_s * sol.lw) * (sol.varphi / sol.lw - 1.0);
    (sol.varphi - rhs).abs()
}

#[derive(Debug, Clone, Copy)]
pub struct DeltaOutcome {
    /// Usable fraction, clipped to [DELTA_MIN, 1].
    pub delta: f64,
    /// Unclipped solution of the closed form; the binary search brackets on
    /// this so that saturated links still register as over-allocation.
    pub raw: f64,
    pub clipped: bool,
}

/// Closed-form optimal bandwidth fraction for one link:
/// delta = S / (W N0 (e^{-W(varphi)} - 1)) - I / (W N0), clipped to
/// [DELTA_MIN, 1] with a clip flag.
pub fn optimal_delta(
    sol: &VarphiSolution,
    signal: f64,
    interference: f64,
    bandwidth_hz: f64,
    noise_density: f64,
) -> Result<DeltaOutcome> {
    if sol.varphi == 0.0 {
        return Err(Error::InvalidParameter {
            name: "varphi",
            reason: "varphi = 0 makes e^{-W(varphi)} - 1 singular".to_string(),
        });
    }
    let denom = bandwidth_hz * noise_density * (-sol.lw).exp_m1();
    let raw = signal / denom - interference / (bandwidth_hz * noise_density);
    let delta = raw.clamp(DELTA_MIN, 1.0);
    Ok(DeltaOutcome { delta, raw, clipped: (raw - delta).abs() > 0.0 })
}

/// Inputs of one bandwidth-allocation call. Matrices are [module][ue].
#[derive(Debug, Clone)]
pub struct AllocationInput<'a> {
    pub beta: &'a [Vec<u8>],
    /// Per-UE transmit powers.
    pub powers: &'a [f64],
    /// Per-UE |h|^2 d^-alpha (signal power per watt of transmit power).
    pub unit_signal: &'a [f64],
    /// Per-UE aggregate interference power.
    pub interference: &'a [f64],
    /// Gradient payload bits per (module, ue).
    pub g_dw: &'a [Vec<f64>],
    pub bandwidth_hz: f64,
    pub noise_density: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct AllocationParams {
    pub e_input: f64,
    pub e_min: f64,
    pub omega: f64,
    pub j_max: usize,
}

#[derive(Debug, Clone)]
pub struct BandwidthAllocation {
    /// Bandwidth fractions per (module, ue); tier 1 solves every link.
    pub delta: Vec<Vec<f64>>,
    pub e_t: f64,
    pub iterations: usize,
    pub converged: bool,
    pub clip_events: usize,
}

/// Two-tier binary search on the common delay target: tier 1 solves every
/// link's bandwidth share for the current target, tier 2 sums the scheduled
/// shares and bisects the target until the band is spent to within omega.
pub fn allocate_bandwidth(input: &AllocationInput, params: &AllocationParams) -> Result<BandwidthAllocation> {
    let n_modules = input.beta.len();
    let k_ues = input.powers.len();
    if !input.beta.iter().any(|row| row.contains(&1)) {
        return Err(Error::NothingScheduled);
    }
    if params.e_min >= params.e_input {
        return Err(Error::InvalidParameter {
            name: "e_input",
            reason: format!("need e_min {} < e_input {}", params.e_min, params.e_input),
        });
    }
    let mut e_up = params.e_input;
    let mut e_down = params.e_min;
    let mut e_t = 0.5 * (e_up + e_down);
    let mut delta = vec![vec![0.0; k_ues]; n_modules];
    let mut clip_events = 0;
    let mut converged = false;
    let mut iterations = 0;
    // With equal payloads across modules the per-link solutions of one UE
    // coincide, so tier 1 can solve each UE once.
    let uniform_payloads = input.g_dw.iter().all(|row| row == &input.g_dw[0]);
    let mut raw_k = vec![0.0; k_ues];
    let mut clipped_k = vec![false; k_ues];
    for j in 1..=params.j_max {
        iterations = j;
        let mut allocated = 0.0;
        for n in 0..n_modules {
            for k in 0..k_ues {
                if uniform_payloads && n > 0 {
                    delta[n][k] = delta[0][k];
                    if clipped_k[k] {
                        clip_events += 1;
                    }
                    if input.beta[n][k] == 1 {
                        allocated += raw_k[k];
                    }
                    continue;
                }
                let signal = input.powers[k] * input.unit_signal[k];
                let outcome = match solve_varphi(
                    e_t,
                    signal,
                    input.interference[k],
                    input.g_dw[n][k],
                    input.noise_density,
                ) {
                    Ok(sol) => optimal_delta(
                        &sol,
                        signal,
                        input.interference[k],
                        input.bandwidth_hz,
                        input.noise_density,
                    )?,
                    // Target below the link's delay floor: even the whole
                    // band is not enough, so saturate and let the bracket
                    // raise the target.
                    Err(Error::InfeasibleDelay { .. }) => DeltaOutcome { delta: 1.0, raw: 2.0, clipped: true },
                    Err(e) => return Err(e),
                };
                if outcome.clipped {
                    clip_events += 1;
                }
                delta[n][k] = outcome.delta;
                raw_k[k] = outcome.raw;
                clipped_k[k] = outcome.clipped;
                if input.beta[n][k] == 1 {
                    allocated += outcome.raw;
                }
            }
        }
        if allocated >= 1.0 - params.omega && allocated <= 1.0 {
            converged = true;
            break;
        }
        if allocated > 1.0 {
            e_down = e_t;
            e_t = 0.5 * (e_t + e_up);
        } else {
            e_up = e_t;
            e_t = 0.5 * (e_t + e_down);
        }
    }
    Ok(BandwidthAllocation { delta, e_t, iterations, converged, clip_events })
}

/// Default search ceiling for the delay target: ten times the slowest
/// link's full-band delay.
pub fn default_e_input(input: &AllocationInput) -> f64 {
    let mut worst: f64 = 0.0;
    for n in 0..input.beta.len() {
        for k in 0..input.powers.len() {
            let signal = input.powers[k] * input.unit_signal[k];
            let sinr = signal / (input.interference[k] + input.bandwidth_hz * input.noise_density);
            let delay = input.g_dw[n][k] / (input.bandwidth_hz * (1.0 + sinr).log2());
            worst = worst.max(delay);
        }
    }
    10.0 * worst
}

/// How the success probability inside the power objective depends on P.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaModel {
    /// Both exponent factors of the closed form.
    Full,
    /// Only the noise exponent; this is the model whose derivative the
    /// analytic power gradient matches exactly.
    NoiseOnly,
}

/// Relaxed per-UE objective for power control:
/// (16 xi zeta2/eps) sum_n B_n (1-lambda_n)(1-beta_n)
/// + (4 zeta1/eps) sum_n (1-lambda_n)(1-beta_n) + mu sum_n beta_n P E_t.
#[allow(clippy::too_many_arguments)]
pub fn q_hat(
    p_k: f64,
    beta_k: &[u8],
    delta_k: &[f64],
    b_prev: &[f64],
    consts: &SmoothnessConstants,
    mu: f64,
    e_t: f64,
    link: &LinkParams,
    j_integral: f64,
    model: LambdaModel,
) -> f64 {
    let c_b = 16.0 * consts.xi * consts.zeta2 / consts.epsilon;
    let c_1 = 4.0 * consts.zeta1 / consts.epsilon;
    let mut q = 0.0;
    for n in 0..beta_k.len() {
        let delta = delta_k[n].max(DELTA_MIN);
        let lambda = match model {
            LambdaModel::Full => {
                channel::success_probability_with_integral(p_k, delta, link, j_integral)
                    .expect("validated power and delta")
            }
            LambdaModel::NoiseOnly => (-channel::noise_exponent(p_k, delta, link)).exp(),
        };
        if beta_k[n] == 0 {
            q += (c_b * b_prev[n] + c_1) * (1.0 - lambda);
        } else {
            q += mu * p_k * e_t;
        }
    }
    q
}

/// Analytic first derivative of the power objective:
/// - sum_n (1-beta_n)(16 xi zeta2/eps B_n + 4 zeta1/eps)
///     * (a_n / P^2) e^{-a_n / P}
/// + mu sum_n beta_n E_t,
///
/// with a_n the noise exponent at unit power.
#[allow(clippy::too_many_arguments)]
pub fn power_gradient(
    p_k: f64,
    beta_k: &[u8],
    delta_k: &[f64],
    b_prev: &[f64],
    consts: &SmoothnessConstants,
    mu: f64,
    e_t: f64,
    link: &LinkParams,
) -> f64 {
    let c_b = 16.0 * consts.xi * consts.zeta2 / consts.epsilon;
    let c_1 = 4.0 * consts.zeta1 / consts.epsilon;
    let mut g = 0.0;
    for n in 0..beta_k.len() {
        if beta_k[n] == 0 {
            let a = channel::noise_exponent(1.0, delta_k[n].max(DELTA_MIN), link);
            g -= (c_b * b_prev[n] + c_1) * a / (p_k * p_k) * (-a / p_k).exp();
        } else {
            g += mu * e_t;
        }
    }
    g
}

/// Minimize the power objective on [p_min, p_max]: a coarse scan localizes
/// the basin (the objective is not unimodal in general), then golden-section
/// refines it.
#[allow(clippy::too_many_arguments)]
pub fn optimize_power(
    beta_k: &[u8],
    delta_k: &[f64],
    b_prev: &[f64],
    consts: &SmoothnessConstants,
    mu: f64,
    e_t: f64,
    link: &LinkParams,
    j_integral: f64,
    p_min: f64,
    p_max: f64,
) -> Result<f64> {
    if !(p_min > 0.0 && p_min < p_max) {
        return Err(Error::InvalidParameter {
            name: "power_bounds",
            reason: format!("need 0 < p_min < p_max, got [{p_min}, {p_max}]"),
        });
    }
    let f = |p: f64| {
        q_hat(p, beta_k, delta_k, b_prev, consts, mu, e_t, link, j_integral, LambdaModel::Full)
    };
    const SCAN: usize = 64;
    let step = (p_max - p_min) / (SCAN - 1) as f64;
    let mut best_i = 0;
    let mut best_v = f64::INFINITY;
    for i in 0..SCAN {
        let v = f(p_min + step * i as f64);
        if v < best_v {
            best_v = v;
            best_i = i;
        }
    }
    let lo = p_min + step * best_i.saturating_sub(1) as f64;
    let hi = (p_min + step * (best_i + 1) as f64).min(p_max);
    Ok(numeric::golden_section(f, lo, hi, 1e-10).clamp(p_min, p_max))
}
