//! The per-round control loop: alternate bandwidth allocation and power
//! control to a fixed point, update the switching decisions, then execute
//! one federated round and record metrics.

use nalgebra::DVector;
use rand::Rng;

use crate::bound::{self, BoundState, BoundTerms, RateTerms, SmoothnessConstants};
use crate::channel::{self, LinkParams, DELTA_MIN};
use crate::config::{ExperimentConfig, InterferenceModel};
use crate::energy::{self, ComputeProfile, PayloadSizes};
use crate::error::{Error, Result};
use crate::fedsim::{self, Adapter, AdapterSet, OptimalReference, SyntheticTask, TaskSpec};
use crate::metrics::{MetricsRow, MetricsTable};
use crate::radio::{self, AllocationInput, AllocationParams};
use crate::rng::{indexed_substream, substream};
use crate::switching::{self, SwitchState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// Full pipeline: alternating radio optimization plus primal-dual switching.
    Proposed,
    /// One common module, every UE always subscribed; radio pipeline unchanged.
    VanillaFedLora,
    /// Switching by the per-round cost only: the participation dual stays at zero.
    Greedy,
    /// Subscriptions frozen after the first round.
    OneShot,
    /// Transmit power pinned at the cap; everything else as proposed.
    MaxPower,
}

impl Strategy {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "proposed" => Ok(Strategy::Proposed),
            "vanilla-fedlora" | "vanilla" => Ok(Strategy::VanillaFedLora),
            "greedy" => Ok(Strategy::Greedy),
            "one-shot" => Ok(Strategy::OneShot),
            "max-power" => Ok(Strategy::MaxPower),
            other => Err(Error::Config(format!(
                "unknown strategy `{other}` (proposed|vanilla-fedlora|greedy|one-shot|max-power)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Proposed => "proposed",
            Strategy::VanillaFedLora => "vanilla-fedlora",
            Strategy::Greedy => "greedy",
            Strategy::OneShot => "one-shot",
            Strategy::MaxPower => "max-power",
        }
    }
}

/// The optimizer's output for one round.
#[derive(Debug, Clone)]
pub struct RoundDecision {
    /// Subscriptions, [module][ue].
    pub beta: Vec<Vec<u8>>,
    pub powers: Vec<f64>,
    /// Bandwidth fractions, [module][ue].
    pub delta: Vec<Vec<f64>>,
    pub e_t: f64,
}

#[derive(Debug, Clone)]
pub struct RoundMetrics {
    pub phi: f64,
    pub bound: BoundTerms,
    pub rate_terms: Vec<RateTerms>,
    pub per_ue_energy_j: Vec<f64>,
    pub energy_total_j: f64,
    /// Uplink part of the total (transmit power times actual airtime).
    pub comm_energy_j: f64,
    pub success_rate: f64,
    /// Total relaxed objective after each inner alternation of Step 1.
    pub qhat_trajectory: Vec<f64>,
    pub inner_iters: usize,
    pub flags: Vec<String>,
}

/// Everything that persists across rounds of one seeded experiment.
pub struct ExperimentState {
    pub cfg: ExperimentConfig,
    pub strategy: Strategy,
    pub seed: u64,
    pub n_modules: usize,
    pub s_t: usize,
    pub task: SyntheticTask,
    pub refs: OptimalReference,
    pub consts: SmoothnessConstants,
    pub adapters: AdapterSet,
    pub bound: BoundState,
    pub links: Vec<LinkParams>,
    pub profile: ComputeProfile,
    /// Per-module payloads (gradient sizes ramp with g_dw_module_ratio).
    pub sizes: Vec<PayloadSizes>,
    pub switch: Vec<SwitchState>,
    /// Current round's subscriptions, [module][ue].
    pub beta: Vec<Vec<u8>>,
    pub powers: Vec<f64>,
    /// Rounds subscribed so far, [module][ue]; audited against v_n at the end.
    pub participation: Vec<Vec<usize>>,
    pub j_integral: f64,
    pub w0_norm_sq: f64,
    pub round: usize,
}

/// Spatial average of the interferer field's aggregate power, restricted to
/// interferers farther out than the UE's own link (the unrestricted mean
/// diverges for alpha > 2 as interferers approach the gNB).
pub fn expected_interference(link: &LinkParams, field_radius: f64, p_max: f64) -> f64 {
    let mean_power = 0.5 * p_max;
    link.phi_density * std::f64::consts::PI * mean_power
        * (link.d_k.powf(2.0 - link.alpha) - field_radius.powf(2.0 - link.alpha))
        / (link.alpha - 2.0)
}

pub fn init_experiment(cfg: &ExperimentConfig, seed: u64) -> Result<ExperimentState> {
    cfg.validate()?;
    let strategy = Strategy::from_name(&cfg.strategy)?;
    let (n_modules, s_t) = if strategy == Strategy::VanillaFedLora {
        (1, 1)
    } else {
        (cfg.n_modules, cfg.s_t)
    };
    let spec = TaskSpec {
        mode: cfg.task_mode,
        dim: cfg.dim,
        n_samples: cfg.n_samples,
        n_classes: cfg.n_classes,
        feature_norm_sq_bound: cfg.feature_norm_sq_bound,
        ridge: cfg.ridge,
        foundation_scale: cfg.foundation_scale,
        test_fraction: cfg.test_fraction,
    };
    let task = fedsim::build_task(&spec, cfg.k_ues, cfg.dirichlet_concentration, &mut substream(seed, "task"))?;
    let refs = fedsim::solve_references(&task)?;
    let consts = bound::estimate_constants(&task, cfg.zeta2, &mut substream(seed, "probe"));
    consts.validate()?;
    let adapters = AdapterSet {
        adapters: (0..n_modules)
            .map(|n| {
                if cfg.adapter_rank == 0 {
                    Adapter::zero_direct(cfg.dim)
                } else {
                    Adapter::zero_low_rank(cfg.dim, cfg.adapter_rank, &mut indexed_substream(seed, "adapter", n))
                }
            })
            .collect(),
        round: 0,
    };
    let mut geo = substream(seed, "geometry");
    let links: Vec<LinkParams> = (0..cfg.k_ues)
        .map(|_| LinkParams {
            d_k: geo.gen_range(cfg.d_min_m..=cfg.d_max_m),
            alpha: cfg.alpha_pathloss,
            theta: cfg.theta,
            phi_density: cfg.phi_density_per_m2,
            bandwidth_hz: cfg.bandwidth_hz,
            noise_density: cfg.noise_density_w_per_hz,
        })
        .collect();
    for link in &links {
        link.validate()?;
    }
    let profile = ComputeProfile {
        f_k: cfg.f_k_hz,
        varrho_k: cfg.varrho_js2_per_cycle,
        m_k: cfg.m_k_cycles_per_bit,
        tau: cfg.tau_local_iters,
    };
    profile.validate()?;
    let sizes: Vec<PayloadSizes> = (0..n_modules)
        .map(|n| {
            let ramp = if n_modules == 1 {
                1.0
            } else {
                1.0 + (cfg.g_dw_module_ratio - 1.0) * n as f64 / (n_modules - 1) as f64
            };
            PayloadSizes { g_w: cfg.g_w_bits, g_dw: cfg.g_dw_bits * ramp }
        })
        .collect();
    for s in &sizes {
        s.validate()?;
    }
    // First-round subscriptions: the cap forbids subscribing everything when
    // s_t < N, so each UE starts on one uniformly random module instead.
    let mut beta = vec![vec![0u8; cfg.k_ues]; n_modules];
    let mut init = substream(seed, "beta_init");
    for k in 0..cfg.k_ues {
        if s_t < n_modules {
            beta[init.gen_range(0..n_modules)][k] = 1;
        } else {
            for row in beta.iter_mut() {
                row[k] = 1;
            }
        }
    }
    let switch = (0..cfg.k_ues)
        .map(|k| {
            let mut st = SwitchState::new(n_modules, s_t, vec![cfg.v_n; n_modules], cfg.varsigma);
            st.beta_hat = (0..n_modules).map(|n| beta[n][k] as f64).collect();
            st
        })
        .collect();
    let j_integral = channel::interference_integral(cfg.alpha_pathloss, cfg.theta)?;
    let w0_norm_sq = task.foundation.norm_squared();
    Ok(ExperimentState {
        cfg: cfg.clone(),
        strategy,
        seed,
        n_modules,
        s_t,
        task,
        refs,
        consts,
        adapters,
        bound: BoundState::new(),
        links,
        profile,
        sizes,
        switch,
        beta,
        powers: vec![cfg.p_max_w; cfg.k_ues],
        participation: vec![vec![0; cfg.k_ues]; n_modules],
        j_integral,
        w0_norm_sq,
        round: 0,
    })
}

pub fn run_round(state: &mut ExperimentState) -> Result<(RoundDecision, RoundMetrics)> {
    let t = state.round;
    run_round_inner(state).map_err(|e| e.in_round(t))
}

fn run_round_inner(state: &mut ExperimentState) -> Result<(RoundDecision, RoundMetrics)> {
    let cfg = state.cfg.clone();
    let t = state.round;
    let k_ues = cfg.k_ues;
    let n_modules = state.n_modules;
    let mut flags: Vec<String> = Vec::new();

    // This round's fine-tuning batches fix the data volumes D_k^t used by
    // the aggregation weights, the energy model, and the switching costs.
    let batches: Vec<Vec<usize>> = (0..k_ues)
        .map(|k| fedsim::sample_batch(&state.task.shards[k], cfg.batch_fraction, &mut indexed_substream(state.seed, "batch", t * k_ues + k)))
        .collect();
    let volumes: Vec<f64> = batches.iter().map(|b| b.len() as f64).collect();
    let volume_total: f64 = volumes.iter().sum();
    let rho: Vec<f64> = volumes.iter().map(|&v| v / volume_total).collect();

    let realizations: Vec<channel::ChannelRealization> = (0..k_ues)
        .map(|k| channel::sample_realization(&state.links[k], cfg.field_radius_m, cfg.p_max_w, &mut indexed_substream(state.seed, "channel", t * k_ues + k)))
        .collect::<Result<_>>()?;
    let unit_signal: Vec<f64> = (0..k_ues)
        .map(|k| realizations[k].h_k_sq * state.links[k].d_k.powf(-state.links[k].alpha))
        .collect();
    let interference: Vec<f64> = (0..k_ues)
        .map(|k| match cfg.allocator_interference {
            InterferenceModel::Sampled => realizations[k].interference_power(state.links[k].alpha),
            InterferenceModel::Expected => expected_interference(&state.links[k], cfg.field_radius_m, cfg.p_max_w),
        })
        .collect();

    let b_prev: Vec<f64> = state
        .bound
        .history_b
        .last()
        .cloned()
        .unwrap_or_else(|| vec![0.0; n_modules]);
    let g_dw: Vec<Vec<f64>> = (0..n_modules)
        .map(|n| vec![state.sizes[n].g_dw; k_ues])
        .collect();

    // Step 1: alternate bandwidth allocation and power control until the
    // relaxed objective stalls for every UE.
    if state.strategy == Strategy::MaxPower {
        state.powers = vec![cfg.p_max_w; k_ues];
    }
    let any_scheduled = state.beta.iter().any(|row| row.contains(&1));
    let mut alloc = None;
    let mut qhat_trajectory: Vec<f64> = Vec::new();
    let mut q_prev: Vec<f64> = Vec::new();
    let mut q_th: Vec<f64> = Vec::new();
    let mut inner_iters = 0;
    if !any_scheduled {
        // Every UE sat out: no uploads, no bandwidth to split. The round
        // still executes (switching can re-subscribe next round).
        flags.push("nothing_scheduled".to_string());
        alloc = Some(radio::BandwidthAllocation {
            delta: vec![vec![DELTA_MIN; k_ues]; n_modules],
            e_t: cfg.e_min_s,
            iterations: 0,
            converged: true,
            clip_events: 0,
        });
    }
    for e in 1..=if any_scheduled { cfg.e_max_inner } else { 0 } {
        inner_iters = e;
        let input = AllocationInput {
            beta: &state.beta,
            powers: &state.powers,
            unit_signal: &unit_signal,
            interference: &interference,
            g_dw: &g_dw,
            bandwidth_hz: cfg.bandwidth_hz,
            noise_density: cfg.noise_density_w_per_hz,
        };
        let e_input = if cfg.e_input_s > 0.0 {
            cfg.e_input_s
        } else {
            radio::default_e_input(&input).max(2.0 * cfg.e_min_s)
        };
        let params = AllocationParams {
            e_input,
            e_min: cfg.e_min_s,
            omega: cfg.omega,
            j_max: cfg.j_max,
        };
        let a = radio::allocate_bandwidth(&input, &params)?;
        if state.strategy != Strategy::MaxPower {
            for k in 0..k_ues {
                let beta_k: Vec<u8> = (0..n_modules).map(|n| state.beta[n][k]).collect();
                let delta_k: Vec<f64> = (0..n_modules).map(|n| a.delta[n][k]).collect();
                state.powers[k] = radio::optimize_power(
                    &beta_k,
                    &delta_k,
                    &b_prev,
                    &state.consts,
                    cfg.mu,
                    a.e_t,
                    &state.links[k],
                    state.j_integral,
                    cfg.p_min_w,
                    cfg.p_max_w,
                )?;
            }
        }
        let q_now: Vec<f64> = (0..k_ues)
            .map(|k| {
                let beta_k: Vec<u8> = (0..n_modules).map(|n| state.beta[n][k]).collect();
                let delta_k: Vec<f64> = (0..n_modules).map(|n| a.delta[n][k]).collect();
                radio::q_hat(
                    state.powers[k],
                    &beta_k,
                    &delta_k,
                    &b_prev,
                    &state.consts,
                    cfg.mu,
                    a.e_t,
                    &state.links[k],
                    state.j_integral,
                    radio::LambdaModel::Full,
                )
            })
            .collect();
        let total: f64 = q_now.iter().sum();
        if let Some(&last) = qhat_trajectory.last() {
            if total > last + 1e-9 * last.abs().max(1e-12) {
                flags.push("qhat_increase".to_string());
            }
        }
        qhat_trajectory.push(total);
        let converged_inner = e > 1 && (0..k_ues).all(|k| (q_now[k] - q_prev[k]).abs() <= q_th[k]);
        if e == 1 {
            q_th = q_now.iter().map(|q| cfg.q_th_rel * q.abs().max(1e-300)).collect();
        }
        q_prev = q_now;
        if !a.converged {
            // The bracket collapsing onto the delay floor is the E >= E_min
            // constraint binding, not a search failure.
            if (a.e_t - cfg.e_min_s) / cfg.e_min_s < 1e-3 {
                if !flags.iter().any(|f| f == "e_min_bound") {
                    flags.push("e_min_bound".to_string());
                }
            } else if !flags.iter().any(|f| f == "alloc_nonconverged") {
                flags.push("alloc_nonconverged".to_string());
            }
        }
        alloc = Some(a);
        if converged_inner {
            break;
        }
    }
    let mut alloc = alloc.expect("at least one alternation ran");

    // Keep the total-bandwidth constraint exact even when the search ran out
    // of iterations mid-bracket.
    let scheduled: f64 = (0..n_modules)
        .map(|n| (0..k_ues).filter(|&k| state.beta[n][k] == 1).map(|k| alloc.delta[n][k]).sum::<f64>())
        .sum();
    if scheduled > 1.0 {
        for row in alloc.delta.iter_mut() {
            for d in row.iter_mut() {
                *d = (*d / scheduled).max(DELTA_MIN);
            }
        }
        flags.push("delta_rescaled".to_string());
    }

    // Success probabilities of the final decision, for the switching
    // gradients and the bound monitor.
    let lambda: Vec<Vec<f64>> = (0..n_modules)
        .map(|n| {
            (0..k_ues)
                .map(|k| {
                    channel::success_probability_with_integral(
                        state.powers[k],
                        alloc.delta[n][k].max(DELTA_MIN),
                        &state.links[k],
                        state.j_integral,
                    )
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    // Step 2: switching update; produces the subscriptions of the next round.
    let beta_next: Vec<Vec<u8>> = match state.strategy {
        Strategy::VanillaFedLora => vec![vec![1u8; k_ues]; 1],
        // One-shot optimizes switching once, in the first round, then keeps that assignment.
        Strategy::OneShot if t > 0 => state.beta.clone(),
        _ => {
            let mut next = vec![vec![0u8; k_ues]; n_modules];
            for k in 0..k_ues {
                let lambda_k: Vec<f64> = (0..n_modules).map(|n| lambda[n][k]).collect();
                let cost_k: Vec<f64> = (0..n_modules)
                    .map(|n| energy::relaxed_energy(&state.profile, &state.sizes[n], volumes[k], state.powers[k], alloc.e_t))
                    .collect::<Result<_>>()?;
                let grad = switching::switching_cost_gradient(&b_prev, &lambda_k, &state.consts, cfg.mu, &cost_k);
                if state.strategy != Strategy::Greedy {
                    switching::dual_update(&mut state.switch[k]);
                }
                switching::primal_step(&mut state.switch[k], &grad);
                let rounded = switching::round_beta(
                    &state.switch[k].beta_hat,
                    state.s_t,
                    &mut indexed_substream(state.seed, "rounding", t * k_ues + k),
                )?;
                for n in 0..n_modules {
                    next[n][k] = rounded[n];
                }
            }
            next
        }
    };

    // Execute the federated round under the current subscriptions.
    let mut gamma = vec![vec![0u8; k_ues]; n_modules];
    let mut per_ue_energy = vec![0.0; k_ues];
    let mut comm_energy_j = 0.0;
    let mut subscribed = 0usize;
    let mut successes = 0usize;
    #[allow(clippy::needless_range_loop)]
    for n in 0..n_modules {
        for k in 0..k_ues {
            if state.beta[n][k] != 1 {
                continue;
            }
            subscribed += 1;
            let sinr = channel::sinr(&realizations[k], state.powers[k], alloc.delta[n][k], &state.links[k])?;
            gamma[n][k] = channel::success_indicator(sinr, cfg.theta);
            successes += gamma[n][k] as usize;
            per_ue_energy[k] += energy::round_energy(
                &state.profile,
                &state.sizes[n],
                volumes[k],
                state.powers[k],
                alloc.delta[n][k],
                sinr,
                &state.links[k],
            )?;
            comm_energy_j += state.powers[k]
                * energy::transmission_delay(&state.sizes[n], alloc.delta[n][k], sinr, &state.links[k]);
            state.participation[n][k] += 1;
        }
    }
    let energy_total_j: f64 = per_ue_energy.iter().sum();
    let success_rate = if subscribed == 0 { 1.0 } else { successes as f64 / subscribed as f64 };

    // Pre-update per-module risk gaps feed the bound's contraction term.
    let current_gaps: Vec<Vec<f64>> = (0..k_ues)
        .map(|k| {
            let shard = state.task.shard_samples(&state.task.test_shards[k]);
            state
                .adapters
                .adapters
                .iter()
                .map(|a| {
                    fedsim::batch_risk(
                        state.task.mode,
                        state.task.ridge,
                        &(&state.task.foundation + a.delta_w()),
                        &shard,
                    ) - state.refs.risks[k]
                })
                .collect()
        })
        .collect();

    #[allow(clippy::needless_range_loop)]
    for n in 0..n_modules {
        let grads: Vec<Option<DVector<f64>>> = (0..k_ues)
            .map(|k| {
                if state.beta[n][k] == 1 {
                    let batch = state.task.shard_samples(&batches[k]);
                    fedsim::local_gradient(&state.task, &state.adapters.adapters[n], &batch).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let beta_row: Vec<u8> = (0..k_ues).map(|k| state.beta[n][k]).collect();
        let gamma_row: Vec<u8> = (0..k_ues).map(|k| gamma[n][k]).collect();
        let applied = fedsim::aggregate(
            &mut state.adapters.adapters[n],
            &grads,
            &volumes,
            &beta_row,
            &gamma_row,
            cfg.eta,
        )?;
        if !applied {
            flags.push(format!("module_{n}_skipped"));
        }
    }
    state.adapters.round = t + 1;

    let rate_terms = bound::rate_terms_global(&state.consts, &rho, &lambda, &state.beta)?;
    let a_ok = state.bound.push_round(&rate_terms);
    if !a_ok {
        flags.push("a_out_of_range".to_string());
    }
    let d_te: Vec<f64> = state.task.test_shards.iter().map(|s| s.len() as f64).collect();
    let bound_terms = bound::risk_gap_bound(
        &state.bound,
        &state.consts,
        &rho,
        &rate_terms,
        &current_gaps,
        &d_te,
        state.w0_norm_sq,
    )?;
    let phi = fedsim::measured_phi(&state.task, &state.adapters, &state.refs, &rho);

    state.beta = beta_next.clone();
    state.round = t + 1;

    // Long-term participation audit on the final round.
    if state.round == cfg.rounds && cfg.rounds > 0 && state.strategy == Strategy::Proposed {
        let total = cfg.rounds as f64;
        let shortfall = state
            .participation
            .iter()
            .any(|row| row.iter().any(|&c| (c as f64) / total < cfg.v_n - 1e-12));
        if shortfall {
            flags.push("participation_shortfall".to_string());
        }
    }

    let decision = RoundDecision {
        beta: beta_next,
        powers: state.powers.clone(),
        delta: alloc.delta,
        e_t: alloc.e_t,
    };
    debug_assert!(decision.powers.iter().all(|&p| p >= cfg.p_min_w && p <= cfg.p_max_w));
    let metrics = RoundMetrics {
        phi,
        bound: bound_terms,
        rate_terms,
        per_ue_energy_j: per_ue_energy,
        energy_total_j,
        comm_energy_j,
        success_rate,
        qhat_trajectory,
        inner_iters,
        flags,
    };
    Ok((decision, metrics))
}

/// Run one seed for the configured number of rounds.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<MetricsTable> {
    let mut state = init_experiment(cfg, seed)?;
    let hash = cfg.hash();
    let mut rows = Vec::with_capacity(cfg.rounds);
    for t in 0..cfg.rounds {
        let (decision, m) = run_round(&mut state)?;
        rows.push(MetricsRow {
            round: t,
            seed,
            strategy: state.strategy.name().to_string(),
            phi_measured: m.phi,
            bound_total: m.bound.total,
            bound_term1: m.bound.term1,
            bound_term2: m.bound.term2,
            bound_term3: m.bound.term3,
            bound_term4: m.bound.term4,
            energy_total_j: m.energy_total_j,
            success_rate: m.success_rate,
            e_t_s: decision.e_t,
            inner_iters: m.inner_iters,
            flags: m.flags,
            a_modules: m.rate_terms.iter().map(|r| r.a).collect(),
            b_modules: m.rate_terms.iter().map(|r| r.b).collect(),
            config_hash: hash.clone(),
        });
    }
    Ok(MetricsTable { rows })
}

/// Run every configured seed sequentially and merge the tables.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    Strategy::from_name(&cfg.strategy)?;
    let tables = cfg
        .seeds
        .iter()
        .map(|&seed| run_seed(cfg, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsTable::merge(tables))
}
