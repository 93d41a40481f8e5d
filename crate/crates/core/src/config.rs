//! Experiment configuration: a flat key/value file (TOML syntax, no nesting)
//! with units spelled out in key names, strict unknown-key rejection, and a
//! content hash so outputs from different configurations never collide.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fedsim::TaskMode;

/// Which interference figure the bandwidth allocator is given. The sampled
/// variant hands it the current round's realized interference power; the
/// expected variant uses the spatial average of the interferer field outside
/// the UE's own link distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterferenceModel {
    Sampled,
    Expected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    // Population and schedule.
    pub k_ues: usize,
    pub n_modules: usize,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub strategy: String,
    pub output_csv: String,

    // Compute and payloads.
    pub f_k_hz: f64,
    pub varrho_js2_per_cycle: f64,
    pub m_k_cycles_per_bit: f64,
    pub tau_local_iters: u32,
    pub g_w_bits: f64,
    pub g_dw_bits: f64,
    /// Largest-to-smallest gradient payload across modules (module payloads
    /// ramp linearly from g_dw_bits up to g_dw_bits * ratio); 1 = uniform.
    pub g_dw_module_ratio: f64,

    // Channel geometry.
    pub alpha_pathloss: f64,
    /// SINR threshold, linear.
    pub theta: f64,
    pub phi_density_per_m2: f64,
    pub field_radius_m: f64,
    pub d_min_m: f64,
    pub d_max_m: f64,
    pub bandwidth_hz: f64,
    /// Noise power density, W/Hz.
    pub noise_density_w_per_hz: f64,

    // Radio optimization.
    pub p_min_w: f64,
    pub p_max_w: f64,
    pub e_min_s: f64,
    /// Upper end of the delay-target search; 0 means "derive from the
    /// slowest link" at run time.
    pub e_input_s: f64,
    pub omega: f64,
    pub j_max: usize,
    pub q_th_rel: f64,
    pub e_max_inner: usize,
    pub allocator_interference: InterferenceModel,

    // Switching optimization.
    pub mu: f64,
    pub varsigma: f64,
    pub v_n: f64,
    pub s_t: usize,

    // Learning task.
    pub task_mode: TaskMode,
    pub dim: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub feature_norm_sq_bound: f64,
    pub ridge: f64,
    pub foundation_scale: f64,
    pub test_fraction: f64,
    pub dirichlet_concentration: f64,
    pub batch_fraction: f64,
    pub eta: f64,
    pub zeta2: f64,
    /// Adapter rank; 0 means direct (full-dimension) parameterization.
    pub adapter_rank: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            k_ues: 20,
            n_modules: 4,
            rounds: 100,
            seeds: vec![1],
            strategy: "proposed".to_string(),
            output_csv: "metrics.csv".to_string(),
            f_k_hz: 1.5e9,
            varrho_js2_per_cycle: 1e-27,
            m_k_cycles_per_bit: 737.5,
            tau_local_iters: 4,
            g_w_bits: 1e6,
            g_dw_bits: 1e5,
            g_dw_module_ratio: 1.0,
            alpha_pathloss: 3.8,
            theta: 10f64.powf(-0.5),
            phi_density_per_m2: 1e-5,
            field_radius_m: 1000.0,
            d_min_m: 50.0,
            d_max_m: 150.0,
            bandwidth_hz: 1e9,
            noise_density_w_per_hz: dbm_per_hz_to_w(-162.0),
            p_min_w: 1e-3,
            p_max_w: 0.2,
            e_min_s: 5e-3,
            e_input_s: 0.0,
            omega: 1e-3,
            j_max: 60,
            q_th_rel: 1e-4,
            e_max_inner: 20,
            allocator_interference: InterferenceModel::Sampled,
            // Weighs joules against risk-gap units; the synthetic task's
            // per-round energies sit around tens of joules, so 0.01 keeps
            // the two objective parts comparable.
            mu: 0.01,
            varsigma: 0.1,
            v_n: 0.1,
            s_t: 1,
            task_mode: TaskMode::Logistic,
            dim: 8,
            n_samples: 2000,
            n_classes: 4,
            feature_norm_sq_bound: 0.36,
            ridge: 0.8,
            foundation_scale: 0.1,
            test_fraction: 0.2,
            dirichlet_concentration: 0.3,
            batch_fraction: 0.1,
            eta: 0.5,
            zeta2: 0.0,
            adapter_rank: 0,
        }
    }
}

pub fn dbm_per_hz_to_w(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn bad_key(key: &str, reason: impl Into<String>) -> Error {
    Error::Config(format!("key `{key}`: {}", reason.into()))
}

fn as_f64(key: &str, value: &toml::Value) -> Result<f64> {
    match value {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        other => Err(bad_key(key, format!("expected a number, got {other}"))),
    }
}

fn as_usize(key: &str, value: &toml::Value) -> Result<usize> {
    match value {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        other => Err(bad_key(key, format!("expected a non-negative integer, got {other}"))),
    }
}

fn as_str<'v>(key: &str, value: &'v toml::Value) -> Result<&'v str> {
    value
        .as_str()
        .ok_or_else(|| bad_key(key, format!("expected a string, got {value}")))
}

impl ExperimentConfig {
    /// Parse a flat key/value document on top of the defaults. An empty
    /// document is a valid configuration. Unknown keys are rejected by name.
    pub fn parse(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("syntax: {e}")))?;
        let mut cfg = ExperimentConfig::default();
        let mut theta_seen = false;
        let mut noise_seen = false;
        for (key, value) in &table {
            match key.as_str() {
                "k_ues" => cfg.k_ues = as_usize(key, value)?,
                "n_modules" => cfg.n_modules = as_usize(key, value)?,
                "rounds" => cfg.rounds = as_usize(key, value)?,
                "seeds" => {
                    let arr = value
                        .as_array()
                        .ok_or_else(|| bad_key(key, "expected an array of integers"))?;
                    cfg.seeds = arr
                        .iter()
                        .map(|v| {
                            v.as_integer()
                                .filter(|&i| i >= 0)
                                .map(|i| i as u64)
                                .ok_or_else(|| bad_key(key, "seeds must be non-negative integers"))
                        })
                        .collect::<Result<Vec<u64>>>()?;
                }
                "strategy" => cfg.strategy = as_str(key, value)?.to_string(),
                "output_csv" => cfg.output_csv = as_str(key, value)?.to_string(),
                "f_k_hz" => cfg.f_k_hz = as_f64(key, value)?,
                "varrho_js2_per_cycle" => cfg.varrho_js2_per_cycle = as_f64(key, value)?,
                "m_k_cycles_per_bit" => cfg.m_k_cycles_per_bit = as_f64(key, value)?,
                "tau_local_iters" => cfg.tau_local_iters = as_usize(key, value)? as u32,
                "g_w_bits" => cfg.g_w_bits = as_f64(key, value)?,
                "g_dw_bits" => cfg.g_dw_bits = as_f64(key, value)?,
                "g_dw_module_ratio" => cfg.g_dw_module_ratio = as_f64(key, value)?,
                "alpha_pathloss" => cfg.alpha_pathloss = as_f64(key, value)?,
                "theta_db" => {
                    if theta_seen {
                        return Err(bad_key(key, "theta given twice (theta and theta_db)"));
                    }
                    theta_seen = true;
                    cfg.theta = db_to_linear(as_f64(key, value)?);
                }
                "theta" => {
                    if theta_seen {
                        return Err(bad_key(key, "theta given twice (theta and theta_db)"));
                    }
                    theta_seen = true;
                    cfg.theta = as_f64(key, value)?;
                }
                "phi_density_per_m2" => cfg.phi_density_per_m2 = as_f64(key, value)?,
                "field_radius_m" => cfg.field_radius_m = as_f64(key, value)?,
                "d_min_m" => cfg.d_min_m = as_f64(key, value)?,
                "d_max_m" => cfg.d_max_m = as_f64(key, value)?,
                "bandwidth_hz" => cfg.bandwidth_hz = as_f64(key, value)?,
                "n0_dbm_per_hz" => {
                    if noise_seen {
                        return Err(bad_key(key, "noise density given twice"));
                    }
                    noise_seen = true;
                    cfg.noise_density_w_per_hz = dbm_per_hz_to_w(as_f64(key, value)?);
                }
                "noise_density_w_per_hz" => {
                    if noise_seen {
                        return Err(bad_key(key, "noise density given twice"));
                    }
                    noise_seen = true;
                    cfg.noise_density_w_per_hz = as_f64(key, value)?;
                }
                "p_min_w" => cfg.p_min_w = as_f64(key, value)?,
                "p_max_w" => cfg.p_max_w = as_f64(key, value)?,
                "e_min_s" => cfg.e_min_s = as_f64(key, value)?,
                "e_input_s" => cfg.e_input_s = as_f64(key, value)?,
                "omega" => cfg.omega = as_f64(key, value)?,
                "j_max" => cfg.j_max = as_usize(key, value)?,
                "q_th_rel" => cfg.q_th_rel = as_f64(key, value)?,
                "e_max_inner" => cfg.e_max_inner = as_usize(key, value)?,
                "allocator_interference" => {
                    cfg.allocator_interference = match as_str(key, value)? {
                        "sampled" => InterferenceModel::Sampled,
                        "expected" => InterferenceModel::Expected,
                        other => {
                            return Err(bad_key(key, format!("unknown variant `{other}` (sampled|expected)")))
                        }
                    }
                }
                "mu" => cfg.mu = as_f64(key, value)?,
                "varsigma" => cfg.varsigma = as_f64(key, value)?,
                "v_n" => cfg.v_n = as_f64(key, value)?,
                "s_t" => cfg.s_t = as_usize(key, value)?,
                "task_mode" => {
                    cfg.task_mode = match as_str(key, value)? {
                        "quadratic" => TaskMode::Quadratic,
                        "logistic" => TaskMode::Logistic,
                        other => {
                            return Err(bad_key(key, format!("unknown variant `{other}` (quadratic|logistic)")))
                        }
                    }
                }
                "dim" => cfg.dim = as_usize(key, value)?,
                "n_samples" => cfg.n_samples = as_usize(key, value)?,
                "n_classes" => cfg.n_classes = as_usize(key, value)?,
                "feature_norm_sq_bound" => cfg.feature_norm_sq_bound = as_f64(key, value)?,
                "ridge" => cfg.ridge = as_f64(key, value)?,
                "foundation_scale" => cfg.foundation_scale = as_f64(key, value)?,
                "test_fraction" => cfg.test_fraction = as_f64(key, value)?,
                "dirichlet_concentration" => cfg.dirichlet_concentration = as_f64(key, value)?,
                "batch_fraction" => cfg.batch_fraction = as_f64(key, value)?,
                "eta" => cfg.eta = as_f64(key, value)?,
                "zeta2" => cfg.zeta2 = as_f64(key, value)?,
                "adapter_rank" => cfg.adapter_rank = as_usize(key, value)?,
                unknown => return Err(Error::Config(format!("unknown key `{unknown}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, reason: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(bad_key(key, reason))
            }
        };
        check(self.k_ues >= 1, "k_ues", "need at least one UE")?;
        check(self.n_modules >= 1, "n_modules", "need at least one module")?;
        check(!self.seeds.is_empty(), "seeds", "need at least one seed")?;
        check(self.f_k_hz > 0.0, "f_k_hz", "must be positive")?;
        check(self.varrho_js2_per_cycle > 0.0, "varrho_js2_per_cycle", "must be positive")?;
        check(self.m_k_cycles_per_bit > 0.0, "m_k_cycles_per_bit", "must be positive")?;
        check(self.tau_local_iters >= 1, "tau_local_iters", "must be at least 1")?;
        check(self.g_w_bits > 0.0, "g_w_bits", "must be positive")?;
        check(
            self.g_dw_bits > 0.0 && self.g_dw_bits <= self.g_w_bits,
            "g_dw_bits",
            "must be positive and no larger than g_w_bits",
        )?;
        check(
            self.g_dw_module_ratio >= 1.0
                && self.g_dw_bits * self.g_dw_module_ratio <= self.g_w_bits,
            "g_dw_module_ratio",
            "must be >= 1 and keep the largest module payload within g_w_bits",
        )?;
        check(self.alpha_pathloss > 2.0, "alpha_pathloss", "must exceed 2 (interference integral diverges otherwise)")?;
        check(self.theta > 0.0, "theta", "must be positive (linear scale)")?;
        check(self.phi_density_per_m2 > 0.0, "phi_density_per_m2", "must be positive")?;
        check(
            self.d_min_m > 0.0 && self.d_min_m <= self.d_max_m,
            "d_min_m",
            "need 0 < d_min_m <= d_max_m",
        )?;
        check(
            self.field_radius_m > self.d_max_m,
            "field_radius_m",
            "interferer field must extend beyond the farthest UE",
        )?;
        check(self.bandwidth_hz > 0.0, "bandwidth_hz", "must be positive")?;
        check(self.noise_density_w_per_hz > 0.0, "noise_density_w_per_hz", "must be positive")?;
        check(
            self.p_min_w > 0.0 && self.p_min_w < self.p_max_w,
            "p_min_w",
            "need 0 < p_min_w < p_max_w",
        )?;
        check(self.e_min_s > 0.0, "e_min_s", "must be positive")?;
        check(self.e_input_s >= 0.0, "e_input_s", "must be non-negative (0 = auto)")?;
        check(self.omega > 0.0 && self.omega < 1.0, "omega", "must lie in (0, 1)")?;
        check(self.j_max >= 1, "j_max", "must be at least 1")?;
        check(self.q_th_rel > 0.0, "q_th_rel", "must be positive")?;
        check(self.e_max_inner >= 1, "e_max_inner", "must be at least 1")?;
        check(self.mu >= 0.0, "mu", "must be non-negative")?;
        check(self.varsigma > 0.0, "varsigma", "must be positive")?;
        check(self.v_n >= 0.0 && self.v_n <= 1.0, "v_n", "must lie in [0, 1]")?;
        check(
            self.s_t >= 1 && self.s_t <= self.n_modules,
            "s_t",
            "must lie in [1, n_modules]",
        )?;
        check(self.dim >= 1, "dim", "must be at least 1")?;
        check(self.n_samples >= self.k_ues, "n_samples", "need at least one sample per UE")?;
        check(self.n_classes >= 2, "n_classes", "need at least two classes")?;
        check(self.feature_norm_sq_bound > 0.0, "feature_norm_sq_bound", "must be positive")?;
        check(self.ridge > 0.0, "ridge", "must be positive (strong convexity)")?;
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "test_fraction",
            "must lie in (0, 1)",
        )?;
        check(self.dirichlet_concentration > 0.0, "dirichlet_concentration", "must be positive")?;
        check(
            self.batch_fraction > 0.0 && self.batch_fraction <= 1.0,
            "batch_fraction",
            "must lie in (0, 1]",
        )?;
        check(self.eta > 0.0, "eta", "must be positive")?;
        check(self.zeta2 >= 0.0, "zeta2", "must be non-negative")?;
        check(
            self.adapter_rank <= self.dim,
            "adapter_rank",
            "cannot exceed dim (0 = direct parameterization)",
        )?;
        Ok(())
    }

    /// Hex digest over the canonical JSON form; embedded in every output so
    /// results from different configurations never collide silently.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        let mut out = String::with_capacity(16);
        for byte in &digest[..8] {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}
