//! Per-round computation and communication energy accounting, plus the
//! relaxed form used by the resource allocator.

use serde::{Deserialize, Serialize};

use crate::channel::{LinkParams, DELTA_MIN};
use crate::error::{Error, Result};

/// Compute-side characteristics of a UE.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ComputeProfile {
    /// CPU/GPU frequency in Hz.
    pub f_k: f64,
    /// Chip energy coefficient in J s^2 / cycle.
    pub varrho_k: f64,
    /// Cycles required to process one bit.
    pub m_k: f64,
    /// Local iterations per round.
    pub tau: u32,
}

impl ComputeProfile {
    pub fn validate(&self) -> Result<()> {
        if self.f_k <= 0.0 || self.varrho_k <= 0.0 || self.m_k <= 0.0 || self.tau == 0 {
            return Err(Error::InvalidParameter {
                name: "compute_profile",
                reason: "f_k, varrho_k, m_k must be positive and tau >= 1".to_string(),
            });
        }
        Ok(())
    }
}

/// Bit sizes of one module's local forward payload and its gradient upload.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PayloadSizes {
    /// Bits of the frozen foundation model processed locally.
    pub g_w: f64,
    /// Bits of the uploaded gradient (the small LoRA payload).
    pub g_dw: f64,
}

impl PayloadSizes {
    pub fn validate(&self) -> Result<()> {
        if self.g_w <= 0.0 || self.g_dw <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "payload_sizes",
                reason: "payload sizes must be positive".to_string(),
            });
        }
        if self.g_dw > self.g_w {
            return Err(Error::InvalidParameter {
                name: "payload_sizes",
                reason: format!("g_dw {} exceeds g_w {}", self.g_dw, self.g_w),
            });
        }
        Ok(())
    }
}

/// Computation term: tau * D_k * G_w * f_k^2 * varrho_k * M_k.
pub fn computation_energy(profile: &ComputeProfile, sizes: &PayloadSizes, d_k: f64) -> f64 {
    profile.tau as f64 * d_k * sizes.g_w * profile.f_k * profile.f_k * profile.varrho_k * profile.m_k
}

/// Exact per-round energy: computation plus P * G_dw / (W delta log2(1 + SINR)).
pub fn round_energy(
    profile: &ComputeProfile,
    sizes: &PayloadSizes,
    d_k: f64,
    p_k: f64,
    delta: f64,
    sinr_value: f64,
    link: &LinkParams,
) -> Result<f64> {
    if sinr_value <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "sinr_value",
            reason: format!("SINR must be positive, got {sinr_value}"),
        });
    }
    if delta < DELTA_MIN {
        return Err(Error::ZeroBandwidth { min: DELTA_MIN });
    }
    let rate = link.bandwidth_hz * delta * (1.0 + sinr_value).log2();
    Ok(computation_energy(profile, sizes, d_k) + p_k * sizes.g_dw / rate)
}

/// Relaxed energy with the communication term replaced by P * E_t.
pub fn relaxed_energy(
    profile: &ComputeProfile,
    sizes: &PayloadSizes,
    d_k: f64,
    p_k: f64,
    e_t: f64,
) -> Result<f64> {
    if e_t <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "e_t",
            reason: "delay target must be positive".to_string(),
        });
    }
    Ok(computation_energy(profile, sizes, d_k) + p_k * e_t)
}

/// Transmission delay of one upload: G_dw / (W delta log2(1 + SINR)).
pub fn transmission_delay(sizes: &PayloadSizes, delta: f64, sinr_value: f64, link: &LinkParams) -> f64 {
    sizes.g_dw / (link.bandwidth_hz * delta * (1.0 + sinr_value).log2())
}
