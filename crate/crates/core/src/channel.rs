//! Stochastic uplink model: Rayleigh fading, a Poisson field of out-of-cell
//! interferers, the SINR success indicator, and the closed-form success
//! probability of an uplink gradient transfer.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric;
use crate::rng::Stream;

/// Smallest admissible bandwidth fraction. The noise power and the uplink
/// rate both degenerate at delta = 0, so allocations are floored here.
pub const DELTA_MIN: f64 = 1e-6;

/// Static parameters of one UE -> gNB link.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LinkParams {
    /// UE to gNB distance in meters.
    pub d_k: f64,
    /// Path-loss exponent (must exceed 2 for the interference integral to converge).
    pub alpha: f64,
    /// SINR threshold, linear.
    pub theta: f64,
    /// Spatial density of gNBs, per square meter.
    pub phi_density: f64,
    /// Total uplink bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Noise power density in W/Hz.
    pub noise_density: f64,
}

impl LinkParams {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, reason: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: reason.to_string(),
                })
            }
        };
        check(self.d_k > 0.0, "d_k", "distance must be positive")?;
        check(self.alpha > 2.0, "alpha", "path-loss exponent must exceed 2")?;
        check(self.theta > 0.0, "theta", "SINR threshold must be positive")?;
        check(self.phi_density > 0.0, "phi_density", "gNB density must be positive")?;
        check(self.bandwidth_hz > 0.0, "bandwidth_hz", "bandwidth must be positive")?;
        check(self.noise_density > 0.0, "noise_density", "noise density must be positive")?;
        Ok(())
    }
}

/// One out-of-cell interferer: distance to the serving gNB, transmit power,
/// and Rayleigh power gain.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Interferer {
    pub distance: f64,
    pub power: f64,
    pub gain: f64,
}

/// One draw of the fading and interference state of a link.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelRealization {
    /// Rayleigh power gain |h|^2 of the UE of interest, Exp(1).
    pub h_k_sq: f64,
    pub interferers: Vec<Interferer>,
}

impl ChannelRealization {
    /// Aggregate interference power at the gNB: sum |h_l|^2 P_l d_l^-alpha.
    pub fn interference_power(&self, alpha: f64) -> f64 {
        self.interferers
            .iter()
            .map(|i| i.gain * i.power * i.distance.powf(-alpha))
            .sum()
    }

    /// Received signal power |h_k|^2 P_k d_k^-alpha.
    pub fn signal_power(&self, p_k: f64, link: &LinkParams) -> f64 {
        self.h_k_sq * p_k * link.d_k.powf(-link.alpha)
    }
}

/// Draw one channel realization: the interferer count is
/// Poisson(phi * pi * radius^2), positions uniform in the disk, every power
/// gain Exp(1), and interferer transmit powers uniform in (0, p_max].
pub fn sample_realization(
    link: &LinkParams,
    field_radius: f64,
    p_max: f64,
    rng: &mut Stream,
) -> Result<ChannelRealization> {
    if field_radius <= link.d_k {
        return Err(Error::InvalidParameter {
            name: "field_radius",
            reason: format!("radius {field_radius} must exceed d_k {}", link.d_k),
        });
    }
    let mean = link.phi_density * std::f64::consts::PI * field_radius * field_radius;
    let count = if mean == 0.0 {
        0
    } else {
        Poisson::new(mean)
            .map_err(|e| Error::InvalidParameter {
                name: "phi_density",
                reason: e.to_string(),
            })?
            .sample(rng) as usize
    };
    let h_k_sq = exp1(rng);
    let mut interferers = Vec::with_capacity(count);
    for _ in 0..count {
        // Uniform in the disk, with the origin (distance 0) excluded.
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..=1.0);
        let distance = field_radius * u.sqrt();
        let power = p_max * rng.gen_range(f64::MIN_POSITIVE..=1.0);
        let gain = exp1(rng);
        interferers.push(Interferer { distance, power, gain });
    }
    Ok(ChannelRealization { h_k_sq, interferers })
}

fn exp1(rng: &mut Stream) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    -(1.0 - u).ln()
}

/// Instantaneous uplink SINR for the given power and bandwidth fraction.
/// The noise power is W * delta * N0.
pub fn sinr(real: &ChannelRealization, p_k: f64, delta: f64, link: &LinkParams) -> Result<f64> {
    if p_k <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "p_k",
            reason: "transmit power must be positive".to_string(),
        });
    }
    if delta < DELTA_MIN {
        return Err(Error::ZeroBandwidth { min: DELTA_MIN });
    }
    if delta > 1.0 {
        return Err(Error::InvalidParameter {
            name: "delta",
            reason: format!("bandwidth fraction {delta} exceeds 1"),
        });
    }
    let signal = real.signal_power(p_k, link);
    let noise = link.bandwidth_hz * delta * link.noise_density;
    Ok(signal / (real.interference_power(link.alpha) + noise))
}

/// Threshold indicator: 1 iff sinr >= theta (the boundary is inclusive).
pub fn success_indicator(sinr_value: f64, theta: f64) -> u8 {
    u8::from(sinr_value >= theta)
}

/// The interference integral of the closed-form success probability:
/// J = \int_0^inf (1 - e^{-(12/(5 pi)) theta^{2/alpha} x}) / (1 + x^{alpha/2}) dx.
///
/// Depends only on (alpha, theta); callers evaluating many (P, delta) points
/// should compute it once and reuse it.
pub fn interference_integral(alpha: f64, theta: f64) -> Result<f64> {
    const TOL: f64 = 1e-10;
    let c = 12.0 / (5.0 * std::f64::consts::PI) * theta.powf(2.0 / alpha);
    let half_alpha = alpha / 2.0;
    // Analytic tail: integrand <= x^{-alpha/2}, so
    // \int_X^inf <= X^{1 - alpha/2} / (alpha/2 - 1) < TOL.
    let upper = ((half_alpha - 1.0) * TOL).powf(-1.0 / (half_alpha - 1.0));
    let integrand = |x: f64| (-(-c * x).exp_m1()) / (1.0 + x.powf(half_alpha));
    numeric::integrate_dyadic(&integrand, upper, TOL)
}

/// Closed-form success probability lambda of the uplink, combining the
/// Rayleigh noise exponent with the Poisson-field interference exponent.
pub fn success_probability(p_k: f64, delta: f64, link: &LinkParams) -> Result<f64> {
    let j = interference_integral(link.alpha, link.theta)?;
    success_probability_with_integral(p_k, delta, link, j)
}

/// Same as [`success_probability`] but with the interference integral
/// precomputed by [`interference_integral`].
pub fn success_probability_with_integral(p_k: f64, delta: f64, link: &LinkParams, j: f64) -> Result<f64> {
    if p_k <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "p_k",
            reason: "transmit power must be positive".to_string(),
        });
    }
    if delta < DELTA_MIN {
        return Err(Error::ZeroBandwidth { min: DELTA_MIN });
    }
    let noise_exp = noise_exponent(p_k, delta, link);
    let d_sq = link.d_k * link.d_k;
    let interf_exp = link.phi_density
        * std::f64::consts::PI
        * d_sq
        * link.theta.powf(2.0 / link.alpha)
        * j;
    Ok((-noise_exp - interf_exp).exp())
}

/// The noise term of the success-probability exponent:
/// W delta N0 theta d^2 / (P (2 phi)^{alpha/2 - 1}).
pub fn noise_exponent(p_k: f64, delta: f64, link: &LinkParams) -> f64 {
    let d_sq = link.d_k * link.d_k;
    link.bandwidth_hz * delta * link.noise_density * link.theta * d_sq
        / (p_k * (2.0 * link.phi_density).powf(link.alpha / 2.0 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn test_link() -> LinkParams {
        LinkParams {
            d_k: 100.0,
            alpha: 3.8,
            theta: 10f64.powf(-0.5),
            phi_density: 1e-5,
            bandwidth_hz: 1e9,
            noise_density: 10f64.powf(-162.0 / 10.0) * 1e-3,
        }
    }

    #[test]
    fn empty_ppp_when_density_zero() {
        let mut link = test_link();
        link.phi_density = 0.0;
        let mut rng = substream(1, "chan");
        let r = sample_realization(&link, 1000.0, 0.2, &mut rng).unwrap();
        assert!(r.interferers.is_empty());
    }

    #[test]
    fn poisson_mean_matches_density() {
        let link = test_link();
        let mut rng = substream(2, "chan");
        let draws = 100_000usize;
        let mut total = 0usize;
        for _ in 0..draws {
            total += sample_realization(&link, 1000.0, 0.2, &mut rng).unwrap().interferers.len();
        }
        let mean = total as f64 / draws as f64;
        let expected = link.phi_density * std::f64::consts::PI * 1e6;
        let sigma = (expected / draws as f64).sqrt();
        assert!(
            (mean - expected).abs() < 3.0 * sigma,
            "mean {mean} vs expected {expected} (3 sigma = {})",
            3.0 * sigma
        );
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let link = test_link();
        let a = sample_realization(&link, 1000.0, 0.2, &mut substream(3, "chan")).unwrap();
        let b = sample_realization(&link, 1000.0, 0.2, &mut substream(3, "chan")).unwrap();
        assert_eq!(a.h_k_sq, b.h_k_sq);
        assert_eq!(a.interferers.len(), b.interferers.len());
        for (x, y) in a.interferers.iter().zip(&b.interferers) {
            assert_eq!(x.distance, y.distance);
            assert_eq!(x.power, y.power);
            assert_eq!(x.gain, y.gain);
        }
    }

    #[test]
    fn sinr_unit_case() {
        // No interferers, unit gain/power/distance, and W*delta*N0 = 1.
        let link = LinkParams {
            d_k: 1.0,
            alpha: 3.8,
            theta: 1.0,
            phi_density: 1e-5,
            bandwidth_hz: 1.0,
            noise_density: 1.0,
        };
        let real = ChannelRealization { h_k_sq: 1.0, interferers: vec![] };
        let s = sinr(&real, 1.0, 1.0, &link).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        let s2 = sinr(&real, 2.0, 1.0, &link).unwrap();
        assert!((s2 - 2.0).abs() < 1e-15);
    }

    #[test]
    fn sinr_symmetric_interferer() {
        let mut link = test_link();
        link.noise_density = 1e-300; // effectively zero noise
        let real = ChannelRealization {
            h_k_sq: 1.0,
            interferers: vec![Interferer { distance: link.d_k, power: 0.2, gain: 1.0 }],
        };
        let s = sinr(&real, 0.2, 1.0, &link).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sinr_rejects_zero_delta() {
        let link = test_link();
        let real = ChannelRealization { h_k_sq: 1.0, interferers: vec![] };
        assert!(matches!(sinr(&real, 0.2, 0.0, &link), Err(Error::ZeroBandwidth { .. })));
    }

    #[test]
    fn indicator_boundary_inclusive() {
        assert_eq!(success_indicator(1.0, 1.0), 1);
        assert_eq!(success_indicator(0.999, 1.0), 0);
        assert_eq!(success_indicator(1e30, 1.0), 1);
    }

    #[test]
    fn success_probability_limits() {
        let mut link = test_link();
        link.theta = 1e-12;
        let lam = success_probability(0.2, 0.1, &link).unwrap();
        assert!(lam > 1.0 - 1e-6, "theta -> 0 gives lambda -> 1, got {lam}");

        let mut link = test_link();
        link.d_k = 1e-6;
        let lam = success_probability(0.2, 0.1, &link).unwrap();
        assert!(lam > 1.0 - 1e-9, "d -> 0 gives lambda -> 1, got {lam}");
    }

    #[test]
    fn success_probability_in_unit_interval_and_monotone() {
        let link = test_link();
        let mut prev = 0.0;
        for p in [0.01, 0.05, 0.1, 0.2] {
            let lam = success_probability(p, 0.1, &link).unwrap();
            assert!(lam > 0.0 && lam <= 1.0);
            assert!(lam >= prev, "lambda must increase with P");
            prev = lam;
        }
        let mut prev = 1.0;
        for delta in [0.01, 0.1, 0.5, 1.0] {
            let lam = success_probability(0.2, delta, &link).unwrap();
            assert!(lam <= prev, "lambda must decrease with delta");
            prev = lam;
        }
        let mut prev = 1.0;
        for d in [50.0, 100.0, 200.0, 400.0] {
            let mut l = link;
            l.d_k = d;
            let lam = success_probability(0.2, 0.1, &l).unwrap();
            assert!(lam <= prev, "lambda must decrease with distance");
            prev = lam;
        }
        let mut prev = 1.0;
        for theta_db in [-10.0, -5.0, 0.0, 5.0] {
            let mut l = link;
            l.theta = 10f64.powf(theta_db / 10.0);
            let lam = success_probability(0.2, 0.1, &l).unwrap();
            assert!(lam <= prev, "lambda must decrease with theta");
            prev = lam;
        }
    }
}
