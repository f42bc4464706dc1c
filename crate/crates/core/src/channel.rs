//! Nakagami-m fading channel synthesis.
//!
//! Every interface owns a [`FadingChannel`] that is refreshed once per slot:
//! a fresh fading parameter `m` is drawn uniformly from the configured range,
//! the link weight `w = k·m` is recomputed, and a new amplitude gain is drawn
//! from the Nakagami-m distribution with spread `Ω`. Delivery success is a
//! clamped power law of the realized gain, so low-`m` slots translate into
//! retransmissions and window collapses downstream.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Per-link fading state: shape `m`, spread `Ω`, the proportionality constant
/// `k` of the weight mapping, and the amplitude gain realized for the current
/// slot.
#[derive(Clone, Debug)]
pub struct FadingChannel {
    fading_m: f64,
    spread_omega: f64,
    proportionality_k: f64,
    current_gain: f64,
}

impl FadingChannel {
    /// Creates a channel with an initial fading parameter and zero gain; the
    /// first [`resample`](Self::resample) establishes the first realization.
    pub fn new(fading_m: f64, spread_omega: f64, proportionality_k: f64) -> Result<Self> {
        if !(fading_m > 0.0) {
            return Err(Error::domain(format!(
                "fading parameter m must be positive, got {fading_m}"
            )));
        }
        if !(spread_omega > 0.0) {
            return Err(Error::domain(format!(
                "spread omega must be positive, got {spread_omega}"
            )));
        }
        if !(proportionality_k > 0.0) {
            return Err(Error::domain(format!(
                "proportionality constant k must be positive, got {proportionality_k}"
            )));
        }
        Ok(FadingChannel {
            fading_m,
            spread_omega,
            proportionality_k,
            current_gain: 0.0,
        })
    }

    /// Draws a new fading parameter uniformly from `[m_low, m_high]` and a new
    /// amplitude gain from the resulting Nakagami distribution.
    pub fn resample<R: Rng + ?Sized>(&mut self, rng: &mut R, m_low: f64, m_high: f64) -> Result<()> {
        self.fading_m = sample_fading_parameter(rng, m_low, m_high)?;
        self.current_gain = nakagami_sample(rng, self.fading_m, self.spread_omega)?;
        Ok(())
    }

    pub fn fading_m(&self) -> f64 {
        self.fading_m
    }

    pub fn spread_omega(&self) -> f64 {
        self.spread_omega
    }

    pub fn current_gain(&self) -> f64 {
        self.current_gain
    }

    /// Link weight `w = k·m` for the current fading parameter.
    pub fn weight(&self) -> f64 {
        link_weight(self.fading_m, self.proportionality_k)
            .expect("channel invariants keep m and k positive")
    }
}

/// Probability density of the Nakagami-m distribution,
/// `f(x; m, Ω) = 2 m^m / (Γ(m) Ω^m) · x^(2m−1) · exp(−m x² / Ω)`.
///
/// For `m < ½` the density diverges at the origin; the IEEE semantics of
/// `powf` make this function return `+∞` there, which is the correct limit.
pub fn nakagami_pdf(x: f64, m: f64, omega: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::domain(format!("fading parameter m must be positive, got {m}")));
    }
    if !(omega > 0.0) {
        return Err(Error::domain(format!("spread omega must be positive, got {omega}")));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(format!("amplitude must be nonnegative, got {x}")));
    }
    let norm = 2.0 * m.powf(m) / (gamma(m) * omega.powf(m));
    Ok(norm * x.powf(2.0 * m - 1.0) * (-m * x * x / omega).exp())
}

/// One Nakagami(m, Ω) amplitude draw, realized as the square root of a
/// Gamma(shape = m, scale = Ω/m) variate. The transform is exact for every
/// m > 0, including the sub-½ regime where the density is unbounded at zero.
pub fn nakagami_sample<R: Rng + ?Sized>(rng: &mut R, m: f64, omega: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::domain(format!("fading parameter m must be positive, got {m}")));
    }
    if !(omega > 0.0) {
        return Err(Error::domain(format!("spread omega must be positive, got {omega}")));
    }
    let gamma_dist = Gamma::new(m, omega / m)
        .map_err(|e| Error::domain(format!("gamma distribution rejected (m={m}, omega={omega}): {e}")))?;
    Ok(gamma_dist.sample(rng).sqrt())
}

/// Uniform draw of the per-slot fading parameter on `[low, high]`.
pub fn sample_fading_parameter<R: Rng + ?Sized>(rng: &mut R, low: f64, high: f64) -> Result<f64> {
    if !(low > 0.0) {
        return Err(Error::domain(format!("fading range low bound must be positive, got {low}")));
    }
    if !(low <= high) {
        return Err(Error::domain(format!(
            "fading range must satisfy low <= high, got [{low}, {high}]"
        )));
    }
    if low == high {
        return Ok(low);
    }
    Ok(rng.random_range(low..=high))
}

/// Link-quality weight `w = k·m` used by the congestion trigger.
pub fn link_weight(m: f64, k: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::domain(format!("fading parameter m must be positive, got {m}")));
    }
    if !(k > 0.0) {
        return Err(Error::domain(format!("proportionality constant k must be positive, got {k}")));
    }
    Ok(k * m)
}

/// Probability that a packet transmitted under `gain` is delivered, relative
/// to a reference amplitude: `min(1, gain² / reference_gain²)`. Monotone
/// nondecreasing in the gain and saturating at certainty.
pub fn service_success_probability(gain: f64, reference_gain: f64) -> Result<f64> {
    if !(gain >= 0.0) {
        return Err(Error::domain(format!("gain must be nonnegative, got {gain}")));
    }
    if !(reference_gain > 0.0) {
        return Err(Error::domain(format!(
            "reference gain must be positive, got {reference_gain}"
        )));
    }
    let ratio = gain / reference_gain;
    Ok((ratio * ratio).min(1.0))
}
