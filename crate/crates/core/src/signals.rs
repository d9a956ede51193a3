//! Reference-frame transforms, current references and harmonic analysis.
//!
//! Park convention: amplitude invariant, q axis lagging d by 90 degrees.
//!
//! ```text
//! x_a = x_d cos(theta) + x_q sin(theta)
//! ```
//!
//! so a balanced cosine set aligned with `theta` maps to `(A, 0)` and the
//! matching sine set (lagging a quarter period) maps to `(0, A)`. Power in this
//! frame is `p = 1.5 (v_d i_d + v_q i_q)`, `q = 1.5 (v_q i_d - v_d i_q)`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};

const TWO_THIRDS_PI: f64 = 2.0 * PI / 3.0;

/// Default number of harmonics analysed by [`thd`].
pub const DEFAULT_MAX_HARMONIC: usize = 50;

/// Amplitude-invariant Park transform.
pub fn abc_to_dq(x: [f64; 3], theta: f64) -> (f64, f64) {
    let (sa, ca) = libm::sincos(theta);
    let (sb, cb) = libm::sincos(theta - TWO_THIRDS_PI);
    let (sc, cc) = libm::sincos(theta + TWO_THIRDS_PI);
    let d = (2.0 / 3.0) * (x[0] * ca + x[1] * cb + x[2] * cc);
    let q = (2.0 / 3.0) * (x[0] * sa + x[1] * sb + x[2] * sc);
    (d, q)
}

/// Inverse Park transform (zero-sequence free).
pub fn dq_to_abc(dq: (f64, f64), theta: f64) -> [f64; 3] {
    let (d, q) = dq;
    [
        d * libm::cos(theta) + q * libm::sin(theta),
        d * libm::cos(theta - TWO_THIRDS_PI) + q * libm::sin(theta - TWO_THIRDS_PI),
        d * libm::cos(theta + TWO_THIRDS_PI) + q * libm::sin(theta + TWO_THIRDS_PI),
    ]
}

/// Current references for active power `p_ref` (W) and reactive power
/// `q_ref` (var) at grid d-axis voltage `v_d`.
pub fn power_to_current_refs(p_ref: f64, q_ref: f64, v_d: f64, v_min: f64) -> Result<(f64, f64)> {
    if !(v_d.abs() > v_min) {
        return Err(Error::Reference(alloc::format!(
            "grid d-axis voltage {v_d} V below threshold {v_min} V"
        )));
    }
    Ok(((2.0 / 3.0) * p_ref / v_d, -(2.0 / 3.0) * q_ref / v_d))
}

/// Harmonic content of a periodic signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ThdReport {
    pub fundamental_amplitude: f64,
    /// Amplitudes of harmonics 2, 3, ..., in order.
    pub harmonic_amplitudes: Vec<f64>,
    /// `sqrt(sum A_h^2) / A_1`, dimensionless.
    pub thd: f64,
    pub f0: f64,
    /// Whole fundamental periods in the analysed window.
    pub periods: usize,
    pub window_len: usize,
}

impl ThdReport {
    pub fn thd_percent(&self) -> f64 {
        100.0 * self.thd
    }

    /// Amplitude of harmonic `h >= 2`, if it was analysed.
    pub fn harmonic(&self, h: usize) -> Option<f64> {
        h.checked_sub(2).and_then(|i| self.harmonic_amplitudes.get(i).copied())
    }
}

/// Total harmonic distortion of the trailing whole-period window of `samples`.
///
/// The window is the largest integer number of fundamental periods that fits
/// at the end of the record, and harmonic `h` is read from DFT bin
/// `h * periods`. Harmonics at or above Nyquist are not analysed.
pub fn thd(samples: &[f64], sample_rate: f64, f0: f64, max_harmonic: usize) -> Result<ThdReport> {
    if !(sample_rate > 0.0 && f0 > 0.0 && sample_rate.is_finite() && f0.is_finite()) {
        return Err(Error::Analysis(alloc::format!(
            "invalid rates: sample rate {sample_rate} Hz, f0 {f0} Hz"
        )));
    }
    let per_period = sample_rate / f0;
    let periods = libm::floor(samples.len() as f64 / per_period + 1e-9) as usize;
    if periods < 2 {
        return Err(Error::Analysis(alloc::format!(
            "need at least 2 whole periods, record holds {:.3}",
            samples.len() as f64 / per_period
        )));
    }
    let n = (libm::round(periods as f64 * per_period) as usize).min(samples.len());
    let window = &samples[samples.len() - n..];
    if window.iter().any(|x| !x.is_finite()) {
        return Err(Error::Analysis("non-finite sample in analysis window".into()));
    }

    let twiddle: Vec<(f64, f64)> = (0..n).map(|k| libm::sincos(2.0 * PI * k as f64 / n as f64)).collect();
    let amplitude = |bin: usize| -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        let mut idx = 0usize;
        for &x in window {
            let (s, c) = twiddle[idx];
            re += x * c;
            im -= x * s;
            // phase index reduced exactly, modulo n
            idx = (idx + bin) % n;
        }
        2.0 * libm::sqrt(re * re + im * im) / n as f64
    };

    let a1 = amplitude(periods);
    let peak = window.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(a1 > 1e-12 * peak) || a1 < 1e-12 {
        return Err(Error::Analysis(alloc::format!(
            "degenerate fundamental: amplitude {a1:e} (signal peak {peak:e})"
        )));
    }
    let harmonic_amplitudes: Vec<f64> = (2..=max_harmonic)
        .take_while(|h| 2 * h * periods < n)
        .map(|h| amplitude(h * periods))
        .collect();
    let thd = libm::sqrt(harmonic_amplitudes.iter().map(|a| a * a).sum::<f64>()) / a1;
    Ok(ThdReport {
        fundamental_amplitude: a1,
        harmonic_amplitudes,
        thd,
        f0,
        periods,
        window_len: n,
    })
}
