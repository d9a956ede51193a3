//! Oustaloup band-limited approximation of `s^alpha` and its discrete realization.
//!
//! The continuous design is the pole/zero ladder
//!
//! ```text
//! G(s) = K * prod_{k=-N..N} (s + w'_k) / (s + w_k)
//! w'_k = wb * (wh/wb)^((k + N + (1 - alpha)/2) / (2N + 1))
//! w_k  = wb * (wh/wb)^((k + N + (1 + alpha)/2) / (2N + 1))
//! K    = wh^alpha
//! ```
//!
//! which tracks `s^alpha` for frequencies well inside `[wb, wh]`. A fractional
//! integral of order `a` is the same design evaluated at `alpha = -a`; outside
//! the band the approximation flattens, so an `alpha = -1` operator is only an
//! integrator for frequencies inside the band.
//!
//! The realization never multiplies the ladder out into a single polynomial
//! ratio (an order-41 transfer function is hopeless in `f64`). Each first-order
//! section is discretized with the bilinear map and the sections are cascaded.

use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{config_err, Error, Result};

/// Default half-order of the ladder (total order `2 * 20 + 1`).
pub const DEFAULT_N_FILTER: usize = 20;
/// Default lower band edge, rad/s.
pub const DEFAULT_OMEGA_B: f64 = 1e-3;
/// Default upper band edge, rad/s.
pub const DEFAULT_OMEGA_H: f64 = 1e3;

/// Order and frequency band shared by every fractional operator of a controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OustaloupBand {
    pub n_filter: usize,
    pub omega_b: f64,
    pub omega_h: f64,
}

impl Default for OustaloupBand {
    fn default() -> Self {
        Self {
            n_filter: DEFAULT_N_FILTER,
            omega_b: DEFAULT_OMEGA_B,
            omega_h: DEFAULT_OMEGA_H,
        }
    }
}

impl OustaloupBand {
    pub fn design(&self, alpha: f64) -> Result<FracOperator> {
        FracOperator::design(alpha, self.n_filter, self.omega_b, self.omega_h)
    }
}

/// Continuous Oustaloup design of `s^alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct FracOperator {
    alpha: f64,
    n_filter: usize,
    omega_b: f64,
    omega_h: f64,
    zeros: Vec<f64>,
    poles: Vec<f64>,
    gain: f64,
}

impl FracOperator {
    /// Designs the ladder for `s^alpha` over `[omega_b, omega_h]` rad/s.
    pub fn design(alpha: f64, n_filter: usize, omega_b: f64, omega_h: f64) -> Result<Self> {
        if !(omega_b.is_finite() && omega_h.is_finite()) || omega_b <= 0.0 || omega_h <= omega_b {
            return Err(config_err(alloc::format!(
                "invalid Oustaloup band [{omega_b}, {omega_h}] rad/s"
            )));
        }
        if !alpha.is_finite() || alpha.abs() >= 2.0 {
            return Err(config_err(alloc::format!("fractional order {alpha} outside (-2, 2)")));
        }
        if n_filter == 0 {
            return Err(config_err("n_filter must be at least 1"));
        }

        let ratio = omega_h / omega_b;
        let order = (2 * n_filter + 1) as f64;
        let n = n_filter as f64;
        let corner = |offset: f64, k: f64| omega_b * libm::pow(ratio, (k + n + offset) / order);

        let ks = (0..2 * n_filter + 1).map(|i| i as f64 - n);
        let zeros = ks.clone().map(|k| corner(0.5 * (1.0 - alpha), k)).collect();
        let poles = ks.map(|k| corner(0.5 * (1.0 + alpha), k)).collect();

        Ok(Self {
            alpha,
            n_filter,
            omega_b,
            omega_h,
            zeros,
            poles,
            gain: libm::pow(omega_h, alpha),
        })
    }

    /// Designs with the default order and band.
    pub fn with_defaults(alpha: f64) -> Result<Self> {
        Self::design(alpha, DEFAULT_N_FILTER, DEFAULT_OMEGA_B, DEFAULT_OMEGA_H)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_filter(&self) -> usize {
        self.n_filter
    }

    pub fn omega_b(&self) -> f64 {
        self.omega_b
    }

    pub fn omega_h(&self) -> f64 {
        self.omega_h
    }

    /// Zero corner frequencies `w'_k`, ascending in `k`.
    pub fn zeros(&self) -> &[f64] {
        &self.zeros
    }

    /// Pole corner frequencies `w_k`, ascending in `k`.
    pub fn poles(&self) -> &[f64] {
        &self.poles
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    /// `G(0) = K * prod(w'_k / w_k)`.
    pub fn dc_gain(&self) -> f64 {
        self.zeros
            .iter()
            .zip(&self.poles)
            .fold(self.gain, |acc, (z, p)| acc * (z / p))
    }

    /// Evaluates `G(j * omega)`.
    pub fn frequency_response(&self, omega: f64) -> Complex64 {
        let jw = Complex64::new(0.0, omega);
        self.zeros
            .iter()
            .zip(&self.poles)
            .fold(Complex64::new(self.gain, 0.0), |acc, (&z, &p)| {
                acc * (jw + z) / (jw + p)
            })
    }

    /// Bilinear discretization of every section at sample period `dt`.
    pub fn discretize(&self, dt: f64) -> Result<FracRealization> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(config_err(alloc::format!("sample period {dt} must be positive")));
        }
        let sections = self
            .zeros
            .iter()
            .zip(&self.poles)
            .map(|(&z, &p)| Section {
                pole: p,
                residue: z - p,
                h: 2.0 * dt / (2.0 + p * dt),
                x: 0.0,
                u_prev: 0.0,
            })
            .collect();
        Ok(FracRealization {
            sections,
            gain: self.gain,
            dt,
            coarse: dt * self.omega_h >= 2.0,
        })
    }
}

/// Designs the ladder; free-function form of [`FracOperator::design`].
pub fn design_oustaloup(alpha: f64, n_filter: usize, omega_b: f64, omega_h: f64) -> Result<FracOperator> {
    FracOperator::design(alpha, n_filter, omega_b, omega_h)
}

/// One first-order section `(s + z) / (s + p) = 1 + (z - p) / (s + p)`.
///
/// The state `x` of `x' = -p x + u` is advanced with the trapezoidal rule
/// (equivalent to the bilinear map) in increment form,
/// `x += h * ((u + u_prev) / 2 - p * x)` with `h = 2 dt / (2 + p dt)`, so the
/// slowest poles (discrete pole within 1e-7 of unity) keep their DC gain to
/// machine precision. Output is `y = u + (z - p) x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pole: f64,
    residue: f64,
    h: f64,
    x: f64,
    u_prev: f64,
}

impl Section {
    #[inline]
    fn next_state(&self, u: f64) -> f64 {
        self.x + self.h * (0.5 * (u + self.u_prev) - self.pole * self.x)
    }

    #[inline]
    fn output(&self, u: f64) -> f64 {
        u + self.residue * self.next_state(u)
    }

    #[inline]
    fn advance(&mut self, u: f64) -> f64 {
        self.x = self.next_state(u);
        self.u_prev = u;
        u + self.residue * self.x
    }

    /// Discrete pole `1 - h p = (2 - p dt) / (2 + p dt)`.
    pub fn discrete_pole(&self) -> f64 {
        1.0 - self.h * self.pole
    }

    /// Section gain at DC, `z / p`.
    pub fn dc_gain(&self) -> f64 {
        1.0 + self.residue / self.pole
    }

    pub fn state(&self) -> f64 {
        self.x
    }
}

/// Discrete cascade of first-order sections, one state per pole.
#[derive(Debug, Clone, PartialEq)]
pub struct FracRealization {
    sections: Vec<Section>,
    gain: f64,
    dt: f64,
    coarse: bool,
}

impl FracRealization {
    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// True when `dt * omega_h >= 2`; the bilinear warp is then severe near the
    /// top of the band. The realization still works.
    pub fn is_coarse(&self) -> bool {
        self.coarse
    }

    /// DC gain of the discrete cascade, `H(z = 1)`.
    pub fn dc_gain(&self) -> f64 {
        self.sections.iter().fold(self.gain, |acc, s| acc * s.dc_gain())
    }

    /// Advances every section by one sample and returns the cascade output.
    pub fn step_filter(&mut self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite("fractional operator input"));
        }
        let y = self.sections.iter_mut().fold(u, |x, s| s.advance(x));
        Ok(self.gain * y)
    }

    /// Output the next [`step_filter`](Self::step_filter) call would return,
    /// without touching the state.
    pub fn preview(&self, u: f64) -> f64 {
        let mut x = u;
        for s in &self.sections {
            x = s.output(x);
        }
        self.gain * x
    }

    /// Returns every section to rest.
    pub fn reset(&mut self) {
        for s in &mut self.sections {
            s.x = 0.0;
            s.u_prev = 0.0;
        }
    }
}
