//! FOPI and fuzzy-scheduled FOPI (FOFPI) current controllers.
//!
//! Both laws share one output stage:
//!
//! ```text
//! u = kp * e + ki * I^alpha[e]
//! ```
//!
//! where `I^alpha` is the Oustaloup realization of `s^-alpha` driven by the
//! signed error. For FOPI the gains are fixed; for FOFPI they come from the
//! type-II FIS evaluated at `(e, de/dt)` every sample, and the scheduled `ki`
//! multiplies the integrator output. The output is clamped to `[-u_max, u_max]`
//! and the integrator input is held at zero while the output is saturated in
//! the direction the error is pushing.

use crate::error::{config_err, Error, Result};
use crate::fracorder::{FracRealization, OustaloupBand};
use crate::it2fis::It2Fis;

/// Fixed gains and integral order of a FOPI controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FopiParams {
    /// V/A
    pub kp: f64,
    /// V/(A s^alpha)
    pub ki: f64,
    pub alpha: f64,
}

impl FopiParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp.is_finite() && self.kp >= 0.0 && self.ki.is_finite() && self.ki >= 0.0) {
            return Err(config_err(alloc::format!(
                "FOPI gains must be finite and >= 0 (kp = {}, ki = {})",
                self.kp,
                self.ki
            )));
        }
        validate_alpha(self.alpha)
    }
}

fn validate_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(config_err(alloc::format!("integral order {alpha} outside (0, 2)")));
    }
    Ok(())
}

/// Gain-scheduling FIS plus the integral order of a FOFPI controller.
#[derive(Debug, Clone, PartialEq)]
pub struct FofpiParams {
    pub fis: It2Fis,
    pub alpha: f64,
}

/// Control law of one current axis.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlLaw {
    Fopi(FopiParams),
    Fofpi(FofpiParams),
}

impl ControlLaw {
    pub fn alpha(&self) -> f64 {
        match self {
            ControlLaw::Fopi(p) => p.alpha,
            ControlLaw::Fofpi(p) => p.alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ControlLaw::Fopi(p) => p.validate(),
            ControlLaw::Fofpi(p) => validate_alpha(p.alpha),
        }
    }
}

/// One controller step: the applied output and the gains that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlSample {
    pub u: f64,
    pub kp: f64,
    pub ki: f64,
    pub e_dot: f64,
    pub saturated: bool,
}

/// Mutable per-axis controller state.
#[derive(Debug, Clone)]
pub struct ControllerState {
    integrator: FracRealization,
    prev_error: f64,
    e_dot: f64,
    prev_output: f64,
    dt: f64,
    tau_d: f64,
    u_max: f64,
    fis: Option<It2Fis>,
}

impl ControllerState {
    /// Fresh state at rest. `tau_d` is the derivative filter time constant.
    pub fn new(alpha: f64, band: &OustaloupBand, dt: f64, u_max: f64, tau_d: f64, fis: Option<It2Fis>) -> Result<Self> {
        validate_alpha(alpha)?;
        if !(u_max.is_finite() && u_max > 0.0) {
            return Err(config_err(alloc::format!("u_max {u_max} must be positive")));
        }
        if !(tau_d.is_finite() && tau_d >= 0.0) {
            return Err(config_err("derivative filter time constant must be >= 0"));
        }
        let integrator = band.design(-alpha)?.discretize(dt)?;
        Ok(Self {
            integrator,
            prev_error: 0.0,
            e_dot: 0.0,
            prev_output: 0.0,
            dt,
            tau_d,
            u_max,
            fis,
        })
    }

    /// State for `law` with `tau_d = 10 * dt`.
    pub fn for_law(law: &ControlLaw, band: &OustaloupBand, dt: f64, u_max: f64) -> Result<Self> {
        law.validate()?;
        let fis = match law {
            ControlLaw::Fopi(_) => None,
            ControlLaw::Fofpi(p) => Some(p.fis.clone()),
        };
        Self::new(law.alpha(), band, dt, u_max, 10.0 * dt, fis)
    }

    pub fn u_max(&self) -> f64 {
        self.u_max
    }

    /// Updates the saturation bound (it follows the DC-link voltage).
    pub fn set_u_max(&mut self, u_max: f64) {
        self.u_max = u_max;
    }

    pub fn prev_output(&self) -> f64 {
        self.prev_output
    }

    pub fn fis(&self) -> Option<&It2Fis> {
        self.fis.as_ref()
    }

    // Backward difference through a first-order low-pass.
    fn update_derivative(&mut self, e: f64) -> f64 {
        let raw = (e - self.prev_error) / self.dt;
        self.e_dot += self.dt / (self.tau_d + self.dt) * (raw - self.e_dot);
        self.prev_error = e;
        self.e_dot
    }

    fn apply(&mut self, kp: f64, ki: f64, e: f64) -> Result<ControlSample> {
        let candidate = kp * e + ki * self.integrator.preview(e);
        let winding_up = candidate.abs() > self.u_max && e * candidate > 0.0;
        let integral = self.integrator.step_filter(if winding_up { 0.0 } else { e })?;
        let raw = kp * e + ki * integral;
        let u = raw.clamp(-self.u_max, self.u_max);
        self.prev_output = u;
        Ok(ControlSample {
            u,
            kp,
            ki,
            e_dot: self.e_dot,
            saturated: raw != u,
        })
    }

    /// Fixed-gain step. `params.alpha` must match the order the state was built with.
    pub fn fopi_step(&mut self, params: &FopiParams, e: f64) -> Result<ControlSample> {
        if !e.is_finite() {
            return Err(Error::NonFinite("controller error"));
        }
        self.update_derivative(e);
        self.apply(params.kp, params.ki, e)
    }

    /// Scheduled-gain step using the state's FIS.
    pub fn fofpi_step(&mut self, e: f64) -> Result<ControlSample> {
        if !e.is_finite() {
            return Err(Error::NonFinite("controller error"));
        }
        let e_dot = self.update_derivative(e);
        let (kp, ki) = match &self.fis {
            Some(fis) => fis.schedule_gains(e, e_dot),
            None => return Err(config_err("FOFPI step requires a fuzzy inference system")),
        };
        self.apply(kp, ki, e)
    }

    /// Dispatches on the law.
    pub fn step(&mut self, law: &ControlLaw, e: f64) -> Result<ControlSample> {
        match law {
            ControlLaw::Fopi(p) => self.fopi_step(p, e),
            ControlLaw::Fofpi(_) => self.fofpi_step(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    const DT: f64 = 1e-4;

    fn fopi(kp: f64, ki: f64, alpha: f64, u_max: f64) -> (FopiParams, ControllerState) {
        let p = FopiParams { kp, ki, alpha };
        let s = ControllerState::for_law(&ControlLaw::Fopi(p), &OustaloupBand::default(), DT, u_max).unwrap();
        (p, s)
    }

    fn error_signal(k: usize) -> f64 {
        let t = k as f64 * DT;
        3.0 * libm::sin(2.0 * core::f64::consts::PI * 50.0 * t) + 1.5 * libm::cos(17.0 * t) - 0.7
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let (p, mut s) = fopi(2.0, 50.0, 0.8, 100.0);
        let law = ControlLaw::Fofpi(FofpiParams {
            fis: It2Fis::grid3(2.0, 50.0, [0.1, 0.01]).unwrap(),
            alpha: 0.8,
        });
        let mut f = ControllerState::for_law(&law, &OustaloupBand::default(), DT, 100.0).unwrap();
        for _ in 0..1000 {
            assert_eq!(s.fopi_step(&p, 0.0).unwrap().u, 0.0);
            assert_eq!(f.fofpi_step(0.0).unwrap().u, 0.0);
        }
    }

    #[test]
    fn pure_proportional_when_ki_is_zero() {
        let (p, mut s) = fopi(3.5, 0.0, 0.7, 1e6);
        for k in 0..500 {
            let e = error_signal(k);
            assert_eq!(s.fopi_step(&p, e).unwrap().u, 3.5 * e);
        }
    }

    #[test]
    fn unit_order_integrates_a_constant() {
        let (p, mut s) = fopi(0.0, 1.0, 1.0, 1e9);
        let steps = (10.0 / DT) as usize;
        for k in 1..=steps {
            let u = s.fopi_step(&p, 1.0).unwrap().u;
            let t = k as f64 * DT;
            if k % 1000 == 0 && t >= 0.1 {
                assert!((u / t - 1.0).abs() < 0.02, "u({t}) = {u}");
            }
        }
    }

    #[test]
    fn output_is_clamped_and_windup_is_held() {
        let (p, mut s) = fopi(1.0, 500.0, 1.0, 10.0);
        for _ in 0..5000 {
            let out = s.fopi_step(&p, 5.0).unwrap();
            assert!(out.u.abs() <= 10.0);
        }
        // Integrator was frozen while saturated, so reversing the error
        // leaves saturation quickly.
        let mut released = None;
        for k in 0..5000 {
            if s.fopi_step(&p, -0.5).unwrap().u < 9.0 {
                released = Some(k);
                break;
            }
        }
        assert!(released.unwrap() < 400, "took {released:?} samples");
    }

    #[test]
    fn saturation_holds_for_extreme_inputs() {
        let (p, mut s) = fopi(50.0, 1e4, 1.3, 300.0);
        for k in 0..2000 {
            let e = if k % 3 == 0 { 1e12 } else { -1e9 * error_signal(k) };
            assert!(s.fopi_step(&p, e).unwrap().u.abs() <= 300.0);
        }
    }

    #[test]
    fn non_finite_error_is_a_fault() {
        let (p, mut s) = fopi(1.0, 1.0, 1.0, 10.0);
        assert!(matches!(s.fopi_step(&p, f64::NAN), Err(Error::NonFinite(_))));
    }

    #[test]
    fn fofpi_needs_a_fis() {
        let mut s = ControllerState::new(0.9, &OustaloupBand::default(), DT, 10.0, 1e-3, None).unwrap();
        assert!(matches!(s.fofpi_step(1.0), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let band = OustaloupBand::default();
        let bad = [
            FopiParams {
                kp: -1.0,
                ki: 1.0,
                alpha: 1.0,
            },
            FopiParams {
                kp: 1.0,
                ki: 1.0,
                alpha: 0.0,
            },
            FopiParams {
                kp: 1.0,
                ki: 1.0,
                alpha: 2.0,
            },
        ];
        for p in bad {
            assert!(ControllerState::for_law(&ControlLaw::Fopi(p), &band, DT, 10.0).is_err());
        }
        let ok = ControlLaw::Fopi(FopiParams {
            kp: 1.0,
            ki: 1.0,
            alpha: 1.0,
        });
        assert!(ControllerState::for_law(&ok, &band, DT, 0.0).is_err());
    }

    #[test]
    fn constant_consequents_collapse_to_fopi() {
        let (p, mut a) = fopi(2.5, 80.0, 0.85, 40.0);
        let mut fis = It2Fis::grid3(2.5, 80.0, [0.1, 0.001]).unwrap();
        // Non-degenerate widths: equality must come from the consequents alone.
        let flat = fis.to_flat();
        fis = It2Fis::from_flat([3, 3], &flat, [0.1, 0.001]).unwrap();
        let law = ControlLaw::Fofpi(FofpiParams { fis, alpha: 0.85 });
        let mut b = ControllerState::for_law(&law, &OustaloupBand::default(), DT, 40.0).unwrap();
        for k in 0..20_000 {
            let e = 10.0 * error_signal(k);
            let ua = a.fopi_step(&p, e).unwrap();
            let ub = b.step(&law, e).unwrap();
            assert_eq!(ua.u.to_bits(), ub.u.to_bits(), "diverged at sample {k}");
        }
    }

    #[test]
    fn scheduled_gains_stay_within_consequent_range() {
        let theta_kp: Vec<f64> = vec![0.5, 1.0, 4.0, 2.0, 0.1, 3.0, 2.5, 1.5, 0.2];
        let base = It2Fis::grid3(1.0, 1.0, [0.2, 0.002]).unwrap();
        let fis = It2Fis::new(base.input_mfs().clone(), theta_kp, vec![10.0; 9], 0.5, [0.2, 0.002]).unwrap();
        let law = ControlLaw::Fofpi(FofpiParams { fis, alpha: 1.0 });
        let mut s = ControllerState::for_law(&law, &OustaloupBand::default(), DT, 1e3).unwrap();
        for k in 0..5000 {
            let out = s.step(&law, 4.0 * error_signal(k)).unwrap();
            assert!((0.1..=4.0).contains(&out.kp));
            assert_eq!(out.ki, 10.0);
        }
    }

    #[test]
    fn runs_are_deterministic() {
        let run = || {
            let (p, mut s) = fopi(1.7, 33.0, 0.6, 25.0);
            (0..3000)
                .map(|k| s.fopi_step(&p, error_signal(k)).unwrap().u.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
