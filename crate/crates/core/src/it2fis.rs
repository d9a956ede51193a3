//! Interval type-II fuzzy inference for gain scheduling.
//!
//! Two inputs (error and error derivative), Gaussian antecedents with an
//! uncertain width, a full grid rule base and crisp consequent centers. The
//! type-reduced output is the fixed blend
//! `m * theta . xi_upper + (1 - m) * theta . xi_lower`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{config_err, Result};

/// Number of antecedent inputs (`e`, `de/dt`).
pub const N_INPUTS: usize = 2;

/// Gaussian membership function with an uncertain standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct It2Gaussian {
    pub center: f64,
    pub sigma_lower: f64,
    pub sigma_upper: f64,
}

impl It2Gaussian {
    pub fn new(center: f64, sigma_lower: f64, sigma_upper: f64) -> Result<Self> {
        let mf = Self {
            center,
            sigma_lower,
            sigma_upper,
        };
        mf.validate()?;
        Ok(mf)
    }

    fn validate(&self) -> Result<()> {
        if !(self.center.is_finite() && self.sigma_lower.is_finite() && self.sigma_upper.is_finite()) {
            return Err(config_err("membership function parameters must be finite"));
        }
        if self.sigma_lower <= 0.0 || self.sigma_upper < self.sigma_lower {
            return Err(config_err(alloc::format!(
                "membership widths need 0 < sigma_lower <= sigma_upper, got {} and {}",
                self.sigma_lower,
                self.sigma_upper
            )));
        }
        Ok(())
    }

    /// Lower and upper membership grade at `x`.
    #[inline]
    pub fn grade(&self, x: f64) -> (f64, f64) {
        let d = x - self.center;
        let lower = libm::exp(-0.5 * (d / self.sigma_lower) * (d / self.sigma_lower));
        let upper = libm::exp(-0.5 * (d / self.sigma_upper) * (d / self.sigma_upper));
        (lower, upper)
    }
}

/// Normalized rule firing strengths for the upper and lower membership bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct Firing {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
    /// Set when every rule product underflowed and uniform weights were used.
    pub degenerate: bool,
}

/// Grid-rule interval type-II FIS producing the proportional and integral gains.
#[derive(Debug, Clone, PartialEq)]
pub struct It2Fis {
    input_mfs: [Vec<It2Gaussian>; N_INPUTS],
    theta_kp: Vec<f64>,
    theta_ki: Vec<f64>,
    blend_m: f64,
    input_scales: [f64; N_INPUTS],
}

impl It2Fis {
    pub fn new(
        input_mfs: [Vec<It2Gaussian>; N_INPUTS],
        theta_kp: Vec<f64>,
        theta_ki: Vec<f64>,
        blend_m: f64,
        input_scales: [f64; N_INPUTS],
    ) -> Result<Self> {
        let fis = Self {
            input_mfs,
            theta_kp,
            theta_ki,
            blend_m,
            input_scales,
        };
        fis.validate()?;
        Ok(fis)
    }

    /// Three Gaussians per input centred at -1, 0 and 1 with widths 0.36/0.6,
    /// and constant consequents `kp` / `ki` on all nine rules.
    pub fn grid3(kp: f64, ki: f64, input_scales: [f64; N_INPUTS]) -> Result<Self> {
        let mfs = || {
            [-1.0, 0.0, 1.0]
                .iter()
                .map(|&c| It2Gaussian {
                    center: c,
                    sigma_lower: 0.36,
                    sigma_upper: 0.6,
                })
                .collect::<Vec<_>>()
        };
        Self::new([mfs(), mfs()], vec![kp; 9], vec![ki; 9], 0.5, input_scales)
    }

    fn validate(&self) -> Result<()> {
        for mfs in &self.input_mfs {
            if mfs.is_empty() {
                return Err(config_err("every FIS input needs at least one membership function"));
            }
            for mf in mfs {
                mf.validate()?;
            }
        }
        let m = self.rule_count();
        for (name, theta) in [("theta_kp", &self.theta_kp), ("theta_ki", &self.theta_ki)] {
            if theta.len() != m {
                return Err(config_err(alloc::format!(
                    "{name} has {} entries, rule base has {m}",
                    theta.len()
                )));
            }
            if theta.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(config_err(alloc::format!("{name} entries must be finite and >= 0")));
            }
        }
        if !(0.0..=1.0).contains(&self.blend_m) {
            return Err(config_err(alloc::format!("blend_m {} outside [0, 1]", self.blend_m)));
        }
        if self.input_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(config_err("input scales must be positive"));
        }
        Ok(())
    }

    pub fn input_mfs(&self) -> &[Vec<It2Gaussian>; N_INPUTS] {
        &self.input_mfs
    }

    pub fn theta_kp(&self) -> &[f64] {
        &self.theta_kp
    }

    pub fn theta_ki(&self) -> &[f64] {
        &self.theta_ki
    }

    pub fn blend_m(&self) -> f64 {
        self.blend_m
    }

    pub fn input_scales(&self) -> [f64; N_INPUTS] {
        self.input_scales
    }

    /// Rule count `m`: the product of the per-input MF counts.
    pub fn rule_count(&self) -> usize {
        self.input_mfs.iter().map(Vec::len).product()
    }

    /// Scales raw `(e, de/dt)` into the `[-1, 1]` universe, saturating.
    pub fn normalize(&self, e: f64, e_dot: f64) -> [f64; N_INPUTS] {
        [
            (e * self.input_scales[0]).clamp(-1.0, 1.0),
            (e_dot * self.input_scales[1]).clamp(-1.0, 1.0),
        ]
    }

    /// Normalized firing strengths of every rule for already scaled inputs.
    ///
    /// Rule `j = i_e * n_edot + i_edot`, i.e. error MF index major.
    pub fn firing_strengths(&self, inputs: [f64; N_INPUTS]) -> Firing {
        let [mf_e, mf_de] = &self.input_mfs;
        let mut upper = Vec::with_capacity(self.rule_count());
        let mut lower = Vec::with_capacity(self.rule_count());
        let grades_de: Vec<(f64, f64)> = mf_de.iter().map(|mf| mf.grade(inputs[1])).collect();
        for mf in mf_e {
            let (lo_e, up_e) = mf.grade(inputs[0]);
            for &(lo_de, up_de) in &grades_de {
                lower.push(lo_e * lo_de);
                upper.push(up_e * up_de);
            }
        }
        let deg_u = normalize_in_place(&mut upper);
        let deg_l = normalize_in_place(&mut lower);
        Firing {
            upper,
            lower,
            degenerate: deg_u || deg_l,
        }
    }

    /// Type-reduced output for consequent centers `theta` at scaled inputs.
    pub fn infer(&self, inputs: [f64; N_INPUTS], theta: &[f64]) -> Result<f64> {
        if theta.len() != self.rule_count() {
            return Err(config_err(alloc::format!(
                "theta has {} entries, rule base has {}",
                theta.len(),
                self.rule_count()
            )));
        }
        let firing = self.firing_strengths(inputs);
        Ok(self.reduce(&firing, theta))
    }

    fn reduce(&self, firing: &Firing, theta: &[f64]) -> f64 {
        let y_upper = weighted_center(theta, &firing.upper);
        let y_lower = weighted_center(theta, &firing.lower);
        blend(self.blend_m, y_upper, y_lower)
    }

    /// Scheduled `(kp, ki)` for raw error `e` and derivative `e_dot`.
    pub fn schedule_gains(&self, e: f64, e_dot: f64) -> (f64, f64) {
        let firing = self.firing_strengths(self.normalize(e, e_dot));
        (
            self.reduce(&firing, &self.theta_kp),
            self.reduce(&firing, &self.theta_ki),
        )
    }

    /// Flat parameter vector: per input, each MF as `(center, sigma_lower,
    /// sigma_upper)`; then `theta_kp`, `theta_ki` and `blend_m`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for mfs in &self.input_mfs {
            for mf in mfs {
                out.extend_from_slice(&[mf.center, mf.sigma_lower, mf.sigma_upper]);
            }
        }
        out.extend_from_slice(&self.theta_kp);
        out.extend_from_slice(&self.theta_ki);
        out.push(self.blend_m);
        out
    }

    pub fn flat_len(&self) -> usize {
        flat_len(&self.mf_counts())
    }

    pub fn mf_counts(&self) -> [usize; N_INPUTS] {
        [self.input_mfs[0].len(), self.input_mfs[1].len()]
    }

    /// Inverse of [`to_flat`](Self::to_flat) for the given MF counts.
    pub fn from_flat(mf_counts: [usize; N_INPUTS], flat: &[f64], input_scales: [f64; N_INPUTS]) -> Result<Self> {
        if flat.len() != flat_len(&mf_counts) {
            return Err(config_err(alloc::format!(
                "flat FIS vector has {} entries, expected {}",
                flat.len(),
                flat_len(&mf_counts)
            )));
        }
        let mut it = flat.iter().copied();
        let mut next = || it.next().unwrap_or(f64::NAN);
        let mut input_mfs: [Vec<It2Gaussian>; N_INPUTS] = [Vec::new(), Vec::new()];
        for (mfs, &count) in input_mfs.iter_mut().zip(&mf_counts) {
            for _ in 0..count {
                mfs.push(It2Gaussian {
                    center: next(),
                    sigma_lower: next(),
                    sigma_upper: next(),
                });
            }
        }
        let m: usize = mf_counts.iter().product();
        let theta_kp = (0..m).map(|_| next()).collect();
        let theta_ki = (0..m).map(|_| next()).collect();
        let blend_m = next();
        Self::new(input_mfs, theta_kp, theta_ki, blend_m, input_scales)
    }
}

/// Length of the flat parameter vector for the given MF counts.
pub fn flat_len(mf_counts: &[usize; N_INPUTS]) -> usize {
    let m: usize = mf_counts.iter().product();
    3 * mf_counts.iter().sum::<usize>() + 2 * m + 1
}

// Returns true when the sum underflowed and uniform weights were substituted.
fn normalize_in_place(w: &mut [f64]) -> bool {
    let total: f64 = w.iter().sum();
    if !(total >= f64::MIN_POSITIVE) {
        let uniform = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|x| *x = uniform);
        return true;
    }
    w.iter_mut().for_each(|x| *x /= total);
    false
}

// theta . xi, written as an offset from min(theta) so that constant
// consequents come back bit-exact and the result never leaves [min, max].
fn weighted_center(theta: &[f64], xi: &[f64]) -> f64 {
    let (lo, hi) = theta.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
        (lo.min(t), hi.max(t))
    });
    let offset: f64 = theta.iter().zip(xi).map(|(t, x)| (t - lo) * x).sum();
    (lo + offset).clamp(lo, hi)
}

fn blend(m: f64, y_upper: f64, y_lower: f64) -> f64 {
    if y_upper == y_lower {
        y_upper
    } else {
        m * y_upper + (1.0 - m) * y_lower
    }
}
