//! Average model of a three-phase grid-connected MMC with `n_cells` half-bridge
//! cells per arm.
//!
//! Per phase, with insertion `s_i` of cell `i` and grid phase voltage `v_ph`:
//!
//! ```text
//! L di_u/dt = vdc/2 - sum_i s_i vc_u,i - R i_u - v_ph
//! L di_l/dt = vdc/2 - sum_i s_i vc_l,i - R i_l + v_ph
//! C dvc_u,i/dt = s_i i_u
//! C dvc_l,i/dt = s_i i_l
//! ```
//!
//! The same insertion enters the arm voltage sum and the capacitor current in
//! both arms; the lower arm's insertion is produced directly by the modulator.
//! With that convention the stored energy obeys
//! `dE/dt = vdc/2 (i_u + i_l) - R (i_u^2 + i_l^2) - v_ph (i_u - i_l)`.
//!
//! Flat state layout, per phase: `[i_u, i_l, vc_u[0..n], vc_l[0..n]]`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{config_err, Result};
use crate::signals::abc_to_dq;

pub const PHASES: usize = 3;

/// Electrical parameters of the converter and the stiff grid it feeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MmcParams {
    pub n_cells: usize,
    /// H
    pub arm_inductance: f64,
    /// Ohm
    pub arm_resistance: f64,
    /// F
    pub cell_capacitance: f64,
    /// Phase peak voltage, V.
    pub grid_amplitude: f64,
    /// rad/s
    pub grid_freq: f64,
    /// Per-phase amplitude multipliers; `[1, 1, 1]` is a balanced grid.
    pub grid_phase_scale: [f64; PHASES],
}

impl MmcParams {
    /// Desk-scale defaults: 4 cells, 5 mH, 0.1 Ohm, 2 mF, 50 Hz grid at
    /// `0.35 * vdc` phase peak.
    pub fn desk_scale(vdc: f64) -> Self {
        Self {
            n_cells: 4,
            arm_inductance: 5e-3,
            arm_resistance: 0.1,
            cell_capacitance: 2e-3,
            grid_amplitude: 0.35 * vdc,
            grid_freq: 2.0 * PI * 50.0,
            grid_phase_scale: [1.0; PHASES],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 {
            return Err(config_err("n_cells must be at least 1"));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.arm_inductance) || !positive(self.cell_capacitance) {
            return Err(config_err("arm inductance and cell capacitance must be positive"));
        }
        if !(self.arm_resistance.is_finite() && self.arm_resistance >= 0.0) {
            return Err(config_err("arm resistance must be >= 0"));
        }
        if !(self.grid_amplitude.is_finite() && self.grid_amplitude >= 0.0 && positive(self.grid_freq)) {
            return Err(config_err("grid amplitude must be >= 0 and grid frequency positive"));
        }
        if self.grid_phase_scale.iter().any(|s| !s.is_finite()) {
            return Err(config_err("grid phase scales must be finite"));
        }
        Ok(())
    }

    /// Length of the flat state vector, `3 (2 + 2 n_cells)`.
    pub fn state_len(&self) -> usize {
        PHASES * self.phase_len()
    }

    fn phase_len(&self) -> usize {
        2 + 2 * self.n_cells
    }

    /// Grid angle of phase a at time `t`.
    pub fn grid_angle(&self, t: f64) -> f64 {
        self.grid_freq * t
    }

    /// Ideal grid phase voltages at `t`.
    pub fn grid_voltage(&self, t: f64) -> [f64; PHASES] {
        let th = self.grid_angle(t);
        let mut v = [0.0; PHASES];
        for (p, v) in v.iter_mut().enumerate() {
            *v = self.grid_amplitude * self.grid_phase_scale[p] * libm::cos(th - p as f64 * 2.0 * PI / 3.0);
        }
        v
    }

    /// Nominal fundamental frequency in Hz.
    pub fn grid_hz(&self) -> f64 {
        self.grid_freq / (2.0 * PI)
    }
}

/// Arm currents and cell capacitor voltages of all three phases.
#[derive(Debug, Clone, PartialEq)]
pub struct MmcState {
    n_cells: usize,
    x: Vec<f64>,
}

impl MmcState {
    pub fn zeros(n_cells: usize) -> Self {
        Self {
            n_cells,
            x: vec![0.0; PHASES * (2 + 2 * n_cells)],
        }
    }

    /// Zero currents, every capacitor at `vdc / n_cells`.
    pub fn precharged(params: &MmcParams, vdc: f64) -> Self {
        let mut s = Self::zeros(params.n_cells);
        let v = vdc / params.n_cells as f64;
        for p in 0..PHASES {
            s.vcap_upper_mut(p).fill(v);
            s.vcap_lower_mut(p).fill(v);
        }
        s
    }

    pub fn from_vec(n_cells: usize, x: Vec<f64>) -> Result<Self> {
        if x.len() != PHASES * (2 + 2 * n_cells) {
            return Err(config_err("state vector length does not match n_cells"));
        }
        Ok(Self { n_cells, x })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.x
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.x
    }

    fn base(&self, phase: usize) -> usize {
        phase * (2 + 2 * self.n_cells)
    }

    pub fn i_upper(&self, phase: usize) -> f64 {
        self.x[self.base(phase)]
    }

    pub fn i_lower(&self, phase: usize) -> f64 {
        self.x[self.base(phase) + 1]
    }

    pub fn set_arm_currents(&mut self, phase: usize, i_upper: f64, i_lower: f64) {
        let b = self.base(phase);
        self.x[b] = i_upper;
        self.x[b + 1] = i_lower;
    }

    pub fn vcap_upper(&self, phase: usize) -> &[f64] {
        let b = self.base(phase) + 2;
        &self.x[b..b + self.n_cells]
    }

    pub fn vcap_lower(&self, phase: usize) -> &[f64] {
        let b = self.base(phase) + 2 + self.n_cells;
        &self.x[b..b + self.n_cells]
    }

    pub fn vcap_upper_mut(&mut self, phase: usize) -> &mut [f64] {
        let b = self.base(phase) + 2;
        let n = self.n_cells;
        &mut self.x[b..b + n]
    }

    pub fn vcap_lower_mut(&mut self, phase: usize) -> &mut [f64] {
        let b = self.base(phase) + 2 + self.n_cells;
        let n = self.n_cells;
        &mut self.x[b..b + n]
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// Per-cell insertion of every arm, each entry in `[0, 1]`.
///
/// Flat layout, per phase: `[upper[0..n], lower[0..n]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmDuties {
    n_cells: usize,
    d: Vec<f64>,
    /// Number of arm insertion indices clipped at 0 or 1 when these duties
    /// were produced.
    pub overmodulated: usize,
}

impl ArmDuties {
    pub fn uniform(n_cells: usize, upper: [f64; PHASES], lower: [f64; PHASES]) -> Self {
        let mut d = Vec::with_capacity(PHASES * 2 * n_cells);
        for p in 0..PHASES {
            d.extend(core::iter::repeat_n(upper[p].clamp(0.0, 1.0), n_cells));
            d.extend(core::iter::repeat_n(lower[p].clamp(0.0, 1.0), n_cells));
        }
        Self {
            n_cells,
            d,
            overmodulated: 0,
        }
    }

    pub fn upper(&self, phase: usize) -> &[f64] {
        let b = phase * 2 * self.n_cells;
        &self.d[b..b + self.n_cells]
    }

    pub fn lower(&self, phase: usize) -> &[f64] {
        let b = phase * 2 * self.n_cells + self.n_cells;
        &self.d[b..b + self.n_cells]
    }

    fn upper_mut(&mut self, phase: usize) -> &mut [f64] {
        let b = phase * 2 * self.n_cells;
        let n = self.n_cells;
        &mut self.d[b..b + n]
    }

    fn lower_mut(&mut self, phase: usize) -> &mut [f64] {
        let b = phase * 2 * self.n_cells + self.n_cells;
        let n = self.n_cells;
        &mut self.d[b..b + n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.d
    }
}

/// Writes the time derivative of the flat state `x` into `dx`.
pub fn derivatives_into(x: &[f64], duties: &ArmDuties, params: &MmcParams, vdc: f64, t: f64, dx: &mut [f64]) {
    let n = params.n_cells;
    let stride = 2 + 2 * n;
    let inv_l = 1.0 / params.arm_inductance;
    let inv_c = 1.0 / params.cell_capacitance;
    let r = params.arm_resistance;
    let v_grid = params.grid_voltage(t);
    for p in 0..PHASES {
        let b = p * stride;
        let (i_u, i_l) = (x[b], x[b + 1]);
        let vc_u = &x[b + 2..b + 2 + n];
        let vc_l = &x[b + 2 + n..b + stride];
        let (d_u, d_l) = (duties.upper(p), duties.lower(p));
        let mut v_arm_u = 0.0;
        let mut v_arm_l = 0.0;
        for i in 0..n {
            v_arm_u += d_u[i] * vc_u[i];
            v_arm_l += d_l[i] * vc_l[i];
            dx[b + 2 + i] = d_u[i] * i_u * inv_c;
            dx[b + 2 + n + i] = d_l[i] * i_l * inv_c;
        }
        dx[b] = (0.5 * vdc - v_arm_u - r * i_u - v_grid[p]) * inv_l;
        dx[b + 1] = (0.5 * vdc - v_arm_l - r * i_l + v_grid[p]) * inv_l;
    }
}

/// Time derivative of `state` as a state-shaped value.
pub fn derivatives(state: &MmcState, duties: &ArmDuties, params: &MmcParams, vdc: f64, t: f64) -> MmcState {
    let mut out = MmcState::zeros(state.n_cells);
    derivatives_into(&state.x, duties, params, vdc, t, &mut out.x);
    out
}

/// Maps per-phase voltage references to uniform arm insertions
/// `n_u = 1/2 - v_ref/vdc`, `n_l = 1/2 + v_ref/vdc`, clamped to `[0, 1]`.
pub fn modulate(v_ref: [f64; PHASES], vdc: f64, n_cells: usize) -> ArmDuties {
    let mut upper = [0.0; PHASES];
    let mut lower = [0.0; PHASES];
    let mut clipped = 0;
    for p in 0..PHASES {
        let (nu, nl) = (0.5 - v_ref[p] / vdc, 0.5 + v_ref[p] / vdc);
        clipped += usize::from(!(0.0..=1.0).contains(&nu)) + usize::from(!(0.0..=1.0).contains(&nl));
        upper[p] = nu;
        lower[p] = nl;
    }
    let mut d = ArmDuties::uniform(n_cells, upper, lower);
    d.overmodulated = clipped;
    d
}

/// Converts each arm's mean insertion index into binary per-cell insertions:
/// `round(index * n_cells)` cells are inserted, the lowest-voltage ones when
/// the arm current charges them (`i >= 0`) and the highest-voltage ones
/// otherwise.
pub fn balance_sort(state: &MmcState, duties: &ArmDuties) -> ArmDuties {
    let n = duties.n_cells;
    let mut out = duties.clone();
    let mut order: Vec<usize> = Vec::with_capacity(n);
    let mut select = |vcap: &[f64], current: f64, target: &mut [f64]| {
        let index = target.iter().sum::<f64>() / n as f64;
        let count = (libm::round(index * n as f64) as usize).min(n);
        order.clear();
        order.extend(0..n);
        // stable sort keeps the selection deterministic for equal voltages
        if current >= 0.0 {
            order.sort_by(|&a, &b| vcap[a].total_cmp(&vcap[b]));
        } else {
            order.sort_by(|&a, &b| vcap[b].total_cmp(&vcap[a]));
        }
        target.fill(0.0);
        for &cell in &order[..count] {
            target[cell] = 1.0;
        }
    };
    for p in 0..PHASES {
        select(state.vcap_upper(p), state.i_upper(p), out.upper_mut(p));
        select(state.vcap_lower(p), state.i_lower(p), out.lower_mut(p));
    }
    out
}

/// Measured quantities at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantOutputs {
    /// Grid-side phase currents `i_u - i_l`.
    pub i_abc: [f64; PHASES],
    /// Circulating currents `(i_u + i_l) / 2`.
    pub i_circ: [f64; PHASES],
    /// Converter phase EMF `(v_arm_l - v_arm_u) / 2` against the DC midpoint.
    pub v_conv: [f64; PHASES],
    /// Converter line-line voltages `[ab, bc, ca]`.
    pub v_ll: [f64; PHASES],
    pub v_grid: [f64; PHASES],
    pub v_dq: (f64, f64),
    pub i_dq: (f64, f64),
    pub theta: f64,
}

pub fn outputs(state: &MmcState, duties: &ArmDuties, params: &MmcParams, t: f64) -> PlantOutputs {
    let mut o = PlantOutputs {
        theta: params.grid_angle(t),
        v_grid: params.grid_voltage(t),
        ..Default::default()
    };
    for p in 0..PHASES {
        let (iu, il) = (state.i_upper(p), state.i_lower(p));
        o.i_abc[p] = iu - il;
        o.i_circ[p] = 0.5 * (iu + il);
        let v_u: f64 = duties
            .upper(p)
            .iter()
            .zip(state.vcap_upper(p))
            .map(|(d, v)| d * v)
            .sum();
        let v_l: f64 = duties
            .lower(p)
            .iter()
            .zip(state.vcap_lower(p))
            .map(|(d, v)| d * v)
            .sum();
        o.v_conv[p] = 0.5 * (v_l - v_u);
    }
    for p in 0..PHASES {
        o.v_ll[p] = o.v_conv[p] - o.v_conv[(p + 1) % PHASES];
    }
    o.v_dq = abc_to_dq(o.v_grid, o.theta);
    o.i_dq = abc_to_dq(o.i_abc, o.theta);
    o
}

/// Magnetic plus capacitive stored energy, J.
pub fn stored_energy(state: &MmcState, params: &MmcParams) -> f64 {
    let mut e = 0.0;
    for p in 0..PHASES {
        e += 0.5 * params.arm_inductance * (state.i_upper(p) * state.i_upper(p) + state.i_lower(p) * state.i_lower(p));
        let caps = state.vcap_upper(p).iter().chain(state.vcap_lower(p));
        e += 0.5 * params.cell_capacitance * caps.map(|v| v * v).sum::<f64>();
    }
    e
}

/// Instantaneous power terms of the energy balance, W.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PowerFlows {
    /// Delivered by the DC link.
    pub dc: f64,
    /// Dissipated in the arm resistances.
    pub loss: f64,
    /// Delivered to the grid.
    pub ac: f64,
}

pub fn power_flows(state: &MmcState, params: &MmcParams, vdc: f64, t: f64) -> PowerFlows {
    let v = params.grid_voltage(t);
    let mut f = PowerFlows::default();
    for (p, vp) in v.iter().enumerate() {
        let (iu, il) = (state.i_upper(p), state.i_lower(p));
        f.dc += 0.5 * vdc * (iu + il);
        f.loss += params.arm_resistance * (iu * iu + il * il);
        f.ac += vp * (iu - il);
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> MmcParams {
        MmcParams::desk_scale(500.0)
    }

    #[test]
    fn state_layout() {
        let p = params();
        let s = MmcState::precharged(&p, 500.0);
        assert_eq!(s.as_slice().len(), p.state_len());
        assert_eq!(p.state_len(), 3 * (2 + 2 * 4));
        assert!(s.vcap_lower(2).iter().all(|&v| v == 125.0));
        assert!(MmcState::from_vec(4, vec![0.0; 7]).is_err());
    }

    #[test]
    fn balanced_terms_cancel() {
        let mut p = params();
        p.grid_amplitude = 250.0;
        let s = MmcState::precharged(&p, 500.0);
        let d = ArmDuties::uniform(4, [0.0; 3], [0.0; 3]);
        // at t = 0 phase a grid voltage equals vdc/2
        let dx = derivatives(&s, &d, &p, 500.0, 0.0);
        assert_eq!(dx.i_upper(0), 0.0);
        assert!(dx.vcap_upper(0).iter().chain(dx.vcap_lower(0)).all(|&v| v == 0.0));
    }

    #[test]
    fn full_insertion_charges_at_i_over_c() {
        let mut p = params();
        p.cell_capacitance = 1e-3;
        let mut s = MmcState::precharged(&p, 500.0);
        s.set_arm_currents(1, 1.0, 0.0);
        let d = ArmDuties::uniform(4, [1.0; 3], [0.0; 3]);
        let dx = derivatives(&s, &d, &p, 500.0, 0.0);
        for v in dx.vcap_upper(1) {
            assert!((v - 1000.0).abs() < 1e-9);
        }
    }

    #[test]
    fn homogeneous_part_is_linear() {
        let mut p = params();
        p.grid_amplitude = 0.0;
        let d = modulate([100.0, -40.0, 7.0], 500.0, 4);
        let x1: Vec<f64> = (0..p.state_len()).map(|i| (i as f64 * 0.37).sin() * 50.0).collect();
        let x2: Vec<f64> = (0..p.state_len()).map(|i| (i as f64 * 1.1).cos() * 20.0).collect();
        let (a, b) = (1.7, -0.6);
        let mix: Vec<f64> = x1.iter().zip(&x2).map(|(u, v)| a * u + b * v).collect();
        let mut f1 = vec![0.0; p.state_len()];
        let mut f2 = f1.clone();
        let mut fm = f1.clone();
        derivatives_into(&x1, &d, &p, 0.0, 0.01, &mut f1);
        derivatives_into(&x2, &d, &p, 0.0, 0.01, &mut f2);
        derivatives_into(&mix, &d, &p, 0.0, 0.01, &mut fm);
        for i in 0..fm.len() {
            let lin = a * f1[i] + b * f2[i];
            assert!((fm[i] - lin).abs() <= 1e-9 * lin.abs().max(1.0));
        }
    }

    #[test]
    fn modulation_examples() {
        let d = modulate([0.0; 3], 500.0, 4);
        assert!(d.as_slice().iter().all(|&x| x == 0.5));
        assert_eq!(d.overmodulated, 0);
        let d = modulate([250.0, 0.0, 0.0], 500.0, 4);
        assert!(d.upper(0).iter().all(|&x| x == 0.0));
        assert!(d.lower(0).iter().all(|&x| x == 1.0));
        let d = modulate([-300.0, 0.0, 0.0], 500.0, 4);
        assert!(d.upper(0).iter().all(|&x| x == 1.0));
        assert!(d.lower(0).iter().all(|&x| x == 0.0));
        assert_eq!(d.overmodulated, 2);
    }

    #[test]
    fn sorting_selects_by_voltage_and_current_sign() {
        let p = params();
        let mut s = MmcState::precharged(&p, 500.0);
        s.vcap_upper_mut(0).copy_from_slice(&[130.0, 120.0, 125.0, 118.0]);
        s.set_arm_currents(0, 5.0, -5.0);
        s.vcap_lower_mut(0).copy_from_slice(&[130.0, 120.0, 125.0, 118.0]);
        let d = balance_sort(&s, &modulate([0.0; 3], 500.0, 4));
        // half inserted: charging arm takes the two lowest, discharging the two highest
        assert_eq!(d.upper(0), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(d.lower(0), &[1.0, 0.0, 1.0, 0.0]);
        let uniform = MmcState::precharged(&p, 500.0);
        let d = balance_sort(&uniform, &modulate([60.0, 0.0, -60.0], 500.0, 4));
        for ph in 0..3 {
            let inserted: f64 = d.upper(ph).iter().sum();
            assert_eq!(inserted, (4.0f64 * (0.5 - [60.0, 0.0, -60.0][ph] / 500.0)).round());
        }
    }

    #[test]
    fn output_identities() {
        let p = params();
        let mut s = MmcState::precharged(&p, 500.0);
        let d = modulate([0.0; 3], 500.0, 4);
        for ph in 0..3 {
            s.set_arm_currents(ph, 3.0 + ph as f64, -(3.0 + ph as f64));
        }
        let o = outputs(&s, &d, &p, 0.0);
        assert!(o.i_circ.iter().all(|&x| x == 0.0));
        for ph in 0..3 {
            s.set_arm_currents(ph, 2.0, 2.0);
        }
        let o = outputs(&s, &d, &p, 0.0);
        assert!(o.i_abc.iter().all(|&x| x == 0.0));
        assert_eq!(o.i_circ, [2.0; 3]);
    }

    #[test]
    fn aligned_currents_map_to_d_axis() {
        let p = params();
        let t = 0.0123;
        let th = p.grid_angle(t);
        let mut s = MmcState::precharged(&p, 500.0);
        for ph in 0..3 {
            let i = 10.0 * (th - ph as f64 * 2.0 * PI / 3.0).cos();
            s.set_arm_currents(ph, i / 2.0, -i / 2.0);
        }
        let o = outputs(&s, &modulate([0.0; 3], 500.0, 4), &p, t);
        assert!((o.i_dq.0 - 10.0).abs() < 1e-12 && o.i_dq.1.abs() < 1e-12);
        assert!((o.v_dq.0 - p.grid_amplitude).abs() < 1e-9 && o.v_dq.1.abs() < 1e-9);
    }

    #[test]
    fn converter_emf_follows_reference() {
        let p = params();
        let s = MmcState::precharged(&p, 500.0);
        let v_ref = [120.0, -30.0, -90.0];
        let o = outputs(&s, &modulate(v_ref, 500.0, 4), &p, 0.0);
        for ph in 0..3 {
            assert!((o.v_conv[ph] - v_ref[ph]).abs() < 1e-9);
        }
        assert!((o.v_ll[0] - 150.0).abs() < 1e-9);
    }

    #[test]
    fn power_terms_match_energy_derivative() {
        let p = params();
        let mut s = MmcState::precharged(&p, 500.0);
        for ph in 0..3 {
            s.set_arm_currents(ph, 4.0 - ph as f64, -1.5 + 0.7 * ph as f64);
        }
        s.vcap_upper_mut(1)[2] = 110.0;
        let d = modulate([80.0, -20.0, -60.0], 500.0, 4);
        let dx = derivatives(&s, &d, &p, 500.0, 0.004);
        let mut de = 0.0;
        for ph in 0..3 {
            de += p.arm_inductance * (s.i_upper(ph) * dx.i_upper(ph) + s.i_lower(ph) * dx.i_lower(ph));
            for (v, dv) in s.vcap_upper(ph).iter().zip(dx.vcap_upper(ph)) {
                de += p.cell_capacitance * v * dv;
            }
            for (v, dv) in s.vcap_lower(ph).iter().zip(dx.vcap_lower(ph)) {
                de += p.cell_capacitance * v * dv;
            }
        }
        let f = power_flows(&s, &p, 500.0, 0.004);
        assert!((de - (f.dc - f.loss - f.ac)).abs() < 1e-9 * f.dc.abs().max(1.0));
    }

    #[test]
    fn invalid_params() {
        let mut p = params();
        p.arm_inductance = 0.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.arm_resistance = -1.0;
        assert!(p.validate().is_err());
        let mut p = params();
        p.n_cells = 0;
        assert!(p.validate().is_err());
        assert!(params().validate().is_ok());
    }
}
