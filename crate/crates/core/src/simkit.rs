//! Fixed-step closed-loop scenario runner.
//!
//! The plant is integrated with classical RK4 at `dt_sim` while the duties are
//! held (zero-order hold). Every `dt_ctrl` the loop samples the plant, forms
//! the dq current errors, steps one controller per axis, maps the dq voltage
//! back to abc, modulates and logs one sample.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::controllers::{ControlLaw, ControlSample, ControllerState};
use crate::error::{config_err, Error, Result};
use crate::fracorder::OustaloupBand;
use crate::mmcplant::{
    balance_sort, derivatives_into, modulate, outputs, power_flows, stored_energy, ArmDuties, MmcParams, MmcState,
    PHASES,
};
use crate::signals::{self, dq_to_abc, power_to_current_refs, ThdReport};

/// Scratch space for RK4 on a flat state vector.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(len: usize) -> Self {
        Self {
            k: [vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]],
            tmp: vec![0.0; len],
        }
    }

    /// Advances `x` from `t` to `t + dt` for `x' = f(t, x)`.
    pub fn step<F>(&mut self, mut f: F, t: f64, x: &mut [f64], dt: f64)
    where
        F: FnMut(f64, &[f64], &mut [f64]),
    {
        let [k1, k2, k3, k4] = &mut self.k;
        let tmp = &mut self.tmp;
        f(t, x, k1);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        f(t + 0.5 * dt, tmp, k2);
        for i in 0..x.len() {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        f(t + 0.5 * dt, tmp, k3);
        for i in 0..x.len() {
            tmp[i] = x[i] + dt * k3[i];
        }
        f(t + dt, tmp, k4);
        for i in 0..x.len() {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// One RK4 step of the MMC with `duties` and `vdc` held over the step.
pub fn rk4_step(
    rk: &mut Rk4,
    state: &mut MmcState,
    duties: &ArmDuties,
    params: &MmcParams,
    vdc: f64,
    t: f64,
    dt: f64,
) -> Result<()> {
    if !(dt > 0.0) {
        return Err(config_err("integration step must be positive"));
    }
    rk.step(
        |tt, x, dx| derivatives_into(x, duties, params, vdc, tt, dx),
        t,
        state.as_mut_slice(),
        dt,
    );
    if !state.is_finite() {
        return Err(Error::Fault {
            time: t + dt,
            reason: "non-finite plant state".to_string(),
        });
    }
    Ok(())
}

/// Piecewise-constant schedule; the value at `t` is that of the last
/// breakpoint at or before `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    points: Vec<(f64, T)>,
}

impl<T: Clone> Schedule<T> {
    pub fn constant(value: T) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    /// Breakpoints must start at `t = 0` and strictly increase.
    pub fn new(points: Vec<(f64, T)>) -> Result<Self> {
        if points.first().map(|p| p.0) != Some(0.0) {
            return Err(config_err("schedules must start with a breakpoint at t = 0"));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0) || !w[1].0.is_finite()) {
            return Err(config_err("schedule breakpoints must be strictly increasing"));
        }
        Ok(Self { points })
    }

    /// Two-level step at `t_step`.
    pub fn step(before: T, t_step: f64, after: T) -> Result<Self> {
        Self::new(vec![(0.0, before), (t_step, after)])
    }

    pub fn points(&self) -> &[(f64, T)] {
        &self.points
    }

    pub fn at(&self, t: f64) -> &T {
        // tolerate accumulated rounding on sample times that land on a breakpoint
        let idx = self.points.partition_point(|p| p.0 <= t + 1e-9 * t.abs().max(1e-6));
        &self.points[idx.saturating_sub(1)].1
    }
}

/// Current-loop setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Setpoint {
    /// dq currents, A.
    Current { id: f64, iq: f64 },
    /// Active (W) and reactive (var) power.
    Power { p: f64, q: f64 },
}

/// Controllers of both axes and their shared settings.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSpec {
    pub d: ControlLaw,
    pub q: ControlLaw,
    pub band: OustaloupBand,
    /// Output bound as a multiple of `vdc / 2`.
    pub u_max_factor: f64,
}

impl ControllerSpec {
    pub fn new(d: ControlLaw, q: ControlLaw) -> Self {
        Self {
            d,
            q,
            band: OustaloupBand::default(),
            u_max_factor: 1.2,
        }
    }

    pub fn is_fofpi(&self) -> bool {
        matches!(self.d, ControlLaw::Fofpi(_)) || matches!(self.q, ControlLaw::Fofpi(_))
    }
}

/// A complete closed-loop experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    /// s
    pub duration: f64,
    /// Integration step, s.
    pub dt_sim: f64,
    /// Control and logging period, an integer multiple of `dt_sim`, s.
    pub dt_ctrl: f64,
    pub plant: MmcParams,
    pub vdc_profile: Schedule<f64>,
    pub reference: Schedule<Setpoint>,
    pub controller: ControllerSpec,
    /// Fundamental cycles at the end of each segment used for THD.
    pub thd_window: usize,
    pub max_harmonic: usize,
    /// Rated current; sets the divergence threshold for arm currents.
    pub i_rated: f64,
    /// A state beyond `divergence_factor` times nominal is a fault.
    pub divergence_factor: f64,
    pub balance_sorting: bool,
    /// Grid d-axis voltage below which power setpoints cannot be converted.
    pub v_min_ref: f64,
    pub seed: u64,
}

impl Scenario {
    /// Desk-scale default: constant `vdc`, `i_d* = 10 A`, `i_q* = 0`.
    pub fn desk_scale(vdc: f64, duration: f64, controller: ControllerSpec) -> Self {
        Self {
            duration,
            dt_sim: 20e-6,
            dt_ctrl: 100e-6,
            plant: MmcParams::desk_scale(vdc),
            vdc_profile: Schedule::constant(vdc),
            reference: Schedule::constant(Setpoint::Current { id: 10.0, iq: 0.0 }),
            controller,
            thd_window: 5,
            max_harmonic: signals::DEFAULT_MAX_HARMONIC,
            i_rated: 10.0,
            divergence_factor: 10.0,
            balance_sorting: false,
            v_min_ref: 1.0,
            seed: 0,
        }
    }

    /// Number of integration steps per control period.
    pub fn substeps(&self) -> Result<usize> {
        let ratio = self.dt_ctrl / self.dt_sim;
        let n = libm::round(ratio);
        if !(n >= 1.0) || (ratio - n).abs() > 1e-9 * ratio {
            return Err(config_err(alloc::format!(
                "dt_ctrl ({}) must be an integer multiple of dt_sim ({})",
                self.dt_ctrl,
                self.dt_sim
            )));
        }
        Ok(n as usize)
    }

    /// Number of control periods in the run.
    pub fn control_steps(&self) -> usize {
        libm::floor(self.duration / self.dt_ctrl + 1e-9) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_sim > 0.0 && self.dt_ctrl > 0.0 && self.duration > 0.0) {
            return Err(config_err("duration and time steps must be positive"));
        }
        self.substeps()?;
        self.plant.validate()?;
        if self
            .vdc_profile
            .points()
            .iter()
            .any(|p| !(p.1.is_finite() && p.1 > 0.0))
        {
            return Err(config_err("DC-link voltage must be positive at all times"));
        }
        let f0 = self.plant.grid_hz();
        if self.duration * f0 < 2.0 + self.thd_window as f64 - 1e-9 {
            return Err(config_err(alloc::format!(
                "duration {} s is shorter than 2 cycles plus the {}-cycle THD window",
                self.duration,
                self.thd_window
            )));
        }
        self.controller.d.validate()?;
        self.controller.q.validate()?;
        if !(self.controller.u_max_factor > 0.0) {
            return Err(config_err("u_max factor must be positive"));
        }
        if !(self.i_rated > 0.0 && self.divergence_factor > 1.0) {
            return Err(config_err("i_rated must be positive and divergence factor > 1"));
        }
        Ok(())
    }

    /// FNV-1a hash of every field; identical scenarios hash identically.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.f(self.duration).f(self.dt_sim).f(self.dt_ctrl);
        let p = &self.plant;
        h.u(p.n_cells as u64)
            .f(p.arm_inductance)
            .f(p.arm_resistance)
            .f(p.cell_capacitance)
            .f(p.grid_amplitude)
            .f(p.grid_freq);
        p.grid_phase_scale.iter().for_each(|s| {
            h.f(*s);
        });
        for (t, v) in self.vdc_profile.points() {
            h.f(*t).f(*v);
        }
        for (t, s) in self.reference.points() {
            h.f(*t);
            match s {
                Setpoint::Current { id, iq } => h.u(1).f(*id).f(*iq),
                Setpoint::Power { p, q } => h.u(2).f(*p).f(*q),
            };
        }
        for law in [&self.controller.d, &self.controller.q] {
            match law {
                ControlLaw::Fopi(p) => {
                    h.u(1).f(p.kp).f(p.ki).f(p.alpha);
                }
                ControlLaw::Fofpi(p) => {
                    h.u(2).f(p.alpha);
                    p.fis.to_flat().iter().for_each(|x| {
                        h.f(*x);
                    });
                    p.fis.input_scales().iter().for_each(|x| {
                        h.f(*x);
                    });
                }
            }
        }
        let b = &self.controller.band;
        h.u(b.n_filter as u64)
            .f(b.omega_b)
            .f(b.omega_h)
            .f(self.controller.u_max_factor);
        h.u(self.thd_window as u64)
            .u(self.max_harmonic as u64)
            .f(self.i_rated)
            .f(self.divergence_factor)
            .u(self.balance_sorting as u64)
            .f(self.v_min_ref)
            .u(self.seed);
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Debug, Clone, Copy)]
pub struct Fnv(u64);

impl Fnv {
    pub fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub fn bytes(&mut self, bytes: &[u8]) -> &mut Self {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
        self
    }

    pub fn u(&mut self, x: u64) -> &mut Self {
        self.bytes(&x.to_le_bytes())
    }

    pub fn f(&mut self, x: f64) -> &mut Self {
        self.u(x.to_bits())
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv {
    fn default() -> Self {
        Self::new()
    }
}

/// A uniformly sampled logged signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub data: Vec<f64>,
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultRecord {
    pub time: f64,
    pub reason: String,
}

/// THD of the converter line-line voltage over the last cycles of a constant
/// DC-link segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentReport {
    pub t_start: f64,
    pub t_end: f64,
    pub vdc: f64,
    pub thd: core::result::Result<ThdReport, String>,
    /// RMS of the d/q current errors over the same window, A.
    pub rms_error_d: f64,
    pub rms_error_q: f64,
    /// Mean of `i_d` over the window, A.
    pub mean_i_d: f64,
}

/// Extremes of the applied gains on one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainExtrema {
    pub kp_min: f64,
    pub kp_max: f64,
    pub kp_max_time: f64,
    pub ki_min: f64,
    pub ki_max: f64,
}

/// Energy bookkeeping integrated alongside the plant (trapezoidal rule on the
/// instantaneous power terms at every integration step).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyAudit {
    pub stored_start: f64,
    pub stored_end: f64,
    pub dc_in: f64,
    pub losses: f64,
    pub ac_out: f64,
    /// `|dE - (dc_in - losses - ac_out)|`, J.
    pub residual: f64,
    /// `|dc_in| + losses + |ac_out|`, J.
    pub throughput: f64,
}

impl EnergyAudit {
    pub fn relative_residual(&self) -> f64 {
        self.residual / self.throughput
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub segments: Vec<SegmentReport>,
    pub gains_d: GainExtrema,
    pub gains_q: GainExtrema,
    pub energy: EnergyAudit,
    /// Control periods in which the modulator clipped at least one arm.
    pub overmodulated_steps: usize,
    /// Largest arm current magnitude seen, A.
    pub peak_arm_current: f64,
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub dt_log: f64,
    pub channels: Vec<Channel>,
    pub fingerprint: u64,
    pub summary: Summary,
    pub fault: Option<FaultRecord>,
    /// Final plant state (at the fault time if the run stopped early).
    pub final_state: MmcState,
}

impl RunLog {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channels.iter().find(|c| c.name == name).map(|c| c.data.as_slice())
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.data.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// FNV-1a over every logged value.
    pub fn data_digest(&self) -> u64 {
        let mut h = Fnv::new();
        for c in &self.channels {
            h.bytes(c.name.as_bytes());
            c.data.iter().for_each(|x| {
                h.f(*x);
            });
        }
        h.finish()
    }

    pub fn is_clean(&self) -> bool {
        self.fault.is_none()
    }
}

const PHASE_NAMES: [&str; PHASES] = ["a", "b", "c"];

/// Column order of the run log.
pub fn channel_names() -> Vec<String> {
    let mut names: Vec<String> = vec!["t".into(), "vdc".into()];
    for p in PHASE_NAMES {
        for q in ["i_u", "i_l", "i_ph", "i_circ"] {
            names.push(alloc::format!("{q}_{p}"));
        }
    }
    for n in ["v_ll_ab", "v_ll_bc", "v_ll_ca", "i_d", "i_q", "i_d_ref", "i_q_ref"] {
        names.push(n.into());
    }
    for axis in ["d", "q"] {
        for q in ["e", "kp", "ki", "u"] {
            names.push(alloc::format!("{q}_{axis}"));
        }
    }
    for p in PHASE_NAMES {
        for arm in ["u", "l"] {
            for stat in ["mean", "min", "max"] {
                names.push(alloc::format!("vcap_{stat}_{p}{arm}"));
            }
        }
    }
    names
}

struct Recorder {
    cols: Vec<Vec<f64>>,
    row: Vec<f64>,
}

impl Recorder {
    fn push_row(&mut self) {
        for (c, v) in self.cols.iter_mut().zip(self.row.drain(..)) {
            c.push(v);
        }
    }
}

fn arm_stats(v: &[f64]) -> [f64; 3] {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    [mean, min, max]
}

// Runaway check against nominal levels.
fn check_bounds(state: &MmcState, sc: &Scenario, vdc_max: f64, t: f64) -> core::result::Result<f64, FaultRecord> {
    if !state.is_finite() {
        return Err(FaultRecord {
            time: t,
            reason: "non-finite plant state".into(),
        });
    }
    let i_lim = sc.divergence_factor * sc.i_rated;
    let v_lim = sc.divergence_factor * vdc_max / sc.plant.n_cells as f64;
    let mut peak = 0.0f64;
    for p in 0..PHASES {
        let i = state.i_upper(p).abs().max(state.i_lower(p).abs());
        peak = peak.max(i);
        if i > i_lim {
            return Err(FaultRecord {
                time: t,
                reason: alloc::format!("arm current {i:.1} A exceeds {i_lim:.1} A in phase {}", PHASE_NAMES[p]),
            });
        }
        let caps = state.vcap_upper(p).iter().chain(state.vcap_lower(p));
        if let Some(v) = caps.map(|v| v.abs()).find(|v| *v > v_lim) {
            return Err(FaultRecord {
                time: t,
                reason: alloc::format!(
                    "capacitor voltage {v:.1} V exceeds {v_lim:.1} V in phase {}",
                    PHASE_NAMES[p]
                ),
            });
        }
    }
    Ok(peak)
}

/// Runs the closed loop. Configuration problems are errors; numerical
/// failures end the run early and are reported in [`RunLog::fault`].
pub fn run_scenario(sc: &Scenario) -> Result<RunLog> {
    sc.validate()?;
    let substeps = sc.substeps()?;
    let n_ctrl = sc.control_steps();
    let params = &sc.plant;
    let vdc_max = sc.vdc_profile.points().iter().map(|p| p.1).fold(0.0, f64::max);

    let vdc0 = *sc.vdc_profile.at(0.0);
    let spec = &sc.controller;
    let u_max0 = spec.u_max_factor * 0.5 * vdc0;
    let mut ctrl_d = ControllerState::for_law(&spec.d, &spec.band, sc.dt_ctrl, u_max0)?;
    let mut ctrl_q = ControllerState::for_law(&spec.q, &spec.band, sc.dt_ctrl, u_max0)?;

    let mut state = MmcState::precharged(params, vdc0);
    let mut rk = Rk4::new(params.state_len());
    let names = channel_names();
    let mut rec = Recorder {
        cols: names.iter().map(|_| Vec::with_capacity(n_ctrl + 1)).collect(),
        row: Vec::with_capacity(names.len()),
    };

    let mut energy = EnergyAudit {
        stored_start: stored_energy(&state, params),
        ..Default::default()
    };
    let mut overmodulated_steps = 0;
    let mut peak_arm_current = 0.0f64;
    let mut fault = None;
    let mut duties = modulate([0.0; PHASES], vdc0, params.n_cells);

    for k in 0..=n_ctrl {
        let t = k as f64 * sc.dt_ctrl;
        let vdc = *sc.vdc_profile.at(t);
        let meas = outputs(&state, &duties, params, t);

        let (id_ref, iq_ref) = match *sc.reference.at(t) {
            Setpoint::Current { id, iq } => (id, iq),
            Setpoint::Power { p, q } => match power_to_current_refs(p, q, meas.v_dq.0, sc.v_min_ref) {
                Ok(r) => r,
                Err(e) => {
                    fault = Some(FaultRecord {
                        time: t,
                        reason: e.to_string(),
                    });
                    break;
                }
            },
        };
        let (e_d, e_q) = (id_ref - meas.i_dq.0, iq_ref - meas.i_dq.1);
        let u_max = spec.u_max_factor * 0.5 * vdc;
        ctrl_d.set_u_max(u_max);
        ctrl_q.set_u_max(u_max);
        let step =
            |c: &mut ControllerState, law: &ControlLaw, e: f64| -> core::result::Result<ControlSample, FaultRecord> {
                c.step(law, e).map_err(|err| FaultRecord {
                    time: t,
                    reason: err.to_string(),
                })
            };
        let (out_d, out_q) = match (step(&mut ctrl_d, &spec.d, e_d), step(&mut ctrl_q, &spec.q, e_q)) {
            (Ok(d), Ok(q)) => (d, q),
            (Err(f), _) | (_, Err(f)) => {
                fault = Some(f);
                break;
            }
        };

        let v_ref = dq_to_abc((out_d.u, out_q.u), meas.theta);
        duties = modulate(v_ref, vdc, params.n_cells);
        if duties.overmodulated > 0 {
            overmodulated_steps += 1;
        }
        if sc.balance_sorting {
            duties = balance_sort(&state, &duties);
        }
        let applied = outputs(&state, &duties, params, t);

        rec.row.extend_from_slice(&[t, vdc]);
        for p in 0..PHASES {
            rec.row
                .extend_from_slice(&[state.i_upper(p), state.i_lower(p), meas.i_abc[p], meas.i_circ[p]]);
        }
        rec.row.extend_from_slice(&applied.v_ll);
        rec.row.extend_from_slice(&[meas.i_dq.0, meas.i_dq.1, id_ref, iq_ref]);
        rec.row
            .extend_from_slice(&[e_d, out_d.kp, out_d.ki, out_d.u, e_q, out_q.kp, out_q.ki, out_q.u]);
        for p in 0..PHASES {
            rec.row.extend_from_slice(&arm_stats(state.vcap_upper(p)));
            rec.row.extend_from_slice(&arm_stats(state.vcap_lower(p)));
        }
        rec.push_row();

        if k == n_ctrl {
            break;
        }

        let mut flows = power_flows(&state, params, vdc, t);
        for j in 0..substeps {
            let ts = (k * substeps + j) as f64 * sc.dt_sim;
            if let Err(Error::Fault { time, reason }) =
                rk4_step(&mut rk, &mut state, &duties, params, vdc, ts, sc.dt_sim)
            {
                fault = Some(FaultRecord { time, reason });
                break;
            }
            let next = power_flows(&state, params, vdc, ts + sc.dt_sim);
            let half = 0.5 * sc.dt_sim;
            energy.dc_in += half * (flows.dc + next.dc);
            energy.losses += half * (flows.loss + next.loss);
            energy.ac_out += half * (flows.ac + next.ac);
            flows = next;
        }
        if fault.is_some() {
            break;
        }
        match check_bounds(&state, sc, vdc_max, (k + 1) as f64 * sc.dt_ctrl) {
            Ok(peak) => peak_arm_current = peak_arm_current.max(peak),
            Err(f) => {
                fault = Some(f);
                break;
            }
        }
    }

    energy.stored_end = stored_energy(&state, params);
    energy.residual =
        ((energy.stored_end - energy.stored_start) - (energy.dc_in - energy.losses - energy.ac_out)).abs();
    energy.throughput = energy.dc_in.abs() + energy.losses + energy.ac_out.abs();

    let channels: Vec<Channel> = names
        .into_iter()
        .zip(rec.cols)
        .map(|(name, data)| Channel { name, data })
        .collect();
    let mut log = RunLog {
        dt_log: sc.dt_ctrl,
        channels,
        fingerprint: sc.fingerprint(),
        summary: Summary {
            segments: Vec::new(),
            gains_d: GainExtrema {
                kp_min: 0.0,
                kp_max: 0.0,
                kp_max_time: 0.0,
                ki_min: 0.0,
                ki_max: 0.0,
            },
            gains_q: GainExtrema {
                kp_min: 0.0,
                kp_max: 0.0,
                kp_max_time: 0.0,
                ki_min: 0.0,
                ki_max: 0.0,
            },
            energy,
            overmodulated_steps,
            peak_arm_current,
        },
        fault,
        final_state: state,
    };
    log.summary.segments = segment_reports(sc, &log);
    log.summary.gains_d = gain_extrema(&log, "d");
    log.summary.gains_q = gain_extrema(&log, "q");
    Ok(log)
}

fn gain_extrema(log: &RunLog, axis: &str) -> GainExtrema {
    let t = log.channel("t").unwrap_or(&[]);
    let kp = log.channel(&alloc::format!("kp_{axis}")).unwrap_or(&[]);
    let ki = log.channel(&alloc::format!("ki_{axis}")).unwrap_or(&[]);
    let mut g = GainExtrema {
        kp_min: f64::INFINITY,
        kp_max: f64::NEG_INFINITY,
        kp_max_time: 0.0,
        ki_min: f64::INFINITY,
        ki_max: f64::NEG_INFINITY,
    };
    for i in 0..kp.len() {
        if kp[i] > g.kp_max {
            g.kp_max = kp[i];
            g.kp_max_time = t[i];
        }
        g.kp_min = g.kp_min.min(kp[i]);
        g.ki_min = g.ki_min.min(ki[i]);
        g.ki_max = g.ki_max.max(ki[i]);
    }
    g
}

fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    libm::sqrt(x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64)
}

/// THD window `[start, end)` in log samples for each constant-`vdc` segment.
pub fn segment_windows(sc: &Scenario, samples: usize) -> Vec<(f64, f64, f64, usize, usize)> {
    let pts = sc.vdc_profile.points();
    let per_cycle = 1.0 / (sc.plant.grid_hz() * sc.dt_ctrl);
    let width = libm::round(sc.thd_window as f64 * per_cycle) as usize;
    let mut out = Vec::new();
    for (i, (t0, v)) in pts.iter().enumerate() {
        if *t0 >= sc.duration {
            break;
        }
        let t1 = pts.get(i + 1).map_or(sc.duration, |p| p.0.min(sc.duration));
        // samples strictly before the next breakpoint (or all samples at the end)
        let end = if i + 1 < pts.len() && t1 < sc.duration {
            (libm::round(t1 / sc.dt_ctrl) as usize).min(samples)
        } else {
            samples
        };
        let start = end.saturating_sub(width);
        out.push((*t0, t1, *v, start, end));
    }
    out
}

fn segment_reports(sc: &Scenario, log: &RunLog) -> Vec<SegmentReport> {
    let n = log.len();
    let empty: &[f64] = &[];
    let v_ll = log.channel("v_ll_ab").unwrap_or(empty);
    let e_d = log.channel("e_d").unwrap_or(empty);
    let e_q = log.channel("e_q").unwrap_or(empty);
    let i_d = log.channel("i_d").unwrap_or(empty);
    let fs = 1.0 / sc.dt_ctrl;
    let f0 = sc.plant.grid_hz();
    let width = libm::round(sc.thd_window as f64 * fs / f0) as usize;
    segment_windows(sc, n)
        .into_iter()
        .map(|(t_start, t_end, vdc, start, end)| {
            let thd = if end - start < width || end > n {
                Err(alloc::format!(
                    "segment [{t_start}, {t_end}) s has {} logged samples, window needs {width}",
                    end - start
                ))
            } else {
                signals::thd(&v_ll[start..end], fs, f0, sc.max_harmonic).map_err(|e| e.to_string())
            };
            let window = start..end.min(n);
            let mean_i_d = if window.is_empty() {
                f64::NAN
            } else {
                i_d[window.clone()].iter().sum::<f64>() / window.len() as f64
            };
            SegmentReport {
                t_start,
                t_end,
                vdc,
                thd,
                rms_error_d: rms(&e_d[window.clone()]),
                rms_error_q: rms(&e_q[window]),
                mean_i_d,
            }
        })
        .collect()
}
