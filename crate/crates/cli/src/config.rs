//! TOML experiment files.
//!
//! Every key has a default, unknown keys are rejected, and any leaf can be
//! overridden from the command line with a dotted path (`scenario.vdc=600`).

use std::path::Path;

use mmctune_core::controllers::{ControlLaw, FofpiParams, FopiParams};
use mmctune_core::fracorder::OustaloupBand;
use mmctune_core::it2fis::It2Fis;
use mmctune_core::mmcplant::MmcParams;
use mmctune_core::simkit::{ControllerSpec, Scenario, Schedule, Setpoint};
use mmctune_core::woa::{TuningSpec, WoaParams};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct Config {
    pub plant: PlantConfig,
    pub scenario: ScenarioConfig,
    pub controller: ControllerConfig,
    pub fractional: FractionalConfig,
    pub fis: FisConfig,
    pub woa: WoaConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub n_cells: usize,
    /// H
    pub arm_inductance: f64,
    /// Ohm
    pub arm_resistance: f64,
    /// F
    pub cell_capacitance: f64,
    /// Phase peak voltage, V. Defaults to 0.35 of the initial DC-link voltage.
    pub grid_amplitude: Option<f64>,
    /// Hz
    pub grid_hz: f64,
    /// Per-phase grid amplitude multipliers (1.0 = balanced).
    pub grid_phase_scale: [f64; 3],
}

impl Default for PlantConfig {
    fn default() -> Self {
        let p = MmcParams::desk_scale(1.0);
        Self {
            n_cells: p.n_cells,
            arm_inductance: p.arm_inductance,
            arm_resistance: p.arm_resistance,
            cell_capacitance: p.cell_capacitance,
            grid_amplitude: None,
            grid_hz: p.grid_hz(),
            grid_phase_scale: p.grid_phase_scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VdcStep {
    pub t: f64,
    pub vdc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Current,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceStep {
    pub t: f64,
    /// `i_d` (A) or `p` (W), depending on the reference kind.
    pub d: f64,
    /// `i_q` (A) or `q` (var).
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub duration: f64,
    pub dt_sim: f64,
    pub dt_ctrl: f64,
    /// Initial DC-link voltage, V.
    pub vdc: f64,
    pub vdc_steps: Vec<VdcStep>,
    pub reference: ReferenceKind,
    pub reference_d: f64,
    pub reference_q: f64,
    pub reference_steps: Vec<ReferenceStep>,
    pub thd_window: usize,
    pub max_harmonic: usize,
    pub i_rated: f64,
    pub divergence_factor: f64,
    pub balance_sorting: bool,
    pub v_min_ref: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 0.4,
            dt_sim: 20e-6,
            dt_ctrl: 100e-6,
            vdc: 450.0,
            vdc_steps: Vec::new(),
            reference: ReferenceKind::Current,
            reference_d: 10.0,
            reference_q: 0.0,
            reference_steps: Vec::new(),
            thd_window: 5,
            max_harmonic: 50,
            i_rated: 10.0,
            divergence_factor: 10.0,
            balance_sorting: false,
            v_min_ref: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Fopi,
    Fofpi,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AxisGains {
    pub kp: f64,
    pub ki: f64,
    pub alpha: f64,
}

impl Default for AxisGains {
    fn default() -> Self {
        Self {
            kp: 5.0,
            ki: 200.0,
            alpha: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    /// Output bound as a multiple of vdc/2.
    pub u_max_factor: f64,
    /// FOPI gains, or the FOFPI order and constant consequents when
    /// `fis.params` is empty.
    pub d: AxisGains,
    pub q: AxisGains,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Fopi,
            u_max_factor: 1.2,
            d: AxisGains::default(),
            q: AxisGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FractionalConfig {
    pub n_filter: usize,
    /// rad/s
    pub omega_b: f64,
    /// rad/s
    pub omega_h: f64,
}

impl Default for FractionalConfig {
    fn default() -> Self {
        let b = OustaloupBand::default();
        Self {
            n_filter: b.n_filter,
            omega_b: b.omega_b,
            omega_h: b.omega_h,
        }
    }
}

/// FOFPI rule base. `params` follows the flat layout: per input and MF
/// `(center, sigma_lower, sigma_upper)`, then the Kp consequents, the Ki
/// consequents and the blend factor. `params_q` optionally gives the q axis
/// its own FIS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FisConfig {
    pub mf_counts: [usize; 2],
    /// Defaults to `[1 / i_rated, dt_ctrl / (0.1 i_rated)]`.
    pub input_scales: Option<[f64; 2]>,
    pub params: Vec<f64>,
    pub params_q: Vec<f64>,
}

impl Default for FisConfig {
    fn default() -> Self {
        Self {
            mf_counts: [3, 3],
            input_scales: None,
            params: Vec::new(),
            params_q: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WoaConfig {
    pub pop_size: usize,
    pub max_iter: usize,
    pub spiral_b: f64,
    pub seed: u64,
    /// Fitness worker threads; 0 uses every available core.
    pub threads: usize,
}

impl Default for WoaConfig {
    fn default() -> Self {
        Self {
            pop_size: 30,
            max_iter: 100,
            spiral_b: 1.0,
            seed: 1,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: String,
    pub plots: bool,
    /// Keep every n-th log row in the CSV.
    pub decimation: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            plots: false,
            decimation: 1,
        }
    }
}

fn parse_override_value(raw: &str) -> toml::Value {
    // accept any TOML literal; anything else is taken as a bare string
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Applies one `dotted.path=value` override to a TOML table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override '{spec}' has an empty key")));
    }
    let mut node = table;
    for key in &keys[..keys.len() - 1] {
        let entry = node
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override '{spec}': '{key}' is not a section")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl Config {
    /// Reads `path` (or starts from defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                text.parse::<toml::Table>()
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Config::deserialize(toml::Value::Table(table)).map_err(|e| CliError::Config(e.to_string()))
    }

    /// TOML text of the experiment. The output block is reset to its
    /// defaults so the file does not depend on where it was written.
    pub fn to_toml(&self) -> String {
        let portable = Config {
            output: OutputConfig::default(),
            ..self.clone()
        };
        toml::to_string_pretty(&portable).unwrap_or_default()
    }

    pub fn band(&self) -> OustaloupBand {
        OustaloupBand {
            n_filter: self.fractional.n_filter,
            omega_b: self.fractional.omega_b,
            omega_h: self.fractional.omega_h,
        }
    }

    pub fn plant(&self) -> MmcParams {
        let p = &self.plant;
        MmcParams {
            n_cells: p.n_cells,
            arm_inductance: p.arm_inductance,
            arm_resistance: p.arm_resistance,
            cell_capacitance: p.cell_capacitance,
            grid_amplitude: p.grid_amplitude.unwrap_or(0.35 * self.scenario.vdc),
            grid_freq: 2.0 * std::f64::consts::PI * p.grid_hz,
            grid_phase_scale: p.grid_phase_scale,
        }
    }

    pub fn fis_input_scales(&self) -> [f64; 2] {
        let s = &self.scenario;
        self.fis
            .input_scales
            .unwrap_or([1.0 / s.i_rated, s.dt_ctrl / (0.1 * s.i_rated)])
    }

    fn fis_for(&self, params: &[f64], gains: &AxisGains) -> Result<It2Fis, CliError> {
        let scales = self.fis_input_scales();
        let fis = if params.is_empty() {
            if self.fis.mf_counts != [3, 3] {
                return Err(CliError::Config(
                    "fis.params is required unless fis.mf_counts = [3, 3]".into(),
                ));
            }
            It2Fis::grid3(gains.kp, gains.ki, scales)
        } else {
            It2Fis::from_flat(self.fis.mf_counts, params, scales)
        };
        fis.map_err(|e| CliError::Config(format!("fis: {e}")))
    }

    pub fn controller(&self) -> Result<ControllerSpec, CliError> {
        let c = &self.controller;
        let (d, q) = match c.kind {
            ControllerKind::Fopi => (
                ControlLaw::Fopi(FopiParams {
                    kp: c.d.kp,
                    ki: c.d.ki,
                    alpha: c.d.alpha,
                }),
                ControlLaw::Fopi(FopiParams {
                    kp: c.q.kp,
                    ki: c.q.ki,
                    alpha: c.q.alpha,
                }),
            ),
            ControllerKind::Fofpi => {
                let fis_d = self.fis_for(&self.fis.params, &c.d)?;
                let fis_q = if self.fis.params_q.is_empty() {
                    if self.fis.params.is_empty() {
                        self.fis_for(&[], &c.q)?
                    } else {
                        fis_d.clone()
                    }
                } else {
                    self.fis_for(&self.fis.params_q, &c.q)?
                };
                (
                    ControlLaw::Fofpi(FofpiParams {
                        fis: fis_d,
                        alpha: c.d.alpha,
                    }),
                    ControlLaw::Fofpi(FofpiParams {
                        fis: fis_q,
                        alpha: c.q.alpha,
                    }),
                )
            }
        };
        Ok(ControllerSpec {
            d,
            q,
            band: self.band(),
            u_max_factor: c.u_max_factor,
        })
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let s = &self.scenario;
        let cfg = |e: mmctune_core::Error| CliError::Config(e.to_string());
        let mut vdc = vec![(0.0, s.vdc)];
        vdc.extend(s.vdc_steps.iter().map(|st| (st.t, st.vdc)));
        let setpoint = |d: f64, q: f64| match s.reference {
            ReferenceKind::Current => Setpoint::Current { id: d, iq: q },
            ReferenceKind::Power => Setpoint::Power { p: d, q },
        };
        let mut reference = vec![(0.0, setpoint(s.reference_d, s.reference_q))];
        reference.extend(s.reference_steps.iter().map(|st| (st.t, setpoint(st.d, st.q))));
        let sc = Scenario {
            duration: s.duration,
            dt_sim: s.dt_sim,
            dt_ctrl: s.dt_ctrl,
            plant: self.plant(),
            vdc_profile: Schedule::new(vdc).map_err(cfg)?,
            reference: Schedule::new(reference).map_err(cfg)?,
            controller: self.controller()?,
            thd_window: s.thd_window,
            max_harmonic: s.max_harmonic,
            i_rated: s.i_rated,
            divergence_factor: s.divergence_factor,
            balance_sorting: s.balance_sorting,
            v_min_ref: s.v_min_ref,
            seed: s.seed,
        };
        sc.validate().map_err(cfg)?;
        Ok(sc)
    }

    /// Search problem for the configured controller kind.
    pub fn tuning_spec(&self) -> Result<TuningSpec, CliError> {
        let sc = self.scenario()?;
        let mut spec = match self.controller.kind {
            ControllerKind::Fopi => TuningSpec::fopi(sc),
            ControllerKind::Fofpi => {
                if self.fis.mf_counts != [3, 3] {
                    return Err(CliError::Config("FOFPI tuning supports the 3x3 rule base only".into()));
                }
                TuningSpec::fofpi(sc)
            }
        };
        if let mmctune_core::woa::TuningKind::Fofpi { input_scales, .. } = &mut spec.kind {
            *input_scales = self.fis_input_scales();
        }
        if spec.dim() == 0 {
            return Err(CliError::Config("tuning search space is empty".into()));
        }
        Ok(spec)
    }

    pub fn woa_params(&self, spec: &TuningSpec) -> WoaParams {
        WoaParams {
            pop_size: self.woa.pop_size,
            max_iter: self.woa.max_iter,
            spiral_b: self.woa.spiral_b,
            seed: self.woa.seed,
            bounds: spec.bounds.clone(),
        }
    }

    /// Copy of this config with a tuned parameter vector installed.
    pub fn with_tuned(&self, x: &[f64], spec: &TuningSpec) -> Config {
        let mut out = self.clone();
        match self.controller.kind {
            ControllerKind::Fopi => {
                out.controller.d = AxisGains {
                    kp: x[0],
                    ki: x[1],
                    alpha: x[2],
                };
                out.controller.q = AxisGains {
                    kp: x[3],
                    ki: x[4],
                    alpha: x[5],
                };
            }
            ControllerKind::Fofpi => {
                let (ctrl, _) = spec.decode(x).expect("tuned vector decodes");
                if let ControlLaw::Fofpi(f) = &ctrl.d {
                    out.fis.params = f.fis.to_flat();
                    out.fis.params_q.clear();
                    out.controller.d.alpha = f.alpha;
                    out.controller.q.alpha = f.alpha;
                }
            }
        }
        out
    }

    /// True when two configs describe the same experiment up to the controller.
    pub fn same_experiment(&self, other: &Config) -> bool {
        self.plant == other.plant && self.scenario == other.scenario && self.fractional == other.fractional
    }
}
