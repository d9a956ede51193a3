//! Whale Optimization Algorithm and the controller-tuning objective.
//!
//! Every random number of an iteration is drawn serially before any fitness
//! is evaluated, so a parallel [`BatchEvaluator`] yields the same log as the
//! serial one.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::controllers::{ControlLaw, FofpiParams, FopiParams};
use crate::error::{config_err, Error, Result};
use crate::it2fis::{self, It2Fis, N_INPUTS};
use crate::simkit::{run_scenario, ControllerSpec, Scenario};

/// Optimizer settings.
#[derive(Debug, Clone, PartialEq)]
pub struct WoaParams {
    pub pop_size: usize,
    pub max_iter: usize,
    /// Logarithmic spiral shape `b`.
    pub spiral_b: f64,
    pub seed: u64,
    pub bounds: Vec<(f64, f64)>,
}

impl WoaParams {
    /// Population 30, 100 iterations, `b = 1`.
    pub fn new(bounds: Vec<(f64, f64)>, seed: u64) -> Self {
        Self {
            pop_size: 30,
            max_iter: 100,
            spiral_b: 1.0,
            seed,
            bounds,
        }
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.pop_size < 2 || self.max_iter < 1 {
            return Err(config_err("WOA needs pop_size >= 2 and max_iter >= 1"));
        }
        if !(self.spiral_b > 0.0 && self.spiral_b.is_finite()) {
            return Err(config_err("spiral_b must be positive"));
        }
        if self.bounds.is_empty() {
            return Err(config_err("WOA needs at least one dimension"));
        }
        for (i, (lo, hi)) in self.bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(config_err(alloc::format!(
                    "bounds of dimension {i} must be finite with lo < hi"
                )));
            }
        }
        Ok(())
    }

    fn clamp(&self, x: &mut [f64]) {
        for (v, (lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

/// Evaluates a batch of positions; implementations may run in parallel but
/// must return fitnesses in input order.
pub trait BatchEvaluator {
    fn evaluate(&self, positions: &[Vec<f64>]) -> Vec<f64>;
}

/// Serial evaluation of a plain objective.
pub struct Serial<F>(pub F);

impl<F: Fn(&[f64]) -> f64> BatchEvaluator for Serial<F> {
    fn evaluate(&self, positions: &[Vec<f64>]) -> Vec<f64> {
        positions.iter().map(|x| (self.0)(x)).collect()
    }
}

fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::INFINITY
    } else {
        f
    }
}

/// Population state.
#[derive(Debug, Clone)]
pub struct Swarm {
    pub positions: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
    pub leader: Vec<f64>,
    pub leader_fitness: f64,
    pub iter: usize,
    rng: ChaCha8Rng,
}

impl Swarm {
    fn adopt_best(&mut self) {
        for (x, &f) in self.positions.iter().zip(&self.fitness) {
            if f < self.leader_fitness {
                self.leader_fitness = f;
                self.leader.clone_from(x);
            }
        }
    }

    pub fn mean_fitness(&self) -> f64 {
        self.fitness.iter().sum::<f64>() / self.fitness.len() as f64
    }
}

/// Uniform random population within the bounds, evaluated once.
pub fn init_swarm<E: BatchEvaluator + ?Sized>(params: &WoaParams, objective: &E) -> Result<Swarm> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let positions: Vec<Vec<f64>> = (0..params.pop_size)
        .map(|_| params.bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect())
        .collect();
    let fitness: Vec<f64> = objective.evaluate(&positions).into_iter().map(sanitize).collect();
    if fitness.iter().all(|f| !f.is_finite()) {
        return Err(Error::Init("objective is non-finite on every initial position".into()));
    }
    let mut swarm = Swarm {
        leader: positions[0].clone(),
        leader_fitness: f64::INFINITY,
        positions,
        fitness,
        iter: 0,
        rng,
    };
    swarm.adopt_best();
    Ok(swarm)
}

/// The random numbers consumed by one whale move.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveDraws {
    /// Branch selector, U(0, 1).
    pub p: f64,
    /// Drives `A = 2 a r1 - a`.
    pub r1: f64,
    /// Drives `C = 2 r2`.
    pub r2: f64,
    /// Spiral parameter, U(-1, 1).
    pub l: f64,
    /// Population index used when exploring.
    pub rand_index: usize,
}

impl MoveDraws {
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, pop_size: usize) -> Self {
        Self {
            p: rng.gen(),
            r1: rng.gen(),
            r2: rng.gen(),
            l: rng.gen_range(-1.0..=1.0),
            rand_index: rng.gen_range(0..pop_size),
        }
    }
}

/// Deterministic part of the move: encircling (`|A| < 1`), exploration
/// around a random member (`|A| >= 1`) or the logarithmic spiral (`p >= 0.5`).
/// The result is clamped to the bounds.
pub fn apply_move(
    x: &[f64],
    leader: &[f64],
    population: &[Vec<f64>],
    a: f64,
    draws: &MoveDraws,
    params: &WoaParams,
) -> Vec<f64> {
    let mut next: Vec<f64> = if draws.p >= 0.5 {
        let spiral = libm::exp(params.spiral_b * draws.l) * libm::cos(2.0 * PI * draws.l);
        x.iter()
            .zip(leader)
            .map(|(xi, li)| (li - xi).abs() * spiral + li)
            .collect()
    } else {
        let big_a = 2.0 * a * draws.r1 - a;
        let big_c = 2.0 * draws.r2;
        let target = if big_a.abs() < 1.0 {
            leader
        } else {
            population[draws.rand_index].as_slice()
        };
        x.iter()
            .zip(target)
            .map(|(xi, ti)| ti - big_a * (big_c * ti - xi).abs())
            .collect()
    };
    params.clamp(&mut next);
    next
}

/// One whale move with fresh draws from `rng`.
pub fn update_position<R: Rng + ?Sized>(
    x: &[f64],
    leader: &[f64],
    population: &[Vec<f64>],
    a: f64,
    params: &WoaParams,
    rng: &mut R,
) -> Vec<f64> {
    let draws = MoveDraws::draw(rng, population.len());
    apply_move(x, leader, population, a, &draws, params)
}

/// One convergence log row; `iter = 0` is the initial population.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceEntry {
    pub iter: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WoaResult {
    pub best_x: Vec<f64>,
    pub best_f: f64,
    pub log: Vec<ConvergenceEntry>,
}

/// Runs `max_iter` sweeps with `a` falling linearly from 2 to 0.
pub fn optimize<E, S>(objective: &E, params: &WoaParams, mut progress: S) -> Result<WoaResult>
where
    E: BatchEvaluator + ?Sized,
    S: FnMut(&ConvergenceEntry),
{
    let mut swarm = init_swarm(params, objective)?;
    let mut log = Vec::with_capacity(params.max_iter + 1);
    let first = ConvergenceEntry {
        iter: 0,
        best: swarm.leader_fitness,
        mean: swarm.mean_fitness(),
    };
    progress(&first);
    log.push(first);

    for t in 0..params.max_iter {
        let a = 2.0 * (1.0 - t as f64 / params.max_iter as f64);
        let draws: Vec<MoveDraws> = (0..params.pop_size)
            .map(|_| MoveDraws::draw(&mut swarm.rng, params.pop_size))
            .collect();
        let moved: Vec<Vec<f64>> = swarm
            .positions
            .iter()
            .zip(&draws)
            .map(|(x, d)| apply_move(x, &swarm.leader, &swarm.positions, a, d, params))
            .collect();
        swarm.fitness = objective.evaluate(&moved).into_iter().map(sanitize).collect();
        swarm.positions = moved;
        swarm.iter = t + 1;
        swarm.adopt_best();
        let entry = ConvergenceEntry {
            iter: t + 1,
            best: swarm.leader_fitness,
            mean: swarm.mean_fitness(),
        };
        progress(&entry);
        log.push(entry);
    }
    Ok(WoaResult {
        best_x: swarm.leader,
        best_f: swarm.leader_fitness,
        log,
    })
}

/// Fitness floor for runs that diverge or cannot be analysed.
pub const INSTABILITY_PENALTY: f64 = 1e3;

/// Which controller a parameter vector describes.
#[derive(Debug, Clone, PartialEq)]
pub enum TuningKind {
    /// `[kp_d, ki_d, alpha_d, kp_q, ki_q, alpha_q]`.
    Fopi,
    /// Flat FIS vector (see [`It2Fis::to_flat`]) followed by `alpha`; one
    /// FIS and order shared by both axes.
    Fofpi {
        mf_counts: [usize; N_INPUTS],
        input_scales: [f64; N_INPUTS],
    },
}

/// A tuning problem: the scenario every candidate is scored on plus the encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TuningSpec {
    pub scenario: Scenario,
    pub kind: TuningKind,
    pub bounds: Vec<(f64, f64)>,
    /// Allowed RMS current error over the THD window as a fraction of `i_rated`.
    pub tracking_tolerance: f64,
}

/// Default gain ranges.
pub const KP_RANGE: (f64, f64) = (0.0, 50.0);
pub const KI_RANGE: (f64, f64) = (0.0, 5000.0);
pub const ALPHA_RANGE: (f64, f64) = (0.5, 1.5);
pub const SIGMA_RANGE: (f64, f64) = (0.05, 1.0);

impl TuningSpec {
    pub fn fopi(scenario: Scenario) -> Self {
        let bounds = vec![KP_RANGE, KI_RANGE, ALPHA_RANGE, KP_RANGE, KI_RANGE, ALPHA_RANGE];
        Self {
            scenario,
            kind: TuningKind::Fopi,
            bounds,
            tracking_tolerance: 0.02,
        }
    }

    /// Three MFs per input with `e` scaled by `1 / i_rated` and `de/dt` by
    /// `dt_ctrl / (0.1 i_rated)`.
    pub fn fofpi(scenario: Scenario) -> Self {
        let mf_counts = [3, 3];
        let input_scales = [1.0 / scenario.i_rated, scenario.dt_ctrl / (0.1 * scenario.i_rated)];
        let centers = [(-1.5, -0.3), (-0.3, 0.3), (0.3, 1.5)];
        let mut bounds = Vec::new();
        for count in mf_counts {
            for slot in 0..count {
                bounds.push(centers[slot.min(2)]);
                bounds.push(SIGMA_RANGE);
                bounds.push(SIGMA_RANGE);
            }
        }
        let m: usize = mf_counts.iter().product();
        bounds.extend(core::iter::repeat_n(KP_RANGE, m));
        bounds.extend(core::iter::repeat_n(KI_RANGE, m));
        bounds.push((0.0, 1.0));
        bounds.push(ALPHA_RANGE);
        Self {
            scenario,
            kind: TuningKind::Fofpi {
                mf_counts,
                input_scales,
            },
            bounds,
            tracking_tolerance: 0.02,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            TuningKind::Fopi => 6,
            TuningKind::Fofpi { mf_counts, .. } => it2fis::flat_len(mf_counts) + 1,
        }
    }

    pub fn woa_params(&self, seed: u64) -> WoaParams {
        WoaParams::new(self.bounds.clone(), seed)
    }

    /// Decodes a vector into controllers plus a penalty for repaired
    /// invariant violations (swapped `sigma_L > sigma_U`).
    pub fn decode(&self, x: &[f64]) -> Result<(ControllerSpec, f64)> {
        if x.len() != self.dim() {
            return Err(config_err(alloc::format!(
                "parameter vector has {} entries, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let band = self.scenario.controller.band;
        let u_max_factor = self.scenario.controller.u_max_factor;
        let (d, q, penalty) = match &self.kind {
            TuningKind::Fopi => {
                let d = ControlLaw::Fopi(FopiParams {
                    kp: x[0],
                    ki: x[1],
                    alpha: x[2],
                });
                let q = ControlLaw::Fopi(FopiParams {
                    kp: x[3],
                    ki: x[4],
                    alpha: x[5],
                });
                (d, q, 0.0)
            }
            TuningKind::Fofpi {
                mf_counts,
                input_scales,
            } => {
                let mut flat = x[..x.len() - 1].to_vec();
                let n_mf: usize = mf_counts.iter().sum();
                let mut excess = 0.0;
                for k in 0..n_mf {
                    let (lo, hi) = (3 * k + 1, 3 * k + 2);
                    if flat[lo] > flat[hi] {
                        excess += flat[lo] - flat[hi];
                        flat.swap(lo, hi);
                    }
                }
                let fis = It2Fis::from_flat(*mf_counts, &flat, *input_scales)?;
                let law = ControlLaw::Fofpi(FofpiParams {
                    fis,
                    alpha: x[x.len() - 1],
                });
                (law.clone(), law, 10.0 * excess)
            }
        };
        Ok((
            ControllerSpec {
                d,
                q,
                band,
                u_max_factor,
            },
            penalty,
        ))
    }

    /// Scenario with the decoded controllers installed.
    pub fn candidate_scenario(&self, x: &[f64]) -> Result<(Scenario, f64)> {
        let (controller, penalty) = self.decode(x)?;
        let mut sc = self.scenario.clone();
        sc.controller = controller;
        Ok((sc, penalty))
    }
}

/// Breakdown of one fitness evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    pub fitness: f64,
    /// Mean line-line THD over the scenario segments, %.
    pub thd_percent: f64,
    pub instability: f64,
    pub constraint: f64,
    pub tracking: f64,
    pub note: Option<String>,
}

/// Scores a candidate: mean segment THD (%) plus penalties for divergence,
/// repaired parameters and poor current tracking. Never fails.
pub fn score_candidate(x: &[f64], spec: &TuningSpec) -> FitnessReport {
    let penalized = |instability: f64, note: String| FitnessReport {
        fitness: INSTABILITY_PENALTY + instability,
        thd_percent: f64::NAN,
        instability: INSTABILITY_PENALTY + instability,
        constraint: 0.0,
        tracking: 0.0,
        note: Some(note),
    };
    if x.iter().any(|v| !v.is_finite()) {
        return penalized(INSTABILITY_PENALTY, "non-finite parameter".into());
    }
    let (sc, constraint) = match spec.candidate_scenario(x) {
        Ok(v) => v,
        Err(e) => return penalized(INSTABILITY_PENALTY, alloc::format!("{e}")),
    };
    let log = match run_scenario(&sc) {
        Ok(log) => log,
        Err(e) => return penalized(INSTABILITY_PENALTY, alloc::format!("{e}")),
    };
    if let Some(fault) = &log.fault {
        // earlier faults and larger excursions score worse
        let early = 1.0 - (fault.time / sc.duration).clamp(0.0, 1.0);
        let overshoot = (log.summary.peak_arm_current / (sc.divergence_factor * sc.i_rated)).min(10.0);
        let mut r = penalized(INSTABILITY_PENALTY * early + overshoot, fault.reason.clone());
        r.fitness += constraint;
        r.constraint = constraint;
        return r;
    }
    let mut thd_sum = 0.0;
    let mut tracking = 0.0;
    let segs = &log.summary.segments;
    for seg in segs {
        match &seg.thd {
            Ok(rep) => thd_sum += rep.thd_percent(),
            Err(e) => {
                let mut r = penalized(0.0, e.clone());
                r.fitness += constraint;
                r.constraint = constraint;
                return r;
            }
        }
        let rel = libm::hypot(seg.rms_error_d, seg.rms_error_q) / sc.i_rated;
        tracking += 100.0 * (rel - spec.tracking_tolerance).max(0.0);
    }
    let n = segs.len().max(1) as f64;
    let thd_percent = thd_sum / n;
    let tracking = tracking / n;
    FitnessReport {
        fitness: thd_percent + constraint + tracking,
        thd_percent,
        instability: 0.0,
        constraint,
        tracking,
        note: None,
    }
}

/// Scalar fitness of [`score_candidate`].
pub fn evaluate_candidate(x: &[f64], spec: &TuningSpec) -> f64 {
    let f = score_candidate(x, spec).fitness;
    if f.is_finite() {
        f
    } else {
        2.0 * INSTABILITY_PENALTY
    }
}

/// Serial evaluator over a tuning spec.
pub struct SerialTuning<'a>(pub &'a TuningSpec);

impl BatchEvaluator for SerialTuning<'_> {
    fn evaluate(&self, positions: &[Vec<f64>]) -> Vec<f64> {
        positions.iter().map(|x| evaluate_candidate(x, self.0)).collect()
    }
}
