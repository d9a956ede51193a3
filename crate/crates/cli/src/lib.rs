//! `mmctune`: batch front end for the MMC current-control toolkit.
//!
//! Exit codes: 0 success, 1 configuration (or I/O) error, 2 simulation fault.

pub mod config;
pub mod output;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use mmctune_core::fracorder::FracOperator;
use mmctune_core::signals;
use mmctune_core::simkit::{run_scenario, Fnv, RunLog, Scenario};
use mmctune_core::woa::{self, BatchEvaluator, TuningSpec};
use rayon::prelude::*;
use serde::Serialize;

use config::Config;
use output::{out_path, write_file, Panel};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("simulation fault at t = {time} s: {reason}")]
    Fault { time: f64, reason: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Fault { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mmctune",
    version,
    about = "FOPI / FOFPI current control of a grid-connected MMC, tuned by WOA"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment file (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Seed for the scenario and the optimizer.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    pub plots: bool,
    /// Override any config leaf, e.g. --set scenario.vdc=600 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one closed-loop scenario and write its log and summary.
    Simulate,
    /// Tune the configured controller with the whale optimizer.
    Tune,
    /// THD of one column of a CSV file.
    Thd(ThdArgs),
    /// Frequency response of the fractional operator s^alpha.
    Bode(BodeArgs),
    /// Run two configs on the same scenario and compare THD.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ThdArgs {
    pub csv: PathBuf,
    /// Column to analyse.
    #[arg(long, default_value = "v_ll_ab")]
    pub column: String,
    /// Fundamental frequency, Hz.
    #[arg(long, default_value_t = 50.0)]
    pub f0: f64,
    /// Sample rate, Hz. Inferred from a `t` column when omitted.
    #[arg(long)]
    pub fs: Option<f64>,
    #[arg(long, default_value_t = signals::DEFAULT_MAX_HARMONIC)]
    pub max_harmonic: usize,
}

#[derive(Debug, Args)]
pub struct BodeArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub omega_b: f64,
    #[arg(long, default_value_t = 1e3)]
    pub omega_h: f64,
    #[arg(long, default_value_t = 20)]
    pub n_filter: usize,
    /// Frequency points per decade.
    #[arg(long, default_value_t = 20)]
    pub per_decade: usize,
    /// Lowest and highest frequency, rad/s.
    #[arg(long, default_value_t = 1e-4)]
    pub omega_min: f64,
    #[arg(long, default_value_t = 1e4)]
    pub omega_max: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub config_a: PathBuf,
    pub config_b: PathBuf,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mmctune: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate => cmd_simulate(&cli.global),
        Command::Tune => cmd_tune(&cli.global),
        Command::Thd(a) => cmd_thd(&cli.global, a),
        Command::Bode(a) => cmd_bode(&cli.global, a),
        Command::Compare(a) => cmd_compare(&cli.global, a),
    }
}

fn load(global: &GlobalArgs, path: Option<&Path>) -> Result<Config, CliError> {
    let mut cfg = Config::load(path, &global.overrides)?;
    if let Some(dir) = &global.out_dir {
        cfg.output.dir = dir.to_string_lossy().into_owned();
    }
    if let Some(seed) = global.seed {
        cfg.scenario.seed = seed;
        cfg.woa.seed = seed;
    }
    cfg.output.plots |= global.plots;
    Ok(cfg)
}

fn out_dir(global: &GlobalArgs) -> PathBuf {
    global
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from(config::OutputConfig::default().dir))
}

#[derive(Debug, Serialize)]
struct SegmentJson {
    t_start: f64,
    t_end: f64,
    vdc: f64,
    thd_percent: Option<f64>,
    fundamental_amplitude: Option<f64>,
    thd_error: Option<String>,
    rms_error_d: f64,
    rms_error_q: f64,
    mean_i_d: f64,
}

#[derive(Debug, Serialize)]
struct SummaryJson {
    fingerprint: String,
    data_digest: String,
    controller: &'static str,
    samples: usize,
    fault: Option<FaultJson>,
    segments: Vec<SegmentJson>,
    kp_d_max: f64,
    kp_d_max_time: f64,
    kp_d_min: f64,
    ki_d_max: f64,
    ki_d_min: f64,
    energy_residual_relative: f64,
    overmodulated_steps: usize,
    peak_arm_current: f64,
}

#[derive(Debug, Serialize)]
struct FaultJson {
    time: f64,
    reason: String,
}

fn summary_json(sc: &Scenario, log: &RunLog) -> SummaryJson {
    let s = &log.summary;
    SummaryJson {
        fingerprint: output::fingerprint_hex(log.fingerprint),
        data_digest: output::fingerprint_hex(log.data_digest()),
        controller: if sc.controller.is_fofpi() { "fofpi" } else { "fopi" },
        samples: log.len(),
        fault: log.fault.as_ref().map(|f| FaultJson {
            time: f.time,
            reason: f.reason.clone(),
        }),
        segments: s
            .segments
            .iter()
            .map(|seg| SegmentJson {
                t_start: seg.t_start,
                t_end: seg.t_end,
                vdc: seg.vdc,
                thd_percent: seg.thd.as_ref().ok().map(|r| r.thd_percent()),
                fundamental_amplitude: seg.thd.as_ref().ok().map(|r| r.fundamental_amplitude),
                thd_error: seg.thd.as_ref().err().cloned(),
                rms_error_d: seg.rms_error_d,
                rms_error_q: seg.rms_error_q,
                mean_i_d: seg.mean_i_d,
            })
            .collect(),
        kp_d_max: s.gains_d.kp_max,
        kp_d_max_time: s.gains_d.kp_max_time,
        kp_d_min: s.gains_d.kp_min,
        ki_d_max: s.gains_d.ki_max,
        ki_d_min: s.gains_d.ki_min,
        energy_residual_relative: s.energy.relative_residual(),
        overmodulated_steps: s.overmodulated_steps,
        peak_arm_current: s.peak_arm_current,
    }
}

fn plot_run(log: &RunLog, title: &str) -> String {
    let ch = |n: &str| log.channel(n).unwrap_or(&[]);
    output::svg_plot(
        title,
        ch("t"),
        &[
            Panel {
                title: "d/q currents (A)",
                series: vec![("i_d", ch("i_d")), ("i_d*", ch("i_d_ref")), ("i_q", ch("i_q"))],
            },
            Panel {
                title: "line-line voltage v_ab (V)",
                series: vec![("v_ll_ab", ch("v_ll_ab"))],
            },
            Panel {
                title: "scheduled gains, d axis",
                series: vec![("kp_d", ch("kp_d"))],
            },
            Panel {
                title: "DC link (V)",
                series: vec![("vdc", ch("vdc"))],
            },
        ],
    )
}

fn cmd_simulate(global: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load(global, global.config.as_deref())?;
    let sc = cfg.scenario()?;
    let log = run_scenario(&sc).map_err(|e| CliError::Config(e.to_string()))?;
    let dir = PathBuf::from(&cfg.output.dir);
    let fp = log.fingerprint;
    let summary = summary_json(&sc, &log);
    write_file(
        &out_path(&dir, "run", fp, "csv"),
        &output::log_csv(&log, cfg.output.decimation),
    )?;
    write_file(&out_path(&dir, "summary", fp, "json"), &output::to_json(&summary))?;
    write_file(&out_path(&dir, "config", fp, "toml"), &cfg.to_toml())?;
    if cfg.output.plots {
        write_file(
            &out_path(&dir, "run", fp, "svg"),
            &plot_run(&log, &format!("run {}", summary.fingerprint)),
        )?;
    }
    for seg in &summary.segments {
        match seg.thd_percent {
            Some(thd) => println!(
                "[{:.3}, {:.3}) s  vdc {:.0} V  THD {:.6} %",
                seg.t_start, seg.t_end, seg.vdc, thd
            ),
            None => println!(
                "[{:.3}, {:.3}) s  vdc {:.0} V  THD n/a ({})",
                seg.t_start,
                seg.t_end,
                seg.vdc,
                seg.thd_error.as_deref().unwrap_or("")
            ),
        }
    }
    println!("fingerprint {}  outputs in {}", summary.fingerprint, dir.display());
    match &log.fault {
        Some(f) => Err(CliError::Fault {
            time: f.time,
            reason: f.reason.clone(),
        }),
        None => Ok(()),
    }
}

/// Fitness evaluation on a rayon pool; order of results matches the input.
pub struct ParallelTuning<'a> {
    pub spec: &'a TuningSpec,
    pub pool: rayon::ThreadPool,
}

impl<'a> ParallelTuning<'a> {
    pub fn new(spec: &'a TuningSpec, threads: usize) -> Result<Self, CliError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        Ok(Self { spec, pool })
    }
}

impl BatchEvaluator for ParallelTuning<'_> {
    fn evaluate(&self, positions: &[Vec<f64>]) -> Vec<f64> {
        self.pool.install(|| {
            positions
                .par_iter()
                .map(|x| woa::evaluate_candidate(x, self.spec))
                .collect()
        })
    }
}

/// Fingerprint of a tuning run: scenario, search space and optimizer settings.
pub fn tuning_fingerprint(spec: &TuningSpec, params: &woa::WoaParams) -> u64 {
    let mut h = Fnv::new();
    h.u(spec.scenario.fingerprint())
        .u(spec.dim() as u64)
        .f(spec.tracking_tolerance);
    for (lo, hi) in &spec.bounds {
        h.f(*lo).f(*hi);
    }
    h.u(params.pop_size as u64)
        .u(params.max_iter as u64)
        .f(params.spiral_b)
        .u(params.seed);
    h.finish()
}

#[derive(Debug, Serialize)]
struct TuneJson {
    fingerprint: String,
    controller: &'static str,
    dim: usize,
    best_fitness: f64,
    best_x: Vec<f64>,
    thd_percent: f64,
    tracking_penalty: f64,
    constraint_penalty: f64,
}

fn cmd_tune(global: &GlobalArgs) -> Result<(), CliError> {
    let cfg = load(global, global.config.as_deref())?;
    let spec = cfg.tuning_spec()?;
    let params = cfg.woa_params(&spec);
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let fp = tuning_fingerprint(&spec, &params);
    let evaluator = ParallelTuning::new(&spec, cfg.woa.threads)?;
    let start = Instant::now();
    let mut timings = Vec::with_capacity(params.max_iter + 1);
    let result = woa::optimize(&evaluator, &params, |e| {
        timings.push(start.elapsed().as_secs_f64());
        eprintln!("iter {:>4}  best {:.6}  mean {:.6}", e.iter, e.best, e.mean);
    })
    .map_err(|e| CliError::Config(e.to_string()))?;

    let dir = PathBuf::from(&cfg.output.dir);
    let mut conv = String::from("iter,best_fitness,mean_fitness,elapsed_s\n");
    for (e, t) in result.log.iter().zip(&timings) {
        conv.push_str(&format!("{},{:?},{:?},{:.3}\n", e.iter, e.best, e.mean, t));
    }
    let report = woa::score_candidate(&result.best_x, &spec);
    let tuned = cfg.with_tuned(&result.best_x, &spec);
    let summary = TuneJson {
        fingerprint: output::fingerprint_hex(fp),
        controller: if spec.dim() == 6 { "fopi" } else { "fofpi" },
        dim: spec.dim(),
        best_fitness: result.best_f,
        best_x: result.best_x.clone(),
        thd_percent: report.thd_percent,
        tracking_penalty: report.tracking,
        constraint_penalty: report.constraint,
    };
    write_file(&out_path(&dir, "convergence", fp, "csv"), &conv)?;
    write_file(&out_path(&dir, "best", fp, "toml"), &tuned.to_toml())?;
    write_file(&out_path(&dir, "tune", fp, "json"), &output::to_json(&summary))?;
    if cfg.output.plots {
        let iters: Vec<f64> = result.log.iter().map(|e| e.iter as f64).collect();
        let best: Vec<f64> = result.log.iter().map(|e| e.best).collect();
        let svg = output::svg_plot(
            "WOA convergence",
            &iters,
            &[Panel {
                title: "best fitness",
                series: vec![("best", &best)],
            }],
        );
        write_file(&out_path(&dir, "convergence", fp, "svg"), &svg)?;
    }
    println!(
        "best fitness {:.6} (THD {:.6} %) after {} iterations; config {}",
        result.best_f,
        report.thd_percent,
        params.max_iter,
        out_path(&dir, "best", fp, "toml").display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ThdJson {
    column: String,
    samples_used: usize,
    periods: usize,
    f0: f64,
    fs: f64,
    fundamental_amplitude: f64,
    thd: f64,
    thd_percent: f64,
    harmonic_amplitudes: Vec<f64>,
}

fn cmd_thd(global: &GlobalArgs, a: &ThdArgs) -> Result<(), CliError> {
    let table = output::read_csv(&a.csv)?;
    let data = table
        .column(&a.column)
        .ok_or_else(|| CliError::Config(format!("column '{}' not found in {}", a.column, a.csv.display())))?;
    let fs = match a.fs {
        Some(fs) => fs,
        None => {
            let t = table
                .column("t")
                .ok_or_else(|| CliError::Config("no --fs given and no 't' column to infer it from".into()))?;
            if t.len() < 2 {
                return Err(CliError::Config("need at least two samples to infer fs".into()));
            }
            (t.len() - 1) as f64 / (t[t.len() - 1] - t[0])
        }
    };
    let rep = signals::thd(data, fs, a.f0, a.max_harmonic).map_err(|e| CliError::Config(e.to_string()))?;
    println!(
        "thd = {:.6} ({:.4} %), fundamental {:.6}, {} periods",
        rep.thd,
        rep.thd_percent(),
        rep.fundamental_amplitude,
        rep.periods
    );
    let mut h = Fnv::new();
    h.bytes(a.column.as_bytes()).f(a.f0).f(fs);
    data.iter().for_each(|x| {
        h.f(*x);
    });
    let json = ThdJson {
        column: a.column.clone(),
        samples_used: rep.window_len,
        periods: rep.periods,
        f0: a.f0,
        fs,
        fundamental_amplitude: rep.fundamental_amplitude,
        thd: rep.thd,
        thd_percent: rep.thd_percent(),
        harmonic_amplitudes: rep.harmonic_amplitudes.clone(),
    };
    write_file(
        &out_path(&out_dir(global), "thd", h.finish(), "json"),
        &output::to_json(&json),
    )
}

/// Least-squares slope of `y` against `log10(omega)`.
pub fn log_slope(omega: &[f64], y: &[f64]) -> f64 {
    let xs: Vec<f64> = omega.iter().map(|w| w.log10()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn cmd_bode(global: &GlobalArgs, a: &BodeArgs) -> Result<(), CliError> {
    let op =
        FracOperator::design(a.alpha, a.n_filter, a.omega_b, a.omega_h).map_err(|e| CliError::Config(e.to_string()))?;
    if !(a.omega_min > 0.0 && a.omega_max > a.omega_min && a.per_decade > 0) {
        return Err(CliError::Config(
            "need 0 < omega_min < omega_max and per_decade > 0".into(),
        ));
    }
    let decades = (a.omega_max / a.omega_min).log10();
    let n = (decades * a.per_decade as f64).round() as usize + 1;
    let mut csv = String::from("omega,magnitude_db,phase_deg\n");
    let (mut mid_w, mut mid_db) = (Vec::new(), Vec::new());
    for k in 0..n {
        let w = a.omega_min * 10f64.powf(k as f64 / a.per_decade as f64);
        let g = op.frequency_response(w);
        let db = 20.0 * g.norm().log10();
        csv.push_str(&format!("{w:?},{db:?},{:?}\n", g.arg().to_degrees()));
        if (1e-2..=1e2).contains(&w) {
            mid_w.push(w);
            mid_db.push(db);
        }
    }
    let mut h = Fnv::new();
    h.f(a.alpha)
        .f(a.omega_b)
        .f(a.omega_h)
        .u(a.n_filter as u64)
        .u(a.per_decade as u64)
        .f(a.omega_min)
        .f(a.omega_max);
    let path = out_path(&out_dir(global), "bode", h.finish(), "csv");
    write_file(&path, &csv)?;
    if mid_w.len() >= 2 {
        println!(
            "mid-band slope {:.3} dB/decade (ideal {:.3}); {}",
            log_slope(&mid_w, &mid_db),
            20.0 * a.alpha,
            path.display()
        );
    }
    Ok(())
}

fn cmd_compare(global: &GlobalArgs, a: &CompareArgs) -> Result<(), CliError> {
    let cfg_a = load(global, Some(&a.config_a))?;
    let cfg_b = load(global, Some(&a.config_b))?;
    if !cfg_a.same_experiment(&cfg_b) {
        return Err(CliError::Config(format!(
            "{} and {} describe different experiments (plant, scenario or fractional blocks differ)",
            a.config_a.display(),
            a.config_b.display()
        )));
    }
    let (sc_a, sc_b) = (cfg_a.scenario()?, cfg_b.scenario()?);
    let (log_a, log_b) = rayon::join(|| run_scenario(&sc_a), || run_scenario(&sc_b));
    let log_a = log_a.map_err(|e| CliError::Config(e.to_string()))?;
    let log_b = log_b.map_err(|e| CliError::Config(e.to_string()))?;
    let name = |sc: &Scenario, p: &Path| {
        format!(
            "{} ({})",
            p.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            if sc.controller.is_fofpi() { "FOFPI" } else { "FOPI" }
        )
    };
    let (na, nb) = (name(&sc_a, &a.config_a), name(&sc_b, &a.config_b));
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{:<18} {:>8} {:>24} {:>24}", "segment [s]", "vdc [V]", na, nb);
    let thd = |log: &RunLog, i: usize| log.summary.segments[i].thd.as_ref().ok().map(|r| r.thd_percent());
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.6} %"));
    let (mut sum_a, mut sum_b) = (0.0, 0.0);
    for (i, seg) in log_a.summary.segments.iter().enumerate() {
        let (ta, tb) = (thd(&log_a, i), thd(&log_b, i));
        sum_a += ta.unwrap_or(f64::INFINITY);
        sum_b += tb.unwrap_or(f64::INFINITY);
        let _ = writeln!(
            out,
            "{:<18} {:>8.0} {:>24} {:>24}",
            format!("[{:.3}, {:.3})", seg.t_start, seg.t_end),
            seg.vdc,
            fmt(ta),
            fmt(tb)
        );
    }
    let winner = if sum_a < sum_b {
        na.as_str()
    } else if sum_b < sum_a {
        nb.as_str()
    } else {
        "tie"
    };
    let _ = writeln!(out, "lower THD: {winner}");
    for log in [&log_a, &log_b] {
        if let Some(f) = &log.fault {
            return Err(CliError::Fault {
                time: f.time,
                reason: f.reason.clone(),
            });
        }
    }
    Ok(())
}
