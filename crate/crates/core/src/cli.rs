//! Configuration, subcommand dispatch and reports for `odelay-lab`.
//!
//! A run is described by one JSON document:
//!
//! ```json
//! {
//!   "comparator": { "g": 1e-3, "c_eff": 1e-12, "v_th": 0.05 },
//!   "ramp":       { "m1": 1e6, "command": 0.5, "t_start": 0.0 },
//!   "spectrum":   [ { "omega": 6.0e7, "amplitude": 0.02, "phase": 0.0 } ],
//!   "loop":       { "t_off": 1e-6, "m2": 5e5, "n_cycles": 200, "valley0": 0.2 },
//!   "solver":     { "step": 0.01, "refine_limit": 16, "rel_tol": 1e-8 },
//!   "seed": 0
//! }
//! ```
//!
//! Units are SI: siemens, farads, volts, seconds, rad/s, V/s. `loop`,
//! `solver`, `seed`, `spectrum`, `ramp.t_start` and line `phase` are optional.
//! `solver` governs the static-map quadrature (K functionals and `M(b)`).

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::Error;
use crate::interference::{
    amplitude_bound, integral_bound, random_phase_draw_with, BoundVariant, InterferenceSpec, SpectrumLine,
};
use crate::loopsim::{
    aux_function_y, default_horizon, delay_bounds, iterate_loop, max_overdrive_delay, min_overdrive_delay,
    sector_bound_check, sector_estimate, solve_cycle, stability_condition, stability_mu, ComparatorParams,
    LoopParams, RampCycleInput,
};
use crate::satcore::QuadratureConfig;
use crate::staticmap::{compute_k3, continuity_condition, MapSettings};

pub const FORMAT_VERSION: &str = "# odelay-lab v1";

/// Relative tolerance for delay containment verdicts.
pub const CONTAINMENT_TOL: f64 = 1e-4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error("solver failure: {0}")]
    Numerical(Error),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 success, 2 config or usage error, 3 solver non-convergence,
    /// 4 precondition violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Precondition(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Precondition(msg) => CliError::Precondition(msg),
            Error::ContinuityPrecondition { .. } => CliError::Precondition(e.to_string()),
            e if e.is_numerical() => CliError::Numerical(e),
            e => CliError::Usage(e.to_string()),
        }
    }
}

fn config_err(path: impl Into<String>, message: impl std::fmt::Display) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.to_string(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    comparator: RawComparator,
    ramp: RawRamp,
    #[serde(default)]
    spectrum: Vec<RawLine>,
    #[serde(default, rename = "loop")]
    loop_params: Option<RawLoop>,
    #[serde(default)]
    solver: Option<RawSolver>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComparator {
    g: f64,
    c_eff: f64,
    v_th: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRamp {
    m1: f64,
    command: f64,
    #[serde(default)]
    t_start: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLine {
    omega: f64,
    amplitude: f64,
    #[serde(default)]
    phase: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLoop {
    t_off: f64,
    m2: f64,
    n_cycles: usize,
    valley0: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(default = "default_step")]
    step: f64,
    #[serde(default = "default_refine_limit")]
    refine_limit: u32,
    #[serde(default = "default_rel_tol")]
    rel_tol: f64,
}

fn default_step() -> f64 {
    QuadratureConfig::default().step
}
fn default_refine_limit() -> u32 {
    QuadratureConfig::default().refine_limit
}
fn default_rel_tol() -> f64 {
    QuadratureConfig::default().rel_tol
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub comparator: ComparatorParams,
    pub ramp: RampCycleInput,
    pub spectrum: InterferenceSpec,
    pub loop_params: Option<LoopParams>,
    pub solver: QuadratureConfig,
    pub seed: u64,
    /// Input lines absorbed by merging duplicate frequencies.
    pub merged_lines: usize,
}

impl AnalysisConfig {
    pub fn map_settings(&self) -> MapSettings {
        MapSettings {
            quadrature: self.solver,
            ..MapSettings::default()
        }
    }
}

pub fn parse_config(path: &Path) -> Result<AnalysisConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_err(path.display().to_string(), e))?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<AnalysisConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let raw: RawConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        config_err(if path == "." { "<root>".into() } else { path }, e.inner())
    })?;

    let positive = |path: &str, v: f64| -> Result<f64, CliError> {
        if v.is_finite() && v > 0.0 {
            Ok(v)
        } else {
            Err(config_err(path, format!("must be finite and > 0, got {v}")))
        }
    };
    let finite = |path: &str, v: f64| -> Result<f64, CliError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(config_err(path, format!("must be finite, got {v}")))
        }
    };

    let comparator = ComparatorParams {
        g: positive("comparator.g", raw.comparator.g)?,
        c_eff: positive("comparator.c_eff", raw.comparator.c_eff)?,
        v_th: positive("comparator.v_th", raw.comparator.v_th)?,
    };
    let ramp = RampCycleInput {
        m1: positive("ramp.m1", raw.ramp.m1)?,
        command: finite("ramp.command", raw.ramp.command)?,
        t_start: finite("ramp.t_start", raw.ramp.t_start)?,
    };
    let lines = raw
        .spectrum
        .iter()
        .map(|l| SpectrumLine {
            omega: l.omega,
            amplitude: l.amplitude,
            phase: l.phase,
        })
        .collect();
    let (spectrum, merged_lines) = InterferenceSpec::canonicalize(lines).map_err(|e| match e {
        Error::InvalidLine { index, field, reason } => config_err(format!("spectrum[{index}].{field}"), reason),
        other => config_err("spectrum", other),
    })?;
    let loop_params = match raw.loop_params {
        Some(l) => {
            if l.n_cycles == 0 {
                return Err(config_err("loop.n_cycles", "must be >= 1"));
            }
            Some(LoopParams {
                t_off: positive("loop.t_off", l.t_off)?,
                m2: positive("loop.m2", l.m2)?,
                n_cycles: l.n_cycles,
                valley0: finite("loop.valley0", l.valley0)?,
            })
        }
        None => None,
    };
    let solver = match raw.solver {
        Some(s) => {
            let cfg = QuadratureConfig {
                step: s.step,
                refine_limit: s.refine_limit,
                rel_tol: s.rel_tol,
            };
            cfg.validate().map_err(|e| config_err("solver", e))?;
            cfg
        }
        None => QuadratureConfig::default(),
    };
    Ok(AnalysisConfig {
        comparator,
        ramp,
        spectrum,
        loop_params,
        solver,
        seed: raw.seed,
        merged_lines,
    })
}

/// One echoed input value.
#[derive(Debug, Clone, PartialEq)]
pub enum Echo {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Echo {
    fn csv(&self) -> String {
        match self {
            Echo::Num(v) => v.to_string(),
            Echo::Int(v) => v.to_string(),
            Echo::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Echo::Num(v) => num(*v),
            Echo::Int(v) => Value::from(*v),
            Echo::Text(s) => Value::from(s.clone()),
        }
    }
}

fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub analysis: String,
    pub inputs: Vec<(String, Echo)>,
    pub outputs: Vec<(String, f64)>,
    pub verdicts: Vec<(String, bool)>,
}

impl ReportRow {
    fn new(analysis: &str, inputs: Vec<(String, Echo)>) -> Self {
        Self {
            analysis: analysis.to_string(),
            inputs,
            outputs: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    fn out(mut self, name: &str, v: f64) -> Self {
        self.outputs.push((name.to_string(), v));
        self
    }

    fn verdict(mut self, name: &str, v: bool) -> Self {
        self.verdicts.push((name.to_string(), v));
        self
    }

    pub fn output(&self, name: &str) -> Option<f64> {
        self.outputs.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn verdict_of(&self, name: &str) -> Option<bool> {
        self.verdicts.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    fn columns(&self) -> Vec<&str> {
        std::iter::once("analysis")
            .chain(self.inputs.iter().map(|(n, _)| n.as_str()))
            .chain(self.outputs.iter().map(|(n, _)| n.as_str()))
            .chain(self.verdicts.iter().map(|(n, _)| n.as_str()))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Version line, header row, then one line per row. All rows must share
/// the first row's columns.
pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    out.push_str(FORMAT_VERSION);
    out.push('\n');
    let Some(first) = rows.first() else {
        return out;
    };
    out.push_str(&first.columns().join(","));
    out.push('\n');
    for row in rows {
        debug_assert_eq!(row.columns(), first.columns());
        let fields: Vec<String> = std::iter::once(csv_field(&row.analysis))
            .chain(row.inputs.iter().map(|(_, v)| csv_field(&v.csv())))
            .chain(row.outputs.iter().map(|(_, v)| v.to_string()))
            .chain(row.verdicts.iter().map(|(_, v)| v.to_string()))
            .collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    out
}

pub fn render_json(rows: &[ReportRow]) -> String {
    let array: Vec<Value> = rows
        .iter()
        .map(|row| {
            let mut obj = Map::new();
            obj.insert("analysis".into(), Value::from(row.analysis.clone()));
            obj.insert(
                "inputs".into(),
                Value::Object(row.inputs.iter().map(|(n, v)| (n.clone(), v.json())).collect()),
            );
            obj.insert(
                "outputs".into(),
                Value::Object(row.outputs.iter().map(|(n, v)| (n.clone(), num(*v))).collect()),
            );
            obj.insert(
                "verdicts".into(),
                Value::Object(row.verdicts.iter().map(|(n, v)| (n.clone(), Value::from(*v))).collect()),
            );
            Value::Object(obj)
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&Value::Array(array)).expect("json values serialize");
    s.push('\n');
    s
}

pub fn render(rows: &[ReportRow], format: OutputFormat) -> String {
    match format {
        OutputFormat::Csv => render_csv(rows),
        OutputFormat::Json => render_json(rows),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcommand {
    Simulate,
    Bounds,
    K3,
    Continuity,
    Sector,
    Loop,
    Aux,
    Sweep,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Simulate => "simulate",
            Subcommand::Bounds => "bounds",
            Subcommand::K3 => "k3",
            Subcommand::Continuity => "continuity",
            Subcommand::Sector => "sector",
            Subcommand::Loop => "loop",
            Subcommand::Aux => "aux",
            Subcommand::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Flags {
    pub draws: usize,
    pub seed: Option<u64>,
    pub x: Option<f64>,
    pub mu: Option<f64>,
    pub delta: Option<f64>,
    pub b_variant: BoundVariant,
    /// Run sweep draws on the calling thread only.
    pub sequential: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            draws: 1000,
            seed: None,
            x: None,
            mu: None,
            delta: None,
            b_variant: BoundVariant::Interval,
            sequential: false,
        }
    }
}

fn spectrum_text(spec: &InterferenceSpec) -> String {
    spec.lines()
        .iter()
        .map(|l| format!("{}:{}:{}", l.omega, l.amplitude, l.phase))
        .collect::<Vec<_>>()
        .join(";")
}

fn echo(cfg: &AnalysisConfig, flags: &Flags) -> Vec<(String, Echo)> {
    let c = &cfg.comparator;
    let r = &cfg.ramp;
    let spec = &cfg.spectrum;
    vec![
        ("g".into(), Echo::Num(c.g)),
        ("c_eff".into(), Echo::Num(c.c_eff)),
        ("v_th".into(), Echo::Num(c.v_th)),
        ("tau_c".into(), Echo::Num(c.tau_c())),
        ("m1".into(), Echo::Num(r.m1)),
        ("command".into(), Echo::Num(r.command)),
        ("t_start".into(), Echo::Num(r.t_start)),
        ("spectrum".into(), Echo::Text(spectrum_text(spec))),
        ("merged_lines".into(), Echo::Int(cfg.merged_lines as u64)),
        ("a_ub".into(), Echo::Num(amplitude_bound(spec))),
        ("b_variant".into(), Echo::Text(flags.b_variant.to_string())),
        ("b".into(), Echo::Num(integral_bound(spec, flags.b_variant))),
    ]
}

fn require(cfg: Option<&AnalysisConfig>, sub: Subcommand) -> Result<&AnalysisConfig, CliError> {
    cfg.ok_or_else(|| CliError::Usage(format!("{} requires --config", sub.name())))
}

fn within(v: f64, lo: f64, hi: f64, rel: f64) -> bool {
    v >= lo - rel * lo.abs() && v <= hi + rel * hi.abs()
}

/// Runs `sub` and returns its report rows.
pub fn run_subcommand(
    sub: Subcommand,
    cfg: Option<&AnalysisConfig>,
    flags: &Flags,
) -> Result<Vec<ReportRow>, CliError> {
    if sub == Subcommand::Aux {
        let (x, mu) = match (flags.x, flags.mu) {
            (Some(x), Some(mu)) => (x, mu),
            _ => return Err(CliError::Usage("aux requires --x and --mu".into())),
        };
        let y = aux_function_y(x, mu)?;
        let row = ReportRow::new(
            "aux",
            vec![("x".into(), Echo::Num(x)), ("mu".into(), Echo::Num(mu))],
        )
        .out("y", y);
        return Ok(vec![row]);
    }

    let cfg = require(cfg, sub)?;
    let spec = &cfg.spectrum;
    let cmp = &cfg.comparator;
    let ramp = &cfg.ramp;
    let m1 = ramp.m1;
    let a_ub = amplitude_bound(spec);
    let b = integral_bound(spec, flags.b_variant);
    let base = echo(cfg, flags);

    let rows = match sub {
        Subcommand::Simulate => {
            let c = solve_cycle(ramp, spec, cmp, default_horizon(ramp, spec, cmp))?;
            vec![ReportRow::new("simulate", base)
                .out("t_c", c.t_c)
                .out("t_on", c.t_on)
                .out("t_od", c.t_od)
                .out("peak", c.peak)
                .out("sensed_peak", c.sensed_peak)
                .out("i_e", c.i_e)
                .out("w_at_tc", c.w_at_tc)]
        }
        Subcommand::Bounds => {
            let c = solve_cycle(ramp, spec, cmp, default_horizon(ramp, spec, cmp))?;
            let d = delay_bounds(c.w_at_tc, m1, cmp, b)?;
            let t_min = min_overdrive_delay(a_ub, m1, cmp, b)?;
            let t_max = max_overdrive_delay(a_ub, m1, cmp, b)?;
            let mu = stability_mu(a_ub, m1, cmp, b);
            vec![ReportRow::new("bounds", base)
                .out("w_at_tc", c.w_at_tc)
                .out("t_od", c.t_od)
                .out("t_l", d.t_l)
                .out("t_u", d.t_u)
                .out("t_od_min", t_min)
                .out("t_od_max", t_max)
                .out("dominance_margin", cmp.trip_charge() - b)
                .out("mu", if mu.is_finite() { mu } else { f64::MAX })
                .verdict("contained", within(c.t_od, d.t_l, d.t_u, CONTAINMENT_TOL))
                .verdict("mu_ge_8", mu >= 8.0)]
        }
        Subcommand::K3 => {
            let r = compute_k3(spec, &cfg.map_settings())?;
            let mut inputs = base;
            inputs.push((
                "argmax_phases".into(),
                Echo::Text(r.phases.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(";")),
            ));
            vec![ReportRow::new("k3", inputs)
                .out("k3", r.value)
                .out("argmax_offset", r.offset)
                .out("psi_l", r.psi_l)
                .out("psi_h", r.psi_h)]
        }
        Subcommand::Continuity => {
            let r = continuity_condition(spec, m1, cmp.v_th, cmp.tau_c(), &cfg.map_settings())?;
            vec![ReportRow::new("continuity", base)
                .out("k3_normalized", r.k3)
                .out("threshold_rhs", r.threshold_rhs)
                .out("lhs", r.lhs)
                .out("margin", r.margin)
                .verdict("satisfied", r.satisfied)]
        }
        Subcommand::Sector => {
            let delta = flags.delta.unwrap_or(1e-6 * ramp.command.abs().max(a_ub).max(f64::MIN_POSITIVE));
            let est = sector_estimate(ramp, spec, cmp, delta)?;
            let t_min = min_overdrive_delay(a_ub, m1, cmp, b)?;
            let slope = 2.0 * a_ub / t_min;
            let tol = 1e-3 * m1;
            let mu = stability_mu(a_ub, m1, cmp, b);
            let mut inputs = base;
            inputs.push(("delta".into(), Echo::Num(delta)));
            vec![ReportRow::new("sector", inputs)
                .out("q_right", est.q_right)
                .out("q_left", est.q_left)
                .out("sector_slope", slope)
                .out("stability_margin", est.q_right.min(est.q_left) + 0.5 * m1)
                .verdict("right_in_box", est.q_right >= -tol && est.q_right <= slope + tol)
                .verdict("left_above_bound", est.q_left >= -slope - tol)
                .verdict("sector_ok", sector_bound_check(&est.samples, a_ub, t_min))
                .verdict("stable", stability_condition(est.q_right, est.q_left, m1))
                .verdict("mu_ge_8", mu >= 8.0)]
        }
        Subcommand::Loop => {
            let params = cfg
                .loop_params
                .as_ref()
                .ok_or_else(|| config_err("loop", "section required by the loop subcommand"))?;
            let tr = iterate_loop(params, ramp, spec, cmp)?;
            if let Some(e) = tr.error {
                return Err(e.into());
            }
            let mut inputs = base;
            inputs.extend([
                ("t_off".into(), Echo::Num(params.t_off)),
                ("m2".into(), Echo::Num(params.m2)),
                ("valley0".into(), Echo::Num(params.valley0)),
            ]);
            tr.cycles
                .iter()
                .map(|c| {
                    let mut inputs = inputs.clone();
                    inputs.push(("cycle".into(), Echo::Int(c.index as u64)));
                    ReportRow::new("loop", inputs)
                        .out("t_begin", c.t_begin)
                        .out("valley", c.valley)
                        .out("peak", c.peak)
                        .out("t_c", c.t_c)
                        .out("t_on", c.t_on)
                        .out("t_od", c.t_od)
                        .out("i_e", c.i_e)
                })
                .collect()
        }
        Subcommand::Sweep => vec![sweep(cfg, flags, base)?],
        Subcommand::Aux => unreachable!("handled above"),
    };
    Ok(rows)
}

#[derive(Debug, Clone, Copy)]
struct DrawOutcome {
    t_od: f64,
    pointwise: bool,
    global: bool,
}

fn sweep(cfg: &AnalysisConfig, flags: &Flags, mut inputs: Vec<(String, Echo)>) -> Result<ReportRow, CliError> {
    if flags.draws == 0 {
        return Err(CliError::Usage("--draws must be >= 1".into()));
    }
    let spec = &cfg.spectrum;
    let cmp = &cfg.comparator;
    let ramp = &cfg.ramp;
    let m1 = ramp.m1;
    let a_ub = amplitude_bound(spec);
    let b = integral_bound(spec, flags.b_variant);
    let t_min = min_overdrive_delay(a_ub, m1, cmp, b)?;
    let t_max = max_overdrive_delay(a_ub, m1, cmp, b)?;
    let seed = flags.seed.unwrap_or(cfg.seed);

    let draw = |index: usize| -> Result<DrawOutcome, Error> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let drawn = random_phase_draw_with(spec, &mut rng);
        let c = solve_cycle(ramp, &drawn, cmp, default_horizon(ramp, &drawn, cmp))?;
        let d = delay_bounds(c.w_at_tc, m1, cmp, b)?;
        Ok(DrawOutcome {
            t_od: c.t_od,
            pointwise: within(c.t_od, d.t_l, d.t_u, CONTAINMENT_TOL),
            global: within(c.t_od, t_min, t_max, CONTAINMENT_TOL),
        })
    };
    let outcomes: Vec<DrawOutcome> = if flags.sequential {
        (0..flags.draws).map(draw).collect::<Result<_, _>>()?
    } else {
        (0..flags.draws).into_par_iter().map(draw).collect::<Result<_, _>>()?
    };

    let count = |p: fn(&DrawOutcome) -> bool| outcomes.iter().filter(|o| p(o)).count() as f64;
    let (lo, hi) = outcomes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.t_od), hi.max(o.t_od)));
    inputs.push(("seed".into(), Echo::Int(seed)));
    inputs.push(("draws".into(), Echo::Int(flags.draws as u64)));
    let pointwise = count(|o| o.pointwise);
    let global = count(|o| o.global);
    Ok(ReportRow::new("sweep", inputs)
        .out("contained_pointwise", pointwise)
        .out("contained_global", global)
        .out("t_od_observed_min", lo)
        .out("t_od_observed_max", hi)
        .out("t_od_min", t_min)
        .out("t_od_max", t_max)
        .verdict("all_contained", pointwise == flags.draws as f64 && global == flags.draws as f64))
}
