//! Cycle-level simulation of a constant off-time current loop whose comparator
//! has overdrive-dependent delay.
//!
//! The comparator is a transconductance `G` charging `C_eff` from the
//! overdrive `v(t) = m1 (t - t_start) + w(t) - command`, with the charge
//! clamped at zero from below. It trips when the stored charge per unit
//! transconductance, `integral v dt`, reaches `V_th * tau_c` with
//! `tau_c = C_eff / G`. The crossing time `t_c` is the last release of the
//! clamp before the trip at `t_on`, and `t_od = t_on - t_c` is the variable
//! delay.
//!
//! Sign convention: `i_e = command - peak`, where `peak` is the ramp value at
//! `t_on`. The ramp is the actual current; `w` only corrupts its measurement,
//! so `sensed_peak = peak + w(t_on)` is reported separately.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interference::{amplitude_bound, eval_w, integral_bound, BoundVariant, InterferenceSpec};
use crate::satcore::{threshold_crossing, GridFunction, QuadratureConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparatorParams {
    /// Transconductance upper bound, siemens.
    pub g: f64,
    /// Effective integrating capacitance, farads.
    pub c_eff: f64,
    /// Trip threshold, volts.
    pub v_th: f64,
}

impl ComparatorParams {
    pub fn new(g: f64, c_eff: f64, v_th: f64) -> Result<Self> {
        for (name, v) in [("g", g), ("c_eff", c_eff), ("v_th", v_th)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(Self { g, c_eff, v_th })
    }

    /// Worst-case comparator time constant `C_eff / G`.
    pub fn tau_c(&self) -> f64 {
        self.c_eff / self.g
    }

    /// `V_th * tau_c`, the overdrive integral that trips the comparator (V s).
    pub fn trip_charge(&self) -> f64 {
        self.v_th * self.tau_c()
    }

    /// Whether `V_th * tau_c > B`, needed to pick the delay root unambiguously.
    pub fn dominates(&self, b: f64) -> bool {
        self.trip_charge() > b
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RampCycleInput {
    /// Ramp slope at the comparator input, V/s.
    pub m1: f64,
    /// Command level, V, measured from the ramp origin.
    pub command: f64,
    /// Time at which the ramp is zero, s.
    pub t_start: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleResult {
    /// Crossing time: last release of the clamped integrator, s.
    pub t_c: f64,
    /// Trip time, s.
    pub t_on: f64,
    /// Variable delay `t_on - t_c`, s.
    pub t_od: f64,
    /// Ramp value at `t_on`, V.
    pub peak: f64,
    /// Ramp plus interference at `t_on`, V.
    pub sensed_peak: f64,
    /// `command - peak`, V.
    pub i_e: f64,
    /// `w(t_c)`, V.
    pub w_at_tc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoopParams {
    /// Constant off time, s.
    pub t_off: f64,
    /// Down slope during the off time, V/s.
    pub m2: f64,
    pub n_cycles: usize,
    /// Valley at the start of the first on time, V.
    pub valley0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayBounds {
    pub t_l: f64,
    pub t_u: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SectorEstimate {
    /// `d i_e / d t_on` for an upward command perturbation.
    pub q_right: f64,
    /// `d i_e / d t_on` for a downward command perturbation.
    pub q_left: f64,
    /// `(delta t_on, delta i_e)` pairs for the right and left perturbations.
    pub samples: [(f64, f64); 2],
    pub base: CycleResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    pub index: usize,
    /// Start of this on time, s.
    pub t_begin: f64,
    pub valley: f64,
    pub peak: f64,
    pub t_c: f64,
    pub t_on: f64,
    pub t_od: f64,
    pub i_e: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub cycles: Vec<CycleRecord>,
    /// Set when a cycle could not be solved; `cycles` stops before it.
    pub error: Option<Error>,
}

/// Solver tolerances for [`solve_cycle_with`].
pub fn default_cycle_quadrature() -> QuadratureConfig {
    QuadratureConfig {
        step: f64::MAX,
        refine_limit: 20,
        rel_tol: 1e-12,
    }
}

fn check_input(input: &RampCycleInput) -> Result<()> {
    if !(input.m1.is_finite() && input.m1 > 0.0) {
        return Err(Error::InvalidArgument(format!("m1 must be > 0, got {}", input.m1)));
    }
    if !(input.command.is_finite() && input.t_start.is_finite()) {
        return Err(Error::InvalidArgument("command and t_start must be finite".into()));
    }
    Ok(())
}

/// Grid step resolving both the fastest line and the delay itself.
fn cycle_step(m1: f64, spec: &InterferenceSpec, cmp: &ComparatorParams) -> f64 {
    let t_od_estimate = (2.0 * cmp.trip_charge() / m1).sqrt();
    let by_delay = t_od_estimate / 1000.0;
    match spec.omega_max() {
        Some(w) => by_delay.min(1.0 / (20.0 * w)),
        None => by_delay,
    }
}

/// An end time by which the comparator has certainly tripped.
pub fn default_horizon(input: &RampCycleInput, spec: &InterferenceSpec, cmp: &ComparatorParams) -> f64 {
    let a = amplitude_bound(spec);
    let b = integral_bound(spec, BoundVariant::Interval);
    let m1 = input.m1;
    let reach = (input.command + a).max(0.0) / m1;
    let delay = a / m1 + ((a / m1).powi(2) + 2.0 * (cmp.trip_charge() + b) / m1).sqrt();
    input.t_start + reach + 2.0 * delay + cycle_step(m1, spec, cmp)
}

/// Solves one on time with the comparator integrating from `t_start`.
pub fn solve_cycle(
    input: &RampCycleInput,
    spec: &InterferenceSpec,
    cmp: &ComparatorParams,
    horizon: f64,
) -> Result<CycleResult> {
    solve_cycle_with(input, input.t_start, spec, cmp, horizon, &default_cycle_quadrature())
}

/// Solves one on time with the comparator integrating from `begin >= t_start`.
pub fn solve_cycle_with(
    input: &RampCycleInput,
    begin: f64,
    spec: &InterferenceSpec,
    cmp: &ComparatorParams,
    horizon: f64,
    quadrature: &QuadratureConfig,
) -> Result<CycleResult> {
    check_input(input)?;
    if !(begin.is_finite() && horizon.is_finite() && horizon > begin) {
        return Err(Error::InvalidArgument(format!(
            "horizon {horizon} must exceed the integration start {begin}"
        )));
    }
    let RampCycleInput { m1, command, t_start } = *input;
    // the overdrive is negative, so the clamped state is zero, until the ramp
    // comes within A_ub of the command
    let skip = t_start + (command - amplitude_bound(spec)) / m1;
    let begin = if skip > begin && skip < horizon { skip } else { begin };
    let overdrive = |t: f64| m1 * (t - t_start) + eval_w(spec, t) - command;
    let f = GridFunction::new(overdrive, begin, horizon)?;
    let cfg = quadrature.with_max_step(cycle_step(m1, spec, cmp));
    let crossing = threshold_crossing(&f, begin, cmp.trip_charge(), &cfg)?;

    let (t_c, t_on) = (crossing.release, crossing.level_at);
    let peak = m1 * (t_on - t_start);
    let result = CycleResult {
        t_c,
        t_on,
        t_od: t_on - t_c,
        peak,
        sensed_peak: peak + eval_w(spec, t_on),
        i_e: command - peak,
        w_at_tc: eval_w(spec, t_c),
    };
    if [result.t_c, result.t_on, result.peak, result.sensed_peak]
        .iter()
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteValue { x: t_on });
    }
    Ok(result)
}

fn check_delay_inputs(m1: f64, cmp: &ComparatorParams, b: f64) -> Result<()> {
    if !(m1.is_finite() && m1 > 0.0) {
        return Err(Error::InvalidArgument(format!("m1 must be > 0, got {m1}")));
    }
    if !(b.is_finite() && b >= 0.0) {
        return Err(Error::InvalidArgument(format!("B must be finite and >= 0, got {b}")));
    }
    if !cmp.dominates(b) {
        return Err(Error::Precondition(format!(
            "V_th*tau_c = {} must exceed B = {b}",
            cmp.trip_charge()
        )));
    }
    Ok(())
}

/// Positive root of `(m1/2) t^2 - w t - (V_th tau_c + extra) = 0`.
fn delay_root(w: f64, m1: f64, charge: f64) -> f64 {
    let r = w / m1;
    r + (r * r + 2.0 * charge / m1).sqrt()
}

/// Bounds on the variable delay given the interference at the crossing:
/// `t = w/m1 + sqrt((w/m1)^2 + (2/m1)(V_th tau_c +/- B))`.
pub fn delay_bounds(w_at_tc: f64, m1: f64, cmp: &ComparatorParams, b: f64) -> Result<DelayBounds> {
    check_delay_inputs(m1, cmp, b)?;
    if !w_at_tc.is_finite() {
        return Err(Error::InvalidArgument(format!("w(t_c) = {w_at_tc} is not finite")));
    }
    let q = cmp.trip_charge();
    Ok(DelayBounds {
        t_l: delay_root(w_at_tc, m1, q - b),
        t_u: delay_root(w_at_tc, m1, q + b),
    })
}

/// Longest possible delay: the upper bound at `w(t_c) = A_ub`.
pub fn max_overdrive_delay(a_ub: f64, m1: f64, cmp: &ComparatorParams, b: f64) -> Result<f64> {
    check_delay_inputs(m1, cmp, b)?;
    Ok(delay_root(a_ub, m1, cmp.trip_charge() + b))
}

/// Shortest possible delay: the lower bound at `w(t_c) = -A_ub`.
pub fn min_overdrive_delay(a_ub: f64, m1: f64, cmp: &ComparatorParams, b: f64) -> Result<f64> {
    check_delay_inputs(m1, cmp, b)?;
    Ok(delay_root(-a_ub, m1, cmp.trip_charge() - b))
}

/// `mu = 2 m1 (V_th tau_c - B) / A_ub^2`; infinite without interference.
pub fn stability_mu(a_ub: f64, m1: f64, cmp: &ComparatorParams, b: f64) -> f64 {
    let excess = cmp.trip_charge() - b;
    if a_ub == 0.0 {
        return if excess > 0.0 { f64::INFINITY } else { 0.0 };
    }
    2.0 * m1 * excess / (a_ub * a_ub)
}

/// `mu >= 8`, i.e. `V_th tau_c >= B + 4 A_ub^2 / m1`: the slope bound then
/// stays above `-m1/2`.
pub fn stability_predicate(a_ub: f64, m1: f64, cmp: &ComparatorParams, b: f64) -> bool {
    stability_mu(a_ub, m1, cmp, b) >= 8.0
}

/// Difference quotients `d i_e / d t_on` from perturbing the command by
/// `+delta` and `-delta`.
pub fn sector_estimate(
    input: &RampCycleInput,
    spec: &InterferenceSpec,
    cmp: &ComparatorParams,
    delta: f64,
) -> Result<SectorEstimate> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be > 0, got {delta}")));
    }
    let solve = |command: f64| {
        let moved = RampCycleInput { command, ..*input };
        solve_cycle(&moved, spec, cmp, default_horizon(&moved, spec, cmp))
    };
    let base = solve(input.command)?;
    let up = solve(input.command + delta)?;
    let down = solve(input.command - delta)?;

    let floor = 1e3 * f64::EPSILON * base.t_on.abs().max(base.t_od);
    let quotient = |a: &CycleResult, b: &CycleResult| -> Result<(f64, (f64, f64))> {
        let dt = b.t_on - a.t_on;
        if dt.abs() <= floor {
            return Err(Error::DegeneratePerturbation { delta_t_on: dt });
        }
        let di = b.i_e - a.i_e;
        Ok((di / dt, (dt, di)))
    };
    let (q_right, right) = quotient(&base, &up)?;
    let (q_left, left) = quotient(&down, &base)?;
    Ok(SectorEstimate {
        q_right,
        q_left,
        samples: [right, (-left.0, -left.1)],
        base,
    })
}

/// `(psi + (2 A_ub / t_od_min) t) t > 0` for every sample with `t != 0`:
/// `psi` lies in the sector `[-2 A_ub / t_od_min, +inf)`.
pub fn sector_bound_check(samples: &[(f64, f64)], a_ub: f64, t_od_min: f64) -> bool {
    let slope = 2.0 * a_ub / t_od_min;
    samples
        .iter()
        .filter(|(t, _)| *t != 0.0)
        .all(|&(t, psi)| (psi + slope * t) * t > 0.0)
}

/// `min(q_right, q_left) > -m1/2`.
pub fn stability_condition(q_right: f64, q_left: f64, m1: f64) -> bool {
    q_right.min(q_left) > -0.5 * m1
}

/// Runs `n_cycles` on/off cycles. Each on time ramps from the valley at slope
/// `m1` until the comparator trips; the next valley is `peak - m2 t_off`.
/// The interference is evaluated at absolute time throughout.
pub fn iterate_loop(
    params: &LoopParams,
    input: &RampCycleInput,
    spec: &InterferenceSpec,
    cmp: &ComparatorParams,
) -> Result<Trajectory> {
    check_input(input)?;
    if params.n_cycles == 0 {
        return Err(Error::InvalidArgument("n_cycles must be >= 1".into()));
    }
    for (name, v) in [("t_off", params.t_off), ("m2", params.m2)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
        }
    }
    let m1 = input.m1;
    let mut t_begin = input.t_start;
    let mut valley = params.valley0;
    let mut cycles = Vec::with_capacity(params.n_cycles);
    for index in 0..params.n_cycles {
        // ramp origin placed so that the ramp equals the valley at t_begin
        let ramp = RampCycleInput {
            t_start: t_begin - valley / m1,
            ..*input
        };
        let horizon = default_horizon(&ramp, spec, cmp).max(t_begin) + cycle_step(m1, spec, cmp);
        let cycle = match solve_cycle_with(&ramp, t_begin, spec, cmp, horizon, &default_cycle_quadrature()) {
            Ok(c) => c,
            Err(e) => {
                return Ok(Trajectory {
                    cycles,
                    error: Some(e),
                })
            }
        };
        cycles.push(CycleRecord {
            index,
            t_begin,
            valley,
            peak: cycle.peak,
            t_c: cycle.t_c,
            t_on: cycle.t_on,
            t_od: cycle.t_od,
            i_e: cycle.i_e,
        });
        valley = cycle.peak - params.m2 * params.t_off;
        t_begin = cycle.t_on + params.t_off;
    }
    Ok(Trajectory { cycles, error: None })
}

/// Largest `|i_e - reference|` over a window of cycles.
pub fn error_envelope(cycles: &[CycleRecord], reference: f64) -> f64 {
    cycles
        .iter()
        .map(|c| (c.i_e - reference).abs())
        .fold(0.0, f64::max)
}

/// `y = (-1 - x) / (x + sqrt(x^2 + mu))`.
pub fn aux_function_y(x: f64, mu: f64) -> Result<f64> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be > 0, got {mu}")));
    }
    if !x.is_finite() {
        return Err(Error::InvalidArgument(format!("x = {x} is not finite")));
    }
    Ok((-1.0 - x) / (x + (x * x + mu).sqrt()))
}
