//! The static current mapping `b -> theta` and the K functionals.
//!
//! Throughout, the comparator input is normalized to a unit-slope ramp
//! `g(x) = x + w(x) - b`. The mapping `theta = M(b)` is the first point where
//! the saturating integral of `g` from far left reaches `k`. The functional
//! `K(b, phi)` is the saturating integral of `g` up to its largest root,
//! i.e. the most charge the integrator can hold while the ramp is still
//! tangled in the interference. Its maximum `K3` over the offset box
//! `[-A_ub, A_ub]` and all phases is the continuity threshold: for `k > K3`
//! the mapping is continuous.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::interference::{amplitude_bound, eval_w, eval_w_deriv, slope_bound, wrap_phase, InterferenceSpec};
use crate::satcore::{integrate_to_threshold, saturating_integral, GridFunction, QuadratureConfig};

/// Root-scan grid spacing in units of `1 / omega_max`.
const SCAN_STEP: f64 = PI / 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Offset grid points across `[-A_ub, A_ub]`.
    pub offset_points: usize,
    /// Phase grid points per line across `[0, 2pi)`.
    pub phase_points: usize,
    /// Largest line count the grid search accepts.
    pub max_lines: usize,
    /// Best grid points refined by coordinate ascent.
    pub starts: usize,
    /// Coordinate ascent stops once its step falls below this fraction of
    /// each coordinate's range.
    pub min_step_frac: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            offset_points: 17,
            phase_points: 8,
            max_lines: 6,
            starts: 4,
            min_step_frac: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSettings {
    pub quadrature: QuadratureConfig,
    /// Absolute tolerance on the roots of `g`.
    pub root_tol: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self {
            quadrature: QuadratureConfig::default(),
            root_tol: 1e-12,
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl MapSettings {
    /// Quadrature with the step capped to resolve the fastest line.
    fn quadrature_for(&self, spec: &InterferenceSpec) -> QuadratureConfig {
        match spec.omega_max() {
            Some(w) => self.quadrature.with_max_step(SCAN_STEP / w),
            None => self.quadrature,
        }
    }
}

/// A K functional evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KEvalResult {
    pub value: f64,
    pub psi_l: f64,
    pub psi_h: f64,
    /// The offset `b` (or `b'`) the value was computed at.
    pub offset: f64,
    pub phases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuityReport {
    /// `K3` of the spectrum scaled by `1 / m1`.
    pub k3: f64,
    /// `m1 * K3(|W| / m1)`.
    pub threshold_rhs: f64,
    /// `V_trig * tau`.
    pub lhs: f64,
    pub satisfied: bool,
    /// `lhs - threshold_rhs`.
    pub margin: f64,
    /// Maximizer of the normalized problem.
    pub argmax: KEvalResult,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LipschitzProbe {
    pub theta0: f64,
    pub theta1: f64,
    /// `|theta1 - theta0| / delta_b`.
    pub ratio: f64,
    /// Minimum of `x + w(x) - b` between the two thresholds.
    pub mu1: f64,
    /// Maximum of `theta0 - psi_l(b)` over the offset step.
    pub mu2: f64,
}

impl LipschitzProbe {
    pub fn bound(&self) -> f64 {
        self.mu2 / self.mu1
    }
}

fn bisect<P: Fn(f64) -> bool>(mut lo: f64, mut hi: f64, tol: f64, hi_side: P) -> f64 {
    // invariant: !hi_side(lo), hi_side(hi)
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= tol || mid <= lo || mid >= hi {
            break;
        }
        if hi_side(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Lowest and largest real roots of `x + w(x) - b = 0`.
///
/// All roots lie in `[b - A_ub, b + A_ub]`. That interval is scanned at a
/// spacing of at most `(pi/10)/omega_max`; sign changes are bisected to
/// `tol`, and cells whose ends agree in sign are checked for an interior
/// extremum that reaches zero.
pub fn roots_psi(spec: &InterferenceSpec, b: f64, tol: f64) -> (f64, f64) {
    let a = amplitude_bound(spec);
    if a == 0.0 {
        return (b, b);
    }
    let g = |x: f64| x + eval_w(spec, x) - b;
    let gp = |x: f64| 1.0 + eval_w_deriv(spec, x);
    let lo = b - a;
    let hi = b + a;

    if slope_bound(spec) < 1.0 {
        // strictly increasing: one root
        let r = if g(lo) >= 0.0 {
            lo
        } else {
            bisect(lo, hi, tol, |x| g(x) >= 0.0)
        };
        return (r, r);
    }

    let omega_max = spec.omega_max().unwrap_or(1.0);
    let cells = ((hi - lo) / (SCAN_STEP / omega_max)).ceil().max(1.0) as usize;
    let h = (hi - lo) / cells as f64;
    let xs: Vec<f64> = (0..=cells)
        .map(|i| if i == cells { hi } else { lo + i as f64 * h })
        .collect();
    let gs: Vec<f64> = xs.iter().map(|&x| g(x)).collect();
    let gps: Vec<f64> = xs.iter().map(|&x| gp(x)).collect();

    let lowest = (|| {
        if gs[0] >= 0.0 {
            return lo;
        }
        for i in 1..=cells {
            let (x0, x1) = (xs[i - 1], xs[i]);
            if gs[i] >= 0.0 {
                return bisect(x0, x1, tol, |x| g(x) >= 0.0);
            }
            if gps[i - 1] > 0.0 && gps[i] < 0.0 {
                let peak = bisect(x0, x1, tol, |x| gp(x) <= 0.0);
                if g(peak) >= 0.0 {
                    return bisect(x0, peak, tol, |x| g(x) >= 0.0);
                }
            }
        }
        hi
    })();

    let largest = (|| {
        if gs[cells] <= 0.0 {
            return hi;
        }
        for i in (0..cells).rev() {
            let (x0, x1) = (xs[i], xs[i + 1]);
            if gs[i] <= 0.0 {
                return bisect(x0, x1, tol, |x| g(x) > 0.0);
            }
            if gps[i] < 0.0 && gps[i + 1] > 0.0 {
                let valley = bisect(x0, x1, tol, |x| gp(x) >= 0.0);
                if g(valley) <= 0.0 {
                    return bisect(valley, x1, tol, |x| g(x) > 0.0);
                }
            }
        }
        lo
    })();

    (lowest, largest.max(lowest))
}

/// The K functional at `offset` with the spectrum's phases replaced by `phases`:
/// the saturating integral of `x + w(x) - offset` up to the largest root.
///
/// The integrand is negative left of the lowest root, so the clamped state is
/// exactly zero there and the integration starts at `psi_l`.
pub fn eval_k(
    spec: &InterferenceSpec,
    offset: f64,
    phases: &[f64],
    settings: &MapSettings,
) -> Result<KEvalResult> {
    if !offset.is_finite() {
        return Err(Error::InvalidArgument(format!("offset {offset} is not finite")));
    }
    let spec = spec.with_phases(phases)?;
    let (psi_l, psi_h) = roots_psi(&spec, offset, settings.root_tol);
    let value = if psi_h > psi_l {
        let f = GridFunction::new(|x: f64| x + eval_w(&spec, x) - offset, psi_l, psi_h)?;
        saturating_integral(&f, psi_l, psi_h, &settings.quadrature_for(&spec))?
    } else {
        0.0
    };
    Ok(KEvalResult {
        value,
        psi_l,
        psi_h,
        offset,
        phases: spec.phases(),
    })
}

/// Translates the problem so that its lowest root sits at zero:
/// `b' = b - psi_l`, `phi'_i = phi_i + omega_i psi_l (mod 2pi)`.
///
/// The K functional is unchanged, and because `b - psi_l = w(psi_l)` the new
/// offset always lies in `[-A_ub, A_ub]`.
pub fn shift_transform(
    offset: f64,
    phases: &[f64],
    spec: &InterferenceSpec,
    root_tol: f64,
) -> Result<(f64, Vec<f64>)> {
    let spec = spec.with_phases(phases)?;
    let (psi_l, _) = roots_psi(&spec, offset, root_tol);
    let shifted = spec.time_shifted(psi_l);
    Ok((offset - psi_l, shifted.phases()))
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    value: f64,
    offset: f64,
    phases: Vec<f64>,
}

impl Candidate {
    /// Larger value first; within `rel` of each other, the lexicographically
    /// smaller phase vector (then offset) wins.
    fn beats(&self, other: &Candidate, rel: f64) -> bool {
        let scale = self.value.abs().max(other.value.abs()).max(f64::MIN_POSITIVE);
        if (self.value - other.value).abs() > rel * scale {
            return self.value > other.value;
        }
        let key = |c: &Candidate| {
            c.phases
                .iter()
                .copied()
                .chain(std::iter::once(c.offset))
                .collect::<Vec<_>>()
        };
        for (a, b) in key(self).iter().zip(key(other).iter()) {
            if a != b {
                return a < b;
            }
        }
        false
    }
}

const TIE_REL: f64 = 1e-12;

/// Maximum of the K functional over offsets in `[-A_ub, A_ub]` and all phase
/// vectors: a multi-start grid followed by coordinate ascent from the best
/// grid points.
pub fn compute_k3(spec: &InterferenceSpec, settings: &MapSettings) -> Result<KEvalResult> {
    let opt = &settings.optimizer;
    let lines = spec.len();
    if lines > opt.max_lines {
        return Err(Error::OptimizerBudget {
            dimension: lines + 1,
            limit: opt.max_lines + 1,
        });
    }
    let a = amplitude_bound(spec);
    if a == 0.0 {
        return eval_k(spec, 0.0, &vec![0.0; lines], settings);
    }
    if opt.offset_points < 2 || opt.phase_points < 1 || opt.starts < 1 {
        return Err(Error::InvalidArgument("optimizer grid is too small".into()));
    }

    let offset_at = |j: usize| -a + 2.0 * a * j as f64 / (opt.offset_points - 1) as f64;
    let phase_at = |m: usize| TAU * m as f64 / opt.phase_points as f64;
    let total = opt
        .phase_points
        .checked_pow(lines as u32)
        .and_then(|n| n.checked_mul(opt.offset_points))
        .ok_or(Error::OptimizerBudget {
            dimension: lines + 1,
            limit: opt.max_lines + 1,
        })?;

    let evaluate = |offset: f64, phases: Vec<f64>| -> Result<Candidate> {
        let r = eval_k(spec, offset, &phases, settings)?;
        Ok(Candidate {
            value: r.value,
            offset,
            phases,
        })
    };

    let grid: Vec<Candidate> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let mut rest = idx;
            let j = rest % opt.offset_points;
            rest /= opt.offset_points;
            let phases: Vec<f64> = (0..lines)
                .map(|_| {
                    let m = rest % opt.phase_points;
                    rest /= opt.phase_points;
                    phase_at(m)
                })
                .collect();
            evaluate(offset_at(j), phases)
        })
        .collect::<Result<_>>()?;

    let mut ranked = grid;
    ranked.sort_by(|x, y| {
        if x.beats(y, 0.0) {
            std::cmp::Ordering::Less
        } else if y.beats(x, 0.0) {
            std::cmp::Ordering::Greater
        } else {
            std::cmp::Ordering::Equal
        }
    });
    ranked.truncate(opt.starts);

    let refined: Vec<Candidate> = ranked
        .into_par_iter()
        .map(|start| coordinate_ascent(start, a, &evaluate, opt.min_step_frac))
        .collect::<Result<_>>()?;

    let best = refined
        .into_iter()
        .reduce(|best, c| if c.beats(&best, TIE_REL) { c } else { best })
        .expect("at least one start");
    eval_k(spec, best.offset, &best.phases, settings)
}

fn coordinate_ascent<E>(mut point: Candidate, a: f64, evaluate: &E, min_step_frac: f64) -> Result<Candidate>
where
    E: Fn(f64, Vec<f64>) -> Result<Candidate>,
{
    let mut frac = 1.0 / 16.0;
    while frac >= min_step_frac {
        let mut improved = false;
        for coord in 0..=point.phases.len() {
            for dir in [1.0, -1.0] {
                let (offset, phases) = if coord == 0 {
                    let o = (point.offset + dir * frac * 2.0 * a).clamp(-a, a);
                    (o, point.phases.clone())
                } else {
                    let mut p = point.phases.clone();
                    p[coord - 1] = wrap_phase(p[coord - 1] + dir * frac * TAU);
                    (point.offset, p)
                };
                if offset == point.offset && phases == point.phases {
                    continue;
                }
                let cand = evaluate(offset, phases)?;
                if cand.value > point.value + 1e-15 * point.value.abs().max(1e-300) {
                    point = cand;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            frac *= 0.5;
        }
    }
    Ok(point)
}

/// `theta = M(b)`: first point where the saturating integral of
/// `x + w(x) - b`, started left of all sign activity, reaches `k`.
pub fn static_map(b: f64, k: f64, spec: &InterferenceSpec, settings: &MapSettings) -> Result<f64> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidArgument(format!("k must be > 0, got {k}")));
    }
    if !b.is_finite() {
        return Err(Error::InvalidArgument(format!("b = {b} is not finite")));
    }
    let a = amplitude_bound(spec);
    let start = b - a - 1.0;
    // past b + A_ub the integrand exceeds x - b - A_ub, so the threshold is met by here
    let end = b + a + (2.0 * k).sqrt() + 1.0;
    let f = GridFunction::new(|x: f64| x + eval_w(spec, x) - b, start, end)?;
    integrate_to_threshold(&f, start, k, &settings.quadrature_for(spec))
}

/// Continuity check for a ramp of slope `m1`:
/// `V_trig * tau >= m1 * K3(|W| / m1)`.
///
/// Dividing the comparator input by `m1` gives a unit-slope ramp with
/// interference `w / m1` (frequencies unchanged) and threshold
/// `V_trig * tau / m1`; multiplying back by `m1` gives the inequality above.
pub fn continuity_condition(
    spec: &InterferenceSpec,
    m1: f64,
    v_trig: f64,
    tau: f64,
    settings: &MapSettings,
) -> Result<ContinuityReport> {
    for (name, v) in [("m1", m1), ("V_trig", v_trig), ("tau", tau)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
        }
    }
    let normalized = spec.scaled(1.0 / m1)?;
    let argmax = compute_k3(&normalized, settings)?;
    let k3 = argmax.value;
    let threshold_rhs = m1 * k3;
    let lhs = v_trig * tau;
    let margin = lhs - threshold_rhs;
    Ok(ContinuityReport {
        k3,
        threshold_rhs,
        lhs,
        satisfied: margin >= 0.0,
        margin,
        argmax,
    })
}

/// Evaluates `theta` at `b0` and `b0 + delta_b` and the constants of the
/// continuity estimate `|theta1 - theta0| <= (mu2 / mu1) |delta_b|`.
pub fn lipschitz_probe(
    spec: &InterferenceSpec,
    k: f64,
    b0: f64,
    delta_b: f64,
    settings: &MapSettings,
) -> Result<LipschitzProbe> {
    if !(delta_b.is_finite() && delta_b > 0.0) {
        return Err(Error::InvalidArgument(format!("delta_b must be > 0, got {delta_b}")));
    }
    let b1 = b0 + delta_b;
    let theta0 = static_map(b0, k, spec, settings)?;
    let theta1 = static_map(b1, k, spec, settings)?;
    let ratio = (theta1 - theta0).abs() / delta_b;

    const SAMPLES: usize = 64;
    let (lo, hi) = (theta0.min(theta1), theta0.max(theta1));
    let mu1 = (0..=SAMPLES)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / SAMPLES as f64;
            x + eval_w(spec, x) - b1
        })
        .fold(f64::INFINITY, f64::min);
    if mu1.is_nan() || mu1 <= 0.0 {
        return Err(Error::ContinuityPrecondition { mu1 });
    }
    let mu2 = (0..=8)
        .map(|i| {
            let b = b0 + delta_b * i as f64 / 8.0;
            theta0 - roots_psi(spec, b, settings.root_tol).0
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(LipschitzProbe {
        theta0,
        theta1,
        ratio,
        mu1,
        mu2,
    })
}
