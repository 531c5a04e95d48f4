//! Saturating partial sums and the saturating integral.
//!
//! The saturating integral accumulates `f` left to right with the running
//! state clamped at zero from below:
//!
//! ```text
//! S[n+1] = max(0, S[n] + f(x[n]) * dx),   S[0] = 0
//! ```
//!
//! [`saturating_partial_sum`] is that recursion verbatim. [`saturating_integral`]
//! estimates its limit as `dx -> 0`. Each grid cell is integrated against the
//! quadratic through the cell's end and mid samples, and the clamp is applied
//! per cell against the minimum of that cell's antiderivative. This is exact
//! for piecewise-quadratic integrands and converges at fourth order otherwise,
//! so step halving reaches tight tolerances quickly.

use crate::error::{Error, Result};

/// A real function sampled on a closed interval.
#[derive(Clone, Copy)]
pub struct GridFunction<F> {
    sampler: F,
    domain_lo: f64,
    domain_hi: f64,
}

impl<F: Fn(f64) -> f64> GridFunction<F> {
    pub fn new(sampler: F, domain_lo: f64, domain_hi: f64) -> Result<Self> {
        if !(domain_lo.is_finite() && domain_hi.is_finite() && domain_lo < domain_hi) {
            return Err(Error::InvalidArgument(format!(
                "grid function domain [{domain_lo}, {domain_hi}] is empty or unbounded"
            )));
        }
        Ok(Self {
            sampler,
            domain_lo,
            domain_hi,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    /// Samples `f(x)`, rejecting non-finite values.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let y = (self.sampler)(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::NonFiniteValue { x })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Initial grid width.
    pub step: f64,
    /// Maximum number of step halvings.
    pub refine_limit: u32,
    /// Relative change between successive halvings accepted as converged.
    pub rel_tol: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            step: 1e-2,
            refine_limit: 16,
            rel_tol: 1e-8,
        }
    }
}

impl QuadratureConfig {
    pub fn new(step: f64, refine_limit: u32, rel_tol: f64) -> Result<Self> {
        let cfg = Self {
            step,
            refine_limit,
            rel_tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {}", self.step)));
        }
        if self.refine_limit == 0 {
            return Err(Error::InvalidArgument("refine_limit must be >= 1".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rel_tol must be > 0, got {}",
                self.rel_tol
            )));
        }
        let finest = self.step * 0.5f64.powi(self.refine_limit as i32);
        if finest <= f64::MIN_POSITIVE {
            return Err(Error::InvalidArgument(format!(
                "step {} halved {} times underflows",
                self.step, self.refine_limit
            )));
        }
        Ok(())
    }

    /// Same tolerances with the initial step capped at `max_step`.
    pub fn with_max_step(mut self, max_step: f64) -> Self {
        if max_step.is_finite() && max_step > 0.0 && max_step < self.step {
            self.step = max_step;
        }
        self
    }
}

/// Literal saturating partial sum `S[n+1] = max(0, S[n] + f[n] * step)`, `S[0] = 0`.
pub fn saturating_partial_sum(samples: &[f64], step: f64) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    if samples.is_empty() {
        return Err(Error::InvalidArgument("samples must be nonempty".into()));
    }
    let mut state = 0.0f64;
    for (index, &y) in samples.iter().enumerate() {
        if !y.is_finite() {
            return Err(Error::NonFiniteSample { index });
        }
        state = (state + y * step).max(0.0);
    }
    Ok(state)
}

/// Saturating partial sum of `f` over `cells` equal cells of `[a, b]`,
/// sampling the left endpoint of each cell.
pub fn left_endpoint_sum<F: Fn(f64) -> f64>(
    f: &GridFunction<F>,
    a: f64,
    b: f64,
    cells: usize,
) -> Result<f64> {
    check_interval(f, a, b)?;
    if cells == 0 {
        return Err(Error::InvalidArgument("cells must be >= 1".into()));
    }
    let h = (b - a) / cells as f64;
    let samples = (0..cells)
        .map(|i| f.eval(a + i as f64 * h))
        .collect::<Result<Vec<_>>>()?;
    saturating_partial_sum(&samples, h)
}

/// Outcome of advancing the clamped state across one cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStep {
    /// State at the right end of the cell.
    pub state: f64,
    /// Fraction of the cell (0..=1) where the state was last pinned at zero,
    /// if it was pinned anywhere in the cell.
    pub pinned_at: Option<f64>,
}

/// Advances state `s0` across a cell of width `h` given the integrand at the
/// left end, midpoint and right end.
pub fn clamped_cell(f_lo: f64, f_mid: f64, f_hi: f64, h: f64, s0: f64) -> CellStep {
    // f(x0 + u*h) ~ c0 + c1*u + c2*u^2 on u in [0, 1]
    let c0 = f_lo;
    let c1 = -3.0 * f_lo + 4.0 * f_mid - f_hi;
    let c2 = 2.0 * f_lo - 4.0 * f_mid + 2.0 * f_hi;
    let antideriv = |u: f64| h * u * (c0 + u * (c1 / 2.0 + u * c2 / 3.0));
    let increment = h * (f_lo + 4.0 * f_mid + f_hi) / 6.0;

    let (mut min_u, mut min_val) = (0.0, 0.0);
    let mut consider = |u: f64, v: f64| {
        if v <= min_val {
            min_u = u;
            min_val = v;
        }
    };
    for u in rising_roots(c0, c1, c2) {
        consider(u, antideriv(u));
    }
    consider(1.0, increment);

    if s0 + min_val > 0.0 {
        CellStep {
            state: s0 + increment,
            pinned_at: None,
        }
    } else {
        CellStep {
            state: (increment - min_val).max(0.0),
            pinned_at: Some(min_u),
        }
    }
}

/// Roots in (0, 1) of `c0 + c1 u + c2 u^2` where it crosses from negative to
/// positive (interior minima of the antiderivative), in increasing order.
fn rising_roots(c0: f64, c1: f64, c2: f64) -> impl Iterator<Item = f64> {
    let scale = c0.abs().max(c1.abs()).max(c2.abs());
    let mut roots = [f64::NAN; 2];
    if scale > 0.0 {
        if c2.abs() <= 1e-12 * scale {
            if c1 != 0.0 {
                roots[0] = -c0 / c1;
            }
        } else {
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc >= 0.0 {
                let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
                if q != 0.0 {
                    roots[0] = q / c2;
                    roots[1] = c0 / q;
                } else {
                    roots[0] = 0.0;
                }
            }
        }
    }
    if roots[0] > roots[1] {
        roots.swap(0, 1);
    }
    roots
        .into_iter()
        .filter(move |&u| u > 0.0 && u < 1.0 && c1 + 2.0 * c2 * u > 0.0)
}

fn check_interval<F: Fn(f64) -> f64>(f: &GridFunction<F>, a: f64, b: f64) -> Result<()> {
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(format!("interval [{a}, {b}] must satisfy a < b")));
    }
    let (lo, hi) = f.domain();
    if a < lo || b > hi {
        return Err(Error::InvalidArgument(format!(
            "interval [{a}, {b}] leaves the domain [{lo}, {hi}]"
        )));
    }
    Ok(())
}

fn cells_for(width: f64, step: f64) -> Result<usize> {
    let n = (width / step).ceil();
    if !(n.is_finite() && n <= 1e9) {
        return Err(Error::InvalidArgument(format!(
            "grid of step {step} over width {width} is too large"
        )));
    }
    Ok((n as usize).max(1))
}

/// Returns (final state, sum of |f| dx) over `cells` cells of `[a, b]`.
fn march<F: Fn(f64) -> f64>(f: &GridFunction<F>, a: f64, b: f64, cells: usize) -> Result<(f64, f64)> {
    let h = (b - a) / cells as f64;
    let mut state = 0.0;
    let mut l1 = 0.0;
    let mut f_lo = f.eval(a)?;
    for i in 0..cells {
        let x0 = a + i as f64 * h;
        let x1 = if i + 1 == cells { b } else { a + (i + 1) as f64 * h };
        let f_mid = f.eval(0.5 * (x0 + x1))?;
        let f_hi = f.eval(x1)?;
        state = clamped_cell(f_lo, f_mid, f_hi, x1 - x0, state).state;
        l1 += (x1 - x0) * (f_lo.abs() + 4.0 * f_mid.abs() + f_hi.abs()) / 6.0;
        f_lo = f_hi;
    }
    Ok((state, l1))
}

/// Saturating integral of `f` over `[a, b]`, refined by step halving until
/// successive estimates agree to `cfg.rel_tol`.
pub fn saturating_integral<F: Fn(f64) -> f64>(
    f: &GridFunction<F>,
    a: f64,
    b: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    cfg.validate()?;
    check_interval(f, a, b)?;
    let mut cells = cells_for(b - a, cfg.step)?;
    let (mut last, _) = march(f, a, b, cells)?;
    let mut previous = last;
    for _ in 0..cfg.refine_limit {
        cells *= 2;
        let (estimate, l1) = march(f, a, b, cells)?;
        let floor = 64.0 * f64::EPSILON * l1;
        if (estimate - last).abs() <= (cfg.rel_tol * estimate.abs()).max(floor) {
            return Ok(estimate);
        }
        previous = last;
        last = estimate;
    }
    Err(Error::NonConvergence {
        halvings: cfg.refine_limit,
        last,
        previous,
    })
}

/// Where the clamped accumulation first reaches the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdCrossing {
    /// First point where the accumulation reaches the threshold.
    pub level_at: f64,
    /// Last point before `level_at` where the accumulation was pinned at zero.
    pub release: f64,
}

/// Smallest `theta >= start` where the saturating integral of `f` from `start`
/// first reaches `k`.
pub fn integrate_to_threshold<F: Fn(f64) -> f64>(
    f: &GridFunction<F>,
    start: f64,
    k: f64,
    cfg: &QuadratureConfig,
) -> Result<f64> {
    threshold_crossing(f, start, k, cfg).map(|c| c.level_at)
}

/// [`integrate_to_threshold`] that also reports the last release from zero.
pub fn threshold_crossing<F: Fn(f64) -> f64>(
    f: &GridFunction<F>,
    start: f64,
    k: f64,
    cfg: &QuadratureConfig,
) -> Result<ThresholdCrossing> {
    cfg.validate()?;
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold k must be > 0, got {k}")));
    }
    let (lo, hi) = f.domain();
    if !(start >= lo && start < hi) {
        return Err(Error::InvalidArgument(format!(
            "start {start} outside the domain [{lo}, {hi})"
        )));
    }
    let mut h = cfg.step;
    let mut last = march_to_threshold(f, start, k, h)?;
    let mut previous = last;
    for _ in 0..cfg.refine_limit {
        h *= 0.5;
        let current = march_to_threshold(f, start, k, h)?;
        let scale = (current.level_at - start).abs();
        if (current.level_at - last.level_at).abs() <= cfg.rel_tol * scale {
            return Ok(ThresholdCrossing {
                level_at: current.level_at,
                release: refine_release(f, start, current.release, h),
            });
        }
        previous = last;
        last = current;
    }
    Err(Error::NonConvergence {
        halvings: cfg.refine_limit,
        last: last.level_at,
        previous: previous.level_at,
    })
}

fn march_to_threshold<F: Fn(f64) -> f64>(
    f: &GridFunction<F>,
    start: f64,
    k: f64,
    h: f64,
) -> Result<ThresholdCrossing> {
    let (_, domain_hi) = f.domain();
    let cells = cells_for(domain_hi - start, h)?;
    let mut state = 0.0;
    let mut max_attained = 0.0f64;
    let mut release = start;
    let mut f_lo = f.eval(start)?;
    for i in 0..cells {
        let x0 = start + i as f64 * h;
        let x1 = (start + (i + 1) as f64 * h).min(domain_hi);
        let f_mid = f.eval(0.5 * (x0 + x1))?;
        let f_hi = f.eval(x1)?;
        let step = clamped_cell(f_lo, f_mid, f_hi, x1 - x0, state);
        if step.state >= k {
            return locate_in_cell(f, x0, x1, f_lo, state, k, release);
        }
        if let Some(u) = step.pinned_at {
            release = x0 + u * (x1 - x0);
        }
        state = step.state;
        max_attained = max_attained.max(state);
        f_lo = f_hi;
    }
    Err(Error::ThresholdUnreachable {
        k,
        domain_hi,
        max_attained,
    })
}

/// Bisects for the first point of `[x0, x1]` where the state reaches `k`,
/// re-integrating the sub-cell `[x0, x]` at each probe.
fn locate_in_cell<F: Fn(f64) -> f64>(
    f: &GridFunction<F>,
    x0: f64,
    x1: f64,
    f_lo: f64,
    s0: f64,
    k: f64,
    release_before: f64,
) -> Result<ThresholdCrossing> {
    let sub = |x: f64| -> Result<CellStep> {
        Ok(clamped_cell(f_lo, f.eval(0.5 * (x0 + x))?, f.eval(x)?, x - x0, s0))
    };
    let (mut lo, mut hi) = (x0, x1);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sub(mid)?.state >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let release = match sub(hi)?.pinned_at {
        Some(u) => x0 + u * (hi - x0),
        None => release_before,
    };
    Ok(ThresholdCrossing {
        level_at: hi,
        release,
    })
}

/// Snaps an estimated release point onto the sign change of `f` nearby, where
/// the accumulation leaves zero.
fn refine_release<F: Fn(f64) -> f64>(f: &GridFunction<F>, start: f64, estimate: f64, h: f64) -> f64 {
    let value = |x: f64| f.eval(x).unwrap_or(f64::NAN);
    if estimate <= start && value(start) >= 0.0 {
        return start;
    }
    let (domain_lo, domain_hi) = f.domain();
    let mut reach = 0.25 * h;
    while reach <= 2.0 * h {
        let lo = (estimate - reach).max(start).max(domain_lo);
        let hi = (estimate + reach).min(domain_hi);
        let (f_lo, f_hi) = (value(lo), value(hi));
        if f_lo < 0.0 && f_hi >= 0.0 {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if m <= a || m >= b {
                    break;
                }
                if value(m) < 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            return b;
        }
        reach *= 2.0;
    }
    estimate
}
