//! Interference `w(t)` represented as a finite line spectrum
//! `w(t) = sum_i a_i cos(omega_i t + phi_i)`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sinusoid of the interference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrumLine {
    /// Angular frequency, rad/s. Strictly positive.
    pub omega: f64,
    /// Peak amplitude at the comparator input, volts.
    pub amplitude: f64,
    /// Phase, rad, stored in `[0, 2pi)`.
    pub phase: f64,
}

impl SpectrumLine {
    pub fn new(omega: f64, amplitude: f64, phase: f64) -> Self {
        Self {
            omega,
            amplitude,
            phase: wrap_phase(phase),
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        if !(self.omega.is_finite() && self.omega > 0.0) {
            return Err(Error::InvalidLine {
                index,
                field: "omega",
                reason: format!("must be finite and > 0, got {}", self.omega),
            });
        }
        if !(self.amplitude.is_finite() && self.amplitude >= 0.0) {
            return Err(Error::InvalidLine {
                index,
                field: "amplitude",
                reason: format!("must be finite and >= 0, got {}", self.amplitude),
            });
        }
        if !self.phase.is_finite() {
            return Err(Error::InvalidLine {
                index,
                field: "phase",
                reason: format!("must be finite, got {}", self.phase),
            });
        }
        Ok(())
    }
}

/// Maps any finite phase onto `[0, 2pi)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let p = phase.rem_euclid(TAU);
    if p >= TAU {
        0.0
    } else {
        p
    }
}

/// Which majorant of `|integral of w|` to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundVariant {
    /// `sum a/omega`: bounds the antiderivative `|integral_{-inf}^t w|`.
    #[default]
    Tight,
    /// `2 sum a/omega`: bounds `|integral_{t1}^{t2} w|` over any finite window.
    Interval,
    /// `2pi sum a/omega`: the delta-weight reading of `integral |W(omega)/omega| d omega`.
    Conservative,
}

impl BoundVariant {
    pub fn factor(self) -> f64 {
        match self {
            BoundVariant::Tight => 1.0,
            BoundVariant::Interval => 2.0,
            BoundVariant::Conservative => TAU,
        }
    }
}

impl std::str::FromStr for BoundVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "tight" => Ok(BoundVariant::Tight),
            "interval" => Ok(BoundVariant::Interval),
            "conservative" => Ok(BoundVariant::Conservative),
            other => Err(format!(
                "unknown bound variant {other:?} (expected tight, interval or conservative)"
            )),
        }
    }
}

impl std::fmt::Display for BoundVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BoundVariant::Tight => "tight",
            BoundVariant::Interval => "interval",
            BoundVariant::Conservative => "conservative",
        })
    }
}

/// Canonical line spectrum: frequencies strictly increasing, phases in `[0, 2pi)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct InterferenceSpec {
    lines: Vec<SpectrumLine>,
}

impl InterferenceSpec {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Validates and canonicalizes `lines`. Lines sharing a frequency are
    /// merged by adding their phasors.
    pub fn new(lines: Vec<SpectrumLine>) -> Result<Self> {
        Ok(Self::canonicalize(lines)?.0)
    }

    /// Like [`InterferenceSpec::new`], also returning how many input lines
    /// were absorbed by merging.
    pub fn canonicalize(mut lines: Vec<SpectrumLine>) -> Result<(Self, usize)> {
        for (i, line) in lines.iter().enumerate() {
            line.validate(i)?;
        }
        let input_len = lines.len();
        lines.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        let mut merged: Vec<SpectrumLine> = Vec::with_capacity(lines.len());
        for line in lines {
            match merged.last_mut() {
                Some(last) if last.omega == line.omega => {
                    let re = last.amplitude * last.phase.cos() + line.amplitude * line.phase.cos();
                    let im = last.amplitude * last.phase.sin() + line.amplitude * line.phase.sin();
                    last.amplitude = re.hypot(im);
                    last.phase = wrap_phase(im.atan2(re));
                }
                _ => merged.push(SpectrumLine::new(line.omega, line.amplitude, line.phase)),
            }
        }
        let absorbed = input_len - merged.len();
        Ok((Self { lines: merged }, absorbed))
    }

    pub fn lines(&self) -> &[SpectrumLine] {
        &self.lines
    }

    pub fn len(&self) -> usize {
        self.lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lines.is_empty()
    }

    pub fn phases(&self) -> Vec<f64> {
        self.lines.iter().map(|l| l.phase).collect()
    }

    pub fn omega_max(&self) -> Option<f64> {
        self.lines.last().map(|l| l.omega)
    }

    /// Same frequencies and amplitudes with new phases (wrapped into `[0, 2pi)`).
    pub fn with_phases(&self, phases: &[f64]) -> Result<Self> {
        if phases.len() != self.lines.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} phases, got {}",
                self.lines.len(),
                phases.len()
            )));
        }
        if let Some(p) = phases.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("phase {p} is not finite")));
        }
        let lines = self
            .lines
            .iter()
            .zip(phases)
            .map(|(l, &p)| SpectrumLine::new(l.omega, l.amplitude, p))
            .collect();
        Ok(Self { lines })
    }

    /// Every amplitude multiplied by `factor >= 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "amplitude scale must be finite and >= 0, got {factor}"
            )));
        }
        let lines = self
            .lines
            .iter()
            .map(|l| SpectrumLine { amplitude: l.amplitude * factor, ..*l })
            .collect();
        Ok(Self { lines })
    }

    /// The spectrum of `w(t + shift)`: phases advance by `omega * shift`.
    pub fn time_shifted(&self, shift: f64) -> Self {
        let lines = self
            .lines
            .iter()
            .map(|l| SpectrumLine::new(l.omega, l.amplitude, l.phase + l.omega * shift))
            .collect();
        Self { lines }
    }
}

/// `w(t) = sum_i a_i cos(omega_i t + phi_i)`.
pub fn eval_w(spec: &InterferenceSpec, t: f64) -> f64 {
    spec.lines
        .iter()
        .map(|l| l.amplitude * (l.omega * t + l.phase).cos())
        .sum()
}

/// `w'(t)`.
pub fn eval_w_deriv(spec: &InterferenceSpec, t: f64) -> f64 {
    -spec
        .lines
        .iter()
        .map(|l| l.amplitude * l.omega * (l.omega * t + l.phase).sin())
        .sum::<f64>()
}

/// `A_ub = sum_i a_i`, the least upper bound of `|w|` over phases.
pub fn amplitude_bound(spec: &InterferenceSpec) -> f64 {
    spec.lines.iter().map(|l| l.amplitude).sum()
}

/// `B = sum_i a_i / omega_i`, the bound on `|integral_{-inf}^t w|`.
pub fn integral_bound_b(spec: &InterferenceSpec) -> f64 {
    spec.lines.iter().map(|l| l.amplitude / l.omega).sum()
}

pub fn integral_bound(spec: &InterferenceSpec, variant: BoundVariant) -> f64 {
    variant.factor() * integral_bound_b(spec)
}

/// `sum_i a_i omega_i`, the bound on `|w'|`.
pub fn slope_bound(spec: &InterferenceSpec) -> f64 {
    spec.lines.iter().map(|l| l.amplitude * l.omega).sum()
}

/// Exact `integral_{t1}^{t2} w(t) dt`.
pub fn integral_w(spec: &InterferenceSpec, t1: f64, t2: f64) -> f64 {
    spec.lines
        .iter()
        .map(|l| {
            l.amplitude / l.omega * ((l.omega * t2 + l.phase).sin() - (l.omega * t1 + l.phase).sin())
        })
        .sum()
}

/// Same frequencies and amplitudes, phases drawn independently and uniformly
/// on `[0, 2pi)`. Deterministic in `seed`.
pub fn random_phase_draw(spec: &InterferenceSpec, seed: u64) -> InterferenceSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_phase_draw_with(spec, &mut rng)
}

pub fn random_phase_draw_with<R: Rng>(spec: &InterferenceSpec, rng: &mut R) -> InterferenceSpec {
    let lines = spec
        .lines
        .iter()
        .map(|l| SpectrumLine::new(l.omega, l.amplitude, rng.random_range(0.0..TAU)))
        .collect();
    InterferenceSpec { lines }
}
