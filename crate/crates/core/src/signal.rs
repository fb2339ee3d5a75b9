//! Bounded disturbance signals `e(t)` with `sup_t |e(t)| <= eps`.
//!
//! Every generator produces values inside the ball by construction; nothing is
//! clipped after the fact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SignalKind {
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// `+eps * axis` on `[0, P/2)`, `-eps * axis` on `[P/2, P)`, repeated.
    SquareWave {
        amplitude: f64,
        period: f64,
        axis: Vec<f64>,
    },
    Sinusoid {
        amplitude: f64,
        period: f64,
        axis: Vec<f64>,
    },
    /// Uniform in the closed `eps`-ball, held constant on `[k*hold, (k+1)*hold)`.
    UniformRandom {
        amplitude: f64,
        seed: u64,
        hold: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    kind: SignalKind,
    dim: usize,
}

// Random draws are scaled slightly inside the ball so that rounding in the
// norm can never push a sample past `eps`.
const BALL_SHRINK: f64 = 1.0 - 1e-12;

/// Normalizes `axis` so that its floating-point norm is at most one.
fn unit_axis(axis: &[f64]) -> Result<Vec<f64>> {
    let n = crate::norm(axis);
    if !(n > 0.0 && n.is_finite()) {
        return Err(invalid("axis", "must be a nonzero finite vector"));
    }
    let mut a: Vec<f64> = axis.iter().map(|v| v / n).collect();
    while crate::norm(&a) > 1.0 {
        for v in a.iter_mut() {
            *v *= 1.0 - f64::EPSILON;
        }
    }
    Ok(a)
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be > 0, got {v}")))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be >= 0, got {v}")))
    }
}

impl DisturbanceSpec {
    pub fn zero(dim: usize) -> Self {
        Self {
            kind: SignalKind::Zero,
            dim,
        }
    }

    pub fn constant(value: Vec<f64>) -> Result<Self> {
        if value.iter().any(|v| !v.is_finite()) {
            return Err(invalid("value", "must be finite"));
        }
        Ok(Self {
            dim: value.len(),
            kind: SignalKind::Constant { value },
        })
    }

    pub fn square_wave(amplitude: f64, period: f64, axis: &[f64]) -> Result<Self> {
        nonnegative("amplitude", amplitude)?;
        positive("period", period)?;
        Ok(Self {
            dim: axis.len(),
            kind: SignalKind::SquareWave {
                amplitude,
                period,
                axis: unit_axis(axis)?,
            },
        })
    }

    pub fn sinusoid(amplitude: f64, period: f64, axis: &[f64]) -> Result<Self> {
        nonnegative("amplitude", amplitude)?;
        positive("period", period)?;
        Ok(Self {
            dim: axis.len(),
            kind: SignalKind::Sinusoid {
                amplitude,
                period,
                axis: unit_axis(axis)?,
            },
        })
    }

    pub fn uniform_random(amplitude: f64, seed: u64, hold: f64, dim: usize) -> Result<Self> {
        nonnegative("amplitude", amplitude)?;
        positive("hold", hold)?;
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        Ok(Self {
            kind: SignalKind::UniformRandom {
                amplitude,
                seed,
                hold,
            },
            dim,
        })
    }

    /// Re-validates a deserialized spec (axes normalized, parameters in range).
    pub fn validated(self) -> Result<Self> {
        match self.kind {
            SignalKind::Zero => Ok(self),
            SignalKind::Constant { value } => {
                check_dim(self.dim, value.len())?;
                Self::constant(value)
            }
            SignalKind::SquareWave {
                amplitude,
                period,
                axis,
            } => {
                check_dim(self.dim, axis.len())?;
                Self::square_wave(amplitude, period, &axis)
            }
            SignalKind::Sinusoid {
                amplitude,
                period,
                axis,
            } => {
                check_dim(self.dim, axis.len())?;
                Self::sinusoid(amplitude, period, &axis)
            }
            SignalKind::UniformRandom {
                amplitude,
                seed,
                hold,
            } => Self::uniform_random(amplitude, seed, hold, self.dim),
        }
    }

    /// Unit vector along coordinate `index` of a `dim`-dimensional space.
    pub fn coordinate_axis(dim: usize, index: usize) -> Vec<f64> {
        let mut a = vec![0.0; dim];
        a[index] = 1.0;
        a
    }

    pub fn kind(&self) -> &SignalKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            SignalKind::Zero => true,
            SignalKind::Constant { value } => value.iter().all(|v| *v == 0.0),
            SignalKind::SquareWave { amplitude, .. }
            | SignalKind::Sinusoid { amplitude, .. }
            | SignalKind::UniformRandom { amplitude, .. } => *amplitude == 0.0,
        }
    }

    /// The sup-norm bound `eps`.
    pub fn bound(&self) -> f64 {
        match &self.kind {
            SignalKind::Zero => 0.0,
            SignalKind::Constant { value } => crate::norm(value),
            SignalKind::SquareWave { amplitude, .. }
            | SignalKind::Sinusoid { amplitude, .. }
            | SignalKind::UniformRandom { amplitude, .. } => *amplitude,
        }
    }

    /// Returns a copy with a different seed (random signals only).
    pub fn with_seed(mut self, new_seed: u64) -> Self {
        if let SignalKind::UniformRandom { seed, .. } = &mut self.kind {
            *seed = new_seed;
        }
        self
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        match &self.kind {
            SignalKind::Zero => out.fill(0.0),
            SignalKind::Constant { value } => out.copy_from_slice(value),
            SignalKind::SquareWave {
                amplitude,
                period,
                axis,
            } => {
                let phase = t.rem_euclid(*period);
                let s = if phase < 0.5 * period {
                    *amplitude
                } else {
                    -*amplitude
                };
                for (o, a) in out.iter_mut().zip(axis) {
                    *o = s * a;
                }
            }
            SignalKind::Sinusoid {
                amplitude,
                period,
                axis,
            } => {
                let s = amplitude * (std::f64::consts::TAU * t / period).sin();
                for (o, a) in out.iter_mut().zip(axis) {
                    *o = s * a;
                }
            }
            SignalKind::UniformRandom {
                amplitude,
                seed,
                hold,
            } => {
                // A pure function of (seed, floor(t / hold)).
                let k = (t / hold).floor() as i64 as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                rng.set_stream(k);
                for o in out.iter_mut() {
                    *o = rng.sample(StandardNormal);
                }
                let n = crate::norm(out);
                let u: f64 = rng.random();
                let radius = amplitude * u.powf(1.0 / self.dim as f64) * BALL_SHRINK;
                let scale = if n > 0.0 { radius / n } else { 0.0 };
                for o in out.iter_mut() {
                    *o *= scale;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_wave_phases() {
        let s = DisturbanceSpec::square_wave(1e-3, 1e4, &[0.0, 1.0]).unwrap();
        assert_eq!(s.eval(0.0), vec![0.0, 1e-3]);
        assert_eq!(s.eval(4999.9), vec![0.0, 1e-3]);
        assert_eq!(s.eval(5000.0), vec![0.0, -1e-3]);
        assert_eq!(s.eval(9999.0), vec![0.0, -1e-3]);
        assert_eq!(s.eval(10000.0), vec![0.0, 1e-3]);
    }

    #[test]
    fn zero_signal() {
        let s = DisturbanceSpec::zero(3);
        assert_eq!(s.eval(12.5), vec![0.0; 3]);
        assert!(s.is_zero());
    }

    #[test]
    fn random_signal_is_reproducible() {
        let s = DisturbanceSpec::uniform_random(0.5, 7, 0.01, 3).unwrap();
        assert_eq!(s.eval(1.234), s.eval(1.234));
        // same hold interval
        assert_eq!(s.eval(1.2301), s.eval(1.2399));
        assert_ne!(s.eval(1.234), s.eval(1.244));
        let other = s.clone().with_seed(8);
        assert_ne!(s.eval(1.234), other.eval(1.234));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(DisturbanceSpec::square_wave(1.0, 0.0, &[1.0]).is_err());
        assert!(DisturbanceSpec::square_wave(-1.0, 1.0, &[1.0]).is_err());
        assert!(DisturbanceSpec::sinusoid(1.0, 1.0, &[0.0, 0.0]).is_err());
        assert!(DisturbanceSpec::uniform_random(1.0, 0, 0.0, 2).is_err());
    }

    #[test]
    fn validated_renormalizes_axis() {
        let raw: DisturbanceSpec = serde_json::from_str(
            r#"{"kind":{"kind":"square_wave","amplitude":2.0,"period":1.0,"axis":[3.0,4.0]},"dim":2}"#,
        )
        .unwrap();
        let s = raw.validated().unwrap();
        let v = s.eval(0.1);
        assert!((v[0] - 1.2).abs() < 1e-15 && (v[1] - 1.6).abs() < 1e-15);
    }
}
