//! Discrete-time spiking neurons: single-compartment LIF, two-compartment TC-LIF,
//! and IHC-LIF (TC-LIF plus lateral feedback and lateral inhibition).
//!
//! Every layer has a single-step API working on explicit state, and a sequence
//! API that keeps the per-step state needed for backpropagation through time.

pub mod lif;
pub mod two_compartment;

pub use lif::{lif_step, LifLayer, LifSeqCache, LifState};
pub use two_compartment::{
    ihclif_step, project_constraints, tclif_step, IhcLifLayer, LateralMask, TcLifLayer, TcSeqCache, TcState,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{sigmoid, Matrix};

/// `1` when `x >= 0`; the exact threshold fires.
#[inline]
pub fn heaviside(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Copy of a square matrix with its diagonal zeroed.
pub fn zero_diag(w: &Matrix) -> Result<Matrix> {
    if !w.is_square() {
        return Err(Error::Shape(format!(
            "zero_diag needs a square matrix, got {}x{}",
            w.rows, w.cols
        )));
    }
    let mut out = w.clone();
    for i in 0..w.rows {
        out.set(i, i, 0.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    /// Box of half-width `w` and height `1/(2w)`.
    #[default]
    Rectangular,
    /// `k sigma(kx) (1 - sigma(kx))`.
    SigmoidDerivative,
}

/// Stand-in derivative of the Heaviside step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    /// Half-width for the rectangular kind, steepness for the sigmoid kind.
    pub scale: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        Self::rectangular(0.5)
    }
}

impl SurrogateSpec {
    pub fn rectangular(width: f64) -> Self {
        Self {
            kind: SurrogateKind::Rectangular,
            scale: width,
        }
    }

    pub fn sigmoid(steepness: f64) -> Self {
        Self {
            kind: SurrogateKind::SigmoidDerivative,
            scale: steepness,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale > 0.0 && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::invalid("surrogate.scale", "must be positive"))
        }
    }

    pub fn grad(&self, x: f64) -> f64 {
        let w = self.scale;
        match self.kind {
            SurrogateKind::Rectangular => {
                if x.abs() <= w {
                    1.0 / (2.0 * w)
                } else {
                    0.0
                }
            }
            SurrogateKind::SigmoidDerivative => {
                let s = sigmoid(w * x);
                w * s * (1.0 - s)
            }
        }
    }

    /// Smooth spike whose derivative is exactly [`SurrogateSpec::grad`].
    pub fn relaxed(&self, x: f64) -> f64 {
        let w = self.scale;
        match self.kind {
            SurrogateKind::Rectangular => ((x + w) / (2.0 * w)).clamp(0.0, 1.0),
            SurrogateKind::SigmoidDerivative => sigmoid(w * x),
        }
    }
}

/// How the forward pass turns membrane potential into spikes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpikeMode {
    /// Heaviside forward, surrogate backward.
    #[default]
    Hard,
    /// Forward uses the surrogate's antiderivative, so backward is the exact gradient.
    /// Used to check BPTT against finite differences.
    Relaxed,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpikeFn {
    pub mode: SpikeMode,
    pub surrogate: SurrogateSpec,
}

impl SpikeFn {
    #[inline]
    pub fn fire(&self, x: f64) -> f64 {
        match self.mode {
            SpikeMode::Hard => heaviside(x),
            SpikeMode::Relaxed => self.surrogate.relaxed(x),
        }
    }

    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        self.surrogate.grad(x)
    }
}

pub(crate) fn check_binary(s: &[f64]) -> Result<()> {
    match s.iter().position(|&v| v != 0.0 && v != 1.0) {
        Some(index) => Err(Error::NonBinarySpike { index, value: s[index] }),
        None => Ok(()),
    }
}
