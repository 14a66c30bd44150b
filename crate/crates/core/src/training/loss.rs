pub use crate::spikes::spike_rate;

use crate::config::LossConfig;

/// `max(0, R - SR)`
pub fn sr_loss(rate: f64, target_sr: f64) -> f64 {
    (rate - target_sr).max(0.0)
}

/// `l_cls + lambda * l_sr`
pub fn total_loss(l_cls: f64, l_sr: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return l_cls;
    }
    l_cls + lambda * l_sr
}

/// Coefficients for one backward pass. `cls = 0` isolates the spike-rate term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub lambda: f64,
    pub target_sr: f64,
}

impl From<&LossConfig> for LossWeights {
    fn from(c: &LossConfig) -> Self {
        Self {
            cls: 1.0,
            lambda: c.effective_lambda(),
            target_sr: c.target_sr,
        }
    }
}
