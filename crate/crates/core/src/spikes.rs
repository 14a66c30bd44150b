use crate::error::{Error, Result};

/// Binary spike raster `[steps x neurons]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeTrain {
    steps: usize,
    neurons: usize,
    bits: Vec<u8>,
}

impl SpikeTrain {
    pub fn zeros(steps: usize, neurons: usize) -> Self {
        Self {
            steps,
            neurons,
            bits: vec![0; steps * neurons],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let neurons = rows.first().map_or(0, Vec::len);
        let mut bits = Vec::with_capacity(rows.len() * neurons);
        for row in rows {
            if row.len() != neurons {
                return Err(Error::Shape("ragged spike rows".into()));
            }
            for (i, &v) in row.iter().enumerate() {
                bits.push(match v {
                    v if v == 0.0 => 0,
                    v if v == 1.0 => 1,
                    value => return Err(Error::NonBinarySpike { index: i, value }),
                });
            }
        }
        Ok(Self {
            steps: rows.len(),
            neurons,
            bits,
        })
    }

    pub fn from_events(steps: usize, neurons: usize, events: &[(usize, usize)]) -> Result<Self> {
        let mut train = Self::zeros(steps, neurons);
        for &(t, n) in events {
            if t >= steps || n >= neurons {
                return Err(Error::Shape(format!("event ({t}, {n}) outside {steps}x{neurons}")));
            }
            train.bits[t * neurons + n] = 1;
        }
        Ok(train)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn get(&self, t: usize, n: usize) -> bool {
        self.bits[t * self.neurons + n] == 1
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// `(t, neuron)` pairs in time-major order.
    pub fn events(&self) -> Vec<(usize, usize)> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b == 1)
            .map(|(i, _)| (i / self.neurons, i % self.neurons))
            .collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.bits
            .chunks(self.neurons.max(1))
            .take(self.steps)
            .map(|r| r.iter().map(|&b| b as f64).collect())
            .collect()
    }
}

/// Average spikes per neuron per time step.
pub fn spike_rate(spikes: &SpikeTrain) -> Result<f64> {
    let total = spikes.steps * spikes.neurons;
    if total == 0 {
        return Err(Error::Shape("empty spike train".into()));
    }
    Ok(spikes.count() as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rates() {
        assert_eq!(spike_rate(&SpikeTrain::zeros(3, 4)).unwrap(), 0.0);
        let ones = SpikeTrain::from_rows(&vec![vec![1.0; 4]; 3]).unwrap();
        assert_eq!(spike_rate(&ones).unwrap(), 1.0);
        let one = SpikeTrain::from_events(2, 2, &[(1, 0)]).unwrap();
        assert_eq!(spike_rate(&one).unwrap(), 0.25);
        assert!(spike_rate(&SpikeTrain::zeros(0, 4)).is_err());
    }

    #[test]
    fn events_round_trip_rows() {
        let t = SpikeTrain::from_events(4, 3, &[(0, 2), (3, 1)]).unwrap();
        assert_eq!(t.events(), vec![(0, 2), (3, 1)]);
        assert_eq!(SpikeTrain::from_rows(&t.to_rows()).unwrap(), t);
    }

    #[test]
    fn non_binary_rejected() {
        assert!(SpikeTrain::from_rows(&[vec![0.0, 0.5]]).is_err());
    }
}
