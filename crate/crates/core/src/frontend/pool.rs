use rustfft::num_complex::Complex64;

use super::gabor::FilterResponses;
use super::Spectrogram;
use crate::error::{Error, Result};

pub fn frame_count(len: usize, window: usize, hop: usize) -> usize {
    if window == 0 || hop == 0 || window > len {
        0
    } else {
        (len - window) / hop + 1
    }
}

/// `F(t, n)` = mean of `|y_n|^2` over `[t*hop, t*hop + window)`.
pub fn energy_pool(responses: &FilterResponses, window: usize, hop: usize) -> Result<Spectrogram> {
    if window == 0 {
        return Err(Error::invalid("pool_window", "empty pooling window"));
    }
    if hop == 0 {
        return Err(Error::invalid("hop", "must be positive"));
    }
    if window > responses.n_samples {
        return Err(Error::TooShort {
            len: responses.n_samples,
            window,
        });
    }
    let frames = frame_count(responses.n_samples, window, hop);
    let n = responses.n_filters();
    let mut values = vec![0.0; frames * n];
    let inv = 1.0 / window as f64;
    for (c, col) in responses.columns.iter().enumerate() {
        let energy: Vec<f64> = col.iter().map(Complex64::norm_sqr).collect();
        for t in 0..frames {
            let start = t * hop;
            values[t * n + c] = energy[start..start + window].iter().sum::<f64>() * inv;
        }
    }
    Ok(Spectrogram::new(frames, n, values, hop))
}

/// Back-propagates `d loss / d F` into `d loss / d Re(y) + i d loss / d Im(y)`.
pub fn energy_pool_backward(
    responses: &FilterResponses,
    grad: &Spectrogram,
    window: usize,
    hop: usize,
) -> FilterResponses {
    let mut out = FilterResponses::zeros(responses.n_samples, responses.n_filters());
    let scale = 2.0 / window as f64;
    for c in 0..responses.n_filters() {
        let col = &responses.columns[c];
        let dst = &mut out.columns[c];
        for t in 0..grad.frames {
            let g = grad.get(t, c) * scale;
            if g == 0.0 {
                continue;
            }
            let start = t * hop;
            for (d, y) in dst[start..start + window].iter_mut().zip(&col[start..start + window]) {
                *d += y * g;
            }
        }
    }
    out
}
