use std::f64::consts::TAU;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpectrogramError {
    #[error("window length {0} is not a power of two")]
    WindowNotPowerOfTwo(usize),
    #[error("hop {hop} must be in 1..={window_len}")]
    BadHop { hop: usize, window_len: usize },
    #[error("{len} samples is shorter than one window of {window_len}")]
    TooShort { len: usize, window_len: usize },
}

/// Short-time Fourier magnitudes, one column per hop.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate_hz: f64,
    /// `columns[t][k]`: amplitude of bin `k` in frame `t`, scaled so a
    /// full-scale sinusoid centred on a bin reads 1.0.
    pub columns: Vec<Vec<f64>>,
}

impl Spectrogram {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn bin_hz(&self) -> f64 {
        self.sample_rate_hz / self.window_len as f64
    }

    /// Index of the strongest bin in column `t`.
    pub fn peak_bin(&self, t: usize) -> usize {
        self.columns[t]
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (TAU * i as f64 / n as f64).cos())
        .collect()
}

pub fn spectrogram(
    samples: &[f64],
    window_len: usize,
    hop: usize,
    sample_rate_hz: f64,
) -> Result<Spectrogram, SpectrogramError> {
    if !window_len.is_power_of_two() {
        return Err(SpectrogramError::WindowNotPowerOfTwo(window_len));
    }
    if hop == 0 || hop > window_len {
        return Err(SpectrogramError::BadHop { hop, window_len });
    }
    if samples.len() < window_len {
        return Err(SpectrogramError::TooShort {
            len: samples.len(),
            window_len,
        });
    }

    let window = hann(window_len);
    let scale = 2.0 / window.iter().sum::<f64>();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window_len);
    let mut buf = vec![Complex64::default(); window_len];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let frames = 1 + (samples.len() - window_len) / hop;
    let mut columns = Vec::with_capacity(frames);
    for t in 0..frames {
        let seg = &samples[t * hop..t * hop + window_len];
        for ((b, &x), &w) in buf.iter_mut().zip(seg).zip(&window) {
            *b = Complex64::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        columns.push(buf[..=window_len / 2].iter().map(|c| c.norm() * scale).collect());
    }
    Ok(Spectrogram {
        window_len,
        hop,
        sample_rate_hz,
        columns,
    })
}
