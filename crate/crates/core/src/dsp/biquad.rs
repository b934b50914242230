use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

/// Highest prototype order accepted by [`design_bandpass`].
pub const MAX_BANDPASS_ORDER: u32 = 12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DesignError {
    #[error("band {low_hz}..{high_hz} Hz invalid for sample rate {sample_rate_hz} Hz")]
    InvalidBand {
        low_hz: f64,
        high_hz: f64,
        sample_rate_hz: f64,
    },
    #[error("order {0} must be even and in [2, {MAX_BANDPASS_ORDER}]")]
    InvalidOrder(u32),
    #[error("designed section is unstable (pole radius {0})")]
    Unstable(f64),
}

/// Second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub const IDENTITY: Biquad = Biquad {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Largest pole magnitude.
    pub fn pole_radius(&self) -> f64 {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        let p1 = (-self.a1 + disc) / 2.0;
        let p2 = (-self.a1 - disc) / 2.0;
        p1.norm().max(p2.norm())
    }

    pub fn is_stable(&self) -> bool {
        self.pole_radius() < 1.0
    }

    /// H(e^{jw}) at normalized angular frequency `w`.
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }
}

/// Cascade of second-order sections with per-section direct-form II
/// transposed state. State persists across [`BiquadCascade::process`]
/// calls, so a stream can be fed in arbitrary chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    sections: Vec<Biquad>,
    state: Vec<[f64; 2]>,
}

impl BiquadCascade {
    pub fn new(sections: Vec<Biquad>) -> Result<Self, DesignError> {
        if let Some(bad) = sections.iter().find(|s| !s.is_stable()) {
            return Err(DesignError::Unstable(bad.pole_radius()));
        }
        let state = vec![[0.0; 2]; sections.len()];
        Ok(Self { sections, state })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = [0.0; 2]);
    }

    #[inline]
    pub fn process_sample(&mut self, x: f64) -> f64 {
        let mut y = x;
        for (sec, st) in self.sections.iter().zip(self.state.iter_mut()) {
            let input = y;
            y = sec.b0 * input + st[0];
            st[0] = sec.b1 * input - sec.a1 * y + st[1];
            st[1] = sec.b2 * input - sec.a2 * y;
        }
        y
    }

    pub fn process(&mut self, samples: &[f64]) -> Vec<f64> {
        samples.iter().map(|&x| self.process_sample(x)).collect()
    }

    pub fn process_in_place(&mut self, samples: &mut [f64]) {
        for x in samples {
            *x = self.process_sample(*x);
        }
    }

    /// Overall response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, sample_rate_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate_hz;
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(w))
    }

    pub fn gain_db(&self, freq_hz: f64, sample_rate_hz: f64) -> f64 {
        20.0 * self.response(freq_hz, sample_rate_hz).norm().log10()
    }
}

/// Butterworth bandpass via the bilinear transform with both band edges
/// prewarped, so the response is exactly -3 dB at `low_hz` and `high_hz`.
///
/// `order` is the lowpass prototype order; the result has `order`
/// second-order sections (filter order `2 * order`), each with zeros at
/// DC and Nyquist and unit gain at the band centre.
pub fn design_bandpass(
    low_hz: f64,
    high_hz: f64,
    sample_rate_hz: f64,
    order: u32,
) -> Result<BiquadCascade, DesignError> {
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < sample_rate_hz / 2.0) {
        return Err(DesignError::InvalidBand {
            low_hz,
            high_hz,
            sample_rate_hz,
        });
    }
    if order == 0 || !order.is_multiple_of(2) || order > MAX_BANDPASS_ORDER {
        return Err(DesignError::InvalidOrder(order));
    }

    let fs2 = 2.0 * sample_rate_hz;
    let w1 = fs2 * (PI * low_hz / sample_rate_hz).tan();
    let w2 = fs2 * (PI * high_hz / sample_rate_hz).tan();
    let bw = w2 - w1;
    let w0_sq = w1 * w2;

    let n = order as usize;
    let mut poles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex64::from_polar(1.0, theta) * bw;
        let root = (p * p - 4.0 * w0_sq).sqrt();
        for s in [(p + root) / 2.0, (p - root) / 2.0] {
            poles.push((fs2 + s) / (fs2 - s));
        }
    }

    // Each upper-half-plane pole pairs with its conjugate.
    let mut upper: Vec<Complex64> = poles.into_iter().filter(|z| z.im > 0.0).collect();
    upper.sort_by(|a, b| a.arg().total_cmp(&b.arg()));
    debug_assert_eq!(upper.len(), n);

    let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
    let mut sections = Vec::with_capacity(n);
    for z in upper {
        let mut sec = Biquad {
            b0: 1.0,
            b1: 0.0,
            b2: -1.0,
            a1: -2.0 * z.re,
            a2: z.norm_sqr(),
        };
        let g = 1.0 / sec.response(center).norm();
        sec.b0 *= g;
        sec.b2 *= g;
        sections.push(sec);
    }
    BiquadCascade::new(sections)
}
