use crate::model::GateMetric;

/// Amplitude gate over fixed-length frames of interleaved samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGate {
    /// Frame length in sample frames (one sample per channel).
    pub frame_len: usize,
    pub threshold: f64,
    pub metric: GateMetric,
    pub channels: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GateOutput {
    pub kept: Vec<f64>,
    /// One entry per input frame, the trailing partial frame included.
    pub kept_mask: Vec<bool>,
}

impl FrameGate {
    pub fn mono(frame_len: usize, threshold: f64, metric: GateMetric) -> Self {
        Self {
            frame_len,
            threshold,
            metric,
            channels: 1,
        }
    }

    fn frame_samples(&self) -> usize {
        self.frame_len * self.channels
    }

    pub fn measure(&self, frame: &[f64]) -> f64 {
        match self.metric {
            GateMetric::Peak => frame.iter().fold(0.0f64, |m, x| m.max(x.abs())),
            GateMetric::Rms => {
                if frame.is_empty() {
                    0.0
                } else {
                    (frame.iter().map(|x| x * x).sum::<f64>() / frame.len() as f64).sqrt()
                }
            }
        }
    }

    pub fn keeps(&self, frame: &[f64]) -> bool {
        self.measure(frame) >= self.threshold
    }

    /// Splits `samples` into frames and keeps those whose metric reaches
    /// the threshold. A trailing partial frame is always kept.
    pub fn gate_frames(&self, samples: &[f64]) -> GateOutput {
        let mut g = StreamingGate::new(*self);
        let mut kept = g.push(samples);
        kept.extend(g.finish());
        GateOutput {
            kept,
            kept_mask: g.into_mask(),
        }
    }
}

/// [`FrameGate`] fed in arbitrary chunks; frames may straddle chunks.
#[derive(Debug, Clone)]
pub struct StreamingGate {
    gate: FrameGate,
    pending: Vec<f64>,
    mask: Vec<bool>,
}

impl StreamingGate {
    pub fn new(gate: FrameGate) -> Self {
        assert!(gate.frame_len > 0 && gate.channels > 0);
        Self {
            gate,
            pending: Vec::with_capacity(gate.frame_samples()),
            mask: Vec::new(),
        }
    }

    /// Returns the samples of every frame completed by this chunk that
    /// passed the gate.
    pub fn push(&mut self, mut samples: &[f64]) -> Vec<f64> {
        let size = self.gate.frame_samples();
        let mut out = Vec::new();
        while !samples.is_empty() {
            let take = (size - self.pending.len()).min(samples.len());
            self.pending.extend_from_slice(&samples[..take]);
            samples = &samples[take..];
            if self.pending.len() == size {
                let keep = self.gate.keeps(&self.pending);
                self.mask.push(keep);
                if keep {
                    out.extend_from_slice(&self.pending);
                }
                self.pending.clear();
            }
        }
        out
    }

    /// Flushes the trailing partial frame, which is kept unconditionally.
    pub fn finish(&mut self) -> Vec<f64> {
        if self.pending.is_empty() {
            return Vec::new();
        }
        self.mask.push(true);
        std::mem::take(&mut self.pending)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn into_mask(self) -> Vec<bool> {
        self.mask
    }
}
