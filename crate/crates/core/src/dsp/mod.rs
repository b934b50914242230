//! Onboard signal processing: Butterworth bandpass cascades, the
//! amplitude frame gate, and STFT spectrograms.

pub mod biquad;
pub mod gate;
pub mod spectrogram;

pub use biquad::{design_bandpass, Biquad, BiquadCascade, DesignError, MAX_BANDPASS_ORDER};
pub use gate::{FrameGate, GateOutput, StreamingGate};
pub use spectrogram::{hann, spectrogram, Spectrogram, SpectrogramError};
