//! Capture path from the microphones to finished WAV files.

pub mod double_buffer;
pub mod session;
pub mod wav;

pub use double_buffer::{
    count_dropped_halves, BufferIrq, DoubleBuffer, HalfFate, WriterLatencyModel, WriterTimeline, BUFFER_BYTES,
    HALF_BYTES,
};
pub use session::{
    frames_for, run_session, session_file_name, store_session, Capture, KeptRegion, RecordingSession,
    SessionError, SessionSpec, WavFileInfo, FILES_PER_SESSION,
};
pub use wav::{encode_wav_header, parse_wav_header, CountingSink, WavError, WavWriter};
