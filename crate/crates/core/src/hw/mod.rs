//! Software stand-ins for the peripherals: RTC, EEPROM, battery and solar
//! charger, the four-card SD array, and the microphone front end.

pub mod audio;
pub mod eeprom;
pub mod energy;
pub mod rtc;
pub mod sd;

pub use audio::{quantize, AudioSource, FrameBlock, Segment, SourceReader, MIC_CHANNELS};
pub use eeprom::{EepromError, VirtualEeprom, EEPROM_BYTES};
pub use energy::{Crossing, Direction, DrawTable, EnergyState};
pub use rtc::{RtcError, VirtualRtc};
pub use sd::{Placement, SdCard, SdCardArray, SdError, StoredFile};
