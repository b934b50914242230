use thiserror::Error;

/// 512 Kbit part organized as 65,536 bytes.
pub const EEPROM_BYTES: usize = 65_536;
const ERASED: u8 = 0xFF;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EepromError {
    #[error("write of {len} bytes at {addr:#06x} exceeds capacity")]
    OutOfRange { addr: usize, len: usize },
    #[error("power lost after {written} of {len} bytes at {addr:#06x}")]
    PowerLoss {
        addr: usize,
        len: usize,
        written: usize,
    },
}

/// Byte-addressed serial EEPROM with per-cell write counters and an
/// optional power-cut injector.
#[derive(Clone)]
pub struct VirtualEeprom {
    cells: Vec<u8>,
    write_count: Vec<u32>,
    // Bytes that may still be written before the simulated supply drops.
    power_budget: Option<usize>,
}

impl std::fmt::Debug for VirtualEeprom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VirtualEeprom")
            .field("bytes", &self.cells.len())
            .field("power_budget", &self.power_budget)
            .finish()
    }
}

impl Default for VirtualEeprom {
    fn default() -> Self {
        Self::new()
    }
}

impl VirtualEeprom {
    pub fn new() -> Self {
        Self {
            cells: vec![ERASED; EEPROM_BYTES],
            write_count: vec![0; EEPROM_BYTES],
            power_budget: None,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cells.len()
    }

    pub fn read(&self, addr: usize, len: usize) -> Result<&[u8], EepromError> {
        match addr.checked_add(len) {
            Some(end) if end <= EEPROM_BYTES => Ok(&self.cells[addr..end]),
            _ => Err(EepromError::OutOfRange { addr, len }),
        }
    }

    /// Writes `data` at `addr`. Out-of-range writes touch nothing. With a
    /// power cut armed, bytes are committed in address order until the
    /// budget runs out.
    pub fn write(&mut self, addr: usize, data: &[u8]) -> Result<(), EepromError> {
        let len = data.len();
        match addr.checked_add(len) {
            Some(end) if end <= EEPROM_BYTES => {}
            _ => return Err(EepromError::OutOfRange { addr, len }),
        }
        let allowed = self.power_budget.map_or(len, |b| b.min(len));
        for (i, &b) in data[..allowed].iter().enumerate() {
            self.cells[addr + i] = b;
            self.write_count[addr + i] += 1;
        }
        if let Some(budget) = self.power_budget.as_mut() {
            *budget -= allowed;
            if allowed < len {
                return Err(EepromError::PowerLoss {
                    addr,
                    len,
                    written: allowed,
                });
            }
        }
        Ok(())
    }

    pub fn write_count(&self, addr: usize) -> u32 {
        self.write_count.get(addr).copied().unwrap_or(0)
    }

    /// Arms a power cut: only the next `bytes` byte writes succeed.
    pub fn cut_power_after(&mut self, bytes: usize) {
        self.power_budget = Some(bytes);
    }

    pub fn restore_power(&mut self) {
        self.power_budget = None;
    }

    /// Returns every cell in `[addr, addr+len)` to the erased state.
    pub fn erase(&mut self, addr: usize, len: usize) -> Result<(), EepromError> {
        let data = vec![ERASED; len];
        self.write(addr, &data)
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    /// Direct cell access for corruption experiments; bypasses counters.
    pub fn poke(&mut self, addr: usize, value: u8) {
        self.cells[addr] = value;
    }
}
