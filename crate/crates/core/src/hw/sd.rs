use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CARD_SLOTS: usize = 4;
pub const DEFAULT_CARD_BYTES: u64 = 32_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredFile {
    pub name: String,
    pub size: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdCard {
    pub capacity_bytes: u64,
    pub used_bytes: u64,
    pub files: Vec<StoredFile>,
}

impl SdCard {
    pub fn new(capacity_bytes: u64) -> Self {
        Self {
            capacity_bytes,
            used_bytes: 0,
            files: Vec::new(),
        }
    }

    pub fn free_bytes(&self) -> u64 {
        self.capacity_bytes - self.used_bytes
    }
}

/// Where a file landed, and whether the mux had to move to get there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub card: usize,
    pub switched_from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SdError {
    #[error("no card has room for {size} bytes")]
    StorageFull { size: u64 },
    #[error("file size must be positive")]
    EmptyFile,
}

/// Four SD slots behind a multiplexer; one card is active at a time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SdCardArray {
    cards: Vec<SdCard>,
    active_index: usize,
}

impl Default for SdCardArray {
    fn default() -> Self {
        Self::new([DEFAULT_CARD_BYTES; CARD_SLOTS])
    }
}

impl SdCardArray {
    pub fn new(capacities: [u64; CARD_SLOTS]) -> Self {
        Self {
            cards: capacities.iter().map(|&c| SdCard::new(c)).collect(),
            active_index: 0,
        }
    }

    pub fn cards(&self) -> &[SdCard] {
        &self.cards
    }

    pub fn active_index(&self) -> usize {
        self.active_index
    }

    pub fn total_capacity(&self) -> u64 {
        self.cards.iter().map(|c| c.capacity_bytes).sum()
    }

    pub fn total_used(&self) -> u64 {
        self.cards.iter().map(|c| c.used_bytes).sum()
    }

    pub fn total_free(&self) -> u64 {
        self.total_capacity() - self.total_used()
    }

    /// True if some card could take a file of `size` bytes.
    pub fn has_room_for(&self, size: u64) -> bool {
        self.cards.iter().any(|c| c.free_bytes() >= size)
    }

    /// Stores a file on the active card, or on the next card (in mux
    /// order) with room. Nothing changes when no card fits it.
    pub fn write_file(&mut self, name: &str, size_bytes: u64) -> Result<Placement, SdError> {
        if size_bytes == 0 {
            return Err(SdError::EmptyFile);
        }
        let n = self.cards.len();
        let target = (0..n)
            .map(|step| (self.active_index + step) % n)
            .find(|&i| self.cards[i].free_bytes() >= size_bytes)
            .ok_or(SdError::StorageFull { size: size_bytes })?;
        let switched_from = (target != self.active_index).then_some(self.active_index);
        self.active_index = target;
        let card = &mut self.cards[target];
        card.used_bytes += size_bytes;
        card.files.push(StoredFile {
            name: name.to_owned(),
            size: size_bytes,
        });
        Ok(Placement {
            card: target,
            switched_from,
        })
    }
}
