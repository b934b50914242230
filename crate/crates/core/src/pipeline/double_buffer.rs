//! Ping-pong DMA buffer and the writer timing model that decides which
//! halves reach storage.
//!
//! Time is measured in byte ticks of one stream: at `R` bytes per second a
//! tick lasts `1/R` s, so half `k` finishes filling at tick `(k + 1) * H`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const BUFFER_BYTES: usize = 4096;
pub const HALF_BYTES: usize = BUFFER_BYTES / 2;

/// Interrupts raised by the DMA engine as the fill cursor crosses the
/// half and full boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferIrq {
    HalfComplete,
    FullComplete,
}

/// One I2S interface's 4096-byte circular buffer.
#[derive(Debug, Clone)]
pub struct DoubleBuffer {
    storage: Box<[u8; BUFFER_BYTES]>,
    fill_cursor: usize,
    generation: u64,
}

impl Default for DoubleBuffer {
    fn default() -> Self {
        Self::new()
    }
}

impl DoubleBuffer {
    pub fn new() -> Self {
        Self {
            storage: Box::new([0; BUFFER_BYTES]),
            fill_cursor: 0,
            generation: 0,
        }
    }

    pub fn fill_cursor(&self) -> usize {
        self.fill_cursor
    }

    /// Number of completed passes over the whole buffer.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    /// Region (0 or 1) the cursor is currently filling.
    pub fn active_half(&self) -> usize {
        self.fill_cursor / HALF_BYTES
    }

    pub fn half(&self, region: usize) -> &[u8] {
        &self.storage[region * HALF_BYTES..(region + 1) * HALF_BYTES]
    }

    /// Copies `data` in at the cursor, wrapping, and reports each boundary
    /// crossed in order.
    pub fn dma_write(&mut self, mut data: &[u8]) -> Vec<BufferIrq> {
        let mut irqs = Vec::new();
        while !data.is_empty() {
            let boundary = (self.active_half() + 1) * HALF_BYTES;
            let n = (boundary - self.fill_cursor).min(data.len());
            self.storage[self.fill_cursor..self.fill_cursor + n].copy_from_slice(&data[..n]);
            self.fill_cursor += n;
            data = &data[n..];
            if self.fill_cursor == HALF_BYTES {
                irqs.push(BufferIrq::HalfComplete);
            } else if self.fill_cursor == BUFFER_BYTES {
                irqs.push(BufferIrq::FullComplete);
                self.fill_cursor = 0;
                self.generation += 1;
            }
        }
        irqs
    }
}

/// Time the storage writer needs per half buffer: a base latency plus an
/// optional uniform jitter drawn from a seeded stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WriterLatencyModel {
    pub per_half_write_time_s: f64,
    #[serde(default)]
    pub jitter_s: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for WriterLatencyModel {
    fn default() -> Self {
        Self::fixed(0.002)
    }
}

impl WriterLatencyModel {
    pub fn fixed(per_half_write_time_s: f64) -> Self {
        Self {
            per_half_write_time_s,
            jitter_s: 0.0,
            seed: 0,
        }
    }

    /// Latency sampler for one stream; streams get independent sequences.
    pub fn sampler(&self, stream: u64) -> LatencySampler {
        LatencySampler {
            model: *self,
            rng: ChaCha8Rng::seed_from_u64(self.seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        }
    }
}

pub struct LatencySampler {
    model: WriterLatencyModel,
    rng: ChaCha8Rng,
}

impl LatencySampler {
    pub fn next_s(&mut self) -> f64 {
        if self.model.jitter_s > 0.0 {
            self.model.per_half_write_time_s + self.model.jitter_s * self.rng.random::<f64>()
        } else {
            self.model.per_half_write_time_s
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfFate {
    Written,
    /// The writer had not started before the DMA wrapped onto the region.
    Overrun,
    /// The write started but was still in flight when the region was
    /// overwritten; the writer's time is spent regardless.
    Torn,
}

impl HalfFate {
    pub fn is_dropped(self) -> bool {
        self != HalfFate::Written
    }
}

/// FIFO writer schedule over the halves of one stream.
pub struct WriterTimeline {
    total_bytes: u64,
    halves: u64,
    ticks_per_s: f64,
    sampler: LatencySampler,
    free_at: f64,
    next: u64,
}

impl WriterTimeline {
    pub fn new(total_bytes: u64, bytes_per_second: u64, sampler: LatencySampler) -> Self {
        Self {
            total_bytes,
            halves: total_bytes.div_ceil(HALF_BYTES as u64),
            ticks_per_s: bytes_per_second as f64,
            sampler,
            free_at: 0.0,
            next: 0,
        }
    }

    pub fn halves(&self) -> u64 {
        self.halves
    }

    fn completed_at(&self, k: u64) -> f64 {
        ((k + 1) * HALF_BYTES as u64).min(self.total_bytes) as f64
    }

    /// Decides the fate of the next half in order. Half `k` is safe until
    /// the DMA starts refilling its region, which happens when half `k + 1`
    /// completes, provided a half `k + 2` exists at all.
    pub fn resolve_next(&mut self) -> Option<HalfFate> {
        if self.next >= self.halves {
            return None;
        }
        let k = self.next;
        self.next += 1;
        let ready = self.completed_at(k);
        let deadline = if k + 2 < self.halves {
            self.completed_at(k + 1)
        } else {
            f64::INFINITY
        };
        let start = ready.max(self.free_at);
        if start >= deadline {
            return Some(HalfFate::Overrun);
        }
        let finish = start + self.sampler.next_s() * self.ticks_per_s;
        self.free_at = finish;
        Some(if finish > deadline {
            HalfFate::Torn
        } else {
            HalfFate::Written
        })
    }
}

/// Timing-only pass: number of halves dropped for a stream of
/// `total_bytes` at the given byte rate.
pub fn count_dropped_halves(total_bytes: u64, bytes_per_second: u64, latency: &WriterLatencyModel) -> u64 {
    let mut t = WriterTimeline::new(total_bytes, bytes_per_second, latency.sampler(0));
    std::iter::from_fn(|| t.resolve_next())
        .filter(|f| f.is_dropped())
        .count() as u64
}
