use std::sync::atomic::{AtomicU64, Ordering};

/// Which taps the MAC counter charges for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CountMode {
    /// Only multiply-accumulates actually executed (taps landing in padding are skipped).
    #[default]
    Executed,
    /// Every tap of every output site, padded zeros included.
    AllTaps,
}

/// MAC accumulator threaded through kernel execution.
///
/// Safe to share between parallel kernel workers; the total is exact
/// regardless of interleaving.
#[derive(Debug, Default)]
pub struct CountingContext {
    mode: CountMode,
    macs: AtomicU64,
}

impl CountingContext {
    pub fn new(mode: CountMode) -> Self {
        Self { mode, macs: AtomicU64::new(0) }
    }

    pub fn mode(&self) -> CountMode {
        self.mode
    }

    pub fn add(&self, macs: u64) {
        self.macs.fetch_add(macs, Ordering::Relaxed);
    }

    pub fn macs(&self) -> u64 {
        self.macs.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.macs.store(0, Ordering::Relaxed);
    }
}

/// Runs `f` under a fresh counter and returns its result with the MACs it executed.
pub fn measured_macs<T>(mode: CountMode, f: impl FnOnce(&CountingContext) -> T) -> (T, u64) {
    let ctx = CountingContext::new(mode);
    let out = f(&ctx);
    (out, ctx.macs())
}
