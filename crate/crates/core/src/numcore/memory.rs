//! Per-thread accounting of live tensor bytes.
//!
//! Every [`Tensor`](super::Tensor) buffer registers its size here on creation
//! and deregisters on drop. Counters are thread-local so concurrent training
//! runs on separate threads never see each other's allocations.

use std::cell::Cell;

thread_local! {
    static LIVE: Cell<usize> = const { Cell::new(0) };
    static PEAK: Cell<usize> = const { Cell::new(0) };
}

pub(crate) fn track_alloc(bytes: usize) {
    LIVE.with(|live| {
        let now = live.get() + bytes;
        live.set(now);
        PEAK.with(|peak| {
            if now > peak.get() {
                peak.set(now);
            }
        });
    });
}

pub(crate) fn track_free(bytes: usize) {
    LIVE.with(|live| live.set(live.get().saturating_sub(bytes)));
}

/// Bytes currently held by live tensors on this thread.
pub fn live_bytes() -> usize {
    LIVE.with(Cell::get)
}

/// Highest value of [`live_bytes`] since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK.with(Cell::get)
}

/// Resets the peak watermark to the current live byte count and returns it.
pub fn reset_peak() -> usize {
    let live = live_bytes();
    PEAK.with(|peak| peak.set(live));
    live
}
