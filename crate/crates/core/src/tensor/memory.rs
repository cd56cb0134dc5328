//! Byte accounting for tensor buffers.
//!
//! A [`MemoryTracker`] installed with [`track`] is attached to every tensor
//! buffer allocated on the same thread while the guard lives. The buffer keeps
//! a handle to its tracker, so frees are credited correctly even after the
//! guard is gone or the buffer moved to another thread.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

#[cfg(debug_assertions)]
use std::collections::HashMap;
#[cfg(debug_assertions)]
use std::sync::Mutex;

#[derive(Debug, Default)]
pub struct MemoryTracker {
    current: AtomicU64,
    peak: AtomicU64,
    allocations: AtomicU64,
    next_id: AtomicU64,
    #[cfg(debug_assertions)]
    shadow: Mutex<HashMap<u64, u64>>,
}

impl MemoryTracker {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn current_bytes(&self) -> u64 {
        self.current.load(Ordering::SeqCst)
    }

    pub fn peak_bytes(&self) -> u64 {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn allocations(&self) -> u64 {
        self.allocations.load(Ordering::SeqCst)
    }

    /// Restart high-water tracking from the current live total.
    pub fn reset_peak(&self) {
        self.peak.store(self.current_bytes(), Ordering::SeqCst);
    }

    pub(crate) fn on_alloc(&self, bytes: u64) -> u64 {
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let now = self.current.fetch_add(bytes, Ordering::SeqCst) + bytes;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.allocations.fetch_add(1, Ordering::SeqCst);
        #[cfg(debug_assertions)]
        {
            let mut shadow = self.shadow.lock().expect("shadow ledger poisoned");
            shadow.insert(id, bytes);
            self.check_shadow(&shadow);
        }
        id
    }

    pub(crate) fn on_free(&self, id: u64, bytes: u64) {
        #[cfg(debug_assertions)]
        let mut shadow = self.shadow.lock().expect("shadow ledger poisoned");
        self.current.fetch_sub(bytes, Ordering::SeqCst);
        #[cfg(debug_assertions)]
        {
            let recorded = shadow.remove(&id);
            debug_assert_eq!(recorded, Some(bytes), "buffer {id} freed with a different size");
            self.check_shadow(&shadow);
        }
        #[cfg(not(debug_assertions))]
        let _ = id;
    }

    #[cfg(debug_assertions)]
    fn check_shadow(&self, shadow: &HashMap<u64, u64>) {
        let live: u64 = shadow.values().sum();
        debug_assert_eq!(live, self.current_bytes(), "tracked bytes diverged from live buffers");
    }

    /// Sum of live buffer sizes according to the per-buffer ledger.
    #[cfg(debug_assertions)]
    pub fn shadow_bytes(&self) -> u64 {
        self.shadow.lock().expect("shadow ledger poisoned").values().sum()
    }
}

thread_local! {
    static ACTIVE: RefCell<Option<Arc<MemoryTracker>>> = const { RefCell::new(None) };
}

pub(crate) fn active() -> Option<Arc<MemoryTracker>> {
    ACTIVE.with(|a| a.borrow().clone())
}

/// Restores the previously installed tracker on drop.
pub struct TrackGuard {
    previous: Option<Arc<MemoryTracker>>,
}

impl Drop for TrackGuard {
    fn drop(&mut self) {
        let prev = self.previous.take();
        ACTIVE.with(|a| *a.borrow_mut() = prev);
    }
}

#[must_use = "tracking stops when the guard is dropped"]
pub fn track(tracker: &Arc<MemoryTracker>) -> TrackGuard {
    let previous = ACTIVE.with(|a| a.borrow_mut().replace(Arc::clone(tracker)));
    TrackGuard { previous }
}
