//! Allocation tracker for engine-owned buffers.
//!
//! Every matrix and index buffer registers its byte size with the tracker of
//! the thread that created it and unregisters on drop. A [`MemoryScope`]
//! records the high-water mark of live bytes while it is open, measured
//! relative to the live bytes at the moment it was opened. The numbers are
//! deterministic: they depend only on the sequence of allocations, never on
//! the system allocator or the process RSS.

use std::cell::RefCell;
use std::sync::{Arc, Mutex, MutexGuard};

/// Panic payload raised when an allocation would push a budgeted scope over
/// its limit. Catch it with `std::panic::catch_unwind`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BudgetExceeded {
    pub label: String,
    pub budget: usize,
    pub requested: usize,
    /// Scope usage the allocation would have reached.
    pub would_be: usize,
}

#[derive(Debug)]
struct Frame {
    id: u64,
    label: String,
    baseline: usize,
    peak: usize,
    budget: Option<usize>,
}

#[derive(Debug)]
struct Watch {
    id: u64,
    rows_max: usize,
    cols: usize,
    live: usize,
    max_live: usize,
}

impl Watch {
    fn matches(&self, shape: (usize, usize)) -> bool {
        shape.1 == self.cols && shape.0 <= self.rows_max && shape.0 > 0
    }
}

#[derive(Debug, Default)]
struct State {
    live: usize,
    next_id: u64,
    frames: Vec<Frame>,
    watches: Vec<Watch>,
}

#[derive(Debug, Default)]
pub struct Tracker {
    state: Mutex<State>,
}

thread_local! {
    static CURRENT: RefCell<Arc<Tracker>> = RefCell::new(Arc::new(Tracker::default()));
}

pub(crate) fn current() -> Arc<Tracker> {
    CURRENT.with(|t| t.borrow().clone())
}

/// Live tracked bytes on this thread's tracker.
pub fn live_bytes() -> usize {
    current().lock().live
}

impl Tracker {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub(crate) fn register(&self, bytes: usize, shape: (usize, usize)) {
        let mut st = self.lock();
        let live = st.live + bytes;
        for f in &st.frames {
            if let Some(budget) = f.budget {
                if live.saturating_sub(f.baseline) > budget {
                    let payload = BudgetExceeded {
                        label: f.label.clone(),
                        budget,
                        requested: bytes,
                        would_be: live - f.baseline,
                    };
                    drop(st);
                    std::panic::panic_any(payload);
                }
            }
        }
        st.live = live;
        for f in st.frames.iter_mut() {
            f.peak = f.peak.max(live.saturating_sub(f.baseline));
        }
        for w in st.watches.iter_mut() {
            if w.matches(shape) {
                w.live += 1;
                w.max_live = w.max_live.max(w.live);
            }
        }
    }

    pub(crate) fn release(&self, bytes: usize, shape: (usize, usize)) {
        let mut st = self.lock();
        st.live -= bytes;
        for w in st.watches.iter_mut() {
            if w.matches(shape) {
                w.live = w.live.saturating_sub(1);
            }
        }
    }
}

/// A measurement region on the current thread's tracker.
///
/// Scopes nest; each one sees every allocation made while it is open.
#[derive(Debug)]
pub struct MemoryScope {
    tracker: Arc<Tracker>,
    id: u64,
    label: String,
    baseline: usize,
}

impl MemoryScope {
    pub fn open(label: impl Into<String>) -> Self {
        Self::open_inner(label.into(), None)
    }

    /// Opens a scope whose growth above its baseline may not exceed `budget`
    /// bytes. Violations panic with a [`BudgetExceeded`] payload before the
    /// offending buffer is allocated.
    pub fn with_budget(label: impl Into<String>, budget: usize) -> Self {
        Self::open_inner(label.into(), Some(budget))
    }

    fn open_inner(label: String, budget: Option<usize>) -> Self {
        let tracker = current();
        let (id, baseline) = {
            let mut st = tracker.lock();
            st.next_id += 1;
            let id = st.next_id;
            let baseline = st.live;
            st.frames.push(Frame {
                id,
                label: label.clone(),
                baseline,
                peak: 0,
                budget,
            });
            (id, baseline)
        };
        Self {
            tracker,
            id,
            label,
            baseline,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Live bytes on this thread when the scope was opened.
    pub fn baseline_bytes(&self) -> usize {
        self.baseline
    }

    /// Bytes allocated since opening that are still live.
    pub fn live_bytes(&self) -> usize {
        self.tracker.lock().live.saturating_sub(self.baseline)
    }

    /// High-water mark of [`live_bytes`](Self::live_bytes) so far.
    pub fn peak_bytes(&self) -> usize {
        let st = self.tracker.lock();
        st.frames
            .iter()
            .find(|f| f.id == self.id)
            .map(|f| f.peak)
            .unwrap_or(0)
    }
}

impl Drop for MemoryScope {
    fn drop(&mut self) {
        let mut st = self.tracker.lock();
        st.frames.retain(|f| f.id != self.id);
    }
}

/// Counts live buffers whose shape is `[r, cols]` with `1 <= r <= rows_max`.
///
/// Used to check that a pass never holds two `[C, L_K]` score-shaped
/// buffers at once.
#[derive(Debug)]
pub struct ShapeWatch {
    tracker: Arc<Tracker>,
    id: u64,
}

impl ShapeWatch {
    pub fn open(rows_max: usize, cols: usize) -> Self {
        let tracker = current();
        let id = {
            let mut st = tracker.lock();
            st.next_id += 1;
            let id = st.next_id;
            st.watches.push(Watch {
                id,
                rows_max,
                cols,
                live: 0,
                max_live: 0,
            });
            id
        };
        Self { tracker, id }
    }

    fn read(&self, f: impl Fn(&Watch) -> usize) -> usize {
        let st = self.tracker.lock();
        st.watches.iter().find(|w| w.id == self.id).map(f).unwrap_or(0)
    }

    /// Matching buffers allocated after the watch opened and still live.
    pub fn live(&self) -> usize {
        self.read(|w| w.live)
    }

    pub fn max_concurrent(&self) -> usize {
        self.read(|w| w.max_live)
    }
}

impl Drop for ShapeWatch {
    fn drop(&mut self) {
        let mut st = self.tracker.lock();
        st.watches.retain(|w| w.id != self.id);
    }
}

/// A `Vec` whose byte size is registered with a tracker for its lifetime.
#[derive(Debug)]
pub(crate) struct TrackedVec<E> {
    data: Vec<E>,
    shape: (usize, usize),
    tracker: Arc<Tracker>,
}

impl<E: Clone> TrackedVec<E> {
    pub(crate) fn filled(value: E, shape: (usize, usize)) -> Self {
        let len = shape.0 * shape.1;
        let tracker = current();
        tracker.register(len * std::mem::size_of::<E>(), shape);
        Self {
            data: vec![value; len],
            shape,
            tracker,
        }
    }

    pub(crate) fn from_vec(data: Vec<E>, shape: (usize, usize)) -> Self {
        debug_assert_eq!(data.len(), shape.0 * shape.1);
        let tracker = current();
        tracker.register(data.len() * std::mem::size_of::<E>(), shape);
        Self {
            data,
            shape,
            tracker,
        }
    }

    pub(crate) fn as_slice(&self) -> &[E] {
        &self.data
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub(crate) fn byte_len(&self) -> usize {
        self.data.len() * std::mem::size_of::<E>()
    }
}

impl<E: Clone> Clone for TrackedVec<E> {
    fn clone(&self) -> Self {
        Self::from_vec(self.data.clone(), self.shape)
    }
}

impl<E> Drop for TrackedVec<E> {
    fn drop(&mut self) {
        self.tracker
            .release(self.data.len() * std::mem::size_of::<E>(), self.shape);
    }
}
