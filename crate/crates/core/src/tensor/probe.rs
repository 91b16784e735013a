//! Records the output shapes of every GEMM issued on this thread while a
//! probe is open.

use std::cell::RefCell;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatmulCall {
    pub rows: usize,
    pub cols: usize,
    pub inner: usize,
}

thread_local! {
    static PROBES: RefCell<Vec<(u64, Vec<MatmulCall>)>> = const { RefCell::new(Vec::new()) };
    static NEXT: RefCell<u64> = const { RefCell::new(0) };
}

pub(crate) fn record(rows: usize, cols: usize, inner: usize) {
    PROBES.with(|p| {
        for (_, calls) in p.borrow_mut().iter_mut() {
            calls.push(MatmulCall { rows, cols, inner });
        }
    });
}

#[derive(Debug)]
pub struct MatmulProbe {
    id: u64,
}

impl MatmulProbe {
    pub fn start() -> Self {
        let id = NEXT.with(|n| {
            let mut n = n.borrow_mut();
            *n += 1;
            *n
        });
        PROBES.with(|p| p.borrow_mut().push((id, Vec::new())));
        Self { id }
    }

    pub fn calls(&self) -> Vec<MatmulCall> {
        PROBES.with(|p| {
            p.borrow()
                .iter()
                .find(|(id, _)| *id == self.id)
                .map(|(_, c)| c.clone())
                .unwrap_or_default()
        })
    }
}

impl Drop for MatmulProbe {
    fn drop(&mut self) {
        PROBES.with(|p| p.borrow_mut().retain(|(id, _)| *id != self.id));
    }
}
