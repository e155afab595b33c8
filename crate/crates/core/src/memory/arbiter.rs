//! Fixed-priority arbitration for a single memory port.

use serde::{Deserialize, Serialize};

/// Bus masters that can contend for a port, lowest priority first so the
/// derived `Ord` matches grant priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Requester {
    CoreFetch,
    CoreData,
    TableLoader,
    CtxEngine,
}

impl Requester {
    pub fn name(self) -> &'static str {
        match self {
            Requester::CoreFetch => "core_fetch",
            Requester::CoreData => "core_data",
            Requester::TableLoader => "table_loader",
            Requester::CtxEngine => "ctx_engine",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortRequest {
    pub requester: Requester,
    pub addr: u32,
    /// Access width in bytes: 1, 2 or 4.
    pub width: u32,
    /// Number of consecutive words for burst transfers; 1 for a single access.
    pub words: u32,
    pub is_write: bool,
    pub issue_cycle: u64,
    /// Cycles the master holds the port before its first address phase.
    pub hold: u64,
}

impl PortRequest {
    pub fn single(requester: Requester, addr: u32, width: u32, is_write: bool, cycle: u64) -> Self {
        Self { requester, addr, width, words: 1, is_write, issue_cycle: cycle, hold: 0 }
    }

    pub fn burst(requester: Requester, addr: u32, words: u32, is_write: bool, cycle: u64) -> Self {
        Self { requester, addr, width: 4, words, is_write, issue_cycle: cycle, hold: 0 }
    }

    pub fn with_hold(mut self, hold: u64) -> Self {
        self.hold = hold;
        self
    }
}

/// Grant order for requests pending on one port: `ctx_engine` >
/// `table_loader` > `core_data` > `core_fetch`, FIFO by issue cycle within a
/// class, then by submission order. Returns indices into `pending`.
///
/// Only requests issued at or before `cycle` are eligible.
pub fn arbitrate(pending: &[PortRequest], cycle: u64) -> Vec<usize> {
    let mut order: Vec<usize> =
        (0..pending.len()).filter(|&i| pending[i].issue_cycle <= cycle).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&pending[a], &pending[b]);
        rb.requester
            .cmp(&ra.requester)
            .then(ra.issue_cycle.cmp(&rb.issue_cycle))
            .then(a.cmp(&b))
    });
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(r: Requester, issue: u64) -> PortRequest {
        PortRequest::single(r, 0, 4, false, issue)
    }

    #[test]
    fn ctx_engine_beats_fetch() {
        let p = [req(Requester::CoreFetch, 0), req(Requester::CtxEngine, 0)];
        assert_eq!(arbitrate(&p, 0), vec![1, 0]);
    }

    #[test]
    fn table_loader_beats_core_data() {
        let p = [req(Requester::CoreData, 0), req(Requester::TableLoader, 0)];
        assert_eq!(arbitrate(&p, 0), vec![1, 0]);
    }

    #[test]
    fn empty_set() {
        assert!(arbitrate(&[], 5).is_empty());
    }

    #[test]
    fn fifo_within_class_and_future_requests_excluded() {
        let p = [
            req(Requester::TableLoader, 3),
            req(Requester::TableLoader, 1),
            req(Requester::CtxEngine, 9),
        ];
        assert_eq!(arbitrate(&p, 4), vec![1, 0]);
    }
}
