//! Cycle-stamped event records, rendered one per line as
//! `cycle,unit,action,port,detail`.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub unit: &'static str,
    pub action: String,
    pub port: &'static str,
    pub detail: String,
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{},{}", self.cycle, self.unit, self.action, self.port, self.detail)
    }
}

pub const TRACE_HEADER: &str = "cycle,unit,action,port,detail";

/// Optional trace sink; recording is a no-op while disabled.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    records: Option<Vec<TraceRecord>>,
}

impl Trace {
    pub fn enabled() -> Self {
        Self { records: Some(Vec::new()) }
    }

    pub fn is_enabled(&self) -> bool {
        self.records.is_some()
    }

    #[inline]
    pub fn record(&mut self, cycle: u64, unit: &'static str, action: impl Into<String>, port: &'static str, detail: impl FnOnce() -> String) {
        if let Some(r) = &mut self.records {
            r.push(TraceRecord { cycle, unit, action: action.into(), port, detail: detail() });
        }
    }

    pub fn push(&mut self, r: TraceRecord) {
        if let Some(v) = &mut self.records {
            v.push(r);
        }
    }

    pub fn records(&self) -> &[TraceRecord] {
        self.records.as_deref().unwrap_or(&[])
    }

    pub fn take(&mut self) -> Vec<TraceRecord> {
        self.records.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn render(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        for r in self.records() {
            out.push_str(&r.to_string());
            out.push('\n');
        }
        out
    }
}
