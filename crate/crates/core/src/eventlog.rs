//! Line-oriented run log.
//!
//! Every record renders as `time_ms kind flow_id link_id detail` with `-`
//! for absent fields. The format is part of the external contract: two runs
//! of the same scenario and seed must produce byte-identical logs.

use std::fmt::Write as _;

use crate::model::SimTime;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    pub time: SimTime,
    pub kind: &'static str,
    pub flow: Option<String>,
    pub link: Option<String>,
    pub detail: String,
}

impl LogRecord {
    pub fn render(&self) -> String {
        let mut line = String::with_capacity(64);
        let _ = write!(
            line,
            "{} {} {} {} {}",
            self.time,
            self.kind,
            self.flow.as_deref().unwrap_or("-"),
            self.link.as_deref().unwrap_or("-"),
            if self.detail.is_empty() { "-" } else { &self.detail },
        );
        line
    }
}

#[derive(Debug, Default)]
pub struct EventLog {
    records: Vec<LogRecord>,
}

impl EventLog {
    pub fn new() -> Self {
        EventLog::default()
    }

    pub fn push(&mut self, time: SimTime, kind: &'static str, detail: String) {
        self.records.push(LogRecord { time, kind, flow: None, link: None, detail });
    }

    pub fn push_flow(&mut self, time: SimTime, kind: &'static str, flow: &str, detail: String) {
        self.records.push(LogRecord {
            time,
            kind,
            flow: Some(flow.to_string()),
            link: None,
            detail,
        });
    }

    pub fn push_packet(
        &mut self,
        time: SimTime,
        kind: &'static str,
        flow: &str,
        link: Option<String>,
        detail: String,
    ) {
        self.records.push(LogRecord { time, kind, flow: Some(flow.to_string()), link, detail });
    }

    pub fn push_link(&mut self, time: SimTime, kind: &'static str, link: String, detail: String) {
        self.records.push(LogRecord { time, kind, flow: None, link: Some(link), detail });
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }
}
