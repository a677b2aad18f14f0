//! Packet-level discrete-event simulation of the IP transport layer:
//! classification, gating, policing, marking, per-PHB queueing/scheduling
//! and per-flow measurement.

pub mod engine;
pub mod enforcement;
pub mod scheduler;
pub mod topology;

use serde::{Deserialize, Serialize};

use crate::model::{FlowId, MediaType, SimTime, TrafficClass};

pub const MIN_PACKET_BYTES: u32 = 40;
pub const MAX_PACKET_BYTES: u32 = 1500;

/// A packet in flight. The codepoint is the only QoS state it carries;
/// per-hop behavior is derived from it at every link.
#[derive(Debug, Clone)]
pub struct Packet {
    pub flow: FlowId,
    pub seq: u64,
    pub size_bytes: u32,
    pub codepoint: u8,
    pub created_at: SimTime,
    pub src_ip: String,
    pub dst: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArrivalPattern {
    /// Back-to-back constant bit rate: one packet every `size*8/rate`.
    #[default]
    Constant,
    /// CBR bursts of `on_ms` separated by `off_ms` of silence.
    OnOff { on_ms: u64, off_ms: u64 },
    /// Poisson arrivals at the configured mean rate, seeded per flow.
    Poisson,
}

/// Traffic source description. Either a rate/pattern generator or an
/// explicit trace of (offset, size) emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    pub flow_id: FlowId,
    pub src: String,
    pub dst: String,
    pub packet_size_bytes: u32,
    pub rate_bps: u64,
    #[serde(default)]
    pub pattern: ArrivalPattern,
    /// When present, overrides rate/pattern generation entirely.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TracePoint>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub offset_ms: f64,
    pub size_bytes: u32,
}

/// How a flow enters the network.
#[derive(Debug, Clone)]
pub enum FlowIngress {
    /// Subscriber traffic entering through an access gate: classified,
    /// gated and policed at the ingress enforcement point.
    Gated { gate_hint: crate::model::GateId, media: MediaType },
    /// Pre-marked aggregate injected inside the network (background load);
    /// bypasses enforcement.
    Marked { class: TrafficClass },
}

/// Measured QoS for one flow over a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub flow_id: FlowId,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub delivered_bytes: u64,
    pub throughput_bps: f64,
    /// dropped / sent when sent > 0, else 0.
    pub loss: f64,
    pub mean_delay_ms: f64,
    /// Mean absolute successive-delay difference over delivered packets.
    pub jitter_ms: f64,
    pub per_second: Vec<SecondMetrics>,
}

/// Per-second slice of [`FlowMetrics`], aligned to integer-second
/// boundaries. Packets are bucketed by send time; `delivered` counts those
/// eventually delivered by run end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondMetrics {
    pub second: u64,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub loss: f64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
    pub throughput_bps: f64,
}

/// Reason a packet was discarded, as it appears in drop log records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DropReason {
    GateClosed,
    GateDestination,
    PolicerExcess,
    EfCapExceeded,
    AfPrecedence,
    BeProtection,
    QueueOverflow,
    NoRoute,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::GateClosed => "gate_closed",
            DropReason::GateDestination => "gate_destination",
            DropReason::PolicerExcess => "policer_excess",
            DropReason::EfCapExceeded => "ef_cap",
            DropReason::AfPrecedence => "af_precedence",
            DropReason::BeProtection => "be_protection",
            DropReason::QueueOverflow => "queue_overflow",
            DropReason::NoRoute => "no_route",
        }
    }
}

/// Serialization delay of `bytes` on a link of `capacity_bps`, rounded up
/// to whole nanoseconds.
pub fn tx_time(bytes: u32, capacity_bps: u64) -> SimTime {
    let bits_ns = bytes as u128 * 8 * 1_000_000_000;
    let cap = capacity_bps as u128;
    SimTime(bits_ns.div_ceil(cap) as u64)
}
