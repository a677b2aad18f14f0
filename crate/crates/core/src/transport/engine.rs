//! The deterministic discrete-event engine.
//!
//! Events are processed in (time, creation sequence) order; the sequence
//! number is a global monotone counter assigned at push, which makes runs
//! with identical inputs bit-identical. Control (scenario) events ride the
//! same heap as packet events and are handed back to the caller, so one
//! loop drives session signaling and packet forwarding together.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::model::{class_to_codepoint, FlowId, SimTime};
use crate::transport::enforcement::{Enforcement, IngressVerdict};
use crate::transport::scheduler::{LinkCounters, LinkScheduler};
use crate::transport::topology::{Direction, Hop, Routing};
use crate::transport::{
    tx_time, ArrivalPattern, DropReason, FlowIngress, FlowMetrics, FlowSpec, Packet,
    SecondMetrics, MAX_PACKET_BYTES,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("flow {0} already exists")]
    DuplicateFlow(FlowId),
    #[error("unknown flow {0}")]
    UnknownFlow(FlowId),
    #[error("no route for flow {flow} from {src} to {dst}")]
    NoRoute { flow: FlowId, src: String, dst: String },
}

#[derive(Debug)]
enum EvKind {
    FlowEmit { flow: usize },
    Kick { link: usize, dir: Direction },
    TxComplete { link: usize, dir: Direction },
    Arrive { transit: Transit },
    Snapshot,
    Control { index: usize },
}

#[derive(Debug)]
struct Ev {
    time: SimTime,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Ev {
    fn eq(&self, other: &Self) -> bool {
        self.time == other.time && self.seq == other.seq
    }
}
impl Eq for Ev {}
impl PartialOrd for Ev {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ev {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.time.cmp(&other.time).then_with(|| self.seq.cmp(&other.seq))
    }
}

/// A packet making its way along a fixed path.
#[derive(Debug)]
struct Transit {
    packet: Packet,
    flow: usize,
    /// Index of the hop just crossed (set before the Arrive event fires).
    hop: usize,
}

#[derive(Debug, Clone, Copy)]
enum PacketFate {
    InFlight { sent: SimTime, size: u32 },
    Delivered { sent: SimTime, delivered: SimTime, size: u32 },
    Dropped { sent: SimTime, size: u32 },
}

#[derive(Debug, Default)]
struct FlowBook {
    fates: Vec<PacketFate>,
}

#[derive(Debug)]
struct FlowRuntime {
    spec: FlowSpec,
    ingress: FlowIngress,
    path: Vec<Hop>,
    active: bool,
    started_at: SimTime,
    stop_at: Option<SimTime>,
    next_seq: u64,
    rng: ChaCha8Rng,
    trace_pos: usize,
}

impl FlowRuntime {
    fn rate_bps(&self) -> u64 {
        self.spec.rate_bps
    }
}

/// Everything the control layer may touch while the engine is paused on a
/// control event: enforcement points, the shared log, flow management.
#[derive(Debug)]
pub struct NetState {
    pub routing: Arc<Routing>,
    pub enforcement: Enforcement,
    pub log: EventLog,
    links: Vec<[LinkScheduler; 2]>,
    current_tx: Vec<[bool; 2]>,
    flows: Vec<FlowRuntime>,
    flow_index: BTreeMap<FlowId, usize>,
    books: Vec<FlowBook>,
    work_conservation_violations: u64,
}

impl NetState {
    pub fn link_counters(&self, link: usize, dir: Direction) -> &LinkCounters {
        &self.links[link][dir.index()].counters
    }

    pub fn max_ef_queueing(&self, link: usize, dir: Direction) -> SimTime {
        self.links[link][dir.index()].max_ef_queueing
    }

    /// Per-hop EF queueing-delay bound: the EF admission burst plus one
    /// maximum packet of non-preemption slack and one more for burst
    /// arrivals during that slack, serialized at link rate.
    pub fn ef_queueing_bound(&self, link: usize) -> SimTime {
        let def = &self.routing.topology().links[link];
        let burst = self.links[link][0].ef_bucket().burst_bytes();
        tx_time((burst + 2 * MAX_PACKET_BYTES as u64) as u32, def.capacity_bps)
    }

    pub fn work_conservation_violations(&self) -> u64 {
        self.work_conservation_violations
    }

    pub fn flow_ids(&self) -> impl Iterator<Item = &FlowId> {
        self.flow_index.keys()
    }
}

pub enum Step {
    /// The engine paused at a control event; handle it, then call step again.
    Control { time: SimTime, index: usize },
    /// All events up to the horizon are processed.
    Finished,
}

pub struct Engine {
    time: SimTime,
    end: SimTime,
    next_seq: u64,
    heap: BinaryHeap<Reverse<Ev>>,
    seed: u64,
    pub net: NetState,
}

/// Stable 64-bit FNV-1a, used to derive per-flow RNG seeds from the
/// scenario seed independent of platform hashing.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

impl Engine {
    pub fn new(routing: Arc<Routing>, seed: u64, end: SimTime) -> Self {
        let links = routing
            .topology()
            .links
            .iter()
            .map(|l| {
                [
                    LinkScheduler::new(l.capacity_bps, l.queue_capacity_bytes, &l.class_shares),
                    LinkScheduler::new(l.capacity_bps, l.queue_capacity_bytes, &l.class_shares),
                ]
            })
            .collect();
        let current_tx = routing.topology().links.iter().map(|_| [false, false]).collect();
        let mut engine = Engine {
            time: SimTime::ZERO,
            end,
            next_seq: 0,
            heap: BinaryHeap::new(),
            seed,
            net: NetState {
                routing,
                enforcement: Enforcement::new(),
                log: EventLog::new(),
                links,
                current_tx,
                flows: Vec::new(),
                flow_index: BTreeMap::new(),
                books: Vec::new(),
                work_conservation_violations: 0,
            },
        };
        // Per-second counter snapshots across the whole run.
        let mut s = 1_u64;
        while SimTime::from_secs(s) <= end {
            engine.push_at(SimTime::from_secs(s), EvKind::Snapshot);
            s += 1;
        }
        engine
    }

    pub fn now(&self) -> SimTime {
        self.time
    }

    pub fn end(&self) -> SimTime {
        self.end
    }

    fn push_at(&mut self, time: SimTime, kind: EvKind) {
        self.next_seq += 1;
        self.heap.push(Reverse(Ev { time, seq: self.next_seq, kind }));
    }

    pub fn schedule_control(&mut self, time: SimTime, index: usize) {
        self.push_at(time, EvKind::Control { index });
    }

    /// Register a traffic source. The path is resolved once; every packet
    /// of the flow follows it.
    pub fn add_flow(
        &mut self,
        spec: FlowSpec,
        ingress: FlowIngress,
        src_node: &str,
        start: SimTime,
        stop_at: Option<SimTime>,
    ) -> Result<(), EngineError> {
        if self.net.flow_index.contains_key(&spec.flow_id) {
            return Err(EngineError::DuplicateFlow(spec.flow_id.clone()));
        }
        let path =
            self.net.routing.path(src_node, &spec.dst).map_err(|_| EngineError::NoRoute {
                flow: spec.flow_id.clone(),
                src: src_node.to_string(),
                dst: spec.dst.clone(),
            })?;
        let rng = ChaCha8Rng::seed_from_u64(self.seed ^ fnv1a(spec.flow_id.as_str().as_bytes()));
        let idx = self.net.flows.len();
        self.net.flow_index.insert(spec.flow_id.clone(), idx);
        self.net.flows.push(FlowRuntime {
            spec,
            ingress,
            path,
            active: true,
            started_at: start,
            stop_at,
            next_seq: 0,
            rng,
            trace_pos: 0,
        });
        self.net.books.push(FlowBook::default());
        let first = self.first_emission(idx, start);
        if let Some(t) = first {
            self.push_at(t, EvKind::FlowEmit { flow: idx });
        }
        Ok(())
    }

    pub fn stop_flow(&mut self, flow_id: &FlowId) -> Result<(), EngineError> {
        let idx = *self
            .net
            .flow_index
            .get(flow_id)
            .ok_or_else(|| EngineError::UnknownFlow(flow_id.clone()))?;
        self.net.flows[idx].active = false;
        Ok(())
    }

    /// Adjust a generator's rate (renegotiation); takes effect from the
    /// next emission.
    pub fn set_flow_rate(&mut self, flow_id: &FlowId, rate_bps: u64) -> Result<(), EngineError> {
        let idx = *self
            .net
            .flow_index
            .get(flow_id)
            .ok_or_else(|| EngineError::UnknownFlow(flow_id.clone()))?;
        self.net.flows[idx].spec.rate_bps = rate_bps;
        Ok(())
    }

    /// Run until the next control event or the end of the horizon.
    pub fn step(&mut self) -> Step {
        loop {
            let due =
                matches!(self.heap.peek(), Some(Reverse(ev)) if ev.time <= self.end);
            if !due {
                self.time = self.end;
                return Step::Finished;
            }
            let Reverse(ev) = self.heap.pop().expect("peeked");
            self.time = ev.time;
            match ev.kind {
                EvKind::Control { index } => return Step::Control { time: ev.time, index },
                kind => self.handle(ev.time, kind),
            }
        }
    }

    /// Drive the engine to the end with no control events pending.
    pub fn run_to_end(&mut self) {
        loop {
            match self.step() {
                Step::Finished => break,
                Step::Control { .. } => {
                    // Control events without a handler are skipped; the
                    // runner never does this.
                }
            }
        }
    }

    fn handle(&mut self, now: SimTime, kind: EvKind) {
        match kind {
            EvKind::FlowEmit { flow } => self.emit(now, flow),
            EvKind::Kick { link, dir } => {
                self.net.links[link][dir.index()].kick_pending = false;
                self.try_start_tx(now, link, dir);
            }
            EvKind::TxComplete { link, dir } => self.tx_complete(now, link, dir),
            EvKind::Arrive { transit } => self.arrive(now, transit),
            EvKind::Snapshot => self.snapshot(now),
            EvKind::Control { .. } => unreachable!("control events surface through step()"),
        }
    }

    // -- traffic generation ------------------------------------------------

    fn first_emission(&mut self, flow: usize, start: SimTime) -> Option<SimTime> {
        let f = &self.net.flows[flow];
        match &f.spec.trace {
            Some(trace) => trace
                .first()
                .map(|p| start + SimTime::from_millis_f64(p.offset_ms)),
            None => Some(start),
        }
    }

    fn cbr_gap(size_bytes: u32, rate_bps: u64) -> SimTime {
        tx_time(size_bytes, rate_bps.max(1))
    }

    /// Time of the emission after `now`, honoring the arrival pattern.
    fn next_emission(&mut self, flow: usize, now: SimTime) -> Option<SimTime> {
        let f = &mut self.net.flows[flow];
        match &f.spec.trace {
            Some(trace) => {
                let next = trace.get(f.trace_pos)?;
                Some(f.started_at + SimTime::from_millis_f64(next.offset_ms))
            }
            None => {
                let gap = Self::cbr_gap(f.spec.packet_size_bytes, f.rate_bps());
                match f.spec.pattern {
                    ArrivalPattern::Constant => Some(now + gap),
                    ArrivalPattern::OnOff { on_ms, off_ms } => {
                        let mut next = now + gap;
                        let cycle = SimTime::from_millis(on_ms + off_ms).as_nanos();
                        let on = SimTime::from_millis(on_ms).as_nanos();
                        if cycle == 0 || on == 0 {
                            return Some(next);
                        }
                        let rel = next.saturating_sub(f.started_at).as_nanos();
                        if rel % cycle >= on {
                            // Jump to the start of the next on-window.
                            let next_cycle = rel / cycle + 1;
                            next = f.started_at + SimTime(next_cycle * cycle);
                        }
                        Some(next)
                    }
                    ArrivalPattern::Poisson => {
                        use rand_distr::Distribution;
                        let mean_s = gap.as_nanos() as f64 / 1e9;
                        let exp = rand_distr::Exp::new(1.0 / mean_s).expect("positive rate");
                        let gap_s: f64 = exp.sample(&mut f.rng);
                        Some(now + SimTime(((gap_s * 1e9).round() as u64).max(1)))
                    }
                }
            }
        }
    }

    fn emit(&mut self, now: SimTime, flow: usize) {
        // The measurement window is [0, end): nothing is emitted at the
        // horizon itself, so log aggregation and metrics agree.
        if now >= self.end {
            return;
        }
        let f = &self.net.flows[flow];
        if !f.active {
            return;
        }
        if let Some(stop) = f.stop_at {
            if now >= stop {
                self.net.flows[flow].active = false;
                return;
            }
        }
        // Size comes from the trace when present.
        let size = match &f.spec.trace {
            Some(trace) => match trace.get(f.trace_pos) {
                Some(p) => p.size_bytes,
                None => return,
            },
            None => f.spec.packet_size_bytes,
        };
        let seq = f.next_seq;
        let flow_id = f.spec.flow_id.clone();
        let src_ip = f.spec.src.clone();
        let dst = f.spec.dst.clone();
        let mut packet = Packet {
            flow: flow_id.clone(),
            seq,
            size_bytes: size,
            codepoint: 0,
            created_at: now,
            src_ip: src_ip.clone(),
            dst: dst.clone(),
        };
        self.net.flows[flow].next_seq += 1;
        if self.net.flows[flow].spec.trace.is_some() {
            self.net.flows[flow].trace_pos += 1;
        }
        self.net.books[flow].fates.push(PacketFate::InFlight { sent: now, size });
        debug_assert_eq!(self.net.books[flow].fates.len() as u64 - 1, seq);

        // Ingress: enforcement for gated flows, declared marking otherwise.
        let verdict = match &self.net.flows[flow].ingress {
            FlowIngress::Gated { gate_hint, media } => self.net.enforcement.process_ingress(
                now,
                &src_ip,
                &dst,
                Some(*media),
                size,
                Some(*gate_hint),
            ),
            FlowIngress::Marked { class } => {
                IngressVerdict::Forward { codepoint: class_to_codepoint(*class) }
            }
        };
        match verdict {
            IngressVerdict::Forward { codepoint } => {
                packet.codepoint = codepoint;
                self.net.log.push_packet(
                    now,
                    "send",
                    flow_id.as_str(),
                    None,
                    format!("seq={seq};size={size};cp={codepoint}"),
                );
                if self.net.flows[flow].path.is_empty() {
                    // Source and destination on the same node.
                    self.deliver(now, flow, packet);
                } else {
                    let transit = Transit { packet, flow, hop: 0 };
                    self.enqueue_on_hop(now, transit);
                }
            }
            IngressVerdict::Drop(reason) => {
                self.net.log.push_packet(
                    now,
                    "send",
                    flow_id.as_str(),
                    None,
                    format!("seq={seq};size={size};cp={}", packet.codepoint),
                );
                self.record_drop(now, flow, seq, None, reason);
            }
        }

        // Schedule the next emission.
        if let Some(next) = self.next_emission(flow, now) {
            let still_active = self.net.flows[flow].active
                && self.net.flows[flow].stop_at.is_none_or(|stop| next < stop);
            if still_active {
                self.push_at(next, EvKind::FlowEmit { flow });
            }
        }
    }

    // -- forwarding --------------------------------------------------------

    fn enqueue_on_hop(&mut self, now: SimTime, transit: Transit) {
        let hop = self.net.flows[transit.flow].path[transit.hop];
        let sched = &mut self.net.links[hop.link][hop.direction.index()];
        let flow = transit.flow;
        let seq = transit.packet.seq;
        match sched.enqueue(now, transit.packet) {
            Ok(()) => {
                let busy = self.net.current_tx[hop.link][hop.direction.index()];
                let sched = &mut self.net.links[hop.link][hop.direction.index()];
                if !busy && !sched.kick_pending {
                    sched.kick_pending = true;
                    self.push_at(now, EvKind::Kick { link: hop.link, dir: hop.direction });
                }
            }
            Err(reason) => {
                self.record_drop(now, flow, seq, Some((hop.link, hop.direction)), reason);
            }
        }
    }

    fn link_label(&self, link: usize, dir: Direction) -> String {
        format!("{}.{}", self.net.routing.topology().links[link].link_id, dir.as_str())
    }

    fn try_start_tx(&mut self, now: SimTime, link: usize, dir: Direction) {
        if self.net.current_tx[link][dir.index()] {
            return;
        }
        let sched = &mut self.net.links[link][dir.index()];
        if let Some(packet) = sched.dequeue(now) {
            self.net.current_tx[link][dir.index()] = true;
            let capacity = self.net.routing.topology().links[link].capacity_bps;
            let done = now + tx_time(packet.size_bytes, capacity);
            // Stash the in-flight packet by scheduling its arrival at tx end
            // plus propagation; the wire itself needs no queue.
            let flow = *self
                .net
                .flow_index
                .get(&packet.flow)
                .expect("packet flows are registered");
            let hop = self
                .net
                .flows[flow]
                .path
                .iter()
                .position(|h| h.link == link && h.direction == dir)
                .expect("packet is on its path");
            let prop = SimTime::from_millis_f64(
                self.net.routing.topology().links[link].propagation_delay_ms,
            );
            self.push_at(done, EvKind::TxComplete { link, dir });
            self.push_at(done + prop, EvKind::Arrive { transit: Transit { packet, flow, hop } });
        }
    }

    fn tx_complete(&mut self, now: SimTime, link: usize, dir: Direction) {
        self.net.current_tx[link][dir.index()] = false;
        self.try_start_tx(now, link, dir);
        if !self.net.current_tx[link][dir.index()] && self.net.links[link][dir.index()].has_backlog()
        {
            self.net.work_conservation_violations += 1;
        }
    }

    fn arrive(&mut self, now: SimTime, transit: Transit) {
        let path_len = self.net.flows[transit.flow].path.len();
        if transit.hop + 1 >= path_len {
            self.deliver(now, transit.flow, transit.packet);
        } else {
            self.enqueue_on_hop(now, Transit { hop: transit.hop + 1, ..transit });
        }
    }

    fn deliver(&mut self, now: SimTime, flow: usize, packet: Packet) {
        let book = &mut self.net.books[flow];
        let fate = &mut book.fates[packet.seq as usize];
        let PacketFate::InFlight { sent, size } = *fate else {
            unreachable!("delivered packet must be in flight");
        };
        *fate = PacketFate::Delivered { sent, delivered: now, size };
        let last_hop = self.net.flows[flow].path.last().copied();
        let link = last_hop.map(|h| self.link_label(h.link, h.direction));
        let delay = now.saturating_sub(sent);
        self.net.log.push_packet(
            now,
            "deliver",
            packet.flow.as_str(),
            link,
            format!("seq={};delay_ms={}", packet.seq, delay),
        );
    }

    fn record_drop(
        &mut self,
        now: SimTime,
        flow: usize,
        seq: u64,
        at: Option<(usize, Direction)>,
        reason: DropReason,
    ) {
        let fate = &mut self.net.books[flow].fates[seq as usize];
        let PacketFate::InFlight { sent, size } = *fate else {
            unreachable!("dropped packet must be in flight");
        };
        *fate = PacketFate::Dropped { sent, size };
        let link = at.map(|(l, d)| self.link_label(l, d));
        let flow_id = self.net.flows[flow].spec.flow_id.clone();
        self.net.log.push_packet(
            now,
            "drop",
            flow_id.as_str(),
            link,
            format!("seq={seq};reason={}", reason.as_str()),
        );
    }

    fn snapshot(&mut self, now: SimTime) {
        for (i, link) in self.net.routing.topology().links.iter().enumerate() {
            for dir in [Direction::Fwd, Direction::Rev] {
                let c = self.net.links[i][dir.index()].counters;
                self.net.log.push_link(
                    now,
                    "counter",
                    format!("{}.{}", link.link_id, dir.as_str()),
                    format!(
                        "tx_pkts={};tx_bytes={};drops={}",
                        c.tx_packets,
                        c.tx_bytes,
                        c.drops_total()
                    ),
                );
            }
        }
    }

    // -- measurement -------------------------------------------------------

    /// Aggregate per-flow metrics over a window, bucketing packets by send
    /// time. Call after the run has passed the window end.
    pub fn collect_metrics(
        &self,
        flow_id: &FlowId,
        window_start_ms: u64,
        window_end_ms: u64,
    ) -> Result<FlowMetrics, EngineError> {
        let idx = *self
            .net
            .flow_index
            .get(flow_id)
            .ok_or_else(|| EngineError::UnknownFlow(flow_id.clone()))?;
        let start = SimTime::from_millis(window_start_ms);
        let end = SimTime::from_millis(window_end_ms);
        let book = &self.net.books[idx];

        let mut sent = 0u64;
        let mut delivered = 0u64;
        let mut dropped = 0u64;
        let mut in_flight = 0u64;
        let mut delivered_bytes = 0u64;
        let mut delay_sum_ms = 0f64;
        let mut jitter_sum_ms = 0f64;
        let mut jitter_count = 0u64;
        let mut last_delay_ms: Option<f64> = None;

        let first_second = window_start_ms / 1000;
        let last_second = window_end_ms.div_ceil(1000).max(first_second + 1);
        let mut seconds: Vec<SecondBucket> =
            (first_second..last_second).map(SecondBucket::new).collect();

        for fate in &book.fates {
            let (sent_at, size, delivered_at) = match *fate {
                PacketFate::InFlight { sent, size } => (sent, size, None),
                PacketFate::Delivered { sent, delivered, size } => (sent, size, Some(delivered)),
                PacketFate::Dropped { sent, size } => (sent, size, None),
            };
            if sent_at < start || sent_at >= end {
                continue;
            }
            sent += 1;
            let bucket = &mut seconds[(sent_at.second() - first_second) as usize];
            bucket.sent += 1;
            match (*fate, delivered_at) {
                (PacketFate::Delivered { .. }, Some(at)) => {
                    delivered += 1;
                    delivered_bytes += size as u64;
                    let delay_ms = at.saturating_sub(sent_at).as_millis_f64();
                    delay_sum_ms += delay_ms;
                    if let Some(prev) = last_delay_ms {
                        jitter_sum_ms += (delay_ms - prev).abs();
                        jitter_count += 1;
                    }
                    last_delay_ms = Some(delay_ms);
                    bucket.delivered += 1;
                    bucket.delivered_bytes += size as u64;
                    bucket.delay_sum_ms += delay_ms;
                    if let Some(prev) = bucket.last_delay_ms {
                        bucket.jitter_sum_ms += (delay_ms - prev).abs();
                        bucket.jitter_count += 1;
                    }
                    bucket.last_delay_ms = Some(delay_ms);
                }
                (PacketFate::Dropped { .. }, _) => {
                    dropped += 1;
                    bucket.dropped += 1;
                }
                _ => {
                    in_flight += 1;
                }
            }
        }

        let window_s = (window_end_ms.saturating_sub(window_start_ms)) as f64 / 1000.0;
        Ok(FlowMetrics {
            flow_id: flow_id.clone(),
            window_start_ms,
            window_end_ms,
            sent,
            delivered,
            dropped,
            in_flight,
            delivered_bytes,
            throughput_bps: if window_s > 0.0 {
                delivered_bytes as f64 * 8.0 / window_s
            } else {
                0.0
            },
            loss: if sent > 0 { dropped as f64 / sent as f64 } else { 0.0 },
            mean_delay_ms: if delivered > 0 { delay_sum_ms / delivered as f64 } else { 0.0 },
            jitter_ms: if jitter_count > 0 { jitter_sum_ms / jitter_count as f64 } else { 0.0 },
            per_second: seconds.into_iter().map(SecondBucket::finish).collect(),
        })
    }
}

struct SecondBucket {
    second: u64,
    sent: u64,
    delivered: u64,
    dropped: u64,
    delivered_bytes: u64,
    delay_sum_ms: f64,
    jitter_sum_ms: f64,
    jitter_count: u64,
    last_delay_ms: Option<f64>,
}

impl SecondBucket {
    fn new(second: u64) -> Self {
        SecondBucket {
            second,
            sent: 0,
            delivered: 0,
            dropped: 0,
            delivered_bytes: 0,
            delay_sum_ms: 0.0,
            jitter_sum_ms: 0.0,
            jitter_count: 0,
            last_delay_ms: None,
        }
    }

    fn finish(self) -> SecondMetrics {
        SecondMetrics {
            second: self.second,
            sent: self.sent,
            delivered: self.delivered,
            dropped: self.dropped,
            loss: if self.sent > 0 { self.dropped as f64 / self.sent as f64 } else { 0.0 },
            mean_delay_ms: if self.delivered > 0 {
                self.delay_sum_ms / self.delivered as f64
            } else {
                0.0
            },
            jitter_ms: if self.jitter_count > 0 {
                self.jitter_sum_ms / self.jitter_count as f64
            } else {
                0.0
            },
            throughput_bps: self.delivered_bytes as f64 * 8.0,
        }
    }
}
