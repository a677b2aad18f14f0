//! Per-link, per-direction DiffServ scheduler.
//!
//! Service order is strict priority for EF (rate-capped at the link's EF
//! share so it cannot starve the rest), deficit-weighted round robin over
//! AF1..AF4 with weights 4:3:2:1, and a shared best-effort queue taking the
//! residual. Drop policy is deterministic threshold-based:
//!
//! - EF beyond the per-link EF token bucket is dropped, not demoted
//! - AF queue above 50% occupancy drops arriving precedence-3 packets,
//!   above 75% also precedence-2
//! - the shared BE/BBE queue above 80% occupancy drops arriving plain
//!   best-effort packets first, protecting better-best-effort

use std::collections::VecDeque;

use crate::model::{codepoint_to_class, SimTime, TrafficClass};
use crate::transport::enforcement::TokenBucket;
use crate::transport::topology::ClassShares;
use crate::transport::{DropReason, Packet, MAX_PACKET_BYTES};

/// DRR weights for AF1..AF4.
pub const AF_DRR_WEIGHTS: [u64; 4] = [4, 3, 2, 1];
/// DRR base quantum; one maximum packet so every visit can serve the head.
const DRR_QUANTUM_BYTES: u64 = MAX_PACKET_BYTES as u64;

#[derive(Debug, Default)]
struct ClassQueue {
    packets: VecDeque<(Packet, SimTime)>,
    bytes: u64,
}

impl ClassQueue {
    fn push(&mut self, packet: Packet, now: SimTime) {
        self.bytes += packet.size_bytes as u64;
        self.packets.push_back((packet, now));
    }

    fn pop(&mut self) -> Option<(Packet, SimTime)> {
        let entry = self.packets.pop_front()?;
        self.bytes -= entry.0.size_bytes as u64;
        Some(entry)
    }

    fn head_size(&self) -> Option<u64> {
        self.packets.front().map(|(p, _)| p.size_bytes as u64)
    }

    fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct LinkCounters {
    pub tx_packets: u64,
    pub tx_bytes: u64,
    pub drops_ef_cap: u64,
    pub drops_af_precedence: u64,
    pub drops_be_protection: u64,
    pub drops_overflow: u64,
}

impl LinkCounters {
    pub fn drops_total(&self) -> u64 {
        self.drops_ef_cap + self.drops_af_precedence + self.drops_be_protection + self.drops_overflow
    }
}

#[derive(Debug)]
pub struct LinkScheduler {
    queue_capacity_bytes: u64,
    ef_bucket: TokenBucket,
    ef: ClassQueue,
    af: [ClassQueue; 4],
    be: ClassQueue,
    drr_deficit: [u64; 4],
    drr_index: usize,
    drr_fresh: bool,
    /// A packet is currently being serialized onto the wire.
    pub busy: bool,
    /// A zero-delay dequeue kick is already scheduled.
    pub kick_pending: bool,
    pub counters: LinkCounters,
    /// Worst queueing delay (enqueue to transmission start) seen by an EF
    /// packet on this link direction.
    pub max_ef_queueing: SimTime,
}

/// EF admission bucket for a link: rate is the EF share of capacity, burst
/// is five milliseconds of that rate with a two-packet floor.
pub fn ef_link_bucket(capacity_bps: u64, shares: &ClassShares) -> TokenBucket {
    let rate = (capacity_bps as f64 * shares.ef).round() as u64;
    let burst = (rate / 1_600).max(2 * MAX_PACKET_BYTES as u64);
    TokenBucket::new(rate.max(1), burst)
}

impl LinkScheduler {
    pub fn new(capacity_bps: u64, queue_capacity_bytes: u64, shares: &ClassShares) -> Self {
        LinkScheduler {
            queue_capacity_bytes,
            ef_bucket: ef_link_bucket(capacity_bps, shares),
            ef: ClassQueue::default(),
            af: Default::default(),
            be: ClassQueue::default(),
            drr_deficit: [0; 4],
            drr_index: 0,
            drr_fresh: true,
            busy: false,
            kick_pending: false,
            counters: LinkCounters::default(),
            max_ef_queueing: SimTime::ZERO,
        }
    }

    pub fn ef_bucket(&self) -> &TokenBucket {
        &self.ef_bucket
    }

    pub fn has_backlog(&self) -> bool {
        !self.ef.is_empty() || self.af.iter().any(|q| !q.is_empty()) || !self.be.is_empty()
    }

    pub fn backlog_bytes(&self) -> u64 {
        self.ef.bytes + self.af.iter().map(|q| q.bytes).sum::<u64>() + self.be.bytes
    }

    /// Admit a packet to its class queue, or report why it was dropped.
    pub fn enqueue(&mut self, now: SimTime, packet: Packet) -> Result<(), DropReason> {
        let size = packet.size_bytes as u64;
        let cap = self.queue_capacity_bytes;
        match codepoint_to_class(packet.codepoint) {
            TrafficClass::Ef => {
                if !self.ef_bucket.try_consume(now, packet.size_bytes) {
                    self.counters.drops_ef_cap += 1;
                    return Err(DropReason::EfCapExceeded);
                }
                if self.ef.bytes + size > cap {
                    self.counters.drops_overflow += 1;
                    return Err(DropReason::QueueOverflow);
                }
                self.ef.push(packet, now);
            }
            TrafficClass::Af { class, precedence } => {
                let q = &mut self.af[(class - 1) as usize];
                // Occupancy thresholds: >50% drops precedence 3, >75% also
                // precedence 2. Integer math keeps the comparison exact.
                let over_50 = q.bytes * 2 > cap;
                let over_75 = q.bytes * 4 > cap * 3;
                if (precedence == 3 && over_50) || (precedence == 2 && over_75) {
                    self.counters.drops_af_precedence += 1;
                    return Err(DropReason::AfPrecedence);
                }
                if q.bytes + size > cap {
                    self.counters.drops_overflow += 1;
                    return Err(DropReason::QueueOverflow);
                }
                q.push(packet, now);
            }
            TrafficClass::BestEffort | TrafficClass::BetterBestEffort => {
                let class = codepoint_to_class(packet.codepoint);
                let over_80 = self.be.bytes * 5 > cap * 4;
                if class == TrafficClass::BestEffort && over_80 {
                    self.counters.drops_be_protection += 1;
                    return Err(DropReason::BeProtection);
                }
                if self.be.bytes + size > cap {
                    self.counters.drops_overflow += 1;
                    return Err(DropReason::QueueOverflow);
                }
                self.be.push(packet, now);
            }
        }
        Ok(())
    }

    /// Pick the next packet to transmit.
    pub fn dequeue(&mut self, now: SimTime) -> Option<Packet> {
        if let Some((packet, enqueued)) = self.ef.pop() {
            let waited = now.saturating_sub(enqueued);
            if waited > self.max_ef_queueing {
                self.max_ef_queueing = waited;
            }
            return Some(self.count_tx(packet));
        }
        if let Some(packet) = self.drr_next() {
            return Some(self.count_tx(packet));
        }
        self.be.pop().map(|(p, _)| self.count_tx(p))
    }

    fn count_tx(&mut self, packet: Packet) -> Packet {
        self.counters.tx_packets += 1;
        self.counters.tx_bytes += packet.size_bytes as u64;
        packet
    }

    /// One step of deficit round robin over the AF queues. Quanta are the
    /// weights times one maximum packet, so a queue's head is always
    /// servable after a single refresh.
    fn drr_next(&mut self) -> Option<Packet> {
        if self.af.iter().all(|q| q.is_empty()) {
            return None;
        }
        loop {
            let i = self.drr_index;
            if self.af[i].is_empty() {
                self.drr_deficit[i] = 0;
                self.drr_index = (i + 1) % 4;
                self.drr_fresh = true;
                continue;
            }
            if self.drr_fresh {
                self.drr_deficit[i] += AF_DRR_WEIGHTS[i] * DRR_QUANTUM_BYTES;
                self.drr_fresh = false;
            }
            if let Some(head) = self.af[i].head_size() {
                if head <= self.drr_deficit[i] {
                    self.drr_deficit[i] -= head;
                    return self.af[i].pop().map(|(p, _)| p);
                }
            }
            self.drr_index = (i + 1) % 4;
            self.drr_fresh = true;
        }
    }
}
