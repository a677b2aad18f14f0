//! Ingress enforcement: classification against installed traffic policies,
//! gate control and token-bucket policing with usage metering.
//!
//! Enforcement points sit where subscriber traffic enters the network.
//! External markings are not trusted: a packet that matches no installed
//! classifier is re-marked best effort.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{class_to_codepoint, GateId, MediaType, MeterId, SimTime, TrafficClass};
use crate::nass::GateSettings;
use crate::racs::TrafficPolicy;
use crate::transport::DropReason;

/// Token bucket with exact integer arithmetic. Tokens are accounted in
/// bit-nanoseconds (bits x 10^9) so refill at `rate_bps` over an integer
/// nanosecond interval is exact and runs are reproducible.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBucket {
    rate_bps: u64,
    burst_bytes: u64,
    tokens_bitns: u128,
    last_refill: SimTime,
}

const BITNS_PER_BYTE: u128 = 8 * 1_000_000_000;

impl TokenBucket {
    /// A bucket starting full.
    pub fn new(rate_bps: u64, burst_bytes: u64) -> Self {
        TokenBucket {
            rate_bps,
            burst_bytes,
            tokens_bitns: burst_bytes as u128 * BITNS_PER_BYTE,
            last_refill: SimTime::ZERO,
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps
    }

    pub fn burst_bytes(&self) -> u64 {
        self.burst_bytes
    }

    fn refill(&mut self, now: SimTime) {
        let elapsed = now.as_nanos().saturating_sub(self.last_refill.as_nanos());
        self.last_refill = now;
        let cap = self.burst_bytes as u128 * BITNS_PER_BYTE;
        self.tokens_bitns = (self.tokens_bitns + elapsed as u128 * self.rate_bps as u128).min(cap);
    }

    /// Consume tokens for a packet if the bucket holds enough.
    pub fn try_consume(&mut self, now: SimTime, size_bytes: u32) -> bool {
        self.refill(now);
        let need = size_bytes as u128 * BITNS_PER_BYTE;
        if self.tokens_bitns >= need {
            self.tokens_bitns -= need;
            true
        } else {
            false
        }
    }

    #[cfg(test)]
    pub fn tokens_bytes(&self) -> u64 {
        (self.tokens_bitns / BITNS_PER_BYTE) as u64
    }
}

/// Usage meter attached to an installed policy. Counts conformant and
/// excess traffic in both packets and bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meter {
    pub conformant_packets: u64,
    pub conformant_bytes: u64,
    pub excess_packets: u64,
    pub excess_bytes: u64,
}

impl Meter {
    pub fn total_packets(&self) -> u64 {
        self.conformant_packets + self.excess_packets
    }
}

#[derive(Debug)]
struct GateState {
    initial: GateSettings,
    current: GateSettings,
    drop_count: u64,
}

#[derive(Debug)]
struct InstalledPolicy {
    policy: TrafficPolicy,
    bucket: Option<TokenBucket>,
    meter: Meter,
}

/// Outcome of running a packet through the ingress pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IngressVerdict {
    /// Forward with this codepoint.
    Forward { codepoint: u8 },
    Drop(DropReason),
}

/// The set of enforcement points: per-subscriber gates plus installed
/// traffic policies, ordered so overlapping classifiers resolve to the
/// lowest gate id (then lowest meter id).
#[derive(Debug, Default)]
pub struct Enforcement {
    gates: BTreeMap<GateId, GateState>,
    policies: Vec<InstalledPolicy>,
    /// Final counters of removed policies and gates, kept for accounting.
    retired_meters: Vec<(TrafficPolicy, Meter)>,
    retired_gates: Vec<(GateId, u64)>,
}

/// `pattern` is either an exact string or a prefix glob ending in `*`.
pub fn destination_matches(pattern: &str, dst: &str) -> bool {
    match pattern.strip_suffix('*') {
        Some(prefix) => dst.starts_with(prefix),
        None => pattern == dst,
    }
}

impl Enforcement {
    pub fn new() -> Self {
        Enforcement::default()
    }

    pub fn register_gate(&mut self, settings: GateSettings) {
        self.gates.insert(
            settings.gate_id,
            GateState { initial: settings.clone(), current: settings, drop_count: 0 },
        );
    }

    pub fn remove_gate(&mut self, gate: GateId) {
        if let Some(state) = self.gates.remove(&gate) {
            self.retired_gates.push((gate, state.drop_count));
        }
        let (kept, gone): (Vec<_>, Vec<_>) =
            self.policies.drain(..).partition(|p| p.policy.gate_id != gate);
        self.policies = kept;
        for p in gone {
            self.retired_meters.push((p.policy, p.meter));
        }
    }

    pub fn gate(&self, gate: GateId) -> Option<&GateSettings> {
        self.gates.get(&gate).map(|g| &g.current)
    }

    pub fn gate_drop_count(&self, gate: GateId) -> u64 {
        self.gates.get(&gate).map(|g| g.drop_count).unwrap_or(0)
    }

    pub fn gate_ids(&self) -> impl Iterator<Item = GateId> + '_ {
        self.gates.keys().copied()
    }

    /// Install a traffic policy on its gate. The meter starts zeroed and the
    /// gate is recomputed from its initial settings plus every installed
    /// policy's gate directive.
    pub fn install(&mut self, policy: TrafficPolicy) -> Result<MeterId, GateId> {
        if !self.gates.contains_key(&policy.gate_id) {
            return Err(policy.gate_id);
        }
        let meter_id = policy.meter_id;
        let bucket = policy
            .policer
            .as_ref()
            .map(|p| TokenBucket::new(p.rate_bps, p.burst_bytes));
        self.policies.push(InstalledPolicy { policy, bucket, meter: Meter::default() });
        self.policies.sort_by_key(|p| (p.policy.gate_id, p.policy.meter_id));
        self.recompute_gates();
        Ok(meter_id)
    }

    /// Remove one installed policy by meter id; the gate falls back to its
    /// initial settings once no policy remains on it. The meter's final
    /// counters stay available through [`Enforcement::all_meters`].
    pub fn remove_policy(&mut self, meter: MeterId) -> Option<TrafficPolicy> {
        let idx = self.policies.iter().position(|p| p.policy.meter_id == meter)?;
        let removed = self.policies.remove(idx);
        self.recompute_gates();
        self.retired_meters.push((removed.policy.clone(), removed.meter));
        Some(removed.policy)
    }

    pub fn installed_policies(&self) -> impl Iterator<Item = &TrafficPolicy> {
        self.policies.iter().map(|p| &p.policy)
    }

    pub fn meters(&self) -> impl Iterator<Item = (&TrafficPolicy, &Meter)> {
        self.policies.iter().map(|p| (&p.policy, &p.meter))
    }

    /// Active and retired meters, ordered by meter id.
    pub fn all_meters(&self) -> Vec<(TrafficPolicy, Meter)> {
        let mut out: Vec<(TrafficPolicy, Meter)> = self
            .policies
            .iter()
            .map(|p| (p.policy.clone(), p.meter))
            .chain(self.retired_meters.iter().cloned())
            .collect();
        out.sort_by_key(|(p, _)| p.meter_id);
        out
    }

    /// Active and retired gate drop counters, ordered by gate id.
    pub fn all_gate_counters(&self) -> Vec<(GateId, u64)> {
        let mut out: Vec<(GateId, u64)> = self
            .gates
            .iter()
            .map(|(id, g)| (*id, g.drop_count))
            .chain(self.retired_gates.iter().copied())
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn recompute_gates(&mut self) {
        for g in self.gates.values_mut() {
            g.current = g.initial.clone();
        }
        for p in &self.policies {
            if let Some(g) = self.gates.get_mut(&p.policy.gate_id) {
                if p.policy.gate_open {
                    g.current.open = true;
                }
                for dst in &p.policy.gate_allowed_destinations {
                    if !g.current.allowed_destinations.contains(dst) {
                        g.current.allowed_destinations.push(dst.clone());
                    }
                }
            }
        }
    }

    /// First matching classifier wins; policies are kept sorted by
    /// (gate id, meter id). Returns the policy index.
    pub fn classify(&self, src_ip: &str, dst: &str, media: Option<MediaType>) -> Option<usize> {
        self.policies.iter().position(|p| {
            let c = &p.policy.classifier;
            c.src_ip == src_ip
                && destination_matches(&c.dst, dst)
                && (c.media.is_none() || c.media == media)
        })
    }

    /// Gate check against the gate's current settings: drop when closed or
    /// when the destination matches no allowed pattern.
    pub fn gate_check(&mut self, gate: GateId, dst: &str) -> Result<(), DropReason> {
        let Some(g) = self.gates.get_mut(&gate) else {
            return Err(DropReason::GateClosed);
        };
        if !g.current.open {
            g.drop_count += 1;
            return Err(DropReason::GateClosed);
        }
        if !g.current.allowed_destinations.iter().any(|p| destination_matches(p, dst)) {
            g.drop_count += 1;
            return Err(DropReason::GateDestination);
        }
        Ok(())
    }

    /// Run the full ingress pipeline: classify, gate, police, mark.
    ///
    /// Unmatched traffic is re-marked best effort and checked against the
    /// flow's own gate when it has one. Excess EF/AF traffic is dropped;
    /// excess best-effort traffic passes unchanged.
    pub fn process_ingress(
        &mut self,
        now: SimTime,
        src_ip: &str,
        dst: &str,
        media: Option<MediaType>,
        size_bytes: u32,
        gate_hint: Option<GateId>,
    ) -> IngressVerdict {
        match self.classify(src_ip, dst, media) {
            Some(idx) => {
                let gate_id = self.policies[idx].policy.gate_id;
                if let Err(reason) = self.gate_check(gate_id, dst) {
                    return IngressVerdict::Drop(reason);
                }
                let entry = &mut self.policies[idx];
                let codepoint = entry.policy.codepoint;
                let class = crate::model::codepoint_to_class(codepoint);
                let conformant = match entry.bucket.as_mut() {
                    Some(bucket) => bucket.try_consume(now, size_bytes),
                    None => true,
                };
                if conformant {
                    entry.meter.conformant_packets += 1;
                    entry.meter.conformant_bytes += size_bytes as u64;
                    IngressVerdict::Forward { codepoint }
                } else {
                    entry.meter.excess_packets += 1;
                    entry.meter.excess_bytes += size_bytes as u64;
                    if class.is_best_effort_family() {
                        // Out-of-profile best-effort traffic passes unmarked,
                        // losing any better-best-effort protection.
                        IngressVerdict::Forward {
                            codepoint: class_to_codepoint(TrafficClass::BestEffort),
                        }
                    } else {
                        IngressVerdict::Drop(DropReason::PolicerExcess)
                    }
                }
            }
            None => {
                // No trust of external marks: unmatched traffic is best effort.
                let codepoint = class_to_codepoint(TrafficClass::BestEffort);
                if let Some(gate) = gate_hint {
                    if let Err(reason) = self.gate_check(gate, dst) {
                        return IngressVerdict::Drop(reason);
                    }
                }
                IngressVerdict::Forward { codepoint }
            }
        }
    }
}
