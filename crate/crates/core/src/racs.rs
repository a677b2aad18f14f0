//! Resource and admission control subsystem.
//!
//! The policy decision function clamps each request by the subscribed
//! transport profile, evaluates the operator's policy rules (first match in
//! ascending precedence, default deny) and emits admit/modify/reject. The
//! per-segment resource control books capacity on every link of the path,
//! all-or-nothing, against per-class share budgets. Granted reservations
//! are turned into Layer 3/2 traffic policy (marking, token-bucket policer,
//! gate settings) and installed on the ingress enforcement point.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::model::{
    class_to_codepoint, GateId, InitiationMode, MediaType, MeterId, QosParameters, ReservationId,
    SessionId, SimTime, SubscriberId, TokenId, TrafficClass,
};
use crate::nass::{GateSettings, LookupKey, Nass};
use crate::transport::enforcement::Enforcement;
use crate::transport::topology::{Direction, Routing, TopologyError};
use crate::transport::MAX_PACKET_BYTES;

/// Authorization-token lifetime.
pub const TOKEN_TTL: SimTime = SimTime(30 * 1_000_000_000);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RacsError {
    #[error("no active attachment for {0}")]
    NoActiveAttachment(String),
    #[error("no route from {0} to {1}")]
    NoRoute(String, String),
    #[error("insufficient capacity on link {0}")]
    InsufficientCapacity(String),
    #[error("request rejected: {0}")]
    Rejected(String),
    #[error("unknown reservation {0}")]
    UnknownReservation(ReservationId),
    #[error("unknown gate {0}")]
    UnknownGate(GateId),
    #[error("operation not valid for initiation mode {0}")]
    WrongMode(InitiationMode),
    #[error("token {0} expired")]
    TokenExpired(TokenId),
    #[error("token {0} already used or invalidated")]
    TokenReused(TokenId),
    #[error("unauthorized resource requests are forbidden by operator policy")]
    PolicyForbidden,
    #[error("reservation requires an admit or modify decision")]
    NotAdmitted,
}

// ---------------------------------------------------------------------------
// Policy rules
// ---------------------------------------------------------------------------

/// Total predicate over request attributes. Absent fields match anything.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub requestor: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_type: Option<MediaType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_class: Option<Vec<TrafficClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access_network_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_priority: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_priority: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_ul_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_ul_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_dl_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_dl_bps: Option<u64>,
}

/// What a rule evaluates against: the clamped request plus attachment data.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchContext<'a> {
    pub requestor_name: &'a str,
    pub media_type: MediaType,
    pub traffic_class: TrafficClass,
    pub access_network_type: &'a str,
    pub priority: u8,
    pub ul_bps: u64,
    pub dl_bps: u64,
}

impl RuleMatch {
    pub fn matches(&self, ctx: &MatchContext<'_>) -> bool {
        if let Some(pat) = &self.requestor {
            if !crate::transport::enforcement::destination_matches(pat, ctx.requestor_name) {
                return false;
            }
        }
        if let Some(m) = self.media_type {
            if m != ctx.media_type {
                return false;
            }
        }
        if let Some(classes) = &self.traffic_class {
            if !classes.contains(&ctx.traffic_class) {
                return false;
            }
        }
        if let Some(t) = &self.access_network_type {
            if t != ctx.access_network_type {
                return false;
            }
        }
        if self.min_priority.is_some_and(|p| ctx.priority < p)
            || self.max_priority.is_some_and(|p| ctx.priority > p)
            || self.min_ul_bps.is_some_and(|b| ctx.ul_bps < b)
            || self.max_ul_bps.is_some_and(|b| ctx.ul_bps > b)
            || self.min_dl_bps.is_some_and(|b| ctx.dl_bps < b)
            || self.max_dl_bps.is_some_and(|b| ctx.dl_bps > b)
        {
            return false;
        }
        true
    }
}

/// Ceiling applied by a clamp rule; absent dimensions are untouched.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClampCeiling {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ul_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dl_bps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_class: Option<TrafficClass>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleAction {
    Admit,
    Deny,
    Clamp(ClampCeiling),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRule {
    pub rule_id: String,
    pub precedence: u32,
    pub action: RuleAction,
    #[serde(default)]
    pub matcher: RuleMatch,
}

/// First match in ascending precedence. The rule slice must already be
/// sorted by precedence; [`Racs::new`] guarantees that for the repository.
pub fn evaluate_rules<'a>(rules: &'a [PolicyRule], ctx: &MatchContext<'_>) -> Option<&'a PolicyRule> {
    rules.iter().find(|r| r.matcher.matches(ctx))
}

// ---------------------------------------------------------------------------
// Requests and decisions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ResourceRequest {
    pub session_id: SessionId,
    pub subscriber_id: SubscriberId,
    pub src_ip: String,
    /// Destination topology node.
    pub dst: String,
    pub media_type: MediaType,
    pub qos: QosParameters,
    pub mode: InitiationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    Admit,
    Modify { granted: QosParameters },
    Reject { reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyDecision {
    pub verdict: Verdict,
    pub matched_rule: Option<String>,
    pub token: Option<TokenId>,
}

impl PolicyDecision {
    /// Admit grants exactly the request; modify must be strictly smaller in
    /// at least one dimension and larger in none.
    fn from_granted(request: &QosParameters, granted: QosParameters, rule: &str) -> PolicyDecision {
        let verdict = if granted == *request {
            Verdict::Admit
        } else {
            debug_assert!(modify_is_strict_shrink(request, &granted));
            Verdict::Modify { granted }
        };
        PolicyDecision { verdict, matched_rule: Some(rule.to_string()), token: None }
    }

    pub fn is_positive(&self) -> bool {
        !matches!(self.verdict, Verdict::Reject { .. })
    }

    /// The parameters the decision actually grants.
    pub fn granted(&self, request: &QosParameters) -> Option<QosParameters> {
        match &self.verdict {
            Verdict::Admit => Some(request.clone()),
            Verdict::Modify { granted } => Some(granted.clone()),
            Verdict::Reject { .. } => None,
        }
    }

    pub fn verdict_str(&self) -> &'static str {
        match self.verdict {
            Verdict::Admit => "admit",
            Verdict::Modify { .. } => "modify",
            Verdict::Reject { .. } => "reject",
        }
    }
}

fn modify_is_strict_shrink(request: &QosParameters, granted: &QosParameters) -> bool {
    let not_larger = granted.ul_bps <= request.ul_bps
        && granted.dl_bps <= request.dl_bps
        && granted.priority <= request.priority
        && granted.traffic_class.quality_rank() <= request.traffic_class.quality_rank();
    let strictly_smaller = granted.ul_bps < request.ul_bps
        || granted.dl_bps < request.dl_bps
        || granted.priority < request.priority
        || granted.traffic_class.quality_rank() < request.traffic_class.quality_rank();
    not_larger && strictly_smaller
}

// ---------------------------------------------------------------------------
// Capacity ledger
// ---------------------------------------------------------------------------

/// Which ledger budget a traffic class draws from. Best-effort traffic
/// never books capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BookingBucket {
    Ef,
    Af,
}

impl BookingBucket {
    pub fn of(class: TrafficClass) -> Option<BookingBucket> {
        match class {
            TrafficClass::Ef => Some(BookingBucket::Ef),
            TrafficClass::Af { .. } => Some(BookingBucket::Af),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            BookingBucket::Ef => 0,
            BookingBucket::Af => 1,
        }
    }
}

#[derive(Debug, Clone)]
struct LinkBook {
    link_id: String,
    segment: String,
    capacity_bps: u64,
    budgets: [u64; 2],
    /// booked[bucket][direction]
    booked: [[u64; 2]; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub link_id: String,
    pub segment: String,
    pub capacity_bps: u64,
    pub ef_budget_bps: u64,
    pub af_budget_bps: u64,
    pub booked_ef_fwd_bps: u64,
    pub booked_ef_rev_bps: u64,
    pub booked_af_fwd_bps: u64,
    pub booked_af_rev_bps: u64,
}

/// One (link, direction, bucket, bits) line of a booking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct BookEntry {
    link: usize,
    direction: Direction,
    bucket: BookingBucket,
    bps: u64,
}

/// Per-link capacity bookkeeping. Invariant, checked after every mutation:
/// booked(bucket, link, direction) <= share(bucket) x capacity.
#[derive(Debug, Clone)]
pub struct CapacityLedger {
    links: Vec<LinkBook>,
}

impl CapacityLedger {
    pub fn new(routing: &Routing) -> Self {
        let links = routing
            .topology()
            .links
            .iter()
            .map(|l| LinkBook {
                link_id: l.link_id.clone(),
                segment: l.segment.clone(),
                capacity_bps: l.capacity_bps,
                budgets: [
                    (l.capacity_bps as f64 * l.class_shares.ef).floor() as u64,
                    (l.capacity_bps as f64 * l.class_shares.af).floor() as u64,
                ],
                booked: [[0; 2]; 2],
            })
            .collect();
        CapacityLedger { links }
    }

    fn try_book(&mut self, entries: &[BookEntry]) -> Result<(), usize> {
        // Entries for the same (link, dir, bucket) must be summed before the
        // budget comparison; a path may cross a link once per direction only,
        // but ul+dl of one reservation can land on the same counter when the
        // path folds back, so accumulate first.
        let mut need: BTreeMap<(usize, usize, usize), u64> = BTreeMap::new();
        for e in entries {
            *need.entry((e.link, e.direction.index(), e.bucket.index())).or_default() += e.bps;
        }
        for (&(link, dir, bucket), &bps) in &need {
            let book = &self.links[link];
            if book.booked[bucket][dir] + bps > book.budgets[bucket] {
                return Err(link);
            }
        }
        for (&(link, dir, bucket), &bps) in &need {
            self.links[link].booked[bucket][dir] += bps;
        }
        self.debug_check();
        Ok(())
    }

    fn release(&mut self, entries: &[BookEntry]) {
        for e in entries {
            let cell = &mut self.links[e.link].booked[e.bucket.index()][e.direction.index()];
            debug_assert!(*cell >= e.bps, "releasing more than booked");
            *cell = cell.saturating_sub(e.bps);
        }
        self.debug_check();
    }

    /// Atomic delta between two bookings with identical geometry: releases
    /// the old amounts and books the new ones, failing without side effects
    /// when an increase exceeds a budget.
    fn try_rebook(&mut self, old: &[BookEntry], new: &[BookEntry]) -> Result<(), usize> {
        let mut delta: BTreeMap<(usize, usize, usize), i128> = BTreeMap::new();
        for e in old {
            *delta.entry((e.link, e.direction.index(), e.bucket.index())).or_default() -=
                e.bps as i128;
        }
        for e in new {
            *delta.entry((e.link, e.direction.index(), e.bucket.index())).or_default() +=
                e.bps as i128;
        }
        for (&(link, dir, bucket), &d) in &delta {
            let book = &self.links[link];
            let next = book.booked[bucket][dir] as i128 + d;
            if next < 0 || next as u64 > book.budgets[bucket] {
                return Err(link);
            }
        }
        for (&(link, dir, bucket), &d) in &delta {
            let cell = &mut self.links[link].booked[bucket][dir];
            *cell = (*cell as i128 + d) as u64;
        }
        self.debug_check();
        Ok(())
    }

    pub fn assert_safe(&self) -> Result<(), String> {
        for book in &self.links {
            for bucket in 0..2 {
                for dir in 0..2 {
                    if book.booked[bucket][dir] > book.budgets[bucket] {
                        return Err(format!(
                            "link {} bucket {} dir {}: booked {} > budget {}",
                            book.link_id, bucket, dir, book.booked[bucket][dir], book.budgets[bucket]
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn debug_check(&self) {
        debug_assert!(self.assert_safe().is_ok(), "{:?}", self.assert_safe());
    }

    pub fn total_booked_bps(&self) -> u64 {
        self.links
            .iter()
            .map(|l| l.booked.iter().flatten().sum::<u64>())
            .sum()
    }

    pub fn snapshot(&self) -> Vec<LedgerSnapshot> {
        self.links
            .iter()
            .map(|l| LedgerSnapshot {
                link_id: l.link_id.clone(),
                segment: l.segment.clone(),
                capacity_bps: l.capacity_bps,
                ef_budget_bps: l.budgets[0],
                af_budget_bps: l.budgets[1],
                booked_ef_fwd_bps: l.booked[0][0],
                booked_ef_rev_bps: l.booked[0][1],
                booked_af_fwd_bps: l.booked[1][0],
                booked_af_rev_bps: l.booked[1][1],
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Reservations, tokens, traffic policy
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationState {
    Reserved,
    Installed,
    Released,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathHop {
    pub link: usize,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReservationRecord {
    pub reservation_id: ReservationId,
    pub session_id: SessionId,
    pub path: Vec<PathHop>,
    /// Identical along the path for unicast.
    pub traffic_class: TrafficClass,
    pub ul_bps: u64,
    pub dl_bps: u64,
    pub state: ReservationState,
    pub src_ip: String,
    pub dst: String,
    pub gate_id: GateId,
    pub media_type: MediaType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meter_id: Option<MeterId>,
    #[serde(default)]
    pub flagged_for_release: bool,
}

impl ReservationRecord {
    fn book_entries(&self) -> Vec<BookEntry> {
        let Some(bucket) = BookingBucket::of(self.traffic_class) else {
            return Vec::new(); // best effort never books the ledger
        };
        let mut entries = Vec::with_capacity(self.path.len() * 2);
        for hop in &self.path {
            if self.ul_bps > 0 {
                entries.push(BookEntry {
                    link: hop.link,
                    direction: hop.direction,
                    bucket,
                    bps: self.ul_bps,
                });
            }
            if self.dl_bps > 0 {
                entries.push(BookEntry {
                    link: hop.link,
                    direction: hop.direction.opposite(),
                    bucket,
                    bps: self.dl_bps,
                });
            }
        }
        entries
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthToken {
    pub token_id: TokenId,
    pub session_id: SessionId,
    pub granted: QosParameters,
    pub expires_at: SimTime,
}

#[derive(Debug)]
struct TokenState {
    token: AuthToken,
    consumed: bool,
    superseded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub src_ip: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media: Option<MediaType>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicerParams {
    pub rate_bps: u64,
    pub burst_bytes: u64,
}

/// Derived Layer 3/2 enforcement state for one granted reservation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficPolicy {
    pub gate_id: GateId,
    pub classifier: Classifier,
    pub codepoint: u8,
    /// Absent for best-effort grants (unlimited).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policer: Option<PolicerParams>,
    pub gate_open: bool,
    pub gate_allowed_destinations: Vec<String>,
    pub meter_id: MeterId,
}

/// One line of the RACS decision log, kept for the run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionEntry {
    pub time_ms: f64,
    pub session_id: SessionId,
    pub mode: InitiationMode,
    pub verdict: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_rule: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granted: Option<QosParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

// ---------------------------------------------------------------------------
// The subsystem
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct Racs {
    rules: Vec<PolicyRule>,
    allow_unauthorized_qos: bool,
    routing: Arc<Routing>,
    ledger: CapacityLedger,
    /// Access-network name -> topology node where its terminals inject.
    access_nodes: BTreeMap<String, String>,
    reservations: BTreeMap<ReservationId, ReservationRecord>,
    tokens: BTreeMap<TokenId, TokenState>,
    latest_token: BTreeMap<SessionId, TokenId>,
    decision_log: Vec<DecisionEntry>,
    next_reservation: u64,
    next_meter: u64,
    next_token: u64,
}

impl Racs {
    pub fn new(
        mut rules: Vec<PolicyRule>,
        allow_unauthorized_qos: bool,
        routing: Arc<Routing>,
        access_nodes: BTreeMap<String, String>,
    ) -> Self {
        rules.sort_by_key(|r| r.precedence);
        let ledger = CapacityLedger::new(&routing);
        Racs {
            rules,
            allow_unauthorized_qos,
            routing,
            ledger,
            access_nodes,
            reservations: BTreeMap::new(),
            tokens: BTreeMap::new(),
            latest_token: BTreeMap::new(),
            decision_log: Vec::new(),
            next_reservation: 0,
            next_meter: 0,
            next_token: 0,
        }
    }

    pub fn rules(&self) -> &[PolicyRule] {
        &self.rules
    }

    pub fn allow_unauthorized_qos(&self) -> bool {
        self.allow_unauthorized_qos
    }

    pub fn ledger(&self) -> &CapacityLedger {
        &self.ledger
    }

    pub fn decision_log(&self) -> &[DecisionEntry] {
        &self.decision_log
    }

    pub fn reservation(&self, id: ReservationId) -> Option<&ReservationRecord> {
        self.reservations.get(&id)
    }

    pub fn reservations(&self) -> impl Iterator<Item = &ReservationRecord> {
        self.reservations.values()
    }

    pub fn token(&self, id: TokenId) -> Option<&AuthToken> {
        self.tokens.get(&id).map(|t| &t.token)
    }

    fn clamp_by_profile(
        qos: &QosParameters,
        profile: &crate::nass::TransportQosProfile,
    ) -> QosParameters {
        let mut granted = qos.clone();
        granted.ul_bps = granted.ul_bps.min(profile.ul_subscribed_bps);
        granted.dl_bps = granted.dl_bps.min(profile.dl_subscribed_bps);
        granted.priority = granted.priority.min(profile.max_priority);
        granted
    }

    fn apply_clamp(granted: &mut QosParameters, ceiling: &ClampCeiling) {
        if let Some(ul) = ceiling.ul_bps {
            granted.ul_bps = granted.ul_bps.min(ul);
        }
        if let Some(dl) = ceiling.dl_bps {
            granted.dl_bps = granted.dl_bps.min(dl);
        }
        if let Some(p) = ceiling.priority {
            granted.priority = granted.priority.min(p);
        }
        if let Some(class) = ceiling.traffic_class {
            if granted.traffic_class.quality_rank() > class.quality_rank() {
                granted.traffic_class = class;
            }
        }
    }

    fn log_decision(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        request: &ResourceRequest,
        decision: &PolicyDecision,
    ) {
        let (granted, reason) = match &decision.verdict {
            Verdict::Admit => (Some(request.qos.clone()), None),
            Verdict::Modify { granted } => (Some(granted.clone()), None),
            Verdict::Reject { reason } => (None, Some(reason.clone())),
        };
        log.push(
            now,
            "authorize",
            format!(
                "session={};mode={};verdict={};rule={}",
                request.session_id,
                request.mode,
                decision.verdict_str(),
                decision.matched_rule.as_deref().unwrap_or("-"),
            ),
        );
        self.decision_log.push(DecisionEntry {
            time_ms: now.as_millis_f64(),
            session_id: request.session_id.clone(),
            mode: request.mode,
            verdict: decision.verdict_str().to_string(),
            matched_rule: decision.matched_rule.clone(),
            granted,
            reason,
        });
    }

    /// The policy decision function: consult NASS for the transport profile,
    /// clamp by subscription, evaluate the rule repository, emit a verdict.
    /// Deterministic for identical inputs.
    pub fn authorize(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        request: &ResourceRequest,
    ) -> Result<PolicyDecision, RacsError> {
        let view = nass
            .lookup_transport_profile(&LookupKey::ByIp(&request.src_ip))
            .map_err(|_| RacsError::NoActiveAttachment(request.src_ip.clone()))?;
        let clamped = Self::clamp_by_profile(&request.qos, view.qos_profile);
        let ctx = MatchContext {
            requestor_name: &view.qos_profile.requestor_name,
            media_type: request.media_type,
            traffic_class: clamped.traffic_class,
            access_network_type: &view.record.access_network_type,
            priority: clamped.priority,
            ul_bps: clamped.ul_bps,
            dl_bps: clamped.dl_bps,
        };
        let decision = match evaluate_rules(&self.rules, &ctx) {
            None => PolicyDecision {
                verdict: Verdict::Reject { reason: "default-deny".to_string() },
                matched_rule: None,
                token: None,
            },
            Some(rule) => match &rule.action {
                RuleAction::Deny => PolicyDecision {
                    verdict: Verdict::Reject { reason: format!("denied by rule {}", rule.rule_id) },
                    matched_rule: Some(rule.rule_id.clone()),
                    token: None,
                },
                RuleAction::Admit => {
                    PolicyDecision::from_granted(&request.qos, clamped, &rule.rule_id)
                }
                RuleAction::Clamp(ceiling) => {
                    let mut granted = clamped;
                    Self::apply_clamp(&mut granted, ceiling);
                    PolicyDecision::from_granted(&request.qos, granted, &rule.rule_id)
                }
            },
        };
        self.log_decision(now, log, request, &decision);
        Ok(decision)
    }

    fn resolve_path(
        &self,
        nass: &Nass,
        request: &ResourceRequest,
        path_hint: Option<&[String]>,
    ) -> Result<(Vec<PathHop>, GateId), RacsError> {
        let view = nass
            .lookup_transport_profile(&LookupKey::ByIp(&request.src_ip))
            .map_err(|_| RacsError::NoActiveAttachment(request.src_ip.clone()))?;
        let gate_id = view.gates.gate_id;
        let src_node = self
            .access_nodes
            .get(&view.record.access_network)
            .ok_or_else(|| RacsError::NoRoute(view.record.access_network.clone(), request.dst.clone()))?
            .clone();
        let topo = self.routing.topology();
        let hops = match path_hint {
            Some(ids) => {
                let mut hops = Vec::with_capacity(ids.len());
                let mut cur = src_node.clone();
                for id in ids {
                    let idx = topo
                        .link_index(id)
                        .ok_or_else(|| RacsError::NoRoute(cur.clone(), request.dst.clone()))?;
                    let link = &topo.links[idx];
                    let direction = if link.from == cur {
                        Direction::Fwd
                    } else if link.to == cur {
                        Direction::Rev
                    } else {
                        return Err(RacsError::NoRoute(cur, request.dst.clone()));
                    };
                    cur = if direction == Direction::Fwd {
                        link.to.clone()
                    } else {
                        link.from.clone()
                    };
                    hops.push(PathHop { link: idx, direction });
                }
                if cur != request.dst {
                    return Err(RacsError::NoRoute(cur, request.dst.clone()));
                }
                hops
            }
            None => self
                .routing
                .path(&src_node, &request.dst)
                .map_err(|e| match e {
                    TopologyError::NoRoute(a, b) => RacsError::NoRoute(a, b),
                    TopologyError::UnknownNode(n) => RacsError::NoRoute(src_node.clone(), n),
                })?
                .iter()
                .map(|h| PathHop { link: h.link, direction: h.direction })
                .collect(),
        };
        Ok((hops, gate_id))
    }

    fn do_reserve(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        request: &ResourceRequest,
        granted: &QosParameters,
        path_hint: Option<&[String]>,
    ) -> Result<ReservationRecord, RacsError> {
        let (path, gate_id) = self.resolve_path(nass, request, path_hint)?;
        self.next_reservation += 1;
        let record = ReservationRecord {
            reservation_id: ReservationId(self.next_reservation),
            session_id: request.session_id.clone(),
            path,
            traffic_class: granted.traffic_class,
            ul_bps: granted.ul_bps,
            dl_bps: granted.dl_bps,
            state: ReservationState::Reserved,
            src_ip: request.src_ip.clone(),
            dst: request.dst.clone(),
            gate_id,
            media_type: request.media_type,
            meter_id: None,
            flagged_for_release: false,
        };
        let entries = record.book_entries();
        self.ledger.try_book(&entries).map_err(|link| {
            RacsError::InsufficientCapacity(self.routing.topology().links[link].link_id.clone())
        })?;
        log.push(
            now,
            "reserve",
            format!(
                "session={};reservation={};class={};ul_bps={};dl_bps={};hops={}",
                record.session_id,
                record.reservation_id,
                record.traffic_class,
                record.ul_bps,
                record.dl_bps,
                record.path.len(),
            ),
        );
        self.reservations.insert(record.reservation_id, record.clone());
        Ok(record)
    }

    /// Book the granted capacity on every link of the route, all-or-nothing.
    pub fn reserve(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        request: &ResourceRequest,
        decision: &PolicyDecision,
        path_hint: Option<&[String]>,
    ) -> Result<ReservationRecord, RacsError> {
        let granted = decision.granted(&request.qos).ok_or(RacsError::NotAdmitted)?;
        self.do_reserve(now, log, nass, request, &granted, path_hint)
    }

    /// Atomically rebook an existing reservation at new parameters. The old
    /// reservation ends released and a fresh record is returned; enforcement
    /// swap (install new, then remove old) is the caller's next step.
    pub fn modify_reservation(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        old_id: ReservationId,
        request: &ResourceRequest,
        decision: &PolicyDecision,
    ) -> Result<ReservationRecord, RacsError> {
        let granted = decision.granted(&request.qos).ok_or(RacsError::NotAdmitted)?;
        let old = self
            .reservations
            .get(&old_id)
            .filter(|r| r.state != ReservationState::Released)
            .ok_or(RacsError::UnknownReservation(old_id))?
            .clone();
        self.next_reservation += 1;
        let new_record = ReservationRecord {
            reservation_id: ReservationId(self.next_reservation),
            session_id: request.session_id.clone(),
            path: old.path.clone(),
            traffic_class: granted.traffic_class,
            ul_bps: granted.ul_bps,
            dl_bps: granted.dl_bps,
            state: ReservationState::Reserved,
            src_ip: old.src_ip.clone(),
            dst: old.dst.clone(),
            gate_id: old.gate_id,
            media_type: old.media_type,
            meter_id: None,
            flagged_for_release: false,
        };
        self.ledger
            .try_rebook(&old.book_entries(), &new_record.book_entries())
            .map_err(|link| {
                self.next_reservation -= 1;
                RacsError::InsufficientCapacity(
                    self.routing.topology().links[link].link_id.clone(),
                )
            })?;
        // The old booking is now absorbed; mark it released so a later
        // release() is a no-op on the ledger.
        if let Some(old_mut) = self.reservations.get_mut(&old_id) {
            old_mut.state = ReservationState::Released;
        }
        log.push(
            now,
            "reserve",
            format!(
                "session={};reservation={};modifies={};class={};ul_bps={};dl_bps={}",
                new_record.session_id,
                new_record.reservation_id,
                old_id,
                new_record.traffic_class,
                new_record.ul_bps,
                new_record.dl_bps,
            ),
        );
        self.reservations.insert(new_record.reservation_id, new_record.clone());
        Ok(new_record)
    }

    /// Map granted QoS onto Layer 3/2 policy: codepoint marking, a token
    /// bucket at the granted rate with burst = max(one packet, 5 ms of the
    /// rate), and a gate opened toward the reserved destination.
    pub fn derive_traffic_policy(
        &mut self,
        reservation_id: ReservationId,
        granted: &QosParameters,
        gates: &GateSettings,
    ) -> Result<TrafficPolicy, RacsError> {
        let reservation = self
            .reservations
            .get_mut(&reservation_id)
            .ok_or(RacsError::UnknownReservation(reservation_id))?;
        self.next_meter += 1;
        let meter_id = MeterId(self.next_meter);
        reservation.meter_id = Some(meter_id);
        let policer = if granted.traffic_class.is_best_effort_family() || granted.ul_bps == 0 {
            None
        } else {
            Some(PolicerParams {
                rate_bps: granted.ul_bps,
                burst_bytes: (granted.ul_bps / 1_600).max(MAX_PACKET_BYTES as u64),
            })
        };
        Ok(TrafficPolicy {
            gate_id: gates.gate_id,
            classifier: Classifier {
                src_ip: reservation.src_ip.clone(),
                dst: reservation.dst.clone(),
                media: Some(reservation.media_type),
            },
            codepoint: class_to_codepoint(granted.traffic_class),
            policer,
            gate_open: true,
            gate_allowed_destinations: vec![reservation.dst.clone()],
            meter_id,
        })
    }

    /// Activate a policy on the ingress enforcement point; the reservation
    /// moves to installed and the meter starts from zero.
    pub fn install_policy(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        enforcement: &mut Enforcement,
        policy: TrafficPolicy,
    ) -> Result<MeterId, RacsError> {
        let reservation_id = self
            .reservations
            .values()
            .find(|r| r.meter_id == Some(policy.meter_id))
            .map(|r| r.reservation_id)
            .ok_or(RacsError::UnknownReservation(ReservationId(0)))?;
        let gate_id = policy.gate_id;
        let session = self.reservations[&reservation_id].session_id.clone();
        let meter =
            enforcement.install(policy).map_err(RacsError::UnknownGate)?;
        if let Some(r) = self.reservations.get_mut(&reservation_id) {
            r.state = ReservationState::Installed;
        }
        log.push(
            now,
            "install",
            format!("session={session};reservation={reservation_id};gate={gate_id};meter={meter}"),
        );
        Ok(meter)
    }

    /// Release a reservation: decrement the ledger along the path, remove
    /// the policy, let the gate fall back to its initial settings.
    /// Idempotent once released.
    pub fn release(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        enforcement: &mut Enforcement,
        reservation_id: ReservationId,
    ) -> Result<(), RacsError> {
        let record = self
            .reservations
            .get(&reservation_id)
            .ok_or(RacsError::UnknownReservation(reservation_id))?
            .clone();
        if record.state == ReservationState::Released {
            return Ok(());
        }
        self.ledger.release(&record.book_entries());
        if let Some(meter) = record.meter_id {
            enforcement.remove_policy(meter);
        }
        if let Some(r) = self.reservations.get_mut(&reservation_id) {
            r.state = ReservationState::Released;
        }
        log.push(
            now,
            "release",
            format!("session={};reservation={}", record.session_id, reservation_id),
        );
        Ok(())
    }

    /// Mark reservations bound to an attachment for release (detach path).
    pub fn flag_for_release(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        src_ip: &str,
    ) -> Vec<ReservationId> {
        let mut flagged = Vec::new();
        for r in self.reservations.values_mut() {
            if r.src_ip == src_ip && r.state != ReservationState::Released {
                r.flagged_for_release = true;
                flagged.push(r.reservation_id);
            }
        }
        for id in &flagged {
            log.push(now, "flag_release", format!("reservation={id}"));
        }
        flagged
    }

    /// Release everything previously flagged.
    pub fn process_flagged(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        enforcement: &mut Enforcement,
    ) -> Vec<ReservationId> {
        let flagged: Vec<ReservationId> = self
            .reservations
            .values()
            .filter(|r| r.flagged_for_release && r.state != ReservationState::Released)
            .map(|r| r.reservation_id)
            .collect();
        for id in &flagged {
            let _ = self.release(now, log, enforcement, *id);
        }
        flagged
    }

    /// Scenario 2: bind the granted parameters to a single-use token. A new
    /// token invalidates any previous token of the same session.
    pub fn issue_token(
        &mut self,
        now: SimTime,
        decision: &PolicyDecision,
        request: &ResourceRequest,
    ) -> Result<AuthToken, RacsError> {
        if request.mode != InitiationMode::Scenario2 {
            return Err(RacsError::WrongMode(request.mode));
        }
        let granted = decision.granted(&request.qos).ok_or(RacsError::NotAdmitted)?;
        if let Some(prev) = self.latest_token.get(&request.session_id) {
            if let Some(state) = self.tokens.get_mut(prev) {
                state.superseded = true;
            }
        }
        self.next_token += 1;
        let token = AuthToken {
            token_id: TokenId(self.next_token),
            session_id: request.session_id.clone(),
            granted,
            expires_at: now + TOKEN_TTL,
        };
        self.latest_token.insert(request.session_id.clone(), token.token_id);
        self.tokens.insert(
            token.token_id,
            TokenState { token: token.clone(), consumed: false, superseded: false },
        );
        Ok(token)
    }

    /// Scenario 2: the terminal presents its token to reserve. The token is
    /// consumed even when the reservation fails.
    pub fn reserve_with_token(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        request: &ResourceRequest,
        token_id: TokenId,
        path_hint: Option<&[String]>,
    ) -> Result<ReservationRecord, RacsError> {
        let state = self
            .tokens
            .get_mut(&token_id)
            .ok_or(RacsError::TokenReused(token_id))?;
        if state.consumed || state.superseded {
            return Err(RacsError::TokenReused(token_id));
        }
        if now >= state.token.expires_at {
            return Err(RacsError::TokenExpired(token_id));
        }
        state.consumed = true;
        let granted = state.token.granted.clone();
        self.do_reserve(now, log, nass, request, &granted, path_hint)
    }

    /// Scenario 3: resource request without prior service-layer
    /// authorization. Gated by operator policy; clamped by the NASS profile
    /// and the transport-layer rule repository only.
    pub fn reserve_unauthorized(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        request: &ResourceRequest,
        path_hint: Option<&[String]>,
    ) -> Result<(PolicyDecision, ReservationRecord), RacsError> {
        if request.mode != InitiationMode::Scenario3 {
            return Err(RacsError::WrongMode(request.mode));
        }
        if !self.allow_unauthorized_qos {
            let decision = PolicyDecision {
                verdict: Verdict::Reject { reason: "policy".to_string() },
                matched_rule: None,
                token: None,
            };
            self.log_decision(now, log, request, &decision);
            return Err(RacsError::PolicyForbidden);
        }
        let decision = self.authorize(now, log, nass, request)?;
        let granted = match decision.granted(&request.qos) {
            Some(g) => g,
            None => {
                let Verdict::Reject { reason } = &decision.verdict else { unreachable!() };
                return Err(RacsError::Rejected(reason.clone()));
            }
        };
        let record = self.do_reserve(now, log, nass, request, &granted, path_hint)?;
        Ok((decision, record))
    }
}
