//! Declarative scenario files: parsing and static validation.
//!
//! A scenario is one JSON document. Durations carry explicit units in key
//! names (`*_ms`, `*_bps`). Validation is not fail-fast: it collects every
//! problem it can find so a scenario author fixes one round, not twenty.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ims::{ServiceDefinition, ServiceProfile};
use crate::model::{
    InitiationMode, SubscriberId, TrafficClass, DEFAULT_EF_PRIORITY_FLOOR,
};
use crate::nass::{AccessNetworkConfig, GateTemplate, Subscription, TerminalProfile, TransportQosProfile};
use crate::qoe::QoeThresholds;
use crate::racs::PolicyRule;
use crate::transport::topology::Topology;
use crate::transport::{ArrivalPattern, MAX_PACKET_BYTES, MIN_PACKET_BYTES};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{} validation error(s)", .0.len())]
    Validation(Vec<Diagnostic>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

fn err(message: impl Into<String>) -> Diagnostic {
    Diagnostic { severity: Severity::Error, message: message.into() }
}

fn warn(message: impl Into<String>) -> Diagnostic {
    Diagnostic { severity: Severity::Warning, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: u64,
    #[serde(default = "default_ef_floor")]
    pub ef_priority_floor: u8,
}

fn default_ef_floor() -> u8 {
    DEFAULT_EF_PRIORITY_FLOOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubscriberConfig {
    pub subscriber_id: SubscriberId,
    pub credentials: String,
    pub transport_profile: TransportQosProfile,
    #[serde(default)]
    pub initial_gate: GateTemplate,
    #[serde(default)]
    pub location: String,
    pub terminal: TerminalProfile,
    pub service_profile: ServiceProfileConfig,
}

/// Service-layer profile as written in scenario files; turned into a
/// [`ServiceProfile`] at load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfileConfig {
    pub credentials: String,
    #[serde(default)]
    pub services: Vec<ServiceEntitlement>,
    #[serde(default)]
    pub content_entitlements: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceEntitlement {
    pub service: String,
    #[serde(default = "default_true")]
    pub allowed: bool,
    pub max_class: TrafficClass,
    pub max_priority: u8,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Policies {
    #[serde(default)]
    pub allow_unauthorized_qos: bool,
    #[serde(default)]
    pub rules: Vec<PolicyRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub time_ms: u64,
    #[serde(flatten)]
    pub action: EventAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventAction {
    Attach {
        subscriber: SubscriberId,
        access_network: String,
        physical_access_id: String,
        credentials: String,
    },
    Detach {
        subscriber: SubscriberId,
        physical_access_id: String,
    },
    Register {
        subscriber: SubscriberId,
        credentials: String,
    },
    InitiateSession {
        session_id: String,
        subscriber: SubscriberId,
        service: String,
        mode: InitiationMode,
        destination: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requested_point: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        source_ip: Option<String>,
    },
    Renegotiate {
        session_id: String,
        initiator: crate::ims::RenegotiationInitiator,
        new_point: usize,
    },
    Terminate {
        session_id: String,
    },
    UpdateLocation {
        subscriber: SubscriberId,
        physical_access_id: String,
        location: String,
    },
    BackgroundFlow {
        flow_id: String,
        src: String,
        dst: String,
        rate_bps: u64,
        packet_size_bytes: u32,
        traffic_class: TrafficClass,
        duration_ms: u64,
        #[serde(default)]
        pattern: ArrivalPattern,
    },
}

impl EventAction {
    pub fn kind_name(&self) -> &'static str {
        match self {
            EventAction::Attach { .. } => "attach",
            EventAction::Detach { .. } => "detach",
            EventAction::Register { .. } => "register",
            EventAction::InitiateSession { .. } => "initiate_session",
            EventAction::Renegotiate { .. } => "renegotiate",
            EventAction::Terminate { .. } => "terminate",
            EventAction::UpdateLocation { .. } => "update_location",
            EventAction::BackgroundFlow { .. } => "background_flow",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "default_format_version")]
    pub format_version: u32,
    pub meta: Meta,
    #[serde(default)]
    pub qoe: Option<QoeThresholds>,
    #[serde(default)]
    pub access_networks: Vec<AccessNetworkConfig>,
    #[serde(default)]
    pub subscribers: Vec<SubscriberConfig>,
    #[serde(default)]
    pub services: Vec<ServiceDefinition>,
    pub topology: Topology,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub events: Vec<ScenarioEvent>,
}

fn default_format_version() -> u32 {
    FORMAT_VERSION
}

/// Parse a scenario file; returns the scenario even when validation fails
/// only for warnings. Hard validation errors are collected, not fail-fast.
pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let scenario: Scenario = serde_json::from_str(&text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let diagnostics = scenario.validate();
    if diagnostics.iter().any(|d| d.severity == Severity::Error) {
        return Err(ScenarioError::Validation(diagnostics));
    }
    Ok(scenario)
}

impl Scenario {
    /// Build the NASS subscription store entries.
    pub fn subscriptions(&self) -> Vec<Subscription> {
        self.subscribers
            .iter()
            .map(|s| Subscription {
                subscriber_id: s.subscriber_id.clone(),
                credentials: s.credentials.clone(),
                qos_profile: s.transport_profile.clone(),
                initial_gate: s.initial_gate.clone(),
                location: s.location.clone(),
            })
            .collect()
    }

    /// Build the UPSF service profiles.
    pub fn service_profiles(&self) -> Vec<ServiceProfile> {
        self.subscribers
            .iter()
            .map(|s| ServiceProfile {
                subscriber_id: s.subscriber_id.clone(),
                credentials: s.service_profile.credentials.clone(),
                services: s
                    .service_profile
                    .services
                    .iter()
                    .map(|e| {
                        (
                            e.service.clone(),
                            crate::ims::ServiceAuthorization {
                                allowed: e.allowed,
                                max_class: e.max_class,
                                max_priority: e.max_priority,
                            },
                        )
                    })
                    .collect(),
                content_entitlements: s.service_profile.content_entitlements.clone(),
            })
            .collect()
    }

    /// Static checks. Collects everything; never stops at the first problem.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut diags = Vec::new();
        let floor = self.meta.ef_priority_floor;

        // Topology: unique ids, resolvable endpoints, sane numbers.
        let mut node_set = BTreeSet::new();
        for n in &self.topology.nodes {
            if !node_set.insert(n.as_str()) {
                diags.push(err(format!("duplicate node id {n}")));
            }
        }
        let mut link_first: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, l) in self.topology.links.iter().enumerate() {
            if let Some(first) = link_first.get(l.link_id.as_str()) {
                diags.push(err(format!(
                    "duplicate link id {} (definitions #{} and #{})",
                    l.link_id, first, i
                )));
            } else {
                link_first.insert(l.link_id.as_str(), i);
            }
            if !node_set.contains(l.from.as_str()) {
                diags.push(err(format!("link {} references unknown node {}", l.link_id, l.from)));
            }
            if !node_set.contains(l.to.as_str()) {
                diags.push(err(format!("link {} references unknown node {}", l.link_id, l.to)));
            }
            if l.capacity_bps == 0 {
                diags.push(err(format!("link {} has zero capacity", l.link_id)));
            }
            if l.queue_capacity_bytes < MAX_PACKET_BYTES as u64 {
                diags.push(err(format!(
                    "link {} queue capacity {} below one maximum packet",
                    l.link_id, l.queue_capacity_bytes
                )));
            }
            let shares = &l.class_shares;
            if shares.ef < 0.0 || shares.af < 0.0 || shares.be < 0.0 || shares.sum() > 1.0 + 1e-9 {
                diags.push(err(format!(
                    "link {} class shares must be non-negative and sum to <= 1",
                    l.link_id
                )));
            }
        }
        if !self.topology.is_connected() {
            diags.push(err("topology is not connected"));
        }

        // Access networks.
        let mut network_names = BTreeSet::new();
        for n in &self.access_networks {
            if !network_names.insert(n.name.as_str()) {
                diags.push(err(format!("duplicate access network {}", n.name)));
            }
            if !node_set.contains(n.node.as_str()) {
                diags.push(err(format!(
                    "access network {} references unknown node {}",
                    n.name, n.node
                )));
            }
            if n.ip_pool_size == 0 {
                diags.push(err(format!("access network {} has an empty address pool", n.name)));
            }
        }

        // Services.
        let mut service_names = BTreeSet::new();
        for s in &self.services {
            if !service_names.insert(s.name.as_str()) {
                diags.push(err(format!("duplicate service {}", s.name)));
            }
            if let Err(e) = s.validate() {
                diags.push(err(e));
            }
            if !(MIN_PACKET_BYTES..=MAX_PACKET_BYTES).contains(&s.packet_size_bytes) {
                diags.push(err(format!(
                    "service {} packet size {} outside {}..={} bytes",
                    s.name, s.packet_size_bytes, MIN_PACKET_BYTES, MAX_PACKET_BYTES
                )));
            }
            for (i, p) in s.operation_points.iter().enumerate() {
                if let Err(e) = p.validate(floor) {
                    diags.push(err(format!("service {} point {i}: {e}", s.name)));
                }
            }
        }

        // Subscribers.
        let mut subscriber_ids = BTreeSet::new();
        for s in &self.subscribers {
            if !subscriber_ids.insert(s.subscriber_id.as_str()) {
                diags.push(err(format!("duplicate subscriber {}", s.subscriber_id)));
            }
            if s.transport_profile.max_priority > 15 {
                diags.push(err(format!(
                    "subscriber {} max_priority {} out of range",
                    s.subscriber_id, s.transport_profile.max_priority
                )));
            }
            if let Err(e) = s.terminal.validate() {
                diags.push(err(format!("subscriber {} terminal: {e}", s.subscriber_id)));
            }
            if s.initial_gate.ul_default_bps > s.transport_profile.ul_subscribed_bps
                || s.initial_gate.dl_default_bps > s.transport_profile.dl_subscribed_bps
            {
                diags.push(err(format!(
                    "subscriber {} gate default bandwidth exceeds subscription",
                    s.subscriber_id
                )));
            }
            for e in &s.service_profile.services {
                if !service_names.contains(e.service.as_str()) {
                    diags.push(err(format!(
                        "subscriber {} subscribes unknown service {}",
                        s.subscriber_id, e.service
                    )));
                }
                if e.max_priority > 15 {
                    diags.push(err(format!(
                        "subscriber {} service {} max_priority out of range",
                        s.subscriber_id, e.service
                    )));
                }
            }
        }

        // Policy rules: unique precedence.
        let mut precedences = BTreeMap::new();
        for r in &self.policies.rules {
            if let Some(other) = precedences.insert(r.precedence, r.rule_id.as_str()) {
                diags.push(err(format!(
                    "rules {} and {} share precedence {}",
                    other, r.rule_id, r.precedence
                )));
            }
        }

        // Events: ordering, reference resolution, duration coverage.
        let mut last_time = 0u64;
        let mut sessions_defined = BTreeSet::new();
        let mut flow_ids = BTreeSet::new();
        for (i, ev) in self.events.iter().enumerate() {
            if ev.time_ms < last_time {
                diags.push(err(format!(
                    "event #{i} ({}) at {} ms is out of order",
                    ev.action.kind_name(),
                    ev.time_ms
                )));
            }
            last_time = last_time.max(ev.time_ms);
            if ev.time_ms > self.meta.duration_ms {
                diags.push(err(format!(
                    "event #{i} ({}) at {} ms is past the scenario duration {} ms",
                    ev.action.kind_name(),
                    ev.time_ms,
                    self.meta.duration_ms
                )));
            }
            match &ev.action {
                EventAction::Attach { subscriber, access_network, .. } => {
                    if !subscriber_ids.contains(subscriber.as_str()) {
                        diags.push(err(format!("event #{i}: unknown subscriber {subscriber}")));
                    }
                    if !network_names.contains(access_network.as_str()) {
                        diags.push(err(format!(
                            "event #{i}: unknown access network {access_network}"
                        )));
                    }
                }
                EventAction::Detach { subscriber, .. }
                | EventAction::Register { subscriber, .. }
                | EventAction::UpdateLocation { subscriber, .. } => {
                    if !subscriber_ids.contains(subscriber.as_str()) {
                        diags.push(err(format!("event #{i}: unknown subscriber {subscriber}")));
                    }
                }
                EventAction::InitiateSession { session_id, subscriber, service, destination, .. } => {
                    if !subscriber_ids.contains(subscriber.as_str()) {
                        diags.push(err(format!("event #{i}: unknown subscriber {subscriber}")));
                    }
                    if !service_names.contains(service.as_str()) {
                        diags.push(err(format!("event #{i}: unknown service {service}")));
                    }
                    if !node_set.contains(destination.as_str()) {
                        diags.push(err(format!("event #{i}: unknown destination {destination}")));
                    }
                    if !sessions_defined.insert(session_id.clone()) {
                        diags.push(err(format!("event #{i}: duplicate session id {session_id}")));
                    }
                    if !flow_ids.insert(session_id.clone()) {
                        diags.push(err(format!(
                            "event #{i}: session id {session_id} collides with a flow id"
                        )));
                    }
                }
                EventAction::Renegotiate { session_id, .. }
                | EventAction::Terminate { session_id } => {
                    if !sessions_defined.contains(session_id) {
                        diags.push(err(format!(
                            "event #{i}: session {session_id} is never initiated"
                        )));
                    }
                }
                EventAction::BackgroundFlow { flow_id, src, dst, rate_bps, packet_size_bytes, .. } => {
                    if !node_set.contains(src.as_str()) {
                        diags.push(err(format!("event #{i}: unknown source node {src}")));
                    }
                    if !node_set.contains(dst.as_str()) {
                        diags.push(err(format!("event #{i}: unknown destination node {dst}")));
                    }
                    if *rate_bps == 0 {
                        diags.push(err(format!("event #{i}: background flow rate must be positive")));
                    }
                    if !(MIN_PACKET_BYTES..=MAX_PACKET_BYTES).contains(packet_size_bytes) {
                        diags.push(err(format!(
                            "event #{i}: packet size {packet_size_bytes} outside {}..={} bytes",
                            MIN_PACKET_BYTES, MAX_PACKET_BYTES
                        )));
                    }
                    if !flow_ids.insert(flow_id.clone()) {
                        diags.push(err(format!("event #{i}: duplicate flow id {flow_id}")));
                    }
                }
            }
        }

        // Admissibility heuristic: total subscribed EF demand vs. the
        // largest per-link EF budget.
        let ef_demand: u64 = self
            .subscribers
            .iter()
            .filter(|s| s.transport_profile.transport_service_class == TrafficClass::Ef)
            .map(|s| s.transport_profile.ul_subscribed_bps)
            .sum();
        let max_ef_budget = self
            .topology
            .links
            .iter()
            .map(|l| (l.capacity_bps as f64 * l.class_shares.ef) as u64)
            .max()
            .unwrap_or(0);
        if ef_demand > 0 && ef_demand > max_ef_budget {
            diags.push(warn(format!(
                "subscribed EF demand {ef_demand} b/s exceeds every link's EF budget (max {max_ef_budget} b/s); \
                 simultaneous admission of all subscribers is impossible"
            )));
        }

        diags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_json() -> serde_json::Value {
        serde_json::json!({
            "meta": {"name": "minimal", "seed": 7, "duration_ms": 1000},
            "topology": {"nodes": ["a", "b"], "links": [
                {"link_id": "l1", "from": "a", "to": "b",
                 "capacity_bps": 1_000_000, "propagation_delay_ms": 1.0}
            ]},
            "events": []
        })
    }

    fn write_scenario(value: &serde_json::Value) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(serde_json::to_string_pretty(value).unwrap().as_bytes()).unwrap();
        f
    }

    #[test]
    fn minimal_scenario_parses_with_defaults() {
        let f = write_scenario(&minimal_json());
        let scenario = parse_scenario(f.path()).unwrap();
        assert_eq!(scenario.format_version, FORMAT_VERSION);
        assert_eq!(scenario.meta.ef_priority_floor, DEFAULT_EF_PRIORITY_FLOOR);
        assert!(scenario.validate().is_empty());
        assert_eq!(scenario.topology.links[0].queue_capacity_bytes, 30_000);
        assert!(!scenario.policies.allow_unauthorized_qos);
    }

    #[test]
    fn unknown_service_reference_is_reported_with_event_index() {
        let mut v = minimal_json();
        v["subscribers"] = serde_json::json!([]);
        v["events"] = serde_json::json!([
            {"time_ms": 0, "kind": "initiate_session", "session_id": "s1",
             "subscriber": "ghost", "service": "nope", "mode": "scenario1",
             "destination": "b"}
        ]);
        let f = write_scenario(&v);
        match parse_scenario(f.path()) {
            Err(ScenarioError::Validation(diags)) => {
                assert!(diags.iter().any(|d| d.message.contains("event #0")
                    && d.message.contains("unknown service nope")));
                assert!(diags.iter().any(|d| d.message.contains("unknown subscriber ghost")));
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_link_reports_both_definitions() {
        let mut v = minimal_json();
        v["topology"]["links"] = serde_json::json!([
            {"link_id": "l1", "from": "a", "to": "b", "capacity_bps": 1_000_000,
             "propagation_delay_ms": 1.0},
            {"link_id": "l1", "from": "b", "to": "a", "capacity_bps": 1_000_000,
             "propagation_delay_ms": 1.0}
        ]);
        let f = write_scenario(&v);
        match parse_scenario(f.path()) {
            Err(ScenarioError::Validation(diags)) => {
                let d = diags.iter().find(|d| d.message.contains("duplicate link id l1")).unwrap();
                assert!(d.message.contains("#0") && d.message.contains("#1"), "{}", d.message);
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn out_of_order_events_are_errors() {
        let mut v = minimal_json();
        v["events"] = serde_json::json!([
            {"time_ms": 500, "kind": "register", "subscriber": "alice", "credentials": "x"},
            {"time_ms": 100, "kind": "register", "subscriber": "alice", "credentials": "x"}
        ]);
        v["subscribers"] = serde_json::json!([]);
        let f = write_scenario(&v);
        match parse_scenario(f.path()) {
            Err(ScenarioError::Validation(diags)) => {
                assert!(diags.iter().any(|d| d.message.contains("out of order")));
            }
            other => panic!("expected validation failure, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_carries_line_number() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(b"{\n  \"meta\": {\n").unwrap();
        match parse_scenario(f.path()) {
            Err(ScenarioError::Parse { line, .. }) => assert!(line >= 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn ef_overcommit_is_a_warning_not_an_error() {
        let mut v = minimal_json();
        v["access_networks"] = serde_json::json!([
            {"name": "dsl", "network_type": "dsl", "realm": "acc", "node": "a",
             "ip_pool_start": "10.0.0.1", "ip_pool_size": 8}
        ]);
        v["subscribers"] = serde_json::json!([{
            "subscriber_id": "alice", "credentials": "pw",
            "transport_profile": {
                "transport_service_class": "EF", "requestor_name": "alice@x",
                "max_priority": 12, "media_type": "voice",
                "ul_subscribed_bps": 50_000_000, "dl_subscribed_bps": 50_000_000
            },
            "terminal": {
                "hardware": {"model": "m"},
                "connectivity": {"supported_interfaces": ["eth0"], "current_interface": "eth0",
                                  "dl_capability_bps": 1, "ul_capability_bps": 1},
                "software": {},
                "user_preferences": {"desired_quality": "EF", "acceptable_quality": "BE"}
            },
            "service_profile": {"credentials": "pw", "services": []}
        }]);
        let f = write_scenario(&v);
        let scenario = parse_scenario(f.path()).unwrap();
        let diags = scenario.validate();
        assert!(diags.iter().any(|d| d.severity == Severity::Warning
            && d.message.contains("EF demand")));
        assert!(diags.iter().all(|d| d.severity != Severity::Error));
    }

    #[test]
    fn event_roundtrip_through_serde() {
        let ev = ScenarioEvent {
            time_ms: 5,
            action: EventAction::BackgroundFlow {
                flow_id: "bg1".into(),
                src: "a".into(),
                dst: "b".into(),
                rate_bps: 1000,
                packet_size_bytes: 500,
                traffic_class: TrafficClass::Af { class: 2, precedence: 1 },
                duration_ms: 100,
                pattern: ArrivalPattern::OnOff { on_ms: 10, off_ms: 20 },
            },
        };
        let json = serde_json::to_string(&ev).unwrap();
        assert!(json.contains("\"kind\":\"background_flow\""));
        assert!(json.contains("\"AF21\""));
        let back: ScenarioEvent = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ev);
    }
}
