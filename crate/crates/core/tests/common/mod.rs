//! Shared fixtures for the integration and acceptance suites.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use ngnsim_core::eventlog::EventLog;
use ngnsim_core::ims::{Ims, ServiceAuthorization, ServiceDefinition, ServiceProfile};
use ngnsim_core::model::{
    CastMode, FlowDirectionality, MediaType, QosParameters, SimTime, SubscriberId, Symmetry,
    TrafficClass, TrafficPattern,
};
use ngnsim_core::nass::{
    AccessNetworkConfig, ConnectivityInfo, GateTemplate, HardwareInfo, Nass, SoftwareInfo,
    Subscription, TerminalProfile, TransportQosProfile, UserPreferences,
};
use ngnsim_core::racs::{PolicyRule, Racs, RuleAction, RuleMatch};
use ngnsim_core::runner::{run_scenario, RunReport};
use ngnsim_core::scenario::{parse_scenario, Scenario};
use ngnsim_core::transport::topology::{ClassShares, LinkDef, Routing, Topology};

pub fn scenario_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn load_scenario(name: &str) -> Scenario {
    parse_scenario(&scenario_dir().join(name)).expect("scenario parses")
}

pub fn run_named(name: &str, out: Option<&std::path::Path>) -> RunReport {
    let scenario = load_scenario(name);
    run_scenario(&scenario, out, None).expect("run completes")
}

pub fn qos(class: TrafficClass, ul: u64, dl: u64, priority: u8) -> QosParameters {
    QosParameters {
        traffic_class: class,
        ul_bps: ul,
        dl_bps: dl,
        max_delay_ms: None,
        max_loss: None,
        max_jitter_ms: None,
        priority,
        pattern: TrafficPattern {
            directionality: FlowDirectionality::Bidirectional,
            symmetry: if ul == dl { Symmetry::Symmetric } else { Symmetry::Asymmetric },
            cast: CastMode::Unicast,
        },
    }
}

pub fn terminal() -> TerminalProfile {
    TerminalProfile {
        hardware: HardwareInfo { model: "test-tp".into(), ..Default::default() },
        connectivity: ConnectivityInfo {
            supported_interfaces: vec!["eth0".into()],
            current_interface: "eth0".into(),
            dl_capability_bps: 1_000_000_000,
            ul_capability_bps: 1_000_000_000,
        },
        software: SoftwareInfo::default(),
        user_preferences: UserPreferences {
            desired_quality: TrafficClass::Ef,
            acceptable_quality: TrafficClass::BestEffort,
            time_budget_constraints: String::new(),
        },
    }
}

pub fn admit_all_rule(precedence: u32) -> PolicyRule {
    PolicyRule {
        rule_id: format!("admit-{precedence}"),
        precedence,
        action: RuleAction::Admit,
        matcher: RuleMatch::default(),
    }
}

pub fn chain_link(id: &str, from: &str, to: &str, capacity_bps: u64) -> LinkDef {
    LinkDef {
        link_id: id.into(),
        from: from.into(),
        to: to.into(),
        capacity_bps,
        propagation_delay_ms: 1.0,
        queue_capacity_bytes: 30_000,
        segment: "core".into(),
        class_shares: ClassShares::default(),
    }
}

/// A linear topology n0 - n1 - ... - n{links}; link li joins ni and n{i+1}.
pub fn chain_topology(links: usize, capacity_bps: u64) -> Topology {
    let nodes: Vec<String> = (0..=links).map(|i| format!("n{i}")).collect();
    let link_defs = (0..links)
        .map(|i| chain_link(&format!("l{i}"), &format!("n{i}"), &format!("n{i}"), capacity_bps))
        .collect::<Vec<_>>();
    let mut link_defs = link_defs;
    for (i, l) in link_defs.iter_mut().enumerate() {
        l.from = format!("n{i}");
        l.to = format!("n{}", i + 1);
    }
    Topology { nodes, links: link_defs }
}

/// Full control-plane stack over a chain: a subscriber attached at every
/// node through its own access network, an admit-all policy, ample
/// subscription.
pub struct ApiStack {
    pub nass: Nass,
    pub ims: Ims,
    pub racs: Racs,
    pub enforcement: ngnsim_core::transport::enforcement::Enforcement,
    pub log: EventLog,
    pub routing: Arc<Routing>,
}

pub fn api_stack(
    topology: Topology,
    rules: Vec<PolicyRule>,
    allow_unauthorized: bool,
    subscribed_bps: u64,
    services: Vec<ServiceDefinition>,
) -> ApiStack {
    let routing = Arc::new(Routing::new(topology.clone()));
    let mut nass = Nass::new();
    let mut access_nodes = BTreeMap::new();
    for (i, node) in topology.nodes.iter().enumerate() {
        let network = format!("an{i}");
        nass.add_access_network(AccessNetworkConfig {
            name: network.clone(),
            network_type: "dsl".into(),
            realm: format!("realm-{i}"),
            node: node.clone(),
            racs_contact: "racs-0".into(),
            ip_pool_start: format!("10.0.{i}.1"),
            ip_pool_size: 32,
        })
        .unwrap();
        access_nodes.insert(network, node.clone());
    }
    let mut ims = Ims::new();
    for service in services {
        ims.add_service(service);
    }
    for (i, _) in topology.nodes.iter().enumerate() {
        let sid = SubscriberId::new(format!("sub{i}"));
        nass.add_subscription(Subscription {
            subscriber_id: sid.clone(),
            credentials: "pw".into(),
            qos_profile: TransportQosProfile {
                transport_service_class: TrafficClass::Ef,
                requestor_name: format!("sub{i}@test"),
                max_priority: 12,
                media_type: MediaType::Voice,
                ul_subscribed_bps: subscribed_bps,
                dl_subscribed_bps: subscribed_bps,
            },
            initial_gate: GateTemplate::default(),
            location: "cell".into(),
        });
        let mut profile = ServiceProfile {
            subscriber_id: sid,
            credentials: "sip".into(),
            services: BTreeMap::new(),
            content_entitlements: vec![],
        };
        for s in ims.services() {
            profile.services.insert(
                s.name.clone(),
                ServiceAuthorization {
                    allowed: true,
                    max_class: TrafficClass::Ef,
                    max_priority: 15,
                },
            );
        }
        ims.add_profile(profile);
    }
    let racs = Racs::new(rules, allow_unauthorized, Arc::clone(&routing), access_nodes);
    ApiStack {
        nass,
        ims,
        racs,
        enforcement: ngnsim_core::transport::enforcement::Enforcement::new(),
        log: EventLog::new(),
        routing,
    }
}

impl ApiStack {
    /// Attach subscriber `i` at node `n{i}` and register them with IMS.
    pub fn attach_and_register(&mut self, i: usize) -> String {
        let sid = SubscriberId::new(format!("sub{i}"));
        let record = self
            .nass
            .attach(SimTime::ZERO, &sid, &format!("an{i}"), "p1", terminal(), "pw")
            .expect("attach")
            .clone();
        self.enforcement.register_gate(record.initial_gates.clone());
        self.ims.register_user(SimTime::ZERO, &mut self.log, &sid, "sip").expect("register");
        record.globally_unique_ip
    }
}

/// Aggregate (sent, delivered, dropped) per flow out of a rendered event
/// log: the independent re-aggregation oracle for report reconciliation.
pub fn aggregate_log(log_text: &str) -> BTreeMap<String, (u64, u64, u64)> {
    let mut counts: BTreeMap<String, (u64, u64, u64)> = BTreeMap::new();
    for line in log_text.lines() {
        let mut fields = line.split(' ');
        let _time = fields.next();
        let kind = fields.next().unwrap_or("");
        let flow = fields.next().unwrap_or("-");
        if flow == "-" {
            continue;
        }
        let entry = counts.entry(flow.to_string()).or_default();
        match kind {
            "send" => entry.0 += 1,
            "deliver" => entry.1 += 1,
            "drop" => entry.2 += 1,
            _ => {}
        }
    }
    counts
}
