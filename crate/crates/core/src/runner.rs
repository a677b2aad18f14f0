//! Scenario execution: wires NASS, IMS, RACS and the transport engine onto
//! one event loop, dispatches scenario events, and writes the run outputs
//! (`events.log`, `flows.csv`, `sessions.json`) atomically at the end.
//!
//! Session rejections are results, not errors: a run that rejects every
//! session still exits cleanly and reports why.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::ims::{Ims, SessionRecord, SessionRequest, SessionState};
use crate::model::{FlowId, GateId, MeterId, SessionId, SimTime};
use crate::nass::Nass;
use crate::qoe::{self, QoeReport, QoeThresholds};
use crate::racs::{DecisionEntry, LedgerSnapshot, Racs};
use crate::scenario::{EventAction, Scenario};
use crate::transport::engine::{Engine, Step};
use crate::transport::topology::{Direction, Routing};
use crate::transport::{ArrivalPattern, FlowIngress, FlowMetrics, FlowSpec};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario is invalid: {0:?}")]
    InvalidScenario(Vec<crate::scenario::Diagnostic>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    #[serde(flatten)]
    pub session: SessionRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qoe: Option<QoeReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub flow_id: FlowId,
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub delivered_bytes: u64,
    pub throughput_bps: f64,
    pub loss: f64,
    pub mean_delay_ms: f64,
    pub jitter_ms: f64,
}

impl From<&FlowMetrics> for FlowSummary {
    fn from(m: &FlowMetrics) -> Self {
        FlowSummary {
            flow_id: m.flow_id.clone(),
            sent: m.sent,
            delivered: m.delivered,
            dropped: m.dropped,
            in_flight: m.in_flight,
            delivered_bytes: m.delivered_bytes,
            throughput_bps: m.throughput_bps,
            loss: m.loss,
            mean_delay_ms: m.mean_delay_ms,
            jitter_ms: m.jitter_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateCounter {
    pub gate_id: GateId,
    pub drops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterCounter {
    pub meter_id: MeterId,
    pub gate_id: GateId,
    pub conformant_packets: u64,
    pub conformant_bytes: u64,
    pub excess_packets: u64,
    pub excess_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkCounterReport {
    pub link_id: String,
    pub direction: String,
    pub tx_packets: u64,
    pub tx_bytes: u64,
    pub drops: u64,
    pub max_ef_queueing_ms: f64,
    pub ef_queueing_bound_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub format_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub duration_ms: u64,
    pub sessions: Vec<SessionReport>,
    pub flows: Vec<FlowSummary>,
    pub decisions: Vec<DecisionEntry>,
    pub ledger: Vec<LedgerSnapshot>,
    pub gates: Vec<GateCounter>,
    pub meters: Vec<MeterCounter>,
    pub links: Vec<LinkCounterReport>,
    /// Times a link sat idle with a non-empty queue; zero by construction.
    pub work_conservation_violations: u64,
}

/// The assembled stack for one run.
struct Stack {
    nass: Nass,
    ims: Ims,
    racs: Racs,
    engine: Engine,
    /// access network name -> injection node
    access_nodes: BTreeMap<String, String>,
    terminals: BTreeMap<crate::model::SubscriberId, crate::nass::TerminalProfile>,
    thresholds: QoeThresholds,
}

fn build(scenario: &Scenario, seed: u64) -> Stack {
    let routing = Arc::new(Routing::new(scenario.topology.clone()));
    let mut nass = Nass::new();
    for n in &scenario.access_networks {
        nass.add_access_network(n.clone()).expect("validated pool start");
    }
    for sub in scenario.subscriptions() {
        nass.add_subscription(sub);
    }
    let mut ims = Ims::new();
    for profile in scenario.service_profiles() {
        ims.add_profile(profile);
    }
    for service in &scenario.services {
        ims.add_service(service.clone());
    }
    let access_nodes: BTreeMap<String, String> = scenario
        .access_networks
        .iter()
        .map(|n| (n.name.clone(), n.node.clone()))
        .collect();
    let racs = Racs::new(
        scenario.policies.rules.clone(),
        scenario.policies.allow_unauthorized_qos,
        Arc::clone(&routing),
        access_nodes.clone(),
    );
    let engine = Engine::new(routing, seed, SimTime::from_millis(scenario.meta.duration_ms));
    let terminals = scenario
        .subscribers
        .iter()
        .map(|s| (s.subscriber_id.clone(), s.terminal.clone()))
        .collect();
    Stack {
        nass,
        ims,
        racs,
        engine,
        access_nodes,
        terminals,
        thresholds: scenario.qoe.unwrap_or_default(),
    }
}

/// Start (or restart bookkeeping for) the media flow of a newly active
/// session. The flow runs from the terminal toward the destination at the
/// chosen operation point's uplink rate; a downlink-only grant sends
/// pre-marked traffic from the far end instead.
fn start_session_flow(stack: &mut Stack, record: &SessionRecord, now: SimTime) {
    let Some(point_idx) = record.chosen_point else { return };
    let service = stack.ims.service(&record.service).expect("validated service").clone();
    let point = &service.operation_points[point_idx];
    let src_ip = record.source_ip.clone().expect("active session has an attachment");
    let granted = record.granted.as_ref().expect("active session carries a grant");
    let view = stack
        .nass
        .lookup_transport_profile(&crate::nass::LookupKey::ByIp(&src_ip))
        .expect("attachment is active");
    let gate = view.gates.gate_id;
    let src_node = stack.access_nodes[&view.record.access_network].clone();

    let flow_id = FlowId::new(record.session_id.as_str());
    if point.ul_bps > 0 {
        let spec = FlowSpec {
            flow_id,
            src: src_ip,
            dst: record.destination.clone(),
            packet_size_bytes: service.packet_size_bytes,
            rate_bps: point.ul_bps,
            pattern: ArrivalPattern::Constant,
            trace: None,
        };
        let ingress = FlowIngress::Gated { gate_hint: gate, media: service.media_type };
        let _ = stack.engine.add_flow(spec, ingress, &src_node, now, None);
    } else {
        // Downlink-only service: the far end sources pre-marked traffic.
        let spec = FlowSpec {
            flow_id,
            src: record.destination.clone(),
            dst: src_node.clone(),
            packet_size_bytes: service.packet_size_bytes,
            rate_bps: point.dl_bps,
            pattern: ArrivalPattern::Constant,
            trace: None,
        };
        let ingress = FlowIngress::Marked { class: granted.traffic_class };
        let _ = stack.engine.add_flow(spec, ingress, &record.destination, now, None);
    }
}

fn dispatch(stack: &mut Stack, now: SimTime, action: &EventAction) {
    match action {
        EventAction::Attach { subscriber, access_network, physical_access_id, credentials } => {
            let terminal = stack.terminals.get(subscriber).cloned().unwrap_or_else(|| {
                default_terminal_for(&stack.nass, subscriber)
            });
            match stack.nass.attach(
                now,
                subscriber,
                access_network,
                physical_access_id,
                terminal,
                credentials,
            ) {
                Ok(record) => {
                    let gates = record.initial_gates.clone();
                    let ip = record.globally_unique_ip.clone();
                    stack.engine.net.enforcement.register_gate(gates.clone());
                    stack.engine.net.log.push(
                        now,
                        "attach",
                        format!(
                            "subscriber={subscriber};network={access_network};ip={ip};gate={};result=ok",
                            gates.gate_id
                        ),
                    );
                }
                Err(e) => stack.engine.net.log.push(
                    now,
                    "attach",
                    format!("subscriber={subscriber};network={access_network};result=error;error={e}"),
                ),
            }
        }
        EventAction::Detach { subscriber, physical_access_id } => {
            match stack.nass.detach(subscriber, physical_access_id) {
                Ok(record) => {
                    let ip = record.globally_unique_ip.clone();
                    stack
                        .engine
                        .net
                        .log
                        .push(now, "detach", format!("subscriber={subscriber};ip={ip};result=ok"));
                    // Reservations referencing the attachment are flagged,
                    // then released by resource control.
                    let sessions = stack.ims.sessions_for_attachment(&ip);
                    let net = &mut stack.engine.net;
                    stack.racs.flag_for_release(now, &mut net.log, &ip);
                    stack.racs.process_flagged(now, &mut net.log, &mut net.enforcement);
                    for session in sessions {
                        stack.ims.mark_terminated(now, &mut stack.engine.net.log, &session);
                        let _ = stack.engine.stop_flow(&FlowId::new(session.as_str()));
                    }
                    stack.engine.net.enforcement.remove_gate(record.initial_gates.gate_id);
                }
                Err(e) => stack
                    .engine
                    .net
                    .log
                    .push(now, "detach", format!("subscriber={subscriber};result=error;error={e}")),
            }
        }
        EventAction::Register { subscriber, credentials } => {
            let net = &mut stack.engine.net;
            if let Err(e) = stack.ims.register_user(now, &mut net.log, subscriber, credentials) {
                net.log.push(now, "register", format!("subscriber={subscriber};result=error;error={e}"));
            }
        }
        EventAction::InitiateSession {
            session_id,
            subscriber,
            service,
            mode,
            destination,
            requested_point,
            source_ip,
        } => {
            let request = SessionRequest {
                session_id: SessionId::new(session_id.as_str()),
                subscriber_id: subscriber.clone(),
                service: service.clone(),
                mode: *mode,
                destination: destination.clone(),
                requested_point: *requested_point,
                source_ip: source_ip.clone(),
            };
            let net = &mut stack.engine.net;
            let outcome = stack.ims.initiate_session(
                now,
                &mut net.log,
                &stack.nass,
                &mut stack.racs,
                &mut net.enforcement,
                request,
            );
            if let Ok(record) = outcome {
                if record.state == SessionState::Active {
                    start_session_flow(stack, &record, now);
                }
            }
            // Failures already logged with a stage tag by the pipeline.
        }
        EventAction::Renegotiate { session_id, initiator, new_point } => {
            let id = SessionId::new(session_id.as_str());
            let net = &mut stack.engine.net;
            let outcome = stack.ims.renegotiate(
                now,
                &mut net.log,
                &stack.nass,
                &mut stack.racs,
                &mut net.enforcement,
                &id,
                *initiator,
                *new_point,
            );
            if let Ok(record) = outcome {
                let service = stack.ims.service(&record.service).expect("validated").clone();
                let point = &service.operation_points[record.chosen_point.expect("active")];
                let rate = if point.ul_bps > 0 { point.ul_bps } else { point.dl_bps };
                let _ = stack.engine.set_flow_rate(&FlowId::new(session_id.as_str()), rate);
            }
        }
        EventAction::Terminate { session_id } => {
            let id = SessionId::new(session_id.as_str());
            let net = &mut stack.engine.net;
            let _ = stack.ims.terminate_session(
                now,
                &mut net.log,
                &mut stack.racs,
                &mut net.enforcement,
                &id,
            );
            let _ = stack.engine.stop_flow(&FlowId::new(session_id.as_str()));
        }
        EventAction::UpdateLocation { subscriber, physical_access_id, location } => {
            match stack.nass.update_location(now, subscriber, physical_access_id, location) {
                Ok(_) => stack
                    .engine
                    .net
                    .log
                    .push(now, "location", format!("subscriber={subscriber};location={location}")),
                Err(e) => stack
                    .engine
                    .net
                    .log
                    .push(now, "location", format!("subscriber={subscriber};result=error;error={e}")),
            }
        }
        EventAction::BackgroundFlow {
            flow_id,
            src,
            dst,
            rate_bps,
            packet_size_bytes,
            traffic_class,
            duration_ms,
            pattern,
        } => {
            let spec = FlowSpec {
                flow_id: FlowId::new(flow_id.as_str()),
                src: src.clone(),
                dst: dst.clone(),
                packet_size_bytes: *packet_size_bytes,
                rate_bps: *rate_bps,
                pattern: pattern.clone(),
                trace: None,
            };
            let stop = now + SimTime::from_millis(*duration_ms);
            match stack.engine.add_flow(
                spec,
                FlowIngress::Marked { class: *traffic_class },
                src,
                now,
                Some(stop),
            ) {
                Ok(()) => stack.engine.net.log.push(
                    now,
                    "flow_start",
                    format!("flow={flow_id};class={traffic_class};rate_bps={rate_bps}"),
                ),
                Err(e) => stack
                    .engine
                    .net
                    .log
                    .push(now, "flow_start", format!("flow={flow_id};result=error;error={e}")),
            }
        }
    }
}

/// Terminal profile used when a scenario attach omits one: derived from the
/// subscription so the record stays self-consistent.
fn default_terminal_for(nass: &Nass, subscriber: &crate::model::SubscriberId) -> crate::nass::TerminalProfile {
    use crate::nass::*;
    let class = nass
        .subscription(subscriber)
        .map(|s| s.qos_profile.transport_service_class)
        .unwrap_or(crate::model::TrafficClass::BestEffort);
    TerminalProfile {
        hardware: HardwareInfo { model: "generic-tp".into(), ..Default::default() },
        connectivity: ConnectivityInfo {
            supported_interfaces: vec!["eth0".into()],
            current_interface: "eth0".into(),
            dl_capability_bps: 1_000_000_000,
            ul_capability_bps: 1_000_000_000,
        },
        software: SoftwareInfo::default(),
        user_preferences: UserPreferences {
            desired_quality: class,
            acceptable_quality: crate::model::TrafficClass::BestEffort,
            time_budget_constraints: String::new(),
        },
    }
}

/// Execute a validated scenario. Writes `events.log`, `flows.csv` and
/// `sessions.json` into `out_dir` when given.
pub fn run_scenario(
    scenario: &Scenario,
    out_dir: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<RunReport, RunnerError> {
    let diagnostics = scenario.validate();
    if diagnostics.iter().any(|d| d.severity == crate::scenario::Severity::Error) {
        return Err(RunnerError::InvalidScenario(diagnostics));
    }
    let seed = seed_override.unwrap_or(scenario.meta.seed);
    let mut stack = build(scenario, seed);

    for (i, ev) in scenario.events.iter().enumerate() {
        stack.engine.schedule_control(SimTime::from_millis(ev.time_ms), i);
    }
    while let Step::Control { time, index } = stack.engine.step() {
        let action = scenario.events[index].action.clone();
        dispatch(&mut stack, time, &action);
    }

    let report = assemble_report(scenario, seed, &mut stack);
    if let Some(dir) = out_dir {
        write_outputs(dir, &stack.engine.net.log, &report, &stack)?;
    }
    Ok(report)
}

fn assemble_report(scenario: &Scenario, seed: u64, stack: &mut Stack) -> RunReport {
    let duration_ms = scenario.meta.duration_ms;
    let flow_ids: Vec<FlowId> = stack.engine.net.flow_ids().cloned().collect();
    let mut metrics: BTreeMap<FlowId, FlowMetrics> = BTreeMap::new();
    for id in &flow_ids {
        if let Ok(m) = stack.engine.collect_metrics(id, 0, duration_ms) {
            metrics.insert(id.clone(), m);
        }
    }

    let mut sessions = Vec::new();
    for record in stack.ims.sessions() {
        let media = stack
            .ims
            .service(&record.service)
            .map(|s| s.media_type)
            .unwrap_or(crate::model::MediaType::DataBulk);
        let qoe = metrics
            .get(&FlowId::new(record.session_id.as_str()))
            .and_then(|m| {
                qoe::qoe_report(record.session_id.clone(), m, media, &stack.thresholds).ok()
            });
        sessions.push(SessionReport { session: record.clone(), qoe });
    }
    sessions.sort_by(|a, b| a.session.session_id.cmp(&b.session.session_id));

    let flows: Vec<FlowSummary> = metrics.values().map(FlowSummary::from).collect();

    let gates: Vec<GateCounter> = stack
        .engine
        .net
        .enforcement
        .all_gate_counters()
        .into_iter()
        .map(|(gate_id, drops)| GateCounter { gate_id, drops })
        .collect();
    let meters: Vec<MeterCounter> = stack
        .engine
        .net
        .enforcement
        .all_meters()
        .into_iter()
        .map(|(p, m)| MeterCounter {
            meter_id: p.meter_id,
            gate_id: p.gate_id,
            conformant_packets: m.conformant_packets,
            conformant_bytes: m.conformant_bytes,
            excess_packets: m.excess_packets,
            excess_bytes: m.excess_bytes,
        })
        .collect();

    let topo = stack.engine.net.routing.topology().clone();
    let mut links = Vec::new();
    for (i, link) in topo.links.iter().enumerate() {
        for dir in [Direction::Fwd, Direction::Rev] {
            let c = stack.engine.net.link_counters(i, dir);
            links.push(LinkCounterReport {
                link_id: link.link_id.clone(),
                direction: dir.as_str().to_string(),
                tx_packets: c.tx_packets,
                tx_bytes: c.tx_bytes,
                drops: c.drops_total(),
                max_ef_queueing_ms: stack.engine.net.max_ef_queueing(i, dir).as_millis_f64(),
                ef_queueing_bound_ms: stack.engine.net.ef_queueing_bound(i).as_millis_f64(),
            });
        }
    }

    RunReport {
        format_version: crate::scenario::FORMAT_VERSION,
        scenario: scenario.meta.name.clone(),
        seed,
        duration_ms,
        sessions,
        flows,
        decisions: stack.racs.decision_log().to_vec(),
        ledger: stack.racs.ledger().snapshot(),
        gates,
        meters,
        links,
        work_conservation_violations: stack.engine.net.work_conservation_violations(),
    }
}

fn atomic_write(dir: &Path, name: &str, contents: &[u8]) -> Result<(), RunnerError> {
    let final_path = dir.join(name);
    let tmp_path = dir.join(format!(".{name}.tmp"));
    let io = |source| RunnerError::Io { path: final_path.display().to_string(), source };
    let mut f = std::fs::File::create(&tmp_path).map_err(io)?;
    f.write_all(contents).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp_path, &final_path).map_err(io)?;
    Ok(())
}

fn write_outputs(
    dir: &Path,
    log: &EventLog,
    report: &RunReport,
    stack: &Stack,
) -> Result<(), RunnerError> {
    std::fs::create_dir_all(dir).map_err(|source| RunnerError::Io {
        path: dir.display().to_string(),
        source,
    })?;

    atomic_write(dir, "events.log", log.render().as_bytes())?;

    // flows.csv: one row per flow per second.
    let mut csv = String::from(
        "flow_id,second,sent,delivered,dropped,loss,mean_delay_ms,jitter_ms,throughput_bps\n",
    );
    let flow_ids: Vec<FlowId> = stack.engine.net.flow_ids().cloned().collect();
    for id in &flow_ids {
        if let Ok(m) = stack.engine.collect_metrics(id, 0, report.duration_ms) {
            for s in &m.per_second {
                csv.push_str(&format!(
                    "{},{},{},{},{},{:.6},{:.6},{:.6},{:.3}\n",
                    id, s.second, s.sent, s.delivered, s.dropped, s.loss, s.mean_delay_ms,
                    s.jitter_ms, s.throughput_bps
                ));
            }
        }
    }
    atomic_write(dir, "flows.csv", csv.as_bytes())?;

    let json = serde_json::to_string_pretty(report).expect("report serializes");
    atomic_write(dir, "sessions.json", json.as_bytes())?;
    Ok(())
}

/// Parse + static checks only; no simulation.
pub fn validate_file(path: &Path) -> Result<Vec<crate::scenario::Diagnostic>, crate::scenario::ScenarioError> {
    match crate::scenario::parse_scenario(path) {
        Ok(scenario) => Ok(scenario.validate()),
        Err(crate::scenario::ScenarioError::Validation(diags)) => Ok(diags),
        Err(e) => Err(e),
    }
}

/// Load a previously written report.
pub fn load_report(out_dir: &Path) -> Result<RunReport, RunnerError> {
    let path = out_dir.join("sessions.json");
    let text = std::fs::read_to_string(&path).map_err(|source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RunnerError::Io {
        path: path.display().to_string(),
        source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
    })
}
