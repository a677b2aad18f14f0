//! Service-layer session control: registration against the UPSF profile
//! repository, the session state machine, QoS requirement derivation,
//! operation-point selection, renegotiation and teardown.
//!
//! A session walks authenticating -> authorizing_resources -> reserving ->
//! active, with renegotiating as a loop on active; any stage may divert to
//! rejected with a stage-tagged reason. No resource-control request is ever
//! issued for a session that failed service-layer authorization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eventlog::EventLog;
use crate::model::{
    InitiationMode, MediaType, QosParameters, ReservationId, SessionId, SimTime, SubscriberId,
    TrafficClass,
};
use crate::nass::{LookupKey, Nass, TransportQosProfile};
use crate::racs::{Racs, RacsError, ResourceRequest, Verdict};
use crate::transport::enforcement::Enforcement;

/// Registrations live this long unless refreshed.
pub const REGISTRATION_TTL: SimTime = SimTime(3600 * 1_000_000_000);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ImsError {
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(SubscriberId),
    #[error("authentication failed for {0}")]
    AuthenticationFailed(SubscriberId),
    #[error("subscriber {0} is not registered")]
    NotRegistered(SubscriberId),
    #[error("subscriber {0} has no active attachment")]
    NotAttached(SubscriberId),
    #[error("service {0} is not subscribed or not allowed")]
    ServiceNotSubscribed(String),
    #[error("unknown service {0}")]
    UnknownService(String),
    #[error("no operation point fits the constraints")]
    NoFeasiblePoint,
    #[error("resources rejected: {0}")]
    ResourcesRejected(String),
    #[error("session {0} already exists")]
    DuplicateSession(SessionId),
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
    #[error("session {0} is not active")]
    SessionNotActive(SessionId),
    #[error("service {0} is not renegotiable")]
    NotRenegotiable(String),
}

/// Per-service entitlement inside a subscriber's service profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceAuthorization {
    pub allowed: bool,
    pub max_class: TrafficClass,
    pub max_priority: u8,
}

/// The UPSF profile repository entry for one subscriber.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceProfile {
    pub subscriber_id: SubscriberId,
    pub credentials: String,
    pub services: BTreeMap<String, ServiceAuthorization>,
    #[serde(default)]
    pub content_entitlements: Vec<String>,
}

/// A catalog entry: ordered operation points, best first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceDefinition {
    pub name: String,
    pub media_type: MediaType,
    pub operation_points: Vec<QosParameters>,
    pub renegotiable: bool,
    /// Packet size used when generating this service's media flow.
    #[serde(default = "default_packet_size")]
    pub packet_size_bytes: u32,
}

fn default_packet_size() -> u32 {
    512
}

impl ServiceDefinition {
    /// Structural checks: non-empty, bandwidths non-increasing (dl, then
    /// ul), one traffic pattern throughout.
    pub fn validate(&self) -> Result<(), String> {
        if self.operation_points.is_empty() {
            return Err(format!("service {} has no operation points", self.name));
        }
        let pattern = self.operation_points[0].pattern;
        for pair in self.operation_points.windows(2) {
            if (pair[1].dl_bps, pair[1].ul_bps) > (pair[0].dl_bps, pair[0].ul_bps) {
                return Err(format!(
                    "service {} operation points are not ordered best-first",
                    self.name
                ));
            }
        }
        if self.operation_points.iter().any(|p| p.pattern != pattern) {
            return Err(format!(
                "service {} operation points mix traffic patterns",
                self.name
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Authenticating,
    AuthorizingResources,
    Reserving,
    Active,
    Renegotiating,
    Terminated,
    Rejected,
}

impl SessionState {
    pub fn as_str(self) -> &'static str {
        match self {
            SessionState::Authenticating => "authenticating",
            SessionState::AuthorizingResources => "authorizing_resources",
            SessionState::Reserving => "reserving",
            SessionState::Active => "active",
            SessionState::Renegotiating => "renegotiating",
            SessionState::Terminated => "terminated",
            SessionState::Rejected => "rejected",
        }
    }
}

/// Which pipeline stage rejected a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectStage {
    Authentication,
    ServiceAuthorization,
    QosDerivation,
    PolicyDecision,
    Reservation,
    OperationPoint,
}

impl RejectStage {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectStage::Authentication => "authentication",
            RejectStage::ServiceAuthorization => "service_authorization",
            RejectStage::QosDerivation => "qos_derivation",
            RejectStage::PolicyDecision => "policy_decision",
            RejectStage::Reservation => "reservation",
            RejectStage::OperationPoint => "operation_point",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: SessionId,
    pub subscriber_id: SubscriberId,
    pub service: String,
    pub state: SessionState,
    pub initiation_mode: InitiationMode,
    pub destination: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_point: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservation: Option<ReservationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granted: Option<QosParameters>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_stage: Option<RejectStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reject_reason: Option<String>,
    /// Source IP of the attachment the session is bound to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_ip: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Registration {
    pub expires_at: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenegotiationInitiator {
    EndUser,
    Network,
    Service,
}

impl RenegotiationInitiator {
    pub fn as_str(self) -> &'static str {
        match self {
            RenegotiationInitiator::EndUser => "end_user",
            RenegotiationInitiator::Network => "network",
            RenegotiationInitiator::Service => "service",
        }
    }
}

/// Clamp an operation point by the service authorization and the NASS
/// transport profile. Class and priority downgrade in place; a bandwidth
/// clamp that would starve the point forces the next lower point instead.
pub fn derive_qos_requirements(
    service: &ServiceDefinition,
    point: usize,
    auth: &ServiceAuthorization,
    nass_profile: &TransportQosProfile,
) -> Result<(usize, QosParameters), ImsError> {
    let max_priority = auth.max_priority.min(nass_profile.max_priority);
    for idx in point..service.operation_points.len() {
        let candidate = &service.operation_points[idx];
        if candidate.ul_bps > nass_profile.ul_subscribed_bps
            || candidate.dl_bps > nass_profile.dl_subscribed_bps
        {
            continue; // subscribed bandwidth cannot carry this point
        }
        let mut qos = candidate.clone();
        if qos.traffic_class.quality_rank() > auth.max_class.quality_rank() {
            qos.traffic_class = auth.max_class;
        }
        qos.priority = qos.priority.min(max_priority);
        return Ok((idx, qos));
    }
    Err(ImsError::NoFeasiblePoint)
}

fn grant_satisfies(point: &QosParameters, granted: &QosParameters) -> bool {
    granted.traffic_class.quality_rank() >= point.traffic_class.quality_rank()
        && granted.ul_bps >= point.ul_bps
        && granted.dl_bps >= point.dl_bps
        && granted.priority >= point.priority
}

/// The highest-quality (lowest-index) operation point whose every
/// requirement the grant satisfies.
pub fn determine_operation_point(
    service: &ServiceDefinition,
    granted: &QosParameters,
) -> Result<usize, ImsError> {
    service
        .operation_points
        .iter()
        .position(|p| grant_satisfies(p, granted))
        .ok_or(ImsError::NoFeasiblePoint)
}

/// Arguments for starting one session.
#[derive(Debug, Clone)]
pub struct SessionRequest {
    pub session_id: SessionId,
    pub subscriber_id: SubscriberId,
    pub service: String,
    pub mode: InitiationMode,
    pub destination: String,
    pub requested_point: Option<usize>,
    /// Pins the attachment when a subscriber has several.
    pub source_ip: Option<String>,
}

#[derive(Debug, Default)]
pub struct Ims {
    profiles: BTreeMap<SubscriberId, ServiceProfile>,
    catalog: BTreeMap<String, ServiceDefinition>,
    registrations: BTreeMap<SubscriberId, Registration>,
    sessions: BTreeMap<SessionId, SessionRecord>,
}

impl Ims {
    pub fn new() -> Self {
        Ims::default()
    }

    pub fn add_profile(&mut self, profile: ServiceProfile) {
        self.profiles.insert(profile.subscriber_id.clone(), profile);
    }

    pub fn add_service(&mut self, service: ServiceDefinition) {
        self.catalog.insert(service.name.clone(), service);
    }

    pub fn service(&self, name: &str) -> Option<&ServiceDefinition> {
        self.catalog.get(name)
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceDefinition> {
        self.catalog.values()
    }

    pub fn profile(&self, subscriber: &SubscriberId) -> Option<&ServiceProfile> {
        self.profiles.get(subscriber)
    }

    pub fn session(&self, id: &SessionId) -> Option<&SessionRecord> {
        self.sessions.get(id)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &SessionRecord> {
        self.sessions.values()
    }

    pub fn registration(&self, subscriber: &SubscriberId) -> Option<Registration> {
        self.registrations.get(subscriber).copied()
    }

    pub fn is_registered(&self, now: SimTime, subscriber: &SubscriberId) -> bool {
        self.registrations.get(subscriber).is_some_and(|r| r.expires_at > now)
    }

    /// AAA against the UPSF. Re-registration refreshes the expiry.
    pub fn register_user(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        subscriber: &SubscriberId,
        credentials: &str,
    ) -> Result<Registration, ImsError> {
        let profile = self
            .profiles
            .get(subscriber)
            .ok_or_else(|| ImsError::UnknownSubscriber(subscriber.clone()))?;
        if profile.credentials != credentials {
            return Err(ImsError::AuthenticationFailed(subscriber.clone()));
        }
        let registration = Registration { expires_at: now + REGISTRATION_TTL };
        self.registrations.insert(subscriber.clone(), registration);
        log.push(
            now,
            "register",
            format!("subscriber={subscriber};expires_ms={}", registration.expires_at),
        );
        Ok(registration)
    }

    fn log_state(&self, now: SimTime, log: &mut EventLog, id: &SessionId, state: SessionState) {
        log.push(now, "session", format!("session={id};state={}", state.as_str()));
    }

    fn reject(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        id: &SessionId,
        stage: RejectStage,
        reason: String,
    ) {
        if let Some(s) = self.sessions.get_mut(id) {
            s.state = SessionState::Rejected;
            s.reject_stage = Some(stage);
            s.reject_reason = Some(reason.clone());
        }
        log.push(
            now,
            "session",
            format!("session={id};state=rejected;stage={};reason={reason}", stage.as_str()),
        );
    }

    /// Resolve the attachment a session should bind to.
    fn resolve_attachment(
        &self,
        nass: &Nass,
        request: &SessionRequest,
    ) -> Result<(String, TransportQosProfile, crate::nass::GateSettings, String), ImsError> {
        let view = match &request.source_ip {
            Some(ip) => nass
                .lookup_transport_profile(&LookupKey::ByIp(ip))
                .map_err(|_| ImsError::NotAttached(request.subscriber_id.clone()))?,
            None => nass
                .lookup_transport_profile(&LookupKey::BySubscriber(&request.subscriber_id))
                .map_err(|_| ImsError::NotAttached(request.subscriber_id.clone()))?,
        };
        Ok((
            view.record.globally_unique_ip.clone(),
            view.qos_profile.clone(),
            view.gates.clone(),
            view.record.access_network.clone(),
        ))
    }

    /// The end-to-end setup pipeline: UPSF authorization, QoS derivation,
    /// policy decision and reservation (per initiation mode), operation
    /// point selection, policy installation. When capacity rejects one
    /// point the next lower one is attempted.
    #[allow(clippy::too_many_arguments)]
    pub fn initiate_session(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        racs: &mut Racs,
        enforcement: &mut Enforcement,
        request: SessionRequest,
    ) -> Result<SessionRecord, ImsError> {
        if self.sessions.contains_key(&request.session_id) {
            return Err(ImsError::DuplicateSession(request.session_id));
        }
        let id = request.session_id.clone();
        self.sessions.insert(
            id.clone(),
            SessionRecord {
                session_id: id.clone(),
                subscriber_id: request.subscriber_id.clone(),
                service: request.service.clone(),
                state: SessionState::Authenticating,
                initiation_mode: request.mode,
                destination: request.destination.clone(),
                chosen_point: None,
                reservation: None,
                granted: None,
                reject_stage: None,
                reject_reason: None,
                source_ip: None,
            },
        );
        self.log_state(now, log, &id, SessionState::Authenticating);

        if !self.is_registered(now, &request.subscriber_id) {
            let err = ImsError::NotRegistered(request.subscriber_id.clone());
            self.reject(now, log, &id, RejectStage::Authentication, err.to_string());
            return Err(err);
        }
        let (src_ip, nass_profile, gates, _network) =
            match self.resolve_attachment(nass, &request) {
                Ok(v) => v,
                Err(err) => {
                    self.reject(now, log, &id, RejectStage::Authentication, err.to_string());
                    return Err(err);
                }
            };
        if let Some(s) = self.sessions.get_mut(&id) {
            s.source_ip = Some(src_ip.clone());
        }

        let service = match self.catalog.get(&request.service) {
            Some(s) => s.clone(),
            None => {
                let err = ImsError::UnknownService(request.service.clone());
                self.reject(now, log, &id, RejectStage::ServiceAuthorization, err.to_string());
                return Err(err);
            }
        };

        // Service-layer authorization precedes any resource-control
        // request; scenario 3 skips it and goes to RACS directly.
        let auth = if request.mode == InitiationMode::Scenario3 {
            ServiceAuthorization { allowed: true, max_class: TrafficClass::Ef, max_priority: 15 }
        } else {
            let profile = &self.profiles[&request.subscriber_id];
            match profile.services.get(&request.service) {
                Some(a) if a.allowed => a.clone(),
                _ => {
                    let err = ImsError::ServiceNotSubscribed(request.service.clone());
                    self.reject(now, log, &id, RejectStage::ServiceAuthorization, err.to_string());
                    return Err(err);
                }
            }
        };

        if let Some(s) = self.sessions.get_mut(&id) {
            s.state = SessionState::AuthorizingResources;
        }
        self.log_state(now, log, &id, SessionState::AuthorizingResources);

        let start_point = request.requested_point.unwrap_or(0);
        if start_point >= service.operation_points.len() {
            let err = ImsError::NoFeasiblePoint;
            self.reject(now, log, &id, RejectStage::QosDerivation, "requested point out of range".into());
            return Err(err);
        }

        let mut point = start_point;
        let mut logged_reserving = false;
        loop {
            // (b) derive QoS requirements for the current candidate point.
            let (attempted, qos) = match if request.mode == InitiationMode::Scenario3 {
                // No service-layer clamping; the terminal asks for the raw point.
                Ok((point, service.operation_points[point].clone()))
            } else {
                derive_qos_requirements(&service, point, &auth, &nass_profile)
            } {
                Ok(v) => v,
                Err(err) => {
                    self.reject(now, log, &id, RejectStage::QosDerivation, err.to_string());
                    return Err(err);
                }
            };

            let resource_request = ResourceRequest {
                session_id: id.clone(),
                subscriber_id: request.subscriber_id.clone(),
                src_ip: src_ip.clone(),
                dst: request.destination.clone(),
                media_type: service.media_type,
                qos,
                mode: request.mode,
            };

            // (c) policy decision plus reservation, per initiation mode.
            let reserve_result = match request.mode {
                InitiationMode::Scenario1 | InitiationMode::Scenario2 => {
                    let decision =
                        match racs.authorize(now, log, nass, &resource_request) {
                            Ok(d) => d,
                            Err(e) => {
                                let err = ImsError::ResourcesRejected(e.to_string());
                                self.reject(now, log, &id, RejectStage::PolicyDecision, e.to_string());
                                return Err(err);
                            }
                        };
                    if let Verdict::Reject { reason } = &decision.verdict {
                        let err = ImsError::ResourcesRejected(reason.clone());
                        self.reject(now, log, &id, RejectStage::PolicyDecision, reason.clone());
                        return Err(err);
                    }
                    if !logged_reserving {
                        if let Some(s) = self.sessions.get_mut(&id) {
                            s.state = SessionState::Reserving;
                        }
                        self.log_state(now, log, &id, SessionState::Reserving);
                        logged_reserving = true;
                    }
                    let granted = decision.granted(&resource_request.qos).expect("positive verdict");
                    let reserved = match request.mode {
                        InitiationMode::Scenario1 => {
                            racs.reserve(now, log, nass, &resource_request, &decision, None)
                        }
                        InitiationMode::Scenario2 => {
                            // The terminal receives a token and reserves itself.
                            match racs.issue_token(now, &decision, &resource_request) {
                                Ok(token) => racs.reserve_with_token(
                                    now,
                                    log,
                                    nass,
                                    &resource_request,
                                    token.token_id,
                                    None,
                                ),
                                Err(e) => Err(e),
                            }
                        }
                        InitiationMode::Scenario3 => unreachable!(),
                    };
                    reserved.map(|r| (granted, r))
                }
                InitiationMode::Scenario3 => {
                    if !logged_reserving {
                        if let Some(s) = self.sessions.get_mut(&id) {
                            s.state = SessionState::Reserving;
                        }
                        self.log_state(now, log, &id, SessionState::Reserving);
                        logged_reserving = true;
                    }
                    racs.reserve_unauthorized(now, log, nass, &resource_request, None).map(
                        |(decision, reserved)| {
                            let granted =
                                decision.granted(&resource_request.qos).expect("reserved implies grant");
                            (granted, reserved)
                        },
                    )
                }
            };

            match reserve_result {
                Ok((granted, reservation)) => {
                    // (d) final feasible operation point from the grant.
                    let chosen = match determine_operation_point(&service, &granted) {
                        Ok(c) => c,
                        Err(err) => {
                            let _ = racs.release(now, log, enforcement, reservation.reservation_id);
                            self.reject(now, log, &id, RejectStage::OperationPoint, err.to_string());
                            return Err(err);
                        }
                    };
                    // (e) confirm: derive and install the traffic policy.
                    let policy = racs
                        .derive_traffic_policy(reservation.reservation_id, &granted, &gates)
                        .expect("fresh reservation");
                    if let Err(e) = racs.install_policy(now, log, enforcement, policy) {
                        let _ = racs.release(now, log, enforcement, reservation.reservation_id);
                        let err = ImsError::ResourcesRejected(e.to_string());
                        self.reject(now, log, &id, RejectStage::Reservation, e.to_string());
                        return Err(err);
                    }
                    let record = self.sessions.get_mut(&id).expect("inserted above");
                    record.state = SessionState::Active;
                    record.chosen_point = Some(chosen);
                    record.reservation = Some(reservation.reservation_id);
                    record.granted = Some(granted);
                    log.push(
                        now,
                        "session",
                        format!(
                            "session={id};state=active;point={chosen};mode={}",
                            request.mode
                        ),
                    );
                    return Ok(record.clone());
                }
                Err(RacsError::InsufficientCapacity(link)) => {
                    // Counter-offer: try the next lower operation point.
                    point = attempted + 1;
                    if point >= service.operation_points.len() {
                        let err = ImsError::ResourcesRejected(format!(
                            "insufficient capacity on link {link}"
                        ));
                        self.reject(now, log, &id, RejectStage::Reservation, err.to_string());
                        return Err(err);
                    }
                    log.push(
                        now,
                        "session",
                        format!("session={id};retry_lower_point={point};blocked_link={link}"),
                    );
                }
                Err(e) => {
                    let stage = match e {
                        RacsError::PolicyForbidden | RacsError::Rejected(_) => {
                            RejectStage::PolicyDecision
                        }
                        _ => RejectStage::Reservation,
                    };
                    let err = ImsError::ResourcesRejected(e.to_string());
                    self.reject(now, log, &id, stage, e.to_string());
                    return Err(err);
                }
            }
        }
    }

    /// Swap a session onto a different operation point with no enforcement
    /// gap: new booking and policy go in before the old policy is removed.
    /// On failure the session keeps its current point and stays active.
    #[allow(clippy::too_many_arguments)]
    pub fn renegotiate(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        nass: &Nass,
        racs: &mut Racs,
        enforcement: &mut Enforcement,
        session_id: &SessionId,
        initiator: RenegotiationInitiator,
        new_point: usize,
    ) -> Result<SessionRecord, ImsError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ImsError::UnknownSession(session_id.clone()))?
            .clone();
        if session.state != SessionState::Active {
            return Err(ImsError::SessionNotActive(session_id.clone()));
        }
        let service = self
            .catalog
            .get(&session.service)
            .ok_or_else(|| ImsError::UnknownService(session.service.clone()))?
            .clone();
        if !service.renegotiable {
            return Err(ImsError::NotRenegotiable(session.service.clone()));
        }
        let src_ip = session.source_ip.clone().expect("active session has an attachment");
        let view = nass
            .lookup_transport_profile(&LookupKey::ByIp(&src_ip))
            .map_err(|_| ImsError::NotAttached(session.subscriber_id.clone()))?;
        let nass_profile = view.qos_profile.clone();
        let gates = view.gates.clone();
        let auth = match session.initiation_mode {
            InitiationMode::Scenario3 => ServiceAuthorization {
                allowed: true,
                max_class: TrafficClass::Ef,
                max_priority: 15,
            },
            _ => self.profiles[&session.subscriber_id]
                .services
                .get(&session.service)
                .cloned()
                .ok_or_else(|| ImsError::ServiceNotSubscribed(session.service.clone()))?,
        };

        if let Some(s) = self.sessions.get_mut(session_id) {
            s.state = SessionState::Renegotiating;
        }
        log.push(
            now,
            "session",
            format!(
                "session={session_id};state=renegotiating;initiator={};point={new_point}",
                initiator.as_str()
            ),
        );

        let restore_active = |ims: &mut Ims| {
            if let Some(s) = ims.sessions.get_mut(session_id) {
                s.state = SessionState::Active;
            }
        };

        let (_, qos) = match derive_qos_requirements(&service, new_point, &auth, &nass_profile) {
            Ok(v) => v,
            Err(e) => {
                restore_active(self);
                log.push(now, "session", format!("session={session_id};state=active;renegotiation=failed"));
                return Err(e);
            }
        };
        let resource_request = ResourceRequest {
            session_id: session_id.clone(),
            subscriber_id: session.subscriber_id.clone(),
            src_ip: src_ip.clone(),
            dst: session.destination.clone(),
            media_type: service.media_type,
            qos,
            mode: session.initiation_mode,
        };
        let decision = match racs.authorize(now, log, nass, &resource_request) {
            Ok(d) if d.is_positive() => d,
            Ok(d) => {
                restore_active(self);
                let Verdict::Reject { reason } = d.verdict else { unreachable!() };
                log.push(now, "session", format!("session={session_id};state=active;renegotiation=failed"));
                return Err(ImsError::ResourcesRejected(reason));
            }
            Err(e) => {
                restore_active(self);
                log.push(now, "session", format!("session={session_id};state=active;renegotiation=failed"));
                return Err(ImsError::ResourcesRejected(e.to_string()));
            }
        };
        let granted = decision.granted(&resource_request.qos).expect("positive verdict");
        let chosen = match determine_operation_point(&service, &granted) {
            Ok(c) => c,
            Err(e) => {
                restore_active(self);
                log.push(now, "session", format!("session={session_id};state=active;renegotiation=failed"));
                return Err(e);
            }
        };
        let old_reservation = session.reservation.expect("active session has a reservation");
        let old_meter = racs
            .reservation(old_reservation)
            .and_then(|r| r.meter_id)
            .expect("active session has an installed policy");
        let new_reservation = match racs.modify_reservation(
            now,
            log,
            old_reservation,
            &resource_request,
            &decision,
        ) {
            Ok(r) => r,
            Err(e) => {
                restore_active(self);
                log.push(now, "session", format!("session={session_id};state=active;renegotiation=failed"));
                return Err(ImsError::ResourcesRejected(e.to_string()));
            }
        };
        // No-gap swap: install the new policy first, then retire the old.
        let policy = racs
            .derive_traffic_policy(new_reservation.reservation_id, &granted, &gates)
            .expect("fresh reservation");
        racs.install_policy(now, log, enforcement, policy)
            .expect("gate exists for an active session");
        enforcement.remove_policy(old_meter);
        log.push(now, "policy_removed", format!("session={session_id};meter={old_meter}"));

        let record = self.sessions.get_mut(session_id).expect("checked above");
        record.state = SessionState::Active;
        record.chosen_point = Some(chosen);
        record.reservation = Some(new_reservation.reservation_id);
        record.granted = Some(granted);
        log.push(
            now,
            "session",
            format!("session={session_id};state=active;point={chosen};renegotiated=true"),
        );
        Ok(record.clone())
    }

    /// Tear a session down; the reservation is released and gates fall back
    /// to initial settings. Idempotent on already-terminal sessions.
    pub fn terminate_session(
        &mut self,
        now: SimTime,
        log: &mut EventLog,
        racs: &mut Racs,
        enforcement: &mut Enforcement,
        session_id: &SessionId,
    ) -> Result<SessionRecord, ImsError> {
        let session = self
            .sessions
            .get(session_id)
            .ok_or_else(|| ImsError::UnknownSession(session_id.clone()))?
            .clone();
        match session.state {
            SessionState::Terminated | SessionState::Rejected => Ok(session),
            _ => {
                if let Some(reservation) = session.reservation {
                    let _ = racs.release(now, log, enforcement, reservation);
                }
                let record = self.sessions.get_mut(session_id).expect("present");
                record.state = SessionState::Terminated;
                record.reservation = None;
                record.chosen_point = None;
                log.push(now, "session", format!("session={session_id};state=terminated"));
                Ok(record.clone())
            }
        }
    }

    /// Mark every session bound to an attachment as terminated (detach
    /// path; reservations are flagged and released on the RACS side).
    pub fn sessions_for_attachment(&self, src_ip: &str) -> Vec<SessionId> {
        self.sessions
            .values()
            .filter(|s| {
                s.source_ip.as_deref() == Some(src_ip)
                    && matches!(
                        s.state,
                        SessionState::Active | SessionState::Renegotiating | SessionState::Reserving
                    )
            })
            .map(|s| s.session_id.clone())
            .collect()
    }

    pub fn mark_terminated(&mut self, now: SimTime, log: &mut EventLog, session_id: &SessionId) {
        if let Some(s) = self.sessions.get_mut(session_id) {
            s.state = SessionState::Terminated;
            s.reservation = None;
            log.push(
                now,
                "session",
                format!("session={session_id};state=terminated;reason=attachment_lost"),
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CastMode, FlowDirectionality, Symmetry, TrafficPattern};
    use crate::nass::{
        AccessNetworkConfig, ConnectivityInfo, GateTemplate, HardwareInfo, SoftwareInfo,
        Subscription, TerminalProfile, UserPreferences,
    };
    use crate::racs::{PolicyRule, RuleAction, RuleMatch};
    use crate::transport::topology::{ClassShares, LinkDef, Routing, Topology};
    use std::sync::Arc;

    fn qos(class: TrafficClass, ul: u64, dl: u64, priority: u8) -> QosParameters {
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

    fn video_service() -> ServiceDefinition {
        ServiceDefinition {
            name: "video-stream".into(),
            media_type: MediaType::Video,
            operation_points: vec![
                qos(TrafficClass::Af { class: 1, precedence: 1 }, 4_000_000, 4_000_000, 9),
                qos(TrafficClass::Af { class: 1, precedence: 1 }, 1_500_000, 1_500_000, 9),
                qos(TrafficClass::Af { class: 2, precedence: 1 }, 800_000, 800_000, 8),
            ],
            renegotiable: true,
            packet_size_bytes: 1200,
        }
    }

    fn auth(max_class: TrafficClass, max_priority: u8) -> ServiceAuthorization {
        ServiceAuthorization { allowed: true, max_class, max_priority }
    }

    fn nass_profile(ul: u64, dl: u64, max_priority: u8) -> TransportQosProfile {
        TransportQosProfile {
            transport_service_class: TrafficClass::Ef,
            requestor_name: "alice@home".into(),
            max_priority,
            media_type: MediaType::Video,
            ul_subscribed_bps: ul,
            dl_subscribed_bps: dl,
        }
    }

    #[test]
    fn derive_identity_when_nothing_clamps() {
        let service = video_service();
        let profile = nass_profile(10_000_000, 10_000_000, 15);
        let (idx, q) =
            derive_qos_requirements(&service, 0, &auth(TrafficClass::Ef, 15), &profile).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(q, service.operation_points[0]);
    }

    #[test]
    fn derive_downgrades_class_and_priority() {
        let mut service = video_service();
        service.operation_points[0].traffic_class = TrafficClass::Ef;
        service.operation_points[0].priority = 12;
        let profile = nass_profile(10_000_000, 10_000_000, 10);
        let af1 = TrafficClass::Af { class: 1, precedence: 1 };
        let (idx, q) = derive_qos_requirements(&service, 0, &auth(af1, 15), &profile).unwrap();
        assert_eq!(idx, 0);
        assert_eq!(q.traffic_class, af1);
        assert_eq!(q.priority, 10); // NASS max_priority binds
    }

    #[test]
    fn derive_bandwidth_clamp_forces_next_lower_point() {
        // Subscribed 2 Mb/s, points demand {4, 1.5} Mb/s -> point 1.
        let service = video_service();
        let profile = nass_profile(2_000_000, 2_000_000, 15);
        let (idx, q) =
            derive_qos_requirements(&service, 0, &auth(TrafficClass::Ef, 15), &profile).unwrap();
        assert_eq!(idx, 1);
        assert_eq!(q.ul_bps, 1_500_000);
        // Brute-force oracle: scan every point against the clamp.
        let oracle = service
            .operation_points
            .iter()
            .position(|p| p.ul_bps <= 2_000_000 && p.dl_bps <= 2_000_000)
            .unwrap();
        assert_eq!(idx, oracle);
    }

    #[test]
    fn derive_fails_when_nothing_fits() {
        let service = video_service();
        let profile = nass_profile(100_000, 100_000, 15);
        assert_eq!(
            derive_qos_requirements(&service, 0, &auth(TrafficClass::Ef, 15), &profile),
            Err(ImsError::NoFeasiblePoint)
        );
    }

    #[test]
    fn determine_point_matches_linear_scan_oracle() {
        let service = video_service();
        // Exact match for point 0.
        let grant0 = service.operation_points[0].clone();
        assert_eq!(determine_operation_point(&service, &grant0), Ok(0));
        // Grant 1 Mb/s: only the 0.8 Mb/s point fits -> index 2.
        let grant = qos(TrafficClass::Af { class: 1, precedence: 1 }, 1_000_000, 1_000_000, 9);
        assert_eq!(determine_operation_point(&service, &grant), Ok(2));
        // Oracle: first index whose every requirement the grant covers.
        let oracle = service
            .operation_points
            .iter()
            .position(|p| {
                grant.traffic_class.quality_rank() >= p.traffic_class.quality_rank()
                    && grant.ul_bps >= p.ul_bps
                    && grant.dl_bps >= p.dl_bps
                    && grant.priority >= p.priority
            })
            .unwrap();
        assert_eq!(oracle, 2);
        // Grant below the last point: no feasible set.
        let tiny = qos(TrafficClass::BestEffort, 10_000, 10_000, 0);
        assert_eq!(determine_operation_point(&service, &tiny), Err(ImsError::NoFeasiblePoint));
    }

    // -- full pipeline fixtures ---------------------------------------------

    struct Stack {
        ims: Ims,
        nass: Nass,
        racs: Racs,
        enforcement: Enforcement,
        log: EventLog,
    }

    fn terminal() -> TerminalProfile {
        TerminalProfile {
            hardware: HardwareInfo { model: "t".into(), ..Default::default() },
            connectivity: ConnectivityInfo {
                supported_interfaces: vec!["eth0".into()],
                current_interface: "eth0".into(),
                dl_capability_bps: 100_000_000,
                ul_capability_bps: 100_000_000,
            },
            software: SoftwareInfo::default(),
            user_preferences: UserPreferences {
                desired_quality: TrafficClass::Ef,
                acceptable_quality: TrafficClass::BestEffort,
                time_budget_constraints: String::new(),
            },
        }
    }

    /// acc1 -- l1 -- r1 -- l2 -- core1, both links `capacity_bps`.
    fn stack(capacity_bps: u64, subscribed_bps: u64) -> Stack {
        let mk = |id: &str, from: &str, to: &str| LinkDef {
            link_id: id.into(),
            from: from.into(),
            to: to.into(),
            capacity_bps,
            propagation_delay_ms: 1.0,
            queue_capacity_bytes: 30_000,
            segment: "core".into(),
            class_shares: ClassShares::default(),
        };
        let routing = Arc::new(Routing::new(Topology {
            nodes: vec!["acc1".into(), "r1".into(), "core1".into()],
            links: vec![mk("l1", "acc1", "r1"), mk("l2", "r1", "core1")],
        }));
        let mut nass = Nass::new();
        nass.add_access_network(AccessNetworkConfig {
            name: "dsl-1".into(),
            network_type: "dsl".into(),
            realm: "access".into(),
            node: "acc1".into(),
            racs_contact: "racs-0".into(),
            ip_pool_start: "10.0.0.1".into(),
            ip_pool_size: 32,
        })
        .unwrap();
        nass.add_subscription(Subscription {
            subscriber_id: "alice".into(),
            credentials: "pw".into(),
            qos_profile: TransportQosProfile {
                transport_service_class: TrafficClass::Ef,
                requestor_name: "alice@home".into(),
                max_priority: 12,
                media_type: MediaType::Video,
                ul_subscribed_bps: subscribed_bps,
                dl_subscribed_bps: subscribed_bps,
            },
            initial_gate: GateTemplate::default(),
            location: "cell-1".into(),
        });
        let racs = Racs::new(
            vec![PolicyRule {
                rule_id: "admit-all".into(),
                precedence: 1,
                action: RuleAction::Admit,
                matcher: RuleMatch::default(),
            }],
            true,
            routing,
            BTreeMap::from([("dsl-1".to_string(), "acc1".to_string())]),
        );
        let mut ims = Ims::new();
        ims.add_service(video_service());
        ims.add_profile(ServiceProfile {
            subscriber_id: "alice".into(),
            credentials: "sip-pw".into(),
            services: BTreeMap::from([(
                "video-stream".to_string(),
                auth(TrafficClass::Ef, 12),
            )]),
            content_entitlements: vec![],
        });
        Stack { ims, nass, racs, enforcement: Enforcement::new(), log: EventLog::new() }
    }

    fn attach_and_register(s: &mut Stack) {
        let record = s
            .nass
            .attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw")
            .unwrap()
            .clone();
        s.enforcement.register_gate(record.initial_gates.clone());
        s.ims.register_user(SimTime::ZERO, &mut s.log, &"alice".into(), "sip-pw").unwrap();
    }

    fn session_request(id: &str) -> SessionRequest {
        SessionRequest {
            session_id: SessionId::new(id),
            subscriber_id: "alice".into(),
            service: "video-stream".into(),
            mode: InitiationMode::Scenario1,
            destination: "core1".into(),
            requested_point: None,
            source_ip: None,
        }
    }

    #[test]
    fn registration_expiry_and_refresh() {
        let mut s = stack(100_000_000, 10_000_000);
        let r = s.ims.register_user(SimTime::ZERO, &mut s.log, &"alice".into(), "sip-pw").unwrap();
        assert_eq!(r.expires_at, SimTime::from_secs(3600));
        // Re-register at t=100 s -> expiry 3700 s.
        let r2 = s
            .ims
            .register_user(SimTime::from_secs(100), &mut s.log, &"alice".into(), "sip-pw")
            .unwrap();
        assert_eq!(r2.expires_at, SimTime::from_secs(3700));
        assert!(matches!(
            s.ims.register_user(SimTime::ZERO, &mut s.log, &"alice".into(), "wrong"),
            Err(ImsError::AuthenticationFailed(_))
        ));
        assert!(matches!(
            s.ims.register_user(SimTime::ZERO, &mut s.log, &"mallory".into(), "x"),
            Err(ImsError::UnknownSubscriber(_))
        ));
    }

    #[test]
    fn unconstrained_session_activates_at_point_zero() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        let record = s
            .ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                session_request("s1"),
            )
            .unwrap();
        assert_eq!(record.state, SessionState::Active);
        assert_eq!(record.chosen_point, Some(0));
        assert!(record.reservation.is_some());
        assert_eq!(s.enforcement.installed_policies().count(), 1);
    }

    #[test]
    fn unsubscribed_service_rejected_before_any_racs_call() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        let mut req = session_request("s1");
        req.service = "video-stream".into();
        // Remove the entitlement.
        s.ims.profiles.get_mut(&"alice".into()).unwrap().services.clear();
        let err = s
            .ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                req,
            )
            .unwrap_err();
        assert!(matches!(err, ImsError::ServiceNotSubscribed(_)));
        let record = s.ims.session(&SessionId::new("s1")).unwrap();
        assert_eq!(record.state, SessionState::Rejected);
        assert_eq!(record.reject_stage, Some(RejectStage::ServiceAuthorization));
        // Ordering guarantee: the decision log saw nothing.
        assert!(s.racs.decision_log().is_empty());
        assert!(!s.log.records().iter().any(|r| r.kind == "authorize" || r.kind == "reserve"));
    }

    #[test]
    fn not_registered_and_not_attached_reject() {
        let mut s = stack(100_000_000, 10_000_000);
        let err = s
            .ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                session_request("s1"),
            )
            .unwrap_err();
        assert!(matches!(err, ImsError::NotRegistered(_)));

        s.ims.register_user(SimTime::ZERO, &mut s.log, &"alice".into(), "sip-pw").unwrap();
        let err = s
            .ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                session_request("s2"),
            )
            .unwrap_err();
        assert!(matches!(err, ImsError::NotAttached(_)));
    }

    #[test]
    fn capacity_pushes_session_to_lower_point() {
        // AF budget is 50% of capacity. Pick capacity so point 0 (4 Mb/s)
        // exceeds it but point 1 (1.5 Mb/s) fits: 6 Mb/s -> budget 3 Mb/s.
        let mut s = stack(6_000_000, 10_000_000);
        attach_and_register(&mut s);
        let record = s
            .ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                session_request("s1"),
            )
            .unwrap();
        assert_eq!(record.state, SessionState::Active);
        assert_eq!(record.chosen_point, Some(1));
        // Capacity-accounting oracle: booked exactly point 1 in both
        // directions on both links.
        assert_eq!(s.racs.ledger().total_booked_bps(), 4 * 1_500_000);
    }

    #[test]
    fn renegotiate_upgrade_and_downgrade() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        s.ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                SessionRequest { requested_point: Some(1), ..session_request("s1") },
            )
            .unwrap();
        let booked_before = s.racs.ledger().total_booked_bps();
        assert_eq!(booked_before, 4 * 1_500_000);

        // Upgrade to point 0 within spare capacity.
        let record = s
            .ims
            .renegotiate(
                SimTime::from_millis(10),
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
                RenegotiationInitiator::EndUser,
                0,
            )
            .unwrap();
        assert_eq!(record.chosen_point, Some(0));
        assert_eq!(s.racs.ledger().total_booked_bps(), 4 * 4_000_000);
        // Old booking is gone, exactly one policy installed.
        assert_eq!(s.enforcement.installed_policies().count(), 1);

        // Downgrade is always admitted.
        let record = s
            .ims
            .renegotiate(
                SimTime::from_millis(20),
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
                RenegotiationInitiator::Service,
                2,
            )
            .unwrap();
        assert_eq!(record.chosen_point, Some(2));
        assert_eq!(s.racs.ledger().total_booked_bps(), 4 * 800_000);
    }

    #[test]
    fn renegotiate_terminated_session_errors() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        s.ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                session_request("s1"),
            )
            .unwrap();
        s.ims
            .terminate_session(
                SimTime::from_millis(5),
                &mut s.log,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
            )
            .unwrap();
        assert!(matches!(
            s.ims.renegotiate(
                SimTime::from_millis(6),
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
                RenegotiationInitiator::EndUser,
                0,
            ),
            Err(ImsError::SessionNotActive(_))
        ));
    }

    #[test]
    fn renegotiation_failure_keeps_old_point_active() {
        // AF budget 3 Mb/s: point 1 (1.5M) fits, upgrade to point 0 (4M)
        // cannot.
        let mut s = stack(6_000_000, 10_000_000);
        attach_and_register(&mut s);
        s.ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                SessionRequest { requested_point: Some(1), ..session_request("s1") },
            )
            .unwrap();
        let err = s
            .ims
            .renegotiate(
                SimTime::from_millis(10),
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
                RenegotiationInitiator::Network,
                0,
            )
            .unwrap_err();
        assert!(matches!(err, ImsError::ResourcesRejected(_)));
        let record = s.ims.session(&SessionId::new("s1")).unwrap();
        assert_eq!(record.state, SessionState::Active);
        assert_eq!(record.chosen_point, Some(1));
        assert_eq!(s.racs.ledger().total_booked_bps(), 4 * 1_500_000);
    }

    #[test]
    fn terminate_restores_ledger_and_is_idempotent_on_terminal_states() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        s.ims
            .initiate_session(
                SimTime::ZERO,
                &mut s.log,
                &s.nass,
                &mut s.racs,
                &mut s.enforcement,
                session_request("s1"),
            )
            .unwrap();
        assert!(s.racs.ledger().total_booked_bps() > 0);
        s.ims
            .terminate_session(
                SimTime::from_millis(5),
                &mut s.log,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
            )
            .unwrap();
        assert_eq!(s.racs.ledger().total_booked_bps(), 0);
        assert_eq!(s.enforcement.installed_policies().count(), 0);
        // Idempotent on terminal states.
        let again = s
            .ims
            .terminate_session(
                SimTime::from_millis(6),
                &mut s.log,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
            )
            .unwrap();
        assert_eq!(again.state, SessionState::Terminated);
        assert!(matches!(
            s.ims.terminate_session(
                SimTime::ZERO,
                &mut s.log,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("nope"),
            ),
            Err(ImsError::UnknownSession(_))
        ));
    }

    #[test]
    fn terminate_rejected_session_is_idempotent_success() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        s.ims.profiles.get_mut(&"alice".into()).unwrap().services.clear();
        let _ = s.ims.initiate_session(
            SimTime::ZERO,
            &mut s.log,
            &s.nass,
            &mut s.racs,
            &mut s.enforcement,
            session_request("s1"),
        );
        let record = s
            .ims
            .terminate_session(
                SimTime::from_millis(1),
                &mut s.log,
                &mut s.racs,
                &mut s.enforcement,
                &SessionId::new("s1"),
            )
            .unwrap();
        // Already terminal: the call succeeds and leaves the state alone.
        assert_eq!(record.state, SessionState::Rejected);
    }

    #[test]
    fn interleaved_sessions_leave_ledger_at_zero() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        let mut live: Vec<SessionId> = Vec::new();
        for i in 0..10 {
            let id = SessionId::new(format!("s{i}"));
            s.ims
                .initiate_session(
                    SimTime::from_millis(i),
                    &mut s.log,
                    &s.nass,
                    &mut s.racs,
                    &mut s.enforcement,
                    SessionRequest {
                        session_id: id.clone(),
                        requested_point: Some(2),
                        ..session_request("x")
                    },
                )
                .unwrap();
            live.push(id);
            if i % 2 == 1 {
                let victim = live.remove(0);
                s.ims
                    .terminate_session(
                        SimTime::from_millis(i),
                        &mut s.log,
                        &mut s.racs,
                        &mut s.enforcement,
                        &victim,
                    )
                    .unwrap();
            }
            s.racs.ledger().assert_safe().unwrap();
        }
        for id in live {
            s.ims
                .terminate_session(
                    SimTime::from_millis(100),
                    &mut s.log,
                    &mut s.racs,
                    &mut s.enforcement,
                    &id,
                )
                .unwrap();
        }
        assert_eq!(s.racs.ledger().total_booked_bps(), 0);
    }

    #[test]
    fn active_sessions_have_exactly_one_reservation_and_policy() {
        let mut s = stack(100_000_000, 10_000_000);
        attach_and_register(&mut s);
        for i in 0..3 {
            s.ims
                .initiate_session(
                    SimTime::ZERO,
                    &mut s.log,
                    &s.nass,
                    &mut s.racs,
                    &mut s.enforcement,
                    SessionRequest {
                        session_id: SessionId::new(format!("s{i}")),
                        requested_point: Some(2),
                        ..session_request("x")
                    },
                )
                .unwrap();
        }
        let active: Vec<_> =
            s.ims.sessions().filter(|r| r.state == SessionState::Active).collect();
        assert_eq!(active.len(), 3);
        for record in &active {
            assert!(record.reservation.is_some());
        }
        assert_eq!(s.enforcement.installed_policies().count(), 3);
    }
}
