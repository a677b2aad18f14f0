//! Network attachment subsystem: registers terminals on an access network,
//! allocates IP addresses from per-network pools, and serves the
//! transport-layer profile (QoS profile, initial gate settings, session
//! description) to resource control.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{GateId, MediaType, SimTime, SubscriberId, TrafficClass};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NassError {
    #[error("unknown subscriber {0}")]
    UnknownSubscriber(SubscriberId),
    #[error("authentication failed for {0}")]
    AuthenticationFailed(SubscriberId),
    #[error("address pool exhausted on access network {0}")]
    AddressPoolExhausted(String),
    #[error("subscriber {0} already attached on {1}")]
    AlreadyAttached(SubscriberId, String),
    #[error("no active attachment matches the key {0}")]
    NoActiveSession(String),
    #[error("key {key} matches multiple attachments: {matches:?}")]
    AmbiguousKey { key: String, matches: Vec<String> },
    #[error("unknown access network {0}")]
    UnknownAccessNetwork(String),
    #[error("subscriber {0} is not attached on {1}")]
    NotAttached(SubscriberId, String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct HardwareInfo {
    pub model: String,
    #[serde(default)]
    pub display_size: String,
    #[serde(default)]
    pub resolution: String,
    #[serde(default)]
    pub processor_memory: String,
    #[serde(default)]
    pub sound: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectivityInfo {
    pub supported_interfaces: Vec<String>,
    pub current_interface: String,
    pub dl_capability_bps: u64,
    pub ul_capability_bps: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SoftwareInfo {
    #[serde(default)]
    pub os: String,
    #[serde(default)]
    pub browser: String,
    #[serde(default)]
    pub supported_media_types: Vec<MediaType>,
    #[serde(default)]
    pub content_protection: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserPreferences {
    pub desired_quality: TrafficClass,
    pub acceptable_quality: TrafficClass,
    #[serde(default)]
    pub time_budget_constraints: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalProfile {
    pub hardware: HardwareInfo,
    pub connectivity: ConnectivityInfo,
    pub software: SoftwareInfo,
    pub user_preferences: UserPreferences,
}

impl TerminalProfile {
    pub fn validate(&self) -> Result<(), String> {
        if !self
            .connectivity
            .supported_interfaces
            .contains(&self.connectivity.current_interface)
        {
            return Err(format!(
                "current interface {} not in supported list",
                self.connectivity.current_interface
            ));
        }
        let pref = &self.user_preferences;
        if pref.acceptable_quality.quality_rank() > pref.desired_quality.quality_rank() {
            return Err("acceptable quality exceeds desired quality".to_string());
        }
        Ok(())
    }
}

/// The subscribed transport QoS profile served to RACS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportQosProfile {
    pub transport_service_class: TrafficClass,
    pub requestor_name: String,
    pub max_priority: u8,
    pub media_type: MediaType,
    pub ul_subscribed_bps: u64,
    pub dl_subscribed_bps: u64,
}

/// Per-subscriber gate state. Gates start closed; RACS opens them when it
/// installs traffic policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateSettings {
    pub gate_id: GateId,
    pub allowed_destinations: Vec<String>,
    pub ul_default_bps: u64,
    pub dl_default_bps: u64,
    pub open: bool,
    /// Stored and exposed; no behavior is attached to it.
    pub privacy_indicator: bool,
}

/// Gate template from the subscription store, before a gate id exists.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GateTemplate {
    #[serde(default)]
    pub allowed_destinations: Vec<String>,
    #[serde(default)]
    pub ul_default_bps: u64,
    #[serde(default)]
    pub dl_default_bps: u64,
    #[serde(default)]
    pub privacy_indicator: bool,
}

/// One entry of the subscription store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subscription {
    pub subscriber_id: SubscriberId,
    pub credentials: String,
    pub qos_profile: TransportQosProfile,
    pub initial_gate: GateTemplate,
    #[serde(default)]
    pub location: String,
}

/// The transport-layer attachment record relayed to RACS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessSessionRecord {
    pub subscriber_id: SubscriberId,
    pub globally_unique_ip: String,
    pub realm: String,
    pub logical_access_id: String,
    pub physical_access_id: String,
    pub access_network: String,
    pub access_network_type: String,
    pub racs_point_of_contact: String,
    pub location: String,
    pub terminal: TerminalProfile,
    pub qos_profile: TransportQosProfile,
    pub initial_gates: GateSettings,
    pub attached_at: SimTime,
}

/// Dotted-quad pool allocating the lowest free address first.
#[derive(Debug, Clone)]
struct IpPool {
    base: u32,
    size: u32,
    free: BTreeSet<u32>,
}

impl IpPool {
    fn new(start: &str, size: u32) -> Option<IpPool> {
        let base = parse_ipv4(start)?;
        Some(IpPool { base, size, free: (0..size).collect() })
    }

    fn allocate(&mut self) -> Option<String> {
        let offset = *self.free.iter().next()?;
        self.free.remove(&offset);
        Some(format_ipv4(self.base + offset))
    }

    fn release(&mut self, ip: &str) {
        if let Some(addr) = parse_ipv4(ip) {
            if addr >= self.base && addr < self.base + self.size {
                self.free.insert(addr - self.base);
            }
        }
    }

    fn free_count(&self) -> usize {
        self.free.len()
    }
}

fn parse_ipv4(s: &str) -> Option<u32> {
    let mut parts = s.split('.');
    let mut addr: u32 = 0;
    for _ in 0..4 {
        let octet: u32 = parts.next()?.parse().ok()?;
        if octet > 255 {
            return None;
        }
        addr = (addr << 8) | octet;
    }
    if parts.next().is_some() {
        return None;
    }
    Some(addr)
}

fn format_ipv4(addr: u32) -> String {
    format!("{}.{}.{}.{}", addr >> 24, (addr >> 16) & 255, (addr >> 8) & 255, addr & 255)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessNetworkConfig {
    pub name: String,
    pub network_type: String,
    pub realm: String,
    /// Topology node where terminals on this network inject traffic.
    pub node: String,
    #[serde(default = "default_racs_contact")]
    pub racs_contact: String,
    pub ip_pool_start: String,
    pub ip_pool_size: u32,
}

fn default_racs_contact() -> String {
    "racs-0".to_string()
}

#[derive(Debug)]
struct AccessNetworkState {
    config: AccessNetworkConfig,
    pool: IpPool,
}

/// The NASS database: subscription store plus active attachment records.
#[derive(Debug, Default)]
pub struct Nass {
    networks: BTreeMap<String, AccessNetworkState>,
    subscriptions: BTreeMap<SubscriberId, Subscription>,
    /// Active records keyed by (subscriber, physical access id).
    active: BTreeMap<(SubscriberId, String), AccessSessionRecord>,
    /// ip -> active record key, per realm uniqueness check.
    by_ip: BTreeMap<String, (SubscriberId, String)>,
    location_history: BTreeMap<SubscriberId, Vec<(SimTime, String)>>,
    next_gate: u64,
    next_logical_access: u64,
}

impl Nass {
    pub fn new() -> Self {
        Nass::default()
    }

    pub fn add_access_network(&mut self, config: AccessNetworkConfig) -> Result<(), NassError> {
        let pool = IpPool::new(&config.ip_pool_start, config.ip_pool_size)
            .ok_or_else(|| NassError::UnknownAccessNetwork(config.ip_pool_start.clone()))?;
        self.networks.insert(config.name.clone(), AccessNetworkState { config, pool });
        Ok(())
    }

    pub fn add_subscription(&mut self, sub: Subscription) {
        self.subscriptions.insert(sub.subscriber_id.clone(), sub);
    }

    pub fn subscription(&self, id: &SubscriberId) -> Option<&Subscription> {
        self.subscriptions.get(id)
    }

    pub fn access_network(&self, name: &str) -> Option<&AccessNetworkConfig> {
        self.networks.get(name).map(|s| &s.config)
    }

    pub fn access_networks(&self) -> impl Iterator<Item = &AccessNetworkConfig> {
        self.networks.values().map(|s| &s.config)
    }

    pub fn free_addresses(&self, network: &str) -> Option<usize> {
        self.networks.get(network).map(|n| n.pool.free_count())
    }

    pub fn active_records(&self) -> impl Iterator<Item = &AccessSessionRecord> {
        self.active.values()
    }

    /// Register a terminal: authenticate, allocate the lowest free IP and
    /// build the attachment record from the stored subscription. Gates
    /// start closed until RACS installs policy.
    pub fn attach(
        &mut self,
        now: SimTime,
        subscriber: &SubscriberId,
        access_network: &str,
        physical_access_id: &str,
        terminal: TerminalProfile,
        credentials: &str,
    ) -> Result<&AccessSessionRecord, NassError> {
        let sub = self
            .subscriptions
            .get(subscriber)
            .ok_or_else(|| NassError::UnknownSubscriber(subscriber.clone()))?;
        if sub.credentials != credentials {
            return Err(NassError::AuthenticationFailed(subscriber.clone()));
        }
        let key = (subscriber.clone(), physical_access_id.to_string());
        if self.active.contains_key(&key) {
            return Err(NassError::AlreadyAttached(
                subscriber.clone(),
                physical_access_id.to_string(),
            ));
        }
        let sub = sub.clone();
        let network = self
            .networks
            .get_mut(access_network)
            .ok_or_else(|| NassError::UnknownAccessNetwork(access_network.to_string()))?;
        let ip = network
            .pool
            .allocate()
            .ok_or_else(|| NassError::AddressPoolExhausted(access_network.to_string()))?;

        self.next_gate += 1;
        self.next_logical_access += 1;
        let record = AccessSessionRecord {
            subscriber_id: subscriber.clone(),
            globally_unique_ip: ip.clone(),
            realm: network.config.realm.clone(),
            logical_access_id: format!("la-{}", self.next_logical_access),
            physical_access_id: physical_access_id.to_string(),
            access_network: access_network.to_string(),
            access_network_type: network.config.network_type.clone(),
            racs_point_of_contact: network.config.racs_contact.clone(),
            location: sub.location.clone(),
            terminal,
            qos_profile: sub.qos_profile.clone(),
            initial_gates: GateSettings {
                gate_id: GateId(self.next_gate),
                allowed_destinations: sub.initial_gate.allowed_destinations.clone(),
                ul_default_bps: sub.initial_gate.ul_default_bps,
                dl_default_bps: sub.initial_gate.dl_default_bps,
                open: false,
                privacy_indicator: sub.initial_gate.privacy_indicator,
            },
            attached_at: now,
        };
        self.by_ip.insert(ip, key.clone());
        self.active.insert(key.clone(), record);
        self.debug_check_ip_uniqueness();
        Ok(&self.active[&key])
    }

    /// Release an attachment: the IP returns to its pool and the record
    /// becomes inactive. Reservations referencing it are RACS state; the
    /// caller flags them for release there.
    pub fn detach(
        &mut self,
        subscriber: &SubscriberId,
        physical_access_id: &str,
    ) -> Result<AccessSessionRecord, NassError> {
        let key = (subscriber.clone(), physical_access_id.to_string());
        let record = self.active.remove(&key).ok_or_else(|| {
            NassError::NotAttached(subscriber.clone(), physical_access_id.to_string())
        })?;
        self.by_ip.remove(&record.globally_unique_ip);
        if let Some(network) = self.networks.get_mut(&record.access_network) {
            network.pool.release(&record.globally_unique_ip);
        }
        Ok(record)
    }

    /// Serve the stored transport profile verbatim. Read-only.
    pub fn lookup_transport_profile(&self, key: &LookupKey) -> Result<ProfileView<'_>, NassError> {
        let record = match key {
            LookupKey::ByIp(ip) => {
                let k = self
                    .by_ip
                    .get(*ip)
                    .ok_or_else(|| NassError::NoActiveSession(ip.to_string()))?;
                &self.active[k]
            }
            LookupKey::BySubscriber(id) => {
                let matches: Vec<&AccessSessionRecord> =
                    self.active.values().filter(|r| r.subscriber_id == **id).collect();
                match matches.len() {
                    0 => return Err(NassError::NoActiveSession(id.to_string())),
                    1 => matches[0],
                    _ => {
                        return Err(NassError::AmbiguousKey {
                            key: id.to_string(),
                            matches: matches
                                .iter()
                                .map(|r| {
                                    format!("{}@{}", r.globally_unique_ip, r.physical_access_id)
                                })
                                .collect(),
                        })
                    }
                }
            }
        };
        Ok(ProfileView {
            qos_profile: &record.qos_profile,
            gates: &record.initial_gates,
            record,
        })
    }

    /// Replace the location field and append to the per-subscriber history.
    pub fn update_location(
        &mut self,
        now: SimTime,
        subscriber: &SubscriberId,
        physical_access_id: &str,
        new_location: &str,
    ) -> Result<&AccessSessionRecord, NassError> {
        let key = (subscriber.clone(), physical_access_id.to_string());
        let record = self.active.get_mut(&key).ok_or_else(|| {
            NassError::NotAttached(subscriber.clone(), physical_access_id.to_string())
        })?;
        record.location = new_location.to_string();
        self.location_history
            .entry(subscriber.clone())
            .or_default()
            .push((now, new_location.to_string()));
        Ok(&self.active[&key])
    }

    pub fn location_history(&self, subscriber: &SubscriberId) -> &[(SimTime, String)] {
        self.location_history.get(subscriber).map(Vec::as_slice).unwrap_or(&[])
    }

    /// No two active records share an IP within a realm.
    fn debug_check_ip_uniqueness(&self) {
        debug_assert!({
            let mut seen = BTreeSet::new();
            self.active
                .values()
                .all(|r| seen.insert((r.realm.clone(), r.globally_unique_ip.clone())))
        });
    }
}

pub enum LookupKey<'a> {
    ByIp(&'a str),
    BySubscriber(&'a SubscriberId),
}

#[derive(Debug)]
pub struct ProfileView<'a> {
    pub qos_profile: &'a TransportQosProfile,
    pub gates: &'a GateSettings,
    pub record: &'a AccessSessionRecord,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terminal() -> TerminalProfile {
        TerminalProfile {
            hardware: HardwareInfo { model: "tp-1".into(), ..Default::default() },
            connectivity: ConnectivityInfo {
                supported_interfaces: vec!["eth0".into(), "wlan0".into()],
                current_interface: "eth0".into(),
                dl_capability_bps: 10_000_000,
                ul_capability_bps: 10_000_000,
            },
            software: SoftwareInfo::default(),
            user_preferences: UserPreferences {
                desired_quality: TrafficClass::Ef,
                acceptable_quality: TrafficClass::Af { class: 1, precedence: 1 },
                time_budget_constraints: String::new(),
            },
        }
    }

    fn subscription(id: &str) -> Subscription {
        Subscription {
            subscriber_id: SubscriberId::new(id),
            credentials: "pw".into(),
            qos_profile: TransportQosProfile {
                transport_service_class: TrafficClass::Ef,
                requestor_name: format!("{id}@home"),
                max_priority: 12,
                media_type: MediaType::Voice,
                ul_subscribed_bps: 2_000_000,
                dl_subscribed_bps: 2_000_000,
            },
            initial_gate: GateTemplate {
                allowed_destinations: vec!["core*".into()],
                ul_default_bps: 0,
                dl_default_bps: 0,
                privacy_indicator: false,
            },
            location: "cell-1".into(),
        }
    }

    fn nass_with_pool(size: u32) -> Nass {
        let mut nass = Nass::new();
        nass.add_access_network(AccessNetworkConfig {
            name: "dsl-1".into(),
            network_type: "dsl".into(),
            realm: "access".into(),
            node: "acc1".into(),
            racs_contact: "racs-0".into(),
            ip_pool_start: "10.0.0.1".into(),
            ip_pool_size: size,
        })
        .unwrap();
        nass.add_subscription(subscription("alice"));
        nass.add_subscription(subscription("bob"));
        nass
    }

    #[test]
    fn attach_allocates_lowest_free_ip_with_closed_gate() {
        let mut nass = nass_with_pool(254);
        let record = nass
            .attach(SimTime::ZERO, &"alice".into(), "dsl-1", "port-1", terminal(), "pw")
            .unwrap();
        assert_eq!(record.globally_unique_ip, "10.0.0.1");
        assert!(!record.initial_gates.open);
        assert_eq!(record.qos_profile.ul_subscribed_bps, 2_000_000);
    }

    #[test]
    fn attach_rejects_bad_credentials_and_unknown_subscriber() {
        let mut nass = nass_with_pool(10);
        assert!(matches!(
            nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "nope"),
            Err(NassError::AuthenticationFailed(_))
        ));
        assert!(matches!(
            nass.attach(SimTime::ZERO, &"mallory".into(), "dsl-1", "p1", terminal(), "pw"),
            Err(NassError::UnknownSubscriber(_))
        ));
    }

    #[test]
    fn pool_exhaustion_after_brute_force_attach_loop() {
        let mut nass = nass_with_pool(254);
        // Exhaust the /24-sized pool with distinct physical accesses.
        for i in 0..254 {
            let sub = if i % 2 == 0 { "alice" } else { "bob" };
            nass.attach(SimTime::ZERO, &sub.into(), "dsl-1", &format!("p{i}"), terminal(), "pw")
                .unwrap();
        }
        assert_eq!(nass.free_addresses("dsl-1"), Some(0));
        assert!(matches!(
            nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p-extra", terminal(), "pw"),
            Err(NassError::AddressPoolExhausted(_))
        ));
    }

    #[test]
    fn duplicate_attach_same_physical_access_rejected() {
        let mut nass = nass_with_pool(10);
        nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw").unwrap();
        assert!(matches!(
            nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw"),
            Err(NassError::AlreadyAttached(_, _))
        ));
    }

    #[test]
    fn detach_restores_pool_and_double_detach_errors() {
        let mut nass = nass_with_pool(10);
        let before = nass.free_addresses("dsl-1").unwrap();
        nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw").unwrap();
        assert_eq!(nass.free_addresses("dsl-1").unwrap(), before - 1);
        nass.detach(&"alice".into(), "p1").unwrap();
        assert_eq!(nass.free_addresses("dsl-1").unwrap(), before);
        assert!(matches!(nass.detach(&"alice".into(), "p1"), Err(NassError::NotAttached(_, _))));
    }

    #[test]
    fn address_conservation_over_random_sequence() {
        let mut nass = nass_with_pool(16);
        let mut attached: Vec<String> = Vec::new();
        // Deterministic pseudo-random attach/detach mix.
        let mut state = 0x9e3779b97f4a7c15u64;
        for i in 0..200 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            if !state.is_multiple_of(3) || attached.is_empty() {
                let port = format!("p{i}");
                if nass
                    .attach(SimTime::ZERO, &"alice".into(), "dsl-1", &port, terminal(), "pw")
                    .is_ok()
                {
                    attached.push(port);
                }
            } else {
                let port = attached.swap_remove((state % attached.len() as u64) as usize);
                nass.detach(&"alice".into(), &port).unwrap();
            }
            let free = nass.free_addresses("dsl-1").unwrap();
            assert_eq!(free + attached.len(), 16, "pool conservation violated");
        }
    }

    #[test]
    fn lookup_by_ip_returns_profile_verbatim_and_is_pure() {
        let mut nass = nass_with_pool(10);
        nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw").unwrap();
        let first = nass
            .lookup_transport_profile(&LookupKey::ByIp("10.0.0.1"))
            .map(|v| v.qos_profile.clone())
            .unwrap();
        assert_eq!(first, subscription("alice").qos_profile);
        let second = nass
            .lookup_transport_profile(&LookupKey::ByIp("10.0.0.1"))
            .map(|v| v.qos_profile.clone())
            .unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn lookup_unknown_ip_is_no_active_session() {
        let nass = nass_with_pool(10);
        assert!(matches!(
            nass.lookup_transport_profile(&LookupKey::ByIp("10.9.9.9")),
            Err(NassError::NoActiveSession(_))
        ));
    }

    #[test]
    fn subscriber_lookup_with_two_attachments_is_ambiguous() {
        let mut nass = nass_with_pool(10);
        nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw").unwrap();
        nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p2", terminal(), "pw").unwrap();
        match nass.lookup_transport_profile(&LookupKey::BySubscriber(&"alice".into())) {
            Err(NassError::AmbiguousKey { matches, .. }) => {
                assert_eq!(matches.len(), 2);
                assert!(matches[0].contains("p1") && matches[1].contains("p2"));
            }
            other => panic!("expected AmbiguousKey, got {other:?}"),
        }
    }

    #[test]
    fn location_updates_are_ordered_by_time() {
        let mut nass = nass_with_pool(10);
        nass.attach(SimTime::ZERO, &"alice".into(), "dsl-1", "p1", terminal(), "pw").unwrap();
        nass.update_location(SimTime::from_millis(10), &"alice".into(), "p1", "cell-17").unwrap();
        let rec =
            nass.update_location(SimTime::from_millis(20), &"alice".into(), "p1", "cell-18").unwrap();
        assert_eq!(rec.location, "cell-18");
        let hist = nass.location_history(&"alice".into());
        assert_eq!(hist.len(), 2);
        assert!(hist[0].0 < hist[1].0);
        assert!(matches!(
            nass.update_location(SimTime::ZERO, &"alice".into(), "p9", "x"),
            Err(NassError::NotAttached(_, _))
        ));
    }

    #[test]
    fn terminal_profile_validation() {
        let mut t = terminal();
        assert!(t.validate().is_ok());
        t.connectivity.current_interface = "lte0".into();
        assert!(t.validate().is_err());
        let mut t = terminal();
        t.user_preferences.acceptable_quality = TrafficClass::Ef;
        t.user_preferences.desired_quality = TrafficClass::BestEffort;
        assert!(t.validate().is_err());
    }
}
