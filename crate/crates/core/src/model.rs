//! Shared domain vocabulary: traffic classes, QoS parameter bundles,
//! identifiers and the class-to-codepoint marking table.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid traffic class {0:?}")]
    InvalidTrafficClass(String),
    #[error("priority {0} out of range 0..=15")]
    PriorityOutOfRange(u8),
    #[error("EF traffic requires priority >= {floor}, got {got}")]
    EfPriorityBelowFloor { floor: u8, got: u8 },
    #[error("bidirectional symmetric pattern requires ul == dl (ul {ul}, dl {dl})")]
    AsymmetricBandwidth { ul: u64, dl: u64 },
}

/// Simulation time in integer nanoseconds.
///
/// All external interfaces speak milliseconds; nanosecond resolution keeps
/// store-and-forward arithmetic exact so runs are bit-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000_000)
    }

    pub fn from_millis_f64(ms: f64) -> Self {
        SimTime((ms * 1e6).round() as u64)
    }

    pub fn from_secs(s: u64) -> Self {
        SimTime(s * 1_000_000_000)
    }

    pub fn as_nanos(self) -> u64 {
        self.0
    }

    pub fn as_millis_f64(self) -> f64 {
        self.0 as f64 / 1e6
    }

    /// Integer second this instant falls in (aligned to second boundaries).
    pub fn second(self) -> u64 {
        self.0 / 1_000_000_000
    }

    pub fn saturating_sub(self, other: SimTime) -> SimTime {
        SimTime(self.0.saturating_sub(other.0))
    }
}

impl std::ops::Add for SimTime {
    type Output = SimTime;
    fn add(self, rhs: SimTime) -> SimTime {
        SimTime(self.0 + rhs.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // Millisecond display with nanosecond precision, fixed width for logs.
        write!(f, "{}.{:06}", self.0 / 1_000_000, self.0 % 1_000_000)
    }
}

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }
    };
}

string_id!(SubscriberId);
string_id!(SessionId);
string_id!(FlowId);

/// Numeric ids minted by the simulator itself. Lower ids win classification
/// ties, so allocation order is part of the deterministic contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GateId(pub u64);

impl fmt::Display for GateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReservationId(pub u64);

impl fmt::Display for ReservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "r{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeterId(pub u64);

impl fmt::Display for MeterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "m{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u64);

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Which of the three provisioning scenarios initiates a session: the
/// service layer drives everything (1), the terminal reserves with an
/// authorization token (2), or the terminal requests resources directly (3).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitiationMode {
    Scenario1,
    Scenario2,
    Scenario3,
}

impl fmt::Display for InitiationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitiationMode::Scenario1 => f.write_str("scenario1"),
            InitiationMode::Scenario2 => f.write_str("scenario2"),
            InitiationMode::Scenario3 => f.write_str("scenario3"),
        }
    }
}

/// Media type carried by a service, as recorded in the transport QoS profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MediaType {
    Voice,
    Video,
    StreamingAudio,
    DataInteractive,
    DataBulk,
}

impl MediaType {
    pub const ALL: [MediaType; 5] = [
        MediaType::Voice,
        MediaType::Video,
        MediaType::StreamingAudio,
        MediaType::DataInteractive,
        MediaType::DataBulk,
    ];
}

/// DiffServ-style traffic class. AF classes carry a drop precedence 1..=3;
/// the two best-effort variants and EF carry none.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrafficClass {
    Ef,
    /// Assured forwarding: `class` 1..=4, `precedence` 1..=3 (AFxy naming,
    /// e.g. AF21 = class 2, precedence 1).
    Af { class: u8, precedence: u8 },
    BetterBestEffort,
    BestEffort,
}

impl TrafficClass {
    pub fn af(class: u8, precedence: u8) -> Result<TrafficClass, ModelError> {
        if (1..=4).contains(&class) && (1..=3).contains(&precedence) {
            Ok(TrafficClass::Af { class, precedence })
        } else {
            Err(ModelError::InvalidTrafficClass(format!("AF{class}{precedence}")))
        }
    }

    /// Quality ladder position: EF > AF1 > AF2 > AF3 > AF4 > BBE > BE.
    /// Drop precedence does not affect the ladder.
    pub fn quality_rank(self) -> u8 {
        match self {
            TrafficClass::Ef => 6,
            TrafficClass::Af { class, .. } => 6 - class, // AF1 -> 5 .. AF4 -> 2
            TrafficClass::BetterBestEffort => 1,
            TrafficClass::BestEffort => 0,
        }
    }

    pub fn is_af(self) -> bool {
        matches!(self, TrafficClass::Af { .. })
    }

    pub fn is_best_effort_family(self) -> bool {
        matches!(self, TrafficClass::BestEffort | TrafficClass::BetterBestEffort)
    }
}

/// The marking table. EF->46; AFxy->8x+2y (the standard AF codepoints);
/// BBE->2; BE->0. Injective by construction.
pub fn class_to_codepoint(class: TrafficClass) -> u8 {
    match class {
        TrafficClass::Ef => 46,
        TrafficClass::Af { class, precedence } => 8 * class + 2 * precedence,
        TrafficClass::BetterBestEffort => 2,
        TrafficClass::BestEffort => 0,
    }
}

/// Inverse of [`class_to_codepoint`] on table entries; any codepoint outside
/// the table maps to best effort.
pub fn codepoint_to_class(codepoint: u8) -> TrafficClass {
    for class in all_classes() {
        if class_to_codepoint(class) == codepoint {
            return class;
        }
    }
    TrafficClass::BestEffort
}

/// Every class in the marking table (EF, twelve AF combinations, BBE, BE).
pub fn all_classes() -> impl Iterator<Item = TrafficClass> {
    let mut v = vec![TrafficClass::Ef];
    for class in 1..=4u8 {
        for precedence in 1..=3u8 {
            v.push(TrafficClass::Af { class, precedence });
        }
    }
    v.push(TrafficClass::BetterBestEffort);
    v.push(TrafficClass::BestEffort);
    v.into_iter()
}

impl fmt::Display for TrafficClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrafficClass::Ef => f.write_str("EF"),
            TrafficClass::Af { class, precedence } => write!(f, "AF{class}{precedence}"),
            TrafficClass::BetterBestEffort => f.write_str("BBE"),
            TrafficClass::BestEffort => f.write_str("BE"),
        }
    }
}

impl FromStr for TrafficClass {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "EF" => Ok(TrafficClass::Ef),
            "BBE" => Ok(TrafficClass::BetterBestEffort),
            "BE" => Ok(TrafficClass::BestEffort),
            _ => {
                let digits = s.strip_prefix("AF").ok_or_else(|| {
                    ModelError::InvalidTrafficClass(s.to_string())
                })?;
                let mut chars = digits.chars();
                let (Some(c), Some(p), None) = (chars.next(), chars.next(), chars.next()) else {
                    return Err(ModelError::InvalidTrafficClass(s.to_string()));
                };
                let class = c.to_digit(10).ok_or_else(|| ModelError::InvalidTrafficClass(s.to_string()))?;
                let precedence = p.to_digit(10).ok_or_else(|| ModelError::InvalidTrafficClass(s.to_string()))?;
                TrafficClass::af(class as u8, precedence as u8)
            }
        }
    }
}

impl Serialize for TrafficClass {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for TrafficClass {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirectionality {
    Unidirectional,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Symmetry {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CastMode {
    Unicast,
    /// Recorded but forwarded as unicast; no replication semantics.
    Multicast,
}

/// Uni-/bidirectional, a-/symmetric, uni-/multicast traffic pattern tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrafficPattern {
    pub directionality: FlowDirectionality,
    pub symmetry: Symmetry,
    pub cast: CastMode,
}

impl Default for TrafficPattern {
    fn default() -> Self {
        TrafficPattern {
            directionality: FlowDirectionality::Bidirectional,
            symmetry: Symmetry::Symmetric,
            cast: CastMode::Unicast,
        }
    }
}

/// One QoS parameter bundle: the unit of negotiation between the service
/// layer and resource control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QosParameters {
    pub traffic_class: TrafficClass,
    pub ul_bps: u64,
    pub dl_bps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_jitter_ms: Option<f64>,
    /// 0 is lowest, 15 highest.
    pub priority: u8,
    #[serde(default)]
    pub pattern: TrafficPattern,
}

pub const DEFAULT_EF_PRIORITY_FLOOR: u8 = 10;

impl QosParameters {
    /// Structural invariants. `ef_priority_floor` is the operator-configurable
    /// minimum priority for EF traffic.
    pub fn validate(&self, ef_priority_floor: u8) -> Result<(), ModelError> {
        if self.priority > 15 {
            return Err(ModelError::PriorityOutOfRange(self.priority));
        }
        if self.traffic_class == TrafficClass::Ef && self.priority < ef_priority_floor {
            return Err(ModelError::EfPriorityBelowFloor {
                floor: ef_priority_floor,
                got: self.priority,
            });
        }
        if self.pattern.directionality == FlowDirectionality::Bidirectional
            && self.pattern.symmetry == Symmetry::Symmetric
            && self.ul_bps != self.dl_bps
        {
            return Err(ModelError::AsymmetricBandwidth { ul: self.ul_bps, dl: self.dl_bps });
        }
        Ok(())
    }
}
