//! Deterministic discrete-event simulator of service-aware, policy-based
//! QoS/QoE assurance in an IMS-based next-generation network.
//!
//! The crate is organized along the subsystem boundaries of the modeled
//! architecture:
//!
//! - [`model`] - shared domain vocabulary (traffic classes, QoS parameter
//!   bundles, identifiers, DiffServ codepoint mapping)
//! - [`nass`] - network attachment: terminal registration, IP allocation,
//!   transport-layer profiles
//! - [`ims`] - service-layer session control (CSCF role) with the UPSF
//!   profile repository and the session state machine
//! - [`racs`] - resource and admission control: policy decisions, capacity
//!   ledger, reservations, traffic-policy derivation and installation
//! - [`transport`] - packet-level simulation of the IP transport with
//!   DiffServ enforcement, per-PHB queueing and per-flow measurement
//! - [`qoe`] - MOS estimation and temporal quality classification
//! - [`scenario`] / [`runner`] - declarative scenario files and the engine
//!   that wires every subsystem onto one deterministic event loop

pub mod eventlog;
pub mod ims;
pub mod model;
pub mod nass;
pub mod qoe;
pub mod racs;
pub mod runner;
pub mod scenario;
pub mod transport;
