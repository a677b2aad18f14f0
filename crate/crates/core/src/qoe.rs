//! QoE estimation: maps measured transport QoS onto a per-media MOS and
//! classifies each second as good, degraded, errored or unavailable.
//!
//! The rating-factor model is this simulator's normative formula:
//!
//! ```text
//! d    = mean one-way delay + 2 * jitter          (de-jitter buffering)
//! Id   = 0.024*d + 0.11*(d - 177.3) if d > 177.3 else 0.024*d
//! Ie   = gamma_media * ln(1 + 15 * loss)
//! R    = 93.2 - Id - Ie
//! MOS  = 1                          for R <= 0
//!      = 4.5                        for R >= 100
//!      = 1 + 0.035R + 7e-6*R(R-60)(100-R)   otherwise, clamped to [1, 5]
//! ```
//!
//! A flow with traffic but zero deliveries is a total outage and scores 1.0
//! directly; the closed form never sees an undefined delay.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{MediaType, SessionId};
use crate::transport::{FlowMetrics, SecondMetrics};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QoeError {
    #[error("metrics window is empty (no packets sent)")]
    EmptyWindow,
    #[error("unknown session {0}")]
    UnknownSession(SessionId),
}

/// Loss-impairment coefficient per media type.
pub fn media_loss_gamma(media: MediaType) -> f64 {
    match media {
        MediaType::Voice => 11.0,
        MediaType::Video => 14.0,
        MediaType::StreamingAudio => 9.0,
        MediaType::DataInteractive => 6.0,
        MediaType::DataBulk => 2.0,
    }
}

/// Threshold constants for temporal quality classification. Scenario files
/// may override them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QoeThresholds {
    pub degraded_loss: f64,
    pub errored_loss: f64,
    pub degraded_mos: f64,
}

impl Default for QoeThresholds {
    fn default() -> Self {
        QoeThresholds { degraded_loss: 0.01, errored_loss: 0.05, degraded_mos: 3.5 }
    }
}

/// The closed-form rating model over raw (loss, delay, jitter) components.
pub fn mos_from_components(loss: f64, mean_delay_ms: f64, jitter_ms: f64, media: MediaType) -> f64 {
    let d = mean_delay_ms + 2.0 * jitter_ms;
    let delay_impairment = 0.024 * d + if d > 177.3 { 0.11 * (d - 177.3) } else { 0.0 };
    let loss_impairment = media_loss_gamma(media) * (1.0 + 15.0 * loss).ln();
    let r = 93.2 - delay_impairment - loss_impairment;
    let mos = if r <= 0.0 {
        1.0
    } else if r >= 100.0 {
        4.5
    } else {
        1.0 + 0.035 * r + 7e-6 * r * (r - 60.0) * (100.0 - r)
    };
    mos.clamp(1.0, 5.0)
}

/// MOS for a measured window.
pub fn estimate_mos(metrics: &FlowMetrics, media: MediaType) -> Result<f64, QoeError> {
    if metrics.sent == 0 {
        return Err(QoeError::EmptyWindow);
    }
    if metrics.delivered == 0 {
        return Ok(1.0);
    }
    Ok(mos_from_components(metrics.loss, metrics.mean_delay_ms, metrics.jitter_ms, media))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondQuality {
    Good,
    Degraded,
    Errored,
    Unavailable,
}

/// Classify one second. Buckets are evaluated unavailable > errored >
/// degraded, so each second lands in exactly one. Silent seconds (nothing
/// sent) are good.
pub fn classify_second(
    s: &SecondMetrics,
    media: MediaType,
    thresholds: &QoeThresholds,
) -> SecondQuality {
    if s.sent == 0 {
        return SecondQuality::Good;
    }
    if s.loss >= 1.0 || s.delivered == 0 {
        return SecondQuality::Unavailable;
    }
    if s.loss > thresholds.errored_loss {
        return SecondQuality::Errored;
    }
    let mos = mos_from_components(s.loss, s.mean_delay_ms, s.jitter_ms, media);
    if s.loss > thresholds.degraded_loss || mos < thresholds.degraded_mos {
        return SecondQuality::Degraded;
    }
    SecondQuality::Good
}

/// Counts of (degraded, errored, unavailable) seconds over a series.
pub fn temporal_quality(
    series: &[SecondMetrics],
    media: MediaType,
    thresholds: &QoeThresholds,
) -> (u64, u64, u64) {
    let mut counts = (0u64, 0u64, 0u64);
    for s in series {
        match classify_second(s, media, thresholds) {
            SecondQuality::Good => {}
            SecondQuality::Degraded => counts.0 += 1,
            SecondQuality::Errored => counts.1 += 1,
            SecondQuality::Unavailable => counts.2 += 1,
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QoeReport {
    pub session_id: SessionId,
    pub media_type: MediaType,
    pub mos: f64,
    pub degraded_seconds: u64,
    pub errored_seconds: u64,
    pub unavailable_seconds: u64,
    pub total_seconds: u64,
    /// Per-second MOS; `None` for silent seconds.
    pub per_second_mos: Vec<Option<f64>>,
}

/// Full-window MOS combined with per-second temporal classification.
pub fn qoe_report(
    session_id: SessionId,
    metrics: &FlowMetrics,
    media: MediaType,
    thresholds: &QoeThresholds,
) -> Result<QoeReport, QoeError> {
    let mos = estimate_mos(metrics, media)?;
    let (degraded, errored, unavailable) = temporal_quality(&metrics.per_second, media, thresholds);
    let per_second_mos = metrics
        .per_second
        .iter()
        .map(|s| {
            if s.sent == 0 {
                None
            } else if s.delivered == 0 {
                Some(1.0)
            } else {
                Some(mos_from_components(s.loss, s.mean_delay_ms, s.jitter_ms, media))
            }
        })
        .collect();
    Ok(QoeReport {
        session_id,
        media_type: media,
        mos,
        degraded_seconds: degraded,
        errored_seconds: errored,
        unavailable_seconds: unavailable,
        total_seconds: metrics.per_second.len() as u64,
        per_second_mos,
    })
}
