//! The query boundary between adversary and honest model.
//!
//! An [`Oracle`] answers next-step queries and nothing else. [`LocalOracle`]
//! wraps a model in-process; [`serve`] and [`WireOracle`] put the same
//! contract on a TCP stream with length-prefixed JSON frames.

pub mod frame;
mod server;
mod wire;

pub use server::{serve, ServerHandle};
pub use wire::{WireConfig, WireOracle};

use crate::dataio::{interval, INTERVAL_MINUTES, TIMESTAMP_FORMAT};
use crate::forecaster::ForecastModel;
use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("io: {0}")]
    Io(String),
    #[error("could not reach {addr} after {attempts} attempts: {reason}")]
    Unreachable { addr: String, attempts: usize, reason: String },
    #[error("query {id} timed out after {attempts} attempts")]
    Timeout { id: u64, attempts: usize },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("query {id:?} rejected: {code:?}")]
    Rejected { id: Option<u64>, code: ErrorCode },
    #[error("address in use or unavailable: {0}")]
    Bind(String),
}

/// Protocol error codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    BadWindowLen,
    BadTimestamps,
    Malformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Handshake {
    pub w: usize,
    pub interval_minutes: i64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastQuery {
    pub id: u64,
    pub window: Vec<f64>,
    /// The window's timestamps followed by the predicted step's.
    pub timestamps: Vec<NaiveDateTime>,
}

impl ForecastQuery {
    /// Timestamps `start, start + 30 min, ...` for a window of `w` values.
    pub fn starting_at(id: u64, window: Vec<f64>, start: NaiveDateTime) -> Self {
        let timestamps = (0..=window.len()).map(|i| start + interval() * i as i32).collect();
        Self { id, window, timestamps }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastResponse {
    pub id: u64,
    pub prediction: f64,
}

/// Wire form of a query; timestamps travel as ISO-8601 strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireQuery {
    pub id: u64,
    pub window: Vec<f64>,
    pub timestamps: Vec<String>,
}

impl From<&ForecastQuery> for WireQuery {
    fn from(q: &ForecastQuery) -> Self {
        Self {
            id: q.id,
            window: q.window.clone(),
            timestamps: q.timestamps.iter().map(|t| t.format(TIMESTAMP_FORMAT).to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub id: Option<u64>,
    pub error: ErrorCode,
}

/// Anything that answers forecast queries without exposing weights.
pub trait Oracle {
    fn handshake(&mut self) -> Result<Handshake, OracleError>;
    fn query(&mut self, q: &ForecastQuery) -> Result<ForecastResponse, OracleError>;
}

/// Query counters. Only well-formed, answered queries are counted.
#[derive(Debug, Default)]
pub struct OracleStats {
    total: AtomicU64,
    per_client: Mutex<BTreeMap<String, u64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub total: u64,
    pub per_client: BTreeMap<String, u64>,
}

impl OracleStats {
    pub fn record(&self, client: &str) {
        self.total.fetch_add(1, Ordering::SeqCst);
        let mut map = self.per_client.lock().unwrap_or_else(|e| e.into_inner());
        *map.entry(client.to_string()).or_insert(0) += 1;
    }

    pub fn total(&self) -> u64 {
        self.total.load(Ordering::SeqCst)
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            total: self.total(),
            per_client: self.per_client.lock().unwrap_or_else(|e| e.into_inner()).clone(),
        }
    }
}

/// Validates a query against the model's window and answers it in kWh.
pub(crate) fn answer(model: &ForecastModel, window: &[f64], timestamps: &[NaiveDateTime]) -> Result<f64, ErrorCode> {
    let w = model.window();
    if window.len() != w {
        return Err(ErrorCode::BadWindowLen);
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(ErrorCode::Malformed);
    }
    if timestamps.len() != w + 1 || timestamps.windows(2).any(|p| p[1] <= p[0]) {
        return Err(ErrorCode::BadTimestamps);
    }
    match model.predict(window, timestamps) {
        Ok(p) if p.is_finite() => Ok(p),
        _ => Err(ErrorCode::Malformed),
    }
}

pub(crate) fn parse_timestamps(raw: &[String]) -> Result<Vec<NaiveDateTime>, ErrorCode> {
    raw.iter()
        .map(|s| NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT).map_err(|_| ErrorCode::BadTimestamps))
        .collect()
}

pub(crate) fn handshake_for(model: &ForecastModel) -> Handshake {
    Handshake {
        w: model.window(),
        interval_minutes: INTERVAL_MINUTES,
    }
}

/// In-process oracle over a shared model.
#[derive(Debug, Clone)]
pub struct LocalOracle {
    model: Arc<ForecastModel>,
    stats: Arc<OracleStats>,
    client: String,
}

impl LocalOracle {
    pub fn new(model: Arc<ForecastModel>) -> Self {
        Self {
            model,
            stats: Arc::new(OracleStats::default()),
            client: "local".into(),
        }
    }

    pub fn stats(&self) -> &OracleStats {
        &self.stats
    }
}

impl Oracle for LocalOracle {
    fn handshake(&mut self) -> Result<Handshake, OracleError> {
        Ok(handshake_for(&self.model))
    }

    fn query(&mut self, q: &ForecastQuery) -> Result<ForecastResponse, OracleError> {
        let prediction = answer(&self.model, &q.window, &q.timestamps).map_err(|code| OracleError::Rejected { id: Some(q.id), code })?;
        self.stats.record(&self.client);
        Ok(ForecastResponse { id: q.id, prediction })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::forecaster::{build_model, ForecastHyperparams};
    use chrono::NaiveDate;

    pub(crate) fn tiny_model(w: usize) -> Arc<ForecastModel> {
        let hp = ForecastHyperparams {
            lstm_nodes: 3,
            fc_nodes: 4,
            window: w,
            ..ForecastHyperparams::default()
        };
        Arc::new(build_model(&hp, 17).unwrap())
    }

    pub(crate) fn t0() -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2009, 9, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
    }

    #[test]
    fn local_oracle_matches_predict_and_counts() {
        let m = tiny_model(6);
        let mut o = LocalOracle::new(m.clone());
        assert_eq!(
            o.handshake().unwrap(),
            Handshake {
                w: 6,
                interval_minutes: 30
            }
        );
        let q = ForecastQuery::starting_at(4, vec![0.2; 6], t0());
        let r = o.query(&q).unwrap();
        assert_eq!(r.id, 4);
        assert_eq!(r.prediction, m.predict(&q.window, &q.timestamps).unwrap());
        assert_eq!(o.stats().total(), 1);
    }

    #[test]
    fn local_oracle_rejects_bad_queries_without_counting() {
        let mut o = LocalOracle::new(tiny_model(6));
        let short = ForecastQuery::starting_at(1, vec![0.2; 5], t0());
        assert!(matches!(
            o.query(&short),
            Err(OracleError::Rejected {
                code: ErrorCode::BadWindowLen,
                ..
            })
        ));
        let mut back = ForecastQuery::starting_at(2, vec![0.2; 6], t0());
        back.timestamps.swap(0, 1);
        assert!(matches!(
            o.query(&back),
            Err(OracleError::Rejected {
                code: ErrorCode::BadTimestamps,
                ..
            })
        ));
        assert_eq!(o.stats().total(), 0);
    }

    #[test]
    fn wire_messages_carry_no_weights() {
        let q = WireQuery::from(&ForecastQuery::starting_at(9, vec![0.5; 2], t0()));
        let json = serde_json::to_value(&q).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys, ["id", "timestamps", "window"]);
        assert_eq!(json["timestamps"][1], "2009-09-01T00:30:00");
        let hs = serde_json::to_string(&Handshake {
            w: 48,
            interval_minutes: 30,
        })
        .unwrap();
        assert_eq!(hs, r#"{"w":48,"interval_minutes":30}"#);
        let err = serde_json::to_string(&WireError {
            id: Some(3),
            error: ErrorCode::BadWindowLen,
        })
        .unwrap();
        assert_eq!(err, r#"{"id":3,"error":"BAD_WINDOW_LEN"}"#);
    }
}
