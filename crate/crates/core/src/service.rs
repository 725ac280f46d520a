//! Line-delimited JSON service holding one estimator per stream.
//!
//! Every request is one JSON object on one line, tagged by `op`; every
//! response is one JSON object on one line with `"ok": true` or
//! `"ok": false` and an `error` object. See the guide for the schema.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::basis::{BasisFamily, BasisSpec, PenaltySpec};
use crate::engine::{DensityConfig, RegressorConfig, StreamBatch};
use crate::error::Error;
use crate::pipeline::{EstimatorCheckpoint, OnePassEstimator, TuningMode};
use crate::schedule::SchedulerConfig;
use crate::tuning::TuningGrid;

/// Per-stream settings; every field can be overridden in `open`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSettings {
    pub lo: f64,
    pub hi: f64,
    /// Extension margin as a fraction of `hi − lo`.
    pub extension: f64,
    pub density: DensityChoice,
    pub tuning: TuningMode,
    pub mem_cap: Option<usize>,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityChoice {
    Sketch,
    KnownUniform,
}

impl Default for StreamSettings {
    fn default() -> Self {
        Self {
            lo: 0.0,
            hi: 1.0,
            extension: crate::basis::DEFAULT_EXTENSION_FRACTION,
            density: DensityChoice::Sketch,
            tuning: TuningMode::CrossValidated { grid: TuningGrid::default() },
            mem_cap: None,
            batch_size: 100,
        }
    }
}

impl StreamSettings {
    pub fn regressor_config(&self) -> crate::Result<RegressorConfig> {
        let basis = BasisSpec::new(BasisFamily::Fourier, self.lo, self.hi, self.extension)?;
        let density = match self.density {
            DensityChoice::Sketch => DensityConfig::Sketch { basis: BasisSpec::fourier(self.lo, self.hi)? },
            DensityChoice::KnownUniform => DensityConfig::KnownUniform,
        };
        let cfg = RegressorConfig {
            basis,
            penalty: PenaltySpec::roughness(),
            density,
            schedule: SchedulerConfig::default().with_mem_cap(self.mem_cap),
            batch_size: self.batch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Optional overrides carried by an `open` request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpenOptions {
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub extension: Option<f64>,
    pub density: Option<DensityChoice>,
    pub tuning: Option<TuningMode>,
    pub mem_cap: Option<usize>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Estimate,
    Density,
    Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Open {
        stream: String,
        #[serde(default, flatten)]
        options: OpenOptions,
    },
    Ingest { stream: String, points: Vec<(f64, f64)> },
    Query { stream: String, kind: QueryKind, t: Option<f64> },
    Checkpoint { stream: String },
    Restore { stream: String, checkpoint: Box<EstimatorCheckpoint> },
    Close { stream: String },
    List,
}

/// Error classes reported on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Request,
    NotFound,
    Conflict,
    Validation,
    WarmUp,
    Numerical,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceError {
    pub kind: ErrorKind,
    pub message: String,
}

impl ServiceError {
    fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self { kind, message: message.into() }
    }
}

impl From<Error> for ServiceError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Domain(_) | Error::Config(_) | Error::Checkpoint(_) => ErrorKind::Validation,
            Error::WarmUp { .. } | Error::State(_) => ErrorKind::WarmUp,
            Error::Numerical(_)
            | Error::DegenerateDensity(_)
            | Error::IllConditioned { .. }
            | Error::NoFeasibleTuning => ErrorKind::Numerical,
            Error::Io(_) => ErrorKind::Internal,
        };
        ServiceError::new(kind, e.to_string())
    }
}

type Handle = Arc<RwLock<OnePassEstimator>>;

/// The stream table. Different streams proceed independently; within a
/// stream, ingests take the write lock and queries share the read lock.
#[derive(Debug, Default)]
pub struct Service {
    defaults: StreamSettings,
    streams: RwLock<HashMap<String, Handle>>,
}

impl Service {
    pub fn new(defaults: StreamSettings) -> Self {
        Self { defaults, streams: RwLock::new(HashMap::new()) }
    }

    pub fn defaults(&self) -> &StreamSettings {
        &self.defaults
    }

    fn get(&self, id: &str) -> Result<Handle, ServiceError> {
        self.streams
            .read()
            .expect("stream table poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::new(ErrorKind::NotFound, format!("unknown stream '{id}'")))
    }

    fn insert(&self, id: String, est: OnePassEstimator) -> Result<(), ServiceError> {
        let mut table = self.streams.write().expect("stream table poisoned");
        if table.contains_key(&id) {
            return Err(ServiceError::new(ErrorKind::Conflict, format!("stream '{id}' already exists")));
        }
        table.insert(id, Arc::new(RwLock::new(est)));
        Ok(())
    }

    /// Executes one request.
    pub fn handle(&self, req: Request) -> Result<Value, ServiceError> {
        match req {
            Request::Open { stream, options } => {
                let d = &self.defaults;
                let s = StreamSettings {
                    lo: options.lo.unwrap_or(d.lo),
                    hi: options.hi.unwrap_or(d.hi),
                    extension: options.extension.unwrap_or(d.extension),
                    density: options.density.unwrap_or(d.density),
                    tuning: options.tuning.unwrap_or_else(|| d.tuning.clone()),
                    mem_cap: options.mem_cap.or(d.mem_cap),
                    batch_size: options.batch_size.unwrap_or(d.batch_size),
                };
                let est = OnePassEstimator::new(s.regressor_config()?, s.tuning.clone())?;
                self.insert(stream.clone(), est)?;
                Ok(json!({ "stream": stream }))
            }
            Request::Ingest { stream, points } => {
                if points.is_empty() {
                    return Err(ServiceError::new(ErrorKind::Request, "ingest needs at least one point"));
                }
                let h = self.get(&stream)?;
                let mut est = h.write().expect("stream poisoned");
                est.ingest(&StreamBatch::from_pairs(&points))?;
                Ok(json!({ "stream": stream, "n": est.n() }))
            }
            Request::Query { stream, kind, t } => {
                let h = self.get(&stream)?;
                let est = h.read().expect("stream poisoned");
                let need_t = || t.ok_or_else(|| ServiceError::new(ErrorKind::Request, "query needs 't'"));
                match kind {
                    QueryKind::Estimate => Ok(json!({ "t": need_t()?, "value": est.estimate(need_t()?)? })),
                    QueryKind::Density => Ok(json!({ "t": need_t()?, "value": est.density(need_t()?)? })),
                    QueryKind::Stats => {
                        if t.is_some() {
                            return Err(ServiceError::new(ErrorKind::Request, "stats takes no 't'"));
                        }
                        let s = est.stats();
                        Ok(json!({
                            "n": s.n,
                            "q_active": s.q_active,
                            "p_active": s.p_active,
                            "memory_units": s.memory_units,
                            "rho": s.rho,
                            "c_rho": s.c_rho,
                            "h": s.h,
                        }))
                    }
                }
            }
            Request::Checkpoint { stream } => {
                let h = self.get(&stream)?;
                let est = h.read().expect("stream poisoned");
                Ok(json!({ "checkpoint": est.checkpoint() }))
            }
            Request::Restore { stream, checkpoint } => {
                let est = OnePassEstimator::from_checkpoint(&checkpoint)?;
                let n = est.n();
                self.insert(stream.clone(), est)?;
                Ok(json!({ "stream": stream, "n": n }))
            }
            Request::Close { stream } => {
                let removed = self.streams.write().expect("stream table poisoned").remove(&stream);
                match removed {
                    Some(_) => Ok(json!({ "stream": stream })),
                    None => Err(ServiceError::new(ErrorKind::NotFound, format!("unknown stream '{stream}'"))),
                }
            }
            Request::List => {
                let mut ids: Vec<String> = self.streams.read().expect("stream table poisoned").keys().cloned().collect();
                ids.sort();
                Ok(json!({ "streams": ids }))
            }
        }
    }

    /// Parses one request line and renders the response line (no newline).
    pub fn handle_line(&self, line: &str) -> String {
        let result = serde_json::from_str::<Request>(line)
            .map_err(|e| ServiceError::new(ErrorKind::Request, e.to_string()))
            .and_then(|req| self.handle(req));
        let body = match result {
            Ok(Value::Object(mut map)) => {
                map.insert("ok".into(), Value::Bool(true));
                Value::Object(map)
            }
            Ok(other) => json!({ "ok": true, "result": other }),
            Err(e) => json!({ "ok": false, "error": { "kind": e.kind, "message": e.message } }),
        };
        body.to_string()
    }

    /// Answers requests from `reader` line by line until EOF.
    pub fn serve_connection<R: BufRead, W: Write>(&self, reader: R, mut writer: W) -> std::io::Result<()> {
        for line in reader.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            writeln!(writer, "{}", self.handle_line(&line))?;
            writer.flush()?;
        }
        Ok(())
    }

    /// Accepts connections forever, one thread per connection.
    pub fn serve_listener(self: Arc<Self>, listener: TcpListener) -> std::io::Result<()> {
        for conn in listener.incoming() {
            let conn = conn?;
            let svc = Arc::clone(&self);
            std::thread::spawn(move || {
                let _ = svc.serve_tcp(conn);
            });
        }
        Ok(())
    }

    fn serve_tcp(&self, conn: TcpStream) -> std::io::Result<()> {
        let reader = BufReader::new(conn.try_clone()?);
        self.serve_connection(reader, conn)
    }
}

/// Binds `addr` and serves until the process ends.
pub fn serve<A: ToSocketAddrs>(addr: A, defaults: StreamSettings) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr)?;
    Arc::new(Service::new(defaults)).serve_listener(listener)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(svc: &Service, line: &str) -> Value {
        serde_json::from_str(&svc.handle_line(line)).unwrap()
    }

    #[test]
    fn empty_stream_contract() {
        let svc = Service::default();
        assert_eq!(call(&svc, r#"{"op":"open","stream":"a"}"#)["ok"], true);
        let stats = call(&svc, r#"{"op":"query","stream":"a","kind":"stats"}"#);
        assert_eq!(stats["n"], 0);
        let est = call(&svc, r#"{"op":"query","stream":"a","kind":"estimate","t":0.5}"#);
        assert_eq!(est["ok"], false);
        assert_eq!(est["error"]["kind"], "warm_up");
    }

    #[test]
    fn request_errors() {
        let svc = Service::default();
        assert_eq!(call(&svc, "not json")["error"]["kind"], "request");
        assert_eq!(call(&svc, r#"{"op":"explode"}"#)["error"]["kind"], "request");
        assert_eq!(call(&svc, r#"{"op":"query","stream":"x","kind":"stats"}"#)["error"]["kind"], "not_found");
        call(&svc, r#"{"op":"open","stream":"a","tuning":{"mode":"fixed","c_rho":1.0,"h":0.25}}"#);
        assert_eq!(call(&svc, r#"{"op":"open","stream":"a"}"#)["error"]["kind"], "conflict");
        assert_eq!(call(&svc, r#"{"op":"query","stream":"a","kind":"estimate"}"#)["error"]["kind"], "request");
        assert_eq!(call(&svc, r#"{"op":"ingest","stream":"a","points":[[1.5,0.0]]}"#)["error"]["kind"], "validation");
        assert_eq!(call(&svc, r#"{"op":"ingest","stream":"a","points":[]}"#)["error"]["kind"], "request");
        assert_eq!(call(&svc, r#"{"op":"open","stream":"b","bogus":1}"#)["error"]["kind"], "request");
    }

    #[test]
    fn list_and_close() {
        let svc = Service::default();
        call(&svc, r#"{"op":"open","stream":"b"}"#);
        call(&svc, r#"{"op":"open","stream":"a"}"#);
        assert_eq!(call(&svc, r#"{"op":"list"}"#)["streams"], json!(["a", "b"]));
        assert_eq!(call(&svc, r#"{"op":"close","stream":"a"}"#)["ok"], true);
        assert_eq!(call(&svc, r#"{"op":"list"}"#)["streams"], json!(["b"]));
    }

    #[test]
    fn serves_over_a_reader() {
        let svc = Service::default();
        let input = "{\"op\":\"open\",\"stream\":\"s\"}\n\n{\"op\":\"list\"}\n";
        let mut out = Vec::new();
        svc.serve_connection(input.as_bytes(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 2);
    }
}
