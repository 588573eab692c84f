use super::frame::{read_frame, write_json};
use super::{ForecastQuery, ForecastResponse, Handshake, Oracle, OracleError, WireError, WireQuery};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireConfig {
    /// Per-attempt connect and read timeout.
    pub timeout: Duration,
    /// Extra attempts after the first one fails.
    pub retries: usize,
    pub backoff: Duration,
}

impl Default for WireConfig {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(5),
            retries: 3,
            backoff: Duration::from_millis(50),
        }
    }
}

/// Client side of the oracle protocol.
#[derive(Debug)]
pub struct WireOracle {
    addr: String,
    config: WireConfig,
    stream: TcpStream,
}

enum Attempt<T> {
    Done(T),
    Retry(String),
}

impl WireOracle {
    pub fn connect(addr: &str, config: WireConfig) -> Result<Self, OracleError> {
        let stream = open(addr, &config)?;
        Ok(Self {
            addr: addr.to_string(),
            config,
            stream,
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn exchange(&mut self, payload: &impl serde::Serialize) -> Result<Attempt<Vec<u8>>, OracleError> {
        if let Err(e) = write_json(&mut self.stream, payload) {
            return Ok(Attempt::Retry(e.to_string()));
        }
        match read_frame(&mut self.stream, &|| true) {
            Ok(Some(body)) => Ok(Attempt::Done(body)),
            Ok(None) => Ok(Attempt::Retry("no response before timeout".into())),
            Err(e) => Ok(Attempt::Retry(e.to_string())),
        }
    }

    /// Sends `payload` and returns the reply frame, reconnecting and
    /// resending on timeouts or broken connections.
    fn call(&mut self, id: u64, payload: &impl serde::Serialize) -> Result<Vec<u8>, OracleError> {
        let attempts = self.config.retries + 1;
        for attempt in 1..=attempts {
            match self.exchange(payload)? {
                Attempt::Done(body) => return Ok(body),
                Attempt::Retry(reason) => {
                    log::warn!("query {id} to {}: attempt {attempt}/{attempts} failed: {reason}", self.addr);
                    if attempt == attempts {
                        break;
                    }
                    std::thread::sleep(self.config.backoff);
                    self.stream = open(&self.addr, &self.config)?;
                }
            }
        }
        Err(OracleError::Timeout { id, attempts })
    }
}

fn open(addr: &str, config: &WireConfig) -> Result<TcpStream, OracleError> {
    let attempts = config.retries + 1;
    let mut last = String::new();
    for attempt in 1..=attempts {
        match try_open(addr, config.timeout) {
            Ok(s) => return Ok(s),
            Err(e) => {
                last = e;
                if attempt < attempts {
                    std::thread::sleep(config.backoff);
                }
            }
        }
    }
    Err(OracleError::Unreachable {
        addr: addr.to_string(),
        attempts,
        reason: last,
    })
}

fn try_open(addr: &str, timeout: Duration) -> Result<TcpStream, String> {
    let sock = addr
        .to_socket_addrs()
        .map_err(|e| e.to_string())?
        .next()
        .ok_or_else(|| "address resolved to nothing".to_string())?;
    let s = TcpStream::connect_timeout(&sock, timeout).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(timeout)).map_err(|e| e.to_string())?;
    s.set_nodelay(true).map_err(|e| e.to_string())?;
    Ok(s)
}

impl Oracle for WireOracle {
    fn handshake(&mut self) -> Result<Handshake, OracleError> {
        let body = self.call(0, &"HELLO")?;
        serde_json::from_slice(&body).map_err(|e| OracleError::Malformed(e.to_string()))
    }

    fn query(&mut self, q: &ForecastQuery) -> Result<ForecastResponse, OracleError> {
        let body = self.call(q.id, &WireQuery::from(q))?;
        if let Ok(err) = serde_json::from_slice::<WireError>(&body) {
            return Err(OracleError::Rejected {
                id: err.id,
                code: err.error,
            });
        }
        let resp: ForecastResponse = serde_json::from_slice(&body).map_err(|e| OracleError::Malformed(e.to_string()))?;
        if resp.id != q.id {
            return Err(OracleError::Malformed(format!("response id {} for query {}", resp.id, q.id)));
        }
        if !resp.prediction.is_finite() {
            return Err(OracleError::Malformed("non-finite prediction".into()));
        }
        Ok(resp)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::{t0, tiny_model};
    use super::super::{serve, ErrorCode, LocalOracle};
    use super::*;
    use crate::seed;
    use rand::Rng;
    use std::net::TcpListener;

    fn fast() -> WireConfig {
        WireConfig {
            timeout: Duration::from_millis(200),
            retries: 3,
            backoff: Duration::from_millis(5),
        }
    }

    #[test]
    fn wire_matches_local_on_random_queries() {
        let model = tiny_model(48);
        let server = serve(model.clone(), "127.0.0.1:0").unwrap();
        let mut wire = WireOracle::connect(&server.addr().to_string(), WireConfig::default()).unwrap();
        let mut local = LocalOracle::new(model);
        assert_eq!(wire.handshake().unwrap(), local.handshake().unwrap());
        let mut rng = seed::rng(3);
        let mut worst: f64 = 0.0;
        for id in 0..100 {
            let window = (0..48).map(|_| rng.random_range(0.0..3.0)).collect();
            let start = t0() + crate::dataio::interval() * rng.random_range(0..5000);
            let q = ForecastQuery::starting_at(id * 31 + 7, window, start);
            let a = wire.query(&q).unwrap();
            let b = local.query(&q).unwrap();
            assert_eq!(a.id, q.id);
            worst = worst.max((a.prediction - b.prediction).abs());
        }
        assert!(worst <= 1e-9, "max difference {worst}");
        assert_eq!(server.stats().total(), 100);
    }

    #[test]
    fn rejected_query_keeps_connection_usable() {
        let server = serve(tiny_model(4), "127.0.0.1:0").unwrap();
        let mut wire = WireOracle::connect(&server.addr().to_string(), fast()).unwrap();
        let bad = ForecastQuery::starting_at(1, vec![0.0; 3], t0());
        assert!(matches!(
            wire.query(&bad),
            Err(OracleError::Rejected {
                id: Some(1),
                code: ErrorCode::BadWindowLen
            })
        ));
        assert!(wire.query(&ForecastQuery::starting_at(2, vec![0.0; 4], t0())).is_ok());
    }

    #[test]
    fn unreachable_endpoint_fails_after_retries() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let err = WireOracle::connect(&format!("127.0.0.1:{port}"), fast()).unwrap_err();
        assert!(matches!(err, OracleError::Unreachable { attempts: 4, .. }), "{err}");
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        // Accepts connections but never answers.
        let _keep = std::thread::spawn(move || {
            let mut held = Vec::new();
            for s in listener.incoming().take(4) {
                held.push(s);
            }
            std::thread::sleep(Duration::from_secs(2));
        });
        let mut wire = WireOracle::connect(&addr, fast()).unwrap();
        let err = wire.query(&ForecastQuery::starting_at(9, vec![0.0; 4], t0())).unwrap_err();
        assert!(matches!(err, OracleError::Timeout { id: 9, attempts: 4 }), "{err}");
    }
}
