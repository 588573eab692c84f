use super::frame::{read_frame, write_json};
use super::{
    answer, handshake_for, parse_timestamps, ErrorCode, ForecastResponse, OracleError, OracleStats, StatsSnapshot, WireError, WireQuery,
};
use crate::forecaster::ForecastModel;
use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

const POLL: Duration = Duration::from_millis(20);

/// A running oracle server. Dropping the handle stops it.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stats: Arc<OracleStats>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> &OracleStats {
        &self.stats
    }

    /// Flag that stops the server when set; handy for signal handlers.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        self.stop.clone()
    }

    /// Blocks until the stop flag is raised and every connection closed.
    pub fn wait(mut self) -> StatsSnapshot {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
        self.stats.snapshot()
    }

    pub fn shutdown(self) -> StatsSnapshot {
        self.stop.store(true, Ordering::SeqCst);
        self.wait()
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

/// Binds `endpoint` (e.g. `127.0.0.1:0`) and answers queries from `model` on
/// one thread per connection.
pub fn serve(model: Arc<ForecastModel>, endpoint: &str) -> Result<ServerHandle, OracleError> {
    let listener = TcpListener::bind(endpoint).map_err(|e| OracleError::Bind(format!("{endpoint}: {e}")))?;
    let addr = listener.local_addr().map_err(|e| OracleError::Io(e.to_string()))?;
    listener.set_nonblocking(true).map_err(|e| OracleError::Io(e.to_string()))?;
    let stats = Arc::new(OracleStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let acceptor = {
        let (stats, stop) = (stats.clone(), stop.clone());
        std::thread::spawn(move || accept_loop(listener, model, stats, stop))
    };
    log::info!("oracle listening on {addr}");
    Ok(ServerHandle {
        addr,
        stats,
        stop,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(listener: TcpListener, model: Arc<ForecastModel>, stats: Arc<OracleStats>, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (model, stats, stop) = (model.clone(), stats.clone(), stop.clone());
                workers.push(std::thread::spawn(move || {
                    if let Err(e) = handle(stream, peer, &model, &stats, &stop) {
                        log::debug!("connection {peer}: {e}");
                    }
                }));
                workers.retain(|w| !w.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                std::thread::sleep(POLL);
            }
        }
    }
    for w in workers {
        let _ = w.join();
    }
}

fn handle(mut stream: TcpStream, peer: SocketAddr, model: &ForecastModel, stats: &OracleStats, stop: &AtomicBool) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let client = peer.to_string();
    let cancelled = || stop.load(Ordering::SeqCst);
    while let Some(frame) = read_frame(&mut stream, &cancelled)? {
        if is_hello(&frame) {
            write_json(&mut stream, &handshake_for(model))?;
            continue;
        }
        match reply(&frame, model) {
            Ok(resp) => {
                stats.record(&client);
                write_json(&mut stream, &resp)?;
            }
            Err(err) => write_json(&mut stream, &err)?,
        }
    }
    Ok(())
}

fn is_hello(frame: &[u8]) -> bool {
    frame == b"HELLO" || serde_json::from_slice::<String>(frame).is_ok_and(|s| s == "HELLO")
}

fn reply(frame: &[u8], model: &ForecastModel) -> Result<ForecastResponse, WireError> {
    let malformed = |id| WireError {
        id,
        error: ErrorCode::Malformed,
    };
    let value: serde_json::Value = serde_json::from_slice(frame).map_err(|_| malformed(None))?;
    let id = value.get("id").and_then(|v| v.as_u64());
    let q: WireQuery = serde_json::from_value(value).map_err(|_| malformed(id))?;
    let reject = |error| WireError { id: Some(q.id), error };
    let times = parse_timestamps(&q.timestamps).map_err(reject)?;
    let prediction = answer(model, &q.window, &times).map_err(reject)?;
    Ok(ForecastResponse { id: q.id, prediction })
}
