use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{
    WireError, WireLabels, WireRequest, WireResponse, CODE_BAD_REQUEST, CODE_BUDGET_EXHAUSTED,
    CODE_INTERNAL, MAX_BATCH,
};
use crate::error::{LabError, Result};
use crate::victim::{LabelMode, QueryOracle};

const POLL: Duration = Duration::from_millis(25);

/// A running server. Dropping the handle stops it.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Flag that stops the server when set; safe to set from a signal handler.
    pub fn stop_flag(&self) -> Arc<AtomicBool> {
        Arc::clone(&self.stop)
    }

    pub fn is_running(&self) -> bool {
        !self.stop.load(Ordering::SeqCst)
    }

    /// Blocks until the stop flag is set, then drains connections.
    pub fn wait(mut self) {
        self.join();
    }

    /// Stops accepting, closes connections after their in-flight request and
    /// waits for every worker.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }

    fn join(&mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        self.join();
    }
}

/// Binds `addr` and serves `oracle` on a background thread, one worker
/// thread per connection.
pub fn serve(oracle: Arc<dyn QueryOracle>, addr: impl ToSocketAddrs) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&stop);
    let acceptor = thread::Builder::new()
        .name("loralab-accept".into())
        .spawn(move || accept_loop(listener, oracle, flag))?;
    Ok(ServerHandle { addr: local, stop, acceptor: Some(acceptor) })
}

fn accept_loop(listener: TcpListener, oracle: Arc<dyn QueryOracle>, stop: Arc<AtomicBool>) {
    let mut workers: Vec<JoinHandle<()>> = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let oracle = Arc::clone(&oracle);
                let stop = Arc::clone(&stop);
                if let Ok(h) = thread::Builder::new()
                    .name("loralab-conn".into())
                    .spawn(move || {
                        let _ = handle_connection(stream, oracle.as_ref(), &stop);
                    })
                {
                    workers.push(h);
                }
                workers.retain(|h| !h.is_finished());
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(_) => thread::sleep(POLL),
        }
    }
    for h in workers {
        let _ = h.join();
    }
}

fn handle_connection(stream: TcpStream, oracle: &dyn QueryOracle, stop: &AtomicBool) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    stream.set_nodelay(true)?;
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut line = Vec::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            return Ok(());
        }
        // A timed-out read keeps whatever partial line it consumed in `line`.
        match reader.read_until(b'\n', &mut line) {
            Ok(0) => return Ok(()),
            Ok(_) if line.last() != Some(&b'\n') => return Ok(()),
            Ok(_) => {
                let response = respond(&line[..line.len() - 1], oracle);
                line.clear();
                let mut out = serde_json::to_vec(&response).map_err(std::io::Error::other)?;
                out.push(b'\n');
                writer.write_all(&out)?;
                writer.flush()?;
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(e) => return Err(e),
        }
    }
}

fn error(id: Option<i64>, code: &str, remaining: Option<u64>) -> WireResponse {
    WireResponse::Err { id, error: WireError { code: code.into(), remaining } }
}

/// The response to one request line, without its terminator.
pub(crate) fn respond(line: &[u8], oracle: &dyn QueryOracle) -> WireResponse {
    let line = line.strip_suffix(b"\r").unwrap_or(line);
    let req: WireRequest = match serde_json::from_slice(line) {
        Ok(r) => r,
        Err(_) => {
            // Echo the id when the line is JSON with an integer id.
            let id = serde_json::from_slice::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(serde_json::Value::as_i64));
            return error(id, CODE_BAD_REQUEST, None);
        }
    };
    if req.inputs.len() > MAX_BATCH {
        return error(Some(req.id), CODE_BAD_REQUEST, None);
    }
    match oracle.query(&req.inputs) {
        Ok(answers) => {
            let labels = match oracle.label_mode() {
                LabelMode::Soft => WireLabels::Soft(answers.into_iter().map(|p| p.into_inner()).collect()),
                LabelMode::Hard => WireLabels::Hard(answers.iter().map(|p| p.argmax()).collect()),
            };
            match oracle.remaining() {
                Ok(remaining) => WireResponse::Ok { id: req.id, labels, remaining },
                Err(_) => error(Some(req.id), CODE_INTERNAL, None),
            }
        }
        Err(LabError::BudgetExhausted { remaining, .. }) => {
            error(Some(req.id), CODE_BUDGET_EXHAUSTED, Some(remaining))
        }
        Err(LabError::Contract(_)) => error(Some(req.id), CODE_BAD_REQUEST, None),
        Err(_) => error(Some(req.id), CODE_INTERNAL, None),
    }
}
