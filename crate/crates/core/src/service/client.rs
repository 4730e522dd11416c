use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::{WireLabels, WireRequest, WireResponse, CODE_BUDGET_EXHAUSTED, MAX_BATCH};
use crate::error::{ensure, LabError, Result};
use crate::numerics::ProbVector;
use crate::victim::{LabelMode, QueryOracle};

#[derive(Debug, Clone)]
pub struct RemoteOptions {
    pub connect_timeout: Duration,
    pub read_timeout: Duration,
    /// Extra attempts after a transport failure that happened before any
    /// response byte arrived.
    pub retries: u32,
    pub retry_delay: Duration,
}

impl Default for RemoteOptions {
    fn default() -> Self {
        Self {
            connect_timeout: Duration::from_secs(5),
            read_timeout: Duration::from_secs(60),
            retries: 2,
            retry_delay: Duration::from_millis(50),
        }
    }
}

#[derive(Debug)]
struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

#[derive(Debug)]
struct ClientState {
    conn: Option<Conn>,
    next_id: i64,
}

/// Client side of the wire protocol, usable wherever a local oracle is.
///
/// The label mode and class count are part of the endpoint's public
/// description and are supplied by the caller; answers that disagree with
/// them are protocol errors.
#[derive(Debug)]
pub struct RemoteOracle {
    addr: SocketAddr,
    mode: LabelMode,
    num_classes: usize,
    opts: RemoteOptions,
    state: Mutex<ClientState>,
}

/// Transport failure, tagged with whether any response byte had arrived.
struct Failure {
    err: LabError,
    retryable: bool,
}

impl RemoteOracle {
    /// Connects eagerly so an unreachable server is reported here.
    pub fn connect(addr: impl ToSocketAddrs, mode: LabelMode, num_classes: usize, opts: RemoteOptions) -> Result<Self> {
        ensure!(num_classes >= 2, "num_classes must be at least 2");
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| LabError::Transport(format!("cannot resolve address: {e}")))?
            .next()
            .ok_or_else(|| LabError::Transport("address resolved to nothing".into()))?;
        let oracle = Self { addr, mode, num_classes, opts, state: Mutex::new(ClientState { conn: None, next_id: 0 }) };
        {
            let mut st = oracle.state.lock().expect("client lock");
            st.conn = Some(oracle.open().map_err(|f| f.err)?);
        }
        Ok(oracle)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn open(&self) -> std::result::Result<Conn, Failure> {
        let stream = TcpStream::connect_timeout(&self.addr, self.opts.connect_timeout)
            .map_err(|e| Failure { err: LabError::Transport(format!("connect to {}: {e}", self.addr)), retryable: true })?;
        let setup = || -> std::io::Result<Conn> {
            stream.set_read_timeout(Some(self.opts.read_timeout))?;
            stream.set_nodelay(true)?;
            Ok(Conn { writer: stream.try_clone()?, reader: BufReader::new(stream) })
        };
        setup().map_err(|e| Failure { err: LabError::Transport(e.to_string()), retryable: true })
    }

    fn exchange(conn: &mut Conn, payload: &[u8]) -> std::result::Result<Vec<u8>, Failure> {
        let transport = |e: std::io::Error, retryable| Failure { err: LabError::Transport(e.to_string()), retryable };
        conn.writer.write_all(payload).map_err(|e| transport(e, true))?;
        conn.writer.flush().map_err(|e| transport(e, true))?;
        let mut line = Vec::new();
        match conn.reader.read_until(b'\n', &mut line) {
            Ok(0) => Err(Failure { err: LabError::Transport("connection closed before a response".into()), retryable: true }),
            Ok(_) if line.last() == Some(&b'\n') => {
                line.pop();
                Ok(line)
            }
            Ok(_) => Err(Failure { err: LabError::Transport("connection closed mid-response".into()), retryable: false }),
            Err(e) => {
                let timed_out = matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut);
                let retryable = line.is_empty() && !timed_out;
                Err(transport(e, retryable))
            }
        }
    }

    /// Sends one request and returns the parsed, id-checked response.
    fn round_trip(&self, inputs: &[Vec<f64>]) -> Result<WireResponse> {
        let mut st = self.state.lock().expect("client lock");
        let id = st.next_id;
        st.next_id += 1;
        let mut payload = serde_json::to_vec(&WireRequest { id, inputs: inputs.to_vec() })?;
        payload.push(b'\n');

        let mut attempt = 0;
        let line = loop {
            let result = match st.conn.as_mut() {
                Some(conn) => Self::exchange(conn, &payload),
                None => self.open().and_then(|c| {
                    let conn = st.conn.insert(c);
                    Self::exchange(conn, &payload)
                }),
            };
            match result {
                Ok(line) => break line,
                Err(f) => {
                    st.conn = None;
                    if !f.retryable || attempt >= self.opts.retries {
                        return Err(f.err);
                    }
                    attempt += 1;
                    thread::sleep(self.opts.retry_delay);
                }
            }
        };
        let response: WireResponse = serde_json::from_slice(&line)
            .map_err(|e| LabError::Protocol(format!("unparseable response: {e}")))?;
        if response.id() != Some(id) {
            st.conn = None;
            return Err(LabError::Protocol(format!("response id {:?} does not echo request id {id}", response.id())));
        }
        Ok(response)
    }

    fn convert(&self, labels: WireLabels, expected: usize) -> Result<Vec<ProbVector>> {
        if labels.len() != expected {
            return Err(LabError::Protocol(format!("{} labels for {expected} inputs", labels.len())));
        }
        let k = self.num_classes;
        match (labels, self.mode) {
            (WireLabels::Soft(v), _) if v.is_empty() => Ok(Vec::new()),
            (WireLabels::Soft(v), LabelMode::Soft) => v
                .into_iter()
                .map(|p| {
                    if p.len() != k {
                        return Err(LabError::Protocol(format!("label of length {} for {k} classes", p.len())));
                    }
                    ProbVector::new(p).map_err(|e| LabError::Protocol(e.to_string()))
                })
                .collect(),
            (WireLabels::Hard(v), LabelMode::Hard) => v
                .into_iter()
                .map(|c| ProbVector::one_hot(k, c).map_err(|e| LabError::Protocol(e.to_string())))
                .collect(),
            _ => Err(LabError::Protocol(format!("labels do not match {} mode", self.mode.as_str()))),
        }
    }
}

impl QueryOracle for RemoteOracle {
    fn query(&self, inputs: &[Vec<f64>]) -> Result<Vec<ProbVector>> {
        ensure!(inputs.len() <= MAX_BATCH, "batch of {} exceeds the wire cap {MAX_BATCH}", inputs.len());
        match self.round_trip(inputs)? {
            WireResponse::Ok { labels, .. } => self.convert(labels, inputs.len()),
            WireResponse::Err { error, .. } if error.code == CODE_BUDGET_EXHAUSTED => {
                Err(LabError::BudgetExhausted { requested: inputs.len() as u64, remaining: error.remaining.unwrap_or(0) })
            }
            WireResponse::Err { error, .. } => Err(LabError::Remote { code: error.code, remaining: error.remaining }),
        }
    }

    fn remaining(&self) -> Result<u64> {
        match self.round_trip(&[])? {
            WireResponse::Ok { remaining, labels, .. } if labels.is_empty() => Ok(remaining),
            WireResponse::Ok { .. } => Err(LabError::Protocol("labels returned for an empty request".into())),
            WireResponse::Err { error, .. } => Err(LabError::Remote { code: error.code, remaining: error.remaining }),
        }
    }

    fn label_mode(&self) -> LabelMode {
        self.mode
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{AdaptedClassifier, Backbone};
    use crate::service::serve;
    use crate::victim::VictimOracle;
    use std::net::TcpListener;
    use std::sync::Arc;

    fn model() -> AdaptedClassifier {
        let bb = Backbone::random(3, 4, 2).unwrap();
        let mut m = AdaptedClassifier::fresh(bb, 3, 2, 2.0, 2).unwrap();
        let p: Vec<f64> = (0..m.trainable_len()).map(|i| ((i * 5 % 13) as f64 - 6.0) / 7.0).collect();
        m.set_trainable_params(&p).unwrap();
        m
    }

    fn inputs(n: usize) -> Vec<Vec<f64>> {
        (0..n).map(|i| vec![i as f64 * 0.3 - 1.0, 0.7, -(i as f64) / 5.0]).collect()
    }

    #[test]
    fn remote_answers_match_local_bit_for_bit() {
        for mode in [LabelMode::Soft, LabelMode::Hard] {
            let local = VictimOracle::new(model(), mode, 100);
            let server = serve(Arc::new(VictimOracle::new(model(), mode, 100)), "127.0.0.1:0").unwrap();
            let remote = RemoteOracle::connect(server.local_addr(), mode, 3, RemoteOptions::default()).unwrap();
            let xs = inputs(20);
            assert_eq!(remote.query(&xs).unwrap(), local.query(&xs).unwrap());
            assert_eq!(remote.remaining().unwrap(), 80);
            server.shutdown();
        }
    }

    #[test]
    fn budget_refusal_is_reported_as_such() {
        let server = serve(Arc::new(VictimOracle::new(model(), LabelMode::Soft, 5)), "127.0.0.1:0").unwrap();
        let remote = RemoteOracle::connect(server.local_addr(), LabelMode::Soft, 3, RemoteOptions::default()).unwrap();
        match remote.query(&inputs(6)) {
            Err(LabError::BudgetExhausted { requested: 6, remaining: 5 }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(remote.remaining().unwrap(), 5);
    }

    #[test]
    fn mode_mismatch_is_a_protocol_error() {
        let server = serve(Arc::new(VictimOracle::new(model(), LabelMode::Hard, 5)), "127.0.0.1:0").unwrap();
        let remote = RemoteOracle::connect(server.local_addr(), LabelMode::Soft, 3, RemoteOptions::default()).unwrap();
        assert!(matches!(remote.query(&inputs(1)), Err(LabError::Protocol(_))));
    }

    #[test]
    fn unreachable_server_is_a_transport_error() {
        let addr = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap();
        let opts = RemoteOptions { retries: 1, retry_delay: Duration::from_millis(1), ..RemoteOptions::default() };
        assert!(matches!(RemoteOracle::connect(addr, LabelMode::Soft, 3, opts), Err(LabError::Transport(_))));
    }

    #[test]
    fn stopped_server_surfaces_transport_error() {
        let oracle = Arc::new(VictimOracle::new(model(), LabelMode::Soft, 50));
        let server = serve(oracle.clone(), "127.0.0.1:0").unwrap();
        let opts = RemoteOptions { retries: 1, retry_delay: Duration::from_millis(1), ..RemoteOptions::default() };
        let remote = RemoteOracle::connect(server.local_addr(), LabelMode::Soft, 3, opts).unwrap();
        remote.query(&inputs(4)).unwrap();
        server.shutdown();
        assert!(matches!(remote.query(&inputs(4)), Err(LabError::Transport(_))));
        assert_eq!(oracle.remaining().unwrap(), 46);
    }

    #[test]
    fn id_echo_mismatch_is_a_protocol_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let fake = thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            let mut r = BufReader::new(s.try_clone().unwrap());
            let mut w = s;
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            w.write_all(b"{\"id\":999,\"labels\":[],\"remaining\":1}\n").unwrap();
        });
        let remote = RemoteOracle::connect(addr, LabelMode::Soft, 3, RemoteOptions::default()).unwrap();
        assert!(matches!(remote.remaining(), Err(LabError::Protocol(_))));
        fake.join().unwrap();
    }
}
