//! Newline-delimited JSON adapter for externally hosted models.
//!
//! Request: `{"id", "sample_rate", "samples", "model"}`, one per line.
//! Reply: `{"id", "probs": {"SB", "MB", "CRS", "HS"}}`. Replies are matched
//! to requests by id; stale replies to timed-out requests are discarded.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ClassProbabilities, ClassifyRequest, Classifier};
use crate::audio::time_to_index;
use crate::error::{Error, Result};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

/// Where the adapter lives: a child process spoken to over stdio, or a TCP
/// socket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdapterEndpoint {
    Command { program: String, args: Vec<String> },
    Tcp(String),
}

impl FromStr for AdapterEndpoint {
    type Err = Error;

    /// `tcp://host:port`, a bare `host:port`, or a whitespace-separated
    /// command line.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(AdapterEndpoint::Tcp(addr.to_string()));
        }
        if s.parse::<std::net::SocketAddr>().is_ok() {
            return Ok(AdapterEndpoint::Tcp(s.to_string()));
        }
        let mut parts = s.split_whitespace().map(str::to_string);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty adapter address".into()))?;
        Ok(AdapterEndpoint::Command {
            program,
            args: parts.collect(),
        })
    }
}

impl fmt::Display for AdapterEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AdapterEndpoint::Tcp(a) => write!(f, "tcp://{a}"),
            AdapterEndpoint::Command { program, args } => {
                write!(f, "{program}")?;
                for a in args {
                    write!(f, " {a}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdapterRequest {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdapterReply {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
}

impl Connection {
    fn open(endpoint: &AdapterEndpoint) -> Result<Self> {
        let (tx, rx) = mpsc::channel();
        let transport = |e: std::io::Error| Error::Transport(format!("{endpoint}: {e}"));
        let (writer, reader, child): (Box<dyn Write + Send>, Box<dyn std::io::Read + Send>, _) =
            match endpoint {
                AdapterEndpoint::Tcp(addr) => {
                    let stream = TcpStream::connect(addr).map_err(transport)?;
                    let _ = stream.set_nodelay(true);
                    let read_half = stream.try_clone().map_err(transport)?;
                    (Box::new(stream), Box::new(read_half), None)
                }
                AdapterEndpoint::Command { program, args } => {
                    let mut child = Command::new(program)
                        .args(args)
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(transport)?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (Box::new(stdin), Box::new(stdout), Some(child))
                }
            };
        std::thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            writer,
            lines: rx,
            child,
        })
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Adapter client. Requests on one client are serialised; use several
/// clients for parallel connections.
pub struct ExternalClassifier {
    endpoint: AdapterEndpoint,
    timeout: Duration,
    conn: Mutex<Option<Connection>>,
    next_id: AtomicU64,
}

impl ExternalClassifier {
    pub fn new(endpoint: AdapterEndpoint) -> Self {
        Self::with_timeout(endpoint, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(endpoint: AdapterEndpoint, timeout: Duration) -> Self {
        Self {
            endpoint,
            timeout,
            conn: Mutex::new(None),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn endpoint(&self) -> &AdapterEndpoint {
        &self.endpoint
    }

    /// Send one clip and wait for its probabilities.
    pub fn request(&self, samples: &[f32], sample_rate: u32, model: Option<&str>) -> Result<ClassProbabilities> {
        let id = format!("r{}", self.next_id.fetch_add(1, Ordering::Relaxed));
        let req = AdapterRequest {
            id: id.clone(),
            sample_rate,
            samples: samples.to_vec(),
            model: model.map(str::to_string),
        };
        let mut line = serde_json::to_vec(&req)?;
        line.push(b'\n');

        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(Connection::open(&self.endpoint)?);
        }
        let conn = guard.as_mut().expect("connection open");
        let sent = conn.writer.write_all(&line).and_then(|_| conn.writer.flush());
        if let Err(e) = sent {
            *guard = None;
            return Err(Error::Transport(format!("{}: {e}", self.endpoint)));
        }

        let deadline = Instant::now() + self.timeout;
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match conn.lines.recv_timeout(left) {
                Ok(Ok(text)) => {
                    if text.trim().is_empty() {
                        continue;
                    }
                    let reply: AdapterReply = serde_json::from_str(&text)
                        .map_err(|e| Error::MalformedReply(format!("{e}: {text}")))?;
                    if reply.id != id {
                        log::debug!("discarding reply for {}", reply.id);
                        continue;
                    }
                    return parse_reply(reply);
                }
                Ok(Err(e)) => {
                    *guard = None;
                    return Err(Error::Transport(format!("{}: {e}", self.endpoint)));
                }
                Err(RecvTimeoutError::Timeout) => return Err(Error::Timeout(self.timeout)),
                Err(RecvTimeoutError::Disconnected) => {
                    *guard = None;
                    return Err(Error::Transport(format!("{}: connection closed", self.endpoint)));
                }
            }
        }
    }
}

fn parse_reply(reply: AdapterReply) -> Result<ClassProbabilities> {
    if let Some(e) = reply.error {
        return Err(Error::Model(format!("adapter reported: {e}")));
    }
    let probs = reply
        .probs
        .ok_or_else(|| Error::MalformedReply("reply has no probs".into()))?;
    ClassProbabilities::from_map(&probs).map_err(|e| Error::MalformedReply(e.to_string()))
}

impl Classifier for ExternalClassifier {
    fn classify(&self, req: &ClassifyRequest<'_>) -> Result<ClassProbabilities> {
        let fs = req.clip.sample_rate();
        let a = time_to_index(req.interval.start_s, fs);
        let b = time_to_index(req.interval.end_s, fs).min(req.clip.len());
        self.request(&req.clip.samples()[a..b.max(a)], fs, Some(req.model_id))
    }

    fn name(&self) -> &str {
        "external"
    }
}

/// Reference adapter: answers every request with uniform probabilities.
/// Returns the number of requests served.
pub fn run_uniform_adapter<R: BufRead, W: Write>(input: R, mut output: W) -> std::io::Result<usize> {
    let mut served = 0;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<AdapterRequest>(&line) {
            Ok(req) => AdapterReply {
                id: req.id,
                probs: Some(
                    ["SB", "MB", "CRS", "HS"]
                        .iter()
                        .map(|l| (l.to_string(), 0.25))
                        .collect(),
                ),
                error: None,
            },
            Err(e) => AdapterReply {
                id: String::new(),
                probs: None,
                error: Some(e.to_string()),
            },
        };
        serde_json::to_writer(&mut output, &reply)?;
        output.write_all(b"\n")?;
        output.flush()?;
        served += 1;
    }
    Ok(served)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patterns::PatternLabel;
    use std::io::Read;
    use std::net::TcpListener;

    /// Serve one connection with `answer(request) -> reply line`.
    fn tcp_adapter(answer: fn(&AdapterRequest) -> Option<String>) -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut w = stream.try_clone().unwrap();
            for line in BufReader::new(stream).lines() {
                let Ok(line) = line else { break };
                let req: AdapterRequest = serde_json::from_str(&line).unwrap();
                if let Some(reply) = answer(&req) {
                    w.write_all(reply.as_bytes()).unwrap();
                    w.write_all(b"\n").unwrap();
                }
            }
        });
        addr
    }

    #[test]
    fn endpoint_parsing() {
        assert_eq!(
            "tcp://127.0.0.1:9000".parse::<AdapterEndpoint>().unwrap(),
            AdapterEndpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "127.0.0.1:9000".parse::<AdapterEndpoint>().unwrap(),
            AdapterEndpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "python3 adapter.py --fast".parse::<AdapterEndpoint>().unwrap(),
            AdapterEndpoint::Command {
                program: "python3".into(),
                args: vec!["adapter.py".into(), "--fast".into()]
            }
        );
    }

    #[test]
    fn uniform_reply_ties_to_sb() {
        let addr = tcp_adapter(|r| {
            Some(format!(r#"{{"id":"{}","probs":{{"SB":0.25,"MB":0.25,"CRS":0.25,"HS":0.25}}}}"#, r.id))
        });
        let c = ExternalClassifier::new(AdapterEndpoint::Tcp(addr));
        let p = c.request(&[0.0; 80], 8000, None).unwrap();
        assert_eq!(p.as_array(), [0.25; 4]);
        assert_eq!(p.argmax(), PatternLabel::SB);
    }

    #[test]
    fn short_sum_is_malformed() {
        let addr = tcp_adapter(|r| {
            Some(format!(r#"{{"id":"{}","probs":{{"SB":0.2,"MB":0.2,"CRS":0.2,"HS":0.2}}}}"#, r.id))
        });
        let c = ExternalClassifier::new(AdapterEndpoint::Tcp(addr));
        assert!(matches!(c.request(&[0.0; 8], 8000, None), Err(Error::MalformedReply(_))));
    }

    #[test]
    fn stale_ids_are_skipped() {
        let addr = tcp_adapter(|r| {
            Some(format!(
                "{{\"id\":\"other\",\"probs\":{{\"SB\":1,\"MB\":0,\"CRS\":0,\"HS\":0}}}}\n{{\"id\":\"{}\",\"probs\":{{\"SB\":0,\"MB\":0,\"CRS\":1,\"HS\":0}}}}",
                r.id
            ))
        });
        let c = ExternalClassifier::new(AdapterEndpoint::Tcp(addr));
        assert_eq!(c.request(&[0.0; 8], 8000, None).unwrap().argmax(), PatternLabel::CRS);
    }

    #[test]
    fn silent_adapter_times_out() {
        let addr = tcp_adapter(|_| None);
        let c = ExternalClassifier::with_timeout(AdapterEndpoint::Tcp(addr), Duration::from_millis(200));
        assert!(matches!(c.request(&[0.0; 8], 8000, None), Err(Error::Timeout(_))));
    }

    #[test]
    fn unreachable_adapter_is_transport_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let c = ExternalClassifier::new(AdapterEndpoint::Tcp(addr));
        assert!(matches!(c.request(&[0.0; 8], 8000, None), Err(Error::Transport(_))));
        let missing = ExternalClassifier::new("/nonexistent/adapter-binary".parse().unwrap());
        assert!(matches!(missing.request(&[0.0; 8], 8000, None), Err(Error::Transport(_))));
    }

    #[test]
    fn uniform_adapter_loop() {
        let input = b"{\"id\":\"a\",\"sample_rate\":8000,\"samples\":[0.0,0.1]}\n\n{\"id\":\"b\",\"sample_rate\":8000,\"samples\":[]}\n";
        let mut out = Vec::new();
        assert_eq!(run_uniform_adapter(&input[..], &mut out).unwrap(), 2);
        let mut text = String::new();
        (&out[..]).read_to_string(&mut text).unwrap();
        let replies: Vec<AdapterReply> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(replies[1].id, "b");
        let p = parse_reply(replies.into_iter().next().unwrap()).unwrap();
        assert_eq!(p.argmax(), PatternLabel::SB);
    }
}
