//! Client side of the provider protocol.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Duration;

use kid_core::lm::{LmError, PolicyDistribution, PolicyProvider, TokenId, Vocabulary};

use crate::protocol::{Method, Reply, Request, Response};

/// Where a remote provider lives: `tcp:HOST:PORT` or `stdio:PROGRAM ARGS...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Stdio(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if let Some(addr) = s.strip_prefix("tcp:") {
            if addr.is_empty() {
                return Err("tcp endpoint needs HOST:PORT".into());
            }
            Ok(Self::Tcp(addr.to_string()))
        } else if let Some(cmd) = s.strip_prefix("stdio:") {
            let argv: Vec<String> = cmd.split_whitespace().map(String::from).collect();
            if argv.is_empty() {
                return Err("stdio endpoint needs a command".into());
            }
            Ok(Self::Stdio(argv))
        } else {
            Err(format!("endpoint {s:?} must start with tcp: or stdio:"))
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Tcp(addr) => write!(f, "tcp:{addr}"),
            Self::Stdio(argv) => write!(f, "stdio:{}", argv.join(" ")),
        }
    }
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Option<Box<dyn Write + Send>>,
    next_id: u64,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved child exit on its own.
        self.writer.take();
        if let Some(mut child) = self.child.take() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A [`PolicyProvider`] backed by a remote process. Requests are
/// serialized through one connection, so the provider is safe to share.
pub struct RemoteProvider {
    conn: Mutex<Connection>,
    vocab: Vocabulary,
}

impl fmt::Debug for RemoteProvider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteProvider").field("vocab_size", &self.vocab.len()).finish()
    }
}

fn unavailable(e: impl fmt::Display) -> LmError {
    LmError::Unavailable(e.to_string())
}

impl RemoteProvider {
    /// `timeout` bounds each TCP read; stdio reads block.
    pub fn connect(endpoint: &Endpoint, timeout: Option<Duration>) -> Result<Self, LmError> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(unavailable)?;
                stream.set_read_timeout(timeout).map_err(unavailable)?;
                stream.set_nodelay(true).map_err(unavailable)?;
                let reader = BufReader::new(stream.try_clone().map_err(unavailable)?);
                Self::handshake(Box::new(reader), Box::new(stream), None)
            }
            Endpoint::Stdio(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| unavailable(format!("{}: {e}", argv[0])))?;
                let (Some(stdin), Some(stdout)) = (child.stdin.take(), child.stdout.take()) else {
                    return Err(unavailable("child process has no stdio pipes"));
                };
                Self::handshake(Box::new(BufReader::new(stdout)), Box::new(stdin), Some(child))
            }
        }
    }

    /// Use an already open pair of streams.
    pub fn from_streams(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>) -> Result<Self, LmError> {
        Self::handshake(reader, writer, None)
    }

    fn handshake(reader: Box<dyn BufRead + Send>, writer: Box<dyn Write + Send>, child: Option<Child>) -> Result<Self, LmError> {
        let mut conn = Connection {
            reader,
            writer: Some(writer),
            next_id: 1,
            child,
        };
        match call(&mut conn, Method::Hello)? {
            Reply::Hello { vocab, bos, eos, unk } => {
                let vocab = Vocabulary::new(vocab, bos, eos, unk).map_err(|e| LmError::Protocol(e.to_string()))?;
                log::info!("remote provider ready, vocabulary of {}", vocab.len());
                Ok(Self {
                    conn: Mutex::new(conn),
                    vocab,
                })
            }
            other => Err(unexpected("hello", &other)),
        }
    }

    fn call(&self, method: Method) -> Result<Reply, LmError> {
        let mut conn = self.conn.lock().map_err(|_| unavailable("connection lock poisoned"))?;
        call(&mut conn, method)
    }
}

fn unexpected(method: &str, reply: &Reply) -> LmError {
    LmError::Protocol(format!("unexpected reply to {method}: {reply:?}"))
}

fn call(conn: &mut Connection, method: Method) -> Result<Reply, LmError> {
    let id = conn.next_id;
    conn.next_id += 1;
    let mut line = serde_json::to_string(&Request { id, method }).map_err(|e| LmError::Protocol(e.to_string()))?;
    line.push('\n');
    let writer = conn.writer.as_mut().ok_or_else(|| unavailable("connection closed"))?;
    writer.write_all(line.as_bytes()).and_then(|()| writer.flush()).map_err(unavailable)?;

    let mut buf = String::new();
    if conn.reader.read_line(&mut buf).map_err(unavailable)? == 0 {
        return Err(unavailable("provider closed the connection"));
    }
    let response: Response = serde_json::from_str(&buf).map_err(|e| LmError::Protocol(format!("bad response line: {e}")))?;
    if let Reply::Error { error } = response.reply {
        return Err(LmError::Protocol(format!("remote error {}: {}", error.code, error.message)));
    }
    if response.id != Some(id) {
        return Err(LmError::Protocol(format!("response id {:?} does not match request {id}", response.id)));
    }
    Ok(response.reply)
}

impl PolicyProvider for RemoteProvider {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<PolicyDistribution, LmError> {
        for &id in prefix {
            self.vocab.check(id)?;
        }
        match self.call(Method::Logits { tokens: prefix.to_vec() })? {
            Reply::Logits { logits } if logits.len() == self.vocab.len() => PolicyDistribution::new(logits),
            Reply::Logits { logits } => Err(LmError::LogitLength {
                expected: self.vocab.len(),
                got: logits.len(),
            }),
            other => Err(unexpected("logits", &other)),
        }
    }

    fn encode(&self, text: &str) -> Result<Vec<TokenId>, LmError> {
        match self.call(Method::Encode { text: text.to_string() })? {
            Reply::Tokens { tokens } => {
                for &id in &tokens {
                    self.vocab.check(id)?;
                }
                Ok(tokens)
            }
            other => Err(unexpected("encode", &other)),
        }
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, LmError> {
        match self.call(Method::Decode { tokens: ids.to_vec() })? {
            Reply::Text { text } => Ok(text),
            other => Err(unexpected("decode", &other)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_parse() {
        assert_eq!("tcp:127.0.0.1:9000".parse(), Ok(Endpoint::Tcp("127.0.0.1:9000".into())));
        assert_eq!(
            "stdio:python -m adapter".parse(),
            Ok(Endpoint::Stdio(vec!["python".into(), "-m".into(), "adapter".into()]))
        );
        assert!("tcp:".parse::<Endpoint>().is_err());
        assert!("stdio:  ".parse::<Endpoint>().is_err());
        assert!("http://x".parse::<Endpoint>().is_err());
        assert_eq!(Endpoint::Stdio(vec!["a".into(), "b".into()]).to_string(), "stdio:a b");
    }

    #[test]
    fn closed_stream_is_unavailable() {
        let err = RemoteProvider::from_streams(Box::new(&b""[..]), Box::new(Vec::new())).unwrap_err();
        assert!(matches!(err, LmError::Unavailable(_)));
    }

    #[test]
    fn garbage_is_a_protocol_error() {
        let err = RemoteProvider::from_streams(Box::new(&b"{\"id\":1,\"oops\":true}\n"[..]), Box::new(Vec::new())).unwrap_err();
        assert!(matches!(err, LmError::Protocol(_)));
    }

    #[test]
    fn mismatched_id_is_rejected() {
        let line = b"{\"id\":7,\"vocab\":[\"<s>\",\"</s>\",\"<unk>\"],\"bos\":0,\"eos\":1,\"unk\":2}\n";
        let err = RemoteProvider::from_streams(Box::new(&line[..]), Box::new(Vec::new())).unwrap_err();
        assert!(matches!(err, LmError::Protocol(m) if m.contains("does not match")));
    }
}
