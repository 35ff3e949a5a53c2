//! Newline-delimited JSON protocol between the engine and a policy provider.
//!
//! Each request is one line `{"id": n, "method": ...}` and is answered by
//! exactly one line carrying the same id, in request order:
//!
//! | request                                     | response                                  |
//! |---------------------------------------------|-------------------------------------------|
//! | `{"id","method":"hello"}`                   | `{"id","vocab":[..],"bos","eos","unk"}`   |
//! | `{"id","method":"logits","tokens":[ids]}`   | `{"id","logits":[floats; len = vocab]}`   |
//! | `{"id","method":"encode","text":str}`       | `{"id","tokens":[ids]}`                   |
//! | `{"id","method":"decode","tokens":[ids]}`   | `{"id","text":str}`                       |
//!
//! Failures are `{"id","error":{"code","message"}}`; `id` is null when the
//! request line could not be parsed. Unknown response fields are ignored.

use std::io::{self, BufRead, Write};

use kid_core::lm::{PolicyProvider, TokenId};
use serde::{Deserialize, Serialize};

/// Malformed request, unknown method or invalid token id.
pub const BAD_REQUEST: i64 = 400;
/// The provider failed on a well-formed request.
pub const PROVIDER_FAILURE: i64 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Method {
    Hello,
    Logits { tokens: Vec<TokenId> },
    Encode { text: String },
    Decode { tokens: Vec<TokenId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: i64,
    pub message: String,
}

/// Response payloads, told apart by their field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Error {
        error: ErrorBody,
    },
    Hello {
        vocab: Vec<String>,
        bos: TokenId,
        eos: TokenId,
        unk: TokenId,
    },
    Logits {
        logits: Vec<f64>,
    },
    Tokens {
        tokens: Vec<TokenId>,
    },
    Text {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: Option<u64>,
    #[serde(flatten)]
    pub reply: Reply,
}

fn error(code: i64, message: impl Into<String>) -> Reply {
    Reply::Error {
        error: ErrorBody {
            code,
            message: message.into(),
        },
    }
}

/// Answer one request from an in-process provider.
pub fn answer(provider: &dyn PolicyProvider, method: &Method) -> Reply {
    let vocab = provider.vocabulary();
    let check = |ids: &[TokenId]| ids.iter().try_for_each(|&id| vocab.check(id));
    match method {
        Method::Hello => Reply::Hello {
            vocab: vocab.tokens().to_vec(),
            bos: vocab.bos(),
            eos: vocab.eos(),
            unk: vocab.unk(),
        },
        Method::Logits { tokens } => match check(tokens) {
            Err(e) => error(BAD_REQUEST, e.to_string()),
            Ok(()) => match provider.next_distribution(tokens) {
                Ok(d) => Reply::Logits { logits: d.into_logits() },
                Err(e) => error(PROVIDER_FAILURE, e.to_string()),
            },
        },
        Method::Encode { text } => match provider.encode(text) {
            Ok(tokens) => Reply::Tokens { tokens },
            Err(e) => error(PROVIDER_FAILURE, e.to_string()),
        },
        Method::Decode { tokens } => match check(tokens) {
            Err(e) => error(BAD_REQUEST, e.to_string()),
            Ok(()) => match provider.decode(tokens) {
                Ok(text) => Reply::Text { text },
                Err(e) => error(PROVIDER_FAILURE, e.to_string()),
            },
        },
    }
}

/// Answer one raw request line.
pub fn handle_line(provider: &dyn PolicyProvider, line: &str) -> Response {
    match serde_json::from_str::<Request>(line) {
        Ok(req) => Response {
            id: Some(req.id),
            reply: answer(provider, &req.method),
        },
        Err(e) => {
            // Salvage the id so the client can still match the failure.
            let id = serde_json::from_str::<serde_json::Value>(line)
                .ok()
                .and_then(|v| v.get("id").and_then(serde_json::Value::as_u64));
            Response {
                id,
                reply: error(BAD_REQUEST, format!("malformed request: {e}")),
            }
        }
    }
}

/// Serve requests until end of input. Returns the number of requests answered.
pub fn serve(provider: &dyn PolicyProvider, reader: impl BufRead, mut writer: impl Write) -> io::Result<usize> {
    let mut answered = 0;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = handle_line(provider, &line);
        let mut text = serde_json::to_string(&response).map_err(io::Error::other)?;
        text.push('\n');
        // One write per response keeps small TCP replies out of Nagle delays.
        writer.write_all(text.as_bytes())?;
        writer.flush()?;
        answered += 1;
        log::debug!("answered request {:?}", response.id);
    }
    Ok(answered)
}

#[cfg(test)]
mod tests {
    use super::*;
    use kid_core::lm::{UniformLm, Vocabulary};
    use serde_json::{json, Value};

    fn roundtrip(line: &str) -> Value {
        let lm = UniformLm::new(Vocabulary::from_words(["a", "b"]));
        serde_json::to_value(handle_line(&lm, line)).unwrap()
    }

    #[test]
    fn request_wire_shape() {
        let r = Request {
            id: 3,
            method: Method::Logits { tokens: vec![0, 4] },
        };
        assert_eq!(serde_json::to_value(&r).unwrap(), json!({"id": 3, "method": "logits", "tokens": [0, 4]}));
        let hello: Request = serde_json::from_str(r#"{"id":1,"method":"hello"}"#).unwrap();
        assert_eq!(hello.method, Method::Hello);
    }

    #[test]
    fn replies() {
        let v = roundtrip(r#"{"id":1,"method":"hello"}"#);
        assert_eq!(v, json!({"id":1,"vocab":["<s>","</s>","<unk>","a","b"],"bos":0,"eos":1,"unk":2}));
        let v = roundtrip(r#"{"id":2,"method":"logits","tokens":[0,3]}"#);
        assert_eq!(v["logits"].as_array().unwrap().len(), 5);
        assert_eq!(roundtrip(r#"{"id":3,"method":"encode","text":"a b z"}"#), json!({"id":3,"tokens":[3,4,2]}));
        assert_eq!(roundtrip(r#"{"id":4,"method":"decode","tokens":[3,4]}"#), json!({"id":4,"text":"a b"}));
    }

    #[test]
    fn errors_keep_the_id_when_possible() {
        let v = roundtrip(r#"{"id":5,"method":"logits","tokens":[99]}"#);
        assert_eq!(v["id"], 5);
        assert_eq!(v["error"]["code"], BAD_REQUEST);
        let v = roundtrip(r#"{"id":6,"method":"sing"}"#);
        assert_eq!(v["id"], 6);
        assert_eq!(v["error"]["code"], BAD_REQUEST);
        let v = roundtrip("not json");
        assert_eq!(v["id"], Value::Null);
    }

    #[test]
    fn unknown_reply_fields_are_ignored() {
        let r: Response = serde_json::from_str(r#"{"id":1,"tokens":[1,2],"warning":"truncated"}"#).unwrap();
        assert_eq!(r.reply, Reply::Tokens { tokens: vec![1, 2] });
    }
}
