//! Version-1 wire messages of the external scorer protocol.
//!
//! Newline-delimited UTF-8 JSON, one message per line, discriminated by a
//! `type` field: `hello`/`ready` for the handshake, `score` requests answered
//! by `result` or `error`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::ScorerError;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        version: u32,
        tasks: Vec<String>,
    },
    Ready {
        tasks: Vec<String>,
    },
    Score {
        id: u64,
        image: ImagePayload,
        tasks: Vec<String>,
    },
    #[serde(rename = "result")]
    ScoreResult {
        id: u64,
        scores: BTreeMap<String, f64>,
        #[serde(default)]
        detections: Vec<WireDetection>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mask_path: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timing_ms: Option<f64>,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub encoding: String,
    pub data: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireDetection {
    pub cls: u32,
    #[serde(rename = "box")]
    pub bbox: [f32; 4],
    pub conf: f32,
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages always serialize");
        s.push('\n');
        s
    }

    pub fn parse(line: &str) -> Result<Self, ScorerError> {
        serde_json::from_str(line.trim_end_matches(['\r', '\n']))
            .map_err(|e| ScorerError::Protocol(format!("{e}: `{}`", truncate(line, 200))))
    }
}

fn truncate(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hello_layout() {
        let m = Message::Hello {
            version: 1,
            tasks: vec!["det".into()],
        };
        assert_eq!(m.to_line(), "{\"type\":\"hello\",\"version\":1,\"tasks\":[\"det\"]}\n");
    }

    #[test]
    fn result_parses_with_optional_fields() {
        let m = Message::parse(r#"{"type":"result","id":3,"scores":{"det":0.42}}"#).unwrap();
        match m {
            Message::ScoreResult {
                id,
                scores,
                detections,
                mask_path,
                ..
            } => {
                assert_eq!(id, 3);
                assert_eq!(scores["det"], 0.42);
                assert!(detections.is_empty() && mask_path.is_none());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_is_protocol_error() {
        assert!(matches!(Message::parse("{not json"), Err(ScorerError::Protocol(_))));
        assert!(matches!(
            Message::parse(r#"{"type":"nope"}"#),
            Err(ScorerError::Protocol(_))
        ));
    }
}
