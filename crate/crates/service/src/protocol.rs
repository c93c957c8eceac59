//! Wire format: one JSON object per line in each direction.
//!
//! Requests carry `op`, `request_id`, an optional `namespace` and an
//! operation-specific `payload`. Every response echoes the `request_id` and
//! has `status` set to `ok` (with `payload`) or `error` (with `error`).
//! Unknown fields are ignored everywhere.

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const BAD_REQUEST: &str = "BadRequest";
pub const UNKNOWN_OP: &str = "UnknownOp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub op: String,
    pub request_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub namespace: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub payload: Value,
}

impl WireRequest {
    pub fn new(op: impl Into<String>, request_id: impl Into<String>) -> Self {
        WireRequest {
            op: op.into(),
            request_id: request_id.into(),
            namespace: None,
            payload: Value::Null,
        }
    }

    pub fn namespace(mut self, ns: impl Into<String>) -> Self {
        self.namespace = Some(ns.into());
        self
    }

    pub fn payload(mut self, payload: Value) -> Self {
        self.payload = payload;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireError {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub request_id: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<WireError>,
}

impl WireResponse {
    pub fn ok(request_id: impl Into<String>, payload: Value) -> Self {
        WireResponse {
            request_id: request_id.into(),
            status: Status::Ok,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn error(request_id: impl Into<String>, code: impl Into<String>, message: impl Into<String>) -> Self {
        WireResponse {
            request_id: request_id.into(),
            status: Status::Error,
            payload: None,
            error: Some(WireError {
                code: code.into(),
                message: message.into(),
            }),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok
    }

    /// Serializes as a single line without the trailing newline.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("responses always serialize")
    }
}

/// Parses one request line. On failure returns the `BadRequest` response to
/// send back, echoing the request id when one could be recovered.
pub fn parse_request(line: &[u8]) -> Result<WireRequest, WireResponse> {
    let value: Value = serde_json::from_slice(line)
        .map_err(|e| WireResponse::error("", BAD_REQUEST, format!("malformed JSON: {e}")))?;
    let request_id = value
        .get("request_id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    if !value.is_object() {
        return Err(WireResponse::error(
            request_id,
            BAD_REQUEST,
            "request must be a JSON object",
        ));
    }
    serde_json::from_value(value).map_err(|e| WireResponse::error(request_id, BAD_REQUEST, e.to_string()))
}

/// True for lines that carry nothing but whitespace. These are skipped
/// without a response.
pub fn is_blank(line: &[u8]) -> bool {
    line.iter().all(u8::is_ascii_whitespace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn unknown_fields_are_ignored() {
        let r = parse_request(br#"{"op":"stats","request_id":"a","extra":1,"payload":{}}"#).unwrap();
        assert_eq!(r.op, "stats");
        assert_eq!(r.payload, json!({}));
    }

    #[test]
    fn request_id_is_echoed_on_bad_request() {
        let e = parse_request(br#"{"request_id":"x7"}"#).unwrap_err();
        assert_eq!(e.request_id, "x7");
        assert_eq!(e.error.unwrap().code, BAD_REQUEST);
        let e = parse_request(b"not json").unwrap_err();
        assert_eq!(e.request_id, "");
        let e = parse_request(b"[1,2]").unwrap_err();
        assert_eq!(e.error.unwrap().code, BAD_REQUEST);
    }

    #[test]
    fn response_shape() {
        let ok = WireResponse::ok("1", json!({"n": 1})).to_line();
        assert_eq!(ok, r#"{"request_id":"1","status":"ok","payload":{"n":1}}"#);
        let err = WireResponse::error("2", "NotFound", "gone").to_line();
        assert_eq!(
            err,
            r#"{"request_id":"2","status":"error","error":{"code":"NotFound","message":"gone"}}"#
        );
    }
}
