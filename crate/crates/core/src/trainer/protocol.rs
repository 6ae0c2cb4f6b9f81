//! Backend wire protocol: one JSON object per line on the child's stdin
//! (requests) and stdout (responses). Datasets travel as SQuAD JSON files,
//! corpora as one-document-per-line text files, model state as directories.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Capability, ModelHandle, PredictItem, TrainConfig, TrainerError};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Init,
    TrainMlm,
    TrainQa,
    Predict,
    Save,
    Load,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub req_id: String,
    pub op: Op,
    #[serde(default)]
    pub params: Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub req_id: String,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl Response {
    pub fn success(req_id: &str, result: impl Serialize) -> Self {
        Response {
            req_id: req_id.to_string(),
            ok: true,
            result: Some(serde_json::to_value(result).expect("protocol results serialize")),
            error: None,
        }
    }

    pub fn failure(req_id: &str, kind: &str, message: impl Into<String>) -> Self {
        Response {
            req_id: req_id.to_string(),
            ok: false,
            result: None,
            error: Some(ErrorBody {
                kind: kind.to_string(),
                message: message.into(),
            }),
        }
    }

    /// Decodes a successful result, or turns an error body back into a [`TrainerError`].
    pub fn into_result<T: DeserializeOwned>(self) -> Result<T, TrainerError> {
        if self.ok {
            let value = self.result.unwrap_or(Value::Object(Default::default()));
            serde_json::from_value(value).map_err(|e| TrainerError::Protocol(format!("malformed result: {e}")))
        } else {
            let body = self.error.ok_or_else(|| TrainerError::Protocol("error response without error body".into()))?;
            Err(error_from_body(body))
        }
    }
}

pub mod kind {
    pub const PROTOCOL: &str = "protocol";
    pub const VERSION_MISMATCH: &str = "version_mismatch";
    pub const UNSUPPORTED: &str = "unsupported";
    pub const UNKNOWN_HANDLE: &str = "unknown_handle";
    pub const INVALID_CONFIG: &str = "invalid_config";
    pub const EMPTY_DATA: &str = "empty_data";
    pub const DATA: &str = "data";
    pub const IO: &str = "io";
    pub const RESOURCE: &str = "resource";
    pub const INTERNAL: &str = "internal";
}

/// Error kind sent over the wire for a local error.
pub fn error_kind(e: &TrainerError) -> &str {
    match e {
        TrainerError::Unsupported { .. } => kind::UNSUPPORTED,
        TrainerError::EmptyData => kind::EMPTY_DATA,
        TrainerError::UnknownHandle(_) => kind::UNKNOWN_HANDLE,
        TrainerError::InvalidConfig(_) => kind::INVALID_CONFIG,
        TrainerError::SpanOutOfBounds { .. } => kind::DATA,
        TrainerError::Protocol(_) => kind::PROTOCOL,
        TrainerError::Io(_) => kind::IO,
        TrainerError::Remote { kind, .. } => kind,
        TrainerError::Transport { .. } => kind::INTERNAL,
    }
}

fn error_from_body(body: ErrorBody) -> TrainerError {
    match body.kind.as_str() {
        kind::UNSUPPORTED => {
            let capability = [Capability::Mlm, Capability::Qa, Capability::Predict]
                .into_iter()
                .find(|c| body.message.contains(c.as_str()));
            match capability {
                Some(capability) => TrainerError::Unsupported {
                    backend: "remote".into(),
                    capability,
                },
                None => TrainerError::Remote {
                    kind: body.kind,
                    message: body.message,
                },
            }
        }
        kind::EMPTY_DATA => TrainerError::EmptyData,
        kind::UNKNOWN_HANDLE => TrainerError::UnknownHandle(body.message),
        kind::INVALID_CONFIG => TrainerError::InvalidConfig(body.message),
        _ => TrainerError::Remote {
            kind: body.kind,
            message: body.message,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitParams {
    pub protocol_version: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InitResult {
    pub protocol_version: u32,
    pub backend_id: String,
    pub capabilities: Vec<Capability>,
    /// Handle of the untrained base model.
    pub base_handle: ModelHandle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMlmParams {
    pub handle_id: String,
    /// Plain text, one document per line.
    pub corpus_path: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainQaParams {
    pub handle_id: String,
    /// SQuAD JSON.
    pub data_path: String,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HandleResult {
    pub handle: ModelHandle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictParams {
    pub handle_id: String,
    pub items: Vec<PredictItem>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictResult {
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SaveParams {
    pub handle_id: String,
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadParams {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Empty {}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn request_shape() {
        let r: Request = serde_json::from_value(json!({"req_id": "1", "op": "train_qa", "params": {"x": 1}})).unwrap();
        assert_eq!(r.op, Op::TrainQa);
        let r: Request = serde_json::from_value(json!({"req_id": "2", "op": "shutdown"})).unwrap();
        assert_eq!(r.params, Value::Null);
        assert!(serde_json::from_value::<Request>(json!({"req_id": "3", "op": "dance"})).is_err());
    }

    #[test]
    fn response_shapes() {
        let ok = serde_json::to_value(Response::success("1", Empty {})).unwrap();
        assert_eq!(ok, json!({"req_id": "1", "ok": true, "result": {}}));
        let err = serde_json::to_value(Response::failure("2", kind::EMPTY_DATA, "no rows")).unwrap();
        assert_eq!(
            err,
            json!({"req_id": "2", "ok": false, "error": {"kind": "empty_data", "message": "no rows"}})
        );
    }

    #[test]
    fn errors_round_trip_through_bodies() {
        let e = TrainerError::Unsupported {
            backend: "x".into(),
            capability: Capability::Mlm,
        };
        let resp = Response::failure("1", error_kind(&e), e.to_string());
        assert!(resp.into_result::<Empty>().unwrap_err().is_unsupported());
        let resp = Response::failure("1", kind::RESOURCE, "out of memory");
        assert!(matches!(
            resp.into_result::<Empty>(),
            Err(TrainerError::Remote { kind, .. }) if kind == "resource"
        ));
    }
}
