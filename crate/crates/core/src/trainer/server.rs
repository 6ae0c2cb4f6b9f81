//! Protocol loop serving any [`Backend`] over a line-oriented stream.

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde_json::Value;

use super::protocol::*;
use super::{Backend, ModelHandle, TrainerError};
use crate::dataset::{load_squad, IdPolicy, TextCorpus};

struct Session<'b> {
    backend: &'b mut dyn Backend,
    handles: HashMap<String, ModelHandle>,
    initialized: bool,
}

fn params<T: DeserializeOwned>(v: Value) -> Result<T, TrainerError> {
    serde_json::from_value(v).map_err(|e| TrainerError::Protocol(format!("bad params: {e}")))
}

fn fail(req_id: &str, e: &TrainerError) -> Response {
    match e {
        TrainerError::Remote { kind, message } => Response::failure(req_id, kind, message.clone()),
        _ => Response::failure(req_id, error_kind(e), e.to_string()),
    }
}

impl Session<'_> {
    fn handle(&self, id: &str) -> Result<ModelHandle, TrainerError> {
        self.handles
            .get(id)
            .cloned()
            .ok_or_else(|| TrainerError::UnknownHandle(id.to_string()))
    }

    fn register(&mut self, h: ModelHandle) -> HandleResult {
        self.handles.insert(h.handle_id.clone(), h.clone());
        HandleResult { handle: h }
    }

    fn dispatch(&mut self, req: Request) -> Response {
        let id = req.req_id.clone();
        if req.op != Op::Init && !self.initialized {
            return Response::failure(&id, kind::PROTOCOL, "init must be the first request");
        }
        let outcome = match req.op {
            Op::Init => return self.init(&id, req.params),
            Op::TrainMlm => self.train_mlm(req.params).map(|r| Response::success(&id, r)),
            Op::TrainQa => self.train_qa(req.params).map(|r| Response::success(&id, r)),
            Op::Predict => self.predict(req.params).map(|r| Response::success(&id, r)),
            Op::Save => self.save(req.params).map(|r| Response::success(&id, r)),
            Op::Load => self.load(req.params).map(|r| Response::success(&id, r)),
            Op::Shutdown => Ok(Response::success(&id, Empty {})),
        };
        outcome.unwrap_or_else(|e| fail(&id, &e))
    }

    fn init(&mut self, id: &str, p: Value) -> Response {
        let p: InitParams = match params(p) {
            Ok(p) => p,
            Err(e) => return fail(id, &e),
        };
        if p.protocol_version != PROTOCOL_VERSION {
            return Response::failure(
                id,
                kind::VERSION_MISMATCH,
                format!("client speaks protocol {}, backend speaks {PROTOCOL_VERSION}", p.protocol_version),
            );
        }
        let base = match self.backend.base_model() {
            Ok(h) => h,
            Err(e) => return fail(id, &e),
        };
        self.initialized = true;
        let base_handle = self.register(base).handle;
        Response::success(
            id,
            InitResult {
                protocol_version: PROTOCOL_VERSION,
                backend_id: self.backend.backend_id().to_string(),
                capabilities: self.backend.capabilities().to_vec(),
                base_handle,
            },
        )
    }

    fn train_mlm(&mut self, p: Value) -> Result<HandleResult, TrainerError> {
        let p: TrainMlmParams = params(p)?;
        let h = self.handle(&p.handle_id)?;
        let text = std::fs::read_to_string(&p.corpus_path)?;
        let corpus = TextCorpus::from_lines("corpus", &text);
        let out = self.backend.train_mlm(&h, &corpus, &p.config)?;
        Ok(self.register(out))
    }

    fn train_qa(&mut self, p: Value) -> Result<HandleResult, TrainerError> {
        let p: TrainQaParams = params(p)?;
        let h = self.handle(&p.handle_id)?;
        let data = load_squad(Path::new(&p.data_path), IdPolicy::Multiset)
            .map_err(|e| TrainerError::Remote {
                kind: kind::DATA.into(),
                message: e.to_string(),
            })?;
        let out = self.backend.train_qa(&h, &data, &p.config)?;
        Ok(self.register(out))
    }

    fn predict(&mut self, p: Value) -> Result<PredictResult, TrainerError> {
        let p: PredictParams = params(p)?;
        let h = self.handle(&p.handle_id)?;
        let predictions = self
            .backend
            .predict(&h, &p.items)?
            .into_iter()
            .map(|(id, answer)| Prediction { id, answer })
            .collect();
        Ok(PredictResult { predictions })
    }

    fn save(&mut self, p: Value) -> Result<Empty, TrainerError> {
        let p: SaveParams = params(p)?;
        let h = self.handle(&p.handle_id)?;
        self.backend.save(&h, Path::new(&p.dir))?;
        Ok(Empty {})
    }

    fn load(&mut self, p: Value) -> Result<HandleResult, TrainerError> {
        let p: LoadParams = params(p)?;
        let h = self.backend.load(Path::new(&p.dir))?;
        Ok(self.register(h))
    }
}

/// Answers requests from `input` on `output` until `shutdown` or end of input.
/// Lines that are not valid requests get a `protocol` error response.
pub fn serve<R: BufRead, W: Write>(backend: &mut dyn Backend, input: R, mut output: W) -> io::Result<()> {
    let mut session = Session {
        backend,
        handles: HashMap::new(),
        initialized: false,
    };
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (resp, stop) = match serde_json::from_str::<Request>(&line) {
            Ok(req) => {
                let stop = req.op == Op::Shutdown;
                (session.dispatch(req), stop)
            }
            Err(e) => {
                let req_id = serde_json::from_str::<Value>(&line)
                    .ok()
                    .and_then(|v| v.get("req_id").and_then(Value::as_str).map(str::to_string))
                    .unwrap_or_default();
                (Response::failure(&req_id, kind::PROTOCOL, format!("malformed request: {e}")), false)
            }
        };
        serde_json::to_writer(&mut output, &resp)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::BuiltinBackend;

    fn run(lines: &[&str]) -> Vec<Value> {
        let mut b = BuiltinBackend::new();
        let mut out = Vec::new();
        serve(&mut b, lines.join("\n").as_bytes(), &mut out).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn init_is_required_first() {
        let r = run(&[r#"{"req_id":"a","op":"predict","params":{}}"#]);
        assert_eq!(r[0]["error"]["kind"], "protocol");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let r = run(&[r#"{"req_id":"a","op":"init","params":{"protocol_version":99}}"#]);
        assert_eq!(r[0]["ok"], false);
        assert_eq!(r[0]["error"]["kind"], "version_mismatch");
        let r = run(&[r#"{"req_id":"a","op":"init","params":{}}"#]);
        assert_eq!(r[0]["error"]["kind"], "protocol");
    }

    #[test]
    fn malformed_lines_keep_the_loop_alive() {
        let r = run(&[
            "not json",
            r#"{"req_id":"x","op":"fly"}"#,
            r#"{"req_id":"b","op":"init","params":{"protocol_version":1}}"#,
            r#"{"req_id":"c","op":"shutdown"}"#,
            r#"{"req_id":"d","op":"shutdown"}"#,
        ]);
        assert_eq!(r.len(), 4);
        assert_eq!(r[0]["req_id"], "");
        assert_eq!(r[1]["req_id"], "x");
        assert_eq!(r[2]["result"]["capabilities"], serde_json::json!(["mlm", "qa", "predict"]));
        assert_eq!(r[3]["ok"], true);
    }

    #[test]
    fn unknown_handle_is_an_error() {
        let r = run(&[
            r#"{"req_id":"1","op":"init","params":{"protocol_version":1}}"#,
            r#"{"req_id":"2","op":"predict","params":{"handle_id":"zz","items":[]}}"#,
        ]);
        assert_eq!(r[1]["error"]["kind"], "unknown_handle");
    }
}
