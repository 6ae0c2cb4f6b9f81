//! Client side of the wire protocol: drives an external trainer process.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tempfile::TempDir;

use super::protocol::*;
use super::{Backend, Capability, ModelHandle, PredictItem, TrainConfig, TrainerError, LINEAGE_MLM, LINEAGE_QA};
use crate::dataset::{save_squad, QaDataset, TextCorpus};

/// Bytes of child stderr kept for diagnostics.
const STDERR_TAIL: usize = 16 * 1024;

pub struct ProcessBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    stderr_tail: Arc<Mutex<Vec<u8>>>,
    stderr_thread: Option<JoinHandle<()>>,
    backend_id: String,
    capabilities: Vec<Capability>,
    base: ModelHandle,
    scratch: TempDir,
    next_req: u64,
    next_file: u64,
}

fn transport(message: impl Into<String>, diagnostics: String) -> TrainerError {
    TrainerError::Transport {
        message: message.into(),
        diagnostics,
    }
}

impl ProcessBackend {
    /// Launches `command` (program then arguments) and performs the `init` handshake.
    pub fn spawn(command: &[String]) -> Result<Self, TrainerError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| TrainerError::InvalidConfig("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| transport(format!("cannot launch {program:?}: {e}"), String::new()))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        let mut stderr = child.stderr.take().expect("stderr is piped");
        let stderr_tail = Arc::new(Mutex::new(Vec::new()));
        let tail = Arc::clone(&stderr_tail);
        let stderr_thread = std::thread::spawn(move || {
            let mut buf = [0u8; 4096];
            while let Ok(n) = stderr.read(&mut buf) {
                if n == 0 {
                    break;
                }
                let mut t = tail.lock().expect("stderr buffer poisoned");
                t.extend_from_slice(&buf[..n]);
                if t.len() > STDERR_TAIL {
                    let cut = t.len() - STDERR_TAIL;
                    t.drain(..cut);
                }
            }
        });
        let mut backend = ProcessBackend {
            child,
            stdin,
            stdout,
            stderr_tail,
            stderr_thread: Some(stderr_thread),
            backend_id: String::new(),
            capabilities: Vec::new(),
            base: ModelHandle {
                handle_id: String::new(),
                backend_id: String::new(),
                lineage: Vec::new(),
            },
            scratch: tempfile::tempdir()?,
            next_req: 0,
            next_file: 0,
        };
        let init: InitResult = backend.call(
            Op::Init,
            InitParams {
                protocol_version: PROTOCOL_VERSION,
            },
        )?;
        if init.protocol_version != PROTOCOL_VERSION {
            return Err(TrainerError::Protocol(format!(
                "backend speaks protocol {}, expected {PROTOCOL_VERSION}",
                init.protocol_version
            )));
        }
        backend.backend_id = init.backend_id;
        backend.capabilities = init.capabilities;
        backend.base = init.base_handle;
        Ok(backend)
    }

    fn diagnostics(&mut self) -> String {
        // give the reader thread a moment to drain a dying child
        if let Ok(Some(_)) = self.child.try_wait() {
            if let Some(t) = self.stderr_thread.take() {
                let _ = t.join();
            }
        }
        let tail = self.stderr_tail.lock().expect("stderr buffer poisoned");
        String::from_utf8_lossy(&tail).into_owned()
    }

    fn call<P: Serialize, T: DeserializeOwned>(&mut self, op: Op, params: P) -> Result<T, TrainerError> {
        self.next_req += 1;
        let req = Request {
            req_id: self.next_req.to_string(),
            op,
            params: serde_json::to_value(params).expect("protocol params serialize"),
        };
        let mut line = serde_json::to_vec(&req).expect("requests serialize");
        line.push(b'\n');
        let sent = match self.stdin.as_mut() {
            Some(w) => w.write_all(&line).and_then(|_| w.flush()),
            None => Err(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "stdin closed")),
        };
        if let Err(e) = sent {
            let diag = self.diagnostics();
            return Err(transport(format!("cannot send {op:?} request: {e}"), diag));
        }
        let mut buf = String::new();
        let read = self.stdout.read_line(&mut buf);
        match read {
            Ok(0) => {
                let _ = self.child.wait();
                let diag = self.diagnostics();
                return Err(transport(format!("backend exited during {op:?}"), diag));
            }
            Err(e) => {
                let diag = self.diagnostics();
                return Err(transport(format!("cannot read {op:?} response: {e}"), diag));
            }
            Ok(_) => {}
        }
        let resp: Response = serde_json::from_str(buf.trim_end())
            .map_err(|e| TrainerError::Protocol(format!("unparseable response {:?}: {e}", buf.trim_end())))?;
        if resp.req_id != req.req_id {
            return Err(TrainerError::Protocol(format!(
                "response id {:?} does not match request id {:?}",
                resp.req_id, req.req_id
            )));
        }
        resp.into_result()
    }

    fn scratch_path(&mut self, ext: &str) -> std::path::PathBuf {
        self.next_file += 1;
        self.scratch.path().join(format!("stage{}.{ext}", self.next_file))
    }

    fn require(&self, c: Capability) -> Result<(), TrainerError> {
        if self.supports(c) {
            Ok(())
        } else {
            Err(TrainerError::Unsupported {
                backend: self.backend_id.clone(),
                capability: c,
            })
        }
    }

    /// The backend must report exactly the input lineage plus the new stage.
    fn check_lineage(h: &ModelHandle, out: &ModelHandle, stage: &str) -> Result<(), TrainerError> {
        let mut expected = h.lineage.clone();
        expected.push(stage.to_string());
        if out.lineage != expected {
            return Err(TrainerError::Protocol(format!(
                "backend reported lineage {:?}, expected {:?}",
                out.lineage, expected
            )));
        }
        Ok(())
    }

    pub fn shutdown(mut self) -> Result<(), TrainerError> {
        let r: Result<Empty, _> = self.call(Op::Shutdown, Empty {});
        self.stdin.take();
        let _ = self.child.wait();
        r.map(|_| ())
    }
}

impl Drop for ProcessBackend {
    fn drop(&mut self) {
        if let Some(mut w) = self.stdin.take() {
            let _ = writeln!(w, r#"{{"req_id":"shutdown","op":"shutdown"}}"#);
        }
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            std::thread::sleep(std::time::Duration::from_millis(50));
            if !matches!(self.child.try_wait(), Ok(Some(_))) {
                let _ = self.child.kill();
            }
        }
        let _ = self.child.wait();
    }
}

impl Backend for ProcessBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn capabilities(&self) -> &[Capability] {
        &self.capabilities
    }

    fn base_model(&mut self) -> Result<ModelHandle, TrainerError> {
        Ok(self.base.clone())
    }

    fn train_mlm(&mut self, h: &ModelHandle, corpus: &TextCorpus, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError> {
        self.require(Capability::Mlm)?;
        cfg.validate()?;
        if corpus.is_empty() {
            return Err(TrainerError::EmptyData);
        }
        let path = self.scratch_path("txt");
        std::fs::write(&path, corpus.to_lines())?;
        let r: Result<HandleResult, _> = self.call(
            Op::TrainMlm,
            TrainMlmParams {
                handle_id: h.handle_id.clone(),
                corpus_path: path.display().to_string(),
                config: cfg.clone(),
            },
        );
        let _ = std::fs::remove_file(&path);
        let out = r?.handle;
        Self::check_lineage(h, &out, LINEAGE_MLM)?;
        Ok(out)
    }

    fn train_qa(&mut self, h: &ModelHandle, data: &QaDataset, cfg: &TrainConfig) -> Result<ModelHandle, TrainerError> {
        self.require(Capability::Qa)?;
        cfg.validate()?;
        if data.is_empty() {
            return Err(TrainerError::EmptyData);
        }
        let path = self.scratch_path("json");
        save_squad(data, &path).map_err(|e| TrainerError::Io(std::io::Error::other(e.to_string())))?;
        let r: Result<HandleResult, _> = self.call(
            Op::TrainQa,
            TrainQaParams {
                handle_id: h.handle_id.clone(),
                data_path: path.display().to_string(),
                config: cfg.clone(),
            },
        );
        let _ = std::fs::remove_file(&path);
        let out = r?.handle;
        Self::check_lineage(h, &out, LINEAGE_QA)?;
        Ok(out)
    }

    fn save(&mut self, h: &ModelHandle, dir: &Path) -> Result<(), TrainerError> {
        let _: Empty = self.call(
            Op::Save,
            SaveParams {
                handle_id: h.handle_id.clone(),
                dir: dir.display().to_string(),
            },
        )?;
        Ok(())
    }

    fn load(&mut self, dir: &Path) -> Result<ModelHandle, TrainerError> {
        let r: HandleResult = self.call(
            Op::Load,
            LoadParams {
                dir: dir.display().to_string(),
            },
        )?;
        Ok(r.handle)
    }

    fn predict(&mut self, h: &ModelHandle, items: &[PredictItem]) -> Result<Vec<(String, String)>, TrainerError> {
        self.require(Capability::Predict)?;
        let r: PredictResult = self.call(
            Op::Predict,
            PredictParams {
                handle_id: h.handle_id.clone(),
                items: items.to_vec(),
            },
        )?;
        if r.predictions.len() != items.len() {
            return Err(TrainerError::Protocol(format!(
                "{} predictions for {} items",
                r.predictions.len(),
                items.len()
            )));
        }
        for (p, it) in r.predictions.iter().zip(items) {
            if p.id != it.id {
                return Err(TrainerError::Protocol(format!("prediction for {:?} out of order", p.id)));
            }
            if !it.context.contains(&p.answer) {
                return Err(TrainerError::Protocol(format!(
                    "answer for {:?} is not a substring of its context",
                    p.id
                )));
            }
        }
        Ok(r.predictions.into_iter().map(|p| (p.id, p.answer)).collect())
    }
}
