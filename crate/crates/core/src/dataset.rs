//! SQuAD v1.1 corpora: data model, parsing with validation, and serialization.
//!
//! `answer_start` is a character offset counted in Unicode scalar values, the
//! convention used by the upstream SQuAD files.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub const SQUAD_VERSION: &str = "1.1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub id: String,
    pub question: String,
    pub answers: Vec<Answer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paragraph {
    pub context: String,
    pub qas: Vec<QaPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub title: String,
    pub paragraphs: Vec<Paragraph>,
}

/// A SQuAD-structured corpus. The example count is the number of QA entries,
/// counted with multiplicity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaDataset {
    pub name: String,
    pub version: String,
    pub articles: Vec<Article>,
}

/// How repeated QA ids are treated during validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdPolicy {
    /// Ingested data: every id must be unique.
    #[default]
    Unique,
    /// Merged or oversampled data, where a repeated id is a repeated training example.
    Multiset,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IssueKind {
    OffsetMismatch { answer_index: usize },
    EmptyQuestion,
    BlankAnswer { answer_index: usize },
    NoAnswers,
    DuplicateId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationIssue {
    pub id: String,
    pub kind: IssueKind,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::OffsetMismatch { answer_index } => {
                write!(f, "{}: answer {} does not match context at answer_start", self.id, answer_index)
            }
            IssueKind::EmptyQuestion => write!(f, "{}: empty question", self.id),
            IssueKind::BlankAnswer { answer_index } => {
                write!(f, "{}: answer {} is blank", self.id, answer_index)
            }
            IssueKind::NoAnswers => write!(f, "{}: no answers", self.id),
            IssueKind::DuplicateId => write!(f, "{}: duplicate id", self.id),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("malformed JSON at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("{} invalid QA entries: {}", .0.len(), fmt_issues(.0))]
    Validation(Vec<ValidationIssue>),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("encoding failed: {0}")]
    Encode(#[from] serde_json::Error),
}

fn fmt_issues(issues: &[ValidationIssue]) -> String {
    const SHOWN: usize = 20;
    let mut s = issues
        .iter()
        .take(SHOWN)
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ");
    if issues.len() > SHOWN {
        s.push_str(&format!("; ... and {} more", issues.len() - SHOWN));
    }
    s
}

/// One QA occurrence with its context, as consumed by trainers and evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub id: String,
    pub question: String,
    pub context: String,
    pub answers: Vec<Answer>,
}

/// Borrowed view of one QA occurrence.
#[derive(Debug, Clone, Copy)]
pub struct ExampleRef<'a> {
    pub id: &'a str,
    pub question: &'a str,
    pub context: &'a str,
    pub answers: &'a [Answer],
}

impl ExampleRef<'_> {
    pub fn to_owned(&self) -> Example {
        Example {
            id: self.id.to_string(),
            question: self.question.to_string(),
            context: self.context.to_string(),
            answers: self.answers.to_vec(),
        }
    }
}

impl QaDataset {
    pub fn empty(name: impl Into<String>) -> Self {
        QaDataset {
            name: name.into(),
            version: SQUAD_VERSION.to_string(),
            articles: Vec::new(),
        }
    }

    /// Builds a dataset from flat examples, keeping their order. Consecutive
    /// examples sharing a context are grouped into one paragraph; everything
    /// lands in a single article titled with the dataset name.
    pub fn from_examples(name: impl Into<String>, examples: impl IntoIterator<Item = Example>) -> Self {
        let name = name.into();
        let mut paragraphs: Vec<Paragraph> = Vec::new();
        for ex in examples {
            let qa = QaPair {
                id: ex.id,
                question: ex.question,
                answers: ex.answers,
            };
            match paragraphs.last_mut() {
                Some(p) if p.context == ex.context => p.qas.push(qa),
                _ => paragraphs.push(Paragraph {
                    context: ex.context,
                    qas: vec![qa],
                }),
            }
        }
        let articles = if paragraphs.is_empty() {
            Vec::new()
        } else {
            vec![Article {
                title: name.clone(),
                paragraphs,
            }]
        };
        QaDataset {
            name,
            version: SQUAD_VERSION.to_string(),
            articles,
        }
    }

    pub fn len(&self) -> usize {
        self.articles
            .iter()
            .flat_map(|a| &a.paragraphs)
            .map(|p| p.qas.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All QA occurrences in document order.
    pub fn iter_examples(&self) -> impl Iterator<Item = ExampleRef<'_>> {
        self.articles.iter().flat_map(|a| &a.paragraphs).flat_map(|p| {
            p.qas.iter().map(move |qa| ExampleRef {
                id: &qa.id,
                question: &qa.question,
                context: &p.context,
                answers: &qa.answers,
            })
        })
    }

    /// One owned tuple per QA occurrence, duplicates preserved, in document order.
    pub fn flatten(&self) -> Vec<Example> {
        self.iter_examples().map(|e| e.to_owned()).collect()
    }

    /// QA ids in document order.
    pub fn ids(&self) -> Vec<String> {
        self.iter_examples().map(|e| e.id.to_string()).collect()
    }

    /// Selects examples by id, in the order given. Ids must be unique in `self`.
    pub fn select(&self, name: impl Into<String>, ids: &[String]) -> Result<QaDataset, DatasetError> {
        let by_id: HashMap<&str, ExampleRef<'_>> = self.iter_examples().map(|e| (e.id, e)).collect();
        let mut missing = Vec::new();
        let mut picked = Vec::with_capacity(ids.len());
        for id in ids {
            match by_id.get(id.as_str()) {
                Some(e) => picked.push(e.to_owned()),
                None => missing.push(id.clone()),
            }
        }
        if !missing.is_empty() {
            return Err(DatasetError::Schema {
                path: format!("dataset {}", self.name),
                message: format!("unknown ids: {}", missing.join(", ")),
            });
        }
        Ok(QaDataset::from_examples(name, picked))
    }

    /// Keeps the article/paragraph structure, dropping QA entries whose id is not in `keep`.
    pub fn retain_ids(&self, name: impl Into<String>, keep: &HashSet<&str>) -> QaDataset {
        let articles = self
            .articles
            .iter()
            .filter_map(|a| {
                let paragraphs: Vec<Paragraph> = a
                    .paragraphs
                    .iter()
                    .filter_map(|p| {
                        let qas: Vec<QaPair> =
                            p.qas.iter().filter(|qa| keep.contains(qa.id.as_str())).cloned().collect();
                        (!qas.is_empty()).then(|| Paragraph {
                            context: p.context.clone(),
                            qas,
                        })
                    })
                    .collect();
                (!paragraphs.is_empty()).then(|| Article {
                    title: a.title.clone(),
                    paragraphs,
                })
            })
            .collect();
        QaDataset {
            name: name.into(),
            version: self.version.clone(),
            articles,
        }
    }

    /// Checks every invariant, returning all offending QA ids at once.
    pub fn validate(&self, policy: IdPolicy) -> Result<(), DatasetError> {
        let mut issues = Vec::new();
        let mut seen = HashSet::new();
        for p in self.articles.iter().flat_map(|a| &a.paragraphs) {
            for qa in &p.qas {
                let mut push = |kind| {
                    issues.push(ValidationIssue {
                        id: qa.id.clone(),
                        kind,
                    })
                };
                if policy == IdPolicy::Unique && !seen.insert(qa.id.as_str()) {
                    push(IssueKind::DuplicateId);
                }
                if qa.question.trim().is_empty() {
                    push(IssueKind::EmptyQuestion);
                }
                if qa.answers.is_empty() {
                    push(IssueKind::NoAnswers);
                }
                for (i, ans) in qa.answers.iter().enumerate() {
                    if ans.text.trim().is_empty() {
                        push(IssueKind::BlankAnswer { answer_index: i });
                    } else if !answer_matches(&p.context, ans) {
                        push(IssueKind::OffsetMismatch { answer_index: i });
                    }
                }
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(DatasetError::Validation(issues))
        }
    }
}

/// Byte offset of the `char_offset`-th character, or `None` past the end.
pub fn char_to_byte(s: &str, char_offset: usize) -> Option<usize> {
    s.char_indices()
        .map(|(b, _)| b)
        .chain(std::iter::once(s.len()))
        .nth(char_offset)
}

/// Byte range of an answer inside its context, if the offset invariant holds.
pub fn answer_byte_range(context: &str, answer: &Answer) -> Option<(usize, usize)> {
    let start = char_to_byte(context, answer.answer_start)?;
    context[start..]
        .starts_with(answer.text.as_str())
        .then(|| (start, start + answer.text.len()))
}

fn answer_matches(context: &str, answer: &Answer) -> bool {
    answer_byte_range(context, answer).is_some()
}

/// Parses a SQuAD v1.1 document. The dataset takes `name`; ids are checked
/// according to `policy`.
pub fn parse_squad(raw: &[u8], name: &str, policy: IdPolicy) -> Result<QaDataset, DatasetError> {
    let root: Value = serde_json::from_slice(raw).map_err(|e| DatasetError::Syntax {
        offset: byte_offset(raw, e.line(), e.column()),
        message: e.to_string(),
    })?;
    let ds = SchemaWalker.dataset(&root, name)?;
    ds.validate(policy)?;
    Ok(ds)
}

pub fn load_squad(path: &Path, policy: IdPolicy) -> Result<QaDataset, DatasetError> {
    let raw = std::fs::read(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    parse_squad(&raw, &name, policy)
}

#[derive(Serialize)]
struct SquadDocumentRef<'a> {
    version: &'a str,
    data: &'a [Article],
}

/// Serializes to SQuAD v1.1 JSON. Repeated QA entries are written as-is.
pub fn serialize_squad(d: &QaDataset) -> Result<Vec<u8>, DatasetError> {
    Ok(serde_json::to_vec(&SquadDocumentRef {
        version: &d.version,
        data: &d.articles,
    })?)
}

pub fn save_squad(d: &QaDataset, path: &Path) -> Result<(), DatasetError> {
    let bytes = serialize_squad(d)?;
    std::fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start = raw
        .iter()
        .enumerate()
        .filter(|(_, &b)| b == b'\n')
        .nth(line.saturating_sub(2))
        .map(|(i, _)| i + 1);
    let line_start = if line == 1 { 0 } else { line_start.unwrap_or(raw.len()) };
    (line_start + column.saturating_sub(1)).min(raw.len())
}

/// Walks an untyped JSON tree and reports schema violations with their path.
struct SchemaWalker;

impl SchemaWalker {
    fn dataset(&self, root: &Value, name: &str) -> Result<QaDataset, DatasetError> {
        let obj = obj(root, "$")?;
        let version = match obj.get("version") {
            Some(v) => string(v, "$.version")?,
            None => return Err(missing("$", "version")),
        };
        let data = array(field(obj, "$", "data")?, "$.data")?;
        let articles = data
            .iter()
            .enumerate()
            .map(|(i, a)| self.article(a, &format!("$.data[{i}]")))
            .collect::<Result<_, _>>()?;
        Ok(QaDataset {
            name: name.to_string(),
            version,
            articles,
        })
    }

    fn article(&self, v: &Value, path: &str) -> Result<Article, DatasetError> {
        let o = obj(v, path)?;
        let title = string(field(o, path, "title")?, &format!("{path}.title"))?;
        let ps = array(field(o, path, "paragraphs")?, &format!("{path}.paragraphs"))?;
        let paragraphs = ps
            .iter()
            .enumerate()
            .map(|(i, p)| self.paragraph(p, &format!("{path}.paragraphs[{i}]")))
            .collect::<Result<_, _>>()?;
        Ok(Article { title, paragraphs })
    }

    fn paragraph(&self, v: &Value, path: &str) -> Result<Paragraph, DatasetError> {
        let o = obj(v, path)?;
        let context = string(field(o, path, "context")?, &format!("{path}.context"))?;
        let qs = array(field(o, path, "qas")?, &format!("{path}.qas"))?;
        let qas = qs
            .iter()
            .enumerate()
            .map(|(i, q)| self.qa(q, &format!("{path}.qas[{i}]")))
            .collect::<Result<_, _>>()?;
        Ok(Paragraph { context, qas })
    }

    fn qa(&self, v: &Value, path: &str) -> Result<QaPair, DatasetError> {
        let o = obj(v, path)?;
        let id = string(field(o, path, "id")?, &format!("{path}.id"))?;
        let question = string(field(o, path, "question")?, &format!("{path}.question"))?;
        let ans = array(field(o, path, "answers")?, &format!("{path}.answers"))?;
        let answers = ans
            .iter()
            .enumerate()
            .map(|(i, a)| self.answer(a, &format!("{path}.answers[{i}]")))
            .collect::<Result<_, _>>()?;
        Ok(QaPair { id, question, answers })
    }

    fn answer(&self, v: &Value, path: &str) -> Result<Answer, DatasetError> {
        let o = obj(v, path)?;
        let text = string(field(o, path, "text")?, &format!("{path}.text"))?;
        let start_path = format!("{path}.answer_start");
        let answer_start = field(o, path, "answer_start")?
            .as_u64()
            .ok_or_else(|| schema(&start_path, "expected a non-negative integer"))?;
        Ok(Answer {
            text,
            answer_start: answer_start as usize,
        })
    }
}

type Object = serde_json::Map<String, Value>;

fn schema(path: &str, message: &str) -> DatasetError {
    DatasetError::Schema {
        path: path.to_string(),
        message: message.to_string(),
    }
}

fn missing(path: &str, key: &str) -> DatasetError {
    schema(&format!("{path}.{key}"), "missing field")
}

fn field<'a>(o: &'a Object, path: &str, key: &str) -> Result<&'a Value, DatasetError> {
    o.get(key).ok_or_else(|| missing(path, key))
}

fn obj<'a>(v: &'a Value, path: &str) -> Result<&'a Object, DatasetError> {
    v.as_object().ok_or_else(|| schema(path, "expected an object"))
}

fn array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, DatasetError> {
    v.as_array().ok_or_else(|| schema(path, "expected an array"))
}

fn string(v: &Value, path: &str) -> Result<String, DatasetError> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| schema(path, "expected a string"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

/// Raw text used by the domain-adaptation stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextCorpus {
    pub documents: Vec<Document>,
    pub size_bytes: usize,
}

impl TextCorpus {
    pub fn new(documents: Vec<Document>) -> Self {
        let size_bytes = documents.iter().map(|d| d.text.len()).sum();
        TextCorpus {
            documents,
            size_bytes,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    /// One document per line, line breaks inside documents folded to spaces.
    pub fn to_lines(&self) -> String {
        let mut out = String::with_capacity(self.size_bytes + self.documents.len());
        for d in &self.documents {
            out.extend(d.text.chars().map(|c| if c == '\n' || c == '\r' { ' ' } else { c }));
            out.push('\n');
        }
        out
    }

    pub fn from_lines(prefix: &str, text: &str) -> Self {
        TextCorpus::new(
            text.lines()
                .enumerate()
                .map(|(i, l)| Document {
                    doc_id: format!("{prefix}#{i}"),
                    text: l.to_string(),
                })
                .collect(),
        )
    }
}

/// One document per distinct paragraph context, in first-seen order.
pub fn extract_corpus(d: &QaDataset) -> TextCorpus {
    let mut seen = HashSet::new();
    let documents = d
        .articles
        .iter()
        .flat_map(|a| &a.paragraphs)
        .filter(|p| seen.insert(p.context.as_str()))
        .enumerate()
        .map(|(i, p)| Document {
            doc_id: format!("{}#{}", d.name, i),
            text: p.context.clone(),
        })
        .collect();
    TextCorpus::new(documents)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"version":"1.1","data":[{"title":"t","paragraphs":[
        {"context":"The drug ribavirin reduced mortality.","qas":[
            {"id":"q1","question":"Which drug?","answers":[{"text":"ribavirin","answer_start":9}]}]}]}]}"#;

    fn ex(id: &str, context: &str) -> Example {
        Example {
            id: id.into(),
            question: format!("question {id}"),
            context: context.into(),
            answers: vec![Answer {
                text: context.split(' ').next().unwrap().into(),
                answer_start: 0,
            }],
        }
    }

    #[test]
    fn parses_minimal_document() {
        let d = parse_squad(MINIMAL.as_bytes(), "mini", IdPolicy::Unique).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.version, "1.1");
        assert_eq!(d.flatten()[0].answers[0].text, "ribavirin");
    }

    #[test]
    fn off_by_one_offset_names_the_id() {
        let bad = MINIMAL.replace("\"answer_start\":9", "\"answer_start\":10");
        let err = parse_squad(bad.as_bytes(), "mini", IdPolicy::Unique).unwrap_err();
        match &err {
            DatasetError::Validation(issues) => {
                assert_eq!(issues.len(), 1);
                assert_eq!(issues[0].id, "q1");
                assert_eq!(issues[0].kind, IssueKind::OffsetMismatch { answer_index: 0 });
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("q1"));
    }

    #[test]
    fn offsets_count_characters_not_bytes() {
        let raw = r#"{"version":"1.1","data":[{"title":"t","paragraphs":[
            {"context":"café über ribavirin","qas":[
                {"id":"q","question":"x?","answers":[{"text":"ribavirin","answer_start":10}]}]}]}]}"#;
        assert!(parse_squad(raw.as_bytes(), "u", IdPolicy::Unique).is_ok());
        let bytes = raw.replace(":10}", ":12}");
        assert!(matches!(
            parse_squad(bytes.as_bytes(), "u", IdPolicy::Unique),
            Err(DatasetError::Validation(_))
        ));
    }

    #[test]
    fn syntax_error_reports_byte_offset() {
        let raw = b"{\"version\": \"1.1\",\n \"data\": [ }";
        match parse_squad(raw, "x", IdPolicy::Unique).unwrap_err() {
            DatasetError::Syntax { offset, .. } => {
                assert!(offset > 20 && offset < raw.len(), "offset {offset}");
                assert_eq!(raw[offset], b'}');
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn schema_errors_name_the_path() {
        let raw = MINIMAL.replace("\"question\":\"Which drug?\",", "");
        match parse_squad(raw.as_bytes(), "x", IdPolicy::Unique).unwrap_err() {
            DatasetError::Schema { path, message } => {
                assert_eq!(path, "$.data[0].paragraphs[0].qas[0].question");
                assert_eq!(message, "missing field");
            }
            other => panic!("unexpected {other:?}"),
        }
        let raw = MINIMAL.replace("\"answer_start\":9", "\"answer_start\":\"9\"");
        match parse_squad(raw.as_bytes(), "x", IdPolicy::Unique).unwrap_err() {
            DatasetError::Schema { path, .. } => {
                assert_eq!(path, "$.data[0].paragraphs[0].qas[0].answers[0].answer_start")
            }
            other => panic!("unexpected {other:?}"),
        }
        let raw = MINIMAL.replace("\"answer_start\":9", "\"answer_start\":-1");
        assert!(matches!(
            parse_squad(raw.as_bytes(), "x", IdPolicy::Unique),
            Err(DatasetError::Schema { .. })
        ));
    }

    #[test]
    fn rejects_empty_questions_and_blank_answers() {
        let raw = MINIMAL.replace("Which drug?", "  ");
        let err = parse_squad(raw.as_bytes(), "x", IdPolicy::Unique).unwrap_err();
        assert!(matches!(err, DatasetError::Validation(ref v) if v[0].kind == IssueKind::EmptyQuestion));

        let raw = MINIMAL.replace("\"text\":\"ribavirin\",\"answer_start\":9", "\"text\":\" \",\"answer_start\":3");
        let err = parse_squad(raw.as_bytes(), "x", IdPolicy::Unique).unwrap_err();
        assert!(matches!(err, DatasetError::Validation(ref v) if v[0].kind == IssueKind::BlankAnswer { answer_index: 0 }));

        let raw = MINIMAL.replace("[{\"text\":\"ribavirin\",\"answer_start\":9}]", "[]");
        let err = parse_squad(raw.as_bytes(), "x", IdPolicy::Unique).unwrap_err();
        assert!(matches!(err, DatasetError::Validation(ref v) if v[0].kind == IssueKind::NoAnswers));
    }

    #[test]
    fn duplicate_ids_depend_on_policy() {
        let d = QaDataset::from_examples("m", vec![ex("a", "x y"), ex("a", "x y"), ex("b", "z")]);
        let bytes = serialize_squad(&d).unwrap();
        assert!(matches!(
            parse_squad(&bytes, "m", IdPolicy::Unique),
            Err(DatasetError::Validation(ref v)) if v.iter().all(|i| i.kind == IssueKind::DuplicateId)
        ));
        let back = parse_squad(&bytes, "m", IdPolicy::Multiset).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.len(), 3);
    }

    #[test]
    fn empty_dataset_serializes_with_empty_data() {
        let d = QaDataset::empty("nothing");
        let bytes = serialize_squad(&d).unwrap();
        assert_eq!(std::str::from_utf8(&bytes).unwrap(), r#"{"version":"1.1","data":[]}"#);
        assert_eq!(parse_squad(&bytes, "nothing", IdPolicy::Unique).unwrap(), d);
        assert!(d.flatten().is_empty());
    }

    #[test]
    fn flatten_keeps_document_order() {
        let d = QaDataset::from_examples(
            "f",
            vec![ex("1", "p one"), ex("2", "p one"), ex("3", "p two"), ex("4", "p two")],
        );
        assert_eq!(d.articles[0].paragraphs.len(), 2);
        let ids: Vec<_> = d.flatten().into_iter().map(|e| e.id).collect();
        assert_eq!(ids, ["1", "2", "3", "4"]);
    }

    #[test]
    fn flatten_preserves_multiplicity() {
        let d = QaDataset::from_examples("f", vec![ex("a", "c"), ex("b", "d"), ex("a", "c"), ex("a", "c")]);
        assert_eq!(d.flatten().iter().filter(|e| e.id == "a").count(), 3);
    }

    #[test]
    fn corpus_dedups_contexts() {
        let d = QaDataset::from_examples(
            "c",
            vec![ex("1", "same text"), ex("2", "other text"), ex("3", "same text")],
        );
        assert_eq!(d.articles[0].paragraphs.len(), 3);
        let c = extract_corpus(&d);
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.size_bytes, "same text".len() + "other text".len());

        let hundred = "a".repeat(100);
        let c = extract_corpus(&QaDataset::from_examples("h", vec![ex("1", &hundred)]));
        assert_eq!(c.size_bytes, 100);
    }

    #[test]
    fn corpus_lines_round_trip() {
        let c = TextCorpus::new(vec![
            Document { doc_id: "d#0".into(), text: "first doc".into() },
            Document { doc_id: "d#1".into(), text: "second doc".into() },
        ]);
        assert_eq!(TextCorpus::from_lines("d", &c.to_lines()), c);
    }

    #[test]
    fn select_orders_by_request_and_rejects_unknown() {
        let d = QaDataset::from_examples("s", vec![ex("1", "a"), ex("2", "b"), ex("3", "c")]);
        let s = d.select("s2", &["3".into(), "1".into()]).unwrap();
        assert_eq!(s.ids(), ["3", "1"]);
        assert!(d.select("s3", &["9".into()]).is_err());
    }
}
