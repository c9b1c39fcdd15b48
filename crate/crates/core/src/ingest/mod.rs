//! Email ingestion: RFC-822 / MIME parsing into labeled plain-text documents.

mod html;
mod mime;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use html::{collapse_whitespace, strip_html};
pub use mime::parse_eml;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed message: {0}")]
    MalformedMessage(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Ground-truth class of an email.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Legitimate = 0,
    Phishing = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn other(self) -> Self {
        match self {
            Label::Legitimate => Label::Phishing,
            Label::Phishing => Label::Legitimate,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Label::Legitimate),
            1 => Ok(Label::Phishing),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PartKind {
    Plain,
    Html,
}

/// Parsed message: decoded headers and the text parts in document order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RawEmail {
    /// Lowercased names. A repeated header keeps its first value under the bare
    /// name; later occurrences are stored as `name#1`, `name#2`, ….
    pub headers: BTreeMap<String, String>,
    pub body_parts: Vec<(PartKind, String)>,
}

impl RawEmail {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }
}

/// Plain text of one email: subject, a space, then the body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub source_id: String,
    pub label: Label,
    pub text: String,
}

/// Subject and body text, HTML parts stripped, whitespace normalized.
pub fn extract_text(email: &RawEmail, label: Label, source_id: impl Into<String>) -> Document {
    let subject = email.header("subject").unwrap_or("");
    let mut text = String::from(subject);
    for (kind, payload) in &email.body_parts {
        text.push(' ');
        match kind {
            PartKind::Plain => text.push_str(payload),
            PartKind::Html => text.push_str(&strip_html(payload)),
        }
    }
    Document {
        source_id: source_id.into(),
        label,
        text: defang_tags(&collapse_whitespace(&text)),
    }
}

/// Separates a `<` from a following tag-start character so no markup survives in
/// document text (plain-text parts may carry literal markup).
fn defang_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars().peekable();
    while let Some(c) = chars.next() {
        out.push(c);
        if c == '<'
            && matches!(chars.peek(), Some(&n) if n.is_ascii_alphabetic() || matches!(n, '/' | '!' | '?'))
        {
            out.push(' ');
        }
    }
    out
}

/// A file that could not be turned into a document.
#[derive(Debug)]
pub struct Skipped {
    pub path: PathBuf,
    pub error: IngestError,
}

/// Reads every file under `dir` (recursively, sorted by path) as one email.
pub fn ingest_dir(dir: &Path, label: Label) -> Result<(Vec<Document>, Vec<Skipped>), IngestError> {
    let mut files = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut docs = Vec::new();
    let mut skipped = Vec::new();
    for path in files {
        let bytes = fs::read(&path).map_err(|source| IngestError::Io {
            path: path.clone(),
            source,
        })?;
        let id = path
            .strip_prefix(dir)
            .unwrap_or(&path)
            .to_string_lossy()
            .into_owned();
        match parse_eml(&bytes) {
            Ok(raw) => docs.push(extract_text(&raw, label, id)),
            Err(error) => skipped.push(Skipped { path, error }),
        }
    }
    Ok((docs, skipped))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), IngestError> {
    let io = |source| IngestError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.is_file() {
            out.push(path);
        }
    }
    Ok(())
}

/// Reads the `phishing/` and `legitimate/` subdirectories of `root`.
pub fn ingest_labeled_tree(root: &Path) -> Result<(Vec<Document>, Vec<Skipped>), IngestError> {
    let (mut docs, mut skipped) = ingest_dir(&root.join("phishing"), Label::Phishing)?;
    let (d2, s2) = ingest_dir(&root.join("legitimate"), Label::Legitimate)?;
    docs.extend(d2);
    skipped.extend(s2);
    Ok((docs, skipped))
}

/// One JSON object per line: `{"source_id", "label", "text"}`.
pub fn write_jsonl<W: Write>(docs: &[Document], mut out: W) -> std::io::Result<()> {
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
