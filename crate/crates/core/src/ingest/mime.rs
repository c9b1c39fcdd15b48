//! Minimal RFC-822 / MIME reader: header unfolding, RFC 2047 encoded words,
//! multipart traversal, base64 and quoted-printable transfer decoding, charset
//! conversion. Never fails once a header/body separator exists; undecodable
//! content degrades to lossy text.

use std::collections::BTreeMap;

use base64::engine::general_purpose::{GeneralPurpose, GeneralPurposeConfig};
use base64::engine::DecodePaddingMode;
use base64::{alphabet, Engine};

use super::{IngestError, PartKind, RawEmail};

const MAX_DEPTH: usize = 16;

const LENIENT_B64: GeneralPurpose = GeneralPurpose::new(
    &alphabet::STANDARD,
    GeneralPurposeConfig::new()
        .with_decode_padding_mode(DecodePaddingMode::Indifferent)
        .with_decode_allow_trailing_bits(true),
);

/// Parses one message. Fails only when there is no blank line ending the headers.
pub fn parse_eml(bytes: &[u8]) -> Result<RawEmail, IngestError> {
    let (head, body) = split_head_body(bytes).ok_or_else(|| {
        IngestError::MalformedMessage("no blank line separating headers from body".into())
    })?;
    let fields = parse_fields(head);
    let mut headers = BTreeMap::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for (name, value) in &fields {
        let n = counts.entry(name.clone()).or_insert(0);
        let key = if *n == 0 {
            name.clone()
        } else {
            format!("{name}#{n}")
        };
        *n += 1;
        headers.insert(key, decode_words(value));
    }
    let mut body_parts = Vec::new();
    walk_entity(&fields, body, 0, &mut body_parts);
    Ok(RawEmail {
        headers,
        body_parts,
    })
}

/// Splits at the first empty line (LF or CRLF endings).
fn split_head_body(bytes: &[u8]) -> Option<(&[u8], &[u8])> {
    let mut start = 0;
    while start <= bytes.len() {
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p);
        let line_end = end.unwrap_or(bytes.len());
        let line = &bytes[start..line_end];
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if line.is_empty() && end.is_some() {
            return Some((&bytes[..start], &bytes[line_end + 1..]));
        }
        match end {
            Some(e) => start = e + 1,
            None => return None,
        }
    }
    None
}

/// Unfolds continuation lines and returns `(lowercased name, raw value)` pairs.
fn parse_fields(head: &[u8]) -> Vec<(String, String)> {
    let text = String::from_utf8_lossy(head);
    let mut fields: Vec<(String, String)> = Vec::new();
    for line in text.lines() {
        if line.starts_with([' ', '\t']) {
            if let Some(last) = fields.last_mut() {
                last.1.push(' ');
                last.1.push_str(line.trim());
            }
            continue;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim();
            if !name.is_empty() && !name.contains(' ') {
                fields.push((name.to_ascii_lowercase(), value.trim().to_string()));
            }
        }
    }
    fields
}

fn field<'a>(fields: &'a [(String, String)], name: &str) -> Option<&'a str> {
    fields
        .iter()
        .find(|(n, _)| n == name)
        .map(|(_, v)| v.as_str())
}

/// `type/subtype` lowercased plus lowercased-name parameters.
fn parse_content_type(value: Option<&str>) -> (String, BTreeMap<String, String>) {
    let Some(value) = value else {
        return ("text/plain".into(), BTreeMap::new());
    };
    let mut parts = split_params(value).into_iter();
    let mime = parts
        .next()
        .map(|s| s.trim().to_ascii_lowercase())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "text/plain".into());
    let mut params = BTreeMap::new();
    for p in parts {
        if let Some((k, v)) = p.split_once('=') {
            let v = v.trim();
            let v = v
                .strip_prefix('"')
                .and_then(|v| v.strip_suffix('"'))
                .unwrap_or(v);
            params.insert(k.trim().to_ascii_lowercase(), v.to_string());
        }
    }
    (mime, params)
}

/// Splits on `;` outside double quotes.
fn split_params(value: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    for c in value.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                cur.push(c);
            }
            ';' if !quoted => out.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    out.push(cur);
    out
}

fn walk_entity(
    fields: &[(String, String)],
    body: &[u8],
    depth: usize,
    out: &mut Vec<(PartKind, String)>,
) {
    if depth > MAX_DEPTH {
        return;
    }
    let (mime, params) = parse_content_type(field(fields, "content-type"));
    let disposition = field(fields, "content-disposition")
        .map(|d| d.trim().to_ascii_lowercase())
        .unwrap_or_default();
    if disposition.starts_with("attachment") {
        return;
    }
    if mime.starts_with("multipart/") {
        if let Some(boundary) = params.get("boundary").filter(|b| !b.is_empty()) {
            for part in split_multipart(body, boundary) {
                let (pfields, pbody) = match split_head_body(part) {
                    Some((h, b)) => (parse_fields(h), b),
                    None => (Vec::new(), part),
                };
                walk_entity(&pfields, pbody, depth + 1, out);
            }
        }
        return;
    }
    if mime == "message/rfc822" {
        if let Some((h, b)) = split_head_body(body) {
            walk_entity(&parse_fields(h), b, depth + 1, out);
        }
        return;
    }
    let kind = match mime.as_str() {
        "text/plain" => PartKind::Plain,
        "text/html" => PartKind::Html,
        _ => return,
    };
    let encoding = field(fields, "content-transfer-encoding")
        .map(|e| e.trim().to_ascii_lowercase())
        .unwrap_or_default();
    let decoded = decode_transfer(body, &encoding);
    let text = decode_charset(&decoded, params.get("charset").map(String::as_str));
    out.push((kind, text));
}

/// Bodies of the parts delimited by `--boundary` lines.
fn split_multipart<'a>(body: &'a [u8], boundary: &str) -> Vec<&'a [u8]> {
    let delim = format!("--{boundary}");
    let delim = delim.as_bytes();
    let mut parts = Vec::new();
    let mut current: Option<usize> = None;
    let mut pos = 0;
    while pos < body.len() {
        let nl = body[pos..].iter().position(|&b| b == b'\n');
        let line_end = nl.map_or(body.len(), |p| pos + p);
        let next = nl.map_or(body.len(), |p| pos + p + 1);
        let line = &body[pos..line_end];
        let line = line.strip_suffix(b"\r").unwrap_or(line);
        if let Some(rest) = line.strip_prefix(delim) {
            let rest = trim_ascii(rest);
            if rest.is_empty() || rest == b"--" {
                if let Some(s) = current {
                    // Drop the line break that belongs to the delimiter.
                    let mut e = pos;
                    if e > s && body[e - 1] == b'\n' {
                        e -= 1;
                        if e > s && body[e - 1] == b'\r' {
                            e -= 1;
                        }
                    }
                    parts.push(&body[s..e.max(s)]);
                }
                if rest == b"--" {
                    return parts;
                }
                current = Some(next);
            }
        }
        pos = next;
    }
    if let Some(s) = current {
        if s < body.len() {
            parts.push(&body[s..]);
        }
    }
    parts
}

fn trim_ascii(b: &[u8]) -> &[u8] {
    let start = b.iter().position(|c| !c.is_ascii_whitespace()).unwrap_or(b.len());
    let end = b
        .iter()
        .rposition(|c| !c.is_ascii_whitespace())
        .map_or(start, |e| e + 1);
    &b[start..end]
}

fn decode_transfer(body: &[u8], encoding: &str) -> Vec<u8> {
    match encoding {
        "base64" => decode_base64(body).unwrap_or_else(|| body.to_vec()),
        "quoted-printable" => {
            quoted_printable::decode(body, quoted_printable::ParseMode::Robust)
                .unwrap_or_else(|_| body.to_vec())
        }
        _ => body.to_vec(),
    }
}

fn decode_base64(body: &[u8]) -> Option<Vec<u8>> {
    let cleaned: Vec<u8> = body
        .iter()
        .copied()
        .filter(|b| !b.is_ascii_whitespace())
        .collect();
    LENIENT_B64.decode(&cleaned).ok()
}

/// Decodes with the named charset when known, UTF-8 otherwise; always lossy.
fn decode_charset(bytes: &[u8], charset: Option<&str>) -> String {
    let encoding = charset
        .and_then(|c| encoding_rs::Encoding::for_label(c.trim().as_bytes()))
        .unwrap_or(encoding_rs::UTF_8);
    let (text, _, _) = encoding.decode(bytes);
    text.into_owned()
}

/// Decodes RFC 2047 encoded words (`=?charset?B|Q?text?=`) in a header value.
fn decode_words(value: &str) -> String {
    let mut out = String::new();
    let mut rest = value;
    let mut last_was_word = false;
    while !rest.is_empty() {
        let Some(start) = rest.find("=?") else {
            out.push_str(rest);
            break;
        };
        let (before, tail) = rest.split_at(start);
        match parse_encoded_word(tail) {
            Some((text, used)) => {
                if !(last_was_word && before.trim().is_empty()) {
                    out.push_str(before);
                }
                out.push_str(&text);
                rest = &tail[used..];
                last_was_word = true;
            }
            None => {
                out.push_str(before);
                out.push_str("=?");
                rest = &tail[2..];
                last_was_word = false;
            }
        }
    }
    out
}

fn parse_encoded_word(s: &str) -> Option<(String, usize)> {
    let inner = &s[2..];
    let q1 = inner.find('?')?;
    let charset = &inner[..q1];
    let after = &inner[q1 + 1..];
    let q2 = after.find('?')?;
    let enc = &after[..q2];
    let payload_and_rest = &after[q2 + 1..];
    let end = payload_and_rest.find("?=")?;
    let payload = &payload_and_rest[..end];
    if payload.contains(' ') {
        return None;
    }
    let bytes = match enc.to_ascii_lowercase().as_str() {
        "b" => decode_base64(payload.as_bytes())?,
        "q" => {
            let replaced = payload.replace('_', " ");
            quoted_printable::decode(replaced.as_bytes(), quoted_printable::ParseMode::Robust)
                .ok()?
        }
        _ => return None,
    };
    let charset = charset.split('*').next().unwrap_or(charset);
    let used = 2 + q1 + 1 + q2 + 1 + end + 2;
    Some((decode_charset(&bytes, Some(charset)), used))
}
