//! Six-step normalization: non-letters out, lowercase, tokenize, lemmatize,
//! stop-word and short-token removal, rejoin.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ingest::{Document, Label};

pub const BUNDLED_STOPWORDS: &str = include_str!("../data/stopwords.txt");
pub const BUNDLED_LEMMA_EXCEPTIONS: &str = include_str!("../data/lemma_exceptions.txt");

/// Cleaned token stream of one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcessedText {
    pub tokens: Vec<String>,
    pub label: Label,
    pub source_id: String,
}

impl ProcessedText {
    /// The tokens rejoined into one space-separated string.
    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Replaces every non-letter with a space, lowercases letters, and drops letters
/// that are not ASCII after lowercasing.
pub fn clean_chars(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if c.is_alphabetic() {
            out.extend(c.to_lowercase().filter(char::is_ascii_lowercase));
        } else {
            out.push(' ');
        }
    }
    out
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_owned).collect()
}

/// Lookup tables for lemmatization and filtering, loaded once.
#[derive(Debug, Clone)]
pub struct TextPipeline {
    stopwords: HashSet<String>,
    exceptions: HashMap<String, String>,
}

impl Default for TextPipeline {
    fn default() -> Self {
        Self::from_tables(BUNDLED_STOPWORDS, BUNDLED_LEMMA_EXCEPTIONS)
    }
}

fn data_lines(src: &str) -> impl Iterator<Item = &str> {
    src.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

impl TextPipeline {
    /// Builds tables from the text of a stop-word list (one word per line) and
    /// an exception table (`inflected lemma` per line).
    pub fn from_tables(stopwords: &str, exceptions: &str) -> Self {
        let stopwords = data_lines(stopwords).map(str::to_ascii_lowercase).collect();
        let mut table = HashMap::new();
        for line in data_lines(exceptions) {
            let mut parts = line.split_whitespace();
            if let (Some(k), Some(v)) = (parts.next(), parts.next()) {
                table
                    .entry(k.to_ascii_lowercase())
                    .or_insert_with(|| v.to_ascii_lowercase());
            }
        }
        Self {
            stopwords,
            exceptions: table,
        }
    }

    /// Loads overrides from files; `None` keeps the bundled table.
    pub fn from_files(stopwords: Option<&Path>, exceptions: Option<&Path>) -> io::Result<Self> {
        let sw = match stopwords {
            Some(p) => fs::read_to_string(p)?,
            None => BUNDLED_STOPWORDS.to_string(),
        };
        let ex = match exceptions {
            Some(p) => fs::read_to_string(p)?,
            None => BUNDLED_LEMMA_EXCEPTIONS.to_string(),
        };
        Ok(Self::from_tables(&sw, &ex))
    }

    pub fn is_stopword(&self, token: &str) -> bool {
        self.stopwords.contains(token)
    }

    pub fn stopword_count(&self) -> usize {
        self.stopwords.len()
    }

    pub fn exceptions(&self) -> impl Iterator<Item = (&str, &str)> {
        self.exceptions.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Dictionary form via the exception table, then suffix rules applied until
    /// nothing changes (so the result is itself a fixed point).
    pub fn lemmatize(&self, token: &str) -> String {
        let mut cur = token.to_string();
        loop {
            if let Some(lemma) = self.exceptions.get(&cur) {
                return lemma.clone();
            }
            match suffix_rule(&cur) {
                Some(next) if next.len() < cur.len() => cur = next,
                _ => return cur,
            }
        }
    }

    /// Removes stop words and tokens shorter than two characters.
    pub fn filter_tokens(&self, tokens: Vec<String>) -> Vec<String> {
        tokens
            .into_iter()
            .filter(|t| t.len() >= 2 && !self.stopwords.contains(t))
            .collect()
    }

    pub fn process_text(&self, text: &str) -> Vec<String> {
        let tokens = tokenize(&clean_chars(text))
            .iter()
            .map(|t| self.lemmatize(t))
            .collect();
        self.filter_tokens(tokens)
    }

    pub fn preprocess(&self, doc: &Document) -> ProcessedText {
        ProcessedText {
            tokens: self.process_text(&doc.text),
            label: doc.label,
            source_id: doc.source_id.clone(),
        }
    }
}

fn is_vowel_at(w: &[u8], i: usize) -> bool {
    match w[i] {
        b'a' | b'e' | b'i' | b'o' | b'u' => true,
        b'y' => i > 0 && !is_vowel_at(w, i - 1),
        _ => false,
    }
}

fn has_vowel(stem: &str) -> bool {
    let w = stem.as_bytes();
    (0..w.len()).any(|i| is_vowel_at(w, i))
}

/// Number of vowel→consonant transitions.
fn measure(stem: &str) -> usize {
    let w = stem.as_bytes();
    let mut m = 0;
    let mut prev_vowel = false;
    for i in 0..w.len() {
        let v = is_vowel_at(w, i);
        if prev_vowel && !v {
            m += 1;
        }
        prev_vowel = v;
    }
    m
}

/// Ends consonant-vowel-consonant with the last consonant not w, x, or y.
fn ends_cvc(stem: &str) -> bool {
    let w = stem.as_bytes();
    let n = w.len();
    n >= 3
        && !is_vowel_at(w, n - 3)
        && is_vowel_at(w, n - 2)
        && !is_vowel_at(w, n - 1)
        && !matches!(w[n - 1], b'w' | b'x' | b'y')
}

fn ends_double_consonant(stem: &str) -> bool {
    let w = stem.as_bytes();
    let n = w.len();
    n >= 2 && w[n - 1] == w[n - 2] && !is_vowel_at(w, n - 1)
}

/// Restores a plausible base after an `-ed` / `-ing` strip.
fn fix_stem(stem: &str) -> String {
    if stem.ends_with("at") || stem.ends_with("bl") || stem.ends_with("iz") {
        format!("{stem}e")
    } else if ends_double_consonant(stem) && !matches!(stem.as_bytes()[stem.len() - 1], b'l' | b's' | b'z')
    {
        stem[..stem.len() - 1].to_string()
    } else if measure(stem) == 1 && ends_cvc(stem) {
        format!("{stem}e")
    } else {
        stem.to_string()
    }
}

fn suffix_rule(w: &str) -> Option<String> {
    let n = w.len();
    if n < 4 {
        return None;
    }
    if let Some(stem) = w.strip_suffix("ies") {
        return (n > 4).then(|| format!("{stem}y"));
    }
    if let Some(stem) = w.strip_suffix("sses") {
        return Some(format!("{stem}ss"));
    }
    for suf in ["ches", "shes", "xes", "zes"] {
        if let Some(stem) = w.strip_suffix(suf) {
            return Some(format!("{stem}{}", &suf[..suf.len() - 2]));
        }
    }
    if w.ends_with('s') {
        if w.ends_with("ss") || w.ends_with("us") || w.ends_with("is") {
            return None;
        }
        return Some(w[..n - 1].to_string());
    }
    if let Some(stem) = w.strip_suffix("ied") {
        return (n > 4).then(|| format!("{stem}y"));
    }
    if let Some(stem) = w.strip_suffix("eed") {
        return (measure(stem) > 0).then(|| format!("{stem}ee"));
    }
    if let Some(stem) = w.strip_suffix("ed") {
        return has_vowel(stem).then(|| fix_stem(stem));
    }
    if let Some(stem) = w.strip_suffix("ing") {
        return (stem.len() >= 2 && has_vowel(stem)).then(|| fix_stem(stem));
    }
    if let Some(stem) = w.strip_suffix("iest") {
        return (n > 5).then(|| format!("{stem}y"));
    }
    if let Some(stem) = w.strip_suffix("ier") {
        return (n > 4).then(|| format!("{stem}y"));
    }
    // Comparatives / superlatives only when a doubled consonant marks them
    // (bigger, hottest); plain -er/-est is too ambiguous with nouns.
    for suf in ["est", "er"] {
        if let Some(stem) = w.strip_suffix(suf) {
            if ends_double_consonant(stem)
                && matches!(stem.as_bytes()[stem.len() - 1], b'g' | b't' | b'd' | b'n' | b'm' | b'p')
            {
                return Some(stem[..stem.len() - 1].to_string());
            }
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(text: &str, label: Label) -> Document {
        Document {
            source_id: "d".into(),
            label,
            text: text.into(),
        }
    }

    #[test]
    fn clean_chars_examples() {
        assert_eq!(clean_chars("Win $1000 NOW!"), "win       now ");
        assert_eq!(clean_chars("abc"), "abc");
        // r, é (dropped), u, n, i, o, n
        assert_eq!(clean_chars("réunion"), "runion");
    }

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("win now"), vec!["win", "now"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("  a  b "), vec!["a", "b"]);
    }

    #[test]
    fn lemmatize_examples() {
        let p = TextPipeline::default();
        assert_eq!(p.lemmatize("running"), "run");
        assert_eq!(p.lemmatize("cat"), "cat");
        assert_eq!(p.lemmatize("studies"), "study");
        assert_eq!(p.lemmatize("cats"), "cat");
        assert_eq!(p.lemmatize("boxes"), "box");
        assert_eq!(p.lemmatize("classes"), "class");
        assert_eq!(p.lemmatize("verified"), "verify");
        assert_eq!(p.lemmatize("clicked"), "click");
        assert_eq!(p.lemmatize("making"), "make");
        assert_eq!(p.lemmatize("created"), "create");
        assert_eq!(p.lemmatize("agreed"), "agree");
        assert_eq!(p.lemmatize("bigger"), "big");
        assert_eq!(p.lemmatize("happiest"), "happy");
        assert_eq!(p.lemmatize("went"), "go");
        assert_eq!(p.lemmatize("children"), "child");
        assert_eq!(p.lemmatize("need"), "need");
        assert_eq!(p.lemmatize("this"), "this");
        assert_eq!(p.lemmatize("string"), "string");
    }

    #[test]
    fn exception_targets_are_fixed_points() {
        let p = TextPipeline::default();
        for (_, lemma) in p.exceptions() {
            assert_eq!(p.lemmatize(lemma), lemma, "{lemma} is not a fixed point");
        }
    }

    #[test]
    fn filter_examples() {
        let p = TextPipeline::default();
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert_eq!(
            p.filter_tokens(v(&["the", "offer", "is", "a", "scam"])),
            v(&["offer", "scam"])
        );
        assert_eq!(p.filter_tokens(v(&["i", "x", "go"])), v(&["go"]));
        assert!(p.filter_tokens(vec![]).is_empty());
    }

    #[test]
    fn bundled_stopword_list_size() {
        let p = TextPipeline::default();
        assert_eq!(p.stopword_count(), 145);
        for w in ["the", "a", "is", "your", "at", "i"] {
            assert!(p.is_stopword(w));
        }
    }

    #[test]
    fn preprocess_hand_trace() {
        let p = TextPipeline::default();
        let out = p.preprocess(&doc(
            "URGENT!!! Verify your account at http://x.co",
            Label::Phishing,
        ));
        assert_eq!(out.tokens, vec!["urgent", "verify", "account", "http", "co"]);
        assert_eq!(out.label, Label::Phishing);
        assert!(p.preprocess(&doc("", Label::Legitimate)).tokens.is_empty());
    }

    #[test]
    fn prepositions_are_removed() {
        let p = TextPipeline::default();
        let out = p.process_text("Send the money to me from your bank in London with care");
        for prep in ["to", "from", "in", "with"] {
            assert!(!out.contains(&prep.to_string()));
        }
        assert_eq!(out, vec!["send", "money", "bank", "london", "care"]);
    }

    #[test]
    fn overrides_load_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let sw = dir.path().join("sw.txt");
        let ex = dir.path().join("ex.txt");
        fs::write(&sw, "offer\n").unwrap();
        fs::write(&ex, "scams fraud\n").unwrap();
        let p = TextPipeline::from_files(Some(&sw), Some(&ex)).unwrap();
        assert_eq!(p.process_text("the offer scams"), vec!["the", "fraud"]);
    }
}
