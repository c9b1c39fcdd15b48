//! Tolerant HTML-to-visible-text scanner.

const BLOCK_TAGS: &[&str] = &[
    "address", "article", "aside", "blockquote", "body", "br", "caption", "center", "dd", "div",
    "dl", "dt", "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3", "h4",
    "h5", "h6", "head", "header", "hr", "html", "img", "li", "main", "nav", "ol", "option", "p",
    "pre", "section", "select", "table", "tbody", "td", "tfoot", "th", "thead", "title", "tr",
    "ul",
];

/// Elements whose content is never visible.
const HIDDEN_TAGS: &[&str] = &["script", "style", "title", "template"];

/// Visible text of an HTML fragment, whitespace-collapsed and trimmed.
///
/// Tags and comments are removed, `script`/`style` bodies dropped, entities
/// decoded, and block-level boundaries become spaces. A `<` that never closes is
/// kept as text. The pass repeats until the output is stable, so applying it to
/// its own output is the identity.
pub fn strip_html(html: &str) -> String {
    let mut cur = strip_pass(html);
    loop {
        let next = strip_pass(&cur);
        if next == cur {
            return cur;
        }
        cur = next;
    }
}

fn is_tag_start(next: Option<char>) -> bool {
    matches!(next, Some(c) if c.is_ascii_alphabetic() || c == '/' || c == '!' || c == '?')
}

fn strip_pass(src: &str) -> String {
    let mut out = String::with_capacity(src.len());
    let mut i = 0;
    while i < src.len() {
        let rest = &src[i..];
        let c = rest.chars().next().expect("non-empty");
        if c == '<' && is_tag_start(rest[1..].chars().next()) {
            if rest.starts_with("<!--") {
                i += rest.find("-->").map_or(rest.len(), |e| e + 3);
                out.push(' ');
                continue;
            }
            let Some(close) = rest.find('>') else {
                out.push('<');
                i += 1;
                continue;
            };
            let inner = &rest[1..close];
            let closing = inner.starts_with('/');
            let name: String = inner
                .trim_start_matches('/')
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric())
                .collect::<String>()
                .to_ascii_lowercase();
            i += close + 1;
            if !closing && HIDDEN_TAGS.contains(&name.as_str()) {
                let self_closing = inner.trim_end().ends_with('/');
                if !self_closing {
                    i += skip_element_body(&src[i..], &name);
                }
                out.push(' ');
                continue;
            }
            if BLOCK_TAGS.contains(&name.as_str()) {
                out.push(' ');
            }
            continue;
        }
        if c == '&' {
            if let Some((decoded, used)) = decode_entity(rest) {
                out.push(decoded);
                i += used;
                continue;
            }
        }
        out.push(c);
        i += c.len_utf8();
    }
    collapse_whitespace(&out)
}

/// Bytes to skip past the closing tag of `name`; everything if never closed.
fn skip_element_body(rest: &str, name: &str) -> usize {
    let lower = rest.to_ascii_lowercase();
    let needle = format!("</{name}");
    match lower.find(&needle) {
        Some(pos) => {
            let after = pos + needle.len();
            after + rest[after..].find('>').map_or(rest.len() - after, |e| e + 1)
        }
        None => rest.len(),
    }
}

fn decode_entity(s: &str) -> Option<(char, usize)> {
    let end = s[1..].char_indices().take(12).find(|&(_, c)| c == ';')?.0 + 1;
    let body = &s[1..end];
    let ch = if let Some(num) = body.strip_prefix('#') {
        let code = if let Some(hex) = num.strip_prefix(['x', 'X']) {
            u32::from_str_radix(hex, 16).ok()?
        } else {
            num.parse::<u32>().ok()?
        };
        char::from_u32(code)?
    } else {
        match body {
            "amp" => '&',
            "lt" => '<',
            "gt" => '>',
            "quot" => '"',
            "apos" => '\'',
            "nbsp" => ' ',
            "copy" => '©',
            "reg" => '®',
            "ndash" => '–',
            "mdash" => '—',
            "hellip" => '…',
            "rsquo" | "lsquo" => '\'',
            "rdquo" | "ldquo" => '"',
            _ => return None,
        }
    };
    Some((ch, end + 1))
}

/// Collapses whitespace runs to single spaces and trims.
pub fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
