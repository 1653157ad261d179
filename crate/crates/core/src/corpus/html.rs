//! Split a post body into plain-text description and block code segments.
//!
//! Block code is the content of `<pre>` elements (usually `<pre><code>`).
//! Inline `<code>` inside running text stays in the description.

/// A parsed markup tag: `<name ...>` or `</name>`.
struct Tag<'a> {
    name: &'a str,
    closing: bool,
    /// Byte offset one past the closing `>`.
    end: usize,
}

/// Recognize a tag starting at `at` (which must point at `<`). Only
/// `<` followed by an ASCII letter, `/letter` or `!` counts as markup, so
/// plain-text comparisons such as `x < 5` survive stripping unchanged.
fn tag_at(s: &str, at: usize) -> Option<Tag<'_>> {
    let bytes = s.as_bytes();
    let mut i = at + 1;
    let closing = bytes.get(i) == Some(&b'/');
    if closing {
        i += 1;
    }
    let first = *bytes.get(i)?;
    if !(first.is_ascii_alphabetic() || (first == b'!' && !closing)) {
        return None;
    }
    let name_start = i;
    while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'!' || bytes[i] == b'-') {
        i += 1;
    }
    let name = &s[name_start..i];
    // Comments may contain '>' and '<'.
    if name.starts_with("!--") {
        let close = s[i..].find("-->")?;
        return Some(Tag { name: "!--", closing: false, end: i + close + 3 });
    }
    while i < bytes.len() {
        match bytes[i] {
            b'>' => return Some(Tag { name, closing, end: i + 1 }),
            b'<' => return None,
            b'"' | b'\'' => {
                let q = bytes[i];
                i += 1;
                while i < bytes.len() && bytes[i] != q {
                    i += 1;
                }
                i += 1;
            }
            _ => i += 1,
        }
    }
    None
}

fn is_block(name: &str) -> bool {
    matches!(
        name.to_ascii_lowercase().as_str(),
        "p" | "div" | "br" | "hr" | "li" | "ul" | "ol" | "blockquote" | "h1" | "h2" | "h3" | "h4"
            | "h5" | "h6" | "table" | "tr" | "td" | "th" | "pre"
    )
}

/// Decode entities and collapse all whitespace runs to single spaces.
pub fn normalize_text(s: &str) -> String {
    let decoded = html_escape::decode_html_entities(s);
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Returns `(description, code_segments)`.
pub fn split_body(body: &str) -> (String, Vec<String>) {
    let mut text = String::with_capacity(body.len());
    let mut code = Vec::new();
    let mut current_code: Option<String> = None;
    let mut pre_depth = 0usize;
    let mut i = 0;
    let bytes = body.as_bytes();
    while i < bytes.len() {
        if bytes[i] == b'<' {
            if let Some(tag) = tag_at(body, i) {
                let lname = tag.name.to_ascii_lowercase();
                if lname == "pre" {
                    if tag.closing {
                        if pre_depth > 0 {
                            pre_depth -= 1;
                            if pre_depth == 0 {
                                if let Some(raw) = current_code.take() {
                                    let seg = html_escape::decode_html_entities(&raw).into_owned();
                                    let seg = seg.trim_matches('\n').to_string();
                                    if !seg.trim().is_empty() {
                                        code.push(seg);
                                    }
                                }
                                text.push(' ');
                            }
                        }
                    } else {
                        if pre_depth == 0 {
                            current_code = Some(String::new());
                            text.push(' ');
                        }
                        pre_depth += 1;
                    }
                } else if pre_depth == 0 && is_block(&lname) {
                    text.push(' ');
                }
                // Other tags inside <pre> (e.g. <code>) are dropped from code.
                i = tag.end;
                continue;
            }
        }
        let ch_len = body[i..].chars().next().map_or(1, char::len_utf8);
        let chunk = &body[i..i + ch_len];
        match current_code.as_mut() {
            Some(buf) => buf.push_str(chunk),
            None => text.push_str(chunk),
        }
        i += ch_len;
    }
    // Unterminated <pre>: keep what was collected as code.
    if let Some(raw) = current_code.take() {
        let seg = html_escape::decode_html_entities(&raw).into_owned();
        if !seg.trim().is_empty() {
            code.push(seg.trim_matches('\n').to_string());
        }
    }
    (normalize_text(&text), code)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_code_extracted() {
        let (d, c) = split_body("<p>help</p><pre><code>int x;</code></pre>");
        assert_eq!(d, "help");
        assert_eq!(c, vec!["int x;".to_string()]);
    }

    #[test]
    fn inline_code_stays_in_description() {
        let (d, c) = split_body("<p>call <code>foo</code> twice</p>");
        assert_eq!(d, "call foo twice");
        assert!(c.is_empty());
    }

    #[test]
    fn entities_decoded_and_whitespace_collapsed() {
        let (d, c) = split_body("<p>a &amp; b\n\n  x &lt; 5</p><pre class=\"lang-py\"><code>if a &lt; b:\n    pass\n</code></pre>");
        assert_eq!(d, "a & b x < 5");
        assert_eq!(c, vec!["if a < b:\n    pass".to_string()]);
    }

    #[test]
    fn multiple_segments_and_empty_body() {
        let (d, c) = split_body("<pre>one</pre><p>mid</p><pre><code>two</code></pre>");
        assert_eq!(d, "mid");
        assert_eq!(c, vec!["one".to_string(), "two".to_string()]);
        let (d, c) = split_body("");
        assert_eq!(d, "");
        assert!(c.is_empty());
    }

    #[test]
    fn stripping_is_idempotent_on_plain_text() {
        let (d, _) = split_body("<p>Is <b>this</b> fine when x &lt; 5 &amp; y?</p>");
        let (again, code) = split_body(&d);
        assert_eq!(again, d);
        assert!(code.is_empty());
    }
}
