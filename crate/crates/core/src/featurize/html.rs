//! HTML stripping for post bodies.
//!
//! Bodies arrive as the HTML fragment stored in the dump attribute (already
//! entity-decoded once by the row tokenizer). This splits that fragment into
//! prose and code-element content. Character counts include only decoded
//! text, never the whitespace inserted to keep words from fusing across
//! element boundaries, so `plain_chars`/`code_chars` are stable regardless
//! of markup style.

use crate::ingest::tokenizer::decode_entities;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StrippedBody {
    /// Prose with tags removed; block boundaries become newlines so later
    /// tokenization sees separate words.
    pub plain: String,
    /// Concatenated contents of `<code>` elements.
    pub code: String,
    /// Decoded characters outside code elements.
    pub plain_chars: usize,
    /// Decoded characters inside code elements.
    pub code_chars: usize,
}

/// Tags that end a word in running text. Anything else (b, i, a, span, ...)
/// is treated as inline.
fn is_block_tag(name: &str) -> bool {
    matches!(
        name,
        "p" | "div"
            | "br"
            | "li"
            | "ul"
            | "ol"
            | "pre"
            | "blockquote"
            | "hr"
            | "table"
            | "tr"
            | "td"
            | "th"
            | "h1"
            | "h2"
            | "h3"
            | "h4"
            | "h5"
            | "h6"
    )
}

/// Tag name from the inside of `<...>`, lowercased, leading `/` stripped.
fn tag_name(tag_body: &str) -> (bool, String) {
    let t = tag_body.trim();
    let (closing, t) = match t.strip_prefix('/') {
        Some(rest) => (true, rest),
        None => (false, t),
    };
    let name: String = t
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric())
        .collect::<String>()
        .to_ascii_lowercase();
    (closing, name)
}

pub fn strip_html(body_html: &str) -> StrippedBody {
    let mut out = StrippedBody::default();
    let mut in_code = false;
    let mut rest = body_html;
    loop {
        match rest.find('<') {
            None => {
                push_text(&mut out, rest, in_code);
                break;
            }
            Some(lt) => {
                push_text(&mut out, &rest[..lt], in_code);
                let after = &rest[lt + 1..];
                match after.find('>') {
                    // unterminated tag: drop the remainder, markup is damaged
                    None => break,
                    Some(gt) => {
                        let (closing, name) = tag_name(&after[..gt]);
                        if name == "code" {
                            in_code = !closing;
                        } else if !in_code && is_block_tag(&name) {
                            if !out.plain.ends_with(['\n', ' ']) && !out.plain.is_empty() {
                                out.plain.push('\n');
                            }
                        }
                        rest = &after[gt + 1..];
                    }
                }
            }
        }
    }
    out
}

fn push_text(out: &mut StrippedBody, raw: &str, in_code: bool) {
    if raw.is_empty() {
        return;
    }
    let decoded = decode_entities(raw);
    let n = decoded.chars().count();
    if in_code {
        out.code.push_str(&decoded);
        out.code_chars += n;
    } else {
        out.plain.push_str(&decoded);
        out.plain_chars += n;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_prose_and_code() {
        let s = strip_html("<p>hi</p><code>x=1;</code>");
        assert_eq!(s.plain_chars, 2);
        assert_eq!(s.code_chars, 4);
        assert_eq!(s.code, "x=1;");
        assert_eq!(s.plain.trim(), "hi");
    }

    #[test]
    fn block_tags_separate_words_without_counting() {
        let s = strip_html("<p>end</p><p>start</p>");
        assert_eq!(s.plain_chars, 8);
        let words: Vec<&str> = s.plain.split_whitespace().collect();
        assert_eq!(words, vec!["end", "start"]);
    }

    #[test]
    fn inline_tags_do_not_split_words() {
        let s = strip_html("bo<b>ld</b>er");
        assert_eq!(s.plain.split_whitespace().collect::<Vec<_>>(), vec!["bolder"]);
        assert_eq!(s.plain_chars, 6);
    }

    #[test]
    fn entities_decode_inside_text() {
        let s = strip_html("<p>a &amp; b</p><code>i &lt; 3</code>");
        assert_eq!(s.plain.trim(), "a & b");
        assert_eq!(s.plain_chars, 5);
        assert_eq!(s.code, "i < 3");
        assert_eq!(s.code_chars, 5);
    }

    #[test]
    fn pre_code_block() {
        let s = strip_html("<pre><code>fn main() {}\n</code></pre>trailing");
        assert_eq!(s.code, "fn main() {}\n");
        assert_eq!(s.code_chars, 13);
        assert_eq!(s.plain.trim(), "trailing");
    }

    #[test]
    fn tags_inside_code_are_dropped_but_stay_code() {
        let s = strip_html("<code>a<span>b</span>c</code>");
        assert_eq!(s.code, "abc");
        assert_eq!(s.code_chars, 3);
        assert_eq!(s.plain_chars, 0);
    }

    #[test]
    fn unterminated_tag_drops_tail() {
        let s = strip_html("ok <img src=");
        assert_eq!(s.plain, "ok ");
        assert_eq!(s.plain_chars, 3);
    }

    #[test]
    fn empty_body() {
        assert_eq!(strip_html(""), StrippedBody::default());
    }
}
