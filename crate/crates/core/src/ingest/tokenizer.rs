//! Pull tokenizer for dump XML.
//!
//! Dump files are a flat sequence of self-closing `<row .../>` elements
//! inside one wrapper element, so a tokenizer specialized for that shape
//! keeps peak memory bounded by the largest single row regardless of file
//! size. Non-row markup (declaration, wrapper tags, comments) is skipped.

use std::borrow::Cow;
use std::io::BufRead;

/// One `row` element: its byte offset (of the opening `<`) and decoded
/// attributes in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRow {
    pub byte_offset: u64,
    pub attrs: Vec<(String, String)>,
}

impl RawRow {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_str())
    }
}

/// Structural failure inside one row. Carries the offset of the row start
/// for reproducible triage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizeError {
    pub byte_offset: u64,
    pub reason: String,
}

pub struct RowTokenizer<R> {
    reader: R,
    chunk: Vec<u8>,
    pos: usize,
    len: usize,
    offset: u64,
    done: bool,
}

const CHUNK: usize = 64 * 1024;

impl<R: BufRead> RowTokenizer<R> {
    pub fn new(reader: R) -> Self {
        RowTokenizer {
            reader,
            chunk: vec![0u8; CHUNK],
            pos: 0,
            len: 0,
            offset: 0,
            done: false,
        }
    }

    fn next_byte(&mut self) -> std::io::Result<Option<u8>> {
        if self.pos >= self.len {
            if self.done {
                return Ok(None);
            }
            self.len = self.reader.read(&mut self.chunk)?;
            self.pos = 0;
            if self.len == 0 {
                self.done = true;
                return Ok(None);
            }
        }
        let b = self.chunk[self.pos];
        self.pos += 1;
        self.offset += 1;
        Ok(Some(b))
    }

    /// Byte offset of the next unread byte.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    /// Advance past the next `<`, so a caller can resume after a malformed
    /// row. The `<` itself is left unconsumed for the next scan.
    pub fn resync(&mut self) -> std::io::Result<()> {
        while let Some(b) = self.next_byte()? {
            if b == b'<' {
                // un-consume it
                self.pos -= 1;
                self.offset -= 1;
                return Ok(());
            }
        }
        Ok(())
    }

    /// Next `row` element, or `Ok(None)` at end of stream.
    pub fn next_row(&mut self) -> Result<Option<RawRow>, RowTokenError> {
        loop {
            // scan to the next tag
            let start = loop {
                match self.next_byte().map_err(RowTokenError::Io)? {
                    None => return Ok(None),
                    Some(b'<') => break self.offset - 1,
                    Some(_) => {}
                }
            };
            let mut name = Vec::with_capacity(8);
            let delim = loop {
                match self.next_byte().map_err(RowTokenError::Io)? {
                    None => return Err(self.structural(start, "unterminated tag at end of stream")),
                    Some(b) if b.is_ascii_whitespace() || b == b'>' || b == b'/' => {
                        if b == b'>' || b == b'/' {
                            self.pos -= 1;
                            self.offset -= 1;
                        }
                        break b;
                    }
                    Some(b) => name.push(b),
                }
            };
            if name == b"row" {
                let attrs = self.parse_attrs(start)?;
                return Ok(Some(RawRow { byte_offset: start, attrs }));
            }
            if name.starts_with(b"!--") {
                if delim == b'>' && name.ends_with(b"--") {
                    // comment closed inside the name token, e.g. "<!--x-->"
                    self.skip_to_tag_end(start)?;
                } else {
                    self.skip_comment(start)?;
                }
            } else {
                self.skip_to_tag_end(start)?;
            }
        }
    }

    fn parse_attrs(&mut self, row_start: u64) -> Result<Vec<(String, String)>, RowTokenError> {
        let mut attrs = Vec::with_capacity(16);
        let mut scratch = Vec::with_capacity(64);
        loop {
            let b = loop {
                match self.next_byte().map_err(RowTokenError::Io)? {
                    None => return Err(self.structural(row_start, "unterminated row element")),
                    Some(b) if b.is_ascii_whitespace() => {}
                    Some(b) => break b,
                }
            };
            match b {
                b'/' => {
                    match self.next_byte().map_err(RowTokenError::Io)? {
                        Some(b'>') => return Ok(attrs),
                        _ => return Err(self.structural(row_start, "expected '>' after '/'")),
                    }
                }
                b'>' => return Ok(attrs), // tolerate non-self-closing rows
                first => {
                    scratch.clear();
                    scratch.push(first);
                    // attribute name
                    loop {
                        match self.next_byte().map_err(RowTokenError::Io)? {
                            None => {
                                return Err(self.structural(row_start, "unterminated attribute name"))
                            }
                            Some(b'=') => break,
                            Some(b) if b.is_ascii_whitespace() => {}
                            Some(b) => scratch.push(b),
                        }
                    }
                    let name = String::from_utf8(scratch.clone()).map_err(|_| {
                        self.structural(row_start, "attribute name is not valid UTF-8")
                    })?;
                    // opening quote
                    let quote = loop {
                        match self.next_byte().map_err(RowTokenError::Io)? {
                            None => return Err(self.structural(row_start, "missing attribute value")),
                            Some(b) if b.is_ascii_whitespace() => {}
                            Some(q @ (b'"' | b'\'')) => break q,
                            Some(_) => {
                                return Err(self.structural(row_start, "attribute value not quoted"))
                            }
                        }
                    };
                    scratch.clear();
                    loop {
                        match self.next_byte().map_err(RowTokenError::Io)? {
                            None => {
                                return Err(self.structural(row_start, "unterminated attribute value"))
                            }
                            Some(b) if b == quote => break,
                            Some(b) => scratch.push(b),
                        }
                    }
                    let raw = std::str::from_utf8(&scratch).map_err(|_| {
                        self.structural(row_start, "attribute value is not valid UTF-8")
                    })?;
                    attrs.push((name, decode_entities(raw).into_owned()));
                }
            }
        }
    }

    fn skip_to_tag_end(&mut self, start: u64) -> Result<(), RowTokenError> {
        loop {
            match self.next_byte().map_err(RowTokenError::Io)? {
                None => return Err(self.structural(start, "unterminated tag at end of stream")),
                Some(b'>') => return Ok(()),
                Some(_) => {}
            }
        }
    }

    fn skip_comment(&mut self, start: u64) -> Result<(), RowTokenError> {
        let mut dashes = 0usize;
        loop {
            match self.next_byte().map_err(RowTokenError::Io)? {
                None => return Err(self.structural(start, "unterminated comment")),
                Some(b'-') => dashes += 1,
                Some(b'>') if dashes >= 2 => return Ok(()),
                Some(_) => dashes = 0,
            }
        }
    }

    fn structural(&self, offset: u64, reason: &str) -> RowTokenError {
        RowTokenError::Malformed(TokenizeError {
            byte_offset: offset,
            reason: reason.to_string(),
        })
    }
}

#[derive(Debug)]
pub enum RowTokenError {
    Io(std::io::Error),
    Malformed(TokenizeError),
}

/// Decode the XML entities that occur in dump attribute values: the five
/// named entities plus decimal and hex character references. Anything
/// unrecognized passes through literally.
pub fn decode_entities(s: &str) -> Cow<'_, str> {
    if !s.contains('&') {
        return Cow::Borrowed(s);
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let tail = &rest[amp..];
        match parse_entity(tail) {
            Some((ch, consumed)) => {
                out.push(ch);
                rest = &tail[consumed..];
            }
            None => {
                out.push('&');
                rest = &tail[1..];
            }
        }
    }
    out.push_str(rest);
    Cow::Owned(out)
}

fn parse_entity(s: &str) -> Option<(char, usize)> {
    let window = &s.as_bytes()[..s.len().min(12)];
    let semi = window.iter().position(|&b| b == b';')?;
    let body = &s[1..semi];
    let ch = match body {
        "lt" => '<',
        "gt" => '>',
        "amp" => '&',
        "quot" => '"',
        "apos" => '\'',
        _ => {
            let code = if let Some(hex) = body.strip_prefix("#x").or_else(|| body.strip_prefix("#X"))
            {
                u32::from_str_radix(hex, 16).ok()?
            } else if let Some(dec) = body.strip_prefix('#') {
                dec.parse::<u32>().ok()?
            } else {
                return None;
            };
            char::from_u32(code)?
        }
    };
    Some((ch, semi + 1))
}

/// Encode a string for use inside a double-quoted XML attribute. Control
/// whitespace is written as numeric references so it survives attribute
/// normalization, matching the dump convention.
pub fn encode_entities(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 8);
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#xA;"),
            '\r' => out.push_str("&#xD;"),
            '\t' => out.push_str("&#x9;"),
            c => out.push(c),
        }
    }
    out
}
