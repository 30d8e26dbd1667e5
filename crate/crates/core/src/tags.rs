//! Lenient extraction of `<tag>…</tag>` sections from model output.
//!
//! Tag names match ASCII-case-insensitively and tolerate whitespace before the
//! closing `>`. Anything outside the tags is ignored, so surrounding prose and
//! section reordering are fine.

/// Location of one tagged section inside a haystack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Section<'a> {
    /// Text between the opening and closing tags, untrimmed.
    pub inner: &'a str,
    /// Byte offset of the opening `<`.
    pub start: usize,
    /// Byte offset one past the closing `>`.
    pub end: usize,
}

fn matches_name(hay: &[u8], at: usize, name: &[u8]) -> bool {
    hay.len() >= at + name.len() && hay[at..at + name.len()].eq_ignore_ascii_case(name)
}

/// Returns `(start, end)` of a `<name>` or `</name>` marker starting at or after `from`.
fn find_marker(hay: &[u8], name: &[u8], from: usize, closing: bool) -> Option<(usize, usize)> {
    let prefix_len = if closing { 2 } else { 1 };
    let mut i = from;
    while i < hay.len() {
        if hay[i] == b'<' && (!closing || hay.get(i + 1) == Some(&b'/')) {
            let name_at = i + prefix_len;
            if matches_name(hay, name_at, name) {
                let mut j = name_at + name.len();
                while j < hay.len() && hay[j].is_ascii_whitespace() {
                    j += 1;
                }
                if hay.get(j) == Some(&b'>') {
                    return Some((i, j + 1));
                }
            }
        }
        i += 1;
    }
    None
}

/// First complete `<name>…</name>` section at or after byte offset `from`.
pub fn section_from<'a>(text: &'a str, name: &str, from: usize) -> Option<Section<'a>> {
    let hay = text.as_bytes();
    let name = name.as_bytes();
    let (start, open_end) = find_marker(hay, name, from, false)?;
    let (close_start, end) = find_marker(hay, name, open_end, true)?;
    // Markers begin and end on ASCII bytes, so these are char boundaries.
    Some(Section {
        inner: &text[open_end..close_start],
        start,
        end,
    })
}

/// First complete `<name>…</name>` section.
pub fn section<'a>(text: &'a str, name: &str) -> Option<Section<'a>> {
    section_from(text, name, 0)
}

/// Inner text of the first `<name>` section, trimmed.
pub fn inner<'a>(text: &'a str, name: &str) -> Option<&'a str> {
    section(text, name).map(|s| s.inner.trim())
}

/// Strips one layer of `[...]` and trailing sentence punctuation left over
/// when a model echoes a template placeholder like `[Yes/No]`.
pub fn clean_value(raw: &str) -> &str {
    let mut v = raw.trim();
    if v.starts_with('[') && v.ends_with(']') && v.len() >= 2 {
        v = v[1..v.len() - 1].trim();
    }
    v.trim_end_matches(['.', '!', ',', ';']).trim()
}

/// Trims free text and strips one `[...]` wrapper, keeping punctuation.
pub fn clean_text(raw: &str) -> &str {
    let v = raw.trim();
    if v.starts_with('[') && v.ends_with(']') && v.len() >= 2 {
        v[1..v.len() - 1].trim()
    } else {
        v
    }
}

/// Parses an explicit Yes/No token. Anything else is `None`.
pub fn yes_no(raw: &str) -> Option<bool> {
    let v = clean_value(raw);
    if v.eq_ignore_ascii_case("yes") {
        Some(true)
    } else if v.eq_ignore_ascii_case("no") {
        Some(false)
    } else {
        None
    }
}

/// Parses an explicit True/False token. Anything else is `None`.
pub fn true_false(raw: &str) -> Option<bool> {
    let v = clean_value(raw);
    if v.eq_ignore_ascii_case("true") {
        Some(true)
    } else if v.eq_ignore_ascii_case("false") {
        Some(false)
    } else {
        None
    }
}
