//! Render tags embedded in agent answers.
//!
//! Grammar (anything else is literal text):
//!
//! ```text
//! tag  = "<" kind ws+ "murag_id='" id "'" ws* "/>"
//! kind = "FundusRecord" | "FundusCollection"
//! ws   = " " | "\t"
//! id   = one or more chars except ' < > and whitespace
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TagKind {
    FundusRecord,
    FundusCollection,
}

impl TagKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TagKind::FundusRecord => "FundusRecord",
            TagKind::FundusCollection => "FundusCollection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RenderTag {
    pub kind: TagKind,
    pub murag_id: String,
}

impl fmt::Display for RenderTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{} murag_id='{}' />", self.kind.as_str(), self.murag_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Text(String),
    Tag(RenderTag),
}

fn is_ws(c: char) -> bool {
    c == ' ' || c == '\t'
}

fn is_id_char(c: char) -> bool {
    !matches!(c, '\'' | '<' | '>') && !c.is_whitespace()
}

/// Tries to read one tag at the start of `s`; returns it and its byte length.
fn match_tag(s: &str) -> Option<(RenderTag, usize)> {
    let rest = s.strip_prefix('<')?;
    let (kind, rest) = if let Some(r) = rest.strip_prefix("FundusRecord") {
        (TagKind::FundusRecord, r)
    } else if let Some(r) = rest.strip_prefix("FundusCollection") {
        (TagKind::FundusCollection, r)
    } else {
        return None;
    };
    let trimmed = rest.trim_start_matches(is_ws);
    if trimmed.len() == rest.len() {
        return None;
    }
    let rest = trimmed.strip_prefix("murag_id='")?;
    let id_len = rest.find(|c: char| !is_id_char(c)).unwrap_or(rest.len());
    if id_len == 0 {
        return None;
    }
    let id = &rest[..id_len];
    let rest = rest[id_len..].strip_prefix('\'')?;
    let rest = rest.trim_start_matches(is_ws).strip_prefix("/>")?;
    Some((
        RenderTag {
            kind,
            murag_id: id.to_owned(),
        },
        s.len() - rest.len(),
    ))
}

/// Splits markdown into text segments and tags, in order. Adjacent text is
/// merged; empty text segments are omitted.
pub fn parse_segments(markdown: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut text = String::new();
    let mut rest = markdown;
    while let Some(pos) = rest.find('<') {
        text.push_str(&rest[..pos]);
        let candidate = &rest[pos..];
        match match_tag(candidate) {
            Some((tag, len)) => {
                if !text.is_empty() {
                    out.push(Segment::Text(std::mem::take(&mut text)));
                }
                out.push(Segment::Tag(tag));
                rest = &candidate[len..];
            }
            None => {
                text.push('<');
                rest = &candidate[1..];
            }
        }
    }
    text.push_str(rest);
    if !text.is_empty() {
        out.push(Segment::Text(text));
    }
    out
}

/// Returns the text segments and the tags of `markdown`.
pub fn parse_render_tags(markdown: &str) -> (Vec<String>, Vec<RenderTag>) {
    let mut texts = Vec::new();
    let mut tags = Vec::new();
    for segment in parse_segments(markdown) {
        match segment {
            Segment::Text(t) => texts.push(t),
            Segment::Tag(t) => tags.push(t),
        }
    }
    (texts, tags)
}

/// Rebuilds markdown keeping only the tags for which `keep` is true. Kept
/// tags are re-emitted in canonical form.
pub fn retain_tags(markdown: &str, mut keep: impl FnMut(&RenderTag) -> bool) -> (String, Vec<RenderTag>, Vec<RenderTag>) {
    let mut out = String::with_capacity(markdown.len());
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for segment in parse_segments(markdown) {
        match segment {
            Segment::Text(t) => out.push_str(&t),
            Segment::Tag(tag) if keep(&tag) => {
                out.push_str(&tag.to_string());
                kept.push(tag);
            }
            Segment::Tag(tag) => dropped.push(tag),
        }
    }
    (out, kept, dropped)
}
