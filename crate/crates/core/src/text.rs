//! Character-offset helpers.
//!
//! All offsets in this crate count Unicode scalar values, never bytes.

use serde::{Deserialize, Serialize};

/// Half-open character range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(usize, usize)", into = "(usize, usize)")]
pub struct CharRange {
    pub start: usize,
    pub end: usize,
}

impl CharRange {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains_range(&self, other: &CharRange) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlap(&self, other: &CharRange) -> usize {
        let start = self.start.max(other.start);
        let end = self.end.min(other.end);
        end.saturating_sub(start)
    }

    pub fn shift(&self, offset: usize) -> CharRange {
        CharRange::new(self.start + offset, self.end + offset)
    }
}

impl From<(usize, usize)> for CharRange {
    fn from((start, end): (usize, usize)) -> Self {
        Self { start, end }
    }
}

impl From<CharRange> for (usize, usize) {
    fn from(r: CharRange) -> Self {
        (r.start, r.end)
    }
}

pub fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Byte offset of the `char_idx`-th scalar, or `s.len()` when at/after the end.
fn byte_offset(s: &str, char_idx: usize) -> usize {
    s.char_indices()
        .nth(char_idx)
        .map(|(b, _)| b)
        .unwrap_or(s.len())
}

/// Substring addressed by a character range. Out-of-range ends are clamped.
pub fn char_slice(s: &str, range: CharRange) -> &str {
    let start = byte_offset(s, range.start);
    let end = byte_offset(s, range.end.max(range.start));
    &s[start..end]
}

/// Replace the characters in `range` with `replacement`.
pub fn replace_chars(s: &str, range: CharRange, replacement: &str) -> String {
    let start = byte_offset(s, range.start);
    let end = byte_offset(s, range.end);
    let mut out = String::with_capacity(s.len() + replacement.len());
    out.push_str(&s[..start]);
    out.push_str(replacement);
    out.push_str(&s[end..]);
    out
}

/// Character offset of the first case-insensitive occurrence of `needle`.
///
/// Matching is done on lowercased scalars, so it only reports a hit when
/// lowercasing preserves the scalar count of the compared window.
pub fn find_ci(haystack: &str, needle: &str) -> Option<CharRange> {
    let hay: Vec<char> = haystack.chars().collect();
    let pat: Vec<char> = needle.chars().flat_map(char::to_lowercase).collect();
    if pat.is_empty() || pat.len() > hay.len() {
        return None;
    }
    let lowered: Vec<char> = hay
        .iter()
        .map(|c| {
            let mut l = c.to_lowercase();
            match (l.next(), l.next()) {
                (Some(x), None) => x,
                _ => *c,
            }
        })
        .collect();
    (0..=lowered.len() - pat.len())
        .find(|&i| lowered[i..i + pat.len()] == pat[..])
        .map(|i| CharRange::new(i, i + pat.len()))
}

/// Lowercase and collapse internal whitespace.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// 64-bit FNV-1a; stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
