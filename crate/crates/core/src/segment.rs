//! The one sentence segmenter used by filtering, injection, pairing and detection.

use crate::text::{char_slice, CharRange};

const TERMINATORS: &[char] = &['.', '!', '?', '…'];
const CLOSERS: &[char] = &['"', '\'', ')', ']', '”', '’', '»'];

/// Lowercased words (without the trailing period) that never end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "e.g", "i.e", "mr", "mrs", "ms", "dr", "prof", "sr", "jr", "vs", "approx", "no", "st", "ca",
    "cf", "u.s", "fig",
];

/// Rule-based sentence segmenter.
///
/// Boundaries fall after a cluster of terminal punctuation (plus closing
/// quotes/brackets) that is followed by whitespace and a character that is
/// not lowercase, and at every line break. Ranges exclude surrounding
/// whitespace.
#[derive(Debug, Clone)]
pub struct Segmenter {
    abbreviations: Vec<String>,
}

impl Default for Segmenter {
    fn default() -> Self {
        Self {
            abbreviations: ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl Segmenter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn segment(&self, text: &str) -> Vec<CharRange> {
        let chars: Vec<char> = text.chars().collect();
        let n = chars.len();
        let mut ranges = Vec::new();
        let mut start: Option<usize> = None;
        let mut last_non_ws = 0;
        let mut i = 0;

        while i < n {
            let c = chars[i];
            if c == '\n' || c == '\r' {
                if let Some(s) = start.take() {
                    ranges.push(CharRange::new(s, last_non_ws + 1));
                }
                i += 1;
                continue;
            }
            if c.is_whitespace() {
                i += 1;
                continue;
            }
            if start.is_none() {
                start = Some(i);
            }
            last_non_ws = i;

            if TERMINATORS.contains(&c) {
                let mut j = i + 1;
                while j < n && (TERMINATORS.contains(&chars[j]) || CLOSERS.contains(&chars[j])) {
                    j += 1;
                }
                let end = j;
                let at_end = j >= n;
                let followed_by_space = !at_end && chars[j].is_whitespace();
                if at_end || followed_by_space {
                    let next = chars[j..].iter().find(|ch| !ch.is_whitespace() || **ch == '\n');
                    let continues_lowercase = matches!(next, Some(ch) if ch.is_lowercase());
                    let abbreviation = c == '.' && end == i + 1 && self.is_abbreviation(&chars, i);
                    if at_end || !(continues_lowercase || abbreviation) {
                        let s = start.take().unwrap_or(i);
                        ranges.push(CharRange::new(s, end));
                        last_non_ws = end - 1;
                        i = end;
                        continue;
                    }
                }
                last_non_ws = end - 1;
                i = end;
                continue;
            }
            i += 1;
        }
        if let Some(s) = start {
            ranges.push(CharRange::new(s, last_non_ws + 1));
        }
        ranges
    }

    /// Segment and return the sentence strings.
    pub fn sentences<'a>(&self, text: &'a str) -> Vec<&'a str> {
        self.segment(text)
            .into_iter()
            .map(|r| char_slice(text, r))
            .collect()
    }

    pub fn count(&self, text: &str) -> usize {
        self.segment(text).len()
    }

    fn is_abbreviation(&self, chars: &[char], period: usize) -> bool {
        let mut k = period;
        while k > 0 && !chars[k - 1].is_whitespace() {
            k -= 1;
        }
        let word: String = chars[k..period]
            .iter()
            .flat_map(|c| c.to_lowercase())
            .collect();
        let word = word.trim_start_matches(|c: char| !c.is_alphanumeric());
        self.abbreviations.iter().any(|a| a == word)
    }
}

/// Segment with the default shared rules.
pub fn segment(text: &str) -> Vec<CharRange> {
    Segmenter::default().segment(text)
}
