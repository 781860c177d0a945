//! Character-level text utilities shared by answer validation and span metrics.
//!
//! All offsets are counted in Unicode scalar values (`char`s), never bytes.
//! A span is searched in the original text first and then in two normalized
//! variants of it: one with whitespace runs collapsed, one with parenthesized
//! text removed (and whitespace collapsed afterwards). Each variant keeps a map
//! from its characters back to the original, so a match found in a variant
//! still resolves to an interval of the original text.

use serde::{Deserialize, Serialize};

/// Which rung of the normalization ladder produced a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchRoute {
    Exact,
    Whitespace,
    Brackets,
}

/// A located interval `[start, end)` in the original text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Located {
    pub start: usize,
    pub end: usize,
    pub route: MatchRoute,
    pub case_folded: bool,
}

/// A transformed view of a text with a back-map to original char indices.
#[derive(Debug, Clone)]
struct View {
    chars: Vec<char>,
    origin: Vec<usize>,
}

impl View {
    fn identity(text: &[char]) -> Self {
        View {
            chars: text.to_vec(),
            origin: (0..text.len()).collect(),
        }
    }

    fn collapse_whitespace(&self) -> Self {
        let mut out = View {
            chars: Vec::with_capacity(self.chars.len()),
            origin: Vec::with_capacity(self.chars.len()),
        };
        let mut in_run = false;
        for (c, o) in self.chars.iter().zip(&self.origin) {
            if c.is_whitespace() {
                if !in_run {
                    out.chars.push(' ');
                    out.origin.push(*o);
                }
                in_run = true;
            } else {
                out.chars.push(*c);
                out.origin.push(*o);
                in_run = false;
            }
        }
        out
    }

    /// Drops every balanced `( ... )` group, parentheses included. An
    /// unmatched `(` is kept verbatim.
    fn remove_parenthesized(&self) -> Self {
        let mut keep = vec![true; self.chars.len()];
        let mut open: Vec<usize> = Vec::new();
        for (i, c) in self.chars.iter().enumerate() {
            match c {
                '(' => open.push(i),
                ')' => {
                    if let Some(start) = open.pop() {
                        if open.is_empty() {
                            keep[start..=i].iter_mut().for_each(|k| *k = false);
                        }
                    }
                }
                _ => {}
            }
        }
        let mut out = View {
            chars: Vec::new(),
            origin: Vec::new(),
        };
        for ((&c, &o), &k) in self.chars.iter().zip(&self.origin).zip(&keep) {
            if k {
                out.chars.push(c);
                out.origin.push(o);
            }
        }
        out
    }

    fn case_folded(&self) -> Self {
        View {
            chars: self.chars.iter().map(|c| fold_char(*c)).collect(),
            origin: self.origin.clone(),
        }
    }

    /// Original-text interval for the view range `[from, from + len)`.
    fn original_interval(&self, from: usize, len: usize) -> (usize, usize) {
        (self.origin[from], self.origin[from + len - 1] + 1)
    }
}

/// One-to-one lowercase mapping; characters whose lowercase form expands to
/// several chars are left unchanged so offsets stay aligned.
fn fold_char(c: char) -> char {
    let mut lower = c.to_lowercase();
    match (lower.next(), lower.next()) {
        (Some(l), None) => l,
        _ => c,
    }
}

fn collapse(text: &str) -> Vec<char> {
    let chars: Vec<char> = text.trim().chars().collect();
    View::identity(&chars).collapse_whitespace().chars
}

fn occurrences<'a>(hay: &'a [char], needle: &'a [char]) -> impl Iterator<Item = usize> + 'a {
    let n = needle.len();
    let last = if n == 0 || n > hay.len() {
        0
    } else {
        hay.len() - n + 1
    };
    (0..last).filter(move |&i| hay[i..i + n] == *needle)
}

/// The ladder of (route, haystack view, needle) triples in search order.
fn ladder(haystack: &str, needle: &str) -> Vec<(MatchRoute, bool, View, Vec<char>)> {
    let hay: Vec<char> = haystack.chars().collect();
    let raw_needle: Vec<char> = needle.chars().collect();
    let collapsed_needle = collapse(needle);

    let exact = View::identity(&hay);
    let whitespace = exact.collapse_whitespace();
    let brackets = exact.remove_parenthesized().collapse_whitespace();

    let mut rungs = vec![
        (MatchRoute::Exact, false, exact, raw_needle),
        (
            MatchRoute::Whitespace,
            false,
            whitespace,
            collapsed_needle.clone(),
        ),
        (MatchRoute::Brackets, false, brackets, collapsed_needle),
    ];
    let folded: Vec<_> = rungs
        .iter()
        .map(|(route, _, view, needle)| {
            (
                *route,
                true,
                view.case_folded(),
                needle.iter().map(|c| fold_char(*c)).collect(),
            )
        })
        .collect();
    rungs.extend(folded);
    rungs
}

/// Finds `needle` in `haystack` using the normalization ladder: exact, then
/// whitespace-collapsed, then parentheses-removed; then the same three
/// case-insensitively. Returns the earliest occurrence on the first rung
/// that matches.
pub fn locate(needle: &str, haystack: &str) -> Option<Located> {
    if needle.trim().is_empty() {
        return None;
    }
    for (route, case_folded, view, pattern) in ladder(haystack, needle) {
        if let Some(i) = occurrences(&view.chars, &pattern).next() {
            let (start, end) = view.original_interval(i, pattern.len());
            return Some(Located {
                start,
                end,
                route,
                case_folded,
            });
        }
    }
    None
}

/// Like [`locate`] but only accepts an occurrence that begins at original
/// char offset `start`.
pub fn locate_at(needle: &str, haystack: &str, start: usize) -> Option<Located> {
    if needle.trim().is_empty() {
        return None;
    }
    for (route, case_folded, view, pattern) in ladder(haystack, needle) {
        let hit = occurrences(&view.chars, &pattern).find(|&i| view.origin[i] == start);
        if let Some(i) = hit {
            let (start, end) = view.original_interval(i, pattern.len());
            return Some(Located {
                start,
                end,
                route,
                case_folded,
            });
        }
    }
    None
}

/// Number of chars in `text`.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Substring by char offsets `[start, end)`. Out-of-range bounds are clamped.
pub fn char_slice(text: &str, start: usize, end: usize) -> String {
    text.chars()
        .skip(start)
        .take(end.saturating_sub(start))
        .collect()
}

/// Whitespace-delimited token count.
pub fn whitespace_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Char offset at which the `index`-th whitespace token of `text` begins.
pub fn token_start_offset(text: &str, index: usize) -> Option<usize> {
    let mut in_token = false;
    let mut seen = 0usize;
    for (pos, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            in_token = false;
        } else if !in_token {
            if seen == index {
                return Some(pos);
            }
            seen += 1;
            in_token = true;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_reports_char_offsets() {
        let s = "Virginia Woolf spent summers at Talland House.";
        let loc = locate("Talland House", s).unwrap();
        assert_eq!((loc.start, loc.end), (32, 45));
        assert_eq!(loc.route, MatchRoute::Exact);
        assert_eq!(char_slice(s, loc.start, loc.end), "Talland House");
    }

    #[test]
    fn offsets_count_scalar_values_not_bytes() {
        let s = "Café Müller opened in 1897.";
        let loc = locate("in 1897", s).unwrap();
        assert_eq!(loc.start, 19);
        assert_eq!(char_slice(s, loc.start, loc.end), "in 1897");
    }

    #[test]
    fn whitespace_collapse_maps_back_to_original() {
        let s = "xx a  b yy";
        let loc = locate("a b", s).unwrap();
        assert_eq!(loc.route, MatchRoute::Whitespace);
        assert_eq!((loc.start, loc.end), (3, 7));
        assert_eq!(char_slice(s, loc.start, loc.end), "a  b");
    }

    #[test]
    fn parenthesized_text_removed() {
        let s = "Woolf (born Adeline Virginia Stephen) was a writer.";
        let loc = locate("Woolf was a writer", s).unwrap();
        assert_eq!(loc.route, MatchRoute::Brackets);
        assert_eq!(loc.start, 0);
        assert_eq!(
            char_slice(s, loc.start, loc.end),
            "Woolf (born Adeline Virginia Stephen) was a writer"
        );
    }

    #[test]
    fn nested_parentheses_removed_as_one_group() {
        let s = "A (b (c) d) e";
        let loc = locate("A e", s).unwrap();
        assert_eq!((loc.start, loc.end), (0, 13));
    }

    #[test]
    fn unmatched_paren_is_kept() {
        let s = "A (b c";
        assert_eq!(locate("(b c", s).unwrap().route, MatchRoute::Exact);
    }

    #[test]
    fn case_fallback_only_after_sensitive_rungs() {
        let s = "the house was sold. The house burned.";
        let loc = locate("The house", s).unwrap();
        assert_eq!(loc.start, 20);
        assert!(!loc.case_folded);
        let loc = locate("THE HOUSE WAS", s).unwrap();
        assert!(loc.case_folded);
        assert_eq!(loc.start, 0);
    }

    #[test]
    fn earliest_occurrence_wins() {
        assert_eq!(locate("ab", "xxabyyab").unwrap().start, 2);
    }

    #[test]
    fn absent_and_empty_needles() {
        assert!(locate("zzz", "abc").is_none());
        assert!(locate("   ", "abc").is_none());
        assert!(locate("abcd", "abc").is_none());
    }

    #[test]
    fn locate_at_requires_start() {
        let s = "ab ab";
        assert_eq!(locate_at("ab", s, 3).unwrap().start, 3);
        assert!(locate_at("ab", s, 1).is_none());
    }

    #[test]
    fn token_offsets() {
        let s = "  one two   three";
        assert_eq!(token_start_offset(s, 0), Some(2));
        assert_eq!(token_start_offset(s, 2), Some(12));
        assert_eq!(token_start_offset(s, 3), None);
        assert_eq!(whitespace_tokens(s), 3);
    }
}
