//! Answer normalization shared by answer checking, the monitor and the
//! analyses.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    /// Leading multiple-choice letter, upper-cased.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub letter: Option<char>,
    pub text: String,
}

impl NormalizedAnswer {
    /// Same candidate: letters decide when both sides carry one, otherwise
    /// the normalized texts must match.
    pub fn same_as(&self, other: &NormalizedAnswer) -> bool {
        match (self.letter, other.letter) {
            (Some(a), Some(b)) => a == b,
            _ => self.text == other.text,
        }
    }
}

const EDGE_PUNCT: &[char] = &['.', ',', ';', ':', '!', '?', '"', '\'', '*', '`'];
const CHOICE_LETTERS: std::ops::RangeInclusive<char> = 'A'..='J';

/// Case-folds, collapses whitespace and strips edge punctuation. Inner
/// punctuation such as `t(2;13)(q35;q14)` is kept.
pub fn normalize_text(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .trim_matches(EDGE_PUNCT)
        .trim()
        .to_lowercase()
}

/// Leading choice letter: `D`, `(D) ...`, `D. ...`, `d: ...`, `Option D`.
pub fn choice_letter(raw: &str) -> Option<char> {
    let mut s = raw.trim_start_matches(|c: char| c.is_whitespace() || "([{*\"'".contains(c));
    if s.len() >= 6 && s[..6].eq_ignore_ascii_case("option") {
        s = s[6..].trim_start_matches(|c: char| c.is_whitespace() || "([{".contains(c));
    }
    let mut chars = s.chars();
    let letter = chars.next()?.to_ascii_uppercase();
    if !CHOICE_LETTERS.contains(&letter) {
        return None;
    }
    match chars.next() {
        None => Some(letter),
        Some(c) if ")]}.:,;-*".contains(c) => Some(letter),
        _ => None,
    }
}

pub fn normalize_answer(raw: &str) -> NormalizedAnswer {
    NormalizedAnswer {
        letter: choice_letter(raw),
        text: normalize_text(raw),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn letters() {
        assert_eq!(choice_letter("(D) Gastroduodenal artery"), Some('D'));
        assert_eq!(choice_letter("B: pancreatic duct"), Some('B'));
        assert_eq!(choice_letter(" d. "), Some('D'));
        assert_eq!(choice_letter("Option (C)"), Some('C'));
        assert_eq!(choice_letter("E"), Some('E'));
        assert_eq!(choice_letter("t(2;13)(q35;q14) translocation"), None);
        assert_eq!(choice_letter("A 55-year-old man"), None);
        assert_eq!(choice_letter("a translocation"), None);
        assert_eq!(choice_letter("Z)"), None);
        assert_eq!(choice_letter(""), None);
    }

    #[test]
    fn text_normalization_keeps_inner_punctuation() {
        assert_eq!(
            normalize_text("  t(2;13)(q35;q14)   Translocation. "),
            "t(2;13)(q35;q14) translocation"
        );
    }

    #[test]
    fn equality_prefers_letters() {
        let a = normalize_answer("(D) Gastroduodenal artery");
        assert!(a.same_as(&normalize_answer("D")));
        assert!(!a.same_as(&normalize_answer("B")));
        assert!(normalize_answer("PAX3::FOXO1").same_as(&normalize_answer("pax3::foxo1.")));
    }
}
