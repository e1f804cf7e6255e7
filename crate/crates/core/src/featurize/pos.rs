//! Lexicon-based part-of-speech counting for question text.
//!
//! Three word classes are counted: verbs, personal pronouns, and nouns.
//! Tagging is deliberately lightweight: a closed-class pronoun list, small
//! verb and noun lexicons shipped as versioned data files, and suffix
//! heuristics as the fallback. Every token receives exactly one tag, with
//! noun as the default class, so counts are stable across lexicon versions
//! that only add entries.

use std::collections::HashSet;
use std::sync::OnceLock;

/// Version of the bundled lexicon files. Bump when the data files change so
/// stored feature matrices can be traced to the lexicon that produced them.
pub const POS_LEXICON_VERSION: &str = "v1";

const PRONOUNS_RAW: &str = include_str!("../../data/pos/pronouns.txt");
const VERBS_RAW: &str = include_str!("../../data/pos/verbs.txt");
const NOUNS_RAW: &str = include_str!("../../data/pos/nouns.txt");

fn parse_lexicon(raw: &'static str) -> HashSet<&'static str> {
    raw.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

fn pronouns() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| parse_lexicon(PRONOUNS_RAW))
}

fn verbs() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| parse_lexicon(VERBS_RAW))
}

fn nouns() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| parse_lexicon(NOUNS_RAW))
}

/// Counts of tagged tokens in a piece of text.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PosCounts {
    pub verbs: u64,
    pub pronouns: u64,
    pub nouns: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag {
    Verb,
    Pronoun,
    Noun,
}

/// Tags a single lowercase token. Priority: pronoun list, verb lexicon,
/// noun lexicon, verb suffixes, noun suffixes, then noun as default.
fn tag_token(token: &str) -> Tag {
    if pronouns().contains(token) {
        return Tag::Pronoun;
    }
    if verbs().contains(token) {
        return Tag::Verb;
    }
    if nouns().contains(token) {
        return Tag::Noun;
    }
    if token.ends_with("ing") || token.ends_with("ed") || token.ends_with("ize") {
        return Tag::Verb;
    }
    if token.ends_with("tion") || token.ends_with("ness") || token.ends_with("ment") {
        return Tag::Noun;
    }
    Tag::Noun
}

/// Splits text into lowercase alphanumeric runs that contain at least one
/// alphabetic character. Pure-digit runs carry no part-of-speech signal and
/// are skipped.
fn pos_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && t.chars().any(|c| c.is_alphabetic()))
        .map(|t| t.to_lowercase())
}

/// Counts verbs, personal pronouns, and nouns in `text`.
pub fn count_pos(text: &str) -> PosCounts {
    let mut counts = PosCounts::default();
    for token in pos_tokens(text) {
        match tag_token(&token) {
            Tag::Verb => counts.verbs += 1,
            Tag::Pronoun => counts.pronouns += 1,
            Tag::Noun => counts.nouns += 1,
        }
    }
    counts
}
