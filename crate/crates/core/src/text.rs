//! Tokenization, sentence segmentation and the deterministic text operators
//! shared by the mock LLM and the evolutionary mutation fallbacks.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;

/// Symbol substituted for masked tokens.
pub const MASK_TOKEN: &str = "\u{2581}";

/// Lowercased alphanumeric runs. Everything else separates tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn token_set(text: &str) -> HashSet<String> {
    tokenize(text).into_iter().collect()
}

/// Sentence spans split on `.`, `!`, `?` and newlines, trimmed, empties dropped.
/// Delimiters are not part of the returned spans, so every span is a verbatim
/// substring of `text`.
pub fn split_sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', '\n'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Sentences with their terminal punctuation kept (`"Led a team."`).
/// Used for resume rewriting where output should read as prose.
pub fn split_sentences_keep_punct(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        match c {
            '\n' => flush(&mut current, &mut out),
            '.' | '!' | '?' => {
                current.push(c);
                flush(&mut current, &mut out);
            }
            _ => current.push(c),
        }
    }
    flush(&mut current, &mut out);
    out
}

fn flush(current: &mut String, out: &mut Vec<String>) {
    let trimmed = current.trim();
    // A bare punctuation run (e.g. "..." tails) carries no content.
    if trimmed.chars().any(|c| c.is_alphanumeric()) {
        out.push(trimmed.to_string());
    } else if !trimmed.is_empty() {
        if let Some(last) = out.last_mut() {
            last.push_str(trimmed);
        }
    }
    current.clear();
}

pub fn join_sentences(sentences: &[String]) -> String {
    sentences.join("\n")
}

/// One sentence per line, each keeping its punctuation. Every operator below
/// produces canonical text, and canonicalize is idempotent.
pub fn canonicalize(text: &str) -> String {
    join_sentences(&split_sentences_keep_punct(text))
}

pub fn shuffle_sentences<R: Rng + ?Sized>(text: &str, rng: &mut R) -> String {
    let mut sentences = split_sentences_keep_punct(text);
    sentences.shuffle(rng);
    join_sentences(&sentences)
}

/// Removes one random sentence; a single-sentence text is returned unchanged.
pub fn drop_sentence<R: Rng + ?Sized>(text: &str, rng: &mut R) -> String {
    let mut sentences = split_sentences_keep_punct(text);
    if sentences.len() > 1 {
        let victim = rng.gen_range(0..sentences.len());
        sentences.remove(victim);
    }
    join_sentences(&sentences)
}

/// Replaces each whitespace-delimited word with [`MASK_TOKEN`] with
/// probability `fraction`.
pub fn mask_tokens<R: Rng + ?Sized>(text: &str, fraction: f64, rng: &mut R) -> String {
    let sentences: Vec<String> = split_sentences_keep_punct(text)
        .into_iter()
        .map(|s| {
            s.split_whitespace()
                .map(|w| if rng.gen_bool(fraction) { MASK_TOKEN } else { w })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    join_sentences(&sentences)
}

/// Deletes one contiguous span covering `fraction` of the words (rounded up,
/// at least one), never emptying the text. Sentence boundaries are kept:
/// sentences emptied by the deletion disappear.
pub fn delete_span<R: Rng + ?Sized>(text: &str, fraction: f64, rng: &mut R) -> String {
    let sentences = split_sentences_keep_punct(text);
    let words: Vec<(usize, &str)> = sentences
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.split_whitespace().map(move |w| (i, w)))
        .collect();
    if words.len() < 2 {
        return join_sentences(&sentences);
    }
    let span = ((words.len() as f64 * fraction).ceil() as usize).clamp(1, words.len() - 1);
    let start = rng.gen_range(0..=words.len() - span);
    let mut rebuilt: Vec<Vec<&str>> = vec![Vec::new(); sentences.len()];
    for (pos, (sentence, word)) in words.iter().enumerate() {
        if pos < start || pos >= start + span {
            rebuilt[*sentence].push(word);
        }
    }
    let out: Vec<String> = rebuilt
        .into_iter()
        .filter(|ws| ws.iter().any(|w| w.chars().any(char::is_alphanumeric)))
        .map(|ws| ws.join(" "))
        .collect();
    join_sentences(&out)
}

const SYNONYMS: &[(&str, &str)] = &[
    ("led", "directed"),
    ("managed", "oversaw"),
    ("built", "developed"),
    ("helped", "assisted"),
    ("used", "utilized"),
    ("made", "created"),
    ("worked", "collaborated"),
    ("improved", "enhanced"),
    ("ran", "operated"),
    ("fixed", "resolved"),
    ("wrote", "authored"),
    ("started", "launched"),
    ("big", "large"),
    ("fast", "rapid"),
    ("good", "strong"),
    ("team", "group"),
    ("job", "role"),
    ("skills", "competencies"),
];

fn synonym(word: &str) -> Option<&'static str> {
    let lower = word.to_lowercase();
    SYNONYMS.iter().find(|(from, _)| *from == lower).map(|(_, to)| *to)
}

/// Swaps words found in a small synonym table, each with probability 1/2.
/// Punctuation attached to a word is preserved.
pub fn substitute_synonyms<R: Rng + ?Sized>(text: &str, rng: &mut R) -> String {
    let sentences: Vec<String> = split_sentences_keep_punct(text)
        .into_iter()
        .map(|s| {
            s.split_whitespace()
                .map(|w| {
                    let core_end = w
                        .char_indices()
                        .rev()
                        .find(|(_, c)| c.is_alphanumeric())
                        .map(|(i, c)| i + c.len_utf8())
                        .unwrap_or(0);
                    let (core, tail) = w.split_at(core_end);
                    match synonym(core) {
                        Some(rep) if rng.gen_bool(0.5) => format!("{rep}{tail}"),
                        _ => w.to_string(),
                    }
                })
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    join_sentences(&sentences)
}

/// Appends a skills sentence listing `keywords` that are not already present
/// as tokens of `text`. At most `limit` keywords are added.
pub fn inject_keywords(text: &str, keywords: &[String], limit: usize) -> String {
    let present = token_set(text);
    let mut seen = HashSet::new();
    let fresh: Vec<&str> = keywords
        .iter()
        .map(String::as_str)
        .filter(|k| !k.is_empty() && !present.contains(&k.to_lowercase()))
        .filter(|k| seen.insert(k.to_lowercase()))
        .take(limit)
        .collect();
    let mut sentences = split_sentences_keep_punct(text);
    if !fresh.is_empty() {
        sentences.push(format!("Additional experience with {}.", fresh.join(", ")));
    }
    join_sentences(&sentences)
}

/// Interleaves the sentences of two texts (a1, b1, a2, b2, ...) and removes
/// exact duplicate sentences, keeping first occurrences.
pub fn interleave_dedup(a: &str, b: &str) -> String {
    let left = split_sentences_keep_punct(a);
    let right = split_sentences_keep_punct(b);
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(left.len() + right.len());
    for i in 0..left.len().max(right.len()) {
        for side in [&left, &right] {
            if let Some(s) = side.get(i) {
                if seen.insert(s.clone()) {
                    out.push(s.clone());
                }
            }
        }
    }
    join_sentences(&out)
}

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "into", "is", "it",
    "of", "on", "or", "our", "that", "the", "their", "this", "to", "we", "with", "you", "your",
    "will", "who", "has", "have", "all", "across",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}
