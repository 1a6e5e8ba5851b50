//! Tokenization and lexical similarity helpers shared by retrieval, auditing
//! and transcript scoring.

use std::collections::{BTreeMap, BTreeSet};

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "but", "if", "of", "to", "in", "on", "at", "by", "for", "with",
    "from", "about", "into", "over", "under", "as", "is", "are", "was", "were", "be", "been",
    "being", "am", "do", "does", "did", "done", "have", "has", "had", "having", "i", "me", "my",
    "myself", "you", "your", "yours", "yourself", "we", "our", "they", "them", "their", "he",
    "she", "it", "its", "this", "that", "these", "those", "what", "which", "who", "whom", "when",
    "where", "why", "how", "any", "some", "can", "could", "would", "should", "will", "shall",
    "may", "might", "must", "much", "many", "more", "most", "very", "so", "than", "too", "just",
    "there", "here", "then", "also", "up", "down", "out", "off", "again", "ever", "during",
    "since", "until", "while", "please", "tell", "us", "let",
];

/// Lowercased alphanumeric word tokens, in order.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.contains(&word)
}

/// Light suffix stripping; enough to conflate plurals and simple verb forms.
pub fn stem(word: &str) -> String {
    let n = word.chars().count();
    if n > 4 && word.ends_with("ies") {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if n > 5 && word.ends_with("ing") {
        return word[..word.len() - 3].to_string();
    }
    if n > 4 && word.ends_with("ed") {
        return word[..word.len() - 2].to_string();
    }
    if n > 3 && word.ends_with('s') && !word.ends_with("ss") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

/// Stemmed content words (stopwords removed).
pub fn content_words(text: &str) -> BTreeSet<String> {
    words(text)
        .into_iter()
        .filter(|w| !is_stopword(w))
        .map(|w| stem(&w))
        .collect()
}

/// Fraction of `target` covered by `probe`. Empty targets cover nothing.
pub fn coverage(probe: &BTreeSet<String>, target: &BTreeSet<String>) -> f64 {
    if target.is_empty() {
        return 0.0;
    }
    let hits = target.iter().filter(|w| probe.contains(*w)).count();
    hits as f64 / target.len() as f64
}

/// Term-frequency vector over case-folded word tokens.
pub fn term_frequencies(text: &str) -> BTreeMap<String, u32> {
    let mut tf = BTreeMap::new();
    for w in words(text) {
        *tf.entry(w).or_insert(0) += 1;
    }
    tf
}

pub fn cosine(a: &BTreeMap<String, u32>, b: &BTreeMap<String, u32>) -> f64 {
    let dot: f64 = a
        .iter()
        .filter_map(|(w, x)| b.get(w).map(|y| f64::from(*x) * f64::from(*y)))
        .sum();
    if dot == 0.0 {
        return 0.0;
    }
    let na: f64 = a.values().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.values().map(|x| f64::from(*x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// Position of `phrase` as a contiguous run of whole words inside `haystack`.
pub fn find_phrase(haystack: &[String], phrase: &[String]) -> Option<usize> {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return None;
    }
    (0..=haystack.len() - phrase.len()).find(|&i| haystack[i..i + phrase.len()] == *phrase)
}
