//! The 31-component explicit text feature vector.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::lexicon::Lexicons;
use super::tokenize::{sentences, tokenize, tokenize_cased};

pub const TEXT_FEATURE_DIM: usize = 31;

pub const TEXT_FEATURE_NAMES: [&str; TEXT_FEATURE_DIM] = [
    "word_count",
    "sentence_count",
    "avg_words_per_sentence",
    "question_mark_count",
    "exclamation_count",
    "capital_letter_count",
    "capital_letter_ratio",
    "all_caps_word_count",
    "negation_count",
    "exclusive_word_count",
    "first_person_pronoun_count",
    "second_person_pronoun_count",
    "third_person_pronoun_count",
    "motion_verb_count",
    "lexical_diversity",
    "positive_sentiment_ratio",
    "negative_sentiment_ratio",
    "has_title",
    "title_word_count",
    "title_capital_ratio",
    "title_question_marks",
    "title_exclamations",
    "avg_word_length",
    "unique_word_count",
    "digit_character_count",
    "punctuation_density",
    "quotation_mark_count",
    "url_count",
    "stopword_ratio",
    "avg_sentence_length_chars",
    "exclamations_per_sentence",
];

/// Indices of the components bounded to `[0, 1]`.
pub const TEXT_RATIO_FEATURES: [usize; 8] = [6, 14, 15, 16, 17, 19, 25, 28];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TextExplicitVector {
    pub word_count: f64,
    pub sentence_count: f64,
    pub avg_words_per_sentence: f64,
    pub question_mark_count: f64,
    pub exclamation_count: f64,
    pub capital_letter_count: f64,
    pub capital_letter_ratio: f64,
    pub all_caps_word_count: f64,
    pub negation_count: f64,
    pub exclusive_word_count: f64,
    pub first_person_pronoun_count: f64,
    pub second_person_pronoun_count: f64,
    pub third_person_pronoun_count: f64,
    pub motion_verb_count: f64,
    pub lexical_diversity: f64,
    pub positive_sentiment_ratio: f64,
    pub negative_sentiment_ratio: f64,
    pub has_title: f64,
    pub title_word_count: f64,
    pub title_capital_ratio: f64,
    pub title_question_marks: f64,
    pub title_exclamations: f64,
    pub avg_word_length: f64,
    pub unique_word_count: f64,
    pub digit_character_count: f64,
    pub punctuation_density: f64,
    pub quotation_mark_count: f64,
    pub url_count: f64,
    pub stopword_ratio: f64,
    pub avg_sentence_length_chars: f64,
    pub exclamations_per_sentence: f64,
}

impl TextExplicitVector {
    /// Components in the order of [`TEXT_FEATURE_NAMES`].
    pub fn to_array(&self) -> [f64; TEXT_FEATURE_DIM] {
        [
            self.word_count,
            self.sentence_count,
            self.avg_words_per_sentence,
            self.question_mark_count,
            self.exclamation_count,
            self.capital_letter_count,
            self.capital_letter_ratio,
            self.all_caps_word_count,
            self.negation_count,
            self.exclusive_word_count,
            self.first_person_pronoun_count,
            self.second_person_pronoun_count,
            self.third_person_pronoun_count,
            self.motion_verb_count,
            self.lexical_diversity,
            self.positive_sentiment_ratio,
            self.negative_sentiment_ratio,
            self.has_title,
            self.title_word_count,
            self.title_capital_ratio,
            self.title_question_marks,
            self.title_exclamations,
            self.avg_word_length,
            self.unique_word_count,
            self.digit_character_count,
            self.punctuation_density,
            self.quotation_mark_count,
            self.url_count,
            self.stopword_ratio,
            self.avg_sentence_length_chars,
            self.exclamations_per_sentence,
        ]
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn count_in(tokens: &[String], set: &HashSet<String>) -> usize {
    tokens.iter().filter(|t| set.contains(t.as_str())).count()
}

fn count_char(text: &str, c: char) -> usize {
    text.chars().filter(|&x| x == c).count()
}

fn capital_ratio(text: &str) -> (usize, f64) {
    let upper = text.chars().filter(|c| c.is_uppercase()).count();
    let alpha = text.chars().filter(|c| c.is_alphabetic()).count();
    (upper, ratio(upper, alpha))
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || matches!(c, '\u{201C}' | '\u{201D}' | '\u{2018}' | '\u{2019}' | '\u{2013}' | '\u{2014}' | '\u{2026}')
}

/// Fractions of tokens found in the positive and negative lexicons.
pub fn sentiment_scores(tokens: &[String], lex: &Lexicons) -> (f64, f64) {
    (
        ratio(count_in(tokens, &lex.positive), tokens.len()),
        ratio(count_in(tokens, &lex.negative), tokens.len()),
    )
}

/// Distinct tokens divided by total tokens; 0 for an empty document.
pub fn type_token_ratio(tokens: &[String]) -> f64 {
    let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    ratio(unique.len(), tokens.len())
}

pub fn extract_text_explicit(title: &str, body: &str, lex: &Lexicons) -> TextExplicitVector {
    let cased = tokenize_cased(body);
    let tokens = tokenize(body);
    let segments = sentences(body);
    let words = tokens.len();
    let sents = segments.len();
    let unique: HashSet<&str> = tokens.iter().map(String::as_str).collect();
    let (capitals, cap_ratio) = capital_ratio(body);
    let exclamations = count_char(body, '!');
    let all_caps = cased
        .iter()
        .filter(|t| {
            let letters: Vec<char> = t.chars().filter(|c| c.is_alphabetic()).collect();
            letters.len() >= 2 && letters.iter().all(|c| c.is_uppercase())
        })
        .count();
    let (pos, neg) = sentiment_scores(&tokens, lex);
    let title_tokens = tokenize(title);
    let (_, title_cap_ratio) = capital_ratio(title);
    let non_ws = body.chars().filter(|c| !c.is_whitespace()).count();
    let punct = body.chars().filter(|&c| is_punctuation(c)).count();
    let quotes = body.chars().filter(|c| matches!(c, '"' | '\u{201C}' | '\u{201D}' | '\u{00AB}' | '\u{00BB}')).count();
    let urls = body
        .split_whitespace()
        .filter(|w| {
            let w = w.trim_start_matches(|c: char| !c.is_alphanumeric());
            let lw = w.to_ascii_lowercase();
            lw.starts_with("http://") || lw.starts_with("https://") || lw.starts_with("www.")
        })
        .count();
    let sentence_chars: usize = segments.iter().map(|s| s.chars().count()).sum();
    let letters_total: usize = tokens.iter().map(|t| t.chars().count()).sum();

    TextExplicitVector {
        word_count: words as f64,
        sentence_count: sents as f64,
        avg_words_per_sentence: ratio(words, sents),
        question_mark_count: count_char(body, '?') as f64,
        exclamation_count: exclamations as f64,
        capital_letter_count: capitals as f64,
        capital_letter_ratio: cap_ratio,
        all_caps_word_count: all_caps as f64,
        negation_count: count_in(&tokens, &lex.negations) as f64,
        exclusive_word_count: count_in(&tokens, &lex.exclusives) as f64,
        first_person_pronoun_count: count_in(&tokens, &lex.first_person) as f64,
        second_person_pronoun_count: count_in(&tokens, &lex.second_person) as f64,
        third_person_pronoun_count: count_in(&tokens, &lex.third_person) as f64,
        motion_verb_count: count_in(&tokens, &lex.motion_verbs) as f64,
        lexical_diversity: ratio(unique.len(), words),
        positive_sentiment_ratio: pos,
        negative_sentiment_ratio: neg,
        has_title: if title.trim().is_empty() { 0.0 } else { 1.0 },
        title_word_count: title_tokens.len() as f64,
        title_capital_ratio: title_cap_ratio,
        title_question_marks: count_char(title, '?') as f64,
        title_exclamations: count_char(title, '!') as f64,
        avg_word_length: ratio(letters_total, words),
        unique_word_count: unique.len() as f64,
        digit_character_count: body.chars().filter(|c| c.is_ascii_digit()).count() as f64,
        punctuation_density: ratio(punct, non_ws),
        quotation_mark_count: quotes as f64,
        url_count: urls as f64,
        stopword_ratio: ratio(count_in(&tokens, &lex.stopwords), words),
        avg_sentence_length_chars: ratio(sentence_chars, sents),
        exclamations_per_sentence: ratio(exclamations, sents),
    }
}
