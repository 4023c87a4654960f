use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Word lists consulted by the explicit text features.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicons {
    pub negations: HashSet<String>,
    pub exclusives: HashSet<String>,
    pub first_person: HashSet<String>,
    pub second_person: HashSet<String>,
    pub third_person: HashSet<String>,
    pub motion_verbs: HashSet<String>,
    pub positive: HashSet<String>,
    pub negative: HashSet<String>,
    pub stopwords: HashSet<String>,
}

const FILES: [&str; 9] = [
    "negations",
    "exclusives",
    "first_person",
    "second_person",
    "third_person",
    "motion_verbs",
    "positive",
    "negative",
    "stopwords",
];

/// Parses the lexicon file format: UTF-8, one token per line, `#` starts a
/// comment, blank lines ignored.
pub fn parse_lexicon(source: &str) -> Result<HashSet<String>> {
    let mut set = HashSet::new();
    for (n, line) in source.lines().enumerate() {
        let word = line.split('#').next().unwrap_or("").trim();
        if word.is_empty() {
            continue;
        }
        if word.chars().any(|c| c.is_uppercase() || c.is_whitespace()) {
            return Err(Error::Data(format!("lexicon line {}: `{word}` must be a single lowercase token", n + 1)));
        }
        set.insert(word.to_string());
    }
    Ok(set)
}

impl Lexicons {
    /// The lexicons shipped with the crate.
    pub fn builtin() -> Self {
        let sources = [
            include_str!("../../data/lexicons/negations.txt"),
            include_str!("../../data/lexicons/exclusives.txt"),
            include_str!("../../data/lexicons/first_person.txt"),
            include_str!("../../data/lexicons/second_person.txt"),
            include_str!("../../data/lexicons/third_person.txt"),
            include_str!("../../data/lexicons/motion_verbs.txt"),
            include_str!("../../data/lexicons/positive.txt"),
            include_str!("../../data/lexicons/negative.txt"),
            include_str!("../../data/lexicons/stopwords.txt"),
        ];
        Self::from_sources(&sources).expect("bundled lexicons are valid")
    }

    /// Loads `<name>.txt` for every category from `dir`.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut sources = Vec::with_capacity(FILES.len());
        for name in FILES {
            sources.push(fs::read_to_string(dir.as_ref().join(format!("{name}.txt")))?);
        }
        let refs: Vec<&str> = sources.iter().map(String::as_str).collect();
        Self::from_sources(&refs)
    }

    fn from_sources(sources: &[&str]) -> Result<Self> {
        let mut sets = sources.iter().map(|s| parse_lexicon(s)).collect::<Result<Vec<_>>>()?.into_iter();
        let mut next = || sets.next().unwrap_or_default();
        let lex = Lexicons {
            negations: next(),
            exclusives: next(),
            first_person: next(),
            second_person: next(),
            third_person: next(),
            motion_verbs: next(),
            positive: next(),
            negative: next(),
            stopwords: next(),
        };
        lex.validate()?;
        Ok(lex)
    }

    pub fn validate(&self) -> Result<()> {
        let family = [
            ("first", &self.first_person),
            ("second", &self.second_person),
            ("third", &self.third_person),
        ];
        for (i, (a, sa)) in family.iter().enumerate() {
            for (b, sb) in &family[i + 1..] {
                if let Some(w) = sa.intersection(sb).next() {
                    return Err(Error::Data(format!("`{w}` appears in both {a}- and {b}-person pronoun lists")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_lexicons_are_valid_and_nonempty() {
        let lex = Lexicons::builtin();
        assert!(lex.negations.contains("no"));
        assert!(lex.exclusives.contains("however"));
        assert!(lex.first_person.contains("i"));
        for set in [&lex.negations, &lex.positive, &lex.negative, &lex.stopwords, &lex.motion_verbs] {
            assert!(set.len() >= 10);
            assert!(set.iter().all(|w| !w.is_empty() && w.to_lowercase() == *w));
        }
    }

    #[test]
    fn parse_skips_comments_and_rejects_uppercase() {
        let set = parse_lexicon("# header\nfoo\n\n bar  # trailing\n").unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.contains("bar"));
        assert!(parse_lexicon("Foo\n").is_err());
    }

    #[test]
    fn overlapping_pronoun_lists_are_rejected() {
        let mut lex = Lexicons::builtin();
        lex.third_person.insert("we".into());
        assert!(lex.validate().is_err());
    }

    #[test]
    fn loads_from_directory() {
        let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/data/lexicons");
        assert_eq!(Lexicons::from_dir(dir).unwrap(), Lexicons::builtin());
    }
}
