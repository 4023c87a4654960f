use std::fmt::Write as _;

use serde::Serialize;

use super::encode::RecordFeatures;
use super::record::{Label, NewsRecord};
use crate::error::{Error, Result};
use crate::image::IMAGE_FEATURE_NAMES;
use crate::text::TEXT_FEATURE_NAMES;

/// Five-number summary plus mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile with linear interpolation between order statistics.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len() as f64;
        let mean = s.iter().sum::<f64>() / n;
        let std = if s.len() > 1 { (s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
        Some(Summary {
            count: s.len(),
            mean,
            std,
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureStats {
    pub feature: String,
    pub real: Option<Summary>,
    pub fake: Option<Summary>,
    /// Fake mean minus real mean; absent unless both classes are present.
    pub mean_difference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub records: usize,
    pub real: usize,
    pub fake: usize,
    pub features: Vec<FeatureStats>,
    /// Distinct tokens over total tokens, pooled over each class.
    pub corpus_diversity: ClassDiversity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClassDiversity {
    pub real: Option<f64>,
    pub fake: Option<f64>,
}

fn pooled_diversity<'a>(docs: impl Iterator<Item = &'a [String]>) -> Option<f64> {
    let mut seen = std::collections::HashSet::new();
    let mut total = 0usize;
    for t in docs.flatten() {
        seen.insert(t.as_str());
        total += 1;
    }
    (total > 0).then(|| seen.len() as f64 / total as f64)
}

/// Per-class statistics of every explicit feature. Image features only
/// cover records that have an image.
pub fn corpus_stats(records: &[NewsRecord], features: &[RecordFeatures]) -> Result<StatsReport> {
    if records.is_empty() {
        return Err(Error::Empty("corpus".into()));
    }
    if records.len() != features.len() {
        return Err(Error::shape("corpus stats", records.len(), features.len()));
    }
    let of_class = |label: Label, get: &dyn Fn(&RecordFeatures) -> Option<f64>| -> Option<Summary> {
        let v: Vec<f64> = records.iter().zip(features).filter(|(r, _)| r.label == label).filter_map(|(_, f)| get(f)).collect();
        Summary::of(&v)
    };
    let mut out = Vec::new();
    let mut push = |name: &str, get: &dyn Fn(&RecordFeatures) -> Option<f64>| {
        let real = of_class(Label::Real, get);
        let fake = of_class(Label::Fake, get);
        out.push(FeatureStats {
            feature: name.to_string(),
            real,
            fake,
            mean_difference: real.zip(fake).map(|(r, f)| f.mean - r.mean),
        });
    };
    for (i, name) in TEXT_FEATURE_NAMES.iter().enumerate() {
        push(name, &|f| Some(f.text_explicit[i]));
    }
    for (i, name) in IMAGE_FEATURE_NAMES.iter().enumerate() {
        push(name, &|f| (!f.image.missing).then_some(f.image_explicit[i]));
    }
    let fake = records.iter().filter(|r| r.label == Label::Fake).count();
    let class_tokens = |label: Label| records.iter().zip(features).filter(move |(r, _)| r.label == label).map(|(_, f)| f.tokens.as_slice());
    let corpus_diversity = ClassDiversity {
        real: pooled_diversity(class_tokens(Label::Real)),
        fake: pooled_diversity(class_tokens(Label::Fake)),
    };
    Ok(StatsReport {
        corpus_diversity,
        records: records.len(),
        real: records.len() - fake,
        fake,
        features: out,
    })
}

impl StatsReport {
    /// One JSON object per feature.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for f in &self.features {
            s.push_str(&serde_json::to_string(f)?);
            s.push('\n');
        }
        s.push_str(&serde_json::to_string(&serde_json::json!({ "corpus_lexical_diversity": self.corpus_diversity }))?);
        s.push('\n');
        Ok(s)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("records: {} (real {}, fake {})\n", self.records, self.real, self.fake);
        let _ = writeln!(s, "{:<28} {:>12} {:>12} {:>12} {:>12} {:>12}", "feature", "real mean", "real median", "fake mean", "fake median", "difference");
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        for f in &self.features {
            let _ = writeln!(
                s,
                "{:<28} {:>12} {:>12} {:>12} {:>12} {:>12}",
                f.feature,
                cell(f.real.map(|x| x.mean)),
                cell(f.real.map(|x| x.median)),
                cell(f.fake.map(|x| x.mean)),
                cell(f.fake.map(|x| x.median)),
                cell(f.mean_difference)
            );
        }
        let _ = writeln!(
            s,
            "{:<28} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "corpus_lexical_diversity",
            cell(self.corpus_diversity.real),
            "",
            cell(self.corpus_diversity.fake),
            "",
            ""
        );
        s
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureStats> {
        self.features.iter().find(|f| f.feature == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::encode::extract_features;
    use crate::data::record::ImageSource;
    use crate::text::Lexicons;

    fn rec(id: &str, text: &str, label: Label) -> NewsRecord {
        NewsRecord {
            id: id.into(),
            title: String::new(),
            text: text.into(),
            image: ImageSource::Missing,
            face_count: None,
            label,
        }
    }

    #[test]
    fn two_records_word_counts() {
        let records = vec![rec("a", &"w ".repeat(10), Label::Real), rec("b", &"w ".repeat(20), Label::Real)];
        let feats = extract_features(&records, &Lexicons::builtin(), 8).unwrap();
        let r = corpus_stats(&records, &feats).unwrap();
        let wc = r.feature("word_count").unwrap();
        let s = wc.real.unwrap();
        assert_eq!((s.mean, s.median), (15.0, 15.0));
        assert!(wc.fake.is_none());
        assert!(wc.mean_difference.is_none());
        assert!(r.feature("width_px").unwrap().real.is_none());
    }

    #[test]
    fn hand_computed_summary() {
        // sorted 1 2 4 7 11: q1 at rank 1 -> 2, q3 at rank 3 -> 7
        let s = Summary::of(&[7.0, 1.0, 11.0, 2.0, 4.0]).unwrap();
        assert_eq!((s.min, s.q1, s.median, s.q3, s.max), (1.0, 2.0, 4.0, 7.0, 11.0));
        assert_eq!(s.mean, 5.0);
        assert!((s.std - 16.5f64.sqrt()).abs() < 1e-12);
        // even count interpolates: 1 2 3 4 -> q1 1.75, median 2.5, q3 3.25
        let s = Summary::of(&[4.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn both_classes_give_contrast() {
        let records = vec![rec("a", "one two", Label::Real), rec("b", "one two three four", Label::Fake)];
        let feats = extract_features(&records, &Lexicons::builtin(), 8).unwrap();
        let r = corpus_stats(&records, &feats).unwrap();
        assert_eq!(r.feature("word_count").unwrap().mean_difference, Some(2.0));
        assert_eq!(r.to_jsonl().unwrap().lines().count(), 36);
        assert!(r.to_table().contains("word_count"));
    }

    #[test]
    fn corpus_diversity_pools_each_class() {
        // real: a b a | a c -> 3 distinct of 5; fake: x x -> 1 of 2
        let records = vec![rec("a", "a b a", Label::Real), rec("b", "a c", Label::Real), rec("c", "x x", Label::Fake)];
        let feats = extract_features(&records, &Lexicons::builtin(), 8).unwrap();
        let d = corpus_stats(&records, &feats).unwrap().corpus_diversity;
        assert_eq!((d.real, d.fake), (Some(0.6), Some(0.5)));
        let only_real = corpus_stats(&records[..2], &feats[..2]).unwrap().corpus_diversity;
        assert_eq!(only_real.fake, None);
    }
}
