//! Synthetic corpus with planted class signals in three places:
//!
//! - image: a red patch for fake articles and a blue one for real articles,
//!   always present;
//! - tokens: class keywords, present with probability one half;
//! - explicit text features: exclamation marks and ALL-CAPS words in fake
//!   articles, present with probability one half.
//!
//! A model that sees only explicit text features therefore cannot separate
//! the classes, while one that sees the image can.

use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::{ImageSource, Label, NewsRecord};
use crate::image::RgbImage;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const FAKE_KEYWORDS: [&str; 3] = ["zorblax", "quizzit", "flumox"];
const REAL_KEYWORDS: [&str; 3] = ["vexhold", "grimsby", "throck"];
const SHOUTS: [&str; 3] = ["SHOCKING", "UNBELIEVABLE", "EXPOSED"];

#[derive(Clone, Copy, Debug)]
pub struct SynthOptions {
    pub token_signal: f64,
    pub explicit_signal: f64,
    pub image_signal: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            token_signal: 0.5,
            explicit_signal: 0.5,
            image_signal: 1.0,
        }
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push(*CONSONANTS.choose(rng).unwrap() as char);
        w.push(*VOWELS.choose(rng).unwrap() as char);
    }
    w
}

fn sentence(rng: &mut ChaCha8Rng, extra: &[String], end: &str) -> String {
    let len = rng.random_range(5..=10);
    let mut words: Vec<String> = (0..len).map(|_| pseudo_word(rng)).collect();
    for e in extra {
        let at = rng.random_range(0..=words.len());
        words.insert(at, e.clone());
    }
    let mut s = words.join(" ");
    if let Some(c) = s.get_mut(0..1) {
        c.make_ascii_uppercase();
    }
    s + end
}

fn image(rng: &mut ChaCha8Rng, colour: Option<[u8; 3]>) -> RgbImage {
    let (w, h) = (rng.random_range(40..=72), rng.random_range(32..=60));
    let mut img = RgbImage::new(w, h);
    for px in img.data.chunks_exact_mut(3) {
        let base: u8 = rng.random_range(70..=130);
        px.copy_from_slice(&[base, base, base.saturating_add(rng.random_range(0..10))]);
    }
    if let Some(c) = colour {
        let (pw, ph) = (w / 2, h / 2);
        let (x0, y0) = (rng.random_range(0..=w - pw), rng.random_range(0..=h - ph));
        for y in y0..y0 + ph {
            for x in x0..x0 + pw {
                img.set_pixel(x, y, c);
            }
        }
    }
    img
}

/// `n` records, alternating fake and real, fully determined by `seed`.
pub fn synthetic_corpus(n: usize, seed: u64, options: SynthOptions) -> Vec<NewsRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Fake } else { Label::Real };
            let fake = label == Label::Fake;
            let keywords = if fake { &FAKE_KEYWORDS } else { &REAL_KEYWORDS };
            let shout = fake && rng.random_bool(options.explicit_signal);
            let tokens = rng.random_bool(options.token_signal);
            let sentences = rng.random_range(3..=6);
            let body: Vec<String> = (0..sentences)
                .map(|_| {
                    let mut extra = Vec::new();
                    if tokens {
                        extra.push(keywords.choose(&mut rng).unwrap().to_string());
                    }
                    if shout {
                        extra.push(SHOUTS.choose(&mut rng).unwrap().to_string());
                    }
                    let end = if shout { "!!" } else { "." };
                    sentence(&mut rng, &extra, end)
                })
                .collect();
            let title_words: Vec<String> = (0..rng.random_range(2..=5)).map(|_| pseudo_word(&mut rng)).collect();
            let colour = rng.random_bool(options.image_signal).then_some(if fake { [210, 30, 30] } else { [30, 50, 210] });
            NewsRecord {
                id: format!("s{i:05}"),
                title: title_words.join(" "),
                text: body.join(" "),
                image: ImageSource::InMemory(Arc::new(image(&mut rng, colour))),
                face_count: None,
                label,
            }
        })
        .collect()
}
