//! Acceptance suite: one line per criterion, nonzero exit on any failure.
//!
//! Criterion 9 runs only when `TICNN_CORPUS` names the real corpus CSV
//! (images resolved against `TICNN_CORPUS_IMAGES` or the CSV's directory).
//! Its full-configuration training step additionally needs
//! `TICNN_CORPUS_TRAIN=1`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ticnn::data::{
    checkpoint_container, corpus_stats, evaluate, extract_features, load_dataset, prepare, synthetic_corpus, train, train_lr_baseline, EncodedExample,
    Encoder, EpochLog, Label, SynthOptions, TrainOptions, Trainer,
};
use ticnn::engine::layers::{LayerSpec, Sequential};
use ticnn::engine::ops::{dropout_apply, Activation, Mode};
use ticnn::engine::{class_probabilities, nll_loss, RmsPropConfig};
use ticnn::image::{extract_image_explicit, heuristic_face_count, resize_bilinear, RgbImage};
use ticnn::model::{predict_label, suite, ModelConfig};
use ticnn::text::{encode_pad, extract_text_explicit, sentiment_scores, tokenize, Lexicons, Vocabulary};
use ticnn::{Model, Tensor};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let reports = match suite::check_all(0, false) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    let failed: Vec<String> = reports.iter().filter(|(_, r)| !r.pass).map(|(n, r)| format!("{n} ({:.2e})", r.max_rel_error)).collect();
    let worst = reports.iter().map(|(_, r)| r.max_rel_error).fold(0.0, f64::max);
    let control = suite::check_all(0, true).map(|r| r.iter().all(|(_, r)| !r.pass)).unwrap_or(false);
    ensure(
        failed.is_empty() && control && elapsed < Duration::from_secs(60),
        format!(
            "{} entries, worst relative error {worst:.2e}, corrupted control rejected: {control}, {:.1}s{}",
            reports.len(),
            elapsed.as_secs_f64(),
            if failed.is_empty() { String::new() } else { format!(", failed: {}", failed.join(", ")) }
        ),
    )
}

/// Random conv/pool stacks: declared and realized shapes against the
/// valid-convolution and floor-pooling size rules.
fn shape_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cases = 1200;
    for case in 0..cases {
        let result = if case % 2 == 0 {
            let (h, w, c) = (rng.random_range(1..12), rng.random_range(1..12), rng.random_range(1..4));
            let (kh, kw) = (rng.random_range(1..5), rng.random_range(1..5));
            let (ph, pw) = (rng.random_range(1..4), rng.random_range(1..4));
            let specs = [
                ("conv", LayerSpec::Conv2D { filters: 2, kernel: (kh, kw), activation: Activation::Relu }),
                ("pool", LayerSpec::MaxPool2D { pool: (ph, pw) }),
            ];
            let expected = (h >= kh && w >= kw)
                .then(|| ((h - kh + 1) / ph, (w - kw + 1) / pw))
                .filter(|&(a, b)| a > 0 && b > 0)
                .map(|(a, b)| vec![a, b, 2]);
            check_stack(&[h, w, c], &specs, expected, &mut rng)
        } else {
            let (n, k) = (rng.random_range(1..30), rng.random_range(1..5));
            let (fh, pool) = (rng.random_range(1..6), rng.random_range(1..4));
            let specs = [
                ("conv", LayerSpec::Conv1D { filters: 3, height: fh, activation: Activation::Relu }),
                ("pool", LayerSpec::MaxPool1D { pool }),
            ];
            let conv_only = [("conv", LayerSpec::Conv1D { filters: 3, height: fh, activation: Activation::Relu })];
            let map_len = (n >= fh).then(|| n - fh + 1);
            if let Err(e) = check_stack(&[n, k], &conv_only, map_len.map(|m| vec![m, 3]), &mut rng) {
                return Outcome::Fail(format!("case {case}: {e}"));
            }
            let expected = map_len.map(|m| m / pool).filter(|&l| l > 0).map(|l| vec![l, 3]);
            check_stack(&[n, k], &specs, expected, &mut rng)
        };
        if let Err(e) = result {
            return Outcome::Fail(format!("case {case}: {e}"));
        }
    }
    Outcome::Pass(format!("{cases} random stacks, zero failures"))
}

fn check_stack(input: &[usize], specs: &[(&str, LayerSpec)], expected: Option<Vec<usize>>, rng: &mut ChaCha8Rng) -> Result<(), String> {
    match (Sequential::<f32>::build("s", input, specs, rng), expected) {
        (Err(_), None) => Ok(()),
        (Ok(net), None) => Err(format!("input {input:?} accepted with output {:?}", net.output_shape())),
        (Err(e), Some(want)) => Err(format!("input {input:?} rejected ({e}), expected {want:?}")),
        (Ok(mut net), Some(want)) => {
            if net.output_shape() != want.as_slice() {
                return Err(format!("declared {:?}, expected {want:?}", net.output_shape()));
            }
            let mut full = vec![2];
            full.extend_from_slice(input);
            let n = full.iter().product();
            let x = Tensor::from_vec(&full, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).map_err(|e| e.to_string())?;
            let y = net.forward(&x, Mode::Eval).map_err(|e| e.to_string())?;
            let mut realized = vec![2];
            realized.extend_from_slice(&want);
            if y.shape() != realized.as_slice() {
                return Err(format!("forward gave {:?}, expected {realized:?}", y.shape()));
            }
            Ok(())
        }
    }
}

fn probability_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_sum, mut worst_nll) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let k = rng.random_range(2..8);
        let scale = rng.random_range(0.1..30.0);
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(-scale..scale)).collect();
        let p = class_probabilities(&scores);
        worst_sum = worst_sum.max((p.iter().sum::<f64>() - 1.0).abs());
        let tag = rng.random_range(0..k);
        let loss = match nll_loss(&scores, tag) {
            Ok(l) => l,
            Err(e) => return Outcome::Fail(e.to_string()),
        };
        worst_nll = worst_nll.max((loss + p[tag].ln()).abs());
    }
    ensure(
        worst_sum <= 1e-6 && worst_nll <= 1e-5,
        format!("1000 score vectors, max |sum - 1| {worst_sum:.1e}, max |loss + ln p| {worst_nll:.1e}"),
    )
}

fn dropout_contract() -> Outcome {
    let trials = 10_000;
    let input = ticnn::engine::Tensor::<f64>::from_vec(&[1, 6], vec![0.3f64, -1.2, 2.0, 0.7, -0.4, 1.5]).expect("shape");
    let mut worst = 0.0f64;
    for p in [0.5, 0.8] {
        let eval = dropout_apply(&input, p, Mode::Eval, 0).expect("eval");
        let mut mean = [0.0f64; 6];
        for seed in 0..trials {
            let out = dropout_apply(&input, p, Mode::Train, seed as u64).expect("train");
            for (m, v) in mean.iter_mut().zip(out.data()) {
                *m += v / trials as f64;
            }
        }
        for (m, e) in mean.iter().zip(eval.data()) {
            worst = worst.max((m - e).abs() / e.abs());
        }
    }
    ensure(worst <= 0.02, format!("{trials} trials at p = 0.5 and 0.8, worst relative gap {:.2}%", worst * 100.0))
}

fn encode_whole(records: &[ticnn::data::NewsRecord], vocab: usize, seq_len: usize) -> (Encoder, Vec<EncodedExample>) {
    let features = extract_features(records, &Lexicons::builtin(), 50).expect("features");
    let all: Vec<usize> = (0..records.len()).collect();
    let labels: Vec<usize> = records.iter().map(|r| r.label.index()).collect();
    let encoder = Encoder::fit(&features, &all, vocab, seq_len).expect("encoder");
    let examples = encoder.encode_all(&features, &labels, &all);
    (encoder, examples)
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let records = synthetic_corpus(32, 5, SynthOptions { token_signal: 0.0, explicit_signal: 0.0, image_signal: 0.0 });
    let (encoder, examples) = encode_whole(&records, 5000, 200);
    let config = ModelConfig { vocab_size: encoder.vocab.len(), seq_len: 200, embed_dim: 50, ..Default::default() };
    let model = Model::build(&config, 1).expect("model");
    let options = TrainOptions { batch_size: 8, max_epochs: 200, seed: 1, ..Default::default() };
    let mut trainer = Trainer::new(model, options).expect("trainer");
    for _ in 0..200 {
        if let Err(e) = trainer.run_epoch(&examples) {
            return Outcome::Fail(e.to_string());
        }
        let m = evaluate(&mut trainer.model, &examples).expect("evaluate");
        if m.accuracy == 1.0 {
            let elapsed = start.elapsed();
            return ensure(
                elapsed < Duration::from_secs(300),
                format!("32 signal-free examples memorized after {} epochs in {:.1}s", trainer.epoch(), elapsed.as_secs_f64()),
            );
        }
    }
    Outcome::Fail("training accuracy below 100% after 200 epochs".into())
}

fn synthetic_end_to_end() -> Outcome {
    let start = Instant::now();
    let records = synthetic_corpus(2000, 11, SynthOptions::default());
    let image_only = records.iter().filter(|r| r.label == Label::Fake && !r.text.contains('!')).count();
    let prepared = prepare(&records, &Lexicons::builtin(), 20_000, 200, 50, 11).expect("prepare");
    let options = TrainOptions { max_epochs: 20, patience: 3, seed: 11, ..Default::default() };
    let config = ModelConfig { vocab_size: prepared.encoder.vocab.len(), seq_len: 200, embed_dim: 50, ..Default::default() };
    let model = Model::build(&config, 11).expect("model");
    let outcome = match train(model, &prepared.train, &prepared.validation, &options, |_| {}) {
        Ok(o) => o,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let pairs: Vec<bool> = outcome.log.windows(2).map(|w| w[1].train_loss <= w[0].train_loss).collect();
    let monotone = pairs.iter().filter(|&&d| d).count() as f64 / pairs.len().max(1) as f64;
    let mut model = outcome.model;
    let cnn = evaluate(&mut model, &prepared.test).expect("evaluate");
    let lr = match train_lr_baseline(&prepared.train, &prepared.validation, &prepared.test, &options) {
        Ok((_, m)) => m,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let elapsed = start.elapsed();
    ensure(
        cnn.f1 >= 0.95 && cnn.f1 > lr.f1 && outcome.log.len() <= 20 && monotone >= 0.8 && elapsed < Duration::from_secs(900),
        format!(
            "test F1 {:.4} after {} epochs vs baseline {:.4} ({image_only} fake articles without explicit cues), train loss non-increasing in {:.0}% of epoch pairs, {:.0}s",
            cnn.f1,
            outcome.log.len(),
            lr.f1,
            monotone * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn strip_seconds(log: &[EpochLog]) -> Vec<String> {
    log.iter()
        .map(|r| serde_json::to_string(&EpochLog { seconds: 0.0, ..r.clone() }).expect("serialize"))
        .collect()
}

fn determinism() -> Outcome {
    let run = || {
        let records = synthetic_corpus(60, 7, SynthOptions::default());
        let prepared = prepare(&records, &Lexicons::builtin(), 400, 24, 50, 7).expect("prepare");
        let config = ModelConfig { vocab_size: prepared.encoder.vocab.len(), seq_len: 24, embed_dim: 6, hidden_dim: 6, ..Default::default() };
        let model = Model::build(&config, 7).expect("model");
        let options = TrainOptions { max_epochs: 3, seed: 7, batch_size: 8, ..Default::default() };
        let out = train(model, &prepared.train, &prepared.validation, &options, |_| {}).expect("train");
        let bytes = checkpoint_container(&out.model, &prepared.encoder).expect("container").to_bytes().expect("bytes");
        (bytes, strip_seconds(&out.log))
    };
    let (a, b) = (run(), run());
    ensure(a == b, format!("checkpoints of {} bytes and {}-line logs identical: {}", a.0.len(), a.1.len(), a == b))
}

fn feature_oracles() -> Outcome {
    let lex = Lexicons::builtin();
    let mut failures = Vec::new();
    let mut expect = |ok: bool, what: &str| {
        if !ok {
            failures.push(what.to_string());
        }
    };
    let toks = |s: &[&str]| s.iter().map(|t| t.to_string()).collect::<Vec<_>>();
    expect(tokenize("Hillary's emails FOUND!") == toks(&["hillary's", "emails", "found"]), "tokenize possessive");
    expect(tokenize("").is_empty(), "tokenize empty");
    expect(tokenize("don't stop-believing") == toks(&["don't", "stop", "believing"]), "tokenize hyphen");

    let docs = vec![toks(&["a", "a", "b"])];
    let vocab = Vocabulary::build(&docs, 4).expect("vocab");
    expect(vocab.get("a") == Some(2) && vocab.get("b") == Some(3), "vocabulary order");
    let tie = Vocabulary::build(&[toks(&["y", "x"])], 4).expect("vocab");
    expect(tie.get("x") == Some(2) && tie.get("y") == Some(3), "vocabulary tie-break");
    expect(encode_pad(&toks(&["a", "b", "a"]), &vocab, 5) == vec![2, 3, 2, 0, 0], "pad");
    expect(encode_pad(&toks(&["q", "r"]), &vocab, 3) == vec![1, 1, 0], "oov");
    let long: Vec<String> = (0..1200).map(|_| "a".to_string()).collect();
    expect(encode_pad(&long, &vocab, 1000) == vec![2; 1000], "truncate");

    let v = extract_text_explicit("", "No, I won't go! Why?", &lex);
    expect(
        v.negation_count == 1.0 && v.exclamation_count == 1.0 && v.question_mark_count == 1.0 && v.first_person_pronoun_count == 1.0 && v.sentence_count == 2.0,
        "fixed-string counts",
    );
    expect(extract_text_explicit("", "", &lex).to_array() == [0.0; 31], "empty vector");
    let hundred: Vec<String> = (0..100).map(|i| format!("w{i}x")).collect();
    expect(extract_text_explicit("", &hundred.join(" "), &lex).lexical_diversity == 1.0, "all-unique diversity");
    let sentiment = {
        let mut l = Lexicons::builtin();
        l.positive = ["good".to_string()].into();
        l.negative = ["bad".to_string()].into();
        sentiment_scores(&toks(&["good", "good", "bad", "x"]), &l)
    };
    expect(sentiment == (0.5, 0.25), "sentiment ratios");

    let gray = resize_bilinear(&RgbImage::filled(100, 100, [128, 128, 128]), 50);
    expect(gray.data.iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-6), "mid-gray");
    let mut src = RgbImage::new(50, 50);
    for (i, v) in src.data.iter_mut().enumerate() {
        *v = (i * 7 % 256) as u8;
    }
    let same = resize_bilinear(&src, 50);
    expect(same.data.iter().zip(&src.data).all(|(a, &b)| *a == b as f32 / 255.0), "identity resize");
    let mut board = RgbImage::new(2, 2);
    board.set_pixel(0, 0, [255, 255, 255]);
    board.set_pixel(1, 1, [255, 255, 255]);
    let up = resize_bilinear(&board, 50);
    let oracle = |y: usize, x: usize| {
        let s = |d: usize| ((d as f64 + 0.5) / 25.0 - 0.5).clamp(0.0, 1.0);
        let (sy, sx) = (s(y), s(x));
        (1.0 - sx) * (1.0 - sy) + sx * sy
    };
    expect([(0, 0), (0, 49), (49, 0), (49, 49), (20, 31)].iter().all(|&(y, x)| (up.at(y, x, 0) as f64 - oracle(y, x)).abs() < 1e-6), "checkerboard");

    let ratio = |w, h| extract_image_explicit((w, h), Some(0.0), || 0.0).map(|v| v.aspect_ratio).unwrap_or(f64::NAN);
    expect((ratio(457, 277) - 457.0 / 277.0).abs() < 1e-12 && format!("{:.4}", ratio(457, 277)) == "1.6498", "457x277");
    expect(format!("{:.3}", ratio(355, 228)) == "1.557", "355x228");
    expect(ratio(64, 64) == 1.0, "square");
    expect(extract_image_explicit((0, 10), None, || 0.0).is_err(), "zero dimension");

    let skin = [224, 172, 140];
    let discs = |centres: &[(f64, f64, f64)]| {
        let mut img = RgbImage::new(50, 50);
        for y in 0..50 {
            for x in 0..50 {
                if centres.iter().any(|&(cx, cy, r)| (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r) {
                    img.set_pixel(x, y, skin);
                }
            }
        }
        heuristic_face_count(&resize_bilinear(&img, 50))
    };
    expect(discs(&[]) == 0.0, "no faces");
    expect(discs(&[(25.0, 25.0, 8.0)]) == 1.0, "one disc");
    expect(discs(&[(12.0, 14.0, 6.0), (37.0, 35.0, 7.0)]) == 2.0, "two discs");
    expect(predict_label(&[0.5f32, 0.5]) == 1, "tie goes to fake");

    ensure(failures.is_empty(), if failures.is_empty() { "text and image fixtures exact".into() } else { format!("failed: {}", failures.join(", ")) })
}

fn corpus_reproduction() -> Outcome {
    let Ok(csv) = std::env::var("TICNN_CORPUS") else {
        return Outcome::Skip("set TICNN_CORPUS to the corpus CSV to run".into());
    };
    let images = std::env::var("TICNN_CORPUS_IMAGES").ok().map(std::path::PathBuf::from);
    let loaded = match load_dataset(&csv, images.as_deref()) {
        Ok(l) => l,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let lex = Lexicons::builtin();
    let features = extract_features(&loaded.records, &lex, 50).expect("features");
    let report = corpus_stats(&loaded.records, &features).expect("stats");
    let real_mean = |name: &str| report.feature(name).and_then(|f| f.real.as_ref()).map(|s| s.mean).unwrap_or(f64::NAN);
    let within = |got: f64, want: f64| (got - want).abs() <= 0.02 * want;
    let checks = [
        ("word_count", real_mean("word_count"), 4360.0),
        ("sentence_count", real_mean("sentence_count"), 84.0),
        ("width_px", real_mean("width_px"), 457.0),
        ("height_px", real_mean("height_px"), 277.0),
    ];
    let mut detail: Vec<String> = checks.iter().map(|(n, g, w)| format!("{n} {g:.1} (target {w})")).collect();
    let mut ok = checks.iter().all(|&(_, g, w)| within(g, w));
    if std::env::var("TICNN_CORPUS_TRAIN").is_ok_and(|v| v == "1") {
        let prepared = prepare(&loaded.records, &lex, 20_000, 1000, 50, 0).expect("prepare");
        let config = ModelConfig { vocab_size: prepared.encoder.vocab.len(), ..Default::default() };
        let options = TrainOptions { optimizer: RmsPropConfig::default(), ..Default::default() };
        match train(Model::build(&config, 0).expect("model"), &prepared.train, &prepared.validation, &options, |_| {}) {
            Ok(mut o) => {
                let m = evaluate(&mut o.model, &prepared.test).expect("evaluate");
                ok &= (m.f1 - 0.921).abs() <= 0.05;
                detail.push(format!("F1 {:.4} (target 0.921)", m.f1));
            }
            Err(e) => return Outcome::Fail(e.to_string()),
        }
    }
    ensure(ok, detail.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 9] = [
        ("gradient correctness", gradients),
        ("shape law", shape_law),
        ("probability and loss identities", probability_identities),
        ("dropout contract", dropout_contract),
        ("overfit sanity", overfit),
        ("synthetic end-to-end", synthetic_end_to_end),
        ("determinism", determinism),
        ("explicit-feature oracles", feature_oracles),
        ("corpus reproduction (optional)", corpus_reproduction),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let number = (i + 1).to_string();
        if !filter.is_empty() && !filter.iter().any(|f| *f == number || name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default();
            Outcome::Fail(format!("panicked: {msg}"))
        });
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {number}: {tag} {name}: {detail}");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
