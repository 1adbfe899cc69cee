//! Recognition accuracy, edit distance and comparison reports.

use crate::error::{Error, Result};
use crate::glyph_data::{Corpus, Vocab};
use crate::losses::shannon_entropy;
use crate::recognizer::Recognizer;

/// Fraction of exact string matches.
pub fn word_accuracy<A: AsRef<str>, B: AsRef<str>>(preds: &[A], labels: &[B]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::contract(
            "metrics_report::word_accuracy",
            format!("{} predictions for {} labels", preds.len(), labels.len()),
        ));
    }
    if preds.is_empty() {
        return Ok(0.0);
    }
    let hits = preds
        .iter()
        .zip(labels)
        .filter(|(p, l)| p.as_ref() == l.as_ref())
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Levenshtein distance over characters.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `1 - sum(edit) / sum(max(len_pred, len_label))`.
pub fn char_accuracy<A: AsRef<str>, B: AsRef<str>>(preds: &[A], labels: &[B]) -> Result<f64> {
    if preds.len() != labels.len() {
        return Err(Error::contract(
            "metrics_report::char_accuracy",
            format!("{} predictions for {} labels", preds.len(), labels.len()),
        ));
    }
    let (mut edits, mut total) = (0usize, 0usize);
    for (p, l) in preds.iter().zip(labels) {
        let (p, l) = (p.as_ref(), l.as_ref());
        edits += edit_distance(p, l);
        total += p.chars().count().max(l.chars().count());
    }
    Ok(if total == 0 {
        1.0
    } else {
        1.0 - edits as f64 / total as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalResult {
    pub word_accuracy: f64,
    pub char_accuracy: f64,
    /// Mean Shannon entropy over every emitted decoder step.
    pub mean_entropy: f64,
    pub samples: usize,
}

const EVAL_CHUNK: usize = 250;

struct ChunkStats {
    preds: Vec<String>,
    entropy_sum: f64,
    steps: usize,
}

fn eval_chunk(model: &Recognizer<f64>, vocab: &Vocab, corpus: &Corpus, range: std::ops::Range<usize>) -> Result<ChunkStats> {
    let images: Vec<&[f64]> = corpus.images[range].iter().map(|i| &i.pixels[..]).collect();
    let mut stats = ChunkStats {
        preds: Vec::with_capacity(images.len()),
        entropy_sum: 0.0,
        steps: 0,
    };
    for (chars, out) in model.infer(&images, corpus.width)? {
        stats.preds.push(vocab.decode(&chars));
        for t in 0..out.len() {
            stats.entropy_sum += shannon_entropy(out.probs.row(t));
        }
        stats.steps += out.len();
    }
    Ok(stats)
}

/// Greedy transcription of a labeled corpus. Work is split into fixed chunks
/// spread over `threads` workers and folded back in chunk order, so results
/// do not depend on the thread count.
pub fn evaluate(
    model: &Recognizer<f64>,
    vocab: &Vocab,
    corpus: &Corpus,
    threads: usize,
) -> Result<EvalResult> {
    const OP: &str = "metrics_report::evaluate";
    if &corpus.vocab != vocab {
        return Err(Error::contract(OP, "corpus vocabulary differs from the model's"));
    }
    if vocab.classes() != model.arch.classes {
        return Err(Error::contract(OP, "vocabulary size differs from the model's class count"));
    }
    let labels: Vec<String> = corpus
        .images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            img.label
                .as_ref()
                .map(|l| vocab.decode(l))
                .ok_or_else(|| Error::contract(OP, format!("image {i} has no label")))
        })
        .collect::<Result<_>>()?;
    let chunks: Vec<std::ops::Range<usize>> = (0..corpus.len())
        .step_by(EVAL_CHUNK)
        .map(|s| s..(s + EVAL_CHUNK).min(corpus.len()))
        .collect();
    let threads = threads.clamp(1, chunks.len().max(1));
    let results: Vec<Result<ChunkStats>> = if threads == 1 {
        chunks
            .iter()
            .map(|r| eval_chunk(model, vocab, corpus, r.clone()))
            .collect()
    } else {
        let mut slots: Vec<Option<Result<ChunkStats>>> = (0..chunks.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..threads)
                .map(|w| {
                    let chunks = &chunks;
                    scope.spawn(move || {
                        (w..chunks.len())
                            .step_by(threads)
                            .map(|c| (c, eval_chunk(model, vocab, corpus, chunks[c].clone())))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for h in handles {
                for (c, r) in h.join().expect("evaluation worker panicked") {
                    slots[c] = Some(r);
                }
            }
        });
        slots.into_iter().map(Option::unwrap).collect()
    };
    let mut preds = Vec::with_capacity(corpus.len());
    let (mut entropy_sum, mut steps) = (0.0, 0usize);
    for r in results {
        let s = r?;
        preds.extend(s.preds);
        entropy_sum += s.entropy_sum;
        steps += s.steps;
    }
    Ok(EvalResult {
        word_accuracy: word_accuracy(&preds, &labels)?,
        char_accuracy: char_accuracy(&preds, &labels)?,
        mean_entropy: if steps == 0 { 0.0 } else { entropy_sum / steps as f64 },
        samples: corpus.len(),
    })
}

/// Rendered comparison of several named evaluations.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub text: String,
    pub csv: String,
}

pub const REPORT_COLUMNS: [&str; 5] = ["name", "word_acc", "char_acc", "mean_entropy", "n"];

/// One row per result, in the order given.
pub fn compare_report(results: &[(String, EvalResult)]) -> Result<Report> {
    if results.is_empty() {
        return Err(Error::contract("metrics_report::compare_report", "no results"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::contract("metrics_report::compare_report", e.to_string());
    w.write_record(REPORT_COLUMNS).map_err(csv_err)?;
    for (name, r) in results {
        w.write_record([
            name.clone(),
            r.word_accuracy.to_string(),
            r.char_accuracy.to_string(),
            r.mean_entropy.to_string(),
            r.samples.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let csv = String::from_utf8(w.into_inner().expect("in-memory writer")).unwrap();

    let name_w = results
        .iter()
        .map(|(n, _)| n.chars().count())
        .max()
        .unwrap()
        .max(4);
    let mut text = format!(
        "{:<name_w$}  {:>8}  {:>8}  {:>12}  {:>6}\n",
        "name", "word_acc", "char_acc", "mean_entropy", "n"
    );
    for (name, r) in results {
        text.push_str(&format!(
            "{:<name_w$}  {:>8.4}  {:>8.4}  {:>12.6}  {:>6}\n",
            name, r.word_accuracy, r.char_accuracy, r.mean_entropy, r.samples
        ));
    }
    Ok(Report { text, csv })
}
