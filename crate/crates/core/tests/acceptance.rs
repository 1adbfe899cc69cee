//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. The A5-A8 experiments share one generated data set and
//! one pre-trained checkpoint.

use std::time::{Duration, Instant};

use rand::Rng;
use smile::engine::{Tape, Tensor};
use smile::glyph_data::{Corpus, Preset, PresetCorpora};
use smile::losses::{step_entropy, EntropyVariant};
use smile::metrics::{evaluate, EvalResult};
use smile::self_paced::{quota, select, PacingSchedule, PoolEntry, PredictionPool};
use smile::trainer::*;
use smile::Error;

const DATA_SEED: u64 = 7;
const SEEDS: [u64; 3] = [1, 2, 3];

/// Adaptation settings used by A6-A8, chosen on the first 1000 images of the
/// labeled target split (never the test split).
const ADAPT_LR: f64 = 1e-4;
const ADAPT_STEPS: u64 = 2000;
const ADAPT_BATCH_TARGET: usize = 32;

struct Outcome {
    pass: bool,
    detail: String,
}

fn harness_error(detail: impl Into<String>) -> Error {
    Error::Contract {
        op: "acceptance",
        detail: detail.into(),
    }
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(id: &str, title: &str, elapsed: Duration, r: smile::Result<Outcome>) -> bool {
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!(
        "{id} {} {title}: {detail} [{:.1}s]",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn a1() -> smile::Result<Outcome> {
    let start = Instant::now();
    let results = smile::fd_suite::run_suite(1)?;
    let worst = results
        .iter()
        .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
        .unwrap();
    let failed: Vec<&str> = results.iter().filter(|r| !r.passes()).map(|r| r.name.as_str()).collect();
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        failed.is_empty() && secs < 60.0,
        format!(
            "{} checks, worst {} at {:.2e} (tolerance 1e-4), failed {:?}, {secs:.1}s of 60s",
            results.len(),
            worst.name,
            worst.report.max_rel_error,
            failed
        ),
    ))
}

fn random_row(r: &mut impl Rng, k: usize) -> Vec<f64> {
    let temp = [0.1, 1.0, 10.0][r.gen_range(0..3)];
    let mut w: Vec<f64> = (0..k)
        .map(|_| if r.gen_bool(0.1) { 0.0 } else { (r.gen_range(-1.0f64..1.0) * temp).exp() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[0] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

fn shannon_rows(rows: &[Vec<f64>]) -> smile::Result<Vec<f64>> {
    let k = rows[0].len();
    let mut tape = Tape::<f64>::new();
    let p = tape.constant(Tensor::matrix(rows.len(), k, rows.concat())?);
    let h = step_entropy(&mut tape, p, EntropyVariant::Shannon)?;
    Ok(tape.value(h).data().to_vec())
}

fn a2() -> smile::Result<Outcome> {
    let mut r = smile::rng::stream(2024, 0);
    let ks = [5usize, 15, 30];
    let mut violations = 0;
    let mut checked = 0;
    for (i, &k) in ks.iter().enumerate() {
        let n = if i == 0 { 3334 } else { 3333 };
        let rows: Vec<Vec<f64>> = (0..n).map(|_| random_row(&mut r, k)).collect();
        let ln_k = (k as f64).ln();
        for h in shannon_rows(&rows)? {
            checked += 1;
            if !(h >= 0.0 && h <= ln_k) {
                violations += 1;
            }
        }
    }
    let mut extreme_err: f64 = 0.0;
    for &k in &ks {
        let mut one_hot = vec![0.0; k];
        one_hot[1] = 1.0;
        let h = shannon_rows(&[vec![1.0 / k as f64; k], one_hot])?;
        extreme_err = extreme_err.max((h[0] - (k as f64).ln()).abs()).max(h[1].abs());
    }
    let mut decreased = 0;
    for i in 0..100 {
        let k = ks[i % 3];
        let z: Vec<f64> = (0..k).map(|_| r.gen_range(-2.0..2.0)).collect();
        let entropy = |z: &[f64]| -> smile::Result<(f64, Vec<f64>)> {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::matrix(1, k, z.to_vec())?);
            let p = tape.softmax(x)?;
            let h = step_entropy(&mut tape, p, EntropyVariant::Shannon)?;
            let h = tape.sum(h)?;
            tape.backward(h)?;
            Ok((tape.item(h), tape.grad(x).unwrap().to_vec()))
        };
        let (before, g) = entropy(&z)?;
        let stepped: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a - 0.05 * b).collect();
        if entropy(&stepped)?.0 < before {
            decreased += 1;
        }
    }
    Ok(outcome(
        violations == 0 && extreme_err < 1e-9 && decreased == 100,
        format!(
            "{violations} bound violations in {checked} rows, extreme-case error {extreme_err:.1e}, \
             entropy step decreased H on {decreased}/100 rows"
        ),
    ))
}

fn a3() -> smile::Result<Outcome> {
    let start = Instant::now();
    let mut r = smile::rng::stream(3, 0);
    let node = Tape::<f64>::new().constant(Tensor::scalar(0.0));
    let mut mismatches = 0;
    for _ in 0..1000 {
        let classes = r.gen_range(1..=6);
        let mut entries = Vec::new();
        for c in 0..classes {
            for _ in 0..r.gen_range(1..=40) {
                let i = entries.len();
                // coarse entropies so that ties occur
                entries.push(PoolEntry {
                    sample: i / 5,
                    timestep: i % 5,
                    class: c * 3 % 7,
                    entropy: r.gen_range(0..12) as f64 / 8.0,
                    node,
                });
            }
        }
        // shuffle so that pool order differs from class order
        for i in (1..entries.len()).rev() {
            let j = r.gen_range(0..=i);
            entries.swap(i, j);
        }
        let permille = r.gen_range(0..=1000u64);
        let pool = PredictionPool { entries };
        let sel = select(&pool, &PacingSchedule::new(permille as f64 / 1000.0, 0.0)?, 7)?;

        let mut oracle: Vec<Vec<usize>> = Vec::new();
        let mut class_ids: Vec<usize> = pool.entries.iter().map(|e| e.class).collect();
        class_ids.sort();
        class_ids.dedup();
        for &c in &class_ids {
            let mut members: Vec<usize> = (0..pool.len()).filter(|&i| pool.entries[i].class == c).collect();
            members.sort_by(|&a, &b| {
                let (x, y) = (&pool.entries[a], &pool.entries[b]);
                (x.entropy, x.sample, x.timestep).partial_cmp(&(y.entropy, y.sample, y.timestep)).unwrap()
            });
            let k = (members.len() as u64 * permille).div_ceil(1000) as usize;
            members.truncate(k);
            oracle.push(members);
        }
        let got: Vec<Vec<usize>> = sel.classes.iter().map(|c| c.chosen.clone()).collect();
        let quotas_ok = sel
            .classes
            .iter()
            .all(|c| c.quota == (c.pool_size as u64 * permille).div_ceil(1000) as usize);
        let again = select(&pool, &PacingSchedule::new(permille as f64 / 1000.0, 0.0)?, 7)?;
        if got != oracle || !quotas_ok || again != sel {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(outcome(
        mismatches == 0 && secs < 10.0,
        format!("{mismatches} mismatches over 1000 pools, {secs:.2}s of 10s"),
    ))
}

fn a4() -> smile::Result<Outcome> {
    let ts = [0u64, 1, 1_000, 20_000, 1_000_000];
    let mut bad = Vec::new();
    for &(p_init, p_add) in &PACING_GRID {
        let s = PacingSchedule::new(p_init, p_add)?;
        for &t in &ts {
            let want = (p_init + p_add * t as f64).min(1.0);
            if s.portion_at(t) != want {
                bad.push(format!("({p_init}, {p_add}) at {t}"));
            }
        }
    }
    let full = PacingSchedule::new(1.0, 0.0)?;
    let mut r = smile::rng::stream(4, 0);
    let node = Tape::<f64>::new().constant(Tensor::scalar(0.0));
    let mut partial = 0;
    for t in 1..=200u64 {
        let n = r.gen_range(1..200);
        let pool = PredictionPool {
            entries: (0..n)
                .map(|i| PoolEntry {
                    sample: i,
                    timestep: 0,
                    class: r.gen_range(0..15),
                    entropy: r.gen::<f64>(),
                    node,
                })
                .collect(),
        };
        let sel = select(&pool, &full, t)?;
        if sel.chosen_count() != n || quota(n, full.portion_at(t)) != n {
            partial += 1;
        }
    }
    Ok(outcome(
        bad.is_empty() && partial == 0,
        format!(
            "{} of 35 portion values off {:?}; (1.0, 0.0) left entries out on {partial}/200 steps",
            bad.len(),
            bad
        ),
    ))
}

struct Shared {
    data: PresetCorpora,
    base: Option<Checkpoint>,
    base_test: Option<EvalResult>,
    /// Self-paced default cell, one result per seed.
    adapted: Vec<EvalResult>,
}

fn a5(s: &mut Shared) -> smile::Result<Outcome> {
    let start = Instant::now();
    let cfg = TrainConfig {
        mode: Mode::Base,
        steps: 3000,
        batch_source: 32,
        optimizer: OptimizerKind::Adam,
        lr: 1e-3,
        seed: 1,
        eval_every: 0,
        ..Default::default()
    };
    let data = TrainData {
        labeled: s.data.source.clone(),
        unlabeled: None,
        eval: None,
    };
    let ck = train(&cfg, &data, Init::Fresh)?.checkpoint;
    let val = evaluate(&ck.recognizer(), &ck.vocab, &s.data.source_val, 1)?;
    let secs = start.elapsed().as_secs_f64();
    let test = evaluate(&ck.recognizer(), &ck.vocab, &s.data.test, 1)?;
    s.base = Some(ck);
    s.base_test = Some(test);
    Ok(outcome(
        val.word_accuracy >= 0.99 && secs < 600.0,
        format!(
            "source validation word accuracy {:.2}% after 3000 steps (need >= 99%), {secs:.0}s of 600s",
            100.0 * val.word_accuracy
        ),
    ))
}

fn adapt(s: &Shared, seed: u64, pacing: (f64, f64)) -> smile::Result<EvalResult> {
    let base = s.base.clone().ok_or_else(|| harness_error("A5 produced no checkpoint"))?;
    let cfg = TrainConfig {
        mode: Mode::Smile,
        lambda: 1.0,
        variant: EntropyVariant::Shannon,
        pacing: PacingSchedule::new(pacing.0, pacing.1)?,
        lr: ADAPT_LR,
        steps: ADAPT_STEPS,
        batch_source: 32,
        batch_target: ADAPT_BATCH_TARGET,
        seed,
        eval_every: 0,
        ..Default::default()
    };
    let data = TrainData {
        labeled: s.data.source.clone(),
        unlabeled: Some(s.data.target.unlabeled()),
        eval: None,
    };
    let ck = train(&cfg, &data, Init::Warm(base))?.checkpoint;
    evaluate(&ck.recognizer(), &ck.vocab, &s.data.test, 1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn a6(s: &mut Shared) -> smile::Result<Outcome> {
    let base = s.base_test.ok_or_else(|| harness_error("A5 produced no checkpoint"))?;
    let mut slowest: f64 = 0.0;
    for seed in SEEDS {
        let start = Instant::now();
        let r = adapt(s, seed, (0.0, 5e-5))?;
        slowest = slowest.max(start.elapsed().as_secs_f64());
        s.adapted.push(r);
    }
    let accs: Vec<f64> = s.adapted.iter().map(|r| 100.0 * r.word_accuracy).collect();
    let b = 100.0 * base.word_accuracy;
    let med = median(accs.clone());
    let worst = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(outcome(
        med >= b + 2.0 && worst >= b - 0.5 && slowest < 900.0,
        format!(
            "baseline {b:.2}%, adapted {:?}, median {med:.2}% (need >= {:.2}%), \
             worst {worst:.2}% (need >= {:.2}%), slowest seed {slowest:.0}s of 900s",
            accs.iter().map(|a| format!("{a:.2}")).collect::<Vec<_>>(),
            b + 2.0,
            b - 0.5
        ),
    ))
}

fn a7(s: &Shared) -> smile::Result<Outcome> {
    let base = s.base_test.ok_or_else(|| harness_error("A5 produced no checkpoint"))?;
    if s.adapted.is_empty() {
        return Err(harness_error("A6 produced no runs"));
    }
    let drops: Vec<f64> = s
        .adapted
        .iter()
        .map(|r| 1.0 - r.mean_entropy / base.mean_entropy)
        .collect();
    let worst = drops.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(outcome(
        worst >= 0.30,
        format!(
            "test entropy {:.4} before, {:?} after; smallest relative drop {:.1}% (need >= 30%)",
            base.mean_entropy,
            s.adapted.iter().map(|r| format!("{:.4}", r.mean_entropy)).collect::<Vec<_>>(),
            100.0 * worst
        ),
    ))
}

fn a8(s: &Shared) -> smile::Result<Outcome> {
    if s.adapted.len() != SEEDS.len() {
        return Err(harness_error("A6 produced no runs"));
    }
    let mut full = Vec::new();
    for seed in SEEDS {
        full.push(adapt(s, seed, (1.0, 0.0))?);
    }
    let mean = |v: &[EvalResult]| 100.0 * v.iter().map(|r| r.word_accuracy).sum::<f64>() / v.len() as f64;
    let (paced, unpaced) = (mean(&s.adapted), mean(&full));
    Ok(outcome(
        paced >= unpaced,
        format!(
            "seeds {SEEDS:?}, {ADAPT_STEPS} steps: (0.0, 5e-5) mean word accuracy {paced:.2}%, \
             (1.0, 0.0) {unpaced:.2}% per seed {:?}",
            full.iter().map(|r| format!("{:.2}", 100.0 * r.word_accuracy)).collect::<Vec<_>>()
        ),
    ))
}

fn a9(s: &Shared) -> smile::Result<Outcome> {
    let base = s.base.clone().ok_or_else(|| harness_error("A5 produced no checkpoint"))?;
    let mut test = s.data.test.clone();
    test.images.truncate(100);
    let data = TrainData {
        labeled: s.data.source.clone(),
        unlabeled: Some(s.data.target.unlabeled()),
        eval: Some(test),
    };
    let cfg = |steps| TrainConfig {
        mode: Mode::Smile,
        pacing: PacingSchedule::new(0.2, 1e-2).unwrap(),
        lr: ADAPT_LR,
        steps,
        eval_every: 10,
        seed: 5,
        ..Default::default()
    };
    let a = train(&cfg(50), &data, Init::Warm(base.clone()))?;
    let b = train(&cfg(50), &data, Init::Warm(base.clone()))?;
    let identical = a.checkpoint.to_bytes() == b.checkpoint.to_bytes()
        && a.metrics.to_csv() == b.metrics.to_csv()
        && a.selection.to_csv() == b.selection.to_csv();
    let first = train(&cfg(20), &data, Init::Warm(base))?;
    let reloaded = Checkpoint::from_bytes(&first.checkpoint.to_bytes())?;
    let rest = train(&cfg(30), &data, Init::Resume(reloaded))?;
    let resumed = rest.checkpoint.to_bytes() == a.checkpoint.to_bytes()
        && rest.metrics.rows[..] == a.metrics.rows[2..];
    Ok(outcome(
        identical && resumed,
        format!("repeat runs byte-identical: {identical}; 20+30 resumed equals 50 straight: {resumed}"),
    ))
}

fn a10(s: &Shared) -> smile::Result<Outcome> {
    let dir = tempfile::tempdir().map_err(|e| harness_error(e.to_string()))?;
    let mut notes = Vec::new();
    let mut ok = true;

    let corpus_path = dir.path().join("c.smcp");
    let again = dir.path().join("c2.smcp");
    smile::glyph_data::save_corpus(&s.data.test, &corpus_path)?;
    smile::glyph_data::save_corpus(&smile::glyph_data::load_corpus(&corpus_path)?, &again)?;
    let same = std::fs::read(&corpus_path).ok() == std::fs::read(&again).ok();
    ok &= same;
    notes.push(format!("corpus round trip {same}"));

    let ck = s.base.clone().ok_or_else(|| harness_error("A5 produced no checkpoint"))?;
    let ck_path = dir.path().join("k.smck");
    let ck_again = dir.path().join("k2.smck");
    save_checkpoint(&ck, &ck_path)?;
    save_checkpoint(&load_checkpoint(&ck_path)?, &ck_again)?;
    let same = std::fs::read(&ck_path).ok() == std::fs::read(&ck_again).ok();
    ok &= same;
    notes.push(format!("checkpoint round trip {same}"));

    let corpus = s.data.test.to_bytes();
    let ckb = ck.to_bytes();
    let mut c_bad = corpus.clone();
    c_bad[0] = b'Z';
    let mut k_bad = ckb.clone();
    k_bad[0] = b'Z';
    let magic = matches!(Corpus::from_bytes(&c_bad), Err(Error::Format { offset: 0, .. }))
        && matches!(Checkpoint::from_bytes(&k_bad), Err(Error::Format { offset: 0, .. }));
    ok &= magic;
    notes.push(format!("bad magic rejected at offset 0 {magic}"));

    let truncated = matches!(Corpus::from_bytes(&corpus[..corpus.len() - 1]), Err(Error::Format { .. }))
        && match Checkpoint::from_bytes(&ckb[..ckb.len() - 1]) {
            Err(Error::Format { detail, .. }) => detail.contains('\''),
            _ => false,
        };
    ok &= truncated;
    notes.push(format!("truncation rejected naming the tensor {truncated}"));
    Ok(outcome(ok, notes.join(", ")))
}

fn main() {
    // `cargo test` passes harness flags; a filter that names no criterion
    // (e.g. another test's name) skips the run
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !filter.is_empty() && !filter.iter().any(|f| "acceptance".contains(f.as_str())) {
        return;
    }
    let mut all = true;
    macro_rules! run {
        ($id:expr, $title:expr, $e:expr) => {{
            let start = Instant::now();
            let r = $e;
            all &= report($id, $title, start.elapsed(), r);
        }};
    }
    run!("A1", "gradient fidelity", a1());
    run!("A2", "entropy properties", a2());
    run!("A3", "selection oracle", a3());
    run!("A4", "pacing schedule", a4());

    let data = Preset::glyph12().generate(DATA_SEED);
    let mut shared = match data {
        Ok(data) => Shared {
            data,
            base: None,
            base_test: None,
            adapted: Vec::new(),
        },
        Err(e) => {
            println!("A5-A10 FAIL: could not generate data: {e}");
            std::process::exit(1);
        }
    };
    run!("A5", "source training", a5(&mut shared));
    run!("A6", "directional adaptation gain", a6(&mut shared));
    run!("A7", "sharpening", a7(&shared));
    run!("A8", "self-paced ablation", a8(&shared));
    run!("A9", "reproducibility", a9(&shared));
    run!("A10", "format round trips", a10(&shared));

    if all {
        println!("acceptance: all criteria passed");
    } else {
        println!("acceptance: some criteria failed");
        std::process::exit(1);
    }
}
