use smile::engine::Tape;
use smile::glyph_data::{Corpus, Preset, PresetCorpora};
use smile::losses::decoder_loss;
use smile::self_paced::PacingSchedule;
use smile::trainer::*;
use smile::{Error, Recognizer};

fn corpora() -> PresetCorpora {
    Preset {
        n_source: 64,
        n_source_val: 16,
        n_target: 64,
        n_target_labeled: 16,
        n_test: 16,
        ..Preset::glyph12()
    }
    .generate(21)
    .unwrap()
}

fn full_loss(model: &Recognizer, corpus: &Corpus) -> f64 {
    let mut tape = Tape::new();
    let b = model.bind_frozen(&mut tape);
    let images: Vec<&[f64]> = corpus.images.iter().map(|i| &i.pixels[..]).collect();
    let labels: Vec<&[usize]> = corpus.images.iter().map(|i| i.label.as_deref().unwrap()).collect();
    let feats = model.encode(&mut tape, &b, &images, corpus.width).unwrap();
    let dec = model.decode_teacher_forced(&mut tape, &b, &feats, &labels).unwrap();
    let l = decoder_loss(&mut tape, &dec, &labels).unwrap();
    tape.item(l)
}

fn base_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        steps,
        batch_source: 16,
        batch_target: 16,
        eval_every: 0,
        ..Default::default()
    }
}

fn pretrained(c: &PresetCorpora) -> Checkpoint {
    let data = TrainData {
        labeled: c.source.clone(),
        unlabeled: None,
        eval: None,
    };
    train(&base_cfg(30), &data, Init::Fresh).unwrap().checkpoint
}

fn smile_data(c: &PresetCorpora) -> TrainData {
    TrainData {
        labeled: c.source.clone(),
        unlabeled: Some(c.target.unlabeled()),
        eval: Some(c.test.clone()),
    }
}

fn smile_cfg(steps: u64) -> TrainConfig {
    TrainConfig {
        mode: Mode::Smile,
        pacing: PacingSchedule::new(0.3, 1e-3).unwrap(),
        eval_every: 10,
        ..base_cfg(steps)
    }
}

#[test]
fn a_full_batch_step_lowers_the_loss() {
    let c = corpora();
    let mut small = c.source.clone();
    small.images.truncate(16);
    let data = TrainData {
        labeled: small.clone(),
        unlabeled: None,
        eval: None,
    };
    let before = train(&base_cfg(1), &data, Init::Fresh).unwrap();
    let fresh = Recognizer::new(before.checkpoint.arch, 1);
    let l0 = full_loss(&fresh, &small);
    let l1 = full_loss(&before.checkpoint.recognizer(), &small);
    assert!(l1 < l0, "{l0} -> {l1}");
    assert_eq!(before.checkpoint.step, 1);
}

#[test]
fn smile_with_zero_lambda_matches_base() {
    let c = corpora();
    let ck = pretrained(&c);
    let smile = TrainConfig {
        lambda: 0.0,
        ..smile_cfg(5)
    };
    let base = TrainConfig {
        mode: Mode::Base,
        ..smile.clone()
    };
    let a = train(&smile, &smile_data(&c), Init::Warm(ck.clone())).unwrap();
    let b = train(&base, &smile_data(&c), Init::Warm(ck)).unwrap();
    for ((na, ta), (nb, tb)) in a.checkpoint.params.iter().zip(b.checkpoint.params.iter()) {
        assert_eq!(na, nb);
        assert!(ta.data() == tb.data(), "{na} differs");
    }
    assert!(!a.selection.rows.is_empty());
    assert!(b.selection.rows.is_empty());
}

#[test]
fn runs_are_deterministic() {
    let c = corpora();
    let ck = pretrained(&c);
    let run = || train(&smile_cfg(12), &smile_data(&c), Init::Warm(ck.clone())).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.metrics.to_csv(), b.metrics.to_csv());
    assert_eq!(a.selection.to_csv(), b.selection.to_csv());
    let other = TrainConfig {
        seed: 2,
        ..smile_cfg(12)
    };
    let c2 = train(&other, &smile_data(&c), Init::Warm(ck)).unwrap();
    assert_ne!(a.checkpoint.to_bytes(), c2.checkpoint.to_bytes());
}

#[test]
fn resuming_equals_uninterrupted_training() {
    let c = corpora();
    let ck = pretrained(&c);
    let data = smile_data(&c);
    let straight = train(&smile_cfg(50), &data, Init::Warm(ck.clone())).unwrap();
    let first = train(&smile_cfg(20), &data, Init::Warm(ck)).unwrap();
    let bytes = first.checkpoint.to_bytes();
    let reloaded = Checkpoint::from_bytes(&bytes).unwrap();
    let second = train(&smile_cfg(30), &data, Init::Resume(reloaded)).unwrap();
    assert_eq!(second.checkpoint.step, 50);
    assert_eq!(straight.checkpoint.to_bytes(), second.checkpoint.to_bytes());
    let tail: Vec<_> = straight.metrics.rows.iter().filter(|r| r.step > 20).cloned().collect();
    assert_eq!(tail, second.metrics.rows);
}

#[test]
fn metrics_rows_follow_the_evaluation_interval() {
    let c = corpora();
    let ck = pretrained(&c);
    let out = train(&smile_cfg(25), &smile_data(&c), Init::Warm(ck)).unwrap();
    let steps: Vec<u64> = out.metrics.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps, vec![10, 20, 25]);
    let csv = out.metrics.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,mode,source_loss,entropy_loss,selected_portion,word_acc,char_acc,mean_entropy"
    );
    for (line, row) in lines.zip(&out.metrics.rows) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        assert_eq!(f[0].parse::<u64>().unwrap(), row.step);
        assert_eq!(f[1], "smile");
        let portion: f64 = f[4].parse().unwrap();
        assert!((0.3..=1.0).contains(&portion));
        assert!(row.eval.is_some());
    }
    // one selection row per class and step
    let per_step = out.selection.rows.iter().filter(|r| r.0 == 1).count();
    assert!(per_step >= 1);
    assert!(out.selection.rows.iter().all(|r| r.3 <= r.2 && r.3 >= 1));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let c = corpora();
    let ck = pretrained(&c);
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.smck"), dir.path().join("b.smck"));
    save_checkpoint(&ck, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, ck);
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let bytes = ck.to_bytes();
    let mut bad = bytes.clone();
    bad[1] ^= 0xff;
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Format { offset: 0, .. })));

    // cut inside the last tensor's values
    let cut = &bytes[..bytes.len() - 12];
    match Checkpoint::from_bytes(cut) {
        Err(Error::Format { detail, .. }) => {
            let last = ck.optimizer.tensors.keys().last().cloned().unwrap();
            assert!(detail.contains(&format!("'{last}'")), "{detail}");
        }
        other => panic!("expected a format error, got {other:?}"),
    }
    let mut long = bytes.clone();
    long.push(1);
    assert!(matches!(Checkpoint::from_bytes(&long), Err(Error::Format { .. })));
}

#[test]
fn non_finite_parameters_are_numerical_errors() {
    let c = corpora();
    let mut ck = pretrained(&c);
    ck.params.get_mut("out.b").unwrap().data_mut()[0] = f64::NAN;
    let data = TrainData {
        labeled: c.source.clone(),
        unlabeled: None,
        eval: None,
    };
    match train(&base_cfg(3), &data, Init::Warm(ck)) {
        Err(Error::Numerical { step: 1, .. }) => {}
        other => panic!("expected a numerical error, got {other:?}"),
    }
}

#[test]
fn invalid_setups_are_rejected() {
    let c = corpora();
    let data = smile_data(&c);
    let finetune = TrainConfig {
        mode: Mode::Finetune,
        ..base_cfg(1)
    };
    assert!(matches!(train(&finetune, &data, Init::Fresh), Err(Error::Contract { .. })));
    assert!(matches!(train(&smile_cfg(1), &data, Init::Fresh), Err(Error::Contract { .. })));
    let cold = TrainConfig {
        cold_start: true,
        ..smile_cfg(1)
    };
    assert!(train(&cold, &data, Init::Fresh).is_ok());

    let ck = pretrained(&c);
    let no_target = TrainData {
        unlabeled: None,
        ..data.clone()
    };
    assert!(train(&smile_cfg(1), &no_target, Init::Warm(ck.clone())).is_err());

    let other = Preset {
        n_source: 8,
        n_source_val: 1,
        n_target: 8,
        n_target_labeled: 1,
        n_test: 1,
        ..Preset::glyph12_skewed()
    };
    let mut foreign = other.generate(1).unwrap().source;
    foreign.vocab = smile::glyph_data::Vocab::new("abcdefghijkl".chars()).unwrap();
    let mismatched = TrainData {
        labeled: foreign,
        unlabeled: None,
        eval: None,
    };
    let err = train(&base_cfg(1), &mismatched, Init::Warm(ck.clone())).unwrap_err();
    assert!(err.to_string().contains("vocabulary"), "{err}");

    let adadelta = TrainConfig {
        optimizer: OptimizerKind::Adadelta,
        ..base_cfg(1)
    };
    assert!(train(&adadelta, &data, Init::Resume(ck)).is_err());
    assert!(TrainConfig { steps: 0, ..base_cfg(1) }.validate().is_err());
    assert!(TrainConfig { lambda: -1.0, ..base_cfg(1) }.validate().is_err());
}

#[test]
fn finetune_trains_on_labeled_target_data() {
    let c = corpora();
    let ck = pretrained(&c);
    let cfg = TrainConfig {
        mode: Mode::Finetune,
        ..base_cfg(3)
    };
    let data = TrainData {
        labeled: c.target_labeled.clone(),
        unlabeled: None,
        eval: None,
    };
    let out = train(&cfg, &data, Init::Warm(ck.clone())).unwrap();
    assert_eq!(out.checkpoint.step, 3);
    assert_ne!(out.checkpoint.params, ck.params);
}

#[test]
fn sweep_reports_every_cell() {
    let c = corpora();
    let ck = pretrained(&c);
    let grid = [(0.0, 5e-5), (1.0, 0.0)];
    let rows = sweep(&grid, &smile_cfg(2), &smile_data(&c), &ck, &c.test).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].name(), "(0, 0.00005)");
    assert_eq!(rows[1].name(), "(1, 0)");
    assert!(rows.iter().all(|r| r.result.samples == 16));
}
