//! Training loops for the source-only baseline, latent-entropy domain
//! adaptation with self-paced selection, and supervised target finetuning.

mod checkpoint;
mod optim;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{clip_grad_norm, OptimizerKind, OptimizerState};

use crate::engine::Tape;
use crate::error::{Error, Result};
use crate::glyph_data::{Corpus, UnlabeledImages};
use crate::losses::{decoder_loss, smile_loss, EntropyVariant};
use crate::metrics::{evaluate, EvalResult};
use crate::recognizer::{Architecture, Recognizer};
use crate::rng;
use crate::self_paced::{build_pool, select, selected_entropy_loss, PacingSchedule, SelectionResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Decoder loss on labeled source batches only.
    Base,
    /// Decoder loss plus selected target entropy.
    Smile,
    /// Decoder loss on labeled target batches.
    Finetune,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Base => "base",
            Mode::Smile => "smile",
            Mode::Finetune => "finetune",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Mode::Base),
            "smile" => Ok(Mode::Smile),
            "finetune" => Ok(Mode::Finetune),
            _ => Err(Error::contract(
                "trainer::Mode",
                format!("unknown mode {s:?} (base | smile | finetune)"),
            )),
        }
    }
}

/// Where the parameters of a run come from.
#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Fresh initialization from the run seed.
    Fresh,
    /// Parameters from a checkpoint; new optimizer state, step counter at 0.
    Warm(Checkpoint),
    /// Continue a checkpoint's run: parameters, optimizer state and step.
    Resume(Checkpoint),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub lambda: f64,
    pub variant: EntropyVariant,
    pub pacing: PacingSchedule,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// Optimizer steps to run in this call.
    pub steps: u64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub clip: f64,
    pub seed: u64,
    /// Evaluate every this many steps (and after the last); 0 evaluates only
    /// after the last step.
    pub eval_every: u64,
    pub threads: usize,
    /// Allow `mode = smile` from fresh parameters.
    pub cold_start: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Base,
            lambda: 1.0,
            variant: EntropyVariant::Shannon,
            pacing: PacingSchedule {
                p_init: 0.0,
                p_add: 5e-5,
            },
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            steps: 3000,
            batch_source: 32,
            batch_target: 32,
            clip: 5.0,
            seed: 1,
            eval_every: 500,
            threads: 1,
            cold_start: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |d: String| Err(Error::contract("trainer::TrainConfig", d));
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.batch_source == 0 || self.batch_target == 0 {
            return bad("batch sizes must be >= 1".into());
        }
        if self.lr <= 0.0 || !self.lr.is_finite() {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        PacingSchedule::new(self.pacing.p_init, self.pacing.p_add)?;
        Ok(())
    }
}

/// Data a run may draw from. Target images for adaptation are reachable only
/// through [`UnlabeledImages`].
#[derive(Clone, Debug)]
pub struct TrainData {
    /// Labeled batches: source corpus for base/smile, labeled target for finetune.
    pub labeled: Corpus,
    pub unlabeled: Option<UnlabeledImages>,
    /// Sealed evaluation set used for the metrics rows.
    pub eval: Option<Corpus>,
}

/// Stateless batch order: step `s` covers positions `[s*B, (s+1)*B)` of the
/// concatenation of per-epoch shuffles, each keyed by `(seed, epoch)`.
#[derive(Clone, Debug)]
pub struct BatchSchedule {
    n: usize,
    batch: usize,
    seed: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSchedule {
    pub fn new(n: usize, batch: usize, seed: u64) -> Self {
        BatchSchedule {
            n,
            batch,
            seed,
            cached: None,
        }
    }

    fn perm(&mut self, epoch: u64) -> &[usize] {
        if self.cached.as_ref().map(|c| c.0) != Some(epoch) {
            let mut p: Vec<usize> = (0..self.n).collect();
            p.shuffle(&mut rng::stream(self.seed, epoch));
            self.cached = Some((epoch, p));
        }
        &self.cached.as_ref().unwrap().1
    }

    /// Sample indices of 0-based step `step`.
    pub fn indices(&mut self, step: u64) -> Vec<usize> {
        let n = self.n as u64;
        let start = step * self.batch as u64;
        (start..start + self.batch as u64)
            .map(|p| self.perm(p / n)[(p % n) as usize])
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub mode: Mode,
    pub source_loss: f64,
    /// Mean chosen entropy; `None` when the entropy term was skipped.
    pub entropy_loss: Option<f64>,
    pub selected_portion: Option<f64>,
    pub eval: Option<EvalResult>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: &str =
    "step,mode,source_loss,entropy_loss,selected_portion,word_acc,char_acc,mean_entropy";

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.step,
                r.mode,
                r.source_loss,
                opt_str(r.entropy_loss),
                opt_str(r.selected_portion),
                opt_str(r.eval.map(|e| e.word_accuracy)),
                opt_str(r.eval.map(|e| e.char_accuracy)),
                opt_str(r.eval.map(|e| e.mean_entropy)),
            ));
        }
        s
    }
}

/// Per-step, per-class selection statistics of a self-paced run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SelectionLog {
    /// `(step, class, n_c, k_c, mean chosen entropy of the class)`.
    pub rows: Vec<(u64, usize, usize, usize, f64)>,
}

impl SelectionLog {
    fn push(&mut self, step: u64, sel: &SelectionResult) {
        for c in &sel.classes {
            self.rows
                .push((step, c.class, c.pool_size, c.quota, c.mean_chosen));
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,class,pool_size,quota,mean_chosen_entropy\n");
        for (step, class, n, k, m) in &self.rows {
            s.push_str(&format!("{step},{class},{n},{k},{m}\n"));
        }
        s
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub metrics: MetricsLog,
    pub selection: SelectionLog,
}

/// Losses of one optimizer step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepStats {
    pub source_loss: f64,
    pub entropy_loss: Option<f64>,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub selection: Option<SelectionResult>,
}

struct Trainer<'a> {
    cfg: &'a TrainConfig,
    data: &'a TrainData,
    model: Recognizer<f64>,
    optimizer: OptimizerState,
    step: u64,
    labeled_batches: BatchSchedule,
    target_batches: Option<BatchSchedule>,
}

impl Trainer<'_> {
    /// Forward and backward for 1-based step `t`; returns gradients by name.
    fn gradients(&mut self, t: u64) -> Result<(BTreeMap<String, Vec<f64>>, StepStats)> {
        let cfg = self.cfg;
        let corpus = &self.data.labeled;
        let idx = self.labeled_batches.indices(t - 1);
        let images: Vec<&[f64]> = idx.iter().map(|&i| &corpus.images[i].pixels[..]).collect();
        let labels: Vec<&[usize]> = idx
            .iter()
            .map(|&i| corpus.images[i].label.as_deref().expect("labeled corpus"))
            .collect();

        let mut tape = Tape::new();
        let bound = self.model.bind(&mut tape);
        let feats = self.model.encode(&mut tape, &bound, &images, corpus.width)?;
        let dec = self.model.decode_teacher_forced(&mut tape, &bound, &feats, &labels)?;
        let l_dec = decoder_loss(&mut tape, &dec, &labels)?;
        let source_loss = tape.item(l_dec);
        if !source_loss.is_finite() {
            return Err(Error::Numerical {
                step: t,
                detail: format!("source loss {source_loss}"),
            });
        }

        let mut entropy_loss = None;
        let mut selection = None;
        let mut total = l_dec;
        if cfg.mode == Mode::Smile {
            let target = self.data.unlabeled.as_ref().expect("validated");
            let tidx = self.target_batches.as_mut().unwrap().indices(t - 1);
            let timgs: Vec<&[f64]> = tidx.iter().map(|&i| target.pixels(i)).collect();
            let tfeats = self.model.encode(&mut tape, &bound, &timgs, target.width())?;
            let tdec = self.model.decode_greedy(&mut tape, &bound, &tfeats)?;
            let pool = build_pool(&mut tape, &tdec, cfg.variant)?;
            let sel = select(&pool, &cfg.pacing, t)?;
            if let Some(l_ent) = selected_entropy_loss(&mut tape, &pool, &sel)? {
                let v = tape.item(l_ent);
                if !v.is_finite() {
                    return Err(Error::Numerical {
                        step: t,
                        detail: format!("source loss {source_loss}, entropy loss {v}"),
                    });
                }
                entropy_loss = Some(v);
                total = smile_loss(&mut tape, l_dec, l_ent, cfg.lambda)?;
            }
            selection = Some(sel);
        }
        let total_loss = tape.item(total);
        tape.backward(total)?;
        let mut grads = BTreeMap::new();
        for (name, &v) in bound.iter() {
            let g = tape
                .grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; tape.value(v).numel()]);
            grads.insert(name.clone(), g);
        }
        let grad_norm = clip_grad_norm(&mut grads, cfg.clip);
        if !grad_norm.is_finite() {
            return Err(Error::Numerical {
                step: t,
                detail: format!(
                    "gradient norm {grad_norm} (source loss {source_loss}, entropy loss {entropy_loss:?})"
                ),
            });
        }
        Ok((
            grads,
            StepStats {
                source_loss,
                entropy_loss,
                total_loss,
                grad_norm,
                selection,
            },
        ))
    }
}

fn check_data(cfg: &TrainConfig, data: &TrainData, arch: &Architecture, vocab_ok: impl Fn(&crate::glyph_data::Vocab) -> bool) -> Result<()> {
    const OP: &str = "trainer::train";
    if data.labeled.is_empty() || !data.labeled.is_labeled() {
        return Err(Error::contract(OP, "the supervised corpus must be non-empty and fully labeled"));
    }
    if !vocab_ok(&data.labeled.vocab) {
        return Err(Error::contract(OP, "vocabulary mismatch between corpus and model"));
    }
    if data.labeled.l_max() > arch.max_len {
        return Err(Error::contract(OP, "corpus images are wider than the model supports"));
    }
    if cfg.mode == Mode::Smile {
        match &data.unlabeled {
            None => return Err(Error::contract(OP, "mode smile requires a target corpus")),
            Some(u) if u.is_empty() => return Err(Error::contract(OP, "target corpus is empty")),
            Some(u) if !vocab_ok(u.vocab()) => {
                return Err(Error::contract(OP, "vocabulary mismatch in target corpus"))
            }
            Some(_) => {}
        }
    }
    if let Some(e) = &data.eval {
        if !vocab_ok(&e.vocab) {
            return Err(Error::contract(OP, "vocabulary mismatch in evaluation corpus"));
        }
    }
    Ok(())
}

/// Runs `cfg.steps` optimizer steps.
pub fn train(cfg: &TrainConfig, data: &TrainData, init: Init) -> Result<TrainOutcome> {
    cfg.validate()?;
    const OP: &str = "trainer::train";
    let (vocab, model, optimizer, start) = match init {
        Init::Fresh => {
            if cfg.mode == Mode::Finetune {
                return Err(Error::contract(OP, "mode finetune requires a checkpoint"));
            }
            if cfg.mode == Mode::Smile && !cfg.cold_start {
                return Err(Error::contract(
                    OP,
                    "mode smile starts from a pre-trained checkpoint (enable cold start to override)",
                ));
            }
            let vocab = data.labeled.vocab.clone();
            let arch = Architecture::for_vocab(&vocab, data.labeled.l_max());
            let model = Recognizer::new(arch, cfg.seed);
            let opt = OptimizerState::new(cfg.optimizer, &model.params);
            (vocab, model, opt, 0)
        }
        Init::Warm(ck) => {
            let model = ck.recognizer();
            let opt = OptimizerState::new(cfg.optimizer, &model.params);
            (ck.vocab, model, opt, 0)
        }
        Init::Resume(ck) => {
            if ck.optimizer.kind != cfg.optimizer {
                return Err(Error::contract(
                    OP,
                    format!(
                        "checkpoint optimizer {} differs from configured {}",
                        ck.optimizer.kind, cfg.optimizer
                    ),
                ));
            }
            let model = ck.recognizer();
            (ck.vocab, model, ck.optimizer, ck.step)
        }
    };
    check_data(cfg, data, &model.arch, |v| v == &vocab)?;

    let mut trainer = Trainer {
        cfg,
        data,
        labeled_batches: BatchSchedule::new(
            data.labeled.len(),
            cfg.batch_source,
            rng::derive_seed(cfg.seed, 0x50),
        ),
        target_batches: data.unlabeled.as_ref().map(|u| {
            BatchSchedule::new(u.len(), cfg.batch_target, rng::derive_seed(cfg.seed, 0x7A))
        }),
        model,
        optimizer,
        step: start,
    };
    let mut metrics = MetricsLog::default();
    let mut selection_log = SelectionLog::default();
    let end = start + cfg.steps;
    while trainer.step < end {
        let t = trainer.step + 1;
        let (grads, stats) = trainer.gradients(t)?;
        trainer
            .optimizer
            .apply(&mut trainer.model.params, &grads, cfg.lr, t);
        if !trainer.model.params.is_finite() {
            return Err(Error::Numerical {
                step: t,
                detail: format!("parameters became non-finite (loss {})", stats.total_loss),
            });
        }
        trainer.step = t;
        if let Some(sel) = &stats.selection {
            selection_log.push(t, sel);
        }
        let due = (cfg.eval_every > 0 && t.is_multiple_of(cfg.eval_every)) || t == end;
        if due {
            let eval = match &data.eval {
                Some(c) => Some(evaluate(&trainer.model, &vocab, c, cfg.threads)?),
                None => None,
            };
            metrics.rows.push(MetricsRow {
                step: t,
                mode: cfg.mode,
                source_loss: stats.source_loss,
                entropy_loss: stats.entropy_loss,
                selected_portion: stats.selection.as_ref().map(SelectionResult::realized_portion),
                eval,
            });
        }
    }
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            vocab,
            arch: trainer.model.arch,
            step: trainer.step,
            params: trainer.model.params,
            optimizer: trainer.optimizer,
        },
        metrics,
        selection: selection_log,
    })
}

/// The `(p_init, p_add)` cells of the pacing sweep, ending with the no-pacing cell.
pub const PACING_GRID: [(f64, f64); 7] = [
    (0.0, 1e-4),
    (0.3, 1e-4),
    (0.5, 1e-4),
    (0.0, 5e-5),
    (0.3, 5e-5),
    (0.5, 5e-5),
    (1.0, 0.0),
];

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub pacing: PacingSchedule,
    pub result: EvalResult,
}

impl SweepRow {
    pub fn name(&self) -> String {
        format!("({}, {})", self.pacing.p_init, self.pacing.p_add)
    }
}

/// Trains one adaptation run per grid cell from the same pre-trained
/// checkpoint and seed, and evaluates each on `test`.
pub fn sweep(
    grid: &[(f64, f64)],
    base: &TrainConfig,
    data: &TrainData,
    pretrained: &Checkpoint,
    test: &Corpus,
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::contract("trainer::sweep", "empty grid"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &(p_init, p_add) in grid {
        let pacing = PacingSchedule::new(p_init, p_add)?;
        let cfg = TrainConfig {
            mode: Mode::Smile,
            pacing,
            ..base.clone()
        };
        let out = train(&cfg, data, Init::Warm(pretrained.clone()))?;
        let result = evaluate(
            &out.checkpoint.recognizer(),
            &out.checkpoint.vocab,
            test,
            base.threads,
        )?;
        rows.push(SweepRow { pacing, result });
    }
    Ok(rows)
}
