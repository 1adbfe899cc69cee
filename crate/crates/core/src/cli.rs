//! Command-line entry point: corpus generation, training, evaluation,
//! comparison, the pacing sweep and the finite-difference suite.
//!
//! Settings resolve as built-in defaults, then an optional `--config` file of
//! `key = value` lines, then flags. Keys are the flag names without the
//! leading dashes. Every command prints its resolved settings, in the same
//! `key = value` form, before doing any work.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::fd_suite;
use crate::glyph_data::{load_corpus, Corpus, Preset};
use crate::losses::EntropyVariant;
use crate::metrics::{compare_report, evaluate, EvalResult};
use crate::self_paced::PacingSchedule;
use crate::trainer::{
    load_checkpoint, save_checkpoint, sweep, train, Checkpoint, Init, Mode, OptimizerKind,
    TrainConfig, TrainData, PACING_GRID,
};

const OP: &str = "cli::run";

#[derive(Parser, Debug)]
#[command(name = "smile", version, about = "Glyph-strip recognizer with entropy-based domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the corpora of a preset to --out.
    GenData(Flags),
    /// Train from scratch (base), adapt (smile) or finetune a checkpoint.
    Train(Flags),
    /// Evaluate one checkpoint on --test.
    Eval(Flags),
    /// Evaluate several checkpoints (repeat --checkpoint) on --test.
    Compare(Flags),
    /// Run the pacing grid from a pre-trained --checkpoint.
    Sweep(Flags),
    /// Run the finite-difference gradient suite.
    Gradcheck(Flags),
}

#[derive(Args, Debug, Default)]
struct Flags {
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long = "entropy-variant")]
    entropy_variant: Option<String>,
    #[arg(long = "p-init")]
    p_init: Option<String>,
    #[arg(long = "p-add")]
    p_add: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long = "batch-source")]
    batch_source: Option<String>,
    #[arg(long = "batch-target")]
    batch_target: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    clip: Option<String>,
    #[arg(long)]
    source: Option<String>,
    #[arg(long)]
    target: Option<String>,
    #[arg(long)]
    test: Option<String>,
    #[arg(long)]
    checkpoint: Vec<String>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long = "eval-every")]
    eval_every: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    /// Continue the checkpoint's run (step counter and optimizer state)
    /// instead of warm-starting from its parameters.
    #[arg(long)]
    resume: bool,
    /// Allow --mode smile without a pre-trained checkpoint.
    #[arg(long = "cold-start")]
    cold_start: bool,
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub mode: Mode,
    pub lambda: f64,
    pub entropy_variant: EntropyVariant,
    pub p_init: f64,
    pub p_add: f64,
    pub steps: u64,
    pub batch_source: usize,
    pub batch_target: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    /// `None` uses the optimizer's default rate.
    pub lr: Option<f64>,
    pub clip: f64,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub checkpoint: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub eval_every: u64,
    pub preset: String,
    pub resume: bool,
    pub cold_start: bool,
    pub threads: usize,
}

impl Default for Settings {
    fn default() -> Self {
        let t = TrainConfig::default();
        Settings {
            mode: t.mode,
            lambda: t.lambda,
            entropy_variant: t.variant,
            p_init: t.pacing.p_init,
            p_add: t.pacing.p_add,
            steps: t.steps,
            batch_source: t.batch_source,
            batch_target: t.batch_target,
            seed: t.seed,
            optimizer: t.optimizer,
            lr: None,
            clip: t.clip,
            source: None,
            target: None,
            test: None,
            checkpoint: Vec::new(),
            out: None,
            eval_every: t.eval_every,
            preset: "glyph12".into(),
            resume: false,
            cold_start: false,
            threads: 1,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::contract(OP, format!("invalid value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::contract(OP, format!("invalid value {value:?} for {key}"))),
    }
}

impl Settings {
    /// Sets one key from its textual value. `checkpoint` appends.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        match key.as_str() {
            "mode" => self.mode = value.parse()?,
            "lambda" => self.lambda = parse(&key, value)?,
            "entropy-variant" => self.entropy_variant = value.parse()?,
            "p-init" => self.p_init = parse(&key, value)?,
            "p-add" => self.p_add = parse(&key, value)?,
            "steps" => self.steps = parse(&key, value)?,
            "batch-source" => self.batch_source = parse(&key, value)?,
            "batch-target" => self.batch_target = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "optimizer" => self.optimizer = value.parse()?,
            "lr" => self.lr = Some(parse(&key, value)?),
            "clip" => self.clip = parse(&key, value)?,
            "source" => self.source = Some(value.into()),
            "target" => self.target = Some(value.into()),
            "test" => self.test = Some(value.into()),
            "checkpoint" => self.checkpoint.push(value.into()),
            "out" => self.out = Some(value.into()),
            "eval-every" => self.eval_every = parse(&key, value)?,
            "preset" => self.preset = value.into(),
            "resume" => self.resume = parse_bool(&key, value)?,
            "cold-start" => self.cold_start = parse_bool(&key, value)?,
            _ => return Err(Error::contract(OP, format!("unknown setting {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file body: `key = value` lines, `#` comments.
    pub fn apply_config(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::contract(OP, format!("config line {}: expected key = value", n + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.optimizer.default_lr())
    }

    /// The settings as a config file that reproduces them.
    pub fn render(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let mut s = String::new();
        let mut line = |k: &str, v: String| writeln!(s, "{k} = {v}").unwrap();
        line("mode", self.mode.to_string());
        line("lambda", self.lambda.to_string());
        line("entropy-variant", self.entropy_variant.to_string());
        line("p-init", self.p_init.to_string());
        line("p-add", self.p_add.to_string());
        line("steps", self.steps.to_string());
        line("batch-source", self.batch_source.to_string());
        line("batch-target", self.batch_target.to_string());
        line("seed", self.seed.to_string());
        line("optimizer", self.optimizer.to_string());
        line("lr", self.lr().to_string());
        line("clip", self.clip.to_string());
        for (k, v) in [("source", &self.source), ("target", &self.target), ("test", &self.test)] {
            if let Some(p) = path(v) {
                line(k, p);
            }
        }
        for c in &self.checkpoint {
            line("checkpoint", c.display().to_string());
        }
        if let Some(p) = path(&self.out) {
            line("out", p);
        }
        line("eval-every", self.eval_every.to_string());
        line("preset", self.preset.clone());
        line("resume", self.resume.to_string());
        line("cold-start", self.cold_start.to_string());
        s.push_str(&format!("# SMILE_THREADS = {}\n", self.threads));
        s
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            mode: self.mode,
            lambda: self.lambda,
            variant: self.entropy_variant,
            pacing: PacingSchedule::new(self.p_init, self.p_add)?,
            optimizer: self.optimizer,
            lr: self.lr(),
            steps: self.steps,
            batch_source: self.batch_source,
            batch_target: self.batch_target,
            clip: self.clip,
            seed: self.seed,
            eval_every: self.eval_every,
            threads: self.threads,
            cold_start: self.cold_start,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn require<'a>(&self, p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::contract(OP, format!("--{flag} is required")))
    }

    fn single_checkpoint(&self) -> Result<Option<&Path>> {
        match self.checkpoint.as_slice() {
            [] => Ok(None),
            [one] => Ok(Some(one)),
            _ => Err(Error::contract(OP, "expected a single --checkpoint")),
        }
    }
}

fn resolve(flags: &Flags, threads: usize) -> Result<Settings> {
    let mut s = Settings {
        threads,
        ..Settings::default()
    };
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path).map_err(Error::io(OP, path))?;
        s.apply_config(&text)?;
    }
    let pairs = [
        ("mode", &flags.mode),
        ("lambda", &flags.lambda),
        ("entropy-variant", &flags.entropy_variant),
        ("p-init", &flags.p_init),
        ("p-add", &flags.p_add),
        ("steps", &flags.steps),
        ("batch-source", &flags.batch_source),
        ("batch-target", &flags.batch_target),
        ("seed", &flags.seed),
        ("optimizer", &flags.optimizer),
        ("lr", &flags.lr),
        ("clip", &flags.clip),
        ("source", &flags.source),
        ("target", &flags.target),
        ("test", &flags.test),
        ("out", &flags.out),
        ("eval-every", &flags.eval_every),
        ("preset", &flags.preset),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            s.set(k, v)?;
        }
    }
    if !flags.checkpoint.is_empty() {
        // flags replace, rather than extend, checkpoints named in the file
        s.checkpoint.clear();
        for c in &flags.checkpoint {
            s.set("checkpoint", c)?;
        }
    }
    s.resume |= flags.resume;
    s.cold_start |= flags.cold_start;
    Ok(s)
}

fn threads_from_env() -> Result<usize> {
    match std::env::var("SMILE_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(Error::contract(OP, format!("SMILE_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

fn print_eval(name: &str, r: &EvalResult) {
    println!(
        "{name}: word_acc {:.4}  char_acc {:.4}  mean_entropy {:.6}  n {}",
        r.word_accuracy, r.char_accuracy, r.mean_entropy, r.samples
    );
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    std::fs::write(path, body).map_err(Error::io(OP, path))
}

fn gen_data(s: &Settings) -> Result<()> {
    let preset = Preset::by_name(&s.preset)
        .ok_or_else(|| Error::contract(OP, format!("unknown preset {:?} (glyph12 | glyph12-skewed)", s.preset)))?;
    let out = s.require(&s.out, "out")?;
    let corpora = preset.generate(s.seed)?;
    corpora.save(out)?;
    for (name, c) in crate::glyph_data::PresetCorpora::FILES.iter().zip(corpora.splits()) {
        println!("wrote {} ({} images)", out.join(name).display(), c.len());
    }
    Ok(())
}

fn load_eval_corpus(s: &Settings) -> Result<Option<Corpus>> {
    s.test.as_deref().map(load_corpus).transpose()
}

fn train_cmd(s: &Settings) -> Result<()> {
    let cfg = s.train_config()?;
    let out = s.require(&s.out, "out")?;
    let init = match (s.single_checkpoint()?, s.resume) {
        (None, true) => return Err(Error::contract(OP, "--resume needs --checkpoint")),
        (None, false) => Init::Fresh,
        (Some(p), false) => Init::Warm(load_checkpoint(p)?),
        (Some(p), true) => Init::Resume(load_checkpoint(p)?),
    };
    let (labeled, unlabeled) = match cfg.mode {
        Mode::Base => (load_corpus(s.require(&s.source, "source")?)?, None),
        Mode::Smile => {
            let target = load_corpus(s.require(&s.target, "target")?)?;
            (load_corpus(s.require(&s.source, "source")?)?, Some(target.unlabeled()))
        }
        Mode::Finetune => (load_corpus(s.require(&s.target, "target")?)?, None),
    };
    let data = TrainData {
        labeled,
        unlabeled,
        eval: load_eval_corpus(s)?,
    };
    let outcome = train(&cfg, &data, init)?;
    std::fs::create_dir_all(out).map_err(Error::io(OP, out))?;
    save_checkpoint(&outcome.checkpoint, &out.join("checkpoint.smck"))?;
    write_file(&out.join("metrics.csv"), &outcome.metrics.to_csv())?;
    if cfg.mode == Mode::Smile {
        write_file(&out.join("selection.csv"), &outcome.selection.to_csv())?;
    }
    for row in &outcome.metrics.rows {
        let mut line = format!("step {} source_loss {:.6}", row.step, row.source_loss);
        if let Some(e) = row.entropy_loss {
            line.push_str(&format!(" entropy_loss {e:.6}"));
        }
        if let Some(e) = &row.eval {
            line.push_str(&format!(
                " word_acc {:.4} char_acc {:.4} mean_entropy {:.6}",
                e.word_accuracy, e.char_accuracy, e.mean_entropy
            ));
        }
        println!("{line}");
    }
    println!("wrote {}", out.join("checkpoint.smck").display());
    Ok(())
}

fn eval_named(s: &Settings, checkpoints: &[PathBuf]) -> Result<Vec<(String, EvalResult)>> {
    let test = load_corpus(s.require(&s.test, "test")?)?;
    checkpoints
        .iter()
        .map(|p| {
            let ck: Checkpoint = load_checkpoint(p)?;
            let r = evaluate(&ck.recognizer(), &ck.vocab, &test, s.threads)?;
            Ok((p.display().to_string(), r))
        })
        .collect()
}

fn report(s: &Settings, results: &[(String, EvalResult)]) -> Result<()> {
    let rep = compare_report(results)?;
    print!("{}", rep.text);
    if let Some(out) = &s.out {
        write_file(out, &rep.csv)?;
    }
    Ok(())
}

fn eval_cmd(s: &Settings) -> Result<()> {
    let ck = s
        .single_checkpoint()?
        .ok_or_else(|| Error::contract(OP, "--checkpoint is required"))?
        .to_path_buf();
    let results = eval_named(s, &[ck])?;
    print_eval(&results[0].0, &results[0].1);
    report(s, &results)
}

fn compare_cmd(s: &Settings) -> Result<()> {
    if s.checkpoint.is_empty() {
        return Err(Error::contract(OP, "compare needs at least one --checkpoint"));
    }
    let results = eval_named(s, &s.checkpoint)?;
    report(s, &results)
}

fn sweep_cmd(s: &Settings) -> Result<()> {
    let cfg = TrainConfig {
        mode: Mode::Smile,
        ..s.train_config()?
    };
    let pretrained = load_checkpoint(
        s.single_checkpoint()?
            .ok_or_else(|| Error::contract(OP, "sweep needs a pre-trained --checkpoint"))?,
    )?;
    let test = load_corpus(s.require(&s.test, "test")?)?;
    let data = TrainData {
        labeled: load_corpus(s.require(&s.source, "source")?)?,
        unlabeled: Some(load_corpus(s.require(&s.target, "target")?)?.unlabeled()),
        eval: None,
    };
    let rows = sweep(&PACING_GRID, &cfg, &data, &pretrained, &test)?;
    let named: Vec<(String, EvalResult)> = rows.iter().map(|r| (r.name(), r.result)).collect();
    report(s, &named)
}

fn gradcheck_cmd(s: &Settings) -> Result<bool> {
    let results = fd_suite::run_suite(s.seed)?;
    let mut ok = true;
    for r in &results {
        let pass = r.passes();
        ok &= pass;
        println!(
            "{:<26} {} max_rel_error {:.3e} over {} coordinates",
            r.name,
            if pass { "ok  " } else { "FAIL" },
            r.report.max_rel_error,
            r.report.checked
        );
    }
    println!(
        "{} of {} checks within {:e}",
        results.iter().filter(|r| r.passes()).count(),
        results.len(),
        fd_suite::TOLERANCE
    );
    Ok(ok)
}

fn dispatch(command: &Command) -> Result<i32> {
    let threads = threads_from_env()?;
    let (flags, name) = match command {
        Command::GenData(f) => (f, "gen-data"),
        Command::Train(f) => (f, "train"),
        Command::Eval(f) => (f, "eval"),
        Command::Compare(f) => (f, "compare"),
        Command::Sweep(f) => (f, "sweep"),
        Command::Gradcheck(f) => (f, "gradcheck"),
    };
    let s = resolve(flags, threads)?;
    println!("# smile {name}\n{}", s.render());
    match command {
        Command::GenData(_) => gen_data(&s)?,
        Command::Train(_) => train_cmd(&s)?,
        Command::Eval(_) => eval_cmd(&s)?,
        Command::Compare(_) => compare_cmd(&s)?,
        Command::Sweep(_) => sweep_cmd(&s)?,
        Command::Gradcheck(_) => {
            if !gradcheck_cmd(&s)? {
                return Ok(1);
            }
        }
    }
    Ok(0)
}

/// Runs the command line given by `args` (program name first) and returns
/// the process exit status.
pub fn run_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run() -> i32 {
    run_with(std::env::args_os())
}
