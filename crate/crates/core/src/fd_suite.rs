//! The finite-difference suite: every differentiable tape operation, both
//! entropy variants, the decoder loss and the full adaptation loss through
//! the recognizer.

use std::cell::OnceCell;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::engine::gradcheck::{self, GradReport};
use crate::engine::{Tape, Tensor, Var};
use crate::error::Result;
use crate::glyph_data::{apply_domain_shift, render_string, GlyphSet, Preset};
use crate::losses::{decoder_loss, smile_loss, step_entropy, EntropyVariant};
use crate::recognizer::{Architecture, Bound, Recognizer};
use crate::rng;
use crate::self_paced::{build_pool, select, selected_entropy_loss, PacingSchedule};

/// Relative-error bound every case must meet.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference half step for single operations.
pub const STEP: f64 = 1e-5;
/// Half step for model-level losses, whose forward pass accumulates more
/// rounding error.
pub const MODEL_STEP: f64 = 1e-4;

type Inputs = fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>;
type Func = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// One differentiable operation, reduced to a scalar by a fixed weighting.
#[derive(Clone, Copy)]
pub struct OpCase {
    pub name: &'static str,
    inputs: Inputs,
    f: Func,
}

impl OpCase {
    /// Checks every coordinate on inputs drawn from `seed`.
    pub fn check(&self, seed: u64) -> Result<GradReport> {
        let inputs = (self.inputs)(&mut rng::stream(seed, 0xFD));
        gradcheck::check(&inputs, STEP, self.f, gradcheck::all_coords)
    }
}

fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(lo..hi)).collect()).unwrap()
}

/// Values with magnitude in [0.1, 2) and random sign, for ops with a kink
/// at zero.
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let mut t = uniform(r, shape, 0.1, 2.0);
    for v in t.data_mut() {
        if r.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// `sum(v * w)` with fixed, non-symmetric weights `w`.
fn project(tape: &mut Tape<f64>, v: Var) -> Result<Var> {
    let shape = tape.shape(v).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| (1.3 * i as f64 + 0.5).cos()).collect();
    let w = tape.constant(Tensor::new(shape, w)?);
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn m34(r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![uniform(r, &[3, 4], -2.0, 2.0)]
}

fn two_m34(r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 4], -2.0, 2.0)]
}

fn logits36(r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![uniform(r, &[3, 6], -3.0, 3.0)]
}

pub const OP_CASES: &[OpCase] = &[
    OpCase {
        name: "matmul",
        inputs: |r| vec![uniform(r, &[3, 4], -1.0, 1.0), uniform(r, &[4, 5], -1.0, 1.0)],
        f: |t, v| {
            let y = t.matmul(v[0], v[1])?;
            project(t, y)
        },
    },
    OpCase {
        name: "add",
        inputs: two_m34,
        f: |t, v| {
            let y = t.add(v[0], v[1])?;
            project(t, y)
        },
    },
    OpCase {
        name: "sub",
        inputs: two_m34,
        f: |t, v| {
            let y = t.sub(v[0], v[1])?;
            project(t, y)
        },
    },
    OpCase {
        name: "mul",
        inputs: two_m34,
        f: |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y)
        },
    },
    OpCase {
        name: "mul_broadcast_scalar",
        inputs: |r| vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[1], -2.0, 2.0)],
        f: |t, v| {
            let y = t.mul(v[0], v[1])?;
            project(t, y)
        },
    },
    OpCase {
        name: "tanh",
        inputs: m34,
        f: |t, v| {
            let y = t.tanh(v[0]);
            project(t, y)
        },
    },
    OpCase {
        name: "sigmoid",
        inputs: m34,
        f: |t, v| {
            let y = t.sigmoid(v[0]);
            project(t, y)
        },
    },
    OpCase {
        name: "relu",
        inputs: |r| vec![away_from_zero(r, &[3, 4])],
        f: |t, v| {
            let y = t.relu(v[0]);
            project(t, y)
        },
    },
    OpCase {
        name: "exp",
        inputs: m34,
        f: |t, v| {
            let y = t.exp(v[0]);
            project(t, y)
        },
    },
    OpCase {
        name: "log",
        inputs: |r| vec![uniform(r, &[3, 4], 0.2, 3.0)],
        f: |t, v| {
            let y = t.log(v[0]);
            project(t, y)
        },
    },
    OpCase {
        name: "neg",
        inputs: m34,
        f: |t, v| {
            let y = t.neg(v[0]);
            project(t, y)
        },
    },
    OpCase {
        name: "scale",
        inputs: m34,
        f: |t, v| {
            let y = t.scale(v[0], -1.7);
            project(t, y)
        },
    },
    OpCase {
        name: "softmax",
        inputs: logits36,
        f: |t, v| {
            let y = t.softmax(v[0])?;
            project(t, y)
        },
    },
    OpCase {
        name: "sum",
        inputs: m34,
        f: |t, v| {
            let y = t.exp(v[0]);
            t.sum(y)
        },
    },
    OpCase {
        name: "mean",
        inputs: m34,
        f: |t, v| {
            let y = t.exp(v[0]);
            t.mean(y)
        },
    },
    OpCase {
        name: "sum_axis0",
        inputs: m34,
        f: |t, v| {
            let y = t.sum_axis(v[0], 0)?;
            project(t, y)
        },
    },
    OpCase {
        name: "sum_axis1",
        inputs: m34,
        f: |t, v| {
            let y = t.sum_axis(v[0], 1)?;
            project(t, y)
        },
    },
    OpCase {
        name: "mean_axis1",
        inputs: m34,
        f: |t, v| {
            let y = t.reduce(crate::engine::ReduceKind::Mean, v[0], Some(1))?;
            project(t, y)
        },
    },
    OpCase {
        name: "gather_rows",
        inputs: |r| vec![uniform(r, &[6, 4], -2.0, 2.0)],
        f: |t, v| {
            let y = t.gather_rows(v[0], &[0, 3, 3, 5])?;
            project(t, y)
        },
    },
    OpCase {
        name: "add_row",
        inputs: |r| vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[4], -2.0, 2.0)],
        f: |t, v| {
            let y = t.add_row(v[0], v[1])?;
            let y = t.tanh(y);
            project(t, y)
        },
    },
    OpCase {
        name: "mul_col",
        inputs: |r| vec![uniform(r, &[3, 4], -2.0, 2.0), uniform(r, &[3, 1], -2.0, 2.0)],
        f: |t, v| {
            let y = t.mul_col(v[0], v[1])?;
            project(t, y)
        },
    },
    OpCase {
        name: "concat_cols",
        inputs: |r| vec![uniform(r, &[3, 2], -2.0, 2.0), uniform(r, &[3, 3], -2.0, 2.0)],
        f: |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            let y = t.tanh(y);
            project(t, y)
        },
    },
    OpCase {
        name: "slice_cols",
        inputs: |r| vec![uniform(r, &[3, 5], -2.0, 2.0)],
        f: |t, v| {
            let y = t.slice_cols(v[0], 1, 4)?;
            let y = t.tanh(y);
            project(t, y)
        },
    },
    OpCase {
        name: "step_entropy_shannon",
        inputs: logits36,
        f: |t, v| {
            let p = t.softmax(v[0])?;
            let h = step_entropy(t, p, EntropyVariant::Shannon)?;
            project(t, h)
        },
    },
    OpCase {
        name: "step_entropy_pseudo_nll",
        inputs: logits36,
        f: |t, v| {
            let p = t.softmax(v[0])?;
            let h = step_entropy(t, p, EntropyVariant::PseudoNll)?;
            project(t, h)
        },
    },
];

/// Which loss the model-level check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelLoss {
    Decoder,
    /// Decoder loss on two source samples plus the selected entropy of two
    /// greedily decoded target samples (full pool selected).
    Smile,
}

/// Coordinates probed per parameter tensor in model-level checks.
pub const MODEL_COORDS: usize = 12;

/// Checks the gradient of a model loss with respect to every parameter
/// tensor on a 2-sample batch, probing up to [`MODEL_COORDS`] evenly spaced
/// coordinates per tensor.
pub fn check_model(loss: ModelLoss, seed: u64) -> Result<GradReport> {
    let preset = Preset::glyph12();
    let vocab = preset.vocab();
    let glyphs = GlyphSet::for_vocab(&vocab, seed);
    let model = Recognizer::<f64>::new(Architecture::for_vocab(&vocab, preset.l_max), seed);
    let labels: Vec<Vec<usize>> = vec![vec![3, 1, 4], vec![10]];
    let source: Vec<Vec<f64>> = labels
        .iter()
        .map(|l| render_string(l, &vocab, &glyphs, preset.l_max).map(|i| i.pixels))
        .collect::<Result<_>>()?;
    let target: Vec<Vec<f64>> = [vec![5, 9], vec![0, 11, 2, 7]]
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let img = render_string(l, &vocab, &glyphs, preset.l_max)?;
            Ok(apply_domain_shift(&img, &preset.target_shift, i as u64).pixels)
        })
        .collect::<Result<_>>()?;
    let width = preset.l_max * crate::glyph_data::CELL;
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|(_, t)| t.clone()).collect();

    let paths: OnceCell<Vec<Vec<usize>>> = OnceCell::new();
    let f = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let b = Bound::from_vars(&model.params, vars)?;
        let imgs: Vec<&[f64]> = source.iter().map(Vec::as_slice).collect();
        let labs: Vec<&[usize]> = labels.iter().map(Vec::as_slice).collect();
        let feats = model.encode(tape, &b, &imgs, width)?;
        let dec = model.decode_teacher_forced(tape, &b, &feats, &labs)?;
        let l_dec = decoder_loss(tape, &dec, &labs)?;
        if loss == ModelLoss::Decoder {
            return Ok(l_dec);
        }
        let timgs: Vec<&[f64]> = target.iter().map(Vec::as_slice).collect();
        let tfeats = model.encode(tape, &b, &timgs, width)?;
        // the analytic pass decodes greedily and records its path; the
        // perturbed passes replay that path so that argmax flips near ties
        // do not show up as gradient errors
        let tdec = match paths.get() {
            None => {
                let d = model.decode_greedy(tape, &b, &tfeats)?;
                paths.set(d.pseudo_labels.clone()).expect("first evaluation");
                d
            }
            Some(p) => model.decode_along(tape, &b, &tfeats, p)?,
        };
        let pool = build_pool(tape, &tdec, EntropyVariant::Shannon)?;
        let sel = select(&pool, &PacingSchedule::new(1.0, 0.0)?, 1)?;
        let l_ent = selected_entropy_loss(tape, &pool, &sel)?.expect("full pool selected");
        smile_loss(tape, l_dec, l_ent, 1.0)
    };
    let coords = |_: usize, numel: usize| -> Vec<usize> {
        let k = numel.min(MODEL_COORDS);
        (0..k).map(|i| i * numel / k).collect()
    };
    gradcheck::check(&inputs, MODEL_STEP, f, coords)
}

/// Named outcome of one suite entry.
#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub report: GradReport,
}

impl SuiteResult {
    pub fn passes(&self) -> bool {
        self.report.passes(TOLERANCE)
    }
}

/// Every op case once plus both model-level losses.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteResult>> {
    let mut out = Vec::new();
    for case in OP_CASES {
        out.push(SuiteResult {
            name: case.name.to_string(),
            report: case.check(seed)?,
        });
    }
    for (name, loss) in [("decoder_loss", ModelLoss::Decoder), ("smile_loss", ModelLoss::Smile)] {
        out.push(SuiteResult {
            name: name.to_string(),
            report: check_model(loss, seed)?,
        });
    }
    Ok(out)
}
