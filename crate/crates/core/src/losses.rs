//! Supervised decoder loss, per-character latent entropy, and their weighted
//! combination.

use std::fmt;
use std::str::FromStr;

use crate::engine::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::recognizer::BatchDecode;

/// How the confidence of one character prediction is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum EntropyVariant {
    /// `-sum_c p_c log p_c`.
    #[default]
    Shannon,
    /// `-log p_argmax`, the negative log-likelihood of the pseudo label.
    PseudoNll,
}

impl fmt::Display for EntropyVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntropyVariant::Shannon => "shannon",
            EntropyVariant::PseudoNll => "pseudo_nll",
        })
    }
}

impl FromStr for EntropyVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shannon" => Ok(EntropyVariant::Shannon),
            "pseudo_nll" | "pseudo-nll" => Ok(EntropyVariant::PseudoNll),
            _ => Err(Error::contract(
                "losses::EntropyVariant",
                format!("unknown entropy variant {s:?} (shannon | pseudo_nll)"),
            )),
        }
    }
}

/// Row-sum tolerance for inputs to [`step_entropy`].
pub const NORMALIZATION_TOL: f64 = 1e-6;

fn one_hot_rows<S: Scalar>(rows: usize, k: usize, hot: impl Fn(usize) -> Option<usize>) -> Tensor<S> {
    let mut data = vec![S::zero(); rows * k];
    for r in 0..rows {
        if let Some(c) = hot(r) {
            data[r * k + c] = S::one();
        }
    }
    Tensor::new(vec![rows, k], data).unwrap()
}

/// Mean over the batch of `-sum_t log p(target_t)`, where the targets are the
/// label followed by EOS.
pub fn decoder_loss<S: Scalar>(
    tape: &mut Tape<S>,
    dec: &BatchDecode,
    labels: &[&[usize]],
) -> Result<Var> {
    const OP: &str = "losses::decoder_loss";
    let batch = dec.batch_size();
    if labels.len() != batch {
        return Err(Error::contract(
            OP,
            format!("{} labels for {batch} outputs", labels.len()),
        ));
    }
    for (i, (l, &t)) in labels.iter().zip(&dec.lengths).enumerate() {
        if t != l.len() + 1 {
            return Err(Error::contract(
                OP,
                format!("sample {i}: {t} decoder rows for a label of length {}", l.len()),
            ));
        }
    }
    let k = tape.shape(dec.steps[0])[1];
    let eos = k - 2;
    let mut total: Option<Var> = None;
    for (t, &p) in dec.steps.iter().enumerate() {
        let mask = one_hot_rows::<S>(batch, k, |b| match t.cmp(&labels[b].len()) {
            std::cmp::Ordering::Less => Some(labels[b][t]),
            std::cmp::Ordering::Equal => Some(eos),
            std::cmp::Ordering::Greater => None,
        });
        let mask = tape.constant(mask);
        let lp = tape.log(p);
        let picked = tape.mul(mask, lp)?;
        let s = tape.sum(picked)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    Ok(tape.scale(total.unwrap(), -S::one() / S::from_usize_lossy(batch)))
}

/// Entropy of every row of a `[n x K]` probability matrix, as `[n x 1]`.
pub fn step_entropy<S: Scalar>(
    tape: &mut Tape<S>,
    probs: Var,
    variant: EntropyVariant,
) -> Result<Var> {
    const OP: &str = "losses::step_entropy";
    let p = tape.value(probs);
    if p.rank() != 2 {
        return Err(Error::dim(OP, format!("expected [n x K], got {:?}", p.shape())));
    }
    let tol = S::lit(NORMALIZATION_TOL);
    for r in 0..p.rows() {
        let s: S = p.row(r).iter().copied().sum();
        if (s - S::one()).abs() > tol || p.row(r).iter().any(|&v| v < S::zero()) {
            return Err(Error::contract(OP, format!("row {r} is not a distribution (sum {s})")));
        }
    }
    let lp = tape.log(probs);
    let weighted = match variant {
        EntropyVariant::Shannon => tape.mul(probs, lp)?,
        EntropyVariant::PseudoNll => {
            let p = tape.value(probs);
            let (rows, k) = (p.rows(), p.last_dim());
            let mask = one_hot_rows::<S>(rows, k, |r| {
                let row = p.row(r);
                Some((0..k).fold(0, |best, c| if row[c] > row[best] { c } else { best }))
            });
            let mask = tape.constant(mask);
            tape.mul(mask, lp)?
        }
    };
    let s = tape.sum_axis(weighted, 1)?;
    Ok(tape.neg(s))
}

/// Per-step `[B x 1]` entropies, with rows past each sample's emitted length
/// zeroed.
pub fn masked_step_entropies<S: Scalar>(
    tape: &mut Tape<S>,
    dec: &BatchDecode,
    variant: EntropyVariant,
) -> Result<Vec<Var>> {
    let batch = dec.batch_size();
    let mut out = Vec::with_capacity(dec.steps.len());
    for (t, &p) in dec.steps.iter().enumerate() {
        let h = step_entropy(tape, p, variant)?;
        if dec.lengths.iter().all(|&len| t < len) {
            out.push(h);
            continue;
        }
        let mask: Vec<S> = dec
            .lengths
            .iter()
            .map(|&len| if t < len { S::one() } else { S::zero() })
            .collect();
        let mask = tape.constant(Tensor::new(vec![batch, 1], mask)?);
        out.push(tape.mul(h, mask)?);
    }
    Ok(out)
}

/// Sum of step entropies over every emitted step of each sample, `[B x 1]`.
pub fn sequence_entropy<S: Scalar>(
    tape: &mut Tape<S>,
    dec: &BatchDecode,
    variant: EntropyVariant,
) -> Result<Var> {
    let steps = masked_step_entropies(tape, dec, variant)?;
    let mut acc = steps[0];
    for &h in &steps[1..] {
        acc = tape.add(acc, h)?;
    }
    Ok(acc)
}

/// Batch mean of [`sequence_entropy`]: the latent entropy loss without
/// self-paced selection.
pub fn latent_entropy_loss<S: Scalar>(
    tape: &mut Tape<S>,
    dec: &BatchDecode,
    variant: EntropyVariant,
) -> Result<Var> {
    let seq = sequence_entropy(tape, dec, variant)?;
    tape.mean(seq)
}

/// `l_dec + lambda * l_ent`.
pub fn smile_loss<S: Scalar>(tape: &mut Tape<S>, l_dec: Var, l_ent: Var, lambda: S) -> Result<Var> {
    const OP: &str = "losses::smile_loss";
    if lambda < S::zero() || !lambda.is_finite() {
        return Err(Error::contract(OP, format!("lambda must be finite and >= 0, got {lambda}")));
    }
    for (name, v) in [("l_dec", l_dec), ("l_ent", l_ent)] {
        let t = tape.value(v);
        if t.numel() != 1 || !t.is_finite() {
            return Err(Error::contract(OP, format!("{name} must be a finite scalar")));
        }
    }
    let weighted = tape.scale(l_ent, lambda);
    tape.add(l_dec, weighted)
}

/// Shannon entropy of a probability row, with the same log clamp as the tape.
pub fn shannon_entropy(row: &[f64]) -> f64 {
    -row.iter().map(|&p| p * p.max(1e-12).ln()).sum::<f64>()
}
