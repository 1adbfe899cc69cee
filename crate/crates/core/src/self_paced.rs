//! Class-balanced self-paced selection of confident target predictions.
//!
//! Every emitted target character prediction enters a pool, grouped by its
//! pseudo class (the argmax of its row). Within each class the lowest-entropy
//! `ceil(n_c * P_t)` entries are kept, where `P_t = min(P_init + P_add*t, 1)`
//! grows with the optimizer step. The entropy term is the mean over all kept
//! entries.

use std::collections::BTreeMap;

use crate::engine::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::losses::{masked_step_entropies, EntropyVariant};
use crate::recognizer::BatchDecode;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PacingSchedule {
    pub p_init: f64,
    pub p_add: f64,
}

impl PacingSchedule {
    pub fn new(p_init: f64, p_add: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_init) || p_add < 0.0 || !p_add.is_finite() {
            return Err(Error::contract(
                "self_paced::PacingSchedule",
                format!("need p_init in [0, 1] and p_add >= 0, got ({p_init}, {p_add})"),
            ));
        }
        Ok(PacingSchedule { p_init, p_add })
    }

    /// `min(p_init + p_add * t, 1)`.
    pub fn portion_at(&self, t: u64) -> f64 {
        (self.p_init + self.p_add * t as f64).min(1.0)
    }
}

/// Products this close to an integer are treated as that integer, so that
/// decimal portions such as 0.07 give the quota one would write by hand.
const QUOTA_SNAP: f64 = 1e-9;

/// `ceil(n * portion)`.
pub fn quota(n: usize, portion: f64) -> usize {
    let x = n as f64 * portion;
    let r = x.round();
    let k = if (x - r).abs() < QUOTA_SNAP { r } else { x.ceil() };
    (k.max(0.0) as usize).min(n)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoolEntry<S> {
    pub sample: usize,
    pub timestep: usize,
    pub class: usize,
    pub entropy: S,
    /// `[B x 1]` entropy node on the tape holding this entry at row `sample`.
    pub node: Var,
}

/// All character-level predictions of one target batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionPool<S> {
    pub entries: Vec<PoolEntry<S>>,
}

impl<S: Scalar> PredictionPool<S> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entry indices per pseudo class.
    pub fn by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            groups.entry(e.class).or_default().push(i);
        }
        groups
    }
}

/// One entry per emitted timestep of every sample, classed by the decoder's
/// pseudo label.
pub fn build_pool<S: Scalar>(
    tape: &mut Tape<S>,
    dec: &BatchDecode,
    variant: EntropyVariant,
) -> Result<PredictionPool<S>> {
    let steps = masked_step_entropies(tape, dec, variant)?;
    let mut entries = Vec::new();
    for (sample, (&len, labels)) in dec.lengths.iter().zip(&dec.pseudo_labels).enumerate() {
        for (timestep, &node) in steps[..len].iter().enumerate() {
            entries.push(PoolEntry {
                sample,
                timestep,
                class: labels[timestep],
                entropy: tape.value(node).data()[sample],
                node,
            });
        }
    }
    Ok(PredictionPool { entries })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSelection {
    pub class: usize,
    pub pool_size: usize,
    pub quota: usize,
    /// Entry indices, most confident first.
    pub chosen: Vec<usize>,
    /// Mean entropy of the chosen entries; 0 when none were chosen.
    pub mean_chosen: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionResult {
    pub portion: f64,
    pub classes: Vec<ClassSelection>,
    pub pool_size: usize,
    /// Mean entropy of the chosen entries; 0 when nothing was chosen.
    pub mean_chosen: f64,
}

impl SelectionResult {
    pub fn chosen_count(&self) -> usize {
        self.classes.iter().map(|c| c.chosen.len()).sum()
    }

    pub fn chosen(&self) -> impl Iterator<Item = usize> + '_ {
        self.classes.iter().flat_map(|c| c.chosen.iter().copied())
    }

    /// Fraction of the pool that was selected.
    pub fn realized_portion(&self) -> f64 {
        if self.pool_size == 0 {
            0.0
        } else {
            self.chosen_count() as f64 / self.pool_size as f64
        }
    }
}

/// Per pseudo class, keeps the `ceil(n_c * P_t)` entries with the smallest
/// entropy. Ties are broken by `(sample, timestep)`.
pub fn select<S: Scalar>(
    pool: &PredictionPool<S>,
    schedule: &PacingSchedule,
    t: u64,
) -> Result<SelectionResult> {
    if pool.is_empty() {
        return Err(Error::contract("self_paced::select", "empty prediction pool"));
    }
    let portion = schedule.portion_at(t);
    let mut classes = Vec::new();
    let mut total = 0.0;
    let mut count = 0usize;
    for (class, mut members) in pool.by_class() {
        members.sort_by(|&a, &b| {
            let (ea, eb) = (&pool.entries[a], &pool.entries[b]);
            ea.entropy
                .partial_cmp(&eb.entropy)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(ea.sample.cmp(&eb.sample))
                .then(ea.timestep.cmp(&eb.timestep))
        });
        let k = quota(members.len(), portion);
        let chosen: Vec<usize> = members[..k].to_vec();
        let class_total: f64 = chosen
            .iter()
            .map(|&i| pool.entries[i].entropy.to_f64().unwrap())
            .sum();
        total += class_total;
        count += k;
        classes.push(ClassSelection {
            class,
            pool_size: members.len(),
            quota: k,
            chosen,
            mean_chosen: if k == 0 { 0.0 } else { class_total / k as f64 },
        });
    }
    Ok(SelectionResult {
        portion,
        classes,
        pool_size: pool.len(),
        mean_chosen: if count == 0 { 0.0 } else { total / count as f64 },
    })
}

/// Mean entropy of the chosen entries, attached to the tape. `None` when the
/// selection is empty and the entropy term must be skipped.
pub fn selected_entropy_loss<S: Scalar>(
    tape: &mut Tape<S>,
    pool: &PredictionPool<S>,
    sel: &SelectionResult,
) -> Result<Option<Var>> {
    let n = sel.chosen_count();
    if n == 0 {
        return Ok(None);
    }
    let w = S::one() / S::from_usize_lossy(n);
    let mut weights: BTreeMap<Var, Vec<S>> = BTreeMap::new();
    for i in sel.chosen() {
        let e = &pool.entries[i];
        let rows = tape.shape(e.node)[0];
        weights.entry(e.node).or_insert_with(|| vec![S::zero(); rows])[e.sample] += w;
    }
    let mut total: Option<Var> = None;
    for (node, wv) in weights {
        let rows = wv.len();
        let mask = tape.constant(Tensor::new(vec![rows, 1], wv)?);
        let weighted = tape.mul(node, mask)?;
        let s = tape.sum(weighted)?;
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    Ok(total)
}
