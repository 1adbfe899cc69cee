use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::recognizer::Params;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OptimizerKind {
    Adam,
    Adadelta,
}

impl OptimizerKind {
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerKind::Adam => 1e-3,
            OptimizerKind::Adadelta => 1.0,
        }
    }

    fn slots(self) -> [&'static str; 2] {
        match self {
            OptimizerKind::Adam => ["m", "v"],
            OptimizerKind::Adadelta => ["sq_grad", "sq_delta"],
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Adadelta => "adadelta",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "adadelta" => Ok(OptimizerKind::Adadelta),
            _ => Err(Error::contract(
                "trainer::OptimizerKind",
                format!("unknown optimizer {s:?} (adam | adadelta)"),
            )),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.95;
const ADADELTA_EPS: f64 = 1e-8;

/// Per-parameter moment buffers, keyed `opt/<slot>/<param name>`.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub tensors: BTreeMap<String, Tensor<f64>>,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, params: &Params<f64>) -> Self {
        let mut tensors = BTreeMap::new();
        for (name, t) in params.iter() {
            for slot in kind.slots() {
                tensors.insert(format!("opt/{slot}/{name}"), Tensor::zeros(t.shape()));
            }
        }
        OptimizerState { kind, tensors }
    }

    /// Rebuilds state from checkpoint tensors, checking names and shapes
    /// against the parameters.
    pub fn from_tensors(params: &Params<f64>, tensors: BTreeMap<String, Tensor<f64>>) -> Result<Self> {
        const OP: &str = "trainer::load_checkpoint";
        let kind = if tensors.keys().any(|k| k.starts_with("opt/m/")) {
            OptimizerKind::Adam
        } else {
            OptimizerKind::Adadelta
        };
        let expected = OptimizerState::new(kind, params);
        if expected.tensors.len() != tensors.len() {
            return Err(Error::contract(
                OP,
                format!(
                    "{} optimizer tensors, expected {} for {kind}",
                    tensors.len(),
                    expected.tensors.len()
                ),
            ));
        }
        for (name, t) in &expected.tensors {
            match tensors.get(name) {
                None => return Err(Error::contract(OP, format!("missing optimizer tensor {name}"))),
                Some(got) if got.shape() != t.shape() => {
                    return Err(Error::dim(
                        OP,
                        format!("{name} has shape {:?}, expected {:?}", got.shape(), t.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(OptimizerState { kind, tensors })
    }

    /// Applies one update. `step` is the 1-based update count.
    pub fn apply(
        &mut self,
        params: &mut Params<f64>,
        grads: &BTreeMap<String, Vec<f64>>,
        lr: f64,
        step: u64,
    ) {
        let [a, b] = self.kind.slots();
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let mut first = self.tensors.remove(&format!("opt/{a}/{name}")).unwrap();
            let second = self.tensors.get_mut(&format!("opt/{b}/{name}")).unwrap();
            let (m, v, pd) = (first.data_mut(), second.data_mut(), p.data_mut());
            match self.kind {
                OptimizerKind::Adam => {
                    let c1 = 1.0 - ADAM_BETA1.powf(step as f64);
                    let c2 = 1.0 - ADAM_BETA2.powf(step as f64);
                    for i in 0..pd.len() {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        pd[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    }
                }
                OptimizerKind::Adadelta => {
                    for i in 0..pd.len() {
                        m[i] = ADADELTA_RHO * m[i] + (1.0 - ADADELTA_RHO) * g[i] * g[i];
                        let delta = -((v[i] + ADADELTA_EPS).sqrt() / (m[i] + ADADELTA_EPS).sqrt()) * g[i];
                        v[i] = ADADELTA_RHO * v[i] + (1.0 - ADADELTA_RHO) * delta * delta;
                        pd[i] += lr * delta;
                    }
                }
            }
            self.tensors.insert(format!("opt/{a}/{name}"), first);
        }
    }
}

/// Scales gradients in place so that their global L2 norm is at most `max_norm`
/// (disabled when `max_norm <= 0`). Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let norm = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clipping_caps_norm() {
        let mut g = BTreeMap::from([("a".to_string(), vec![3.0, 4.0])]);
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g["a"][0] - 0.6).abs() < 1e-15);
        let mut g = BTreeMap::from([("a".to_string(), vec![0.3, 0.4])]);
        clip_grad_norm(&mut g, 1.0);
        assert_eq!(g["a"], vec![0.3, 0.4]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        use crate::glyph_data::Vocab;
        use crate::recognizer::Architecture;
        let v = Vocab::new("ab".chars()).unwrap();
        let arch = Architecture::for_vocab(&v, 2);
        let mut p = Params::<f64>::init(&arch, 0);
        let before = p.get("out.b").unwrap().data().to_vec();
        let grads = BTreeMap::from([("out.b".to_string(), vec![0.5; before.len()])]);
        let mut st = OptimizerState::new(OptimizerKind::Adam, &p);
        st.apply(&mut p, &grads, 1e-3, 1);
        for (a, b) in before.iter().zip(p.get("out.b").unwrap().data()) {
            assert!((a - b - 1e-3).abs() < 1e-9);
        }
    }
}
