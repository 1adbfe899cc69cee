//! Attention-based sequence-to-sequence text recognizer.
//!
//! The encoder cuts an image into 8-pixel column strips, projects each strip
//! and mixes the strip sequence with a (bidirectional, summed) GRU. The
//! decoder is a GRU driven by additive attention over the encoder features
//! and the embedding of the previous symbol; each step emits a softmax over
//! all `K` classes.

use std::collections::BTreeMap;

use rand::Rng;

use crate::engine::{Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::glyph_data::{Vocab, CELL, HEIGHT};
use crate::rng;

/// Layer sizes. The attention dimension equals `d_feat` and the encoder GRU
/// hidden size equals `d_feat`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub d_feat: usize,
    /// Decoder hidden size.
    pub hidden: usize,
    pub embed: usize,
    /// Class count `K` including GO, EOS and PAD.
    pub classes: usize,
    pub max_len: usize,
    pub bidirectional: bool,
}

impl Architecture {
    pub fn for_vocab(vocab: &Vocab, max_len: usize) -> Self {
        Architecture {
            d_feat: 32,
            hidden: 64,
            embed: 16,
            classes: vocab.classes(),
            max_len,
            bidirectional: true,
        }
    }

    pub fn go(&self) -> usize {
        self.classes - 3
    }

    pub fn eos(&self) -> usize {
        self.classes - 2
    }

    pub fn pad(&self) -> usize {
        self.classes - 1
    }

    fn strip_len() -> usize {
        HEIGHT * CELL
    }

    /// `(name, shape, fan_in, is_bias)` in initialization order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>, usize, bool)> {
        let mut specs = Vec::new();
        let mut gru = |prefix: &str, input: usize, hidden: usize| {
            specs.push((format!("{prefix}.wx"), vec![input, 3 * hidden], input, false));
            specs.push((format!("{prefix}.wh"), vec![hidden, 3 * hidden], hidden, false));
            specs.push((format!("{prefix}.bx"), vec![3 * hidden], 0, true));
            specs.push((format!("{prefix}.bh"), vec![3 * hidden], 0, true));
        };
        gru("enc_fwd", self.d_feat, self.d_feat);
        if self.bidirectional {
            gru("enc_bwd", self.d_feat, self.d_feat);
        }
        gru("dec", self.d_feat + self.embed, self.hidden);
        let strip = Self::strip_len();
        let mut head = vec![
            ("proj.w".to_string(), vec![strip, self.d_feat], strip, false),
            ("proj.b".to_string(), vec![self.d_feat], 0, true),
            ("att.enc".to_string(), vec![self.d_feat, self.d_feat], self.d_feat, false),
            ("att.dec".to_string(), vec![self.hidden, self.d_feat], self.hidden, false),
            ("att.v".to_string(), vec![self.d_feat, 1], self.d_feat, false),
            ("embed".to_string(), vec![self.classes, self.embed], self.classes, false),
            ("out.w".to_string(), vec![self.hidden, self.classes], self.hidden, false),
            ("out.b".to_string(), vec![self.classes], 0, true),
        ];
        head.extend(specs);
        head
    }
}

/// Named parameter tensors, iterated in canonical (sorted) name order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<S> {
    tensors: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Params<S> {
    /// Uniform `(-a, a)` weights with `a = 1/sqrt(fan_in)`, zero biases, drawn
    /// from one stream in [`Architecture::param_specs`] order.
    pub fn init(arch: &Architecture, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x1417);
        let mut tensors = BTreeMap::new();
        for (name, shape, fan_in, is_bias) in arch.param_specs() {
            let n: usize = shape.iter().product();
            let data = if is_bias {
                vec![S::zero(); n]
            } else {
                let a = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| S::lit(r.gen_range(-a..a))).collect()
            };
            tensors.insert(name, Tensor::new(shape, data).unwrap());
        }
        Params { tensors }
    }

    pub fn from_map(arch: &Architecture, tensors: BTreeMap<String, Tensor<S>>) -> Result<Self> {
        const OP: &str = "recognizer::Params::from_map";
        let specs = arch.param_specs();
        if specs.len() != tensors.len() {
            return Err(Error::contract(
                OP,
                format!("expected {} tensors, got {}", specs.len(), tensors.len()),
            ));
        }
        for (name, shape, _, _) in specs {
            match tensors.get(&name) {
                None => return Err(Error::contract(OP, format!("missing tensor {name}"))),
                Some(t) if t.shape() != shape.as_slice() => {
                    return Err(Error::dim(
                        OP,
                        format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
                    ))
                }
                Some(_) => {}
            }
        }
        Ok(Params { tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<S>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<S>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<S>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Parameters recorded on a tape.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Pairs `params`' names, in canonical order, with vars already on a
    /// tape.
    pub fn from_vars<S: Scalar>(params: &Params<S>, vars: &[Var]) -> Result<Self> {
        if vars.len() != params.len() {
            return Err(Error::contract(
                "recognizer::Bound::from_vars",
                format!("{} vars for {} parameters", vars.len(), params.len()),
            ));
        }
        Ok(Bound {
            vars: params.names().cloned().zip(vars.iter().copied()).collect(),
        })
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

/// Per-step decoder outputs for a batch, still attached to the tape.
#[derive(Clone, Debug)]
pub struct BatchDecode {
    /// One `[B x K]` probability matrix per decoding step.
    pub steps: Vec<Var>,
    /// One `[B x J]` attention matrix per decoding step.
    pub attention: Vec<Var>,
    /// Emitted length `T` of each sample; rows at `t >= T` are padding.
    pub lengths: Vec<usize>,
    /// Per-sample argmax of each emitted row.
    pub pseudo_labels: Vec<Vec<usize>>,
}

impl BatchDecode {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    /// Extracts sample `b` as plain values.
    pub fn output<S: Scalar>(&self, tape: &Tape<S>, b: usize) -> DecoderOutput<S> {
        let t_len = self.lengths[b];
        let k = tape.value(self.steps[0]).last_dim();
        let mut data = Vec::with_capacity(t_len * k);
        for &s in &self.steps[..t_len] {
            data.extend_from_slice(tape.value(s).row(b));
        }
        DecoderOutput {
            probs: Tensor::new(vec![t_len, k], data).unwrap(),
            pseudo_labels: self.pseudo_labels[b].clone(),
        }
    }
}

/// Probability rows `p(y_t | x, y_<t)` for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderOutput<S> {
    /// `[T x K]`.
    pub probs: Tensor<S>,
    pub pseudo_labels: Vec<usize>,
}

impl<S: Scalar> DecoderOutput<S> {
    pub fn len(&self) -> usize {
        self.probs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn argmax<S: Scalar>(row: &[S], allowed: impl Fn(usize) -> bool) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in row.iter().enumerate() {
        if allowed(i) && (best == usize::MAX || v > row[best]) {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Recognizer<S> {
    pub arch: Architecture,
    pub params: Params<S>,
}

impl<S: Scalar> Recognizer<S> {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        Recognizer {
            arch,
            params: Params::init(&arch, seed),
        }
    }

    /// Records every parameter as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<S>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), tape.leaf(t.clone())))
            .collect();
        Bound { vars }
    }

    /// Records every parameter as a constant (inference only).
    pub fn bind_frozen(&self, tape: &mut Tape<S>) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), tape.constant(t.clone())))
            .collect();
        Bound { vars }
    }

    fn gru(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        prefix: &str,
        x: Var,
        h: Var,
        hidden: usize,
    ) -> Result<Var> {
        let wx = b.var(&format!("{prefix}.wx"));
        let wh = b.var(&format!("{prefix}.wh"));
        let bx = b.var(&format!("{prefix}.bx"));
        let bh = b.var(&format!("{prefix}.bh"));
        let gx = tape.matmul(x, wx)?;
        let gx = tape.add_row(gx, bx)?;
        let gh = tape.matmul(h, wh)?;
        let gh = tape.add_row(gh, bh)?;
        let (xr, xz, xn) = (
            tape.slice_cols(gx, 0, hidden)?,
            tape.slice_cols(gx, hidden, 2 * hidden)?,
            tape.slice_cols(gx, 2 * hidden, 3 * hidden)?,
        );
        let (hr, hz, hn) = (
            tape.slice_cols(gh, 0, hidden)?,
            tape.slice_cols(gh, hidden, 2 * hidden)?,
            tape.slice_cols(gh, 2 * hidden, 3 * hidden)?,
        );
        let r = tape.add(xr, hr)?;
        let r = tape.sigmoid(r);
        let z = tape.add(xz, hz)?;
        let z = tape.sigmoid(z);
        let rn = tape.mul(r, hn)?;
        let n = tape.add(xn, rn)?;
        let n = tape.tanh(n);
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        tape.add(n, zd)
    }

    /// Encodes a batch of images given as row-major pixel slices of the
    /// stated width. Returns one `[B x d_feat]` feature matrix per strip.
    pub fn encode(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        images: &[&[f64]],
        width: usize,
    ) -> Result<Vec<Var>> {
        const OP: &str = "recognizer::encode";
        if images.is_empty() {
            return Err(Error::contract(OP, "empty batch"));
        }
        if width == 0 || !width.is_multiple_of(CELL) {
            return Err(Error::dim(OP, format!("width {width} is not a multiple of {CELL}")));
        }
        for img in images {
            if img.len() != HEIGHT * width {
                return Err(Error::dim(
                    OP,
                    format!(
                        "image has {} pixels, expected height {HEIGHT} x width {width}",
                        img.len()
                    ),
                ));
            }
        }
        let batch = images.len();
        let strips = width / CELL;
        let d = self.arch.d_feat;
        let (pw, pb) = (b.var("proj.w"), b.var("proj.b"));
        let mut projected = Vec::with_capacity(strips);
        for j in 0..strips {
            let mut data = Vec::with_capacity(batch * HEIGHT * CELL);
            for img in images {
                for r in 0..HEIGHT {
                    let row = &img[r * width + j * CELL..r * width + (j + 1) * CELL];
                    data.extend(row.iter().map(|&p| S::lit(p)));
                }
            }
            let x = tape.constant(Tensor::matrix(batch, HEIGHT * CELL, data)?);
            let x = tape.matmul(x, pw)?;
            let x = tape.add_row(x, pb)?;
            projected.push(tape.tanh(x));
        }
        let zeros = Tensor::zeros(&[batch, d]);
        let mut h = tape.constant(zeros.clone());
        let mut fwd = Vec::with_capacity(strips);
        for &x in &projected {
            h = self.gru(tape, b, "enc_fwd", x, h, d)?;
            fwd.push(h);
        }
        if !self.arch.bidirectional {
            return Ok(fwd);
        }
        let mut h = tape.constant(zeros);
        let mut bwd = vec![h; strips];
        for j in (0..strips).rev() {
            h = self.gru(tape, b, "enc_bwd", projected[j], h, d)?;
            bwd[j] = h;
        }
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &g)| tape.add(f, g))
            .collect()
    }

    fn attention_keys(&self, tape: &mut Tape<S>, b: &Bound, feats: &[Var]) -> Result<Vec<Var>> {
        let w = b.var("att.enc");
        feats.iter().map(|&f| tape.matmul(f, w)).collect()
    }

    /// One decoder step: returns (new state, probabilities, attention).
    fn step(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        keys: &[Var],
        feats: &[Var],
        state: Var,
        inputs: &[usize],
    ) -> Result<(Var, Var, Var)> {
        let q = tape.matmul(state, b.var("att.dec"))?;
        let v = b.var("att.v");
        let mut scores = Vec::with_capacity(keys.len());
        for &k in keys {
            let e = tape.add(k, q)?;
            let e = tape.tanh(e);
            scores.push(tape.matmul(e, v)?);
        }
        let scores = tape.concat_cols(&scores)?;
        let alpha = if keys.len() == 1 {
            // a single strip gets all the attention
            let ones = Tensor::full(&[inputs.len(), 1], S::one());
            tape.constant(ones)
        } else {
            tape.softmax(scores)?
        };
        let mut ctx = None;
        for (j, &f) in feats.iter().enumerate() {
            let a = tape.slice_cols(alpha, j, j + 1)?;
            let term = tape.mul_col(f, a)?;
            ctx = Some(match ctx {
                None => term,
                Some(c) => tape.add(c, term)?,
            });
        }
        let emb = tape.gather_rows(b.var("embed"), inputs)?;
        let x = tape.concat_cols(&[ctx.unwrap(), emb])?;
        let state = self.gru(tape, b, "dec", x, state, self.arch.hidden)?;
        let logits = tape.matmul(state, b.var("out.w"))?;
        let logits = tape.add_row(logits, b.var("out.b"))?;
        let probs = tape.softmax(logits)?;
        Ok((state, probs, alpha))
    }

    /// Decodes with ground-truth previous symbols. Sample `b` runs `L_b + 1`
    /// steps, the last one targeting EOS.
    pub fn decode_teacher_forced(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        feats: &[Var],
        labels: &[&[usize]],
    ) -> Result<BatchDecode> {
        const OP: &str = "recognizer::decode_teacher_forced";
        let batch = tape.shape(feats[0])[0];
        if labels.len() != batch {
            return Err(Error::contract(
                OP,
                format!("{} labels for a batch of {batch}", labels.len()),
            ));
        }
        for l in labels {
            if l.is_empty() || l.len() > self.arch.max_len {
                return Err(Error::contract(
                    OP,
                    format!("label length {} outside 1..={}", l.len(), self.arch.max_len),
                ));
            }
            if let Some(&s) = l.iter().find(|&&c| c >= self.arch.go()) {
                return Err(Error::contract(OP, format!("label contains special token {s}")));
            }
        }
        let lengths: Vec<usize> = labels.iter().map(|l| l.len() + 1).collect();
        let steps = *lengths.iter().max().unwrap();
        let keys = self.attention_keys(tape, b, feats)?;
        let mut state = tape.constant(Tensor::zeros(&[batch, self.arch.hidden]));
        let mut out_steps = Vec::with_capacity(steps);
        let mut attention = Vec::with_capacity(steps);
        for t in 0..steps {
            let inputs: Vec<usize> = labels
                .iter()
                .map(|l| match t {
                    0 => self.arch.go(),
                    _ => l.get(t - 1).copied().unwrap_or(self.arch.pad()),
                })
                .collect();
            let (s, p, a) = self.step(tape, b, &keys, feats, state, &inputs)?;
            state = s;
            out_steps.push(p);
            attention.push(a);
        }
        let pseudo_labels = (0..batch)
            .map(|i| {
                out_steps[..lengths[i]]
                    .iter()
                    .map(|&p| argmax(tape.value(p).row(i), |_| true))
                    .collect()
            })
            .collect();
        Ok(BatchDecode {
            steps: out_steps,
            attention,
            lengths,
            pseudo_labels,
        })
    }

    /// Autoregressive decoding feeding back the argmax over characters and
    /// EOS. A sample stops after emitting EOS or after `max_len + 1` steps.
    pub fn decode_greedy(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        feats: &[Var],
    ) -> Result<BatchDecode> {
        let batch = tape.shape(feats[0])[0];
        let (go, eos) = (self.arch.go(), self.arch.eos());
        let keys = self.attention_keys(tape, b, feats)?;
        let mut state = tape.constant(Tensor::zeros(&[batch, self.arch.hidden]));
        let mut inputs = vec![go; batch];
        let mut lengths = vec![0usize; batch];
        let mut pseudo_labels = vec![Vec::new(); batch];
        let mut steps = Vec::new();
        let mut attention = Vec::new();
        for _ in 0..=self.arch.max_len {
            let (s, p, a) = self.step(tape, b, &keys, feats, state, &inputs)?;
            state = s;
            steps.push(p);
            attention.push(a);
            let probs = tape.value(p);
            for i in 0..batch {
                if lengths[i] > 0 {
                    continue;
                }
                let c = argmax(probs.row(i), |c| c < go || c == eos);
                pseudo_labels[i].push(c);
                inputs[i] = c;
                if c == eos {
                    lengths[i] = pseudo_labels[i].len();
                }
            }
            if lengths.iter().all(|&l| l > 0) {
                break;
            }
        }
        for (len, p) in lengths.iter_mut().zip(&pseudo_labels) {
            if *len == 0 {
                *len = p.len();
            }
        }
        Ok(BatchDecode {
            steps,
            attention,
            lengths,
            pseudo_labels,
        })
    }

    /// Replays fixed emitted paths (as recorded in
    /// [`BatchDecode::pseudo_labels`] by [`Self::decode_greedy`]): step `t`
    /// feeds `path[t - 1]`, and a finished sample keeps feeding its last
    /// symbol. On its own greedy paths this reproduces `decode_greedy`
    /// exactly, with the argmax decisions held fixed.
    pub fn decode_along(
        &self,
        tape: &mut Tape<S>,
        b: &Bound,
        feats: &[Var],
        paths: &[Vec<usize>],
    ) -> Result<BatchDecode> {
        const OP: &str = "recognizer::decode_along";
        let batch = tape.shape(feats[0])[0];
        if paths.len() != batch {
            return Err(Error::contract(OP, format!("{} paths for a batch of {batch}", paths.len())));
        }
        for p in paths {
            if p.is_empty() || p.len() > self.arch.max_len + 1 {
                return Err(Error::contract(OP, format!("path length {} outside 1..={}", p.len(), self.arch.max_len + 1)));
            }
            if p.iter().any(|&c| c >= self.arch.classes || c == self.arch.go() || c == self.arch.pad()) {
                return Err(Error::contract(OP, "paths may hold only characters and EOS"));
            }
        }
        let lengths: Vec<usize> = paths.iter().map(Vec::len).collect();
        let keys = self.attention_keys(tape, b, feats)?;
        let mut state = tape.constant(Tensor::zeros(&[batch, self.arch.hidden]));
        let mut steps = Vec::new();
        let mut attention = Vec::new();
        for t in 0..*lengths.iter().max().unwrap() {
            let inputs: Vec<usize> = paths
                .iter()
                .map(|p| match t {
                    0 => self.arch.go(),
                    _ => p[(t - 1).min(p.len() - 1)],
                })
                .collect();
            let (s, p, a) = self.step(tape, b, &keys, feats, state, &inputs)?;
            state = s;
            steps.push(p);
            attention.push(a);
        }
        Ok(BatchDecode {
            steps,
            attention,
            lengths,
            pseudo_labels: paths.to_vec(),
        })
    }

    /// Greedy predictions for a batch: (character indices without EOS,
    /// decoder output) per image.
    pub fn infer(
        &self,
        images: &[&[f64]],
        width: usize,
    ) -> Result<Vec<(Vec<usize>, DecoderOutput<S>)>> {
        let mut tape = Tape::new();
        let b = self.bind_frozen(&mut tape);
        let feats = self.encode(&mut tape, &b, images, width)?;
        let dec = self.decode_greedy(&mut tape, &b, &feats)?;
        let eos = self.arch.eos();
        Ok((0..images.len())
            .map(|i| {
                let out = dec.output(&tape, i);
                // a sample that never emits EOS runs L_max + 1 steps; the
                // transcription keeps the first L_max characters
                let chars = out
                    .pseudo_labels
                    .iter()
                    .copied()
                    .filter(|&c| c != eos)
                    .take(self.arch.max_len)
                    .collect();
                (chars, out)
            })
            .collect())
    }

    /// Greedy transcription of one image.
    pub fn predict(&self, pixels: &[f64], width: usize, vocab: &Vocab) -> Result<String> {
        let (chars, _) = self.infer(&[pixels], width)?.pop().unwrap();
        Ok(vocab.decode(&chars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glyph_data::{render_string, GlyphSet, Preset};

    fn setup() -> (Vocab, GlyphSet, Recognizer<f64>) {
        let v = Preset::glyph12().vocab();
        let g = GlyphSet::for_vocab(&v, 0);
        let r = Recognizer::new(Architecture::for_vocab(&v, 4), 11);
        (v, g, r)
    }

    #[test]
    fn encode_yields_one_feature_per_strip() {
        let (v, g, r) = setup();
        let img = render_string(&[1, 2], &v, &g, 4).unwrap();
        let mut tape = Tape::new();
        let b = r.bind(&mut tape);
        let f = r.encode(&mut tape, &b, &[&img.pixels], img.width).unwrap();
        assert_eq!(f.len(), 4);
        assert_eq!(tape.shape(f[0]), &[1, 32]);
    }

    #[test]
    fn encode_rejects_wrong_height() {
        let (_, _, r) = setup();
        let mut tape = Tape::new();
        let b = r.bind(&mut tape);
        let px = vec![0.0; 7 * 32];
        assert!(matches!(
            r.encode(&mut tape, &b, &[&px], 32),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn swapping_strips_changes_features() {
        let (v, g, r) = setup();
        let ab = render_string(&[1, 2, 3, 3], &v, &g, 4).unwrap();
        let ba = render_string(&[2, 1, 3, 3], &v, &g, 4).unwrap();
        let mut tape = Tape::new();
        let b = r.bind_frozen(&mut tape);
        let f = r.encode(&mut tape, &b, &[&ab.pixels, &ba.pixels], 32).unwrap();
        // strips 2 and 3 hold identical glyphs but see different context
        let row = |t: &Tape<f64>, v: Var, i: usize| t.value(v).row(i).to_vec();
        assert_ne!(row(&tape, f[2], 0), row(&tape, f[2], 1));
        assert_ne!(row(&tape, f[3], 0), row(&tape, f[3], 1));
    }

    #[test]
    fn blank_image_is_deterministic() {
        let (_, _, r) = setup();
        let px = vec![0.0; 8 * 32];
        let run = || {
            let mut tape = Tape::new();
            let b = r.bind_frozen(&mut tape);
            let f = r.encode(&mut tape, &b, &[&px], 32).unwrap();
            tape.value(f[3]).clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn teacher_forcing_shapes_and_attention() {
        let (v, g, r) = setup();
        let img = render_string(&[1, 2, 3], &v, &g, 4).unwrap();
        let mut tape = Tape::new();
        let b = r.bind(&mut tape);
        let f = r.encode(&mut tape, &b, &[&img.pixels], 32).unwrap();
        let d = r
            .decode_teacher_forced(&mut tape, &b, &f, &[&[1, 2, 3]])
            .unwrap();
        let out = d.output(&tape, 0);
        assert_eq!(out.probs.shape(), &[4, v.classes()]);
        for &a in &d.attention {
            let s: f64 = tape.value(a).row(0).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn teacher_forcing_rejects_specials() {
        let (v, g, r) = setup();
        let img = render_string(&[1], &v, &g, 4).unwrap();
        let mut tape = Tape::new();
        let b = r.bind(&mut tape);
        let f = r.encode(&mut tape, &b, &[&img.pixels], 32).unwrap();
        let res = r.decode_teacher_forced(&mut tape, &b, &f, &[&[1, v.eos()]]);
        assert!(matches!(res, Err(Error::Contract { .. })));
    }

    #[test]
    fn forced_eos_stops_immediately() {
        let (v, g, mut r) = setup();
        let bias = r.params.get_mut("out.b").unwrap();
        bias.data_mut()[v.eos()] = 100.0;
        let img = render_string(&[1, 2], &v, &g, 4).unwrap();
        let res = r.infer(&[&img.pixels], 32).unwrap();
        assert_eq!(res[0].1.len(), 1);
        assert_eq!(res[0].1.pseudo_labels, vec![v.eos()]);
        assert_eq!(r.predict(&img.pixels, 32, &v).unwrap(), "");
    }

    #[test]
    fn greedy_never_feeds_go_or_pad_and_is_capped() {
        let (v, g, mut r) = setup();
        let bias = r.params.get_mut("out.b").unwrap();
        bias.data_mut()[v.go()] = 100.0;
        bias.data_mut()[v.pad()] = 90.0;
        let img = render_string(&[1, 2], &v, &g, 4).unwrap();
        let res = r.infer(&[&img.pixels], 32).unwrap();
        let (chars, out) = &res[0];
        assert!(out.len() <= 5);
        assert!(chars.len() <= 4);
        assert!(out.pseudo_labels.iter().all(|&c| c < v.go() || c == v.eos()));
    }

    #[test]
    fn replaying_greedy_paths_reproduces_greedy() {
        let (v, g, r) = setup();
        let imgs: Vec<Vec<f64>> = [vec![1, 2], vec![3, 4, 5, 6], vec![7]]
            .iter()
            .map(|l| render_string(l, &v, &g, 4).unwrap().pixels)
            .collect();
        let refs: Vec<&[f64]> = imgs.iter().map(Vec::as_slice).collect();
        let mut tape = Tape::new();
        let b = r.bind_frozen(&mut tape);
        let feats = r.encode(&mut tape, &b, &refs, 32).unwrap();
        let greedy = r.decode_greedy(&mut tape, &b, &feats).unwrap();
        let replay = r.decode_along(&mut tape, &b, &feats, &greedy.pseudo_labels).unwrap();
        assert_eq!(replay.lengths, greedy.lengths);
        for i in 0..3 {
            assert_eq!(replay.output(&tape, i), greedy.output(&tape, i));
        }
        assert!(r.decode_along(&mut tape, &b, &feats, &[vec![v.go()], vec![0], vec![0]]).is_err());
    }

    #[test]
    fn fresh_model_is_near_uniform() {
        let (v, g, r) = setup();
        let img = render_string(&[1, 2, 3, 4], &v, &g, 4).unwrap();
        let mut tape = Tape::new();
        let b = r.bind_frozen(&mut tape);
        let f = r.encode(&mut tape, &b, &[&img.pixels], 32).unwrap();
        let d = r
            .decode_teacher_forced(&mut tape, &b, &f, &[&[1, 2, 3, 4]])
            .unwrap();
        let out = d.output(&tape, 0);
        let ln_k = (v.classes() as f64).ln();
        for t in 0..out.len() {
            let h: f64 = out.probs.row(t).iter().map(|&p| -p * p.ln()).sum();
            assert!((h - ln_k).abs() / ln_k < 0.05, "row {t}: {h} vs {ln_k}");
        }
    }

    #[test]
    fn single_precision_forward_runs() {
        let v = Preset::glyph12().vocab();
        let g = GlyphSet::for_vocab(&v, 0);
        let r: Recognizer<f32> = Recognizer::new(Architecture::for_vocab(&v, 4), 11);
        let img = render_string(&[5, 6], &v, &g, 4).unwrap();
        let res = r.infer(&[&img.pixels], 32).unwrap();
        let s: f32 = res[0].1.probs.row(0).iter().sum();
        assert!((s - 1.0).abs() < 1e-5);
    }
}
