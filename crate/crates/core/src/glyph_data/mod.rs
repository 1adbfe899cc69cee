//! Rendered text-line corpora for the labeled source domain and the shifted,
//! unlabeled target domain.

mod glyphs;
mod image;
mod vocab;

use std::path::Path;

use rand::Rng;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::rng;

pub use glyphs::{GlyphSet, GlyphTemplate, CELL};
pub use image::{apply_domain_shift, render_string, Domain, DomainConfig, TextImage, HEIGHT};
pub use vocab::{Vocab, MAX_CHARS};

/// How label characters are drawn.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CharSampler {
    Uniform,
    /// Character `i` has weight `1 / (i + 1)^exponent`.
    Zipf { exponent: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub count: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Image capacity in characters; images are `8 x 8*l_max`.
    pub l_max: usize,
    pub sampler: CharSampler,
    pub domain: Domain,
    /// Keep labels in the written corpus.
    pub labeled: bool,
}

/// A set of equally sized images over one vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocab,
    pub width: usize,
    pub images: Vec<TextImage>,
}

/// Pixel-only view of a corpus. Training on the target domain goes through
/// this type, which has no way to reach labels.
#[derive(Clone, Debug)]
pub struct UnlabeledImages {
    vocab: Vocab,
    width: usize,
    pixels: Vec<Vec<f64>>,
}

impl UnlabeledImages {
    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn pixels(&self, i: usize) -> &[f64] {
        &self.pixels[i]
    }
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn l_max(&self) -> usize {
        self.width / CELL
    }

    pub fn is_labeled(&self) -> bool {
        self.images.iter().all(|i| i.label.is_some())
    }

    pub fn unlabeled(&self) -> UnlabeledImages {
        UnlabeledImages {
            vocab: self.vocab.clone(),
            width: self.width,
            pixels: self.images.iter().map(|i| i.pixels.clone()).collect(),
        }
    }

    /// Drops every label, as for a target training set.
    pub fn strip_labels(mut self) -> Self {
        for img in &mut self.images {
            img.label = None;
        }
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CORPUS_MAGIC);
        w.u32(CORPUS_VERSION);
        w.u32(HEIGHT as u32);
        w.u32(self.width as u32);
        w.u32(self.images.len() as u32);
        write_vocab(&mut w, &self.vocab);
        for img in &self.images {
            w.u8(img.domain.tag());
            match &img.label {
                Some(l) => {
                    w.u8(l.len() as u8);
                    for &c in l {
                        w.u8(c as u8);
                    }
                }
                None => w.u8(0),
            }
            for &p in &img.pixels {
                w.u8((p * 255.0).round() as u8);
            }
        }
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "glyph_data::load_corpus");
        if r.take(4, "magic")? != CORPUS_MAGIC {
            return Err(Error::Format {
                op: "glyph_data::load_corpus",
                offset: 0,
                detail: "bad magic, expected \"SMCP\"".into(),
            });
        }
        let version = r.u32("version")?;
        if version != CORPUS_VERSION {
            return Err(r.error(format!("unsupported version {version}")));
        }
        let height = r.u32("image height")? as usize;
        if height != HEIGHT {
            return Err(r.error(format!("image height {height}, expected {HEIGHT}")));
        }
        let width = r.u32("image width")? as usize;
        if width == 0 || !width.is_multiple_of(CELL) {
            return Err(r.error(format!("image width {width} is not a positive multiple of {CELL}")));
        }
        let count = r.u32("record count")? as usize;
        let vocab = read_vocab(&mut r)?;
        let l_max = width / CELL;
        let mut images = Vec::with_capacity(count.min(1 << 20));
        for i in 0..count {
            let what = format!("record {i}");
            let tag = r.u8(&what)?;
            let domain =
                Domain::from_tag(tag).ok_or_else(|| r.error(format!("bad domain tag {tag}")))?;
            let len = r.u8(&what)? as usize;
            if len > l_max {
                return Err(r.error(format!("label length {len} exceeds {l_max}")));
            }
            let label = if len == 0 {
                None
            } else {
                let raw = r.take(len, &what)?;
                if let Some(&bad) = raw.iter().find(|&&c| !vocab.is_char(c as usize)) {
                    return Err(r.error(format!("label index {bad} is not a character")));
                }
                Some(raw.iter().map(|&c| c as usize).collect())
            };
            let pixels = r
                .take(HEIGHT * width, &what)?
                .iter()
                .map(|&b| b as f64 / 255.0)
                .collect();
            images.push(TextImage {
                pixels,
                width,
                label,
                domain,
            });
        }
        if !r.at_end() {
            return Err(r.error("trailing bytes after last record"));
        }
        Ok(Corpus {
            vocab,
            width,
            images,
        })
    }
}

const CORPUS_MAGIC: &[u8; 4] = b"SMCP";
const CORPUS_VERSION: u32 = 1;

pub(crate) fn write_vocab(w: &mut Writer, vocab: &Vocab) {
    w.u32(vocab.num_chars() as u32);
    for &c in vocab.chars() {
        w.u32(c as u32);
    }
}

pub(crate) fn read_vocab(r: &mut Reader) -> Result<Vocab> {
    let n = r.u32("vocab size")? as usize;
    if n == 0 || n > MAX_CHARS {
        return Err(r.error(format!("vocab size {n} outside 1..={MAX_CHARS}")));
    }
    let mut chars = Vec::with_capacity(n);
    for _ in 0..n {
        let code = r.u32("vocab symbol")?;
        chars.push(char::from_u32(code).ok_or_else(|| r.error(format!("bad code point {code}")))?);
    }
    Vocab::new(chars).map_err(|e| r.error(e.to_string()))
}

pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus.to_bytes()).map_err(Error::io("glyph_data::save_corpus", path))
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let bytes = std::fs::read(path).map_err(Error::io("glyph_data::load_corpus", path))?;
    Corpus::from_bytes(&bytes)
}

fn draw_char(r: &mut impl Rng, n: usize, sampler: CharSampler) -> usize {
    match sampler {
        CharSampler::Uniform => r.gen_range(0..n),
        CharSampler::Zipf { exponent } => {
            let weights: Vec<f64> = (0..n).map(|i| ((i + 1) as f64).powf(-exponent)).collect();
            let mut u = r.gen::<f64>() * weights.iter().sum::<f64>();
            for (i, w) in weights.iter().enumerate() {
                if u < *w {
                    return i;
                }
                u -= w;
            }
            n - 1
        }
    }
}

/// Generates `spec.count` images; sample `i` depends only on `(seed, i)`.
/// Pixels are quantized to the file precision so that saving and loading
/// reproduces the corpus exactly.
pub fn generate_corpus(
    vocab: &Vocab,
    glyphs: &GlyphSet,
    spec: &CorpusSpec,
    shift: Option<&DomainConfig>,
    seed: u64,
) -> Result<Corpus> {
    const OP: &str = "glyph_data::generate_corpus";
    if spec.count == 0 {
        return Err(Error::contract(OP, "count must be at least 1"));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len || spec.max_len > spec.l_max {
        return Err(Error::contract(
            OP,
            format!(
                "length range {}..={} invalid for l_max {}",
                spec.min_len, spec.max_len, spec.l_max
            ),
        ));
    }
    if spec.l_max > u8::MAX as usize {
        return Err(Error::contract(OP, "l_max exceeds 255"));
    }
    glyphs.validate(vocab)?;
    if let Some(cfg) = shift {
        cfg.validate()?;
    }
    let mut images = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let sample_seed = rng::derive_seed(seed, i as u64);
        let mut r = rng::stream(sample_seed, 0);
        let len = r.gen_range(spec.min_len..=spec.max_len);
        let label: Vec<usize> = (0..len)
            .map(|_| draw_char(&mut r, vocab.num_chars(), spec.sampler))
            .collect();
        let mut img = render_string(&label, vocab, glyphs, spec.l_max)?;
        if let Some(cfg) = shift {
            img = apply_domain_shift(&img, cfg, sample_seed);
        }
        img.quantize();
        img.domain = spec.domain;
        if !spec.labeled {
            img.label = None;
        }
        images.push(img);
    }
    Ok(Corpus {
        vocab: vocab.clone(),
        width: CELL * spec.l_max,
        images,
    })
}

/// Named benchmark configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub chars: &'static str,
    pub min_len: usize,
    pub max_len: usize,
    pub l_max: usize,
    pub n_source: usize,
    pub n_source_val: usize,
    pub n_target: usize,
    pub n_target_labeled: usize,
    pub n_test: usize,
    pub sampler: CharSampler,
    pub target_shift: DomainConfig,
}

impl Preset {
    /// 12 characters, lengths 1-4, clean source, noisy low-contrast sheared
    /// target.
    pub fn glyph12() -> Self {
        Preset {
            name: "glyph12",
            chars: "0123456789AB",
            min_len: 1,
            max_len: 4,
            l_max: 4,
            n_source: 5000,
            n_source_val: 1000,
            n_target: 5000,
            n_target_labeled: 5000,
            n_test: 1000,
            sampler: CharSampler::Uniform,
            target_shift: DomainConfig {
                salt_pepper_prob: 0.15,
                invert: false,
                intensity_scale: 0.7,
                horizontal_shear: 1,
                background_level: 0.1,
                seed: 0x5EED_7A26,
            },
        }
    }

    /// `glyph12` with Zipf-distributed characters in every split.
    pub fn glyph12_skewed() -> Self {
        Preset {
            name: "glyph12-skewed",
            sampler: CharSampler::Zipf { exponent: 1.0 },
            ..Self::glyph12()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "glyph12" => Some(Self::glyph12()),
            "glyph12-skewed" => Some(Self::glyph12_skewed()),
            _ => None,
        }
    }

    pub fn vocab(&self) -> Vocab {
        Vocab::new(self.chars.chars()).expect("preset vocabulary is valid")
    }

    fn spec(&self, count: usize, domain: Domain, labeled: bool) -> CorpusSpec {
        CorpusSpec {
            count,
            min_len: self.min_len,
            max_len: self.max_len,
            l_max: self.l_max,
            sampler: self.sampler,
            domain,
            labeled,
        }
    }

    /// Generates every split from one seed.
    pub fn generate(&self, seed: u64) -> Result<PresetCorpora> {
        let vocab = self.vocab();
        let glyphs = GlyphSet::for_vocab(&vocab, seed);
        let shift = DomainConfig {
            seed: rng::derive_seed(self.target_shift.seed, seed),
            ..self.target_shift.clone()
        };
        let gen = |count, domain, labeled, shift: Option<&DomainConfig>, key| {
            generate_corpus(
                &vocab,
                &glyphs,
                &self.spec(count, domain, labeled),
                shift,
                rng::derive_seed(seed, key),
            )
        };
        Ok(PresetCorpora {
            source: gen(self.n_source, Domain::Source, true, None, 1)?,
            source_val: gen(self.n_source_val, Domain::Source, true, None, 2)?,
            target: gen(self.n_target, Domain::Target, false, Some(&shift), 3)?,
            target_labeled: gen(self.n_target_labeled, Domain::Target, true, Some(&shift), 4)?,
            test: gen(self.n_test, Domain::Target, true, Some(&shift), 5)?,
        })
    }
}

/// All splits of a preset.
#[derive(Clone, Debug, PartialEq)]
pub struct PresetCorpora {
    pub source: Corpus,
    pub source_val: Corpus,
    /// Unlabeled target training images.
    pub target: Corpus,
    /// Labeled target training images, used only for supervised finetuning.
    pub target_labeled: Corpus,
    /// Sealed labeled target test set.
    pub test: Corpus,
}

impl PresetCorpora {
    pub const FILES: [&'static str; 5] = [
        "source.smcp",
        "source_val.smcp",
        "target.smcp",
        "target_labeled.smcp",
        "test.smcp",
    ];

    pub fn splits(&self) -> [&Corpus; 5] {
        [
            &self.source,
            &self.source_val,
            &self.target,
            &self.target_labeled,
            &self.test,
        ]
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(Error::io("glyph_data::save_corpus", dir))?;
        for (name, c) in Self::FILES.iter().zip(self.splits()) {
            save_corpus(c, &dir.join(name))?;
        }
        Ok(())
    }
}
