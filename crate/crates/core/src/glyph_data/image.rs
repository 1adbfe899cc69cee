use rand::Rng;

use super::glyphs::{GlyphSet, CELL};
use super::Vocab;
use crate::error::{Error, Result};
use crate::rng;

/// Image height in pixels; every glyph cell is one strip tall.
pub const HEIGHT: usize = CELL;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Source,
    Target,
}

impl Domain {
    pub fn tag(self) -> u8 {
        match self {
            Domain::Source => 0,
            Domain::Target => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Domain::Source),
            1 => Some(Domain::Target),
            _ => None,
        }
    }
}

/// Grayscale text-line image, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextImage {
    pub pixels: Vec<f64>,
    pub width: usize,
    pub label: Option<Vec<usize>>,
    pub domain: Domain,
}

impl TextImage {
    pub fn height(&self) -> usize {
        HEIGHT
    }

    /// Number of 8-pixel column strips.
    pub fn strips(&self) -> usize {
        self.width / CELL
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    /// Rounds every pixel to the nearest multiple of 1/255, the precision of
    /// the corpus file format.
    pub fn quantize(&mut self) {
        for p in &mut self.pixels {
            *p = (*p * 255.0).round() / 255.0;
        }
    }
}

/// Draws `label` as adjacent glyph cells on a black background,
/// right-padded to `max_len` cells.
pub fn render_string(
    label: &[usize],
    vocab: &Vocab,
    glyphs: &GlyphSet,
    max_len: usize,
) -> Result<TextImage> {
    const OP: &str = "glyph_data::render_string";
    if label.is_empty() || label.len() > max_len {
        return Err(Error::contract(
            OP,
            format!("label length {} outside 1..={max_len}", label.len()),
        ));
    }
    if let Some(&bad) = label.iter().find(|&&i| !vocab.is_char(i)) {
        return Err(Error::Index {
            op: OP,
            index: bad,
            bound: vocab.num_chars(),
        });
    }
    let width = CELL * max_len;
    let mut pixels = vec![0.0; HEIGHT * width];
    for (slot, &ch) in label.iter().enumerate() {
        let t = glyphs.get(ch);
        for r in 0..CELL {
            for c in 0..CELL {
                if t.lit(r, c) {
                    pixels[r * width + slot * CELL + c] = 1.0;
                }
            }
        }
    }
    Ok(TextImage {
        pixels,
        width,
        label: Some(label.to_vec()),
        domain: Domain::Source,
    })
}

/// Parameters of the appearance shift separating the two domains.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainConfig {
    pub salt_pepper_prob: f64,
    pub invert: bool,
    pub intensity_scale: f64,
    pub horizontal_shear: u8,
    pub background_level: f64,
    pub seed: u64,
}

impl DomainConfig {
    pub fn neutral(seed: u64) -> Self {
        DomainConfig {
            salt_pepper_prob: 0.0,
            invert: false,
            intensity_scale: 1.0,
            horizontal_shear: 0,
            background_level: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::contract("glyph_data::DomainConfig", what.to_string()));
        if !(0.0..=1.0).contains(&self.salt_pepper_prob) {
            return bad("salt_pepper_prob outside [0, 1]");
        }
        if !(self.intensity_scale > 0.0 && self.intensity_scale <= 1.0) {
            return bad("intensity_scale outside (0, 1]");
        }
        if self.horizontal_shear > 2 {
            return bad("horizontal_shear outside {0, 1, 2}");
        }
        if !(0.0..1.0).contains(&self.background_level) {
            return bad("background_level outside [0, 1)");
        }
        Ok(())
    }
}

/// Applies shear, intensity scale, background lift, inversion and
/// salt-and-pepper noise, in that order. The noise stream is keyed by
/// `(cfg.seed, sample_seed)`.
pub fn apply_domain_shift(img: &TextImage, cfg: &DomainConfig, sample_seed: u64) -> TextImage {
    let w = img.width;
    let mut px = vec![0.0; img.pixels.len()];
    let shear = cfg.horizontal_shear as usize;
    for r in 0..HEIGHT {
        // top row moves by `shear`, bottom row stays
        let offset = shear * (HEIGHT - 1 - r) / (HEIGHT - 1);
        for c in offset..w {
            px[r * w + c] = img.pixels[r * w + c - offset];
        }
    }
    let bg = cfg.background_level;
    let mut noise = rng::stream(cfg.seed, sample_seed);
    for v in &mut px {
        let mut x = *v * cfg.intensity_scale;
        x = bg + (1.0 - bg) * x;
        if cfg.invert {
            x = 1.0 - x;
        }
        if cfg.salt_pepper_prob > 0.0 && noise.gen::<f64>() < cfg.salt_pepper_prob {
            x = if noise.gen::<bool>() { 1.0 } else { 0.0 };
        }
        *v = x.clamp(0.0, 1.0);
    }
    TextImage {
        pixels: px,
        width: w,
        label: img.label.clone(),
        domain: img.domain,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (Vocab, GlyphSet) {
        let v = Vocab::new("AB".chars()).unwrap();
        let g = GlyphSet::for_vocab(&v, 0);
        (v, g)
    }

    #[test]
    fn single_char_has_three_blank_slots() {
        let (v, g) = setup();
        let img = render_string(&[0], &v, &g, 4).unwrap();
        assert_eq!((img.height(), img.width), (8, 32));
        for r in 0..8 {
            for c in 8..32 {
                assert_eq!(img.at(r, c), 0.0);
            }
        }
        assert!(img.pixels.contains(&1.0));
    }

    #[test]
    fn order_matters_and_rendering_is_deterministic() {
        let (v, g) = setup();
        let ab = render_string(&[0, 1], &v, &g, 4).unwrap();
        let ba = render_string(&[1, 0], &v, &g, 4).unwrap();
        assert_ne!(ab.pixels, ba.pixels);
        assert_eq!(ab, render_string(&[0, 1], &v, &g, 4).unwrap());
    }

    #[test]
    fn rejects_bad_labels() {
        let (v, g) = setup();
        assert!(matches!(render_string(&[], &v, &g, 4), Err(Error::Contract { .. })));
        assert!(matches!(
            render_string(&[0; 5], &v, &g, 4),
            Err(Error::Contract { .. })
        ));
        assert!(matches!(
            render_string(&[v.eos()], &v, &g, 4),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn neutral_shift_is_identity() {
        let (v, g) = setup();
        let img = render_string(&[0, 1, 0], &v, &g, 4).unwrap();
        assert_eq!(apply_domain_shift(&img, &DomainConfig::neutral(3), 9), img);
    }

    #[test]
    fn invert_maps_black_to_white() {
        let (v, g) = setup();
        let img = render_string(&[0], &v, &g, 4).unwrap();
        let cfg = DomainConfig {
            invert: true,
            ..DomainConfig::neutral(0)
        };
        let out = apply_domain_shift(&img, &cfg, 0);
        assert_eq!(out.at(0, 31), 1.0);
        assert_eq!(out.label, img.label);
    }

    #[test]
    fn shear_moves_top_row_only() {
        let (v, g) = setup();
        let img = render_string(&[0], &v, &g, 1).unwrap();
        let cfg = DomainConfig {
            horizontal_shear: 1,
            ..DomainConfig::neutral(0)
        };
        let out = apply_domain_shift(&img, &cfg, 0);
        for c in 1..8 {
            assert_eq!(out.at(0, c), img.at(0, c - 1));
        }
        for r in 1..8 {
            for c in 0..8 {
                assert_eq!(out.at(r, c), img.at(r, c));
            }
        }
        let cfg = DomainConfig {
            horizontal_shear: 2,
            ..cfg
        };
        let out = apply_domain_shift(&img, &cfg, 0);
        // offsets 2, 1, 1, 1, 0, 0, 0, 0 from top to bottom
        assert_eq!(out.at(0, 3), img.at(0, 1));
        assert_eq!(out.at(3, 3), img.at(3, 2));
        assert_eq!(out.at(4, 3), img.at(4, 3));
    }

    #[test]
    fn config_validation() {
        let mut cfg = DomainConfig::neutral(0);
        assert!(cfg.validate().is_ok());
        cfg.intensity_scale = 0.0;
        assert!(cfg.validate().is_err());
        cfg.intensity_scale = 1.0;
        cfg.horizontal_shear = 3;
        assert!(cfg.validate().is_err());
    }
}
