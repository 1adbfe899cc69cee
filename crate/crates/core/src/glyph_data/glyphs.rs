use rand::Rng;

use super::Vocab;
use crate::error::{Error, Result};
use crate::rng;

/// Side length of a glyph cell in pixels.
pub const CELL: usize = 8;

/// 8x8 binary bitmap; bit 7 of each row byte is the leftmost pixel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GlyphTemplate(pub [u8; CELL]);

impl GlyphTemplate {
    pub fn lit(&self, row: usize, col: usize) -> bool {
        self.0[row] & (0x80 >> col) != 0
    }

    pub fn lit_count(&self) -> u32 {
        self.0.iter().map(|r| r.count_ones()).sum()
    }
}

// 5x7 row patterns. In the 8x8 cell each stroke is drawn two pixels wide
// (columns 1-6), so a one-pixel horizontal displacement still overlaps it.
const FONT: &[(char, [u8; 7])] = &[
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
    ('A', [0b01110, 0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11100, 0b10010, 0b10001, 0b10001, 0b10001, 0b10010, 0b11100]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b10101, 0b01010]),
    ('X', [0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
];

const MIN_LIT: u32 = 8;
const MAX_LIT: u32 = 40;

fn builtin(c: char) -> Option<GlyphTemplate> {
    FONT.iter().find(|(k, _)| *k == c).map(|(_, rows)| {
        let mut t = [0u8; CELL];
        for (dst, &r) in t.iter_mut().zip(rows) {
            let r = r << 2;
            *dst = r | (r >> 1);
        }
        GlyphTemplate(t)
    })
}

/// One template per vocabulary character, in vocabulary order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GlyphSet {
    templates: Vec<GlyphTemplate>,
}

impl GlyphSet {
    /// Uses the built-in 5x7 font where it covers a character and seeded
    /// random bitmaps elsewhere.
    pub fn for_vocab(vocab: &Vocab, seed: u64) -> Self {
        let mut templates: Vec<GlyphTemplate> = Vec::with_capacity(vocab.num_chars());
        for (i, &c) in vocab.chars().iter().enumerate() {
            let t = match builtin(c).filter(|t| !templates.contains(t)) {
                Some(t) => t,
                None => {
                    let mut r = rng::stream(seed, i as u64);
                    loop {
                        let mut rows = [0u8; CELL];
                        for row in rows.iter_mut().take(7) {
                            *row = r.gen::<u8>() & 0b0111_1100;
                        }
                        let cand = GlyphTemplate(rows);
                        if (12..=30).contains(&cand.lit_count()) && !templates.contains(&cand) {
                            break cand;
                        }
                    }
                }
            };
            templates.push(t);
        }
        GlyphSet { templates }
    }

    pub fn from_templates(vocab: &Vocab, templates: Vec<GlyphTemplate>) -> Result<Self> {
        let set = GlyphSet { templates };
        set.validate(vocab)?;
        Ok(set)
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        const OP: &str = "glyph_data::GlyphSet::validate";
        if self.templates.len() != vocab.num_chars() {
            return Err(Error::contract(
                OP,
                format!(
                    "{} templates for {} characters",
                    self.templates.len(),
                    vocab.num_chars()
                ),
            ));
        }
        for (i, t) in self.templates.iter().enumerate() {
            if !(MIN_LIT..=MAX_LIT).contains(&t.lit_count()) {
                return Err(Error::contract(
                    OP,
                    format!("template {i} has {} lit pixels", t.lit_count()),
                ));
            }
            if self.templates[..i].contains(t) {
                return Err(Error::contract(OP, format!("template {i} is a duplicate")));
            }
        }
        Ok(())
    }

    pub fn get(&self, index: usize) -> &GlyphTemplate {
        &self.templates[index]
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_font_is_valid() {
        let chars: String = FONT.iter().map(|(c, _)| *c).collect();
        let vocab = Vocab::new(chars.chars()).unwrap();
        GlyphSet::for_vocab(&vocab, 0).validate(&vocab).unwrap();
    }

    #[test]
    fn procedural_templates_are_valid_and_distinct() {
        let vocab = Vocab::new("abcdefghijklmnopqrstuvwxyz".chars()).unwrap();
        let set = GlyphSet::for_vocab(&vocab, 42);
        set.validate(&vocab).unwrap();
        assert_eq!(set, GlyphSet::for_vocab(&vocab, 42));
    }

    #[test]
    fn rejects_sparse_template() {
        let vocab = Vocab::new("a".chars()).unwrap();
        let sparse = GlyphTemplate([1, 0, 0, 0, 0, 0, 0, 0]);
        assert!(GlyphSet::from_templates(&vocab, vec![sparse]).is_err());
    }
}
