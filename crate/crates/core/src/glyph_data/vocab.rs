use crate::error::{Error, Result};

/// Ordered character alphabet plus the three decoder specials.
///
/// Character `i` has class index `i`; GO, EOS and PAD take the last three
/// indices `K-3`, `K-2`, `K-1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
}

/// Largest alphabet whose class indices fit in the one-byte label encoding.
pub const MAX_CHARS: usize = 253;

impl Vocab {
    pub fn new(chars: impl IntoIterator<Item = char>) -> Result<Self> {
        const OP: &str = "glyph_data::Vocab::new";
        let chars: Vec<char> = chars.into_iter().collect();
        if chars.is_empty() {
            return Err(Error::contract(OP, "empty vocabulary"));
        }
        if chars.len() > MAX_CHARS {
            return Err(Error::contract(
                OP,
                format!("{} characters exceed the limit of {MAX_CHARS}", chars.len()),
            ));
        }
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::contract(OP, format!("duplicate character {c:?}")));
            }
        }
        Ok(Vocab { chars })
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn num_chars(&self) -> usize {
        self.chars.len()
    }

    /// Total class count `K`.
    pub fn classes(&self) -> usize {
        self.chars.len() + 3
    }

    pub fn go(&self) -> usize {
        self.chars.len()
    }

    pub fn eos(&self) -> usize {
        self.chars.len() + 1
    }

    pub fn pad(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_char(&self, index: usize) -> bool {
        index < self.chars.len()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.chars.iter().position(|&v| v == c).ok_or_else(|| {
                    Error::contract("glyph_data::Vocab::encode", format!("{c:?} not in vocabulary"))
                })
            })
            .collect()
    }

    /// Maps character indices to text; specials are skipped.
    pub fn decode(&self, indices: &[usize]) -> String {
        indices
            .iter()
            .filter_map(|&i| self.chars.get(i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn special_indices_follow_characters() {
        let v = Vocab::new("abc".chars()).unwrap();
        assert_eq!(v.classes(), 6);
        assert_eq!((v.go(), v.eos(), v.pad()), (3, 4, 5));
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(Vocab::new("aba".chars()).is_err());
        assert!(Vocab::new("".chars()).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocab::new("xyz".chars()).unwrap();
        assert_eq!(v.encode("zx").unwrap(), vec![2, 0]);
        assert_eq!(v.decode(&[2, 0, v.eos()]), "zx");
        assert!(v.encode("q").is_err());
    }
}
