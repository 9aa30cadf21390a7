//! HamNoSys vocabulary and tokenization.
//!
//! Each notation symbol is one Unicode scalar. Ids `0` and `1` are reserved
//! for `PAD` and `BOS`; symbols take ids `2..=n+1` in vocabulary-file order.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
/// Longest accepted token list, BOS included.
pub const DEFAULT_MAX_TEXT_LEN: usize = 64;

const DEFAULT_VOCAB: &str = include_str!("../assets/hamnosys_vocab.txt");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<char>,
    ids: HashMap<char, usize>,
}

impl Vocabulary {
    pub fn from_symbols(symbols: Vec<char>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(symbols.len());
        for (pos, &c) in symbols.iter().enumerate() {
            if let Some(prev) = ids.insert(c, pos + 2) {
                return Err(Error::Vocabulary(format!(
                    "duplicate codepoint U+{:04X} (entries {} and {})",
                    c as u32,
                    prev - 1,
                    pos + 1
                )));
            }
        }
        Ok(Self { symbols, ids })
    }

    /// Parses the list-file format: one hex codepoint per line, `#` comments.
    pub fn parse(text: &str) -> Result<Self> {
        let mut symbols = Vec::new();
        let mut first_line: HashMap<char, usize> = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = lineno + 1;
            let cp = u32::from_str_radix(line, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| {
                    Error::Vocabulary(format!("line {lineno}: malformed codepoint {line:?}"))
                })?;
            if let Some(prev) = first_line.insert(cp, lineno) {
                return Err(Error::Vocabulary(format!(
                    "duplicate codepoint U+{:04X} on lines {prev} and {lineno}",
                    cp as u32
                )));
            }
            symbols.push(cp);
        }
        Self::from_symbols(symbols)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| Error::data(path, e.to_string()))
    }

    /// The shipped 210-symbol inventory.
    pub fn default_hamnosys() -> Self {
        Self::parse(DEFAULT_VOCAB).expect("bundled vocabulary is valid")
    }

    /// Number of notation symbols `n`, excluding PAD and BOS.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Rows needed in a token-embedding table: `n + 2`.
    pub fn embedding_size(&self) -> usize {
        self.symbols.len() + 2
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.ids.get(&c).copied()
    }

    pub fn symbol_of(&self, id: usize) -> Option<char> {
        id.checked_sub(2).and_then(|i| self.symbols.get(i)).copied()
    }

    /// `[BOS, f(s₁), …, f(s_k)]`
    pub fn tokenize(&self, s: &str) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(s.chars().count() + 1);
        out.push(BOS);
        for (position, c) in s.chars().enumerate() {
            let id = self.id_of(c).ok_or(Error::UnknownSymbol {
                codepoint: c as u32,
                position,
            })?;
            out.push(id);
        }
        Ok(out)
    }

    /// Like [`Vocabulary::tokenize`], but rejects token lists longer than
    /// `max_len` instead of truncating them.
    pub fn tokenize_bounded(&self, s: &str, max_len: usize) -> Result<Vec<usize>> {
        let ids = self.tokenize(s)?;
        if ids.len() > max_len {
            return Err(Error::InvalidArgument(format!(
                "notation has {} tokens, limit is {max_len}",
                ids.len()
            )));
        }
        Ok(ids)
    }

    /// Drops BOS/PAD and maps the remaining ids back to symbols.
    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut s = String::with_capacity(ids.len());
        for &id in ids {
            match id {
                PAD | BOS => {}
                _ => s.push(self.symbol_of(id).ok_or(Error::UnknownToken(id))?),
            }
        }
        Ok(s)
    }
}

/// Padded token ids for a batch. `mask[i][j]` is true at padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub ids: Vec<Vec<usize>>,
    pub mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

impl TokenBatch {
    pub fn max_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Right-pads every sequence with PAD to the batch maximum.
pub fn pad_batch(seqs: &[Vec<usize>]) -> Result<TokenBatch> {
    pad_batch_to(seqs, 0)
}

/// Right-pads to `max(min_len, longest sequence)`.
pub fn pad_batch_to(seqs: &[Vec<usize>], min_len: usize) -> Result<TokenBatch> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("pad_batch needs at least one sequence".into()));
    }
    let width = seqs.iter().map(Vec::len).max().unwrap_or(0).max(min_len);
    let mut ids = Vec::with_capacity(seqs.len());
    let mut mask = Vec::with_capacity(seqs.len());
    for s in seqs {
        if s.contains(&PAD) {
            return Err(Error::InvalidArgument("unpadded sequence contains PAD".into()));
        }
        let mut row = s.clone();
        row.resize(width, PAD);
        mask.push(row.iter().map(|&t| t == PAD).collect());
        ids.push(row);
    }
    Ok(TokenBatch {
        ids,
        mask,
        lengths: seqs.iter().map(Vec::len).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_symbol() -> Vocabulary {
        Vocabulary::parse("E000\nE071\n").unwrap()
    }

    #[test]
    fn ids_follow_file_order() {
        let v = two_symbol();
        assert_eq!(v.id_of('\u{E000}'), Some(2));
        assert_eq!(v.id_of('\u{E071}'), Some(3));
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn empty_file_has_only_specials() {
        let v = Vocabulary::parse("").unwrap();
        assert_eq!(v.len(), 0);
        assert_eq!(v.embedding_size(), 2);
        assert_eq!(v.tokenize("").unwrap(), vec![BOS]);
    }

    #[test]
    fn shipped_vocabulary_size() {
        let v = Vocabulary::default_hamnosys();
        assert_eq!(v.len(), 210);
        assert_eq!(v.embedding_size(), 212);
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let v = Vocabulary::parse("# header\n\nE000  # first\ne001\n").unwrap();
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn duplicate_reports_both_lines() {
        let err = Vocabulary::parse("E000\nE001\nE000\n").unwrap_err().to_string();
        assert!(err.contains("lines 1 and 3"), "{err}");
    }

    #[test]
    fn malformed_line_is_rejected() {
        let err = Vocabulary::parse("E000\nxyz\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn tokenize_fixture() {
        let v = two_symbol();
        assert_eq!(v.tokenize("").unwrap(), vec![1]);
        assert_eq!(v.tokenize("\u{E000}\u{E071}").unwrap(), vec![1, 2, 3]);
    }

    #[test]
    fn unknown_symbol_names_codepoint_and_position() {
        let err = two_symbol().tokenize("\u{E000}a").unwrap_err();
        assert!(matches!(
            err,
            Error::UnknownSymbol {
                codepoint: 0x61,
                position: 1
            }
        ));
    }

    #[test]
    fn overlong_notation_is_rejected_not_truncated() {
        let v = two_symbol();
        let s: String = std::iter::repeat_n('\u{E000}', 5).collect();
        assert!(v.tokenize_bounded(&s, 6).is_ok());
        assert!(v.tokenize_bounded(&s, 5).is_err());
    }

    #[test]
    fn font_ordered_fixture_reproduces_published_ids() {
        // Nine glyphs precede U+E000 in the font's cmap and U+E071 is the
        // 94th entry, which puts them at ids 11 and 95.
        let mut symbols: Vec<char> = (0x21..0x2A).map(|c| char::from_u32(c).unwrap()).collect();
        symbols.extend((0xE000..0xE000 + 84).map(|c| char::from_u32(c).unwrap()));
        symbols.push('\u{E071}');
        let v = Vocabulary::from_symbols(symbols).unwrap();
        let ids = v.tokenize("\u{E000}\u{E071}").unwrap();
        assert_eq!(ids, vec![1, 11, 95]);
        let batch = pad_batch_to(&[ids], 12).unwrap();
        assert_eq!(batch.ids[0], vec![1, 11, 95, 0, 0, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(batch.mask[0].iter().filter(|&&m| m).count(), 9);
        assert!(batch.mask[0][3..].iter().all(|&m| m));
    }

    #[test]
    fn pad_batch_examples() {
        let b = pad_batch(&[vec![1, 2], vec![1, 2, 3]]).unwrap();
        assert_eq!(b.ids, vec![vec![1, 2, 0], vec![1, 2, 3]]);
        assert_eq!(b.mask, vec![vec![false, false, true], vec![false, false, false]]);
        assert_eq!(b.lengths, vec![2, 3]);

        let single = pad_batch(&[vec![1, 5, 6]]).unwrap();
        assert!(single.mask[0].iter().all(|&m| !m));
        assert!(pad_batch(&[]).is_err());
    }

    #[test]
    fn detokenize_examples() {
        let v = two_symbol();
        assert_eq!(v.detokenize(&[1, 2, 3, 0, 0]).unwrap(), "\u{E000}\u{E071}");
        assert_eq!(v.detokenize(&[1]).unwrap(), "");
        assert!(matches!(v.detokenize(&[1, 4]), Err(Error::UnknownToken(4))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip(idx in proptest::collection::vec(0usize..210, 0..40)) {
                let v = Vocabulary::default_hamnosys();
                let s: String = idx.iter().map(|&i| v.symbols()[i]).collect();
                let ids = v.tokenize(&s).unwrap();
                prop_assert_eq!(v.detokenize(&ids).unwrap(), s);
            }

            #[test]
            fn mask_iff_pad_and_order_preserved(
                lens in proptest::collection::vec(0usize..12, 1..6)
            ) {
                let seqs: Vec<Vec<usize>> = lens
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| std::iter::once(BOS).chain((0..n).map(|j| 2 + (j * 7 + k) % 50)).collect())
                    .collect();
                let b = pad_batch(&seqs).unwrap();
                for (row, (ids, mask)) in b.ids.iter().zip(&b.mask).enumerate() {
                    prop_assert_eq!(ids[0], BOS);
                    prop_assert_eq!(&ids[..seqs[row].len()], &seqs[row][..]);
                    for (&t, &m) in ids.iter().zip(mask) {
                        prop_assert_eq!(m, t == PAD);
                    }
                }
            }
        }
    }
}
