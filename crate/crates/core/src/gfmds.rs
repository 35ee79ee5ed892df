//! GF(2^w) arithmetic and a systematic MDS erasure code.
//!
//! Fields:
//! * `w = 8`:  `x^8 + x^4 + x^3 + x^2 + 1` (0x11D), generator `x` (2).
//! * `w = 16`: `x^16 + x^12 + x^3 + x + 1` (0x1100B), generator `x` (2).
//!
//! Payload bytes map to field words directly for `w = 8` and as big-endian
//! byte pairs for `w = 16`.
//!
//! Code: an `(n, k)` code with generator `[I_k ; C]`, where `C` is the
//! `(n-k) x k` Cauchy matrix `C[i][j] = 1 / (x_i + y_j)` with `y_j = j`
//! for `j in 0..k` and `x_i = k + i` for `i in 0..n-k`. Every square
//! submatrix of a Cauchy matrix is invertible, which gives the any-`k`
//! property; the Cauchy structure also gives a closed-form inverse for the
//! decode step.

use std::collections::HashSet;
use std::fmt;
use std::ops::{Add, Mul};
use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MdsError {
    #[error("invalid code parameters n={n}, k={k}: {reason}")]
    InvalidCode { n: usize, k: usize, reason: &'static str },
    #[error("expected {expected} message pieces, got {got}")]
    WrongPieceCount { expected: usize, got: usize },
    #[error("pieces must share one non-zero length that is a multiple of {width} bytes")]
    BadPieceLength { width: usize },
    #[error("need at least {needed} blocks to decode, got {got}")]
    InsufficientBlocks { needed: usize, got: usize },
    #[error("duplicate block index {0}")]
    DuplicateIndex(usize),
    #[error("block index {index} outside 1..={n}")]
    InvalidIndex { index: usize, n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WordSize {
    W8,
    W16,
}

impl WordSize {
    pub fn bits(self) -> u32 {
        match self {
            WordSize::W8 => 8,
            WordSize::W16 => 16,
        }
    }

    /// Bytes per field word.
    pub fn bytes(self) -> usize {
        match self {
            WordSize::W8 => 1,
            WordSize::W16 => 2,
        }
    }

    pub fn polynomial(self) -> u32 {
        match self {
            WordSize::W8 => 0x11D,
            WordSize::W16 => 0x1100B,
        }
    }

    /// Number of non-zero field elements, `2^w - 1`.
    pub fn order(self) -> usize {
        (1usize << self.bits()) - 1
    }
}

/// Log/antilog tables for one field.
pub struct GaloisField {
    word: WordSize,
    log: Vec<u32>,
    /// Twice the group order long so `exp[log a + log b]` needs no reduction.
    exp: Vec<u32>,
}

impl GaloisField {
    fn build(word: WordSize) -> Self {
        let order = word.order();
        let size = order + 1;
        let mut log = vec![0u32; size];
        let mut exp = vec![0u32; 2 * order];
        let mut v: u32 = 1;
        for i in 0..order {
            exp[i] = v;
            log[v as usize] = i as u32;
            v <<= 1;
            if v as usize & size != 0 {
                v ^= word.polynomial();
            }
        }
        for i in order..2 * order {
            exp[i] = exp[i - order];
        }
        GaloisField { word, log, exp }
    }

    pub fn get(word: WordSize) -> &'static GaloisField {
        static GF8: OnceLock<GaloisField> = OnceLock::new();
        static GF16: OnceLock<GaloisField> = OnceLock::new();
        match word {
            WordSize::W8 => GF8.get_or_init(|| GaloisField::build(WordSize::W8)),
            WordSize::W16 => GF16.get_or_init(|| GaloisField::build(WordSize::W16)),
        }
    }

    pub fn word(&self) -> WordSize {
        self.word
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        if a == 0 || b == 0 {
            return 0;
        }
        self.exp[(self.log[a as usize] + self.log[b as usize]) as usize]
    }

    #[inline]
    pub fn inv(&self, a: u32) -> Option<u32> {
        if a == 0 {
            return None;
        }
        let order = self.word.order() as u32;
        Some(self.exp[((order - self.log[a as usize]) % order) as usize])
    }

    #[inline]
    pub fn div(&self, a: u32, b: u32) -> Option<u32> {
        self.inv(b).map(|ib| self.mul(a, ib))
    }

    /// `generator^e`
    pub fn exp(&self, e: usize) -> u32 {
        self.exp[e % self.word.order()]
    }

    /// `dst ^= c * src`, word by word.
    pub fn mul_add_slice(&self, dst: &mut [u8], src: &[u8], c: u32) {
        debug_assert_eq!(dst.len(), src.len());
        if c == 0 {
            return;
        }
        let lc = self.log[c as usize] as usize;
        match self.word {
            WordSize::W8 => {
                for (d, &s) in dst.iter_mut().zip(src) {
                    if s != 0 {
                        *d ^= self.exp[lc + self.log[s as usize] as usize] as u8;
                    }
                }
            }
            WordSize::W16 => {
                for (d, s) in dst.chunks_exact_mut(2).zip(src.chunks_exact(2)) {
                    let sv = u16::from_be_bytes([s[0], s[1]]);
                    if sv != 0 {
                        let p = self.exp[lc + self.log[sv as usize] as usize] as u16;
                        let dv = u16::from_be_bytes([d[0], d[1]]) ^ p;
                        d.copy_from_slice(&dv.to_be_bytes());
                    }
                }
            }
        }
    }
}

/// A single field element tagged with its field.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FieldElement {
    value: u32,
    word: WordSize,
}

impl FieldElement {
    pub fn new(value: u32, word: WordSize) -> Self {
        assert!((value as usize) <= word.order(), "value {value} outside GF(2^{})", word.bits());
        FieldElement { value, word }
    }

    pub fn value(self) -> u32 {
        self.value
    }

    pub fn inverse(self) -> Option<FieldElement> {
        GaloisField::get(self.word)
            .inv(self.value)
            .map(|v| FieldElement::new(v, self.word))
    }
}

impl Add for FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: FieldElement) -> FieldElement {
        assert_eq!(self.word, rhs.word, "mixed field sizes");
        FieldElement { value: self.value ^ rhs.value, word: self.word }
    }
}

impl Mul for FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: FieldElement) -> FieldElement {
        assert_eq!(self.word, rhs.word, "mixed field sizes");
        FieldElement { value: GaloisField::get(self.word).mul(self.value, rhs.value), word: self.word }
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.value)
    }
}

/// One coded symbol; `index` is 1-based.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedSymbolBlock {
    pub index: usize,
    pub payload: Vec<u8>,
}

/// Systematic Cauchy `(n, k)` code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MdsCode {
    n: usize,
    k: usize,
    word: WordSize,
}

impl MdsCode {
    /// Picks `w = 8` when `n <= 255`, `w = 16` when `n <= 65535`.
    pub fn new(n: usize, k: usize) -> Result<Self, MdsError> {
        let word = if n <= WordSize::W8.order() { WordSize::W8 } else { WordSize::W16 };
        Self::with_word(n, k, word)
    }

    pub fn with_word(n: usize, k: usize, word: WordSize) -> Result<Self, MdsError> {
        if k == 0 {
            return Err(MdsError::InvalidCode { n, k, reason: "k must be positive" });
        }
        if k > n {
            return Err(MdsError::InvalidCode { n, k, reason: "k exceeds n" });
        }
        if n > word.order() {
            return Err(MdsError::InvalidCode { n, k, reason: "n exceeds 2^w - 1" });
        }
        Ok(MdsCode { n, k, word })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn word(&self) -> WordSize {
        self.word
    }

    /// Bytes per field word; piece lengths must be a multiple of this.
    pub fn symbol_width(&self) -> usize {
        self.word.bytes()
    }

    fn field(&self) -> &'static GaloisField {
        GaloisField::get(self.word)
    }

    /// Cauchy coefficient for parity row `p` (0-based) and message column `j`.
    #[inline]
    fn cauchy(&self, p: usize, j: usize) -> u32 {
        let x = (self.k + p) as u32;
        self.field().inv(x ^ j as u32).expect("Cauchy points are distinct")
    }

    /// Generator row for 1-based coded index `index`.
    pub fn generator_row(&self, index: usize) -> Vec<u32> {
        assert!((1..=self.n).contains(&index));
        if index <= self.k {
            (0..self.k).map(|j| u32::from(j + 1 == index)).collect()
        } else {
            (0..self.k).map(|j| self.cauchy(index - 1 - self.k, j)).collect()
        }
    }

    fn check_len(&self, len: usize) -> Result<(), MdsError> {
        if len == 0 || len % self.symbol_width() != 0 {
            return Err(MdsError::BadPieceLength { width: self.symbol_width() });
        }
        Ok(())
    }

    pub fn encode<P: AsRef<[u8]>>(&self, message: &[P]) -> Result<Vec<CodedSymbolBlock>, MdsError> {
        if message.len() != self.k {
            return Err(MdsError::WrongPieceCount { expected: self.k, got: message.len() });
        }
        let len = message[0].as_ref().len();
        if message.iter().any(|p| p.as_ref().len() != len) {
            return Err(MdsError::BadPieceLength { width: self.symbol_width() });
        }
        self.check_len(len)?;
        let gf = self.field();
        let mut out: Vec<CodedSymbolBlock> = message
            .iter()
            .enumerate()
            .map(|(i, p)| CodedSymbolBlock { index: i + 1, payload: p.as_ref().to_vec() })
            .collect();
        for p in 0..self.n - self.k {
            let mut payload = vec![0u8; len];
            for (j, piece) in message.iter().enumerate() {
                gf.mul_add_slice(&mut payload, piece.as_ref(), self.cauchy(p, j));
            }
            out.push(CodedSymbolBlock { index: self.k + p + 1, payload });
        }
        Ok(out)
    }

    /// Recovers the `k` message pieces from any `k` or more distinct blocks.
    pub fn decode(&self, blocks: &[CodedSymbolBlock]) -> Result<Vec<Vec<u8>>, MdsError> {
        let mut seen = HashSet::with_capacity(blocks.len());
        for b in blocks {
            if b.index < 1 || b.index > self.n {
                return Err(MdsError::InvalidIndex { index: b.index, n: self.n });
            }
            if !seen.insert(b.index) {
                return Err(MdsError::DuplicateIndex(b.index));
            }
        }
        if blocks.len() < self.k {
            return Err(MdsError::InsufficientBlocks { needed: self.k, got: blocks.len() });
        }
        let len = blocks[0].payload.len();
        if blocks.iter().any(|b| b.payload.len() != len) {
            return Err(MdsError::BadPieceLength { width: self.symbol_width() });
        }
        self.check_len(len)?;

        let mut message: Vec<Option<Vec<u8>>> = vec![None; self.k];
        let mut parity: Vec<&CodedSymbolBlock> = Vec::new();
        for b in blocks {
            if b.index <= self.k {
                message[b.index - 1] = Some(b.payload.clone());
            } else {
                parity.push(b);
            }
        }
        let missing: Vec<usize> = (0..self.k).filter(|&j| message[j].is_none()).collect();
        if missing.is_empty() {
            return Ok(message.into_iter().map(Option::unwrap).collect());
        }
        parity.sort_by_key(|b| b.index);
        parity.truncate(missing.len());
        let rows: Vec<usize> = parity.iter().map(|b| b.index - 1 - self.k).collect();

        let gf = self.field();
        // Strip the known message pieces out of each chosen parity symbol.
        let mut rhs: Vec<Vec<u8>> = Vec::with_capacity(rows.len());
        for (b, &p) in parity.iter().zip(&rows) {
            let mut acc = b.payload.clone();
            for (j, piece) in message.iter().enumerate() {
                if let Some(piece) = piece {
                    gf.mul_add_slice(&mut acc, piece, self.cauchy(p, j));
                }
            }
            rhs.push(acc);
        }

        let xs: Vec<u32> = rows.iter().map(|&p| (self.k + p) as u32).collect();
        let ys: Vec<u32> = missing.iter().map(|&j| j as u32).collect();
        let inverse = cauchy_inverse(gf, &xs, &ys);
        for (a, &j) in missing.iter().enumerate() {
            let mut piece = vec![0u8; len];
            for (b, r) in rhs.iter().enumerate() {
                gf.mul_add_slice(&mut piece, r, inverse[a][b]);
            }
            message[j] = Some(piece);
        }
        Ok(message.into_iter().map(Option::unwrap).collect())
    }
}

/// Inverse of the square Cauchy matrix `A[i][j] = 1 / (xs[i] + ys[j])`.
///
/// Entry `(j, i)` of the inverse is
/// `prod_m (x_i + y_m) * prod_m (x_m + y_j)
///   / ((x_i + y_j) * prod_{m != i} (x_i + x_m) * prod_{m != j} (y_j + y_m))`.
/// The result is indexed `[y index][x index]`.
pub fn cauchy_inverse(gf: &GaloisField, xs: &[u32], ys: &[u32]) -> Vec<Vec<u32>> {
    let n = xs.len();
    assert_eq!(n, ys.len());
    let prod = |it: &mut dyn Iterator<Item = u32>| it.fold(1u32, |acc, v| gf.mul(acc, v));
    let px: Vec<u32> = xs.iter().map(|&x| prod(&mut ys.iter().map(|&y| x ^ y))).collect();
    let py: Vec<u32> = ys.iter().map(|&y| prod(&mut xs.iter().map(|&x| x ^ y))).collect();
    let dx: Vec<u32> = (0..n)
        .map(|i| prod(&mut (0..n).filter(|&m| m != i).map(|m| xs[i] ^ xs[m])))
        .collect();
    let dy: Vec<u32> = (0..n)
        .map(|j| prod(&mut (0..n).filter(|&m| m != j).map(|m| ys[j] ^ ys[m])))
        .collect();
    (0..n)
        .map(|j| {
            (0..n)
                .map(|i| {
                    let num = gf.mul(px[i], py[j]);
                    let den = gf.mul(gf.mul(xs[i] ^ ys[j], dx[i]), dy[j]);
                    gf.div(num, den).expect("distinct Cauchy points")
                })
                .collect()
        })
        .collect()
}

/// Encodes `message` under `code`.
pub fn mds_encode<P: AsRef<[u8]>>(code: &MdsCode, message: &[P]) -> Result<Vec<CodedSymbolBlock>, MdsError> {
    code.encode(message)
}

/// Decodes the message of `code` from any `k` distinct blocks.
pub fn mds_decode(code: &MdsCode, blocks: &[CodedSymbolBlock]) -> Result<Vec<Vec<u8>>, MdsError> {
    code.decode(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::subsets_colex;

    #[test]
    fn tables_cover_every_nonzero_element() {
        for w in [WordSize::W8, WordSize::W16] {
            let gf = GaloisField::get(w);
            let mut seen = vec![false; w.order() + 1];
            for e in 0..w.order() {
                let v = gf.exp(e) as usize;
                assert!(!seen[v], "generator is not primitive for w={}", w.bits());
                seen[v] = true;
            }
            assert!(!seen[0]);
        }
    }

    #[test]
    fn inverses_gf256_and_gf65536() {
        for w in [WordSize::W8, WordSize::W16] {
            let gf = GaloisField::get(w);
            for a in 1..=w.order() as u32 {
                assert_eq!(gf.mul(a, gf.inv(a).unwrap()), 1);
            }
            assert_eq!(gf.inv(0), None);
        }
    }

    #[test]
    fn gf256_distributive_exhaustive() {
        let gf = GaloisField::get(WordSize::W8);
        for a in 0..256u32 {
            for b in 0..256u32 {
                for c in [0u32, 1, 2, 3, 0x53, 0x8e, 0xca, 0xff] {
                    assert_eq!(gf.mul(a, b ^ c), gf.mul(a, b) ^ gf.mul(a, c));
                }
            }
        }
    }

    #[test]
    fn field_element_ops() {
        let a = FieldElement::new(0x53, WordSize::W8);
        let b = a.inverse().unwrap();
        assert_eq!((a * b).value(), 1);
        assert_eq!((a + a).value(), 0);
        // x^8 = x^4 + x^3 + x^2 + 1 under 0x11D
        let x = FieldElement::new(2, WordSize::W8);
        let x8 = (0..7).fold(x, |acc, _| acc * x);
        assert_eq!(x8.value(), 0x1D);
    }

    #[test]
    fn cauchy_inverse_is_inverse() {
        let gf = GaloisField::get(WordSize::W8);
        let xs = [7u32, 9, 12, 40];
        let ys = [0u32, 2, 3, 5];
        let inv = cauchy_inverse(gf, &xs, &ys);
        for i in 0..4 {
            for j in 0..4 {
                // (A * inv)[i][j] = sum_m A[i][m] inv[m][j]
                let v = (0..4).fold(0, |acc, m| {
                    acc ^ gf.mul(gf.inv(xs[i] ^ ys[m]).unwrap(), inv[m][j])
                });
                assert_eq!(v, u32::from(i == j));
            }
        }
    }

    #[test]
    fn rate_one_is_identity() {
        let code = MdsCode::new(3, 3).unwrap();
        let msg = vec![vec![1u8, 2], vec![3, 4], vec![5, 6]];
        let enc = code.encode(&msg).unwrap();
        assert_eq!(enc.iter().map(|b| b.payload.clone()).collect::<Vec<_>>(), msg);
    }

    #[test]
    fn four_two_every_pair_decodes() {
        let code = MdsCode::new(4, 2).unwrap();
        let msg = vec![vec![0xA5u8], vec![0x3C]];
        let enc = code.encode(&msg).unwrap();
        assert_eq!(enc.len(), 4);
        for pair in subsets_colex(&[0, 1, 2, 3], 2) {
            let blocks: Vec<_> = pair.iter().map(|&i| enc[i as usize].clone()).collect();
            assert_eq!(code.decode(&blocks).unwrap(), msg);
        }
    }

    #[test]
    fn decode_errors() {
        let code = MdsCode::new(4, 2).unwrap();
        let enc = code.encode(&[vec![1u8], vec![2u8]]).unwrap();
        assert!(matches!(
            code.decode(&enc[..1]),
            Err(MdsError::InsufficientBlocks { needed: 2, got: 1 })
        ));
        assert!(matches!(
            code.decode(&[enc[2].clone(), enc[2].clone()]),
            Err(MdsError::DuplicateIndex(3))
        ));
        let bad = CodedSymbolBlock { index: 9, payload: vec![0] };
        assert!(matches!(code.decode(&[bad, enc[0].clone()]), Err(MdsError::InvalidIndex { .. })));
    }

    #[test]
    fn encode_errors() {
        let code = MdsCode::new(4, 2).unwrap();
        assert!(code.encode(&[vec![1u8], vec![2u8, 3]]).is_err());
        assert!(code.encode(&[vec![1u8]]).is_err());
        assert!(MdsCode::with_word(256, 2, WordSize::W8).is_err());
        assert!(MdsCode::new(65536, 2).is_err());
        assert_eq!(MdsCode::new(300, 2).unwrap().word(), WordSize::W16);
        let wide = MdsCode::new(300, 2).unwrap();
        assert!(matches!(wide.encode(&[vec![1u8], vec![2u8]]), Err(MdsError::BadPieceLength { width: 2 })));
    }

    #[test]
    fn wide_field_round_trip() {
        let code = MdsCode::new(400, 150).unwrap();
        let msg: Vec<Vec<u8>> = (0..150).map(|i| vec![i as u8, (i * 7) as u8, 0xFF, i as u8 ^ 0x5A]).collect();
        let enc = code.encode(&msg).unwrap();
        // only parity symbols plus a few systematic ones
        let mut blocks: Vec<_> = enc[250..].to_vec();
        blocks.push(enc[3].clone());
        assert_eq!(blocks.len(), 151);
        assert_eq!(code.decode(&blocks).unwrap(), msg);
    }
}
