//! Dense vector and matrix kernels, binary codes, and Hamming-space identities.
//!
//! Real-valued vectors are plain `&[f64]` slices. Hash codes have two forms:
//! [`BinaryCode`] keeps one `i8` per bit (entries are exactly `-1` or `+1`) and
//! is what the losses see, while [`PackedCode`] stores one bit per position in
//! `u64` words for retrieval. The two convert into each other losslessly.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_len(rows * cols, data.len())?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows. An empty iterator gives a `0 x 0` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            check_len(cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copies the listed rows, in order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `self += other`, element-wise.
    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Standard dot product of two equal-length vectors.
pub fn inner_product(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(dot(a, b))
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
///
/// A zero-norm argument is an error rather than a silent zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::DegenerateVector("left operand"));
    }
    if nb == 0.0 {
        return Err(Error::DegenerateVector("right operand"));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Hamming distance implied by the inner product of two `±1` codes of length `k`.
pub fn hamming_from_inner(k: usize, ip: f64) -> Result<f64> {
    let kf = k as f64;
    if !ip.is_finite() || ip.abs() > kf {
        return Err(Error::Domain(format!("|inner product| = {} exceeds code length {k}", ip.abs())));
    }
    Ok((kf - ip) / 2.0)
}

/// A hash code with entries in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BinaryCode(Vec<i8>);

impl BinaryCode {
    /// Wraps a sign vector, rejecting anything other than `-1`/`+1` entries.
    pub fn new(bits: Vec<i8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyInput("binary code"));
        }
        if let Some(b) = bits.iter().find(|&&b| b != 1 && b != -1) {
            return Err(Error::Domain(format!("code entry {b} is not -1 or +1")));
        }
        Ok(Self(bits))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bits(&self) -> &[i8] {
        &self.0
    }

    pub fn to_reals(&self) -> Vec<f64> {
        self.0.iter().map(|&b| f64::from(b)).collect()
    }

    pub fn pack(&self) -> PackedCode {
        let mut words = vec![0u64; self.0.len().div_ceil(64)];
        for (i, &b) in self.0.iter().enumerate() {
            if b > 0 {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        PackedCode { bits: self.0.len(), words }
    }
}

/// Entry-wise sign with `sign(0) = +1`.
pub fn sign_binarize(h: &[f64]) -> BinaryCode {
    BinaryCode(h.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect())
}

/// Number of positions where two codes differ.
pub fn hamming_distance(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    check_len(a.len(), b.len())?;
    Ok(a.0.iter().zip(&b.0).filter(|(x, y)| x != y).count() as u32)
}

/// Bit-packed hash code; bit `i` set means entry `i` is `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PackedCode {
    bits: usize,
    words: Vec<u64>,
}

impl PackedCode {
    pub fn len(&self) -> usize {
        self.bits
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn unpack(&self) -> BinaryCode {
        BinaryCode(
            (0..self.bits)
                .map(|i| if self.words[i / 64] >> (i % 64) & 1 == 1 { 1 } else { -1 })
                .collect(),
        )
    }

    pub fn hamming(&self, other: &PackedCode) -> Result<u32> {
        if self.bits != other.bits {
            return Err(Error::CodeLength(self.bits, other.bits));
        }
        Ok(self.hamming_unchecked(other))
    }

    pub(crate) fn hamming_unchecked(&self, other: &PackedCode) -> u32 {
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones()).sum()
    }
}
