//! Out-of-sample encoding and the packed binary code layout.
//!
//! Codes are packed into 64-bit words: bit `b` of word `w` holds code
//! position `64 w + b`, a set bit means +1 and a clear bit -1. Padding bits
//! past the code length are always zero so XOR + popcount never counts them.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::KernelModel;
use crate::model::{sign, FeatureMatrix, Modality, ModelState};

pub const WORD_BITS: usize = 64;

pub fn words_per_code(bits: usize) -> usize {
    bits.div_ceil(WORD_BITS)
}

/// `count` codes of `bits` bits each, stored code-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedCodes {
    bits: usize,
    count: usize,
    words: Vec<u64>,
}

impl PackedCodes {
    /// Wraps raw words, checking the size and that padding bits are clear.
    pub fn from_words(bits: usize, count: usize, words: Vec<u64>) -> Result<Self> {
        if bits == 0 {
            return Err(Error::InvalidParam("code length must be at least 1 bit".into()));
        }
        let per = words_per_code(bits);
        if words.len() != per * count {
            return Err(Error::DimensionMismatch {
                symbol: "packed code words".into(),
                expected: (per * count).to_string(),
                actual: words.len().to_string(),
            });
        }
        let tail = bits % WORD_BITS;
        if tail != 0 {
            let mask = !0u64 << tail;
            if let Some(i) = words.chunks(per).position(|c| c[per - 1] & mask != 0) {
                return Err(Error::InvalidParam(format!("code {i} has nonzero padding bits")));
            }
        }
        Ok(Self { bits, count, words })
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn words_per_code(&self) -> usize {
        words_per_code(self.bits)
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn code(&self, i: usize) -> &[u64] {
        let per = self.words_per_code();
        &self.words[i * per..(i + 1) * per]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[u64]> {
        self.words.chunks(self.words_per_code())
    }

    /// Codes at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> PackedCodes {
        let words = indices.iter().flat_map(|&i| self.code(i).iter().copied()).collect();
        PackedCodes {
            bits: self.bits,
            count: indices.len(),
            words,
        }
    }
}

/// Packs an `r x n` matrix of +1/-1 entries, one code per column.
pub fn pack(signs: &DMatrix<f64>) -> Result<PackedCodes> {
    let (bits, count) = signs.shape();
    if bits == 0 {
        return Err(Error::InvalidParam("code length must be at least 1 bit".into()));
    }
    let per = words_per_code(bits);
    let mut words = vec![0u64; per * count];
    for (col, column) in signs.column_iter().enumerate() {
        let code = &mut words[col * per..(col + 1) * per];
        for (row, &v) in column.iter().enumerate() {
            if v == 1.0 {
                code[row / WORD_BITS] |= 1u64 << (row % WORD_BITS);
            } else if v != -1.0 {
                return Err(Error::NonBinaryInput { row, col, value: v });
            }
        }
    }
    Ok(PackedCodes { bits, count, words })
}

pub fn unpack(codes: &PackedCodes) -> DMatrix<f64> {
    let bits = codes.bits;
    DMatrix::from_fn(bits, codes.count, |row, col| {
        let word = codes.code(col)[row / WORD_BITS];
        if word >> (row % WORD_BITS) & 1 == 1 {
            1.0
        } else {
            -1.0
        }
    })
}

/// Hamming distance between two packed codes of the same width.
#[inline]
pub fn hamming_words(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Hamming distance between two packed codes of `bits` bits.
pub fn hamming(a: &[u64], b: &[u64], bits: usize) -> Result<u32> {
    let per = words_per_code(bits);
    if a.len() != per || b.len() != per {
        return Err(Error::LengthMismatch {
            left: a.len() * WORD_BITS,
            right: b.len() * WORD_BITS,
        });
    }
    Ok(hamming_words(a, b))
}

/// What encoding needs for one code length.
#[derive(Debug, Clone, PartialEq)]
pub struct LengthEncoder {
    pub rotation: DMatrix<f64>,
    pub forward: [DMatrix<f64>; 2],
}

impl LengthEncoder {
    pub fn bits(&self) -> usize {
        self.rotation.nrows()
    }

    /// Fused projection `R U_tf` (`r x m`).
    pub fn projection(&self, t: Modality) -> DMatrix<f64> {
        &self.rotation * &self.forward[t.slot()]
    }
}

/// Out-of-sample encoder: `b = sgn(R^k U_tf^k phi_t(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub kernel: KernelModel,
    pub lengths: Vec<LengthEncoder>,
}

impl Encoder {
    pub fn new(kernel: KernelModel, lengths: Vec<LengthEncoder>) -> Result<Self> {
        let m = kernel.anchors();
        for (k, l) in lengths.iter().enumerate() {
            let r = l.bits();
            for t in 0..2 {
                if l.forward[t].shape() != (r, m) {
                    return Err(Error::dims(
                        format!("U_{}f^{}", t + 1, k + 1),
                        (r, m),
                        l.forward[t].shape(),
                    ));
                }
            }
            if l.rotation.shape() != (r, r) {
                return Err(Error::dims(format!("R^{}", k + 1), (r, r), l.rotation.shape()));
            }
        }
        Ok(Self { kernel, lengths })
    }

    pub fn from_state(kernel: KernelModel, state: &ModelState) -> Result<Self> {
        let lengths = state
            .lengths
            .iter()
            .map(|l| LengthEncoder {
                rotation: l.r.clone(),
                forward: l.u_forward.clone(),
            })
            .collect();
        Self::new(kernel, lengths)
    }

    pub fn code_lengths(&self) -> Vec<usize> {
        self.lengths.iter().map(LengthEncoder::bits).collect()
    }

    /// Position of the length with `bits` bits.
    pub fn length_index(&self, bits: usize) -> Result<usize> {
        self.lengths
            .iter()
            .position(|l| l.bits() == bits)
            .ok_or_else(|| Error::UnknownLength {
                bits,
                available: self.code_lengths(),
            })
    }

    /// Sign matrix (`r_k x q`) for raw queries of modality `t`.
    pub fn encode(&self, t: Modality, x_query: &FeatureMatrix, k: usize) -> Result<DMatrix<f64>> {
        let length = self.lengths.get(k).ok_or_else(|| Error::UnknownLength {
            bits: k,
            available: self.code_lengths(),
        })?;
        let expected = self.kernel.modality(t).anchors.dim();
        if x_query.dim() != expected {
            return Err(Error::DimensionMismatch {
                symbol: format!("queries of modality {}", t.number()),
                expected: format!("dimension {expected}"),
                actual: format!("dimension {}", x_query.dim()),
            });
        }
        let phi = self.kernel.transform(t, x_query)?;
        Ok(encode_kernelized(length, t, &phi))
    }

    /// Packed codes for raw queries, selecting the length by bit count.
    pub fn encode_packed(&self, t: Modality, x_query: &FeatureMatrix, bits: usize) -> Result<PackedCodes> {
        let k = self.length_index(bits)?;
        pack(&self.encode(t, x_query, k)?)
    }
}

/// `sgn(R U_tf phi)` on already kernelized features.
pub fn encode_kernelized(length: &LengthEncoder, t: Modality, phi: &FeatureMatrix) -> DMatrix<f64> {
    let proj = &length.rotation * (&length.forward[t.slot()] * phi.as_matrix());
    proj.map(sign)
}
