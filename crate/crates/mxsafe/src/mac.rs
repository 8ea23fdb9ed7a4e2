//! Software model of the multiply-accumulate datapath and a GEMM built
//! on it.
//!
//! Operands decode to exact integer significands, products stay exact,
//! and rounding happens only where the hardware rounds: at the 12-bit
//! float (1 sign, 4 exponent, 7 mantissa bits) adder tree that reduces
//! each group of four products and accumulates the groups in order.
//! Everything is integer arithmetic under the hood, so the model is
//! bit-reproducible across platforms and thread counts.
//!
//! Products are handled relative to `2^(S_eA + S_eB)` of their block
//! pair, shifted up by [`DATAPATH_ANCHOR`] inside the adder so a
//! product of two block maxima sits near the top of the 12-bit range
//! with headroom for intra-block growth, while products of the deepest
//! subnormal pairs fall into its gradual underflow.

use rayon::prelude::*;

use crate::block::{QuantizedBlock, QuantizedTensor};
use crate::codec::{exp2i, ElementCode, Format};
use crate::error::{MxError, Result};
use crate::matrix::Matrix;

/// Lanes reduced by one adder tree.
pub const TREE_ARITY: usize = 4;

/// Exponent shift applied when a product enters the 12-bit adder:
/// a product of value `2^0` (relative to its block-pair scale) is
/// stored as `2^1`, i.e. exponent field 8 of 15.
pub const DATAPATH_ANCHOR: i32 = 1;

/// An element code decoded into exact integer form: the value relative
/// to its block's scale `2^S_e` is `sign · num · 2^exp`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodedOperand {
    pub sign: i8,
    pub num: u32,
    pub exp: i32,
}

impl DecodedOperand {
    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Value relative to the block scale.
    pub fn value(&self) -> f64 {
        f64::from(self.sign) * f64::from(self.num) * exp2i(self.exp)
    }
}

/// Decodes a code into operand form for the multiplier. The dual-mode
/// byte dispatches on its two mode bits; every other format reads its
/// fixed field layout. The significand is returned as an exact integer
/// so downstream products never round.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{ElementCode, Format};
/// use mxsafe::mac::decode_operand;
///
/// let op = decode_operand(ElementCode::new(0x70, Format::Mxsf)).unwrap();
/// assert_eq!(op.value(), 1.5);
///
/// let op = decode_operand(ElementCode::new(0x18, Format::Mxsf)).unwrap();
/// assert_eq!(op.value(), 2f64.powi(-4));
/// ```
pub fn decode_operand(code: ElementCode) -> Result<DecodedOperand> {
    let width = code.format.width();
    if width < 8 && u32::from(code.bits) >= (1 << width) {
        return Err(MxError::MalformedCode {
            format: code.format.name(),
            bits: code.bits,
            width,
        });
    }
    let sign: i8 = if code.bits >> (width - 1) != 0 { -1 } else { 1 };
    Ok(match code.format {
        Format::Int8 => DecodedOperand {
            sign,
            num: u32::from(code.bits & 0x7f),
            exp: -6,
        },
        Format::Mxsf => {
            let e2 = i32::from((code.bits >> 5) & 0b11);
            if e2 != 0 {
                DecodedOperand {
                    sign,
                    num: 32 + u32::from(code.bits & 0x1f),
                    exp: e2 - 3 - 5,
                }
            } else {
                let e3 = i32::from((code.bits >> 2) & 0b111);
                let m = u32::from(code.bits & 0b11);
                if e3 == 0 {
                    DecodedOperand { sign, num: m, exp: 1 - 10 - 2 }
                } else {
                    DecodedOperand { sign, num: 4 + m, exp: e3 - 10 - 2 }
                }
            }
        }
        _ => {
            let fmt = code.format.element().expect("single-mode formats have a layout");
            let m_f = fmt.mantissa_bits;
            let e = i32::from((code.bits >> m_f) & ((1 << fmt.exp_bits) - 1));
            let m = u32::from(code.bits) & ((1 << m_f) - 1);
            if e == 0 {
                DecodedOperand { sign, num: m, exp: 1 - fmt.bias - m_f as i32 }
            } else {
                DecodedOperand {
                    sign,
                    num: (1 << m_f) + m,
                    exp: e - fmt.bias - m_f as i32,
                }
            }
        }
    })
}

/// Exact product of two decoded operands, relative to the product of
/// the two block scales `2^(S_eA + S_eB)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacProduct {
    pub sign: i8,
    pub num: u64,
    pub exp: i32,
}

impl MacProduct {
    pub const ZERO: MacProduct = MacProduct { sign: 1, num: 0, exp: 0 };

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    /// Value relative to the block-pair scale.
    pub fn value(&self) -> f64 {
        f64::from(self.sign) * self.num as f64 * exp2i(self.exp)
    }
}

/// Multiplies two decoded operands exactly. Two significands of at
/// most 8 bits each always fit the integer product, so no precision is
/// lost here; the adder tree is the first place anything rounds.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{ElementCode, Format};
/// use mxsafe::mac::{decode_operand, multiply};
///
/// let a = decode_operand(ElementCode::new(0x70, Format::Mxsf)).unwrap();
/// let p = multiply(a, a);
/// assert_eq!(p.value(), 2.25);
/// ```
pub fn multiply(a: DecodedOperand, b: DecodedOperand) -> MacProduct {
    MacProduct {
        sign: a.sign * b.sign,
        num: u64::from(a.num) * u64::from(b.num),
        exp: a.exp + b.exp,
    }
}

const FP12_BIAS: i32 = 7;
const FP12_MANTISSA_BITS: u32 = 7;
const FP12_MAX_EXP_FIELD: i32 = 15;
/// All 12-bit float values are integer multiples of `2^-13`, the
/// subnormal grid step.
const FP12_UNIT_EXP: i32 = 1 - FP12_BIAS - FP12_MANTISSA_BITS as i32;
/// Largest finite magnitude in those units: 1.1111111b·2^8 = 510.
const FP12_MAX_UNITS: i64 = 255 << (FP12_MAX_EXP_FIELD - 1);

/// Rounds a magnitude of `num · 2^s` (in `2^-13` units) to the nearest
/// representable 12-bit float magnitude, ties to even, saturating at
/// the max finite value.
fn round_mag_to_units(num: u128, s: i32) -> i64 {
    if num == 0 {
        return 0;
    }
    let bitlen = 128 - num.leading_zeros() as i32;
    let value_exp = bitlen - 1 + s;
    if value_exp >= 23 {
        return FP12_MAX_UNITS;
    }
    let p = (value_exp - 7).max(0);
    let mag = if s >= p {
        (num << (s - p)) as i64
    } else {
        let shift = (p - s) as u32;
        let q = (num >> shift) as i64;
        let rem = num & ((1u128 << shift) - 1);
        let half = 1u128 << (shift - 1);
        if rem > half || (rem == half && q & 1 == 1) {
            q + 1
        } else {
            q
        }
    };
    let mag = mag << p;
    mag.min(FP12_MAX_UNITS)
}

/// One value of the 12-bit adder-tree format: 1 sign bit, 4 exponent
/// bits (bias 7), 7 mantissa bits, gradual underflow on the `2^-13`
/// grid, no infinities (overflow saturates at 1.1111111b·2^8 = 510).
///
/// Internally every value is an exact integer count of `2^-13` units,
/// so additions are exact before the single rounding step that maps
/// the sum back onto the format's grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp12Value {
    bits: u16,
}

impl Fp12Value {
    pub const ZERO: Fp12Value = Fp12Value { bits: 0 };

    /// Raw bit layout `[sign:1 | exp:4 | mantissa:7]`.
    pub fn bits(self) -> u16 {
        self.bits
    }

    /// Exact integer count of `2^-13` units.
    pub fn units(self) -> i64 {
        let e = i32::from((self.bits >> 7) & 0xF);
        let m = i64::from(self.bits & 0x7F);
        let mag = if e == 0 { m } else { (128 + m) << (e - 1) };
        if self.bits >> 11 & 1 == 1 {
            -mag
        } else {
            mag
        }
    }

    pub fn value(self) -> f64 {
        self.units() as f64 * exp2i(FP12_UNIT_EXP)
    }

    fn from_units_mag(mag: i64, negative: bool) -> Fp12Value {
        debug_assert!(mag <= FP12_MAX_UNITS);
        let (e, m) = if mag < 128 {
            (0u16, mag as u16)
        } else {
            let e = 64 - mag.leading_zeros() as i32 - 7;
            (e as u16, ((mag >> (e - 1)) - 128) as u16)
        };
        let sign = u16::from(negative && mag != 0) << 11;
        Fp12Value { bits: sign | e << 7 | m }
    }

    /// Rounds a product into the adder's scale: the stored value is
    /// the product value times `2^DATAPATH_ANCHOR`.
    pub fn from_product(p: MacProduct) -> Fp12Value {
        let s = p.exp + DATAPATH_ANCHOR - FP12_UNIT_EXP;
        let mag = round_mag_to_units(u128::from(p.num), s);
        Fp12Value::from_units_mag(mag, p.sign < 0)
    }

    /// Rounds an arbitrary finite value to the nearest representable
    /// one, ties to even, saturating at the max finite magnitude.
    pub fn from_f64(v: f64) -> Fp12Value {
        if v == 0.0 {
            return Fp12Value::ZERO;
        }
        assert!(v.is_finite(), "the adder format has no non-finite values");
        let bits = v.abs().to_bits();
        let raw_exp = (bits >> 52) as i32;
        let (sig, exp) = if raw_exp == 0 {
            (bits & ((1 << 52) - 1), -1074)
        } else {
            ((bits & ((1 << 52) - 1)) | (1 << 52), raw_exp - 1023 - 52)
        };
        let mag = round_mag_to_units(u128::from(sig), exp - FP12_UNIT_EXP);
        Fp12Value::from_units_mag(mag, v < 0.0)
    }

    /// Adds two values: the integer unit counts add exactly, then the
    /// sum rounds once onto the format grid.
    pub fn add(self, rhs: Fp12Value) -> Fp12Value {
        let sum = self.units() + rhs.units();
        let mag = round_mag_to_units(sum.unsigned_abs() as u128, 0);
        Fp12Value::from_units_mag(mag, sum < 0)
    }
}

/// Reduces four products through the fixed balanced tree
/// `(p0 + p1) + (p2 + p3)`: each product rounds into the 12-bit format
/// first, then every addition rounds its result.
///
/// The returned register holds the group sum times `2^DATAPATH_ANCHOR`
/// relative to the block-pair scale.
pub fn adder_tree4(products: &[MacProduct; TREE_ARITY]) -> Fp12Value {
    let q = products.map(Fp12Value::from_product);
    let left = q[0].add(q[1]);
    let right = q[2].add(q[3]);
    left.add(right)
}

fn fp12_reduce<I>(pairs: I) -> Result<Fp12Value>
where
    I: Iterator<Item = (ElementCode, ElementCode)>,
{
    let mut acc = Fp12Value::ZERO;
    let mut group = [MacProduct::ZERO; TREE_ARITY];
    let mut filled = 0usize;
    for (ca, cb) in pairs {
        group[filled] = multiply(decode_operand(ca)?, decode_operand(cb)?);
        filled += 1;
        if filled == TREE_ARITY {
            acc = acc.add(adder_tree4(&group));
            group = [MacProduct::ZERO; TREE_ARITY];
            filled = 0;
        }
    }
    if filled > 0 {
        acc = acc.add(adder_tree4(&group));
    }
    Ok(acc)
}

/// Units of `2^-64` relative to the block-pair scale; deep enough for
/// the lowest product exponent any supported format pair can reach.
const EXACT_UNIT_EXP: i32 = -64;

fn exact_reduce<I>(pairs: I) -> Result<i128>
where
    I: Iterator<Item = (ElementCode, ElementCode)>,
{
    let mut acc: i128 = 0;
    for (ca, cb) in pairs {
        let p = multiply(decode_operand(ca)?, decode_operand(cb)?);
        if p.is_zero() {
            continue;
        }
        let shift = p.exp - EXACT_UNIT_EXP;
        debug_assert!(shift >= 0, "product exponent below the exact grid");
        acc += i128::from(p.sign) * ((p.num as i128) << shift);
    }
    Ok(acc)
}

/// Dot product of two quantized blocks through the 12-bit datapath.
///
/// Lanes are consumed in storage order in groups of four (zero-padded
/// at the tail), each group reduced by [`adder_tree4`], and the group
/// results accumulated sequentially. The final register is rescaled by
/// `2^(S_eA + S_eB - DATAPATH_ANCHOR)` and returned in binary32.
///
/// # Examples
///
/// ```
/// use mxsafe::block::quantize_block;
/// use mxsafe::codec::Format;
/// use mxsafe::mac::block_dot;
///
/// let a = quantize_block(&[1.0; 32], Format::Mxsf).unwrap();
/// assert_eq!(block_dot(&a, &a).unwrap(), 32.0);
/// ```
pub fn block_dot(a: &QuantizedBlock, b: &QuantizedBlock) -> Result<f32> {
    if a.len() != b.len() {
        return Err(MxError::BlockShapeMismatch { left: a.len(), right: b.len() });
    }
    let pairs = (0..a.len()).map(|i| (a.code(i), b.code(i)));
    let acc = fp12_reduce(pairs)?;
    let sigma = a.shared_exp + b.shared_exp;
    Ok((acc.value() * exp2i(sigma - DATAPATH_ANCHOR)) as f32)
}

/// Intra-block reduction path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IntraBlockPath {
    /// The hardware model: products and partial sums round through the
    /// 12-bit adder format.
    Fp12,
    /// Oracle path: integer-exact reduction with a single rounding at
    /// the end of each block pair.
    Exact,
}

/// Width of the accumulator that sums block-pair results across the
/// reduction dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterBlockAccumulator {
    Binary32,
    Binary64,
}

/// Datapath configuration for [`gemm`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacConfig {
    pub intra_block: IntraBlockPath,
    pub inter_block: InterBlockAccumulator,
}

impl Default for MacConfig {
    fn default() -> Self {
        MacConfig {
            intra_block: IntraBlockPath::Fp12,
            inter_block: InterBlockAccumulator::Binary32,
        }
    }
}

impl MacConfig {
    /// Oracle configuration: no intermediate rounding anywhere.
    pub fn exact() -> Self {
        MacConfig {
            intra_block: IntraBlockPath::Exact,
            inter_block: InterBlockAccumulator::Binary64,
        }
    }
}

/// How GEMM work is scheduled over the block grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mapping {
    /// Walks each output element's reduction chunks start to finish.
    OneD,
    /// Processes one output tile at a time, accumulating partial sums
    /// per tile across the reduction chunks.
    Tiled,
}

#[derive(Clone, Copy)]
enum Acc {
    B32(f32),
    B64(f64),
}

impl Acc {
    fn new(width: InterBlockAccumulator) -> Acc {
        match width {
            InterBlockAccumulator::Binary32 => Acc::B32(0.0),
            InterBlockAccumulator::Binary64 => Acc::B64(0.0),
        }
    }

    fn add(&mut self, v: f64) {
        match self {
            Acc::B32(x) => *x += v as f32,
            Acc::B64(x) => *x += v,
        }
    }

    fn finish(self) -> f32 {
        match self {
            Acc::B32(x) => x,
            Acc::B64(x) => x as f32,
        }
    }
}

fn check_gemm_operands(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<usize> {
    let (m, ka) = a.dims();
    let (kb, n) = b.dims();
    if ka != kb {
        return Err(MxError::DimMismatch {
            left_rows: m,
            left_cols: ka,
            right_rows: kb,
            right_cols: n,
        });
    }
    let w = a.tile().cols;
    if b.tile().rows != w {
        return Err(MxError::TileIncompatible {
            left_rows: a.tile().rows,
            left_cols: a.tile().cols,
            right_rows: b.tile().rows,
            right_cols: b.tile().cols,
        });
    }
    Ok(w)
}

/// One reduction chunk of C[i, j]: the w lanes that share a single
/// A-block row segment and B-block column segment, reduced by the
/// configured intra-block path and rescaled to real units.
fn chunk_value(
    a: &QuantizedTensor,
    b: &QuantizedTensor,
    i: usize,
    j: usize,
    t: usize,
    w: usize,
    intra: IntraBlockPath,
) -> Result<f64> {
    let base = t * w;
    let sigma = a.code_at(i, base).1 + b.code_at(base, j).1;
    let pairs = (0..w).map(|l| (a.code_at(i, base + l).0, b.code_at(base + l, j).0));
    match intra {
        IntraBlockPath::Fp12 => {
            let acc = fp12_reduce(pairs)?;
            Ok(f64::from((acc.value() * exp2i(sigma - DATAPATH_ANCHOR)) as f32))
        }
        IntraBlockPath::Exact => {
            let units = exact_reduce(pairs)?;
            Ok(units as f64 * exp2i(sigma + EXACT_UNIT_EXP))
        }
    }
}

/// Multiplies two quantized tensors through the modeled datapath.
///
/// `A`'s tile width fixes the reduction chunk size and `B`'s tile
/// height must match it, so each chunk reads one block of each
/// operand. Both mappings reduce every output element over chunks in
/// ascending order with identical arithmetic, so for a fixed config
/// the mapping never changes a single bit of the result; they differ
/// only in how work is scheduled. Entries of the returned matrix are
/// binary32 values widened to binary64.
///
/// # Examples
///
/// ```
/// use mxsafe::block::{quantize_tensor, TileShape};
/// use mxsafe::codec::Format;
/// use mxsafe::mac::{gemm, MacConfig, Mapping};
/// use mxsafe::matrix::Matrix;
///
/// let mut eye = Matrix::zeros(4, 4);
/// for i in 0..4 {
///     eye.set(i, i, 1.0);
/// }
/// let x = Matrix::from_vec(4, 2, vec![0.5, -1.0, 2.0, 0.25, -4.0, 8.0, 1.5, 0.75]);
/// let a = quantize_tensor(&eye, TileShape::new(2, 2), Format::Mxsf).unwrap();
/// let b = quantize_tensor(&x, TileShape::new(2, 2), Format::Mxsf).unwrap();
/// let c = gemm(&a, &b, Mapping::OneD, MacConfig::exact()).unwrap();
/// assert_eq!(c, x);
/// ```
pub fn gemm(
    a: &QuantizedTensor,
    b: &QuantizedTensor,
    mapping: Mapping,
    cfg: MacConfig,
) -> Result<Matrix> {
    let w = check_gemm_operands(a, b)?;
    let (m, k) = a.dims();
    let n = b.dims().1;
    let k_chunks = k.div_ceil(w);
    match mapping {
        Mapping::OneD => {
            let data = (0..m * n)
                .into_par_iter()
                .map(|idx| {
                    let (i, j) = (idx / n.max(1), idx % n.max(1));
                    let mut acc = Acc::new(cfg.inter_block);
                    for t in 0..k_chunks {
                        acc.add(chunk_value(a, b, i, j, t, w, cfg.intra_block)?);
                    }
                    Ok(f64::from(acc.finish()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Matrix::from_vec(m, n, data))
        }
        Mapping::Tiled => {
            let tr = a.tile().rows;
            let tc = b.tile().cols;
            let tiles_r = m.div_ceil(tr);
            let tiles_c = n.div_ceil(tc);
            let tiles = (0..tiles_r * tiles_c)
                .into_par_iter()
                .map(|bidx| {
                    let (bi, bj) = (bidx / tiles_c.max(1), bidx % tiles_c.max(1));
                    let rows = tr.min(m - bi * tr);
                    let cols = tc.min(n - bj * tc);
                    let mut buf = vec![Acc::new(cfg.inter_block); rows * cols];
                    for t in 0..k_chunks {
                        for li in 0..rows {
                            for lj in 0..cols {
                                let v = chunk_value(
                                    a,
                                    b,
                                    bi * tr + li,
                                    bj * tc + lj,
                                    t,
                                    w,
                                    cfg.intra_block,
                                )?;
                                buf[li * cols + lj].add(v);
                            }
                        }
                    }
                    Ok((bi, bj, rows, cols, buf))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut c = Matrix::zeros(m, n);
            for (bi, bj, rows, cols, buf) in tiles {
                for li in 0..rows {
                    for lj in 0..cols {
                        c.set(
                            bi * tr + li,
                            bj * tc + lj,
                            f64::from(buf[li * cols + lj].finish()),
                        );
                    }
                }
            }
            Ok(c)
        }
    }
}

/// Plain dense GEMM in binary64 with a fixed ascending-k summation
/// order per element, used as the oracle for error attribution.
pub fn reference_gemm(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    a.check_inner(b)?;
    let (m, k) = (a.rows(), a.cols());
    let n = b.cols();
    let data = (0..m * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n.max(1), idx % n.max(1));
            let mut acc = 0.0f64;
            for l in 0..k {
                acc += a.get(i, l) * b.get(l, j);
            }
            acc
        })
        .collect();
    Ok(Matrix::from_vec(m, n, data))
}

/// Half an ulp of the 12-bit format at the binade `v` lies in, in the
/// adder's own (anchored) scale.
fn half_ulp_fp12(v: Fp12Value) -> f64 {
    let mag = v.units().unsigned_abs();
    if mag == 0 {
        return 0.0;
    }
    let value_exp = 63 - mag.leading_zeros() as i32;
    exp2i((value_exp - 7).max(0) - 1 + FP12_UNIT_EXP)
}

/// Half an ulp of binary32 at the binade `v` lies in.
fn half_ulp_f32(v: f32) -> f64 {
    if v == 0.0 {
        return 0.0;
    }
    let e = (f64::from(v.abs()).log2().floor() as i32).max(-126);
    exp2i(e - 24)
}

/// Tracks a rounded value against what the step would have produced
/// exactly, charging half an ulp at the result's binade when the two
/// differ.
struct Budget {
    total: f64,
}

impl Budget {
    fn charge_fp12(&mut self, rounded: Fp12Value, exact: f64) {
        if rounded.value() != exact {
            self.total += half_ulp_fp12(rounded);
        }
    }
}

/// Per-output upper bound on the default datapath's deviation from
/// exact arithmetic on the same quantized operands.
///
/// The default configuration rounds in exactly these places: each
/// product entering the adder tree, each of the three tree additions
/// per group, each group-accumulate addition, the binary32 cast of
/// each chunk result, and each binary32 inter-block addition. Every
/// such rounding moves the value by at most half an ulp of the binade
/// its result lands in, and contributes nothing when it happens to be
/// exact. The bound replays the datapath, sums those half-ulps, and is
/// therefore sound for any input; it is zero exactly when the whole
/// path is exact. Saturation is not error-bounded (clamping is not a
/// rounding), so the bound only covers runs whose sums stay below the
/// adder's max finite value.
pub fn datapath_error_bound(a: &QuantizedTensor, b: &QuantizedTensor) -> Result<Matrix> {
    let w = check_gemm_operands(a, b)?;
    let (m, k) = a.dims();
    let n = b.dims().1;
    let k_chunks = k.div_ceil(w);
    let data = (0..m * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n.max(1), idx % n.max(1));
            let mut budget = Budget { total: 0.0 };
            let mut acc32 = 0.0f32;
            for t in 0..k_chunks {
                let base = t * w;
                let sigma = a.code_at(i, base).1 + b.code_at(base, j).1;
                let mut chunk = Budget { total: 0.0 };
                let mut acc = Fp12Value::ZERO;
                let mut group = [MacProduct::ZERO; TREE_ARITY];
                let mut filled = 0usize;
                let reduce = |group: &[MacProduct; TREE_ARITY],
                              acc: &mut Fp12Value,
                              chunk: &mut Budget| {
                    let q: [Fp12Value; TREE_ARITY] = group.map(|p| {
                        let rounded = Fp12Value::from_product(p);
                        let exact = f64::from(p.sign) * p.num as f64 * exp2i(p.exp + DATAPATH_ANCHOR);
                        chunk.charge_fp12(rounded, exact);
                        rounded
                    });
                    let left = q[0].add(q[1]);
                    chunk.charge_fp12(left, (q[0].units() + q[1].units()) as f64 * exp2i(FP12_UNIT_EXP));
                    let right = q[2].add(q[3]);
                    chunk.charge_fp12(right, (q[2].units() + q[3].units()) as f64 * exp2i(FP12_UNIT_EXP));
                    let sum = left.add(right);
                    chunk.charge_fp12(sum, (left.units() + right.units()) as f64 * exp2i(FP12_UNIT_EXP));
                    let next = acc.add(sum);
                    chunk.charge_fp12(next, (acc.units() + sum.units()) as f64 * exp2i(FP12_UNIT_EXP));
                    *acc = next;
                };
                for l in 0..w {
                    let pa = decode_operand(a.code_at(i, base + l).0)?;
                    let pb = decode_operand(b.code_at(base + l, j).0)?;
                    group[filled] = multiply(pa, pb);
                    filled += 1;
                    if filled == TREE_ARITY {
                        reduce(&group, &mut acc, &mut chunk);
                        group = [MacProduct::ZERO; TREE_ARITY];
                        filled = 0;
                    }
                }
                if filled > 0 {
                    reduce(&group, &mut acc, &mut chunk);
                }
                budget.total += chunk.total * exp2i(sigma - DATAPATH_ANCHOR);
                // Binary32 chunk cast and inter-block accumulation.
                let chunk_real = acc.value() * exp2i(sigma - DATAPATH_ANCHOR);
                let c32 = chunk_real as f32;
                if f64::from(c32) != chunk_real {
                    budget.total += half_ulp_f32(c32);
                }
                let next32 = acc32 + c32;
                if f64::from(next32) != f64::from(acc32) + f64::from(c32) {
                    budget.total += half_ulp_f32(next32);
                }
                acc32 = next32;
            }
            Ok(budget.total)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Matrix::from_vec(m, n, data))
}
