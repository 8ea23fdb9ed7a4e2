//! Block quantization: shared exponents, tiles and transpose reuse.
//!
//! A tensor is cut into tiles, and every tile stores one shared exponent
//! `S_e = floor(log2 max|X|)` plus one code per element. Tiles can be
//! flat rows (`1x32`, `1x64`) or square (`8x8`). Square tiles matter for
//! training: a square-tiled tensor serves both itself and its transpose
//! through [`transpose_view`] without re-quantizing, while a flat-tiled
//! tensor must be quantized once per orientation it is consumed in.

use std::collections::HashSet;
use std::sync::Arc;

use rayon::prelude::*;

use crate::codec::{decode, decompose, encode, ElementCode, Format, ScalarDecomp};
use crate::error::{MxError, Result};
use crate::matrix::Matrix;

/// Tile geometry for block quantization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileShape {
    pub rows: usize,
    pub cols: usize,
}

impl TileShape {
    /// Default row tile of 32 elements.
    pub const OCP: TileShape = TileShape::new(1, 32);
    /// Long row tile used for inference-style streaming.
    pub const INFERENCE: TileShape = TileShape::new(1, 64);
    /// Square tile used for training, transposable in place.
    pub const TRAINING: TileShape = TileShape::new(8, 8);

    pub const fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tile dimensions must be positive");
        TileShape { rows, cols }
    }

    /// The named profiles shipped with the library. Every profile holds
    /// 16, 32 or 64 elements.
    pub const PROFILES: [TileShape; 5] = [
        TileShape::new(1, 16),
        TileShape::new(1, 32),
        TileShape::new(1, 64),
        TileShape::new(4, 4),
        TileShape::new(8, 8),
    ];

    pub const fn capacity(&self) -> usize {
        self.rows * self.cols
    }

    /// Flat tiles cannot serve a transposed view.
    pub const fn is_one_d(&self) -> bool {
        self.rows == 1 || self.cols == 1
    }

    pub const fn swapped(&self) -> TileShape {
        TileShape {
            rows: self.cols,
            cols: self.rows,
        }
    }
}

impl std::fmt::Display for TileShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

/// One quantized tile: a shared exponent and a code per element.
///
/// `codes` stores raw code bits row-major over the tile, including any
/// zero padding past the tensor edge. A block whose inputs are all zero
/// is flagged `zero_block` and stores all-zero codes; its shared
/// exponent is meaningless and fixed at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedBlock {
    pub shared_exp: i32,
    pub format: Format,
    pub codes: Vec<u8>,
    pub zero_block: bool,
}

impl QuantizedBlock {
    pub fn len(&self) -> usize {
        self.codes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codes.is_empty()
    }

    pub fn code(&self, idx: usize) -> ElementCode {
        ElementCode::new(self.codes[idx], self.format)
    }
}

/// Shared exponent of a block: `floor(log2 max|X|)` over the nonzero
/// values. Returns the zero-block flag instead when everything is zero.
///
/// # Examples
///
/// ```
/// use mxsafe::block::shared_exponent;
///
/// assert_eq!(shared_exponent(&[1.5, -0.2, 0.7]).unwrap(), (0, false));
/// assert_eq!(shared_exponent(&[0.49, 0.1]).unwrap(), (-2, false));
/// assert_eq!(shared_exponent(&[0.0, 0.0]).unwrap(), (0, true));
/// ```
pub fn shared_exponent(values: &[f64]) -> Result<(i32, bool)> {
    let mut max_abs = 0.0f64;
    for (index, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(MxError::NonFiniteInput { value: v, index });
        }
        max_abs = max_abs.max(v.abs());
    }
    if max_abs == 0.0 {
        return Ok((0, true));
    }
    let d = decompose(max_abs)?;
    Ok((d.exponent, false))
}

fn canonical_decomp(v: f64) -> Result<ScalarDecomp> {
    // Tensor inputs treat -0.0 as +0.0 so zero blocks stay all-zero.
    decompose(if v == 0.0 { 0.0 } else { v })
}

/// Quantizes one block of values under a single shared exponent.
///
/// # Examples
///
/// ```
/// use mxsafe::block::{dequantize_block, quantize_block};
/// use mxsafe::codec::Format;
///
/// let b = quantize_block(&[1.0, 0.5, 0.25, 0.125], Format::Mxsf).unwrap();
/// assert_eq!(b.shared_exp, 0);
/// assert_eq!(dequantize_block(&b).unwrap(), vec![1.0, 0.5, 0.25, 0.125]);
/// ```
pub fn quantize_block(values: &[f64], format: Format) -> Result<QuantizedBlock> {
    let (shared_exp, zero_block) = shared_exponent(values)?;
    if zero_block {
        return Ok(QuantizedBlock {
            shared_exp: 0,
            format,
            codes: vec![0; values.len()],
            zero_block: true,
        });
    }
    let mut codes = Vec::with_capacity(values.len());
    for &v in values {
        let d = canonical_decomp(v)?;
        let (_, code) = encode(&d, shared_exp, format)?;
        codes.push(code.bits);
    }
    Ok(QuantizedBlock {
        shared_exp,
        format,
        codes,
        zero_block: false,
    })
}

/// Decodes every element of a block back to binary64.
pub fn dequantize_block(block: &QuantizedBlock) -> Result<Vec<f64>> {
    block
        .codes
        .iter()
        .map(|&bits| decode(ElementCode::new(bits, block.format), block.shared_exp))
        .collect()
}

/// A tensor cut into equally shaped quantized tiles.
///
/// Blocks are stored row-major over the tile grid; edge tiles are
/// zero-padded up to full capacity, and the padding never participates
/// in shared exponents, error statistics or file contents beyond the
/// stored zero codes. The transposed state is a view flag: it swaps the
/// logical dimensions and the tile shape at access time while sharing
/// the untouched block payloads.
#[derive(Debug, Clone)]
pub struct QuantizedTensor {
    rows: usize,
    cols: usize,
    tile: TileShape,
    format: Format,
    blocks: Arc<Vec<QuantizedBlock>>,
    transposed: bool,
}

impl QuantizedTensor {
    /// Logical dimensions of the view.
    pub fn dims(&self) -> (usize, usize) {
        if self.transposed {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    /// Tile shape of the view.
    pub fn tile(&self) -> TileShape {
        if self.transposed {
            self.tile.swapped()
        } else {
            self.tile
        }
    }

    pub fn format(&self) -> Format {
        self.format
    }

    pub fn is_transposed(&self) -> bool {
        self.transposed
    }

    /// Tile grid dimensions of the view.
    pub fn grid(&self) -> (usize, usize) {
        let (r, c) = self.dims();
        let t = self.tile();
        (r.div_ceil(t.rows), c.div_ceil(t.cols))
    }

    /// Number of stored blocks.
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    /// Block at view-relative grid position.
    pub fn block(&self, bi: usize, bj: usize) -> &QuantizedBlock {
        let (sbi, sbj) = if self.transposed { (bj, bi) } else { (bi, bj) };
        let grid_cols = self.cols.div_ceil(self.tile.cols);
        &self.blocks[sbi * grid_cols + sbj]
    }

    /// Code and shared exponent at a view-relative element position.
    pub fn code_at(&self, i: usize, j: usize) -> (ElementCode, i32) {
        let (si, sj) = if self.transposed { (j, i) } else { (i, j) };
        let block = {
            let grid_cols = self.cols.div_ceil(self.tile.cols);
            &self.blocks[(si / self.tile.rows) * grid_cols + sj / self.tile.cols]
        };
        let idx = (si % self.tile.rows) * self.tile.cols + sj % self.tile.cols;
        (block.code(idx), block.shared_exp)
    }

    pub fn value_at(&self, i: usize, j: usize) -> Result<f64> {
        let (code, s_e) = self.code_at(i, j);
        decode(code, s_e)
    }

    /// Decodes the whole view into a dense matrix.
    pub fn dequantize(&self) -> Result<Matrix> {
        let (rows, cols) = self.dims();
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                out.set(i, j, self.value_at(i, j)?);
            }
        }
        Ok(out)
    }

    /// Rebuilds the tensor with blocks laid out in the view's own
    /// orientation, clearing the transposed flag. Codes are permuted,
    /// never re-quantized.
    pub fn materialized(&self) -> QuantizedTensor {
        if !self.transposed {
            return self.clone();
        }
        let (rows, cols) = self.dims();
        let tile = self.tile();
        let grid_rows = rows.div_ceil(tile.rows);
        let grid_cols = cols.div_ceil(tile.cols);
        let mut blocks = Vec::with_capacity(grid_rows * grid_cols);
        for bi in 0..grid_rows {
            for bj in 0..grid_cols {
                let src = self.block(bi, bj);
                let mut codes = vec![0u8; tile.capacity()];
                for li in 0..tile.rows {
                    for lj in 0..tile.cols {
                        // The stored payload is the transposed tile.
                        codes[li * tile.cols + lj] = src.codes[lj * tile.rows + li];
                    }
                }
                blocks.push(QuantizedBlock {
                    shared_exp: src.shared_exp,
                    format: src.format,
                    codes,
                    zero_block: src.zero_block,
                });
            }
        }
        QuantizedTensor {
            rows,
            cols,
            tile,
            format: self.format,
            blocks: Arc::new(blocks),
            transposed: false,
        }
    }

    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        tile: TileShape,
        format: Format,
        blocks: Vec<QuantizedBlock>,
    ) -> QuantizedTensor {
        QuantizedTensor {
            rows,
            cols,
            tile,
            format,
            blocks: Arc::new(blocks),
            transposed: false,
        }
    }
}

/// Quantizes a dense matrix tile by tile.
///
/// Edge tiles are padded with zeros; padding is excluded from the
/// shared exponent by construction (zeros never raise a maximum) and
/// encodes to zero codes. Tiles are processed in parallel; the result
/// does not depend on the thread count.
pub fn quantize_tensor(m: &Matrix, tile: TileShape, format: Format) -> Result<QuantizedTensor> {
    let grid_rows = m.rows().div_ceil(tile.rows);
    let grid_cols = m.cols().div_ceil(tile.cols);
    let blocks = (0..grid_rows * grid_cols)
        .into_par_iter()
        .map(|b| {
            let bi = b / grid_cols.max(1);
            let bj = b % grid_cols.max(1);
            let mut values = vec![0.0f64; tile.capacity()];
            for li in 0..tile.rows {
                for lj in 0..tile.cols {
                    let i = bi * tile.rows + li;
                    let j = bj * tile.cols + lj;
                    if i < m.rows() && j < m.cols() {
                        values[li * tile.cols + lj] = m.get(i, j);
                    }
                }
            }
            quantize_block(&values, format).map_err(|e| match e {
                // Re-anchor the error index from tile-local to tensor-linear.
                MxError::NonFiniteInput { value, index } => {
                    let i = bi * tile.rows + index / tile.cols;
                    let j = bj * tile.cols + index % tile.cols;
                    MxError::NonFiniteInput {
                        value,
                        index: i * m.cols() + j,
                    }
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QuantizedTensor::from_parts(
        m.rows(),
        m.cols(),
        tile,
        format,
        blocks,
    ))
}

/// Transposed view of a square-tiled tensor, sharing the block storage.
///
/// No code is re-quantized: the view swaps dimensions and remaps
/// indices. Flat-tiled tensors cannot be viewed this way because their
/// blocks follow a single axis; they return [`MxError::NotReusable`].
///
/// # Examples
///
/// ```
/// use mxsafe::block::{quantize_tensor, transpose_view, TileShape};
/// use mxsafe::codec::Format;
/// use mxsafe::matrix::Matrix;
///
/// let m = Matrix::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
/// let q = quantize_tensor(&m, TileShape::new(2, 2), Format::Mxsf).unwrap();
/// let t = transpose_view(&q).unwrap();
/// assert_eq!(t.dims(), (2, 2));
/// assert_eq!(t.value_at(0, 1).unwrap(), 3.0);
///
/// let flat = quantize_tensor(&m, TileShape::new(1, 4), Format::Mxsf).unwrap();
/// assert!(transpose_view(&flat).is_err());
/// ```
pub fn transpose_view(q: &QuantizedTensor) -> Result<QuantizedTensor> {
    let tile = q.tile();
    if tile.is_one_d() {
        return Err(MxError::NotReusable {
            rows: tile.rows,
            cols: tile.cols,
        });
    }
    Ok(QuantizedTensor {
        transposed: !q.transposed,
        blocks: Arc::clone(&q.blocks),
        ..*q
    })
}

/// Which passes of a linear layer the operand schedule covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingPass {
    ForwardOnly,
    ForwardBackward,
}

/// Reduction axis an operand is consumed along, used to decide whether
/// an existing quantization can be reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Axis {
    M,
    K,
    N,
}

/// Counts quantization events for one linear layer `Y = X·W` with the
/// given tile shape, by scripting the operand schedule of the forward
/// (and optionally backward) pass.
///
/// Each GEMM consumes its operands blocked along the reduction axis.
/// Square tiles serve any axis through [`transpose_view`], so each of
/// X, W and dY is quantized exactly once. Flat tiles pin a block to one
/// axis, so the backward pass re-quantizes X, W and dY along their
/// second axis. The count does not depend on the layer dimensions.
///
/// # Examples
///
/// ```
/// use mxsafe::block::{count_quantization_events, TileShape, TrainingPass};
///
/// let dims = (128, 256, 64);
/// assert_eq!(
///     count_quantization_events(dims, TileShape::new(8, 8), TrainingPass::ForwardBackward),
///     3,
/// );
/// assert_eq!(
///     count_quantization_events(dims, TileShape::new(1, 64), TrainingPass::ForwardBackward),
///     6,
/// );
/// assert_eq!(
///     count_quantization_events(dims, TileShape::new(1, 64), TrainingPass::ForwardOnly),
///     2,
/// );
/// ```
pub fn count_quantization_events(
    dims: (usize, usize, usize),
    tile: TileShape,
    pass: TrainingPass,
) -> usize {
    let (m, k, n) = dims;
    assert!(m > 0 && k > 0 && n > 0, "layer dimensions must be positive");
    let axis_bound = tile.is_one_d();
    let mut quantized: HashSet<(&str, Option<Axis>)> = HashSet::new();
    let mut events = 0usize;
    let mut need = |tensor: &'static str, axis: Axis, events: &mut usize| {
        let key = (tensor, if axis_bound { Some(axis) } else { None });
        if quantized.insert(key) {
            *events += 1;
        }
    };
    // Forward: Y = X·W reduces over k.
    need("x", Axis::K, &mut events);
    need("w", Axis::K, &mut events);
    if pass == TrainingPass::ForwardBackward {
        // dX = dY·Wᵀ reduces over n.
        need("dy", Axis::N, &mut events);
        need("w", Axis::N, &mut events);
        // dW = Xᵀ·dY reduces over m.
        need("x", Axis::M, &mut events);
        need("dy", Axis::M, &mut events);
    }
    events
}
