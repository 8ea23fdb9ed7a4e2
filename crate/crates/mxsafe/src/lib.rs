//! Block floating point tensor formats with a dual-mode 8-bit element
//! code, exact-product MAC datapaths and tiled storage.
//!
//! Tensors are cut into small tiles that share one power-of-two scale,
//! and each element stores only a narrow code relative to that scale.
//! The [`codec`] module defines the element formats, [`block`] the
//! tiling and shared-exponent rules, [`mac`] a bit-reproducible
//! multiply-accumulate datapath over quantized operands, [`metrics`]
//! error bounds and measurements, [`store`] canonical file layouts and
//! [`synth`] seeded test-data generators.
//!
//! ```
//! use mxsafe::{gemm, quantize_tensor, Format, MacConfig, Mapping, TileShape};
//!
//! let x = mxsafe::gaussian_matrix(16, 32, 1.0, 7);
//! let w = mxsafe::gaussian_matrix(32, 8, 1.0, 8);
//! let xq = quantize_tensor(&x, TileShape::new(8, 8), Format::Mxsf)?;
//! let wq = quantize_tensor(&w, TileShape::new(8, 8), Format::Mxsf)?;
//! let y = gemm(&xq, &wq, Mapping::Tiled, MacConfig::default())?;
//! assert_eq!((y.rows(), y.cols()), (16, 8));
//! # Ok::<(), mxsafe::MxError>(())
//! ```

pub mod block;
pub mod codec;
pub mod error;
mod guide;
pub mod mac;
pub mod matrix;
pub mod metrics;
pub mod store;
pub mod synth;

pub use block::{
    count_quantization_events, dequantize_block, quantize_block, quantize_tensor, shared_exponent,
    transpose_view, QuantizedBlock, QuantizedTensor, TileShape, TrainingPass,
};
pub use codec::{
    decode, decompose, encode, max_representable, ElementCode, ElementFormat, Format, MxsfMode,
};
pub use error::{MxError, Result};
pub use mac::{
    adder_tree4, block_dot, datapath_error_bound, decode_operand, gemm, multiply, reference_gemm,
    DecodedOperand, Fp12Value, IntraBlockPath, InterBlockAccumulator, MacConfig, MacProduct,
    Mapping, DATAPATH_ANCHOR, TREE_ARITY,
};
pub use matrix::Matrix;
pub use metrics::{
    empirical_max_error, grid_step, max_error_fp, max_error_int, tensor_error_report, ErrorReport,
};
pub use store::{load_dense, load_mxb, save_dense, save_mxb, storable_formats};
pub use synth::{gaussian_matrix, log2_normal_matrix, uniform_matrix, SplitMix64};
