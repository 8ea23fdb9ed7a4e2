use thiserror::Error;

/// Errors shared by the codec, block, datapath and storage layers.
#[derive(Debug, Error)]
pub enum MxError {
    /// Input value was NaN or infinite. Element formats have no NaN/Inf
    /// encodings, so non-finite inputs are rejected up front.
    #[error("non-finite input value {value} at index {index}")]
    NonFiniteInput { value: f64, index: usize },

    /// An element's exponent exceeds the shared exponent of its block.
    /// The shared exponent is defined as the floor log2 of the block
    /// maximum, so this can only happen through API misuse.
    #[error("element exponent {exponent} above shared exponent {shared}")]
    ExponentAboveShared { exponent: i32, shared: i32 },

    /// Code bits do not fit the width of the format they claim to be.
    #[error("malformed {format} code {bits:#04x}: does not fit {width} bits")]
    MalformedCode {
        format: &'static str,
        bits: u8,
        width: u32,
    },

    /// Transpose reuse requires a 2D tile; 1D-tiled tensors must be
    /// re-quantized along the other axis instead.
    #[error("tensor tiled {rows}x{cols} cannot serve a transposed view; re-quantize along the other axis")]
    NotReusable { rows: usize, cols: usize },

    /// Two blocks fed to a dot product have different element counts.
    #[error("block shapes differ: {left} vs {right} elements")]
    BlockShapeMismatch { left: usize, right: usize },

    /// Matrix inner dimensions do not match.
    #[error("dimension mismatch: left is {left_rows}x{left_cols}, right is {right_rows}x{right_cols}")]
    DimMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    /// Operand tilings cannot be paired along the reduction axis.
    #[error("tiles incompatible along reduction axis: left tile is {left_rows}x{left_cols}, right tile is {right_rows}x{right_cols}")]
    TileIncompatible {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// Dense tensor header failed to parse or disagrees with itself.
    #[error("corrupt header: {0}")]
    CorruptHeader(String),

    /// Dense tensor payload is shorter than the header promises.
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: usize, found: usize },

    /// Block file does not start with the expected magic.
    #[error("bad magic {found:02x?}, expected {expected:?}")]
    BadMagic { found: [u8; 4], expected: &'static str },

    /// Block file declares a format id this library does not know.
    #[error("unknown format id {0}")]
    UnknownFormatId(u8),

    /// A block record is truncated, carries codes that do not fit its
    /// format, or violates the canonical form (nonzero padding bits,
    /// nonzero codes in a zero block).
    #[error("corrupt block {index}: {reason}")]
    CorruptBlock { index: usize, reason: String },

    /// Shared exponent falls outside the biased byte range of the block
    /// file layout.
    #[error("shared exponent {0} outside storable range [-127, 127]")]
    ScaleOutOfRange(i32),
}

pub type Result<T> = std::result::Result<T, MxError>;
