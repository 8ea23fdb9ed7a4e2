//! Compiles every code snippet in the book and the README as a
//! doc-test so the prose can never drift from the library.

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
pub mod readme {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/block-quantization.md")]
pub mod block_quantization {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/element-codecs.md")]
pub mod element_codecs {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/dual-mode-byte.md")]
pub mod dual_mode_byte {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/error-analysis.md")]
pub mod error_analysis {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/tiles-and-transpose.md")]
pub mod tiles_and_transpose {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/datapath.md")]
pub mod datapath {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/file-formats.md")]
pub mod file_formats {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/synthetic-data.md")]
pub mod synthetic_data {}
