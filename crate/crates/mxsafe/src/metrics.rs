//! Quantization error bounds and empirical error statistics.
//!
//! The analytical bounds ([`max_error_int`], [`max_error_fp`]) evaluate
//! closed-form worst-case expressions. The empirical oracle
//! ([`empirical_max_error`]) brute-forces the actual worst case over a
//! dense significand sweep and is the ground truth the analytical side
//! is checked against. [`tensor_error_report`] aggregates per-tensor
//! statistics: mean squared error, worst absolute error, the fraction
//! of nonzero inputs flushed to zero, and the distribution of each
//! element's exponent distance from its block maximum.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::block::{quantize_tensor, TileShape};
use crate::codec::{decode, decompose, encode, exp2i, max_representable, Format};
use crate::error::Result;
use crate::matrix::Matrix;

/// Worst-case absolute error of the integer element code, evaluated as
/// `2^(S_e-(m_i-2)) * 2^((S_e-e_x)-(m_i-2))` for an element of exponent
/// `e_x` in a block with shared exponent `s_e` and `m_i` code bits.
///
/// # Examples
///
/// ```
/// use mxsafe::metrics::max_error_int;
///
/// assert_eq!(max_error_int(0, 0, 8), 2f64.powi(-12));
/// assert_eq!(max_error_int(0, -2, 8), 2f64.powi(-10));
/// ```
pub fn max_error_int(s_e: i32, e_x: i32, m_i: u32) -> f64 {
    assert!(e_x <= s_e, "element exponent cannot exceed the shared exponent");
    let m = m_i as i32;
    exp2i(s_e - (m - 2)) * exp2i((s_e - e_x) - (m - 2))
}

/// Worst-case absolute error of a floating-point element code,
/// evaluated as `2^(e_x-m_f) * 2^(-min(local_exp,0)-m_f)` for an
/// element of exponent `e_x` landing at local exponent `local_exp`
/// with `m_f` mantissa bits. A non-positive local exponent marks the
/// subnormal range, where the second factor widens the grid.
///
/// # Examples
///
/// ```
/// use mxsafe::metrics::max_error_fp;
///
/// assert_eq!(max_error_fp(0, 3, 5), 2f64.powi(-10));
/// assert_eq!(max_error_fp(0, 0, 2), 2f64.powi(-4));
/// ```
pub fn max_error_fp(e_x: i32, local_exp: i32, m_f: u32) -> f64 {
    let m = m_f as i32;
    exp2i(e_x - m) * exp2i(-local_exp.min(0) - m)
}

/// Number of significand sample points used by [`empirical_max_error`].
pub const SWEEP_POINTS: u32 = 1 << 12;

/// Sweeps `x = (1 + j·2^-12)·2^(s_e-d)` for `j` in `0..4096` through an
/// encode/decode round trip and returns the largest absolute error.
/// Every sweep point is exact in binary64, so the maximum is exact too.
///
/// Points past the format's largest representable value are skipped:
/// the oracle measures grid error inside the covered range, not range
/// clipping. Values flushed to zero at the bottom do count, since loss
/// of small elements is exactly what separates the formats.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::Format;
/// use mxsafe::metrics::empirical_max_error;
///
/// assert_eq!(empirical_max_error(Format::Int8, 0, 0), 2f64.powi(-7));
/// assert_eq!(empirical_max_error(Format::E2M5, 0, 0), 2f64.powi(-6));
/// ```
pub fn empirical_max_error(format: Format, d: i32, s_e: i32) -> f64 {
    assert!(d >= 0, "elements cannot exceed the shared exponent");
    let scale = exp2i(s_e - d);
    let step = exp2i(-(SWEEP_POINTS.trailing_zeros() as i32));
    let ceiling = max_representable(format, s_e);
    let mut worst = 0.0f64;
    for j in 0..SWEEP_POINTS {
        let x = (1.0 + j as f64 * step) * scale;
        if x > ceiling {
            continue;
        }
        let decomp = decompose(x).expect("sweep points are finite");
        let (_, code) = encode(&decomp, s_e, format).expect("sweep points fit below s_e");
        let decoded = decode(code, s_e).expect("own codes decode");
        worst = worst.max((x - decoded).abs());
    }
    worst
}

/// Grid step of a format at exponent distance `d` below shared
/// exponent `s_e`: the spacing of representable values around
/// `2^(s_e-d)`. Half of this is the worst rounding error wherever the
/// format does not underflow.
pub fn grid_step(format: Format, s_e: i32, d: i32) -> f64 {
    assert!(d >= 0, "elements cannot exceed the shared exponent");
    match format {
        Format::Int8 => exp2i(s_e - 6),
        Format::Mxsf => {
            if d < 3 {
                grid_step(Format::E2M5, s_e, d)
            } else {
                grid_step(Format::Fp5E3M2, s_e, d)
            }
        }
        _ => {
            let fmt = format.element().expect("non-composite formats have an element layout");
            let m = fmt.mantissa_bits as i32;
            if d <= fmt.bias - 1 {
                exp2i(s_e - d - m)
            } else {
                exp2i(s_e + 1 - fmt.bias - m)
            }
        }
    }
}

/// Error statistics of one tensor under one format and tile shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// Mean squared error over every element.
    pub mse: f64,
    /// Largest absolute element error.
    pub max_abs_err: f64,
    /// Fraction of nonzero inputs quantized to zero; 0 when the tensor
    /// has no nonzero inputs.
    pub underflow_ratio: f64,
    /// Count of nonzero elements at each exponent distance from their
    /// block's shared exponent. Zeros are excluded because they have
    /// no exponent.
    pub distance_histogram: BTreeMap<i32, u64>,
    /// Mean of the histogram; 0 when the tensor has no nonzero inputs.
    pub mean_distance: f64,
}

impl ErrorReport {
    /// Number of nonzero inputs covered by the histogram.
    pub fn nonzero_count(&self) -> u64 {
        self.distance_histogram.values().sum()
    }
}

impl std::fmt::Display for ErrorReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "mse={:e}", self.mse)?;
        writeln!(f, "max_abs_err={:e}", self.max_abs_err)?;
        writeln!(f, "underflow_ratio={}", self.underflow_ratio)?;
        writeln!(f, "mean_distance={}", self.mean_distance)?;
        write!(f, "distance_histogram=")?;
        let mut first = true;
        for (d, count) in &self.distance_histogram {
            if !first {
                write!(f, ",")?;
            }
            write!(f, "{}:{}", d, count)?;
            first = false;
        }
        Ok(())
    }
}

#[derive(Default, Clone)]
struct Partial {
    sq_err_sum: f64,
    max_abs_err: f64,
    nonzero: u64,
    underflows: u64,
    distance_sum: i64,
    histogram: BTreeMap<i32, u64>,
}

impl Partial {
    fn merge(mut self, other: Partial) -> Partial {
        self.sq_err_sum += other.sq_err_sum;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        self.nonzero += other.nonzero;
        self.underflows += other.underflows;
        self.distance_sum += other.distance_sum;
        for (d, count) in other.histogram {
            *self.histogram.entry(d).or_insert(0) += count;
        }
        self
    }
}

/// Quantizes `original` and reports the resulting error statistics.
///
/// Tiles are processed in parallel and their partial sums merged in a
/// fixed order, so the report is identical for any thread count.
///
/// # Examples
///
/// ```
/// use mxsafe::block::TileShape;
/// use mxsafe::codec::Format;
/// use mxsafe::matrix::Matrix;
/// use mxsafe::metrics::tensor_error_report;
///
/// let m = Matrix::from_vec(1, 4, vec![1.0, 0.5, 0.25, 0.25]);
/// let r = tensor_error_report(&m, Format::Mxsf, TileShape::new(1, 4)).unwrap();
/// assert_eq!(r.mse, 0.0);
/// assert_eq!(r.mean_distance, 1.25);
/// ```
pub fn tensor_error_report(
    original: &Matrix,
    format: Format,
    tile: TileShape,
) -> Result<ErrorReport> {
    let q = quantize_tensor(original, tile, format)?;
    let (grid_rows, grid_cols) = q.grid();
    let partials: Vec<Partial> = (0..grid_rows * grid_cols)
        .into_par_iter()
        .map(|b| {
            let bi = b / grid_cols.max(1);
            let bj = b % grid_cols.max(1);
            let block = q.block(bi, bj);
            let mut p = Partial::default();
            for li in 0..tile.rows {
                for lj in 0..tile.cols {
                    let i = bi * tile.rows + li;
                    let j = bj * tile.cols + lj;
                    if i >= original.rows() || j >= original.cols() {
                        continue;
                    }
                    let x = original.get(i, j);
                    let decoded = decode(block.code(li * tile.cols + lj), block.shared_exp)
                        .expect("stored codes decode");
                    let err = x - decoded;
                    p.sq_err_sum += err * err;
                    p.max_abs_err = p.max_abs_err.max(err.abs());
                    if x != 0.0 {
                        p.nonzero += 1;
                        if decoded == 0.0 {
                            p.underflows += 1;
                        }
                        let e_x = decompose(x).expect("inputs were validated").exponent;
                        let d = block.shared_exp - e_x;
                        p.distance_sum += d as i64;
                        *p.histogram.entry(d).or_insert(0) += 1;
                    }
                }
            }
            p
        })
        .collect();
    let total = partials.into_iter().fold(Partial::default(), Partial::merge);
    let count = (original.rows() * original.cols()) as f64;
    Ok(ErrorReport {
        mse: if count > 0.0 { total.sq_err_sum / count } else { 0.0 },
        max_abs_err: total.max_abs_err,
        underflow_ratio: if total.nonzero > 0 {
            total.underflows as f64 / total.nonzero as f64
        } else {
            0.0
        },
        mean_distance: if total.nonzero > 0 {
            total.distance_sum as f64 / total.nonzero as f64
        } else {
            0.0
        },
        distance_histogram: total.histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytical_int_bound_examples() {
        assert_eq!(max_error_int(0, 0, 8), 2f64.powi(-12));
        assert_eq!(max_error_int(0, -2, 8), 2f64.powi(-10));
        assert_eq!(max_error_int(3, 3, 8), 2f64.powi(-9));
    }

    #[test]
    fn analytical_fp_bound_examples() {
        assert_eq!(max_error_fp(0, 3, 5), 2f64.powi(-10));
        assert_eq!(max_error_fp(-5, -2, 5), 2f64.powi(-13));
        assert_eq!(max_error_fp(0, 0, 2), 2f64.powi(-4));
    }

    #[test]
    fn empirical_crossover_between_int8_and_e2m5() {
        assert_eq!(empirical_max_error(Format::Int8, 0, 0), 2f64.powi(-7));
        assert_eq!(empirical_max_error(Format::E2M5, 0, 0), 2f64.powi(-6));
        assert_eq!(
            empirical_max_error(Format::Int8, 1, 0),
            empirical_max_error(Format::E2M5, 1, 0)
        );
        assert_eq!(empirical_max_error(Format::E2M5, 1, 0), 2f64.powi(-7));
        for d in 2..=8 {
            assert!(
                empirical_max_error(Format::E2M5, d, 0)
                    < empirical_max_error(Format::Int8, d, 0),
                "d={d}"
            );
        }
    }

    #[test]
    fn empirical_error_is_half_the_grid_step_without_underflow() {
        let cases: [(Format, std::ops::RangeInclusive<i32>); 5] = [
            (Format::Int8, 0..=6),
            (Format::E2M5, 0..=7),
            (Format::E4M3, 0..=17),
            (Format::E3M2, 0..=8),
            (Format::Mxsf, 0..=11),
        ];
        for (fmt, range) in cases {
            for d in range {
                assert_eq!(
                    empirical_max_error(fmt, d, 0),
                    grid_step(fmt, 0, d) / 2.0,
                    "{fmt} d={d}"
                );
            }
        }
    }

    #[test]
    fn mxsf_matches_e2m5_in_the_upper_band() {
        for d in 0..=2 {
            for s_e in [-4, 0, 9] {
                assert_eq!(
                    empirical_max_error(Format::Mxsf, d, s_e),
                    empirical_max_error(Format::E2M5, d, s_e)
                );
            }
        }
    }

    #[test]
    fn mxsf_beats_e2m5_where_e2m5_flushes() {
        // E2M5 flushes the whole band for d >= 9 so its error is the
        // value itself; the dual-mode byte still holds values through
        // d = 12 and wins. Past that both flush and the errors tie.
        for d in 10..=12 {
            assert!(
                empirical_max_error(Format::Mxsf, d, 0)
                    < empirical_max_error(Format::E2M5, d, 0),
                "d={d}"
            );
        }
        assert_eq!(
            empirical_max_error(Format::Mxsf, 13, 0),
            empirical_max_error(Format::E2M5, 13, 0)
        );
    }

    #[test]
    fn report_on_lossless_dyadic_block() {
        let m = Matrix::from_vec(1, 4, vec![1.0, 0.5, 0.25, 0.25]);
        for fmt in [Format::Int8, Format::E2M5, Format::Mxsf, Format::E4M3] {
            let r = tensor_error_report(&m, fmt, TileShape::new(1, 4)).unwrap();
            assert_eq!(r.mse, 0.0, "{fmt}");
            assert_eq!(r.max_abs_err, 0.0, "{fmt}");
            assert_eq!(r.underflow_ratio, 0.0, "{fmt}");
            assert_eq!(r.mean_distance, 1.25, "{fmt}");
            let hist: Vec<(i32, u64)> = r.distance_histogram.into_iter().collect();
            assert_eq!(hist, vec![(0, 1), (1, 1), (2, 2)], "{fmt}");
        }
    }

    #[test]
    fn underflow_counts_flushed_nonzero_inputs_only() {
        let m = Matrix::from_vec(1, 2, vec![1.0, 2f64.powi(-10)]);
        let e2m5 = tensor_error_report(&m, Format::E2M5, TileShape::new(1, 2)).unwrap();
        assert_eq!(e2m5.underflow_ratio, 0.5);
        assert_eq!(e2m5.max_abs_err, 2f64.powi(-10));
        let mxsf = tensor_error_report(&m, Format::Mxsf, TileShape::new(1, 2)).unwrap();
        assert_eq!(mxsf.underflow_ratio, 0.0);
        assert_eq!(mxsf.mse, 0.0);
    }

    #[test]
    fn zeros_are_excluded_from_the_histogram() {
        let m = Matrix::from_vec(1, 3, vec![1.0, 0.0, -0.0]);
        let r = tensor_error_report(&m, Format::Mxsf, TileShape::new(1, 3)).unwrap();
        assert_eq!(r.nonzero_count(), 1);
        assert_eq!(r.underflow_ratio, 0.0);
        assert_eq!(r.mean_distance, 0.0);
    }

    #[test]
    fn all_zero_tensor_reports_cleanly() {
        let m = Matrix::zeros(2, 5);
        let r = tensor_error_report(&m, Format::Int8, TileShape::new(1, 5)).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.underflow_ratio, 0.0);
        assert_eq!(r.mean_distance, 0.0);
        assert!(r.distance_histogram.is_empty());
    }

    #[test]
    fn histogram_sums_to_the_nonzero_count() {
        let data: Vec<f64> = (0..64)
            .map(|v| if v % 5 == 0 { 0.0 } else { (v as f64 * 0.713).sin() })
            .collect();
        let nonzero = data.iter().filter(|&&x| x != 0.0).count() as u64;
        let m = Matrix::from_vec(8, 8, data);
        let r = tensor_error_report(&m, Format::Mxsf, TileShape::new(4, 4)).unwrap();
        assert_eq!(r.nonzero_count(), nonzero);
    }

    #[test]
    fn report_ignores_edge_padding() {
        // 1x3 tensor in 1x32 tiles: 29 padding slots must not inflate
        // the element count or shift the statistics.
        let m = Matrix::from_vec(1, 3, vec![1.0, 0.5, 0.25]);
        let r = tensor_error_report(&m, Format::E2M5, TileShape::OCP).unwrap();
        assert_eq!(r.nonzero_count(), 3);
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.mean_distance, 1.0);
    }
}
