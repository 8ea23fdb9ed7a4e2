//! Scalar element codecs for block-scaled tensors.
//!
//! Every element of a block is encoded relative to the block's shared
//! exponent `S_e`. An element with magnitude `1.m · 2^e_x` sits `d = S_e -
//! e_x` binades below the block maximum, and each format spends its bits
//! differently on that gap:
//!
//! * **INT8**: sign-magnitude fixed point on the grid `2^(S_e-6)`. The
//!   code is `[s | k:7]` and decodes to `±k · 2^(S_e-6)`.
//! * **FP formats** (`E4M3`, `E5M2`, `E2M5`, `E2M1`, `E2M3`, `E3M2`,
//!   `FP5_E3M2`): a miniature float `[s | e | m]` with a per-format bias.
//!   A nonzero exponent field decodes to `±1.m · 2^(e - bias + S_e)`; a
//!   zero field is subnormal, `±0.m · 2^(1 - bias + S_e)`.
//! * **MXSF**: a dual-mode byte. When the element is within two binades
//!   of the block maximum it is stored as E2M5 (bias 3); further down it
//!   switches to a wide-range E3M2 with bias 10, reaching `2^(S_e-9)`
//!   normals and `2^(S_e-11)` subnormal steps. The two bits after the
//!   sign double as the mode flag: `00` means E3M2.
//!
//! All rounding is round-to-nearest, ties to even. Overflow during
//! rounding clamps to the largest finite magnitude of the format. Zero
//! keeps its IEEE sign through encode and decode so that every code byte,
//! including negative zero, survives a decode/encode round trip.

use crate::error::{MxError, Result};

/// Whether a format stores a fixed-point integer or a miniature float.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormatKind {
    Int,
    Fp,
}

/// Bit-level description of a single-mode element format.
///
/// `width() == exp_bits + mantissa_bits + 1` (one sign bit). For integer
/// formats `exp_bits` is zero and `mantissa_bits` counts the magnitude
/// bits, so INT8 has `mantissa_bits == 7`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementFormat {
    pub kind: FormatKind,
    pub exp_bits: u32,
    pub mantissa_bits: u32,
    pub bias: i32,
}

impl ElementFormat {
    pub const INT8: Self = Self::int(7);
    pub const E4M3: Self = Self::fp(4, 3, 15);
    pub const E5M2: Self = Self::fp(5, 2, 31);
    pub const E2M5: Self = Self::fp(2, 5, 3);
    pub const E2M1: Self = Self::fp(2, 1, 3);
    pub const E2M3: Self = Self::fp(2, 3, 3);
    pub const E3M2: Self = Self::fp(3, 2, 7);
    /// Wide-range E3M2 used by the MXSF lower mode: bias 10 shifts its
    /// normal range down to `[2^(S_e-9), 2^(S_e-3)]`.
    pub const FP5_E3M2: Self = Self::fp(3, 2, 10);

    const fn int(magnitude_bits: u32) -> Self {
        ElementFormat {
            kind: FormatKind::Int,
            exp_bits: 0,
            mantissa_bits: magnitude_bits,
            bias: 0,
        }
    }

    const fn fp(exp_bits: u32, mantissa_bits: u32, bias: i32) -> Self {
        ElementFormat {
            kind: FormatKind::Fp,
            exp_bits,
            mantissa_bits,
            bias,
        }
    }

    /// Total code width in bits, sign included.
    pub const fn width(&self) -> u32 {
        self.exp_bits + self.mantissa_bits + 1
    }

    /// Largest exponent field value, `E = 2^exp_bits - 1`.
    pub const fn max_local_exp(&self) -> i32 {
        (1 << self.exp_bits) - 1
    }
}

/// Element format selector, including the dual-mode MXSF byte.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Format {
    Int8,
    E4M3,
    E5M2,
    E2M5,
    Mxsf,
    E2M1,
    E2M3,
    E3M2,
    /// Bias-10 E3M2, the MXSF wide-range mode as a standalone format.
    /// Not serializable on its own; block files use MXSF instead.
    Fp5E3M2,
}

impl Format {
    /// All selectable formats, in file-id order, then `Fp5E3M2`.
    pub const ALL: [Format; 9] = [
        Format::Int8,
        Format::E4M3,
        Format::E5M2,
        Format::E2M5,
        Format::Mxsf,
        Format::E2M1,
        Format::E2M3,
        Format::E3M2,
        Format::Fp5E3M2,
    ];

    /// Single-mode bit layout, or `None` for the dual-mode MXSF byte.
    pub const fn element(&self) -> Option<ElementFormat> {
        match self {
            Format::Int8 => Some(ElementFormat::INT8),
            Format::E4M3 => Some(ElementFormat::E4M3),
            Format::E5M2 => Some(ElementFormat::E5M2),
            Format::E2M5 => Some(ElementFormat::E2M5),
            Format::Mxsf => None,
            Format::E2M1 => Some(ElementFormat::E2M1),
            Format::E2M3 => Some(ElementFormat::E2M3),
            Format::E3M2 => Some(ElementFormat::E3M2),
            Format::Fp5E3M2 => Some(ElementFormat::FP5_E3M2),
        }
    }

    /// Code width in bits.
    pub const fn width(&self) -> u32 {
        match self.element() {
            Some(f) => f.width(),
            None => 8,
        }
    }

    pub const fn name(&self) -> &'static str {
        match self {
            Format::Int8 => "int8",
            Format::E4M3 => "e4m3",
            Format::E5M2 => "e5m2",
            Format::E2M5 => "e2m5",
            Format::Mxsf => "mxsf",
            Format::E2M1 => "e2m1",
            Format::E2M3 => "e2m3",
            Format::E3M2 => "e3m2",
            Format::Fp5E3M2 => "fp5_e3m2",
        }
    }

    pub fn from_name(name: &str) -> Option<Format> {
        Format::ALL.into_iter().find(|f| f.name() == name)
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Mode a specific MXSF code byte is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MxsfMode {
    /// Near the block maximum: `[s | e:2 | m:5]`, bias 3, `e != 0`.
    E2M5,
    /// Three or more binades down: `[s | 00 | e3:3 | m:2]`, bias 10.
    E3M2,
    /// The code is not an MXSF byte.
    NotApplicable,
}

/// One encoded element: raw bits plus the format they are valid under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementCode {
    pub bits: u8,
    pub format: Format,
}

impl ElementCode {
    pub const fn new(bits: u8, format: Format) -> Self {
        ElementCode { bits, format }
    }

    /// Which MXSF sub-format the byte selects. The two bits after the
    /// sign are the discriminator: both zero means the E3M2 mode.
    pub const fn mxsf_mode(&self) -> MxsfMode {
        match self.format {
            Format::Mxsf => {
                if (self.bits >> 5) & 0b11 == 0 {
                    MxsfMode::E3M2
                } else {
                    MxsfMode::E2M5
                }
            }
            _ => MxsfMode::NotApplicable,
        }
    }
}

/// Sign/exponent/significand decomposition of a finite binary64 value.
///
/// For nonzero values `significand` is in `[1, 2)` and
/// `value == sign · significand · 2^exponent` exactly. Zero keeps its
/// IEEE sign in `sign` with `is_zero` set and `significand == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarDecomp {
    pub sign: i8,
    pub exponent: i32,
    pub significand: f64,
    pub is_zero: bool,
}

impl ScalarDecomp {
    /// Reassembled value, exact.
    pub fn value(&self) -> f64 {
        f64::from(self.sign) * self.significand * exp2i(self.exponent)
    }
}

/// `2^e` as an exact binary64, for `e` in `[-1074, 1023]`. Exponents
/// past either end flush to zero or infinity like the arithmetic would.
pub(crate) fn exp2i(e: i32) -> f64 {
    if (-1022..=1023).contains(&e) {
        f64::from_bits(((e + 1023) as u64) << 52)
    } else if (-1074..-1022).contains(&e) {
        f64::from_bits(1u64 << (e + 1074))
    } else if e < 0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Splits a finite value into sign, power-of-two exponent and a
/// significand in `[1, 2)`.
///
/// NaN and infinities are rejected: the element formats encode neither,
/// so they cannot round-trip and must be caught at the boundary.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::decompose;
///
/// let d = decompose(0.75).unwrap();
/// assert_eq!((d.sign, d.exponent, d.significand), (1, -1, 1.5));
///
/// let z = decompose(-0.0).unwrap();
/// assert!(z.is_zero);
/// assert_eq!(z.sign, -1);
/// ```
pub fn decompose(x: f64) -> Result<ScalarDecomp> {
    if !x.is_finite() {
        return Err(MxError::NonFiniteInput { value: x, index: 0 });
    }
    let sign = if x.is_sign_negative() { -1 } else { 1 };
    if x == 0.0 {
        return Ok(ScalarDecomp {
            sign,
            exponent: 0,
            significand: 0.0,
            is_zero: true,
        });
    }
    let a = x.abs();
    let bits = a.to_bits();
    let raw_exp = ((bits >> 52) & 0x7ff) as i32;
    let exponent = if raw_exp == 0 {
        // Subnormal input: the value is mantissa · 2^-1074.
        let mant = bits & ((1u64 << 52) - 1);
        (63 - mant.leading_zeros() as i32) - 1074
    } else {
        raw_exp - 1023
    };
    // Dividing by a power of two is exact; the quotient lands in [1, 2).
    let significand = a / exp2i(exponent);
    Ok(ScalarDecomp {
        sign,
        exponent,
        significand,
        is_zero: false,
    })
}

/// Rounds a nonnegative significand to `frac_bits` fractional bits,
/// nearest value with ties to even.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::round_significand;
///
/// assert_eq!(round_significand(1.25, 0), 1.0); // tie, even side
/// assert_eq!(round_significand(1.5, 0), 2.0);
/// assert_eq!(round_significand(1.53125, 2), 1.5);
/// ```
pub fn round_significand(value: f64, frac_bits: u32) -> f64 {
    debug_assert!(value >= 0.0);
    debug_assert!(frac_bits <= 52);
    let scale = exp2i(frac_bits as i32);
    (value * scale).round_ties_even() / scale
}

/// Local exponent field a value would occupy inside an FP format:
/// `x_le = E - (S_e - e_x)` with `E = 2^exp_bits - 1`. Values at the
/// block maximum land on `E`; zero or below means the subnormal range.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{local_exponent, ElementFormat};
///
/// assert_eq!(local_exponent(0, 0, ElementFormat::E2M5), 3);
/// assert_eq!(local_exponent(-3, 0, ElementFormat::E2M5), 0);
/// assert_eq!(local_exponent(-5, 0, ElementFormat::E2M5), -2);
/// ```
pub fn local_exponent(e_x: i32, s_e: i32, fmt: ElementFormat) -> i32 {
    fmt.max_local_exp() - (s_e - e_x)
}

fn check_shared(x: &ScalarDecomp, s_e: i32) -> Result<()> {
    if !x.is_zero && x.exponent > s_e {
        return Err(MxError::ExponentAboveShared {
            exponent: x.exponent,
            shared: s_e,
        });
    }
    Ok(())
}

fn signed_zero(sign: i8, format: Format) -> (f64, ElementCode) {
    let bits = if sign < 0 {
        1u8 << (format.width() - 1)
    } else {
        0
    };
    (f64::from(sign) * 0.0, ElementCode::new(bits, format))
}

/// Quantizes onto the shared integer grid `2^(S_e - (m_i - 2))` with
/// `m_i` total code bits (one sign, `m_i - 1` magnitude). The magnitude
/// saturates at `2^(m_i-1) - 1` steps, so INT8 covers
/// `±(127/64) · 2^S_e`.
///
/// Returns the quantized value together with its sign-magnitude code.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{decompose, quantize_int};
///
/// let x = decompose(0.75).unwrap();
/// let (v, c) = quantize_int(&x, 0, 8).unwrap();
/// assert_eq!(v, 0.75); // 48 steps of 2^-6
/// assert_eq!(c.bits, 48);
/// ```
pub fn quantize_int(x: &ScalarDecomp, s_e: i32, m_i: u32) -> Result<(f64, ElementCode)> {
    assert!((2..=8).contains(&m_i), "integer code width {m_i} out of range 2..=8");
    check_shared(x, s_e)?;
    if x.is_zero {
        return Ok(signed_zero(x.sign, Format::Int8));
    }
    let d = s_e - x.exponent;
    let grid_bits = m_i as i32 - 2;
    // k = round(1.m · 2^(m_i-2) / 2^d), ties to even.
    let t = x.significand * exp2i(grid_bits - d);
    let mut k = t.round_ties_even() as u32;
    let max_mag = (1u32 << (m_i - 1)) - 1;
    if k > max_mag {
        k = max_mag;
    }
    if k == 0 {
        return Ok(signed_zero(x.sign, Format::Int8));
    }
    let value = f64::from(x.sign) * f64::from(k) * exp2i(s_e - grid_bits);
    let sign_bit = if x.sign < 0 { 1u8 << (m_i - 1) } else { 0 };
    Ok((value, ElementCode::new(sign_bit | k as u8, Format::Int8)))
}

/// Outcome of rounding a significand into an FP mantissa field.
struct FpRounded {
    e_field: i32,
    mantissa: u32,
}

/// Rounds `1.significand` at exponent field `e_field` to `m_f` mantissa
/// bits, carrying into the exponent on overflow to 2.0.
fn round_normal(significand: f64, e_field: i32, m_f: u32) -> FpRounded {
    let k = (significand * exp2i(m_f as i32)).round_ties_even() as u32;
    if k == 1 << (m_f + 1) {
        FpRounded {
            e_field: e_field + 1,
            mantissa: 0,
        }
    } else {
        FpRounded {
            e_field,
            mantissa: k - (1 << m_f),
        }
    }
}

fn pack_fp(sign: i8, e_field: u32, mantissa: u32, fmt: ElementFormat, format: Format) -> ElementCode {
    let sign_bit = if sign < 0 { 1u8 << (fmt.width() - 1) } else { 0 };
    let bits = sign_bit | ((e_field as u8) << fmt.mantissa_bits) | mantissa as u8;
    ElementCode::new(bits, format)
}

fn fp_value(sign: i8, e_field: i32, mantissa: u32, fmt: ElementFormat, s_e: i32) -> f64 {
    let m_scale = exp2i(-(fmt.mantissa_bits as i32));
    if e_field >= 1 {
        let sig = 1.0 + f64::from(mantissa) * m_scale;
        f64::from(sign) * sig * exp2i(e_field - fmt.bias + s_e)
    } else {
        let sig = f64::from(mantissa) * m_scale;
        f64::from(sign) * sig * exp2i(1 - fmt.bias + s_e)
    }
}

/// Quantizes into a miniature float format scaled by `2^S_e`.
///
/// Values whose rounded exponent field exceeds the format clamp to the
/// largest finite magnitude; values below the subnormal range round on
/// the subnormal grid `2^(1 - bias + S_e - m_f)` and may flush to zero.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{decompose, quantize_fp, Format};
///
/// let x = decompose(1.5).unwrap();
/// let (v, c) = quantize_fp(&x, 0, Format::E2M5).unwrap();
/// assert_eq!(v, 1.5);
/// assert_eq!(c.bits, 0x70); // [0 | 11 | 10000]
///
/// // 2^-12 sits below half the smallest E2M5 subnormal step at S_e = 0.
/// let tiny = decompose(2f64.powi(-12)).unwrap();
/// let (v, _) = quantize_fp(&tiny, 0, Format::E2M5).unwrap();
/// assert_eq!(v, 0.0);
/// ```
pub fn quantize_fp(x: &ScalarDecomp, s_e: i32, format: Format) -> Result<(f64, ElementCode)> {
    let fmt = format
        .element()
        .expect("quantize_fp requires a single-mode format");
    assert!(
        fmt.kind == FormatKind::Fp,
        "quantize_fp requires an FP format, got {format}"
    );
    check_shared(x, s_e)?;
    if x.is_zero {
        return Ok(signed_zero(x.sign, format));
    }
    let d = s_e - x.exponent;
    let e_field = fmt.bias - d;
    let max_e = fmt.max_local_exp();
    if e_field >= 1 {
        let r = round_normal(x.significand, e_field, fmt.mantissa_bits);
        if r.e_field > max_e {
            // Round-up overflow past the top of the format: clamp.
            let full = (1 << fmt.mantissa_bits) - 1;
            let value = fp_value(x.sign, max_e, full, fmt, s_e);
            return Ok((value, pack_fp(x.sign, max_e as u32, full, fmt, format)));
        }
        let value = fp_value(x.sign, r.e_field, r.mantissa, fmt, s_e);
        Ok((value, pack_fp(x.sign, r.e_field as u32, r.mantissa, fmt, format)))
    } else {
        // Subnormal range: round onto the fixed grid below the smallest
        // normal. The scale exponent stays well inside f64 range, so the
        // product underflows to zero exactly when the value does.
        let t = x.significand * exp2i(fmt.mantissa_bits as i32 + fmt.bias - 1 - d);
        let k = t.round_ties_even() as u32;
        if k == 0 {
            return Ok(signed_zero(x.sign, format));
        }
        if k == 1 << fmt.mantissa_bits {
            // Rounded up into the smallest normal.
            let value = fp_value(x.sign, 1, 0, fmt, s_e);
            return Ok((value, pack_fp(x.sign, 1, 0, fmt, format)));
        }
        let value = fp_value(x.sign, 0, k, fmt, s_e);
        Ok((value, pack_fp(x.sign, 0, k, fmt, format)))
    }
}

/// Encodes one value into the dual-mode MXSF byte.
///
/// Elements within two binades of the block maximum use the E2M5 mode;
/// everything further down uses the bias-10 E3M2 mode, whose normals
/// reach `2^(S_e-9)` and whose subnormal grid steps by `2^(S_e-11)`. A
/// round-up at the top of the E3M2 range promotes the element into the
/// E2M5 mode exactly; a round-up at the top of E2M5 clamps to
/// `(63/32) · 2^S_e`.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{decompose, encode_mxsf};
///
/// // Nine binades below the maximum: smallest E3M2-mode normal.
/// let x = decompose(2f64.powi(-9)).unwrap();
/// let (v, c) = encode_mxsf(&x, 0).unwrap();
/// assert_eq!(v, 2f64.powi(-9));
/// assert_eq!(c.bits, 0x04); // [0 | 00 | 001 | 00]
///
/// // E2M5 would flush 2^-10; MXSF keeps it on the subnormal grid.
/// let y = decompose(2f64.powi(-10)).unwrap();
/// let (v, _) = encode_mxsf(&y, 0).unwrap();
/// assert_eq!(v, 2f64.powi(-10));
/// ```
pub fn encode_mxsf(x: &ScalarDecomp, s_e: i32) -> Result<(f64, ElementCode)> {
    const E2M5: ElementFormat = ElementFormat::E2M5;
    const E3M2W: ElementFormat = ElementFormat::FP5_E3M2;
    check_shared(x, s_e)?;
    if x.is_zero {
        return Ok(signed_zero(x.sign, Format::Mxsf));
    }
    let d = s_e - x.exponent;
    if d < 3 {
        // Upper mode: plain E2M5 with a nonzero exponent field.
        let r = round_normal(x.significand, 3 - d, 5);
        if r.e_field > 3 {
            let value = fp_value(x.sign, 3, 31, E2M5, s_e);
            return Ok((value, pack_fp(x.sign, 3, 31, E2M5, Format::Mxsf)));
        }
        let value = fp_value(x.sign, r.e_field, r.mantissa, E2M5, s_e);
        return Ok((
            value,
            pack_fp(x.sign, r.e_field as u32, r.mantissa, E2M5, Format::Mxsf),
        ));
    }
    let e3 = 10 - d;
    if e3 >= 1 {
        let r = round_normal(x.significand, e3, 2);
        if r.e_field == 8 {
            // Top of the E3M2 range rounded up to 2^(S_e-2), which the
            // E2M5 mode represents exactly: promote instead of clamping.
            let value = fp_value(x.sign, 1, 0, E2M5, s_e);
            return Ok((value, pack_fp(x.sign, 1, 0, E2M5, Format::Mxsf)));
        }
        let value = fp_value(x.sign, r.e_field, r.mantissa, E3M2W, s_e);
        let code = pack_mxsf_low(x.sign, r.e_field as u32, r.mantissa);
        return Ok((value, code));
    }
    // E3M2-mode subnormals: grid 2^(S_e - 11).
    let t = x.significand * exp2i(11 - d);
    let k = t.round_ties_even() as u32;
    if k == 0 {
        return Ok(signed_zero(x.sign, Format::Mxsf));
    }
    if k == 4 {
        let value = fp_value(x.sign, 1, 0, E3M2W, s_e);
        return Ok((value, pack_mxsf_low(x.sign, 1, 0)));
    }
    let value = fp_value(x.sign, 0, k, E3M2W, s_e);
    Ok((value, pack_mxsf_low(x.sign, 0, k)))
}

fn pack_mxsf_low(sign: i8, e3: u32, mantissa: u32) -> ElementCode {
    let sign_bit = if sign < 0 { 0x80 } else { 0 };
    ElementCode::new(sign_bit | (e3 as u8) << 2 | mantissa as u8, Format::Mxsf)
}

/// Encodes through whichever path the format selects: the integer grid,
/// a single FP mode, or the dual-mode MXSF byte.
pub fn encode(x: &ScalarDecomp, s_e: i32, format: Format) -> Result<(f64, ElementCode)> {
    match format {
        Format::Int8 => quantize_int(x, s_e, 8),
        Format::Mxsf => encode_mxsf(x, s_e),
        _ => quantize_fp(x, s_e, format),
    }
}

/// Decodes a code back to its real value under the shared exponent.
///
/// Every bit pattern that fits the format width decodes to a finite
/// value; patterns wider than the format are rejected as malformed.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{decode, ElementCode, Format};
///
/// let c = ElementCode::new(0x70, Format::E2M5);
/// assert_eq!(decode(c, 0).unwrap(), 1.5);
///
/// // A byte-wide pattern cannot be a 4-bit E2M1 code.
/// let bad = ElementCode::new(0x70, Format::E2M1);
/// assert!(decode(bad, 0).is_err());
/// ```
pub fn decode(code: ElementCode, s_e: i32) -> Result<f64> {
    let width = code.format.width();
    if width < 8 && u32::from(code.bits) >= (1 << width) {
        return Err(MxError::MalformedCode {
            format: code.format.name(),
            bits: code.bits,
            width,
        });
    }
    match code.format {
        Format::Int8 => {
            let sign = if code.bits & 0x80 != 0 { -1.0 } else { 1.0 };
            let k = f64::from(code.bits & 0x7f);
            Ok(sign * k * exp2i(s_e - 6))
        }
        Format::Mxsf => {
            let sign: i8 = if code.bits & 0x80 != 0 { -1 } else { 1 };
            let e2 = i32::from((code.bits >> 5) & 0b11);
            if e2 != 0 {
                let m = u32::from(code.bits & 0x1f);
                Ok(fp_value(sign, e2, m, ElementFormat::E2M5, s_e))
            } else {
                let e3 = i32::from((code.bits >> 2) & 0b111);
                let m = u32::from(code.bits & 0b11);
                Ok(fp_value(sign, e3, m, ElementFormat::FP5_E3M2, s_e))
            }
        }
        _ => {
            let fmt = code.format.element().expect("single-mode format");
            let sign: i8 = if code.bits >> (width - 1) != 0 { -1 } else { 1 };
            let e = i32::from((code.bits >> fmt.mantissa_bits) & ((1 << fmt.exp_bits) - 1));
            let m = u32::from(code.bits & ((1 << fmt.mantissa_bits) - 1));
            Ok(fp_value(sign, e, m, fmt, s_e))
        }
    }
}

/// Largest positive value a format can represent under shared exponent
/// `s_e`: the decoded all-ones magnitude code.
///
/// # Examples
///
/// ```
/// use mxsafe::codec::{max_representable, Format};
///
/// assert_eq!(max_representable(Format::Int8, 0), 127.0 / 64.0);
/// assert_eq!(max_representable(Format::E2M5, 0), 63.0 / 32.0);
/// assert_eq!(max_representable(Format::Mxsf, 0), 63.0 / 32.0);
/// ```
pub fn max_representable(format: Format, s_e: i32) -> f64 {
    let bits = ((1u16 << (format.width() - 1)) - 1) as u8;
    decode(ElementCode::new(bits, format), s_e).expect("all-ones magnitude is a valid code")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn enc(x: f64, s_e: i32, format: Format) -> (f64, ElementCode) {
        encode(&decompose(x).unwrap(), s_e, format).unwrap()
    }

    #[test]
    fn decompose_splits_exactly() {
        let d = decompose(0.75).unwrap();
        assert_eq!((d.sign, d.exponent, d.significand), (1, -1, 1.5));
        let d = decompose(-3.0).unwrap();
        assert_eq!((d.sign, d.exponent, d.significand), (-1, 1, 1.5));
        let d = decompose(2f64.powi(-10)).unwrap();
        assert_eq!((d.exponent, d.significand), (-10, 1.0));
        // Subnormal f64 input still normalizes.
        let d = decompose(f64::from_bits(3)).unwrap();
        assert_eq!(d.exponent, -1073);
        assert_eq!(d.significand, 1.5);
        assert_eq!(d.value(), f64::from_bits(3));
    }

    #[test]
    fn decompose_rejects_non_finite() {
        assert!(decompose(f64::NAN).is_err());
        assert!(decompose(f64::INFINITY).is_err());
        assert!(decompose(f64::NEG_INFINITY).is_err());
    }

    #[test]
    fn decompose_keeps_zero_sign() {
        let z = decompose(0.0).unwrap();
        assert!(z.is_zero);
        assert_eq!(z.sign, 1);
        let z = decompose(-0.0).unwrap();
        assert!(z.is_zero);
        assert_eq!(z.sign, -1);
    }

    #[test]
    fn round_significand_ties_to_even() {
        assert_eq!(round_significand(1.25, 0), 1.0);
        assert_eq!(round_significand(1.5, 0), 2.0);
        assert_eq!(round_significand(2.5, 0), 2.0);
        assert_eq!(round_significand(1.53125, 2), 1.5);
        assert_eq!(round_significand(0.15625, 5), 0.15625);
    }

    #[test]
    fn quantize_int_matches_grid() {
        let (v, c) = enc(0.75, 0, Format::Int8);
        assert_eq!(v, 0.75);
        assert_eq!(c.bits, 48);
        // round(1.25) = 1 under ties-to-even; one step of 2^-6.
        let (v, c) = enc(1.25 * 2f64.powi(-6), 0, Format::Int8);
        assert_eq!(v, 0.015625);
        assert_eq!(c.bits, 1);
        // Negative values set the sign bit only.
        let (v, c) = enc(-0.75, 0, Format::Int8);
        assert_eq!(v, -0.75);
        assert_eq!(c.bits, 0x80 | 48);
    }

    #[test]
    fn quantize_int_saturates_at_127_steps() {
        // round(1.99609375 · 64) = 128, one past the magnitude field.
        let (v, c) = enc(1.99609375, 0, Format::Int8);
        assert_eq!(v, 127.0 / 64.0);
        assert_eq!(c.bits, 127);
    }

    #[test]
    fn quantize_int_underflows_to_signed_zero() {
        let (v, c) = enc(2f64.powi(-20), 0, Format::Int8);
        assert_eq!(v, 0.0);
        assert_eq!(c.bits, 0);
        let (v, c) = enc(-(2f64.powi(-20)), 0, Format::Int8);
        assert_eq!(v, 0.0);
        assert!(v.is_sign_negative());
        assert_eq!(c.bits, 0x80);
    }

    #[test]
    fn quantize_rejects_exponent_above_shared() {
        let x = decompose(4.0).unwrap();
        assert!(matches!(
            quantize_int(&x, 0, 8),
            Err(MxError::ExponentAboveShared { exponent: 2, shared: 0 })
        ));
        assert!(quantize_fp(&x, 0, Format::E2M5).is_err());
        assert!(encode_mxsf(&x, 0).is_err());
    }

    #[test]
    fn local_exponent_examples() {
        assert_eq!(local_exponent(0, 0, ElementFormat::E2M5), 3);
        assert_eq!(local_exponent(-3, 0, ElementFormat::E2M5), 0);
        assert_eq!(local_exponent(-5, 0, ElementFormat::E2M5), -2);
    }

    #[test]
    fn quantize_fp_normal_path() {
        let (v, c) = enc(1.5, 0, Format::E2M5);
        assert_eq!(v, 1.5);
        assert_eq!(c.bits, 0b0_11_10000);
        // One binade down the exponent field drops by one.
        let (v, c) = enc(0.75, 0, Format::E2M5);
        assert_eq!(v, 0.75);
        assert_eq!(c.bits, 0b0_10_10000);
    }

    #[test]
    fn quantize_fp_subnormal_path() {
        // 2^-5 at S_e = 0 sits on the subnormal grid 2^-7: 4 steps.
        let (v, c) = enc(2f64.powi(-5), 0, Format::E2M5);
        assert_eq!(v, 2f64.powi(-5));
        assert_eq!(c.bits, 0b0_00_00100);
        // Below half the smallest step: flush to zero.
        let (v, c) = enc(2f64.powi(-12), 0, Format::E2M5);
        assert_eq!(v, 0.0);
        assert_eq!(c.bits, 0);
        // Exactly half the smallest step ties to the even side, zero.
        let (v, _) = enc(2f64.powi(-8), 0, Format::E2M5);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn quantize_fp_subnormal_carry_into_normal() {
        // Just under the smallest normal rounds up into it.
        let x = 0.2490234375; // 0.1111111011₂ · 2^-2, rounds to 2^-2
        let (v, c) = enc(x, 0, Format::E2M5);
        assert_eq!(v, 0.25);
        assert_eq!(c.bits, 0b0_01_00000);
    }

    #[test]
    fn quantize_fp_clamps_on_rounding_overflow() {
        // significand 1.99609375 rounds to 2.0 at the top binade.
        let (v, c) = enc(1.99609375, 0, Format::E2M5);
        assert_eq!(v, 63.0 / 32.0);
        assert_eq!(c.bits, 0b0_11_11111);
    }

    #[test]
    fn quantize_fp_carry_inside_range() {
        // d = 1: the carry lands on e = 3, still in range.
        let (v, c) = enc(1.99609375 * 0.5, 0, Format::E2M5);
        assert_eq!(v, 1.0);
        assert_eq!(c.bits, 0b0_11_00000);
    }

    #[test]
    fn mxsf_upper_mode_matches_e2m5() {
        let (v, c) = enc(1.5, 0, Format::Mxsf);
        assert_eq!(v, 1.5);
        assert_eq!(c.bits, 0x70);
        assert_eq!(c.mxsf_mode(), MxsfMode::E2M5);
    }

    #[test]
    fn mxsf_lower_mode_normals() {
        let (v, c) = enc(1.0, 4, Format::Mxsf);
        assert_eq!(v, 1.0);
        assert_eq!(c.bits, 0x18); // [0 | 00 | 110 | 00], e3 = 6
        assert_eq!(c.mxsf_mode(), MxsfMode::E3M2);
        let (v, c) = enc(2f64.powi(-9), 0, Format::Mxsf);
        assert_eq!(v, 2f64.powi(-9));
        assert_eq!(c.bits, 0x04);
    }

    #[test]
    fn mxsf_subnormals_extend_to_2_pow_minus_11() {
        let (v, c) = enc(2f64.powi(-10), 0, Format::Mxsf);
        assert_eq!(v, 2f64.powi(-10));
        assert_eq!(c.bits, 0b0_00_000_10);
        let (v, c) = enc(2f64.powi(-11), 0, Format::Mxsf);
        assert_eq!(v, 2f64.powi(-11));
        assert_eq!(c.bits, 0b0_00_000_01);
        // Half the smallest step flushes (tie to even).
        let (v, c) = enc(2f64.powi(-12), 0, Format::Mxsf);
        assert_eq!(v, 0.0);
        assert_eq!(c.bits, 0);
    }

    #[test]
    fn mxsf_promotes_across_the_mode_boundary() {
        // d = 3 with a significand that rounds to 2.0: the value becomes
        // 2^(S_e-2), exactly the smallest E2M5-mode normal.
        let (v, c) = enc(1.9375 * 2f64.powi(-3), 0, Format::Mxsf);
        assert_eq!(v, 0.25);
        assert_eq!(c.bits, 0b0_01_00000);
        assert_eq!(c.mxsf_mode(), MxsfMode::E2M5);
    }

    #[test]
    fn mxsf_clamps_at_the_top() {
        let (v, c) = enc(1.99609375, 0, Format::Mxsf);
        assert_eq!(v, 63.0 / 32.0);
        assert_eq!(c.bits, 0x7f);
    }

    #[test]
    fn mxsf_agrees_with_e2m5_for_small_gaps() {
        for d in 0..3 {
            for j in 0..256 {
                let x = (1.0 + j as f64 / 256.0) * 2f64.powi(-d);
                let (v_m, _) = enc(x, 0, Format::Mxsf);
                let (v_e, _) = enc(x, 0, Format::E2M5);
                assert_eq!(v_m.to_bits(), v_e.to_bits(), "x = {x}");
            }
        }
    }

    #[test]
    fn decode_rejects_wide_bits() {
        let bad = ElementCode::new(0x70, Format::E2M1);
        assert!(matches!(
            decode(bad, 0),
            Err(MxError::MalformedCode { width: 4, .. })
        ));
    }

    #[test]
    fn decode_int8_sign_magnitude() {
        assert_eq!(decode(ElementCode::new(48, Format::Int8), 0).unwrap(), 0.75);
        assert_eq!(
            decode(ElementCode::new(0x80 | 48, Format::Int8), 0).unwrap(),
            -0.75
        );
        let neg_zero = decode(ElementCode::new(0x80, Format::Int8), 0).unwrap();
        assert_eq!(neg_zero, 0.0);
        assert!(neg_zero.is_sign_negative());
    }

    #[test]
    fn sign_symmetry_flips_only_the_sign_bit() {
        for format in [Format::Int8, Format::E2M5, Format::Mxsf, Format::E4M3] {
            for j in 0..512 {
                let x = (1.0 + j as f64 / 512.0) * 2f64.powi(-(j as i32 % 12));
                let (v_pos, c_pos) = enc(x, 0, format);
                let (v_neg, c_neg) = enc(-x, 0, format);
                assert_eq!(v_neg, -v_pos);
                assert_eq!(c_neg.bits, c_pos.bits | 0x80);
            }
        }
    }

    #[test]
    fn scale_shift_moves_values_by_a_power_of_two() {
        for k in [-6, -1, 1, 9] {
            for j in 0..128 {
                let x = (1.0 + j as f64 / 128.0) * 0.375;
                let (v0, c0) = enc(x, 0, Format::Mxsf);
                let (v1, c1) = enc(x * 2f64.powi(k), k, Format::Mxsf);
                assert_eq!(c0.bits, c1.bits);
                assert_eq!(v1, v0 * 2f64.powi(k));
            }
        }
    }
}
