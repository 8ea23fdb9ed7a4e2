//! Bit-exact file formats for dense matrices and quantized tensors.
//!
//! Dense files carry a length-prefixed text header (`key=value` lines
//! for dims and element count) followed by little-endian binary32
//! payload in row-major order.
//!
//! Quantized files (`.mxb`) open with the magic `MXB1`, one format id
//! byte, the tile shape as two little-endian u16s and the logical dims
//! as two little-endian u32s, then the blocks in row-major grid order.
//! Each block stores its shared exponent biased by 127 in one byte
//! (0xFF marks an all-zero block) followed by the element codes in
//! row-major tile order. 8-bit codes take a byte each; narrower codes
//! pack little-endian into a bit stream padded with zeros to the next
//! byte boundary, so every block stays byte-aligned and independently
//! addressable.
//!
//! Both formats are canonical: loading a file and saving the result
//! reproduces the original bytes exactly. Loaders enforce the
//! canonical form (pad bits zero, zero blocks all-zero) so a byte
//! stream has exactly one accepted reading.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::block::{QuantizedBlock, QuantizedTensor, TileShape};
use crate::codec::Format;
use crate::error::{MxError, Result};
use crate::matrix::Matrix;

const MXB_MAGIC: [u8; 4] = *b"MXB1";
const ZERO_BLOCK_SENTINEL: u8 = 0xFF;
const SHARED_EXP_BIAS: i32 = 127;

fn format_id(format: Format) -> u8 {
    match format {
        Format::Int8 => 0,
        Format::E4M3 => 1,
        Format::E5M2 => 2,
        Format::E2M5 => 3,
        Format::Mxsf => 4,
        Format::E2M1 => 5,
        Format::E2M3 => 6,
        Format::E3M2 => 7,
        Format::Fp5E3M2 => unreachable!("wide-mode layout is internal to the dual-mode byte"),
    }
}

fn format_from_id(id: u8) -> Result<Format> {
    Ok(match id {
        0 => Format::Int8,
        1 => Format::E4M3,
        2 => Format::E5M2,
        3 => Format::E2M5,
        4 => Format::Mxsf,
        5 => Format::E2M1,
        6 => Format::E2M3,
        7 => Format::E3M2,
        other => return Err(MxError::UnknownFormatId(other)),
    })
}

/// Formats that may appear in a quantized file. The dual-mode byte's
/// wide mode has no id of its own: it is an encoding detail, not a
/// tensor format.
pub fn storable_formats() -> impl Iterator<Item = Format> {
    Format::ALL.into_iter().filter(|f| *f != Format::Fp5E3M2)
}

/// Saves a matrix as a dense binary32 file.
pub fn save_dense<P: AsRef<Path>>(path: P, m: &Matrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let header = format!("rows={}\ncols={}\ncount={}\n", m.rows(), m.cols(), m.rows() * m.cols());
    out.write_all(&(header.len() as u32).to_le_bytes())?;
    out.write_all(header.as_bytes())?;
    for &v in m.data() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Loads a dense binary32 file. Values widen to binary64 exactly, so
/// saving the result again is lossless.
pub fn load_dense<P: AsRef<Path>>(path: P) -> Result<Matrix> {
    let mut input = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 4];
    read_exact_or(&mut input, &mut len_bytes, "header length")?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    if header_len > 1 << 16 {
        return Err(MxError::CorruptHeader(format!(
            "implausible header length {header_len}"
        )));
    }
    let mut header = vec![0u8; header_len];
    read_exact_or(&mut input, &mut header, "header")?;
    let header = String::from_utf8(header)
        .map_err(|_| MxError::CorruptHeader("header is not utf-8".into()))?;
    let mut rows = None;
    let mut cols = None;
    let mut count = None;
    for line in header.lines() {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| MxError::CorruptHeader(format!("malformed line {line:?}")))?;
        let parsed: usize = value
            .parse()
            .map_err(|_| MxError::CorruptHeader(format!("bad value in {line:?}")))?;
        match key {
            "rows" => rows = Some(parsed),
            "cols" => cols = Some(parsed),
            "count" => count = Some(parsed),
            _ => return Err(MxError::CorruptHeader(format!("unknown key {key:?}"))),
        }
    }
    let (rows, cols, count) = match (rows, cols, count) {
        (Some(r), Some(c), Some(n)) => (r, c, n),
        _ => return Err(MxError::CorruptHeader("missing rows/cols/count".into())),
    };
    if rows.checked_mul(cols) != Some(count) {
        return Err(MxError::CorruptHeader(format!(
            "count {count} does not match {rows}x{cols}"
        )));
    }
    let mut payload = vec![0u8; count * 4];
    read_exact_or(&mut input, &mut payload, "payload")?;
    let data = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes([b[0], b[1], b[2], b[3]])))
        .collect();
    Ok(Matrix::from_vec(rows, cols, data))
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        let n = r.read(&mut buf[filled..])?;
        if n == 0 {
            return Err(MxError::TruncatedPayload {
                expected: buf.len(),
                found: filled,
            });
        }
        filled += n;
    }
    let _ = what;
    Ok(())
}

fn packed_code_bytes(width: u32, count: usize) -> usize {
    (width as usize * count).div_ceil(8)
}

fn pack_codes(codes: &[u8], width: u32) -> Vec<u8> {
    if width == 8 {
        return codes.to_vec();
    }
    let mut out = vec![0u8; packed_code_bytes(width, codes.len())];
    let mut bit = 0usize;
    for &code in codes {
        let byte = bit / 8;
        let offset = bit % 8;
        out[byte] |= code << offset;
        if offset + width as usize > 8 {
            out[byte + 1] |= code >> (8 - offset);
        }
        bit += width as usize;
    }
    out
}

fn unpack_codes(bytes: &[u8], width: u32, count: usize) -> Vec<u8> {
    if width == 8 {
        return bytes.to_vec();
    }
    let mask = (1u16 << width) - 1;
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let byte = bit / 8;
        let offset = bit % 8;
        let mut raw = u16::from(bytes[byte]) >> offset;
        if offset + width as usize > 8 {
            raw |= u16::from(bytes[byte + 1]) << (8 - offset);
        }
        out.push((raw & mask) as u8);
        bit += width as usize;
    }
    out
}

/// Saves a quantized tensor. A transposed view is first rebuilt in its
/// own orientation, so the file always stores blocks matching the
/// logical dims it declares.
pub fn save_mxb<P: AsRef<Path>>(path: P, q: &QuantizedTensor) -> Result<()> {
    let materialized;
    let q = if q.is_transposed() {
        materialized = q.materialized();
        &materialized
    } else {
        q
    };
    let (rows, cols) = q.dims();
    let tile = q.tile();
    if rows > u32::MAX as usize || cols > u32::MAX as usize {
        return Err(MxError::CorruptHeader("dims exceed file format range".into()));
    }
    if tile.rows > u16::MAX as usize || tile.cols > u16::MAX as usize {
        return Err(MxError::CorruptHeader("tile exceeds file format range".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MXB_MAGIC)?;
    out.write_all(&[format_id(q.format())])?;
    out.write_all(&(tile.rows as u16).to_le_bytes())?;
    out.write_all(&(tile.cols as u16).to_le_bytes())?;
    out.write_all(&(rows as u32).to_le_bytes())?;
    out.write_all(&(cols as u32).to_le_bytes())?;
    let width = q.format().width();
    let (grid_rows, grid_cols) = q.grid();
    for bi in 0..grid_rows {
        for bj in 0..grid_cols {
            let block = q.block(bi, bj);
            if block.zero_block {
                out.write_all(&[ZERO_BLOCK_SENTINEL])?;
            } else {
                let biased = block.shared_exp + SHARED_EXP_BIAS;
                if !(0..=254).contains(&biased) {
                    return Err(MxError::ScaleOutOfRange(block.shared_exp));
                }
                out.write_all(&[biased as u8])?;
            }
            out.write_all(&pack_codes(&block.codes, width))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Loads a quantized tensor, enforcing the canonical form: every pad
/// bit of a packed block must be zero and a zero block must carry
/// all-zero codes. Anything else is reported as a corrupt block, never
/// silently normalized.
pub fn load_mxb<P: AsRef<Path>>(path: P) -> Result<QuantizedTensor> {
    let mut input = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact_or(&mut input, &mut magic, "magic")?;
    if magic != MXB_MAGIC {
        return Err(MxError::BadMagic {
            found: magic,
            expected: "MXB1",
        });
    }
    let mut fixed = [0u8; 13];
    read_exact_or(&mut input, &mut fixed, "header")?;
    let format = format_from_id(fixed[0])?;
    let tile_rows = u16::from_le_bytes([fixed[1], fixed[2]]) as usize;
    let tile_cols = u16::from_le_bytes([fixed[3], fixed[4]]) as usize;
    let rows = u32::from_le_bytes([fixed[5], fixed[6], fixed[7], fixed[8]]) as usize;
    let cols = u32::from_le_bytes([fixed[9], fixed[10], fixed[11], fixed[12]]) as usize;
    if tile_rows == 0 || tile_cols == 0 {
        return Err(MxError::CorruptHeader(format!(
            "tile {tile_rows}x{tile_cols} has no elements"
        )));
    }
    let tile = TileShape::new(tile_rows, tile_cols);
    let width = format.width();
    let capacity = tile.capacity();
    let block_bytes = packed_code_bytes(width, capacity);
    let grid_rows = rows.div_ceil(tile.rows);
    let grid_cols = cols.div_ceil(tile.cols);
    let mut blocks = Vec::with_capacity(grid_rows * grid_cols);
    let mut raw = vec![0u8; block_bytes];
    for index in 0..grid_rows * grid_cols {
        let mut scale = [0u8; 1];
        read_exact_or(&mut input, &mut scale, "block scale")?;
        read_exact_or(&mut input, &mut raw, "block codes")?;
        if width < 8 {
            let used_bits = width as usize * capacity;
            let pad_bits = block_bytes * 8 - used_bits;
            if pad_bits > 0 && raw[block_bytes - 1] >> (8 - pad_bits) != 0 {
                return Err(MxError::CorruptBlock {
                    index,
                    reason: "nonzero padding bits".into(),
                });
            }
        }
        let codes = unpack_codes(&raw, width, capacity);
        let zero_block = scale[0] == ZERO_BLOCK_SENTINEL;
        if zero_block && codes.iter().any(|&c| c != 0) {
            return Err(MxError::CorruptBlock {
                index,
                reason: "zero block carries nonzero codes".into(),
            });
        }
        let shared_exp = if zero_block {
            0
        } else {
            i32::from(scale[0]) - SHARED_EXP_BIAS
        };
        blocks.push(QuantizedBlock {
            shared_exp,
            format,
            codes,
            zero_block,
        });
    }
    let mut tail = [0u8; 1];
    if input.read(&mut tail)? != 0 {
        return Err(MxError::CorruptHeader("trailing bytes after last block".into()));
    }
    Ok(QuantizedTensor::from_parts(rows, cols, tile, format, blocks))
}
