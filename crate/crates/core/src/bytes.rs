//! Little-endian variable-width integer helpers shared by every on-disk format.

use crate::error::{Error, Result};

/// Appends the low `width` bytes of `v`, little-endian.
#[inline]
pub(crate) fn put_uint(out: &mut Vec<u8>, v: u64, width: usize) {
    debug_assert!(width <= 8);
    debug_assert!(width == 8 || v < (1u64 << (8 * width)));
    out.extend_from_slice(&v.to_le_bytes()[..width]);
}

/// Reads a little-endian integer of `width` bytes. `b` must hold at least `width` bytes.
#[inline]
pub(crate) fn get_uint(b: &[u8], width: usize) -> u64 {
    let mut buf = [0u8; 8];
    buf[..width].copy_from_slice(&b[..width]);
    u64::from_le_bytes(buf)
}

/// Bounds-checked variant of [`get_uint`] reading at `off`.
#[inline]
pub(crate) fn read_uint_at(b: &[u8], off: usize, width: usize) -> Result<u64> {
    match b.get(off..off + width) {
        Some(s) => Ok(get_uint(s, width)),
        None => Err(Error::Truncated(format!("need {width} bytes at offset {off}, have {}", b.len()))),
    }
}

pub(crate) fn read_u32(b: &[u8], off: usize) -> Result<u32> {
    read_uint_at(b, off, 4).map(|v| v as u32)
}

pub(crate) fn read_u64(b: &[u8], off: usize) -> Result<u64> {
    read_uint_at(b, off, 8)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_widths() {
        for width in 1..=8usize {
            let v = if width == 8 { u64::MAX } else { (1u64 << (8 * width)) - 1 };
            let mut out = Vec::new();
            put_uint(&mut out, v, width);
            assert_eq!(out.len(), width);
            assert_eq!(get_uint(&out, width), v);
        }
    }

    #[test]
    fn truncated_read() {
        assert!(read_uint_at(&[1, 2], 1, 2).is_err());
        assert_eq!(read_uint_at(&[1, 2, 3], 1, 2).unwrap(), 0x0302);
    }
}
