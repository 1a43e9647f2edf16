//! Flat binary layout shared by complex fields and voxel weights.
//!
//! Header: thirteen little-endian f64 values
//! `[cx, cy, cz, hx, hy, hz, sx, sy, sz, nx, ny, nz, flag]` (box center,
//! half-widths, steps, counts, and `flag = 0` for interleaved complex
//! payloads or `1` for real payloads). Values follow in x-fastest order.

use std::io::{Read, Write};

use crate::error::{LabError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldHeader {
    pub center: [f64; 3],
    pub half: [f64; 3],
    pub steps: [f64; 3],
    pub counts: [usize; 3],
    pub real: bool,
}

impl FieldHeader {
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn write<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let mut vals = Vec::with_capacity(13);
        vals.extend_from_slice(&self.center);
        vals.extend_from_slice(&self.half);
        vals.extend_from_slice(&self.steps);
        vals.extend(self.counts.iter().map(|&c| c as f64));
        vals.push(if self.real { 1.0 } else { 0.0 });
        write_f64s(w, &vals)
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let v = read_f64s(r, 13)?;
        let count = |x: f64| {
            if x >= 1.0 && x.fract() == 0.0 && x < 1e15 {
                Ok(x as usize)
            } else {
                Err(LabError::Malformed(format!("bad node count {x}")))
            }
        };
        let real = match v[12] {
            0.0 => false,
            1.0 => true,
            f => return Err(LabError::Malformed(format!("bad payload flag {f}"))),
        };
        Ok(FieldHeader {
            center: [v[0], v[1], v[2]],
            half: [v[3], v[4], v[5]],
            steps: [v[6], v[7], v[8]],
            counts: [count(v[9])?, count(v[10])?, count(v[11])?],
            real,
        })
    }
}

pub fn write_f64s<W: Write>(w: &mut W, vals: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(vals.len() * 8);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)
}

pub fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)
        .map_err(|e| LabError::Malformed(format!("truncated payload: {e}")))?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_round_trip() {
        let h = FieldHeader {
            center: [0.5, -1.0, 2.0],
            half: [1.0, 2.0, 3.0],
            steps: [0.25, 0.5, 0.75],
            counts: [8, 8, 8],
            real: true,
        };
        let mut buf = Vec::new();
        h.write(&mut buf).unwrap();
        assert_eq!(buf.len(), 13 * 8);
        assert_eq!(FieldHeader::read(&mut buf.as_slice()).unwrap(), h);
    }

    #[test]
    fn rejects_truncated_header() {
        let buf = vec![0u8; 40];
        assert!(FieldHeader::read(&mut buf.as_slice()).is_err());
    }
}
