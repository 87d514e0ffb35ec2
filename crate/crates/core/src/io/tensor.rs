//! Binary cache for coefficient tensors.
//!
//! Little-endian layout:
//!   bytes 0..4    magic "QNIT"
//!   u32           format version (1)
//!   u8            source kind: 0 thermal, 1 spdc
//!   u8            mode: 0 small-pixel, 1 quadrature
//!   u32           quadrature order q (0 in small-pixel mode)
//!   u32           n_det
//!   u32           n_pix
//!   u64           FNV-1a 64 checksum of the body
//!   body          n_det^2 * n_pix^2 complex entries, row-major in
//!                 (det_i, det_j, pix_l, pix_m), each as two f64 (re, im)

use std::path::Path;

use num_complex::Complex;

use crate::error::{CoreError, Result};
use crate::forward::{CoefficientTensor, TensorMode};
use crate::io::fnv1a64;
use crate::source::SourceKind;

const MAGIC: &[u8; 4] = b"QNIT";
const VERSION: u32 = 1;

pub fn write_tensor(tensor: &CoefficientTensor<f64>, path: &Path) -> Result<()> {
    let mut body =
        Vec::with_capacity(tensor.n_det * tensor.n_det * tensor.n_pix * tensor.n_pix * 16);
    for (_, v) in tensor.entries() {
        body.extend_from_slice(&v.re.to_le_bytes());
        body.extend_from_slice(&v.im.to_le_bytes());
    }
    let mut out = Vec::with_capacity(body.len() + 30);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match tensor.source_kind {
        SourceKind::Thermal => 0,
        SourceKind::Spdc => 1,
    });
    let (mode, q) = match tensor.mode {
        TensorMode::SmallPixel => (0u8, 0u32),
        TensorMode::Quadrature { q } => (1u8, q as u32),
    };
    out.push(mode);
    out.extend_from_slice(&q.to_le_bytes());
    out.extend_from_slice(&(tensor.n_det as u32).to_le_bytes());
    out.extend_from_slice(&(tensor.n_pix as u32).to_le_bytes());
    out.extend_from_slice(&fnv1a64(&body).to_le_bytes());
    out.extend_from_slice(&body);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<CoefficientTensor<f64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 30 || &bytes[0..4] != MAGIC {
        return Err(CoreError::Format("not a tensor cache file".into()));
    }
    let take_u32 = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
    let version = take_u32(4);
    if version != VERSION {
        return Err(CoreError::Format(format!("unsupported tensor version {version}")));
    }
    let source_kind = match bytes[8] {
        0 => SourceKind::Thermal,
        1 => SourceKind::Spdc,
        other => return Err(CoreError::Format(format!("bad source tag {other}"))),
    };
    let mode = match bytes[9] {
        0 => TensorMode::SmallPixel,
        1 => TensorMode::Quadrature { q: take_u32(10) as usize },
        other => return Err(CoreError::Format(format!("bad mode tag {other}"))),
    };
    let n_det = take_u32(14) as usize;
    let n_pix = take_u32(18) as usize;
    let checksum = u64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let body = &bytes[30..];
    let want_len = n_det * n_det * n_pix * n_pix * 16;
    if body.len() != want_len {
        return Err(CoreError::Format(format!(
            "tensor body length {} does not match header ({want_len})",
            body.len()
        )));
    }
    if fnv1a64(body) != checksum {
        return Err(CoreError::Format("tensor checksum mismatch".into()));
    }
    let mut entries = Vec::with_capacity(body.len() / 16);
    for chunk in body.chunks_exact(16) {
        let re = f64::from_le_bytes(chunk[0..8].try_into().unwrap());
        let im = f64::from_le_bytes(chunk[8..16].try_into().unwrap());
        entries.push(Complex::new(re, im));
    }
    CoefficientTensor::from_raw(source_kind, mode, n_det, n_pix, entries)
}

/// Human-readable dump: one row per entry, `i,j,l,m,re,im`.
pub fn dump_tensor_csv(tensor: &CoefficientTensor<f64>, path: &Path) -> Result<()> {
    let mut out = String::from("i,j,l,m,re,im\n");
    for ((i, j, l, m), v) in tensor.entries() {
        out.push_str(&format!("{i},{j},{l},{m},{},{}\n", v.re, v.im));
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optics::{DetectorGrid, Dims, ImagingSystem, ObjectModel};
    use crate::source::SourceModel;

    fn sample_tensor() -> CoefficientTensor<f64> {
        let sys = ImagingSystem::new(234.0, 454.0, 0.85, 405.0).unwrap();
        let obj = ObjectModel::centered(Dims::D1(4), 27.87, vec![1.0; 4]).unwrap();
        let src = SourceModel::thermal(40.0).unwrap();
        let det = DetectorGrid::covering(&obj, &sys, 30.0, 44.64).unwrap();
        CoefficientTensor::build(&obj, &sys, &src, &det, TensorMode::Quadrature { q: 3 }).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        let t = sample_tensor();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.qnit");
        write_tensor(&t, &path).unwrap();
        let back = read_tensor(&path).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn corruption_is_detected() {
        let t = sample_tensor();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.qnit");
        write_tensor(&t, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 3] ^= 0xff;
        std::fs::write(&path, bytes).unwrap();
        let err = read_tensor(&path).unwrap_err();
        assert!(err.to_string().contains("checksum"));
    }

    #[test]
    fn csv_dump_has_all_rows() {
        let t = sample_tensor();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        dump_tensor_csv(&t, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let rows = text.lines().count() - 1;
        assert_eq!(rows, t.n_det * t.n_det * t.n_pix * t.n_pix);
    }
}
