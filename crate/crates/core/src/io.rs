//! On-disk formats: KSP1 k-space stacks, MSK1 masks, binary PGM images and
//! the metrics CSV. All binary integers and floats are little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fourier::{ComplexImage, Domain};
use crate::sampling::Mask;
use crate::tensor::Real;

pub const KSP_MAGIC: &[u8; 4] = b"KSP1";
pub const MSK_MAGIC: &[u8; 4] = b"MSK1";

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Writes to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

pub(crate) fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn encode_ksp<F: Real>(slices: &[ComplexImage<F>]) -> Result<Vec<u8>> {
    let first = slices.first().ok_or_else(|| Error::invalid("no slices to encode"))?;
    let (h, w) = (first.height(), first.width());
    if let Some(bad) = slices.iter().find(|s| s.height() != h || s.width() != w) {
        return Err(Error::shape(
            "encode_ksp",
            "slice",
            format!("{h}x{w} like the first slice"),
            &[bad.height(), bad.width()],
        ));
    }
    let mut out = Vec::with_capacity(16 + 8 * slices.len() * h * w);
    out.extend_from_slice(KSP_MAGIC);
    for v in [slices.len(), h, w] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for s in slices {
        for (r, i) in s.re.iter().zip(&s.im) {
            out.extend_from_slice(&(r.as_f64() as f32).to_le_bytes());
            out.extend_from_slice(&(i.as_f64() as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_ksp(bytes: &[u8], path: &Path) -> Result<Vec<ComplexImage<f32>>> {
    if bytes.len() < 4 || &bytes[..4] != KSP_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "KSP1",
        });
    }
    if bytes.len() < 16 {
        return Err(format_err(path, "truncated header"));
    }
    let (n, h, w) = (
        u32_at(bytes, 4) as usize,
        u32_at(bytes, 8) as usize,
        u32_at(bytes, 12) as usize,
    );
    let expected = 16 + 8 * n * h * w;
    if bytes.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} bytes for {n}x{h}x{w}, found {}", bytes.len()),
        ));
    }
    if n == 0 || h == 0 || w == 0 {
        return Err(format_err(path, "empty k-space stack"));
    }
    let floats: Vec<f32> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    floats
        .chunks_exact(2 * h * w)
        .map(|slice| {
            let re = slice.iter().step_by(2).copied().collect();
            let im = slice.iter().skip(1).step_by(2).copied().collect();
            ComplexImage::new(h, w, re, im, Domain::KSpace)
        })
        .collect()
}

pub fn write_ksp<F: Real>(path: &Path, slices: &[ComplexImage<F>]) -> Result<()> {
    write_atomic(path, &encode_ksp(slices)?)
}

pub fn read_ksp(path: &Path) -> Result<Vec<ComplexImage<f32>>> {
    decode_ksp(&read_file(path)?, path)
}

pub fn encode_mask(mask: &Mask) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + mask.len());
    out.extend_from_slice(MSK_MAGIC);
    out.extend_from_slice(&(mask.len() as u32).to_le_bytes());
    out.extend(mask.lines().iter().map(|&b| b as u8));
    out
}

pub fn decode_mask(bytes: &[u8], path: &Path) -> Result<Mask> {
    if bytes.len() < 4 || &bytes[..4] != MSK_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "MSK1",
        });
    }
    if bytes.len() < 8 {
        return Err(format_err(path, "truncated header"));
    }
    let p = u32_at(bytes, 4) as usize;
    if bytes.len() != 8 + p {
        return Err(format_err(
            path,
            format!("expected {} bytes for P={p}, found {}", 8 + p, bytes.len()),
        ));
    }
    let lines = bytes[8..]
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(format_err(path, format!("mask byte {other} is not 0 or 1"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Mask::from_lines(lines).map_err(|e| format_err(path, e.to_string()))
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    write_atomic(path, &encode_mask(mask))
}

pub fn read_mask(path: &Path) -> Result<Mask> {
    decode_mask(&read_file(path)?, path)
}

/// Binary PGM (P5, maxval 255), scaled so the slice maximum maps to 255.
/// An all-zero image stays black.
pub fn encode_pgm<F: Real>(magnitude: &[F], height: usize, width: usize) -> Result<Vec<u8>> {
    if magnitude.len() != height * width {
        return Err(Error::shape(
            "encode_pgm",
            "image",
            format!("{height}x{width}"),
            &[magnitude.len()],
        ));
    }
    let max = magnitude.iter().fold(0.0f64, |m, v| m.max(v.as_f64()));
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(magnitude.iter().map(|v| {
        if max > 0.0 {
            (255.0 * (v.as_f64() / max)).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    Ok(out)
}

pub fn write_pgm<F: Real>(path: &Path, magnitude: &[F], height: usize, width: usize) -> Result<()> {
    write_atomic(path, &encode_pgm(magnitude, height, width)?)
}

/// Writes one PGM per slice as `slice_{index:04}.pgm` under `dir`.
pub fn export_slices<F: Real>(dir: &Path, slices: &[Vec<F>], height: usize, width: usize) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    slices
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let path = dir.join(format!("slice_{i:04}.pgm"));
            write_pgm(&path, s, height, width)?;
            Ok(path)
        })
        .collect()
}

/// One row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub epoch: usize,
    pub split: String,
    pub nmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub loss: f64,
}

pub const CSV_HEADER: &str = "epoch,split,nmse,psnr,ssim,loss";

pub fn format_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch, r.split, r.nmse, r.psnr, r.ssim, r.loss
        ));
    }
    s
}

pub fn parse_csv(text: &str, path: &Path) -> Result<Vec<MetricRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(format_err(path, format!("missing header {CSV_HEADER:?}")));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || format_err(path, format!("line {}: {line:?}", i + 2));
            if cols.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            Ok(MetricRow {
                epoch: cols[0].parse().map_err(|_| bad())?,
                split: cols[1].to_string(),
                nmse: num(cols[2])?,
                psnr: num(cols[3])?,
                ssim: num(cols[4])?,
                loss: num(cols[5])?,
            })
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[MetricRow]) -> Result<()> {
    write_atomic(path, format_csv(rows).as_bytes())
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| format_err(path, "not UTF-8"))?;
    parse_csv(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_constant_and_zero() {
        let bytes = encode_pgm(&[0.7f32; 6], 2, 3).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert!(bytes[header.len()..].iter().all(|&b| b == 255));
        let bytes = encode_pgm(&[0.0f32; 6], 2, 3).unwrap();
        assert!(bytes[header.len()..].iter().all(|&b| b == 0));
    }

    #[test]
    fn ksp_byte_length_and_magic() {
        let s = ComplexImage::new(2, 3, vec![1.0f32; 6], vec![-1.0; 6], Domain::KSpace).unwrap();
        let bytes = encode_ksp(&[s.clone(), s]).unwrap();
        assert_eq!(bytes.len(), 16 + 8 * 2 * 2 * 3);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_ksp(&bad, Path::new("x")), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_ksp(&bytes[..bytes.len() - 1], Path::new("x")),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn mask_rejects_non_binary_bytes() {
        let mut bytes = encode_mask(&Mask::full(4));
        bytes[9] = 2;
        assert!(decode_mask(&bytes, Path::new("m")).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            MetricRow {
                epoch: 3,
                split: "val".into(),
                nmse: 0.0123456789,
                psnr: f64::INFINITY,
                ssim: 0.7314,
                loss: 0.2686,
            },
            MetricRow {
                epoch: 4,
                split: "train".into(),
                nmse: 1e-9,
                psnr: 31.25,
                ssim: -0.01,
                loss: 1.01,
            },
        ];
        let back = parse_csv(&format_csv(&rows), Path::new("m.csv")).unwrap();
        assert_eq!(back, rows);
    }
}
