//! File formats: binary PGM images, raw Y-only video, and the operator
//! and measurement containers used to move data between the CLI
//! subcommands.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::block::BlockGeometry;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::sensing::{BlockSensingOperator, MeasurementSet};

/// Reads an 8-bit binary (P5) PGM file.
pub fn read_pgm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_pgm(&bytes).map_err(|reason| Error::format(path.display().to_string(), reason))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // Skip whitespace and '#' comment lines.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(bytes)?;
    if magic != "P5" {
        return Err(format!("expected P5 magic, got {magic}"));
    }
    let width: usize = token(bytes)?.parse().map_err(|_| "bad width".to_string())?;
    let height: usize = token(bytes)?.parse().map_err(|_| "bad height".to_string())?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| "bad maxval".to_string())?;
    if maxval == 0 || maxval > 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height;
    if bytes.len() < pos + need {
        return Err(format!(
            "raster truncated: need {need} bytes, have {}",
            bytes.len().saturating_sub(pos)
        ));
    }
    Image::from_u8(height, width, &bytes[pos..pos + need]).map_err(|e| e.to_string())
}

/// Writes an 8-bit binary (P5) PGM file, clamping and rounding intensities.
pub fn write_pgm(img: &Image, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(img.len() + 32);
    out.extend_from_slice(format!("P5\n{} {}\n255\n", img.width(), img.height()).as_bytes());
    out.extend_from_slice(&img.to_u8());
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a raw 8-bit Y-only planar video file as frames of the given size.
pub fn read_raw_video(path: &Path, height: usize, width: usize) -> Result<Vec<Image>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let frame_len = height * width;
    if frame_len == 0 || bytes.len() % frame_len != 0 {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "file size {} is not a multiple of the {}x{} frame size",
                bytes.len(),
                width,
                height
            ),
        ));
    }
    bytes
        .chunks(frame_len)
        .map(|chunk| Image::from_u8(height, width, chunk))
        .collect()
}

/// Reads every `.pgm` file in a directory, sorted by file name.
pub fn read_pgm_dir(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir.display().to_string(), e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::format(
            dir.display().to_string(),
            "no .pgm frames found".to_string(),
        ));
    }
    paths.iter().map(|p| read_pgm(p)).collect()
}

const OPERATOR_MAGIC: &[u8; 4] = b"BCSO";
const MEASUREMENT_MAGIC: &[u8; 4] = b"BCSM";

/// Writes an operator as a little-endian binary: magic, (m, n, seed)
/// header, then the row-major f64 entries.
pub fn write_operator(op: &BlockSensingOperator, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(28 + op.entries().len() * 8);
    out.extend_from_slice(OPERATOR_MAGIC);
    out.extend_from_slice(&(op.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(op.cols() as u64).to_le_bytes());
    out.extend_from_slice(&op.seed().to_le_bytes());
    for v in op.entries() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads an operator written by [`write_operator`].
pub fn read_operator(path: &Path) -> Result<BlockSensingOperator> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = [0u8; 28];
    f.read_exact(&mut header)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if &header[0..4] != OPERATOR_MAGIC {
        return Err(Error::format(
            path.display().to_string(),
            "bad operator magic".to_string(),
        ));
    }
    let rows = u64::from_le_bytes(header[4..12].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(header[12..20].try_into().unwrap()) as usize;
    let seed = u64::from_le_bytes(header[20..28].try_into().unwrap());
    let mut body = Vec::new();
    f.read_to_end(&mut body)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if body.len() != rows * cols * 8 {
        return Err(Error::format(
            path.display().to_string(),
            format!("expected {} entry bytes, got {}", rows * cols * 8, body.len()),
        ));
    }
    let entries: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    BlockSensingOperator::from_entries(rows, cols, seed, entries)
}

/// A sensed image bundle: geometry, operator identity, and per-block
/// measurements, enough to recover without the original picture.
#[derive(Debug, Clone, PartialEq)]
pub struct SensedFile {
    pub height: usize,
    pub width: usize,
    pub block_side: usize,
    pub rows: usize,
    pub cols: usize,
    pub seed: u64,
    pub measurements: Vec<f64>,
}

impl SensedFile {
    pub fn geometry(&self) -> Result<BlockGeometry> {
        BlockGeometry::for_image(self.height, self.width, self.block_side)
    }

    pub fn measurement_set(&self) -> Result<MeasurementSet> {
        let geom = self.geometry()?;
        if self.measurements.len() != geom.block_count() * self.rows {
            return Err(Error::ShapeMismatch(format!(
                "expected {} measurements, got {}",
                geom.block_count() * self.rows,
                self.measurements.len()
            )));
        }
        let per_block = self
            .measurements
            .chunks(self.rows)
            .map(|c| c.to_vec())
            .collect();
        Ok(MeasurementSet::new(
            per_block,
            self.rows as f64 / self.cols as f64,
        ))
    }
}

/// Writes measurements with their sensing context.
pub fn write_sensed(file: &SensedFile, path: &Path) -> Result<()> {
    let mut out = Vec::with_capacity(52 + file.measurements.len() * 8);
    out.extend_from_slice(MEASUREMENT_MAGIC);
    for v in [
        file.height as u64,
        file.width as u64,
        file.block_side as u64,
        file.rows as u64,
        file.cols as u64,
        file.seed,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &file.measurements {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a bundle written by [`write_sensed`].
pub fn read_sensed(path: &Path) -> Result<SensedFile> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut header = [0u8; 52];
    f.read_exact(&mut header)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if &header[0..4] != MEASUREMENT_MAGIC {
        return Err(Error::format(
            path.display().to_string(),
            "bad measurement magic".to_string(),
        ));
    }
    let word = |i: usize| u64::from_le_bytes(header[4 + 8 * i..12 + 8 * i].try_into().unwrap());
    let mut body = Vec::new();
    f.read_to_end(&mut body)
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    if body.len() % 8 != 0 {
        return Err(Error::format(
            path.display().to_string(),
            "truncated measurement data".to_string(),
        ));
    }
    Ok(SensedFile {
        height: word(0) as usize,
        width: word(1) as usize,
        block_side: word(2) as usize,
        rows: word(3) as usize,
        cols: word(4) as usize,
        seed: word(5),
        measurements: body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    })
}

/// Writes a string to a file, mapping errors to the crate error type.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::make_gaussian_operator;

    #[test]
    fn pgm_round_trip() {
        let dir = std::env::temp_dir().join(format!("blockcs-pgm-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let img = Image::from_fn(5, 7, |r, c| ((r * 41 + c * 17) % 256) as f64);
        let path = dir.join("img.pgm");
        write_pgm(&img, &path).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, img);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# generated\n3 2\n255\n".to_vec();
        bytes.extend_from_slice(&[10, 20, 30, 40, 50, 60]);
        let img = parse_pgm(&bytes).unwrap();
        assert_eq!(img.height(), 2);
        assert_eq!(img.width(), 3);
        assert_eq!(img.get(1, 2), 60.0);
    }

    #[test]
    fn operator_round_trip_is_bit_exact() {
        let dir = std::env::temp_dir().join(format!("blockcs-op-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let op = make_gaussian_operator(3, 9, 42).unwrap();
        let path = dir.join("op.bin");
        write_operator(&op, &path).unwrap();
        let back = read_operator(&path).unwrap();
        assert_eq!(back, op);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn raw_video_splits_frames() {
        let dir = std::env::temp_dir().join(format!("blockcs-raw-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("clip.yuv");
        let data: Vec<u8> = (0..24).collect();
        std::fs::write(&path, &data).unwrap();
        let frames = read_raw_video(&path, 2, 3).unwrap();
        assert_eq!(frames.len(), 4);
        assert_eq!(frames[1].get(0, 0), 6.0);
        assert!(read_raw_video(&path, 5, 5).is_err());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sensed_bundle_round_trip() {
        let dir = std::env::temp_dir().join(format!("blockcs-ms-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let file = SensedFile {
            height: 4,
            width: 4,
            block_side: 2,
            rows: 2,
            cols: 4,
            seed: 7,
            measurements: (0..8).map(|v| v as f64 * 0.5).collect(),
        };
        let path = dir.join("m.bin");
        write_sensed(&file, &path).unwrap();
        let back = read_sensed(&path).unwrap();
        assert_eq!(back, file);
        let ms = back.measurement_set().unwrap();
        assert_eq!(ms.block_count(), 4);
        assert_eq!(ms.per_block()[1], vec![1.0, 1.5]);
        std::fs::remove_dir_all(&dir).ok();
    }
}
