//! Binary PGM (P5) reader and writer.
//!
//! Input accepts maxval 255 (one byte per pixel) or up to 65535 (two bytes,
//! big-endian); values are scaled to `[0, 1]` as `value / maxval`. Output is
//! always 8-bit: clamp to `[0, 1]`, quantize `round(v * 255)` half up.

use std::fmt;
use std::fs;
use std::io;
use std::path::Path;

use deed_core::grid::{Grid, Mask};
use deed_core::ScalarField64;

#[derive(Debug)]
pub enum PgmError {
    Io(io::Error),
    /// Magic number is not "P5" (e.g. the ASCII "P2" variant).
    UnsupportedFormat { magic: String },
    MalformedHeader { reason: String },
    TruncatedPayload { expected: usize, got: usize },
    /// Header dimensions violate the grid invariants.
    BadDimensions { width: usize, height: usize },
    /// Mask dimensions disagree with the image grid.
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    /// Mask selects no pixels; the data set must have positive measure.
    EmptyMask,
}

impl fmt::Display for PgmError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "i/o failure: {e}"),
            Self::UnsupportedFormat { magic } => {
                write!(f, "unsupported PNM magic '{magic}' (only binary P5 is read)")
            }
            Self::MalformedHeader { reason } => write!(f, "malformed PGM header: {reason}"),
            Self::TruncatedPayload { expected, got } => {
                write!(f, "truncated PGM payload: expected {expected} bytes, got {got}")
            }
            Self::BadDimensions { width, height } => {
                write!(f, "image must be at least 2x2 pixels, got {width}x{height}")
            }
            Self::DimensionMismatch { expected, got } => write!(
                f,
                "mask is {}x{} but the image is {}x{}",
                got.0, got.1, expected.0, expected.1
            ),
            Self::EmptyMask => {
                write!(f, "mask selects no pixels; the data set must have positive measure")
            }
        }
    }
}

impl std::error::Error for PgmError {}

impl From<io::Error> for PgmError {
    fn from(e: io::Error) -> Self {
        Self::Io(e)
    }
}

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

/// Tokenizer over the header bytes; `#` starts a comment running to the end
/// of the line, as the format allows.
struct HeaderCursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    fn next_token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.data.len() && is_pnm_space(self.data[self.pos]) {
                self.pos += 1;
            }
            if self.pos < self.data.len() && self.data[self.pos] == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.data.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.data.len() && !is_pnm_space(self.data[self.pos]) {
            self.pos += 1;
        }
        Some(&self.data[start..self.pos])
    }
}

fn parse_usize(token: &[u8], what: &str) -> Result<usize, PgmError> {
    std::str::from_utf8(token)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PgmError::MalformedHeader {
            reason: format!("{what} is not a number"),
        })
}

struct RawPgm {
    grid: Grid,
    maxval: usize,
    samples: Vec<u16>,
}

fn read_raw(path: &Path) -> Result<RawPgm, PgmError> {
    let data = fs::read(path)?;
    let mut cursor = HeaderCursor::new(&data);
    let magic = cursor.next_token().ok_or(PgmError::MalformedHeader {
        reason: "missing magic number".into(),
    })?;
    if magic != b"P5" {
        return Err(PgmError::UnsupportedFormat {
            magic: String::from_utf8_lossy(magic).into_owned(),
        });
    }
    let width = parse_usize(
        cursor.next_token().ok_or(PgmError::MalformedHeader {
            reason: "missing width".into(),
        })?,
        "width",
    )?;
    let height = parse_usize(
        cursor.next_token().ok_or(PgmError::MalformedHeader {
            reason: "missing height".into(),
        })?,
        "height",
    )?;
    let maxval = parse_usize(
        cursor.next_token().ok_or(PgmError::MalformedHeader {
            reason: "missing maxval".into(),
        })?,
        "maxval",
    )?;
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::MalformedHeader {
            reason: format!("maxval {maxval} out of range 1..=65535"),
        });
    }
    if width < 2 || height < 2 {
        return Err(PgmError::BadDimensions { width, height });
    }
    // exactly one whitespace byte separates the header from the payload
    if cursor.pos >= data.len() || !is_pnm_space(data[cursor.pos]) {
        return Err(PgmError::MalformedHeader {
            reason: "missing whitespace before payload".into(),
        });
    }
    let payload = &data[cursor.pos + 1..];
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let expected = width * height * bytes_per_sample;
    if payload.len() < expected {
        return Err(PgmError::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    let samples = if bytes_per_sample == 1 {
        payload[..expected].iter().map(|&b| b as u16).collect()
    } else {
        payload[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    let grid = Grid::new(width, height).map_err(|_| PgmError::BadDimensions { width, height })?;
    Ok(RawPgm {
        grid,
        maxval,
        samples,
    })
}

/// Reads a binary PGM into a `[0, 1]`-scaled field.
pub fn read_pgm(path: &Path) -> Result<ScalarField64, PgmError> {
    let raw = read_raw(path)?;
    let scale = 1.0 / raw.maxval as f64;
    let values = raw.samples.iter().map(|&v| v as f64 * scale).collect();
    ScalarField64::from_values(raw.grid, values).map_err(|e| PgmError::MalformedHeader {
        reason: e.to_string(),
    })
}

/// Writes an 8-bit binary PGM: clamp to `[0, 1]`, `round(v * 255)` half up.
pub fn write_pgm(field: &ScalarField64, path: &Path) -> Result<(), PgmError> {
    let grid = field.grid();
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend(field.values().iter().map(|&v| {
        let c = v.clamp(0.0, 1.0);
        (c * 255.0).round() as u8
    }));
    fs::write(path, out)?;
    Ok(())
}

/// Reads a mask PGM of identical dimensions; a pixel belongs to the data
/// set iff its value is positive.
pub fn read_mask(path: &Path, grid: Grid) -> Result<Mask, PgmError> {
    let raw = read_raw(path)?;
    if raw.grid.width() != grid.width() || raw.grid.height() != grid.height() {
        return Err(PgmError::DimensionMismatch {
            expected: (grid.width(), grid.height()),
            got: (raw.grid.width(), raw.grid.height()),
        });
    }
    let flags: Vec<bool> = raw.samples.iter().map(|&v| v > 0).collect();
    Mask::from_flags(grid, flags).map_err(|_| PgmError::EmptyMask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use deed_core::grid::Grid;

    fn tmp(dir: &tempfile::TempDir, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let path = dir.path().join(name);
        fs::write(&path, bytes).unwrap();
        path
    }

    #[test]
    fn reads_8bit_payload_with_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let path = tmp(&dir, "a.pgm", b"P5\n2 2\n255\n\x00\xff\x80\x40");
        let f = read_pgm(&path).unwrap();
        assert_eq!(f.values()[0], 0.0);
        assert_eq!(f.values()[1], 1.0);
        assert_eq!(f.values()[2], 128.0 / 255.0);
        assert_eq!(f.values()[3], 64.0 / 255.0);
    }

    #[test]
    fn reads_16bit_big_endian() {
        let dir = tempfile::tempdir().unwrap();
        let path = tmp(
            &dir,
            "b.pgm",
            b"P5\n2 2\n65535\n\x00\x00\xff\xff\x80\x00\x00\x01",
        );
        let f = read_pgm(&path).unwrap();
        assert_eq!(f.values()[0], 0.0);
        assert_eq!(f.values()[1], 1.0);
        assert_eq!(f.values()[2], 32768.0 / 65535.0);
        assert_eq!(f.values()[3], 1.0 / 65535.0);
    }

    #[test]
    fn comments_in_header_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = tmp(&dir, "c.pgm", b"P5\n# a comment\n2 2 # inline\n255\n\x01\x02\x03\x04");
        assert!(read_pgm(&path).is_ok());
    }

    #[test]
    fn rejects_ascii_variant() {
        let dir = tempfile::tempdir().unwrap();
        let path = tmp(&dir, "d.pgm", b"P2\n2 2\n255\n0 1 2 3\n");
        assert!(matches!(
            read_pgm(&path),
            Err(PgmError::UnsupportedFormat { .. })
        ));
    }

    #[test]
    fn rejects_truncated_payload() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend(std::iter::repeat(7u8).take(15));
        let dir = tempfile::tempdir().unwrap();
        let path = tmp(&dir, "e.pgm", &bytes);
        assert!(matches!(
            read_pgm(&path),
            Err(PgmError::TruncatedPayload {
                expected: 16,
                got: 15
            })
        ));
    }

    #[test]
    fn rejects_tiny_images() {
        let dir = tempfile::tempdir().unwrap();
        let path = tmp(&dir, "f.pgm", b"P5\n1 2\n255\n\x00\x00");
        assert!(matches!(read_pgm(&path), Err(PgmError::BadDimensions { .. })));
    }

    #[test]
    fn round_trip_is_identity_on_8bit_data() {
        let grid = Grid::new(3, 2).unwrap();
        let f = ScalarField64::from_values(
            grid,
            vec![0.0, 1.0, 17.0 / 255.0, 250.0 / 255.0, 128.0 / 255.0, 3.0 / 255.0],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.pgm");
        write_pgm(&f, &path).unwrap();
        let g = read_pgm(&path).unwrap();
        assert_eq!(f.values(), g.values());
    }

    #[test]
    fn write_clamps_and_rounds_half_up() {
        let grid = Grid::new(2, 2).unwrap();
        let f = ScalarField64::from_values(grid, vec![1.2, -0.5, 0.5, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.pgm");
        write_pgm(&f, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let payload = &bytes[bytes.len() - 4..];
        assert_eq!(payload, &[255, 0, 128, 0]);
    }

    #[test]
    fn mask_reading_and_failure_modes() {
        let grid = Grid::new(2, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let all = tmp(&dir, "m1.pgm", b"P5\n2 2\n255\n\xff\xff\xff\xff");
        assert_eq!(read_mask(&all, grid).unwrap().count(), 4);

        let checker = tmp(&dir, "m2.pgm", b"P5\n2 2\n255\n\xff\x00\x00\xff");
        assert_eq!(read_mask(&checker, grid).unwrap().count(), 2);

        let zero = tmp(&dir, "m3.pgm", b"P5\n2 2\n255\n\x00\x00\x00\x00");
        assert!(matches!(read_mask(&zero, grid), Err(PgmError::EmptyMask)));

        let wrong = tmp(&dir, "m4.pgm", b"P5\n3 2\n255\n\x01\x01\x01\x01\x01\x01");
        assert!(matches!(
            read_mask(&wrong, grid),
            Err(PgmError::DimensionMismatch { .. })
        ));
    }
}
