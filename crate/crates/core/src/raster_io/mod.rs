//! On-disk formats for label images, prediction stacks and masks.
//!
//! * PGM (`P5`): 8-bit, or 16-bit big-endian when maxval > 255.
//! * LBL1: `"PSLB"`, u32-LE width, u32-LE height, then u32-LE row-major ids.
//! * PSF3: `"PSF3"`, u32-LE width, height, channels, then planar f32-LE.
//!
//! Decoders never panic on malformed input; every failure is a
//! [`FormatError`] carrying the byte offset where it applies.

mod manifest;
mod psf3;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, DatasetManifest, FileRequirement, Sample, Split};
pub use psf3::{
    decode_psf3, decode_psf3_header, encode_psf3, load_prediction_stack, load_psf3,
    load_semantic_prob_map, save_prediction_stack, save_psf3, save_semantic_prob_map, Psf3Header,
    Psf3Reader, PSF3_HEADER_LEN, PSF3_MAGIC,
};

use crate::error::{Error, FormatError, Result};
use crate::rle::MaskRle;
use crate::types::LabelImage;

pub const LBL1_MAGIC: &[u8; 4] = b"PSLB";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelFormat {
    Pgm,
    Lbl1,
}

impl LabelFormat {
    pub fn extension(self) -> &'static str {
        match self {
            LabelFormat::Pgm => "pgm",
            LabelFormat::Lbl1 => "lbl",
        }
    }

    /// Format implied by a path's extension; anything but `.pgm` is LBL1.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("pgm") => LabelFormat::Pgm,
            _ => LabelFormat::Lbl1,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn with_path<T>(path: &Path, r: Result<T, FormatError>) -> Result<T> {
    r.map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn read_u32_le(bytes: &[u8], offset: usize) -> Result<u32, FormatError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(FormatError::Truncated {
            offset,
            expected: 4,
            found: bytes.len().saturating_sub(offset),
        })
}

fn magic_str(bytes: &[u8]) -> String {
    String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned()
}

/// Decode a PGM or LBL1 label image, detected by magic.
pub fn decode_label_image(bytes: &[u8]) -> Result<LabelImage, FormatError> {
    if bytes.starts_with(b"P5") {
        decode_pgm(bytes)
    } else if bytes.starts_with(LBL1_MAGIC) {
        decode_lbl1(bytes)
    } else {
        Err(FormatError::BadMagic {
            expected: "P5 or PSLB".into(),
            found: magic_str(bytes),
        })
    }
}

pub fn encode_label_image(labels: &LabelImage, format: LabelFormat) -> Result<Vec<u8>> {
    match format {
        LabelFormat::Lbl1 => Ok(encode_lbl1(labels)),
        LabelFormat::Pgm => encode_pgm(labels),
    }
}

pub fn load_label_image(path: impl AsRef<Path>) -> Result<LabelImage> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    with_path(path, decode_label_image(&bytes))
}

pub fn save_label_image(
    labels: &LabelImage,
    path: impl AsRef<Path>,
    format: LabelFormat,
) -> Result<()> {
    let bytes = encode_label_image(labels, format)?;
    write_file(path.as_ref(), &bytes)
}

pub fn encode_lbl1(labels: &LabelImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * labels.as_slice().len());
    out.extend_from_slice(LBL1_MAGIC);
    out.extend_from_slice(&(labels.width() as u32).to_le_bytes());
    out.extend_from_slice(&(labels.height() as u32).to_le_bytes());
    for &v in labels.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_lbl1(bytes: &[u8]) -> Result<LabelImage, FormatError> {
    if !bytes.starts_with(LBL1_MAGIC) {
        return Err(FormatError::BadMagic {
            expected: "PSLB".into(),
            found: magic_str(bytes),
        });
    }
    let width = read_u32_le(bytes, 4)? as usize;
    let height = read_u32_le(bytes, 8)? as usize;
    let n = payload_len(width, height, 1, 4)?;
    let body = check_payload(bytes, 12, n)?;
    let labels = body
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(LabelImage::new(width, height, labels).expect("length checked"))
}

pub(crate) fn payload_len(
    width: usize,
    height: usize,
    channels: usize,
    bytes_per_value: usize,
) -> Result<usize, FormatError> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(bytes_per_value))
        .ok_or(FormatError::DimensionOverflow {
            width: width as u64,
            height: height as u64,
            channels: channels as u64,
        })
}

pub(crate) fn check_payload(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8], FormatError> {
    let available = bytes.len().saturating_sub(offset);
    if available < len {
        return Err(FormatError::Truncated {
            offset,
            expected: len,
            found: available,
        });
    }
    if available > len {
        return Err(FormatError::TrailingBytes {
            offset: offset + len,
            extra: available - len,
        });
    }
    Ok(&bytes[offset..])
}

/// Reads the whitespace/comment separated header tokens of a PGM.
struct PgmHeader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl PgmHeader<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize, FormatError> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                FormatError::Truncated {
                    offset: self.pos,
                    expected: 1,
                    found: 0,
                }
            } else {
                FormatError::BadHeader {
                    offset: start,
                    message: format!("expected {what}"),
                }
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or(FormatError::BadHeader {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelImage, FormatError> {
    if !bytes.starts_with(b"P5") {
        return Err(FormatError::BadMagic {
            expected: "P5".into(),
            found: magic_str(bytes),
        });
    }
    let mut hdr = PgmHeader { bytes, pos: 2 };
    let width = hdr.number("width")?;
    let height = hdr.number("height")?;
    let maxval = hdr.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(FormatError::BadHeader {
            offset: hdr.pos,
            message: format!("maxval {maxval} outside 1..=65535"),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(hdr.pos) {
        Some(b) if b.is_ascii_whitespace() => hdr.pos += 1,
        Some(_) => {
            return Err(FormatError::BadHeader {
                offset: hdr.pos,
                message: "missing whitespace after maxval".into(),
            })
        }
        None => {
            return Err(FormatError::Truncated {
                offset: hdr.pos,
                expected: 1,
                found: 0,
            })
        }
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let n = payload_len(width, height, 1, bpp)?;
    let body = check_payload(bytes, hdr.pos, n)?;
    let labels = if bpp == 1 {
        body.iter().map(|&b| b as u32).collect()
    } else {
        body.chunks_exact(2)
            .map(|b| u16::from_be_bytes([b[0], b[1]]) as u32)
            .collect()
    };
    Ok(LabelImage::new(width, height, labels).expect("length checked"))
}

pub fn encode_pgm(labels: &LabelImage) -> Result<Vec<u8>> {
    let max = labels.max_id();
    if max > 65535 {
        return Err(Error::IdOverflow { id: max });
    }
    let maxval = if max <= 255 { 255 } else { 65535 };
    let mut out = format!("P5\n{} {}\n{}\n", labels.width(), labels.height(), maxval).into_bytes();
    if maxval == 255 {
        out.extend(labels.as_slice().iter().map(|&v| v as u8));
    } else {
        for &v in labels.as_slice() {
            out.extend_from_slice(&(v as u16).to_be_bytes());
        }
    }
    Ok(out)
}

/// JSON mask file: `{"width":W,"height":H,"counts":[...]}`.
pub fn load_mask_rle(path: impl AsRef<Path>) -> Result<MaskRle> {
    let path = path.as_ref();
    let rle: MaskRle = serde_json::from_slice(&read_file(path)?)?;
    with_path(path, rle.validate())?;
    Ok(rle)
}

pub fn save_mask_rle(rle: &MaskRle, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &serde_json::to_vec(rle)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pgm_8bit() {
        let mut f = b"P5 3 2 255\n".to_vec();
        f.extend_from_slice(&[0, 1, 2, 3, 4, 255]);
        let l = decode_label_image(&f).unwrap();
        assert_eq!(l.dims(), (3, 2));
        assert_eq!(l.as_slice(), &[0, 1, 2, 3, 4, 255]);
    }

    #[test]
    fn pgm_with_comment() {
        let mut f = b"P5\n# made by hand\n2 1\n# again\n255\n".to_vec();
        f.extend_from_slice(&[9, 8]);
        assert_eq!(decode_pgm(&f).unwrap().as_slice(), &[9, 8]);
    }

    #[test]
    fn pgm_16bit_big_endian() {
        let raw: [u8; 6] = [0x01, 0x02, 0xff, 0xfe, 0x00, 0x07];
        let mut f = b"P5 3 1 65535\n".to_vec();
        f.extend_from_slice(&raw);
        let oracle: Vec<u32> = raw
            .chunks(2)
            .map(|b| (b[0] as u32) * 256 + b[1] as u32)
            .collect();
        assert_eq!(decode_pgm(&f).unwrap().as_slice(), oracle.as_slice());
        assert_eq!(oracle, vec![258, 65534, 7]);
    }

    #[test]
    fn pgm_overflow_on_save() {
        let l = LabelImage::new(2, 1, vec![1, 70000]).unwrap();
        assert!(matches!(
            encode_pgm(&l),
            Err(Error::IdOverflow { id: 70000 })
        ));
    }

    #[test]
    fn pgm_16bit_round_trip() {
        let l = LabelImage::new(2, 2, vec![0, 300, 65535, 1]).unwrap();
        let bytes = encode_pgm(&l).unwrap();
        assert_eq!(decode_label_image(&bytes).unwrap(), l);
    }

    #[test]
    fn malformed_label_files() {
        assert!(matches!(
            decode_label_image(b"GIF89a"),
            Err(FormatError::BadMagic { .. })
        ));
        assert!(matches!(
            decode_label_image(b"P5 3 2 255\n\x01\x02"),
            Err(FormatError::Truncated {
                offset: 11,
                expected: 6,
                found: 2
            })
        ));
        assert!(matches!(
            decode_label_image(b"P5 x 2 255\n"),
            Err(FormatError::BadHeader { offset: 3, .. })
        ));
        assert!(matches!(
            decode_label_image(b"P5 3"),
            Err(FormatError::Truncated { .. })
        ));
        assert!(matches!(
            decode_label_image(b"P5 1 1 0\n\x00"),
            Err(FormatError::BadHeader { .. })
        ));
        assert!(matches!(
            decode_label_image(b"P5 99999999999999999999999 1 255\n"),
            Err(FormatError::BadHeader { .. })
        ));
        assert!(matches!(
            decode_label_image(b"PSLB\x02\x00"),
            Err(FormatError::Truncated { offset: 4, .. })
        ));
        let mut huge = b"PSLB".to_vec();
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        huge.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            decode_label_image(&huge),
            Err(FormatError::DimensionOverflow { .. }) | Err(FormatError::Truncated { .. })
        ));
        let mut trailing = encode_lbl1(&LabelImage::zeros(1, 1));
        trailing.push(0);
        assert!(matches!(
            decode_label_image(&trailing),
            Err(FormatError::TrailingBytes {
                offset: 16,
                extra: 1
            })
        ));
    }

    #[test]
    fn label_files_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let l = LabelImage::new(3, 2, vec![0, 1, 2, 3, 4, 5]).unwrap();
        for format in [LabelFormat::Pgm, LabelFormat::Lbl1] {
            let p = dir.path().join(format!("x.{}", format.extension()));
            save_label_image(&l, &p, format).unwrap();
            assert_eq!(LabelFormat::from_path(&p), format);
            assert_eq!(load_label_image(&p).unwrap(), l);
        }
        let err = load_label_image(dir.path().join("missing.lbl")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    proptest! {
        #[test]
        fn lbl1_round_trip(
            (w, h, data) in (0usize..20, 0usize..20)
                .prop_flat_map(|(w, h)| (Just(w), Just(h), proptest::collection::vec(any::<u32>(), w * h)))
        ) {
            let l = LabelImage::new(w, h, data).unwrap();
            prop_assert_eq!(decode_label_image(&encode_lbl1(&l)).unwrap(), l);
        }

        #[test]
        fn decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64), magic in 0usize..4) {
            let mut f = match magic {
                0 => b"P5".to_vec(),
                1 => b"PSLB".to_vec(),
                2 => b"PSF3".to_vec(),
                _ => Vec::new(),
            };
            f.extend(bytes);
            let _ = decode_label_image(&f);
            let _ = decode_psf3(&f);
        }
    }
}
