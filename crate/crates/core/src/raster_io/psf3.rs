use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use super::{check_payload, payload_len, read_file, read_u32_le, with_path, write_file};
use crate::error::{Error, FormatError, Result};
use crate::types::{PredictionStack, Rect, SemanticProbMap};

pub const PSF3_MAGIC: &[u8; 4] = b"PSF3";
pub const PSF3_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Psf3Header {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
}

pub fn decode_psf3_header(bytes: &[u8]) -> Result<Psf3Header, FormatError> {
    if !bytes.starts_with(PSF3_MAGIC) {
        return Err(FormatError::BadMagic {
            expected: "PSF3".into(),
            found: String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned(),
        });
    }
    Ok(Psf3Header {
        width: read_u32_le(bytes, 4)? as usize,
        height: read_u32_le(bytes, 8)? as usize,
        channels: read_u32_le(bytes, 12)? as usize,
    })
}

/// Decode a PSF3 buffer into its planes. Non-finite values are rejected;
/// range is not checked here.
pub fn decode_psf3(bytes: &[u8]) -> Result<(Psf3Header, Vec<Vec<f32>>), FormatError> {
    let header = decode_psf3_header(bytes)?;
    let len = payload_len(header.width, header.height, header.channels, 4)?;
    let body = check_payload(bytes, PSF3_HEADER_LEN, len)?;
    let n = header.width * header.height;
    let mut planes = Vec::with_capacity(header.channels);
    for c in 0..header.channels {
        let mut plane = Vec::with_capacity(n);
        for (i, b) in body[c * n * 4..(c + 1) * n * 4].chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            if !v.is_finite() {
                return Err(FormatError::NonFinite {
                    offset: PSF3_HEADER_LEN + (c * n + i) * 4,
                });
            }
            plane.push(v);
        }
        planes.push(plane);
    }
    Ok((header, planes))
}

pub fn encode_psf3(width: usize, height: usize, planes: &[&[f32]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PSF3_HEADER_LEN + planes.len() * width * height * 4);
    out.extend_from_slice(PSF3_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(planes.len() as u32).to_le_bytes());
    for plane in planes {
        for v in plane.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn load_psf3(path: impl AsRef<Path>) -> Result<(Psf3Header, Vec<Vec<f32>>)> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    with_path(path, decode_psf3(&bytes))
}

pub fn save_psf3(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    planes: &[&[f32]],
) -> Result<()> {
    write_file(path.as_ref(), &encode_psf3(width, height, planes))
}

fn stack_from_planes(
    path: &Path,
    header: Psf3Header,
    mut planes: Vec<Vec<f32>>,
) -> Result<(PredictionStack, usize)> {
    if header.channels != 3 {
        return with_path(
            path,
            Err(FormatError::ChannelCount {
                expected: 3,
                found: header.channels as u32,
            }),
        );
    }
    let bp = planes.pop().expect("3 planes");
    let cd = planes.pop().expect("3 planes");
    let fg = planes.pop().expect("3 planes");
    PredictionStack::new_clamped(header.width, header.height, fg, cd, bp)
}

/// Load a 3-channel PSF3 stack, clamping out-of-range values into [0, 1].
/// Returns the stack and the number of clamped values.
pub fn load_prediction_stack(path: impl AsRef<Path>) -> Result<(PredictionStack, usize)> {
    let path = path.as_ref();
    let (header, planes) = load_psf3(path)?;
    let (stack, clamped) = stack_from_planes(path, header, planes)?;
    if clamped > 0 {
        log::warn!("{}: clamped {clamped} values into [0, 1]", path.display());
    }
    Ok((stack, clamped))
}

pub fn save_prediction_stack(stack: &PredictionStack, path: impl AsRef<Path>) -> Result<()> {
    save_psf3(path, stack.width(), stack.height(), &stack.planes())
}

/// Semantic probability maps share the PSF3 layout with C+1 channels.
pub fn load_semantic_prob_map(path: impl AsRef<Path>) -> Result<SemanticProbMap> {
    let (header, planes) = load_psf3(path)?;
    SemanticProbMap::new(header.width, header.height, planes)
}

pub fn save_semantic_prob_map(map: &SemanticProbMap, path: impl AsRef<Path>) -> Result<()> {
    let planes: Vec<&[f32]> = map.channels().iter().map(|c| c.as_slice()).collect();
    save_psf3(path, map.width(), map.height(), &planes)
}

/// Random-access window reader over a PSF3 file; only the requested rows
/// are read.
#[derive(Debug)]
pub struct Psf3Reader {
    path: PathBuf,
    file: File,
    header: Psf3Header,
}

impl Psf3Reader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut head = Vec::with_capacity(PSF3_HEADER_LEN);
        (&mut file)
            .take(PSF3_HEADER_LEN as u64)
            .read_to_end(&mut head)
            .map_err(|e| Error::io(&path, e))?;
        let header = with_path(&path, decode_psf3_header(&head))?;
        let len = with_path(
            &path,
            payload_len(header.width, header.height, header.channels, 4),
        )?;
        let actual = file.metadata().map_err(|e| Error::io(&path, e))?.len() as usize;
        let expected = PSF3_HEADER_LEN + len;
        if actual != expected {
            let err = if actual < expected {
                FormatError::Truncated {
                    offset: PSF3_HEADER_LEN,
                    expected: len,
                    found: actual.saturating_sub(PSF3_HEADER_LEN),
                }
            } else {
                FormatError::TrailingBytes {
                    offset: expected,
                    extra: actual - expected,
                }
            };
            return with_path(&path, Err(err));
        }
        Ok(Self { path, file, header })
    }

    pub fn header(&self) -> Psf3Header {
        self.header
    }

    /// Read one window of every channel, row by row.
    pub fn read_window(&mut self, rect: Rect) -> Result<Vec<Vec<f32>>> {
        let h = self.header;
        if rect.x_end() > h.width || rect.y_end() > h.height {
            return Err(Error::Precondition(format!(
                "window {rect:?} outside {}x{} raster",
                h.width, h.height
            )));
        }
        let mut planes = Vec::with_capacity(h.channels);
        let mut row = vec![0u8; rect.width * 4];
        for c in 0..h.channels {
            let mut plane = Vec::with_capacity(rect.area());
            for y in rect.y..rect.y_end() {
                let offset = PSF3_HEADER_LEN + ((c * h.height + y) * h.width + rect.x) * 4;
                self.file
                    .seek(SeekFrom::Start(offset as u64))
                    .and_then(|_| self.file.read_exact(&mut row))
                    .map_err(|e| Error::io(&self.path, e))?;
                for (i, b) in row.chunks_exact(4).enumerate() {
                    let v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
                    if !v.is_finite() {
                        return with_path(
                            &self.path,
                            Err(FormatError::NonFinite {
                                offset: offset + i * 4,
                            }),
                        );
                    }
                    plane.push(v);
                }
            }
            planes.push(plane);
        }
        Ok(planes)
    }

    /// Read a window of a 3-channel file as a clamped prediction stack.
    pub fn read_stack_window(&mut self, rect: Rect) -> Result<(PredictionStack, usize)> {
        let planes = self.read_window(rect)?;
        let header = Psf3Header {
            width: rect.width,
            height: rect.height,
            channels: self.header.channels,
        };
        let path = self.path.clone();
        stack_from_planes(&path, header, planes)
    }
}
