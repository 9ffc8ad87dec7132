//! Frame I/O: binary netpbm sequences (P5/P6, maxval 255) and the `MTCV`
//! raw container.
//!
//! `MTCV` layout, all integers little-endian:
//!
//! | bytes | field                         |
//! |-------|-------------------------------|
//! | 4     | magic `4D 54 43 56`           |
//! | 2     | version (1)                   |
//! | 2     | height                        |
//! | 2     | width                         |
//! | 2     | channels                      |
//! | 4     | frame count                   |
//! | 4     | fps, f32                      |
//! | ...   | frames, row-major f32         |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{MtcError, Result};
use crate::tensor::Frame;

pub const CONTAINER_MAGIC: [u8; 4] = *b"MTCV";
pub const CONTAINER_VERSION: u16 = 1;
const CONTAINER_HEADER_LEN: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFormat {
    PgmSequence,
    PpmSequence,
    RawContainer,
}

impl FrameFormat {
    fn extension(self) -> &'static str {
        match self {
            FrameFormat::PgmSequence => "pgm",
            FrameFormat::PpmSequence => "ppm",
            FrameFormat::RawContainer => "mtcv",
        }
    }

    /// Guesses the format from a path: directories are netpbm sequences
    /// (PPM unless only `.pgm` files are present), files are containers.
    pub fn detect(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let has_ppm = list_with_extension(path, "ppm")?.next().is_some();
            let has_pgm = list_with_extension(path, "pgm")?.next().is_some();
            Ok(if !has_ppm && has_pgm {
                FrameFormat::PgmSequence
            } else {
                FrameFormat::PpmSequence
            })
        } else {
            Ok(FrameFormat::RawContainer)
        }
    }
}

impl FromStr for FrameFormat {
    type Err = MtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgm" | "pgm-sequence" => Ok(FrameFormat::PgmSequence),
            "ppm" | "ppm-sequence" => Ok(FrameFormat::PpmSequence),
            "mtcv" | "raw" | "raw-container" => Ok(FrameFormat::RawContainer),
            other => Err(MtcError::invalid(format!("unknown frame format '{other}'"))),
        }
    }
}

/// Frames plus the container's frame rate (0 for netpbm sequences).
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedVideo {
    pub frames: Vec<Frame>,
    pub fps: f32,
}

pub fn load_frames(path: &Path, format: FrameFormat) -> Result<Vec<Frame>> {
    Ok(load_video(path, format)?.frames)
}

pub fn load_video(path: &Path, format: FrameFormat) -> Result<LoadedVideo> {
    match format {
        FrameFormat::RawContainer => read_container(&fs::read(path)?),
        FrameFormat::PgmSequence | FrameFormat::PpmSequence => {
            let mut files: Vec<PathBuf> = list_with_extension(path, format.extension())?.collect();
            files.sort();
            let mut frames = Vec::with_capacity(files.len());
            for file in &files {
                let frame = parse_pnm(&fs::read(file)?).map_err(|e| match e {
                    MtcError::Parse { offset, message } => MtcError::Parse {
                        offset,
                        message: format!("{}: {message}", file.display()),
                    },
                    other => other,
                })?;
                if let Some(first) = frames.first().map(Frame::dims) {
                    if frame.dims() != first {
                        return Err(MtcError::dims(format!(
                            "{} is {:?}, earlier frames are {first:?}",
                            file.display(),
                            frame.dims()
                        )));
                    }
                }
                frames.push(frame);
            }
            if frames.is_empty() {
                return Err(MtcError::invalid(format!(
                    "no .{} files in {}",
                    format.extension(),
                    path.display()
                )));
            }
            Ok(LoadedVideo { frames, fps: 0.0 })
        }
    }
}

pub fn save_frames(frames: &[Frame], path: &Path, format: FrameFormat) -> Result<()> {
    save_video(frames, 0.0, path, format)
}

pub fn save_video(frames: &[Frame], fps: f32, path: &Path, format: FrameFormat) -> Result<()> {
    let dims = frames
        .first()
        .ok_or_else(|| MtcError::invalid("no frames to save"))?
        .dims();
    if frames.iter().any(|f| f.dims() != dims) {
        return Err(MtcError::dims("frames to save differ in dimensions"));
    }
    match format {
        FrameFormat::RawContainer => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(path, write_container(frames, fps)?)?;
        }
        FrameFormat::PgmSequence | FrameFormat::PpmSequence => {
            fs::create_dir_all(path)?;
            for (i, frame) in frames.iter().enumerate() {
                let name = format!("frame_{i:05}.{}", format.extension());
                fs::write(path.join(name), encode_pnm(frame, format)?)?;
            }
        }
    }
    Ok(())
}

fn list_with_extension<'a>(dir: &Path, ext: &'a str) -> Result<impl Iterator<Item = PathBuf> + 'a> {
    let entries = fs::read_dir(dir)?;
    Ok(entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(move |p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case(ext))
        }))
}

/// Maps a unit-interval scalar to 8 bits, rounding half up.
pub fn quantize_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn encode_pnm(frame: &Frame, format: FrameFormat) -> Result<Vec<u8>> {
    let magic = match (format, frame.channels()) {
        (FrameFormat::PgmSequence, 1) => "P5",
        (FrameFormat::PpmSequence, 3) => "P6",
        (FrameFormat::RawContainer, _) => {
            return Err(MtcError::invalid("container is not a netpbm format"))
        }
        (_, c) => {
            return Err(MtcError::invalid(format!(
                "{format:?} cannot store {c}-channel frames"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.data().iter().map(|&v| quantize_u8(v)));
    Ok(out)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(MtcError::parse(start, format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| MtcError::parse(start, format!("{what} out of range")))
    }
}

/// Parses a binary P5 or P6 image with maxval 255.
pub fn parse_pnm(bytes: &[u8]) -> Result<Frame> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(MtcError::parse(0, "bad magic, expected P5 or P6")),
    };
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = {
        cur.skip_whitespace_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if maxval != 255 {
        return Err(MtcError::parse(
            maxval_at,
            format!("unsupported maxval {maxval}"),
        ));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => {
            return Err(MtcError::parse(
                cur.pos,
                "expected single whitespace after maxval",
            ))
        }
    }
    if width == 0 || height == 0 {
        return Err(MtcError::parse(2, "zero image dimension"));
    }
    let need = width * height * channels;
    let raster = &bytes[cur.pos..];
    if raster.len() < need {
        return Err(MtcError::parse(
            cur.pos,
            format!("raster needs {need} bytes, found {}", raster.len()),
        ));
    }
    let data = raster[..need].iter().map(|&b| b as f32 / 255.0).collect();
    Frame::new(height, width, channels, data)
}

pub fn write_container(frames: &[Frame], fps: f32) -> Result<Vec<u8>> {
    let (h, w, c) = frames
        .first()
        .ok_or_else(|| MtcError::invalid("no frames to write"))?
        .dims();
    let to_u16 = |v: usize, what: &str| {
        u16::try_from(v).map_err(|_| MtcError::invalid(format!("{what} {v} exceeds u16")))
    };
    let count =
        u32::try_from(frames.len()).map_err(|_| MtcError::invalid("frame count exceeds u32"))?;
    let mut out = Vec::with_capacity(CONTAINER_HEADER_LEN + frames.len() * h * w * c * 4);
    out.extend_from_slice(&CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&to_u16(h, "height")?.to_le_bytes());
    out.extend_from_slice(&to_u16(w, "width")?.to_le_bytes());
    out.extend_from_slice(&to_u16(c, "channels")?.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&fps.to_le_bytes());
    for f in frames {
        if f.dims() != (h, w, c) {
            return Err(MtcError::dims("frames to write differ in dimensions"));
        }
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn read_container(bytes: &[u8]) -> Result<LoadedVideo> {
    if bytes.len() < CONTAINER_HEADER_LEN {
        return Err(MtcError::Truncated {
            expected: CONTAINER_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    if bytes[..4] != CONTAINER_MAGIC {
        return Err(MtcError::parse(0, "bad magic"));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let version = u16_at(4);
    if version != CONTAINER_VERSION as usize {
        return Err(MtcError::parse(4, format!("unsupported version {version}")));
    }
    let (h, w, c) = (u16_at(6), u16_at(8), u16_at(10));
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let fps = f32::from_le_bytes(bytes[16..20].try_into().unwrap());
    if h == 0 || w == 0 || c == 0 {
        return Err(MtcError::parse(6, "zero frame dimension"));
    }
    let per_frame = h * w * c;
    let expected = CONTAINER_HEADER_LEN + count * per_frame * 4;
    if bytes.len() != expected {
        return Err(MtcError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    let mut frames = Vec::with_capacity(count);
    for (i, chunk) in bytes[CONTAINER_HEADER_LEN..]
        .chunks_exact(per_frame * 4)
        .enumerate()
    {
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let frame = Frame::new(h, w, c, data).map_err(|e| {
            MtcError::parse(
                CONTAINER_HEADER_LEN + i * per_frame * 4,
                format!("frame {i}: {e}"),
            )
        })?;
        frames.push(frame);
    }
    Ok(LoadedVideo { frames, fps })
}
