//! Pixel- and latent-domain tensor types and video segmentation.
//!
//! All grids are stored row-major with interleaved channels: the scalar for
//! `(y, x, c)` lives at `(y * width + x) * channels + c`.

use crate::error::{MtcError, Result};

/// Default temporal segment length.
pub const DEFAULT_SEGMENT_LEN: usize = 17;

/// Latent scalars live on a fixed-point grid with this many fractional bits.
///
/// With magnitudes below 16 every grid value and every sum of two grid values
/// is exactly representable in `f32`, so adding and then subtracting the
/// keyframe embedding restores a latent bit for bit.
pub const LATENT_FRACTION_BITS: i32 = 20;

pub fn quantize_latent(v: f64) -> f32 {
    let scale = (1u64 << LATENT_FRACTION_BITS) as f64;
    ((v * scale).round() / scale) as f32
}

/// Segment lengths must be `1 + 16k` so that every rate in `{2, 4, 8, 16}`
/// divides `T - 1`.
pub fn validate_segment_len(t: usize) -> Result<()> {
    if t < 17 || !(t - 1).is_multiple_of(16) {
        return Err(MtcError::invalid(format!(
            "segment length {t} must be 1 + 16k with k >= 1"
        )));
    }
    Ok(())
}

fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(MtcError::invalid(format!(
            "frame dims must be positive, got {height}x{width}x{channels}"
        )));
    }
    if len != height * width * channels {
        return Err(MtcError::dims(format!(
            "{height}x{width}x{channels} frame needs {} scalars, got {len}",
            height * width * channels
        )));
    }
    Ok(())
}

/// One pixel-domain frame with scalars in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels, data.len())?;
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(MtcError::invalid(format!(
                "pixel scalar {} at index {i} is outside [0, 1]",
                data[i]
            )));
        }
        Ok(Frame {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        Frame::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Builds a frame from a per-scalar function; results are clamped to `[0, 1]`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        check_dims(height, width, channels, height * width * channels)?;
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    let v = f(y, x, c);
                    if !v.is_finite() {
                        return Err(MtcError::invalid("non-finite pixel scalar"));
                    }
                    data.push(v.clamp(0.0, 1.0));
                }
            }
        }
        Ok(Frame {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Channel-mean grayscale plane, row-major, in `f64`.
    pub fn luma(&self) -> Vec<f64> {
        let c = self.channels;
        self.data
            .chunks_exact(c)
            .map(|px| px.iter().map(|&v| v as f64).sum::<f64>() / c as f64)
            .collect()
    }
}

/// One latent-domain frame. Scalars are finite but unbounded (keyframe
/// markers shift them outside the pixel range).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFrame {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl LatentFrame {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(MtcError::invalid("non-finite latent scalar"));
        }
        Ok(LatentFrame {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Adds `offsets[c]` to every scalar of channel `c`.
    pub fn add_per_channel(&mut self, offsets: &[f32]) {
        debug_assert_eq!(offsets.len(), self.channels);
        for px in self.data.chunks_exact_mut(self.channels) {
            for (v, o) in px.iter_mut().zip(offsets) {
                *v += *o;
            }
        }
    }

    pub fn sub_per_channel(&mut self, offsets: &[f32]) {
        debug_assert_eq!(offsets.len(), self.channels);
        for px in self.data.chunks_exact_mut(self.channels) {
            for (v, o) in px.iter_mut().zip(offsets) {
                *v -= *o;
            }
        }
    }
}

/// `T` frames of identical dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoSegment {
    frames: Vec<Frame>,
}

impl VideoSegment {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| MtcError::invalid("segment has no frames"))?;
        let dims = first.dims();
        if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
            return Err(MtcError::dims(format!(
                "frame {i} is {:?}, expected {:?}",
                frames[i].dims(),
                dims
            )));
        }
        Ok(VideoSegment { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(height, width, channels)` of every frame.
    pub fn frame_dims(&self) -> (usize, usize, usize) {
        self.frames[0].dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedVideo {
    segments: Vec<VideoSegment>,
    fps: f32,
}

impl SegmentedVideo {
    pub fn new(segments: Vec<VideoSegment>, fps: f32) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| MtcError::invalid("video has no segments"))?;
        let (t, dims) = (first.len(), first.frame_dims());
        for (i, s) in segments.iter().enumerate() {
            if s.len() != t || s.frame_dims() != dims {
                return Err(MtcError::dims(format!(
                    "segment {i} does not match segment 0 ({t} frames of {dims:?})"
                )));
            }
        }
        Ok(SegmentedVideo { segments, fps })
    }

    pub fn segments(&self) -> &[VideoSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment_len(&self) -> usize {
        self.segments[0].len()
    }

    pub fn fps(&self) -> f32 {
        self.fps
    }

    pub fn frame_dims(&self) -> (usize, usize, usize) {
        self.segments[0].frame_dims()
    }

    pub fn frames(&self) -> impl Iterator<Item = &Frame> {
        self.segments.iter().flat_map(|s| s.frames().iter())
    }
}

/// Cuts `frames` into `⌊len / T⌋` segments of `T` frames; the remainder is dropped.
pub fn segment_video(frames: &[Frame], segment_len: usize) -> Result<SegmentedVideo> {
    segment_video_with_fps(frames, segment_len, 0.0)
}

pub fn segment_video_with_fps(
    frames: &[Frame],
    segment_len: usize,
    fps: f32,
) -> Result<SegmentedVideo> {
    validate_segment_len(segment_len)?;
    if frames.len() < segment_len {
        return Err(MtcError::invalid(format!(
            "input shorter than one segment ({} < {segment_len} frames)",
            frames.len()
        )));
    }
    let dims = frames[0].dims();
    if let Some(i) = frames.iter().position(|f| f.dims() != dims) {
        return Err(MtcError::dims(format!(
            "frame {i} is {:?}, expected {:?}",
            frames[i].dims(),
            dims
        )));
    }
    let segments = frames
        .chunks_exact(segment_len)
        .map(|chunk| VideoSegment::new(chunk.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    SegmentedVideo::new(segments, fps)
}

/// Latent frames of one segment plus the nominal rate they were encoded at.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSegment {
    frames: Vec<LatentFrame>,
    rate: u32,
}

impl LatentSegment {
    pub fn new(frames: Vec<LatentFrame>, rate: u32) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| MtcError::invalid("latent segment has no frames"))?;
        let dims = first.dims();
        if frames.iter().any(|f| f.dims() != dims) {
            return Err(MtcError::dims("latent frames differ in dimensions"));
        }
        Ok(LatentSegment { frames, rate })
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<LatentFrame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn rate(&self) -> u32 {
        self.rate
    }

    pub fn frame_dims(&self) -> (usize, usize, usize) {
        self.frames[0].dims()
    }
}

/// Latent length of a `T`-frame segment under causal decimation at `rate`.
pub fn latent_len(segment_len: usize, rate: u32) -> usize {
    1 + (segment_len - 1) / rate as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frames(n: usize) -> Vec<Frame> {
        (0..n)
            .map(|i| Frame::filled(2, 2, 3, (i % 10) as f32 / 10.0).unwrap())
            .collect()
    }

    #[test]
    fn segments_34_frames_into_two() {
        let v = segment_video(&frames(34), 17).unwrap();
        assert_eq!(v.len(), 2);
        assert_eq!(v.segment_len(), 17);
    }

    #[test]
    fn exact_fit_keeps_everything() {
        let fs = frames(17);
        let v = segment_video(&fs, 17).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v.frames().cloned().collect::<Vec<_>>(), fs);
    }

    #[test]
    fn drops_trailing_partial_segment() {
        let fs = frames(40);
        let v = segment_video(&fs, 17).unwrap();
        assert_eq!(v.len(), 40 / 17);
        let emitted = v.len() * v.segment_len();
        assert_eq!(40 - emitted, 6);
        // order preserved
        assert_eq!(v.segments()[1].frames()[0], fs[17]);
    }

    #[test]
    fn too_short_is_an_error() {
        let err = segment_video(&frames(16), 17).unwrap_err();
        assert!(err.to_string().contains("input shorter than one segment"));
    }

    #[test]
    fn mismatched_dims_rejected() {
        let mut fs = frames(17);
        fs[5] = Frame::filled(3, 2, 3, 0.0).unwrap();
        assert!(matches!(
            segment_video(&fs, 17),
            Err(MtcError::DimMismatch(_))
        ));
    }

    #[test]
    fn segment_len_must_be_one_plus_multiple_of_16() {
        assert!(validate_segment_len(17).is_ok());
        assert!(validate_segment_len(33).is_ok());
        assert!(validate_segment_len(16).is_err());
        assert!(validate_segment_len(1).is_err());
        assert!(validate_segment_len(18).is_err());
    }

    #[test]
    fn frame_rejects_out_of_range() {
        assert!(Frame::new(1, 1, 1, vec![1.5]).is_err());
        assert!(Frame::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Frame::new(0, 1, 1, vec![]).is_err());
        assert!(Frame::new(1, 1, 1, vec![0.25, 0.5]).is_err());
    }

    #[test]
    fn latent_length_law() {
        for rate in [2u32, 4, 8, 16] {
            let l = latent_len(17, rate);
            assert_eq!((l - 1) * rate as usize, 16);
        }
    }

    #[test]
    fn quantized_marker_is_exactly_invertible() {
        let z = quantize_latent(0.1);
        let beta = 0.5f32;
        assert_eq!((z + beta) - beta, z);
        assert_eq!((z - beta) + beta, z);
    }
}
