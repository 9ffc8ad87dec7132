//! Deterministic stand-in for a video autoencoder.
//!
//! Encoding keeps frames `0, r, 2r, .., T-1` (causal decimation, so the first
//! frame is always kept and the latent length is `1 + (T-1)/r`) and reduces
//! each kept frame by block-mean pooling over `factor x factor` tiles.
//! Decoding upsamples each latent frame spatially and interpolates in time.

use std::str::FromStr;

use crate::error::{MtcError, Result};
use crate::tensor::{
    latent_len, quantize_latent, validate_segment_len, Frame, LatentFrame, LatentSegment,
    VideoSegment, DEFAULT_SEGMENT_LEN,
};

pub const PLANNER_RATES: [u32; 3] = [4, 8, 16];
pub const ANALYSIS_RATES: [u32; 4] = [2, 4, 8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemporalInterp {
    Linear,
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpatialInterp {
    Bilinear,
    Nearest,
}

impl FromStr for TemporalInterp {
    type Err = MtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(TemporalInterp::Linear),
            "hold" => Ok(TemporalInterp::Hold),
            _ => Err(MtcError::invalid(format!(
                "unknown temporal interpolation '{s}'"
            ))),
        }
    }
}

impl FromStr for SpatialInterp {
    type Err = MtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(SpatialInterp::Bilinear),
            "nearest" => Ok(SpatialInterp::Nearest),
            _ => Err(MtcError::invalid(format!(
                "unknown spatial interpolation '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub spatial_factor: usize,
    /// Rates the planner may assign, ascending.
    pub planner_rates: Vec<u32>,
    /// Rates the codec accepts (planner rates plus analysis-only ones), ascending.
    pub analysis_rates: Vec<u32>,
    pub temporal: TemporalInterp,
    pub spatial: SpatialInterp,
    pub segment_len: usize,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            spatial_factor: 8,
            planner_rates: PLANNER_RATES.to_vec(),
            analysis_rates: ANALYSIS_RATES.to_vec(),
            temporal: TemporalInterp::Linear,
            spatial: SpatialInterp::Bilinear,
            segment_len: DEFAULT_SEGMENT_LEN,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        validate_segment_len(self.segment_len)?;
        if self.spatial_factor == 0 {
            return Err(MtcError::invalid("spatial factor must be positive"));
        }
        let ascending = |r: &[u32]| r.windows(2).all(|w| w[0] < w[1]);
        if self.planner_rates.is_empty() || !ascending(&self.planner_rates) {
            return Err(MtcError::invalid(
                "planner rates must be non-empty and ascending",
            ));
        }
        if !ascending(&self.analysis_rates) {
            return Err(MtcError::invalid("analysis rates must be ascending"));
        }
        if let Some(r) = self
            .planner_rates
            .iter()
            .find(|r| !self.analysis_rates.contains(r))
        {
            return Err(MtcError::invalid(format!(
                "planner rate {r} is not an analysis rate"
            )));
        }
        if let Some(r) = self
            .analysis_rates
            .iter()
            .find(|&&r| r == 0 || !(self.segment_len - 1).is_multiple_of(r as usize))
        {
            return Err(MtcError::invalid(format!(
                "rate {r} does not divide T-1 = {}",
                self.segment_len - 1
            )));
        }
        Ok(())
    }

    pub fn check_frame_dims(&self, height: usize, width: usize) -> Result<()> {
        let f = self.spatial_factor;
        if f == 0 || !height.is_multiple_of(f) || !width.is_multiple_of(f) {
            return Err(MtcError::invalid(format!(
                "spatial factor {f} does not divide {height}x{width}"
            )));
        }
        Ok(())
    }

    /// Latent lengths that correspond to some analysis rate.
    pub fn valid_latent_lens(&self) -> Vec<(usize, u32)> {
        self.analysis_rates
            .iter()
            .map(|&r| (latent_len(self.segment_len, r), r))
            .collect()
    }
}

/// Pluggable temporal codec.
pub trait TemporalCodec: Sync {
    fn config(&self) -> &CodecConfig;

    fn encode(&self, x: &VideoSegment, rate: u32) -> Result<LatentSegment>;

    fn decode(&self, z: &LatentSegment, rate: u32) -> Result<VideoSegment>;

    fn reconstruct(&self, x: &VideoSegment, rate: u32) -> Result<VideoSegment> {
        self.decode(&self.encode(x, rate)?, rate)
    }
}

#[derive(Debug, Clone, Default)]
pub struct DecimationCodec {
    cfg: CodecConfig,
}

impl DecimationCodec {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(DecimationCodec { cfg })
    }
}

impl TemporalCodec for DecimationCodec {
    fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    fn encode(&self, x: &VideoSegment, rate: u32) -> Result<LatentSegment> {
        encode_segment(x, rate, &self.cfg)
    }

    fn decode(&self, z: &LatentSegment, rate: u32) -> Result<VideoSegment> {
        decode_segment(z, rate, &self.cfg)
    }
}

fn block_mean(frame: &Frame, factor: usize) -> LatentFrame {
    let (h, w, c) = frame.dims();
    let (lh, lw) = (h / factor, w / factor);
    let mut acc = vec![0f64; lh * lw * c];
    for y in 0..h {
        let row = (y / factor) * lw;
        for x in 0..w {
            let base = (row + x / factor) * c;
            for ch in 0..c {
                acc[base + ch] += frame.get(y, x, ch) as f64;
            }
        }
    }
    let area = (factor * factor) as f64;
    let data = acc.into_iter().map(|s| quantize_latent(s / area)).collect();
    LatentFrame::new(lh, lw, c, data).expect("pooled dims are valid")
}

pub fn encode_segment(x: &VideoSegment, rate: u32, cfg: &CodecConfig) -> Result<LatentSegment> {
    if !cfg.analysis_rates.contains(&rate) {
        return Err(MtcError::invalid(format!(
            "rate {rate} is not one of {:?}",
            cfg.analysis_rates
        )));
    }
    let t = x.len();
    if t < 2 || !(t - 1).is_multiple_of(rate as usize) {
        return Err(MtcError::invalid(format!(
            "rate {rate} does not divide T-1 = {}",
            t.saturating_sub(1)
        )));
    }
    let (h, w, _) = x.frame_dims();
    cfg.check_frame_dims(h, w)?;
    let frames = x
        .frames()
        .iter()
        .step_by(rate as usize)
        .map(|f| block_mean(f, cfg.spatial_factor))
        .collect();
    LatentSegment::new(frames, rate)
}

/// Source coordinate and weight along one axis for upsampling by `factor`.
fn bilinear_taps(out: usize, factor: usize, src_len: usize) -> (usize, usize, f64) {
    let src = (out as f64 + 0.5) / factor as f64 - 0.5;
    if src <= 0.0 {
        return (0, 0, 0.0);
    }
    let i0 = src.floor() as usize;
    if i0 + 1 >= src_len {
        return (src_len - 1, src_len - 1, 0.0);
    }
    (i0, i0 + 1, src - i0 as f64)
}

fn upsample(z: &LatentFrame, factor: usize, interp: SpatialInterp) -> Vec<f64> {
    let (lh, lw, c) = z.dims();
    let (h, w) = (lh * factor, lw * factor);
    let mut out = Vec::with_capacity(h * w * c);
    match interp {
        SpatialInterp::Nearest => {
            for y in 0..h {
                for x in 0..w {
                    for ch in 0..c {
                        out.push(z.get(y / factor, x / factor, ch) as f64);
                    }
                }
            }
        }
        SpatialInterp::Bilinear => {
            let xs: Vec<_> = (0..w).map(|x| bilinear_taps(x, factor, lw)).collect();
            for y in 0..h {
                let (y0, y1, fy) = bilinear_taps(y, factor, lh);
                for &(x0, x1, fx) in &xs {
                    for ch in 0..c {
                        let top = lerp(z.get(y0, x0, ch) as f64, z.get(y0, x1, ch) as f64, fx);
                        let bot = lerp(z.get(y1, x0, ch) as f64, z.get(y1, x1, ch) as f64, fx);
                        out.push(lerp(top, bot, fy));
                    }
                }
            }
        }
    }
    out
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    if t == 0.0 {
        a
    } else {
        a + t * (b - a)
    }
}

pub fn decode_segment(z: &LatentSegment, rate: u32, cfg: &CodecConfig) -> Result<VideoSegment> {
    let t = cfg.segment_len;
    if rate == 0 || !(t - 1).is_multiple_of(rate as usize) || z.len() != latent_len(t, rate) {
        return Err(MtcError::RateLength(format!(
            "rate/length mismatch: {} latent frames cannot decode to {t} frames at rate {rate}",
            z.len()
        )));
    }
    let (lh, lw, c) = z.frame_dims();
    let f = cfg.spatial_factor;
    let (h, w) = (lh * f, lw * f);
    let kept: Vec<Vec<f64>> = z
        .frames()
        .iter()
        .map(|lf| upsample(lf, f, cfg.spatial))
        .collect();
    let step = rate as usize;
    let mut frames = Vec::with_capacity(t);
    for j in 0..t {
        let k = j / step;
        let m = j % step;
        let data: Vec<f32> = if m == 0 {
            kept[k].iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect()
        } else {
            match cfg.temporal {
                TemporalInterp::Hold => kept[k].iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
                TemporalInterp::Linear => {
                    let tt = m as f64 / step as f64;
                    kept[k]
                        .iter()
                        .zip(&kept[k + 1])
                        .map(|(&a, &b)| lerp(a, b, tt).clamp(0.0, 1.0) as f32)
                        .collect()
                }
            }
        };
        frames.push(Frame::new(h, w, c, data)?);
    }
    VideoSegment::new(frames)
}

/// `decode(encode(x))`.
pub fn reconstruct_at_rate(x: &VideoSegment, rate: u32, cfg: &CodecConfig) -> Result<VideoSegment> {
    let z = encode_segment(x, rate, cfg)?;
    let mut dcfg = cfg.clone();
    dcfg.segment_len = x.len();
    decode_segment(&z, rate, &dcfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(factor: usize) -> CodecConfig {
        CodecConfig {
            spatial_factor: factor,
            ..CodecConfig::default()
        }
    }

    fn ramp(t: usize, h: usize, w: usize) -> VideoSegment {
        let frames = (0..t)
            .map(|j| Frame::filled(h, w, 3, j as f32 / (t - 1) as f32).unwrap())
            .collect();
        VideoSegment::new(frames).unwrap()
    }

    fn noise(seed: u64, t: usize, h: usize, w: usize) -> VideoSegment {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frames = (0..t)
            .map(|_| Frame::from_fn(h, w, 3, |_, _, _| rng.gen()).unwrap())
            .collect();
        VideoSegment::new(frames).unwrap()
    }

    /// Frame whose value at frame j encodes j, so kept indices are observable.
    fn indexed(t: usize) -> VideoSegment {
        let frames = (0..t)
            .map(|j| Frame::filled(8, 8, 1, j as f32 / 32.0).unwrap())
            .collect();
        VideoSegment::new(frames).unwrap()
    }

    #[test]
    fn rate_four_keeps_five_frames() {
        let z = encode_segment(&indexed(17), 4, &cfg(8)).unwrap();
        let kept: Vec<f32> = z.frames().iter().map(|f| f.get(0, 0, 0) * 32.0).collect();
        assert_eq!(kept, vec![0.0, 4.0, 8.0, 12.0, 16.0]);
    }

    #[test]
    fn rate_sixteen_keeps_endpoints() {
        let z = encode_segment(&indexed(17), 16, &cfg(8)).unwrap();
        let kept: Vec<f32> = z.frames().iter().map(|f| f.get(0, 0, 0) * 32.0).collect();
        assert_eq!(kept, vec![0.0, 16.0]);
    }

    #[test]
    fn two_by_two_block_mean() {
        let f = Frame::new(2, 2, 1, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let seg = VideoSegment::new(vec![f; 17]).unwrap();
        let z = encode_segment(&seg, 16, &cfg(2)).unwrap();
        assert_eq!(z.frames()[0].data(), &[0.5]);
    }

    #[test]
    fn bad_rate_and_factor_rejected() {
        let seg = ramp(17, 8, 8);
        assert!(encode_segment(&seg, 3, &cfg(8)).is_err());
        assert!(encode_segment(&seg, 4, &cfg(3)).is_err());
        let short = ramp(9, 8, 8);
        assert!(encode_segment(&short, 16, &cfg(8)).is_err());
    }

    #[test]
    fn linear_ramp_is_a_fixed_point() {
        let x = ramp(17, 4, 4);
        for rate in ANALYSIS_RATES {
            let y = reconstruct_at_rate(&x, rate, &cfg(1)).unwrap();
            assert_eq!(y, x, "rate {rate}");
        }
    }

    #[test]
    fn length_law_enforced_on_decode() {
        let x = ramp(17, 8, 8);
        let z = encode_segment(&x, 8, &cfg(8)).unwrap();
        let three = LatentSegment::new(z.frames().to_vec(), 16).unwrap();
        let err = decode_segment(&three, 16, &cfg(8)).unwrap_err();
        assert!(err.to_string().contains("rate/length mismatch"));
    }

    #[test]
    fn static_video_reconstructs_exactly() {
        // Block-constant content: each 4x4 tile is constant.
        let f = Frame::from_fn(16, 16, 3, |y, x, c| {
            ((y / 4) * 4 + (x / 4) + c) as f32 / 32.0
        })
        .unwrap();
        let x = VideoSegment::new(vec![f; 17]).unwrap();
        for rate in ANALYSIS_RATES {
            for factor in [1, 2, 4] {
                let mut c = cfg(factor);
                c.spatial = SpatialInterp::Nearest;
                assert_eq!(reconstruct_at_rate(&x, rate, &c).unwrap(), x);
            }
        }
        let flat = VideoSegment::new(vec![Frame::filled(16, 16, 3, 0.3).unwrap(); 17]).unwrap();
        for factor in [1, 2, 4, 8] {
            let y = reconstruct_at_rate(&flat, 8, &cfg(factor)).unwrap();
            assert_eq!(psnr(&flat, &y).unwrap(), 100.0);
        }
    }

    #[test]
    fn kept_frames_equal_upsampled_latent() {
        let x = noise(11, 17, 16, 16);
        let c = cfg(4);
        let z = encode_segment(&x, 4, &c).unwrap();
        let y = decode_segment(&z, 4, &c).unwrap();
        for (k, lf) in z.frames().iter().enumerate() {
            let up: Vec<f32> = upsample(lf, 4, SpatialInterp::Bilinear)
                .into_iter()
                .map(|v| v.clamp(0.0, 1.0) as f32)
                .collect();
            assert_eq!(y.frames()[k * 4].data(), up.as_slice());
        }
    }

    #[test]
    fn noise_psnr_decreases_with_rate() {
        let x = noise(5, 17, 16, 16);
        let c = cfg(1);
        let scores: Vec<f64> = ANALYSIS_RATES
            .iter()
            .map(|&r| psnr(&x, &reconstruct_at_rate(&x, r, &c).unwrap()).unwrap())
            .collect();
        assert!(scores.windows(2).all(|w| w[0] > w[1]), "{scores:?}");
    }

    #[test]
    fn pooling_preserves_frame_mean() {
        // Values on a 1/256 grid keep every sum exact.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = Frame::from_fn(16, 24, 2, |_, _, _| rng.gen_range(0..=256) as f32 / 256.0).unwrap();
        let z = block_mean(&f, 8);
        let pix: f64 = f.data().iter().map(|&v| v as f64).sum();
        let lat: f64 = z.data().iter().map(|&v| v as f64).sum();
        assert_eq!(lat * 64.0, pix);
    }

    #[test]
    fn encoding_is_deterministic_and_causal() {
        let x = noise(21, 17, 8, 8);
        let a = encode_segment(&x, 4, &cfg(8)).unwrap();
        let b = encode_segment(&x, 4, &cfg(8)).unwrap();
        assert_eq!(a, b);
        // Perturb frames after index 8: latents 0..=2 must not change.
        let mut frames = x.frames().to_vec();
        for f in frames.iter_mut().skip(9) {
            *f = Frame::filled(8, 8, 3, 0.0).unwrap();
        }
        let y = VideoSegment::new(frames).unwrap();
        let c = encode_segment(&y, 4, &cfg(8)).unwrap();
        assert_eq!(&a.frames()[..3], &c.frames()[..3]);
    }

    #[test]
    fn hold_interpolation_repeats_kept_frames() {
        let x = indexed(17);
        let mut c = cfg(8);
        c.temporal = TemporalInterp::Hold;
        let y = reconstruct_at_rate(&x, 8, &c).unwrap();
        assert_eq!(y.frames()[7], x.frames()[0]);
        assert_eq!(y.frames()[8], x.frames()[8]);
    }

    #[test]
    fn config_validation() {
        assert!(CodecConfig::default().validate().is_ok());
        let mut c = CodecConfig::default();
        c.planner_rates = vec![4, 32];
        assert!(c.validate().is_err());
        let mut c = CodecConfig::default();
        c.analysis_rates = vec![3, 4, 8, 16];
        c.planner_rates = vec![4, 8, 16];
        assert!(c.validate().is_err());
        let mut c = CodecConfig::default();
        c.segment_len = 33;
        assert!(c.validate().is_ok());
        assert_eq!(
            c.valid_latent_lens(),
            vec![(17, 2), (9, 4), (5, 8), (3, 16)]
        );
    }
}
