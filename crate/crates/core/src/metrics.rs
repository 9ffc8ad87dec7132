//! Quality and motion metrics.
//!
//! PSNR and SSIM use a peak of 1.0 on unit-interval data. Motion is estimated
//! with exhaustive block matching (8x8 blocks, radius 4, SAD cost), which
//! stands in for a learned optical-flow model in the flow-guided loss.

use std::io::Write;

use flate2::write::DeflateEncoder;
use flate2::Compression;

use crate::error::{MtcError, Result};
use crate::planner::CompressionPlan;
use crate::tensor::{Frame, VideoSegment};
use crate::CodecConfig;

/// Reported PSNR when two signals are identical.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 8;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub const FLOW_BLOCK: usize = 8;
pub const FLOW_RADIUS: i32 = 4;

pub const BCE_EPS: f64 = 1e-7;

fn check_same(a: &[Frame], b: &[Frame]) -> Result<()> {
    if a.len() != b.len() {
        return Err(MtcError::dims(format!(
            "{} frames vs {} frames",
            a.len(),
            b.len()
        )));
    }
    if let Some(i) = (0..a.len()).find(|&i| a[i].dims() != b[i].dims()) {
        return Err(MtcError::dims(format!(
            "frame {i}: {:?} vs {:?}",
            a[i].dims(),
            b[i].dims()
        )));
    }
    Ok(())
}

pub fn mse_frames(a: &[Frame], b: &[Frame]) -> Result<f64> {
    check_same(a, b)?;
    let mut sum = 0f64;
    let mut n = 0usize;
    for (fa, fb) in a.iter().zip(b) {
        for (&x, &y) in fa.data().iter().zip(fb.data()) {
            let d = x as f64 - y as f64;
            sum += d * d;
        }
        n += fa.data().len();
    }
    if n == 0 {
        return Err(MtcError::invalid("no samples to compare"));
    }
    Ok(sum / n as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// PSNR over all frames and channels of two frame lists.
pub fn psnr_frames(a: &[Frame], b: &[Frame]) -> Result<f64> {
    Ok(psnr_from_mse(mse_frames(a, b)?))
}

pub fn psnr(a: &VideoSegment, b: &VideoSegment) -> Result<f64> {
    psnr_frames(a.frames(), b.frames())
}

/// Inclusive-exclusive summed-area table with a zero top row and left column.
struct Integral {
    w: usize,
    data: Vec<f64>,
}

impl Integral {
    fn new(h: usize, w: usize, v: impl Fn(usize) -> f64) -> Self {
        let stride = w + 1;
        let mut data = vec![0f64; (h + 1) * stride];
        for y in 0..h {
            let mut row = 0f64;
            for x in 0..w {
                row += v(y * w + x);
                data[(y + 1) * stride + x + 1] = data[y * stride + x + 1] + row;
            }
        }
        Integral { w, data }
    }

    fn window(&self, y: usize, x: usize, n: usize) -> f64 {
        let s = self.w + 1;
        self.data[(y + n) * s + x + n] - self.data[y * s + x + n] - self.data[(y + n) * s + x]
            + self.data[y * s + x]
    }
}

/// Mean SSIM over all 8x8 windows (stride 1) of the channel-mean planes.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(MtcError::dims(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(MtcError::invalid(format!(
            "{h}x{w} frame is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let (la, lb) = (a.luma(), b.luma());
    let sa = Integral::new(h, w, |i| la[i]);
    let sb = Integral::new(h, w, |i| lb[i]);
    let saa = Integral::new(h, w, |i| la[i] * la[i]);
    let sbb = Integral::new(h, w, |i| lb[i] * lb[i]);
    let sab = Integral::new(h, w, |i| la[i] * lb[i]);

    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0f64;
    let mut count = 0usize;
    for y in 0..=h - SSIM_WINDOW {
        for x in 0..=w - SSIM_WINDOW {
            let ma = sa.window(y, x, SSIM_WINDOW) / n;
            let mb = sb.window(y, x, SSIM_WINDOW) / n;
            let va = saa.window(y, x, SSIM_WINDOW) / n - ma * ma;
            let vb = sbb.window(y, x, SSIM_WINDOW) / n - mb * mb;
            let cov = sab.window(y, x, SSIM_WINDOW) / n - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean per-frame SSIM of two segments.
pub fn ssim_frames(a: &[Frame], b: &[Frame]) -> Result<f64> {
    check_same(a, b)?;
    if a.is_empty() {
        return Err(MtcError::invalid("no frames to compare"));
    }
    let mut total = 0f64;
    for (fa, fb) in a.iter().zip(b) {
        total += ssim(fa, fb)?;
    }
    Ok(total / a.len() as f64)
}

pub fn ssim_segment(a: &VideoSegment, b: &VideoSegment) -> Result<f64> {
    ssim_frames(a.frames(), b.frames())
}

/// Integer displacement per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowField {
    pub frame_height: usize,
    pub frame_width: usize,
    pub block: usize,
    pub radius: i32,
    pub rows: usize,
    pub cols: usize,
    /// `(dy, dx)` per block, row-major.
    pub vectors: Vec<(i32, i32)>,
}

impl FlowField {
    pub fn zero(frame_height: usize, frame_width: usize) -> Self {
        let rows = frame_height.div_ceil(FLOW_BLOCK);
        let cols = frame_width.div_ceil(FLOW_BLOCK);
        FlowField {
            frame_height,
            frame_width,
            block: FLOW_BLOCK,
            radius: FLOW_RADIUS,
            rows,
            cols,
            vectors: vec![(0, 0); rows * cols],
        }
    }

    pub fn uniform(frame_height: usize, frame_width: usize, dy: i32, dx: i32) -> Self {
        let mut f = FlowField::zero(frame_height, frame_width);
        f.vectors.fill((dy, dx));
        f
    }

    pub fn at(&self, row: usize, col: usize) -> (i32, i32) {
        self.vectors[row * self.cols + col]
    }

    /// Mean of `|dy| + |dx|` over blocks.
    pub fn mean_l1(&self) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        let s: i64 = self
            .vectors
            .iter()
            .map(|&(dy, dx)| (dy.abs() + dx.abs()) as i64)
            .sum();
        s as f64 / self.vectors.len() as f64
    }
}

#[inline]
fn clamp_coord(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Candidate displacements in tie-break order: smallest `|dy|+|dx|`, then
/// smallest `dy`, then smallest `dx`.
fn candidates(radius: i32) -> Vec<(i32, i32)> {
    let mut c: Vec<(i32, i32)> = (-radius..=radius)
        .flat_map(|dy| (-radius..=radius).map(move |dx| (dy, dx)))
        .collect();
    c.sort_by_key(|&(dy, dx)| (dy.abs() + dx.abs(), dy, dx));
    c
}

/// For each 8x8 block of `prev`, finds the displacement `d` minimising
/// `Σ |prev(p) - next(p + d)|` (coordinates in `next` are border-clamped).
pub fn estimate_flow(prev: &Frame, next: &Frame) -> Result<FlowField> {
    if prev.dims() != next.dims() {
        return Err(MtcError::dims(format!(
            "{:?} vs {:?}",
            prev.dims(),
            next.dims()
        )));
    }
    let (h, w, ch) = prev.dims();
    let mut field = FlowField::zero(h, w);
    let cands = candidates(FLOW_RADIUS);
    for row in 0..field.rows {
        for col in 0..field.cols {
            let (y0, x0) = (row * FLOW_BLOCK, col * FLOW_BLOCK);
            let (y1, x1) = ((y0 + FLOW_BLOCK).min(h), (x0 + FLOW_BLOCK).min(w));
            let mut best = (f64::INFINITY, (0, 0));
            for &(dy, dx) in &cands {
                let mut cost = 0f64;
                for y in y0..y1 {
                    let ny = clamp_coord(y as isize + dy as isize, h);
                    for x in x0..x1 {
                        let nx = clamp_coord(x as isize + dx as isize, w);
                        for c in 0..ch {
                            cost += (prev.get(y, x, c) - next.get(ny, nx, c)).abs() as f64;
                        }
                    }
                    if cost >= best.0 {
                        break;
                    }
                }
                if cost < best.0 {
                    best = (cost, (dy, dx));
                }
            }
            field.vectors[row * field.cols + col] = best.1;
        }
    }
    Ok(field)
}

/// Samples each pixel of `x` at `(y + dy, x + dx)` using its block's
/// displacement, clamping at the border.
pub fn warp(x: &Frame, flow: &FlowField) -> Result<Frame> {
    let (h, w, ch) = x.dims();
    if flow.frame_height != h
        || flow.frame_width != w
        || flow.rows != h.div_ceil(flow.block)
        || flow.cols != w.div_ceil(flow.block)
    {
        return Err(MtcError::dims(format!(
            "flow for {}x{} applied to {h}x{w} frame",
            flow.frame_height, flow.frame_width
        )));
    }
    let mut data = Vec::with_capacity(h * w * ch);
    for y in 0..h {
        for xx in 0..w {
            let (dy, dx) = flow.at(y / flow.block, xx / flow.block);
            let sy = clamp_coord(y as isize + dy as isize, h);
            let sx = clamp_coord(xx as isize + dx as isize, w);
            for c in 0..ch {
                data.push(x.get(sy, sx, c));
            }
        }
    }
    Frame::new(h, w, ch, data)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowLoss {
    pub quality: f64,
    pub motion: f64,
    pub total: f64,
}

/// Flow-guided consistency loss of a reconstruction `xhat` against `x`.
///
/// For each consecutive pair of reconstructed frames the backward flow
/// (frame `t+1` onto frame `t`) is estimated, frame `t` is warped with it to
/// predict frame `t+1`, and the prediction is compared with the original
/// frame `t+1`. `quality` is the mean L1 of that comparison, `motion` the mean
/// per-block `|dy| + |dx|`, both averaged over pairs.
pub fn flow_loss(x: &VideoSegment, xhat: &VideoSegment) -> Result<FlowLoss> {
    flow_loss_frames(x.frames(), xhat.frames())
}

pub fn flow_loss_frames(x: &[Frame], xhat: &[Frame]) -> Result<FlowLoss> {
    check_same(x, xhat)?;
    let pairs = x.len().saturating_sub(1);
    if pairs == 0 {
        return Ok(FlowLoss {
            quality: 0.0,
            motion: 0.0,
            total: 0.0,
        });
    }
    let mut quality = 0f64;
    let mut motion = 0f64;
    for t in 0..pairs {
        let flow = estimate_flow(&xhat[t + 1], &xhat[t])?;
        let predicted = warp(&xhat[t], &flow)?;
        let target = &x[t + 1];
        let l1: f64 = predicted
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        quality += l1 / target.data().len() as f64;
        motion += flow.mean_l1();
    }
    let quality = quality / pairs as f64;
    let motion = motion / pairs as f64;
    Ok(FlowLoss {
        quality,
        motion,
        total: quality + motion,
    })
}

/// Mean forward block-flow magnitude (`|dy| + |dx|`) over consecutive frames.
pub fn mean_flow_magnitude(frames: &[Frame]) -> Result<f64> {
    let pairs = frames.len().saturating_sub(1);
    if pairs == 0 {
        return Ok(0.0);
    }
    let mut total = 0f64;
    for t in 0..pairs {
        total += estimate_flow(&frames[t], &frames[t + 1])?.mean_l1();
    }
    Ok(total / pairs as f64)
}

fn bce_term(p: f64, y: bool) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy with probabilities clamped to `[ε, 1-ε]`.
pub fn bce_loss(p: &[f64], y: &[bool]) -> Result<f64> {
    weighted_bce_loss(p, y, 1.0)
}

/// BCE where positive terms are scaled by `positive_weight`.
pub fn weighted_bce_loss(p: &[f64], y: &[bool], positive_weight: f64) -> Result<f64> {
    if p.len() != y.len() {
        return Err(MtcError::dims(format!(
            "{} probabilities vs {} labels",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Err(MtcError::invalid("empty probability list"));
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let t = bce_term(p, y);
            if y {
                positive_weight * t
            } else {
                t
            }
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// Losslessly compressed size of the 8-bit temporal residual stream, in bytes
/// per sample value.
///
/// Frame 0 is stored raw; every later frame as the wrapping byte difference to
/// its predecessor. The residuals are deflated at the default level.
pub fn compressibility(frames: &[Frame]) -> f64 {
    let samples: usize = frames.iter().map(|f| f.data().len()).sum();
    if samples == 0 {
        return 0.0;
    }
    let mut residual = Vec::with_capacity(samples);
    let mut prev: Option<Vec<u8>> = None;
    for f in frames {
        let q: Vec<u8> = f
            .data()
            .iter()
            .map(|&v| crate::io::quantize_u8(v))
            .collect();
        match &prev {
            None => residual.extend_from_slice(&q),
            Some(p) => residual.extend(q.iter().zip(p).map(|(a, b)| a.wrapping_sub(*b))),
        }
        prev = Some(q);
    }
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&residual).expect("in-memory write");
    let compressed = enc.finish().expect("in-memory finish");
    compressed.len() as f64 / samples as f64
}

pub fn compressibility_segment(x: &VideoSegment) -> f64 {
    compressibility(x.frames())
}

/// Nominal pixels-to-latents ratio: `factor² · N / Σ 1/c_i`.
pub fn vcpr_rates(rates: &[u32], spatial_factor: usize) -> Result<f64> {
    if rates.is_empty() {
        return Err(MtcError::invalid("empty plan"));
    }
    if rates.contains(&0) {
        return Err(MtcError::invalid("zero rate in plan"));
    }
    let inv: f64 = rates.iter().map(|&c| 1.0 / c as f64).sum();
    Ok((spatial_factor * spatial_factor) as f64 * rates.len() as f64 / inv)
}

pub fn vcpr(plan: &CompressionPlan, cfg: &CodecConfig) -> Result<f64> {
    vcpr_rates(&plan.rates, cfg.spatial_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(frames: Vec<Frame>) -> VideoSegment {
        VideoSegment::new(frames).unwrap()
    }

    fn textured(seed: u64, h: usize, w: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(h, w, 3, |_, _, _| rng.gen()).unwrap()
    }

    fn shifted(f: &Frame, dy: isize, dx: isize) -> Frame {
        let (h, w, _) = f.dims();
        Frame::from_fn(h, w, 3, |y, x, c| {
            f.get(
                clamp_coord(y as isize - dy, h),
                clamp_coord(x as isize - dx, w),
                c,
            )
        })
        .unwrap()
    }

    #[test]
    fn psnr_identity_is_capped() {
        let a = seg(vec![textured(1, 8, 8); 3]);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    }

    #[test]
    fn psnr_uniform_error() {
        let a = seg(vec![Frame::filled(4, 4, 3, 0.25).unwrap(); 2]);
        let b = seg(vec![Frame::filled(4, 4, 3, 0.35).unwrap(); 2]);
        let expected = 10.0 * (1.0f64 / 0.01).log10();
        let diff = 0.35f32 as f64 - 0.25f32 as f64;
        let exact = 10.0 * (1.0 / (diff * diff)).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - exact).abs() < 1e-9);
        assert!((got - expected).abs() < 1e-5);
    }

    #[test]
    fn psnr_frame_count_mismatch() {
        let a = seg(vec![Frame::filled(4, 4, 3, 0.0).unwrap(); 17]);
        let b = seg(vec![Frame::filled(4, 4, 3, 0.0).unwrap(); 16]);
        assert!(matches!(psnr(&a, &b), Err(MtcError::DimMismatch(_))));
    }

    #[test]
    fn ssim_identity_and_small_frame() {
        let a = textured(2, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let tiny = Frame::filled(4, 4, 3, 0.5).unwrap();
        assert!(ssim(&tiny, &tiny).is_err());
    }

    #[test]
    fn ssim_black_vs_white() {
        let a = Frame::filled(8, 8, 3, 0.0).unwrap();
        let b = Frame::filled(8, 8, 3, 1.0).unwrap();
        // Single window: means 0 and 1, zero variance.
        let c1 = 0.0001;
        let c2 = 0.0009;
        let expected = (c1 * c2) / ((1.0 + c1) * c2);
        assert!((ssim(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn flow_of_identical_frames_is_zero() {
        let f = textured(3, 32, 32);
        assert!(estimate_flow(&f, &f)
            .unwrap()
            .vectors
            .iter()
            .all(|&v| v == (0, 0)));
        let flat = Frame::filled(32, 32, 3, 0.4).unwrap();
        assert!(estimate_flow(&flat, &flat)
            .unwrap()
            .vectors
            .iter()
            .all(|&v| v == (0, 0)));
    }

    #[test]
    fn flow_detects_rightward_shift() {
        let prev = textured(4, 48, 48);
        let next = shifted(&prev, 0, 2);
        let flow = estimate_flow(&prev, &next).unwrap();
        let mut interior = 0;
        let mut correct = 0;
        for r in 1..flow.rows - 1 {
            for c in 1..flow.cols - 1 {
                interior += 1;
                if flow.at(r, c) == (0, 2) {
                    correct += 1;
                }
            }
        }
        assert!(correct * 10 >= interior * 9, "{correct}/{interior}");
    }

    #[test]
    fn flow_grid_dims_round_up() {
        let f = Frame::filled(20, 9, 1, 0.0).unwrap();
        let flow = estimate_flow(&f, &f).unwrap();
        assert_eq!((flow.rows, flow.cols), (3, 2));
    }

    #[test]
    fn warp_zero_flow_is_identity() {
        let f = textured(5, 20, 12);
        assert_eq!(warp(&f, &FlowField::zero(20, 12)).unwrap(), f);
    }

    #[test]
    fn warp_uniform_dx_one() {
        let f = textured(6, 16, 16);
        let g = warp(&f, &FlowField::uniform(16, 16, 0, 1)).unwrap();
        for y in 0..16 {
            for x in 0..16 {
                let src = (x + 1).min(15);
                for c in 0..3 {
                    assert_eq!(g.get(y, x, c), f.get(y, src, c));
                }
            }
        }
    }

    #[test]
    fn warp_grid_mismatch() {
        let f = Frame::filled(32, 32, 3, 0.0).unwrap();
        assert!(warp(&f, &FlowField::zero(64, 64)).is_err());
    }

    #[test]
    fn flow_loss_static_is_zero() {
        let x = seg(vec![textured(7, 16, 16); 5]);
        let l = flow_loss(&x, &x).unwrap();
        assert_eq!((l.quality, l.motion, l.total), (0.0, 0.0, 0.0));
    }

    #[test]
    fn flow_loss_mismatch() {
        let a = seg(vec![textured(7, 16, 16); 5]);
        let b = seg(vec![textured(7, 16, 16); 4]);
        assert!(flow_loss(&a, &b).is_err());
    }

    #[test]
    fn bce_cases() {
        let perfect = bce_loss(&[1.0, 0.0], &[true, false]).unwrap();
        assert!((perfect - (-(1.0 - BCE_EPS).ln())).abs() < 1e-15);
        assert!((perfect - 1e-7).abs() < 1e-12);
        let half = bce_loss(&[0.5; 4], &[true, false, true, false]).unwrap();
        assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.5], &[true, false]).is_err());
    }

    #[test]
    fn compressibility_bounds() {
        let flat = vec![Frame::filled(32, 32, 3, 0.5).unwrap(); 17];
        assert!(compressibility(&flat) < 0.05);
        let noise: Vec<Frame> = (0..17).map(|i| textured(100 + i, 32, 32)).collect();
        assert!(compressibility(&noise) >= 0.9);
        assert_eq!(compressibility(&noise), compressibility(&noise.clone()));
    }

    #[test]
    fn vcpr_conventions() {
        assert_eq!(vcpr_rates(&[4, 4, 4], 8).unwrap(), 256.0);
        assert_eq!(vcpr_rates(&[16], 8).unwrap(), 1024.0);
        assert!((vcpr_rates(&[4, 16], 8).unwrap() - 409.6).abs() < 1e-9);
        assert!(vcpr_rates(&[], 8).is_err());
    }

    proptest! {
        #[test]
        fn vcpr_monotone(rates in prop::collection::vec(prop::sample::select(vec![2u32, 4, 8, 16]), 1..10), idx in 0usize..10) {
            let i = idx % rates.len();
            let base = vcpr_rates(&rates, 8).unwrap();
            let mut up = rates.clone();
            up[i] = (up[i] * 2).min(16);
            prop_assert!(vcpr_rates(&up, 8).unwrap() >= base);
        }

        #[test]
        fn bce_midpoint_convexity(p in prop::collection::vec(0.0f64..1.0, 1..8), q in prop::collection::vec(0.0f64..1.0, 8), ys in prop::collection::vec(any::<bool>(), 8)) {
            let n = p.len();
            let (q, y) = (&q[..n], &ys[..n]);
            let mid: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
            let lm = bce_loss(&mid, y).unwrap();
            let la = bce_loss(&p, y).unwrap();
            let lb = bce_loss(q, y).unwrap();
            prop_assert!(lm <= 0.5 * (la + lb) + 1e-12);
            let exact: Vec<f64> = y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
            prop_assert!(bce_loss(&exact, y).unwrap() <= la + 1e-15);
            prop_assert!(la >= 0.0);
        }

        #[test]
        fn psnr_symmetric_and_decreasing(seed in 0u64..1000, amp in 0.01f32..0.2) {
            let base = Frame::filled(8, 8, 3, 0.5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let signs: Vec<f32> = (0..192).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect();
            let noisy = |a: f32| Frame::new(8, 8, 3, signs.iter().map(|s| 0.5 + s * a).collect()).unwrap();
            let a = [base.clone()];
            let lo = [noisy(amp)];
            let hi = [noisy(amp * 1.5)];
            prop_assert_eq!(psnr_frames(&a, &lo).unwrap(), psnr_frames(&lo, &a).unwrap());
            prop_assert!(psnr_frames(&a, &lo).unwrap() > psnr_frames(&a, &hi).unwrap());
        }

        #[test]
        fn flow_loss_components(seed in 0u64..500, dx in -3isize..=3) {
            let f0 = textured(seed, 16, 16);
            let f1 = shifted(&f0, 0, dx);
            let x = seg(vec![f0.clone(), f1.clone(), shifted(&f1, 1, 0)]);
            let xhat = seg(vec![f0, f1.clone(), f1]);
            let l = flow_loss(&x, &xhat).unwrap();
            prop_assert!(l.quality >= 0.0 && l.motion >= 0.0);
            prop_assert_eq!(l.total, l.quality + l.motion);
        }
    }
}
