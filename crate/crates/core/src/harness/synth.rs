//! Seeded synthetic videos.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MtcError, Result};
use crate::tensor::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pattern {
    Static,
    DriftGrating,
    BouncingSquare,
    Noise,
    /// Thirds of a still, slow (speed / 4) and fast drifting grating.
    Mixed,
}

impl Pattern {
    pub const ALL: [Pattern; 5] = [
        Pattern::Static,
        Pattern::DriftGrating,
        Pattern::BouncingSquare,
        Pattern::Noise,
        Pattern::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Static => "static",
            Pattern::DriftGrating => "drift-grating",
            Pattern::BouncingSquare => "bouncing-square",
            Pattern::Noise => "noise",
            Pattern::Mixed => "mixed",
        }
    }
}

impl FromStr for Pattern {
    type Err = MtcError;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| MtcError::invalid(format!("unknown pattern '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub pattern: Pattern,
    /// Pixels per frame.
    pub speed: f64,
    /// Cycles per frame width.
    pub frequency: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    /// Amplitude of independent per-sample uniform noise added on top.
    pub grain: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            pattern: Pattern::DriftGrating,
            speed: 1.0,
            frequency: 2.0,
            seed: 0,
            height: 64,
            width: 64,
            channels: 3,
            frames: 34,
            grain: 0.0,
        }
    }
}

const TINT: [f64; 3] = [1.0, 0.95, 0.9];

fn tint(c: usize) -> f64 {
    TINT[c % TINT.len()]
}

/// Scene parameters drawn once per video.
struct Scene {
    angle: f64,
    phase: f64,
    /// Weight of the static background gradient.
    gradient: f64,
    square: f64,
    start: (f64, f64),
    heading: f64,
}

impl Scene {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        Scene {
            angle: rng.gen_range(0.0..2.0 * PI),
            phase: rng.gen_range(0.0..2.0 * PI),
            gradient: rng.gen_range(0.1..0.3),
            square: rng.gen_range(0.2..0.35),
            start: (rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)),
            heading: rng.gen_range(0.0..2.0 * PI),
        }
    }
}

fn grating(scene: &Scene, spec: &SynthSpec, offset: f64, y: usize, x: usize) -> f64 {
    let (s, c) = scene.angle.sin_cos();
    let u = x as f64 * c + y as f64 * s - offset;
    let g = 0.5 + 0.5 * (2.0 * PI * spec.frequency * u / spec.width as f64 + scene.phase).sin();
    let grad = (x + y) as f64 / (spec.width + spec.height) as f64;
    (1.0 - scene.gradient) * g + scene.gradient * grad
}

/// Position along a segment of length `span` reflecting at both ends.
fn reflect(p: f64, span: f64) -> f64 {
    if span <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * span;
    let m = p.rem_euclid(period);
    if m <= span {
        m
    } else {
        period - m
    }
}

/// Overlap of pixel `[i, i+1)` with `[a, a+len)`.
fn coverage(i: usize, a: f64, len: f64) -> f64 {
    let lo = (i as f64).max(a);
    let hi = (i as f64 + 1.0).min(a + len);
    (hi - lo).max(0.0)
}

pub fn generate(spec: &SynthSpec) -> Result<Vec<Frame>> {
    if spec.height == 0 || spec.width == 0 || spec.channels == 0 || spec.frames == 0 {
        return Err(MtcError::invalid(
            "synthetic video needs non-zero dims and frame count",
        ));
    }
    if !(spec.speed >= 0.0) || !spec.speed.is_finite() {
        return Err(MtcError::invalid(format!(
            "speed {} must be >= 0",
            spec.speed
        )));
    }
    if !(0.0..=1.0).contains(&spec.grain) {
        return Err(MtcError::invalid(format!(
            "grain {} must be in [0, 1]",
            spec.grain
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = Scene::draw(&mut rng);
    let (h, w) = (spec.height, spec.width);
    let side = scene.square * h.min(w) as f64;
    let (s, c) = scene.heading.sin_cos();
    let mut out = Vec::with_capacity(spec.frames);
    for t in 0..spec.frames {
        let base: Vec<f64> = match spec.pattern {
            Pattern::Static => vec![0.2 + 0.6 * scene.square / 0.35; h * w],
            Pattern::DriftGrating => {
                let off = spec.speed * t as f64;
                (0..h * w)
                    .map(|i| grating(&scene, spec, off, i / w, i % w))
                    .collect()
            }
            Pattern::Mixed => {
                let third = 3 * t / spec.frames;
                let speed = [0.0, spec.speed / 4.0, spec.speed][third];
                let off = speed * t as f64;
                (0..h * w)
                    .map(|i| grating(&scene, spec, off, i / w, i % w))
                    .collect()
            }
            Pattern::BouncingSquare => {
                let d = spec.speed * t as f64;
                let py = reflect(scene.start.0 * (h as f64 - side) + d * s, h as f64 - side);
                let px = reflect(scene.start.1 * (w as f64 - side) + d * c, w as f64 - side);
                (0..h * w)
                    .map(|i| {
                        let (y, x) = (i / w, i % w);
                        let bg = 0.2 + 0.3 * scene.gradient * (x + y) as f64 / (w + h) as f64;
                        let cov = coverage(y, py, side) * coverage(x, px, side);
                        bg * (1.0 - cov) + 0.95 * cov
                    })
                    .collect()
            }
            Pattern::Noise => (0..h * w).map(|_| rng.gen::<f64>()).collect(),
        };
        let mut data = Vec::with_capacity(h * w * spec.channels);
        for b in base {
            for ch in 0..spec.channels {
                let mut v = 0.1 + 0.8 * b * tint(ch);
                if spec.grain > 0.0 {
                    v += spec.grain * (rng.gen::<f64>() - 0.5);
                }
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
        out.push(Frame::new(h, w, spec.channels, data)?);
    }
    Ok(out)
}

/// One corpus entry with the spec that produced it.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub id: usize,
    pub spec: SynthSpec,
    pub frames: Vec<Frame>,
}

impl AsRef<[Frame]> for SynthVideo {
    fn as_ref(&self) -> &[Frame] {
        &self.frames
    }
}

/// Geometry shared by every video of a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorpusShape {
    pub videos: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for CorpusShape {
    fn default() -> Self {
        CorpusShape {
            videos: 64,
            frames: 34,
            height: 64,
            width: 64,
            channels: 3,
        }
    }
}

fn corpus_from(specs: Vec<SynthSpec>) -> Result<Vec<SynthVideo>> {
    crate::par::Exec::default()
        .try_map(&specs, generate)
        .map(|all| {
            all.into_iter()
                .zip(specs)
                .enumerate()
                .map(|(id, (frames, spec))| SynthVideo { id, spec, frames })
                .collect()
        })
}

/// Varied corpus: gratings and squares with speeds stratified log-uniformly
/// over the range where the best rate changes, plus a few static and noise
/// clips.
pub fn default_corpus(shape: CorpusShape, seed: u64) -> Result<Vec<SynthVideo>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<Pattern> = (0..shape.videos)
        .map(|i| match i % 32 {
            0 => Pattern::Static,
            16 => Pattern::Noise,
            k if k % 2 == 1 => Pattern::DriftGrating,
            _ => Pattern::BouncingSquare,
        })
        .collect();
    let count = |p: Pattern| patterns.iter().filter(|&&q| q == p).count().max(1);
    let strata = [count(Pattern::DriftGrating), count(Pattern::BouncingSquare)];
    let mut order: [Vec<usize>; 2] = [(0..strata[0]).collect(), (0..strata[1]).collect()];
    for o in order.iter_mut() {
        for i in (1..o.len()).rev() {
            o.swap(i, rng.gen_range(0..=i));
        }
    }
    let mut next = [0usize; 2];
    let specs = patterns
        .into_iter()
        .map(|pattern| {
            let mut stratified = |k: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng| {
                let u = (order[k][next[k]] as f64 + rng.gen::<f64>()) / strata[k] as f64;
                next[k] += 1;
                (lo.ln() + u * (hi / lo).ln()).exp()
            };
            let speed = match pattern {
                Pattern::DriftGrating => stratified(0, 0.35, 0.75, &mut rng),
                Pattern::BouncingSquare => stratified(1, 0.5, 1.6, &mut rng),
                _ => 0.0,
            };
            SynthSpec {
                pattern,
                speed,
                frequency: rng.gen_range(1.0..4.0),
                seed: rng.gen(),
                height: shape.height,
                width: shape.width,
                channels: shape.channels,
                frames: shape.frames,
                grain: 0.0,
            }
        })
        .collect();
    corpus_from(specs)
}

/// Mixed static/slow/fast clips; `shape.frames` is usually `3 · T`.
pub fn mixed_corpus(shape: CorpusShape, seed: u64) -> Result<Vec<SynthVideo>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specs = (0..shape.videos)
        .map(|_| SynthSpec {
            pattern: Pattern::Mixed,
            speed: rng.gen_range(1.5..3.0),
            frequency: rng.gen_range(1.5..4.0),
            seed: rng.gen(),
            height: shape.height,
            width: shape.width,
            channels: shape.channels,
            frames: shape.frames,
            grain: 0.0,
        })
        .collect();
    corpus_from(specs)
}
