//! Keyframe-marked latent streams.
//!
//! Segments encoded at different rates are concatenated into a single latent
//! sequence. A fixed marker vector `f_c` is added to one latent frame per
//! segment (the first or the last, depending on [`PositionPolicy`]) so that
//! a linear [`KeyframePredictor`] can find the boundaries again. From each
//! recovered latent run of length `ℓ` the rate follows as `(T-1)/(ℓ-1)`.
//!
//! `MTCS` file layout, integers little-endian:
//!
//! | bytes         | field                                  |
//! |---------------|----------------------------------------|
//! | 4             | magic `4D 54 43 53`                    |
//! | 2             | version (1)                            |
//! | 2, 2, 2       | latent height, width, channels         |
//! | 2             | segment length `T`                     |
//! | 4             | total latent frames                    |
//! | 4             | marker magnitude `β`, f32              |
//! | 1             | position policy (0 begin, 1 end, 2 none) |
//! | 1             | sidecar flag                           |
//! | ⌈frames/8⌉    | keyframe bitmap, LSB first (if flag)   |
//! | ...           | latent frames, row-major f32           |

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{decode_segment, CodecConfig};
use crate::error::{MtcError, Result};
use crate::metrics::weighted_bce_loss;
use crate::par::Exec;
use crate::tensor::{quantize_latent, Frame, LatentFrame, LatentSegment};

pub const STREAM_MAGIC: [u8; 4] = *b"MTCS";
pub const STREAM_VERSION: u16 = 1;
pub const STREAM_HEADER_LEN: usize = 24;

pub const DEFAULT_BETA: f32 = 0.5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_CONFIDENCE_FLOOR: f64 = 0.6;
/// Rate assumed for a first segment whose boundary cannot be trusted.
pub const FALLBACK_FIRST_RATE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionPolicy {
    Begin,
    End,
    None,
}

impl PositionPolicy {
    pub const ALL: [PositionPolicy; 3] = [
        PositionPolicy::Begin,
        PositionPolicy::End,
        PositionPolicy::None,
    ];

    pub fn code(self) -> u8 {
        match self {
            PositionPolicy::Begin => 0,
            PositionPolicy::End => 1,
            PositionPolicy::None => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PositionPolicy::Begin),
            1 => Some(PositionPolicy::End),
            2 => Some(PositionPolicy::None),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PositionPolicy::Begin => "begin",
            PositionPolicy::End => "end",
            PositionPolicy::None => "none",
        }
    }
}

impl FromStr for PositionPolicy {
    type Err = MtcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "begin" => Ok(PositionPolicy::Begin),
            "end" => Ok(PositionPolicy::End),
            "none" => Ok(PositionPolicy::None),
            _ => Err(MtcError::invalid(format!(
                "unknown embedding position '{s}'"
            ))),
        }
    }
}

/// Marker `f_c[k] = β · (-1)^k`, added per channel and broadcast over space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyframeEmbedding {
    pub beta: f32,
    pub policy: PositionPolicy,
}

impl Default for KeyframeEmbedding {
    fn default() -> Self {
        KeyframeEmbedding {
            beta: DEFAULT_BETA,
            policy: PositionPolicy::Begin,
        }
    }
}

impl KeyframeEmbedding {
    pub fn new(beta: f32, policy: PositionPolicy) -> Result<Self> {
        if !beta.is_finite() || beta.abs() > 8.0 {
            return Err(MtcError::invalid(format!(
                "marker magnitude {beta} must be in [-8, 8]"
            )));
        }
        // Keep β on the latent grid so add/subtract stays exact.
        Ok(KeyframeEmbedding {
            beta: quantize_latent(beta as f64),
            policy,
        })
    }

    pub fn vector(&self, channels: usize) -> Vec<f32> {
        (0..channels)
            .map(|k| if k % 2 == 0 { self.beta } else { -self.beta })
            .collect()
    }
}

/// Concatenated latent frames plus header metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentStream {
    height: usize,
    width: usize,
    channels: usize,
    segment_len: usize,
    embedding: KeyframeEmbedding,
    frames: Vec<LatentFrame>,
    /// Ground-truth segment starts (evaluation sidecar).
    keyframes: Option<Vec<bool>>,
}

impl LatentStream {
    pub fn new(
        segment_len: usize,
        embedding: KeyframeEmbedding,
        frames: Vec<LatentFrame>,
        keyframes: Option<Vec<bool>>,
    ) -> Result<Self> {
        let (height, width, channels) = frames
            .first()
            .ok_or_else(|| MtcError::invalid("stream has no latent frames"))?
            .dims();
        if frames.iter().any(|f| f.dims() != (height, width, channels)) {
            return Err(MtcError::dims("stream latent frames differ in dimensions"));
        }
        if let Some(k) = &keyframes {
            if k.len() != frames.len() {
                return Err(MtcError::dims(format!(
                    "keyframe bitmap has {} entries for {} frames",
                    k.len(),
                    frames.len()
                )));
            }
            if !k[0] {
                return Err(MtcError::invalid("frame 0 must be a keyframe"));
            }
        }
        Ok(LatentStream {
            height,
            width,
            channels,
            segment_len,
            embedding,
            frames,
            keyframes,
        })
    }

    pub fn frames(&self) -> &[LatentFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn latent_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn segment_len(&self) -> usize {
        self.segment_len
    }

    pub fn embedding(&self) -> KeyframeEmbedding {
        self.embedding
    }

    pub fn keyframes(&self) -> Option<&[bool]> {
        self.keyframes.as_deref()
    }

    pub fn without_sidecar(&self) -> Self {
        LatentStream {
            keyframes: None,
            ..self.clone()
        }
    }

    /// Mutable access for corruption experiments.
    pub fn frames_mut(&mut self) -> &mut [LatentFrame] {
        &mut self.frames
    }

    /// Frames that carry the marker, derived from the segment starts.
    pub fn marker_labels(&self) -> Result<Vec<bool>> {
        let starts = self
            .keyframes
            .as_ref()
            .ok_or_else(|| MtcError::invalid("stream carries no keyframe sidecar"))?;
        Ok(markers_from_starts(starts, self.embedding.policy))
    }
}

/// Marked frames implied by a segment-start mask. For `None` the predictor
/// still targets segment starts.
pub fn markers_from_starts(starts: &[bool], policy: PositionPolicy) -> Vec<bool> {
    match policy {
        PositionPolicy::Begin | PositionPolicy::None => starts.to_vec(),
        PositionPolicy::End => (0..starts.len())
            .map(|i| i + 1 == starts.len() || starts[i + 1])
            .collect(),
    }
}

fn starts_from_markers(marked: &[bool], policy: PositionPolicy) -> Vec<bool> {
    match policy {
        PositionPolicy::Begin | PositionPolicy::None => {
            let mut s = marked.to_vec();
            if let Some(first) = s.first_mut() {
                *first = true;
            }
            s
        }
        PositionPolicy::End => (0..marked.len()).map(|i| i == 0 || marked[i - 1]).collect(),
    }
}

/// Marks each segment and concatenates them into one stream.
pub fn assemble_stream(latents: &[LatentSegment], emb: KeyframeEmbedding) -> Result<LatentStream> {
    let first = latents
        .first()
        .ok_or_else(|| MtcError::invalid("no latent segments to assemble"))?;
    let dims = first.frame_dims();
    let seg_len = |z: &LatentSegment| 1 + (z.len() - 1) * z.rate() as usize;
    let t = seg_len(first);
    let f = emb.vector(dims.2);
    let mut frames = Vec::with_capacity(latents.iter().map(LatentSegment::len).sum());
    let mut keyframes = Vec::with_capacity(frames.capacity());
    for (i, z) in latents.iter().enumerate() {
        if z.frame_dims() != dims {
            return Err(MtcError::dims(format!(
                "segment {i} latents are {:?}, expected {dims:?}",
                z.frame_dims()
            )));
        }
        if seg_len(z) != t {
            return Err(MtcError::RateLength(format!(
                "segment {i} spans {} frames, expected {t}",
                seg_len(z)
            )));
        }
        let marked = match emb.policy {
            PositionPolicy::Begin => Some(0),
            PositionPolicy::End => Some(z.len() - 1),
            PositionPolicy::None => None,
        };
        for (j, lf) in z.frames().iter().enumerate() {
            let mut lf = lf.clone();
            if marked == Some(j) {
                lf.add_per_channel(&f);
            }
            frames.push(lf);
            keyframes.push(j == 0);
        }
    }
    LatentStream::new(t, emb, frames, Some(keyframes))
}

/// Per-channel spatial mean followed by per-channel spatial std.
pub fn latent_features(frame: &LatentFrame) -> Vec<f64> {
    let c = frame.channels();
    let n = (frame.height() * frame.width()) as f64;
    let mut sum = vec![0f64; c];
    let mut sq = vec![0f64; c];
    for px in frame.data().chunks_exact(c) {
        for (k, &v) in px.iter().enumerate() {
            sum[k] += v as f64;
            sq[k] += (v as f64) * (v as f64);
        }
    }
    let mut out: Vec<f64> = sum.iter().map(|s| s / n).collect();
    for k in 0..c {
        let mean = out[k];
        out.push((sq[k] / n - mean * mean).max(0.0).sqrt());
    }
    out
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Linear logistic classifier over pooled latent-frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframePredictor {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    pub confidence_floor: f64,
}

impl KeyframePredictor {
    /// Untrained predictor: every probability is 0.5.
    pub fn zeros(channels: usize) -> Self {
        KeyframePredictor {
            weights: vec![0.0; 2 * channels],
            bias: 0.0,
            threshold: DEFAULT_THRESHOLD,
            confidence_floor: DEFAULT_CONFIDENCE_FLOOR,
        }
    }

    pub fn channels(&self) -> usize {
        self.weights.len() / 2
    }

    fn prob_features(&self, phi: &[f64]) -> f64 {
        let z: f64 = self
            .weights
            .iter()
            .zip(phi)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias;
        sigmoid(z)
    }

    pub fn probability(&self, frame: &LatentFrame) -> f64 {
        self.prob_features(&latent_features(frame))
    }

    /// Raw per-frame marker probabilities.
    pub fn probabilities(&self, stream: &LatentStream) -> Result<Vec<f64>> {
        if stream.latent_dims().2 != self.channels() {
            return Err(MtcError::dims(format!(
                "predictor expects {} channels, stream has {}",
                self.channels(),
                stream.latent_dims().2
            )));
        }
        Ok(stream
            .frames()
            .iter()
            .map(|f| self.probability(f))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub lr: f64,
    pub steps: usize,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            lr: 2.0,
            steps: 3000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub predictor: KeyframePredictor,
    /// Class-weighted BCE after the last step.
    pub final_loss: f64,
}

/// Full-batch gradient descent on class-weighted BCE over every latent frame
/// of every stream. Positives are weighted by `negatives / positives`.
pub fn train_predictor(streams: &[LatentStream], opts: TrainOptions) -> Result<TrainOutcome> {
    let first = streams
        .first()
        .ok_or_else(|| MtcError::invalid("no training streams"))?;
    let channels = first.latent_dims().2;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for s in streams {
        if s.latent_dims().2 != channels {
            return Err(MtcError::dims("training streams differ in channel count"));
        }
        labels.extend(s.marker_labels()?);
        features.extend(s.frames().iter().map(latent_features));
    }
    let positives = labels.iter().filter(|&&y| y).count();
    if positives == 0 {
        return Err(MtcError::invalid("no positive keyframe labels"));
    }
    let negatives = labels.len() - positives;
    let pos_weight = if negatives == 0 {
        1.0
    } else {
        negatives as f64 / positives as f64
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pred = KeyframePredictor::zeros(channels);
    for w in pred.weights.iter_mut() {
        *w = rng.gen_range(-0.01..=0.01);
    }
    let n = labels.len() as f64;
    let dim = pred.weights.len();
    for _ in 0..opts.steps {
        let mut gw = vec![0f64; dim];
        let mut gb = 0f64;
        for (phi, &y) in features.iter().zip(&labels) {
            let p = pred.prob_features(phi);
            let scale = if y { pos_weight } else { 1.0 };
            let err = scale * (p - if y { 1.0 } else { 0.0 });
            for (g, x) in gw.iter_mut().zip(phi) {
                *g += err * x;
            }
            gb += err;
        }
        for (w, g) in pred.weights.iter_mut().zip(&gw) {
            *w -= opts.lr * g / n;
        }
        pred.bias -= opts.lr * gb / n;
    }
    let probs: Vec<f64> = features.iter().map(|phi| pred.prob_features(phi)).collect();
    let final_loss = weighted_bce_loss(&probs, &labels, pos_weight)?;
    Ok(TrainOutcome {
        predictor: pred,
        final_loss,
    })
}

/// Plain and balanced (mean of per-class recall) accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub accuracy: f64,
    pub balanced: f64,
}

pub fn accuracy(predicted: &[bool], labels: &[bool]) -> Accuracy {
    let (mut tp, mut tn, mut pos, mut neg) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in predicted.iter().zip(labels) {
        if y {
            pos += 1;
            tp += p as usize;
        } else {
            neg += 1;
            tn += (!p) as usize;
        }
    }
    let total = pos + neg;
    let recall = |hit: usize, n: usize| {
        if n == 0 {
            None
        } else {
            Some(hit as f64 / n as f64)
        }
    };
    let balanced = match (recall(tp, pos), recall(tn, neg)) {
        (Some(a), Some(b)) => 0.5 * (a + b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => 1.0,
    };
    Accuracy {
        accuracy: if total == 0 {
            1.0
        } else {
            (tp + tn) as f64 / total as f64
        },
        balanced,
    }
}

/// Raw marker decisions of `pred` against the streams' marker labels.
pub fn evaluate_predictor(pred: &KeyframePredictor, streams: &[LatentStream]) -> Result<Accuracy> {
    let mut predicted = Vec::new();
    let mut labels = Vec::new();
    for s in streams {
        labels.extend(s.marker_labels()?);
        predicted.extend(
            pred.probabilities(s)?
                .into_iter()
                .map(|p| p > pred.threshold),
        );
    }
    Ok(accuracy(&predicted, &labels))
}

/// Keyframe detection aligned to segment starts.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyframeDetection {
    /// Raw marker probability per latent frame.
    pub probabilities: Vec<f64>,
    /// Segment-start mask; index 0 is always set.
    pub starts: Vec<bool>,
    /// Probability backing each start (1.0 for the forced first frame).
    pub confidence: Vec<f64>,
}

pub fn predict_keyframes(
    stream: &LatentStream,
    pred: &KeyframePredictor,
) -> Result<KeyframeDetection> {
    let probabilities = pred.probabilities(stream)?;
    let marked: Vec<bool> = probabilities.iter().map(|&p| p > pred.threshold).collect();
    let policy = stream.embedding().policy;
    let starts = starts_from_markers(&marked, policy);
    let confidence = (0..probabilities.len())
        .map(|i| match (i, policy) {
            (0, _) => 1.0,
            (_, PositionPolicy::End) => probabilities[i - 1],
            _ => probabilities[i],
        })
        .collect();
    Ok(KeyframeDetection {
        probabilities,
        starts,
        confidence,
    })
}

/// Latent segments recovered from a stream.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub segments: Vec<LatentSegment>,
    pub rates: Vec<u32>,
    /// Whether each segment came out of the fallback path.
    pub fallback: Vec<bool>,
}

/// Splits `frames` at `starts`, inverting each run length to a rate.
///
/// A run whose length matches no analysis rate, or whose boundary confidence
/// is below `confidence_floor`, adopts the previous segment's rate (the first
/// run defaults to rate 4) and is re-split into valid lengths, preferring the
/// adopted rate. Runs that cannot be tiled exactly are padded by repeating
/// their last latent frame.
pub fn split_and_recover(
    frames: &[LatentFrame],
    starts: &[bool],
    confidence: &[f64],
    confidence_floor: f64,
    cfg: &CodecConfig,
) -> Result<Recovered> {
    if frames.is_empty() {
        return Err(MtcError::invalid("no latent frames to split"));
    }
    if starts.len() != frames.len() || confidence.len() != frames.len() {
        return Err(MtcError::dims(
            "mask/confidence length differs from frame count",
        ));
    }
    let t = cfg.segment_len;
    let mut valid: Vec<(usize, u32)> = cfg
        .valid_latent_lens()
        .into_iter()
        .filter(|&(l, _)| l >= 2)
        .collect();
    valid.sort_by_key(|v| std::cmp::Reverse(v.0));
    if valid.is_empty() {
        return Err(MtcError::invalid(
            "no analysis rate yields a valid latent length",
        ));
    }
    let rate_of_len = |l: usize| valid.iter().find(|v| v.0 == l).map(|v| v.1);
    let len_of_rate = |r: u32| 1 + (t - 1) / r as usize;

    let mut bounds: Vec<usize> = (0..frames.len()).filter(|&i| i == 0 || starts[i]).collect();
    bounds.push(frames.len());

    let max_len = frames.len() + valid[0].0;
    let mut reachable = vec![false; max_len + 1];
    reachable[0] = true;
    for n in 1..=max_len {
        reachable[n] = valid.iter().any(|&(l, _)| l <= n && reachable[n - l]);
    }

    let mut out = Recovered {
        segments: Vec::new(),
        rates: Vec::new(),
        fallback: Vec::new(),
    };
    let mut prev_rate: Option<u32> = None;
    for run in bounds.windows(2) {
        let (s, e) = (run[0], run[1]);
        let run_len = e - s;
        let conf = if s == 0 { 1.0 } else { confidence[s] };
        if conf >= confidence_floor {
            if let Some(rate) = rate_of_len(run_len) {
                out.segments
                    .push(LatentSegment::new(frames[s..e].to_vec(), rate)?);
                out.rates.push(rate);
                out.fallback.push(false);
                prev_rate = Some(rate);
                continue;
            }
        }
        let adopted = prev_rate.unwrap_or(FALLBACK_FIRST_RATE);
        let preferred = len_of_rate(adopted);
        let mut pos = s;
        while pos < e {
            let rem = e - pos;
            let pick = std::iter::once(preferred)
                .chain(valid.iter().map(|v| v.0))
                .filter(|&l| rate_of_len(l).is_some())
                .find(|&l| l <= rem && reachable[rem - l]);
            let (take, len) = match pick {
                Some(l) => (l, l),
                None => {
                    let padded = if preferred >= rem && rate_of_len(preferred).is_some() {
                        Some(preferred)
                    } else {
                        valid.iter().rev().map(|v| v.0).find(|&l| l >= rem)
                    };
                    match padded {
                        Some(l) => (rem, l),
                        None => {
                            let l = valid.iter().map(|v| v.0).find(|&l| l <= rem).unwrap();
                            (l, l)
                        }
                    }
                }
            };
            let mut chunk = frames[pos..pos + take].to_vec();
            while chunk.len() < len {
                chunk.push(chunk.last().unwrap().clone());
            }
            let rate = rate_of_len(len).expect("chunk length is valid");
            out.segments.push(LatentSegment::new(chunk, rate)?);
            out.rates.push(rate);
            out.fallback.push(true);
            pos += take;
        }
        prev_rate = Some(adopted);
    }
    Ok(out)
}

/// Decoded video plus the segmentation that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStream {
    pub frames: Vec<Frame>,
    pub rates: Vec<u32>,
    pub fallback: Vec<bool>,
}

impl DecodedStream {
    pub fn used_fallback(&self) -> bool {
        self.fallback.iter().any(|&f| f)
    }
}

/// Predicts keyframes, removes the markers, splits, and decodes every segment.
pub fn decode_stream(
    stream: &LatentStream,
    pred: &KeyframePredictor,
    cfg: &CodecConfig,
) -> Result<DecodedStream> {
    let det = predict_keyframes(stream, pred)?;
    decode_with_mask(
        stream,
        &det.starts,
        &det.confidence,
        pred.confidence_floor,
        cfg,
    )
}

/// Decoding for a given segment-start mask; total for any mask.
pub fn decode_with_mask(
    stream: &LatentStream,
    starts: &[bool],
    confidence: &[f64],
    confidence_floor: f64,
    cfg: &CodecConfig,
) -> Result<DecodedStream> {
    if starts.len() != stream.len() {
        return Err(MtcError::dims(
            "start mask length differs from stream length",
        ));
    }
    let mut starts = starts.to_vec();
    starts[0] = true;
    let emb = stream.embedding();
    let f = emb.vector(stream.latent_dims().2);
    let mut frames = stream.frames().to_vec();
    if emb.policy != PositionPolicy::None {
        for (lf, m) in frames
            .iter_mut()
            .zip(markers_from_starts(&starts, emb.policy))
        {
            if m {
                lf.sub_per_channel(&f);
            }
        }
    }
    let mut dcfg = cfg.clone();
    dcfg.segment_len = stream.segment_len();
    let rec = split_and_recover(&frames, &starts, confidence, confidence_floor, &dcfg)?;
    let decoded = Exec::default().try_map(&rec.segments, |z| decode_segment(z, z.rate(), &dcfg))?;
    Ok(DecodedStream {
        frames: decoded.into_iter().flat_map(|s| s.into_frames()).collect(),
        rates: rec.rates,
        fallback: rec.fallback,
    })
}

fn u16_field(v: usize, what: &str) -> Result<[u8; 2]> {
    u16::try_from(v)
        .map(u16::to_le_bytes)
        .map_err(|_| MtcError::invalid(format!("{what} {v} exceeds u16")))
}

pub fn serialize(stream: &LatentStream) -> Result<Vec<u8>> {
    let (h, w, c) = stream.latent_dims();
    let total =
        u32::try_from(stream.len()).map_err(|_| MtcError::invalid("too many latent frames"))?;
    let mut out = Vec::with_capacity(STREAM_HEADER_LEN + stream.len() * (h * w * c * 4 + 1));
    out.extend_from_slice(&STREAM_MAGIC);
    out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
    out.extend_from_slice(&u16_field(h, "latent height")?);
    out.extend_from_slice(&u16_field(w, "latent width")?);
    out.extend_from_slice(&u16_field(c, "latent channels")?);
    out.extend_from_slice(&u16_field(stream.segment_len(), "segment length")?);
    out.extend_from_slice(&total.to_le_bytes());
    out.extend_from_slice(&stream.embedding().beta.to_le_bytes());
    out.push(stream.embedding().policy.code());
    match stream.keyframes() {
        Some(bits) => {
            out.push(1);
            let mut packed = vec![0u8; bits.len().div_ceil(8)];
            for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
                packed[i / 8] |= 1 << (i % 8);
            }
            out.extend_from_slice(&packed);
        }
        None => out.push(0),
    }
    for f in stream.frames() {
        for v in f.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn deserialize(bytes: &[u8]) -> Result<LatentStream> {
    if bytes.len() < 4 || bytes[..4] != STREAM_MAGIC {
        return Err(MtcError::parse(0, "bad magic"));
    }
    if bytes.len() < STREAM_HEADER_LEN {
        return Err(MtcError::Truncated {
            expected: STREAM_HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let version = u16_at(4);
    if version != STREAM_VERSION as usize {
        return Err(MtcError::parse(4, format!("unsupported version {version}")));
    }
    let (h, w, c, t) = (u16_at(6), u16_at(8), u16_at(10), u16_at(12));
    if h == 0 || w == 0 || c == 0 {
        return Err(MtcError::parse(6, "zero latent dimension"));
    }
    let total = u32::from_le_bytes(bytes[14..18].try_into().unwrap()) as usize;
    if total == 0 {
        return Err(MtcError::parse(14, "stream declares zero latent frames"));
    }
    let beta = f32::from_le_bytes(bytes[18..22].try_into().unwrap());
    let policy = PositionPolicy::from_code(bytes[22])
        .ok_or_else(|| MtcError::parse(22, format!("unknown position policy {}", bytes[22])))?;
    let has_sidecar = match bytes[23] {
        0 => false,
        1 => true,
        other => return Err(MtcError::parse(23, format!("bad sidecar flag {other}"))),
    };
    let bitmap_len = if has_sidecar { total.div_ceil(8) } else { 0 };
    let frame_bytes = h * w * c * 4;
    let expected = STREAM_HEADER_LEN + bitmap_len + total * frame_bytes;
    if bytes.len() < expected {
        return Err(MtcError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(MtcError::parse(
            expected,
            format!("{} trailing bytes", bytes.len() - expected),
        ));
    }
    let keyframes = has_sidecar.then(|| {
        let packed = &bytes[STREAM_HEADER_LEN..STREAM_HEADER_LEN + bitmap_len];
        (0..total)
            .map(|i| packed[i / 8] >> (i % 8) & 1 == 1)
            .collect::<Vec<_>>()
    });
    let body = STREAM_HEADER_LEN + bitmap_len;
    let mut frames = Vec::with_capacity(total);
    for (i, chunk) in bytes[body..].chunks_exact(frame_bytes).enumerate() {
        let data = chunk
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        frames.push(
            LatentFrame::new(h, w, c, data)
                .map_err(|e| MtcError::parse(body + i * frame_bytes, e.to_string()))?,
        );
    }
    let embedding = KeyframeEmbedding { beta, policy };
    LatentStream::new(t, embedding, frames, keyframes)
        .map_err(|e| MtcError::parse(STREAM_HEADER_LEN, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::encode_segment;
    use crate::tensor::VideoSegment;
    use proptest::prelude::*;
    use rand::Rng;

    fn latent(h: usize, w: usize, c: usize, v: f32) -> LatentFrame {
        LatentFrame::new(h, w, c, vec![quantize_latent(v as f64); h * w * c]).unwrap()
    }

    fn segment_of(rate: u32, base: f32) -> LatentSegment {
        let l = 1 + 16 / rate as usize;
        LatentSegment::new(
            (0..l)
                .map(|k| latent(2, 2, 3, base + k as f32 * 0.01))
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn begin_marks_first_latent_only() {
        let z = segment_of(4, 0.2);
        let s = assemble_stream(std::slice::from_ref(&z), KeyframeEmbedding::default()).unwrap();
        let f0 = &s.frames()[0];
        assert_eq!(f0.get(0, 0, 0), z.frames()[0].get(0, 0, 0) + 0.5);
        assert_eq!(f0.get(1, 1, 1), z.frames()[0].get(1, 1, 1) - 0.5);
        assert_eq!(f0.get(1, 0, 2), z.frames()[0].get(1, 0, 2) + 0.5);
        assert_eq!(&s.frames()[1..], &z.frames()[1..]);
    }

    #[test]
    fn none_policy_is_plain_concatenation() {
        let (a, b) = (segment_of(4, 0.2), segment_of(16, 0.6));
        let emb = KeyframeEmbedding::new(0.5, PositionPolicy::None).unwrap();
        let s = assemble_stream(&[a.clone(), b.clone()], emb).unwrap();
        let plain: Vec<LatentFrame> = a.frames().iter().chain(b.frames()).cloned().collect();
        assert_eq!(s.frames(), plain.as_slice());
    }

    #[test]
    fn bitmap_for_lengths_five_and_two() {
        let s = assemble_stream(
            &[segment_of(4, 0.1), segment_of(16, 0.1)],
            KeyframeEmbedding::default(),
        )
        .unwrap();
        let bits: String = s
            .keyframes()
            .unwrap()
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect();
        assert_eq!(bits, "1000010");
    }

    #[test]
    fn mismatched_segments_rejected() {
        let a = segment_of(4, 0.1);
        let b = LatentSegment::new(vec![latent(3, 2, 3, 0.1); 5], 4).unwrap();
        assert!(assemble_stream(&[a, b], KeyframeEmbedding::default()).is_err());
    }

    #[test]
    fn end_policy_markers() {
        assert_eq!(
            markers_from_starts(&[true, false, false, true, false], PositionPolicy::End),
            vec![false, false, true, false, true]
        );
        assert_eq!(
            starts_from_markers(&[false, false, true, false, true], PositionPolicy::End),
            vec![true, false, false, true, false]
        );
    }

    #[test]
    fn zero_predictor_marks_only_first() {
        let s = assemble_stream(
            &[segment_of(8, 0.3), segment_of(8, 0.4)],
            KeyframeEmbedding::default(),
        )
        .unwrap();
        let det = predict_keyframes(&s, &KeyframePredictor::zeros(3)).unwrap();
        assert!(det.probabilities.iter().all(|&p| p == 0.5));
        assert_eq!(det.starts.iter().filter(|&&b| b).count(), 1);
        assert!(det.starts[0]);
    }

    #[test]
    fn single_segment_stream_has_one_start() {
        let s = assemble_stream(&[segment_of(4, 0.3)], KeyframeEmbedding::default()).unwrap();
        let trained = train_predictor(std::slice::from_ref(&s), TrainOptions::default()).unwrap();
        let det = predict_keyframes(&s, &trained.predictor).unwrap();
        assert_eq!(det.starts, vec![true, false, false, false, false]);
    }

    #[test]
    fn zero_learning_rate_keeps_init() {
        let s = assemble_stream(&[segment_of(4, 0.3)], KeyframeEmbedding::default()).unwrap();
        let opts = TrainOptions {
            lr: 0.0,
            steps: 50,
            seed: 3,
        };
        let a = train_predictor(std::slice::from_ref(&s), opts).unwrap();
        let b = train_predictor(&[s], TrainOptions { steps: 0, ..opts }).unwrap();
        assert_eq!(a.predictor, b.predictor);
        assert!(a.predictor.weights.iter().all(|w| w.abs() <= 0.01));
        assert_eq!(a.predictor.bias, 0.0);
    }

    #[test]
    fn no_positive_labels_is_an_error() {
        let s = LatentStream::new(
            17,
            KeyframeEmbedding::default(),
            vec![latent(1, 1, 3, 0.1); 3],
            None,
        )
        .unwrap();
        assert!(train_predictor(&[s], TrainOptions::default()).is_err());
    }

    #[test]
    fn recovers_rates_from_lengths() {
        let cfg = CodecConfig::default();
        let frames = vec![latent(1, 1, 3, 0.1); 10];
        let mut starts = vec![false; 10];
        for i in [0, 5, 8] {
            starts[i] = true;
        }
        let r = split_and_recover(&frames, &starts, &[0.99; 10], 0.6, &cfg).unwrap();
        assert_eq!(r.rates, vec![4, 8, 16]);
        assert!(r.fallback.iter().all(|&f| !f));
    }

    #[test]
    fn invalid_run_adopts_previous_rate() {
        let cfg = CodecConfig::default();
        // Runs: 3 (rate 8), then 6 (invalid): falls back to rate 8 twice.
        let frames = vec![latent(1, 1, 3, 0.1); 9];
        let mut starts = vec![false; 9];
        starts[0] = true;
        starts[3] = true;
        let r = split_and_recover(&frames, &starts, &[0.99; 9], 0.6, &cfg).unwrap();
        assert_eq!(r.rates, vec![8, 8, 8]);
        assert_eq!(r.fallback, vec![false, true, true]);

        // Run of 4 after a rate-8 segment: adopts 8 (3 frames) then one
        // padded chunk.
        let frames = vec![latent(1, 1, 3, 0.1); 7];
        let mut starts = vec![false; 7];
        starts[0] = true;
        starts[3] = true;
        let r = split_and_recover(&frames, &starts, &[0.99; 7], 0.6, &cfg).unwrap();
        assert_eq!(r.rates[..2], [8, 16]);
        assert_eq!(r.segments.iter().map(LatentSegment::len).sum::<usize>(), 7);
    }

    #[test]
    fn low_confidence_boundary_falls_back() {
        let cfg = CodecConfig::default();
        let frames = vec![latent(1, 1, 3, 0.1); 8];
        let mut starts = vec![false; 8];
        starts[0] = true;
        starts[3] = true;
        let mut conf = vec![0.99; 8];
        conf[3] = 0.55;
        let r = split_and_recover(&frames, &starts, &conf, 0.6, &cfg).unwrap();
        // Second run (5 frames) adopts rate 8: 3 + 2.
        assert_eq!(r.rates, vec![8, 8, 16]);
    }

    #[test]
    fn single_confident_segment() {
        let cfg = CodecConfig::default();
        let frames = vec![latent(1, 1, 3, 0.1); 5];
        let mut starts = vec![false; 5];
        starts[0] = true;
        let r = split_and_recover(&frames, &starts, &[0.99; 5], 0.6, &cfg).unwrap();
        assert_eq!(r.rates, vec![4]);
    }

    #[test]
    fn one_frame_stream_is_padded() {
        let cfg = CodecConfig::default();
        let frames = vec![latent(1, 1, 3, 0.1)];
        let r = split_and_recover(&frames, &[true], &[1.0], 0.6, &cfg).unwrap();
        assert_eq!(r.rates, vec![4]);
        assert_eq!(r.segments[0].len(), 5);
    }

    #[test]
    fn first_byte_corruption() {
        let s = assemble_stream(&[segment_of(4, 0.2)], KeyframeEmbedding::default()).unwrap();
        let mut bytes = serialize(&s).unwrap();
        bytes[0] ^= 0xFF;
        let err = deserialize(&bytes).unwrap_err();
        assert_eq!(err.to_string(), "bad magic at offset 0");
    }

    #[test]
    fn truncated_payload_reports_lengths() {
        let s = assemble_stream(
            &[segment_of(4, 0.2), segment_of(8, 0.3)],
            KeyframeEmbedding::default(),
        )
        .unwrap();
        let bytes = serialize(&s).unwrap();
        // header + 1 bitmap byte + 8 frames of 2x2x3 f32
        let expected = STREAM_HEADER_LEN + 1 + 8 * 12 * 4;
        assert_eq!(bytes.len(), expected);
        let err = deserialize(&bytes[..expected - 5]).unwrap_err();
        match err {
            MtcError::Truncated {
                expected: e,
                actual,
            } => {
                assert_eq!(e, expected);
                assert_eq!(actual, expected - 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn header_fields_are_bit_exact() {
        let s = assemble_stream(&[segment_of(16, 0.2)], KeyframeEmbedding::default()).unwrap();
        let b = serialize(&s).unwrap();
        assert_eq!(&b[..4], &[0x4D, 0x54, 0x43, 0x53]);
        assert_eq!(&b[4..6], &[1, 0]);
        assert_eq!(&b[6..12], &[2, 0, 2, 0, 3, 0]);
        assert_eq!(&b[12..14], &[17, 0]);
        assert_eq!(&b[14..18], &[2, 0, 0, 0]);
        assert_eq!(&b[18..22], &0.5f32.to_le_bytes());
        assert_eq!(b[22], 0);
        assert_eq!(b[23], 1);
        assert_eq!(b[24], 0b01);
    }

    #[test]
    fn version_and_policy_guards() {
        let s = assemble_stream(&[segment_of(16, 0.2)], KeyframeEmbedding::default()).unwrap();
        let good = serialize(&s).unwrap();
        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(
            deserialize(&b),
            Err(MtcError::Parse { offset: 4, .. })
        ));
        let mut b = good.clone();
        b[22] = 9;
        assert!(matches!(
            deserialize(&b),
            Err(MtcError::Parse { offset: 22, .. })
        ));
        let mut b = good;
        b.push(0);
        assert!(deserialize(&b).is_err());
    }

    #[test]
    fn marker_subtraction_restores_latents() {
        let seg = VideoSegment::new(
            (0..17)
                .map(|j| {
                    Frame::from_fn(16, 16, 3, |y, x, c| {
                        ((y * 7 + x * 3 + c + j) % 11) as f32 / 10.3
                    })
                    .unwrap()
                })
                .collect(),
        )
        .unwrap();
        let cfg = CodecConfig::default();
        let z = encode_segment(&seg, 4, &cfg).unwrap();
        let s = assemble_stream(std::slice::from_ref(&z), KeyframeEmbedding::default()).unwrap();
        let mut f0 = s.frames()[0].clone();
        f0.sub_per_channel(&KeyframeEmbedding::default().vector(3));
        assert_eq!(f0, z.frames()[0]);
    }

    fn arb_stream() -> impl Strategy<Value = LatentStream> {
        (
            prop::collection::vec(prop::sample::select(vec![2u32, 4, 8, 16]), 1..5),
            0u8..3,
            any::<bool>(),
            0u64..1000,
        )
            .prop_map(|(rates, policy, sidecar, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let segs: Vec<LatentSegment> = rates
                    .iter()
                    .map(|&r| {
                        let l = 1 + 16 / r as usize;
                        let frames = (0..l)
                            .map(|_| {
                                let data =
                                    (0..12).map(|_| quantize_latent(rng.gen::<f64>())).collect();
                                LatentFrame::new(2, 2, 3, data).unwrap()
                            })
                            .collect();
                        LatentSegment::new(frames, r).unwrap()
                    })
                    .collect();
                let emb = KeyframeEmbedding::new(0.5, PositionPolicy::from_code(policy).unwrap())
                    .unwrap();
                let s = assemble_stream(&segs, emb).unwrap();
                if sidecar {
                    s
                } else {
                    s.without_sidecar()
                }
            })
    }

    proptest! {
        #[test]
        fn serialization_round_trip(s in arb_stream()) {
            let bytes = serialize(&s).unwrap();
            let back = deserialize(&bytes).unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(serialize(&back).unwrap(), bytes);
        }

        #[test]
        fn any_mask_decodes(s in arb_stream(), bits in prop::collection::vec(any::<bool>(), 40), conf in prop::collection::vec(0.0f64..1.0, 40)) {
            let n = s.len();
            let cfg = CodecConfig { spatial_factor: 1, ..CodecConfig::default() };
            let out = decode_with_mask(&s, &bits[..n], &conf[..n], 0.6, &cfg).unwrap();
            prop_assert_eq!(out.frames.len(), out.rates.len() * 17);
            prop_assert!(!out.rates.is_empty());
        }
    }
}
