//! Per-video plan, encode, stream, decode and score.

use std::io::Write;
use std::time::Instant;

use crate::codec::{encode_segment, reconstruct_at_rate, CodecConfig};
use crate::error::{MtcError, Result};
use crate::metrics::{
    compressibility_segment, flow_loss_frames, mean_flow_magnitude, psnr, psnr_frames, ssim_frames,
    vcpr_rates, FlowLoss,
};
use crate::par::Exec;
use crate::planner::{
    build_quality_matrix, plan_by_compressibility, plan_with_rates, CompressibilityTerciles,
    CompressionPlan, QualityFunctionKind, QualityMatrix,
};
use crate::stream::{
    assemble_stream, decode_stream, evaluate_predictor, train_predictor, Accuracy,
    KeyframeEmbedding, KeyframePredictor, LatentStream, TrainOptions,
};
use crate::tensor::{segment_video, Frame, SegmentedVideo};

/// Content statistics of one video that do not depend on the plan.
#[derive(Debug, Clone)]
pub struct VideoAnalysis {
    pub id: usize,
    pub video: SegmentedVideo,
    /// PSNR of every segment reconstructed at every analysis rate.
    pub psnr: QualityMatrix,
    pub compressibility: Vec<f64>,
    pub flow_magnitude: Vec<f64>,
}

pub fn analyze_corpus<V: AsRef<[Frame]> + Sync>(
    corpus: &[V],
    cfg: &CodecConfig,
    exec: Exec,
) -> Result<Vec<VideoAnalysis>> {
    if corpus.is_empty() {
        return Err(MtcError::invalid("empty corpus"));
    }
    cfg.validate()?;
    let ids: Vec<usize> = (0..corpus.len()).collect();
    exec.try_map(&ids, |&id| {
        let video = segment_video(corpus[id].as_ref(), cfg.segment_len)?;
        let (h, w, _) = video.frame_dims();
        cfg.check_frame_dims(h, w)?;
        let rates = &cfg.analysis_rates;
        let mut rows = Vec::with_capacity(video.len());
        let mut compressibility = Vec::with_capacity(video.len());
        let mut flow_magnitude = Vec::with_capacity(video.len());
        for seg in video.segments() {
            rows.push(
                rates
                    .iter()
                    .map(|&r| psnr(seg, &reconstruct_at_rate(seg, r, cfg)?))
                    .collect::<Result<Vec<_>>>()?,
            );
            compressibility.push(compressibility_segment(seg));
            flow_magnitude.push(mean_flow_magnitude(seg.frames())?);
        }
        Ok(VideoAnalysis {
            id,
            psnr: QualityMatrix::from_rows(rates.clone(), &rows)?,
            video,
            compressibility,
            flow_magnitude,
        })
    })
}

fn random_seed(base: u64, run_seed: u64, id: usize) -> u64 {
    base ^ run_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (id as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Chooses rates for every analysed video.
pub fn plan_corpus(
    analysis: &[VideoAnalysis],
    kind: QualityFunctionKind,
    w: f64,
    cfg: &CodecConfig,
    seed: u64,
) -> Result<Vec<CompressionPlan>> {
    match kind {
        QualityFunctionKind::Psnr => analysis
            .iter()
            .map(|a| plan_with_rates(&a.psnr, w, &cfg.planner_rates))
            .collect(),
        QualityFunctionKind::Random { seed: base } => analysis
            .iter()
            .map(|a| {
                let kind = QualityFunctionKind::Random {
                    seed: random_seed(base, seed, a.id),
                };
                let q = build_quality_matrix(&a.video, &cfg.planner_rates, kind, cfg)?;
                plan_with_rates(&q, w, &cfg.planner_rates)
            })
            .collect(),
        QualityFunctionKind::Compressibility => {
            let all: Vec<f64> = analysis
                .iter()
                .flat_map(|a| a.compressibility.iter().copied())
                .collect();
            let terciles = CompressibilityTerciles::from_values(&all)?;
            analysis
                .iter()
                .map(|a| {
                    let rows: Vec<Vec<f64>> = a
                        .compressibility
                        .iter()
                        .map(|&b| vec![-b; cfg.planner_rates.len()])
                        .collect();
                    let q = QualityMatrix::from_rows(cfg.planner_rates.clone(), &rows)?;
                    plan_by_compressibility(&q, &terciles, w)
                })
                .collect()
        }
    }
}

pub fn encode_plan(
    video: &SegmentedVideo,
    plan: &CompressionPlan,
    emb: KeyframeEmbedding,
    cfg: &CodecConfig,
) -> Result<LatentStream> {
    if plan.rates.len() != video.len() {
        return Err(MtcError::dims(format!(
            "plan has {} rates for {} segments",
            plan.rates.len(),
            video.len()
        )));
    }
    let latents = video
        .segments()
        .iter()
        .zip(&plan.rates)
        .map(|(x, &r)| encode_segment(x, r, cfg))
        .collect::<Result<Vec<_>>>()?;
    assemble_stream(&latents, emb)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub video: usize,
    pub segment: usize,
    pub rate: u32,
    pub recovered_rate: Option<u32>,
    /// Reconstruction PSNR at each analysis rate.
    pub rate_psnr: Vec<f64>,
    /// PSNR of the decoded segment.
    pub psnr: f64,
    pub ssim: f64,
    pub flow_magnitude: f64,
    pub compressibility: f64,
    pub alpha: f64,
    pub vcpr: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSummary {
    pub video: usize,
    pub rates: Vec<u32>,
    pub recovered: Vec<u32>,
    pub vcpr: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub flow: FlowLoss,
    pub decoded_frames: usize,
    pub fallback: bool,
    pub wall_ms: f64,
}

impl VideoSummary {
    pub fn boundaries_recovered(&self) -> bool {
        self.rates == self.recovered
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub quality: &'static str,
    pub w: f64,
    pub analysis_rates: Vec<u32>,
    pub rows: Vec<BenchRow>,
    pub videos: Vec<VideoSummary>,
    /// Raw marker decisions of the trained predictor on the bench streams.
    pub keyframe_accuracy: Accuracy,
    pub predictor: KeyframePredictor,
    pub wall_s: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl BenchReport {
    /// Pooled over every segment of the corpus: total pixel samples over
    /// total latent samples.
    pub fn corpus_vcpr(&self, spatial_factor: usize) -> Result<f64> {
        let rates: Vec<u32> = self
            .videos
            .iter()
            .flat_map(|v| v.rates.iter().copied())
            .collect();
        vcpr_rates(&rates, spatial_factor)
    }

    /// Mean of the per-video figures.
    pub fn mean_vcpr(&self) -> f64 {
        mean(self.videos.iter().map(|v| v.vcpr))
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.videos.iter().map(|v| v.psnr))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.videos.iter().map(|v| v.ssim))
    }

    pub fn mean_flow_loss(&self) -> f64 {
        mean(self.videos.iter().map(|v| v.flow.total))
    }

    pub fn boundary_errors(&self) -> usize {
        self.videos
            .iter()
            .filter(|v| !v.boundaries_recovered())
            .count()
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["video", "segment", "rate", "recovered_rate"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.analysis_rates.iter().map(|r| format!("psnr_r{r}")));
        h.extend(
            [
                "psnr",
                "ssim",
                "flow_magnitude",
                "compressibility",
                "alpha",
                "vcpr",
                "wall_ms",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(self.header())?;
        for r in &self.rows {
            let mut rec = vec![
                r.video.to_string(),
                r.segment.to_string(),
                r.rate.to_string(),
                r.recovered_rate.map(|c| c.to_string()).unwrap_or_default(),
            ];
            rec.extend(r.rate_psnr.iter().map(|v| fmt(*v)));
            rec.extend(
                [
                    r.psnr,
                    r.ssim,
                    r.flow_magnitude,
                    r.compressibility,
                    r.alpha,
                    r.vcpr,
                    r.wall_ms,
                ]
                .map(fmt),
            );
            wtr.write_record(rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Trains on every stream; the bench measures the round trip, not
/// generalisation.
pub fn run_bench<V: AsRef<[Frame]> + Sync>(
    corpus: &[V],
    w: f64,
    kind: QualityFunctionKind,
    cfg: &CodecConfig,
    emb: KeyframeEmbedding,
    train: TrainOptions,
) -> Result<BenchReport> {
    let analysis = analyze_corpus(corpus, cfg, Exec::default())?;
    bench_analysis(&analysis, w, kind, cfg, emb, train, true)
}

pub fn bench_analysis(
    analysis: &[VideoAnalysis],
    w: f64,
    kind: QualityFunctionKind,
    cfg: &CodecConfig,
    emb: KeyframeEmbedding,
    train: TrainOptions,
    timing: bool,
) -> Result<BenchReport> {
    if analysis.is_empty() {
        return Err(MtcError::invalid("empty corpus"));
    }
    let start = Instant::now();
    let plans = plan_corpus(analysis, kind, w, cfg, train.seed)?;
    let exec = Exec::default();
    let ids: Vec<usize> = (0..analysis.len()).collect();
    let encoded = exec.try_map(&ids, |&i| {
        let t = Instant::now();
        let s = encode_plan(&analysis[i].video, &plans[i], emb, cfg)?;
        Ok::<_, MtcError>((s, t.elapsed().as_secs_f64()))
    })?;
    let streams: Vec<LatentStream> = encoded.iter().map(|(s, _)| s.clone()).collect();
    let trained = train_predictor(&streams, train)?;
    let keyframe_accuracy = evaluate_predictor(&trained.predictor, &streams)?;
    let pred = &trained.predictor;

    let results = exec.try_map(&ids, |&i| {
        let a = &analysis[i];
        let t = Instant::now();
        let decoded = decode_stream(&streams[i], pred, cfg)?;
        let wall = encoded[i].1 + t.elapsed().as_secs_f64();
        let original: Vec<Frame> = a.video.frames().cloned().collect();
        let n = original.len().min(decoded.frames.len());
        let vcpr = vcpr_rates(&plans[i].rates, cfg.spatial_factor)?;
        let seg_t = cfg.segment_len;
        let mut rows = Vec::with_capacity(a.video.len());
        for (j, seg) in a.video.segments().iter().enumerate() {
            let (p, s) = match decoded.frames.get(j * seg_t..(j + 1) * seg_t) {
                Some(d) => (psnr_frames(seg.frames(), d)?, ssim_frames(seg.frames(), d)?),
                None => (f64::NAN, f64::NAN),
            };
            rows.push(BenchRow {
                video: a.id,
                segment: j,
                rate: plans[i].rates[j],
                recovered_rate: decoded.rates.get(j).copied(),
                rate_psnr: a.psnr.row(j).to_vec(),
                psnr: p,
                ssim: s,
                flow_magnitude: a.flow_magnitude[j],
                compressibility: a.compressibility[j],
                alpha: plans[i].alphas[j],
                vcpr,
                wall_ms: if timing { wall * 1e3 } else { 0.0 },
            });
        }
        let summary = VideoSummary {
            video: a.id,
            rates: plans[i].rates.clone(),
            recovered: decoded.rates.clone(),
            vcpr,
            psnr: psnr_frames(&original[..n], &decoded.frames[..n])?,
            ssim: ssim_frames(&original[..n], &decoded.frames[..n])?,
            flow: flow_loss_frames(&original[..n], &decoded.frames[..n])?,
            decoded_frames: decoded.frames.len(),
            fallback: decoded.used_fallback(),
            wall_ms: if timing { wall * 1e3 } else { 0.0 },
        };
        Ok::<_, MtcError>((rows, summary))
    })?;
    let mut rows = Vec::new();
    let mut videos = Vec::with_capacity(results.len());
    for (r, v) in results {
        rows.extend(r);
        videos.push(v);
    }
    Ok(BenchReport {
        quality: kind.name(),
        w,
        analysis_rates: cfg.analysis_rates.clone(),
        rows,
        videos,
        keyframe_accuracy,
        predictor: trained.predictor,
        wall_s: if timing {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}
