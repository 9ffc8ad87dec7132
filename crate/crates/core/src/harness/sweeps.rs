//! Ablation sweeps and the rate-sensitivity scatter.

use std::fmt::Write as _;
use std::io::Write;

use crate::codec::CodecConfig;
use crate::error::{MtcError, Result};
use crate::planner::{CompressionPlan, QualityFunctionKind};
use crate::stream::{
    evaluate_predictor, train_predictor, KeyframeEmbedding, LatentStream, PositionPolicy,
    TrainOptions,
};

use super::bench::{bench_analysis, encode_plan, fmt, plan_corpus, VideoAnalysis};

pub const W_SWEEP: [f64; 4] = [1.0, 1.5, 2.0, 2.5];
/// Adjacent-rate PSNR gap at or below which a segment counts as insensitive.
pub const SCATTER_GAP_DB: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct WSweepRow {
    pub w: f64,
    pub vcpr: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub mean_rate: f64,
}

pub fn sweep_w(
    analysis: &[VideoAnalysis],
    weights: &[f64],
    cfg: &CodecConfig,
    emb: KeyframeEmbedding,
    train: TrainOptions,
) -> Result<Vec<WSweepRow>> {
    weights
        .iter()
        .map(|&w| {
            let r = bench_analysis(
                analysis,
                w,
                QualityFunctionKind::Psnr,
                cfg,
                emb,
                train,
                false,
            )?;
            let rates: Vec<f64> = r.rows.iter().map(|row| row.rate as f64).collect();
            Ok(WSweepRow {
                w,
                vcpr: r.corpus_vcpr(cfg.spatial_factor)?,
                psnr: r.mean_psnr(),
                ssim: r.mean_ssim(),
                mean_rate: rates.iter().sum::<f64>() / rates.len() as f64,
            })
        })
        .collect()
}

pub fn write_w_sweep<W: Write>(rows: &[WSweepRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["w", "vcpr", "psnr", "ssim", "mean_rate"])?;
    for r in rows {
        wtr.write_record([r.w, r.vcpr, r.psnr, r.ssim, r.mean_rate].map(fmt))?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub policy: PositionPolicy,
    pub train_accuracy: f64,
    pub train_balanced: f64,
    pub heldout_accuracy: f64,
    pub heldout_balanced: f64,
    pub final_loss: f64,
}

/// Trains on even-indexed videos and evaluates on odd-indexed ones.
pub fn sweep_embedding(
    analysis: &[VideoAnalysis],
    w: f64,
    cfg: &CodecConfig,
    beta: f32,
    train: TrainOptions,
) -> Result<Vec<EmbeddingRow>> {
    if analysis.len() < 2 {
        return Err(MtcError::invalid(
            "embedding sweep needs at least two videos",
        ));
    }
    let plans = plan_corpus(analysis, QualityFunctionKind::Psnr, w, cfg, train.seed)?;
    PositionPolicy::ALL
        .iter()
        .map(|&policy| {
            let emb = KeyframeEmbedding::new(beta, policy)?;
            let streams = analysis
                .iter()
                .zip(&plans)
                .map(|(a, p)| encode_plan(&a.video, p, emb, cfg))
                .collect::<Result<Vec<LatentStream>>>()?;
            let (train_set, test_set): (Vec<_>, Vec<_>) = streams
                .into_iter()
                .enumerate()
                .partition(|(i, _)| i % 2 == 0);
            let train_set: Vec<LatentStream> = train_set.into_iter().map(|(_, s)| s).collect();
            let test_set: Vec<LatentStream> = test_set.into_iter().map(|(_, s)| s).collect();
            let trained = train_predictor(&train_set, train)?;
            let tr = evaluate_predictor(&trained.predictor, &train_set)?;
            let te = evaluate_predictor(&trained.predictor, &test_set)?;
            Ok(EmbeddingRow {
                policy,
                train_accuracy: tr.accuracy,
                train_balanced: tr.balanced,
                heldout_accuracy: te.accuracy,
                heldout_balanced: te.balanced,
                final_loss: trained.final_loss,
            })
        })
        .collect()
}

pub fn write_embedding<W: Write>(rows: &[EmbeddingRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record([
        "embedding",
        "train_accuracy",
        "train_balanced",
        "heldout_accuracy",
        "heldout_balanced",
        "final_loss",
    ])?;
    for r in rows {
        let mut rec = vec![r.policy.name().to_string()];
        rec.extend(
            [
                r.train_accuracy,
                r.train_balanced,
                r.heldout_accuracy,
                r.heldout_balanced,
                r.final_loss,
            ]
            .map(fmt),
        );
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub quality: &'static str,
    pub psnr: f64,
    pub ssim: f64,
    pub vcpr: f64,
    pub wall_s: f64,
}

pub fn sweep_quality(
    analysis: &[VideoAnalysis],
    w: f64,
    cfg: &CodecConfig,
    emb: KeyframeEmbedding,
    train: TrainOptions,
    timing: bool,
) -> Result<Vec<QualityRow>> {
    [
        QualityFunctionKind::Random { seed: 0 },
        QualityFunctionKind::Compressibility,
        QualityFunctionKind::Psnr,
    ]
    .iter()
    .map(|&kind| {
        let r = bench_analysis(analysis, w, kind, cfg, emb, train, timing)?;
        Ok(QualityRow {
            quality: kind.name(),
            psnr: r.mean_psnr(),
            ssim: r.mean_ssim(),
            vcpr: r.corpus_vcpr(cfg.spatial_factor)?,
            wall_s: r.wall_s,
        })
    })
    .collect()
}

pub fn write_quality<W: Write>(rows: &[QualityRow], out: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(["quality", "psnr", "ssim", "vcpr", "wall_s"])?;
    for r in rows {
        let mut rec = vec![r.quality.to_string()];
        rec.extend([r.psnr, r.ssim, r.vcpr, r.wall_s].map(fmt));
        wtr.write_record(rec)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterLabel {
    /// Quality barely changes between the two smallest rates.
    Orange,
    Blue,
}

impl ScatterLabel {
    pub fn name(self) -> &'static str {
        match self {
            ScatterLabel::Orange => "orange",
            ScatterLabel::Blue => "blue",
        }
    }
}

pub fn scatter_label(psnr_low: f64, psnr_high: f64) -> ScatterLabel {
    if (psnr_low - psnr_high).abs() <= SCATTER_GAP_DB || psnr_high > psnr_low {
        ScatterLabel::Orange
    } else {
        ScatterLabel::Blue
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterRow {
    pub video: usize,
    pub segment: usize,
    pub rate_psnr: Vec<f64>,
    pub psnr_std: f64,
    pub flow_magnitude: f64,
    pub compressibility: f64,
    pub label: ScatterLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scatter {
    pub rates: Vec<u32>,
    pub rows: Vec<ScatterRow>,
}

fn population_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn scatter(analysis: &[VideoAnalysis]) -> Result<Scatter> {
    let first = analysis
        .first()
        .ok_or_else(|| MtcError::invalid("empty corpus"))?;
    let rates = first.psnr.rates().to_vec();
    if rates.len() < 2 {
        return Err(MtcError::invalid(
            "scatter needs at least two analysis rates",
        ));
    }
    let mut rows = Vec::new();
    for a in analysis {
        if a.psnr.rates() != rates.as_slice() {
            return Err(MtcError::invalid("videos analysed at different rates"));
        }
        for j in 0..a.video.len() {
            let p = a.psnr.row(j);
            rows.push(ScatterRow {
                video: a.id,
                segment: j,
                rate_psnr: p.to_vec(),
                psnr_std: population_std(p),
                flow_magnitude: a.flow_magnitude[j],
                compressibility: a.compressibility[j],
                label: scatter_label(p[0], p[1]),
            });
        }
    }
    Ok(Scatter { rates, rows })
}

/// Mean flow magnitude and compressibility of one label group.
pub fn label_means(s: &Scatter, label: ScatterLabel) -> Option<(f64, f64)> {
    let group: Vec<&ScatterRow> = s.rows.iter().filter(|r| r.label == label).collect();
    if group.is_empty() {
        return None;
    }
    let n = group.len() as f64;
    Some((
        group.iter().map(|r| r.flow_magnitude).sum::<f64>() / n,
        group.iter().map(|r| r.compressibility).sum::<f64>() / n,
    ))
}

impl Scatter {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["video".to_string(), "segment".to_string()];
        header.extend(self.rates.iter().map(|r| format!("psnr_r{r}")));
        header.extend(["psnr_std", "flow_magnitude", "compressibility", "label"].map(String::from));
        wtr.write_record(header)?;
        for r in &self.rows {
            let mut rec = vec![r.video.to_string(), r.segment.to_string()];
            rec.extend(r.rate_psnr.iter().map(|v| fmt(*v)));
            rec.extend([r.psnr_std, r.flow_magnitude, r.compressibility].map(fmt));
            rec.push(r.label.name().to_string());
            wtr.write_record(rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Flow magnitude against compressed bytes per sample, coloured by label.
    pub fn to_svg(&self) -> String {
        let (w, h, pad) = (480.0, 360.0, 40.0);
        let max_x = self
            .rows
            .iter()
            .map(|r| r.flow_magnitude)
            .fold(1e-9, f64::max);
        let max_y = self
            .rows
            .iter()
            .map(|r| r.compressibility)
            .fold(1e-9, f64::max);
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
        );
        let _ = writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            svg,
            r#"<path d="M{pad} {pad} V{y0} H{x1}" stroke="black" fill="none"/>"#,
            y0 = h - pad,
            x1 = w - pad
        );
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="12" text-anchor="middle">mean flow magnitude</text>"#,
            x = w / 2.0,
            y = h - 10.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="12" y="{y}" font-size="12" transform="rotate(-90 12 {y})" text-anchor="middle">bytes per sample</text>"#,
            y = h / 2.0
        );
        for r in &self.rows {
            let x = pad + r.flow_magnitude / max_x * (w - 2.0 * pad);
            let y = h - pad - r.compressibility / max_y * (h - 2.0 * pad);
            let colour = match r.label {
                ScatterLabel::Orange => "#f28e2b",
                ScatterLabel::Blue => "#4e79a7",
            };
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{colour}"/>"#
            );
        }
        svg.push_str("</svg>\n");
        svg
    }
}

/// VCPR against w as a polyline.
pub fn w_sweep_svg(rows: &[WSweepRow]) -> String {
    let (w, h, pad) = (480.0, 320.0, 40.0);
    let (lo_w, hi_w) = rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| {
            (a.min(r.w), b.max(r.w))
        });
    let hi_v = rows.iter().map(|r| r.vcpr).fold(1e-9, f64::max);
    let span = if hi_w > lo_w { hi_w - lo_w } else { 1.0 };
    let points: Vec<String> = rows
        .iter()
        .map(|r| {
            let x = pad + (r.w - lo_w) / span * (w - 2.0 * pad);
            let y = h - pad - r.vcpr / hi_v * (h - 2.0 * pad);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <polyline points=\"{}\" stroke=\"#4e79a7\" fill=\"none\" stroke-width=\"2\"/>\n\
         </svg>\n",
        points.join(" ")
    )
}

/// Mean chosen rate over segments selected by `keep(video, segment)`.
pub fn mean_rate_where(
    plans: &[CompressionPlan],
    keep: impl Fn(usize, usize) -> bool,
) -> Option<f64> {
    let picked: Vec<f64> = plans
        .iter()
        .enumerate()
        .flat_map(|(v, p)| p.rates.iter().enumerate().map(move |(s, &r)| (v, s, r)))
        .filter(|&(v, s, _)| keep(v, s))
        .map(|(_, _, r)| r as f64)
        .collect();
    if picked.is_empty() {
        None
    } else {
        Some(picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_rule() {
        assert_eq!(scatter_label(30.0, 29.6), ScatterLabel::Orange);
        assert_eq!(scatter_label(30.0, 29.5), ScatterLabel::Orange);
        assert_eq!(scatter_label(30.0, 29.0), ScatterLabel::Blue);
        assert_eq!(scatter_label(28.0, 31.0), ScatterLabel::Orange);
        assert_eq!(scatter_label(100.0, 100.0), ScatterLabel::Orange);
    }

    #[test]
    fn std_of_constant_is_zero() {
        assert_eq!(population_std(&[3.0, 3.0, 3.0]), 0.0);
        assert!((population_std(&[1.0, 3.0]) - 1.0).abs() < 1e-12);
    }
}
