//! Per-segment temporal rate selection.
//!
//! Each segment `i` gets a quality vector `Q(c, x_i)` over the candidate
//! rates. The compression tolerance factor
//!
//! ```text
//! α(x_i) = ½ (Q̄(x_i) − Q_min) / (Q_max − Q_min) + ½ (1 − σ_Q(x_i) / σ_Qmax)
//! ```
//!
//! is high for segments that reconstruct well at every rate and whose quality
//! barely changes with the rate. The plan maximises
//! `Σ_i (1 − α_i) Q(c_i, x_i) + α_i log2(c_i) w` with `c_i ∈ {4, 8, 16}`.
//! The objective is separable, so the maximum is a per-segment argmax.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{reconstruct_at_rate, CodecConfig, PLANNER_RATES};
use crate::error::{MtcError, Result};
use crate::metrics::{compressibility_segment, psnr};
use crate::par::Exec;
use crate::tensor::SegmentedVideo;

pub const DEFAULT_WEIGHT: f64 = 1.5;

/// Largest segment count accepted by [`brute_force_plan`].
pub const BRUTE_FORCE_MAX_SEGMENTS: usize = 12;

/// Range of the seeded uniform draws used by the random quality function.
pub const RANDOM_QUALITY_RANGE: (f64, f64) = (20.0, 40.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityFunctionKind {
    Psnr,
    Compressibility,
    Random { seed: u64 },
}

impl QualityFunctionKind {
    pub fn name(self) -> &'static str {
        match self {
            QualityFunctionKind::Psnr => "psnr",
            QualityFunctionKind::Compressibility => "compress",
            QualityFunctionKind::Random { .. } => "random",
        }
    }
}

impl FromStr for QualityFunctionKind {
    type Err = MtcError;

    /// Parses `psnr`, `compress` or `random` (seed 0; use `random:<seed>` to set it).
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psnr" => Ok(QualityFunctionKind::Psnr),
            "compress" | "compressibility" => Ok(QualityFunctionKind::Compressibility),
            "random" => Ok(QualityFunctionKind::Random { seed: 0 }),
            other => match other.strip_prefix("random:").map(str::parse) {
                Some(Ok(seed)) => Ok(QualityFunctionKind::Random { seed }),
                _ => Err(MtcError::invalid(format!(
                    "unknown quality function '{other}'"
                ))),
            },
        }
    }
}

/// `N × R` quality scores, segment-major, with rates ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityMatrix {
    rates: Vec<u32>,
    values: Vec<f64>,
}

impl QualityMatrix {
    pub fn new(rates: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if rates.is_empty() || !rates.windows(2).all(|w| w[0] < w[1]) {
            return Err(MtcError::invalid(
                "rates must be non-empty and strictly ascending",
            ));
        }
        if values.is_empty() || !values.len().is_multiple_of(rates.len()) {
            return Err(MtcError::dims(format!(
                "{} values do not fill rows of {} rates",
                values.len(),
                rates.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MtcError::invalid("quality values must be finite"));
        }
        Ok(QualityMatrix { rates, values })
    }

    pub fn from_rows(rates: Vec<u32>, rows: &[Vec<f64>]) -> Result<Self> {
        if rows.iter().any(|r| r.len() != rates.len()) {
            return Err(MtcError::dims("row length differs from rate count"));
        }
        QualityMatrix::new(rates, rows.concat())
    }

    pub fn rates(&self) -> &[u32] {
        &self.rates
    }

    pub fn segments(&self) -> usize {
        self.values.len() / self.rates.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let r = self.rates.len();
        &self.values[i * r..(i + 1) * r]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, segment: usize, rate: u32) -> Option<f64> {
        let j = self.rates.iter().position(|&r| r == rate)?;
        Some(self.row(segment)[j])
    }

    /// Sub-matrix over the given rate columns.
    pub fn restrict(&self, rates: &[u32]) -> Result<Self> {
        let cols = rates
            .iter()
            .map(|r| {
                self.rates.iter().position(|x| x == r).ok_or_else(|| {
                    MtcError::invalid(format!("quality matrix has no column for rate {r}"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let values = (0..self.segments())
            .flat_map(|i| cols.iter().map(move |&j| self.row(i)[j]))
            .collect();
        QualityMatrix::new(rates.to_vec(), values)
    }
}

pub fn build_quality_matrix(
    video: &SegmentedVideo,
    rates: &[u32],
    kind: QualityFunctionKind,
    cfg: &CodecConfig,
) -> Result<QualityMatrix> {
    build_quality_matrix_with(video, rates, kind, cfg, Exec::default())
}

pub fn build_quality_matrix_with(
    video: &SegmentedVideo,
    rates: &[u32],
    kind: QualityFunctionKind,
    cfg: &CodecConfig,
    exec: Exec,
) -> Result<QualityMatrix> {
    if let Some(r) = rates.iter().find(|r| !cfg.analysis_rates.contains(r)) {
        return Err(MtcError::invalid(format!(
            "rate {r} is not an analysis rate"
        )));
    }
    let n = video.len();
    let r = rates.len();
    let values = match kind {
        QualityFunctionKind::Psnr => exec
            .map_range(n * r, |cell| {
                let x = &video.segments()[cell / r];
                psnr(x, &reconstruct_at_rate(x, rates[cell % r], cfg)?)
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?,
        QualityFunctionKind::Compressibility => exec
            .map(video.segments(), compressibility_segment)
            .into_iter()
            .flat_map(|b| std::iter::repeat_n(-b, r))
            .collect(),
        QualityFunctionKind::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (lo, hi) = RANDOM_QUALITY_RANGE;
            (0..n * r).map(|_| rng.gen_range(lo..hi)).collect()
        }
    };
    QualityMatrix::new(rates.to_vec(), values)
}

/// Statistics of a quality matrix feeding the tolerance factor.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaStats {
    pub means: Vec<f64>,
    /// Population standard deviation over each segment's rate entries.
    pub stds: Vec<f64>,
    pub q_min: f64,
    pub q_max: f64,
    pub sigma_max: f64,
}

impl AlphaStats {
    pub fn from_matrix(q: &QualityMatrix) -> Self {
        let r = q.rates().len() as f64;
        let mut means = Vec::with_capacity(q.segments());
        let mut stds = Vec::with_capacity(q.segments());
        for i in 0..q.segments() {
            let row = q.row(i);
            let mean = row.iter().sum::<f64>() / r;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r;
            means.push(mean);
            stds.push(var.sqrt());
        }
        let q_min = q.values().iter().copied().fold(f64::INFINITY, f64::min);
        let q_max = q.values().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sigma_max = stds.iter().copied().fold(0.0, f64::max);
        AlphaStats {
            means,
            stds,
            q_min,
            q_max,
            sigma_max,
        }
    }
}

/// Compression tolerance factor of segment `i`, in `[0, 1]`.
///
/// A zero quality range makes the first term `½ · 0.5`; a zero `σ_Qmax`
/// makes the second term `½ · 1`.
pub fn alpha(stats: &AlphaStats, i: usize) -> f64 {
    let range = stats.q_max - stats.q_min;
    let level = if range > 0.0 {
        ((stats.means[i] - stats.q_min) / range).clamp(0.0, 1.0)
    } else {
        0.5
    };
    let steadiness = if stats.sigma_max > 0.0 {
        (1.0 - stats.stds[i] / stats.sigma_max).clamp(0.0, 1.0)
    } else {
        1.0
    };
    0.5 * level + 0.5 * steadiness
}

#[inline]
pub fn segment_score(alpha: f64, quality: f64, rate: u32, w: f64) -> f64 {
    (1.0 - alpha) * quality + alpha * (rate as f64).log2() * w
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompressionPlan {
    pub rates: Vec<u32>,
    pub weight: f64,
    pub score: f64,
    pub alphas: Vec<f64>,
    /// Number of per-(segment, rate) objective evaluations performed.
    pub evaluations: usize,
}

/// Restricts `q` to the planner rates and computes per-segment α.
fn planner_view(q: &QualityMatrix, rates: &[u32]) -> Result<(QualityMatrix, Vec<f64>)> {
    let sub = q.restrict(rates)?;
    let stats = AlphaStats::from_matrix(&sub);
    let alphas = (0..sub.segments()).map(|i| alpha(&stats, i)).collect();
    Ok((sub, alphas))
}

/// Optimal rates over `{4, 8, 16}`; ties go to the larger rate.
pub fn plan(q: &QualityMatrix, w: f64) -> Result<CompressionPlan> {
    plan_with_rates(q, w, &PLANNER_RATES)
}

pub fn plan_with_rates(q: &QualityMatrix, w: f64, rates: &[u32]) -> Result<CompressionPlan> {
    if !(w >= 0.0) || !w.is_finite() {
        return Err(MtcError::invalid(format!(
            "weight {w} must be finite and >= 0"
        )));
    }
    let (sub, alphas) = planner_view(q, rates)?;
    let mut chosen = Vec::with_capacity(sub.segments());
    let mut score = 0.0;
    let mut evaluations = 0;
    for (i, &a) in alphas.iter().enumerate() {
        let mut best = (f64::NEG_INFINITY, rates[0]);
        for (&c, &quality) in rates.iter().zip(sub.row(i)) {
            let s = segment_score(a, quality, c, w);
            evaluations += 1;
            if s >= best.0 {
                best = (s, c);
            }
        }
        score += best.0;
        chosen.push(best.1);
    }
    Ok(CompressionPlan {
        rates: chosen,
        weight: w,
        score,
        alphas,
        evaluations,
    })
}

/// Exhaustive search over all `3^N` assignments. Among equal totals the
/// lexicographically largest rate vector wins.
pub fn brute_force_plan(q: &QualityMatrix, w: f64) -> Result<CompressionPlan> {
    let rates = &PLANNER_RATES;
    let n = q.segments();
    if n > BRUTE_FORCE_MAX_SEGMENTS {
        return Err(MtcError::invalid(format!(
            "brute force supports at most {BRUTE_FORCE_MAX_SEGMENTS} segments, got {n}"
        )));
    }
    let (sub, alphas) = planner_view(q, rates)?;
    let r = rates.len();
    let total = r.pow(n as u32);
    let mut digits = vec![0usize; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut evaluations = 0;
    for code in 0..total {
        // Most significant digit first, so `code` order is lexicographic.
        let mut rest = code;
        for d in digits.iter_mut().rev() {
            *d = rest % r;
            rest /= r;
        }
        let mut s = 0.0;
        for i in 0..n {
            s += segment_score(alphas[i], sub.row(i)[digits[i]], rates[digits[i]], w);
            evaluations += 1;
        }
        if best.as_ref().is_none_or(|(b, _)| s >= *b) {
            best = Some((s, digits.clone()));
        }
    }
    let (score, idx) = best.expect("at least one assignment");
    Ok(CompressionPlan {
        rates: idx.iter().map(|&j| rates[j]).collect(),
        weight: w,
        score,
        alphas,
        evaluations,
    })
}

/// Tercile cut points of a population of bytes-per-sample values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompressibilityTerciles {
    pub lower: f64,
    pub upper: f64,
}

impl CompressibilityTerciles {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(MtcError::invalid("need finite compressibility values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        Ok(CompressibilityTerciles {
            lower: sorted[n / 3],
            upper: sorted[(2 * n / 3).min(n - 1)],
        })
    }

    /// 16 for the most compressible tercile, 8 for the middle, 4 for the rest.
    pub fn rate_for(&self, bytes_per_sample: f64) -> u32 {
        if bytes_per_sample < self.lower {
            16
        } else if bytes_per_sample < self.upper {
            8
        } else {
            4
        }
    }
}

/// Rate selection for the compressibility-based quality function.
///
/// The matrix holds `-bytes_per_sample`, constant across rates, so the score
/// cannot rank rates; segments are instead bucketed by tercile.
pub fn plan_by_compressibility(
    q: &QualityMatrix,
    terciles: &CompressibilityTerciles,
    w: f64,
) -> Result<CompressionPlan> {
    let (sub, alphas) = planner_view(q, &PLANNER_RATES)?;
    let mut rates = Vec::with_capacity(sub.segments());
    let mut score = 0.0;
    for (i, &a) in alphas.iter().enumerate() {
        let c = terciles.rate_for(-sub.row(i)[0]);
        let j = PLANNER_RATES.iter().position(|&r| r == c).unwrap();
        score += segment_score(a, sub.row(i)[j], c, w);
        rates.push(c);
    }
    Ok(CompressionPlan {
        rates,
        weight: w,
        score,
        alphas,
        evaluations: sub.segments(),
    })
}
