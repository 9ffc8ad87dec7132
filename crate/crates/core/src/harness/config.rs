//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so that typos do not silently fall back to defaults.

use std::path::{Path, PathBuf};

use crate::codec::{CodecConfig, SpatialInterp, TemporalInterp, ANALYSIS_RATES, PLANNER_RATES};
use crate::error::{MtcError, Result};
use crate::planner::{QualityFunctionKind, DEFAULT_WEIGHT};
use crate::stream::{KeyframeEmbedding, PositionPolicy, TrainOptions, DEFAULT_BETA};
use crate::tensor::DEFAULT_SEGMENT_LEN;

use super::synth::CorpusShape;

#[derive(Debug, Clone, PartialEq)]
pub struct HarnessConfig {
    pub seed: u64,
    pub w: f64,
    pub rates: Vec<u32>,
    pub spatial_factor: usize,
    pub segment_len: usize,
    pub quality: QualityFunctionKind,
    pub embedding: PositionPolicy,
    pub beta: f32,
    pub temporal: TemporalInterp,
    pub spatial: SpatialInterp,
    pub corpus: CorpusShape,
    pub lr: f64,
    pub steps: usize,
    /// Record wall-clock times; off gives byte-identical reports.
    pub timing: bool,
    pub out: Option<PathBuf>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        let train = TrainOptions::default();
        HarnessConfig {
            seed: 0,
            w: DEFAULT_WEIGHT,
            rates: PLANNER_RATES.to_vec(),
            spatial_factor: 8,
            segment_len: DEFAULT_SEGMENT_LEN,
            quality: QualityFunctionKind::Psnr,
            embedding: PositionPolicy::Begin,
            beta: DEFAULT_BETA,
            temporal: TemporalInterp::Linear,
            spatial: SpatialInterp::Bilinear,
            corpus: CorpusShape::default(),
            lr: train.lr,
            steps: train.steps,
            timing: true,
            out: None,
        }
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| MtcError::invalid(format!("bad value '{value}' for '{key}'")))
}

pub fn parse_rates(value: &str) -> Result<Vec<u32>> {
    let mut rates = value
        .split(',')
        .map(|r| parse_value::<u32>("rates", r.trim()))
        .collect::<Result<Vec<_>>>()?;
    rates.sort_unstable();
    rates.dedup();
    if rates.is_empty() {
        return Err(MtcError::invalid("empty rate list"));
    }
    Ok(rates)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(MtcError::invalid(format!(
            "bad value '{value}' for '{key}'"
        ))),
    }
}

impl HarnessConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "w" => self.w = parse_value(key, value)?,
            "rates" => self.rates = parse_rates(value)?,
            "spatial_factor" | "spatial-factor" => self.spatial_factor = parse_value(key, value)?,
            "segment_len" | "segment-len" => self.segment_len = parse_value(key, value)?,
            "quality" => self.quality = value.parse()?,
            "embedding" => self.embedding = value.parse()?,
            "beta" => self.beta = parse_value(key, value)?,
            "temporal" => self.temporal = value.parse()?,
            "spatial" => self.spatial = value.parse()?,
            "videos" => self.corpus.videos = parse_value(key, value)?,
            "frames" => self.corpus.frames = parse_value(key, value)?,
            "height" => self.corpus.height = parse_value(key, value)?,
            "width" => self.corpus.width = parse_value(key, value)?,
            "channels" => self.corpus.channels = parse_value(key, value)?,
            "lr" => self.lr = parse_value(key, value)?,
            "steps" => self.steps = parse_value(key, value)?,
            "timing" => self.timing = parse_bool(key, value)?,
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(MtcError::invalid(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = HarnessConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                MtcError::invalid(format!("line {}: expected 'key = value'", n + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| MtcError::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn codec(&self) -> Result<CodecConfig> {
        let mut analysis: Vec<u32> = ANALYSIS_RATES
            .iter()
            .chain(&self.rates)
            .copied()
            .filter(|&r| r > 0 && (self.segment_len.saturating_sub(1)).is_multiple_of(r as usize))
            .collect();
        analysis.sort_unstable();
        analysis.dedup();
        let cfg = CodecConfig {
            spatial_factor: self.spatial_factor,
            planner_rates: self.rates.clone(),
            analysis_rates: analysis,
            temporal: self.temporal,
            spatial: self.spatial,
            segment_len: self.segment_len,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn embedding(&self) -> Result<KeyframeEmbedding> {
        KeyframeEmbedding::new(self.beta, self.embedding)
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            lr: self.lr,
            steps: self.steps,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.w.is_finite() || self.w < 0.0 {
            return Err(MtcError::invalid(format!(
                "w {} must be finite and >= 0",
                self.w
            )));
        }
        if !(self.lr > 0.0) {
            return Err(MtcError::invalid("lr must be > 0"));
        }
        self.codec()?;
        self.embedding()?;
        Ok(())
    }
}
