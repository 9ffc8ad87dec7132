//! Synthetic corpora, benchmark runs and ablation sweeps.

pub mod bench;
pub mod config;
pub mod sweeps;
pub mod synth;

pub use bench::{
    analyze_corpus, bench_analysis, plan_corpus, run_bench, BenchReport, BenchRow, VideoAnalysis,
};
pub use config::HarnessConfig;
pub use sweeps::{scatter, sweep_embedding, sweep_quality, sweep_w, Scatter, ScatterLabel};
pub use synth::{
    default_corpus, generate, mixed_corpus, CorpusShape, Pattern, SynthSpec, SynthVideo,
};
