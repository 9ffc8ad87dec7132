use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use mtc_core::codec::{encode_segment, CodecConfig};
use mtc_core::harness::config::parse_rates;
use mtc_core::harness::sweeps::{
    label_means, w_sweep_svg, write_embedding, write_quality, write_w_sweep, ScatterLabel, W_SWEEP,
};
use mtc_core::harness::{
    analyze_corpus, bench_analysis, default_corpus, generate, mixed_corpus, plan_corpus, scatter,
    sweep_embedding, sweep_quality, sweep_w, CorpusShape, HarnessConfig, Pattern, SynthSpec,
};
use mtc_core::io::{load_video, save_video, FrameFormat};
use mtc_core::metrics::{psnr_frames, ssim_frames, vcpr_rates};
use mtc_core::planner::QualityFunctionKind;
use mtc_core::stream::{self, decode_stream, train_predictor, LatentStream, PositionPolicy};
use mtc_core::tensor::segment_video_with_fps;
use mtc_core::Exec;

#[derive(Parser, Debug)]
#[command(
    name = "mtc",
    version,
    about = "Multi-level temporal compression of videos"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Flat `key = value` file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Compression weight (default 1.5).
    #[arg(long, global = true)]
    w: Option<f64>,
    /// Planner rates, e.g. 4,8,16.
    #[arg(long, global = true, value_parser = rates_arg)]
    rates: Option<Rates>,
    #[arg(long, global = true)]
    spatial_factor: Option<usize>,
    #[arg(long, global = true)]
    segment_len: Option<usize>,
    /// psnr, compress or random.
    #[arg(long, global = true)]
    quality: Option<QualityFunctionKind>,
    /// begin, end or none.
    #[arg(long, global = true)]
    embedding: Option<PositionPolicy>,
    /// Output directory (default `mtc-out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

/// Comma-separated rate list; a newtype so clap parses it as one value.
#[derive(Debug, Clone)]
struct Rates(Vec<u32>);

fn rates_arg(s: &str) -> std::result::Result<Rates, String> {
    parse_rates(s).map(Rates).map_err(|e| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic video as an MTCV container.
    Generate(GenerateArgs),
    /// Choose per-segment rates for a video and write plan.csv.
    Plan { input: PathBuf },
    /// Plan and encode a video into stream.mtcs.
    Encode { input: PathBuf },
    /// Recover segments from a stream and write decoded.mtcv.
    Decode {
        input: PathBuf,
        /// Original video for PSNR/SSIM.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Full pipeline over the synthetic corpus; writes bench.csv.
    Bench,
    /// VCPR and PSNR for w in 1.0..=2.5; writes sweep_w.csv.
    SweepW,
    /// Keyframe accuracy per marker position; writes sweep_embedding.csv.
    SweepEmbedding,
    /// Random vs compressibility vs PSNR planning; writes sweep_quality.csv.
    SweepQuality,
    /// Rate sensitivity per segment; writes scatter.csv and scatter.svg.
    Scatter {
        /// Use static/slow/fast mixed clips instead of the default corpus.
        #[arg(long)]
        mixed: bool,
    },
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "drift-grating")]
    pattern: Pattern,
    #[arg(long, default_value_t = 1.0)]
    speed: f64,
    #[arg(long, default_value_t = 2.0)]
    frequency: f64,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    grain: f64,
    #[arg(long, default_value_t = 24.0)]
    fps: f32,
}

/// Failure class; decides the exit code.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Data(e.into())
    }
}

struct Ctx {
    cfg: HarnessConfig,
    codec: CodecConfig,
    out: PathBuf,
}

impl Ctx {
    fn from_common(c: &Common) -> std::result::Result<Self, Failure> {
        let mut cfg = match &c.config {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))
                    .map_err(usage)?;
                HarnessConfig::parse(&text).map_err(usage)?
            }
            None => HarnessConfig::default(),
        };
        if let Some(v) = c.seed {
            cfg.seed = v;
        }
        if let Some(v) = c.w {
            cfg.w = v;
        }
        if let Some(v) = &c.rates {
            cfg.rates = v.0.clone();
        }
        if let Some(v) = c.spatial_factor {
            cfg.spatial_factor = v;
        }
        if let Some(v) = c.segment_len {
            cfg.segment_len = v;
        }
        if let Some(v) = c.quality {
            cfg.quality = v;
        }
        if let Some(v) = c.embedding {
            cfg.embedding = v;
        }
        if let Some(v) = &c.out {
            cfg.out = Some(v.clone());
        }
        cfg.validate().map_err(usage)?;
        let codec = cfg.codec().map_err(usage)?;
        let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("mtc-out"));
        Ok(Ctx { cfg, codec, out })
    }

    fn path(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        Ok(self.out.join(name))
    }

    fn create(&self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let p = self.path(name)?;
        let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        Ok((p, BufWriter::new(f)))
    }

    fn shape(&self) -> CorpusShape {
        self.cfg.corpus
    }
}

fn load(path: &Path) -> Result<mtc_core::io::LoadedVideo> {
    let fmt = FrameFormat::detect(path)?;
    load_video(path, fmt).with_context(|| format!("loading {}", path.display()))
}

fn cmd_generate(ctx: &Ctx, a: &GenerateArgs) -> Result<()> {
    let shape = ctx.shape();
    let spec = SynthSpec {
        pattern: a.pattern,
        speed: a.speed,
        frequency: a.frequency,
        seed: ctx.cfg.seed,
        height: a.height.unwrap_or(shape.height),
        width: a.width.unwrap_or(shape.width),
        channels: shape.channels,
        frames: a.frames.unwrap_or(shape.frames),
        grain: a.grain,
    };
    let frames = generate(&spec)?;
    let p = ctx.path("video.mtcv")?;
    save_video(&frames, a.fps, &p, FrameFormat::RawContainer)?;
    println!("wrote {} ({} frames)", p.display(), frames.len());
    Ok(())
}

fn plan_video(
    ctx: &Ctx,
    input: &Path,
) -> Result<(mtc_core::SegmentedVideo, mtc_core::CompressionPlan)> {
    let loaded = load(input)?;
    let video = segment_video_with_fps(&loaded.frames, ctx.codec.segment_len, loaded.fps)?;
    let plan = match ctx.cfg.quality {
        // Tercile cut points need a population, so the video is ranked
        // against a synthetic corpus of the same geometry.
        QualityFunctionKind::Compressibility => {
            let shape = CorpusShape {
                videos: 16,
                ..shape_of(&video)
            };
            let mut corpus: Vec<Vec<mtc_core::Frame>> = default_corpus(shape, ctx.cfg.seed)?
                .into_iter()
                .map(|v| v.frames)
                .collect();
            corpus.insert(0, loaded.frames);
            let all = analyze_corpus(&corpus, &ctx.codec, Exec::default())?;
            plan_corpus(&all, ctx.cfg.quality, ctx.cfg.w, &ctx.codec, ctx.cfg.seed)?.remove(0)
        }
        kind => {
            let analysis = analyze_corpus(&[loaded.frames], &ctx.codec, Exec::default())?;
            plan_corpus(&analysis, kind, ctx.cfg.w, &ctx.codec, ctx.cfg.seed)?.remove(0)
        }
    };
    Ok((video, plan))
}

fn shape_of(video: &mtc_core::SegmentedVideo) -> CorpusShape {
    let (height, width, channels) = video.frame_dims();
    CorpusShape {
        videos: 1,
        frames: video.len() * video.segment_len(),
        height,
        width,
        channels,
    }
}

fn write_plan(ctx: &Ctx, plan: &mtc_core::CompressionPlan) -> Result<PathBuf> {
    let (p, f) = ctx.create("plan.csv")?;
    let mut wtr = csv::Writer::from_writer(f);
    wtr.write_record(["segment", "rate", "alpha"])?;
    for (i, (r, a)) in plan.rates.iter().zip(&plan.alphas).enumerate() {
        wtr.write_record([i.to_string(), r.to_string(), format!("{a:.6}")])?;
    }
    wtr.flush()?;
    Ok(p)
}

fn rates_str(rates: &[u32]) -> String {
    rates
        .iter()
        .map(u32::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

fn cmd_plan(ctx: &Ctx, input: &Path) -> Result<()> {
    let (_, plan) = plan_video(ctx, input)?;
    let p = write_plan(ctx, &plan)?;
    let vcpr = vcpr_rates(&plan.rates, ctx.codec.spatial_factor)?;
    println!(
        "rates={} vcpr={vcpr:.3} score={:.6}",
        rates_str(&plan.rates),
        plan.score
    );
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_encode(ctx: &Ctx, input: &Path) -> Result<()> {
    let (video, plan) = plan_video(ctx, input)?;
    let s = mtc_core::harness::bench::encode_plan(&video, &plan, ctx.cfg.embedding()?, &ctx.codec)?;
    let p = ctx.path("stream.mtcs")?;
    fs::write(&p, stream::serialize(&s)?)?;
    write_plan(ctx, &plan)?;
    println!(
        "rates={} latent_frames={} vcpr={:.3}",
        rates_str(&plan.rates),
        s.len(),
        vcpr_rates(&plan.rates, ctx.codec.spatial_factor)?
    );
    println!("wrote {}", p.display());
    Ok(())
}

/// Predictor trained on synthetic streams of the same geometry and marker.
fn geometry_predictor(ctx: &Ctx, s: &LatentStream) -> Result<stream::KeyframePredictor> {
    let (h, w, c) = s.latent_dims();
    let f = ctx.codec.spatial_factor;
    let shape = CorpusShape {
        videos: 16,
        frames: 2 * s.segment_len(),
        height: h * f,
        width: w * f,
        channels: c,
    };
    let mut codec = ctx.codec.clone();
    codec.segment_len = s.segment_len();
    codec.validate()?;
    let emb = s.embedding();
    let rates = &codec.planner_rates;
    let streams = default_corpus(shape, ctx.cfg.seed)?
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let video = mtc_core::tensor::segment_video(&v.frames, codec.segment_len)?;
            let latents = video
                .segments()
                .iter()
                .enumerate()
                .map(|(j, x)| encode_segment(x, rates[(i + j) % rates.len()], &codec))
                .collect::<mtc_core::Result<Vec<_>>>()?;
            stream::assemble_stream(&latents, emb)
        })
        .collect::<mtc_core::Result<Vec<_>>>()?;
    Ok(train_predictor(&streams, ctx.cfg.train_options())?.predictor)
}

fn cmd_decode(ctx: &Ctx, input: &Path, reference: Option<&Path>) -> Result<()> {
    let bytes = fs::read(input).with_context(|| format!("reading {}", input.display()))?;
    let s = stream::deserialize(&bytes)?;
    let pred = geometry_predictor(ctx, &s)?;
    let mut codec = ctx.codec.clone();
    codec.segment_len = s.segment_len();
    let decoded = decode_stream(&s, &pred, &codec)?;
    let p = ctx.path("decoded.mtcv")?;
    save_video(&decoded.frames, 24.0, &p, FrameFormat::RawContainer)?;
    let (rp, f) = ctx.create("recovered.csv")?;
    let mut wtr = csv::Writer::from_writer(f);
    wtr.write_record(["segment", "rate", "fallback"])?;
    for (i, (r, fb)) in decoded.rates.iter().zip(&decoded.fallback).enumerate() {
        wtr.write_record([i.to_string(), r.to_string(), fb.to_string()])?;
    }
    wtr.flush()?;
    println!(
        "rates={} frames={} fallback={}",
        rates_str(&decoded.rates),
        decoded.frames.len(),
        decoded.used_fallback()
    );
    if let Some(r) = reference {
        let orig = load(r)?.frames;
        let n = orig.len().min(decoded.frames.len());
        println!(
            "psnr={:.4} ssim={:.4}",
            psnr_frames(&orig[..n], &decoded.frames[..n])?,
            ssim_frames(&orig[..n], &decoded.frames[..n])?
        );
    }
    println!("wrote {} {}", p.display(), rp.display());
    Ok(())
}

fn corpus_analysis(ctx: &Ctx, mixed: bool) -> Result<Vec<mtc_core::harness::VideoAnalysis>> {
    let corpus = if mixed {
        mixed_corpus(
            CorpusShape {
                frames: 3 * ctx.codec.segment_len,
                ..ctx.shape()
            },
            ctx.cfg.seed,
        )?
    } else {
        default_corpus(ctx.shape(), ctx.cfg.seed)?
    };
    Ok(analyze_corpus(&corpus, &ctx.codec, Exec::default())?)
}

fn cmd_bench(ctx: &Ctx) -> Result<()> {
    let analysis = corpus_analysis(ctx, false)?;
    let r = bench_analysis(
        &analysis,
        ctx.cfg.w,
        ctx.cfg.quality,
        &ctx.codec,
        ctx.cfg.embedding()?,
        ctx.cfg.train_options(),
        ctx.cfg.timing,
    )?;
    let (p, f) = ctx.create("bench.csv")?;
    r.write_csv(f)?;
    println!(
        "videos={} vcpr={:.3} psnr={:.4} ssim={:.4} flow_loss={:.4} boundary_errors={}",
        r.videos.len(),
        r.corpus_vcpr(ctx.codec.spatial_factor)?,
        r.mean_psnr(),
        r.mean_ssim(),
        r.mean_flow_loss(),
        r.boundary_errors()
    );
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_sweep_w(ctx: &Ctx) -> Result<()> {
    let analysis = corpus_analysis(ctx, false)?;
    let rows = sweep_w(
        &analysis,
        &W_SWEEP,
        &ctx.codec,
        ctx.cfg.embedding()?,
        ctx.cfg.train_options(),
    )?;
    let (p, f) = ctx.create("sweep_w.csv")?;
    write_w_sweep(&rows, f)?;
    fs::write(ctx.path("sweep_w.svg")?, w_sweep_svg(&rows))?;
    for r in &rows {
        println!("w={:.1} vcpr={:.3} psnr={:.4}", r.w, r.vcpr, r.psnr);
    }
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_sweep_embedding(ctx: &Ctx) -> Result<()> {
    let analysis = corpus_analysis(ctx, false)?;
    let rows = sweep_embedding(
        &analysis,
        ctx.cfg.w,
        &ctx.codec,
        ctx.cfg.beta,
        ctx.cfg.train_options(),
    )?;
    let (p, f) = ctx.create("sweep_embedding.csv")?;
    write_embedding(&rows, f)?;
    for r in &rows {
        println!(
            "{} heldout_balanced={:.4}",
            r.policy.name(),
            r.heldout_balanced
        );
    }
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_sweep_quality(ctx: &Ctx) -> Result<()> {
    let analysis = corpus_analysis(ctx, false)?;
    let rows = sweep_quality(
        &analysis,
        ctx.cfg.w,
        &ctx.codec,
        ctx.cfg.embedding()?,
        ctx.cfg.train_options(),
        ctx.cfg.timing,
    )?;
    let (p, f) = ctx.create("sweep_quality.csv")?;
    write_quality(&rows, f)?;
    for r in &rows {
        println!(
            "{} psnr={:.4} ssim={:.4} vcpr={:.3}",
            r.quality, r.psnr, r.ssim, r.vcpr
        );
    }
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_scatter(ctx: &Ctx, mixed: bool) -> Result<()> {
    let analysis = corpus_analysis(ctx, mixed)?;
    let s = scatter(&analysis)?;
    let (p, f) = ctx.create("scatter.csv")?;
    s.write_csv(f)?;
    fs::write(ctx.path("scatter.svg")?, s.to_svg())?;
    for label in [ScatterLabel::Orange, ScatterLabel::Blue] {
        let n = s.rows.iter().filter(|r| r.label == label).count();
        match label_means(&s, label) {
            Some((flow, bytes)) => {
                println!(
                    "{} segments={n} flow={flow:.4} bytes_per_sample={bytes:.4}",
                    label.name()
                )
            }
            None => println!("{} segments=0", label.name()),
        }
    }
    println!("wrote {}", p.display());
    Ok(())
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    let ctx = Ctx::from_common(&cli.common)?;
    match &cli.command {
        Command::Generate(a) => cmd_generate(&ctx, a)?,
        Command::Plan { input } => cmd_plan(&ctx, input)?,
        Command::Encode { input } => cmd_encode(&ctx, input)?,
        Command::Decode { input, reference } => cmd_decode(&ctx, input, reference.as_deref())?,
        Command::Bench => cmd_bench(&ctx)?,
        Command::SweepW => cmd_sweep_w(&ctx)?,
        Command::SweepEmbedding => cmd_sweep_embedding(&ctx)?,
        Command::SweepQuality => cmd_sweep_quality(&ctx)?,
        Command::Scatter { mixed } => cmd_scatter(&ctx, *mixed)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
