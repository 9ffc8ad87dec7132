use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mtc_core::codec::{encode_segment, reconstruct_at_rate};
use mtc_core::harness::{generate, Pattern, SynthSpec};
use mtc_core::metrics::{flow_loss, psnr, psnr_frames};
use mtc_core::planner::{alpha, build_quality_matrix};
use mtc_core::stream::{
    assemble_stream, decode_stream, evaluate_predictor, predict_keyframes, train_predictor,
    KeyframePredictor, TrainOptions,
};
use mtc_core::tensor::{segment_video, SegmentedVideo};
use mtc_core::{
    AlphaStats, CodecConfig, Frame, KeyframeEmbedding, LatentStream, PositionPolicy,
    QualityFunctionKind, QualityMatrix, VideoSegment,
};

fn noise_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
    Frame::new(h, w, 3, (0..h * w * 3).map(|_| rng.gen::<f32>()).collect()).unwrap()
}

fn grating(frames: usize, speed: f64, seed: u64) -> SegmentedVideo {
    let spec = SynthSpec {
        pattern: Pattern::DriftGrating,
        speed,
        frames,
        seed,
        ..SynthSpec::default()
    };
    segment_video(&generate(&spec).unwrap(), 17).unwrap()
}

fn streams(n: usize, policy: PositionPolicy, seed: u64) -> Vec<LatentStream> {
    let cfg = CodecConfig::default();
    let emb = KeyframeEmbedding::new(0.5, policy).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let video = grating(51, rng.gen_range(0.0..2.0), rng.gen());
            let latents: Vec<_> = video
                .segments()
                .iter()
                .map(|x| encode_segment(x, [4, 8, 16][rng.gen_range(0..3)], &cfg).unwrap())
                .collect();
            assemble_stream(&latents, emb).unwrap()
        })
        .collect()
}

/// Exhaustive SAD block matching written directly from the definition.
fn oracle_flow_l1(prev: &Frame, next: &Frame) -> f64 {
    let (h, w, ch) = prev.dims();
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    let mut total = 0i64;
    let mut blocks = 0i64;
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            let mut best: Option<(f64, i32, i32, i32)> = None;
            for dy in -4i32..=4 {
                for dx in -4i32..=4 {
                    let mut cost = 0f64;
                    for y in by..(by + 8).min(h) {
                        for x in bx..(bx + 8).min(w) {
                            let ny = clamp(y as i64 + dy as i64, h);
                            let nx = clamp(x as i64 + dx as i64, w);
                            for c in 0..ch {
                                cost += (prev.get(y, x, c) - next.get(ny, nx, c)).abs() as f64;
                            }
                        }
                    }
                    let key = (cost, dy.abs() + dx.abs(), dy, dx);
                    let better = match best {
                        None => true,
                        Some(b) => (key.0, key.1, key.2, key.3) < (b.0, b.1, b.2, b.3),
                    };
                    if better {
                        best = Some(key);
                    }
                }
            }
            let b = best.unwrap();
            total += b.1 as i64;
            blocks += 1;
        }
    }
    total as f64 / blocks as f64
}

#[test]
fn motion_term_matches_block_oracle_on_shifting_video() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = noise_frame(&mut rng, 32, 32);
    let frames: Vec<Frame> = (0..5)
        .map(|t| {
            Frame::from_fn(32, 32, 3, |y, x, c| base.get(y, x.saturating_sub(t), c)).unwrap()
        })
        .collect();
    let x = VideoSegment::new(frames.clone()).unwrap();
    let l = flow_loss(&x, &x).unwrap();
    let want = (0..4)
        .map(|t| oracle_flow_l1(&frames[t + 1], &frames[t]))
        .sum::<f64>()
        / 4.0;
    assert_eq!(l.motion, want);
    assert!(l.motion > 0.5 && l.motion <= 1.0, "motion {}", l.motion);
    assert_eq!(l.total, l.quality + l.motion);
}

#[test]
fn noise_matrix_matches_recomputation() {
    let cfg = CodecConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let frames: Vec<Frame> = (0..34).map(|_| noise_frame(&mut rng, 16, 16)).collect();
    let video = segment_video(&frames, 17).unwrap();
    let q = build_quality_matrix(&video, &cfg.analysis_rates, QualityFunctionKind::Psnr, &cfg)
        .unwrap();
    for (i, x) in video.segments().iter().enumerate() {
        for &r in &cfg.analysis_rates {
            let want = psnr(x, &reconstruct_at_rate(x, r, &cfg).unwrap()).unwrap();
            assert_eq!(q.get(i, r), Some(want));
        }
    }
}

#[test]
fn begin_markers_are_learned_exactly() {
    let train = streams(12, PositionPolicy::Begin, 1);
    let out = train_predictor(&train, TrainOptions::default()).unwrap();
    assert_eq!(evaluate_predictor(&out.predictor, &train).unwrap().accuracy, 1.0);
    for s in &streams(4, PositionPolicy::Begin, 2) {
        let det = predict_keyframes(s, &out.predictor).unwrap();
        assert_eq!(Some(det.starts.as_slice()), s.keyframes());
    }
}

#[test]
fn two_segment_round_trip_follows_the_plan() {
    let cfg = CodecConfig::default();
    let emb = KeyframeEmbedding::new(0.5, PositionPolicy::Begin).unwrap();
    let pred = train_predictor(&streams(12, PositionPolicy::Begin, 3), TrainOptions::default())
        .unwrap()
        .predictor;
    let video = grating(34, 0.7, 9);
    for plan in [[4u32, 16], [16, 8], [8, 8]] {
        let latents: Vec<_> = video
            .segments()
            .iter()
            .zip(plan)
            .map(|(x, r)| encode_segment(x, r, &cfg).unwrap())
            .collect();
        let s = assemble_stream(&latents, emb).unwrap().without_sidecar();
        let d = decode_stream(&s, &pred, &cfg).unwrap();
        assert_eq!(d.frames.len(), 34);
        assert_eq!(d.rates, plan);
        assert!(!d.used_fallback());
    }
}

#[test]
fn unmarked_stream_still_decodes() {
    let cfg = CodecConfig::default();
    let s = &streams(1, PositionPolicy::None, 5)[0];
    let d = decode_stream(s, &KeyframePredictor::zeros(3), &cfg).unwrap();
    assert!(d.used_fallback());
    assert!(!d.frames.is_empty());
    assert_eq!(d.frames.len() % 17, 0);
    assert!(d.frames.iter().all(|f| f.dims() == (64, 64, 3)));
}

#[test]
fn static_round_trip_is_lossless_under_any_plan() {
    let cfg = CodecConfig::default();
    let emb = KeyframeEmbedding::new(0.5, PositionPolicy::Begin).unwrap();
    let spec = SynthSpec {
        pattern: Pattern::Static,
        frames: 51,
        seed: 2,
        ..SynthSpec::default()
    };
    let frames = generate(&spec).unwrap();
    let video = segment_video(&frames, 17).unwrap();
    let pred = train_predictor(&streams(12, PositionPolicy::Begin, 6), TrainOptions::default())
        .unwrap()
        .predictor;
    for plan in [[4u32, 8, 16], [16, 16, 16], [8, 4, 4]] {
        let latents: Vec<_> = video
            .segments()
            .iter()
            .zip(plan)
            .map(|(x, r)| encode_segment(x, r, &cfg).unwrap())
            .collect();
        let d = decode_stream(&assemble_stream(&latents, emb).unwrap(), &pred, &cfg).unwrap();
        assert_eq!(d.rates, plan);
        assert_eq!(psnr_frames(&d.frames, &frames).unwrap(), 100.0);
    }
}

proptest! {
    #[test]
    fn alpha_stays_in_unit_interval(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..9),
        flat in any::<bool>(),
    ) {
        let rows: Vec<Vec<f64>> = if flat { rows.iter().map(|r| vec![r[0]; 3]).collect() } else { rows };
        let q = QualityMatrix::from_rows(vec![4, 8, 16], &rows).unwrap();
        let stats = AlphaStats::from_matrix(&q);
        for i in 0..rows.len() {
            let a = alpha(&stats, i);
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn generation_is_reproducible(seed in any::<u64>(), speed in 0.0f64..3.0, p in 0usize..5) {
        let spec = SynthSpec {
            pattern: Pattern::ALL[p],
            speed,
            seed,
            height: 16,
            width: 16,
            frames: 17,
            ..SynthSpec::default()
        };
        prop_assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
    }
}
