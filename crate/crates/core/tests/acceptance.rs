//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::Array2;
use omnievent::config::PipelineConfig;
use omnievent::event_model::io::{encode_evt1, read_events_file};
use omnievent::event_model::{
    fuse, moving_blob_frames, synth_events, time_span, CameraGeometry, Event, EventBatch, MotionPattern,
    NormalizedEvent,
};
use omnievent::feature_tensorize::decode_omnx;
use omnievent::nn::{Adam, Ctx, Mat, Tape};
use omnievent::oracles::bench::{bench_patch_vs_knn, BenchOptions};
use omnievent::oracles::fuse_oracle;
use omnievent::pipeline::{tensorize_evt1_bytes, OmniEvent};
use omnievent::selfcheck::{
    codec_round_trip, grad_check_embed, grad_check_encoder_block, grad_check_sta, hilbert_adjacency_violations,
    GRAD_TOLERANCE,
};
use omnievent::serial_pipeline::{encode_points, grid_pool, receptive_field, serialize_codes, Branch};
use omnievent::sfc_codec::{Axes, CurveKind, CurveOrder};
use omnievent::sta_fusion::{StaConfig, StaFusion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_secs: f64) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || format!("took {:.1}s, limit {limit_secs}s", elapsed.as_secs_f64()))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn codec_bijection() -> Outcome {
    let start = Instant::now();
    let a = codec_round_trip(2, 10).map_err(|e| e.to_string())?;
    let b = codec_round_trip(3, 6).map_err(|e| e.to_string())?;
    within(start.elapsed(), 10.0)?;
    Ok(format!("{a} 2-D and {b} 3-D codes over all curve kinds"))
}

fn hilbert_adjacency() -> Outcome {
    let v = hilbert_adjacency_violations(8).map_err(|e| e.to_string())?;
    ensure(v == 0, || format!("{v} violations"))?;
    Ok("65535 consecutive pairs, 0 violations".into())
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut total = 0;
    for instance in 0..100 {
        let n = rng.gen_range(1..=10_000);
        let segments = rng.gen_range(1..=32);
        let (h, w) = (rng.gen_range(1..=12u16), rng.gen_range(1..=12u16));
        let duration = rng.gen_range(1e-3..10.0);
        let events: Vec<Event> = (0..n)
            .map(|_| {
                Event::new(
                    rng.gen_range(0..h),
                    rng.gen_range(0..w),
                    rng.gen_range(0.0..duration),
                    if rng.gen_bool(0.5) { 1 } else { -1 },
                )
            })
            .collect();
        let span = time_span(&events).ok_or("empty stream")?;
        let mut got = fuse(&events, segments, span).map_err(|e| e.to_string())?;
        let mut want = fuse_oracle(&events, segments, span);
        let key = |f: &omnievent::event_model::FusedEvent| (f.h, f.w, f.t_avg);
        got.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        want.sort_by(|a, b| key(a).partial_cmp(&key(b)).unwrap());
        ensure(got.len() == want.len(), || format!("instance {instance}: {} vs {} fused events", got.len(), want.len()))?;
        for (g, o) in got.iter().zip(&want) {
            let close = (g.t_avg - o.t_avg).abs() <= 1e-12 * o.t_avg.abs().max(f64::MIN_POSITIVE);
            ensure((g.h, g.w, g.p_acc, g.c) == (o.h, o.w, o.p_acc, o.c) && close, || {
                format!("instance {instance}: {g:?} vs {o:?}")
            })?;
        }
        total += n;
    }
    Ok(format!("100 instances, {total} events"))
}

fn run_cli(args: &[&str]) -> Result<std::process::Output, String> {
    Command::new(env!("CARGO_BIN_EXE_omnievent"))
        .args(args)
        .env_remove("OMNIEVENT_SEED")
        .output()
        .map_err(|e| e.to_string())
}

fn receptive_fields() -> Outcome {
    let rf = receptive_field(512, 5, 2).map_err(|e| e.to_string())?;
    ensure(rf == 524_288, || format!("receptive_field(512, 5, 2) = {rf}"))?;
    let out = run_cli(&["info"])?;
    ensure(out.status.success(), || format!("info exited {:?}", out.status.code()))?;
    let text = String::from_utf8_lossy(&out.stdout);
    let cfg = PipelineConfig::default();
    let mut seen = Vec::new();
    for branch in Branch::ALL {
        let b = cfg.branch(branch);
        let (p, y, l) = (b.enc_patch[0] as u64, b.y_schedule[0], b.pooling_layers() as u32);
        let expected = receptive_field(p, y, l).map_err(|e| e.to_string())?;
        let needle = format!("P={p} y={y} L={l} -> {expected}");
        let header = format!("branch {branch} ");
        let section = text.split(&header).nth(1).ok_or_else(|| format!("no `{header}` section"))?;
        let section = section.split("\nbranch ").next().unwrap_or(section);
        ensure(section.contains(&needle), || format!("branch {branch} section lacks `{needle}`"))?;
        seen.push(format!("{branch}={expected}"));
    }
    Ok(format!("524288; info {}", seen.join(" ")))
}

fn dense_grid_pooling() -> Outcome {
    let side = 256usize;
    let events: Vec<NormalizedEvent> = (0..side * side)
        .map(|k| {
            let (i, j) = (k / side, k % side);
            NormalizedEvent {
                h: 0,
                w: 0,
                x1: (i as f64 + 0.5) / side as f64,
                x2: (j as f64 + 0.5) / side as f64,
                x3: 0.0,
                p_acc: 0.0,
                c: 1.0,
            }
        })
        .collect();
    let n = events.len();
    let batch = EventBatch {
        events,
        geometry: CameraGeometry::new(1, 1, 0.2).unwrap(),
        segments: 1,
        t_min: 0.0,
        t_max: 0.0,
    };
    let order = CurveOrder::new(CurveKind::Hilbert, 2, 8).map_err(|e| e.to_string())?;
    let codes = encode_points(&batch, Axes::Spatial, &order).map_err(|e| e.to_string())?;
    let serialized = serialize_codes(codes, order, 512).map_err(|e| e.to_string())?;
    let features = Array2::from_shape_fn((n, 2), |(r, c)| (r * 2 + c) as f64);
    let (pooled, map) = grid_pool(&serialized, &features, 5).map_err(|e| e.to_string())?;
    ensure(map.n_groups == n / 32 && pooled.nrows() == n / 32, || format!("{} groups for {n} points", map.n_groups))?;
    ensure(map.group_sizes().iter().all(|&s| s == 32), || "unequal group sizes".into())?;
    Ok(format!("{n} points -> {} groups of 32", map.n_groups))
}

fn gradient_checks() -> Outcome {
    let start = Instant::now();
    let mut details = Vec::new();
    for (name, report) in
        [("encoder block", grad_check_encoder_block()), ("fusion stack", grad_check_sta()), ("embedding", grad_check_embed())]
    {
        let r = report.map_err(|e| format!("{name}: {e}"))?;
        ensure(r.max_rel_error < GRAD_TOLERANCE, || format!("{name}: max rel error {:.2e}", r.max_rel_error))?;
        details.push(format!("{name} {:.1e}", r.max_rel_error));
    }
    within(start.elapsed(), 60.0)?;
    Ok(details.join(", "))
}

fn sta_shape() -> Outcome {
    let cfg = StaConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = omnievent::nn::ParamStore::new();
    let sta = StaFusion::new(&mut store, "sta", cfg, &mut rng).map_err(|e| e.to_string())?;
    let mut shapes = Vec::new();
    for b in [1usize, 4] {
        let inputs: Vec<(Mat, Mat, Mat)> = (0..b)
            .map(|_| {
                let mut m = || Mat::from_shape_simple_fn((cfg.seq_len, cfg.channels), || rng.gen_range(-1.0..1.0));
                (m(), m(), m())
            })
            .collect();
        let out = sta.forward_batch(&store, &inputs).map_err(|e| e.to_string())?;
        ensure(out.dim() == (b, 4096, 128), || format!("B={b}: {:?}", out.dim()))?;
        ensure(out.iter().all(|v| v.is_finite()), || format!("B={b}: non-finite output"))?;
        shapes.push(format!("{:?}", out.dim()));
    }
    Ok(shapes.join(" "))
}

const TRAIN_CONFIG: &str = "height = 32\nwidth = 32\nsamples = 256\nsegments = 4\nseed = 1\n\
    s_enc_depths = [1]\ns_enc_channels = [8]\ns_enc_heads = [2]\ns_enc_patch = [64]\n\
    s_dec_depths = []\ns_dec_channels = []\ns_dec_heads = []\ns_dec_patch = []\ns_stride = []\ns_y_schedule = []\n\
    t_enc_depths = [1]\nt_enc_channels = [8]\nt_enc_heads = [2]\nt_enc_patch = [64]\n\
    t_dec_depths = []\nt_dec_channels = []\nt_dec_heads = []\nt_dec_patch = []\nt_stride = []\nt_y_schedule = []\n\
    st_enc_depths = [1]\nst_enc_channels = [8]\nst_enc_heads = [2]\nst_enc_patch = [64]\n\
    st_dec_depths = []\nst_dec_channels = []\nst_dec_heads = []\nst_dec_patch = []\nst_stride = []\nst_y_schedule = []\n\
    sta_channels = 8\nsta_rounds = 4\nsta_fc_hidden = 16\n";

/// Exactly `count` events of a blob moving along `pattern`, evenly thinned.
fn motion_clip(geometry: &CameraGeometry, pattern: MotionPattern, phase: f64, count: usize) -> Result<Vec<Event>, String> {
    let (frames, times) = moving_blob_frames(geometry, pattern, 16, 1.0, phase);
    let all = synth_events(&frames, &times, geometry).map_err(|e| e.to_string())?;
    ensure(all.len() >= count, || format!("{pattern:?} phase {phase}: only {} events", all.len()))?;
    Ok((0..count).map(|i| all[i * all.len() / count]).collect())
}

fn trainability() -> Outcome {
    let start = Instant::now();
    let config = PipelineConfig::from_toml_str(TRAIN_CONFIG).map_err(|e| e.to_string())?;
    let geometry = config.geometry;
    let mut model = OmniEvent::new(config, 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let head = model.store.add_xavier("head", 16, 2, &mut rng);

    let mut data = Vec::new();
    for (label, pattern) in [(0usize, MotionPattern::Horizontal), (1, MotionPattern::Vertical)] {
        for phase in [0.0, 0.3, 0.6] {
            let clip = motion_clip(&geometry, pattern, phase, 200)?;
            let batch = model.prepare(&clip, 1).map_err(|e| e.to_string())?;
            let mut target = Mat::zeros((1, 2));
            target[[0, label]] = 1.0;
            data.push((batch, target, label));
        }
    }

    let mut adam = Adam::new(&model.store, 0.01);
    let mut first = None;
    let mut last = f64::NAN;
    let mut correct = 0;
    let mut halved = None;
    for step in 0..200 {
        let grads = {
            let tape = Tape::recording();
            let ctx = Ctx::new(&tape, &model.store);
            let w = ctx.param(head);
            let mut loss = None;
            correct = 0;
            for (batch, target, label) in &data {
                let grid = model.grid_features(&ctx, batch, 1).map_err(|e| e.to_string())?;
                let logits = grid.mean_rows().matmul(&w);
                let scores = logits.value();
                let predicted = if scores[[0, 0]] >= scores[[0, 1]] { 0 } else { 1 };
                correct += usize::from(predicted == *label);
                let term = logits.sub(&ctx.constant(target.clone())).sum_squares();
                loss = Some(match loss {
                    None => term,
                    Some(acc) => term.add(&acc),
                });
            }
            let loss = loss.unwrap().scale(1.0 / data.len() as f64);
            last = loss.value()[[0, 0]];
            ctx.param_grads(&tape.backward(&loss))
        };
        let initial = *first.get_or_insert(last);
        if halved.is_none() && last <= 0.5 * initial {
            halved = Some(step);
        }
        adam.step(&mut model.store, &grads);
        within(start.elapsed(), 300.0)?;
    }
    let initial = first.unwrap_or(f64::NAN);
    let detail = format!("loss {initial:.4} -> {last:.4} after 200 steps, accuracy {correct}/{}", data.len());
    match halved {
        Some(step) => Ok(format!("{detail}, halved at step {step}, {:.0}s", start.elapsed().as_secs_f64())),
        None => Err(detail),
    }
}

fn complexity() -> Outcome {
    let report = bench_patch_vs_knn(&BenchOptions::default()).map_err(|e| e.to_string())?;
    let serialize = report.doubling_ratios("patch-vs-knn", |r| Some(r.serialize_secs));
    let knn = report.doubling_ratios("patch-vs-knn", |r| r.knn_secs);
    ensure(serialize.len() == 2 && knn.len() == 2, || "expected three sizes".into())?;
    let fmt = |v: &[(usize, usize, f64)]| v.iter().map(|(a, b, r)| format!("{a}->{b} {r:.2}")).collect::<Vec<_>>().join(", ");
    let detail = format!("serialize [{}] knn [{}]", fmt(&serialize), fmt(&knn));
    ensure(serialize.iter().all(|&(_, _, r)| r <= 2.5) && knn.iter().all(|&(_, _, r)| r >= 3.5), || detail.clone())?;
    Ok(detail)
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let input = fixture("ten_events.csv");
    let input = input.to_str().ok_or("non-utf8 path")?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let path = dir.path().join(format!("{run}.omnx"));
        let out = run_cli(&["tensorize", input, "--out", path.to_str().unwrap()])?;
        ensure(out.status.success(), || format!("run {run}: {}", String::from_utf8_lossy(&out.stderr)))?;
        outputs.push(std::fs::read(&path).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "runs differ".into())?;
    let tensor = decode_omnx(&outputs[0]).map_err(|e| e.to_string())?;
    ensure(tensor.dims == [180, 240, 132], || format!("dims {:?}", tensor.dims))?;
    let events = read_events_file(Path::new(input)).map_err(|e| e.to_string())?;
    let evt1 = encode_evt1(&events).map_err(|e| e.to_string())?;
    let library = tensorize_evt1_bytes(&evt1, "").map_err(|e| e.to_string())?;
    ensure(library == outputs[0], || "library output differs from the CLI artifact".into())?;
    Ok(format!("{} identical bytes, dims {:?}, library parity", outputs[0].len(), tensor.dims))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("codec exhaustive bijection", codec_bijection),
        ("hilbert adjacency", hilbert_adjacency),
        ("fusion oracle equivalence", fusion_oracle),
        ("receptive field", receptive_fields),
        ("dense-grid pooling count", dense_grid_pooling),
        ("gradient checks", gradient_checks),
        ("fusion shape contract", sta_shape),
        ("end-to-end trainability", trainability),
        ("complexity ordering", complexity),
        ("determinism", determinism),
    ];
    // optional name filters, as with the default test harness
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<_> = criteria.iter().filter(|(name, _)| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()))).collect();
    let mut failed = 0;
    for &(name, check) in &selected {
        let start = Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("{} of {} criteria passed", selected.len() - failed, selected.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
