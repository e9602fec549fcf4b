//! Acceptance gate: eleven correctness criteria covering the similarity
//! gradient, the warp, the optimizer reference, frame selection, attack
//! trends, budget soundness, metric formulas, frame locality, and CLI
//! determinism. Each criterion prints one `PASS`/`FAIL` line (written
//! straight to the process stderr so the lines survive test-output capture),
//! and the test fails if any criterion does.

use anyhow::{bail, ensure, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use savt::adam::{adam_step, AdamParams, AdamState};
use savt::attack::{
    optimize_perturbation, AblationMode, AttackConfig, AttackResult, FrameMask, Perturbation,
};
use savt::autodiff::Graph;
use savt::data::{
    generate_synthetic_dataset, read_tensor, write_dataset, SynthConfig, VideoRecord,
};
use savt::metrics::{
    aap, average_iterations, fooling_rate, l21_distance, transfer_matrix, DistanceKind,
};
use savt::models::{save_model, train, Arch, ClassifierSpec, TrainConfig};
use savt::selector::{select_frames_bo_traced, select_frames_brute, BoConfig, FramePolicy};
use savt::ssim::{local_ssim, ssim_gradient, video_ssim, video_ssim_graph, SsimConfig};
use savt::tensor::Tensor;
use savt::warp::{warp, warp_grad, FlowField};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

/// Fooling rates of the three ablation modes on the 200-video benchmark
/// against the trained 3-D convolution model (first-frame policy, k = 1,
/// iteration cap 100, per-video seeds 0..200). Recorded from a fixed-seed
/// run; the benchmark is deterministic, so later runs must reproduce them
/// exactly.
const RECORDED_FR_COMBINED: f64 = 0.51;
const RECORDED_FR_NOISE: f64 = 0.505;
const RECORDED_FR_SPATIAL: f64 = 0.0;

const BIN: &str = env!("CARGO_BIN_EXE_savt");
const CSV_HEADER: &str = "id,model,frame_policy,mode,k,success,iterations,ssim_distance,\
                          l21_distance,pred_label,true_label,wall_ms";

/// Writes a line to the real stderr, bypassing libtest's output capture so
/// the per-criterion verdicts are visible in a normal `cargo test` run.
fn announce(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

fn criterion(failures: &mut Vec<String>, n: usize, what: &str, outcome: Result<String>) {
    match outcome {
        Ok(detail) => announce(&format!("criterion {n:2} ({what}): PASS — {detail}")),
        Err(e) => {
            announce(&format!("criterion {n:2} ({what}): FAIL — {e:#}"));
            failures.push(format!("criterion {n} ({what}): {e:#}"));
        }
    }
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Accumulates the frame-locality evidence produced by the attacks of
/// criteria 6–8.
#[derive(Default)]
struct Locality {
    checked: usize,
    violations: Vec<String>,
}

impl Locality {
    /// Records whether every unselected frame of `adv` is bit-identical to
    /// the corresponding frame of `x`.
    fn check(&mut self, tag: &str, x: &Tensor, adv: &Tensor, mask: &[bool]) {
        self.checked += 1;
        let frame_len = x.len() / x.shape()[0];
        for (t, &selected) in mask.iter().enumerate() {
            if selected {
                continue;
            }
            let range = t * frame_len..(t + 1) * frame_len;
            if !bits_equal(&x.data()[range.clone()], &adv.data()[range]) {
                self.violations.push(format!("{tag}: unselected frame {t} was modified"));
                return;
            }
        }
    }
}

fn run_binary(args: &[&str]) -> Result<()> {
    let out = Command::new(BIN).args(args).output().context("spawning the binary")?;
    ensure!(
        out.status.success(),
        "binary failed: {}\nstderr: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
    Ok(())
}

struct RowLite {
    id: String,
    success: bool,
    ssim_distance: f64,
    l21_distance: f64,
}

fn parse_rows(path: &Path) -> Result<Vec<RowLite>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    ensure!(lines.next() == Some(CSV_HEADER), "unexpected CSV header in {}", path.display());
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        ensure!(f.len() == 12, "malformed row {line:?}");
        rows.push(RowLite {
            id: f[0].to_string(),
            success: f[5] == "1",
            ssim_distance: f[7].parse().context("ssim_distance")?,
            l21_distance: f[8].parse().context("l21_distance")?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Criterion bodies
// ---------------------------------------------------------------------------

/// Analytic similarity gradient vs central finite differences and vs the
/// autodiff graph, on 100 random video pairs.
fn c1_ssim_gradient() -> Result<String> {
    let start = Instant::now();
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let step = 1e-6;
    let mut worst_fd = 0.0f64;
    let mut worst_auto = 0.0f64;
    for _ in 0..100 {
        let x = Tensor::uniform(&[2, 8, 8, 1], 0.0, 1.0, &mut rng);
        let xhat = Tensor::uniform(&[2, 8, 8, 1], 0.0, 1.0, &mut rng);
        let analytic = ssim_gradient(&x, &xhat, &cfg)?;

        let mut probe = xhat.clone();
        for i in 0..probe.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + step;
            let plus = video_ssim(&x, &probe, &cfg)?;
            probe.data_mut()[i] = orig - step;
            let minus = video_ssim(&x, &probe, &cfg)?;
            probe.data_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * step);
            let an = analytic.data()[i];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
            worst_fd = worst_fd.max(rel);
        }

        let mut g = Graph::new();
        let leaf = g.leaf(xhat.clone());
        let root = video_ssim_graph(&mut g, &x, leaf, &cfg)?;
        g.backward(root)?;
        let auto = g.grad(leaf).context("autodiff gradient missing")?;
        worst_auto = worst_auto.max(analytic.max_abs_diff(auto)?);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(worst_fd < 1e-4, "finite-difference relative error {worst_fd:.3e} ≥ 1e-4");
    ensure!(worst_auto < 1e-8, "autodiff gap {worst_auto:.3e} ≥ 1e-8");
    ensure!(secs < 30.0, "runtime {secs:.1} s ≥ 30 s");
    Ok(format!(
        "100 pairs: max FD relative error {worst_fd:.2e}, max autodiff gap {worst_auto:.2e}, \
         {secs:.1} s"
    ))
}

/// Similarity of a video with itself is exactly 1 with an exactly-zero
/// gradient, and every window score lies in [-1, 1].
fn c2_ssim_bounds() -> Result<String> {
    let cfg = SsimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst_self = 0.0f64;
    let mut worst_grad = 0.0f64;
    let mut worst_local = 0.0f64;
    for _ in 0..100 {
        let x = Tensor::uniform(&[2, 8, 8, 1], 0.0, 1.0, &mut rng);
        worst_self = worst_self.max((video_ssim(&x, &x, &cfg)? - 1.0).abs());
        let grad = ssim_gradient(&x, &x, &cfg)?;
        worst_grad = worst_grad.max(grad.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));

        let a = Tensor::uniform(&[8, 8], 0.0, 1.0, &mut rng);
        let b = Tensor::uniform(&[8, 8], 0.0, 1.0, &mut rng);
        worst_local = worst_local.max(local_ssim(&a, &b, &cfg)?.abs());
        // Anti-correlated pair: the structure term goes negative.
        let inv = a.map(|v| 1.0 - v);
        worst_local = worst_local.max(local_ssim(&a, &inv, &cfg)?.abs());
    }
    // Degenerate windows: constant against constant.
    for (lo, hi) in [(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)] {
        let a = Tensor::filled(&[8, 8], lo);
        let b = Tensor::filled(&[8, 8], hi);
        worst_local = worst_local.max(local_ssim(&a, &b, &cfg)?.abs());
    }
    ensure!(worst_self < 1e-12, "self-similarity off by {worst_self:.3e}");
    ensure!(worst_grad < 1e-12, "stationary gradient has magnitude {worst_grad:.3e}");
    ensure!(worst_local <= 1.0 + 1e-12, "window score magnitude {worst_local} exceeds 1");
    Ok(format!(
        "self-similarity error {worst_self:.1e}, stationary gradient {worst_grad:.1e}, max \
         |window score| {worst_local:.6}"
    ))
}

/// Warp oracles: bit-exact zero-flow identity, hand-traced half-pixel and
/// integer shifts, and finite-difference checks on interior flow components.
fn c3_warp_oracles() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(303);

    // Zero flow is the identity, bit for bit.
    let x = Tensor::uniform(&[3, 6, 7, 2], 0.0, 1.0, &mut rng);
    let out = warp(&x, &FlowField::zeros(3, 6, 7), None)?;
    ensure!(bits_equal(x.data(), out.data()), "zero flow changed the video");

    // Hand-traced oracles on a 2×3 frame with values 1..6.
    let video = Tensor::from_vec(&[1, 2, 3, 1], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])?;
    // Row displacement +0.5 everywhere: rows blend; the bottom row clamps.
    let mut flow = FlowField::zeros(1, 2, 3);
    for c in 0..3 {
        for r in 0..2 {
            let o = flow.tensor().offset4(0, 0, r, c);
            flow.tensor_mut().data_mut()[o] = 0.5;
        }
    }
    let half = warp(&video, &flow, None)?;
    let want_half = [2.5, 3.5, 4.5, 4.0, 5.0, 6.0];
    for (got, want) in half.data().iter().zip(want_half) {
        ensure!((got - want).abs() < 1e-12, "half-pixel shift: got {got}, want {want}");
    }
    // Column displacement +1 everywhere: columns shift left; the last clamps.
    let mut flow = FlowField::zeros(1, 2, 3);
    for c in 0..3 {
        for r in 0..2 {
            let o = flow.tensor().offset4(0, 1, r, c);
            flow.tensor_mut().data_mut()[o] = 1.0;
        }
    }
    let shifted = warp(&video, &flow, None)?;
    let want_shift = [2.0, 3.0, 3.0, 5.0, 6.0, 6.0];
    for (got, want) in shifted.data().iter().zip(want_shift) {
        ensure!((got - want).abs() < 1e-12, "integer shift: got {got}, want {want}");
    }

    // Finite differences on 100 interior flow components. Component values
    // are kept away from integers so the sample point stays inside one
    // bilinear cell (and away from the border clamp) during the probe.
    let (t, h, w, ch) = (2usize, 5usize, 6usize, 2usize);
    let x = Tensor::uniform(&[t, h, w, ch], 0.0, 1.0, &mut rng);
    let upstream = Tensor::uniform(&[t, h, w, ch], -1.0, 1.0, &mut rng);
    let mut flow = FlowField::zeros(t, h, w);
    {
        let base = Tensor::uniform(flow.tensor().shape(), 0.05, 0.35, &mut rng);
        let signs = Tensor::uniform(flow.tensor().shape(), -1.0, 1.0, &mut rng);
        for (i, v) in flow.tensor_mut().data_mut().iter_mut().enumerate() {
            *v = base.data()[i] * signs.data()[i].signum();
        }
    }
    let loss = |f: &FlowField| -> Result<f64> {
        let warped = warp(&x, f, None)?;
        Ok(warped.data().iter().zip(upstream.data()).map(|(a, b)| a * b).sum())
    };
    let (_, analytic) = warp_grad(&x, &flow, None, &upstream)?;
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut draw = ChaCha8Rng::seed_from_u64(304);
    for _ in 0..100 {
        use rand::Rng as _;
        let ti = draw.gen_range(0..t);
        let axis = draw.gen_range(0..2);
        let r = draw.gen_range(1..h - 1);
        let c = draw.gen_range(1..w - 1);
        let o = flow.tensor().offset4(ti, axis, r, c);
        let orig = flow.tensor().data()[o];
        flow.tensor_mut().data_mut()[o] = orig + eps;
        let plus = loss(&flow)?;
        flow.tensor_mut().data_mut()[o] = orig - eps;
        let minus = loss(&flow)?;
        flow.tensor_mut().data_mut()[o] = orig;
        let fd = (plus - minus) / (2.0 * eps);
        let an = analytic.data()[o];
        let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-7);
        worst = worst.max(rel);
    }
    ensure!(worst < 1e-4, "flow gradient FD relative error {worst:.3e} ≥ 1e-4");
    Ok(format!(
        "identity bit-exact, hand oracles within 1e-12, flow FD relative error {worst:.2e}"
    ))
}

/// The optimizer reference trajectory and the zero-gradient no-op.
fn c4_adam_reference() -> Result<String> {
    let cfg = AdamParams::default();
    let mut params = Tensor::from_vec(&[1], vec![0.0])?;
    let mut state = AdamState::new(&[1]);
    let g = Tensor::from_vec(&[1], vec![1.0])?;
    adam_step(&mut state, &mut params, &g, &cfg)?;
    let step1 = (params.data()[0] - (-0.009999999900000002)).abs();
    ensure!(step1 < 1e-12, "first step off by {step1:.3e}");
    adam_step(&mut state, &mut params, &g, &cfg)?;
    let step2 = (params.data()[0] - (-0.019999999799999932)).abs();
    ensure!(step2 < 1e-12, "second step off by {step2:.3e}");

    let mut frozen = Tensor::from_vec(&[3], vec![0.25, -1.5, 3.0])?;
    let before = frozen.clone();
    adam_step(&mut AdamState::new(&[3]), &mut frozen, &Tensor::zeros(&[3]), &cfg)?;
    ensure!(
        bits_equal(before.data(), frozen.data()),
        "zero gradient moved the parameters"
    );
    Ok(format!("two-step trajectory within {:.1e}, zero gradient is a no-op", step1.max(step2)))
}

/// Surrogate-guided selection agrees with brute force on crafted videos
/// whose class evidence sits in a single frame.
fn c5_bo_vs_brute() -> Result<String> {
    let start = Instant::now();
    let t8 = SynthConfig {
        num_videos: 80,
        frames: 8,
        height: 8,
        width: 8,
        channels: 1,
        num_classes: 4,
        shape_size: 3,
        noise_level: 0.05,
        informative_frames: None,
        seed: 11,
    };
    let data = generate_synthetic_dataset(&t8)?;
    let mut model = ClassifierSpec::init(Arch::Conv3d, 4, [8, 8, 8, 1], 0)?;
    train(&mut model, &data, &TrainConfig { epochs: 10, lr: 5e-3, batch: 8, seed: 0 })?;

    let crafted: Vec<VideoRecord> = (0..20)
        .map(|i| {
            let cfg = SynthConfig {
                num_videos: 4,
                informative_frames: Some(vec![2 + (i % 6)]),
                seed: 1000 + i as u64,
                ..t8.clone()
            };
            Ok(generate_synthetic_dataset(&cfg)?
                .into_iter()
                .nth(i % 4)
                .expect("four videos generated"))
        })
        .collect::<Result<_>>()?;

    let atk = AttackConfig::default();
    let seeds: Vec<u64> = (0..5).collect();
    let mut agree = 0usize;
    let mut total = 0usize;
    for rec in &crafted {
        let base = BoConfig::default_for(8);
        let (brute_mask, scores) =
            select_frames_brute(&rec.video, rec.label, &model, &base, &atk)?;
        ensure!(scores.len() == 8, "brute force scored {} frames, not 8", scores.len());
        for &seed in &seeds {
            let bo = BoConfig { seed, ..base };
            let trace = select_frames_bo_traced(&rec.video, rec.label, &model, 1, &bo, &atk)?;
            ensure!(
                trace.evaluations <= bo.max_evals,
                "surrogate search used {} evaluations with a budget of {}",
                trace.evaluations,
                bo.max_evals
            );
            total += 1;
            if trace.mask.bits() == brute_mask.bits() {
                agree += 1;
            }
        }
    }
    let frac = agree as f64 / total as f64;
    let secs = start.elapsed().as_secs_f64();
    ensure!(frac >= 0.9, "agreement {frac} over {total} (video, seed) pairs is below 0.9");
    ensure!(secs < 300.0, "runtime {secs:.1} s ≥ 300 s");
    Ok(format!(
        "agreement {agree}/{total} across 20 videos × {} seeds, {secs:.1} s",
        seeds.len()
    ))
}

/// Combining additive noise and the spatial warp fools at least as often as
/// either component alone, on the 200-video benchmark.
fn c6_ablation_trend(
    bench: &[VideoRecord],
    conv3d: &ClassifierSpec,
    accuracy: f64,
    locality: &mut Locality,
) -> Result<(String, f64)> {
    ensure!(accuracy >= 0.9, "the target model only reached accuracy {accuracy}");
    let mask = FrameMask::first_k(16, 1)?;
    let mut frs = Vec::new();
    for mode in [AblationMode::Combined, AblationMode::NoiseOnly, AblationMode::SpatialOnly] {
        let mut results = Vec::with_capacity(bench.len());
        for (i, rec) in bench.iter().enumerate() {
            let cfg = AttackConfig { mode, seed: i as u64, ..AttackConfig::default() };
            let res = optimize_perturbation(&rec.video, rec.label, &mask, conv3d, &cfg)?;
            locality.check(
                &format!("ablation {} video {}", mode.name(), rec.id),
                &rec.video,
                &res.adversarial,
                mask.bits(),
            );
            results.push(res);
        }
        frs.push(fooling_rate(&results)?);
    }
    let (fr_combined, fr_noise, fr_spatial) = (frs[0], frs[1], frs[2]);
    ensure!(
        fr_combined >= fr_noise && fr_combined >= fr_spatial,
        "combined {fr_combined} is below noise {fr_noise} or spatial {fr_spatial}"
    );
    ensure!(
        fr_combined == RECORDED_FR_COMBINED
            && fr_noise == RECORDED_FR_NOISE
            && fr_spatial == RECORDED_FR_SPATIAL,
        "fixed-seed regression: measured (combined {fr_combined}, noise {fr_noise}, spatial \
         {fr_spatial}) but recorded ({RECORDED_FR_COMBINED}, {RECORDED_FR_NOISE}, \
         {RECORDED_FR_SPATIAL})"
    );
    Ok((
        format!(
            "model accuracy {accuracy}; FR combined {fr_combined} ≥ noise {fr_noise}, spatial \
             {fr_spatial}; values match the recording"
        ),
        fr_combined,
    ))
}

/// Surrogate-guided frame selection beats the first-frame policy when the
/// class evidence sits away from frame 0.
fn c7_selection_trend(locality: &mut Locality) -> Result<String> {
    let cfg = SynthConfig { informative_frames: Some(vec![5]), ..SynthConfig::default() };
    let records = generate_synthetic_dataset(&cfg)?;
    let mut gru = ClassifierSpec::init(Arch::FrameCnnRecurrent, 4, [16, 16, 16, 3], 0)?;
    train(&mut gru, &records, &TrainConfig { epochs: 12, lr: 5e-3, batch: 8, seed: 0 })?;
    let accuracy = gru.accuracy(&records)?;
    ensure!(accuracy >= 0.9, "the recurrent model only reached accuracy {accuracy}");

    let mut stats = Vec::new();
    for policy in [FramePolicy::Bo, FramePolicy::First] {
        let mut results = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            let bo = BoConfig { seed: i as u64, ..BoConfig::default_for(16) };
            let atk = AttackConfig {
                lambda: AttackConfig::default_lambda(Arch::FrameCnnRecurrent),
                seed: i as u64,
                ..AttackConfig::default()
            };
            let mask = policy.resolve(&rec.video, rec.label, &gru, 1, &bo, &atk)?;
            let res = optimize_perturbation(&rec.video, rec.label, &mask, &gru, &atk)?;
            locality.check(
                &format!("selection {} video {}", policy.name(), rec.id),
                &rec.video,
                &res.adversarial,
                mask.bits(),
            );
            results.push(res);
        }
        stats.push((fooling_rate(&results)?, average_iterations(&results)?));
    }
    let (fr_bo, ani_bo) = stats[0];
    let (fr_first, ani_first) = stats[1];
    ensure!(fr_bo >= fr_first, "FR: surrogate {fr_bo} < first-frame {fr_first}");
    match (ani_bo, ani_first) {
        (Some(b), Some(f)) => ensure!(b <= f, "ANI: surrogate {b} > first-frame {f}"),
        // No first-frame attack succeeded: its ANI is vacuously worse.
        (_, None) => {}
        (None, Some(_)) => bail!("surrogate selection never succeeded but first-frame did"),
    }
    Ok(format!(
        "model accuracy {accuracy}; FR bo {fr_bo} ≥ first {fr_first}; ANI bo {:?} ≤ first {:?}",
        ani_bo, ani_first
    ))
}

/// Attacks run under a similarity or norm budget respect it, verified from
/// the adversarial tensors the binary writes to disk.
fn c8_budget_soundness(
    c8_data_dir: &Path,
    c8_model_dir: &Path,
    records: &[VideoRecord],
    out_root: &Path,
    locality: &mut Locality,
) -> Result<String> {
    let ssim_cfg = SsimConfig::default();
    let by_id: std::collections::HashMap<&str, &VideoRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut details = Vec::new();
    for (budget, tag) in [("ssim:0.96", "ssim"), ("l21:0.08", "l21")] {
        let csv = out_root.join(format!("c8_{tag}.csv"));
        let adv_dir = out_root.join(format!("c8_{tag}_adv"));
        run_binary(&[
            "attack",
            "--dataset",
            c8_data_dir.to_str().unwrap(),
            "--model",
            c8_model_dir.to_str().unwrap(),
            "--frames",
            "first",
            "--k",
            "4",
            "--lambda",
            "0.3",
            "--max-iters",
            "100",
            "--budget",
            budget,
            "--seed",
            "0",
            "--jobs",
            "1",
            "--out",
            csv.to_str().unwrap(),
            "--save-adv",
            adv_dir.to_str().unwrap(),
        ])?;
        let rows = parse_rows(&csv)?;
        ensure!(rows.len() == records.len(), "expected {} rows", records.len());
        let mut successes = 0usize;
        let mut max_dist = 0.0f64;
        for row in &rows {
            let rec = by_id.get(row.id.as_str()).context("unknown video id")?;
            let adv = read_tensor(&adv_dir.join(format!("{}.savt", row.id)))?;
            locality.check(
                &format!("budget {budget} video {}", row.id),
                &rec.video,
                &adv,
                &[true, true, true, true, false, false, false, false],
            );
            successes += usize::from(row.success);
            match tag {
                "ssim" => {
                    let sim = video_ssim(&rec.video, &adv, &ssim_cfg)?;
                    ensure!(
                        sim >= 0.96 - 1e-9,
                        "video {}: recomputed similarity {sim} violates the 0.96 budget",
                        row.id
                    );
                    // The row value was computed with the unselected frames
                    // skipped (they score exactly 1), so the full
                    // recomputation may differ by summation order only.
                    let gap = (row.ssim_distance - (1.0 - sim)).abs();
                    ensure!(
                        gap <= 1e-12,
                        "video {}: emitted distance is {gap:.2e} from the recomputation",
                        row.id
                    );
                    max_dist = max_dist.max(1.0 - sim);
                }
                _ => {
                    let d = l21_distance(&adv.sub(&rec.video)?)?;
                    ensure!(
                        d <= 0.08 + 1e-9,
                        "video {}: recomputed norm {d} violates the 0.08 budget",
                        row.id
                    );
                    ensure!(
                        d == row.l21_distance,
                        "video {}: emitted norm {} differs from recomputed {d}",
                        row.id,
                        row.l21_distance
                    );
                    max_dist = max_dist.max(d);
                }
            }
        }
        if tag == "ssim" {
            // The unbudgeted attack overshoots this budget several-fold, so
            // the projection must have been engaged for the check to mean
            // anything.
            ensure!(
                max_dist >= 0.02,
                "largest similarity distance {max_dist} suggests the budget never bound"
            );
        }
        details.push(format!("{budget}: {successes}/{} fooled, max distance {max_dist:.4}", rows.len()));
    }
    Ok(details.join("; "))
}

/// The aggregate metric formulas on hand-built inputs, and the self-transfer
/// convention.
fn c9_metric_formulas(
    c8_spec: &ClassifierSpec,
    records: &[VideoRecord],
) -> Result<String> {
    let dummy = |success: bool, iterations: usize, dist: f64| -> AttackResult {
        AttackResult {
            success,
            iterations,
            perturbation: Perturbation::zeros(&[1, 1, 1, 1]).expect("static shape"),
            adversarial: Tensor::zeros(&[1, 1, 1, 1]),
            ssim_distance: dist,
            l21_distance: dist,
            pred_label: 0,
            objective: 0.0,
        }
    };
    let d_max = 0.1;
    let kind = DistanceKind::SsimDistance;
    // No success: the penalty term alone.
    let all_fail = [dummy(false, 3, 0.9), dummy(false, 5, 0.8)];
    ensure!(aap(&all_fail, d_max, kind)? == 0.1, "all-fail case");
    // Half success at distance 0.05.
    let half = [dummy(true, 4, 0.05), dummy(false, 9, 0.7)];
    let got = aap(&half, d_max, kind)?;
    ensure!((got - 0.075).abs() < 1e-12, "midpoint case: got {got}");
    // All success at distance 0.05.
    let all = [dummy(true, 4, 0.05), dummy(true, 6, 0.05)];
    ensure!(aap(&all, d_max, kind)? == 0.05, "all-success case");

    let mix =
        [dummy(true, 6, 0.1), dummy(true, 10, 0.1), dummy(true, 2, 0.1), dummy(false, 9, 0.1)];
    ensure!(fooling_rate(&mix)? == 0.75, "fooling rate hand case");
    let ani = average_iterations(&mix[..2])?;
    ensure!(ani == Some(8.0), "iteration average hand case: got {ani:?}");
    ensure!(
        average_iterations(&all_fail)?.is_none(),
        "iteration average must be undefined with no successes"
    );

    let atk = AttackConfig { lambda: 0.3, max_iters: 60, ..AttackConfig::default() };
    let bo = BoConfig::default_for(8);
    let matrix = transfer_matrix(
        std::slice::from_ref(c8_spec),
        &records[..8],
        &FramePolicy::First,
        4,
        &bo,
        &atk,
    )?;
    ensure!(
        matrix[0][0] == Some(1.0),
        "self-transfer must be exactly 1, got {:?}",
        matrix[0][0]
    );
    Ok("penalty mixes 0.1 / 0.075 / 0.05, rate 0.75, iteration mean 8, self-transfer exactly 1"
        .into())
}

fn c10_frame_locality(locality: &Locality) -> Result<String> {
    ensure!(locality.checked > 0, "no attacks were checked");
    ensure!(
        locality.violations.is_empty(),
        "{} of {} attacks modified unselected frames; first: {}",
        locality.violations.len(),
        locality.checked,
        locality.violations[0]
    );
    Ok(format!("{} attacks left every unselected frame bit-identical", locality.checked))
}

/// The attack command is byte-deterministic under a fixed seed, and its CSV
/// agrees with the in-process benchmark run.
fn c11_determinism(bench_dir: &Path, model_dir: &Path, out_root: &Path) -> Result<String> {
    let a = out_root.join("det_a.csv");
    let b = out_root.join("det_b.csv");
    for out in [&a, &b] {
        run_binary(&[
            "attack",
            "--dataset",
            bench_dir.to_str().unwrap(),
            "--model",
            model_dir.to_str().unwrap(),
            "--frames",
            "first",
            "--k",
            "1",
            "--max-iters",
            "100",
            "--seed",
            "0",
            "--jobs",
            "1",
            "--out",
            out.to_str().unwrap(),
        ])?;
    }
    let bytes_a = std::fs::read(&a)?;
    ensure!(bytes_a == std::fs::read(&b)?, "two fixed-seed runs differ");
    let rows = parse_rows(&a)?;
    ensure!(rows.len() == 200, "expected 200 rows, got {}", rows.len());
    let fr = rows.iter().filter(|r| r.success).count() as f64 / rows.len() as f64;
    ensure!(
        fr == RECORDED_FR_COMBINED,
        "CSV fooling rate {fr} differs from the in-process benchmark {RECORDED_FR_COMBINED}"
    );
    Ok(format!("byte-identical CSVs ({} bytes, 200 rows), FR {fr} matches the benchmark", bytes_a.len()))
}

// ---------------------------------------------------------------------------

#[test]
fn acceptance() {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("tempdir");
    let out_root: PathBuf = dir.path().to_path_buf();

    announce("acceptance: generating the benchmark and training shared models…");
    let bench = generate_synthetic_dataset(&SynthConfig::default()).expect("benchmark");
    let mut conv3d =
        ClassifierSpec::init(Arch::Conv3d, 4, [16, 16, 16, 3], 0).expect("conv3d init");
    train(&mut conv3d, &bench, &TrainConfig { epochs: 20, lr: 5e-3, batch: 8, seed: 0 })
        .expect("conv3d training");
    let conv3d_acc = conv3d.accuracy(&bench).expect("accuracy");
    let bench_dir = out_root.join("bench");
    write_dataset(&bench_dir, &bench).expect("writing the benchmark");
    let conv3d_dir = out_root.join("conv3d");
    save_model(&conv3d_dir, &conv3d).expect("saving conv3d");

    // Small dataset + model shared by criteria 8 and 9.
    let c8_cfg = SynthConfig {
        num_videos: 40,
        frames: 8,
        height: 8,
        width: 8,
        channels: 1,
        num_classes: 2,
        shape_size: 3,
        noise_level: 0.05,
        informative_frames: None,
        seed: 7,
    };
    let c8_records = generate_synthetic_dataset(&c8_cfg).expect("small dataset");
    let mut c8_model =
        ClassifierSpec::init(Arch::FrameCnnMeanpool, 2, [8, 8, 8, 1], 3).expect("meanpool init");
    train(&mut c8_model, &c8_records, &TrainConfig { epochs: 12, lr: 5e-3, batch: 8, seed: 3 })
        .expect("meanpool training");
    let c8_data_dir = out_root.join("c8_data");
    write_dataset(&c8_data_dir, &c8_records).expect("writing the small dataset");
    let c8_model_dir = out_root.join("c8_model");
    save_model(&c8_model_dir, &c8_model).expect("saving the small model");

    let mut failures = Vec::new();
    let mut locality = Locality::default();

    criterion(&mut failures, 1, "ssim gradient", c1_ssim_gradient());
    criterion(&mut failures, 2, "ssim bounds", c2_ssim_bounds());
    criterion(&mut failures, 3, "warp oracles", c3_warp_oracles());
    criterion(&mut failures, 4, "optimizer reference", c4_adam_reference());
    criterion(&mut failures, 5, "selection vs brute force", c5_bo_vs_brute());
    let c6 = c6_ablation_trend(&bench, &conv3d, conv3d_acc, &mut locality);
    criterion(&mut failures, 6, "ablation trend", c6.map(|(detail, _)| detail));
    criterion(&mut failures, 7, "selection trend", c7_selection_trend(&mut locality));
    criterion(
        &mut failures,
        8,
        "budget soundness",
        c8_budget_soundness(&c8_data_dir, &c8_model_dir, &c8_records, &out_root, &mut locality),
    );
    criterion(&mut failures, 9, "metric formulas", c9_metric_formulas(&c8_model, &c8_records));
    criterion(&mut failures, 10, "frame locality", c10_frame_locality(&locality));
    criterion(
        &mut failures,
        11,
        "determinism",
        c11_determinism(&bench_dir, &conv3d_dir, &out_root),
    );

    announce(&format!(
        "acceptance: {} of 11 criteria passed in {:.0} s",
        11 - failures.len(),
        started.elapsed().as_secs_f64()
    ));
    assert!(failures.is_empty(), "failed criteria:\n{}", failures.join("\n"));
}
