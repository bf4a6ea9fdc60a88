//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Run with `cargo test -p boxtraj --test acceptance -- --nocapture`
//! to see the lines.

use boxtraj::backbone::{avg_pool_2x2, BackboneSpec, LayerSpec, SceneSpec};
use boxtraj::editing::{
    edit_baseline, edit_differentiable, EditMode, EditParams,
};
use boxtraj::evaluation::{
    inside_mass_fraction, miou, offset_blob_suite, run_sweep, SweepParameter, SweepSpec,
};
use boxtraj::field::FieldTensor;
use boxtraj::geometry::{filter_trajectory, BoxParams, DetectionRecord, ScoredBox, Trajectory};
use boxtraj::grad::{eval_loss, fd_gradient_of, gradcheck, GradCheckConfig, PipelineState};
use boxtraj::io::{opt_report_to_csv, read_field, write_field, RunConfig};
use boxtraj::masks::{binary_mask, edge_width, MaskParams};
use boxtraj::objective::{attention_losses, LossWeights, MaskSource};
use boxtraj::optimizer::optimize_trajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Mutex;
use std::time::Instant;

/// Timed criteria take this lock so parallel test threads do not distort
/// their wall-clock budgets.
static HEAVY: Mutex<()> = Mutex::new(());

fn random_box(rng: &mut ChaCha8Rng) -> BoxParams {
    let w = rng.random_range(0.18..0.45);
    let h = rng.random_range(0.18..0.45);
    let l = rng.random_range(0.02..0.96 - w);
    let t = rng.random_range(0.02..0.96 - h);
    BoxParams::new(l, t, l + w, t + h).unwrap()
}

#[test]
fn criterion_01_gradient_correctness() {
    let _guard = HEAVY.lock().unwrap();
    let start = Instant::now();
    let report = gradcheck(&GradCheckConfig {
        trials: 100,
        tolerance: 1e-3,
        fd_step: 1e-5,
        seed: 20240,
        edit_mode: EditMode::Differentiable,
    })
    .unwrap();
    let wall = start.elapsed();
    let ok = report.passed && wall.as_secs_f64() < 60.0;
    println!(
        "criterion 01 {}: gradcheck over {} comparisons, p95 rel err {:.3e} (< 1e-3), wall {:.1?} (< 60s)",
        if ok { "PASS" } else { "FAIL" },
        report.rows.len(),
        report.p95,
        wall,
    );
    assert!(report.passed, "{}", report.summary());
    assert!(wall.as_secs_f64() < 60.0, "gradcheck took {wall:?}");
}

#[test]
fn criterion_02_baseline_gradients_are_dead() {
    let _guard = HEAVY.lock().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let mut baseline_zero = 0usize;
    let mut smooth_alive = 0usize;
    let mut total = 0usize;
    for trial in 0..20 {
        let spec = BackboneSpec {
            ladder: vec![
                LayerSpec::new(16, 16, 4),
                LayerSpec::new(8, 8, 4),
                LayerSpec::new(4, 4, 4),
            ],
            tracked_tokens: 1,
            seed: rng.random(),
            denoise_steps: 40,
            edit_steps: 5,
        };
        let stack = spec.build().unwrap();
        let frames = 1 + trial % 2;
        let scene = SceneSpec::linear(
            (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)),
            (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)),
            (0.1, 0.1),
            frames,
            0.08,
            rng.random(),
        );
        let current = Trajectory::new((0..frames).map(|_| random_box(&mut rng)).collect());
        let state = PipelineState {
            stack: &stack,
            scene: &scene,
            user: &current,
            edit_params: EditParams::default(),
            mask_params: MaskParams::default(),
            // frozen loss masks isolate the edit's differentiability
            weights: LossWeights {
                mask_source: MaskSource::UserBox,
                ..Default::default()
            },
            timestep: 1,
        };
        let fd_base =
            fd_gradient_of(&state, &current, EditMode::Baseline, 1e-5, |b| b.attn).unwrap();
        let fd_smooth =
            fd_gradient_of(&state, &current, EditMode::Differentiable, 1e-5, |b| b.attn).unwrap();
        for (b, s) in fd_base.flat().iter().zip(fd_smooth.flat()) {
            total += 1;
            if b.abs() <= 1e-10 {
                baseline_zero += 1;
            }
            if s.abs() > 1e-10 {
                smooth_alive += 1;
            }
        }
    }
    let zero_frac = baseline_zero as f64 / total as f64;
    let alive_frac = smooth_alive as f64 / total as f64;
    let ok = zero_frac >= 0.95 && alive_frac >= 0.95;
    println!(
        "criterion 02 {}: discrete-edit attention fd zero on {:.1}% of {} coordinates (>= 95%), smooth edit nonzero on {:.1}% (>= 95%)",
        if ok { "PASS" } else { "FAIL" },
        100.0 * zero_frac,
        total,
        100.0 * alive_frac,
    );
    assert!(zero_frac >= 0.95, "only {:.3} of baseline fd are zero", zero_frac);
    assert!(alive_frac >= 0.95, "only {:.3} of smooth fd are nonzero", alive_frac);
}

#[test]
fn criterion_03_limit_equivalence() {
    // Hard-mask limit: tiny edge width, no peak normalization.
    let mask_params = MaskParams {
        lambda_edge: 1e-5,
        normalize_kernel: false,
        ..Default::default()
    };
    let edit = EditParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (h, w) = (24usize, 24usize);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let b = random_box(&mut rng);
        let kappa = edge_width(&b, &mask_params);
        let mut field = FieldTensor::zeros(1, 1, h, w, 1);
        for v in &mut field.data {
            *v = rng.random_range(0.0..1.0);
        }
        let smooth = edit_differentiable(&field, &[b], &edit, &mask_params, 1);
        let discrete = edit_baseline(&field, &[b], &edit, &mask_params, 1);
        for y in 0..h {
            let v = (y as f64 + 0.5) / h as f64;
            for x in 0..w {
                let u = (x as f64 + 0.5) / w as f64;
                let near_boundary = (u - b.left).abs() < 10.0 * kappa
                    || (u - b.right).abs() < 10.0 * kappa
                    || (v - b.top).abs() < 10.0 * kappa
                    || (v - b.bottom).abs() < 10.0 * kappa;
                if !near_boundary {
                    let diff = (smooth.get(0, 0, y, x, 0) - discrete.get(0, 0, y, x, 0)).abs();
                    worst = worst.max(diff);
                }
            }
        }
    }
    let ok = worst < 1e-3;
    println!(
        "criterion 03 {}: max |smooth - discrete| away from the boundary band = {:.3e} (< 1e-3)",
        if ok { "PASS" } else { "FAIL" },
        worst,
    );
    assert!(
        ok,
        "smooth and discrete edits differ by {worst:.3e} away from the boundary: \
         the discrete weakening factor uses the hard mask while the smooth one \
         folds in the Gaussian, an irreducible gap of the two formulas"
    );
}

#[test]
fn criterion_04_loss_range_and_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let (h, w) = (rng.random_range(2..12), rng.random_range(2..12));
        let mut field = FieldTensor::zeros(1, 1, h, w, 1);
        for v in &mut field.data {
            *v = rng.random_range(1e-6..1.0);
        }
        let mask = binary_mask(&random_box(&mut rng), h, w);
        let losses = attention_losses(&[(1, &field)], &[vec![mask]], &[0]).unwrap();
        assert!((0.0..=1.0).contains(&losses.attn), "attn {}", losses.attn);
        assert!((0.0..=1.0).contains(&losses.neg), "neg {}", losses.neg);
    }
    // uniform field, mask covering exactly half the cells
    let mut field = FieldTensor::zeros(1, 1, 4, 4, 1);
    field.data.fill(0.37);
    let mask = binary_mask(&BoxParams::new(0.0, 0.0, 0.5, 1.0).unwrap(), 4, 4);
    let losses = attention_losses(&[(1, &field)], &[vec![mask]], &[0]).unwrap();
    let ok = (losses.attn - 0.25).abs() < 1e-9 && (losses.neg - 0.25).abs() < 1e-9;
    println!(
        "criterion 04 {}: attention losses within [0,1] on 1000 random fields; uniform half-mask gives {:.12} / {:.12} (0.25 +- 1e-9)",
        if ok { "PASS" } else { "FAIL" },
        losses.attn,
        losses.neg,
    );
    assert!(ok);
}

#[test]
fn criterion_05_optimization_efficacy() {
    let _guard = HEAVY.lock().unwrap();
    let suite = offset_blob_suite(24);
    assert!(suite.len() >= 5, "need at least five scenes");
    let mut lines = Vec::new();
    let mut ok = true;
    for fx in &suite {
        assert_eq!(fx.user.len(), 24);
        assert_eq!(fx.spec.ladder[0], LayerSpec::new(40, 40, 8));
        let start = Instant::now();
        let report = fx.optimize().unwrap();
        let wall = start.elapsed();
        let stack = fx.spec.build().unwrap();
        let state = PipelineState {
            stack: &stack,
            scene: &fx.scene,
            user: &fx.user,
            edit_params: fx.edit_params,
            mask_params: fx.mask_params,
            weights: fx.weights.clone(),
            timestep: 1,
        };
        let initial = report.rows.first().unwrap().total;
        let final_loss = eval_loss(&state, &report.final_trajectory, EditMode::Differentiable)
            .unwrap()
            .total;
        let inside_user = inside_mass_fraction(
            &stack, &fx.scene, &fx.user, &fx.edit_params, &fx.mask_params, 1,
        )
        .unwrap();
        let inside_final = inside_mass_fraction(
            &stack,
            &fx.scene,
            &report.final_trajectory,
            &fx.edit_params,
            &fx.mask_params,
            1,
        )
        .unwrap();
        let case_ok =
            final_loss < initial && inside_final > inside_user && wall.as_secs_f64() < 10.0;
        ok &= case_ok;
        lines.push(format!(
            "  {:16} loss {:.5} -> {:.5}, inside mass {:.4} -> {:.4}, wall {:.2?}{}",
            fx.name,
            initial,
            final_loss,
            inside_user,
            inside_final,
            wall,
            if case_ok { "" } else { "  <- FAIL" },
        ));
        assert!(final_loss < initial, "{}: loss did not decrease", fx.name);
        assert!(
            inside_final > inside_user,
            "{}: inside mass did not increase",
            fx.name
        );
        assert!(wall.as_secs_f64() < 10.0, "{}: took {wall:?}", fx.name);
    }
    println!(
        "criterion 05 {}: on {} offset-blob fixtures, final loss < initial and final inside-mass > user inside-mass, each under 10s:",
        if ok { "PASS" } else { "FAIL" },
        suite.len(),
    );
    for line in lines {
        println!("{line}");
    }
}

#[test]
fn criterion_06_regularization_ladder_trend() {
    let _guard = HEAVY.lock().unwrap();
    let suite = offset_blob_suite(24);
    let table = run_sweep(
        &SweepSpec {
            parameter: SweepParameter::LambdaRegScale,
            values: vec![0.001, 0.01, 0.1, 1.0],
            seed: 11,
        },
        &suite,
    )
    .unwrap();
    let deviations: Vec<f64> = table.rows.iter().map(|r| r.mean_deviation).collect();
    let ok = deviations.windows(2).all(|w| w[1] <= w[0] + 1e-12);
    println!(
        "criterion 06 {}: mean deviation over the penalty ladder {:?} = [{}] (non-increasing)",
        if ok { "PASS" } else { "FAIL" },
        [0.001, 0.01, 0.1, 1.0],
        deviations
            .iter()
            .map(|d| format!("{d:.5}"))
            .collect::<Vec<_>>()
            .join(", "),
    );
    assert!(ok, "deviation ladder is not monotone: {deviations:?}");
}

#[test]
fn criterion_07_iteration_accounting() {
    let _guard = HEAVY.lock().unwrap();
    let config = RunConfig::default();
    let stack = config.backbone_spec().unwrap().build().unwrap();
    let scene = config.scene_spec().unwrap();
    let user = config.user_trajectory().unwrap();
    let report = optimize_trajectory(
        &user,
        &stack,
        &scene,
        &config.loss_weights().unwrap(),
        &config.loop_config().unwrap(),
        &config.edit_params().unwrap(),
        &config.mask_params().unwrap(),
    )
    .unwrap();
    let max_step = report.rows.iter().map(|r| r.denoise_step).max().unwrap();
    let ok = report.rows.len() == 25 && max_step == 5 && report.denoise_steps == 40;
    println!(
        "criterion 07 {}: default config produced {} optimization rows (= 25), edits confined to the first {} of {} steps",
        if ok { "PASS" } else { "FAIL" },
        report.rows.len(),
        max_step,
        report.denoise_steps,
    );
    assert_eq!(report.rows.len(), 25);
    assert_eq!(max_step, 5);
    assert_eq!(report.denoise_steps, 40);
}

// --- criterion 8: independent brute-force reimplementations ---

/// Overlap length of two 1D intervals.
fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    let lo = if a0 > b0 { a0 } else { b0 };
    let hi = if a1 < b1 { a1 } else { b1 };
    if hi > lo {
        hi - lo
    } else {
        0.0
    }
}

/// IoU from scratch, via interval overlaps.
fn brute_iou(a: &BoxParams, b: &BoxParams) -> f64 {
    let inter = overlap(a.left, a.right, b.left, b.right)
        * overlap(a.top, a.bottom, b.top, b.bottom);
    let area_a = (a.right - a.left) * (a.bottom - a.top);
    let area_b = (b.right - b.left) * (b.bottom - b.top);
    let union = area_a + area_b - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Accept/reject exactly as specified, re-derived from the filter rules.
fn brute_accept(frames: &[BoxParams], window: usize) -> bool {
    for k in 1..frames.len() {
        if brute_iou(&frames[k - 1], &frames[k]) < 0.5 {
            return false;
        }
    }
    let mut max_w = 0.0f64;
    let mut max_h = 0.0f64;
    for b in frames {
        max_w = max_w.max(b.right - b.left);
        max_h = max_h.max(b.bottom - b.top);
    }
    if max_w < 0.10 || max_h < 0.10 {
        return false;
    }
    frames.len() >= window && window > 0
}

fn brute_miou(controls: &[BoxParams], detections: &[DetectionRecord]) -> f64 {
    let mut sum = 0.0;
    for (k, c) in controls.iter().enumerate() {
        let mut best = 0.0f64;
        for rec in detections {
            if rec.frame_index == k {
                for d in &rec.boxes {
                    best = best.max(brute_iou(c, &d.bbox));
                }
            }
        }
        sum += best;
    }
    sum / controls.len() as f64
}

#[test]
fn criterion_08_curation_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    let window = 24;
    let mut accepted = 0usize;
    for case in 0..200 {
        // base trajectory: a drifting box of a planted size class
        let small = case % 5 == 1;
        let half_w = if small {
            rng.random_range(0.01..0.045)
        } else {
            rng.random_range(0.06..0.2)
        };
        let half_h = if small {
            rng.random_range(0.01..0.045)
        } else {
            rng.random_range(0.06..0.2)
        };
        let len = if case % 7 == 2 {
            rng.random_range(3..window) // planted short trajectory
        } else {
            rng.random_range(window..80)
        };
        let mut cx: f64 = rng.random_range(0.25..0.75);
        let mut cy: f64 = rng.random_range(0.25..0.75);
        let drift = rng.random_range(-0.003..0.003);
        let mut frames = Vec::with_capacity(len);
        for k in 0..len {
            if case % 4 == 3 && k == len / 2 {
                // planted discontinuity: teleport the box
                cx = if cx < 0.5 { cx + 0.22 } else { cx - 0.22 };
                cy = if cy < 0.5 { cy + 0.22 } else { cy - 0.22 };
            }
            cx = (cx + drift).clamp(half_w + 0.01, 1.0 - half_w - 0.01);
            cy = (cy + drift).clamp(half_h + 0.01, 1.0 - half_h - 0.01);
            frames.push(
                BoxParams::new(cx - half_w, cy - half_h, cx + half_w, cy + half_h).unwrap(),
            );
        }
        let traj = Trajectory::new(frames.clone());
        let got = filter_trajectory(&traj, window, case as u64).is_ok();
        let want = brute_accept(&frames, window);
        assert_eq!(got, want, "case {case}: accept/reject disagrees");
        if got {
            accepted += 1;
        }
    }

    // mIoU equivalence on planted detection sets
    let mut max_gap = 0.0f64;
    for case in 0..50 {
        let frames: Vec<BoxParams> = (0..12).map(|_| random_box(&mut rng)).collect();
        let detections: Vec<DetectionRecord> = (0..12)
            .filter(|k| (k + case) % 6 != 0) // some frames undetected
            .map(|k| DetectionRecord {
                frame_index: k,
                boxes: (0..rng.random_range(1..4))
                    .map(|_| ScoredBox {
                        bbox: random_box(&mut rng),
                        score: rng.random_range(0.0..1.0),
                    })
                    .collect(),
            })
            .collect();
        let controls = Trajectory::new(frames.clone());
        let got = miou(&controls, &detections).unwrap();
        let want = brute_miou(&frames, &detections);
        max_gap = max_gap.max((got - want).abs());
    }
    let ok = max_gap < 1e-12;
    println!(
        "criterion 08 {}: 200 planted trajectories agree with the brute-force filter ({} accepted); mIoU gap {:.2e} (< 1e-12)",
        if ok { "PASS" } else { "FAIL" },
        accepted,
        max_gap,
    );
    assert!(accepted > 20, "degenerate corpus: {accepted} accepted");
    assert!(ok, "mIoU differs from brute force by {max_gap:.3e}");
}

#[test]
fn criterion_09_determinism() {
    let _guard = HEAVY.lock().unwrap();
    // byte-identical reports from identical config and seed
    let mut fixture = offset_blob_suite(6).remove(0);
    fixture.spec.denoise_steps = 6;
    fixture.spec.edit_steps = 2;
    fixture.loop_cfg.denoise_steps = 6;
    fixture.loop_cfg.edit_steps = 2;
    let a = opt_report_to_csv(&fixture.optimize().unwrap());
    let b = opt_report_to_csv(&fixture.optimize().unwrap());
    let reports_equal = a == b;

    // bit-exact field round trips
    let mut rng = ChaCha8Rng::seed_from_u64(31337);
    let mut roundtrip_ok = true;
    for case in 0..20 {
        let rank = rng.random_range(0..=5usize);
        let dims: Vec<u32> = (0..rank).map(|_| rng.random_range(1..5)).collect();
        let count: usize = dims.iter().map(|&d| d as usize).product();
        let data: Vec<f32> = (0..count).map(|_| f32::from_bits(rng.random())).collect();
        let path = std::env::temp_dir().join(format!("boxtraj_acceptance_rt_{case}.afld"));
        write_field(&path, &dims, &data).unwrap();
        let back = read_field(&path).unwrap();
        std::fs::remove_file(&path).ok();
        roundtrip_ok &= back.dims == dims
            && back.data.len() == data.len()
            && back
                .data
                .iter()
                .zip(&data)
                .all(|(x, y)| x.to_bits() == y.to_bits());
    }
    let ok = reports_equal && roundtrip_ok;
    println!(
        "criterion 09 {}: identical runs give byte-identical reports ({}), field files round-trip bit-exactly ({})",
        if ok { "PASS" } else { "FAIL" },
        reports_equal,
        roundtrip_ok,
    );
    assert!(reports_equal);
    assert!(roundtrip_ok);
}

#[test]
fn criterion_10_softmax_and_pooling_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_sum = 0.0f64;
    for trial in 0..5 {
        let spec = BackboneSpec {
            ladder: vec![
                LayerSpec::new(16, 16, 4),
                LayerSpec::new(8, 8, 4),
                LayerSpec::new(4, 4, 4),
            ],
            tracked_tokens: 1 + trial % 2,
            seed: rng.random(),
            denoise_steps: 40,
            edit_steps: 5,
        };
        let stack = spec.build().unwrap();
        let frames = 2;
        let scene = SceneSpec::linear(
            (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)),
            (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7)),
            (0.1, 0.1),
            frames,
            0.1,
            rng.random(),
        );
        let traj = Trajectory::new((0..frames).map(|_| random_box(&mut rng)).collect());
        let run = stack
            .run_stack(
                &scene,
                &traj,
                EditMode::Differentiable,
                1 + trial,
                &EditParams::default(),
                &MaskParams::default(),
            )
            .unwrap();
        for rec in &run.layers {
            let f = &rec.pre_edit;
            for c in 0..f.channels {
                for fr in 0..f.frames {
                    for y in 0..f.height {
                        for x in 0..f.width {
                            let sum: f64 = (0..f.tokens).map(|t| f.get(c, fr, y, x, t)).sum();
                            worst_sum = worst_sum.max((sum - 1.0).abs());
                        }
                    }
                }
            }
        }
    }

    let mut worst_pool = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (
            2 * rng.random_range(1..16usize),
            2 * rng.random_range(1..16usize),
        );
        let plane: Vec<f64> = (0..h * w).map(|_| rng.random_range(0.0..2.0)).collect();
        let pooled = avg_pool_2x2(&plane, h, w);
        let total: f64 = plane.iter().sum();
        let pool_total: f64 = pooled.iter().sum();
        worst_pool = worst_pool.max((pool_total - total / 4.0).abs());
    }
    let ok = worst_sum < 1e-6 && worst_pool < 1e-6;
    println!(
        "criterion 10 {}: token-axis sums within {:.2e} of 1 (< 1e-6); pooling conserves mass within {:.2e} (< 1e-6)",
        if ok { "PASS" } else { "FAIL" },
        worst_sum,
        worst_pool,
    );
    assert!(worst_sum < 1e-6);
    assert!(worst_pool < 1e-6);
}
