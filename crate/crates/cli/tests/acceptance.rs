//! Acceptance checks. Each criterion prints one PASS/FAIL line; any failure
//! makes the binary exit nonzero.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use unroll_core::evalharness::{
    atomicity_buckets, calibration_corpus, depth_metrics, pose_metrics, pose_noise_calibration,
    run_ablation, soft_tifa_gm, think_cost_calibration, AblationConfig, MetricReport, SuiteKind, SuiteSpec,
};
use unroll_core::grid::Grid;
use unroll_core::microworld::geometry::{relative_pose, CameraPose, PoseRecord, Vec3};
use unroll_core::microworld::render::{render_view_sized, DepthMap, Intrinsics};
use unroll_core::microworld::scene::{generate_scene, sample_camera, Difficulty};
use unroll_core::policy::{Engine, Pipeline, PolicyConfig, DEPTH_PIPELINE_NAMES, PRESET_NAMES};
use unroll_core::workspace::{
    cost_of, hash_state, replay, ContentHash, ContextItem, Payload, Provenance, Trace, Workspace, WorkspaceError,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn run_criterion(n: usize, name: &str, limit: Duration, f: impl FnOnce() -> Check) -> bool {
    let started = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let elapsed = started.elapsed();
    let (pass, detail) = match result {
        Ok(d) if elapsed <= limit => (true, d),
        Ok(d) => (false, format!("{d}; took {elapsed:.2?}, limit {limit:?}")),
        Err(e) => (false, e),
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] criterion {n:>2} {name} ({:.2}s): {detail}", elapsed.as_secs_f64());
    pass
}

// ---------------------------------------------------------------- 1

fn item_pool() -> Vec<ContextItem> {
    let engine = Engine::default();
    let spatial = SuiteSpec::new(SuiteKind::Spatial, 2, 3).build().unwrap();
    let depth = SuiteSpec::new(SuiteKind::Depth, 2, 1).build().unwrap();
    let mut items = Vec::new();
    for (t, name) in [
        (&spatial.tasks[2], "plus_nvs_visual"),
        (&spatial.tasks[2], "combined"),
        (&depth.tasks[0], "depth_caption"),
    ] {
        let p = Pipeline::preset(name).unwrap();
        let run = engine.run_unroll(&t.input(), &t.scene, &p, &PolicyConfig::default()).unwrap();
        items.extend(run.workspace.items().iter().map(|i| (**i).clone()));
    }
    items
}

fn text_item(words: usize, step: u32) -> ContextItem {
    ContextItem::new(
        Payload::Text(vec!["sphere"; words].join(" ")),
        Provenance {
            step_index: step,
            primitive_id: "acceptance".into(),
            rng_seed: step as u64,
            parent_hash: ContentHash::default(),
        },
    )
    .unwrap()
}

fn workspace_algebra() -> Check {
    let pool = item_pool();
    let n = pool.len();
    let item = move || {
        let pool = pool.clone();
        prop_oneof![
            (0..40usize, 0..9u32).prop_map(|(w, s)| text_item(w, s)),
            (0..n).prop_map(move |i| pool[i].clone()),
        ]
    };
    let seq = |max: usize| prop::collection::vec(item(), 0..max);
    let strategy = (seq(4), seq(4), seq(4), 1u64..20_000);
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |(a, b, c, budget)| {
            let id = Workspace::new(budget).unwrap();
            // Identity.
            prop_assert_eq!(id.compose(&[]).unwrap().to_bytes(), id.to_bytes());
            if let Ok(w) = id.compose(&a) {
                prop_assert_eq!(w.compose(&[]).unwrap().to_bytes(), w.to_bytes());
            }
            // Associativity, including agreement on failure.
            let left = id.compose(&a).and_then(|x| x.compose(&b)).and_then(|x| x.compose(&c));
            let bc: Vec<ContextItem> = b.iter().chain(&c).cloned().collect();
            let right = id.compose(&a).and_then(|x| x.compose(&bc));
            match (&left, &right) {
                (Ok(l), Ok(r)) => prop_assert_eq!(l.to_bytes(), r.to_bytes()),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "associativity differs on failure"),
            }
            // Budget safety.
            let all: Vec<ContextItem> = a.iter().chain(&bc).cloned().collect();
            let total: u64 = all.iter().map(|i| i.cost()).sum();
            match id.compose(&all) {
                Ok(w) => {
                    prop_assert!(w.spent() <= w.budget());
                    prop_assert_eq!(w.spent(), total);
                    // Cost recomputability.
                    let re: u64 = w.items().iter().map(|i| cost_of(i.payload()).unwrap()).sum();
                    prop_assert_eq!(re, w.spent());
                    let back = Workspace::from_bytes(&w.to_bytes()).unwrap();
                    prop_assert_eq!(hash_state(&back), hash_state(&w));
                }
                Err(WorkspaceError::BudgetExceeded { needed, available }) => {
                    prop_assert!(needed > available && needed == total);
                }
                Err(e) => prop_assert!(false, "unexpected {}", e),
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok("identity, associativity, budget safety and cost recomputation hold on 1000 cases".into())
}

// ---------------------------------------------------------------- 2

fn determinism_and_replay() -> Check {
    let mut tasks = Vec::new();
    for kind in [SuiteKind::Spatial, SuiteKind::Depth, SuiteKind::Counting, SuiteKind::Generation] {
        tasks.extend(SuiteSpec::new(kind, 41, 25).build().map_err(|e| e.to_string())?.tasks);
    }
    let engine = Engine::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (mut flips, mut detected) = (0usize, 0usize);
    let mut smallest: Option<Vec<u8>> = None;
    for (i, t) in tasks.iter().enumerate() {
        let name = match t.spec.kind {
            unroll_core::workspace::TaskKind::DepthEstimation => DEPTH_PIPELINE_NAMES[i % DEPTH_PIPELINE_NAMES.len()],
            _ => PRESET_NAMES[i % PRESET_NAMES.len()],
        };
        let p = Pipeline::preset(name).unwrap();
        let cfg = PolicyConfig {
            rng_seed: i as u64,
            ..PolicyConfig::default()
        };
        let a = engine.run_unroll(&t.input(), &t.scene, &p, &cfg).map_err(|e| e.to_string())?;
        let b = engine.run_unroll(&t.input(), &t.scene, &p, &cfg).map_err(|e| e.to_string())?;
        let bytes = a.trace.to_bytes();
        let back = Trace::from_bytes(&bytes).map_err(|e| e.to_string())?;
        let ws = replay(&back).map_err(|e| e.to_string())?;
        let h = hash_state(&a.workspace);
        ensure(hash_state(&b.workspace) == h, || format!("{} rerun differs", t.spec.id))?;
        ensure(hash_state(&ws) == h && back.final_hash() == h, || format!("{} replay differs", t.spec.id))?;
        for _ in 0..20 {
            flips += 1;
            detected += flip_detected(&bytes, rng.random_range(0..bytes.len()), rng.random_range(1..=255u8)) as usize;
        }
        if !a.trace.records.is_empty() && smallest.as_ref().is_none_or(|s| bytes.len() < s.len()) {
            smallest = Some(bytes);
        }
    }
    let small = smallest.ok_or("no nonempty trace")?;
    for at in 0..small.len() {
        flips += 1;
        detected += flip_detected(&small, at, 0x01) as usize;
    }
    ensure(detected == flips, || format!("{} of {flips} corruptions went unnoticed", flips - detected))?;
    Ok(format!(
        "{} runs replay bit-identically; {flips} single-byte corruptions all detected",
        tasks.len()
    ))
}

fn flip_detected(bytes: &[u8], at: usize, mask: u8) -> bool {
    let mut b = bytes.to_vec();
    b[at] ^= mask;
    Trace::from_bytes(&b).and_then(|t| replay(&t)).is_err()
}

// ---------------------------------------------------------------- 3

/// Nearest hit along a world-space ray; `t` is z-depth because the camera
/// frame direction has unit z.
fn brute_pixel(scene: &unroll_core::microworld::scene::Scene, origin: Vec3, dir: Vec3) -> (u32, f64) {
    let mut best = (0u32, f64::INFINITY);
    for o in scene.objects() {
        let oc = origin - o.center();
        let a = dir.dot(&dir);
        let b = 2.0 * oc.dot(&dir);
        let c = oc.dot(&oc) - o.radius * o.radius;
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            continue;
        }
        let roots = [(-b - disc.sqrt()) / (2.0 * a), (-b + disc.sqrt()) / (2.0 * a)];
        if let Some(&t) = roots.iter().find(|&&t| t > 1e-9) {
            if t < best.1 {
                best = (o.id, t);
            }
        }
    }
    best
}

fn microworld_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut hit_pixels = 0usize;
    for pair in 0..100u64 {
        let difficulty = Difficulty::ALL[pair as usize % 3];
        let scene = generate_scene(1000 + pair, difficulty).map_err(|e| e.to_string())?;
        let cam = sample_camera(&mut rng, scene.extent(), 60.0);
        let r = render_view_sized(&scene, &cam, 32, 32);
        let intr = Intrinsics::new(32, 32, cam.fov_deg());
        for row in 0..32 {
            for col in 0..32 {
                let dir = cam.rotation() * intr.pixel_ray(row, col);
                let (id, t) = brute_pixel(&scene, *cam.translation(), dir);
                let got = *r.ids.get(row, col);
                ensure(got == id, || format!("pair {pair} pixel ({row},{col}): render {got}, ray {id}"))?;
                if id != 0 {
                    hit_pixels += 1;
                    let d = *r.depth.get(row, col);
                    ensure((d - t).abs() <= 1e-9 * t.max(1.0), || format!("pair {pair} depth {d} vs {t}"))?;
                }
            }
        }
    }
    let pose = |rng: &mut ChaCha8Rng| {
        let axis = Vector3::new(rng.random_range(-3.1..3.1), rng.random_range(-3.1..3.1), rng.random_range(-3.1..3.1));
        let t = Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        CameraPose::new(UnitQuaternion::from_scaled_axis(axis), t, 60.0).unwrap()
    };
    let close = |a: &CameraPose, b: &CameraPose| {
        let (qa, qb) = (a.rotation().quaternion(), b.rotation().quaternion());
        (qa - qb).norm().min((qa + qb).norm()) < 1e-9 && (a.translation() - b.translation()).norm() < 1e-9
    };
    let id = CameraPose::identity();
    for i in 0..1000 {
        let (a, b, c) = (pose(&mut rng), pose(&mut rng), pose(&mut rng));
        let p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let ok = close(&a.compose(&a.inverse()), &id)
            && close(&a.inverse().compose(&a), &id)
            && close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)))
            && close(&a.compose(&relative_pose(&a, &b)), &b)
            && (a.camera_to_world(&a.world_to_camera(&p)) - p).norm() < 1e-9;
        ensure(ok, || format!("SE(3) identity failed on sample {i}"))?;
        let rec = PoseRecord::from_pose(&a);
        ensure(rec.to_string().parse::<PoseRecord>().ok() == Some(rec), || format!("pose record {i} round trip"))?;
    }
    Ok(format!(
        "100 renders match brute-force rays exactly ({hit_pixels} object pixels); 1000 SE(3) samples within 1e-9"
    ))
}

// ---------------------------------------------------------------- 4-6

fn ablation(kind: SuiteKind, size: usize, names: &[&str]) -> Result<MetricReport, String> {
    let suite = SuiteSpec::new(kind, 7, size).build().map_err(|e| e.to_string())?;
    let pipelines: Vec<Pipeline> = names.iter().map(|n| Pipeline::preset(n).unwrap()).collect();
    run_ablation(&suite, &pipelines, &AblationConfig::default()).map_err(|e| e.to_string())
}

fn metric(r: &MetricReport, p: &str, f: impl Fn(&unroll_core::evalharness::PipelineRow) -> Option<f64>) -> f64 {
    f(r.row(p).expect("row")).expect("metric")
}

fn spatial_ablation() -> Check {
    let r = ablation(SuiteKind::Spatial, 200, &["direct", "plus_pose_text", "plus_nvs_visual"])?;
    let acc = |p| metric(&r, p, |x| x.accuracy);
    let (d, pt, nvs) = (acc("direct"), acc("plus_pose_text"), acc("plus_nvs_visual"));
    let detail = format!("accuracy direct {d:.3}, plus_pose_text {pt:.3}, plus_nvs_visual {nvs:.3}");
    ensure(d + 0.10 <= pt + 1e-12 && pt <= nvs && nvs >= 0.95, || detail.clone())?;
    Ok(detail)
}

fn depth_ablation() -> Check {
    let r = ablation(
        SuiteKind::Depth,
        100,
        &["direct", "depth_caption", "generic_caption", "depth_caption_tokens"],
    )?;
    let a = |p| metric(&r, p, |x| x.abs_rel);
    let (none, dc, gc, dct) = (a("direct"), a("depth_caption"), a("generic_caption"), a("depth_caption_tokens"));
    let detail = format!(
        "AbsRel none {none:.4}, depth_caption {dc:.4}, generic_caption {gc:.4}, depth_caption+tokens {dct:.4}"
    );
    ensure(dc <= none - 0.02 && (gc - none).abs() <= 0.005 && dct <= dc - 0.01, || detail.clone())?;
    Ok(detail)
}

fn generation_ablation() -> Check {
    let r = ablation(SuiteKind::Generation, 200, &PRESET_NAMES)?;
    let gm = |p| metric(&r, p, |x| x.soft_tifa_gm);
    let curve = &r.row("direct").unwrap().atomicity;
    let ks: Vec<usize> = curve.keys().copied().collect();
    ensure(ks == (1..=8).collect::<Vec<_>>(), || format!("atom counts present {ks:?}"))?;
    let vals: Vec<f64> = curve.values().copied().collect();
    ensure(vals.windows(2).all(|w| w[1] <= w[0]), || format!("direct curve rises: {vals:?}"))?;
    let (d, s, l, c) = (gm("direct"), gm("text_think_short"), gm("text_think_long"), gm("combined"));
    ensure(l > s && s > d, || format!("GM long {l:.3}, short {s:.3}, direct {d:.3}"))?;
    for p in PRESET_NAMES {
        ensure(c >= gm(p), || format!("combined {c:.3} below {p} {:.3}", gm(p)))?;
    }
    let curve_s: Vec<String> = vals.iter().map(|v| format!("{v:.2}")).collect();
    Ok(format!(
        "direct curve [{}]; GM direct {d:.3} < short {s:.3} < long {l:.3}; combined {c:.3} is max",
        curve_s.join(" ")
    ))
}

// ---------------------------------------------------------------- 7-8

fn noise_calibration() -> Check {
    let mut parts = Vec::new();
    for sigma in [0.01, 0.05, 0.1] {
        let c = pose_noise_calibration(sigma, 10_000, 7).map_err(|e| e.to_string())?;
        let within = |s: f64| (s - sigma).abs() <= 0.05 * sigma;
        ensure(within(c.rot_std) && within(c.trans_std), || {
            format!("sigma {sigma}: rot_std {}, trans_std {}", c.rot_std, c.trans_std)
        })?;
        parts.push(format!("σ={sigma}: rot {:.4} trans {:.4}", c.rot_std, c.trans_std));
    }
    let z = pose_noise_calibration(0.0, 10_000, 7).map_err(|e| e.to_string())?;
    ensure(
        z.max_rot_err_deg == 0.0 && z.max_trans_err == 0.0 && z.max_trans_angle_deg == 0.0,
        || format!("σ=0 errors {} {} {}", z.max_rot_err_deg, z.max_trans_err, z.max_trans_angle_deg),
    )?;
    parts.push("σ=0 exactly (0,0,0)".into());
    Ok(parts.join("; "))
}

fn token_budget() -> Check {
    let corpus = calibration_corpus(7, 100).map_err(|e| e.to_string())?;
    let c = think_cost_calibration(&corpus).map_err(|e| e.to_string())?;
    let detail = format!("{} tasks: short {:.2}, long {:.2}", c.tasks, c.short_mean, c.long_mean);
    ensure(
        (80.0..=120.0).contains(&c.short_mean) && (200.0..=300.0).contains(&c.long_mean),
        || detail.clone(),
    )?;
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn rel_close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

fn brute_gm(s: &[f64]) -> f64 {
    s.iter().product::<f64>().powf(1.0 / s.len() as f64)
}

fn brute_buckets(rs: &[(usize, bool)]) -> BTreeMap<usize, f64> {
    let mut out = BTreeMap::new();
    for k in 1..=8 {
        let n = rs.iter().filter(|r| r.0 == k).count();
        if n > 0 {
            let hits = rs.iter().filter(|r| r.0 == k && r.1).count();
            out.insert(k, hits as f64 / n as f64);
        }
    }
    out
}

fn brute_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn brute_depth(pred: &DepthMap, gt: &DepthMap) -> (f64, f64) {
    let mut pairs = Vec::new();
    for row in 0..gt.grid.height() {
        for col in 0..gt.grid.width() {
            let (p, g) = (*pred.grid.get(row, col), *gt.grid.get(row, col));
            if *pred.valid.get(row, col) && *gt.valid.get(row, col) && p > 0.0 && g > 0.0 {
                pairs.push((p, g));
            }
        }
    }
    let s = brute_median(pairs.iter().map(|x| x.1).collect()) / brute_median(pairs.iter().map(|x| x.0).collect());
    let n = pairs.len() as f64;
    let abs_rel = pairs.iter().map(|&(p, g)| (s * p - g).abs() / g).sum::<f64>() / n;
    let d1 = pairs.iter().filter(|&&(p, g)| (s * p / g).max(g / (s * p)) < 1.25).count() as f64 / n;
    (abs_rel, d1)
}

fn quat_matrix(q: &UnitQuaternion<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
        2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
        2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y),
    )
}

fn brute_pose(pred: &CameraPose, gt: &CameraPose) -> (f64, f64, f64) {
    let r = quat_matrix(gt.rotation()).transpose() * quat_matrix(pred.rotation());
    let skew = ((r[(2, 1)] - r[(1, 2)]).powi(2) + (r[(0, 2)] - r[(2, 0)]).powi(2) + (r[(1, 0)] - r[(0, 1)]).powi(2)).sqrt();
    let rot = (skew / 2.0).atan2((r.trace() - 1.0) / 2.0).to_degrees();
    let (a, b) = (pred.translation(), gt.translation());
    let dist = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
    let (na, nb) = (a.norm(), b.norm());
    let angle = if na < 1e-9 || nb < 1e-9 {
        0.0
    } else {
        (a.dot(b) / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees()
    };
    (rot, dist, angle)
}

fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..100 {
        let n = rng.random_range(1..=12);
        let mut s: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..=1.0)).collect();
        if i % 10 == 0 {
            s[0] = 0.0;
        }
        let (got, want) = (soft_tifa_gm(&s).unwrap(), brute_gm(&s));
        ensure(rel_close(got, want), || format!("soft_tifa_gm {got} vs {want} on {s:?}"))?;
    }
    for _ in 0..100 {
        let n = rng.random_range(1..60);
        let rs: Vec<(usize, bool)> = (0..n).map(|_| (rng.random_range(1..=8), rng.random_bool(0.5))).collect();
        let (got, want) = (atomicity_buckets(&rs), brute_buckets(&rs));
        ensure(
            got.len() == want.len() && got.iter().zip(&want).all(|(a, b)| a.0 == b.0 && rel_close(*a.1, *b.1)),
            || format!("atomicity_buckets {got:?} vs {want:?}"),
        )?;
    }
    for i in 0..100 {
        let (w, h) = (rng.random_range(1..12), rng.random_range(1..12));
        let cells = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..w * h).map(|_| rng.random_range(0.1..8.0)).collect() };
        let mask = |rng: &mut ChaCha8Rng| -> Vec<bool> { (0..w * h).map(|_| rng.random_bool(0.8)).collect() };
        let mut vp = mask(&mut rng);
        let mut vg = mask(&mut rng);
        vp[0] = true;
        vg[0] = true;
        let pred = DepthMap { grid: Grid::from_cells(w, h, cells(&mut rng)).unwrap(), valid: Grid::from_cells(w, h, vp).unwrap() };
        let gt = DepthMap { grid: Grid::from_cells(w, h, cells(&mut rng)).unwrap(), valid: Grid::from_cells(w, h, vg).unwrap() };
        let got = depth_metrics(&pred, &gt).unwrap();
        let want = brute_depth(&pred, &gt);
        ensure(rel_close(got.abs_rel, want.0) && rel_close(got.delta1, want.1), || {
            format!("depth_metrics sample {i}: {got:?} vs {want:?}")
        })?;
    }
    for i in 0..100 {
        let mut q = || {
            let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(v[0], v[1], v[2], v[3]))
        };
        let (qa, qb) = (q(), q());
        let mut t = || Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
        let (ta, tb) = (t(), t());
        let pred = CameraPose::new(qa, ta, 60.0).unwrap();
        let gt = CameraPose::new(qb, tb, 60.0).unwrap();
        let got = pose_metrics(&pred, &gt);
        let want = brute_pose(&pred, &gt);
        ensure(
            rel_close(got.rot_err_deg, want.0) && rel_close(got.trans_err, want.1) && rel_close(got.trans_angle_deg, want.2),
            || format!("pose_metrics sample {i}: {got:?} vs {want:?}"),
        )?;
    }
    Ok("soft_tifa_gm, atomicity_buckets, depth_metrics, pose_metrics agree with brute force on 100 inputs each".into())
}

// ---------------------------------------------------------------- 10

fn unroll(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_unroll"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("unroll {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn schema_errors(schema: &str, doc: &serde_json::Value) -> Vec<String> {
    let schema: serde_json::Value = serde_json::from_str(schema).expect("schema parses");
    let v = jsonschema::validator_for(&schema).expect("schema compiles");
    v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn check_outputs(dir: &Path, expected_records: usize) -> Result<(), String> {
    let golden_header = include_str!("../../../docs/schemas/report_csv_header.txt").trim();
    let csv_text = std::fs::read_to_string(dir.join("report.csv")).map_err(|e| e.to_string())?;
    let header = csv_text.lines().next().unwrap_or_default();
    ensure(header == golden_header, || format!("csv header {header}"))?;

    let report_json = read_json(&dir.join("report.json"))?;
    let errs = schema_errors(include_str!("../../../docs/schemas/report.schema.json"), &report_json);
    ensure(errs.is_empty(), || format!("report.json: {}", errs.join("; ")))?;
    let plot = read_json(&dir.join("plot_data.json"))?;
    let errs = schema_errors(include_str!("../../../docs/schemas/plot_data.schema.json"), &plot);
    ensure(errs.is_empty(), || format!("plot_data.json: {}", errs.join("; ")))?;

    let report = MetricReport::from_json(&report_json.to_string()).map_err(|e| e.to_string())?;
    ensure(report.records.len() == expected_records, || format!("{} records", report.records.len()))?;
    let again = report.recompute();
    ensure(again.rows == report.rows, || "rows differ after recompute".into())?;
    ensure(again.to_csv() == csv_text, || "csv differs after recompute".into())?;
    ensure(again.plot_data() == plot, || "plot data differs after recompute".into())?;
    // Independent recount of two aggregates in record order.
    for row in &report.rows {
        let rs: Vec<_> = report.records.iter().filter(|r| r.pipeline == row.pipeline).collect();
        let mut cost = 0.0;
        for r in &rs {
            cost += r.cost as f64;
        }
        ensure(cost / rs.len() as f64 == row.mean_cost, || format!("{} mean_cost", row.pipeline))?;
        let graded: Vec<f64> = rs.iter().filter_map(|r| r.correct.map(|c| c as u8 as f64)).collect();
        if !graded.is_empty() {
            let mut s = 0.0;
            for g in &graded {
                s += g;
            }
            ensure(Some(s / graded.len() as f64) == row.accuracy, || format!("{} accuracy", row.pipeline))?;
        }
    }
    Ok(())
}

fn end_to_end_cli() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let presets = PRESET_NAMES.join(",");
    let mut parts = Vec::new();
    for kind in ["spatial", "generation"] {
        let suite = tmp.path().join(format!("{kind}.json"));
        let out = tmp.path().join(kind);
        let s = suite.to_str().unwrap();
        unroll(&["suite", "--kind", kind, "--seed", "7", "--size", "50", "--out", s])?;
        let table = unroll(&["ablate", "--suite", s, "-p", &presets, "--out", out.to_str().unwrap()])?;
        ensure(table.lines().count() > PRESET_NAMES.len(), || "table too short".into())?;
        check_outputs(&out, 50 * PRESET_NAMES.len())?;
        parts.push(format!("{kind} 50x{}", PRESET_NAMES.len()));
    }
    Ok(format!(
        "{}: CSV/JSON/plot data match golden schemas and recompute exactly",
        parts.join(", ")
    ))
}

fn main() {
    let secs = Duration::from_secs;
    let results = [
        run_criterion(1, "workspace algebra", secs(10), workspace_algebra),
        run_criterion(2, "determinism and replay", secs(30), determinism_and_replay),
        run_criterion(3, "micro-world oracles", secs(60), microworld_oracles),
        run_criterion(4, "spatial ablation", secs(120), spatial_ablation),
        run_criterion(5, "depth ablation", secs(120), depth_ablation),
        run_criterion(6, "generation compositionality", secs(120), generation_ablation),
        run_criterion(7, "pose noise calibration", secs(120), noise_calibration),
        run_criterion(8, "think token budget", secs(120), token_budget),
        run_criterion(9, "metric oracles", secs(60), metric_oracles),
        run_criterion(10, "end-to-end CLI", secs(300), end_to_end_cli),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
