use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::facts::Query;
use crate::microworld::geometry::{relative_pose, CameraPose, PoseRecord, DEFAULT_FOV_DEG};
use crate::microworld::scene::{generate_scene, sample_camera, Difficulty, Scene};
use crate::primitives::{builtin_registry, InvokeContext, NoiseSpec, Params};
use crate::seed;
use crate::workspace::{Payload, TaskInput, TaskKind, TaskSpec, Workspace};

use super::{pose_metrics, EvalError, SuiteKind, SuiteSpec, TaskSuite};

/// Tasks used to measure think-text costs: spatial, counting and generation
/// tasks in equal parts.
pub fn calibration_corpus(seed: u64, per_kind: usize) -> Result<Vec<TaskSuite>, EvalError> {
    [SuiteKind::Spatial, SuiteKind::Counting, SuiteKind::Generation]
        .into_iter()
        .map(|k| {
            let mut s = SuiteSpec::new(k, seed, per_kind);
            s.name = format!("calibration-{}", k.as_str());
            Ok(s.build()?)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinkCosts {
    pub tasks: usize,
    pub short_mean: f64,
    pub long_mean: f64,
}

pub fn think_cost_calibration(corpus: &[TaskSuite]) -> Result<ThinkCosts, EvalError> {
    let reg = builtin_registry();
    let mut short = Vec::new();
    let mut long = Vec::new();
    for suite in corpus {
        for t in &suite.tasks {
            let x = t.input();
            for (id, out) in [("text_think_short", &mut short), ("text_think_long", &mut long)] {
                let w = Workspace::new(u64::MAX).expect("positive budget");
                let ictx = InvokeContext {
                    step_index: 1,
                    session_seed: suite.seed,
                };
                let (items, _) = reg.invoke(id, &x, &w, &t.scene, &Params::new(), ictx)?;
                out.push(items.iter().map(|i| i.cost()).sum::<u64>() as f64);
            }
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok(ThinkCosts {
        tasks: short.len(),
        short_mean: mean(&short),
        long_mean: mean(&long),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sigma: f64,
    pub invocations: usize,
    /// Sample standard deviation of the rotation-vector error components in
    /// radians.
    pub rot_std: f64,
    /// Sample standard deviation of the translation error components.
    pub trans_std: f64,
    pub max_rot_err_deg: f64,
    pub max_trans_err: f64,
    pub max_trans_angle_deg: f64,
}

fn pose_tasks(seed: u64, n: usize) -> Vec<(TaskInput, Scene)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::mix(&[seed, i as u64]));
            let scene = generate_scene(rng.random(), Difficulty::Medium).expect("scene");
            let cams = vec![
                sample_camera(&mut rng, scene.extent(), DEFAULT_FOV_DEG),
                sample_camera(&mut rng, scene.extent(), DEFAULT_FOV_DEG),
            ];
            let spec = TaskSpec {
                id: format!("pose-{i:04}"),
                kind: TaskKind::Counting,
                query: Query::Count { category: None }.to_string(),
                cameras: cams,
                scale_hint: None,
            };
            (TaskInput::new(spec, &scene).expect("valid task"), scene)
        })
        .collect()
}

/// Ground truth as the primitive would report it noiselessly.
fn quantized(p: &CameraPose) -> CameraPose {
    PoseRecord::from_pose(p)
        .to_string()
        .parse::<PoseRecord>()
        .and_then(|r| r.to_pose(p.fov_deg()))
        .expect("record round trip")
}

fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Invokes `estimate_pose` with gaussian noise `sigma` and compares each
/// estimate with the quantized ground truth.
pub fn pose_noise_calibration(sigma: f64, invocations: usize, seed: u64) -> Result<NoiseCalibration, EvalError> {
    let noise = if sigma == 0.0 {
        NoiseSpec::none()
    } else {
        NoiseSpec::gaussian(sigma, seed)
    };
    let reg = builtin_registry().with_noise("estimate_pose", noise)?;
    let tasks = pose_tasks(seed, 100);
    let mut rot = Vec::with_capacity(invocations * 3);
    let mut trans = Vec::with_capacity(invocations * 3);
    let (mut max_r, mut max_t, mut max_a) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..invocations {
        let (x, scene) = &tasks[i % tasks.len()];
        let w = Workspace::new(1 << 20).expect("positive budget");
        let ictx = InvokeContext {
            step_index: 1,
            session_seed: seed::mix(&[seed, i as u64]),
        };
        let (items, _) = reg.invoke("estimate_pose", x, &w, scene, &Params::new(), ictx)?;
        for item in &items {
            let Payload::Pose(p) = item.payload() else { continue };
            let cams = &x.spec.cameras;
            let gt = quantized(&relative_pose(&cams[0], &cams[p.to_view as usize - 1]));
            let pred = p
                .parsed()
                .ok()
                .and_then(|r| r.to_pose(gt.fov_deg()).ok())
                .expect("primitive emits valid records");
            let dr = (gt.rotation().inverse() * pred.rotation()).scaled_axis();
            let dt = pred.translation() - gt.translation();
            rot.extend(dr.iter());
            trans.extend(dt.iter());
            let e = pose_metrics(&pred, &gt);
            max_r = max_r.max(e.rot_err_deg);
            max_t = max_t.max(e.trans_err);
            max_a = max_a.max(e.trans_angle_deg);
        }
    }
    Ok(NoiseCalibration {
        sigma,
        invocations,
        rot_std: sample_std(&rot),
        trans_std: sample_std(&trans),
        max_rot_err_deg: max_r,
        max_trans_err: max_t,
        max_trans_angle_deg: max_a,
    })
}
