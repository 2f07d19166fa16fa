use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{circular_distance, Scene, ROTATION_TOLERANCE, SCENE_SIZE, TRANSLATION_TOLERANCE};
use crate::error::Result;
use crate::field::FeatureField;
use crate::transporter::{PickAction, PlaceAction};

use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub success: bool,
    /// Whether the grasp landed on the object with an acceptable gripper angle.
    pub grasped: bool,
    pub translation_error: f64,
    pub rotation_error: f64,
}

/// Executes one pick and place. The object moves rigidly with the gripper:
/// it is rotated by `place.theta` about the pick point, which is carried to
/// the place point.
pub fn evaluate(scene: &Scene, pick: &PickAction, place: &PlaceAction) -> EvalResult {
    let inside = pick.u < SCENE_SIZE && pick.v < SCENE_SIZE && scene.object_mask()[pick.u * SCENE_SIZE + pick.v] > 0.5;
    let axis_error = circular_distance(pick.theta, scene.object.theta, scene.task.grasp_period());
    let grasped = inside && axis_error <= ROTATION_TOLERANCE + 1e-9;

    let (s, c) = place.theta.sin_cos();
    let dx = scene.object.v - pick.v as f64;
    let dy = pick.u as f64 - scene.object.u;
    let x = c * dx - s * dy;
    let y = s * dx + c * dy;
    let final_u = place.u as f64 - y;
    let final_v = place.v as f64 + x;
    let translation_error = ((final_u - scene.target.u).powi(2) + (final_v - scene.target.v).powi(2)).sqrt();
    let symmetry = scene.task.symmetry();
    let rotation_error = if symmetry == 0 {
        0.0
    } else {
        circular_distance(scene.object.theta + place.theta, scene.target.theta, 2.0 * PI / symmetry as f64)
    };
    let success = grasped && translation_error <= TRANSLATION_TOLERANCE + 1e-9 && rotation_error <= ROTATION_TOLERANCE + 1e-9;
    EvalResult {
        success,
        grasped,
        translation_error,
        rotation_error,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeReport {
    pub seed: u64,
    pub pick: PickAction,
    pub place: PlaceAction,
    #[serde(flatten)]
    pub result: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: super::Task,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_translation_error: f64,
    pub mean_rotation_error: f64,
    pub rows: Vec<EpisodeReport>,
}

/// Runs `policy` on a fresh scene for every seed. Episodes are independent
/// and may run in parallel; rows come back in seed order.
pub fn evaluate_policy<P>(task: super::Task, seeds: &[u64], policy: P) -> Result<EvalReport>
where
    P: Fn(&FeatureField<f32>, &Scene) -> Result<(PickAction, PlaceAction)> + Sync,
{
    let rows = seeds
        .par_iter()
        .map(|&seed| {
            let scene = Scene::generate(seed, task);
            let (pick, place) = policy(&scene.image, &scene)?;
            Ok(EpisodeReport {
                seed,
                pick,
                place,
                result: evaluate(&scene, &pick, &place),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let count = rows.len().max(1) as f64;
    Ok(EvalReport {
        task,
        episodes: rows.len(),
        success_rate: rows.iter().filter(|r| r.result.success).count() as f64 / count,
        mean_translation_error: rows.iter().map(|r| r.result.translation_error).sum::<f64>() / count,
        mean_rotation_error: rows.iter().map(|r| r.result.rotation_error).sum::<f64>() / count,
        rows,
    })
}
