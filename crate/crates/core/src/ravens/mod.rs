//! Synthetic planar pick-and-place tasks on a 64×64 grid.
//!
//! Channel 0 of an observation is the object mask, channel 1 the target
//! marker. Poses are `(u, v, θ)` with `(u, v) = (row, column)` of the object's
//! reference pixel and `θ` its counterclockwise orientation. Objects are unions
//! of axis-aligned rectangles whose edges sit on half-integer offsets from the
//! reference pixel, so quarter-turn rotations of a scene are exact pixel
//! permutations.

mod dataset;
mod eval;

pub use dataset::{dataset_digest, digest_hex, read_dataset, write_dataset, Episode, DATASET_MAGIC, DATASET_VERSION};
pub use eval::{evaluate, evaluate_policy, EpisodeReport, EvalReport, EvalResult};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureField, FieldType};
use crate::group::{quantize_angle, rotation_sin_cos, GroupElement};
use crate::rng::{streams, CounterRng};
use crate::transporter::{Demonstration, PickAction, PlaceAction};

pub const SCENE_SIZE: usize = 64;
/// Reference pixels stay at least this far from the border.
pub const MARGIN: usize = 12;
/// Scene orientations are multiples of `2π / ANGLE_BINS`.
pub const ANGLE_BINS: usize = 8;
/// Translation threshold in pixels (1 cm at 0.5 cm per pixel).
pub const TRANSLATION_TOLERANCE: f64 = 2.0;
/// Rotation threshold in radians.
pub const ROTATION_TOLERANCE: f64 = PI / 12.0;
/// Seed offsets of the validation and test splits relative to the base seed.
pub const VALIDATION_OFFSET: u64 = 1_000_000;
pub const TEST_OFFSET: u64 = 2_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "insert-L")]
    InsertL,
    #[serde(rename = "box-in-bowl")]
    BoxInBowl,
    #[serde(rename = "align-corner")]
    AlignCorner,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::InsertL, Task::BoxInBowl, Task::AlignCorner];

    pub fn name(self) -> &'static str {
        match self {
            Task::InsertL => "insert-L",
            Task::BoxInBowl => "box-in-bowl",
            Task::AlignCorner => "align-corner",
        }
    }

    pub fn object(self) -> Shape {
        match self {
            Task::InsertL => Shape::l_pentomino(),
            Task::BoxInBowl => Shape::rect(4.5, 4.5),
            Task::AlignCorner => Shape::rect(7.5, 3.5),
        }
    }

    /// Marker drawn in channel 1 at the target pose.
    pub fn marker(self) -> Shape {
        match self {
            Task::InsertL => Shape::l_pentomino(),
            Task::BoxInBowl => Shape::Disk { radius: 7.5 },
            Task::AlignCorner => Shape::Rects(vec![[-7.5, 7.5, 2.5, 3.5], [-7.5, -6.5, -3.5, 3.5]]),
        }
    }

    /// Region the object may not overlap with at the target pose.
    pub fn target_footprint(self) -> Shape {
        match self {
            Task::AlignCorner => self.object(),
            _ => self.marker(),
        }
    }

    /// Rotational symmetry order used by the success metric; 0 skips the rotation test.
    pub fn symmetry(self) -> u32 {
        match self {
            Task::InsertL => 1,
            Task::BoxInBowl => 0,
            Task::AlignCorner => 2,
        }
    }

    /// Period of the object's grasp axis.
    pub fn grasp_period(self) -> f64 {
        match self {
            Task::BoxInBowl => PI / 2.0,
            _ => PI,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown task {s:?} (expected insert-L, box-in-bowl or align-corner)")))
    }
}

/// Planar region in object coordinates (x right, y up, origin at the reference pixel).
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    /// Union of `[x0, x1, y0, y1]` boxes.
    Rects(Vec<[f64; 4]>),
    Disk { radius: f64 },
}

impl Shape {
    /// Five 3-pixel cells: a column of four with a foot to the right. The
    /// reference pixel is the one nearest the centroid.
    pub fn l_pentomino() -> Self {
        let cells = [(0.0, 0.0), (0.0, 1.0), (0.0, 2.0), (0.0, 3.0), (1.0, 0.0)];
        Shape::Rects(
            cells
                .iter()
                .map(|&(i, j): &(f64, f64)| [-2.5 + 3.0 * i, 0.5 + 3.0 * i, -5.5 + 3.0 * j, -2.5 + 3.0 * j])
                .collect(),
        )
    }

    pub fn rect(half_w: f64, half_h: f64) -> Self {
        Shape::Rects(vec![[-half_w, half_w, -half_h, half_h]])
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        match self {
            Shape::Rects(rects) => rects.iter().any(|r| x > r[0] && x < r[1] && y > r[2] && y < r[3]),
            Shape::Disk { radius } => x * x + y * y < radius * radius,
        }
    }

    /// Pixel mask of the shape at `pose` on a `size × size` grid.
    pub fn stamp(&self, pose: &Pose, size: usize) -> Vec<bool> {
        let (s, c) = sin_cos(pose.theta);
        let mut out = vec![false; size * size];
        for r in 0..size {
            let dy = pose.u - r as f64;
            for col in 0..size {
                let dx = col as f64 - pose.v;
                let lx = c * dx + s * dy;
                let ly = -s * dx + c * dy;
                out[r * size + col] = self.contains(lx, ly);
            }
        }
        out
    }
}

/// Exact at multiples of `π/4`.
fn sin_cos(theta: f64) -> (f64, f64) {
    let k = theta * ANGLE_BINS as f64 / (2.0 * PI);
    if (k - k.round()).abs() < 1e-12 {
        let g = GroupElement::new(ANGLE_BINS, k.round() as i64).expect("nonzero order");
        rotation_sin_cos(&g)
    } else {
        theta.sin_cos()
    }
}

/// `θ` reduced to `[0, period)`.
pub fn wrap(theta: f64, period: f64) -> f64 {
    let r = theta.rem_euclid(period);
    if r >= period {
        0.0
    } else {
        r
    }
}

/// Distance between two angles on a circle of circumference `period`.
pub fn circular_distance(a: f64, b: f64, period: f64) -> f64 {
    let d = wrap(a - b, period);
    d.min(period - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub u: f64,
    pub v: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(u: f64, v: f64, theta: f64) -> Self {
        Self { u, v, theta }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub task: Task,
    pub seed: u64,
    pub object: Pose,
    pub target: Pose,
    pub image: FeatureField<f32>,
}

fn grid_pose(rng: &mut CounterRng) -> Pose {
    let lo = MARGIN as i64;
    let hi = (SCENE_SIZE - 1 - MARGIN) as i64;
    let u = rng.range_inclusive(lo, hi) as f64;
    let v = rng.range_inclusive(lo, hi) as f64;
    let k = rng.below(ANGLE_BINS as u32) as f64;
    Pose::new(u, v, 2.0 * PI * k / ANGLE_BINS as f64)
}

fn overlaps(a: &[bool], b: &[bool]) -> bool {
    a.iter().zip(b).any(|(&x, &y)| x && y)
}

impl Scene {
    /// Renders a scene from explicit poses.
    pub fn from_poses(task: Task, seed: u64, object: Pose, target: Pose) -> Self {
        let obj = task.object().stamp(&object, SCENE_SIZE);
        let marker = task.marker().stamp(&target, SCENE_SIZE);
        let t = FieldType::trivial(1, 2).expect("valid type");
        let plane = SCENE_SIZE * SCENE_SIZE;
        let mut data = vec![0f32; 2 * plane];
        for i in 0..plane {
            data[i] = obj[i] as u8 as f32;
            data[plane + i] = marker[i] as u8 as f32;
        }
        let image = FeatureField::new(t, SCENE_SIZE, SCENE_SIZE, data).expect("scene shape");
        Self {
            task,
            seed,
            object,
            target,
            image,
        }
    }

    /// Deterministic scene for `(seed, task)`. The object pose is uniform over
    /// the grid of valid poses; the target is rejection-sampled until its
    /// footprint is disjoint from the object's.
    pub fn generate(seed: u64, task: Task) -> Self {
        for attempt in 0u64.. {
            let mut rng = CounterRng::new(seed, streams::SCENE + (attempt << 32));
            let object = grid_pose(&mut rng);
            let obj = task.object().stamp(&object, SCENE_SIZE);
            for _ in 0..100 {
                let target = grid_pose(&mut rng);
                if !overlaps(&obj, &task.target_footprint().stamp(&target, SCENE_SIZE)) {
                    return Self::from_poses(task, seed, object, target);
                }
            }
        }
        unreachable!("attempt counter is unbounded")
    }

    pub fn object_mask(&self) -> &[f32] {
        self.image.channel(0)
    }

    /// True when the object footprint and the target footprint share no pixel.
    pub fn is_disjoint(&self) -> bool {
        let obj = self.task.object().stamp(&self.object, SCENE_SIZE);
        let tgt = self.task.target_footprint().stamp(&self.target, SCENE_SIZE);
        !overlaps(&obj, &tgt)
    }

    /// Scene rotated by `g` about the grid center.
    pub fn rotated(&self, g: &GroupElement) -> Self {
        let turn = |p: &Pose| {
            let (u, v) = crate::field::rotate_point(SCENE_SIZE, p.u, p.v, g);
            Pose::new(u.round(), v.round(), wrap(p.theta + g.angle(), 2.0 * PI))
        };
        Self::from_poses(self.task, self.seed, turn(&self.object), turn(&self.target))
    }

    /// Orientation change that takes the object onto the target.
    pub fn place_rotation(&self) -> f64 {
        match self.task {
            Task::BoxInBowl => 0.0,
            _ => wrap(self.target.theta - self.object.theta, 2.0 * PI),
        }
    }
}

/// Expert: grasp at the reference pixel along the object's axis, release at
/// the target with the rotation that aligns the object.
pub fn oracle(scene: &Scene) -> Demonstration {
    let period = scene.task.grasp_period();
    let pick = PickAction {
        u: scene.object.u as usize,
        v: scene.object.v as usize,
        theta: wrap(scene.object.theta, period),
    };
    let place = PlaceAction {
        u: scene.target.u as usize,
        v: scene.target.v as usize,
        theta: scene.place_rotation(),
    };
    Demonstration {
        observation: scene.image.clone(),
        pick,
        place,
    }
}

/// Episode for training seed `base + i`.
pub fn episode(task: Task, seed: u64) -> Episode {
    let scene = Scene::generate(seed, task);
    Episode {
        task,
        seed,
        demo: oracle(&scene),
    }
}

/// Seeds `base + offset + i` for `i < count`.
pub fn seeds(base: u64, offset: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base.wrapping_add(offset).wrapping_add(i)).collect()
}

/// Angle bin of an orientation on the scene grid.
pub fn angle_bin(theta: f64) -> usize {
    quantize_angle(theta, ANGLE_BINS).rem_euclid(ANGLE_BINS as i64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        for task in Task::ALL {
            assert_eq!(Scene::generate(42, task), Scene::generate(42, task));
        }
        assert_ne!(Scene::generate(1, Task::InsertL).image, Scene::generate(2, Task::InsertL).image);
    }

    #[test]
    fn l_shape_has_fifteen_by_six_footprint() {
        let mask = Shape::l_pentomino().stamp(&Pose::new(31.0, 31.0, 0.0), SCENE_SIZE);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 45);
        let turned = Shape::l_pentomino().stamp(&Pose::new(31.0, 31.0, PI / 2.0), SCENE_SIZE);
        assert_eq!(turned.iter().filter(|&&m| m).count(), 45);
        assert!(mask[31 * SCENE_SIZE + 31]);
    }

    #[test]
    fn quarter_turn_scene_is_pixel_rotation() {
        let g = GroupElement::new(4, 1).unwrap();
        for seed in 0..20 {
            let s = Scene::generate(seed, Task::InsertL);
            let (rot, _) = crate::field::rotate_grid(&s.image, &g, crate::field::RotationMode::Exact90).unwrap();
            assert_eq!(s.rotated(&g).image, rot);
        }
    }

    #[test]
    fn oracle_place_rotation_is_pose_difference() {
        for seed in 0..50 {
            let s = Scene::generate(seed, Task::InsertL);
            let d = oracle(&s);
            let expect = wrap(s.target.theta - s.object.theta, 2.0 * PI);
            assert!(circular_distance(d.place.theta, expect, 2.0 * PI) < 1e-12);
            assert!(d.pick.theta >= 0.0 && d.pick.theta < PI);
        }
    }

    #[test]
    fn task_names_parse() {
        for t in Task::ALL {
            assert_eq!(t.name().parse::<Task>().unwrap(), t);
        }
        assert!("stack".parse::<Task>().is_err());
    }

    #[test]
    fn circular_distance_is_bounded() {
        for i in 0..100 {
            let a = i as f64 * 0.37;
            for s in [1.0, 2.0, 4.0] {
                let p = 2.0 * PI / s;
                assert!(circular_distance(a, 0.1, p) <= p / 2.0 + 1e-12);
            }
        }
    }
}
