//! Pick and place heads, action decoding and the behavior-cloning loss.
//!
//! Pixel coordinates are `(u, v) = (row, column)`. A pick angle is the gripper
//! axis in `[0, π)`. A place angle is the rotation applied to the grasped
//! object between pick and place, in `[0, 2π)`; place channel `j` of an
//! `n`-channel map stands for `2πj/n`.

mod agent;
mod pick;
mod place;

pub use agent::{ModelConfig, Optimizers, StepLosses, Transporter, TransporterGrads};
pub use pick::{pick_angle, pick_position};
pub use place::{place_backward, place_baseline, place_equivariant, place_forward, PlaceCache, PlaceHead};

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::FeatureField;
use crate::group::quantize_angle;
use crate::nn::softmax;
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PickAction {
    pub u: usize,
    pub v: usize,
    pub theta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlaceAction {
    pub u: usize,
    pub v: usize,
    pub theta: f64,
}

/// One expert observation-action pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub observation: FeatureField<f32>,
    pub pick: PickAction,
    pub place: PlaceAction,
}

/// Normalized pick distributions: `p(u, v)` over the scene and `p(θ | u, v)`
/// over the `n/2` gripper angles.
#[derive(Clone, Debug, PartialEq)]
pub struct PickMaps<T> {
    pub position: FeatureField<T>,
    pub angle: Vec<T>,
}

/// Joint place distribution over `n × H × W`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaceMap<T> {
    pub data: FeatureField<T>,
}

impl<T: Real> PickMaps<T> {
    pub fn from_logits(position: &FeatureField<T>, angle: &[T]) -> Result<Self> {
        let p = softmax(position.data());
        Ok(Self {
            position: FeatureField::new(position.ftype(), position.height(), position.width(), p)?,
            angle: softmax(angle),
        })
    }
}

impl<T: Real> PlaceMap<T> {
    pub fn from_logits(logits: &FeatureField<T>) -> Result<Self> {
        let p = softmax(logits.data());
        Ok(Self {
            data: FeatureField::new(logits.ftype(), logits.height(), logits.width(), p)?,
        })
    }

    pub fn order(&self) -> usize {
        self.data.channels()
    }
}

/// Index of the place-map maximum; ties go to the smallest row-major pixel,
/// then the smallest channel.
pub fn place_argmax<T: Real>(map: &FeatureField<T>) -> (usize, usize, usize) {
    let plane = map.plane();
    let mut best = (0, 0);
    let mut best_v = map.data()[0];
    for p in 0..plane {
        for c in 0..map.channels() {
            let v = map.data()[c * plane + p];
            if v > best_v {
                best_v = v;
                best = (p, c);
            }
        }
    }
    (best.1, best.0 / map.width(), best.0 % map.width())
}

pub fn decode<T: Real>(pick: &PickMaps<T>, place: &PlaceMap<T>) -> (PickAction, PlaceAction) {
    let w = pick.position.width();
    let pi = pick.position.argmax();
    let half = pick.angle.len();
    let ai = crate::field::argmax(&pick.angle);
    let n = place.order();
    let (j, r, c) = place_argmax(&place.data);
    (
        PickAction {
            u: pi / w,
            v: pi % w,
            theta: PI * ai as f64 / half as f64,
        },
        PlaceAction {
            u: r,
            v: c,
            theta: 2.0 * PI * j as f64 / n as f64,
        },
    )
}

/// Flat label of the pick pixel.
pub fn pick_label(pick: &PickAction, height: usize, width: usize) -> Result<usize> {
    if pick.u >= height || pick.v >= width {
        return Err(Error::Label(format!("pick ({}, {}) outside {height}x{width}", pick.u, pick.v)));
    }
    Ok(pick.u * width + pick.v)
}

/// Gripper-angle bin among the `n/2` bins of `[0, π)`.
pub fn pick_angle_label(theta: f64, n: usize) -> Result<usize> {
    if n < 2 || n % 2 != 0 || !theta.is_finite() {
        return Err(Error::Label(format!("no gripper bin for θ = {theta} with n = {n}")));
    }
    Ok(quantize_angle(theta, n).rem_euclid((n / 2) as i64) as usize)
}

/// Flat label `j·H·W + u·W + v` of the place cell.
pub fn place_label(place: &PlaceAction, n: usize, height: usize, width: usize) -> Result<usize> {
    if place.u >= height || place.v >= width || !place.theta.is_finite() || n == 0 {
        return Err(Error::Label(format!("place ({}, {}) outside {height}x{width}", place.u, place.v)));
    }
    let j = quantize_angle(place.theta, n).rem_euclid(n as i64) as usize;
    Ok((j * height + place.u) * width + place.v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldType;

    fn maps(pos: Vec<f64>, angle: Vec<f64>, place: Vec<f64>, n: usize) -> (PickMaps<f64>, PlaceMap<f64>) {
        let t = FieldType::trivial(n, 1).unwrap();
        let r = FieldType::regular(n, 1).unwrap();
        (
            PickMaps {
                position: FeatureField::new(t, 2, 3, pos).unwrap(),
                angle,
            },
            PlaceMap {
                data: FeatureField::new(r, 2, 3, place).unwrap(),
            },
        )
    }

    #[test]
    fn one_hot_maps_decode_exactly() {
        let mut place = vec![0.0; 24];
        place[2 * 6 + 4] = 1.0;
        let (p, q) = maps(vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0], vec![0.0, 1.0], place, 4);
        let (a, b) = decode(&p, &q);
        assert_eq!((a.u, a.v), (1, 2));
        assert!((a.theta - PI / 2.0).abs() < 1e-15);
        assert_eq!((b.u, b.v), (1, 1));
        assert!((b.theta - PI).abs() < 1e-15);
    }

    #[test]
    fn ties_prefer_smallest_index() {
        let mut place = vec![0.0; 24];
        place[6 + 5] = 1.0;
        place[2 * 6 + 3] = 1.0;
        let (p, q) = maps(vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0], vec![0.5, 0.5], place, 4);
        let (a, b) = decode(&p, &q);
        assert_eq!((a.u, a.v), (0, 1));
        assert_eq!((b.u, b.v, quantize_angle(b.theta, 4)), (1, 0, 2));
    }

    #[test]
    fn uniform_maps_decode_to_origin() {
        let (p, q) = maps(vec![0.1; 6], vec![0.5; 2], vec![0.25; 24], 4);
        let (a, b) = decode(&p, &q);
        assert_eq!((a.u, a.v, a.theta), (0, 0, 0.0));
        assert_eq!((b.u, b.v, b.theta), (0, 0, 0.0));
    }

    #[test]
    fn labels() {
        assert_eq!(pick_angle_label(PI * 1.25, 8).unwrap(), 1);
        assert_eq!(pick_angle_label(PI * 0.75, 8).unwrap(), 3);
        let place = PlaceAction { u: 1, v: 2, theta: 1.5 * PI };
        assert_eq!(place_label(&place, 8, 4, 4).unwrap(), (6 * 4 + 1) * 4 + 2);
        assert!(pick_label(&PickAction { u: 4, v: 0, theta: 0.0 }, 4, 4).is_err());
    }
}
