use etp_core::ravens::{episode, evaluate, oracle, read_dataset, write_dataset, Scene, Task, MARGIN, SCENE_SIZE};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn object_positions_are_uniform_over_the_workspace() {
    let bins = 8;
    let span = SCENE_SIZE - 2 * MARGIN;
    assert_eq!(span % bins, 0);
    let width = span / bins;
    let samples = 5000;
    let mut counts = vec![0usize; bins * bins];
    for seed in 0..samples as u64 {
        let s = Scene::generate(seed, Task::InsertL);
        let (u, v) = (s.object.u as usize - MARGIN, s.object.v as usize - MARGIN);
        counts[(u / width) * bins + v / width] += 1;
    }
    let expected = samples as f64 / (bins * bins) as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((bins * bins - 1) as f64).unwrap().cdf(stat);
    assert!(p > 0.01, "chi-square {stat:.1}, p = {p:.4}");
}

#[test]
fn a_thousand_scenes_have_disjoint_footprints() {
    for task in Task::ALL {
        for seed in 0..1000 {
            let s = Scene::generate(seed, task);
            let target = task.target_footprint().stamp(&s.target, SCENE_SIZE);
            let clash = s.object_mask().iter().zip(&target).filter(|(&a, &b)| a > 0.0 && b).count();
            assert_eq!(clash, 0, "{task} seed {seed}");
        }
    }
}

#[test]
fn poses_stay_a_crop_radius_from_the_border() {
    for task in Task::ALL {
        for seed in 0..300 {
            let s = Scene::generate(seed, task);
            for p in [s.object, s.target] {
                for c in [p.u, p.v] {
                    assert!(c >= MARGIN as f64 && c <= (SCENE_SIZE - 1 - MARGIN) as f64);
                }
            }
        }
    }
}

#[test]
fn oracle_demonstrations_succeed() {
    for task in Task::ALL {
        for seed in 0..200 {
            let s = Scene::generate(seed, task);
            let d = oracle(&s);
            let r = evaluate(&s, &d.pick, &d.place);
            assert!(r.success, "{task} seed {seed}: {r:?}");
            assert_eq!(r.translation_error, 0.0);
            let mask = s.object_mask();
            assert!(mask[d.pick.u * SCENE_SIZE + d.pick.v] > 0.0);
        }
    }
}

#[test]
fn generation_is_deterministic() {
    for task in Task::ALL {
        for seed in [0, 1, 99, u64::MAX] {
            assert_eq!(Scene::generate(seed, task), Scene::generate(seed, task));
        }
    }
}

#[test]
fn datasets_round_trip_bit_exact() {
    let eps: Vec<_> = Task::ALL.iter().flat_map(|&t| (0..4).map(move |s| episode(t, s))).collect();
    let mut a = Vec::new();
    write_dataset(&mut a, &eps).unwrap();
    let back = read_dataset(&a[..]).unwrap();
    assert_eq!(back, eps);
    let mut b = Vec::new();
    write_dataset(&mut b, &back).unwrap();
    assert_eq!(a, b);
}

#[test]
fn rotation_error_never_exceeds_the_symmetry_bound() {
    use etp_core::transporter::PlaceAction;
    for task in Task::ALL {
        let s = Scene::generate(3, task);
        let d = oracle(&s);
        let bound = match task.symmetry() {
            0 => 0.0,
            k => std::f64::consts::PI / k as f64,
        };
        for i in 0..64 {
            let place = PlaceAction {
                theta: i as f64 * std::f64::consts::TAU / 64.0,
                ..d.place
            };
            let r = evaluate(&s, &d.pick, &place);
            assert!(r.rotation_error <= bound + 1e-12, "{task}: {}", r.rotation_error);
        }
    }
}
