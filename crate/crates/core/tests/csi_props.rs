use std::f64::consts::PI;

use proptest::prelude::*;
use wifipose::csi::{amplitude, superpose, PathComponent, SubcarrierSample};

fn path() -> impl Strategy<Value = PathComponent> {
    (0.0..2.0f64, -PI..PI, 0.0..1e-6f64).prop_map(|(a, p, t)| PathComponent::new(a, p, t).unwrap())
}

fn paths() -> impl Strategy<Value = Vec<PathComponent>> {
    prop::collection::vec(path(), 1..12)
}

/// Independent complex sum using explicit cos/sin per path.
fn oracle(paths: &[PathComponent], f: f64) -> (f64, f64) {
    paths.iter().fold((0.0, 0.0), |(re, im), p| {
        let theta = p.phi - 2.0 * PI * f * p.tau;
        (re + p.alpha * theta.cos(), im + p.alpha * theta.sin())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn amplitude_matches_hypot(re in -1e3..1e3f64, im in -1e3..1e3f64) {
        let a = amplitude(SubcarrierSample::new(re, im));
        prop_assert!((a - re.hypot(im)).abs() <= 1e-12 * a.max(1.0));
    }

    #[test]
    fn superposition_is_bounded_by_path_sum(ps in paths(), f in 1e9..6e9f64) {
        let h = superpose(&ps, f).unwrap();
        let bound: f64 = ps.iter().map(|p| p.alpha).sum();
        prop_assert!(amplitude(h) <= bound * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn superposition_is_additive(a in paths(), b in paths(), f in 1e9..6e9f64) {
        let joint: Vec<_> = a.iter().chain(&b).copied().collect();
        let sum = superpose(&a, f).unwrap() + superpose(&b, f).unwrap();
        let h = superpose(&joint, f).unwrap();
        prop_assert!((h.re - sum.re).abs() < 1e-12 && (h.im - sum.im).abs() < 1e-12);
    }

    #[test]
    fn common_phase_rotation_keeps_amplitude(ps in paths(), f in 1e9..6e9f64, rot in -PI..PI) {
        let rotated: Vec<_> = ps.iter().map(|p| PathComponent::new(p.alpha, p.phi + rot, p.tau).unwrap()).collect();
        let a = amplitude(superpose(&ps, f).unwrap());
        let b = amplitude(superpose(&rotated, f).unwrap());
        // phases reach ~4e4 rad, so each shifted term carries ~1e-11 rounding
        let tol = 1e-15 * ps.iter().map(|p| p.alpha * (2.0 * PI * f * p.tau).max(1.0)).sum::<f64>();
        prop_assert!((a - b).abs() <= tol, "{} vs {} (tol {})", a, b, tol);
    }

    #[test]
    fn matches_explicit_sum(ps in paths(), f in 1e9..6e9f64) {
        let h = superpose(&ps, f).unwrap();
        let (re, im) = oracle(&ps, f);
        prop_assert!((h.re - re).abs() < 1e-12 && (h.im - im).abs() < 1e-12);
    }
}

#[test]
fn single_path_has_its_attenuation() {
    let p = PathComponent::new(0.3, 1.1, 2e-8).unwrap();
    assert!((amplitude(superpose(&[p], 5.32e9).unwrap()) - 0.3).abs() < 1e-15);
}

#[test]
fn three_path_hand_value() {
    // at f = 1 Hz with delays 0, 0.25 s and 0.5 s the phasors are 1, -j and -1
    let ps = [
        PathComponent::new(1.0, 0.0, 0.0).unwrap(),
        PathComponent::new(2.0, 0.0, 0.25).unwrap(),
        PathComponent::new(0.5, 0.0, 0.5).unwrap(),
    ];
    let h = superpose(&ps, 1.0).unwrap();
    assert!((h.re - 0.5).abs() < 1e-12);
    assert!((h.im + 2.0).abs() < 1e-12);
    assert!((amplitude(h) - 4.25f64.sqrt()).abs() < 1e-12);
}

#[test]
fn opposite_paths_cancel() {
    let ps = [PathComponent::new(1.0, 0.0, 0.0).unwrap(), PathComponent::new(1.0, PI, 0.0).unwrap()];
    assert!(amplitude(superpose(&ps, 2.4e9).unwrap()) < 1e-15);
}

#[test]
fn invalid_inputs_rejected() {
    assert!(superpose(&[], 5e9).is_err());
    let p = PathComponent::new(1.0, 0.0, 0.0).unwrap();
    assert!(superpose(&[p], 0.0).is_err());
    assert!(superpose(&[p], -1.0).is_err());
    assert!(PathComponent::new(-0.1, 0.0, 0.0).is_err());
    assert!(PathComponent::new(0.1, 0.0, -1e-9).is_err());
    assert!(PathComponent::new(f64::NAN, 0.0, 0.0).is_err());
}
