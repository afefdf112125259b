use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wifipose::nnet::gradcheck::{numeric_gradient, relative_error};
use wifipose::nnet::{build_wpnet, WpnetConfig, WpnetParams};
use wifipose::train::{batch_gradient, mean_loss};

fn perturbed(seed: u64) -> WpnetParams<f64> {
    let p = build_wpnet::<f64>(WpnetConfig::tiny(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = p.flatten().iter().map(|v| v + rng.random_range(-0.1..0.1)).collect();
    p.with_flat(&flat)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let params = perturbed(21);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<Vec<f64>> = (0..2).map(|_| (0..24 * 24).map(|_| rng.random_range(-1.5..1.5)).collect()).collect();
    let ts: Vec<Vec<f64>> = (0..2).map(|_| (0..6).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
    let xr: Vec<&[f64]> = xs.iter().map(|v| v.as_slice()).collect();
    let tr: Vec<&[f64]> = ts.iter().map(|v| v.as_slice()).collect();

    let (_, grads) = batch_gradient(&params, &xr, &tr).unwrap();
    let analytic: Vec<f64> = grads.concat();
    let theta = params.flatten();
    assert_eq!(analytic.len(), theta.len());

    // one coordinate inside every tensor, then random ones
    let mut coords = Vec::new();
    let mut off = 0;
    for t in &params.tensors {
        coords.push(off + rng.random_range(0..t.data.len()));
        off += t.data.len();
    }
    coords.extend(sample(&mut rng, theta.len(), 200).into_iter());
    assert!(coords.len() >= 200);
    let numeric = numeric_gradient(|th| mean_loss(&params.with_flat(th), &xr, &tr).unwrap(), &theta, &coords, 1e-6).unwrap();

    let mut worst = (0.0, 0);
    for (&i, &n) in coords.iter().zip(&numeric) {
        let e = relative_error(analytic[i], n, 1e-8);
        if e > worst.0 {
            worst = (e, i);
        }
    }
    let name = {
        let mut off = 0;
        params.tensors.iter().find(|t| {
            off += t.data.len();
            worst.1 < off
        }).map(|t| t.name.clone())
    };
    assert!(worst.0 < 1e-3, "worst relative error {:.3e} at {:?}", worst.0, name);
}
