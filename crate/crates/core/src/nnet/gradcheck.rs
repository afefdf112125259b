//! Finite-difference gradients and the pointwise-convolution equivalence check.

use super::ops::{self, ConvGeom, Workspace};
use crate::error::{Error, Result};

/// Central differences `(f(θ+ε) − f(θ−ε)) / 2ε` at the listed coordinates.
pub fn numeric_gradient<F>(mut loss_at: F, theta: &[f64], coords: &[usize], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let mut probe = theta.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = *probe
                .get(i)
                .ok_or_else(|| Error::Domain(format!("coordinate {i} out of range for {} parameters", theta.len())))?;
            probe[i] = orig + epsilon;
            let up = loss_at(&probe);
            probe[i] = orig - epsilon;
            let down = loss_at(&probe);
            probe[i] = orig;
            Ok((up - down) / (2.0 * epsilon))
        })
        .collect()
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Checks that a 1×1 convolution with `kernel` (`[c_out][c_in]`) over a
/// `[c_in][h][w]` map equals the same `c_in → c_out` linear map applied at
/// every spatial site, within 1e-6 (relative to the site's magnitude).
/// Incompatible shapes yield `false`.
pub fn pointwise_equiv_check(kernel: &[f64], c_out: usize, feature_map: &[f64], c_in: usize, h: usize, w: usize) -> bool {
    if kernel.len() != c_out * c_in || feature_map.len() != c_in * h * w || c_out == 0 || c_in == 0 {
        return false;
    }
    let geom = ConvGeom { cin: c_in, cout: c_out, kernel: 1, stride: 1, pad: 0 };
    let conv = ops::conv2d(&geom, kernel, feature_map, h, w, &mut Workspace::new());
    let plane = h * w;
    for site in 0..plane {
        for o in 0..c_out {
            let mut acc = 0.0;
            let mut mag = 0.0;
            for i in 0..c_in {
                let t = kernel[o * c_in + i] * feature_map[i * plane + site];
                acc += t;
                mag += t.abs();
            }
            if (conv[o * plane + site] - acc).abs() > 1e-6 * mag.max(1.0) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let g = numeric_gradient(|t| t[0] * t[0], &[3.0], &[0], 1e-4).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn linear_is_exact_for_any_epsilon() {
        let f = |t: &[f64]| 2.0 * t[0] - 0.5 * t[1] + 4.0;
        for eps in [1e-6, 1e-3, 0.5, 2.0] {
            let g = numeric_gradient(f, &[1.0, -3.0], &[0, 1], eps).unwrap();
            assert!((g[0] - 2.0).abs() < 1e-9 && (g[1] + 0.5).abs() < 1e-9, "{g:?}");
        }
    }

    #[test]
    fn bad_inputs() {
        assert!(numeric_gradient(|t| t[0], &[1.0], &[0], 0.0).is_err());
        assert!(numeric_gradient(|t| t[0], &[1.0], &[3], 1e-3).is_err());
    }

    #[test]
    fn identity_and_zero_kernels() {
        let c = 5;
        let map: Vec<f64> = (0..c * 9).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut eye = vec![0.0; c * c];
        for i in 0..c {
            eye[i * c + i] = 1.0;
        }
        assert!(pointwise_equiv_check(&eye, c, &map, c, 3, 3));
        let geom = ConvGeom { cin: c, cout: c, kernel: 1, stride: 1, pad: 0 };
        assert_eq!(ops::conv2d(&geom, &eye, &map, 3, 3, &mut Workspace::new()), map);
        let zero = vec![0.0; 2 * c];
        assert!(pointwise_equiv_check(&zero, 2, &map, c, 3, 3));
        let g2 = ConvGeom { cout: 2, ..geom };
        assert!(ops::conv2d(&g2, &zero, &map, 3, 3, &mut Workspace::new()).iter().all(|&v| v == 0.0));
        assert!(!pointwise_equiv_check(&zero, 3, &map, c, 3, 3));
    }
}
