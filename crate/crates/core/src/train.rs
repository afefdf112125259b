//! Cross-modal supervision: the regressor is fit to teacher landmark
//! annotations with a mean-squared-error loss, SGD with classical momentum and
//! a step learning-rate schedule. The checkpoint with the lowest validation
//! loss is kept.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Dataset, Splits};
use crate::error::{Error, Result};
use crate::nnet::wpnet::{Gradients, NamedTensor, OutputScaling, WpnetConfig, WpnetParams};
use crate::nnet::{build_wpnet, Scalar};
use crate::pose::{PoseLandmarks, N_LANDMARKS};
use crate::preprocess::preprocess_to;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub lr_gamma: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 50, batch_size: 32, lr0: 0.001, momentum: 0.9, lr_gamma: 0.5, lr_step: 10, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step == 0 {
            return Err(Error::Config("epochs, batch_size and lr_step must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.momentum >= 0.0 && self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return Err(Error::Config(format!(
                "need lr0 > 0, momentum >= 0 and lr_gamma in (0, 1]; got {}, {}, {}",
                self.lr0, self.momentum, self.lr_gamma
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl TrainHistory {
    /// One JSON object per epoch, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        self.epochs.iter().map(|r| serde_json::to_string(r).expect("plain struct") + "\n").collect()
    }
}

/// Mean of squared differences over all entries.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!("prediction has {} entries, target {}", pred.len(), target.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty loss input".into()));
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

/// `lr0 · gamma^⌊epoch / lr_step⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * cfg.lr_gamma.powi((epoch / cfg.lr_step) as i32)
}

/// Classical momentum: `v ← μ·v + g`, `θ ← θ − lr·v`. Nothing is updated
/// when any gradient is non-finite.
pub fn sgd_step<T: Scalar>(
    params: &mut [NamedTensor<T>],
    grads: &Gradients<T>,
    velocity: &mut Gradients<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if grads.len() != params.len() || velocity.len() != params.len() {
        return Err(Error::Shape("gradient, velocity and parameter lists differ in length".into()));
    }
    for ((p, g), v) in params.iter().zip(grads).zip(velocity.iter()) {
        if g.len() != p.data.len() || v.len() != p.data.len() {
            return Err(Error::Shape(format!("gradient shape mismatch for `{}`", p.name)));
        }
        if g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient { tensor: p.name.clone() });
        }
    }
    let (lr, mu) = (T::of_f64(lr), T::of_f64(momentum));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        for ((w, &gi), vi) in p.data.iter_mut().zip(g).zip(v.iter_mut()) {
            *vi = mu * *vi + gi;
            *w = *w - lr * *vi;
        }
    }
    Ok(())
}

/// Normalized regression target `[2][n]`: x / width, y / height.
pub fn normalize_target(pose: &PoseLandmarks, width: f64, height: f64) -> Vec<f64> {
    let mut t = vec![0.0; 2 * N_LANDMARKS];
    for (j, [x, y]) in pose.points.iter().enumerate() {
        t[j] = x / width;
        t[N_LANDMARKS + j] = y / height;
    }
    t
}

/// Inverse of [`normalize_target`].
pub fn denormalize_prediction(coords: &[f64], width: f64, height: f64) -> Result<PoseLandmarks> {
    if coords.len() != 2 * N_LANDMARKS {
        return Err(Error::Shape(format!("expected [2 × {N_LANDMARKS}] coordinates, got {}", coords.len())));
    }
    let mut points = [[0.0; 2]; N_LANDMARKS];
    for (j, p) in points.iter_mut().enumerate() {
        *p = [coords[j] * width, coords[N_LANDMARKS + j] * height];
    }
    PoseLandmarks::new(points)
}

/// Mean-squared-error loss of a batch and its parameter gradient.
///
/// Samples are processed independently (in parallel on the current rayon
/// pool) and their gradients summed in batch order, so the result does not
/// depend on the thread count.
pub fn batch_gradient<T: Scalar>(params: &WpnetParams<T>, inputs: &[&[T]], targets: &[&[T]]) -> Result<(f64, Gradients<T>)> {
    if inputs.len() != targets.len() || inputs.is_empty() {
        return Err(Error::Shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
    }
    let out_len = 2 * params.config.n_landmarks;
    let denom = (inputs.len() * out_len) as f64;
    let per_sample: Vec<Result<(f64, Gradients<T>)>> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(x, t)| {
            if t.len() != out_len {
                return Err(Error::Shape(format!("target has {} entries, expected {out_len}", t.len())));
            }
            let (pred, tape) = params.forward_train(x)?;
            let mut sq = 0.0;
            let dout: Vec<T> = pred
                .iter()
                .zip(t.iter())
                .map(|(&p, &y)| {
                    let d = (p - y).as_f64();
                    sq += d * d;
                    T::of_f64(2.0 * d / denom)
                })
                .collect();
            let mut g = params.zero_gradients();
            params.backward(&tape, &dout, &mut g);
            Ok((sq, g))
        })
        .collect();
    let mut total = 0.0;
    let mut grads = params.zero_gradients();
    for r in per_sample {
        let (sq, g) = r?;
        total += sq;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, p) in acc.iter_mut().zip(part) {
                *a = *a + p;
            }
        }
    }
    Ok((total / denom, grads))
}

/// Mean-squared error of the network over a set of samples.
pub fn mean_loss<T: Scalar>(params: &WpnetParams<T>, inputs: &[&[T]], targets: &[&[T]]) -> Result<f64> {
    let sums: Vec<Result<f64>> = inputs
        .par_iter()
        .zip(targets.par_iter())
        .map(|(x, t)| {
            let pred = params.forward_raw(x)?;
            Ok(pred.iter().zip(t.iter()).map(|(&p, &y)| (p - y).as_f64().powi(2)).sum::<f64>())
        })
        .collect();
    let mut total = 0.0;
    for s in sums {
        total += s?;
    }
    Ok(total / (inputs.len() * 2 * params.config.n_landmarks) as f64)
}

/// Training order of `train_ids` for one epoch.
pub fn epoch_order(train_ids: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    let mut order = train_ids.to_vec();
    order.shuffle(&mut rng);
    order
}

/// Preprocessed inputs and normalized targets for a set of sample ids.
pub fn prepare_samples<T: Scalar>(dataset: &Dataset, ids: &[usize], input_size: usize) -> Result<(Vec<Vec<T>>, Vec<Vec<T>>)> {
    let (w, h) = (dataset.manifest.frame_width, dataset.manifest.frame_height);
    let prepared: Vec<Result<(Vec<T>, Vec<T>)>> = ids
        .par_iter()
        .map(|&i| {
            let s = dataset
                .samples
                .get(i)
                .ok_or_else(|| Error::Config(format!("split id {i} outside dataset of {}", dataset.samples.len())))?;
            let x = preprocess_to(&s.csi, input_size)?.data.iter().map(|&v| T::of_f64(v)).collect();
            let t = normalize_target(&s.annotation, w, h).into_iter().map(T::of_f64).collect();
            Ok((x, t))
        })
        .collect();
    let mut xs = Vec::with_capacity(ids.len());
    let mut ts = Vec::with_capacity(ids.len());
    for p in prepared {
        let (x, t) = p?;
        xs.push(x);
        ts.push(t);
    }
    Ok((xs, ts))
}

/// Pixel-space predictions for the given sample ids.
pub fn predict<T: Scalar>(params: &WpnetParams<T>, dataset: &Dataset, ids: &[usize]) -> Result<Vec<PoseLandmarks>> {
    let (w, h) = (dataset.manifest.frame_width, dataset.manifest.frame_height);
    ids.par_iter()
        .map(|&i| {
            let s = dataset
                .samples
                .get(i)
                .ok_or_else(|| Error::Config(format!("sample id {i} outside dataset of {}", dataset.samples.len())))?;
            let x: Vec<T> = preprocess_to(&s.csi, params.config.input_size)?.data.iter().map(|&v| T::of_f64(v)).collect();
            let out: Vec<f64> = params.forward_raw(&x)?.iter().map(|v| v.as_f64()).collect();
            match &params.output_scaling {
                Some(s) => denormalize_prediction(&s.apply(&out), w, h),
                None => denormalize_prediction(&out, w, h),
            }
        })
        .collect()
}

fn refs<T>(v: &[Vec<T>]) -> Vec<&[T]> {
    v.iter().map(|x| x.as_slice()).collect()
}

/// Train with the default no-op epoch observer.
pub fn train(
    dataset: &Dataset,
    splits: &Splits,
    net_cfg: &WpnetConfig,
    train_cfg: &TrainConfig,
) -> Result<(WpnetParams<f32>, TrainHistory)> {
    train_with(dataset, splits, net_cfg, train_cfg, |_| {})
}

/// Full training run in single precision. `on_epoch` sees every record as
/// soon as the epoch finishes.
pub fn train_with(
    dataset: &Dataset,
    splits: &Splits,
    net_cfg: &WpnetConfig,
    train_cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(WpnetParams<f32>, TrainHistory)> {
    train_cfg.validate()?;
    net_cfg.validate()?;
    if splits.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    if splits.val.is_empty() {
        return Err(Error::Config("validation split is empty".into()));
    }
    if net_cfg.n_landmarks != N_LANDMARKS {
        return Err(Error::Config(format!("dataset annotations have {N_LANDMARKS} landmarks, network predicts {}", net_cfg.n_landmarks)));
    }
    let (train_x, train_t) = prepare_samples::<f32>(dataset, &splits.train, net_cfg.input_size)?;
    let (val_x, val_t) = prepare_samples::<f32>(dataset, &splits.val, net_cfg.input_size)?;
    // the network regresses standardized targets; losses are reported on the
    // width/height-normalized scale
    let widen = |ts: &[Vec<f32>]| ts.iter().map(|t| t.iter().map(|&v| v as f64).collect()).collect::<Vec<Vec<f64>>>();
    let scaling = OutputScaling::fit(&widen(&train_t))?;
    let standardize = |ts: &[Vec<f32>]| -> Vec<Vec<f32>> {
        widen(ts).iter().map(|t| scaling.invert(t).into_iter().map(|v| v as f32).collect()).collect()
    };
    let (train_t, val_t) = (standardize(&train_t), standardize(&val_t));
    let loss_unit = scaling.scale * scaling.scale;
    let (val_x, val_t) = (refs(&val_x), refs(&val_t));
    // position of each train id inside train_x
    let local: std::collections::HashMap<usize, usize> = splits.train.iter().enumerate().map(|(i, &id)| (id, i)).collect();

    let mut params = build_wpnet::<f32>(net_cfg.clone(), train_cfg.seed)?;
    params.output_scaling = Some(scaling);
    let mut velocity = params.zero_gradients();
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut records = Vec::with_capacity(train_cfg.epochs);
    for epoch in 0..train_cfg.epochs {
        let lr = lr_at(epoch, train_cfg);
        let order = epoch_order(&splits.train, train_cfg.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let xs: Vec<&[f32]> = batch.iter().map(|id| train_x[local[id]].as_slice()).collect();
            let ts: Vec<&[f32]> = batch.iter().map(|id| train_t[local[id]].as_slice()).collect();
            let (loss, grads) = batch_gradient(&params, &xs, &ts)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            sgd_step(&mut params.tensors, &grads, &mut velocity, lr, train_cfg.momentum).map_err(|e| match e {
                Error::NonFiniteGradient { .. } => Error::Diverged { epoch },
                other => other,
            })?;
            loss_sum += loss * loss_unit * batch.len() as f64;
        }
        let val_loss = mean_loss(&params, &val_x, &val_t)? * loss_unit;
        if !val_loss.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        let rec = EpochRecord { epoch, train_loss: loss_sum / splits.train.len() as f64, val_loss, lr };
        on_epoch(&rec);
        records.push(rec);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
    }
    Ok((best.2, TrainHistory { epochs: records, best_epoch: best.1 }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_tensor(v: f64) -> Vec<NamedTensor<f64>> {
        vec![NamedTensor { name: "theta".into(), shape: vec![1], data: vec![v] }]
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let t = vec![0.5; 34];
        let p: Vec<f64> = t.iter().map(|v| v + 2.0).collect();
        assert_eq!(mse_loss(&p, &t).unwrap(), 4.0);
        assert!(mse_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.001);
        assert_eq!(lr_at(9, &cfg), 0.001);
        assert_eq!(lr_at(10, &cfg), 0.0005);
        assert_eq!(lr_at(49, &cfg), 0.001 * 0.5f64.powi(4));
        assert!((lr_at(49, &cfg) - 6.25e-5).abs() < 1e-18);
    }

    #[test]
    fn plain_step() {
        let mut p = scalar_tensor(1.0);
        let mut v = vec![vec![0.0]];
        sgd_step(&mut p, &vec![vec![0.5]], &mut v, 0.1, 0.0).unwrap();
        assert!((p[0].data[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolled() {
        let mut p = scalar_tensor(0.0);
        let mut v = vec![vec![0.0]];
        let g = vec![vec![1.0]];
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9).unwrap();
        assert_eq!(v[0][0], 1.0);
        sgd_step(&mut p, &g, &mut v, 0.1, 0.9).unwrap();
        assert!((v[0][0] - 1.9).abs() < 1e-15);
        assert!((p[0].data[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn stationary_and_tiny_lr() {
        let mut p = scalar_tensor(0.7);
        let mut v = vec![vec![0.0]];
        sgd_step(&mut p, &vec![vec![0.0]], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(p[0].data[0], 0.7);
        let mut v = vec![vec![0.0]];
        sgd_step(&mut p, &vec![vec![3.0]], &mut v, 1e-300, 0.9).unwrap();
        assert_eq!(p[0].data[0], 0.7);
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = scalar_tensor(1.0);
        let mut v = vec![vec![0.0]];
        match sgd_step(&mut p, &vec![vec![f64::NAN]], &mut v, 0.1, 0.9) {
            Err(Error::NonFiniteGradient { tensor }) => assert_eq!(tensor, "theta"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p[0].data[0], 1.0);
    }

    #[test]
    fn epoch_order_is_a_permutation() {
        let ids: Vec<usize> = (0..100).map(|i| i * 3).collect();
        for epoch in 0..5 {
            let mut o = epoch_order(&ids, 11, epoch);
            assert_eq!(o, epoch_order(&ids, 11, epoch));
            o.sort_unstable();
            assert_eq!(o, ids);
        }
        assert_ne!(epoch_order(&ids, 11, 0), epoch_order(&ids, 11, 1));
    }

    #[test]
    fn target_round_trip() {
        let mut pts = [[0.0; 2]; N_LANDMARKS];
        for (i, p) in pts.iter_mut().enumerate() {
            *p = [i as f64 * 20.0, 480.0 - i as f64 * 10.0];
        }
        let pose = PoseLandmarks::new(pts).unwrap();
        let t = normalize_target(&pose, 640.0, 480.0);
        assert_eq!(t[1], 20.0 / 640.0);
        assert_eq!(t[N_LANDMARKS], 1.0);
        let back = denormalize_prediction(&t, 640.0, 480.0).unwrap();
        for (a, b) in back.flat().zip(pose.flat()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
