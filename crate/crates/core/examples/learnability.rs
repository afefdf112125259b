//! Synthesize a scene, train the quarter-width network and report test PCK.
//!
//! Usage: learnability [seed] [epochs] [n_frames]

use std::time::Instant;

use wifipose::eval::{pck, report_table, PckConfig};
use wifipose::nnet::WpnetConfig;
use wifipose::pose::{PoseLandmarks, JOINT_NAMES};
use wifipose::synth::{synthesize, SceneConfig};
use wifipose::train::{predict, train_with, TrainConfig};

fn main() -> wifipose::Result<()> {
    let arg = |i: usize, d: u64| std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (seed, epochs, n) = (arg(1, 0), arg(2, 30) as usize, arg(3, 1500) as usize);
    let t0 = Instant::now();
    let data = synthesize(&SceneConfig { seed, n_frames: n, ..Default::default() }, 0.2, 0.2)?;
    println!("synthesized {n} frames in {:.1}s", t0.elapsed().as_secs_f64());

    let gts: Vec<PoseLandmarks> = data.splits.test.iter().map(|&i| data.samples[i].annotation).collect();
    let mut mean = [[0.0; 2]; 17];
    for &i in &data.splits.train {
        for (m, p) in mean.iter_mut().zip(data.samples[i].annotation.points) {
            m[0] += p[0] / data.splits.train.len() as f64;
            m[1] += p[1] / data.splits.train.len() as f64;
        }
    }
    let (w, h) = (data.manifest.frame_width, data.manifest.frame_height);
    let mse: f64 = gts.iter().map(|g| g.points.iter().zip(&mean).map(|(p, m)| ((p[0] - m[0]) / w).powi(2) + ((p[1] - m[1]) / h).powi(2)).sum::<f64>() / 34.0).sum::<f64>() / gts.len() as f64;
    println!("mean-pose test mse (normalized): {mse:.5}");
    let base = pck(&vec![PoseLandmarks { points: mean }; gts.len()], &gts, &PckConfig::default())?;
    println!("mean-pose baseline: {:?}", base.average.iter().map(|v| (v * 10.0).round() / 10.0).collect::<Vec<_>>());

    let net = WpnetConfig { width_multiplier: 0.25, ..Default::default() };
    let cfg = TrainConfig { epochs, seed, ..Default::default() };
    let (params, hist) = train_with(&data, &data.splits, &net, &cfg, |r| {
        println!("epoch {:>2} lr {:.2e} train {:.3e} val {:.3e} [{:.0}s]", r.epoch, r.lr, r.train_loss, r.val_loss, t0.elapsed().as_secs_f64())
    })?;
    let preds = predict(&params, &data, &data.splits.test)?;
    let report = pck(&preds, &gts, &PckConfig::default())?;
    println!("best epoch {}", hist.best_epoch);
    println!("{}", report_table(&report, &JOINT_NAMES));
    println!("total {:.0}s", t0.elapsed().as_secs_f64());
    Ok(())
}
