//! Deterministic synthetic scenes and their CSI observations.
//!
//! A scene is a standing skeleton swaying along smooth low-frequency
//! trajectories. Each frame is observed through a static line-of-sight path
//! plus one reflection per body reflector (shoulders, elbows, wrists, hips),
//! evaluated per antenna and subcarrier with [`crate::csi::superpose`].
//!
//! All geometry here is synthetic: none of it is calibrated against real
//! hardware.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csi::{self, CsiFrame, PathComponent, ANTENNAS, PACKETS_PER_FRAME, SUBCARRIERS};
use crate::dataio::{split, Dataset, DatasetManifest, SyncSample};
use crate::error::{Error, Result};
use crate::pose::{Joint, PoseLandmarks, N_LANDMARKS};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Pixels per meter when lifting landmarks into the room.
pub const PIXELS_PER_METER: f64 = 100.0;
/// Depth of the plane the body moves in, meters.
pub const BODY_DEPTH_M: f64 = 2.0;
/// Offset between neighbouring receive antennas along x, meters.
pub const ANTENNA_SPACING_M: f64 = 0.06;
/// Subcarrier index that sits on the carrier frequency.
pub const CENTER_SUBCARRIER: usize = 57;

/// Landmarks that reflect, in the order they are switched on by `n_body_paths`.
pub const REFLECTORS: [Joint; 8] = [
    Joint::LeftShoulder,
    Joint::RightShoulder,
    Joint::LeftElbow,
    Joint::RightElbow,
    Joint::LeftWrist,
    Joint::RightWrist,
    Joint::LeftHip,
    Joint::RightHip,
];

// Standing skeleton on a 640 x 480 canvas, drawn at full height. The scene
// shrinks it by FIGURE_SCALE about FIGURE_ANCHOR (a distant figure), then
// rescales to the configured frame.
const CANONICAL: [[f64; 2]; N_LANDMARKS] = [
    [320.0, 120.0],
    [330.0, 110.0],
    [310.0, 110.0],
    [342.0, 115.0],
    [298.0, 115.0],
    [365.0, 170.0],
    [275.0, 170.0],
    [380.0, 235.0],
    [260.0, 235.0],
    [385.0, 295.0],
    [255.0, 295.0],
    [345.0, 300.0],
    [295.0, 300.0],
    [350.0, 380.0],
    [290.0, 380.0],
    [352.0, 450.0],
    [288.0, 450.0],
];
const CANVAS: [f64; 2] = [640.0, 480.0];
const FIGURE_SCALE: f64 = 0.12;
const FIGURE_ANCHOR: [f64; 2] = [320.0, 280.0];

// Whole-body sway amplitude (x, y) and per-joint limb amplitude, canvas pixels
// before FIGURE_SCALE.
const SWAY_AMPLITUDE: [f64; 2] = [100.0, 20.0];
const LIMB_AMPLITUDE: f64 = 15.0;
const N_SINUSOIDS: usize = 3;
// Cycles per sequence of each sinusoid, one disjoint band per term, and the
// relative weight of that term.
const CYCLE_BANDS: [(f64, f64); N_SINUSOIDS] = [(1.0, 1.5), (1.75, 2.25), (2.5, 3.0)];
const TERM_WEIGHTS: [f64; N_SINUSOIDS] = [1.0, 0.5, 0.25];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub seed: u64,
    pub n_frames: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub n_body_paths: usize,
    pub noise_sigma: f64,
    pub carrier_hz: f64,
    pub subcarrier_spacing_hz: f64,
    /// Transmitter position, meters.
    pub tx_pos: [f64; 3],
    /// Position of receive antenna 0, meters.
    pub rx_pos: [f64; 3],
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_frames: 1500,
            frame_width: 640.0,
            frame_height: 480.0,
            n_body_paths: 6,
            noise_sigma: 0.01,
            carrier_hz: 5.32e9,
            subcarrier_spacing_hz: 312.5e3,
            tx_pos: [3.2, 2.4, 0.0],
            rx_pos: [3.6, 2.4, 0.0],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::Domain("scene needs at least one frame".into()));
        }
        if !(self.frame_width > 0.0 && self.frame_height > 0.0) {
            return Err(Error::Domain("frame dimensions must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Domain(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.carrier_hz > 0.0 && self.subcarrier_spacing_hz > 0.0) {
            return Err(Error::Domain("carrier and subcarrier spacing must be positive".into()));
        }
        let lowest = self.carrier_hz - CENTER_SUBCARRIER as f64 * self.subcarrier_spacing_hz;
        if !(lowest > 0.0) {
            return Err(Error::Domain("subcarrier grid reaches non-positive frequencies".into()));
        }
        if self.tx_pos.iter().chain(&self.rx_pos).any(|v| !v.is_finite()) {
            return Err(Error::Domain("antenna positions must be finite".into()));
        }
        Ok(())
    }

    /// Frequency of subcarrier `s`, centered on [`CENTER_SUBCARRIER`].
    pub fn subcarrier_hz(&self, s: usize) -> f64 {
        self.carrier_hz + (s as f64 - CENTER_SUBCARRIER as f64) * self.subcarrier_spacing_hz
    }

    /// Position of receive antenna `a`.
    pub fn rx_antenna(&self, a: usize) -> [f64; 3] {
        let [x, y, z] = self.rx_pos;
        [x + ANTENNA_SPACING_M * a as f64, y, z]
    }

    pub fn reflectors(&self) -> &'static [Joint] {
        &REFLECTORS[..self.n_body_paths.min(REFLECTORS.len())]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub landmarks_per_frame: Vec<PoseLandmarks>,
    pub config: SceneConfig,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        self.landmarks_per_frame.len()
    }
}

fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Trajectories: per joint and axis, `canonical + Σ_k [sway_k + limb_jk]`
/// where both terms of index k share one frequency, so each coordinate is a sum
/// of three sinusoids.
pub fn make_scene(config: SceneConfig) -> Result<Scene> {
    config.validate()?;
    let mut rng = scene_rng(config.seed, 0);
    let n = config.n_frames;
    let scale = [config.frame_width / CANVAS[0], config.frame_height / CANVAS[1]];

    let omega: [f64; N_SINUSOIDS] =
        std::array::from_fn(|k| 2.0 * PI * rng.random_range(CYCLE_BANDS[k].0..CYCLE_BANDS[k].1) / n as f64);
    let mut sway = [[(0.0, 0.0); N_SINUSOIDS]; 2];
    for (axis, row) in sway.iter_mut().enumerate() {
        for (k, term) in row.iter_mut().enumerate() {
            let amp = rng.random_range(0.8..1.0) * TERM_WEIGHTS[k] * SWAY_AMPLITUDE[axis] * FIGURE_SCALE * scale[axis];
            *term = (amp, rng.random_range(0.0..2.0 * PI));
        }
    }
    let mut limb = [[[(0.0, 0.0); N_SINUSOIDS]; 2]; N_LANDMARKS];
    for joint in limb.iter_mut() {
        for (axis, row) in joint.iter_mut().enumerate() {
            for (k, term) in row.iter_mut().enumerate() {
                let amp = rng.random_range(0.0..LIMB_AMPLITUDE) * TERM_WEIGHTS[k] * FIGURE_SCALE * scale[axis];
                *term = (amp, rng.random_range(0.0..2.0 * PI));
            }
        }
    }

    let upper = [config.frame_width, config.frame_height];
    let mut frames = Vec::with_capacity(n);
    for t in 0..n {
        let mut points = [[0.0; 2]; N_LANDMARKS];
        for (j, p) in points.iter_mut().enumerate() {
            for axis in 0..2 {
                let rest = FIGURE_ANCHOR[axis] + FIGURE_SCALE * (CANONICAL[j][axis] - FIGURE_ANCHOR[axis]);
                let mut v = rest * scale[axis];
                for k in 0..N_SINUSOIDS {
                    let arg = omega[k] * t as f64;
                    let (ga, gp) = sway[axis][k];
                    let (la, lp) = limb[j][axis][k];
                    v += ga * (arg + gp).sin() + la * (arg + lp).sin();
                }
                p[axis] = clamp_open(v, upper[axis]);
            }
        }
        let pose = PoseLandmarks::new(points)?;
        if !(pose.torso_length() > 1.0) {
            return Err(Error::Domain(format!("degenerate torso generated at frame {t}")));
        }
        frames.push(pose);
    }
    Ok(Scene { landmarks_per_frame: frames, config })
}

/// Clamp into `[0, upper)`.
fn clamp_open(v: f64, upper: f64) -> f64 {
    let top = upper - upper * f64::EPSILON * 4.0;
    v.clamp(0.0, top)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

fn path_for_length(total_m: f64) -> PathComponent {
    PathComponent { alpha: 1.0 / (1.0 + total_m * total_m), phi: 0.0, tau: total_m / SPEED_OF_LIGHT }
}

/// Landmarks lifted into the body plane, in meters.
pub fn lift(point_px: [f64; 2]) -> [f64; 3] {
    [point_px[0] / PIXELS_PER_METER, point_px[1] / PIXELS_PER_METER, BODY_DEPTH_M]
}

/// Propagation paths seen by receive antenna `antenna` for a given pose.
pub fn paths_for_pose(config: &SceneConfig, pose: &PoseLandmarks, antenna: usize) -> Vec<PathComponent> {
    let rx = config.rx_antenna(antenna);
    let mut paths = Vec::with_capacity(1 + config.reflectors().len());
    paths.push(path_for_length(distance(config.tx_pos, rx)));
    for &j in config.reflectors() {
        let p = lift(pose.joint(j));
        paths.push(path_for_length(distance(config.tx_pos, p) + distance(p, rx)));
    }
    paths
}

/// Pose at packet `t` of frame `k`: linear interpolation toward frame `k + 1`.
pub fn packet_pose(scene: &Scene, frame_idx: usize, packet: usize) -> PoseLandmarks {
    let cur = &scene.landmarks_per_frame[frame_idx];
    let next = scene.landmarks_per_frame.get(frame_idx + 1).unwrap_or(cur);
    let w = packet as f64 / PACKETS_PER_FRAME as f64;
    let mut points = cur.points;
    for (p, q) in points.iter_mut().zip(next.points.iter()) {
        p[0] += w * (q[0] - p[0]);
        p[1] += w * (q[1] - p[1]);
    }
    PoseLandmarks { points }
}

/// CSI amplitudes for one frame, `[antenna][subcarrier][packet]`.
pub fn render_csi(scene: &Scene, frame_idx: usize) -> Result<CsiFrame> {
    if frame_idx >= scene.n_frames() {
        return Err(Error::Domain(format!(
            "frame index {frame_idx} out of range for {} frames",
            scene.n_frames()
        )));
    }
    let cfg = &scene.config;
    let freqs: Vec<f64> = (0..SUBCARRIERS).map(|s| cfg.subcarrier_hz(s)).collect();
    let mut amps = vec![0.0; ANTENNAS * SUBCARRIERS * PACKETS_PER_FRAME];
    for t in 0..PACKETS_PER_FRAME {
        let pose = packet_pose(scene, frame_idx, t);
        for a in 0..ANTENNAS {
            let paths = paths_for_pose(cfg, &pose, a);
            for (s, &f) in freqs.iter().enumerate() {
                amps[(a * SUBCARRIERS + s) * PACKETS_PER_FRAME + t] = csi::amplitude(csi::superpose(&paths, f)?);
            }
        }
    }
    if cfg.noise_sigma > 0.0 {
        let mut rng = scene_rng(cfg.seed, frame_idx as u64 + 1);
        let normal = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Domain(e.to_string()))?;
        for v in &mut amps {
            *v = (*v + normal.sample(&mut rng)).max(0.0);
        }
    }
    CsiFrame::new(amps)
}

/// Scene, rendered frames and a seeded split, bundled as an in-memory dataset.
/// The split shuffle uses `config.seed`.
pub fn synthesize(config: &SceneConfig, val_frac: f64, test_frac: f64) -> Result<Dataset> {
    let scene = make_scene(config.clone())?;
    let frames: Vec<Result<CsiFrame>> = (0..scene.n_frames()).into_par_iter().map(|k| render_csi(&scene, k)).collect();
    let mut samples = Vec::with_capacity(frames.len());
    for (k, (csi, pose)) in frames.into_iter().zip(&scene.landmarks_per_frame).enumerate() {
        samples.push(SyncSample { csi: csi?, annotation: *pose, frame_index: k });
    }
    let splits = split(samples.len(), val_frac, test_frac, config.seed)?;
    let manifest = DatasetManifest::new(samples.len(), config.frame_width, config.frame_height, config.seed);
    Ok(Dataset { manifest, samples, splits })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64, n: usize) -> SceneConfig {
        SceneConfig { seed, n_frames: n, ..Default::default() }
    }

    #[test]
    fn deterministic_scenes() {
        let a = make_scene(small(3, 50)).unwrap();
        let b = make_scene(small(3, 50)).unwrap();
        assert_eq!(a, b);
        let c = make_scene(small(4, 50)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn zero_frames_rejected() {
        assert!(matches!(make_scene(small(0, 0)), Err(Error::Domain(_))));
    }

    #[test]
    fn landmarks_inside_frame_and_torso_nondegenerate() {
        for seed in 0..20 {
            for (w, h) in [(640.0, 480.0), (64.0, 48.0), (100.0, 300.0)] {
                let cfg = SceneConfig { frame_width: w, frame_height: h, ..small(seed, 400) };
                let scene = make_scene(cfg).unwrap();
                for pose in &scene.landmarks_per_frame {
                    for [x, y] in pose.points {
                        assert!((0.0..w).contains(&x) && (0.0..h).contains(&y));
                    }
                    assert!(pose.torso_length() > 1.0);
                }
            }
        }
    }

    #[test]
    fn out_of_range_frame() {
        let scene = make_scene(small(1, 3)).unwrap();
        assert!(render_csi(&scene, 3).is_err());
        assert!(render_csi(&scene, 2).is_ok());
    }

    #[test]
    fn subcarrier_grid_centered() {
        let cfg = SceneConfig::default();
        assert_eq!(cfg.subcarrier_hz(57), 5.32e9);
        assert_eq!(cfg.subcarrier_hz(58) - cfg.subcarrier_hz(57), 312.5e3);
        assert_eq!(cfg.reflectors().len(), 6);
        let all = SceneConfig { n_body_paths: 20, ..cfg };
        assert_eq!(all.reflectors().len(), 8);
    }
}
