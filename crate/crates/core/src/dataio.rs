//! Dataset directory format, frame/packet synchronization and splitting.
//!
//! A dataset directory holds four files:
//!
//! | file             | content                                                        |
//! |------------------|----------------------------------------------------------------|
//! | `manifest.json`  | [`DatasetManifest`] as UTF-8 JSON                              |
//! | `csi.f32`        | little-endian f32, sample-major `[n][antenna][subcarrier][packet]` |
//! | `keypoints.f32`  | little-endian f32, `[n][17][2]` pixel coordinates              |
//! | `splits.json`    | `{"train": [..], "val": [..], "test": [..]}` sample ids        |
//!
//! Sample `i` in the payloads is video frame `i`. Amplitudes and coordinates
//! are stored in single precision, so a save/load cycle is bit-exact for any
//! values already representable as `f32`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi::{CsiFrame, ANTENNAS, PACKETS_PER_FRAME, SUBCARRIERS};
use crate::error::{Error, Result};
use crate::pose::{PoseLandmarks, N_LANDMARKS};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSI_FILE: &str = "csi.f32";
pub const KEYPOINTS_FILE: &str = "keypoints.f32";
pub const SPLITS_FILE: &str = "splits.json";

/// One video frame's annotation paired with the CSI packets recorded during it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyncSample {
    pub csi: CsiFrame,
    pub annotation: PoseLandmarks,
    pub frame_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub n_samples: usize,
    pub antennas: usize,
    pub subcarriers: usize,
    pub packets_per_frame: usize,
    pub frame_width: f64,
    pub frame_height: f64,
    pub split_seed: u64,
    pub format_version: u32,
}

impl DatasetManifest {
    pub fn new(n_samples: usize, frame_width: f64, frame_height: f64, split_seed: u64) -> Self {
        Self {
            n_samples,
            antennas: ANTENNAS,
            subcarriers: SUBCARRIERS,
            packets_per_frame: PACKETS_PER_FRAME,
            frame_width,
            frame_height,
            split_seed,
            format_version: FORMAT_VERSION,
        }
    }

    pub fn frame_len(&self) -> usize {
        self.antennas * self.subcarriers * self.packets_per_frame
    }

    /// Expected size of `csi.f32` in bytes.
    pub fn csi_bytes(&self) -> usize {
        self.n_samples * self.frame_len() * 4
    }

    /// Expected size of `keypoints.f32` in bytes.
    pub fn keypoint_bytes(&self) -> usize {
        self.n_samples * N_LANDMARKS * 2 * 4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SyncSample>,
    pub splits: Splits,
}

/// Half-open packet range covered by video frame `frame_idx`.
pub fn window_for_frame(frame_idx: usize, packets_per_frame: usize) -> (usize, usize) {
    debug_assert!(packets_per_frame >= 1);
    (frame_idx * packets_per_frame, (frame_idx + 1) * packets_per_frame)
}

// ceil that ignores representation noise such as 0.1 * 30 = 3.0000000000000004
fn split_size(frac: f64, n: usize) -> usize {
    let x = frac * n as f64;
    let r = x.round();
    if (x - r).abs() < 1e-9 {
        r as usize
    } else {
        x.ceil() as usize
    }
}

/// Seeded train/val/test partition of `0..n`. Val and test take
/// `ceil(frac * n)` ids each and train keeps the remainder; each list is sorted.
pub fn split(n: usize, val_frac: f64, test_frac: f64, seed: u64) -> Result<Splits> {
    if !(val_frac >= 0.0 && test_frac >= 0.0 && val_frac + test_frac < 1.0) {
        return Err(Error::Domain(format!(
            "split fractions must be non-negative and sum below 1, got {val_frac} + {test_frac}"
        )));
    }
    let n_val = split_size(val_frac, n);
    let n_test = split_size(test_frac, n);
    if n < 3 || n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(Error::Domain(format!("cannot form three non-empty splits from {n} samples")));
    }
    let n_train = n - n_val - n_test;
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |range: std::ops::Range<usize>| {
        let mut v = ids[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(Splits {
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..n),
    })
}

fn check_consistent(samples: &[SyncSample], manifest: &DatasetManifest, splits: &Splits) -> Result<()> {
    if samples.len() != manifest.n_samples {
        return Err(Error::Shape(format!(
            "manifest declares {} samples but {} were given",
            manifest.n_samples,
            samples.len()
        )));
    }
    let shape = [manifest.antennas, manifest.subcarriers, manifest.packets_per_frame];
    for (i, s) in samples.iter().enumerate() {
        if s.csi.shape() != shape {
            return Err(Error::Shape(format!("sample {i} has csi shape {:?}, manifest says {shape:?}", s.csi.shape())));
        }
        if s.frame_index != i {
            return Err(Error::Shape(format!("sample {i} carries frame index {}", s.frame_index)));
        }
    }
    let mut seen = vec![false; manifest.n_samples];
    for &id in splits.train.iter().chain(&splits.val).chain(&splits.test) {
        match seen.get_mut(id) {
            Some(s) if !*s => *s = true,
            _ => return Err(Error::CorruptDataset(format!("split id {id} is out of range or repeated"))),
        }
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json { path: path.into(), source: e })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json { path: path.into(), source: e })
}

pub(crate) fn write_f32_le<I: IntoIterator<Item = f32>>(path: &Path, values: I) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32_le(path: &Path, expected_bytes: usize) -> Result<Vec<f32>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.len() != expected_bytes as u64 {
        return Err(Error::CorruptDataset(format!(
            "{} holds {} bytes, expected {expected_bytes}",
            path.display(),
            meta.len()
        )));
    }
    let mut bytes = Vec::with_capacity(expected_bytes);
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Write a dataset directory. The directory itself is created if needed, its
/// parent must exist.
pub fn save_dataset(samples: &[SyncSample], manifest: &DatasetManifest, splits: &Splits, dir: &Path) -> Result<()> {
    check_consistent(samples, manifest, splits)?;
    if !dir.exists() {
        fs::create_dir(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_json(&dir.join(MANIFEST_FILE), manifest)?;
    write_f32_le(&dir.join(CSI_FILE), samples.iter().flat_map(|s| s.csi.as_slice().iter().map(|&v| v as f32)))?;
    write_f32_le(&dir.join(KEYPOINTS_FILE), samples.iter().flat_map(|s| s.annotation.flat().map(|v| v as f32)))?;
    write_json(&dir.join(SPLITS_FILE), splits)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.into()));
    }
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::CorruptDataset(format!("unsupported format version {}", manifest.format_version)));
    }
    let splits: Splits = read_json(&dir.join(SPLITS_FILE))?;
    let csi = read_f32_le(&dir.join(CSI_FILE), manifest.csi_bytes())?;
    let kps = read_f32_le(&dir.join(KEYPOINTS_FILE), manifest.keypoint_bytes())?;
    let shape = [manifest.antennas, manifest.subcarriers, manifest.packets_per_frame];
    let frame_len = manifest.frame_len();
    let mut samples = Vec::with_capacity(manifest.n_samples);
    for i in 0..manifest.n_samples {
        let amps = csi[i * frame_len..(i + 1) * frame_len].iter().map(|&v| v as f64).collect();
        let csi = CsiFrame::with_shape(shape, amps).map_err(|e| Error::CorruptDataset(format!("sample {i}: {e}")))?;
        let xy: Vec<f64> = kps[i * 2 * N_LANDMARKS..(i + 1) * 2 * N_LANDMARKS].iter().map(|&v| v as f64).collect();
        let annotation =
            PoseLandmarks::from_flat(&xy).map_err(|e| Error::CorruptDataset(format!("sample {i}: {e}")))?;
        samples.push(SyncSample { csi, annotation, frame_index: i });
    }
    check_consistent(&samples, &manifest, &splits)?;
    Ok(Dataset { manifest, samples, splits })
}
