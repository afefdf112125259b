//! Body landmarks: the fixed 17-joint ordering, skeleton edges and the
//! JSON-lines interchange format.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const N_LANDMARKS: usize = 17;

/// Joint names in storage order.
pub const JOINT_NAMES: [&str; N_LANDMARKS] = [
    "Nose",
    "L.Eye",
    "R.Eye",
    "L.Ear",
    "R.Ear",
    "L.Shoulder",
    "R.Shoulder",
    "L.Elbow",
    "R.Elbow",
    "L.Wrist",
    "R.Wrist",
    "L.Hip",
    "R.Hip",
    "L.Knee",
    "R.Knee",
    "L.Ankle",
    "R.Ankle",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    Nose = 0,
    LeftEye,
    RightEye,
    LeftEar,
    RightEar,
    LeftShoulder,
    RightShoulder,
    LeftElbow,
    RightElbow,
    LeftWrist,
    RightWrist,
    LeftHip,
    RightHip,
    LeftKnee,
    RightKnee,
    LeftAnkle,
    RightAnkle,
}

impl Joint {
    pub const fn index(self) -> usize {
        self as usize
    }
}

/// Standard 17-keypoint skeleton edges, as joint index pairs.
pub const SKELETON_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

/// 17 `(a, b)` pixel coordinates in [`JOINT_NAMES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseLandmarks {
    pub points: [[f64; 2]; N_LANDMARKS],
}

impl PoseLandmarks {
    pub fn new(points: [[f64; 2]; N_LANDMARKS]) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("landmark coordinates must be finite".into()));
        }
        Ok(Self { points })
    }

    pub fn from_flat(xy: &[f64]) -> Result<Self> {
        if xy.len() != 2 * N_LANDMARKS {
            return Err(Error::Shape(format!("expected {} coordinates, got {}", 2 * N_LANDMARKS, xy.len())));
        }
        let mut points = [[0.0; 2]; N_LANDMARKS];
        for (p, c) in points.iter_mut().zip(xy.chunks_exact(2)) {
            *p = [c[0], c[1]];
        }
        Self::new(points)
    }

    pub fn joint(&self, j: Joint) -> [f64; 2] {
        self.points[j.index()]
    }

    /// Right shoulder to left hip distance.
    pub fn torso_length(&self) -> f64 {
        let [x0, y0] = self.joint(Joint::RightShoulder);
        let [x1, y1] = self.joint(Joint::LeftHip);
        (x1 - x0).hypot(y1 - y0)
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().flatten().copied()
    }
}

/// One line of the landmark interchange stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkRecord {
    pub frame: usize,
    pub points: PoseLandmarks,
}

pub fn write_landmark_lines<W: Write>(mut w: W, records: &[LandmarkRecord]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse JSON lines; blank lines are skipped and errors carry 1-based line numbers.
pub fn read_landmark_lines<R: BufRead>(r: R) -> Result<Vec<LandmarkRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LandmarkRecord =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        if rec.points.flat().any(|v| !v.is_finite()) {
            return Err(Error::Parse { line: i + 1, message: "non-finite coordinate".into() });
        }
        out.push(rec);
    }
    Ok(out)
}
