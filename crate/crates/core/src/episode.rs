//! Episode manifests, uniform temporal sampling and frame loading.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::overlay::Trajectory;

pub const DEFAULT_SAMPLE_COUNT: usize = 9;

/// One recorded episode as exported to disk. Frame paths are relative to the dataset root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeManifest {
    pub episode_id: String,
    pub frames: Vec<PathBuf>,
    #[serde(default)]
    pub instruction: Option<String>,
    /// `[x, y]` pixel positions in first-frame coordinates.
    #[serde(default)]
    pub trajectory: Option<Vec<[i64; 2]>>,
    pub source_dataset: String,
}

impl EpisodeManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, "episode manifest", e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Sorted list of `episodes/*.json` under a dataset root.
pub fn list_manifests(dataset_root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dataset_root.as_ref().join("episodes");
    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        if path.extension().is_some_and(|e| e == "json") && path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingSpec {
    #[serde(default = "default_count")]
    pub target_count: usize,
    /// `[height, width]` every sampled frame is resized to.
    #[serde(default)]
    pub resize_to: Option<(u32, u32)>,
}

fn default_count() -> usize {
    DEFAULT_SAMPLE_COUNT
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self {
            target_count: DEFAULT_SAMPLE_COUNT,
            resize_to: None,
        }
    }
}

/// Endpoint-inclusive, evenly spaced indices into an episode of length `len`:
/// `round(i·(len−1)/(count−1))`, halves rounding up.
pub fn sample_uniform(len: usize, count: usize) -> Result<Vec<usize>> {
    if len == 0 || count == 0 {
        return Err(Error::invalid(format!(
            "sampling needs a positive episode length and count, got T={len}, K={count}"
        )));
    }
    if count == 1 {
        return Ok(vec![0]);
    }
    let span = len - 1;
    let steps = count - 1;
    Ok((0..count).map(|i| (2 * i * span + steps) / (2 * steps)).collect())
}

/// A manifest invariant breach. Violations are reported, never thrown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    EmptyEpisode,
    InvalidEpisodeId {
        episode_id: String,
    },
    DuplicatePath {
        path: PathBuf,
    },
    UnreadableFrame {
        path: PathBuf,
        reason: String,
    },
    TrajectoryTooShort {
        points: usize,
    },
    TrajectoryOutOfBounds {
        index: usize,
        x: i64,
        y: i64,
        width: u32,
        height: u32,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyEpisode => write!(f, "episode has no frames"),
            Violation::InvalidEpisodeId { episode_id } => {
                write!(f, "episode id {episode_id:?} is empty or contains a path separator")
            }
            Violation::DuplicatePath { path } => write!(f, "frame path {} listed twice", path.display()),
            Violation::UnreadableFrame { path, reason } => {
                write!(f, "frame {} unreadable: {reason}", path.display())
            }
            Violation::TrajectoryTooShort { points } => {
                write!(f, "trajectory has {points} point(s), need at least 2")
            }
            Violation::TrajectoryOutOfBounds {
                index,
                x,
                y,
                width,
                height,
            } => write!(
                f,
                "trajectory point {index} ({x}, {y}) outside {width}x{height} first frame"
            ),
        }
    }
}

/// Checks manifest invariants. `first_frame_size` is `(width, height)`; bounds are only
/// checked when it is known.
pub fn validate_manifest(manifest: &EpisodeManifest, first_frame_size: Option<(u32, u32)>) -> Vec<Violation> {
    let mut out = Vec::new();
    let id = &manifest.episode_id;
    if id.is_empty() || id.contains(['/', '\\']) || id == "." || id == ".." {
        out.push(Violation::InvalidEpisodeId { episode_id: id.clone() });
    }
    if manifest.frames.is_empty() {
        out.push(Violation::EmptyEpisode);
    }
    let mut seen = HashSet::new();
    for path in &manifest.frames {
        if !seen.insert(path) {
            out.push(Violation::DuplicatePath { path: path.clone() });
        }
    }
    if let Some(points) = &manifest.trajectory {
        if points.len() < 2 {
            out.push(Violation::TrajectoryTooShort { points: points.len() });
        }
        if let Some((width, height)) = first_frame_size {
            for (index, &[x, y]) in points.iter().enumerate() {
                if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
                    out.push(Violation::TrajectoryOutOfBounds {
                        index,
                        x,
                        y,
                        width,
                        height,
                    });
                }
            }
        }
    }
    out
}

/// [`validate_manifest`] plus file checks: every frame must exist and the first frame's
/// header must decode, which also supplies the bounds for the trajectory.
pub fn validate_on_disk(manifest: &EpisodeManifest, dataset_root: &Path) -> Vec<Violation> {
    let mut unreadable = Vec::new();
    for path in &manifest.frames {
        let full = dataset_root.join(path);
        if !full.is_file() {
            unreadable.push(Violation::UnreadableFrame {
                path: path.clone(),
                reason: "file not found".into(),
            });
        }
    }
    let size = manifest
        .frames
        .first()
        .and_then(|first| match image::image_dimensions(dataset_root.join(first)) {
            Ok(dims) => Some(dims),
            Err(e) => {
                if !unreadable
                    .iter()
                    .any(|v| matches!(v, Violation::UnreadableFrame { path, .. } if path == first))
                {
                    unreadable.push(Violation::UnreadableFrame {
                        path: first.clone(),
                        reason: e.to_string(),
                    });
                }
                None
            }
        });
    let mut out = validate_manifest(manifest, size);
    out.extend(unreadable);
    out
}

/// Sampled, size-normalized frames of one episode.
#[derive(Debug, Clone)]
pub struct LoadedEpisode {
    pub episode_id: String,
    pub source_dataset: String,
    pub instruction: Option<String>,
    pub frames: Vec<Frame>,
    /// Trajectory mapped into the coordinates of the output frames.
    pub trajectory: Option<Trajectory>,
}

/// Loads the frames selected by [`sample_uniform`], resized to `spec.resize_to` when set.
pub fn load_episode(manifest: &EpisodeManifest, dataset_root: &Path, spec: &SamplingSpec) -> Result<Vec<Frame>> {
    Ok(load_episode_full(manifest, dataset_root, spec)?.frames)
}

pub fn load_episode_full(
    manifest: &EpisodeManifest,
    dataset_root: &Path,
    spec: &SamplingSpec,
) -> Result<LoadedEpisode> {
    let indices = sample_uniform(manifest.frames.len(), spec.target_count)?;
    let mut cache: BTreeMap<usize, Frame> = BTreeMap::new();
    for &i in &indices {
        if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(i) {
            slot.insert(Frame::load(dataset_root.join(&manifest.frames[i]))?);
        }
    }
    // index 0 is always sampled
    let source_size = cache[&0].dimensions();

    let mut frames = Vec::with_capacity(indices.len());
    for (k, &i) in indices.iter().enumerate() {
        let frame = &cache[&i];
        let frame = match spec.resize_to {
            Some((h, w)) => frame.resize_bilinear(w, h)?,
            None => {
                if frame.dimensions() != source_size {
                    return Err(Error::invalid(format!(
                        "episode {}: sampled frame {k} ({}) is {}x{} but the first frame is {}x{}; set resize_to",
                        manifest.episode_id,
                        manifest.frames[i].display(),
                        frame.width(),
                        frame.height(),
                        source_size.0,
                        source_size.1
                    )));
                }
                frame.clone()
            }
        };
        frames.push(frame);
    }

    let trajectory = match &manifest.trajectory {
        Some(points) => {
            let traj = Trajectory::from_points(points, source_size)?;
            let target = frames[0].dimensions();
            Some(traj.rescale(source_size, target)?)
        }
        None => None,
    };

    Ok(LoadedEpisode {
        episode_id: manifest.episode_id.clone(),
        source_dataset: manifest.source_dataset.clone(),
        instruction: manifest.instruction.clone(),
        frames,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(frames: usize) -> EpisodeManifest {
        EpisodeManifest {
            episode_id: "ep0".into(),
            frames: (0..frames).map(|i| PathBuf::from(format!("ep0/{i:03}.png"))).collect(),
            instruction: Some("pick up the block".into()),
            trajectory: Some(vec![[1, 1], [5, 5]]),
            source_dataset: "bridgev2".into(),
        }
    }

    #[test]
    fn sampling_examples() {
        assert_eq!(sample_uniform(9, 9).unwrap(), (0..9).collect::<Vec<_>>());
        assert_eq!(sample_uniform(17, 9).unwrap(), vec![0, 2, 4, 6, 8, 10, 12, 14, 16]);
        assert_eq!(sample_uniform(1, 9).unwrap(), vec![0; 9]);
        assert_eq!(sample_uniform(5, 1).unwrap(), vec![0]);
        // 2·(3/8) = 0.75 → 1, 4·(3/8) = 1.5 → 2 (half rounds up)
        assert_eq!(sample_uniform(4, 9).unwrap(), vec![0, 0, 1, 1, 2, 2, 2, 3, 3]);
        assert!(sample_uniform(0, 9).is_err());
        assert!(sample_uniform(9, 0).is_err());
    }

    proptest! {
        #[test]
        fn sampling_invariants(len in 1usize..500, count in 1usize..40) {
            let idx = sample_uniform(len, count).unwrap();
            prop_assert_eq!(idx.len(), count);
            prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(idx.iter().all(|&i| i < len));
            prop_assert_eq!(idx[0], 0);
            if count >= 2 {
                prop_assert_eq!(*idx.last().unwrap(), len - 1);
            }
            if len >= count && count >= 2 {
                let lo = (len - 1) / (count - 1);
                let hi = (len - 1).div_ceil(count - 1);
                for w in idx.windows(2) {
                    let d = w[1] - w[0];
                    prop_assert!(d == lo || d == hi, "step {} not in {{{}, {}}}", d, lo, hi);
                }
            }
        }
    }

    #[test]
    fn valid_manifest_has_no_violations() {
        assert!(validate_manifest(&manifest(9), Some((8, 8))).is_empty());
    }

    #[test]
    fn negative_trajectory_point_is_reported_once() {
        let mut m = manifest(9);
        m.trajectory = Some(vec![[-1, 5], [3, 3]]);
        let v = validate_manifest(&m, Some((8, 8)));
        assert_eq!(v.len(), 1);
        assert!(matches!(
            v[0],
            Violation::TrajectoryOutOfBounds {
                index: 0,
                x: -1,
                y: 5,
                ..
            }
        ));
    }

    #[test]
    fn empty_episode_is_reported() {
        let mut m = manifest(0);
        m.trajectory = None;
        assert_eq!(validate_manifest(&m, None), vec![Violation::EmptyEpisode]);
    }

    #[test]
    fn duplicates_and_bad_ids() {
        let mut m = manifest(3);
        m.frames.push(m.frames[1].clone());
        m.episode_id = "a/b".into();
        let v = validate_manifest(&m, None);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn manifest_json_field_names() {
        let json = r#"{"episode_id":"e","frames":["a.png"],"instruction":null,"trajectory":[[0,1],[2,3]],"source_dataset":"rt1"}"#;
        let m: EpisodeManifest = serde_json::from_str(json).unwrap();
        assert_eq!(m.trajectory, Some(vec![[0, 1], [2, 3]]));
        assert!(serde_json::from_str::<EpisodeManifest>(
            r#"{"episode_id":"e","frames":[],"source_dataset":"x","extra":1}"#
        )
        .is_err());
    }

    fn write_episode(root: &Path, n: usize, size: (u32, u32)) -> EpisodeManifest {
        let m = EpisodeManifest {
            frames: (0..n).map(|i| PathBuf::from(format!("frames/{i:03}.png"))).collect(),
            trajectory: None,
            ..manifest(0)
        };
        std::fs::create_dir_all(root.join("frames")).unwrap();
        for (i, p) in m.frames.iter().enumerate() {
            Frame::filled(size.0, size.1, [i as u8, 0, 0])
                .unwrap()
                .save_png(root.join(p))
                .unwrap();
        }
        m
    }

    #[test]
    fn loads_sampled_frames() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_episode(dir.path(), 17, (4, 4));
        let frames = load_episode(&m, dir.path(), &SamplingSpec::default()).unwrap();
        let expected = sample_uniform(17, 9).unwrap();
        let got: Vec<usize> = frames.iter().map(|f| f.get(0, 0)[0] as usize).collect();
        assert_eq!(got, expected);

        let resized = load_episode(
            &m,
            dir.path(),
            &SamplingSpec {
                target_count: 9,
                resize_to: Some((2, 6)),
            },
        )
        .unwrap();
        assert!(resized.iter().all(|f| f.dimensions() == (6, 2)));
    }

    #[test]
    fn missing_frame_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_episode(dir.path(), 3, (4, 4));
        std::fs::remove_file(dir.path().join(&m.frames[2])).unwrap();
        let err = load_episode(&m, dir.path(), &SamplingSpec::default()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("002.png"));
        assert!(validate_on_disk(&m, dir.path())
            .iter()
            .any(|v| matches!(v, Violation::UnreadableFrame { .. })));
    }

    #[test]
    fn mismatched_sizes_need_resize() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_episode(dir.path(), 3, (4, 4));
        Frame::filled(5, 4, [0; 3])
            .unwrap()
            .save_png(dir.path().join(&m.frames[2]))
            .unwrap();
        assert!(matches!(
            load_episode(&m, dir.path(), &SamplingSpec::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
