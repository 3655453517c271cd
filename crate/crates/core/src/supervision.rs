//! Training records for the text- and trajectory-conditioned branches, and the
//! reconstruction loss between grids under a pluggable encoder.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::episode::LoadedEpisode;
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::grid::{apply_mask, assemble_grid, GridImage, GridLayout, GridMask};
use crate::metrics::features::read_feature_file;
use crate::overlay::{build_trajectory_grid_input, ColorRamp};

pub const DEFAULT_PROMPT_TEMPLATE: &str =
    "A 3x3 grid of 9 sequential frames of a robot manipulation task, top-left first, serpentine order: {instruction}";

/// Accepted placeholder spellings in a prompt template.
pub const PLACEHOLDERS: [&str; 2] = ["{instruction}", "{}"];

fn count_placeholders(template: &str) -> usize {
    let named = template.matches(PLACEHOLDERS[0]).count();
    let bare = template.matches(PLACEHOLDERS[1]).count();
    named + bare
}

/// Substitutes `instruction` verbatim into a template holding exactly one placeholder.
pub fn build_prompt(instruction: &str, template: &str) -> Result<String> {
    match count_placeholders(template) {
        1 => {}
        n => {
            return Err(Error::InvalidTemplate(format!(
                "expected exactly one of {PLACEHOLDERS:?}, found {n} in {template:?}"
            )))
        }
    }
    let token = PLACEHOLDERS
        .iter()
        .find(|p| template.contains(*p))
        .expect("one placeholder present");
    let prompt = template.replacen(token, instruction, 1);
    if prompt.is_empty() {
        return Err(Error::InvalidTemplate(
            "template and instruction produce an empty prompt".into(),
        ));
    }
    Ok(prompt)
}

/// What the generator is conditioned on besides the masked grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Condition {
    Text {
        prompt: String,
    },
    Trajectory {
        overlay_applied: bool,
    },
    /// Empty text condition used by the trajectory branch.
    Null,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConditionKind {
    Text,
    Trajectory,
    Null,
}

/// On-disk `condition.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionRecord {
    pub kind: ConditionKind,
    pub prompt: Option<String>,
}

impl Condition {
    pub fn kind(&self) -> ConditionKind {
        match self {
            Condition::Text { .. } => ConditionKind::Text,
            Condition::Trajectory { .. } => ConditionKind::Trajectory,
            Condition::Null => ConditionKind::Null,
        }
    }

    pub fn to_record(&self) -> ConditionRecord {
        ConditionRecord {
            kind: self.kind(),
            prompt: match self {
                Condition::Text { prompt } => Some(prompt.clone()),
                _ => None,
            },
        }
    }

    pub fn from_record(record: ConditionRecord) -> Result<Self> {
        match (record.kind, record.prompt) {
            (ConditionKind::Text, Some(prompt)) if !prompt.is_empty() => Ok(Condition::Text { prompt }),
            (ConditionKind::Text, _) => Err(Error::invalid("text condition without a prompt")),
            (ConditionKind::Trajectory, _) => Ok(Condition::Trajectory { overlay_applied: true }),
            (ConditionKind::Null, _) => Ok(Condition::Null),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupervisionPair {
    pub input_grid: GridImage,
    pub target_grid: GridImage,
    pub condition: Condition,
    pub episode_id: String,
}

pub const INPUT_FILE: &str = "input.png";
pub const TARGET_FILE: &str = "target.png";
pub const CONDITION_FILE: &str = "condition.json";

impl SupervisionPair {
    /// Writes `input.png`, `target.png` and `condition.json` into `dir`, creating it.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.input_grid.image().save_png(dir.join(INPUT_FILE))?;
        self.target_grid.image().save_png(dir.join(TARGET_FILE))?;
        let json = serde_json::to_string(&self.condition.to_record()).expect("condition serializes");
        let path = dir.join(CONDITION_FILE);
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: &Path, episode_id: impl Into<String>) -> Result<Self> {
        let input_grid = GridImage::from_frame(Frame::load(dir.join(INPUT_FILE))?)?;
        let target_grid = GridImage::from_frame(Frame::load(dir.join(TARGET_FILE))?)?;
        let path = dir.join(CONDITION_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let record: ConditionRecord =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, "condition record", e))?;
        Ok(Self {
            input_grid,
            target_grid,
            condition: Condition::from_record(record)?,
            episode_id: episode_id.into(),
        })
    }
}

/// Text branch: first-frame-only input grid, full target grid, prompt from the instruction.
pub fn build_text_pair(episode: &LoadedEpisode, template: &str) -> Result<SupervisionPair> {
    let instruction = episode
        .instruction
        .as_deref()
        .filter(|s| !s.trim().is_empty())
        .ok_or_else(|| Error::MissingCondition(format!("episode {} has no instruction", episode.episode_id)))?;
    let prompt = build_prompt(instruction, template)?;
    let target_grid = assemble_grid(&episode.frames, &GridLayout::serpentine())?;
    let input_grid = apply_mask(&target_grid, &GridMask::first_frame());
    Ok(SupervisionPair {
        input_grid,
        target_grid,
        condition: Condition::Text { prompt },
        episode_id: episode.episode_id.clone(),
    })
}

/// Trajectory branch: overlaid first frame as the only visible tile; the target keeps the
/// clean frames.
pub fn build_trajectory_pair(episode: &LoadedEpisode, ramp: &ColorRamp) -> Result<SupervisionPair> {
    let traj = episode
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::MissingCondition(format!("episode {} has no trajectory", episode.episode_id)))?;
    let input_grid = build_trajectory_grid_input(&episode.frames, Some(traj), ramp)?;
    let target_grid = assemble_grid(&episode.frames, &GridLayout::serpentine())?;
    Ok(SupervisionPair {
        input_grid,
        target_grid,
        condition: Condition::Null,
        episode_id: episode.episode_id.clone(),
    })
}

/// Maps a grid into the space the reconstruction loss is measured in.
///
/// Implementations must be deterministic. `Sync` is required so pairs can be scored
/// from worker threads; encoders that cannot run concurrently should serialize internally.
pub trait LatentEncoder: Sync {
    fn name(&self) -> &str;
    fn encode(&self, grid: &GridImage) -> Result<Vec<f64>>;
}

/// Channel values scaled to `[0, 1]`, in row-major interleaved order.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityEncoder;

impl LatentEncoder for IdentityEncoder {
    fn name(&self) -> &str {
        "identity"
    }

    fn encode(&self, grid: &GridImage) -> Result<Vec<f64>> {
        Ok(grid.image().pixels().iter().map(|&v| v as f64 / 255.0).collect())
    }
}

/// Runs an external program per grid. `{input}` in the arguments is replaced by the path of
/// a PNG holding the grid and `{output}` by the path the program must write a single-row
/// feature file to.
#[derive(Debug, Clone)]
pub struct CommandEncoder {
    pub name: String,
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl LatentEncoder for CommandEncoder {
    fn name(&self) -> &str {
        &self.name
    }

    fn encode(&self, grid: &GridImage) -> Result<Vec<f64>> {
        static NEXT: AtomicUsize = AtomicUsize::new(0);
        let scratch = std::env::temp_dir().join(format!(
            "gridplan-enc-{}-{}",
            std::process::id(),
            NEXT.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::create_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
        let result = self.run_in(&scratch, grid);
        let _ = std::fs::remove_dir_all(&scratch);
        result
    }
}

impl CommandEncoder {
    fn run_in(&self, scratch: &Path, grid: &GridImage) -> Result<Vec<f64>> {
        let fail = |message: String| Error::Encoder {
            encoder: self.name.clone(),
            message,
        };
        let input = scratch.join("grid.png");
        let output = scratch.join("features.fvdf");
        grid.image().save_png(&input)?;
        let _ = std::fs::remove_file(&output);
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| {
                a.replace("{input}", &input.to_string_lossy())
                    .replace("{output}", &output.to_string_lossy())
            })
            .collect();
        let status = Command::new(&self.program)
            .args(&args)
            .status()
            .map_err(|e| fail(format!("cannot start {}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(fail(format!("exited with {status}")));
        }
        let features = read_feature_file(&output)?;
        if features.nrows() != 1 {
            return Err(fail(format!("expected one feature row, got {}", features.nrows())));
        }
        Ok(features.row(0).iter().copied().collect())
    }
}

/// Squared L2 distance between the encodings of `target` and `pred`.
pub fn latent_loss(pred: &GridImage, target: &GridImage, encoder: &dyn LatentEncoder) -> Result<f64> {
    if pred.image().dimensions() != target.image().dimensions() {
        let (pw, ph) = pred.image().dimensions();
        let (tw, th) = target.image().dimensions();
        return Err(Error::invalid(format!(
            "prediction is {pw}x{ph} but target is {tw}x{th}"
        )));
    }
    let a = encoder.encode(target)?;
    let b = encoder.encode(pred)?;
    if a.len() != b.len() {
        return Err(Error::Encoder {
            encoder: encoder.name().to_string(),
            message: format!("encodings differ in length: {} vs {}", a.len(), b.len()),
        });
    }
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::overlay::{render_overlay, Trajectory};

    fn episode() -> LoadedEpisode {
        LoadedEpisode {
            episode_id: "ep7".into(),
            source_dataset: "jacoplay".into(),
            instruction: Some("put the carrot on the cloth".into()),
            frames: (0..9u8)
                .map(|t| Frame::from_fn(12, 9, |x, y| [t * 25, x as u8 * 10, y as u8 * 20]).unwrap())
                .collect(),
            trajectory: Some(Trajectory::new(vec![(1, 1), (10, 2), (6, 7)]).unwrap()),
        }
    }

    #[test]
    fn prompt_examples() {
        assert_eq!(
            build_prompt(
                "put the carrot on the cloth",
                "A 3x3 grid of frames showing a robot arm: {}"
            )
            .unwrap(),
            "A 3x3 grid of frames showing a robot arm: put the carrot on the cloth"
        );
        assert_eq!(build_prompt("x", "{}").unwrap(), "x");
        assert!(matches!(
            build_prompt("a", "no placeholder"),
            Err(Error::InvalidTemplate(_))
        ));
        assert!(build_prompt("a", "{} and {instruction}").is_err());
        assert!(build_prompt("a", "{}{}").is_err());
        assert!(build_prompt("", "{}").is_err());
        assert!(build_prompt("go", DEFAULT_PROMPT_TEMPLATE).unwrap().ends_with(": go"));
    }

    #[test]
    fn text_pair_masks_all_but_first_tile() {
        let pair = build_text_pair(&episode(), DEFAULT_PROMPT_TEMPLATE).unwrap();
        assert_eq!(pair.input_grid.nonzero_cells(), vec![(0, 0)]);
        assert_eq!(pair.input_grid.tile((0, 0)), pair.target_grid.tile((0, 0)));
        assert_eq!(pair.condition.kind(), ConditionKind::Text);

        let mut no_text = episode();
        no_text.instruction = None;
        assert!(matches!(
            build_text_pair(&no_text, DEFAULT_PROMPT_TEMPLATE),
            Err(Error::MissingCondition(_))
        ));
    }

    #[test]
    fn trajectory_pair_differs_only_along_the_stroke() {
        let ep = episode();
        let ramp = ColorRamp::default();
        let pair = build_trajectory_pair(&ep, &ramp).unwrap();
        assert_eq!(pair.condition, Condition::Null);
        assert_eq!(pair.input_grid.nonzero_cells(), vec![(0, 0)]);
        let target_first = pair.target_grid.tile((0, 0));
        assert_eq!(target_first, ep.frames[0]);
        let overlaid = render_overlay(&target_first, ep.trajectory.as_ref().unwrap(), &ramp).unwrap();
        assert_eq!(pair.input_grid.tile((0, 0)), overlaid);
        let differing = (0..9)
            .flat_map(|y| (0..12).map(move |x| (x, y)))
            .filter(|&(x, y)| overlaid.get(x, y) != target_first.get(x, y))
            .count();
        assert!(differing > 0);

        let mut no_traj = ep;
        no_traj.trajectory = None;
        assert!(matches!(
            build_trajectory_pair(&no_traj, &ramp),
            Err(Error::MissingCondition(_))
        ));
    }

    #[test]
    fn pair_roundtrips_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        for pair in [
            build_text_pair(&episode(), DEFAULT_PROMPT_TEMPLATE).unwrap(),
            build_trajectory_pair(&episode(), &ColorRamp::default()).unwrap(),
        ] {
            let d = dir.path().join(format!("{:?}", pair.condition.kind()));
            pair.save(&d).unwrap();
            assert_eq!(SupervisionPair::load(&d, "ep7").unwrap(), pair);
        }
        let raw = std::fs::read_to_string(dir.path().join("Null").join(CONDITION_FILE)).unwrap();
        assert_eq!(raw.trim(), r#"{"kind":"null","prompt":null}"#);
    }

    #[test]
    fn identity_loss_examples() {
        let black = GridImage::from_frame(Frame::filled(6, 6, [0; 3]).unwrap()).unwrap();
        assert_eq!(latent_loss(&black, &black, &IdentityEncoder).unwrap(), 0.0);
        let mut one = black.image().clone();
        one.set(4, 2, [0, 255, 0]);
        let one = GridImage::from_frame(one).unwrap();
        assert_eq!(latent_loss(&one, &black, &IdentityEncoder).unwrap(), 1.0);
        assert_eq!(latent_loss(&black, &one, &IdentityEncoder).unwrap(), 1.0);
        let wide = GridImage::from_frame(Frame::filled(9, 6, [0; 3]).unwrap()).unwrap();
        assert!(latent_loss(&wide, &black, &IdentityEncoder).is_err());
    }

    #[cfg(unix)]
    #[test]
    fn command_encoder_reads_feature_file() {
        // writes FVDF v1, N=1, d=2, values [1.0, 0.5]
        let script = r"printf 'FVDF\001\000\000\000\001\000\000\000\002\000\000\000\000\000\200\077\000\000\000\077' > '{output}'";
        let enc = CommandEncoder {
            name: "fixed".into(),
            program: "sh".into(),
            args: vec!["-c".into(), script.into()],
        };
        let g = GridImage::from_frame(Frame::filled(3, 3, [9; 3]).unwrap()).unwrap();
        assert_eq!(enc.encode(&g).unwrap(), vec![1.0, 0.5]);
        assert_eq!(latent_loss(&g, &g, &enc).unwrap(), 0.0);

        let broken = CommandEncoder {
            args: vec!["-c".into(), "exit 3".into()],
            ..enc
        };
        assert!(matches!(broken.encode(&g), Err(Error::Encoder { .. })));
    }
}
