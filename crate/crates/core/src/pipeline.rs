//! End-to-end operations behind the command-line front end. Every operation is
//! deterministic given its inputs: episodes are processed in manifest-name order and
//! all index and log files are written after the parallel phase, in that order.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::episode::{list_manifests, load_episode_full, validate_on_disk, EpisodeManifest, Violation};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::grid::{split_image, GridLayout, GRID_FRAMES};
use crate::lora::{self, DenseLayer, LoraAdapter, Projection, ToyAttentionBlock};
use crate::metrics::{self, EpisodeMetrics, FeatureSet, MetricReport};
use crate::overlay::{render_overlay, ColorRamp, Trajectory};
use crate::supervision::{build_text_pair, build_trajectory_pair, SupervisionPair};

pub const PAIRS_DIR: &str = "pairs";
pub const PAIRS_INDEX: &str = "pairs.jsonl";
pub const EVENTS_LOG: &str = "events.jsonl";
pub const CONFIG_COPY: &str = "config.json";
pub const REPORT_FILE: &str = "report.json";
pub const EPISODES_FILE: &str = "episodes.jsonl";
pub const TABLE_FILE: &str = "table.txt";

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).expect("row serializes");
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// One line of `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairIndexEntry {
    /// Pair directory relative to the output root.
    pub dir: String,
    pub episode_id: String,
    pub source_dataset: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Written,
    Skipped,
}

/// One line of the synthesis event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeEvent {
    pub manifest: String,
    pub episode_id: Option<String>,
    pub status: EpisodeStatus,
    pub pairs: Vec<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<Violation>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisSummary {
    pub episodes_seen: usize,
    pub pairs_written: usize,
    pub episodes_skipped: usize,
    pub events: Vec<EpisodeEvent>,
}

fn write_pair_atomically(pair: &SupervisionPair, pairs_root: &Path, name: &str) -> Result<()> {
    let tmp = pairs_root.join(format!(".tmp-{name}"));
    let dest = pairs_root.join(name);
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    pair.save(&tmp)?;
    if dest.exists() {
        std::fs::remove_dir_all(&dest).map_err(|e| Error::io(&dest, e))?;
    }
    std::fs::rename(&tmp, &dest).map_err(|e| Error::io(&dest, e))
}

struct EpisodeJob {
    manifest_path: PathBuf,
    manifest: std::result::Result<EpisodeManifest, String>,
}

fn process_episode(
    job: &EpisodeJob,
    dataset_root: &Path,
    pairs_root: &Path,
    config: &RunConfig,
) -> (EpisodeEvent, Vec<PairIndexEntry>) {
    let manifest_name = job
        .manifest_path
        .strip_prefix(dataset_root)
        .unwrap_or(&job.manifest_path)
        .to_string_lossy()
        .into_owned();
    let mut event = EpisodeEvent {
        manifest: manifest_name,
        episode_id: None,
        status: EpisodeStatus::Skipped,
        pairs: Vec::new(),
        violations: Vec::new(),
        errors: Vec::new(),
    };
    let manifest = match &job.manifest {
        Ok(m) => m,
        Err(e) => {
            event.errors.push(e.clone());
            return (event, Vec::new());
        }
    };
    event.episode_id = Some(manifest.episode_id.clone());
    event.violations = validate_on_disk(manifest, dataset_root);
    if !event.violations.is_empty() {
        return (event, Vec::new());
    }
    let episode = match load_episode_full(manifest, dataset_root, &config.sampling) {
        Ok(ep) => ep,
        Err(e) => {
            event.errors.push(e.to_string());
            return (event, Vec::new());
        }
    };

    let mut builds: Vec<(&str, Result<SupervisionPair>)> = Vec::new();
    if config.branch.wants_text() {
        builds.push(("text", build_text_pair(&episode, &config.prompt_template)));
    }
    if config.branch.wants_trajectory() {
        builds.push(("trajectory", build_trajectory_pair(&episode, &config.ramp)));
    }
    let mut index = Vec::new();
    for (branch, built) in builds {
        let name = format!("{}__{branch}", episode.episode_id);
        let written = built.and_then(|pair| write_pair_atomically(&pair, pairs_root, &name).map(|_| pair));
        match written {
            Ok(pair) => {
                let dir = format!("{PAIRS_DIR}/{name}");
                event.pairs.push(dir.clone());
                index.push(PairIndexEntry {
                    dir,
                    episode_id: episode.episode_id.clone(),
                    source_dataset: episode.source_dataset.clone(),
                    kind: serde_json::to_value(pair.condition.kind())
                        .ok()
                        .and_then(|v| v.as_str().map(String::from))
                        .unwrap_or_default(),
                });
            }
            Err(e) => event.errors.push(format!("{branch}: {e}")),
        }
    }
    if !index.is_empty() {
        event.status = EpisodeStatus::Written;
    }
    (event, index)
}

/// Builds supervision pairs for every valid episode under `config.dataset_root`.
///
/// Output layout under `config.output_root`: `pairs/<episode>__<branch>/`, `pairs.jsonl`,
/// `events.jsonl` and a copy of the resolved config. Invalid episodes are logged and skipped;
/// only an unreadable dataset root or output failure is fatal.
pub fn synthesize(config: &RunConfig, jobs: usize) -> Result<SynthesisSummary> {
    config.validate()?;
    let dataset_root = config
        .dataset_root
        .as_deref()
        .ok_or_else(|| Error::invalid("dataset_root is not set"))?;
    let output_root = config
        .output_root
        .as_deref()
        .ok_or_else(|| Error::invalid("output_root is not set"))?;
    let manifests = list_manifests(dataset_root)?;

    let pairs_root = output_root.join(PAIRS_DIR);
    create_dir(&pairs_root)?;
    let config_path = output_root.join(CONFIG_COPY);
    std::fs::write(&config_path, config.to_json()).map_err(|e| Error::io(&config_path, e))?;

    let mut seen_ids = HashSet::new();
    let jobs_list: Vec<EpisodeJob> = manifests
        .into_iter()
        .map(|manifest_path| {
            let manifest = EpisodeManifest::load(&manifest_path)
                .map_err(|e| e.to_string())
                .and_then(|m| {
                    if seen_ids.insert(m.episode_id.clone()) {
                        Ok(m)
                    } else {
                        Err(format!("duplicate episode id {:?}", m.episode_id))
                    }
                });
            EpisodeJob {
                manifest_path,
                manifest,
            }
        })
        .collect();

    let pool = thread_pool(jobs)?;
    let results: Vec<(EpisodeEvent, Vec<PairIndexEntry>)> = pool.install(|| {
        jobs_list
            .par_iter()
            .map(|job| process_episode(job, dataset_root, &pairs_root, config))
            .collect()
    });

    let mut index = Vec::new();
    let mut events = Vec::new();
    for (event, entries) in results {
        match event.status {
            EpisodeStatus::Written => info!("{}: wrote {} pair(s)", event.manifest, entries.len()),
            EpisodeStatus::Skipped => {
                let reasons: Vec<String> = event
                    .violations
                    .iter()
                    .map(|v| v.to_string())
                    .chain(event.errors.iter().cloned())
                    .collect();
                warn!("{}: skipped ({})", event.manifest, reasons.join("; "));
            }
        }
        index.extend(entries);
        events.push(event);
    }
    write_jsonl(&output_root.join(PAIRS_INDEX), &index)?;
    write_jsonl(&output_root.join(EVENTS_LOG), &events)?;

    let skipped = events.iter().filter(|e| e.status == EpisodeStatus::Skipped).count();
    Ok(SynthesisSummary {
        episodes_seen: events.len(),
        pairs_written: index.len(),
        episodes_skipped: skipped,
        events,
    })
}

pub fn read_pairs_index(path: impl AsRef<Path>) -> Result<Vec<PairIndexEntry>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::format(path, "pairs index", e)))
        .collect()
}

/// Splits a grid PNG into `frame_1.png` … `frame_9.png` in temporal order.
pub fn split(grid_path: &Path, output_dir: &Path) -> Result<Vec<PathBuf>> {
    let image = Frame::load(grid_path)?;
    let frames = split_image(image, &GridLayout::serpentine()).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", grid_path.display())),
        other => other,
    })?;
    create_dir(output_dir)?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = output_dir.join(format!("frame_{}.png", i + 1));
            f.save_png(&path).map(|_| path)
        })
        .collect()
}

/// Reads a trajectory file: a JSON array of `[x, y]` pairs.
pub fn read_trajectory_file(path: &Path) -> Result<Vec<[i64; 2]>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, "trajectory", e))
}

/// Draws the trajectory stored at `trajectory_path` over the frame and writes a PNG.
pub fn overlay(frame_path: &Path, trajectory_path: &Path, out_path: &Path, ramp: &ColorRamp) -> Result<()> {
    let frame = Frame::load(frame_path)?;
    let points = read_trajectory_file(trajectory_path)?;
    if points.is_empty() {
        return Err(Error::invalid(format!(
            "{}: trajectory is empty",
            trajectory_path.display()
        )));
    }
    let traj = Trajectory::from_points(&points, frame.dimensions())?;
    render_overlay(&frame, &traj, ramp)?.save_png(out_path)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestCheck {
    pub manifest: String,
    pub episode_id: Option<String>,
    pub violations: Vec<String>,
}

/// Validates every manifest under a dataset root without loading frame pixels.
pub fn validate_dataset(dataset_root: &Path) -> Result<Vec<ManifestCheck>> {
    let mut ids = HashSet::new();
    list_manifests(dataset_root)?
        .into_iter()
        .map(|path| {
            let manifest_name = path
                .strip_prefix(dataset_root)
                .unwrap_or(&path)
                .to_string_lossy()
                .into_owned();
            Ok(match EpisodeManifest::load(&path) {
                Ok(m) => {
                    let mut violations: Vec<String> = validate_on_disk(&m, dataset_root)
                        .iter()
                        .map(|v| v.to_string())
                        .collect();
                    if !ids.insert(m.episode_id.clone()) {
                        violations.push(format!("duplicate episode id {:?}", m.episode_id));
                    }
                    ManifestCheck {
                        manifest: manifest_name,
                        episode_id: Some(m.episode_id),
                        violations,
                    }
                }
                Err(e) => ManifestCheck {
                    manifest: manifest_name,
                    episode_id: None,
                    violations: vec![e.to_string()],
                },
            })
        })
        .collect()
}

/// Where an evaluation episode's frames come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FrameSource {
    /// Directory holding `frame_1.png` … `frame_9.png`.
    Frames(PathBuf),
    /// A single grid PNG.
    Grid(PathBuf),
}

impl FrameSource {
    pub fn load(&self) -> Result<Vec<Frame>> {
        match self {
            FrameSource::Frames(dir) => (1..=GRID_FRAMES)
                .map(|i| Frame::load(dir.join(format!("frame_{i}.png"))))
                .collect(),
            FrameSource::Grid(path) => split_image(Frame::load(path)?, &GridLayout::serpentine()),
        }
    }
}

/// Episodes in an evaluation directory: subdirectories containing `frame_1.png`, or
/// `<episode_id>.png` grid files. Keyed by episode id.
pub fn discover_episodes(dir: &Path) -> Result<BTreeMap<String, FrameSource>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(String::from) else {
            continue;
        };
        if path.is_dir() && path.join("frame_1.png").is_file() {
            let name = path.file_name().and_then(|s| s.to_str()).unwrap_or(&stem).to_string();
            out.insert(name, FrameSource::Frames(path));
        } else if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.insert(stem, FrameSource::Grid(path));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateRequest {
    pub pred_dir: PathBuf,
    pub gt_dir: PathBuf,
    pub real_features: Option<PathBuf>,
    pub gen_features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub dataset: String,
    pub method: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationOutcome {
    pub report: MetricReport,
    pub episodes: Vec<EpisodeMetrics>,
    /// Episode ids present on only one side; excluded from the means.
    pub unmatched: Vec<String>,
    pub warnings: Vec<String>,
}

/// Scores predicted episodes against references and aggregates a report.
pub fn evaluate(req: &EvaluateRequest, config: &RunConfig, jobs: usize) -> Result<EvaluationOutcome> {
    let pred = discover_episodes(&req.pred_dir)?;
    let gt = discover_episodes(&req.gt_dir)?;
    let mut warnings = Vec::new();
    let unmatched: Vec<String> = pred
        .keys()
        .filter(|k| !gt.contains_key(*k))
        .chain(gt.keys().filter(|k| !pred.contains_key(*k)))
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    for id in &unmatched {
        warnings.push(format!("episode {id} has no counterpart; excluded"));
    }
    let matched: Vec<(&String, &FrameSource, &FrameSource)> = pred
        .iter()
        .filter_map(|(id, p)| gt.get(id).map(|g| (id, p, g)))
        .collect();
    if matched.is_empty() {
        return Err(Error::invalid(format!(
            "no episode appears in both {} and {}",
            req.pred_dir.display(),
            req.gt_dir.display()
        )));
    }

    let pool = thread_pool(jobs)?;
    let episodes: Vec<EpisodeMetrics> = pool.install(|| {
        matched
            .par_iter()
            .map(|(id, p, g)| {
                let (ssim, mse) = metrics::evaluate_generation(&p.load()?, &g.load()?, &config.ssim)
                    .map_err(|e| Error::invalid(format!("episode {id}: {e}")))?;
                Ok(EpisodeMetrics {
                    episode_id: (*id).clone(),
                    ssim,
                    mse,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let n = episodes.len() as f64;
    let ssim = episodes.iter().map(|e| e.ssim).sum::<f64>() / n;
    let mse = episodes.iter().map(|e| e.mse).sum::<f64>() / n;

    let fvd = match (&req.real_features, &req.gen_features) {
        _ if !config.metrics.fvd => None,
        (Some(real), Some(gen)) => {
            let real = metrics::fit_gaussian(&FeatureSet::load(real)?);
            let gen = metrics::fit_gaussian(&FeatureSet::load(gen)?);
            Some(metrics::frechet_distance(&real, &gen)?)
        }
        (None, None) => None,
        _ => {
            warnings.push("FVD needs both real and generated feature files; omitted".into());
            None
        }
    };

    let success_rate = match &req.labels {
        Some(path) if config.metrics.success => {
            let labels = metrics::read_labels(path)?;
            let outcomes: Vec<bool> = labels.iter().map(|l| l.success).collect();
            Some(metrics::success_rate(&outcomes)?)
        }
        _ => None,
    };

    let report = MetricReport {
        dataset: req.dataset.clone(),
        method: req.method.clone(),
        fvd,
        ssim,
        mse,
        success_rate,
        n_episodes: episodes.len(),
    };
    report.validate()?;
    Ok(EvaluationOutcome {
        report,
        episodes,
        unmatched,
        warnings,
    })
}

/// Writes `report.json`, `episodes.jsonl` and `table.txt` into `out_dir`.
pub fn write_evaluation(outcome: &EvaluationOutcome, out_dir: &Path) -> Result<()> {
    create_dir(out_dir)?;
    let report_path = out_dir.join(REPORT_FILE);
    let json = serde_json::to_string_pretty(&outcome.report).expect("report serializes") + "\n";
    std::fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    write_jsonl(&out_dir.join(EPISODES_FILE), &outcome.episodes)?;
    let table_path = out_dir.join(TABLE_FILE);
    let mut table = std::fs::File::create(&table_path).map_err(|e| Error::io(&table_path, e))?;
    table
        .write_all(metrics::report::render_table(std::slice::from_ref(&outcome.report)).as_bytes())
        .map_err(|e| Error::io(&table_path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptedMatrix {
    pub name: String,
    pub d_out: usize,
    pub d_in: usize,
    pub rank: usize,
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub ratio: f64,
    pub merged_max_abs_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientCheck {
    pub d: usize,
    pub rank: usize,
    pub rel_err_a: f64,
    pub rel_err_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoraDemoReport {
    pub d_model: usize,
    pub d_ff: usize,
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
    pub adapted: Vec<AdaptedMatrix>,
    pub total_trainable_params: usize,
    pub block_merged_max_abs_dev: f64,
    pub gradient_check: GradientCheck,
}

#[derive(Debug, Clone, Copy)]
pub struct LoraDemoParams {
    pub d_model: usize,
    pub d_ff: usize,
    pub rank: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for LoraDemoParams {
    fn default() -> Self {
        Self {
            d_model: 64,
            d_ff: 128,
            rank: 4,
            alpha: 1.0,
            seed: 0,
        }
    }
}

fn random_adapter(d_out: usize, d_in: usize, rank: usize, alpha: f64, rng: &mut ChaCha8Rng) -> Result<LoraAdapter> {
    let normal = Normal::new(0.0, 0.1).expect("positive std");
    let a = DMatrix::from_fn(d_out, rank, |_, _| normal.sample(rng));
    let b = DMatrix::from_fn(d_in, rank, |_, _| normal.sample(rng));
    LoraAdapter::new(a, b, alpha)
}

/// Attaches random (nonzero) adapters to the adaptable projections of a toy block and
/// reports parameter budgets, merge deviations and a finite-difference gradient check.
pub fn lora_demo(params: LoraDemoParams) -> Result<LoraDemoReport> {
    let LoraDemoParams {
        d_model,
        d_ff,
        rank,
        alpha,
        seed,
    } = params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("positive std");
    let mut block = ToyAttentionBlock::random(d_model, d_ff, seed)?;
    let mut adapted = Vec::new();
    for which in Projection::ALL.into_iter().filter(|p| p.adaptable()) {
        let layer = block.layer(which).clone();
        let adapter = random_adapter(layer.d_out(), layer.d_in(), rank, alpha, &mut rng)?;
        let x = DVector::from_fn(layer.d_in(), |_, _| normal.sample(&mut rng));
        let unmerged = lora::lora_forward(&layer, &adapter, &x)?;
        let merged = lora::merge_adapter(&layer, &adapter)?.forward(&x)?;
        let trainable = lora::param_count(layer.d_out(), layer.d_in(), rank);
        let frozen = layer.d_out() * layer.d_in();
        adapted.push(AdaptedMatrix {
            name: which.to_string(),
            d_out: layer.d_out(),
            d_in: layer.d_in(),
            rank,
            trainable_params: trainable,
            frozen_params: frozen,
            ratio: trainable as f64 / frozen as f64,
            merged_max_abs_dev: (unmerged - merged).abs().max(),
        });
        block.attach(which, adapter)?;
    }
    let tokens = DMatrix::from_fn(4, d_model, |_, _| normal.sample(&mut rng));
    let block_dev = (block.forward(&tokens)? - block.merged()?.forward(&tokens)?)
        .abs()
        .max();

    let small_d = d_model.min(16);
    let small_r = rank.min(2).min(small_d);
    let layer = DenseLayer::new(DMatrix::from_fn(small_d, small_d, |_, _| normal.sample(&mut rng)), None)?;
    let adapter = random_adapter(small_d, small_d, small_r, alpha, &mut rng)?;
    let x = DVector::from_fn(small_d, |_, _| normal.sample(&mut rng));
    let y = DVector::from_fn(small_d, |_, _| normal.sample(&mut rng));
    let (rel_err_a, rel_err_b) = lora::gradient_check(&layer, &adapter, &x, &y, 1e-5)?;

    Ok(LoraDemoReport {
        d_model,
        d_ff,
        rank,
        alpha,
        seed,
        total_trainable_params: adapted.iter().map(|a| a.trainable_params).sum(),
        adapted,
        block_merged_max_abs_dev: block_dev,
        gradient_check: GradientCheck {
            d: small_d,
            rank: small_r,
            rel_err_a,
            rel_err_b,
        },
    })
}
