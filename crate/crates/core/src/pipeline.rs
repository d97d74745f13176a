//! Stage orchestration over a workspace directory, with an append-only run
//! manifest and per-stage skip-if-unchanged.
//!
//! Workspace layout:
//!
//! ```text
//! raw/                 fetched images
//! filter/              report.txt, report.kv, survivors.txt
//! scene/scene.json     imported poses
//! train/               final.marf, split.txt, snapshots.tsv, snapshot_<t>s.marf
//! render/              held-out renders and psnr.tsv
//! search/              trials.tsv, best.toml
//! bootstrap/           replica_<seed>.marf, replicas.txt, failures.txt
//! flythrough/          mean_%05d.png, sigma_%05d.png, sigma_scale.txt
//! configs/<sha>.toml   every stage configuration referenced by the manifest
//! run_manifest.log     one record per stage invocation
//! ```

use std::collections::HashSet;
use std::fmt::{self, Write as _};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::camera::{import_colmap, load_scene, normalize_scene, save_scene, Intrinsics, Pose, SceneManifest};
use crate::config::{Budget, PipelineConfig};
use crate::fetch::{fetch, read_url_manifest, FetchOptions, FetchReport};
use crate::filters::{read_path_manifest, run_filter_bank};
use crate::image::{save_image, ImageBuffer};
use crate::train::{
    evaluate_views, format_db, holdout_split, load_checkpoint, load_views, random_search, render_views,
    save_checkpoint, scene_psnr, train, Checkpoint, TrainConfig, TrainingSet, write_trial_table,
};
use crate::uncertainty::{bootstrap_train, flythrough, interpolate_path, BootstrapOptions};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StageName {
    Fetch,
    Filter,
    ImportPoses,
    Train,
    Render,
    Search,
    Bootstrap,
    Flythrough,
}

impl StageName {
    pub const ALL: [StageName; 8] = [
        StageName::Fetch,
        StageName::Filter,
        StageName::ImportPoses,
        StageName::Train,
        StageName::Render,
        StageName::Search,
        StageName::Bootstrap,
        StageName::Flythrough,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Fetch => "fetch",
            StageName::Filter => "filter",
            StageName::ImportPoses => "import-poses",
            StageName::Train => "train",
            StageName::Render => "render",
            StageName::Search => "search",
            StageName::Bootstrap => "bootstrap",
            StageName::Flythrough => "flythrough",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StageName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown stage `{s}`")))
    }
}

/// Paths of every stage output under one root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    /// Creates the root if needed and checks that it is writable.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        let probe = root.join(".write-test");
        std::fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
        let _ = std::fs::remove_file(&probe);
        Ok(Workspace { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn raw_dir(&self) -> PathBuf {
        self.root.join("raw")
    }

    pub fn filter_dir(&self) -> PathBuf {
        self.root.join("filter")
    }

    pub fn survivors_path(&self) -> PathBuf {
        self.filter_dir().join("survivors.txt")
    }

    pub fn scene_path(&self) -> PathBuf {
        self.root.join("scene").join("scene.json")
    }

    pub fn train_dir(&self) -> PathBuf {
        self.root.join("train")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.train_dir().join("final.marf")
    }

    pub fn split_path(&self) -> PathBuf {
        self.train_dir().join("split.txt")
    }

    pub fn render_dir(&self) -> PathBuf {
        self.root.join("render")
    }

    pub fn psnr_table_path(&self) -> PathBuf {
        self.render_dir().join("psnr.tsv")
    }

    pub fn search_dir(&self) -> PathBuf {
        self.root.join("search")
    }

    pub fn best_config_path(&self) -> PathBuf {
        self.search_dir().join("best.toml")
    }

    pub fn bootstrap_dir(&self) -> PathBuf {
        self.root.join("bootstrap")
    }

    pub fn replica_list_path(&self) -> PathBuf {
        self.bootstrap_dir().join("replicas.txt")
    }

    pub fn flythrough_dir(&self) -> PathBuf {
        self.root.join("flythrough")
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join("run_manifest.log")
    }

    fn configs_dir(&self) -> PathBuf {
        self.root.join("configs")
    }

    fn stamp_path(&self, stage: StageName) -> PathBuf {
        self.root.join(".stamps").join(stage.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Inputs and configuration matched the previous run and its outputs
    /// were still present.
    Skipped,
}

/// One line of the run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub stage: StageName,
    pub status: StageStatus,
    pub started_unix: u64,
    pub wall_seconds: f64,
    pub config_sha256: String,
    pub inputs_sha256: String,
    pub input_count: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub version: String,
    pub command: String,
}

impl StageRecord {
    pub fn to_line(&self) -> String {
        let status = match self.status {
            StageStatus::Ran => "ran",
            StageStatus::Skipped => "skipped",
        };
        format!(
            "started={}\tstage={}\tstatus={status}\twall_s={:.3}\tconfig_sha256={}\tinputs_sha256={}\tinputs={}\tseed={}\tdeterministic={}\tversion={}\tcommand={}",
            self.started_unix,
            self.stage,
            self.wall_seconds,
            self.config_sha256,
            self.inputs_sha256,
            self.input_count,
            self.seed,
            self.deterministic,
            self.version,
            self.command.replace(['\t', '\n'], " ")
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("run manifest record lacks a valid {what}: {line}"));
        let mut fields = std::collections::HashMap::new();
        for part in line.split('\t') {
            let (k, v) = part.split_once('=').ok_or_else(|| bad("key=value layout"))?;
            fields.insert(k, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| bad(k));
        Ok(StageRecord {
            stage: get("stage")?.parse()?,
            status: match get("status")? {
                "ran" => StageStatus::Ran,
                "skipped" => StageStatus::Skipped,
                _ => return Err(bad("status")),
            },
            started_unix: get("started")?.parse().map_err(|_| bad("started"))?,
            wall_seconds: get("wall_s")?.parse().map_err(|_| bad("wall_s"))?,
            config_sha256: get("config_sha256")?.to_string(),
            inputs_sha256: get("inputs_sha256")?.to_string(),
            input_count: get("inputs")?.parse().map_err(|_| bad("inputs"))?,
            seed: get("seed")?.parse().map_err(|_| bad("seed"))?,
            deterministic: get("deterministic")?.parse().map_err(|_| bad("deterministic"))?,
            version: get("version")?.to_string(),
            command: get("command")?.to_string(),
        })
    }
}

pub fn read_run_manifest(path: impl AsRef<Path>) -> Result<Vec<StageRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().filter(|l| !l.trim().is_empty()).map(StageRecord::parse_line).collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Digest over the contents of `paths`, in order.
fn hash_inputs(paths: &[PathBuf]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        h.update(Sha256::digest(&bytes));
    }
    Ok(hex::encode(h.finalize()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn require(stage: StageName, needs: &str, path: PathBuf) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Prerequisite {
            stage: stage.to_string(),
            needs: needs.to_string(),
            missing: path,
        })
    }
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("png" | "jpg" | "jpeg")
    )
}

/// Train/held-out view indices as written to `split.txt`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSplit {
    pub train: Vec<usize>,
    pub heldout: Vec<usize>,
}

impl ViewSplit {
    fn to_text(&self) -> String {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        format!("train\t{}\nheldout\t{}\n", join(&self.train), join(&self.heldout))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut split = ViewSplit {
            train: Vec::new(),
            heldout: Vec::new(),
        };
        for line in text.lines() {
            let (key, rest) = line.split_once('\t').unwrap_or((line, ""));
            let ids = rest
                .split_whitespace()
                .map(|t| t.parse().map_err(|_| Error::Format(format!("{}: bad index `{t}`", path.display()))))
                .collect::<Result<Vec<usize>>>()?;
            match key {
                "train" => split.train = ids,
                "heldout" => split.heldout = ids,
                _ => return Err(Error::Format(format!("{}: unexpected line `{line}`", path.display()))),
            }
        }
        Ok(split)
    }
}

type View = (Intrinsics, Pose, ImageBuffer);

fn select(views: &[View], idx: &[usize]) -> Vec<View> {
    idx.iter().map(|&i| views[i].clone()).collect()
}

/// A configured pipeline bound to a workspace.
pub struct Pipeline {
    config: PipelineConfig,
    workspace: Workspace,
    command: String,
}

struct StagePlan {
    stage: StageName,
    config_text: String,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: u64,
}

impl Pipeline {
    /// `command` is recorded verbatim in the run manifest.
    pub fn new(config: PipelineConfig, workspace: Workspace, command: impl Into<String>) -> Result<Self> {
        config.validate()?;
        Ok(Pipeline {
            config,
            workspace,
            command: command.into(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn workspace(&self) -> &Workspace {
        &self.workspace
    }

    /// Runs `body` unless the stamp from an identical earlier run is present
    /// and every output still exists. Appends the manifest record either way.
    fn execute(&self, plan: StagePlan, body: impl FnOnce() -> Result<()>) -> Result<StageRecord> {
        let started = Instant::now();
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let config_sha = sha256_hex(plan.config_text.as_bytes());
        let inputs_sha = hash_inputs(&plan.inputs)?;
        let stamp = format!("{}\n{config_sha}\n{inputs_sha}\n", plan.stage);
        let stamp_path = self.workspace.stamp_path(plan.stage);
        let fresh = std::fs::read_to_string(&stamp_path).is_ok_and(|s| s == stamp)
            && plan.outputs.iter().all(|p| p.exists());
        let status = if fresh {
            log::info!("{}: inputs unchanged, skipping", plan.stage);
            StageStatus::Skipped
        } else {
            let _ = std::fs::remove_file(&stamp_path);
            body()?;
            write_text(&stamp_path, &stamp)?;
            StageStatus::Ran
        };
        let config_copy = self.workspace.configs_dir().join(format!("{config_sha}.toml"));
        if !config_copy.exists() {
            write_text(&config_copy, &plan.config_text)?;
        }
        let record = StageRecord {
            stage: plan.stage,
            status,
            started_unix,
            wall_seconds: started.elapsed().as_secs_f64(),
            config_sha256: config_sha,
            inputs_sha256: inputs_sha,
            input_count: plan.inputs.len(),
            seed: plan.seed,
            deterministic: self.config.train.deterministic,
            version: VERSION.to_string(),
            command: self.command.clone(),
        };
        let path = self.workspace.manifest_path();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(file, "{}", record.to_line()).map_err(|e| Error::io(&path, e))?;
        Ok(record)
    }

    /// Runs the requested stages in pipeline order.
    pub fn run(&self, stages: &[StageName]) -> Result<Vec<StageRecord>> {
        let mut order: Vec<StageName> = stages.to_vec();
        order.sort();
        order.dedup();
        order
            .into_iter()
            .map(|s| match s {
                StageName::Fetch => self.fetch(&FetchOptions::default()).map(|(r, _)| r),
                StageName::Filter => self.filter(),
                StageName::ImportPoses => self.import_poses(),
                StageName::Train => self.train(),
                StageName::Render => self.render(),
                StageName::Search => self.search(),
                StageName::Bootstrap => self.bootstrap(),
                StageName::Flythrough => self.flythrough(),
            })
            .collect()
    }

    /// Downloads the URL manifest into `raw/`. Fails only when every URL
    /// failed.
    pub fn fetch(&self, options: &FetchOptions) -> Result<(StageRecord, FetchReport)> {
        let manifest = self
            .config
            .inputs
            .urls
            .clone()
            .ok_or_else(|| Error::Config("no URL manifest: set [inputs].urls".into()))?;
        let urls = read_url_manifest(&manifest)?;
        let raw = self.workspace.raw_dir();
        let mut report = FetchReport::default();
        // Downloads always run: the skip decision is per file, by size.
        let plan = StagePlan {
            stage: StageName::Fetch,
            config_text: urls.join("\n"),
            inputs: vec![manifest],
            outputs: vec![],
            seed: 0,
        };
        let _ = std::fs::remove_file(self.workspace.stamp_path(StageName::Fetch));
        let record = self.execute(plan, || {
            report = fetch(&urls, &raw, options)?;
            write_text(&self.workspace.root.join("fetch_report.tsv"), &report.to_table())?;
            if report.all_failed() {
                return Err(Error::Network(format!("all {} downloads failed", report.entries.len())));
            }
            Ok(())
        })?;
        Ok((record, report))
    }

    fn filter_inputs(&self) -> Result<Vec<PathBuf>> {
        if let Some(list) = &self.config.inputs.images {
            return read_path_manifest(list);
        }
        let raw = self.workspace.raw_dir();
        let mut paths: Vec<PathBuf> = match std::fs::read_dir(&raw) {
            Ok(entries) => entries.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| is_image_file(p)).collect(),
            Err(_) => Vec::new(),
        };
        if paths.is_empty() {
            return Err(Error::Prerequisite {
                stage: StageName::Filter.to_string(),
                needs: "fetch".into(),
                missing: raw,
            });
        }
        paths.sort();
        Ok(paths)
    }

    pub fn filter(&self) -> Result<StageRecord> {
        let paths = self.filter_inputs()?;
        let dir = self.workspace.filter_dir();
        let plan = StagePlan {
            stage: StageName::Filter,
            config_text: toml::to_string(&self.config.filter).expect("filter config serializes"),
            inputs: paths.clone(),
            outputs: vec![dir.join("report.txt"), dir.join("report.kv"), self.workspace.survivors_path()],
            seed: 0,
        };
        self.execute(plan, || {
            let report = run_filter_bank(&paths, &self.config.filter)?;
            write_text(&dir.join("report.txt"), &report.to_table())?;
            write_text(&dir.join("report.kv"), &report.to_key_value())?;
            let mut survivors = String::new();
            for p in report.survivors() {
                let _ = writeln!(survivors, "{}", std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf()).display());
            }
            write_text(&self.workspace.survivors_path(), &survivors)?;
            log::info!("filter: {} of {} images kept", report.survivors().len(), report.records.len());
            Ok(())
        })
    }

    /// Imports poses from a COLMAP model (normalized into the unit cube and
    /// restricted to filter survivors when a filter report exists) or from a
    /// native scene manifest taken as is.
    pub fn import_poses(&self) -> Result<StageRecord> {
        let inputs_cfg = &self.config.inputs;
        let survivors = self.workspace.survivors_path();
        let (inputs, config_text) = match (&inputs_cfg.colmap_model, &inputs_cfg.scene) {
            (Some(model), _) => {
                let mut inputs = vec![model.join("cameras.txt"), model.join("images.txt")];
                if survivors.exists() {
                    inputs.push(survivors.clone());
                }
                let images = inputs_cfg.colmap_images.clone().unwrap_or_else(|| self.workspace.raw_dir());
                (inputs, format!("colmap_model = {:?}\ncolmap_images = {:?}\n", model, images))
            }
            (None, Some(scene)) => (vec![scene.clone()], format!("scene = {scene:?}\n")),
            (None, None) => {
                return Err(Error::Config(
                    "no pose source: set [inputs].colmap_model or [inputs].scene".into(),
                ))
            }
        };
        let out = self.workspace.scene_path();
        let plan = StagePlan {
            stage: StageName::ImportPoses,
            config_text,
            inputs,
            outputs: vec![out.clone()],
            seed: 0,
        };
        self.execute(plan, || {
            let mut manifest = match (&inputs_cfg.colmap_model, &inputs_cfg.scene) {
                (Some(model), _) => {
                    let images = inputs_cfg.colmap_images.clone().unwrap_or_else(|| self.workspace.raw_dir());
                    let mut m = import_colmap(model, &images)?;
                    if survivors.exists() {
                        let keep: HashSet<PathBuf> = read_path_manifest(&survivors)?.into_iter().collect();
                        let before = m.entries.len();
                        m.entries.retain(|e| {
                            std::fs::canonicalize(&e.path).is_ok_and(|p| keep.contains(&p))
                        });
                        log::info!("import-poses: {} of {before} posed images survived filtering", m.entries.len());
                    }
                    normalize_scene(&m)?
                }
                (_, Some(scene)) => load_scene(scene)?,
                (None, None) => unreachable!("checked above"),
            };
            for e in &mut manifest.entries {
                if let Ok(abs) = std::fs::canonicalize(&e.path) {
                    e.path = abs;
                }
            }
            save_scene(&manifest, &out)
        })
    }

    fn scene(&self, stage: StageName) -> Result<(SceneManifest, Vec<View>)> {
        let path = self.workspace.scene_path();
        require(stage, "import-poses", path.clone())?;
        let manifest = load_scene(&path)?;
        let views = load_views(&manifest)?;
        Ok((manifest, views))
    }

    fn scene_inputs(&self, manifest: &SceneManifest) -> Vec<PathBuf> {
        let mut v = vec![self.workspace.scene_path()];
        v.extend(manifest.entries.iter().map(|e| e.path.clone()));
        v
    }

    fn split(&self, views: usize) -> Result<ViewSplit> {
        let (train, heldout) = holdout_split(views, self.config.evaluation.holdout_fraction, self.config.train.seed)?;
        Ok(ViewSplit { train, heldout })
    }

    /// Trains on the training split, saving snapshots with their held-out
    /// PSNR and the final checkpoint.
    pub fn train(&self) -> Result<StageRecord> {
        let (manifest, views) = self.scene(StageName::Train)?;
        let cfg = &self.config.train;
        let dir = self.workspace.train_dir();
        let plan = StagePlan {
            stage: StageName::Train,
            config_text: format!(
                "{}\n[evaluation]\nholdout_fraction = {}\n",
                cfg.to_toml(),
                self.config.evaluation.holdout_fraction
            ),
            inputs: self.scene_inputs(&manifest),
            outputs: vec![self.workspace.checkpoint_path(), self.workspace.split_path()],
            seed: cfg.seed,
        };
        self.execute(plan, || {
            let split = self.split(views.len())?;
            write_text(&self.workspace.split_path(), &split.to_text())?;
            let data = TrainingSet::from_views(&select(&views, &split.train), &manifest.aabb)?;
            let held = select(&views, &split.heldout);
            let mut table = String::from("at_s\tstep\theldout_psnr_db\n");
            let out = train(&data, cfg, &mut |snap| {
                let (_, mean) = evaluate_views(snap.field, &held, &manifest.aabb, &cfg.render)?;
                let _ = writeln!(table, "{}\t{}\t{}", snap.at_seconds, snap.step, format_db(mean));
                let ckpt = Checkpoint {
                    config: cfg.clone(),
                    step: snap.step,
                    psnr: mean,
                    field: snap.field.clone(),
                };
                save_checkpoint(&ckpt, dir.join(format!("snapshot_{}s.marf", snap.at_seconds)))
            })?;
            write_text(&dir.join("snapshots.tsv"), &table)?;
            log::info!("train: {} steps in {:.1}s, running psnr {}", out.steps, out.elapsed, format_db(out.running_psnr));
            let ckpt = Checkpoint {
                config: cfg.clone(),
                step: out.steps,
                psnr: out.running_psnr,
                field: out.field,
            };
            save_checkpoint(&ckpt, self.workspace.checkpoint_path())
        })
    }

    /// Renders the held-out views of the final checkpoint and tabulates
    /// their PSNR.
    pub fn render(&self) -> Result<StageRecord> {
        let ckpt_path = self.workspace.checkpoint_path();
        require(StageName::Render, "train", ckpt_path.clone())?;
        let (manifest, views) = self.scene(StageName::Render)?;
        let split_path = self.workspace.split_path();
        let mut inputs = vec![ckpt_path.clone(), split_path.clone()];
        inputs.extend(self.scene_inputs(&manifest));
        let dir = self.workspace.render_dir();
        let plan = StagePlan {
            stage: StageName::Render,
            config_text: toml::to_string(&self.config.train.render).expect("render options serialize"),
            inputs,
            outputs: vec![self.workspace.psnr_table_path()],
            seed: self.config.train.seed,
        };
        self.execute(plan, || {
            let ckpt = load_checkpoint(&ckpt_path)?;
            let split = ViewSplit::read(&split_path)?;
            let cams: Vec<_> = split.heldout.iter().map(|&i| (views[i].0, views[i].1)).collect();
            let rendered = render_views(&ckpt.field, &cams, &manifest.aabb, &self.config.train.render)?;
            let mut table = String::from("view\tfile\tpsnr_db\n");
            let mut truth = Vec::new();
            for (img, &i) in rendered.iter().zip(&split.heldout) {
                let name = format!("heldout_{i:03}.png");
                save_image(img, dir.join(&name))?;
                let p = crate::train::psnr(&views[i].2, img)?;
                let _ = writeln!(table, "{i}\t{name}\t{}", format_db(p));
                truth.push(views[i].2.clone());
            }
            let mean = scene_psnr(&truth, &rendered)?;
            let _ = writeln!(table, "mean\t-\t{}", format_db(mean));
            log::info!("render: held-out PSNR {} dB over {} views", format_db(mean), rendered.len());
            write_text(&self.workspace.psnr_table_path(), &table)
        })
    }

    /// Random search over the training split, scored on the held-out split.
    pub fn search(&self) -> Result<StageRecord> {
        let (manifest, views) = self.scene(StageName::Search)?;
        let sc = &self.config.search;
        let dir = self.workspace.search_dir();
        let plan = StagePlan {
            stage: StageName::Search,
            config_text: format!(
                "{}\n[search]\n{}",
                self.config.train.to_toml(),
                toml::to_string(sc).expect("search config serializes")
            ),
            inputs: self.scene_inputs(&manifest),
            outputs: vec![dir.join("trials.tsv"), self.workspace.best_config_path()],
            seed: self.config.train.seed,
        };
        self.execute(plan, || {
            let split = self.split(views.len())?;
            let data = TrainingSet::from_views(&select(&views, &split.train), &manifest.aabb)?;
            let held = select(&views, &split.heldout);
            let mut base = self.config.train.clone();
            sc.trial_budget.parse::<Budget>()?.apply(&mut base);
            let outcome = random_search(&base, &sc.space, sc.trials, base.seed, &mut |id, cfg| {
                log::info!("search: trial {id}");
                let mut curve = Vec::new();
                let out = train(&data, cfg, &mut |snap| {
                    curve.push((snap.at_seconds, evaluate_views(snap.field, &held, &manifest.aabb, &cfg.render)?.1));
                    Ok(())
                })?;
                let (_, psnr) = evaluate_views(&out.field, &held, &manifest.aabb, &cfg.render)?;
                let note = curve
                    .iter()
                    .filter(|(_, p)| *p > psnr + 0.1)
                    .max_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(t, p)| format!("held-out PSNR decreased from {} dB at {t}s", format_db(*p)));
                Ok((psnr, note))
            })?;
            write_trial_table(&outcome.trials, dir.join("trials.tsv"))?;
            let mut best = outcome.best.clone();
            best.max_seconds = self.config.train.max_seconds;
            best.max_steps = self.config.train.max_steps;
            write_text(&self.workspace.best_config_path(), &best.to_toml())?;
            log::info!("search: best trial {}", outcome.best_trial);
            Ok(())
        })
    }

    /// The configuration bootstrap replicas train with: the search winner
    /// when one exists, else `[train]`.
    fn tuned_config(&self) -> Result<(TrainConfig, Option<PathBuf>)> {
        let best = self.workspace.best_config_path();
        if best.exists() {
            let text = std::fs::read_to_string(&best).map_err(|e| Error::io(&best, e))?;
            let mut c = TrainConfig::from_toml(&text)?;
            c.seed = self.config.train.seed;
            c.deterministic = self.config.train.deterministic;
            c.threads = self.config.train.threads;
            Ok((c, Some(best)))
        } else {
            Ok((self.config.train.clone(), None))
        }
    }

    /// Trains B replicas on the training split and writes their checkpoints.
    pub fn bootstrap(&self) -> Result<StageRecord> {
        let (manifest, views) = self.scene(StageName::Bootstrap)?;
        let (cfg, best) = self.tuned_config()?;
        let mut inputs = self.scene_inputs(&manifest);
        inputs.extend(best);
        let dir = self.workspace.bootstrap_dir();
        let options = BootstrapOptions {
            replicas: self.config.bootstrap.replicas,
            base_seed: cfg.seed,
            resample_views: self.config.bootstrap.resample_views,
        };
        let plan = StagePlan {
            stage: StageName::Bootstrap,
            config_text: format!(
                "{}\n[bootstrap]\n{}[evaluation]\nholdout_fraction = {}\n",
                cfg.to_toml(),
                toml::to_string(&self.config.bootstrap).expect("bootstrap config serializes"),
                self.config.evaluation.holdout_fraction
            ),
            inputs,
            outputs: vec![self.workspace.replica_list_path()],
            seed: cfg.seed,
        };
        self.execute(plan, || {
            let split = self.split(views.len())?;
            let set = bootstrap_train(&select(&views, &split.train), &manifest.aabb, &cfg, &options)?;
            let mut list = String::new();
            for r in &set.replicas {
                let name = format!("replica_{}.marf", r.seed);
                let ckpt = Checkpoint {
                    config: TrainConfig { seed: r.seed, ..cfg.clone() },
                    step: r.steps,
                    psnr: f64::NAN,
                    field: r.field.clone(),
                };
                save_checkpoint(&ckpt, dir.join(&name))?;
                let _ = writeln!(list, "{name}");
            }
            let mut failures = String::new();
            for f in &set.failures {
                let _ = writeln!(failures, "{}\t{}", f.seed, f.message);
            }
            write_text(&dir.join("failures.txt"), &failures)?;
            if set.replicas.is_empty() {
                return Err(Error::Numerical(format!("all {} bootstrap replicas failed", options.replicas)));
            }
            write_text(&self.workspace.replica_list_path(), &list)
        })
    }

    /// Renders mean and sigma frames along the path from the first to the
    /// last scene view.
    pub fn flythrough(&self) -> Result<StageRecord> {
        let list = self.workspace.replica_list_path();
        require(StageName::Flythrough, "bootstrap", list.clone())?;
        let scene = self.workspace.scene_path();
        require(StageName::Flythrough, "import-poses", scene.clone())?;
        let text = std::fs::read_to_string(&list).map_err(|e| Error::io(&list, e))?;
        let replicas: Vec<PathBuf> = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| self.workspace.bootstrap_dir().join(l))
            .collect();
        let mut inputs = vec![scene.clone()];
        inputs.extend(replicas.iter().cloned());
        let dir = self.workspace.flythrough_dir();
        let frames = self.config.bootstrap.flythrough_frames;
        let plan = StagePlan {
            stage: StageName::Flythrough,
            config_text: format!(
                "flythrough_frames = {frames}\n{}",
                toml::to_string(&self.config.train.render).expect("render options serialize")
            ),
            inputs,
            outputs: vec![dir.join(crate::uncertainty::SIGMA_SCALE_FILE)],
            seed: self.config.train.seed,
        };
        self.execute(plan, || {
            let manifest = load_scene(&scene)?;
            let first = manifest.entries.first().ok_or_else(|| Error::Argument("scene has no views".into()))?;
            let last = manifest.entries.last().expect("nonempty");
            let path = interpolate_path(&first.pose, &last.pose, frames);
            let fields = replicas
                .iter()
                .map(|p| load_checkpoint(p).map(|c| c.field))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<_> = fields.iter().collect();
            let summary = flythrough(&refs, &first.intrinsics, &path, &manifest.aabb, &self.config.train.render, &dir)?;
            log::info!("flythrough: {} frames, sigma scale {:.4}", summary.frames, summary.sigma_scale);
            Ok(())
        })
    }
}
