//! Experiment orchestration: configuration, the staged artifact
//! pipeline, and report aggregation.
//!
//! An experiment is a directory of artifacts. Every stage reads its
//! inputs from files written by earlier stages and writes its own
//! outputs back, so stages can run in one process, across separate
//! processes, or be re-run individually with identical results: each
//! artifact's bytes are a pure function of the configuration.
//!
//! Layout under the output directory, for each run seed `S`:
//!
//! ```text
//! config.json                  configuration snapshot
//! seed{S}/world.json           generated world
//! seed{S}/episodes.json        episode pools (train / val_seen / env_unseen)
//! seed{S}/split.json           structural re-split assignment
//! seed{S}/features_{kind}.csv  view features, one file per representation
//! seed{S}/detections.csv       synthesized detections (detection kind only)
//! seed{S}/seg_predictor.json   segmentation predictor (learnedseg only)
//! seed{S}/agent_{kind}.ckpt    trained agent parameters
//! seed{S}/loss_curve_{kind}.csv
//! seed{S}/trajectories_{kind}.json
//! seed{S}/result_{kind}.json   per-split metrics
//! seed{S}/locality_{kind}.csv  success by distance-to-training quartile
//! seed{S}/lang_distance.csv    instruction distances to the training set
//! seed{S}/lang_hist.csv
//! report/metrics.{csv,json,svg}
//! report/table_gap.csv         seen/unseen success and gap per feature
//! report/aggregate.csv         per-seed values with mean and spread
//! ```
//!
//! With an external dataset configured instead of a synthetic world, the
//! pipeline ingests it, re-splits its episodes, and scores instruction
//! distances (there is no agent to train), writing under `dataset/`.

pub mod dataset;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{self, AgentHyper, AgentParams, Trajectory};
use crate::error::{Error, Result};
use crate::evalreport::{
    self, EvalResult, LocalityBin, LocalityTable, ReportFormat, SplitMetrics,
    DEFAULT_SUCCESS_RADIUS,
};
use crate::featurize::{
    default_seg_partition, identity_label_map, select_detection_vocab, train_seg_predictor,
    DetectionTable, FeatureKind, FeatureStore, Featurizer, SegHyper, SegPredictor,
    DEFAULT_VOCAB_COVERAGE, LABEL_MAP_GAIN,
};
use crate::navgraph::{
    choose_cut, dis_path, structural_split, Axis, NavGraph, OriginalRole, SplitAssignment,
    SplitCategory, SplitEpisode,
};
use crate::rng::mix;
use crate::worldgen::{
    generate_world, instruction, sample_episodes_in, InstructionNoise, PathDatum, World, WorldSpec,
};

use dataset::{
    compute_lang_distances, load_external_dataset, write_lang_distance_files, write_pretty_json,
    LangTarget,
};

/// Classprob representations soften ground-truth semantics with this
/// temperature and logit noise.
const CLASSPROB_TEMPERATURE: f64 = 1.0;
const CLASSPROB_NOISE_SD: f64 = 0.05;

/// Locality tables bin path-unseen episodes into quartiles.
const LOCALITY_BINS: usize = 4;

/// Sub-seed labels folded into the run seed so each consumer gets an
/// independent stream.
const POOL_MAIN: u64 = 1;
const POOL_UNSEEN: u64 = 2;
const SEG_STREAM: u64 = 3;

/// How episodes are sampled in a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeConfig {
    /// Episodes sampled in training environments with the training role.
    pub train: usize,
    /// Episodes sampled in training environments with the val-seen role.
    pub val_seen: usize,
    /// Episodes sampled in held-out environments.
    pub env_unseen: usize,
    pub min_hops: usize,
    pub max_hops: usize,
    pub noise: InstructionNoise,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            train: 360,
            val_seen: 90,
            env_unseen: 90,
            min_hops: 2,
            max_hops: 6,
            noise: InstructionNoise::default(),
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train == 0 || self.val_seen == 0 || self.env_unseen == 0 {
            return Err(Error::Config(
                "every episode pool (train, val_seen, env_unseen) needs at least one episode"
                    .into(),
            ));
        }
        if self.min_hops < 1 || self.min_hops > self.max_hops {
            return Err(Error::Config(format!(
                "hop range [{}, {}] is empty or starts below 1",
                self.min_hops, self.max_hops
            )));
        }
        Ok(())
    }
}

/// How environments are held out and where the coordinate cut falls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub axis: Axis,
    /// Target fraction of training-environment viewpoints on the
    /// training side of the cut.
    pub fraction: f64,
    /// Explicit held-out environment ids; when empty, the last
    /// `env_unseen_count` environments are held out.
    pub env_unseen: Vec<String>,
    pub env_unseen_count: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            axis: Axis::X,
            fraction: 0.5,
            env_unseen: Vec::new(),
            env_unseen_count: 2,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction.is_finite() && self.fraction > 0.0 && self.fraction < 1.0) {
            return Err(Error::Config(format!(
                "split fraction must lie strictly between 0 and 1, got {}",
                self.fraction
            )));
        }
        let mut seen = std::collections::BTreeSet::new();
        for id in &self.env_unseen {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!(
                    "environment {id:?} is listed as held out more than once"
                )));
            }
        }
        if self.env_unseen.is_empty() && self.env_unseen_count == 0 {
            return Err(Error::Config(
                "hold out at least one environment (env_unseen or env_unseen_count)".into(),
            ));
        }
        Ok(())
    }
}

/// Where an external dataset lives: a directory of per-environment
/// connectivity files and one items file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetPaths {
    pub graph_dir: String,
    pub items_file: String,
}

/// A full experiment: where episodes come from, which representations
/// to compare, and how to train.
///
/// Exactly one episode source applies: a world spec (`world`), a
/// serialized world (`world_file`), or an external dataset (`dataset`).
/// When none is given, the default benchmark world spec is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: Option<WorldSpec>,
    pub world_file: Option<String>,
    pub dataset: Option<DatasetPaths>,
    pub episodes: EpisodeConfig,
    pub split: SplitConfig,
    pub features: Vec<FeatureKind>,
    pub agent: AgentHyper,
    pub seg: SegHyper,
    pub seeds: Vec<u64>,
    /// Default output directory; a command-line override wins.
    pub out_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            world: None,
            world_file: None,
            dataset: None,
            episodes: EpisodeConfig::default(),
            split: SplitConfig::default(),
            features: vec![
                FeatureKind::Lowlevel,
                FeatureKind::Gtseg,
                FeatureKind::Learnedseg,
                FeatureKind::Zero,
            ],
            agent: AgentHyper::default(),
            seg: SegHyper::default(),
            seeds: vec![0, 1, 2, 3, 4],
            out_dir: None,
        }
    }
}

/// World spec used when the configuration names no episode source: a
/// handful of mid-sized environments, the last of which are held out.
pub fn default_benchmark_spec() -> WorldSpec {
    WorldSpec {
        num_envs: 8,
        ..WorldSpec::default()
    }
}

impl ExperimentConfig {
    /// The world spec this configuration generates from, if any.
    fn resolved_spec(&self) -> Option<WorldSpec> {
        match (&self.world, &self.world_file, &self.dataset) {
            (Some(spec), None, None) => Some(spec.clone()),
            (None, None, None) => Some(default_benchmark_spec()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sources = [
            self.world.is_some(),
            self.world_file.is_some(),
            self.dataset.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() > 1 {
            return Err(Error::Config(
                "set at most one of world, world_file, and dataset".into(),
            ));
        }
        if let Some(spec) = &self.world {
            spec.validate()?;
        }
        if let Some(file) = &self.world_file {
            if !Path::new(file).is_file() {
                return Err(Error::Config(format!("world_file {file:?} does not exist")));
            }
        }
        if let Some(ds) = &self.dataset {
            if !Path::new(&ds.graph_dir).is_dir() {
                return Err(Error::Config(format!(
                    "dataset graph_dir {:?} is not a directory",
                    ds.graph_dir
                )));
            }
            if !Path::new(&ds.items_file).is_file() {
                return Err(Error::Config(format!(
                    "dataset items_file {:?} does not exist",
                    ds.items_file
                )));
            }
        }
        self.split.validate()?;
        if self.dataset.is_some() {
            // Nothing is trained in dataset mode; the remaining settings
            // are unused and need not be consistent.
            return Ok(());
        }
        self.episodes.validate()?;
        self.agent.validate()?;
        self.seg.validate()?;
        if self.features.is_empty() {
            return Err(Error::Config(
                "compare at least one feature representation".into(),
            ));
        }
        let mut kinds = std::collections::BTreeSet::new();
        for &kind in &self.features {
            if !kinds.insert(kind) {
                return Err(Error::Config(format!(
                    "feature representation {kind} is listed twice"
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("run at least one seed".into()));
        }
        let mut seeds = std::collections::BTreeSet::new();
        for &s in &self.seeds {
            if !seeds.insert(s) {
                return Err(Error::Config(format!("seed {s} is listed twice")));
            }
        }
        Ok(())
    }
}

/// Read a configuration from a JSON file. All errors — missing file,
/// malformed JSON, unknown fields — are configuration errors.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// File layout of one experiment directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    root: PathBuf,
}

impl RunPaths {
    pub fn new(out_dir: &Path) -> RunPaths {
        RunPaths {
            root: out_dir.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed{seed}"))
    }

    pub fn world(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("world.json")
    }

    pub fn episodes(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("episodes.json")
    }

    pub fn split(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("split.json")
    }

    pub fn features(&self, seed: u64, kind: FeatureKind) -> PathBuf {
        self.seed_dir(seed).join(format!("features_{kind}.csv"))
    }

    pub fn detections(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("detections.csv")
    }

    pub fn seg_predictor(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("seg_predictor.json")
    }

    pub fn agent(&self, seed: u64, kind: FeatureKind) -> PathBuf {
        self.seed_dir(seed).join(format!("agent_{kind}.ckpt"))
    }

    pub fn loss_curve(&self, seed: u64, kind: FeatureKind) -> PathBuf {
        self.seed_dir(seed).join(format!("loss_curve_{kind}.csv"))
    }

    pub fn trajectories(&self, seed: u64, kind: FeatureKind) -> PathBuf {
        self.seed_dir(seed).join(format!("trajectories_{kind}.json"))
    }

    pub fn result(&self, seed: u64, kind: FeatureKind) -> PathBuf {
        self.seed_dir(seed).join(format!("result_{kind}.json"))
    }

    pub fn locality(&self, seed: u64, kind: FeatureKind) -> PathBuf {
        self.seed_dir(seed).join(format!("locality_{kind}.csv"))
    }

    pub fn lang_distance(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("lang_distance.csv")
    }

    pub fn lang_hist(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("lang_hist.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn table_gap(&self) -> PathBuf {
        self.report_dir().join("table_gap.csv")
    }

    pub fn aggregate(&self) -> PathBuf {
        self.report_dir().join("aggregate.csv")
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.root.join("dataset")
    }
}

/// The three episode pools of one run seed, in their original roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunEpisodes {
    pub train: Vec<PathDatum>,
    pub val_seen: Vec<PathDatum>,
    pub env_unseen: Vec<PathDatum>,
}

impl RunEpisodes {
    /// Every episode with its original role, pools in order.
    pub fn all(&self) -> impl Iterator<Item = (&PathDatum, OriginalRole)> {
        self.train
            .iter()
            .map(|e| (e, OriginalRole::Train))
            .chain(self.val_seen.iter().map(|e| (e, OriginalRole::ValSeen)))
            .chain(self.env_unseen.iter().map(|e| (e, OriginalRole::EnvUnseen)))
    }

    /// The episodes as split inputs, viewpoints renamed into the
    /// all-environment union graph.
    pub fn to_split_episodes(&self) -> Vec<SplitEpisode> {
        self.all()
            .map(|(ep, role)| SplitEpisode {
                id: ep.id.clone(),
                viewpoints: ep.path.iter().map(|v| prefixed(&ep.env_id, v)).collect(),
                role,
            })
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_pretty_json(path, self)
    }

    pub fn load(path: &Path) -> Result<RunEpisodes> {
        load_json(path)
    }
}

/// A viewpoint's name in the union graph.
pub fn prefixed(env_id: &str, viewpoint: &str) -> String {
    format!("{env_id}:{viewpoint}")
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| Error::serde(path, e))
}

/// Seen/unseen environment partition: the explicitly listed ids when
/// given, otherwise the last `env_unseen_count` environments.
pub fn env_partition(split: &SplitConfig, world: &World) -> Result<(Vec<String>, Vec<String>)> {
    let all: Vec<String> = world.envs.iter().map(|e| e.id.clone()).collect();
    if !split.env_unseen.is_empty() {
        for id in &split.env_unseen {
            if !all.contains(id) {
                return Err(Error::Validation(format!(
                    "held-out environment {id:?} is not in the world"
                )));
            }
        }
        let (unseen, train): (Vec<String>, Vec<String>) = all
            .into_iter()
            .partition(|id| split.env_unseen.contains(id));
        if train.is_empty() {
            return Err(Error::Validation(
                "every environment is held out; none are left to train in".into(),
            ));
        }
        Ok((train, unseen))
    } else {
        let k = split.env_unseen_count;
        if k == 0 {
            return Err(Error::Validation(
                "hold out at least one environment".into(),
            ));
        }
        if k >= all.len() {
            return Err(Error::Validation(format!(
                "cannot hold out {k} of {} environments",
                all.len()
            )));
        }
        let train = all[..all.len() - k].to_vec();
        let unseen = all[all.len() - k..].to_vec();
        Ok((train, unseen))
    }
}

/// One graph over the named environments (all of them when `None`),
/// viewpoints renamed to `{env}:{viewpoint}`.
pub fn union_graph(world: &World, env_ids: Option<&[String]>) -> Result<NavGraph> {
    let keep = |id: &str| env_ids.is_none_or(|ids| ids.iter().any(|e| e == id));
    let parts: Vec<(String, &NavGraph)> = world
        .envs
        .iter()
        .filter(|e| keep(&e.id))
        .map(|e| (e.id.clone(), e.graph()))
        .collect();
    if parts.is_empty() {
        return Err(Error::Validation(
            "no environments selected for the union graph".into(),
        ));
    }
    NavGraph::disjoint_union(&parts)
}

/// Generate (or load) the run's world and sample its episode pools.
///
/// The run seed is folded into the spec's base seed, so every run gets
/// its own world; a `world_file` is shared by all runs as-is.
pub fn stage_gen_world(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let seed_dir = paths.seed_dir(seed);
    std::fs::create_dir_all(&seed_dir).map_err(|e| Error::io(&seed_dir, e))?;
    let world = if let Some(file) = &cfg.world_file {
        World::load(Path::new(file))?
    } else {
        let base = cfg.resolved_spec().ok_or_else(|| {
            Error::Config("an external dataset has no world to generate".into())
        })?;
        generate_world(&WorldSpec {
            seed: mix(base.seed, &[seed]),
            ..base
        })?
    };
    world.save(&paths.world(seed))?;

    let (train_envs, unseen_envs) = env_partition(&cfg.split, &world)?;
    let ep = &cfg.episodes;
    let hops = (ep.min_hops, ep.max_hops);
    let main = sample_episodes_in(
        &world,
        &train_envs,
        ep.train + ep.val_seen,
        hops,
        &ep.noise,
        mix(seed, &[POOL_MAIN]),
        "ep",
    )?;
    let unseen = sample_episodes_in(
        &world,
        &unseen_envs,
        ep.env_unseen,
        hops,
        &ep.noise,
        mix(seed, &[POOL_UNSEEN]),
        "eu",
    )?;
    let mut main = main.into_iter();
    let train: Vec<PathDatum> = main.by_ref().take(ep.train).collect();
    let val_seen: Vec<PathDatum> = main.collect();
    RunEpisodes {
        train,
        val_seen,
        env_unseen: unseen,
    }
    .save(&paths.episodes(seed))
}

/// Choose the coordinate cut on the training environments and re-split
/// every episode by it.
pub fn stage_split(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let world = World::load(&paths.world(seed))?;
    let episodes = RunEpisodes::load(&paths.episodes(seed))?;
    let (train_envs, _) = env_partition(&cfg.split, &world)?;
    let train_union = union_graph(&world, Some(&train_envs))?;
    let cut = choose_cut(&train_union, cfg.split.axis, cfg.split.fraction)?;
    let union = union_graph(&world, None)?;
    let assignment = structural_split(&union, &episodes.to_split_episodes(), cfg.split.axis, cut)?;
    if assignment.count(SplitCategory::Train) == 0 {
        return Err(Error::Split(
            "no episode survives the cut as training data; widen the training fraction or \
             sample more episodes"
                .into(),
        ));
    }
    write_pretty_json(&paths.split(seed), &assignment)
}

/// Train the segmentation predictor on held-out training environments.
pub fn stage_train_seg(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let world = World::load(&paths.world(seed))?;
    let (train_envs, _) = env_partition(&cfg.split, &world)?;
    let (seg_train, seg_heldout) = default_seg_partition(&train_envs)?;
    let predictor = train_seg_predictor(
        &world,
        &seg_train,
        &seg_heldout,
        &cfg.seg,
        mix(seed, &[SEG_STREAM]),
    )?;
    predictor.save(&paths.seg_predictor(seed))
}

fn featurizer_for(
    cfg: &ExperimentConfig,
    world: &World,
    seed: u64,
    kind: FeatureKind,
    paths: &RunPaths,
) -> Result<Featurizer> {
    let _ = cfg;
    Ok(match kind {
        FeatureKind::Zero => Featurizer::zero(world.spec.lowlevel_dim)?,
        FeatureKind::Lowlevel => Featurizer::lowlevel(world, seed),
        FeatureKind::Classprob => {
            let classes = world.spec.semantic_classes;
            Featurizer::classprob(
                identity_label_map(classes, classes, LABEL_MAP_GAIN)?,
                CLASSPROB_TEMPERATURE,
                CLASSPROB_NOISE_SD,
                seed,
            )?
        }
        FeatureKind::Detection => {
            let table = DetectionTable::synthesize(world, seed)?;
            table.write_csv(&paths.detections(seed))?;
            let vocab = select_detection_vocab(&table, DEFAULT_VOCAB_COVERAGE)?;
            Featurizer::detection(table, vocab)?
        }
        FeatureKind::Gtseg => Featurizer::gtseg(world),
        FeatureKind::Learnedseg => {
            let predictor = SegPredictor::load(&paths.seg_predictor(seed))?;
            Featurizer::learnedseg(predictor, seed)
        }
    })
}

/// Build and persist every view's features under one representation.
pub fn stage_featurize(
    cfg: &ExperimentConfig,
    seed: u64,
    kind: FeatureKind,
    out_dir: &Path,
) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let world = World::load(&paths.world(seed))?;
    let featurizer = featurizer_for(cfg, &world, seed, kind, &paths)?;
    let store = FeatureStore::build(&world, &featurizer)?;
    store.write_csv(&paths.features(seed, kind))
}

/// Train the navigation agent on the TRAIN-categorized episodes.
pub fn stage_train(
    cfg: &ExperimentConfig,
    seed: u64,
    kind: FeatureKind,
    out_dir: &Path,
) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let world = World::load(&paths.world(seed))?;
    let episodes = RunEpisodes::load(&paths.episodes(seed))?;
    let split: SplitAssignment = load_json(&paths.split(seed))?;
    let store = FeatureStore::read_csv(&paths.features(seed, kind))?;
    if store.name() != kind.name() {
        return Err(Error::Validation(format!(
            "feature file holds {:?} features, not the requested {:?}",
            store.name(),
            kind.name()
        )));
    }
    let mut train_set = Vec::new();
    for (ep, _) in episodes.all() {
        if split.category(&ep.id)? == SplitCategory::Train {
            train_set.push(ep.clone());
        }
    }
    let vocab = instruction::vocab_size(world.spec.room_types);
    let trained = agent::train_imitation(&world, &store, &train_set, &cfg.agent, vocab, seed)?;
    trained.params.save(&paths.agent(seed, kind))?;

    let curve_path = paths.loss_curve(seed, kind);
    let mut w = csv::Writer::from_path(&curve_path).map_err(|e| Error::serde(&curve_path, e))?;
    w.write_record(["epoch", "loss"])
        .map_err(|e| Error::serde(&curve_path, e))?;
    for (i, loss) in trained.loss_curve.iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{loss:.6}")])
            .map_err(|e| Error::serde(&curve_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&curve_path, e))
}

/// Trajectories renamed into the union graph, with their goals.
fn prefixed_pairs(group: &[(PathDatum, Trajectory)]) -> (Vec<Trajectory>, Vec<String>) {
    let trajs = group
        .iter()
        .map(|(ep, t)| {
            let mut renamed = t.clone();
            renamed.visited = t.visited.iter().map(|v| prefixed(&ep.env_id, v)).collect();
            renamed
        })
        .collect();
    let goals = group
        .iter()
        .map(|(ep, _)| prefixed(&ep.env_id, &ep.goal))
        .collect();
    (trajs, goals)
}

/// Success-by-locality quartiles for the path-unseen episodes: distance
/// of each episode's path from the training paths against whether the
/// rollout succeeded. Episodes in a component with no training path
/// (infinite distance) are left out; fewer episodes than bins yields an
/// empty table.
fn path_unseen_locality(
    group: Option<&[(PathDatum, Trajectory)]>,
    train_eps: &[SplitEpisode],
    union: &NavGraph,
) -> Result<LocalityTable> {
    let empty = LocalityTable { bins: Vec::new() };
    let Some(group) = group else {
        return Ok(empty);
    };
    if train_eps.is_empty() {
        return Ok(empty);
    }
    let (trajs, goals) = prefixed_pairs(group);
    let ends = evalreport::end_distances(&trajs, &goals, union)?;
    let mut distances = Vec::new();
    let mut successes = Vec::new();
    for (i, (ep, _)) in group.iter().enumerate() {
        let path: Vec<String> = ep.path.iter().map(|v| prefixed(&ep.env_id, v)).collect();
        let d = dis_path(&path, train_eps, union)?;
        if !d.is_finite() {
            continue;
        }
        distances.push(d);
        successes.push(ends[i] <= DEFAULT_SUCCESS_RADIUS);
    }
    if distances.len() < LOCALITY_BINS {
        return Ok(empty);
    }
    evalreport::locality_table(&distances, &successes, LOCALITY_BINS)
}

/// Roll the trained agent out on the validation episodes, compute
/// per-split metrics, and bin path-unseen success by distance to the
/// training paths.
///
/// Evaluated episodes are the fresh validation pools (val-seen and
/// env-unseen roles) plus the training-pool episodes the structural cut
/// rejected without any viewpoint overlap (category path-unseen): those
/// never touch the training coverage, so they are uncontaminated and give
/// the locality analysis more mass. Training-pool episodes categorized
/// path-seen overlap the coverage without having been trained on — neither
/// training nor validation data — and are skipped.
///
/// The headline seen split is `val_seen` (all val-role episodes, a uniform
/// sample over the training environments); `path_seen`/`path_unseen` rows
/// report the structural categories among evaluated episodes, and
/// `env_unseen` the held-out environments.
pub fn stage_eval(
    cfg: &ExperimentConfig,
    seed: u64,
    kind: FeatureKind,
    out_dir: &Path,
) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let world = World::load(&paths.world(seed))?;
    let episodes = RunEpisodes::load(&paths.episodes(seed))?;
    let split: SplitAssignment = load_json(&paths.split(seed))?;
    let store = FeatureStore::read_csv(&paths.features(seed, kind))?;
    let params = AgentParams::load(&paths.agent(seed, kind))?;
    let union = union_graph(&world, None)?;

    let mut evaluated: Vec<(PathDatum, OriginalRole, SplitCategory, Trajectory)> = Vec::new();
    for (ep, role) in episodes.all() {
        let cat = split.category(&ep.id)?;
        if cat == SplitCategory::Train
            || (role == OriginalRole::Train && cat == SplitCategory::PathSeen)
        {
            continue;
        }
        let traj = agent::rollout(&params, &world, &store, ep, cfg.agent.max_steps)?;
        evaluated.push((ep.clone(), role, cat, traj));
    }

    let mut traj_file: BTreeMap<String, Vec<&Trajectory>> = BTreeMap::new();
    for (_, _, cat, traj) in &evaluated {
        traj_file.entry(cat.to_string()).or_default().push(traj);
    }
    write_pretty_json(&paths.trajectories(seed, kind), &traj_file)?;

    let select = |pred: &dyn Fn(OriginalRole, SplitCategory) -> bool| {
        evaluated
            .iter()
            .filter(|(_, role, cat, _)| pred(*role, *cat))
            .map(|(ep, _, _, traj)| (ep.clone(), traj.clone()))
            .collect::<Vec<_>>()
    };
    let rows: [(&str, Vec<(PathDatum, Trajectory)>); 4] = [
        ("val_seen", select(&|role, _| role == OriginalRole::ValSeen)),
        ("path_seen", select(&|_, cat| cat == SplitCategory::PathSeen)),
        (
            "path_unseen",
            select(&|_, cat| cat == SplitCategory::PathUnseen),
        ),
        (
            "env_unseen",
            select(&|_, cat| cat == SplitCategory::EnvUnseen),
        ),
    ];
    let mut splits = Vec::new();
    for (name, group) in &rows {
        if group.is_empty() {
            continue;
        }
        let (trajs, goals) = prefixed_pairs(group);
        splits.push(SplitMetrics {
            split: (*name).to_string(),
            episode_count: group.len(),
            success_rate: evalreport::success_rate(&trajs, &goals, &union, DEFAULT_SUCCESS_RADIUS)?,
            goal_progress: evalreport::goal_progress(&trajs, &goals, &union)?,
        });
    }
    let result = EvalResult {
        feature: kind.name().to_string(),
        seed,
        splits,
        seen_split: "val_seen".to_string(),
        unseen_split: "env_unseen".to_string(),
    }
    .rounded();
    result.validate()?;
    write_pretty_json(&paths.result(seed, kind), &result)?;

    let mut train_eps = Vec::new();
    for se in episodes.to_split_episodes() {
        if split.category(&se.id)? == SplitCategory::Train {
            train_eps.push(se);
        }
    }
    let path_unseen_group = &rows[2].1;
    let table = if path_unseen_group.is_empty() {
        LocalityTable { bins: Vec::new() }
    } else {
        path_unseen_locality(Some(path_unseen_group), &train_eps, &union)?
    };
    write_locality_csv(&paths.locality(seed, kind), &table)
}

const LOCALITY_HEADER: [&str; 5] = ["label", "low", "high", "episodes", "success_rate"];

/// Write a locality table with fixed decimal formatting (labels and
/// rates to one decimal, bounds to two).
pub fn write_locality_csv(path: &Path, table: &LocalityTable) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
    w.write_record(LOCALITY_HEADER)
        .map_err(|e| Error::serde(path, e))?;
    for bin in &table.bins {
        w.write_record([
            format!("{:.1}-{:.1}", bin.low, bin.high),
            format!("{:.2}", bin.low),
            format!("{:.2}", bin.high),
            bin.episode_count.to_string(),
            format!("{:.1}", bin.success_rate),
        ])
        .map_err(|e| Error::serde(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_locality_csv(path: &Path) -> Result<LocalityTable> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::serde(path, e))?;
    let headers = reader.headers().map_err(|e| Error::serde(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != LOCALITY_HEADER {
        return Err(Error::load(
            path,
            0,
            "header",
            format!("expected columns {LOCALITY_HEADER:?}"),
        ));
    }
    let mut bins = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::serde(path, e))?;
        let field = |i: usize, name: &str| -> Result<String> {
            record
                .get(i)
                .map(str::to_string)
                .ok_or_else(|| Error::load(path, idx + 1, name, "missing field"))
        };
        let parse_f64 = |i: usize, name: &str| -> Result<f64> {
            field(i, name)?
                .parse::<f64>()
                .map_err(|e| Error::load(path, idx + 1, name, e.to_string()))
        };
        bins.push(LocalityBin {
            label: field(0, "label")?,
            low: parse_f64(1, "low")?,
            high: parse_f64(2, "high")?,
            episode_count: field(3, "episodes")?
                .parse()
                .map_err(|e: std::num::ParseIntError| {
                    Error::load(path, idx + 1, "episodes", e.to_string())
                })?,
            success_rate: parse_f64(4, "success_rate")?,
        });
    }
    Ok(LocalityTable { bins })
}

/// Score every evaluated episode's instruction against the TRAIN
/// instructions. Success flags come from the low-level agent's rollouts
/// when that representation was evaluated — it is the representation
/// whose bias this diagnostic probes — and are blank otherwise.
pub fn stage_lang_dist(cfg: &ExperimentConfig, seed: u64, out_dir: &Path) -> Result<()> {
    let paths = RunPaths::new(out_dir);
    let world = World::load(&paths.world(seed))?;
    let episodes = RunEpisodes::load(&paths.episodes(seed))?;
    let split: SplitAssignment = load_json(&paths.split(seed))?;
    let success = lowlevel_success(cfg, seed, &world, &episodes, &paths)?;

    let mut training = Vec::new();
    let mut targets = Vec::new();
    for (ep, _) in episodes.all() {
        let cat = split.category(&ep.id)?;
        if cat == SplitCategory::Train {
            training.push(ep.instruction.clone());
        } else {
            targets.push(LangTarget {
                id: ep.id.clone(),
                category: cat.to_string(),
                tokens: ep.instruction.clone(),
                success: success.get(&ep.id).copied(),
            });
        }
    }
    let rows = compute_lang_distances(&training, &targets)?;
    write_lang_distance_files(&rows, &paths.seed_dir(seed))?;
    Ok(())
}

/// Per-episode success of the low-level agent, from its saved
/// trajectories; empty when that representation is not part of the run.
fn lowlevel_success(
    cfg: &ExperimentConfig,
    seed: u64,
    world: &World,
    episodes: &RunEpisodes,
    paths: &RunPaths,
) -> Result<BTreeMap<String, bool>> {
    let traj_path = paths.trajectories(seed, FeatureKind::Lowlevel);
    if !cfg.features.contains(&FeatureKind::Lowlevel) || !traj_path.is_file() {
        return Ok(BTreeMap::new());
    }
    let groups: BTreeMap<String, Vec<Trajectory>> = load_json(&traj_path)?;
    let by_id: BTreeMap<&str, &PathDatum> = episodes.all().map(|(ep, _)| (ep.id.as_str(), ep)).collect();
    let mut pairs = Vec::new();
    for traj in groups.values().flatten() {
        let ep = by_id.get(traj.episode_id.as_str()).ok_or_else(|| {
            Error::Validation(format!(
                "trajectory {:?} has no matching episode",
                traj.episode_id
            ))
        })?;
        pairs.push(((*ep).clone(), traj.clone()));
    }
    let (trajs, goals) = prefixed_pairs(&pairs);
    let union = union_graph(world, None)?;
    let ends = evalreport::end_distances(&trajs, &goals, &union)?;
    Ok(pairs
        .iter()
        .zip(&ends)
        .map(|((ep, _), &d)| (ep.id.clone(), d <= DEFAULT_SUCCESS_RADIUS))
        .collect())
}

/// Across-seed summary of one feature representation. Success rates are
/// percentages; `gap` is seen minus unseen success per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub feature: String,
    pub seeds: Vec<u64>,
    pub seen_sr: Vec<f64>,
    pub unseen_sr: Vec<f64>,
    pub gap: Vec<f64>,
    pub seen_mean: f64,
    pub unseen_mean: f64,
    pub gap_mean: f64,
    pub seen_sd: f64,
    pub unseen_sd: f64,
    pub gap_sd: f64,
}

/// One locality table with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalityRecord {
    pub feature: String,
    pub seed: u64,
    pub table: LocalityTable,
}

/// Everything the report stage produced, for programmatic consumers.
#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub report_dir: PathBuf,
    /// One result per (feature, seed), features in configuration order.
    pub results: Vec<EvalResult>,
    pub aggregates: Vec<AggregateRow>,
    pub locality: Vec<LocalityRecord>,
    /// Every report file written.
    pub files: Vec<PathBuf>,
}

impl ReportBundle {
    pub fn aggregate(&self, feature: &str) -> Result<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.feature == feature)
            .ok_or_else(|| Error::Lookup(format!("no aggregate for feature {feature:?}")))
    }

    pub fn locality_tables(&self, feature: &str) -> Vec<&LocalityRecord> {
        self.locality
            .iter()
            .filter(|l| l.feature == feature)
            .collect()
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn aggregate_results(cfg: &ExperimentConfig, results: &[EvalResult]) -> Result<Vec<AggregateRow>> {
    cfg.features
        .iter()
        .map(|kind| {
            let rows: Vec<&EvalResult> = results
                .iter()
                .filter(|r| r.feature == kind.name())
                .collect();
            if rows.is_empty() {
                return Err(Error::Validation(format!(
                    "no results for feature {kind}"
                )));
            }
            let mut seeds = Vec::new();
            let mut seen_sr = Vec::new();
            let mut unseen_sr = Vec::new();
            let mut gap = Vec::new();
            for r in rows {
                seeds.push(r.seed);
                seen_sr.push(r.split(&r.seen_split)?.success_rate);
                unseen_sr.push(r.split(&r.unseen_split)?.success_rate);
                gap.push(r.gap()?);
            }
            Ok(AggregateRow {
                feature: kind.name().to_string(),
                seen_mean: mean(&seen_sr),
                unseen_mean: mean(&unseen_sr),
                gap_mean: mean(&gap),
                seen_sd: sample_sd(&seen_sr),
                unseen_sd: sample_sd(&unseen_sr),
                gap_sd: sample_sd(&gap),
                seeds,
                seen_sr,
                unseen_sr,
                gap,
            })
        })
        .collect()
}

fn write_table_gap(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
    w.write_record(["feature", "val_seen", "val_unseen", "gap"])
        .map_err(|e| Error::serde(path, e))?;
    for row in rows {
        w.write_record([
            row.feature.clone(),
            format!("{:.1}", row.seen_mean),
            format!("{:.1}", row.unseen_mean),
            format!("{:.1}", row.gap_mean),
        ])
        .map_err(|e| Error::serde(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_aggregate_csv(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
    for (i, row) in rows.iter().enumerate() {
        if i == 0 {
            let mut header = vec!["feature".to_string(), "metric".to_string()];
            header.extend(row.seeds.iter().map(|s| format!("seed_{s}")));
            header.push("mean".into());
            header.push("sd".into());
            w.write_record(&header).map_err(|e| Error::serde(path, e))?;
        }
        for (metric, values, m, sd) in [
            ("seen_success_rate", &row.seen_sr, row.seen_mean, row.seen_sd),
            (
                "unseen_success_rate",
                &row.unseen_sr,
                row.unseen_mean,
                row.unseen_sd,
            ),
            ("gap", &row.gap, row.gap_mean, row.gap_sd),
        ] {
            let mut record = vec![row.feature.clone(), metric.to_string()];
            record.extend(values.iter().map(|v| format!("{v:.1}")));
            record.push(format!("{m:.2}"));
            record.push(format!("{sd:.2}"));
            w.write_record(&record).map_err(|e| Error::serde(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Collect every per-seed result into the cross-seed report: metrics in
/// three formats, the seen/unseen gap table, and per-seed aggregates.
pub fn stage_report(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReportBundle> {
    let paths = RunPaths::new(out_dir);
    let mut results = Vec::new();
    let mut locality = Vec::new();
    for &kind in &cfg.features {
        for &seed in &cfg.seeds {
            let result: EvalResult = load_json(&paths.result(seed, kind))?;
            result.validate()?;
            if result.feature != kind.name() || result.seed != seed {
                return Err(Error::Validation(format!(
                    "result file for {} seed {seed} actually holds {:?} seed {}",
                    kind.name(),
                    result.feature,
                    result.seed
                )));
            }
            results.push(result);
            locality.push(LocalityRecord {
                feature: kind.name().to_string(),
                seed,
                table: read_locality_csv(&paths.locality(seed, kind))?,
            });
        }
    }
    let report_dir = paths.report_dir();
    let mut files = evalreport::emit_report(&results, &report_dir, &ReportFormat::ALL)?;
    let aggregates = aggregate_results(cfg, &results)?;
    write_table_gap(&paths.table_gap(), &aggregates)?;
    files.push(paths.table_gap());
    write_aggregate_csv(&paths.aggregate(), &aggregates)?;
    files.push(paths.aggregate());
    Ok(ReportBundle {
        report_dir,
        results,
        aggregates,
        locality,
        files,
    })
}

fn run_stage<T>(name: &str, seed: u64, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::stage(name, seed, e))
}

/// Run the whole diagnosis: for every seed, generate the world and
/// episodes, re-split, train and evaluate the agent under every
/// configured representation, score instruction distances, then
/// aggregate everything into the report.
///
/// With an external dataset configured, ingest it, re-split its
/// episodes, and score instruction distances instead.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReportBundle> {
    cfg.validate()?;
    if cfg.dataset.is_some() {
        return run_dataset_experiment(cfg, out_dir);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let paths = RunPaths::new(out_dir);
    write_pretty_json(&paths.config(), cfg)?;
    let needs_seg = cfg.features.contains(&FeatureKind::Learnedseg);
    for &seed in &cfg.seeds {
        run_stage("gen-world", seed, || stage_gen_world(cfg, seed, out_dir))?;
        run_stage("split", seed, || stage_split(cfg, seed, out_dir))?;
        if needs_seg {
            run_stage("train-seg", seed, || stage_train_seg(cfg, seed, out_dir))?;
        }
        for &kind in &cfg.features {
            run_stage("featurize", seed, || {
                stage_featurize(cfg, seed, kind, out_dir)
            })?;
            run_stage("train", seed, || stage_train(cfg, seed, kind, out_dir))?;
            run_stage("eval", seed, || stage_eval(cfg, seed, kind, out_dir))?;
        }
        run_stage("lang-dist", seed, || stage_lang_dist(cfg, seed, out_dir))?;
    }
    stage_report(cfg, out_dir)
}

/// Dataset mode: re-split the external episodes by a coordinate cut
/// chosen on the training environments, then score every non-training
/// instruction against the training set.
fn run_dataset_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<ReportBundle> {
    let ds_paths = cfg.dataset.as_ref().expect("checked by caller");
    let paths = RunPaths::new(out_dir);
    let dataset_dir = paths.dataset_dir();
    std::fs::create_dir_all(&dataset_dir).map_err(|e| Error::io(&dataset_dir, e))?;
    write_pretty_json(&paths.config(), cfg)?;

    let ds = load_external_dataset(Path::new(&ds_paths.graph_dir), Path::new(&ds_paths.items_file))?;
    let mut train_envs: Vec<String> = ds
        .items_in_role(OriginalRole::Train)
        .iter()
        .map(|i| i.env_id.clone())
        .collect();
    train_envs.sort();
    train_envs.dedup();
    if train_envs.is_empty() {
        return Err(Error::Validation(
            "the dataset has no training items, so no cut can be chosen".into(),
        ));
    }

    let all_parts: Vec<(String, &NavGraph)> =
        ds.graphs.iter().map(|(id, g)| (id.clone(), g)).collect();
    let union = NavGraph::disjoint_union(&all_parts)?;
    let train_parts: Vec<(String, &NavGraph)> = ds
        .graphs
        .iter()
        .filter(|(id, _)| train_envs.contains(id))
        .map(|(id, g)| (id.clone(), g))
        .collect();
    let train_union = NavGraph::disjoint_union(&train_parts)?;
    let cut = choose_cut(&train_union, cfg.split.axis, cfg.split.fraction)?;

    let split_eps: Vec<SplitEpisode> = ds
        .items
        .iter()
        .map(|item| SplitEpisode {
            id: item.id.clone(),
            viewpoints: item
                .path
                .iter()
                .map(|v| prefixed(&item.env_id, v))
                .collect(),
            role: item.split,
        })
        .collect();
    let assignment = structural_split(&union, &split_eps, cfg.split.axis, cut)?;
    let split_path = dataset_dir.join("split.json");
    write_pretty_json(&split_path, &assignment)?;

    let mut training = Vec::new();
    let mut targets = Vec::new();
    for item in &ds.items {
        let cat = assignment.category(&item.id)?;
        if cat == SplitCategory::Train {
            training.push(item.tokens.clone());
        } else {
            targets.push(LangTarget {
                id: item.id.clone(),
                category: cat.to_string(),
                tokens: item.tokens.clone(),
                success: None,
            });
        }
    }
    let rows = compute_lang_distances(&training, &targets)?;
    let mut files = write_lang_distance_files(&rows, &dataset_dir)?;
    files.insert(0, split_path);
    Ok(ReportBundle {
        report_dir: dataset_dir,
        results: Vec::new(),
        aggregates: Vec::new(),
        locality: Vec::new(),
        files,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::navgraph::OriginalRole;

    fn mini_spec() -> WorldSpec {
        WorldSpec {
            num_envs: 3,
            rooms_per_env: (4, 4),
            floors: 1,
            viewpoints_per_room: (2, 3),
            semantic_classes: 6,
            room_types: 3,
            style_dim: 4,
            lowlevel_dim: 12,
            seed: 99,
            ..WorldSpec::default()
        }
    }

    fn mini_config(features: Vec<FeatureKind>, seeds: Vec<u64>) -> ExperimentConfig {
        ExperimentConfig {
            world: Some(mini_spec()),
            episodes: EpisodeConfig {
                train: 30,
                val_seen: 10,
                env_unseen: 10,
                min_hops: 2,
                max_hops: 4,
                noise: InstructionNoise::default(),
            },
            split: SplitConfig {
                env_unseen_count: 1,
                ..SplitConfig::default()
            },
            features,
            agent: AgentHyper {
                epochs: 3,
                batch_size: 16,
                lr: 0.1,
                ..AgentHyper::default()
            },
            seg: SegHyper {
                epochs: 3,
                ..SegHyper::default()
            },
            seeds,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn full_run_writes_expected_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_config(vec![FeatureKind::Zero, FeatureKind::Gtseg], vec![0]);
        let bundle = run_experiment(&cfg, dir.path()).unwrap();

        let paths = RunPaths::new(dir.path());
        for p in [
            paths.config(),
            paths.world(0),
            paths.episodes(0),
            paths.split(0),
            paths.features(0, FeatureKind::Zero),
            paths.features(0, FeatureKind::Gtseg),
            paths.agent(0, FeatureKind::Zero),
            paths.agent(0, FeatureKind::Gtseg),
            paths.loss_curve(0, FeatureKind::Zero),
            paths.trajectories(0, FeatureKind::Gtseg),
            paths.result(0, FeatureKind::Zero),
            paths.result(0, FeatureKind::Gtseg),
            paths.locality(0, FeatureKind::Zero),
            paths.lang_distance(0),
            paths.lang_hist(0),
            paths.report_dir().join("metrics.csv"),
            paths.report_dir().join("metrics.json"),
            paths.report_dir().join("metrics.svg"),
            paths.table_gap(),
            paths.aggregate(),
        ] {
            assert!(p.is_file(), "missing artifact {}", p.display());
        }

        assert_eq!(bundle.results.len(), 2);
        assert_eq!(bundle.aggregates.len(), 2);
        for r in &bundle.results {
            r.validate().unwrap();
        }
        assert_eq!(bundle.aggregate("zero").unwrap().seeds, vec![0]);
        assert!(bundle.aggregate("classprob").is_err());

        let split: SplitAssignment = load_json(&paths.split(0)).unwrap();
        assert!(split.count(SplitCategory::Train) > 0);
        assert!(split.count(SplitCategory::EnvUnseen) > 0);
        let episodes = RunEpisodes::load(&paths.episodes(0)).unwrap();
        assert_eq!(episodes.train.len(), 30);
        assert_eq!(episodes.val_seen.len(), 10);
        assert_eq!(episodes.env_unseen.len(), 10);
        // env_unseen episodes live in the held-out environment only
        let world = World::load(&paths.world(0)).unwrap();
        let (train_envs, unseen_envs) = env_partition(&cfg.split, &world).unwrap();
        assert_eq!(unseen_envs.len(), 1);
        for ep in &episodes.env_unseen {
            assert!(unseen_envs.contains(&ep.env_id));
        }
        for ep in episodes.train.iter().chain(&episodes.val_seen) {
            assert!(train_envs.contains(&ep.env_id));
        }
    }

    #[test]
    fn rerun_is_byte_identical() {
        let cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        run_experiment(&cfg, dir_a.path()).unwrap();
        run_experiment(&cfg, dir_b.path()).unwrap();
        for rel in [
            "config.json",
            "seed0/world.json",
            "seed0/episodes.json",
            "seed0/split.json",
            "seed0/features_zero.csv",
            "seed0/result_zero.json",
            "seed0/trajectories_zero.json",
            "seed0/locality_zero.csv",
            "seed0/lang_distance.csv",
            "seed0/lang_hist.csv",
            "report/metrics.csv",
            "report/metrics.json",
            "report/metrics.svg",
            "report/table_gap.csv",
            "report/aggregate.csv",
        ] {
            let a = std::fs::read(dir_a.path().join(rel)).unwrap();
            let b = std::fs::read(dir_b.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs between identical runs");
        }
    }

    #[test]
    fn eval_stage_reruns_identically_from_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        run_experiment(&cfg, dir.path()).unwrap();
        let paths = RunPaths::new(dir.path());
        let result_before = std::fs::read(paths.result(0, FeatureKind::Zero)).unwrap();
        let locality_before = std::fs::read(paths.locality(0, FeatureKind::Zero)).unwrap();
        std::fs::remove_file(paths.result(0, FeatureKind::Zero)).unwrap();
        std::fs::remove_file(paths.locality(0, FeatureKind::Zero)).unwrap();
        stage_eval(&cfg, 0, FeatureKind::Zero, dir.path()).unwrap();
        assert_eq!(
            std::fs::read(paths.result(0, FeatureKind::Zero)).unwrap(),
            result_before
        );
        assert_eq!(
            std::fs::read(paths.locality(0, FeatureKind::Zero)).unwrap(),
            locality_before
        );
    }

    #[test]
    fn learnedseg_chain_trains_predictor_and_features() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_config(vec![FeatureKind::Learnedseg], vec![0]);
        let bundle = run_experiment(&cfg, dir.path()).unwrap();
        let paths = RunPaths::new(dir.path());
        assert!(paths.seg_predictor(0).is_file());
        let predictor = SegPredictor::load(&paths.seg_predictor(0)).unwrap();
        assert_eq!(predictor.params.out_dim(), mini_spec().semantic_classes);
        let store = FeatureStore::read_csv(&paths.features(0, FeatureKind::Learnedseg)).unwrap();
        assert_eq!(store.dim(), mini_spec().semantic_classes);
        assert_eq!(bundle.results.len(), 1);
    }

    #[test]
    fn config_validation_rejects_bad_settings() {
        // two sources at once
        let mut cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        cfg.world_file = Some("/nonexistent/world.json".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        // missing world file
        let mut cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        cfg.world = None;
        cfg.world_file = Some("/nonexistent/world.json".into());
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        // bad fraction
        let mut cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        cfg.split.fraction = 1.0;
        assert!(cfg.validate().is_err());

        // empty pools
        let mut cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        cfg.episodes.val_seen = 0;
        assert!(cfg.validate().is_err());

        // no features / duplicate features / duplicate seeds
        assert!(mini_config(vec![], vec![0]).validate().is_err());
        assert!(
            mini_config(vec![FeatureKind::Zero, FeatureKind::Zero], vec![0])
                .validate()
                .is_err()
        );
        assert!(mini_config(vec![FeatureKind::Zero], vec![1, 1])
            .validate()
            .is_err());

        // the default configuration is valid
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn load_config_rejects_unknown_fields_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        std::fs::write(&path, r#"{"unknown_setting": 3}"#).unwrap();
        assert!(matches!(load_config(&path), Err(Error::Config(_))));
        assert!(matches!(
            load_config(&dir.path().join("missing.json")),
            Err(Error::Config(_))
        ));
        std::fs::write(&path, r#"{"seeds": [7], "features": ["gtseg"]}"#).unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.seeds, vec![7]);
        assert_eq!(cfg.features, vec![FeatureKind::Gtseg]);
        // unset fields take their defaults
        assert_eq!(cfg.episodes.train, 360);
    }

    #[test]
    fn config_snapshot_reloads_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = mini_config(vec![FeatureKind::Zero], vec![0]);
        run_experiment(&cfg, dir.path()).unwrap();
        let snapshot = load_config(&RunPaths::new(dir.path()).config()).unwrap();
        assert_eq!(snapshot, cfg);
    }

    #[test]
    fn env_partition_variants() {
        let world = generate_world(&mini_spec()).unwrap();
        let ids: Vec<String> = world.envs.iter().map(|e| e.id.clone()).collect();
        assert_eq!(ids.len(), 3);

        let by_count = SplitConfig {
            env_unseen_count: 1,
            ..SplitConfig::default()
        };
        let (train, unseen) = env_partition(&by_count, &world).unwrap();
        assert_eq!(train, ids[..2].to_vec());
        assert_eq!(unseen, ids[2..].to_vec());

        let explicit = SplitConfig {
            env_unseen: vec![ids[0].clone()],
            ..SplitConfig::default()
        };
        let (train, unseen) = env_partition(&explicit, &world).unwrap();
        assert_eq!(unseen, vec![ids[0].clone()]);
        assert_eq!(train, ids[1..].to_vec());

        let unknown = SplitConfig {
            env_unseen: vec!["nope".into()],
            ..SplitConfig::default()
        };
        assert!(env_partition(&unknown, &world).is_err());

        let too_many = SplitConfig {
            env_unseen_count: 3,
            ..SplitConfig::default()
        };
        assert!(env_partition(&too_many, &world).is_err());

        let all_held_out = SplitConfig {
            env_unseen: ids.clone(),
            ..SplitConfig::default()
        };
        assert!(env_partition(&all_held_out, &world).is_err());
    }

    #[test]
    fn union_graph_prefixes_and_disconnects() {
        let world = generate_world(&mini_spec()).unwrap();
        let union = union_graph(&world, None).unwrap();
        let total: usize = world.envs.iter().map(|e| e.graph().node_count()).sum();
        assert_eq!(union.node_count(), total);
        let first_env = &world.envs[0];
        let vp = first_env.viewpoint_ids().next().unwrap();
        assert!(union.contains(&prefixed(&first_env.id, vp)));
        // no edges across environments: a node of env 0 cannot reach env 1
        let other_env = &world.envs[1];
        let other_vp = other_env.viewpoint_ids().next().unwrap();
        let from = union.lookup(&prefixed(&first_env.id, vp)).unwrap();
        let to = union.lookup(&prefixed(&other_env.id, other_vp)).unwrap();
        assert!(union.shortest_lengths_from(from)[to].is_infinite());
    }

    #[test]
    fn locality_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("locality.csv");
        let table = LocalityTable {
            bins: vec![
                LocalityBin {
                    label: "1.0-2.5".into(),
                    low: 1.0,
                    high: 2.5,
                    episode_count: 12,
                    success_rate: 50.0,
                },
                LocalityBin {
                    label: "2.5-4.0".into(),
                    low: 2.5,
                    high: 4.0,
                    episode_count: 11,
                    success_rate: 27.3,
                },
            ],
        };
        write_locality_csv(&path, &table).unwrap();
        let back = read_locality_csv(&path).unwrap();
        assert_eq!(back, table);

        let empty = LocalityTable { bins: Vec::new() };
        write_locality_csv(&path, &empty).unwrap();
        assert_eq!(read_locality_csv(&path).unwrap(), empty);
    }

    #[test]
    fn dataset_mode_splits_and_scores_language() {
        use dataset::{save_external_dataset, DatasetItem, ExternalDataset};

        let mut graphs = BTreeMap::new();
        for env in ["alpha", "beta"] {
            let mut g = NavGraph::new();
            for (i, x) in [0.0, 4.0, 8.0, 12.0].iter().enumerate() {
                g.add_node(&format!("v{i}"), [*x, 0.0, 0.0]).unwrap();
            }
            g.add_edge("v0", "v1").unwrap();
            g.add_edge("v1", "v2").unwrap();
            g.add_edge("v2", "v3").unwrap();
            graphs.insert(env.to_string(), g);
        }
        let item = |id: &str, env: &str, path: &[&str], text: &str, role| DatasetItem {
            id: id.into(),
            env_id: env.into(),
            path: path.iter().map(|s| s.to_string()).collect(),
            instruction: text.into(),
            split: role,
            tokens: Vec::new(),
        };
        let ds = ExternalDataset {
            graphs,
            items: vec![
                item(
                    "t1",
                    "alpha",
                    &["v0", "v1"],
                    "walk to the hall",
                    OriginalRole::Train,
                ),
                item(
                    "t2",
                    "alpha",
                    &["v1", "v0"],
                    "go back to the start",
                    OriginalRole::Train,
                ),
                item(
                    "v1",
                    "alpha",
                    &["v1", "v2", "v3"],
                    "walk past the hall to the end",
                    OriginalRole::ValSeen,
                ),
                item(
                    "u1",
                    "beta",
                    &["v0", "v1", "v2"],
                    "head for the far room",
                    OriginalRole::EnvUnseen,
                ),
            ],
            vocab: BTreeMap::new(),
        };
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        save_external_dataset(&ds, &data_dir.join("graphs"), &data_dir.join("items.json"))
            .unwrap();

        let cfg = ExperimentConfig {
            dataset: Some(DatasetPaths {
                graph_dir: data_dir.join("graphs").display().to_string(),
                items_file: data_dir.join("items.json").display().to_string(),
            }),
            ..ExperimentConfig::default()
        };
        cfg.validate().unwrap();
        let out = dir.path().join("out");
        let bundle = run_experiment(&cfg, &out).unwrap();
        assert!(bundle.results.is_empty());
        assert!(out.join("dataset/split.json").is_file());
        assert!(out.join("dataset/lang_distance.csv").is_file());
        assert!(out.join("dataset/lang_hist.csv").is_file());

        let assignment: SplitAssignment = load_json(&out.join("dataset/split.json")).unwrap();
        // cut at half of alpha's viewpoints: t1 (v0,v1) stays inside
        assert_eq!(
            assignment.category("t1").unwrap(),
            SplitCategory::Train,
        );
        assert_eq!(
            assignment.category("u1").unwrap(),
            SplitCategory::EnvUnseen
        );
        let text = std::fs::read_to_string(out.join("dataset/lang_distance.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // header plus one row per non-training item (t2 crosses nothing:
        // it stays within the cut too, so only v1 and u1 are targets)
        assert_eq!(lines[0], "item_id,dis_rouge,dis_bleu,success");
        assert!(lines.len() >= 3);
    }

    #[test]
    fn stage_errors_carry_stage_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        // learnedseg features without a trained predictor: run the
        // featurize stage directly, before train-seg.
        let cfg = mini_config(vec![FeatureKind::Learnedseg], vec![0]);
        stage_gen_world(&cfg, 0, dir.path()).unwrap();
        let err = run_stage("featurize", 0, || {
            stage_featurize(&cfg, 0, FeatureKind::Learnedseg, dir.path())
        })
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("featurize"), "message was {msg:?}");
        assert!(msg.contains("seed 0"), "message was {msg:?}");
        assert!(matches!(err.root(), Error::Io { .. }));
    }

    #[test]
    fn aggregate_math_and_table_gap_format() {
        let result = |feature: &str, seed: u64, seen: f64, unseen: f64| EvalResult {
            feature: feature.into(),
            seed,
            splits: vec![
                SplitMetrics {
                    split: "path_seen".into(),
                    episode_count: 10,
                    success_rate: seen,
                    goal_progress: 1.0,
                },
                SplitMetrics {
                    split: "env_unseen".into(),
                    episode_count: 10,
                    success_rate: unseen,
                    goal_progress: 1.0,
                },
            ],
            seen_split: "path_seen".into(),
            unseen_split: "env_unseen".into(),
        };
        let cfg = ExperimentConfig {
            features: vec![FeatureKind::Lowlevel],
            seeds: vec![0, 1],
            ..ExperimentConfig::default()
        };
        let results = vec![
            result("lowlevel", 0, 60.0, 40.0),
            result("lowlevel", 1, 50.0, 45.0),
        ];
        let rows = aggregate_results(&cfg, &results).unwrap();
        assert_eq!(rows.len(), 1);
        let row = &rows[0];
        assert_eq!(row.seen_mean, 55.0);
        assert_eq!(row.unseen_mean, 42.5);
        assert_eq!(row.gap, vec![20.0, 5.0]);
        assert_eq!(row.gap_mean, 12.5);
        // sample standard deviation of {20, 5}
        assert!((row.gap_sd - 10.606601717798213).abs() < 1e-12);

        let dir = tempfile::tempdir().unwrap();
        let gap_path = dir.path().join("table_gap.csv");
        write_table_gap(&gap_path, &rows).unwrap();
        let text = std::fs::read_to_string(&gap_path).unwrap();
        assert_eq!(
            text,
            "feature,val_seen,val_unseen,gap\nlowlevel,55.0,42.5,12.5\n"
        );

        let agg_path = dir.path().join("aggregate.csv");
        write_aggregate_csv(&agg_path, &rows).unwrap();
        let text = std::fs::read_to_string(&agg_path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "feature,metric,seed_0,seed_1,mean,sd");
        assert_eq!(lines[1], "lowlevel,seen_success_rate,60.0,50.0,55.00,7.07");
        assert_eq!(lines[3], "lowlevel,gap,20.0,5.0,12.50,10.61");
    }

    #[test]
    fn mean_and_sd_helpers() {
        assert_eq!(mean(&[2.0, 4.0]), 3.0);
        assert_eq!(sample_sd(&[5.0]), 0.0);
        assert!((sample_sd(&[1.0, 2.0, 3.0]) - 1.0).abs() < 1e-12);
    }
}
