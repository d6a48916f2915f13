//! The feature-replacement ladder: interchangeable visual representations
//! for the same views, from an all-zero mask to ground-truth semantics.
//!
//! Every representation implements one uniform interface — give it a view,
//! get a fixed-length finite vector — so the navigation agent can be
//! retrained with nothing changed but its visual input. The ladder:
//!
//! * `zero` — vision masked out entirely (graph-only control).
//! * `lowlevel` — dense appearance entangling semantics with environment
//!   and region style.
//! * `classprob` — noisy label probabilities derived from semantics.
//! * `detection` — per-label sums of detected area × confidence.
//! * `gtseg` — ground-truth per-class visible areas.
//! * `learnedseg` — areas predicted from low-level appearance by a
//!   trained perceptron.

pub mod seg;
pub mod store;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralcore::{softmax_vec, Tensor};
use crate::rng::{mix, rng_for, tag};
use crate::worldgen::{ground_truth_semantics, low_level_appearance, Direction, World};

pub use seg::{
    constant_mean_baseline_bce, default_seg_partition, learnedseg_features, train_seg_predictor,
    SegHyper, SegPredictor,
};
pub use store::{DetectionTable, FeatureStore};

/// Classes whose visible area is below this emit no detections.
pub const DETECTION_AREA_THRESHOLD: f64 = 0.02;
/// Beta(8, 2) confidence: optimistic detector, mean 0.8.
const CONFIDENCE_BETA: (f64, f64) = (8.0, 2.0);
/// Default cumulative-mass coverage for detection vocabulary selection.
pub const DEFAULT_VOCAB_COVERAGE: f64 = 0.95;
/// Logit gain of the identity label map used by class probabilities.
pub const LABEL_MAP_GAIN: f64 = 10.0;

/// The six feature families, in ladder order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Zero,
    Lowlevel,
    Classprob,
    Detection,
    Gtseg,
    Learnedseg,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 6] = [
        FeatureKind::Zero,
        FeatureKind::Lowlevel,
        FeatureKind::Classprob,
        FeatureKind::Detection,
        FeatureKind::Gtseg,
        FeatureKind::Learnedseg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FeatureKind::Zero => "zero",
            FeatureKind::Lowlevel => "lowlevel",
            FeatureKind::Classprob => "classprob",
            FeatureKind::Detection => "detection",
            FeatureKind::Gtseg => "gtseg",
            FeatureKind::Learnedseg => "learnedseg",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Validation(format!(
                    "unknown feature kind {s:?}; expected one of zero, lowlevel, \
                     classprob, detection, gtseg, learnedseg"
                ))
            })
    }
}

/// An all-zero vector: what the agent sees with vision masked out.
pub fn zero_features(dim: usize) -> Result<Vec<f64>> {
    if dim == 0 {
        return Err(Error::Validation("feature dimension must be positive".into()));
    }
    Ok(vec![0.0; dim])
}

/// A label map whose first `classes` rows pick out one semantic class
/// each (scaled by `gain`); any extra label rows stay zero.
pub fn identity_label_map(classes: usize, labels: usize, gain: f64) -> Result<Tensor> {
    if labels < classes {
        return Err(Error::Validation(format!(
            "label map needs at least as many labels as classes ({labels} < {classes})"
        )));
    }
    let mut m = Tensor::zeros(labels, classes);
    for c in 0..classes {
        m.set(c, c, gain);
    }
    Ok(m)
}

/// Noisy label probabilities from a semantic area vector:
/// `softmax((M·s + η) / temperature)` with `η ~ N(0, noise_sd²)`.
pub fn classprob_features(
    semantics: &[f64],
    label_map: &Tensor,
    temperature: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if label_map.cols() != semantics.len() {
        return Err(Error::Validation(format!(
            "label map expects {} classes, got {}",
            label_map.cols(),
            semantics.len()
        )));
    }
    if label_map.rows() < label_map.cols() {
        return Err(Error::Validation(format!(
            "label map must not reduce classes ({} labels < {} classes)",
            label_map.rows(),
            label_map.cols()
        )));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::Validation(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    if !(noise_sd.is_finite() && noise_sd >= 0.0) {
        return Err(Error::Validation(format!(
            "noise_sd must be finite and nonnegative, got {noise_sd}"
        )));
    }
    let mut logits = label_map.matmul(&Tensor::vector(semantics))?.data().to_vec();
    if noise_sd > 0.0 {
        let mut rng = rng_for(seed, &[tag::FEATURE]);
        for l in logits.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *l += noise_sd * z;
        }
    }
    for l in logits.iter_mut() {
        *l /= temperature;
    }
    Ok(softmax_vec(&logits))
}

/// One detected object in one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub label: u32,
    /// Fraction of the view the detection covers.
    pub area: f64,
    pub confidence: f64,
}

impl Detection {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("area", self.area), ("confidence", self.confidence)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Validation(format!(
                    "detection {name} must lie in [0,1], got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Confidence-weighted area per vocabulary label:
/// `a_c = Σ_{detections with label c} area · confidence`,
/// ordered by the vocabulary; labels outside it are ignored.
pub fn detection_features(records: &[Detection], vocab: &[u32]) -> Vec<f64> {
    let mut out = vec![0.0; vocab.len()];
    let slot: BTreeMap<u32, usize> =
        vocab.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    for det in records {
        if let Some(&i) = slot.get(&det.label) {
            out[i] += det.area * det.confidence;
        }
    }
    out
}

/// Pick the smallest label set covering `coverage_fraction` of the total
/// area·confidence mass, ordered by descending mass (ties by label id).
pub fn select_detection_vocab(
    table: &DetectionTable,
    coverage_fraction: f64,
) -> Result<Vec<u32>> {
    if !(coverage_fraction > 0.0 && coverage_fraction <= 1.0) {
        return Err(Error::Validation(format!(
            "coverage fraction must lie in (0,1], got {coverage_fraction}"
        )));
    }
    let mut mass: BTreeMap<u32, f64> = BTreeMap::new();
    for (_, dets) in table.iter() {
        for det in dets {
            *mass.entry(det.label).or_insert(0.0) += det.area * det.confidence;
        }
    }
    mass.retain(|_, m| *m > 0.0);
    if mass.is_empty() {
        return Err(Error::Domain(
            "cannot select a vocabulary from records with no detection mass".into(),
        ));
    }
    let mut ranked: Vec<(u32, f64)> = mass.into_iter().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = ranked.iter().map(|&(_, m)| m).sum();
    let mut vocab = Vec::new();
    let mut cum = 0.0;
    for (label, m) in ranked {
        vocab.push(label);
        cum += m;
        if cum >= coverage_fraction * total {
            break;
        }
    }
    Ok(vocab)
}

/// Sample detections for one view from its ground-truth semantics: each
/// class with enough visible area emits 1–3 detections whose areas sum
/// to the class area, each with a Beta-distributed confidence.
pub fn synthesize_detections(
    world: &World,
    env_id: &str,
    viewpoint: &str,
    direction: Direction,
    seed: u64,
) -> Result<Vec<Detection>> {
    let env_idx = world.env_index(env_id)?;
    let env = &world.envs[env_idx];
    let vp_idx = env.graph().lookup(viewpoint)?;
    let s = env.semantics_of(viewpoint, direction)?;
    let mut rng = rng_for(
        seed,
        &[
            tag::DETECTION,
            env_idx as u64,
            vp_idx as u64,
            direction.index() as u64,
        ],
    );
    let conf = Beta::new(CONFIDENCE_BETA.0, CONFIDENCE_BETA.1).expect("valid shape");
    let mut out = Vec::new();
    for (label, &area) in s.iter().enumerate() {
        if area <= DETECTION_AREA_THRESHOLD {
            continue;
        }
        let pieces = rng.gen_range(1..=3usize);
        let cuts: Vec<f64> = (0..pieces).map(|_| rng.gen_range(0.05..1.0)).collect();
        let total: f64 = cuts.iter().sum();
        for cut in cuts {
            out.push(Detection {
                label: label as u32,
                area: area * cut / total,
                confidence: conf.sample(&mut rng),
            });
        }
    }
    Ok(out)
}

/// Ground-truth per-class visible areas — the direct lookup.
pub fn gtseg_features(
    world: &World,
    env_id: &str,
    viewpoint: &str,
    direction: Direction,
) -> Result<Vec<f64>> {
    Ok(ground_truth_semantics(world, env_id, viewpoint, direction)?.to_vec())
}

enum FeaturizerState {
    Zero,
    Lowlevel {
        seed: u64,
    },
    Classprob {
        label_map: Tensor,
        temperature: f64,
        noise_sd: f64,
        seed: u64,
    },
    Detection {
        table: DetectionTable,
        vocab: Vec<u32>,
    },
    Gtseg,
    Learnedseg {
        predictor: SegPredictor,
        seed: u64,
    },
}

/// One representation behind the uniform interface: `featurize(view)`
/// always returns exactly `output_dim` finite components.
pub struct Featurizer {
    kind: FeatureKind,
    output_dim: usize,
    state: FeaturizerState,
}

impl Featurizer {
    pub fn zero(dim: usize) -> Result<Self> {
        zero_features(dim)?;
        Ok(Featurizer {
            kind: FeatureKind::Zero,
            output_dim: dim,
            state: FeaturizerState::Zero,
        })
    }

    pub fn lowlevel(world: &World, seed: u64) -> Self {
        Featurizer {
            kind: FeatureKind::Lowlevel,
            output_dim: world.spec.lowlevel_dim,
            state: FeaturizerState::Lowlevel { seed },
        }
    }

    pub fn classprob(
        label_map: Tensor,
        temperature: f64,
        noise_sd: f64,
        seed: u64,
    ) -> Result<Self> {
        // Reject bad shapes and hyperparameters up front with a probe.
        classprob_features(
            &vec![0.0; label_map.cols()],
            &label_map,
            temperature,
            noise_sd,
            seed,
        )?;
        Ok(Featurizer {
            kind: FeatureKind::Classprob,
            output_dim: label_map.rows(),
            state: FeaturizerState::Classprob {
                label_map,
                temperature,
                noise_sd,
                seed,
            },
        })
    }

    pub fn detection(table: DetectionTable, vocab: Vec<u32>) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Validation(
                "detection featurizer needs a nonempty vocabulary".into(),
            ));
        }
        Ok(Featurizer {
            kind: FeatureKind::Detection,
            output_dim: vocab.len(),
            state: FeaturizerState::Detection { table, vocab },
        })
    }

    pub fn gtseg(world: &World) -> Self {
        Featurizer {
            kind: FeatureKind::Gtseg,
            output_dim: world.spec.semantic_classes,
            state: FeaturizerState::Gtseg,
        }
    }

    pub fn learnedseg(predictor: SegPredictor, seed: u64) -> Self {
        Featurizer {
            kind: FeatureKind::Learnedseg,
            output_dim: predictor.params.out_dim(),
            state: FeaturizerState::Learnedseg { predictor, seed },
        }
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    /// The representation of one view.
    pub fn featurize(
        &self,
        world: &World,
        env_id: &str,
        viewpoint: &str,
        direction: Direction,
    ) -> Result<Vec<f64>> {
        // Validate the view uniformly so every kind errors the same way.
        let env_idx = world.env_index(env_id)?;
        let vp_idx = world.envs[env_idx].graph().lookup(viewpoint)?;
        let out = match &self.state {
            FeaturizerState::Zero => zero_features(self.output_dim)?,
            FeaturizerState::Lowlevel { seed } => {
                low_level_appearance(world, env_id, viewpoint, direction, *seed)?
            }
            FeaturizerState::Classprob {
                label_map,
                temperature,
                noise_sd,
                seed,
            } => {
                let s = ground_truth_semantics(world, env_id, viewpoint, direction)?;
                let view_seed = mix(
                    *seed,
                    &[
                        tag::FEATURE,
                        env_idx as u64,
                        vp_idx as u64,
                        direction.index() as u64,
                    ],
                );
                classprob_features(s, label_map, *temperature, *noise_sd, view_seed)?
            }
            FeaturizerState::Detection { table, vocab } => {
                let dets = table
                    .get(env_id, viewpoint, direction)
                    .map(|d| d.to_vec())
                    .unwrap_or_default();
                detection_features(&dets, vocab)
            }
            FeaturizerState::Gtseg => gtseg_features(world, env_id, viewpoint, direction)?,
            FeaturizerState::Learnedseg { predictor, seed } => {
                let x = low_level_appearance(world, env_id, viewpoint, direction, *seed)?;
                learnedseg_features(predictor, &x)?
            }
        };
        debug_assert_eq!(out.len(), self.output_dim);
        if out.len() != self.output_dim || out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "featurizer {} produced an invalid vector for {env_id}/{viewpoint}",
                self.kind
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldgen::{generate_world, WorldSpec};

    fn demo_world() -> World {
        generate_world(&WorldSpec {
            num_envs: 2,
            rooms_per_env: (2, 3),
            floors: 1,
            viewpoints_per_room: (3, 3),
            semantic_classes: 8,
            room_types: 4,
            style_dim: 4,
            lowlevel_dim: 12,
            seed: 77,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_features_are_zero() {
        let f = zero_features(4).unwrap();
        assert_eq!(f, vec![0.0; 4]);
        assert_eq!(f.iter().map(|v| v * v).sum::<f64>(), 0.0);
        assert!(zero_features(0).is_err());
    }

    #[test]
    fn feature_kind_names_roundtrip() {
        for kind in FeatureKind::ALL {
            assert_eq!(kind.name().parse::<FeatureKind>().unwrap(), kind);
        }
        assert!("resnet".parse::<FeatureKind>().is_err());
    }

    #[test]
    fn classprob_sums_to_one_and_flattens_at_high_temperature() {
        let m = identity_label_map(4, 6, LABEL_MAP_GAIN).unwrap();
        let s = [0.5, 0.2, 0.1, 0.05];
        let p = classprob_features(&s, &m, 1.0, 0.5, 3).unwrap();
        assert_eq!(p.len(), 6);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        // Temperature → ∞ washes every logit out to uniform.
        let p = classprob_features(&s, &m, 1e12, 0.0, 3).unwrap();
        for &v in &p {
            assert!((v - 1.0 / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn classprob_argmax_tracks_dominant_class_without_noise() {
        let m = identity_label_map(5, 5, LABEL_MAP_GAIN).unwrap();
        let s = [0.05, 0.1, 0.6, 0.02, 0.0];
        let p = classprob_features(&s, &m, 1.0, 0.0, 0).unwrap();
        let argmax = p
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 2);
    }

    #[test]
    fn classprob_rejects_bad_inputs() {
        let m = identity_label_map(3, 3, 1.0).unwrap();
        assert!(classprob_features(&[0.1, 0.2], &m, 1.0, 0.0, 0).is_err());
        assert!(classprob_features(&[0.1, 0.2, 0.3], &m, 0.0, 0.0, 0).is_err());
        assert!(classprob_features(&[0.1, 0.2, 0.3], &m, 1.0, -1.0, 0).is_err());
        assert!(identity_label_map(4, 3, 1.0).is_err());
    }

    #[test]
    fn detection_features_hand_case() {
        let chair = 3;
        let records = vec![
            Detection { label: chair, area: 0.2, confidence: 0.9 },
            Detection { label: chair, area: 0.1, confidence: 0.5 },
            Detection { label: 9, area: 0.4, confidence: 1.0 },
        ];
        let f = detection_features(&records, &[chair, 5]);
        assert!((f[0] - 0.23).abs() < 1e-12, "a_chair = {}", f[0]);
        assert_eq!(f[1], 0.0);
        assert_eq!(detection_features(&[], &[chair, 5]), vec![0.0, 0.0]);
    }

    #[test]
    fn detection_features_are_additive() {
        // Dyadic areas and confidences make the additions exact.
        let a = vec![
            Detection { label: 1, area: 0.25, confidence: 0.5 },
            Detection { label: 2, area: 0.5, confidence: 0.75 },
        ];
        let b = vec![
            Detection { label: 1, area: 0.125, confidence: 1.0 },
            Detection { label: 7, area: 0.5, confidence: 0.5 },
        ];
        let vocab = [1, 2, 7];
        let mut joined = a.clone();
        joined.extend(b.clone());
        let fa = detection_features(&a, &vocab);
        let fb = detection_features(&b, &vocab);
        let fj = detection_features(&joined, &vocab);
        for i in 0..vocab.len() {
            assert_eq!(fj[i], fa[i] + fb[i]);
        }
    }

    #[test]
    fn vocab_selection_keeps_dominant_mass_prefix() {
        let mut table = DetectionTable::new();
        table
            .insert(
                "env0",
                "v0",
                Direction::North,
                vec![
                    Detection { label: 4, area: 0.9, confidence: 1.0 },
                    Detection { label: 8, area: 0.1, confidence: 1.0 },
                ],
            )
            .unwrap();
        assert_eq!(select_detection_vocab(&table, 0.5).unwrap(), vec![4]);
        assert_eq!(select_detection_vocab(&table, 1.0).unwrap(), vec![4, 8]);
        assert!(select_detection_vocab(&table, 0.0).is_err());
        assert!(select_detection_vocab(&DetectionTable::new(), 0.5).is_err());
    }

    #[test]
    fn vocab_selection_ignores_record_order() {
        let dets = vec![
            Detection { label: 2, area: 0.3, confidence: 0.5 },
            Detection { label: 6, area: 0.4, confidence: 0.9 },
            Detection { label: 1, area: 0.2, confidence: 0.1 },
        ];
        let mut forward = DetectionTable::new();
        forward.insert("e", "v", Direction::North, dets.clone()).unwrap();
        let mut backward = DetectionTable::new();
        let mut rev = dets;
        rev.reverse();
        backward.insert("e", "v", Direction::North, rev).unwrap();
        assert_eq!(
            select_detection_vocab(&forward, 0.9).unwrap(),
            select_detection_vocab(&backward, 0.9).unwrap()
        );
    }

    #[test]
    fn synthesized_detections_cover_large_classes() {
        let world = demo_world();
        let dets = synthesize_detections(&world, "env0", "v0", Direction::East, 5).unwrap();
        assert_eq!(
            dets,
            synthesize_detections(&world, "env0", "v0", Direction::East, 5).unwrap()
        );
        let s = world.envs[0].semantics_of("v0", Direction::East).unwrap();
        for (label, &area) in s.iter().enumerate() {
            let total: f64 = dets
                .iter()
                .filter(|d| d.label == label as u32)
                .map(|d| d.area)
                .sum();
            if area > DETECTION_AREA_THRESHOLD {
                assert!(
                    (total - area).abs() < 1e-9,
                    "class {label} detections sum to {total}, area {area}"
                );
            } else {
                assert_eq!(total, 0.0);
            }
        }
        for det in &dets {
            det.validate().unwrap();
            assert!(det.confidence > 0.0 && det.confidence < 1.0);
        }
    }

    #[test]
    fn gtseg_matches_ground_truth() {
        let world = demo_world();
        let f = gtseg_features(&world, "env1", "v2", Direction::South).unwrap();
        assert_eq!(
            f.as_slice(),
            ground_truth_semantics(&world, "env1", "v2", Direction::South).unwrap()
        );
        assert!(gtseg_features(&world, "env1", "nope", Direction::South).is_err());
    }

    #[test]
    fn gtseg_is_style_invariant_while_lowlevel_is_not() {
        let base = WorldSpec {
            num_envs: 1,
            rooms_per_env: (2, 2),
            floors: 1,
            semantic_classes: 8,
            room_types: 4,
            style_dim: 4,
            lowlevel_dim: 12,
            appearance_noise_sd: 0.0,
            seed: 31,
            ..WorldSpec::default()
        };
        let plain = generate_world(&base).unwrap();
        let styled = generate_world(&WorldSpec {
            env_style_w: 5.0,
            region_style_w: 3.0,
            ..base
        })
        .unwrap();
        let gt_a = gtseg_features(&plain, "env0", "v0", Direction::North).unwrap();
        let gt_b = gtseg_features(&styled, "env0", "v0", Direction::North).unwrap();
        assert_eq!(gt_a, gt_b);
        let low_a = low_level_appearance(&plain, "env0", "v0", Direction::North, 1).unwrap();
        let low_b = low_level_appearance(&styled, "env0", "v0", Direction::North, 1).unwrap();
        assert_ne!(low_a, low_b);
    }

    #[test]
    fn every_kind_honors_the_uniform_interface() {
        let world = demo_world();
        let table = DetectionTable::synthesize(&world, 5).unwrap();
        let vocab = select_detection_vocab(&table, DEFAULT_VOCAB_COVERAGE).unwrap();
        let label_map = identity_label_map(
            world.spec.semantic_classes,
            world.spec.semantic_classes,
            LABEL_MAP_GAIN,
        )
        .unwrap();
        let predictor = train_seg_predictor(
            &world,
            &["env0".to_string()],
            &["env1".to_string()],
            &SegHyper { epochs: 1, batch_size: 16, ..SegHyper::default() },
            3,
        )
        .unwrap();
        let featurizers = vec![
            Featurizer::zero(world.spec.lowlevel_dim).unwrap(),
            Featurizer::lowlevel(&world, 5),
            Featurizer::classprob(label_map, 1.0, 0.5, 5).unwrap(),
            Featurizer::detection(table, vocab).unwrap(),
            Featurizer::gtseg(&world),
            Featurizer::learnedseg(predictor, 5),
        ];
        for (fz, kind) in featurizers.iter().zip(FeatureKind::ALL) {
            assert_eq!(fz.kind(), kind);
            for env in &world.envs {
                for vp in env.viewpoint_ids() {
                    for dir in Direction::ALL {
                        let f = fz.featurize(&world, &env.id, vp, dir).unwrap();
                        assert_eq!(f.len(), fz.output_dim());
                        assert!(f.iter().all(|v| v.is_finite()));
                    }
                }
            }
            assert!(fz.featurize(&world, "env9", "v0", Direction::North).is_err());
        }
    }

    #[test]
    fn feature_store_roundtrips_through_csv() {
        let world = demo_world();
        let store = FeatureStore::build(&world, &Featurizer::lowlevel(&world, 9)).unwrap();
        assert_eq!(store.name(), "lowlevel");
        assert_eq!(store.dim(), 12);
        let views: usize = world.envs.iter().map(|e| e.viewpoint_count() * 4).sum();
        assert_eq!(store.len(), views);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        store.write_csv(&path).unwrap();
        assert_eq!(FeatureStore::read_csv(&path).unwrap(), store);
    }

    #[test]
    fn detection_table_roundtrips_through_csv() {
        let world = demo_world();
        let table = DetectionTable::synthesize(&world, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("detections.csv");
        table.write_csv(&path).unwrap();
        let loaded = DetectionTable::read_csv(&path).unwrap();
        // Views whose detection list is empty are not representable in
        // the row-per-detection format; every stored row must survive.
        for ((env, vp, d), dets) in table.iter() {
            if dets.is_empty() {
                assert!(loaded.get(env, vp, *d).is_none());
            } else {
                assert_eq!(loaded.get(env, vp, *d).unwrap(), dets.as_slice());
            }
        }
    }

    #[test]
    fn feature_store_rejects_wrong_dimensions() {
        let mut store = FeatureStore::new("demo", 3).unwrap();
        assert!(store.insert("e", "v", Direction::North, vec![1.0, 2.0]).is_err());
        assert!(store
            .insert("e", "v", Direction::North, vec![1.0, 2.0, f64::NAN])
            .is_err());
        assert!(store.insert("e", "v", Direction::North, vec![1.0, 2.0, 3.0]).is_ok());
        assert!(FeatureStore::new("bad name", 3).is_err());
        assert!(FeatureStore::new("x", 0).is_err());
    }
}
