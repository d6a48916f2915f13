//! The learned segmentation predictor: a perceptron trained to recover
//! per-class visible areas from low-level appearance.
//!
//! Training environments are partitioned into a train and a held-out
//! side (disjoint, both nonempty); the checkpoint with the lowest
//! held-out binary cross-entropy wins. Features produced by the trained
//! predictor approximate ground-truth segmentation areas while being
//! computable from appearance alone — the bridge between the entangled
//! and disentangled ends of the feature ladder.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neuralcore::{
    bce_loss, dropout_masks, mlp_forward, mlp_logits_taped, sgd_step, MlpParams, MlpVars, Tape,
    Tensor,
};
use crate::rng::{mix, rng_for, tag};
use crate::worldgen::{low_level_appearance, Direction, World};

/// Hyperparameters of segmentation-predictor training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub dropout: f64,
}

impl Default for SegHyper {
    fn default() -> Self {
        SegHyper {
            epochs: 30,
            batch_size: 64,
            lr: 0.05,
            clip_norm: 5.0,
            dropout: 0.3,
        }
    }
}

impl SegHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "seg training needs at least one epoch and a positive batch size".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Validation(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.clip_norm.is_finite() && self.clip_norm > 0.0) {
            return Err(Error::Validation(format!(
                "clip norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// A trained predictor plus the metadata of its training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegPredictor {
    pub params: MlpParams,
    pub train_envs: Vec<String>,
    pub heldout_envs: Vec<String>,
    /// Mean per-class BCE on held-out views at the selected checkpoint.
    pub heldout_bce: f64,
}

impl SegPredictor {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        check_partition(&self.train_envs, &self.heldout_envs)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        serde_json::to_writer_pretty(&mut w, self).map_err(|e| Error::serde(path, e))?;
        use std::io::Write;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<SegPredictor> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let predictor: SegPredictor = serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::serde(path, e))?;
        predictor.validate()?;
        Ok(predictor)
    }
}

fn check_partition(train: &[String], heldout: &[String]) -> Result<()> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::Validation(
            "environment partition needs at least one environment on each side".into(),
        ));
    }
    for t in train {
        if heldout.contains(t) {
            return Err(Error::Validation(format!(
                "environment {t:?} appears on both sides of the partition"
            )));
        }
    }
    Ok(())
}

/// Split environments roughly 5:1 into train and held-out sides,
/// holding out the tail of the list.
pub fn default_seg_partition(env_ids: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    if env_ids.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 environments to partition, got {}",
            env_ids.len()
        )));
    }
    let heldout = (env_ids.len() + 5) / 6;
    let cut = env_ids.len() - heldout;
    Ok((env_ids[..cut].to_vec(), env_ids[cut..].to_vec()))
}

/// Low-level inputs and ground-truth-area targets for every view of the
/// listed environments, in deterministic order.
fn view_dataset(world: &World, env_ids: &[String], seed: u64) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut data = Vec::new();
    for env_id in env_ids {
        let env = world.env(env_id)?;
        let vps: Vec<String> = env.viewpoint_ids().map(str::to_string).collect();
        for vp in vps {
            for dir in Direction::ALL {
                let x = low_level_appearance(world, env_id, &vp, dir, seed)?;
                let y = env.semantics_of(&vp, dir)?.to_vec();
                data.push((x, y));
            }
        }
    }
    Ok(data)
}

/// Mean per-class BCE of the predictor over a dataset (inference mode).
fn dataset_bce(params: &MlpParams, data: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for (x, y) in data {
        let out = mlp_forward(params, &Tensor::vector(x), 0.0, false, 0)?;
        total += bce_loss(out.data(), y)?;
        count += y.len();
    }
    if count == 0 {
        return Err(Error::Domain("cannot evaluate BCE on an empty dataset".into()));
    }
    Ok(total / count as f64)
}

/// Train the predictor on ground-truth areas of the train-side
/// environments, selecting the checkpoint with lowest held-out BCE.
pub fn train_seg_predictor(
    world: &World,
    train_envs: &[String],
    heldout_envs: &[String],
    hyper: &SegHyper,
    seed: u64,
) -> Result<SegPredictor> {
    hyper.validate()?;
    check_partition(train_envs, heldout_envs)?;
    let train_data = view_dataset(world, train_envs, seed)?;
    let heldout_data = view_dataset(world, heldout_envs, seed)?;
    if train_data.is_empty() || heldout_data.is_empty() {
        return Err(Error::Validation(
            "both partition sides must contain at least one view".into(),
        ));
    }

    let input_dim = world.spec.lowlevel_dim;
    let out_dim = world.spec.semantic_classes;
    let mut init_rng = rng_for(seed, &[tag::TRAIN_INIT]);
    let mut params = MlpParams::init(&mut init_rng, input_dim, out_dim);
    let mut best = (dataset_bce(&params, &heldout_data)?, params.clone());

    let mut order: Vec<usize> = (0..train_data.len()).collect();
    for epoch in 0..hyper.epochs {
        let mut shuffle_rng = rng_for(seed, &[tag::TRAIN_SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        for (batch_idx, batch) in order.chunks(hyper.batch_size).enumerate() {
            let mut tape = Tape::new();
            let vars = MlpVars::record(&mut tape, &params);
            let masks = if hyper.dropout > 0.0 {
                Some(dropout_masks(
                    hyper.dropout,
                    mix(seed, &[tag::DROPOUT, epoch as u64, batch_idx as u64]),
                )?)
            } else {
                None
            };
            let mut losses = Vec::with_capacity(batch.len());
            for &i in batch {
                let (x, y) = &train_data[i];
                let input = tape.leaf(Tensor::vector(x));
                let logits = mlp_logits_taped(&mut tape, &vars, input, masks.as_ref())?;
                losses.push(tape.sigmoid_bce(logits, Tensor::vector(y))?);
            }
            let total = tape.add_many(&losses)?;
            let loss = tape.scale(total, 1.0 / batch.len() as f64);
            let loss_value = tape.value(loss).scalar_value();
            if !loss_value.is_finite() {
                return Err(Error::Training {
                    stage: "seg predictor".into(),
                    msg: format!("non-finite loss at epoch {epoch}, batch {batch_idx}"),
                });
            }
            tape.backward(loss)?;
            let grads = vars.grads(&tape);
            let mut set = params.to_param_set();
            sgd_step(&mut set, &grads, hyper.lr, hyper.clip_norm)?;
            params = MlpParams::from_param_set(&set)?;
        }
        let heldout = dataset_bce(&params, &heldout_data)?;
        if heldout < best.0 {
            best = (heldout, params.clone());
        }
    }

    Ok(SegPredictor {
        params: best.1,
        train_envs: train_envs.to_vec(),
        heldout_envs: heldout_envs.to_vec(),
        heldout_bce: best.0,
    })
}

/// Predicted per-class areas from a low-level appearance vector
/// (sigmoid outputs, inference mode — no dropout).
pub fn learnedseg_features(predictor: &SegPredictor, lowlevel: &[f64]) -> Result<Vec<f64>> {
    if lowlevel.len() != predictor.params.input_dim() {
        return Err(Error::Validation(format!(
            "predictor expects {} appearance components, got {}",
            predictor.params.input_dim(),
            lowlevel.len()
        )));
    }
    Ok(mlp_forward(&predictor.params, &Tensor::vector(lowlevel), 0.0, false, 0)?
        .data()
        .to_vec())
}

/// Mean per-class BCE of always predicting the train-set mean target —
/// the baseline a useful predictor must beat on held-out views.
pub fn constant_mean_baseline_bce(
    world: &World,
    train_envs: &[String],
    heldout_envs: &[String],
    seed: u64,
) -> Result<f64> {
    let train = view_dataset(world, train_envs, seed)?;
    let heldout = view_dataset(world, heldout_envs, seed)?;
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::Domain("baseline needs nonempty partition sides".into()));
    }
    let classes = train[0].1.len();
    let mut mean = vec![0.0; classes];
    for (_, y) in &train {
        for (m, v) in mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= train.len() as f64;
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (_, y) in &heldout {
        total += bce_loss(&mean, y)?;
        count += y.len();
    }
    Ok(total / count as f64)
}
