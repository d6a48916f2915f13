//! Imitation training for the navigation agent.
//!
//! Episodes are compiled once into step samples — the candidate list at
//! each viewpoint along the demonstrated path plus the index of the
//! correct action — and the agent is trained with teacher forcing:
//! cross-entropy between its action scores and the demonstrated action,
//! averaged over all steps in a batch. A final step at the goal teaches
//! the STOP action.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureStore;
use crate::neuralcore::{grad_check, sgd_step, ParamSet, Tape};
use crate::rng::{mix, rng_for, tag};
use crate::worldgen::{PathDatum, World};

use super::{
    advance_state, argmax_index, candidates_at, decode_step, encode_instruction, AgentParams,
    AgentVars, Candidate, DEFAULT_MAX_STEPS, NORTH,
};

/// Training settings for the imitation learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentHyper {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip_norm: f64,
    /// Step cap applied when rolling the trained agent out.
    pub max_steps: usize,
}

impl Default for AgentHyper {
    fn default() -> Self {
        AgentHyper {
            epochs: 60,
            batch_size: 32,
            lr: 0.05,
            clip_norm: 5.0,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

impl AgentHyper {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.max_steps == 0 {
            return Err(Error::Validation(
                "agent epochs, batch_size, and max_steps must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Validation(format!(
                "agent learning rate must be positive and finite, got {}",
                self.lr
            )));
        }
        if !(self.clip_norm > 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::Validation(format!(
                "agent clip_norm must be positive and finite, got {}",
                self.clip_norm
            )));
        }
        Ok(())
    }
}

/// One supervised decode step: the options and the correct choice.
#[derive(Debug, Clone)]
pub struct StepSample {
    pub candidates: Vec<Candidate>,
    /// Score index of the demonstrated action (0 = STOP).
    pub target: usize,
}

/// An episode compiled against a feature store.
#[derive(Debug, Clone)]
pub struct EpisodeSample {
    pub id: String,
    pub env_id: String,
    pub tokens: Vec<u32>,
    pub steps: Vec<StepSample>,
}

/// Compile episodes into supervised step samples. Each path hop becomes
/// a step whose target is the next path viewpoint among the candidates;
/// one extra step at the goal targets STOP.
pub fn build_samples(
    world: &World,
    store: &FeatureStore,
    episodes: &[PathDatum],
) -> Result<Vec<EpisodeSample>> {
    let mut samples = Vec::with_capacity(episodes.len());
    for episode in episodes {
        episode.validate(world)?;
        let env = world.env(&episode.env_id)?;
        let graph = env.graph();
        let mut heading = NORTH;
        let mut steps = Vec::with_capacity(episode.path.len());
        for hop in episode.path.windows(2) {
            let current = graph.lookup(&hop[0])?;
            let next = graph.lookup(&hop[1])?;
            let candidates = candidates_at(env, store, current, heading)?;
            let position = candidates
                .iter()
                .position(|c| c.to == next)
                .ok_or_else(|| {
                    Error::Validation(format!(
                        "episode {:?} steps from {:?} to non-adjacent {:?}",
                        episode.id, hop[0], hop[1]
                    ))
                })?;
            let from = graph.position(current);
            let pos = graph.position(next);
            heading = super::next_heading(
                heading,
                [pos[0] - from[0], pos[1] - from[1], pos[2] - from[2]],
            );
            steps.push(StepSample {
                candidates,
                target: position + 1,
            });
        }
        let goal = graph.lookup(&episode.goal)?;
        steps.push(StepSample {
            candidates: candidates_at(env, store, goal, heading)?,
            target: 0,
        });
        samples.push(EpisodeSample {
            id: episode.id.clone(),
            env_id: episode.env_id.clone(),
            tokens: episode.instruction.clone(),
            steps,
        });
    }
    Ok(samples)
}

/// Teacher-forced loss over a batch — total cross-entropy divided by the
/// number of decode steps — together with its parameter gradients.
pub fn batch_loss_and_grads(
    params: &AgentParams,
    batch: &[&EpisodeSample],
) -> Result<(f64, ParamSet)> {
    if batch.is_empty() {
        return Err(Error::Validation("cannot train on an empty batch".into()));
    }
    let mut tape = Tape::new();
    let vars = AgentVars::record(&mut tape, params);
    let mut losses = Vec::new();
    for sample in batch {
        let contexts = encode_instruction(&mut tape, &vars, params, &sample.tokens)?;
        let mut u = *contexts.last().expect("nonempty instruction");
        for step in &sample.steps {
            let out = decode_step(&mut tape, &vars, u, &contexts, &step.candidates)?;
            losses.push(tape.cross_entropy(out.scores, step.target)?);
            if step.target > 0 {
                u = advance_state(
                    &mut tape,
                    &vars,
                    u,
                    out.attended,
                    out.candidate_features[step.target - 1],
                )?;
            }
        }
    }
    let total = tape.add_many(&losses)?;
    let loss = tape.scale(total, 1.0 / losses.len() as f64);
    tape.backward(loss)?;
    Ok((tape.value(loss).scalar_value(), vars.grads(&tape)))
}

/// The result of imitation training.
#[derive(Debug, Clone)]
pub struct TrainedAgent {
    pub params: AgentParams,
    /// Mean teacher-forced loss per epoch, in epoch order.
    pub loss_curve: Vec<f64>,
}

/// Train an agent by imitation on demonstrated episodes. Initialization,
/// shuffling, and therefore the result are fully determined by `seed`.
pub fn train_imitation(
    world: &World,
    store: &FeatureStore,
    episodes: &[PathDatum],
    hyper: &AgentHyper,
    vocab_size: usize,
    seed: u64,
) -> Result<TrainedAgent> {
    hyper.validate()?;
    if episodes.is_empty() {
        return Err(Error::Validation("cannot train on zero episodes".into()));
    }
    if vocab_size == 0 {
        return Err(Error::Validation("vocab_size must be positive".into()));
    }
    let samples = build_samples(world, store, episodes)?;
    for sample in &samples {
        for &t in &sample.tokens {
            if t as usize >= vocab_size {
                return Err(Error::Validation(format!(
                    "episode {:?} uses token {t}, outside the vocabulary of size {vocab_size}",
                    sample.id
                )));
            }
        }
    }

    let mut init_rng = rng_for(seed, &[tag::TRAIN_INIT]);
    let mut params = AgentParams::init(&mut init_rng, vocab_size, store.dim());

    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(hyper.epochs);
    for epoch in 0..hyper.epochs {
        let mut shuffle_rng = rng_for(seed, &[tag::TRAIN_SHUFFLE, epoch as u64]);
        order.shuffle(&mut shuffle_rng);
        let mut epoch_ce = 0.0;
        let mut epoch_steps = 0usize;
        for (batch_idx, chunk) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&EpisodeSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let steps: usize = batch.iter().map(|s| s.steps.len()).sum();
            let (loss, grads) = batch_loss_and_grads(&params, &batch)?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    stage: "agent".into(),
                    msg: format!("non-finite loss in epoch {epoch}, batch {batch_idx}"),
                });
            }
            epoch_ce += loss * steps as f64;
            epoch_steps += steps;
            let mut set = params.to_param_set();
            sgd_step(&mut set, &grads, hyper.lr, hyper.clip_norm)?;
            params = AgentParams::from_param_set(&set)?;
        }
        loss_curve.push(epoch_ce / epoch_steps as f64);
    }
    Ok(TrainedAgent { params, loss_curve })
}

/// Fraction of decode steps where the agent's argmax action matches the
/// demonstrated one.
pub fn teacher_forced_accuracy(params: &AgentParams, samples: &[EpisodeSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Validation(
            "accuracy needs at least one episode".into(),
        ));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut tape = Tape::new();
    let vars = AgentVars::record(&mut tape, params);
    for sample in samples {
        let contexts = encode_instruction(&mut tape, &vars, params, &sample.tokens)?;
        let mut u = *contexts.last().expect("nonempty instruction");
        for step in &sample.steps {
            let out = decode_step(&mut tape, &vars, u, &contexts, &step.candidates)?;
            if argmax_index(tape.value(out.scores).data()) == step.target {
                correct += 1;
            }
            total += 1;
            if step.target > 0 {
                u = advance_state(
                    &mut tape,
                    &vars,
                    u,
                    out.attended,
                    out.candidate_features[step.target - 1],
                )?;
            }
        }
    }
    Ok(correct as f64 / total as f64)
}

/// Verify the agent's analytic gradients against central finite
/// differences through a full teacher-forced pass — encoder, attention,
/// candidate scoring, and state update all participate. Returns the
/// largest relative gradient error over the probed coordinates.
pub fn decode_gradient_check(
    world: &World,
    store: &FeatureStore,
    episodes: &[PathDatum],
    h: f64,
    seed: u64,
) -> Result<f64> {
    if episodes.is_empty() {
        return Err(Error::Validation(
            "gradient check needs at least one episode".into(),
        ));
    }
    let samples = build_samples(world, store, episodes)?;
    let vocab = samples
        .iter()
        .flat_map(|s| s.tokens.iter())
        .max()
        .map(|&t| t as usize + 1)
        .unwrap_or(1);
    let mut init_rng = rng_for(seed, &[tag::GRAD_CHECK]);
    let params = AgentParams::init(&mut init_rng, vocab, store.dim());
    let batch: Vec<&EpisodeSample> = samples.iter().collect();
    let model = |set: &ParamSet| -> Result<(f64, ParamSet)> {
        let p = AgentParams::from_param_set(set)?;
        batch_loss_and_grads(&p, &batch)
    };
    grad_check(model, &params.to_param_set(), h, mix(seed, &[tag::GRAD_CHECK]))
}
