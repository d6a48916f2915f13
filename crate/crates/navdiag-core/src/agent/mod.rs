//! A small attentive encoder–decoder navigation agent.
//!
//! The encoder folds an instruction's tokens into hidden states with a
//! simple tanh recurrence. Each decoding step attends over those states,
//! scores every outgoing edge of the current viewpoint — represented by
//! the visual features of the view facing that neighbor plus a relative
//! direction encoding — alongside a learned STOP action, and advances a
//! recurrent state along the chosen edge.
//!
//! One taped implementation serves both training (teacher forcing with
//! cross-entropy on the ground-truth action) and greedy rollout, so the
//! two modes can never drift apart numerically.

pub mod training;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurize::FeatureStore;
use crate::neuralcore::{checkpoint, ParamSet, Tape, Tensor, Var};
use crate::worldgen::{Direction, Environment, PathDatum, World};

pub use training::{
    batch_loss_and_grads, build_samples, decode_gradient_check, teacher_forced_accuracy,
    train_imitation, AgentHyper, EpisodeSample, StepSample, TrainedAgent,
};

/// Token embedding width.
pub const EMB_DIM: usize = 32;
/// Encoder/decoder hidden width.
pub const HIDDEN_DIM: usize = 64;
/// Relative-direction encoding width: sin Δθ, cos Δθ, sign Δz,
/// normalized edge length.
pub const REL_DIM: usize = 4;
/// Rollouts stop unconditionally after this many steps.
pub const DEFAULT_MAX_STEPS: usize = 20;
/// Edge lengths saturate here in the relative encoding.
const MAX_ENCODED_LENGTH: f64 = 8.0;
/// Horizontal moves shorter than this (stairs) keep the prior heading.
const MIN_HEADING_NORM: f64 = 0.1;
/// Initial heading: due north.
const NORTH: [f64; 2] = [0.0, 1.0];

/// All learned weights of the agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentParams {
    /// Token embeddings, vocab × 32.
    pub emb: Tensor,
    /// Encoder input weights, 64 × 32.
    pub w_e: Tensor,
    /// Encoder recurrence weights, 64 × 64.
    pub u_e: Tensor,
    /// Encoder bias, 64 × 1.
    pub b_e: Tensor,
    /// Attention matrix, 64 × 64.
    pub w_a: Tensor,
    /// Candidate projection, 64 × (feature_dim + 4).
    pub w_f: Tensor,
    /// Context projection, 64 × 128.
    pub w_c: Tensor,
    /// State update, 64 × (128 + feature_dim).
    pub w_u: Tensor,
    /// Learned STOP pseudo-candidate, (feature_dim + 4) × 1.
    pub stop: Tensor,
}

impl AgentParams {
    /// Gaussian initialization scaled by 1/√fan_in; bias starts at zero.
    pub fn init<R: rand::Rng>(rng: &mut R, vocab_size: usize, feature_dim: usize) -> Self {
        let layer = |rng: &mut R, rows: usize, cols: usize| {
            Tensor::randn(rng, rows, cols, 1.0 / (cols as f64).sqrt())
        };
        AgentParams {
            emb: Tensor::randn(rng, vocab_size, EMB_DIM, 1.0),
            w_e: layer(rng, HIDDEN_DIM, EMB_DIM),
            u_e: layer(rng, HIDDEN_DIM, HIDDEN_DIM),
            b_e: Tensor::zeros(HIDDEN_DIM, 1),
            w_a: layer(rng, HIDDEN_DIM, HIDDEN_DIM),
            w_f: layer(rng, HIDDEN_DIM, feature_dim + REL_DIM),
            w_c: layer(rng, HIDDEN_DIM, 2 * HIDDEN_DIM),
            w_u: layer(rng, HIDDEN_DIM, 2 * HIDDEN_DIM + feature_dim),
            stop: Tensor::randn(rng, feature_dim + REL_DIM, 1, 1.0),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.emb.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_f.cols() - REL_DIM
    }

    pub fn validate(&self) -> Result<()> {
        let feat = self.feature_dim();
        let expect = [
            ("emb", self.emb.shape(), (self.emb.rows(), EMB_DIM)),
            ("w_e", self.w_e.shape(), (HIDDEN_DIM, EMB_DIM)),
            ("u_e", self.u_e.shape(), (HIDDEN_DIM, HIDDEN_DIM)),
            ("b_e", self.b_e.shape(), (HIDDEN_DIM, 1)),
            ("w_a", self.w_a.shape(), (HIDDEN_DIM, HIDDEN_DIM)),
            ("w_f", self.w_f.shape(), (HIDDEN_DIM, feat + REL_DIM)),
            ("w_c", self.w_c.shape(), (HIDDEN_DIM, 2 * HIDDEN_DIM)),
            ("w_u", self.w_u.shape(), (HIDDEN_DIM, 2 * HIDDEN_DIM + feat)),
            ("stop", self.stop.shape(), (feat + REL_DIM, 1)),
        ];
        for (name, got, want) in expect {
            if got != want {
                return Err(Error::Validation(format!(
                    "agent parameter {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        for (name, t) in self.named() {
            if !t.is_finite() {
                return Err(Error::Validation(format!(
                    "agent parameter {name} contains non-finite values"
                )));
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("emb", &self.emb),
            ("w_e", &self.w_e),
            ("u_e", &self.u_e),
            ("b_e", &self.b_e),
            ("w_a", &self.w_a),
            ("w_f", &self.w_f),
            ("w_c", &self.w_c),
            ("w_u", &self.w_u),
            ("stop", &self.stop),
        ]
    }

    pub fn to_param_set(&self) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, t) in self.named() {
            set.insert(name, t.clone()).expect("unique fixed names");
        }
        set
    }

    pub fn from_param_set(set: &ParamSet) -> Result<Self> {
        let params = AgentParams {
            emb: set.get("emb")?.clone(),
            w_e: set.get("w_e")?.clone(),
            u_e: set.get("u_e")?.clone(),
            b_e: set.get("b_e")?.clone(),
            w_a: set.get("w_a")?.clone(),
            w_f: set.get("w_f")?.clone(),
            w_c: set.get("w_c")?.clone(),
            w_u: set.get("w_u")?.clone(),
            stop: set.get("stop")?.clone(),
        };
        params.validate()?;
        Ok(params)
    }

    /// Write a binary checkpoint.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        checkpoint::save(&self.to_param_set(), path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_param_set(&checkpoint::load(path)?)
    }
}

/// The parameters recorded as tape leaves for one forward/backward pass.
pub struct AgentVars {
    pub emb: Var,
    pub w_e: Var,
    pub u_e: Var,
    pub b_e: Var,
    pub w_a: Var,
    pub w_f: Var,
    pub w_c: Var,
    pub w_u: Var,
    pub stop: Var,
}

impl AgentVars {
    pub fn record(tape: &mut Tape, params: &AgentParams) -> Self {
        AgentVars {
            emb: tape.leaf(params.emb.clone()),
            w_e: tape.leaf(params.w_e.clone()),
            u_e: tape.leaf(params.u_e.clone()),
            b_e: tape.leaf(params.b_e.clone()),
            w_a: tape.leaf(params.w_a.clone()),
            w_f: tape.leaf(params.w_f.clone()),
            w_c: tape.leaf(params.w_c.clone()),
            w_u: tape.leaf(params.w_u.clone()),
            stop: tape.leaf(params.stop.clone()),
        }
    }

    /// Accumulated gradients after a backward pass, named like the params.
    pub fn grads(&self, tape: &Tape) -> ParamSet {
        let mut set = ParamSet::new();
        for (name, var) in [
            ("emb", self.emb),
            ("w_e", self.w_e),
            ("u_e", self.u_e),
            ("b_e", self.b_e),
            ("w_a", self.w_a),
            ("w_f", self.w_f),
            ("w_c", self.w_c),
            ("w_u", self.w_u),
            ("stop", self.stop),
        ] {
            set.insert(name, tape.grad_or_zeros(var))
                .expect("unique fixed names");
        }
        set
    }
}

/// Encode instruction tokens into per-token hidden states:
/// `h_i = tanh(W_e·emb(t_i) + U_e·h_{i−1} + b_e)`, `h_0 = 0`.
pub fn encode_instruction(
    tape: &mut Tape,
    vars: &AgentVars,
    params: &AgentParams,
    tokens: &[u32],
) -> Result<Vec<Var>> {
    if tokens.is_empty() {
        return Err(Error::Validation("cannot encode an empty instruction".into()));
    }
    let vocab = params.vocab_size() as u32;
    let mut states = Vec::with_capacity(tokens.len());
    let mut prev: Option<Var> = None;
    for &t in tokens {
        if t >= vocab {
            return Err(Error::Validation(format!(
                "token {t} is outside the vocabulary of size {vocab}"
            )));
        }
        let e = tape.embed(vars.emb, t as usize)?;
        let mut pre = tape.matmul(vars.w_e, e)?;
        if let Some(h) = prev {
            let rec = tape.matmul(vars.u_e, h)?;
            pre = tape.add(pre, rec)?;
        }
        let pre = tape.add(pre, vars.b_e)?;
        let h = tape.tanh(pre);
        states.push(h);
        prev = Some(h);
    }
    Ok(states)
}

/// One outgoing edge of the current viewpoint, as the decoder sees it.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Node index of the neighbor within the environment graph.
    pub to: usize,
    /// Features of the view facing the neighbor.
    pub features: Vec<f64>,
    /// Relative direction: sin Δθ, cos Δθ, sign Δz, min(len, 8)/8.
    pub rel: [f64; 4],
}

/// Heading after traversing `delta`, or the old heading for a move with
/// almost no horizontal component (stairs).
pub fn next_heading(heading: [f64; 2], delta: [f64; 3]) -> [f64; 2] {
    let h = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
    if h > MIN_HEADING_NORM {
        [delta[0] / h, delta[1] / h]
    } else {
        heading
    }
}

/// Build the decoder's candidate list at a viewpoint, one per neighbor,
/// in the graph's deterministic adjacency order.
pub fn candidates_at(
    env: &Environment,
    store: &FeatureStore,
    current: usize,
    heading: [f64; 2],
) -> Result<Vec<Candidate>> {
    let graph = env.graph();
    let from = graph.position(current);
    let vp_id = graph.id(current);
    let mut out = Vec::with_capacity(graph.neighbors(current).len());
    for &(to, length) in graph.neighbors(current) {
        let pos = graph.position(to);
        let delta = [pos[0] - from[0], pos[1] - from[1], pos[2] - from[2]];
        let view = Direction::from_delta(delta[0], delta[1]);
        let features = store
            .get(&env.id, vp_id, view)
            .ok_or_else(|| {
                Error::Lookup(format!(
                    "feature store has no entry for {}/{vp_id}/{view}",
                    env.id
                ))
            })?
            .to_vec();
        let towards = next_heading(heading, delta);
        let sin = heading[0] * towards[1] - heading[1] * towards[0];
        let cos = heading[0] * towards[0] + heading[1] * towards[1];
        let dz = if delta[2] > 0.5 {
            1.0
        } else if delta[2] < -0.5 {
            -1.0
        } else {
            0.0
        };
        out.push(Candidate {
            to,
            features,
            rel: [sin, cos, dz, length.min(MAX_ENCODED_LENGTH) / MAX_ENCODED_LENGTH],
        });
    }
    Ok(out)
}

/// Everything one decode step produces on the tape.
pub struct DecodeOutput {
    /// Action scores: index 0 is STOP, index j+1 is `candidates[j]`.
    pub scores: Var,
    /// The attention-weighted instruction context.
    pub attended: Var,
    /// Feature leaves per candidate, for advancing the state.
    pub candidate_features: Vec<Var>,
}

/// Score STOP plus every candidate:
/// `α = softmax(contexts·W_a·u)`, `c = Σ α_i h_i`,
/// `score_j = (W_f[f_j; dir_j]) · (W_c[u; c])`.
pub fn decode_step(
    tape: &mut Tape,
    vars: &AgentVars,
    u: Var,
    contexts: &[Var],
    candidates: &[Candidate],
) -> Result<DecodeOutput> {
    if contexts.is_empty() {
        return Err(Error::Validation("decode needs a nonempty context".into()));
    }
    let ctx = tape.concat_cols(contexts)?;
    let query = tape.matmul(vars.w_a, u)?;
    let ctx_t = tape.transpose(ctx);
    let logits = tape.matmul(ctx_t, query)?;
    let alpha = tape.softmax(logits)?;
    let attended = tape.matmul(ctx, alpha)?;

    let uc = tape.concat_rows(&[u, attended])?;
    let key = tape.matmul(vars.w_c, uc)?;

    let stop_proj = tape.matmul(vars.w_f, vars.stop)?;
    let mut scores = vec![tape.dot(stop_proj, key)?];
    let mut candidate_features = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let f = tape.leaf(Tensor::vector(&cand.features));
        let rel = tape.leaf(Tensor::vector(&cand.rel));
        let fr = tape.concat_rows(&[f, rel])?;
        let proj = tape.matmul(vars.w_f, fr)?;
        scores.push(tape.dot(proj, key)?);
        candidate_features.push(f);
    }
    let scores = tape.concat_rows(&scores)?;
    Ok(DecodeOutput {
        scores,
        attended,
        candidate_features,
    })
}

/// Advance the decoder state along a chosen candidate:
/// `u' = tanh(W_u [u; c; f_chosen])`.
pub fn advance_state(
    tape: &mut Tape,
    vars: &AgentVars,
    u: Var,
    attended: Var,
    chosen_features: Var,
) -> Result<Var> {
    let ucf = tape.concat_rows(&[u, attended, chosen_features])?;
    let pre = tape.matmul(vars.w_u, ucf)?;
    Ok(tape.tanh(pre))
}

/// Index of the largest score; ties go to the earliest, so adding a
/// constant to every score never changes the outcome.
pub fn argmax_index(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate().skip(1) {
        if v > scores[best] {
            best = i;
        }
    }
    best
}

/// What ended a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Stop,
    MaxSteps,
}

/// One action of a rollout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Stop,
    MoveTo(String),
}

/// A rolled-out navigation attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub episode_id: String,
    /// Viewpoints in visit order, starting at the episode's start.
    pub visited: Vec<String>,
    pub actions: Vec<Action>,
    pub terminated_by: TerminatedBy,
}

impl Trajectory {
    pub fn end(&self) -> &str {
        self.visited.last().expect("never empty")
    }
}

/// Greedy rollout: argmax action each step until STOP or `max_steps`.
pub fn rollout(
    params: &AgentParams,
    world: &World,
    store: &FeatureStore,
    episode: &PathDatum,
    max_steps: usize,
) -> Result<Trajectory> {
    let env = world.env(&episode.env_id)?;
    let start = episode
        .path
        .first()
        .ok_or_else(|| Error::Validation(format!("episode {:?} has an empty path", episode.id)))?;
    let mut current = env.graph().lookup(start)?;

    let mut tape = Tape::new();
    let vars = AgentVars::record(&mut tape, params);
    let contexts = encode_instruction(&mut tape, &vars, params, &episode.instruction)?;
    let mut u = *contexts.last().expect("nonempty instruction");

    let mut heading = NORTH;
    let mut visited = vec![start.clone()];
    let mut actions = Vec::new();
    let mut terminated_by = TerminatedBy::MaxSteps;
    for _ in 0..max_steps {
        let candidates = candidates_at(env, store, current, heading)?;
        let out = decode_step(&mut tape, &vars, u, &contexts, &candidates)?;
        let choice = argmax_index(tape.value(out.scores).data());
        if choice == 0 {
            actions.push(Action::Stop);
            terminated_by = TerminatedBy::Stop;
            break;
        }
        let cand = &candidates[choice - 1];
        let from = env.graph().position(current);
        let pos = env.graph().position(cand.to);
        heading = next_heading(heading, [pos[0] - from[0], pos[1] - from[1], pos[2] - from[2]]);
        u = advance_state(
            &mut tape,
            &vars,
            u,
            out.attended,
            out.candidate_features[choice - 1],
        )?;
        current = cand.to;
        let id = env.graph().id(current).to_string();
        visited.push(id.clone());
        actions.push(Action::MoveTo(id));
    }
    Ok(Trajectory {
        episode_id: episode.id.clone(),
        visited,
        actions,
        terminated_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::Featurizer;
    use crate::rng::rng_for;
    use crate::worldgen::{
        generate_world, instruction, sample_episodes, InstructionNoise, WorldSpec,
    };

    /// One environment with a known shape: v1 sits 4 m north of v0 and
    /// v2 sits 3 m straight above it.
    fn geo_world() -> World {
        let s = [0.3, 0.1, 0.05];
        let spec = WorldSpec {
            num_envs: 1,
            rooms_per_env: (1, 1),
            floors: 1,
            viewpoints_per_room: (3, 3),
            semantic_classes: 3,
            room_types: 1,
            style_dim: 2,
            lowlevel_dim: 4,
            env_style_w: 0.0,
            region_style_w: 0.0,
            appearance_noise_sd: 0.0,
            view_semantic_jitter: 0.0,
            neighbor_context_w: 0.0,
            seed: 0,
        };
        let w_sem = serde_json::json!({"rows": 4, "cols": 3, "data": [
            0.4, -0.2, 0.1, 0.05, 0.3, -0.15, -0.3, 0.2, 0.25, 0.1, -0.1, 0.2,
        ]});
        let w_style = serde_json::json!({"rows": 4, "cols": 2, "data": vec![0.0; 8]});
        let value = serde_json::json!({
            "schema_version": 1,
            "spec": spec,
            "envs": [{
                "id": "env0",
                "viewpoints": [
                    {"id": "v0", "x": 0.0, "y": 0.0, "z": 0.0, "room_id": 0},
                    {"id": "v1", "x": 0.0, "y": 4.0, "z": 0.0, "room_id": 0},
                    {"id": "v2", "x": 0.0, "y": 0.0, "z": 3.0, "room_id": 0},
                ],
                "edges": [["v0", "v1"], ["v0", "v2"]],
                "rooms": [{
                    "room_id": 0,
                    "room_type": 0,
                    "floor": 0,
                    "region_style_vec": [0.0, 0.0],
                    "coverage": 0.45,
                }],
                "env_style_vec": [0.0, 0.0],
                "semantics": {
                    "v0": [s, s, s, s],
                    "v1": [s, s, s, s],
                    "v2": [s, s, s, s],
                },
            }],
            "global_mixing": {"w_sem": w_sem, "w_env": w_style, "w_reg": w_style},
        });
        serde_json::from_value(value).unwrap()
    }

    fn gtseg_store(world: &World) -> FeatureStore {
        FeatureStore::build(world, &Featurizer::gtseg(world)).unwrap()
    }

    fn agent_world() -> World {
        generate_world(&WorldSpec {
            num_envs: 1,
            rooms_per_env: (4, 4),
            floors: 1,
            viewpoints_per_room: (2, 2),
            semantic_classes: 6,
            room_types: 3,
            style_dim: 4,
            lowlevel_dim: 16,
            seed: 7701,
            ..WorldSpec::default()
        })
        .unwrap()
    }

    fn zero_params(vocab: usize, feat: usize) -> AgentParams {
        AgentParams {
            emb: Tensor::zeros(vocab, EMB_DIM),
            w_e: Tensor::zeros(HIDDEN_DIM, EMB_DIM),
            u_e: Tensor::zeros(HIDDEN_DIM, HIDDEN_DIM),
            b_e: Tensor::zeros(HIDDEN_DIM, 1),
            w_a: Tensor::zeros(HIDDEN_DIM, HIDDEN_DIM),
            w_f: Tensor::zeros(HIDDEN_DIM, feat + REL_DIM),
            w_c: Tensor::zeros(HIDDEN_DIM, 2 * HIDDEN_DIM),
            w_u: Tensor::zeros(HIDDEN_DIM, 2 * HIDDEN_DIM + feat),
            stop: Tensor::zeros(feat + REL_DIM, 1),
        }
    }

    // Plain-loop linear algebra, independent of Tensor/Tape internals.
    fn mat_vec(m: &Tensor, v: &[f64]) -> Vec<f64> {
        assert_eq!(m.cols(), v.len());
        (0..m.rows())
            .map(|r| (0..m.cols()).map(|c| m.get(r, c) * v[c]).sum())
            .collect()
    }

    fn dot_vec(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    fn softmax_ref(v: &[f64]) -> Vec<f64> {
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.iter().map(|e| e / z).collect()
    }

    fn encode_ref(params: &AgentParams, tokens: &[u32]) -> Vec<Vec<f64>> {
        let mut states = Vec::new();
        let mut prev = vec![0.0; HIDDEN_DIM];
        for &t in tokens {
            let e: Vec<f64> = (0..EMB_DIM).map(|j| params.emb.get(t as usize, j)).collect();
            let pre = mat_vec(&params.w_e, &e);
            let rec = mat_vec(&params.u_e, &prev);
            let h: Vec<f64> = (0..HIDDEN_DIM)
                .map(|i| (pre[i] + rec[i] + params.b_e.get(i, 0)).tanh())
                .collect();
            states.push(h.clone());
            prev = h;
        }
        states
    }

    fn scores_ref(params: &AgentParams, states: &[Vec<f64>], candidates: &[Candidate]) -> Vec<f64> {
        let u = states.last().unwrap();
        let q = mat_vec(&params.w_a, u);
        let logits: Vec<f64> = states.iter().map(|h| dot_vec(h, &q)).collect();
        let alpha = softmax_ref(&logits);
        let mut c = vec![0.0; HIDDEN_DIM];
        for (a, h) in alpha.iter().zip(states) {
            for i in 0..HIDDEN_DIM {
                c[i] += a * h[i];
            }
        }
        let uc: Vec<f64> = u.iter().chain(&c).cloned().collect();
        let key = mat_vec(&params.w_c, &uc);
        let stop_in: Vec<f64> = params.stop.data().to_vec();
        let mut scores = vec![dot_vec(&mat_vec(&params.w_f, &stop_in), &key)];
        for cand in candidates {
            let fr: Vec<f64> = cand.features.iter().chain(&cand.rel).cloned().collect();
            scores.push(dot_vec(&mat_vec(&params.w_f, &fr), &key));
        }
        scores
    }

    fn test_candidates(feat: usize) -> Vec<Candidate> {
        vec![
            Candidate {
                to: 1,
                features: vec![0.2; feat],
                rel: [0.0, 1.0, 0.0, 0.5],
            },
            Candidate {
                to: 2,
                features: (0..feat).map(|i| -0.1 + 0.05 * i as f64).collect(),
                rel: [1.0, 0.0, 0.0, 0.25],
            },
        ]
    }

    #[test]
    fn encoder_matches_hand_computation_for_single_token() {
        let mut rng = rng_for(31, &[1]);
        let params = AgentParams::init(&mut rng, 10, 3);
        let mut tape = Tape::new();
        let vars = AgentVars::record(&mut tape, &params);
        let states = encode_instruction(&mut tape, &vars, &params, &[4]).unwrap();
        assert_eq!(states.len(), 1);
        let expected = encode_ref(&params, &[4]);
        let got = tape.value(states[0]).data();
        for (g, e) in got.iter().zip(&expected[0]) {
            assert!((g - e).abs() < 1e-12, "encoder mismatch: {g} vs {e}");
        }
    }

    #[test]
    fn full_decode_scores_match_independent_recomputation() {
        let mut rng = rng_for(99, &[1]);
        let params = AgentParams::init(&mut rng, 16, 5);
        let tokens = [2u32, 7, 3, 9];
        let candidates = test_candidates(5);

        let mut tape = Tape::new();
        let vars = AgentVars::record(&mut tape, &params);
        let contexts = encode_instruction(&mut tape, &vars, &params, &tokens).unwrap();
        let u = *contexts.last().unwrap();
        let out = decode_step(&mut tape, &vars, u, &contexts, &candidates).unwrap();
        let got = tape.value(out.scores).data().to_vec();

        let expected = scores_ref(&params, &encode_ref(&params, &tokens), &candidates);
        assert_eq!(got.len(), 3);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-12, "score mismatch: {g} vs {e}");
        }
    }

    #[test]
    fn zero_parameters_give_zero_states_and_uniform_scores() {
        let params = zero_params(10, 3);
        let mut tape = Tape::new();
        let vars = AgentVars::record(&mut tape, &params);
        let contexts = encode_instruction(&mut tape, &vars, &params, &[2, 7, 1]).unwrap();
        assert_eq!(contexts.len(), 3);
        for &h in &contexts {
            assert!(tape.value(h).data().iter().all(|&x| x == 0.0));
        }
        let u = *contexts.last().unwrap();
        let out = decode_step(&mut tape, &vars, u, &contexts, &test_candidates(3)).unwrap();
        let scores = tape.value(out.scores).data();
        assert_eq!(scores, &[0.0, 0.0, 0.0]);
        // Uniform scores: cross-entropy is ln(3) whatever the target.
        let ce = tape.cross_entropy(out.scores, 1).unwrap();
        assert!((tape.value(ce).scalar_value() - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn encoder_rejects_out_of_vocabulary_tokens_and_empty_input() {
        let params = zero_params(5, 3);
        let mut tape = Tape::new();
        let vars = AgentVars::record(&mut tape, &params);
        assert!(encode_instruction(&mut tape, &vars, &params, &[5]).is_err());
        assert!(encode_instruction(&mut tape, &vars, &params, &[]).is_err());
    }

    #[test]
    fn candidates_encode_relative_geometry() {
        let world = geo_world();
        let store = gtseg_store(&world);
        let env = world.env("env0").unwrap();
        let v0 = env.graph().lookup("v0").unwrap();

        // Facing north: v1 is straight ahead, v2 is a climb.
        let cands = candidates_at(env, &store, v0, NORTH).unwrap();
        assert_eq!(cands.len(), 2);
        let north = cands
            .iter()
            .find(|c| env.graph().id(c.to) == "v1")
            .unwrap();
        assert!((north.rel[0] - 0.0).abs() < 1e-12);
        assert!((north.rel[1] - 1.0).abs() < 1e-12);
        assert_eq!(north.rel[2], 0.0);
        assert!((north.rel[3] - 0.5).abs() < 1e-12, "4 m of 8 m cap");
        let up = cands
            .iter()
            .find(|c| env.graph().id(c.to) == "v2")
            .unwrap();
        assert!((up.rel[0] - 0.0).abs() < 1e-12, "vertical move keeps heading");
        assert!((up.rel[1] - 1.0).abs() < 1e-12);
        assert_eq!(up.rel[2], 1.0);
        assert!((up.rel[3] - 3.0 / 8.0).abs() < 1e-12);
        // The features are the stored view facing the neighbor.
        assert_eq!(
            north.features,
            store.get("env0", "v0", Direction::North).unwrap().to_vec()
        );

        // Facing east, the move to v1 is a left turn: positive sine.
        let cands = candidates_at(env, &store, v0, [1.0, 0.0]).unwrap();
        let north = cands
            .iter()
            .find(|c| env.graph().id(c.to) == "v1")
            .unwrap();
        assert!((north.rel[0] - 1.0).abs() < 1e-12);
        assert!((north.rel[1] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn candidate_geometry_invariants_hold_in_generated_worlds() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let env = &world.envs[0];
        let graph = env.graph();
        for v in 0..graph.node_count() {
            let cands = candidates_at(env, &store, v, NORTH).unwrap();
            let expected: Vec<usize> = graph.neighbors(v).iter().map(|&(to, _)| to).collect();
            let got: Vec<usize> = cands.iter().map(|c| c.to).collect();
            assert_eq!(got, expected, "one candidate per neighbor, in order");
            for c in &cands {
                let unit = c.rel[0] * c.rel[0] + c.rel[1] * c.rel[1];
                assert!((unit - 1.0).abs() < 1e-12, "sin/cos must stay on the unit circle");
                assert!(c.rel[3] > 0.0 && c.rel[3] <= 1.0);
                assert!([-1.0, 0.0, 1.0].contains(&c.rel[2]));
            }
        }
    }

    #[test]
    fn zero_parameter_agent_stops_immediately() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let episodes =
            sample_episodes(&world, 3, (2, 4), &InstructionNoise::default(), 7702).unwrap();
        let vocab = instruction::vocab_size(world.spec.room_types);
        let params = zero_params(vocab, store.dim());
        for ep in &episodes {
            let traj = rollout(&params, &world, &store, ep, DEFAULT_MAX_STEPS).unwrap();
            assert_eq!(traj.visited, vec![ep.path[0].clone()]);
            assert_eq!(traj.actions, vec![Action::Stop]);
            assert_eq!(traj.terminated_by, TerminatedBy::Stop);
        }
    }

    #[test]
    fn rollouts_follow_graph_edges_and_respect_the_step_cap() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let episodes =
            sample_episodes(&world, 4, (2, 4), &InstructionNoise::default(), 7702).unwrap();
        let vocab = instruction::vocab_size(world.spec.room_types);
        let mut rng = rng_for(7705, &[1]);
        let params = AgentParams::init(&mut rng, vocab, store.dim());
        for ep in &episodes {
            let traj = rollout(&params, &world, &store, ep, 6).unwrap();
            assert!(traj.visited.len() <= 7);
            assert_eq!(traj.episode_id, ep.id);
            let graph = world.env(&ep.env_id).unwrap().graph();
            for hop in traj.visited.windows(2) {
                let a = graph.lookup(&hop[0]).unwrap();
                let b = graph.lookup(&hop[1]).unwrap();
                assert!(
                    graph.neighbors(a).iter().any(|&(to, _)| to == b),
                    "rollout must move along edges"
                );
            }
            match traj.terminated_by {
                TerminatedBy::Stop => assert_eq!(traj.actions.last(), Some(&Action::Stop)),
                TerminatedBy::MaxSteps => assert_eq!(traj.visited.len(), 7),
            }
        }
    }

    #[test]
    fn samples_target_the_demonstrated_action_then_stop() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let episodes =
            sample_episodes(&world, 3, (2, 4), &InstructionNoise::default(), 7702).unwrap();
        let samples = build_samples(&world, &store, &episodes).unwrap();
        for (sample, ep) in samples.iter().zip(&episodes) {
            assert_eq!(sample.steps.len(), ep.path.len());
            let graph = world.env(&ep.env_id).unwrap().graph();
            for (i, step) in sample.steps.iter().enumerate() {
                if i + 1 < ep.path.len() {
                    let chosen = &step.candidates[step.target - 1];
                    assert_eq!(graph.id(chosen.to), ep.path[i + 1]);
                } else {
                    assert_eq!(step.target, 0, "the final step teaches STOP");
                }
            }
        }
    }

    #[test]
    fn imitation_overfits_a_handful_of_episodes() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let episodes =
            sample_episodes(&world, 5, (2, 4), &InstructionNoise::default(), 7702).unwrap();
        let vocab = instruction::vocab_size(world.spec.room_types);
        let hyper = AgentHyper {
            epochs: 300,
            batch_size: 5,
            lr: 0.2,
            ..AgentHyper::default()
        };
        let trained = train_imitation(&world, &store, &episodes, &hyper, vocab, 7703).unwrap();
        assert_eq!(trained.loss_curve.len(), 300);
        let first = trained.loss_curve[0];
        let last = *trained.loss_curve.last().unwrap();
        assert!(last < first, "loss should fall: {first} -> {last}");
        assert!(last < 0.2, "expected the toy set to be memorized, loss {last}");

        let samples = build_samples(&world, &store, &episodes).unwrap();
        let acc = teacher_forced_accuracy(&trained.params, &samples).unwrap();
        assert!(acc >= 0.99, "teacher-forced accuracy {acc}");

        let mut reached = 0;
        for ep in &episodes {
            let traj = rollout(&trained.params, &world, &store, ep, hyper.max_steps).unwrap();
            let graph = world.env(&ep.env_id).unwrap().graph();
            let dist = graph.shortest_lengths_from(graph.lookup(&ep.goal).unwrap())
                [graph.lookup(traj.end()).unwrap()];
            if dist <= 3.0 {
                reached += 1;
            }
        }
        assert!(reached >= 4, "only {reached}/5 rollouts reached the goal");
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let episodes =
            sample_episodes(&world, 4, (2, 3), &InstructionNoise::default(), 7702).unwrap();
        let vocab = instruction::vocab_size(world.spec.room_types);
        let hyper = AgentHyper {
            epochs: 3,
            batch_size: 2,
            ..AgentHyper::default()
        };
        let a = train_imitation(&world, &store, &episodes, &hyper, vocab, 11).unwrap();
        let b = train_imitation(&world, &store, &episodes, &hyper, vocab, 11).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.loss_curve, b.loss_curve);
        let c = train_imitation(&world, &store, &episodes, &hyper, vocab, 12).unwrap();
        assert_ne!(a.params, c.params, "a different seed should differ");
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let world = geo_world();
        let store = gtseg_store(&world);
        let episode = PathDatum {
            id: "g0".into(),
            env_id: "env0".into(),
            path: vec!["v0".into(), "v1".into()],
            instruction: vec![2, 7],
            goal: "v1".into(),
        };
        let err = decode_gradient_check(&world, &store, &[episode], 1e-4, 5).unwrap();
        assert!(err < 1e-4, "agent gradient error {err}");
    }

    #[test]
    fn params_roundtrip_through_checkpoint_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("agent.ckpt");
        let mut rng = rng_for(17, &[1]);
        let params = AgentParams::init(&mut rng, 12, 4);
        params.save(&path).unwrap();
        let loaded = AgentParams::load(&path).unwrap();
        assert_eq!(params, loaded);
    }

    #[test]
    fn param_set_roundtrip_preserves_every_tensor() {
        let mut rng = rng_for(18, &[1]);
        let params = AgentParams::init(&mut rng, 12, 4);
        let roundtrip = AgentParams::from_param_set(&params.to_param_set()).unwrap();
        assert_eq!(params, roundtrip);
    }

    #[test]
    fn hyperparameters_are_validated() {
        assert!(AgentHyper::default().validate().is_ok());
        assert!(AgentHyper { epochs: 0, ..AgentHyper::default() }.validate().is_err());
        assert!(AgentHyper { lr: 0.0, ..AgentHyper::default() }.validate().is_err());
        assert!(AgentHyper { clip_norm: f64::NAN, ..AgentHyper::default() }
            .validate()
            .is_err());
    }

    #[test]
    fn argmax_prefers_the_earliest_on_ties_and_ignores_shifts() {
        assert_eq!(argmax_index(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax_index(&[1.0, 3.0, 3.0]), 1);
        let base = [0.4, -1.2, 2.0, 0.1];
        let shifted: Vec<f64> = base.iter().map(|x| x + 17.5).collect();
        assert_eq!(argmax_index(&base), argmax_index(&shifted));
    }

    #[test]
    fn empty_batches_and_empty_training_sets_are_rejected() {
        let world = agent_world();
        let store = gtseg_store(&world);
        let params = zero_params(10, store.dim());
        assert!(batch_loss_and_grads(&params, &[]).is_err());
        assert!(train_imitation(&world, &store, &[], &AgentHyper::default(), 10, 1).is_err());
    }

    #[test]
    fn decode_requires_a_nonempty_context() {
        let params = zero_params(5, 3);
        let mut tape = Tape::new();
        let vars = AgentVars::record(&mut tape, &params);
        let u = tape.leaf(Tensor::zeros(HIDDEN_DIM, 1));
        assert!(decode_step(&mut tape, &vars, u, &[], &test_candidates(3)).is_err());
    }
}
