//! Synthetic step-by-step instructions.
//!
//! The vocabulary is fixed and documented: PAD = 0 and EOS = 1 are
//! reserved, direction tokens occupy 2..=6 (STRAIGHT, LEFT, RIGHT, UP,
//! DOWN), and room-type tokens start at 7 with three synonyms per type,
//! so synonym `s` of type `t` is `7 + 3·t + s`.
//!
//! An instruction describes a path one step at a time: a direction token
//! derived from geometry, then a room-type token for the step's
//! destination room, with the synonym chosen at random. Token dropout and
//! insertion model noisy phrasing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_for, tag};
use crate::worldgen::World;

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const STRAIGHT: u32 = 2;
pub const LEFT: u32 = 3;
pub const RIGHT: u32 = 4;
pub const UP: u32 = 5;
pub const DOWN: u32 = 6;
pub const FIRST_ROOM_TOKEN: u32 = 7;
pub const SYNONYMS_PER_TYPE: usize = 3;

/// Total vocabulary size for a world with `room_types` room types.
pub fn vocab_size(room_types: usize) -> usize {
    FIRST_ROOM_TOKEN as usize + room_types * SYNONYMS_PER_TYPE
}

/// Token id of synonym `synonym` for room type `room_type`.
pub fn room_token(room_type: usize, synonym: usize) -> u32 {
    FIRST_ROOM_TOKEN + (room_type * SYNONYMS_PER_TYPE + synonym) as u32
}

/// Debug name of a token.
pub fn token_name(token: u32) -> String {
    match token {
        PAD => "<pad>".into(),
        EOS => "<eos>".into(),
        STRAIGHT => "straight".into(),
        LEFT => "left".into(),
        RIGHT => "right".into(),
        UP => "up".into(),
        DOWN => "down".into(),
        other => {
            let idx = (other - FIRST_ROOM_TOKEN) as usize;
            format!(
                "room{}_syn{}",
                idx / SYNONYMS_PER_TYPE,
                idx % SYNONYMS_PER_TYPE
            )
        }
    }
}

/// Phrasing-variation controls for instruction rendering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InstructionNoise {
    /// Probability of dropping each emitted token.
    pub drop_rate: f64,
    /// Probability of inserting a random content token after each
    /// position.
    pub insert_rate: f64,
    /// How many of the three synonyms per room type are actually used
    /// (1..=3); 1 makes rendering independent of the seed when the noise
    /// rates are zero.
    pub synonyms_used: usize,
}

impl Default for InstructionNoise {
    fn default() -> Self {
        InstructionNoise {
            drop_rate: 0.0,
            insert_rate: 0.0,
            synonyms_used: SYNONYMS_PER_TYPE,
        }
    }
}

impl InstructionNoise {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.drop_rate) || !(0.0..1.0).contains(&self.insert_rate) {
            return Err(Error::Validation(format!(
                "noise rates must lie in [0,1), got drop {} insert {}",
                self.drop_rate, self.insert_rate
            )));
        }
        if !(1..=SYNONYMS_PER_TYPE).contains(&self.synonyms_used) {
            return Err(Error::Validation(format!(
                "synonyms_used must lie in 1..={SYNONYMS_PER_TYPE}, got {}",
                self.synonyms_used
            )));
        }
        Ok(())
    }
}

/// Direction token for one step.
///
/// A vertical displacement beyond ±0.5 m becomes UP/DOWN. Otherwise the
/// signed angle between the previous horizontal heading and the step
/// direction decides: within ±45° STRAIGHT, counterclockwise LEFT,
/// clockwise RIGHT. The first step of a path has no previous heading and
/// is STRAIGHT.
pub fn direction_token(prev_heading: Option<[f64; 2]>, delta: [f64; 3]) -> u32 {
    if delta[2] > 0.5 {
        return UP;
    }
    if delta[2] < -0.5 {
        return DOWN;
    }
    let Some(prev) = prev_heading else {
        return STRAIGHT;
    };
    let cross = prev[0] * delta[1] - prev[1] * delta[0];
    let dot = prev[0] * delta[0] + prev[1] * delta[1];
    let angle = cross.atan2(dot);
    if angle.abs() <= std::f64::consts::FRAC_PI_4 {
        STRAIGHT
    } else if angle > 0.0 {
        LEFT
    } else {
        RIGHT
    }
}

const MIN_HEADING_NORM: f64 = 0.1;

/// Render a path in `env_id` of `world` into a token sequence.
///
/// Each step emits its [`direction_token`] and a room-type token for the
/// destination room. Dropout and insertion are applied afterwards; the
/// result is guaranteed nonempty and deterministic in `seed`.
pub fn render_instruction(
    world: &World,
    env_id: &str,
    path: &[String],
    noise: &InstructionNoise,
    seed: u64,
) -> Result<Vec<u32>> {
    noise.validate()?;
    let env = world.env(env_id)?;
    if path.len() < 2 {
        return Err(Error::Validation(format!(
            "path must have at least two viewpoints, got {}",
            path.len()
        )));
    }
    let env_index = world.env_index(env_id)? as u64;
    let mut rng = rng_for(seed, &[tag::INSTRUCTION, env_index]);

    let mut tokens = Vec::with_capacity(2 * (path.len() - 1));
    let mut heading: Option<[f64; 2]> = None;
    for pair in path.windows(2) {
        let from = env.graph().position_of(&pair[0])?;
        let to = env.graph().position_of(&pair[1])?;
        let delta = [to[0] - from[0], to[1] - from[1], to[2] - from[2]];
        tokens.push(direction_token(heading, delta));
        let horizontal = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
        if horizontal > MIN_HEADING_NORM {
            heading = Some([delta[0] / horizontal, delta[1] / horizontal]);
        }
        let room_type = env.room_type_of(&pair[1])?;
        let synonym = rng.gen_range(0..noise.synonyms_used);
        tokens.push(room_token(room_type, synonym));
    }

    // Dropout then insertion; keep a nonempty guarantee.
    let room_types = world.spec.room_types;
    let mut noisy = Vec::with_capacity(tokens.len());
    for &t in &tokens {
        if noise.drop_rate > 0.0 && rng.gen::<f64>() < noise.drop_rate {
            continue;
        }
        noisy.push(t);
        if noise.insert_rate > 0.0 && rng.gen::<f64>() < noise.insert_rate {
            noisy.push(random_content_token(&mut rng, room_types, noise.synonyms_used));
        }
    }
    if noisy.is_empty() {
        noisy.push(tokens[0]);
    }
    Ok(noisy)
}

fn random_content_token<R: Rng>(rng: &mut R, room_types: usize, synonyms_used: usize) -> u32 {
    // Directions plus the used synonyms of every room type.
    let choices = 5 + room_types * synonyms_used;
    let pick = rng.gen_range(0..choices);
    if pick < 5 {
        STRAIGHT + pick as u32
    } else {
        let rest = pick - 5;
        room_token(rest / synonyms_used, rest % synonyms_used)
    }
}
