//! Three-layer perceptron with sigmoid outputs.
//!
//! The architecture is fixed: two ReLU hidden layers of 512 and 256 units,
//! then a sigmoid output layer. Dropout (inverted scaling) is applied after
//! each hidden activation during training only.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neuralcore::params::ParamSet;
use crate::neuralcore::tape::{Tape, Var};
use crate::neuralcore::tensor::Tensor;
use crate::rng::{rng_for, tag};

pub const HIDDEN1: usize = 512;
pub const HIDDEN2: usize = 256;

/// Weights and biases of the three fully-connected layers.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpParams {
    pub a1: Tensor,
    pub b1: Tensor,
    pub a2: Tensor,
    pub b2: Tensor,
    pub a3: Tensor,
    pub b3: Tensor,
}

impl MlpParams {
    /// Gaussian initialization scaled by 1/√fan_in; biases start at zero.
    pub fn init<R: Rng>(rng: &mut R, input_dim: usize, out_dim: usize) -> Self {
        let layer = |rng: &mut R, rows: usize, cols: usize| {
            Tensor::randn(rng, rows, cols, 1.0 / (cols as f64).sqrt())
        };
        MlpParams {
            a1: layer(rng, HIDDEN1, input_dim),
            b1: Tensor::zeros(HIDDEN1, 1),
            a2: layer(rng, HIDDEN2, HIDDEN1),
            b2: Tensor::zeros(HIDDEN2, 1),
            a3: layer(rng, out_dim, HIDDEN2),
            b3: Tensor::zeros(out_dim, 1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.a1.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.a3.rows()
    }

    pub fn to_param_set(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (name, t) in [
            ("a1", &self.a1),
            ("b1", &self.b1),
            ("a2", &self.a2),
            ("b2", &self.b2),
            ("a3", &self.a3),
            ("b3", &self.b3),
        ] {
            p.insert(name, t.clone()).expect("fixed distinct names");
        }
        p
    }

    pub fn from_param_set(params: &ParamSet) -> Result<Self> {
        let mlp = MlpParams {
            a1: params.get("a1")?.clone(),
            b1: params.get("b1")?.clone(),
            a2: params.get("a2")?.clone(),
            b2: params.get("b2")?.clone(),
            a3: params.get("a3")?.clone(),
            b3: params.get("b3")?.clone(),
        };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("a1", self.a1.rows() == HIDDEN1),
            ("b1", self.b1.shape() == (HIDDEN1, 1)),
            ("a2", self.a2.shape() == (HIDDEN2, HIDDEN1)),
            ("b2", self.b2.shape() == (HIDDEN2, 1)),
            ("a3", self.a3.cols() == HIDDEN2),
            ("b3", self.b3.shape() == (self.a3.rows(), 1)),
        ];
        for (name, ok) in checks {
            if !ok {
                return Err(Error::Validation(format!(
                    "mlp parameter {name} has an inconsistent shape"
                )));
            }
        }
        for (name, t) in [
            ("a1", &self.a1),
            ("b1", &self.b1),
            ("a2", &self.a2),
            ("b2", &self.b2),
            ("a3", &self.a3),
            ("b3", &self.b3),
        ] {
            if !t.is_finite() {
                return Err(Error::Validation(format!(
                    "mlp parameter {name} contains non-finite values"
                )));
            }
        }
        Ok(())
    }
}

/// Inverted-scaling dropout masks for the two hidden layers.
///
/// Entries are `1/keep` with probability `keep = 1 - rate`, else `0`, so
/// activations keep their expected value and inference needs no rescale.
pub fn dropout_masks(rate: f64, seed: u64) -> Result<(Tensor, Tensor)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Validation(format!(
            "dropout rate must be in [0,1), got {rate}"
        )));
    }
    let keep = 1.0 - rate;
    let mut rng = rng_for(seed, &[tag::DROPOUT]);
    let mut draw = |n: usize| {
        let data: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Tensor::vector(&data)
    };
    Ok((draw(HIDDEN1), draw(HIDDEN2)))
}

/// Forward pass: `y = σ(A3·relu(A2·relu(A1·f + b1) + b2) + b3)`.
///
/// When `train_mode` is set, dropout masks derived from `seed` are applied
/// after each hidden activation; inference ignores `seed` entirely.
pub fn mlp_forward(
    params: &MlpParams,
    f: &Tensor,
    dropout_rate: f64,
    train_mode: bool,
    seed: u64,
) -> Result<Tensor> {
    if f.shape() != (params.input_dim(), 1) {
        return Err(Error::Validation(format!(
            "mlp input has shape {:?}, expected {}x1",
            f.shape(),
            params.input_dim()
        )));
    }
    let masks = if train_mode {
        Some(dropout_masks(dropout_rate, seed)?)
    } else {
        None
    };
    let apply = |t: Tensor, mask: Option<&Tensor>| -> Tensor {
        match mask {
            Some(m) => {
                let data = t
                    .data()
                    .iter()
                    .zip(m.data())
                    .map(|(a, b)| a * b)
                    .collect();
                Tensor::from_vec(t.rows(), 1, data).expect("same shape")
            }
            None => t,
        }
    };
    let x1 = params.a1.matmul(f)?.add(&params.b1)?.map(|v| v.max(0.0));
    let x1 = apply(x1, masks.as_ref().map(|(m, _)| m));
    let x2 = params.a2.matmul(&x1)?.add(&params.b2)?.map(|v| v.max(0.0));
    let x2 = apply(x2, masks.as_ref().map(|(_, m)| m));
    let y = params
        .a3
        .matmul(&x2)?
        .add(&params.b3)?
        .map(crate::neuralcore::tape::sigmoid);
    Ok(y)
}

/// Tape handles for one recorded copy of the parameters.
pub struct MlpVars {
    pub a1: Var,
    pub b1: Var,
    pub a2: Var,
    pub b2: Var,
    pub a3: Var,
    pub b3: Var,
}

impl MlpVars {
    pub fn record(tape: &mut Tape, params: &MlpParams) -> Self {
        MlpVars {
            a1: tape.leaf(params.a1.clone()),
            b1: tape.leaf(params.b1.clone()),
            a2: tape.leaf(params.a2.clone()),
            b2: tape.leaf(params.b2.clone()),
            a3: tape.leaf(params.a3.clone()),
            b3: tape.leaf(params.b3.clone()),
        }
    }

    /// Read gradients back out in checkpoint order.
    pub fn grads(&self, tape: &Tape) -> ParamSet {
        let mut g = ParamSet::new();
        for (name, var) in [
            ("a1", self.a1),
            ("b1", self.b1),
            ("a2", self.a2),
            ("b2", self.b2),
            ("a3", self.a3),
            ("b3", self.b3),
        ] {
            g.insert(name, tape.grad_or_zeros(var))
                .expect("fixed distinct names");
        }
        g
    }
}

/// Recorded forward pass up to the output logits (pre-sigmoid), so callers
/// can attach either a fused BCE loss or a sigmoid node.
pub fn mlp_logits_taped(
    tape: &mut Tape,
    vars: &MlpVars,
    input: Var,
    masks: Option<&(Tensor, Tensor)>,
) -> Result<Var> {
    let h1 = tape.matmul(vars.a1, input)?;
    let h1 = tape.add(h1, vars.b1)?;
    let mut x1 = tape.relu(h1);
    if let Some((m1, _)) = masks {
        x1 = tape.mask_mul(x1, m1.clone())?;
    }
    let h2 = tape.matmul(vars.a2, x1)?;
    let h2 = tape.add(h2, vars.b2)?;
    let mut x2 = tape.relu(h2);
    if let Some((_, m2)) = masks {
        x2 = tape.mask_mul(x2, m2.clone())?;
    }
    let h3 = tape.matmul(vars.a3, x2)?;
    tape.add(h3, vars.b3)
}
