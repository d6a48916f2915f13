//! Stochastic gradient descent with global-norm clipping, plus a
//! finite-difference gradient checker.

use rand::Rng;

use crate::error::{Error, Result};
use crate::neuralcore::params::ParamSet;
use crate::rng::{rng_for, tag};

/// Apply one SGD step in place: scale the whole gradient so its global
/// L2 norm is at most `clip_norm`, then `p ← p − lr·g`.
///
/// Gradients are matched to parameters by name; a missing name is treated
/// as a zero gradient (the parameter did not participate in the loss).
pub fn sgd_step(params: &mut ParamSet, grads: &ParamSet, lr: f64, clip_norm: f64) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Validation(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let mut norm_sq = 0.0;
    for (name, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::Training {
                stage: "sgd_step".into(),
                msg: format!("non-finite gradient for parameter {name:?}"),
            });
        }
        norm_sq += g.frobenius_norm_sq();
    }
    let norm = norm_sq.sqrt();
    let scale = if clip_norm.is_finite() && norm > clip_norm {
        clip_norm / norm
    } else {
        1.0
    };
    for (name, g) in grads.iter() {
        let p = params.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(Error::Validation(format!(
                "gradient for {name:?} has shape {:?}, parameter has {:?}",
                g.shape(),
                p.shape()
            )));
        }
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= lr * scale * gv;
        }
    }
    Ok(())
}

/// Verify analytic gradients against central finite differences.
///
/// `model` maps parameters to `(loss, gradients)`. A random subset of at
/// least `MIN_COORDS` scalar coordinates (or every coordinate, if there
/// are fewer) is perturbed by ±`h`; the return value is the maximum
/// relative error `|fd − analytic| / max(|fd|, |analytic|, 1e-8)`.
pub fn grad_check<F>(model: F, params: &ParamSet, h: f64, seed: u64) -> Result<f64>
where
    F: Fn(&ParamSet) -> Result<(f64, ParamSet)>,
{
    const MIN_COORDS: usize = 50;
    if h <= 0.0 {
        return Err(Error::Validation(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let (_, analytic) = model(params)?;

    // Flat index space over all parameters, in set order.
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let sizes: Vec<usize> = names.iter().map(|n| params.get(n).unwrap().len()).collect();
    let total: usize = sizes.iter().sum();
    if total == 0 {
        return Err(Error::Validation("no parameters to check".into()));
    }

    let mut rng = rng_for(seed, &[tag::GRAD_CHECK]);
    let mut coords: Vec<usize> = if total <= MIN_COORDS {
        (0..total).collect()
    } else {
        let mut picked: Vec<usize> = Vec::with_capacity(MIN_COORDS);
        while picked.len() < MIN_COORDS {
            let c = rng.gen_range(0..total);
            if !picked.contains(&c) {
                picked.push(c);
            }
        }
        picked
    };
    coords.sort_unstable();

    let mut max_rel = 0.0f64;
    for flat in coords {
        // Locate (parameter, offset) for this flat coordinate.
        let mut rest = flat;
        let mut which = 0;
        while rest >= sizes[which] {
            rest -= sizes[which];
            which += 1;
        }
        let name = &names[which];

        let loss_at = |delta: f64| -> Result<f64> {
            let mut shifted = params.clone();
            shifted.get_mut(name)?.data_mut()[rest] += delta;
            Ok(model(&shifted)?.0)
        };
        let fd = (loss_at(h)? - loss_at(-h)?) / (2.0 * h);
        let an = analytic.get(name)?.data()[rest];
        let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
