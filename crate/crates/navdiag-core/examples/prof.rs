use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use navdiag_core::agent::{batch_loss_and_grads, build_samples, AgentHyper, AgentParams};
use navdiag_core::featurize::{train_seg_predictor, FeatureStore, SegHyper};
use navdiag_core::navgraph::{SplitAssignment, SplitCategory};
use navdiag_core::neuralcore::{ParamSet, Tape};
use navdiag_core::worldgen::{PathDatum, World};

fn main() {
    let dir = Path::new("/tmp/bench/scale1/seed0");
    let world = World::load(&dir.join("world.json")).unwrap();
    let eps: BTreeMap<String, Vec<PathDatum>> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("episodes.json")).unwrap()).unwrap();
    let split: SplitAssignment =
        serde_json::from_str(&std::fs::read_to_string(dir.join("split.json")).unwrap()).unwrap();
    let store = FeatureStore::read_csv(&dir.join("features_gtseg.csv")).unwrap();

    let train: Vec<PathDatum> = eps
        .values()
        .flatten()
        .filter(|e| split.split_items[&e.id] == SplitCategory::Train)
        .cloned()
        .collect();
    println!("TRAIN episodes: {}", train.len());

    let t0 = Instant::now();
    let samples = build_samples(&world, &store, &train).unwrap();
    println!("build_samples: {:?}", t0.elapsed());

    let mut rng = rand::SeedableRng::seed_from_u64(7);
    let params = AgentParams::init::<rand_chacha::ChaCha8Rng>(&mut rng, 43, store.dim());
    let hyper = AgentHyper::default();

    // forward+backward over one epoch-equivalent, batched like training
    let t0 = Instant::now();
    let mut nbatches = 0;
    for chunk in samples.chunks(hyper.batch_size) {
        let refs: Vec<&navdiag_core::agent::EpisodeSample> = chunk.iter().collect();
        let _ = batch_loss_and_grads(&params, &refs).unwrap();
        nbatches += 1;
    }
    let fb = t0.elapsed();
    println!("fwd+bwd 1 epoch ({nbatches} batches): {fb:?}");

    // split forward / backward / extraction timing
    {
        use navdiag_core::agent::{encode_instruction, decode_step, advance_state, AgentVars};
        let mut t_fwd = std::time::Duration::ZERO;
        let mut t_bwd = std::time::Duration::ZERO;
        let mut t_ext = std::time::Duration::ZERO;
        for chunk in samples.chunks(hyper.batch_size) {
            let t0 = Instant::now();
            let mut tape = Tape::new();
            let vars = AgentVars::record(&mut tape, &params);
            let mut losses = Vec::new();
            for s in chunk {
                let ctx = encode_instruction(&mut tape, &vars, &params, &s.tokens).unwrap();
                let mut u = *ctx.last().unwrap();
                for step in &s.steps {
                    let out = decode_step(&mut tape, &vars, u, &ctx, &step.candidates).unwrap();
                    losses.push(tape.cross_entropy(out.scores, step.target).unwrap());
                    if step.target > 0 {
                        u = advance_state(&mut tape, &vars, u, out.attended, out.candidate_features[step.target - 1]).unwrap();
                    }
                }
            }
            let total = tape.add_many(&losses).unwrap();
            let loss = tape.scale(total, 1.0 / losses.len() as f64);
            t_fwd += t0.elapsed();
            let t0 = Instant::now();
            tape.backward(loss).unwrap();
            t_bwd += t0.elapsed();
            let t0 = Instant::now();
            let _ = vars.grads(&tape);
            t_ext += t0.elapsed();
        }
        println!("split: fwd={t_fwd:?} bwd={t_bwd:?} extract={t_ext:?}");
    }

    // forward only (tape construction + eval), same batching
    let t0 = Instant::now();
    for chunk in samples.chunks(hyper.batch_size) {
        for s in chunk {
            let mut tape = Tape::new();
            let vars = navdiag_core::agent::AgentVars::record(&mut tape, &params);
            let ctx = navdiag_core::agent::encode_instruction(&mut tape, &vars, &params, &s.tokens).unwrap();
            let mut u = *ctx.last().unwrap();
            for step in &s.steps {
                let out = navdiag_core::agent::decode_step(&mut tape, &vars, u, &ctx, &step.candidates).unwrap();
                if step.target > 0 {
                    u = navdiag_core::agent::advance_state(
                        &mut tape, &vars, u, out.attended, out.candidate_features[step.target - 1],
                    ).unwrap();
                }
            }
        }
    }
    println!("forward-only 1 epoch: {:?}", t0.elapsed());

    // seg trainer, 5 epochs
    let train_envs: Vec<String> = (0..5).map(|i| format!("env{i}")).collect();
    let held = vec!["env5".to_string()];
    let hyper = SegHyper { epochs: 5, ..SegHyper::default() };
    let t0 = Instant::now();
    let p = train_seg_predictor(&world, &train_envs, &held, &hyper, 7).unwrap();
    println!("seg 5 epochs: {:?} (heldout bce {:.4})", t0.elapsed(), p.heldout_bce);
    let _ = ParamSet::new();
}
