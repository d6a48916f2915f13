use std::collections::BTreeMap;
use std::path::Path;

use navdiag_core::agent::{build_samples, teacher_forced_accuracy, AgentParams};
use navdiag_core::featurize::FeatureStore;
use navdiag_core::navgraph::{SplitAssignment, SplitCategory};
use navdiag_core::worldgen::{PathDatum, World};

fn main() {
    let dir = std::env::args().nth(1).expect("usage: probe SEED_DIR KIND");
    let kind = std::env::args().nth(2).unwrap_or_else(|| "gtseg".into());
    let dir = Path::new(&dir).to_path_buf();
    let world = World::load(&dir.join("world.json")).unwrap();
    let eps: BTreeMap<String, Vec<PathDatum>> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("episodes.json")).unwrap()).unwrap();
    let split: SplitAssignment =
        serde_json::from_str(&std::fs::read_to_string(dir.join("split.json")).unwrap()).unwrap();
    let cat: BTreeMap<&str, SplitCategory> = split
        .split_items
        .iter()
        .map(|(id, c)| (id.as_str(), *c))
        .collect();
    let store = FeatureStore::read_csv(&dir.join(format!("features_{kind}.csv"))).unwrap();
    let params = AgentParams::load(&dir.join(format!("agent_{kind}.ckpt"))).unwrap();

    let mut by_cat: BTreeMap<SplitCategory, Vec<PathDatum>> = BTreeMap::new();
    for pool in eps.values() {
        for ep in pool {
            by_cat.entry(cat[ep.id.as_str()]).or_default().push(ep.clone());
        }
    }
    for (c, eps) in &by_cat {
        let samples = build_samples(&world, &store, eps).unwrap();
        let acc = teacher_forced_accuracy(&params, &samples).unwrap();
        let steps: usize = samples.iter().map(|s| s.steps.len()).sum();
        println!("{kind:10} {c:12} episodes={:4} steps={steps:5} tf_acc={:.3}", eps.len(), acc);
    }
}
