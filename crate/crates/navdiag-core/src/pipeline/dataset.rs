//! External dataset ingestion and language-distance reporting.
//!
//! Real navigation data arrives as one connectivity JSON per environment
//! (viewpoint id, 3D position, neighbor list) plus an items file of
//! episodes with natural-language instructions. Loading validates the
//! schema strictly — every error names the file, record, and field — and
//! tokenizes instructions into a deterministic dataset vocabulary so the
//! text metrics can run on integer token sequences.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::navgraph::{NavGraph, OriginalRole};
use crate::textmetrics::{self, SimilarityAggregate};

/// One viewpoint record of a connectivity file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphRecord {
    pub viewpoint_id: String,
    pub position: [f64; 3],
    pub neighbors: Vec<String>,
}

/// One episode record of an items file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemRecord {
    pub id: String,
    pub env_id: String,
    pub path: Vec<String>,
    pub instruction: String,
    pub split: OriginalRole,
}

/// A validated episode with its tokenized instruction.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: String,
    pub env_id: String,
    pub path: Vec<String>,
    pub instruction: String,
    pub split: OriginalRole,
    /// Instruction as ids into the dataset vocabulary.
    pub tokens: Vec<u32>,
}

/// Connectivity graphs plus episodes, ready for splitting and language
/// analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct ExternalDataset {
    /// Environment id (file stem) to its navigation graph.
    pub graphs: BTreeMap<String, NavGraph>,
    pub items: Vec<DatasetItem>,
    /// Word to token id, sorted so ids are deterministic.
    pub vocab: BTreeMap<String, u32>,
}

impl ExternalDataset {
    pub fn items_in_role(&self, role: OriginalRole) -> Vec<&DatasetItem> {
        self.items.iter().filter(|i| i.split == role).collect()
    }
}

/// Load connectivity graphs from `graph_dir` (one `{env}.json` each) and
/// episodes from `items_file`. An empty directory plus an empty items
/// array is a valid empty dataset.
pub fn load_external_dataset(graph_dir: &Path, items_file: &Path) -> Result<ExternalDataset> {
    let mut graphs = BTreeMap::new();
    let mut names: Vec<PathBuf> = std::fs::read_dir(graph_dir)
        .map_err(|e| Error::io(graph_dir, e))?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(graph_dir, e))?;
    names.retain(|p| p.extension().is_some_and(|e| e == "json"));
    names.sort();
    for path in names {
        let env_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::load(&path, 0, "filename", "not valid UTF-8"))?
            .to_string();
        let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let records: Vec<GraphRecord> =
            serde_json::from_reader(std::io::BufReader::new(file))
                .map_err(|e| Error::serde(&path, e))?;
        graphs.insert(env_id, graph_from_records(&path, &records)?);
    }

    let file = std::fs::File::open(items_file).map_err(|e| Error::io(items_file, e))?;
    let records: Vec<ItemRecord> = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::serde(items_file, e))?;

    let mut vocab: BTreeMap<String, u32> = BTreeMap::new();
    for record in &records {
        for word in textmetrics::tokenize(&record.instruction) {
            let next = vocab.len() as u32;
            vocab.entry(word).or_insert(next);
        }
    }
    // Entry order depends on first appearance; renumber sorted instead.
    for (i, id) in vocab.values_mut().enumerate() {
        *id = i as u32;
    }

    let mut items = Vec::with_capacity(records.len());
    let mut ids = std::collections::BTreeSet::new();
    for (idx, record) in records.into_iter().enumerate() {
        if record.id.is_empty() || !ids.insert(record.id.clone()) {
            return Err(Error::load(
                items_file,
                idx,
                "id",
                format!("empty or duplicate id {:?}", record.id),
            ));
        }
        let graph = graphs.get(&record.env_id).ok_or_else(|| {
            Error::load(
                items_file,
                idx,
                "env_id",
                format!("unknown environment {:?}", record.env_id),
            )
        })?;
        if record.path.is_empty() {
            return Err(Error::load(items_file, idx, "path", "empty path"));
        }
        for v in &record.path {
            if !graph.contains(v) {
                return Err(Error::load(
                    items_file,
                    idx,
                    "path",
                    format!("viewpoint {v:?} is not in environment {:?}", record.env_id),
                ));
            }
        }
        let tokens: Vec<u32> = textmetrics::tokenize(&record.instruction)
            .iter()
            .map(|w| vocab[w])
            .collect();
        if tokens.is_empty() {
            return Err(Error::load(
                items_file,
                idx,
                "instruction",
                "instruction has no tokens",
            ));
        }
        items.push(DatasetItem {
            id: record.id,
            env_id: record.env_id,
            path: record.path,
            instruction: record.instruction,
            split: record.split,
            tokens,
        });
    }
    Ok(ExternalDataset { graphs, items, vocab })
}

fn graph_from_records(path: &Path, records: &[GraphRecord]) -> Result<NavGraph> {
    let mut graph = NavGraph::new();
    let mut neighbor_lists: BTreeMap<&str, &[String]> = BTreeMap::new();
    for (idx, record) in records.iter().enumerate() {
        graph
            .add_node(&record.viewpoint_id, record.position)
            .map_err(|e| Error::load(path, idx, "viewpoint_id", e))?;
        neighbor_lists.insert(&record.viewpoint_id, &record.neighbors);
    }
    for (idx, record) in records.iter().enumerate() {
        for neighbor in &record.neighbors {
            if neighbor == &record.viewpoint_id {
                return Err(Error::load(
                    path,
                    idx,
                    "neighbors",
                    format!("{:?} lists itself", record.viewpoint_id),
                ));
            }
            let back = neighbor_lists.get(neighbor.as_str()).ok_or_else(|| {
                Error::load(
                    path,
                    idx,
                    "neighbors",
                    format!("unknown neighbor {neighbor:?}"),
                )
            })?;
            if !back.contains(&record.viewpoint_id) {
                return Err(Error::load(
                    path,
                    idx,
                    "neighbors",
                    format!(
                        "adjacency is asymmetric: {:?} lists {neighbor:?} but not vice versa",
                        record.viewpoint_id
                    ),
                ));
            }
            if record.viewpoint_id.as_str() < neighbor.as_str() {
                graph
                    .add_edge(&record.viewpoint_id, neighbor)
                    .map_err(|e| Error::load(path, idx, "neighbors", e))?;
            }
        }
    }
    Ok(graph)
}

/// Write a dataset back out: one connectivity JSON per environment under
/// `graph_dir` plus the items file. Inverse of [`load_external_dataset`].
pub fn save_external_dataset(
    dataset: &ExternalDataset,
    graph_dir: &Path,
    items_file: &Path,
) -> Result<()> {
    std::fs::create_dir_all(graph_dir).map_err(|e| Error::io(graph_dir, e))?;
    for (env_id, graph) in &dataset.graphs {
        let records: Vec<GraphRecord> = graph
            .ids()
            .map(|id| {
                let idx = graph.lookup(id)?;
                Ok(GraphRecord {
                    viewpoint_id: id.to_string(),
                    position: graph.position(idx),
                    neighbors: graph
                        .neighbors(idx)
                        .iter()
                        .map(|&(to, _)| graph.id(to).to_string())
                        .collect(),
                })
            })
            .collect::<Result<_>>()?;
        let path = graph_dir.join(format!("{env_id}.json"));
        write_pretty_json(&path, &records)?;
    }
    let records: Vec<ItemRecord> = dataset
        .items
        .iter()
        .map(|i| ItemRecord {
            id: i.id.clone(),
            env_id: i.env_id.clone(),
            path: i.path.clone(),
            instruction: i.instruction.clone(),
            split: i.split,
        })
        .collect();
    write_pretty_json(items_file, &records)
}

pub(crate) fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::serde(path, e))?;
    use std::io::Write;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// One validation item's language distances to the training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LangDistanceRow {
    pub id: String,
    pub category: String,
    pub dis_rouge: f64,
    pub dis_bleu: f64,
    /// Navigation success, when trajectories were evaluated.
    pub success: Option<bool>,
}

/// A tagged validation instruction to score against the training set.
pub struct LangTarget {
    pub id: String,
    pub category: String,
    pub tokens: Vec<u32>,
    pub success: Option<bool>,
}

/// Score every target instruction against the training instructions:
/// dis_rouge is the minimum ROUGE-L over the training set, dis_bleu is
/// BLEU-4 with the whole training set as references.
pub fn compute_lang_distances(
    training: &[Vec<u32>],
    targets: &[LangTarget],
) -> Result<Vec<LangDistanceRow>> {
    if training.is_empty() {
        return Err(Error::Domain(
            "language distances need a nonempty training instruction set".into(),
        ));
    }
    let index = textmetrics::RefIndex::build(training)?;
    targets
        .iter()
        .map(|t| {
            Ok(LangDistanceRow {
                id: t.id.clone(),
                category: t.category.clone(),
                dis_rouge: textmetrics::dis_rouge(&t.tokens, training, SimilarityAggregate::Min)?,
                dis_bleu: textmetrics::bleu4_indexed(&t.tokens, &index)?,
                success: t.success,
            })
        })
        .collect()
}

/// Write `lang_distance.csv` (one row per item) and `lang_hist.csv`
/// (ten equal-width bins per metric, with per-bin success when any
/// success flags are present) under `out_dir`; returns the paths.
pub fn write_lang_distance_files(rows: &[LangDistanceRow], out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let dist_path = out_dir.join("lang_distance.csv");
    let mut w = csv::Writer::from_path(&dist_path).map_err(|e| Error::serde(&dist_path, e))?;
    w.write_record(["item_id", "dis_rouge", "dis_bleu", "success"])
        .map_err(|e| Error::serde(&dist_path, e))?;
    for row in rows {
        w.write_record([
            row.id.as_str(),
            &format!("{:.4}", row.dis_rouge),
            &format!("{:.4}", row.dis_bleu),
            match row.success {
                Some(true) => "1",
                Some(false) => "0",
                None => "",
            },
        ])
        .map_err(|e| Error::serde(&dist_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&dist_path, e))?;

    let hist_path = out_dir.join("lang_hist.csv");
    let mut w = csv::Writer::from_path(&hist_path).map_err(|e| Error::serde(&hist_path, e))?;
    w.write_record(["metric", "bin_lo", "bin_hi", "count", "success_rate"])
        .map_err(|e| Error::serde(&hist_path, e))?;
    let with_success = rows.iter().any(|r| r.success.is_some());
    for (metric, pick) in [
        ("dis_rouge", &(|r: &LangDistanceRow| r.dis_rouge) as &dyn Fn(&LangDistanceRow) -> f64),
        ("dis_bleu", &|r: &LangDistanceRow| r.dis_bleu),
    ] {
        if rows.is_empty() {
            continue;
        }
        let distances: Vec<f64> = rows.iter().map(pick).collect();
        let successes: Vec<bool> = rows
            .iter()
            .map(|r| r.success.unwrap_or(false))
            .collect();
        let bins = textmetrics::distance_success_table(&distances, &successes, 10)?;
        for bin in bins {
            let sr = match bin.success_rate {
                Some(sr) if with_success => format!("{:.1}", 100.0 * sr),
                _ => String::new(),
            };
            w.write_record([
                metric,
                &format!("{:.1}", bin.lo),
                &format!("{:.1}", bin.hi),
                &bin.count.to_string(),
                &sr,
            ])
            .map_err(|e| Error::serde(&hist_path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&hist_path, e))?;
    Ok(vec![dist_path, hist_path])
}
