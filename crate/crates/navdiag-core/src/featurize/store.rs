//! On-disk tables for features and detections.
//!
//! Both stores key rows by (environment, viewpoint, direction) and
//! round-trip through CSV with full float precision, so any pipeline
//! stage can be re-run from its serialized inputs and reproduce its
//! outputs exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::featurize::{Detection, Featurizer};
use crate::worldgen::{Direction, World};

/// A view's address within a world.
pub type ViewKey = (String, String, Direction);

/// Feature vectors for a set of views, all of one representation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    name: String,
    dim: usize,
    map: BTreeMap<ViewKey, Vec<f64>>,
}

impl FeatureStore {
    pub fn new(name: &str, dim: usize) -> Result<Self> {
        if name.is_empty() || name.contains(|c: char| c == ',' || c.is_whitespace()) {
            return Err(Error::Validation(format!(
                "feature store name {name:?} must be nonempty without commas or spaces"
            )));
        }
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be positive".into()));
        }
        Ok(FeatureStore {
            name: name.to_string(),
            dim,
            map: BTreeMap::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn insert(
        &mut self,
        env_id: &str,
        viewpoint: &str,
        direction: Direction,
        features: Vec<f64>,
    ) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::Validation(format!(
                "feature vector for {env_id}/{viewpoint}/{direction} has {} components, \
                 store expects {}",
                features.len(),
                self.dim
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "feature vector for {env_id}/{viewpoint}/{direction} is not finite"
            )));
        }
        self.map
            .insert((env_id.to_string(), viewpoint.to_string(), direction), features);
        Ok(())
    }

    pub fn get(&self, env_id: &str, viewpoint: &str, direction: Direction) -> Option<&[f64]> {
        self.map
            .get(&(env_id.to_string(), viewpoint.to_string(), direction))
            .map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ViewKey, &Vec<f64>)> {
        self.map.iter()
    }

    /// Featurize every view of every environment.
    pub fn build(world: &World, featurizer: &Featurizer) -> Result<FeatureStore> {
        let mut store = FeatureStore::new(featurizer.kind().name(), featurizer.output_dim())?;
        for env in &world.envs {
            for vp in env.viewpoint_ids() {
                for dir in Direction::ALL {
                    let f = featurizer.featurize(world, &env.id, vp, dir)?;
                    store.insert(&env.id, vp, dir, f)?;
                }
            }
        }
        Ok(store)
    }

    /// Columns: env_id, viewpoint_id, direction, then `{name}_{i}` per
    /// component. Floats print in shortest round-trip form.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
        let mut header = vec![
            "env_id".to_string(),
            "viewpoint_id".to_string(),
            "direction".to_string(),
        ];
        header.extend((0..self.dim).map(|i| format!("{}_{i}", self.name)));
        w.write_record(&header).map_err(|e| Error::serde(path, e))?;
        for ((env, vp, dir), features) in &self.map {
            let mut row = vec![env.clone(), vp.clone(), dir.short().to_string()];
            row.extend(features.iter().map(|v| format!("{v}")));
            w.write_record(&row).map_err(|e| Error::serde(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<FeatureStore> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::serde(path, e))?;
        let headers = r.headers().map_err(|e| Error::serde(path, e))?.clone();
        if headers.len() < 4
            || &headers[0] != "env_id"
            || &headers[1] != "viewpoint_id"
            || &headers[2] != "direction"
        {
            return Err(Error::load(
                path,
                0,
                "header",
                "expected env_id, viewpoint_id, direction, then feature columns",
            ));
        }
        let dim = headers.len() - 3;
        let name = headers[3]
            .rsplit_once('_')
            .filter(|(_, idx)| *idx == "0")
            .map(|(name, _)| name.to_string())
            .ok_or_else(|| {
                Error::load(path, 0, "header", "first feature column must end in _0")
            })?;
        for (i, h) in headers.iter().skip(3).enumerate() {
            if h != format!("{name}_{i}") {
                return Err(Error::load(
                    path,
                    0,
                    "header",
                    format!("feature column {i} is {h:?}, expected {name}_{i}"),
                ));
            }
        }
        let mut store = FeatureStore::new(&name, dim)?;
        for (idx, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::serde(path, e))?;
            if record.len() != dim + 3 {
                return Err(Error::load(
                    path,
                    idx + 1,
                    "row",
                    format!("expected {} fields, got {}", dim + 3, record.len()),
                ));
            }
            let dir: Direction = record[2]
                .parse()
                .map_err(|e| Error::load(path, idx + 1, "direction", e))?;
            let mut features = Vec::with_capacity(dim);
            for (c, field) in record.iter().skip(3).enumerate() {
                let v: f64 = field.parse().map_err(|e| {
                    Error::load(path, idx + 1, &format!("{name}_{c}"), e)
                })?;
                features.push(v);
            }
            store.insert(&record[0], &record[1], dir, features)?;
        }
        Ok(store)
    }
}

/// Detections for a set of views.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectionTable {
    map: BTreeMap<ViewKey, Vec<Detection>>,
}

impl DetectionTable {
    pub fn new() -> Self {
        DetectionTable::default()
    }

    pub fn insert(
        &mut self,
        env_id: &str,
        viewpoint: &str,
        direction: Direction,
        detections: Vec<Detection>,
    ) -> Result<()> {
        for det in &detections {
            det.validate()?;
        }
        self.map
            .insert((env_id.to_string(), viewpoint.to_string(), direction), detections);
        Ok(())
    }

    pub fn get(&self, env_id: &str, viewpoint: &str, direction: Direction) -> Option<&[Detection]> {
        self.map
            .get(&(env_id.to_string(), viewpoint.to_string(), direction))
            .map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&ViewKey, &Vec<Detection>)> {
        self.map.iter()
    }

    pub fn view_count(&self) -> usize {
        self.map.len()
    }

    /// Sample detections for every view of the world.
    pub fn synthesize(world: &World, seed: u64) -> Result<DetectionTable> {
        let mut table = DetectionTable::new();
        for env in &world.envs {
            for vp in env.viewpoint_ids() {
                for dir in Direction::ALL {
                    let dets =
                        crate::featurize::synthesize_detections(world, &env.id, vp, dir, seed)?;
                    table.insert(&env.id, vp, dir, dets)?;
                }
            }
        }
        Ok(table)
    }

    /// One row per detection: env_id, viewpoint_id, direction, label_id,
    /// area, confidence. Views without detections are omitted.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
        w.write_record(["env_id", "viewpoint_id", "direction", "label_id", "area", "confidence"])
            .map_err(|e| Error::serde(path, e))?;
        for ((env, vp, dir), dets) in &self.map {
            for det in dets {
                w.write_record([
                    env.as_str(),
                    vp.as_str(),
                    dir.short(),
                    &det.label.to_string(),
                    &format!("{}", det.area),
                    &format!("{}", det.confidence),
                ])
                .map_err(|e| Error::serde(path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<DetectionTable> {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::serde(path, e))?;
        let headers = r.headers().map_err(|e| Error::serde(path, e))?;
        let expected = ["env_id", "viewpoint_id", "direction", "label_id", "area", "confidence"];
        if headers.len() != expected.len()
            || headers.iter().zip(expected).any(|(h, e)| h != e)
        {
            return Err(Error::load(
                path,
                0,
                "header",
                format!("expected columns {expected:?}"),
            ));
        }
        let mut table = DetectionTable::new();
        for (idx, record) in r.records().enumerate() {
            let record = record.map_err(|e| Error::serde(path, e))?;
            let dir: Direction = record[2]
                .parse()
                .map_err(|e| Error::load(path, idx + 1, "direction", e))?;
            let label: u32 = record[3]
                .parse()
                .map_err(|e| Error::load(path, idx + 1, "label_id", e))?;
            let area: f64 = record[4]
                .parse()
                .map_err(|e| Error::load(path, idx + 1, "area", e))?;
            let confidence: f64 = record[5]
                .parse()
                .map_err(|e| Error::load(path, idx + 1, "confidence", e))?;
            let det = Detection {
                label,
                area,
                confidence,
            };
            det.validate()
                .map_err(|e| Error::load(path, idx + 1, "detection", e))?;
            let key = (record[0].to_string(), record[1].to_string(), dir);
            table.map.entry(key).or_default().push(det);
        }
        Ok(table)
    }
}
