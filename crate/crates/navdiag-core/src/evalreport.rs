//! Success metrics, seen/unseen gaps, locality tables, and report files.
//!
//! Evaluation reduces rolled-out trajectories to two numbers per split —
//! success rate (did the agent end within a radius of the goal?) and
//! goal progress (how many meters closer did it get?) — and derives the
//! headline seen/unseen gap from them. Locality tables bin episodes by
//! their distance from the training data and report success per bin.
//! Reports are written with fixed float formatting so identical results
//! always produce byte-identical files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::Trajectory;
use crate::error::{Error, Result};
use crate::navgraph::NavGraph;

/// Trajectories ending within this graph distance of the goal succeed.
pub const DEFAULT_SUCCESS_RADIUS: f64 = 3.0;

/// Success rates are reported with this many decimals, meters with one
/// more; fixed formatting keeps report files byte-stable.
const SR_DECIMALS: u32 = 1;
const METER_DECIMALS: u32 = 2;

fn round_to(value: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (value * scale).round() / scale
}

/// Metrics of one validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: String,
    pub episode_count: usize,
    /// Percentage in [0, 100].
    pub success_rate: f64,
    /// Mean goal progress in meters.
    pub goal_progress: f64,
}

/// One evaluated feature representation: its per-split metrics and which
/// splits play the seen/unseen roles in the gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    /// Feature representation the agent was trained with.
    pub feature: String,
    pub seed: u64,
    pub splits: Vec<SplitMetrics>,
    pub seen_split: String,
    pub unseen_split: String,
}

impl EvalResult {
    pub fn validate(&self) -> Result<()> {
        if self.splits.is_empty() {
            return Err(Error::Validation("a result needs at least one split".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for s in &self.splits {
            if !names.insert(s.split.as_str()) {
                return Err(Error::Validation(format!(
                    "duplicate split {:?} in result",
                    s.split
                )));
            }
            if !(0.0..=100.0).contains(&s.success_rate) || !s.goal_progress.is_finite() {
                return Err(Error::Validation(format!(
                    "split {:?} has out-of-range metrics (SR {}, progress {})",
                    s.split, s.success_rate, s.goal_progress
                )));
            }
        }
        for role in [&self.seen_split, &self.unseen_split] {
            if !names.contains(role.as_str()) {
                return Err(Error::Validation(format!(
                    "designated split {role:?} is not among the result's splits"
                )));
            }
        }
        Ok(())
    }

    pub fn split(&self, name: &str) -> Result<&SplitMetrics> {
        self.splits
            .iter()
            .find(|s| s.split == name)
            .ok_or_else(|| Error::Lookup(format!("result has no split named {name:?}")))
    }

    /// |seen SR − unseen SR|.
    pub fn gap(&self) -> Result<f64> {
        Ok(gap(
            self.split(&self.seen_split)?.success_rate,
            self.split(&self.unseen_split)?.success_rate,
        ))
    }

    /// The same result with metrics rounded to report precision (one
    /// decimal for success rates, two for meters). Everything persisted
    /// goes through this, so downstream stages see identical numbers
    /// whether they reload artifacts or keep results in memory.
    pub fn rounded(&self) -> EvalResult {
        EvalResult {
            feature: self.feature.clone(),
            seed: self.seed,
            splits: self
                .splits
                .iter()
                .map(|s| SplitMetrics {
                    split: s.split.clone(),
                    episode_count: s.episode_count,
                    success_rate: round_to(s.success_rate, SR_DECIMALS),
                    goal_progress: round_to(s.goal_progress, METER_DECIMALS),
                })
                .collect(),
            seen_split: self.seen_split.clone(),
            unseen_split: self.unseen_split.clone(),
        }
    }
}

/// Graph distance from every trajectory end to its goal, via a Dijkstra
/// pass per distinct goal.
pub fn end_distances(
    trajectories: &[Trajectory],
    goals: &[String],
    graph: &NavGraph,
) -> Result<Vec<f64>> {
    if trajectories.len() != goals.len() {
        return Err(Error::Validation(format!(
            "{} trajectories but {} goals",
            trajectories.len(),
            goals.len()
        )));
    }
    let mut from_goal: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut out = Vec::with_capacity(goals.len());
    for (traj, goal) in trajectories.iter().zip(goals) {
        let g = graph.lookup(goal).map_err(|_| {
            Error::Validation(format!(
                "episode {:?} names goal {goal:?}, which is not in the graph",
                traj.episode_id
            ))
        })?;
        let dists = from_goal
            .entry(g)
            .or_insert_with(|| graph.shortest_lengths_from(g));
        out.push(dists[graph.lookup(traj.end())?]);
    }
    Ok(out)
}

/// Percentage of trajectories ending within graph distance `radius` of
/// their goal.
pub fn success_rate(
    trajectories: &[Trajectory],
    goals: &[String],
    graph: &NavGraph,
    radius: f64,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Validation(
            "cannot compute a success rate over zero episodes".into(),
        ));
    }
    if radius.is_nan() || radius < 0.0 {
        return Err(Error::Validation(format!(
            "success radius must be nonnegative, got {radius}"
        )));
    }
    let dists = end_distances(trajectories, goals, graph)?;
    let hits = dists.iter().filter(|&&d| d <= radius).count();
    Ok(100.0 * hits as f64 / dists.len() as f64)
}

/// Mean reduction in graph distance to the goal, start to end, meters.
pub fn goal_progress(
    trajectories: &[Trajectory],
    goals: &[String],
    graph: &NavGraph,
) -> Result<f64> {
    if trajectories.is_empty() {
        return Err(Error::Validation(
            "cannot compute goal progress over zero episodes".into(),
        ));
    }
    let ends = end_distances(trajectories, goals, graph)?;
    let mut total = 0.0;
    for ((traj, goal), end_dist) in trajectories.iter().zip(goals).zip(&ends) {
        let start = graph.lookup(&traj.visited[0])?;
        let goal_idx = graph.lookup(goal)?;
        let start_dist = graph.shortest_lengths_from(goal_idx)[start];
        if !start_dist.is_finite() || !end_dist.is_finite() {
            return Err(Error::Validation(format!(
                "episode {:?} has no path between its endpoints and goal {goal:?}",
                traj.episode_id
            )));
        }
        total += start_dist - end_dist;
    }
    Ok(total / trajectories.len() as f64)
}

/// Absolute difference between two success rates.
pub fn gap(seen: f64, unseen: f64) -> f64 {
    (seen - unseen).abs()
}

/// One locality bin: a closed distance range and its success rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityBin {
    /// Rendered range, e.g. "5-13" (trailing-zero-free meters).
    pub label: String,
    pub low: f64,
    pub high: f64,
    pub episode_count: usize,
    pub success_rate: f64,
}

/// Success rate as a function of distance from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalityTable {
    pub bins: Vec<LocalityBin>,
}

impl LocalityTable {
    pub fn total_episodes(&self) -> usize {
        self.bins.iter().map(|b| b.episode_count).sum()
    }
}

/// Bin episodes into distance quantiles and report per-bin success.
/// Equal distances never straddle a boundary: ties extend the lower bin,
/// so bins can be uneven and a fully-swallowed bin is dropped.
pub fn locality_table(
    distances: &[f64],
    successes: &[bool],
    num_bins: usize,
) -> Result<LocalityTable> {
    if distances.len() != successes.len() {
        return Err(Error::Validation(format!(
            "{} distances but {} success flags",
            distances.len(),
            successes.len()
        )));
    }
    if num_bins == 0 {
        return Err(Error::Validation("need at least one locality bin".into()));
    }
    if distances.len() < num_bins {
        return Err(Error::Validation(format!(
            "cannot split {} episodes into {num_bins} bins",
            distances.len()
        )));
    }
    if let Some(bad) = distances.iter().find(|d| !d.is_finite()) {
        return Err(Error::Validation(format!(
            "locality distances must be finite, got {bad}"
        )));
    }

    let n = distances.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));

    let mut bins = Vec::new();
    let mut start = 0usize;
    for j in 0..num_bins {
        let mut end = ((j + 1) * n / num_bins).max(start);
        while end > start && end < n && distances[order[end]] == distances[order[end - 1]] {
            end += 1;
        }
        if j + 1 == num_bins {
            end = n;
        }
        if end == start {
            continue;
        }
        let members = &order[start..end];
        let low = distances[members[0]];
        let high = distances[*members.last().unwrap()];
        let hits = members.iter().filter(|&&i| successes[i]).count();
        bins.push(LocalityBin {
            label: format!("{low}-{high}"),
            low,
            high,
            episode_count: members.len(),
            success_rate: 100.0 * hits as f64 / members.len() as f64,
        });
        start = end;
    }
    Ok(LocalityTable { bins })
}

/// Report file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Svg];

    pub fn name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Svg => "svg",
        }
    }
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Validation(format!(
                "unknown report format {other:?} (expected csv, json, or svg)"
            ))),
        }
    }
}

fn fmt_sr(v: f64) -> String {
    format!("{:.SR_DECIMALS$}", v, SR_DECIMALS = SR_DECIMALS as usize)
}

fn fmt_meters(v: f64) -> String {
    format!("{:.METER_DECIMALS$}", v, METER_DECIMALS = METER_DECIMALS as usize)
}

/// A result row as serialized to the JSON report: the result plus its
/// derived gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ReportEntry {
    #[serde(flatten)]
    result: EvalResult,
    gap: f64,
}

/// Write the given results under `out_dir` as `metrics.{csv,json,svg}`,
/// one file per requested format, and return the paths written. Output
/// bytes are a pure function of the results.
pub fn emit_report(
    results: &[EvalResult],
    out_dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    for r in results {
        r.validate()?;
    }
    let rounded: Vec<EvalResult> = results.iter().map(EvalResult::rounded).collect();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    let mut done = std::collections::BTreeSet::new();
    for &format in formats {
        if !done.insert(format) {
            continue;
        }
        let path = out_dir.join(format!("metrics.{}", format.name()));
        match format {
            ReportFormat::Csv => write_metrics_csv(&rounded, &path)?,
            ReportFormat::Json => write_metrics_json(&rounded, &path)?,
            ReportFormat::Svg => write_metrics_svg(&rounded, &path)?,
        }
        written.push(path);
    }
    Ok(written)
}

const METRICS_HEADER: [&str; 7] = [
    "feature",
    "seed",
    "split",
    "role",
    "episodes",
    "success_rate",
    "goal_progress",
];

fn role_of(result: &EvalResult, split: &str) -> &'static str {
    if split == result.seen_split {
        "seen"
    } else if split == result.unseen_split {
        "unseen"
    } else {
        "none"
    }
}

fn write_metrics_csv(results: &[EvalResult], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::serde(path, e))?;
    w.write_record(METRICS_HEADER).map_err(|e| Error::serde(path, e))?;
    for r in results {
        for s in &r.splits {
            w.write_record([
                r.feature.as_str(),
                &r.seed.to_string(),
                s.split.as_str(),
                role_of(r, &s.split),
                &s.episode_count.to_string(),
                &fmt_sr(s.success_rate),
                &fmt_meters(s.goal_progress),
            ])
            .map_err(|e| Error::serde(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Read a `metrics.csv` back into results. Rows are grouped into one
/// result per consecutive (feature, seed) run, in file order.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<EvalResult>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::serde(path, e))?;
    let headers = reader.headers().map_err(|e| Error::serde(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != METRICS_HEADER {
        return Err(Error::load(
            path,
            0,
            "header",
            format!("expected columns {METRICS_HEADER:?}"),
        ));
    }
    let mut results: Vec<EvalResult> = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::serde(path, e))?;
        let field = |i: usize, name: &str| -> Result<String> {
            record
                .get(i)
                .map(str::to_string)
                .ok_or_else(|| Error::load(path, idx + 1, name, "missing field"))
        };
        let parse_f64 = |i: usize, name: &str| -> Result<f64> {
            field(i, name)?
                .parse::<f64>()
                .map_err(|e| Error::load(path, idx + 1, name, e.to_string()))
        };
        let feature = field(0, "feature")?;
        let seed: u64 = field(1, "seed")?
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::load(path, idx + 1, "seed", e.to_string()))?;
        let split = field(2, "split")?;
        let role = field(3, "role")?;
        let episode_count: usize = field(4, "episodes")?
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::load(path, idx + 1, "episodes", e.to_string()))?;
        let metrics = SplitMetrics {
            split: split.clone(),
            episode_count,
            success_rate: parse_f64(5, "success_rate")?,
            goal_progress: parse_f64(6, "goal_progress")?,
        };
        let fresh = match results.last() {
            Some(last) => last.feature != feature || last.seed != seed,
            None => true,
        };
        if fresh {
            results.push(EvalResult {
                feature,
                seed,
                splits: Vec::new(),
                seen_split: String::new(),
                unseen_split: String::new(),
            });
        }
        let current = results.last_mut().expect("just pushed");
        match role.as_str() {
            "seen" => current.seen_split = split,
            "unseen" => current.unseen_split = split,
            "none" => {}
            other => {
                return Err(Error::load(
                    path,
                    idx + 1,
                    "role",
                    format!("unknown role {other:?}"),
                ))
            }
        }
        current.splits.push(metrics);
    }
    for r in &results {
        r.validate().map_err(|e| {
            Error::load(path, 0, "result", format!("inconsistent result group: {e}"))
        })?;
    }
    Ok(results)
}

fn write_metrics_json(results: &[EvalResult], path: &Path) -> Result<()> {
    let entries: Vec<ReportEntry> = results
        .iter()
        .map(|r| {
            Ok(ReportEntry {
                result: r.clone(),
                gap: round_to(r.gap()?, SR_DECIMALS),
            })
        })
        .collect::<Result<_>>()?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, &entries).map_err(|e| Error::serde(path, e))?;
    use std::io::Write;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// A static bar chart of success rate per split, grouped by feature
/// kind. Multiple seeds of the same (feature, split) are averaged.
fn write_metrics_svg(results: &[EvalResult], path: &Path) -> Result<()> {
    // Aggregate in first-appearance order so the chart is deterministic.
    let mut order: Vec<(String, String)> = Vec::new();
    let mut sums: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in results {
        for s in &r.splits {
            let key = (r.feature.clone(), s.split.clone());
            if !sums.contains_key(&key) {
                order.push(key.clone());
            }
            let e = sums.entry(key).or_insert((0.0, 0));
            e.0 += s.success_rate;
            e.1 += 1;
        }
    }

    const BAR_W: usize = 48;
    const GAP_W: usize = 16;
    const LEFT: usize = 50;
    const TOP: usize = 20;
    const PLOT_H: usize = 220;
    const LABEL_H: usize = 70;
    let width = LEFT + order.len().max(1) * (BAR_W + GAP_W) + 20;
    let height = TOP + PLOT_H + LABEL_H;

    let mut svg = String::new();
    use std::fmt::Write as _;
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let _ = write!(
        svg,
        "  <text x=\"{LEFT}\" y=\"12\">success rate per split and feature (%)</text>\n"
    );
    for tick in [0, 25, 50, 75, 100] {
        let y = TOP + PLOT_H - PLOT_H * tick / 100;
        let _ = write!(
            svg,
            "  <line x1=\"{LEFT}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"#ccc\"/>\n",
            width - 10
        );
        let _ = write!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{tick}</text>\n",
            LEFT - 6,
            y + 4
        );
    }
    for (i, key) in order.iter().enumerate() {
        let (sum, count) = sums[key];
        let mean = round_to(sum / count as f64, SR_DECIMALS);
        let bar_h = (PLOT_H as f64 * mean / 100.0).round() as usize;
        let x = LEFT + i * (BAR_W + GAP_W);
        let y = TOP + PLOT_H - bar_h;
        let _ = write!(
            svg,
            "  <rect x=\"{x}\" y=\"{y}\" width=\"{BAR_W}\" height=\"{bar_h}\" fill=\"#4878a8\"/>\n"
        );
        let _ = write!(
            svg,
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            x + BAR_W / 2,
            y.saturating_sub(4).max(12),
            fmt_sr(mean)
        );
        let cx = x + BAR_W / 2;
        let ty = TOP + PLOT_H + 12;
        let _ = write!(
            svg,
            "  <text x=\"{cx}\" y=\"{ty}\" text-anchor=\"middle\">{}</text>\n",
            xml_escape(&key.0)
        );
        let _ = write!(
            svg,
            "  <text x=\"{cx}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n",
            ty + 14,
            xml_escape(&key.1)
        );
    }
    let _ = write!(svg, "</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
