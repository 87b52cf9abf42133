//! Architecture sweeps: growth rate, depth, plain-block stacking and
//! connection mode. Each grid point trains one model on a training split
//! and reports metrics on a held-out split.

use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{stratified_kfold, EncodedDataset, SparseClassPolicy};
use crate::error::{Error, Result};
use crate::eval::{evaluate, Metric};
use crate::net::{ArchitectureConfig, Network};
use crate::train::{train, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    /// DualNet with one dense block per grid value of growth rate `k`.
    Growth,
    /// For each grid value `n`: Dense-n and Residual-4n, then one DualNet at the largest `n`.
    Depth,
    /// PlainStack-n for each grid value `n`.
    PlainStack,
    /// For each grid value `p`: `p` plain blocks joined by concat (one dense block, `k = p`) and by add (Residual-p).
    Connectivity,
}

impl FromStr for SweepKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "growth" => Ok(SweepKind::Growth),
            "depth" => Ok(SweepKind::Depth),
            "plainstack" | "plain-stack" => Ok(SweepKind::PlainStack),
            "connectivity" => Ok(SweepKind::Connectivity),
            other => Err(Error::Config(format!(
                "unknown sweep {other:?}; use growth, depth, plainstack or connectivity"
            ))),
        }
    }
}

impl std::fmt::Display for SweepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SweepKind::Growth => "growth",
            SweepKind::Depth => "depth",
            SweepKind::PlainStack => "plainstack",
            SweepKind::Connectivity => "connectivity",
        })
    }
}

impl SweepKind {
    pub fn default_grid(self) -> Vec<usize> {
        match self {
            SweepKind::Growth => (1..=6).collect(),
            SweepKind::Depth => vec![1, 2, 3],
            SweepKind::PlainStack => (1..=10).collect(),
            SweepKind::Connectivity => vec![2, 4],
        }
    }
}

/// Parse a grid such as `1,2,4` or `1..6` (inclusive range).
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    let bad = |detail: String| Error::Config(format!("invalid grid {s:?}: {detail}"));
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let a: usize = a.trim().parse().map_err(|_| bad(format!("{a:?} is not a count")))?;
            let b: usize = b.trim().parse().map_err(|_| bad(format!("{b:?} is not a count")))?;
            if a > b {
                return Err(bad(format!("empty range {part}")));
            }
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad(format!("{part:?} is not a count")))?);
        }
    }
    Ok(out)
}

/// Grid values must be positive, distinct and at most `MAX_GRID_VALUE`.
pub const MAX_GRID_VALUE: usize = 64;

pub fn validate_grid(grid: &[usize]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    for (i, &v) in grid.iter().enumerate() {
        if v == 0 || v > MAX_GRID_VALUE {
            return Err(Error::Config(format!(
                "grid value {v} outside 1..={MAX_GRID_VALUE}"
            )));
        }
        if grid[..i].contains(&v) {
            return Err(Error::Config(format!("grid value {v} repeated")));
        }
    }
    Ok(())
}

/// Widths shared by every configuration of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepShape {
    pub stem_width: usize,
    /// Growth rate for depth sweeps.
    pub growth_rate: usize,
    pub attention_width: usize,
}

impl Default for SweepShape {
    /// Desk scale: narrow stem, small attention.
    fn default() -> Self {
        SweepShape {
            stem_width: 8,
            growth_rate: 4,
            attention_width: 8,
        }
    }
}

impl SweepShape {
    /// Stem and attention as wide as the encoded input.
    pub fn full_width(input_width: usize) -> Self {
        SweepShape {
            stem_width: input_width,
            growth_rate: 4,
            attention_width: input_width,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub config_id: String,
    /// The grid value this point belongs to.
    pub x: usize,
    pub arch: ArchitectureConfig,
}

/// The architectures a sweep trains, in row order.
pub fn sweep_points(
    kind: SweepKind,
    grid: &[usize],
    input_width: usize,
    classes: usize,
    shape: &SweepShape,
) -> Result<Vec<SweepPoint>> {
    validate_grid(grid)?;
    let s = shape.stem_width;
    let point = |id: String, x: usize, arch: ArchitectureConfig| -> Result<SweepPoint> {
        arch.validate()?;
        Ok(SweepPoint { config_id: id, x, arch })
    };
    let mut points = Vec::new();
    match kind {
        SweepKind::Growth => {
            for &k in grid {
                let arch = ArchitectureConfig::dualnet(input_width, s, 1, k, shape.attention_width, classes);
                points.push(point(format!("dualnet-k{k}"), k, arch)?);
            }
        }
        SweepKind::Depth => {
            let g = shape.growth_rate;
            for &n in grid {
                let dense = ArchitectureConfig::dense(input_width, s, n, g, classes);
                points.push(point(format!("dense-{n}"), n, dense)?);
                let residual = ArchitectureConfig::residual(input_width, s, 4 * n, classes);
                points.push(point(format!("residual-{}", 4 * n), n, residual)?);
            }
            let n = *grid.iter().max().expect("validated non-empty");
            let dual = ArchitectureConfig::dualnet(input_width, s, n, g, shape.attention_width, classes);
            points.push(point(format!("dualnet-{n}"), n, dual)?);
        }
        SweepKind::PlainStack => {
            for &n in grid {
                let arch = ArchitectureConfig::plain_stack(input_width, s, n, classes);
                points.push(point(format!("plainstack-{n}"), n, arch)?);
            }
        }
        SweepKind::Connectivity => {
            for &p in grid {
                let concat = ArchitectureConfig::dense(input_width, s, 1, p, classes);
                points.push(point(format!("concat-{p}"), p, concat)?);
                let add = ArchitectureConfig::residual(input_width, s, p, classes);
                points.push(point(format!("add-{p}"), p, add)?);
            }
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub config_id: String,
    pub x: usize,
    pub acc: Metric,
    pub dr: Metric,
    pub far: Metric,
    pub params: usize,
    pub layers: usize,
    pub seed: u64,
    pub wall_secs: f64,
}

/// Stratified 80/20 split: fold 0 of a seeded 5-fold partition is the test set.
pub fn holdout_split(ds: &EncodedDataset, seed: u64) -> Result<(EncodedDataset, EncodedDataset)> {
    let folds = stratified_kfold(&ds.labels, &ds.classes, 5, seed, SparseClassPolicy::Allow)?;
    Ok((ds.subset(&folds[0].train), ds.subset(&folds[0].test)))
}

/// Train and score every point. Point `i` uses seed `cfg.seed + i` for both
/// initialisation and training.
pub fn run_sweep<F>(
    points: &[SweepPoint],
    train_ds: &EncodedDataset,
    test_ds: &EncodedDataset,
    cfg: &TrainConfig,
    mut on_row: F,
) -> Result<Vec<SweepRow>>
where
    F: FnMut(&SweepRow),
{
    cfg.validate()?;
    let mut rows = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        let start = Instant::now();
        let mut net = Network::build(&p.arch, seed)?;
        train(&mut net, train_ds, &TrainConfig { seed, ..cfg.clone() })?;
        let report = evaluate(&net, test_ds, cfg.task)?;
        let row = SweepRow {
            config_id: p.config_id.clone(),
            x: p.x,
            acc: report.acc,
            dr: report.dr,
            far: report.far,
            params: net.count_params(),
            layers: net.plan.total_layers,
            seed,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

fn metric_cell(m: Metric) -> String {
    match m.rounded() {
        Metric::Value(v) => format!("{v:.4}"),
        Metric::Undefined => "undefined".into(),
    }
}

pub const SWEEP_CSV_HEADER: [&str; 9] = ["config_id", "x", "acc", "dr", "far", "params", "layers", "seed", "wall_secs"];

pub fn rows_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(SWEEP_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.config_id.clone(),
            r.x.to_string(),
            metric_cell(r.acc),
            metric_cell(r.dr),
            metric_cell(r.far),
            r.params.to_string(),
            r.layers.to_string(),
            r.seed.to_string(),
            format!("{:.3}", r.wall_secs),
        ])?;
    }
    w.into_inner().map_err(|e| Error::Data(format!("csv buffer: {e}")))
}
