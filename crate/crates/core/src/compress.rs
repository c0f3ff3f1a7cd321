//! Run-length compression of a visual embedding sequence, keyed on the
//! decoded top-1 token of each patch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::numerics::{mean_pool, Matrix, RandomSource};
use crate::tokenmap::{KeywordConfig, TokenCell, TokenMap};
use crate::{Error, Result, Scalar};

/// Maximal stretch of equal top-1 tokens. `start` is 1-based; `w1`/`w2`
/// are the candidates of the run's last cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Run {
    pub start: usize,
    pub length: usize,
    pub w1: String,
    pub w2: String,
}

impl Run {
    /// 0-based row indices covered by the run.
    pub fn rows(&self) -> std::ops::Range<usize> {
        self.start - 1..self.start - 1 + self.length
    }
}

pub fn rle_cells(cells: &[TokenCell]) -> Result<Vec<Run>> {
    let Some(first) = cells.first() else {
        return Err(Error::EmptyInput);
    };
    let mut runs = Vec::new();
    let (mut s, mut l) = (1, 1);
    let mut prev = first;
    for (i, cell) in cells.iter().enumerate().skip(1) {
        if cell.top1 == prev.top1 {
            l += 1;
        } else {
            runs.push(Run {
                start: s,
                length: l,
                w1: prev.top1.clone(),
                w2: prev.top2.clone(),
            });
            s = i + 1;
            l = 1;
        }
        prev = cell;
    }
    runs.push(Run {
        start: s,
        length: l,
        w1: prev.top1.clone(),
        w2: prev.top2.clone(),
    });
    Ok(runs)
}

/// Runs over the raster-scan order of a token map.
pub fn rle_runs(tm: &TokenMap) -> Result<Vec<Run>> {
    rle_cells(&tm.cells)
}

/// Top-1 sequence the runs were built from.
pub fn expand_runs(runs: &[Run]) -> Vec<String> {
    runs.iter()
        .flat_map(|r| std::iter::repeat_n(r.w1.clone(), r.length))
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Filter {
    /// Keep every run.
    #[default]
    AllRuns,
    /// Drop runs whose top-1 token is meaningless.
    FilterTop1,
    /// Drop runs whose top-1 and top-2 tokens are both meaningless.
    FilterTop2,
}

impl Filter {
    pub fn keeps(self, run: &Run, cfg: &KeywordConfig) -> bool {
        match self {
            Filter::AllRuns => true,
            Filter::FilterTop1 => !cfg.is_meaningless(&run.w1),
            Filter::FilterTop2 => !(cfg.is_meaningless(&run.w1) && cfg.is_meaningless(&run.w2)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Filter::AllRuns => "all-runs",
            Filter::FilterTop1 => "filter-top1",
            Filter::FilterTop2 => "filter-top2",
        }
    }
}

impl FromStr for Filter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Filter::AllRuns, Filter::FilterTop1, Filter::FilterTop2]
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown filter \"{s}\"")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Reducer {
    /// One row of the run, drawn uniformly.
    #[default]
    RandomSelect,
    MeanPool,
}

impl Reducer {
    pub fn as_str(self) -> &'static str {
        match self {
            Reducer::RandomSelect => "random-select",
            Reducer::MeanPool => "mean-pool",
        }
    }
}

impl FromStr for Reducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Reducer::RandomSelect, Reducer::MeanPool]
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::invalid("reducer", format!("unknown reducer \"{s}\"")))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionMethod {
    pub filter: Filter,
    pub reducer: Reducer,
}

impl fmt::Display for CompressionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.filter.as_str(), self.reducer.as_str())
    }
}

fn check_partition(runs: &[Run], n: usize) -> Result<()> {
    let mut next = 1;
    for r in runs {
        if r.start != next || r.length == 0 {
            return Err(Error::invalid("runs", format!("run at {} does not continue at {next}", r.start)));
        }
        next += r.length;
    }
    if next - 1 != n {
        return Err(Error::DimensionMismatch { expected: n, got: next - 1 });
    }
    Ok(())
}

/// One output row per surviving run, in run order. Random selection for
/// run `i` draws from `rng.derive(i)`.
pub fn compress<T: Scalar>(
    v: &Matrix<T>,
    runs: &[Run],
    method: CompressionMethod,
    cfg: &KeywordConfig,
    rng: &RandomSource,
) -> Result<Matrix<T>> {
    check_partition(runs, v.rows())?;
    let mut data = Vec::new();
    let mut kept = 0;
    for (i, run) in runs.iter().enumerate() {
        if !method.filter.keeps(run, cfg) {
            continue;
        }
        let rows = run.rows();
        match method.reducer {
            Reducer::RandomSelect => {
                let pick = rows.start + rng.derive(i as u64).index(run.length);
                data.extend_from_slice(v.row(pick));
            }
            Reducer::MeanPool => data.extend(mean_pool(v, &rows.collect::<Vec<_>>())?),
        }
        kept += 1;
    }
    Matrix::new(kept, v.cols(), data)
}

/// Percent decrease in sequence length.
pub fn reduction_rate(n_before: usize, n_after: usize) -> Result<f64> {
    if n_before == 0 {
        return Err(Error::EmptyInput);
    }
    if n_after > n_before {
        return Err(Error::invalid("n_after", format!("{n_after} exceeds n_before = {n_before}")));
    }
    Ok(100.0 * (n_before - n_after) as f64 / n_before as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionReport {
    pub n_before: usize,
    pub n_after: usize,
    pub rate_percent: f64,
    pub method: String,
    pub runs: usize,
}

impl CompressionReport {
    pub fn new(n_before: usize, n_after: usize, method: CompressionMethod, runs: usize) -> Result<Self> {
        Ok(Self {
            n_before,
            n_after,
            rate_percent: reduction_rate(n_before, n_after)?,
            method: method.to_string(),
            runs,
        })
    }
}
