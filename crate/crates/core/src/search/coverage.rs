use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SearchError;

/// exec(r, m) for every routine and matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingTable {
    pub routines: Vec<String>,
    pub matrices: Vec<String>,
    /// `seconds[r][m]`.
    pub seconds: Vec<Vec<f64>>,
}

/// Slack on the top-group bound, so that ties survive float rounding.
const REL_EPS: f64 = 1e-12;

impl TimingTable {
    /// Builds a table from `(routine, matrix, seconds)` triples. The grid
    /// must be complete, without repeats, and all times positive.
    pub fn from_triples<'a>(
        triples: impl IntoIterator<Item = (&'a str, &'a str, f64)>,
    ) -> Result<Self, SearchError> {
        let mut cells: BTreeMap<(String, String), f64> = BTreeMap::new();
        let mut routines = Vec::new();
        let mut matrices = Vec::new();
        for (r, m, s) in triples {
            if !(s.is_finite() && s > 0.0) {
                return Err(SearchError::Table(format!("exec({r}, {m}) = {s} is not a positive time")));
            }
            if !routines.iter().any(|x: &String| x == r) {
                routines.push(r.to_string());
            }
            if !matrices.iter().any(|x: &String| x == m) {
                matrices.push(m.to_string());
            }
            if cells.insert((r.to_string(), m.to_string()), s).is_some() {
                return Err(SearchError::Table(format!("exec({r}, {m}) given twice")));
            }
        }
        if routines.is_empty() {
            return Err(SearchError::Table("no timings".into()));
        }
        let mut seconds = Vec::with_capacity(routines.len());
        for r in &routines {
            let mut row = Vec::with_capacity(matrices.len());
            for m in &matrices {
                let s = cells
                    .get(&(r.clone(), m.clone()))
                    .ok_or_else(|| SearchError::Table(format!("exec({r}, {m}) is missing")))?;
                row.push(*s);
            }
            seconds.push(row);
        }
        Ok(TimingTable {
            routines,
            matrices,
            seconds,
        })
    }

    /// Parses `routine,matrix,seconds` CSV with a header row.
    pub fn from_csv(text: &str) -> Result<Self, SearchError> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header = reader.headers().map_err(|e| SearchError::Table(e.to_string()))?.clone();
        if header.iter().collect::<Vec<_>>() != ["routine", "matrix", "seconds"] {
            return Err(SearchError::Table(format!(
                "expected header `routine,matrix,seconds`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows: Vec<(String, String, f64)> = Vec::new();
        for (n, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| SearchError::Table(e.to_string()))?;
            let line = n + 2;
            let field = |i: usize| rec.get(i).ok_or_else(|| SearchError::Table(format!("line {line}: too few fields")));
            let s: f64 = field(2)?
                .parse()
                .map_err(|_| SearchError::Table(format!("line {line}: bad seconds `{}`", &rec[2])))?;
            rows.push((field(0)?.to_string(), field(1)?.to_string(), s));
        }
        Self::from_triples(rows.iter().map(|(r, m, s)| (r.as_str(), m.as_str(), *s)))
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["routine", "matrix", "seconds"]).expect("in-memory write");
        for (r, row) in self.routines.iter().zip(&self.seconds) {
            for (m, s) in self.matrices.iter().zip(row) {
                w.write_record([r.as_str(), m.as_str(), &s.to_string()])
                    .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    fn matrix_index(&self, m: &str) -> Result<usize, SearchError> {
        self.matrices
            .iter()
            .position(|x| x == m)
            .ok_or_else(|| SearchError::Table(format!("unknown matrix `{m}`")))
    }

    /// The table restricted to some matrices, in the given order.
    pub fn restrict(&self, matrices: &[usize]) -> TimingTable {
        TimingTable {
            routines: self.routines.clone(),
            matrices: matrices.iter().map(|&m| self.matrices[m].clone()).collect(),
            seconds: self
                .seconds
                .iter()
                .map(|row| matrices.iter().map(|&m| row[m]).collect())
                .collect(),
        }
    }

    fn top_indices(&self, m: usize, t_percent: f64) -> Vec<usize> {
        let best = self.seconds.iter().map(|row| row[m]).fold(f64::INFINITY, f64::min);
        let bound = best * (1.0 + t_percent / 100.0) * (1.0 + REL_EPS);
        (0..self.routines.len())
            .filter(|&r| self.seconds[r][m] <= bound)
            .collect()
    }
}

/// Routines within t% of the fastest on matrix `m`:
/// `exec(r, m) <= (1 + t/100) * exec(b, m)`.
pub fn top_group(table: &TimingTable, m: &str, t_percent: f64) -> Result<BTreeSet<String>, SearchError> {
    let m = table.matrix_index(m)?;
    Ok(table
        .top_indices(m, t_percent)
        .into_iter()
        .map(|r| table.routines[r].clone())
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoverageReport {
    pub t_percent: f64,
    /// Fastest routine per matrix (first in table order on ties).
    pub best: Vec<String>,
    pub top_groups: Vec<BTreeSet<String>>,
    /// `weight(r)`: number of matrices whose top group contains `r`.
    pub weights: BTreeMap<String, usize>,
    pub coverage: usize,
    pub argmax: Vec<String>,
}

pub fn coverage(table: &TimingTable, t_percent: f64) -> CoverageReport {
    let mut weights: Vec<usize> = vec![0; table.routines.len()];
    let mut best = Vec::new();
    let mut top_groups = Vec::new();
    for m in 0..table.matrices.len() {
        let b = (0..table.routines.len())
            .min_by(|&a, &b| table.seconds[a][m].total_cmp(&table.seconds[b][m]))
            .expect("table has routines");
        best.push(table.routines[b].clone());
        let top = table.top_indices(m, t_percent);
        for &r in &top {
            weights[r] += 1;
        }
        top_groups.push(top.into_iter().map(|r| table.routines[r].clone()).collect());
    }
    let coverage = weights.iter().copied().max().unwrap_or(0);
    let argmax = table
        .routines
        .iter()
        .zip(&weights)
        .filter(|(_, &w)| w == coverage)
        .map(|(r, _)| r.clone())
        .collect();
    CoverageReport {
        t_percent,
        best,
        top_groups,
        weights: table.routines.iter().cloned().zip(weights).collect(),
        coverage,
        argmax,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub t_percent: f64,
    pub coverage: usize,
    pub argmax: Vec<String>,
}

pub fn coverage_curve(table: &TimingTable, grid: &[f64]) -> Result<Vec<CurvePoint>, SearchError> {
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(SearchError::Table("t grid must be sorted".into()));
    }
    Ok(grid
        .iter()
        .map(|&t| {
            let r = coverage(table, t);
            CurvePoint {
                t_percent: t,
                coverage: r.coverage,
                argmax: r.argmax,
            }
        })
        .collect())
}

/// `t_percent,coverage,argmax_routines`, routines joined by `;`.
pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_percent", "coverage", "argmax_routines"])
        .expect("in-memory write");
    for p in points {
        w.write_record([p.t_percent.to_string(), p.coverage.to_string(), p.argmax.join(";")])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

/// One row per routine: `t_percent,routine,weight,argmax`.
pub fn coverage_csv(report: &CoverageReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["t_percent", "routine", "weight", "argmax"])
        .expect("in-memory write");
    for (r, weight) in &report.weights {
        w.write_record([
            report.t_percent.to_string(),
            r.clone(),
            weight.to_string(),
            report.argmax.contains(r).to_string(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    /// Sampled matrices, in sampling order.
    pub sample: Vec<String>,
    /// Routines within t% of the best on every sampled matrix.
    pub routines: Vec<String>,
}

/// Samples `k` matrices with a seeded generator and keeps the routines
/// whose weight on the sample is `k`.
pub fn select_kernel(table: &TimingTable, k: usize, t_percent: f64, seed: u64) -> Result<Selection, SearchError> {
    let n = table.matrices.len();
    if k == 0 || k > n {
        return Err(SearchError::Table(format!("cannot sample {k} of {n} matrices")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked: Vec<usize> = index::sample(&mut rng, n, k).into_vec();
    let sub = table.restrict(&picked);
    let report = coverage(&sub, t_percent);
    let routines = report
        .weights
        .iter()
        .filter(|(_, &w)| w == k)
        .map(|(r, _)| r.clone())
        .collect();
    Ok(Selection {
        sample: sub.matrices,
        routines,
    })
}
