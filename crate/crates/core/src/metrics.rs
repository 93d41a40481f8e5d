//! Per-round metrics rows, deterministic CSV emission, parse-back, and
//! plot-data aggregation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed column order; the stable public schema. Per-module contraction
/// coefficients, the config hash, and free-form flags ride in the trailing
/// columns as semicolon-joined lists.
pub const COLUMNS: [&str; 17] = [
    "round",
    "seed",
    "strategy",
    "phi_measured",
    "bound_total",
    "bound_term1",
    "bound_term2",
    "bound_term3",
    "bound_term4",
    "energy_total_J",
    "success_rate",
    "E_t_s",
    "inner_iters",
    "flags",
    "a_modules",
    "b_modules",
    "config_hash",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub seed: u64,
    pub strategy: String,
    pub phi_measured: f64,
    pub bound_total: f64,
    pub bound_term1: f64,
    pub bound_term2: f64,
    pub bound_term3: f64,
    pub bound_term4: f64,
    pub energy_total_j: f64,
    pub success_rate: f64,
    pub e_t_s: f64,
    pub inner_iters: usize,
    /// Event markers for the round (e.g. contraction coefficient out of
    /// range, allocator non-convergence); semicolon-separated in the CSV.
    pub flags: Vec<String>,
    pub a_modules: Vec<f64>,
    pub b_modules: Vec<f64>,
    pub config_hash: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

/// 17 significant digits: enough to round-trip any f64 exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn join_floats(xs: &[f64]) -> String {
    xs.iter().map(|&x| format_float(x)).collect::<Vec<_>>().join(";")
}

fn split_floats(s: &str) -> Result<Vec<f64>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|t| t.parse::<f64>().map_err(|e| Error::Config(format!("bad float `{t}`: {e}"))))
        .collect()
}

impl MetricsRow {
    fn to_csv_line(&self) -> String {
        let mut line = String::new();
        let _ = write!(
            line,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.round,
            self.seed,
            self.strategy,
            format_float(self.phi_measured),
            format_float(self.bound_total),
            format_float(self.bound_term1),
            format_float(self.bound_term2),
            format_float(self.bound_term3),
            format_float(self.bound_term4),
            format_float(self.energy_total_j),
            format_float(self.success_rate),
            format_float(self.e_t_s),
            self.inner_iters,
            self.flags.join(";"),
            join_floats(&self.a_modules),
            join_floats(&self.b_modules),
            self.config_hash,
        );
        line
    }

    fn from_csv_line(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != COLUMNS.len() {
            return Err(Error::Config(format!(
                "expected {} fields, got {}: `{line}`",
                COLUMNS.len(),
                fields.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("column {}: {e}", COLUMNS[i])))
        };
        Ok(MetricsRow {
            round: fields[0]
                .parse()
                .map_err(|e| Error::Config(format!("column round: {e}")))?,
            seed: fields[1]
                .parse()
                .map_err(|e| Error::Config(format!("column seed: {e}")))?,
            strategy: fields[2].to_string(),
            phi_measured: num(3)?,
            bound_total: num(4)?,
            bound_term1: num(5)?,
            bound_term2: num(6)?,
            bound_term3: num(7)?,
            bound_term4: num(8)?,
            energy_total_j: num(9)?,
            success_rate: num(10)?,
            e_t_s: num(11)?,
            inner_iters: fields[12]
                .parse()
                .map_err(|e| Error::Config(format!("column inner_iters: {e}")))?,
            flags: if fields[13].is_empty() {
                Vec::new()
            } else {
                fields[13].split(';').map(str::to_string).collect()
            },
            a_modules: split_floats(fields[14])?,
            b_modules: split_floats(fields[15])?,
            config_hash: fields[16].to_string(),
        })
    }
}

impl MetricsTable {
    pub fn to_csv(&self) -> String {
        let mut out = COLUMNS.join(",");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
        if header != COLUMNS.join(",") {
            return Err(Error::Config(format!("unexpected header `{header}`")));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(MetricsRow::from_csv_line)
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricsTable { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv(&std::fs::read_to_string(path)?)
    }

    /// Stable merge of several tables: rows ordered by (strategy, seed,
    /// round) so parallel producers always yield the same file.
    pub fn merge(tables: Vec<MetricsTable>) -> MetricsTable {
        let mut rows: Vec<MetricsRow> = tables.into_iter().flat_map(|t| t.rows).collect();
        rows.sort_by(|a, b| {
            (a.strategy.as_str(), a.seed, a.round).cmp(&(b.strategy.as_str(), b.seed, b.round))
        });
        MetricsTable { rows }
    }

    /// Seed-averaged series per (strategy, round), for plotting.
    pub fn aggregate(&self) -> Vec<PlotPoint> {
        use std::collections::BTreeMap;
        let mut groups: BTreeMap<(String, usize), Vec<&MetricsRow>> = BTreeMap::new();
        for row in &self.rows {
            groups.entry((row.strategy.clone(), row.round)).or_default().push(row);
        }
        groups
            .into_iter()
            .map(|((strategy, round), rows)| {
                let n = rows.len() as f64;
                let mean = |f: fn(&MetricsRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
                PlotPoint {
                    strategy,
                    round,
                    n_seeds: rows.len(),
                    mean_phi: mean(|r| r.phi_measured),
                    mean_bound: mean(|r| r.bound_total),
                    mean_energy_j: mean(|r| r.energy_total_j),
                    mean_success_rate: mean(|r| r.success_rate),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotPoint {
    pub strategy: String,
    pub round: usize,
    pub n_seeds: usize,
    pub mean_phi: f64,
    pub mean_bound: f64,
    pub mean_energy_j: f64,
    pub mean_success_rate: f64,
}

pub fn plot_points_to_csv(points: &[PlotPoint]) -> String {
    let mut out = String::from("strategy,round,n_seeds,mean_phi,mean_bound,mean_energy_J,mean_success_rate\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            p.strategy,
            p.round,
            p.n_seeds,
            format_float(p.mean_phi),
            format_float(p.mean_bound),
            format_float(p.mean_energy_j),
            format_float(p.mean_success_rate),
        );
    }
    out
}
