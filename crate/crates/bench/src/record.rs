//! Result rows, the CSV schema and mean/stddev summaries.

use std::fmt::Write as _;
use std::path::Path;

use deepwarp_core::netpbm::atomic_write;
use deepwarp_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub method: String,
    /// `key=value` pairs joined by `;`.
    pub params: String,
    pub pair_id: String,
    pub wall_time_ms: f64,
    pub ssim_before: f64,
    pub ssim_after: f64,
    pub mse_before: f64,
    pub mse_after: f64,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str =
        "method,params,pair_id,wall_time_ms,ssim_before,ssim_after,mse_before,mse_after";

    pub fn validate(&self) -> Result<()> {
        if !(self.wall_time_ms > 0.0 && self.wall_time_ms.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{} on {}: wall time {} ms",
                self.method, self.pair_id, self.wall_time_ms
            )));
        }
        let m = [self.ssim_before, self.ssim_after, self.mse_before, self.mse_after];
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate(format!(
                "{} on {}: non-finite metric",
                self.method, self.pair_id
            )));
        }
        for field in [&self.method, &self.params, &self.pair_id] {
            if field.contains([',', '\n']) {
                return Err(Error::Format(format!("CSV field {field:?} contains a separator")));
            }
        }
        Ok(())
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.6},{:.9},{:.9},{:.9},{:.9}",
            self.method,
            self.params,
            self.pair_id,
            self.wall_time_ms,
            self.ssim_before,
            self.ssim_after,
            self.mse_before,
            self.mse_after
        )
    }

    /// Value of `key` in [`BenchRecord::params`].
    pub fn param(&self, key: &str) -> Option<&str> {
        self.params
            .split(';')
            .filter_map(|kv| kv.split_once('='))
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
    }
}

pub fn to_csv(records: &[BenchRecord]) -> String {
    let mut s = String::from(BenchRecord::CSV_HEADER);
    s.push('\n');
    for r in records {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn write_csv(records: &[BenchRecord], path: impl AsRef<Path>) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    atomic_write(path, to_csv(records).as_bytes())
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>> {
    let mut lines = text.lines();
    if lines.next() != Some(BenchRecord::CSV_HEADER) {
        return Err(Error::Format("missing bench CSV header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(n, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Format(format!("row {}: expected 8 fields", n + 1)));
            }
            let num = |k: usize| {
                f[k].parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {}: bad number {:?}", n + 1, f[k])))
            };
            Ok(BenchRecord {
                method: f[0].into(),
                params: f[1].into(),
                pair_id: f[2].into(),
                wall_time_ms: num(3)?,
                ssim_before: num(4)?,
                ssim_after: num(5)?,
                mse_before: num(6)?,
                mse_after: num(7)?,
            })
        })
        .collect()
}

/// Aggregate of all records sharing `(method, params)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub method: String,
    pub params: String,
    pub runs: usize,
    pub mean_ms: f64,
    /// Sample standard deviation; 0 for a single run.
    pub std_ms: f64,
    pub mean_ssim_before: f64,
    pub mean_ssim_after: f64,
    pub mean_mse_before: f64,
    pub mean_mse_after: f64,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups by `(method, params)` in order of first appearance.
pub fn summarize(records: &[BenchRecord]) -> Vec<Summary> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in records {
        let k = (r.method.as_str(), r.params.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(method, params)| {
            let rows: Vec<&BenchRecord> = records
                .iter()
                .filter(|r| r.method == method && r.params == params)
                .collect();
            let col = |f: fn(&BenchRecord) -> f64| rows.iter().map(|r| f(r)).collect::<Vec<_>>();
            let (mean_ms, std_ms) = mean_std(&col(|r| r.wall_time_ms));
            Summary {
                method: method.into(),
                params: params.into(),
                runs: rows.len(),
                mean_ms,
                std_ms,
                mean_ssim_before: mean_std(&col(|r| r.ssim_before)).0,
                mean_ssim_after: mean_std(&col(|r| r.ssim_after)).0,
                mean_mse_before: mean_std(&col(|r| r.mse_before)).0,
                mean_mse_after: mean_std(&col(|r| r.mse_after)).0,
            }
        })
        .collect()
}

/// Highest mean SSIM after registration among summaries of `method`; the
/// earlier entry wins an exact tie.
pub fn best_by_ssim<'a>(summaries: &'a [Summary], method: &str) -> Option<&'a Summary> {
    summaries
        .iter()
        .filter(|s| s.method == method)
        .fold(None, |best: Option<&Summary>, s| match best {
            Some(b) if b.mean_ssim_after >= s.mean_ssim_after => Some(b),
            _ => Some(s),
        })
}

/// Mean demons time at its best-SSIM grid point over mean learned inference time.
pub fn speed_ratio(demons_best: &Summary, learned: &Summary) -> f64 {
    demons_best.mean_ms / learned.mean_ms
}

/// Fixed-width ASCII table of summaries, with the speed ratio when given.
pub fn render_report(summaries: &[Summary], ratio: Option<f64>) -> String {
    let mut out = String::new();
    let pw = summaries.iter().map(|s| s.params.len()).max().unwrap_or(0).max(6);
    let _ = writeln!(
        out,
        "{:<8} {:<pw$} {:>5} {:>12} {:>10} {:>9} {:>9} {:>10} {:>10}",
        "method", "params", "runs", "time_ms", "std_ms", "ssim_in", "ssim_out", "mse_in", "mse_out"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<8} {:<pw$} {:>5} {:>12.3} {:>10.3} {:>9.4} {:>9.4} {:>10.6} {:>10.6}",
            s.method,
            s.params,
            s.runs,
            s.mean_ms,
            s.std_ms,
            s.mean_ssim_before,
            s.mean_ssim_after,
            s.mean_mse_before,
            s.mean_mse_after
        );
    }
    if let Some(r) = ratio {
        let _ = writeln!(out, "speed ratio (best-SSIM demons / learned): {r:.2}x");
    }
    out
}
