use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::experiment::{mean_stderr, RunSummary};
use super::plot::{line_chart, LineSeries};
use super::HarnessError;
use crate::agents::RunRecord;

/// Evaluation curves of one run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunData {
    pub dir: PathBuf,
    pub variant: String,
    /// Per seed: `(step, mean eval score)` in step order.
    pub seeds: BTreeMap<u64, Vec<(u64, f64)>>,
}

/// One aligned point of a smoothed multi-seed curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: u64,
    pub mean: f64,
    pub stderr: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunCurve {
    pub label: String,
    pub variant: String,
    pub points: Vec<CurvePoint>,
}

/// Aligned curves of several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub window: usize,
    pub curves: Vec<RunCurve>,
}

fn run_error(dir: &Path, reason: impl Into<String>) -> HarnessError {
    HarnessError::Run {
        path: dir.to_path_buf(),
        reason: reason.into(),
    }
}

/// Reads `curve.csv` (and `summary.json` for the label) without modifying
/// anything in the directory.
pub fn load_run(dir: &Path) -> Result<RunData, HarnessError> {
    let curve = dir.join("curve.csv");
    let mut reader = csv::Reader::from_path(&curve)?;
    let mut sums: BTreeMap<u64, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    let mut variant = None;
    for row in reader.deserialize() {
        let r: RunRecord = row?;
        if !r.is_eval() {
            continue;
        }
        variant.get_or_insert_with(|| r.variant.clone());
        let e = sums.entry(r.seed).or_default().entry(r.step).or_default();
        e.0 += r.env_score;
        e.1 += 1;
    }
    let summary: Option<RunSummary> = fs::read_to_string(dir.join("summary.json"))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    let variant = summary
        .map(|s| s.variant)
        .or(variant)
        .ok_or_else(|| run_error(dir, "no evaluation rows"))?;
    let seeds = sums
        .into_iter()
        .map(|(seed, steps)| (seed, steps.into_iter().map(|(s, (sum, n))| (s, sum / n as f64)).collect()))
        .collect();
    Ok(RunData {
        dir: dir.to_path_buf(),
        variant,
        seeds,
    })
}

/// Trailing moving average; early points average what is available.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..xs.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(w);
            xs[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}

/// Smooths each seed's curve, then reports mean and standard error across
/// seeds at every step. All seeds must share the same evaluation steps.
pub fn aggregate_seeds(run: &RunData, window: usize) -> Result<Vec<CurvePoint>, HarnessError> {
    let mut steps: Option<Vec<u64>> = None;
    let mut smoothed = Vec::new();
    for (seed, curve) in &run.seeds {
        let s: Vec<u64> = curve.iter().map(|p| p.0).collect();
        match &steps {
            None => steps = Some(s),
            Some(first) if *first != s => {
                return Err(HarnessError::Cadence(format!(
                    "{}: seed {seed} evaluates at different steps",
                    run.dir.display()
                )))
            }
            Some(_) => {}
        }
        let ys: Vec<f64> = curve.iter().map(|p| p.1).collect();
        smoothed.push(moving_average(&ys, window));
    }
    let steps = steps.unwrap_or_default();
    Ok(steps
        .iter()
        .enumerate()
        .map(|(i, &step)| {
            let at: Vec<f64> = smoothed.iter().map(|c| c[i]).collect();
            let (mean, stderr) = mean_stderr(&at);
            CurvePoint {
                step,
                mean,
                stderr,
                seeds: at.len(),
            }
        })
        .collect())
}

/// Loads and aligns at least two runs. Runs must share one evaluation cadence.
pub fn compare_runs(dirs: &[PathBuf], window: usize) -> Result<Comparison, HarnessError> {
    if dirs.len() < 2 {
        return Err(HarnessError::Config("compare needs at least two run directories".into()));
    }
    let mut curves = Vec::new();
    let mut cadence: Option<(PathBuf, Vec<u64>)> = None;
    for dir in dirs {
        let run = load_run(dir)?;
        let points = aggregate_seeds(&run, window)?;
        let steps: Vec<u64> = points.iter().map(|p| p.step).collect();
        match &cadence {
            None => cadence = Some((dir.clone(), steps)),
            Some((first, s)) if *s != steps => {
                return Err(HarnessError::Cadence(format!(
                    "{} and {} evaluate at different steps",
                    first.display(),
                    dir.display()
                )))
            }
            Some(_) => {}
        }
        let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        curves.push(RunCurve {
            label: format!("{} ({name})", run.variant),
            variant: run.variant,
            points,
        });
    }
    Ok(Comparison { window, curves })
}

impl Comparison {
    /// `run,variant,step,mean,stderr,seeds` rows.
    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["run", "variant", "step", "mean", "stderr", "seeds"])?;
        for c in &self.curves {
            for p in &c.points {
                w.write_record([
                    c.label.clone(),
                    c.variant.clone(),
                    p.step.to_string(),
                    p.mean.to_string(),
                    p.stderr.to_string(),
                    p.seeds.to_string(),
                ])?;
            }
        }
        let bytes = w.into_inner().map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_svg(&self) -> String {
        let series: Vec<LineSeries> = self
            .curves
            .iter()
            .map(|c| LineSeries {
                label: c.label.clone(),
                points: c.points.iter().map(|p| (p.step as f64, p.mean)).collect(),
                band: Some(c.points.iter().map(|p| p.stderr).collect()),
            })
            .collect();
        line_chart(
            "Evaluation score",
            "environment steps",
            "marines per episode",
            &series,
            &format!(
                "Mean over seeds of a trailing moving average (window = {} eval points); bands show one standard error.",
                self.window
            ),
        )
    }

    /// Writes `comparison.csv` and `learning_curves.svg` into `out`.
    pub fn write(&self, out: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
        let csv_path = out.join("comparison.csv");
        fs::write(&csv_path, self.to_csv()?).map_err(|e| HarnessError::io(&csv_path, e))?;
        let svg_path = out.join("learning_curves.svg");
        fs::write(&svg_path, self.to_svg()).map_err(|e| HarnessError::io(&svg_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_is_trailing() {
        let m = moving_average(&[1.0, 2.0, 3.0, 4.0], 2);
        assert_eq!(m, vec![1.0, 1.5, 2.5, 3.5]);
        assert_eq!(moving_average(&[5.0, 7.0], 10), vec![5.0, 6.0]);
        assert_eq!(moving_average(&[5.0, 7.0], 1), vec![5.0, 7.0]);
    }

    #[test]
    fn mismatched_seed_steps_are_rejected() {
        let mut seeds = BTreeMap::new();
        seeds.insert(1, vec![(0, 1.0), (10, 2.0)]);
        seeds.insert(2, vec![(0, 1.0), (20, 2.0)]);
        let run = RunData {
            dir: PathBuf::from("x"),
            variant: "none".into(),
            seeds,
        };
        assert!(matches!(aggregate_seeds(&run, 1), Err(HarnessError::Cadence(_))));
    }
}
