use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

use crate::config::config_err;
use crate::pipeline::{PhaseSummary, THRESHOLDS};

/// Finds every `summary.json` under the given files or directories.
pub fn collect(paths: &[PathBuf]) -> anyhow::Result<Vec<PhaseSummary>> {
    let mut files = Vec::new();
    for p in paths {
        if !p.exists() {
            return Err(config_err(format!("{} does not exist", p.display())));
        }
        walk(p, &mut files)?;
    }
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = fs::read_to_string(&f)?;
        let mut s: Vec<PhaseSummary> = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        out.append(&mut s);
    }
    Ok(out)
}

fn walk(p: &Path, files: &mut Vec<PathBuf>) -> anyhow::Result<()> {
    if p.is_file() {
        files.push(p.to_path_buf());
        return Ok(());
    }
    for entry in fs::read_dir(p)? {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, files)?;
        } else if path.file_name().is_some_and(|n| n == "summary.json") {
            files.push(path);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub env: String,
    pub form: String,
    pub phase: String,
    pub runs: usize,
    pub success_mean: f64,
    pub success_std: f64,
    pub units_mean: f64,
    /// Mean units to each threshold over the runs that reached it, with the count.
    pub units_to: Vec<(f64, Option<f64>, usize)>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

pub fn aggregate(summaries: &[PhaseSummary]) -> Vec<ReportRow> {
    let mut groups: BTreeMap<(String, String, String), Vec<&PhaseSummary>> = BTreeMap::new();
    for s in summaries {
        let form = s.form.map_or("none".to_string(), |f| f.to_string());
        groups
            .entry((s.env.as_str().to_string(), form, s.phase.as_str().to_string()))
            .or_default()
            .push(s);
    }
    groups
        .into_iter()
        .map(|((env, form, phase), runs)| {
            let succ: Vec<f64> = runs.iter().filter_map(|s| s.final_success).collect();
            let (success_mean, success_std) = mean_std(&succ);
            let units: Vec<f64> = runs.iter().map(|s| s.advice_units as f64).collect();
            let units_to = THRESHOLDS
                .iter()
                .map(|&t| {
                    let hit: Vec<f64> = runs
                        .iter()
                        .filter_map(|s| s.units_to.iter().find(|(th, _)| *th == t).and_then(|(_, u)| *u))
                        .map(|u| u as f64)
                        .collect();
                    let m = (!hit.is_empty()).then(|| mean_std(&hit).0);
                    (t, m, hit.len())
                })
                .collect();
            ReportRow {
                env,
                form,
                phase,
                runs: runs.len(),
                success_mean,
                success_std,
                units_mean: mean_std(&units).0,
                units_to,
            }
        })
        .collect()
}

pub fn print_table(rows: &[ReportRow]) {
    print!("{:<10} {:<16} {:<10} {:>4} {:>15} {:>10}", "env", "form", "phase", "runs", "success", "units");
    for t in THRESHOLDS {
        print!(" {:>14}", format!("units@{t}"));
    }
    println!();
    for r in rows {
        print!(
            "{:<10} {:<16} {:<10} {:>4} {:>15} {:>10.0}",
            r.env,
            r.form,
            r.phase,
            r.runs,
            format!("{:.3}±{:.3}", r.success_mean, r.success_std),
            r.units_mean
        );
        for (_, m, n) in &r.units_to {
            let cell = match m {
                Some(m) => format!("{m:.0} ({n}/{})", r.runs),
                None => "-".to_string(),
            };
            print!(" {cell:>14}");
        }
        println!();
    }
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["env", "form", "phase", "runs", "success_mean", "success_std", "units_mean"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    for t in THRESHOLDS {
        header.push(format!("units_to_{t}"));
        header.push(format!("reached_{t}"));
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.env.clone(),
            r.form.clone(),
            r.phase.clone(),
            r.runs.to_string(),
            r.success_mean.to_string(),
            r.success_std.to_string(),
            r.units_mean.to_string(),
        ];
        for (_, m, n) in &r.units_to {
            rec.push(m.map_or(String::new(), |m| m.to_string()));
            rec.push(n.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
