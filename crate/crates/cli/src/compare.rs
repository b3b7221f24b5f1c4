use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use driftguard_core::metrics::mann_whitney_u;
use driftguard_core::scenario::{Approach, PeriodStats, RunReport};
use serde::Serialize;

/// Loads every run report in `dir`. JSON files that are not reports (the
/// baseline's model export, for one) are skipped.
pub fn load_reports(dir: &Path) -> Result<(Vec<RunReport>, Vec<PathBuf>)> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        let file = std::fs::File::open(&p).with_context(|| format!("opening {}", p.display()))?;
        match RunReport::read_json(std::io::BufReader::new(file)) {
            Ok(r) => reports.push(r),
            Err(_) => skipped.push(p),
        }
    }
    Ok((reports, skipped))
}

#[derive(Debug, Serialize)]
pub struct Row {
    pub label: String,
    pub approach: Approach,
    pub rsm: f64,
    pub utility: f64,
    pub pre_drift_rsm: Option<f64>,
    pub drift_rsm: Option<f64>,
    pub drift_utility: Option<f64>,
    pub verifications: usize,
    pub classes: usize,
}

pub fn rows(reports: &[RunReport]) -> Vec<Row> {
    let mut rows: Vec<Row> = reports
        .iter()
        .map(|r| {
            let s = &r.summary;
            Row {
                label: r.label.clone(),
                approach: r.approach,
                rsm: s.overall.rsm,
                utility: s.overall.mean_utility,
                pre_drift_rsm: s.pre_drift.as_ref().map(|p| p.rsm),
                drift_rsm: s.drift.as_ref().map(|p| p.rsm),
                drift_utility: s.drift.as_ref().map(|p| p.mean_utility),
                verifications: s.total_verifications,
                classes: s.final_class_count,
            }
        })
        .collect();
    rows.sort_by(|a, b| (&a.label, a.approach).cmp(&(&b.label, b.approach)));
    rows
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn drift_utilities(r: &RunReport) -> Vec<f64> {
    let Some(PeriodStats { first_cycle, last_cycle, .. }) = r.summary.drift else {
        return Vec::new();
    };
    r.records.iter().filter(|x| (first_cycle..=last_cycle).contains(&x.cycle)).map(|x| x.utility).collect()
}

/// Per-run table, per-approach means, and the effect size of operator
/// feedback where both lifelong variants ran on the same scenarios.
pub fn render(reports: &[RunReport]) -> String {
    let rows = rows(reports);
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:width$}  {:14}  {:>6}  {:>7}  {:>8}  {:>9}  {:>9}  {:>7}",
        "label", "approach", "rsm", "utility", "pre rsm", "drift rsm", "drift utl", "classes"
    );
    for r in &rows {
        let _ = writeln!(
            out,
            "{:width$}  {:14}  {:>6.3}  {:>7.3}  {:>8}  {:>9}  {:>9}  {:>7}",
            r.label,
            r.approach.slug(),
            r.rsm,
            r.utility,
            cell(r.pre_drift_rsm),
            cell(r.drift_rsm),
            cell(r.drift_utility),
            r.classes
        );
    }

    let _ = writeln!(out, "\nper approach (means over scenarios)");
    let _ = writeln!(out, "{:14}  {:>4}  {:>6}  {:>9}  {:>9}", "approach", "runs", "rsm", "drift rsm", "drift utl");
    for a in Approach::ALL {
        let of: Vec<&Row> = rows.iter().filter(|r| r.approach == a).collect();
        if of.is_empty() {
            continue;
        }
        let rsm: Vec<f64> = of.iter().map(|r| r.rsm).collect();
        let drift: Vec<f64> = of.iter().filter_map(|r| r.drift_rsm).collect();
        let util: Vec<f64> = of.iter().filter_map(|r| r.drift_utility).collect();
        let _ = writeln!(
            out,
            "{:14}  {:>4}  {:>6}  {:>9}  {:>9}",
            a.slug(),
            of.len(),
            cell(mean(&rsm)),
            cell(mean(&drift)),
            cell(mean(&util))
        );
    }

    // Scenarios differ in their operator label, so pair the lifelong
    // variants on everything else.
    let key = |r: &RunReport| (r.spec.preference, r.spec.appearance.slug(), r.spec.seed);
    let mut pairs: BTreeMap<_, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in reports {
        let slot = pairs.entry(key(r)).or_default();
        match r.approach {
            Approach::LsaFeedback => slot.0.extend(drift_utilities(r)),
            Approach::LsaNofeedback => slot.1.extend(drift_utilities(r)),
            _ => {}
        }
    }
    let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_values().filter(|(a, b)| !a.is_empty() && !b.is_empty()).fold(
        (Vec::new(), Vec::new()),
        |(mut xa, mut xb), (a, b)| {
            xa.extend(a);
            xb.extend(b);
            (xa, xb)
        },
    );
    if let Ok(u) = mann_whitney_u(&a, &b) {
        let _ = writeln!(
            out,
            "\nfeedback effect on drift utility: P(with > without) = {u:.4} over {} / {} cycles",
            a.len(),
            b.len()
        );
    }
    out
}

pub fn write_csv(reports: &[RunReport], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows(reports) {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
