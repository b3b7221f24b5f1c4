use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Approach, ScenarioContext, ScenarioSpec, RSM_WINDOW};
use crate::error::{Error, Result};
use crate::gmm::ClassId;
use crate::lifelong::EvolutionEvent;
use crate::metrics::{rsm, rsm_windows};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// What one approach selected in one cycle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: u32,
    pub approach: Approach,
    pub option_id: u16,
    pub pl: f64,
    pub ec: f64,
    pub utility: f64,
    /// Rank of the selected option's true cluster.
    pub rank: usize,
    /// Best rank available in the cycle.
    pub ideal_rank: usize,
    /// Class the approach's own classifier assigned; none for the baseline.
    pub class_id: Option<ClassId>,
    pub verifications: usize,
    pub fallback: bool,
    /// Classes known to the approach at the end of the cycle.
    pub class_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RsmWindow {
    pub id: usize,
    pub start: u32,
    pub end: u32,
    pub rsm: f64,
    pub mean_utility: f64,
    pub mean_pl: f64,
    pub mean_ec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodStats {
    pub first_cycle: u32,
    pub last_cycle: u32,
    pub rsm: f64,
    pub mean_utility: f64,
    pub mean_pl: f64,
    pub mean_ec: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub overall: PeriodStats,
    /// Cycles before the first class starts appearing.
    pub pre_drift: Option<PeriodStats>,
    /// Cycles from the first appearance on.
    pub drift: Option<PeriodStats>,
    pub total_verifications: usize,
    pub fallbacks: usize,
    pub final_class_count: usize,
    pub ideal_class_count: usize,
    pub novel_classes: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub label: String,
    pub approach: Approach,
    pub spec: ScenarioSpec,
    pub training_window: u32,
    pub drift_start: Option<u32>,
    pub ideal_ranking: Vec<ClassId>,
    pub summary: RunSummary,
    pub rsm_windows: Vec<RsmWindow>,
    pub evolution: Vec<EvolutionEvent>,
    pub records: Vec<CycleRecord>,
}

#[derive(Serialize)]
struct RecordRow<'a> {
    cycle: u32,
    approach: &'a str,
    option_id: u16,
    pl: f64,
    ec: f64,
    utility: f64,
    rank: usize,
    ideal_rank: usize,
}

#[derive(Serialize)]
struct MetricRow<'a> {
    cycle: u32,
    approach: &'a str,
    pl: f64,
    ec: f64,
    utility: f64,
    selected_rank: usize,
    ideal_rank: usize,
    rsm_window_id: usize,
    rsm: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn period(records: &[CycleRecord], m: usize) -> Result<Option<PeriodStats>> {
    let (Some(first), Some(last)) = (records.first(), records.last()) else {
        return Ok(None);
    };
    let r: Vec<usize> = records.iter().map(|x| x.rank).collect();
    let s: Vec<usize> = records.iter().map(|x| x.ideal_rank).collect();
    Ok(Some(PeriodStats {
        first_cycle: first.cycle,
        last_cycle: last.cycle,
        rsm: rsm(&r, &s, m)?,
        mean_utility: mean(records.iter().map(|x| x.utility)),
        mean_pl: mean(records.iter().map(|x| x.pl)),
        mean_ec: mean(records.iter().map(|x| x.ec)),
    }))
}

impl RunReport {
    pub fn new(
        ctx: &ScenarioContext,
        approach: Approach,
        records: Vec<CycleRecord>,
        evolution: Vec<EvolutionEvent>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidState("a run report needs at least one cycle".into()));
        }
        let m = ctx.ideal.class_count();
        let r: Vec<usize> = records.iter().map(|x| x.rank).collect();
        let s: Vec<usize> = records.iter().map(|x| x.ideal_rank).collect();
        let window_rsm = rsm_windows(&r, &s, m, RSM_WINDOW)?;
        let rsm_windows = records
            .chunks(RSM_WINDOW)
            .zip(window_rsm)
            .enumerate()
            .map(|(id, (chunk, rsm))| RsmWindow {
                id,
                start: chunk[0].cycle,
                end: chunk[chunk.len() - 1].cycle,
                rsm,
                mean_utility: mean(chunk.iter().map(|x| x.utility)),
                mean_pl: mean(chunk.iter().map(|x| x.pl)),
                mean_ec: mean(chunk.iter().map(|x| x.ec)),
            })
            .collect();
        let drift_start = ctx.drift_start();
        let split = drift_start.map_or(records.len(), |d| records.iter().take_while(|x| x.cycle < d).count());
        let summary = RunSummary {
            overall: period(&records, m)?.expect("records are nonempty"),
            pre_drift: period(&records[..split], m)?,
            drift: period(&records[split..], m)?,
            total_verifications: records.iter().map(|x| x.verifications).sum(),
            fallbacks: records.iter().filter(|x| x.fallback).count(),
            final_class_count: records.last().map_or(0, |x| x.class_count),
            ideal_class_count: m,
            novel_classes: ctx.has_novel_classes(),
        };
        Ok(Self {
            schema_version: REPORT_SCHEMA_VERSION,
            label: ctx.spec.label(),
            approach,
            spec: ctx.spec.clone(),
            training_window: ctx.training_window,
            drift_start,
            ideal_ranking: ctx.ideal.ranking.clone(),
            summary,
            rsm_windows,
            evolution,
            records,
        })
    }

    fn ensure_nonempty(&self) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::InvalidState("nothing to export: the report has no cycles".into()));
        }
        Ok(())
    }

    /// `cycle,approach,option_id,pl,ec,utility,rank,ideal_rank`
    pub fn write_records_csv<W: Write>(&self, out: W) -> Result<()> {
        self.ensure_nonempty()?;
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(RecordRow {
                cycle: r.cycle,
                approach: r.approach.slug(),
                option_id: r.option_id,
                pl: r.pl,
                ec: r.ec,
                utility: r.utility,
                rank: r.rank,
                ideal_rank: r.ideal_rank,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-cycle metrics with the RSM of the window each cycle falls in:
    /// `cycle,approach,pl,ec,utility,selected_rank,ideal_rank,rsm_window_id,rsm`
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<()> {
        self.ensure_nonempty()?;
        let mut w = csv::Writer::from_writer(out);
        for (i, r) in self.records.iter().enumerate() {
            let window = &self.rsm_windows[i / RSM_WINDOW];
            w.serialize(MetricRow {
                cycle: r.cycle,
                approach: r.approach.slug(),
                pl: r.pl,
                ec: r.ec,
                utility: r.utility,
                selected_rank: r.rank,
                ideal_rank: r.ideal_rank,
                rsm_window_id: window.id,
                rsm: window.rsm,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        self.ensure_nonempty()?;
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn read_json(input: impl std::io::Read) -> Result<Self> {
        let report: Self = serde_json::from_reader(input)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!(
                "report schema {} is not supported (expected {REPORT_SCHEMA_VERSION})",
                report.schema_version
            )));
        }
        Ok(report)
    }

    /// Writes `<stem>.records.csv`, `<stem>.metrics.csv` and `<stem>.json`
    /// into `dir` and returns their paths.
    pub fn export(&self, dir: &Path, stem: &str) -> Result<[std::path::PathBuf; 3]> {
        self.ensure_nonempty()?;
        std::fs::create_dir_all(dir)?;
        let paths = [
            dir.join(format!("{stem}.records.csv")),
            dir.join(format!("{stem}.metrics.csv")),
            dir.join(format!("{stem}.json")),
        ];
        self.write_records_csv(std::io::BufWriter::new(std::fs::File::create(&paths[0])?))?;
        self.write_metrics_csv(std::io::BufWriter::new(std::fs::File::create(&paths[1])?))?;
        let mut json = std::io::BufWriter::new(std::fs::File::create(&paths[2])?);
        self.write_json(&mut json)?;
        json.flush()?;
        Ok(paths)
    }

    /// File stem `<label>_<approach>`.
    pub fn stem(&self) -> String {
        format!("{}_{}", self.label, self.approach)
    }
}
