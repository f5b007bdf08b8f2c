//! STEU runs across benchmark variants, plus the cross-variant summary.

use std::fs;
use std::path::Path;

use anyhow::Result;

use coe_core::steu::{run_bench, write_run, BenchCondition, BenchOptions, BenchVariant, RunReport, SteuItem};
use coe_core::Gateway;

pub const ALL_VARIANTS: [BenchVariant; 3] = [BenchVariant::NoMemory, BenchVariant::Memory, BenchVariant::AppraisalPrompts];

/// Runs one variant and writes it to `<out>/<variant>/`. An aborted run is
/// still written (with its `.incomplete` marker) and returned as partial.
pub fn run_variant(
    variant: BenchVariant,
    items: &[SteuItem],
    gateway: &Gateway,
    options: BenchOptions,
    out: &Path,
) -> Result<RunReport> {
    let report = match run_bench(&BenchCondition::new(variant), items, gateway, options) {
        Ok(report) => report,
        Err(abort) => {
            log::error!("{}: {}", variant.slug(), abort);
            abort.partial
        }
    };
    write_run(&out.join(variant.slug()), &report)?;
    Ok(report)
}

/// summary.csv: one row per variant with n, sum, mean and sd.
pub fn write_summary(out: &Path, reports: &[RunReport]) -> Result<()> {
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["condition", "n", "sum", "mean", "sd", "complete"])?;
    for r in reports {
        w.write_record([
            r.condition.slug().to_string(),
            r.n.to_string(),
            r.sum.to_string(),
            format!("{:.4}", r.mean),
            format!("{:.4}", r.sd),
            r.complete.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// True when totals strictly decrease appraisal > memory > no-memory.
pub fn strict_ranking(reports: &[RunReport]) -> Option<bool> {
    let sum = |v: BenchVariant| reports.iter().find(|r| r.condition == v).map(|r| r.sum);
    let (a, m, n) = (
        sum(BenchVariant::AppraisalPrompts)?,
        sum(BenchVariant::Memory)?,
        sum(BenchVariant::NoMemory)?,
    );
    Some(a > m && m > n)
}
