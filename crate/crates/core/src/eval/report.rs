use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::overlap::{burden_stats, global_dice, OverlapCounts};
use super::surface::{surface_distances, SurfaceDistances};
use crate::cascade::tumor_burden;
use crate::error::{Error, Result};
use crate::volio::LabelVolume;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureMetrics {
    pub counts: OverlapCounts,
    pub dice: f64,
    pub voe: f64,
    pub rvd: Option<f64>,
    /// `None` when either mask is empty (failed surface evaluation).
    pub surface: Option<SurfaceDistances>,
}

impl StructureMetrics {
    pub fn of(pred: &crate::volio::Mask, gt: &crate::volio::Mask) -> Result<Self> {
        let counts = OverlapCounts::of(pred, gt)?;
        let surface = match surface_distances(pred, gt) {
            Ok(s) => Some(s),
            Err(Error::EmptyMask(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self { counts, dice: counts.dice(), voe: counts.voe(), rvd: counts.rvd(), surface })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseMetrics {
    pub case: String,
    pub liver: StructureMetrics,
    pub tumor: StructureMetrics,
    pub burden_pred: f64,
    pub burden_true: f64,
}

/// Liver is `label ≥ 1`, tumor is `label == 2`.
pub fn evaluate_case(case: &str, pred: &LabelVolume, gt: &LabelVolume) -> Result<CaseMetrics> {
    pred.check_same_grid(gt)?;
    Ok(CaseMetrics {
        case: case.to_string(),
        liver: StructureMetrics::of(&pred.liver_mask(), &gt.liver_mask())?,
        tumor: StructureMetrics::of(&pred.tumor_mask(), &gt.tumor_mask())?,
        burden_pred: tumor_burden(pred),
        burden_true: tumor_burden(gt),
    })
}

/// Aggregates of one structure across cases.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureSummary {
    pub dice_per_case: f64,
    pub dice_global: f64,
    pub voe: f64,
    /// Mean over cases with non-empty ground truth.
    pub rvd: f64,
    /// Means over cases where both masks are non-empty.
    pub assd: f64,
    pub mssd: f64,
    pub rmsd: f64,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl StructureSummary {
    pub fn of(rows: &[StructureMetrics]) -> Result<Self> {
        let counts: Vec<OverlapCounts> = rows.iter().map(|r| r.counts).collect();
        let surf = || rows.iter().filter_map(|r| r.surface);
        Ok(Self {
            dice_per_case: mean(rows.iter().map(|r| r.dice)),
            dice_global: global_dice(&counts)?,
            voe: mean(rows.iter().map(|r| r.voe)),
            rvd: mean(rows.iter().filter_map(|r| r.rvd)),
            assd: mean(surf().map(|s| s.assd_mm)),
            mssd: mean(surf().map(|s| s.mssd_mm)),
            rmsd: mean(surf().map(|s| s.rmsd_mm)),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryReport {
    pub rows: Vec<CaseMetrics>,
    pub liver: StructureSummary,
    pub tumor: StructureSummary,
    pub burden_rmse: f64,
    pub burden_max_error: f64,
}

impl SummaryReport {
    /// Rows are sorted by case id so aggregation order is stable.
    pub fn new(mut rows: Vec<CaseMetrics>) -> Result<Self> {
        rows.sort_by(|a, b| a.case.cmp(&b.case));
        let liver: Vec<_> = rows.iter().map(|r| r.liver).collect();
        let tumor: Vec<_> = rows.iter().map(|r| r.tumor).collect();
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.burden_pred, r.burden_true)).collect();
        let (burden_rmse, burden_max_error) = burden_stats(&pairs)?;
        Ok(Self {
            liver: StructureSummary::of(&liver)?,
            tumor: StructureSummary::of(&tumor)?,
            burden_rmse,
            burden_max_error,
            rows,
        })
    }
}

const LIVER_COLUMNS: [&str; 7] = ["Dice / case", "Dice global", "VOE", "RVD", "ASSD", "MSSD", "RMSD"];
// The tumor table labels the maximum surface distance "MSD".
const TUMOR_COLUMNS: [&str; 7] = ["Dice / case", "Dice global", "VOE", "RVD", "ASSD", "MSD", "RMSD"];
const BURDEN_COLUMNS: [&str; 2] = ["RMSE", "Max Error"];

const CSV_HEADER: &str = "case,structure,dice,voe,rvd,assd_mm,mssd_mm,rmsd_mm,pred_voxels,gt_voxels,burden_pred,burden_true";

fn table(out: &mut String, title: &str, columns: &[&str], values: Option<&[f64]>) {
    let width = columns.iter().map(|c| c.len()).max().unwrap_or(8).max(10) + 2;
    let _ = writeln!(out, "{title}");
    for c in columns {
        let _ = write!(out, "{c:>width$}");
    }
    out.push('\n');
    if let Some(values) = values {
        for v in values {
            let _ = write!(out, "{:>width$}", if v.is_finite() { format!("{v:.4}") } else { "n/a".into() });
        }
        out.push('\n');
    }
    out.push('\n');
}

fn structure_values(s: &StructureSummary) -> [f64; 7] {
    [s.dice_per_case, s.dice_global, s.voe, s.rvd, s.assd, s.mssd, s.rmsd]
}

fn opt(v: Option<f64>) -> String {
    v.map_or("nan".to_string(), |v| format!("{v:.6}"))
}

fn csv_row(out: &mut String, r: &CaseMetrics, name: &str, s: &StructureMetrics) {
    let surf = s.surface;
    let _ = writeln!(
        out,
        "{},{name},{:.6},{:.6},{},{},{},{},{},{},{:.6},{:.6}",
        r.case,
        s.dice,
        s.voe,
        opt(s.rvd),
        opt(surf.map(|v| v.assd_mm)),
        opt(surf.map(|v| v.mssd_mm)),
        opt(surf.map(|v| v.rmsd_mm)),
        s.counts.pred,
        s.counts.gt,
        r.burden_pred,
        r.burden_true,
    );
}

/// Companion CSV path: the report path with a `.csv` extension.
pub fn csv_path(report: &Path) -> PathBuf {
    report.with_extension("csv")
}

/// Renders the text and CSV reports. An empty case list yields header-only
/// output.
pub fn render_report(rows: &[CaseMetrics]) -> Result<(String, String)> {
    let summary = if rows.is_empty() { None } else { Some(SummaryReport::new(rows.to_vec())?) };
    let mut text = String::new();
    let liver = summary.as_ref().map(|s| structure_values(&s.liver));
    let tumor = summary.as_ref().map(|s| structure_values(&s.tumor));
    let burden = summary.as_ref().map(|s| [s.burden_rmse, s.burden_max_error]);
    table(&mut text, "Liver segmentation", &LIVER_COLUMNS, liver.as_ref().map(|v| &v[..]));
    table(&mut text, "Tumor segmentation", &TUMOR_COLUMNS, tumor.as_ref().map(|v| &v[..]));
    table(&mut text, "Tumor burden", &BURDEN_COLUMNS, burden.as_ref().map(|v| &v[..]));
    let mut csv = format!("{CSV_HEADER}\n");
    if let Some(s) = &summary {
        let _ = writeln!(text, "cases = {}", s.rows.len());
        for r in &s.rows {
            csv_row(&mut csv, r, "liver", &r.liver);
            csv_row(&mut csv, r, "tumor", &r.tumor);
        }
        for (name, st) in [("liver", &s.liver), ("tumor", &s.tumor)] {
            let _ = writeln!(
                csv,
                "aggregate,{name},dice_per_case={:.6},dice_global={:.6},voe={:.6},rvd={:.6},assd={:.6},mssd={:.6},rmsd={:.6}",
                st.dice_per_case, st.dice_global, st.voe, st.rvd, st.assd, st.mssd, st.rmsd
            );
        }
        let _ = writeln!(csv, "aggregate,burden,rmse={:.6},max_error={:.6}", s.burden_rmse, s.burden_max_error);
    }
    Ok((text, csv))
}

pub fn write_report(rows: &[CaseMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (text, csv) = render_report(rows)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    let c = csv_path(path);
    std::fs::write(&c, csv).map_err(|e| Error::io(&c, e))
}
