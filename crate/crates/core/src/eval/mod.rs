//! Segmentation metrics: overlap, symmetric surface distances, tumor
//! burden and the text/CSV report.

mod overlap;
mod report;
mod surface;

pub use overlap::{burden_stats, dice, global_dice, overlap_metrics, OverlapCounts};
pub use report::{
    csv_path, evaluate_case, render_report, write_report, CaseMetrics, StructureMetrics, StructureSummary,
    SummaryReport,
};
pub use surface::{
    directed_surface_distances, nearest_feature, surface_distances, surface_voxels, voxel_distance, SurfaceDistances,
};
