//! Report assembly: merge computed audit sections into one document, derive
//! the flag list from section content, and render deterministic JSON and
//! Markdown. Rendering the same report twice yields identical bytes, and
//! both renderings print numbers through the same formatter so every metric
//! string appears verbatim in both.

use serde::Serialize;
use serde_json::json;
use std::fmt::Write as _;

use crate::annotations::ClassLabel;
use crate::config::AuditConfig;
use crate::consistency::{
    AgreementReport, CooccurrenceReport, GranularityConflict, WorkloadRow,
};
use crate::detection::DetectionReport;
use crate::fairness::{parity_flags, ParityReport};
use crate::metadata::{AgeDensityReport, MetadataReport};
use crate::spatial::DepositMode;

pub const TOOL_NAME: &str = "radqc";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A report section: either computed content or a skip with its reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Section<T> {
    Computed { data: T },
    Skipped { reason: String },
}

impl<T> Section<T> {
    pub fn computed(data: T) -> Section<T> {
        Section::Computed { data }
    }

    pub fn skipped(reason: &str) -> Section<T> {
        Section::Skipped {
            reason: reason.to_owned(),
        }
    }

    pub fn data(&self) -> Option<&T> {
        match self {
            Section::Computed { data } => Some(data),
            Section::Skipped { .. } => None,
        }
    }
}

/// Density curve summary; the full curves live in the density CSV artifact.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveSummary {
    pub n: usize,
    pub bandwidth: f64,
    pub mean_age: f64,
    pub argmax_age: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensitySummary {
    pub finding: CurveSummary,
    pub no_finding: CurveSummary,
    pub n_excluded_finding: usize,
    pub n_excluded_no_finding: usize,
    /// Artifact holding the full curves.
    pub csv_file: String,
}

impl DensitySummary {
    pub fn from_report(report: &AgeDensityReport, csv_file: &str) -> DensitySummary {
        let summarize = |c: &crate::metadata::DensityCurve| CurveSummary {
            n: c.n,
            bandwidth: c.bandwidth,
            mean_age: c.mean_age(),
            argmax_age: c.argmax_age(),
        };
        DensitySummary {
            finding: summarize(&report.finding),
            no_finding: summarize(&report.no_finding),
            n_excluded_finding: report.n_excluded[&crate::metadata::IllnessGroup::Finding],
            n_excluded_no_finding: report.n_excluded[&crate::metadata::IllnessGroup::NoFinding],
            csv_file: csv_file.to_owned(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetadataSection {
    pub validity: MetadataReport,
    /// Age-vs-illness comparison; absent with a reason when it cannot run
    /// (no annotations, or a group without valid ages).
    pub density: Section<DensitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsistencySection {
    pub agreement: AgreementReport,
    pub workload: Vec<WorkloadRow>,
    pub cooccurrence: CooccurrenceReport,
    pub granularity_conflicts: Vec<GranularityConflict>,
}

/// One class's spatial outcome, heatmap artifact included.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialClassEntry {
    pub label: ClassLabel,
    pub score: f64,
    pub exempt: bool,
    pub flagged: bool,
    pub n_boxes: usize,
    pub n_out_of_frame: usize,
    pub n_skipped_images: usize,
    pub heatmap_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpatialSection {
    pub grid_size: (usize, usize),
    pub deposit: DepositMode,
    pub asymmetry_threshold: f64,
    pub per_class: Vec<SpatialClassEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sections {
    pub metadata: Section<MetadataSection>,
    pub consistency: Section<ConsistencySection>,
    pub spatial: Section<SpatialSection>,
    pub detection: Section<DetectionReport>,
    pub fairness: Section<ParityReport>,
}

impl Sections {
    /// All sections skipped with the same reason; replace the computed ones.
    pub fn skipped(reason: &str) -> Sections {
        Sections {
            metadata: Section::skipped(reason),
            consistency: Section::skipped(reason),
            spatial: Section::skipped(reason),
            detection: Section::skipped(reason),
            fairness: Section::skipped(reason),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportFlag {
    pub section: String,
    pub severity: String,
    pub message: String,
    pub evidence: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub tool: ToolInfo,
    pub config: AuditConfig,
    pub sections: Sections,
    /// Union of all section-level flags, derived from section content.
    pub flags: Vec<ReportFlag>,
}

/// Assemble the final report. The flag list is recomputed here from the
/// section contents, so it is exactly the union of section-level flags:
/// spatial asymmetry flags first, then fairness parity flags.
pub fn merge_report(config: &AuditConfig, sections: Sections) -> AuditReport {
    let mut flags = Vec::new();
    if let Some(spatial) = sections.spatial.data() {
        for entry in &spatial.per_class {
            if entry.flagged {
                flags.push(ReportFlag {
                    section: "spatial".to_owned(),
                    severity: "warning".to_owned(),
                    message: format!(
                        "{} heatmap symmetry score {} exceeds the asymmetry threshold {}",
                        entry.label.name(),
                        entry.score,
                        spatial.asymmetry_threshold
                    ),
                    evidence: json!({
                        "label": entry.label,
                        "score": entry.score,
                        "threshold": spatial.asymmetry_threshold,
                        "n_boxes": entry.n_boxes,
                    }),
                });
            }
        }
    }
    if let Some(fairness) = sections.fairness.data() {
        for flag in parity_flags(fairness, config.thresholds.gap, config.thresholds.min_support) {
            flags.push(ReportFlag {
                section: "fairness".to_owned(),
                severity: "warning".to_owned(),
                message: format!(
                    "{}: {} gap {} between {} ({}) and {} ({}) on {} exceeds {}",
                    flag.label.name(),
                    flag.metric.name(),
                    flag.gap,
                    flag.max_subgroup,
                    flag.max_value,
                    flag.min_subgroup,
                    flag.min_value,
                    flag.feature.name(),
                    config.thresholds.gap
                ),
                evidence: serde_json::to_value(&flag).expect("flag serializes"),
            });
        }
    }
    AuditReport {
        tool: ToolInfo {
            name: TOOL_NAME,
            version: TOOL_VERSION,
        },
        config: config.clone(),
        sections,
        flags,
    }
}

pub fn render_json(report: &AuditReport) -> String {
    let mut out = serde_json::to_string_pretty(report).expect("report serializes");
    out.push('\n');
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| x.to_string())
}

pub fn render_markdown(report: &AuditReport) -> String {
    let mut md = String::new();
    let w = &mut md;
    let _ = writeln!(w, "# {TOOL_NAME} audit report\n");
    let _ = writeln!(w, "Tool version {}.\n", report.tool.version);

    let _ = writeln!(w, "## Flags\n");
    if report.flags.is_empty() {
        let _ = writeln!(w, "No flags raised.\n");
    } else {
        let _ = writeln!(w, "| section | severity | message |");
        let _ = writeln!(w, "|---|---|---|");
        for f in &report.flags {
            let _ = writeln!(w, "| {} | {} | {} |", f.section, f.severity, f.message);
        }
        let _ = writeln!(w);
    }

    let _ = writeln!(w, "## Metadata\n");
    match &report.sections.metadata {
        Section::Skipped { reason } => {
            let _ = writeln!(w, "_Skipped: {reason}_\n");
        }
        Section::Computed { data } => {
            let v = &data.validity;
            let _ = writeln!(w, "| statistic | value |");
            let _ = writeln!(w, "|---|---|");
            let _ = writeln!(w, "| images | {} |", v.n_images);
            let _ = writeln!(w, "| missing age fraction | {} |", opt(v.missing_age_frac));
            let _ = writeln!(w, "| missing sex fraction | {} |", opt(v.missing_sex_frac));
            let _ = writeln!(w, "| valid age fraction | {} |", opt(v.valid_age_frac));
            let _ = writeln!(w, "| children (ages 1-17) | {} |", v.children.len());
            let _ = writeln!(w, "| out-of-range ages | {} |", v.out_of_range_ages.len());
            let _ = writeln!(w);
            let _ = writeln!(w, "Sex distribution:\n");
            let _ = writeln!(w, "| sex | fraction |");
            let _ = writeln!(w, "|---|---|");
            for (sex, frac) in &v.sex_distribution {
                let _ = writeln!(w, "| {} | {} |", sex.name(), frac);
            }
            let _ = writeln!(w);
            let _ = writeln!(w, "Photometric interpretation:\n");
            let _ = writeln!(w, "| value | fraction |");
            let _ = writeln!(w, "|---|---|");
            for (value, frac) in &v.photometric_distribution {
                let _ = writeln!(w, "| {value} | {frac} |");
            }
            let _ = writeln!(w);
            match &data.density {
                Section::Skipped { reason } => {
                    let _ = writeln!(w, "_Age-illness density skipped: {reason}_\n");
                }
                Section::Computed { data: d } => {
                    let _ = writeln!(w, "Age vs illness density (full curves in `{}`):\n", d.csv_file);
                    let _ = writeln!(w, "| group | n | bandwidth | mean age | peak age |");
                    let _ = writeln!(w, "|---|---|---|---|---|");
                    for (name, c) in [("finding", &d.finding), ("no finding", &d.no_finding)] {
                        let _ = writeln!(
                            w,
                            "| {name} | {} | {} | {} | {} |",
                            c.n, c.bandwidth, c.mean_age, c.argmax_age
                        );
                    }
                    let _ = writeln!(w);
                }
            }
        }
    }

    let _ = writeln!(w, "## Consistency\n");
    match &report.sections.consistency {
        Section::Skipped { reason } => {
            let _ = writeln!(w, "_Skipped: {reason}_\n");
        }
        Section::Computed { data } => {
            let _ = writeln!(w, "Label-set agreement:\n");
            let _ = writeln!(w, "| annotator | images | at least one | all colleagues |");
            let _ = writeln!(w, "|---|---|---|---|");
            for r in &data.agreement.per_rad {
                let _ = writeln!(
                    w,
                    "| {} | {} | {} | {} |",
                    r.rad_id, r.n_images, r.at_least_one, r.both_all
                );
            }
            let _ = writeln!(w);
            if !data.agreement.groups.is_empty() {
                let _ = writeln!(w, "Group agreement (image-weighted):\n");
                let _ = writeln!(w, "| group | images | at least one | all colleagues |");
                let _ = writeln!(w, "|---|---|---|---|");
                for g in &data.agreement.groups {
                    let _ = writeln!(
                        w,
                        "| {} | {} | {} | {} |",
                        g.group, g.n_images, g.at_least_one, g.both_all
                    );
                }
                let _ = writeln!(w);
            }
            let _ = writeln!(w, "Workload:\n");
            let _ = writeln!(w, "| annotator | images | finding | no finding |");
            let _ = writeln!(w, "|---|---|---|---|");
            for r in &data.workload {
                let _ = writeln!(
                    w,
                    "| {} | {} | {} | {} |",
                    r.rad_id, r.n_images, r.n_finding, r.n_no_finding
                );
            }
            let _ = writeln!(w);
            let _ = writeln!(
                w,
                "Cross-label co-occurrence (IoU at or above {}): {} label pairs.\n",
                data.cooccurrence.iou_threshold,
                data.cooccurrence.pairs.len()
            );
            for p in &data.cooccurrence.overlap_pairs {
                let _ = writeln!(
                    w,
                    "- {} and {}: {} co-located box pairs, mean IoU {}",
                    p.a.name(),
                    p.b.name(),
                    p.count,
                    opt(p.mean_iou)
                );
            }
            let _ = writeln!(w);
            let _ = writeln!(
                w,
                "Granularity conflicts (one coarse box swallowing several fine boxes): {}.\n",
                data.granularity_conflicts.len()
            );
        }
    }

    let _ = writeln!(w, "## Spatial\n");
    match &report.sections.spatial {
        Section::Skipped { reason } => {
            let _ = writeln!(w, "_Skipped: {reason}_\n");
        }
        Section::Computed { data } => {
            let _ = writeln!(
                w,
                "Grid {}x{}, asymmetry threshold {}.\n",
                data.grid_size.0, data.grid_size.1, data.asymmetry_threshold
            );
            let _ = writeln!(w, "| class | boxes | symmetry score | exempt | flagged |");
            let _ = writeln!(w, "|---|---|---|---|---|");
            for e in &data.per_class {
                let _ = writeln!(
                    w,
                    "| {} | {} | {} | {} | {} |",
                    e.label.name(),
                    e.n_boxes,
                    e.score,
                    e.exempt,
                    e.flagged
                );
            }
            let _ = writeln!(w);
        }
    }

    let _ = writeln!(w, "## Detection\n");
    match &report.sections.detection {
        Section::Skipped { reason } => {
            let _ = writeln!(w, "_Skipped: {reason}_\n");
        }
        Section::Computed { data } => {
            let _ = writeln!(w, "IoU threshold {}.\n", data.iou_threshold);
            let _ = writeln!(w, "| class | ground truth | predictions | AP |");
            let _ = writeln!(w, "|---|---|---|---|");
            for c in &data.per_class {
                let _ = writeln!(
                    w,
                    "| {} | {} | {} | {} |",
                    c.label.name(),
                    c.n_gt,
                    c.n_pred,
                    opt(c.ap)
                );
            }
            let _ = writeln!(w);
            let _ = writeln!(w, "Mean AP: {}.\n", data.mean_ap);
            if !data.excluded.is_empty() {
                let names: Vec<&str> = data.excluded.iter().map(|l| l.name()).collect();
                let _ = writeln!(
                    w,
                    "Excluded (no ground truth and no predictions): {}.\n",
                    names.join(", ")
                );
            }
        }
    }

    let _ = writeln!(w, "## Fairness\n");
    match &report.sections.fairness {
        Section::Skipped { reason } => {
            let _ = writeln!(w, "_Skipped: {reason}_\n");
        }
        Section::Computed { data } => {
            let _ = writeln!(
                w,
                "Score threshold {}, minimum subgroup support {}.\n",
                data.score_threshold, data.min_support
            );
            for class in &data.classes {
                let _ = writeln!(w, "### {}\n", class.label.name());
                for fp in &class.by_feature {
                    let _ = writeln!(w, "By {}:\n", fp.feature.name());
                    let _ = writeln!(
                        w,
                        "| subgroup | support | ppv | tpr | fpr | positive rate |"
                    );
                    let _ = writeln!(w, "|---|---|---|---|---|---|");
                    for c in &fp.cells {
                        let _ = writeln!(
                            w,
                            "| {} | {} | {} | {} | {} | {} |",
                            c.subgroup,
                            c.support,
                            opt(c.ppv),
                            opt(c.tpr),
                            opt(c.fpr),
                            opt(c.positive_rate)
                        );
                    }
                    let _ = writeln!(w);
                    for g in &fp.gaps {
                        let _ = writeln!(
                            w,
                            "- {} gap {}: max {} ({}), min {} ({})",
                            g.metric.name(),
                            g.gap,
                            g.max_subgroup,
                            g.max_value,
                            g.min_subgroup,
                            g.min_value
                        );
                    }
                    let _ = writeln!(w);
                }
            }
        }
    }

    let _ = writeln!(w, "## Configuration\n");
    let _ = writeln!(w, "```toml");
    let _ = write!(w, "{}", toml::to_string(&report.config).expect("config serializes"));
    let _ = writeln!(w, "```");
    md
}
