//! Subgroup fairness of a detector's image-level calls: per-class confusion
//! counts by demographic subgroup, parity metrics (PPV, TPR, FPR, positive
//! rate), disparity gaps, and flags.
//!
//! The image-level rule is deliberately lenient: a class counts as predicted
//! when any detection of it clears the score threshold anywhere in the image,
//! and as present when any annotator assigned it, location ignored in both
//! directions.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::annotations::{ClassLabel, ImageIndex};
use crate::detection::Prediction;
use crate::dicom::{normalize_sex, parse_age, AgeValidity, DicomHeader};

/// Demographic feature an audit slices by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Age,
    Sex,
}

impl Feature {
    pub const ALL: [Feature; 2] = [Feature::Age, Feature::Sex];

    pub fn name(self) -> &'static str {
        match self {
            Feature::Age => "age",
            Feature::Sex => "sex",
        }
    }

    /// Subgroup names in reporting order. Bins are exhaustive and mutually
    /// exclusive over all headers, including absent ones.
    pub fn bins(self) -> &'static [&'static str] {
        match self {
            Feature::Age => &["missing", "young", "old"],
            Feature::Sex => &["Male", "Female", "Other", "Missing"],
        }
    }

    /// Subgroup for one image. `header` is `None` when the file failed to
    /// parse or is absent; that routes to the missing bin of either feature.
    pub fn assign(self, header: Option<&DicomHeader>) -> &'static str {
        self.assign_with(header, YOUNG_OLD_BOUNDARY_YEARS)
    }

    /// Like [`Feature::assign`], with an explicit young/old boundary.
    pub fn assign_with(self, header: Option<&DicomHeader>, age_boundary: u32) -> &'static str {
        match self {
            Feature::Age => {
                age_bin_with(header.and_then(|h| h.patient_age_raw.as_deref()), age_boundary)
                    .name()
            }
            Feature::Sex => normalize_sex(header.and_then(|h| h.patient_sex_raw.as_deref())).name(),
        }
    }
}

/// The corpus-wide young/old split at 50 years. Only a Valid age (1 to 99)
/// is binned; malformed and out-of-range values count as missing, the same
/// wrong-type-as-missing treatment the metadata audit applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeBin {
    Missing,
    Young,
    Old,
}

impl AgeBin {
    pub const ALL: [AgeBin; 3] = [AgeBin::Missing, AgeBin::Young, AgeBin::Old];

    pub fn name(self) -> &'static str {
        match self {
            AgeBin::Missing => "missing",
            AgeBin::Young => "young",
            AgeBin::Old => "old",
        }
    }
}

pub const YOUNG_OLD_BOUNDARY_YEARS: u32 = 50;

pub fn age_bin(age_raw: Option<&str>) -> AgeBin {
    age_bin_with(age_raw, YOUNG_OLD_BOUNDARY_YEARS)
}

/// Like [`age_bin`], with an explicit boundary: young is strictly below it.
pub fn age_bin_with(age_raw: Option<&str>, boundary: u32) -> AgeBin {
    let parsed = parse_age(age_raw);
    match (parsed.validity, parsed.years) {
        (AgeValidity::Valid, Some(y)) if y < boundary => AgeBin::Young,
        (AgeValidity::Valid, Some(_)) => AgeBin::Old,
        _ => AgeBin::Missing,
    }
}

/// Image-level call for one class: did the detector claim it, was it there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BinaryPair {
    pub predicted: bool,
    pub actual: bool,
}

/// Image-level binarization for one class over every image in the index.
///
/// `predicted` = some prediction of the label on the image has score at or
/// above the threshold; `actual` = some annotator assigned the label.
/// Predictions for images outside the index have no row to land in and are
/// ignored here (the detection evaluation still counts them as FPs).
pub fn binarize_image_level(
    predictions: &[Prediction],
    index: &ImageIndex,
    label: ClassLabel,
    score_threshold: f64,
) -> BTreeMap<String, BinaryPair> {
    let mut hot: BTreeMap<&str, bool> = BTreeMap::new();
    for p in predictions {
        if p.label == label && p.score >= score_threshold {
            hot.insert(p.image_id.as_str(), true);
        }
    }
    index
        .iter()
        .map(|img| {
            let predicted = hot.contains_key(img.image_id.as_str());
            let actual = img
                .annotators
                .iter()
                .any(|a| a.labels.contains(&label));
            (
                img.image_id.clone(),
                BinaryPair { predicted, actual },
            )
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn add(&mut self, pair: BinaryPair) {
        match (pair.predicted, pair.actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn support(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Metrics for one subgroup. A metric is absent, never 0, when its
/// denominator is empty; the raw confusion counts stay readable beside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityCell {
    pub subgroup: String,
    pub support: usize,
    pub confusion: ConfusionCounts,
    pub ppv: Option<f64>,
    pub tpr: Option<f64>,
    pub fpr: Option<f64>,
    pub positive_rate: Option<f64>,
}

impl ParityCell {
    fn from_confusion(subgroup: &str, c: ConfusionCounts) -> ParityCell {
        ParityCell {
            subgroup: subgroup.to_owned(),
            support: c.support(),
            confusion: c,
            ppv: ratio(c.tp, c.tp + c.fp),
            tpr: ratio(c.tp, c.tp + c.fn_),
            fpr: ratio(c.fp, c.fp + c.tn),
            positive_rate: ratio(c.tp + c.fp, c.support()),
        }
    }

    fn metric(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Ppv => self.ppv,
            Metric::Tpr => self.tpr,
            Metric::Fpr => self.fpr,
            Metric::PositiveRate => self.positive_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ppv,
    Tpr,
    Fpr,
    PositiveRate,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Ppv, Metric::Tpr, Metric::Fpr, Metric::PositiveRate];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ppv => "ppv",
            Metric::Tpr => "tpr",
            Metric::Fpr => "fpr",
            Metric::PositiveRate => "positive_rate",
        }
    }
}

/// Spread of one metric across qualifying subgroups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricGap {
    pub metric: Metric,
    pub gap: f64,
    pub max_subgroup: String,
    pub max_value: f64,
    pub min_subgroup: String,
    pub min_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureParity {
    pub feature: Feature,
    pub cells: Vec<ParityCell>,
    /// One entry per metric with ≥ 1 qualifying subgroup value.
    pub gaps: Vec<MetricGap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassParity {
    pub label: ClassLabel,
    pub by_feature: Vec<FeatureParity>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityReport {
    pub score_threshold: f64,
    pub min_support: usize,
    pub classes: Vec<ClassParity>,
}

/// Gap of `metric` across `cells`, restricted to subgroups with support at
/// least `min_support` and a defined value.
fn metric_gap(cells: &[ParityCell], metric: Metric, min_support: usize) -> Option<MetricGap> {
    let mut qualifying = cells
        .iter()
        .filter(|c| c.support >= min_support)
        .filter_map(|c| c.metric(metric).map(|v| (c.subgroup.as_str(), v)));
    let first = qualifying.next()?;
    let (mut max, mut min) = (first, first);
    for (name, v) in qualifying {
        if v > max.1 {
            max = (name, v);
        }
        if v < min.1 {
            min = (name, v);
        }
    }
    Some(MetricGap {
        metric,
        gap: max.1 - min.1,
        max_subgroup: max.0.to_owned(),
        max_value: max.1,
        min_subgroup: min.0.to_owned(),
        min_value: min.1,
    })
}

/// Parity metrics for every lesion class × feature × subgroup.
///
/// Every image in the index contributes to exactly one subgroup per feature,
/// so subgroup supports sum to the image count. Preconditions (caller
/// enforced): `score_threshold` ∈ [0,1], `min_support` ≥ 1.
pub fn parity_report(
    index: &ImageIndex,
    headers: &BTreeMap<String, DicomHeader>,
    predictions: &[Prediction],
    score_threshold: f64,
    min_support: usize,
) -> ParityReport {
    parity_report_with(
        index,
        headers,
        predictions,
        score_threshold,
        min_support,
        YOUNG_OLD_BOUNDARY_YEARS,
    )
}

/// Like [`parity_report`], with an explicit young/old age boundary.
pub fn parity_report_with(
    index: &ImageIndex,
    headers: &BTreeMap<String, DicomHeader>,
    predictions: &[Prediction],
    score_threshold: f64,
    min_support: usize,
    age_boundary: u32,
) -> ParityReport {
    let subgroup_of: BTreeMap<&str, [&'static str; 2]> = index
        .iter()
        .map(|img| {
            let header = headers.get(&img.image_id);
            (
                img.image_id.as_str(),
                [
                    Feature::Age.assign_with(header, age_boundary),
                    Feature::Sex.assign_with(header, age_boundary),
                ],
            )
        })
        .collect();

    let mut classes = Vec::new();
    for label in ClassLabel::lesions() {
        let pairs = binarize_image_level(predictions, index, label, score_threshold);
        let mut by_feature = Vec::new();
        for (fi, feature) in Feature::ALL.into_iter().enumerate() {
            let mut confusion: BTreeMap<&str, ConfusionCounts> = feature
                .bins()
                .iter()
                .map(|b| (*b, ConfusionCounts::default()))
                .collect();
            for (image_id, pair) in &pairs {
                let bin = subgroup_of[image_id.as_str()][fi];
                confusion.get_mut(bin).unwrap().add(*pair);
            }
            let cells: Vec<ParityCell> = feature
                .bins()
                .iter()
                .map(|b| ParityCell::from_confusion(b, confusion[*b]))
                .collect();
            let gaps = Metric::ALL
                .into_iter()
                .filter_map(|m| metric_gap(&cells, m, min_support))
                .collect();
            by_feature.push(FeatureParity {
                feature,
                cells,
                gaps,
            });
        }
        classes.push(ClassParity { label, by_feature });
    }
    ParityReport {
        score_threshold,
        min_support,
        classes,
    }
}

/// One disparity exceeding the gap threshold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParityFlag {
    pub label: ClassLabel,
    pub feature: Feature,
    pub metric: Metric,
    pub gap: f64,
    pub max_subgroup: String,
    pub max_value: f64,
    pub min_subgroup: String,
    pub min_value: f64,
}

/// Flags every (class, feature, metric) whose gap across subgroups with
/// support ≥ `min_support` exceeds `gap_threshold`. Gaps are recomputed from
/// the report's cells, so a different support floor than the report's own can
/// be applied. Preconditions: `gap_threshold` ∈ (0,1], `min_support` ≥ 1.
pub fn parity_flags(
    report: &ParityReport,
    gap_threshold: f64,
    min_support: usize,
) -> Vec<ParityFlag> {
    let mut flags = Vec::new();
    for class in &report.classes {
        for fp in &class.by_feature {
            for metric in Metric::ALL {
                if let Some(g) = metric_gap(&fp.cells, metric, min_support) {
                    if g.gap > gap_threshold {
                        flags.push(ParityFlag {
                            label: class.label,
                            feature: fp.feature,
                            metric,
                            gap: g.gap,
                            max_subgroup: g.max_subgroup,
                            max_value: g.max_value,
                            min_subgroup: g.min_subgroup,
                            min_value: g.min_value,
                        });
                    }
                }
            }
        }
    }
    flags
}
