//! Inter-annotator consistency: per-annotator workload, label-set agreement,
//! cross-annotator class co-occurrence, box-granularity conflicts, and the
//! seeded no-finding review sample.
//!
//! Agreement compares label sets only; geometry-level disagreement is the
//! business of the co-occurrence and granularity checks.

use std::collections::BTreeMap;
use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::annotations::{ordered_pair, BBox, ClassLabel, ImageIndex, Taxonomy};
use crate::detection::iou;
use crate::dicom::{normalize_sex, DicomHeader, SexCategory};
use crate::fairness::{age_bin_with, AgeBin};
use crate::util::seeded_stream;

#[derive(Debug, Error)]
pub enum ConsistencyError {
    #[error("group map names annotator {rad_id:?} absent from the corpus")]
    UnknownRadInGroups { rad_id: String },
}

/// Label-set agreement rates for one annotator over the images they read.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementRates {
    pub rad_id: String,
    pub n_images: usize,
    /// Fraction of their images where ≥ 1 co-annotator gave the same label set.
    pub at_least_one: f64,
    /// Fraction where every co-annotator gave the same label set.
    pub both_all: f64,
}

/// Image-weighted aggregate over a named annotator group.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupAgreement {
    pub group: String,
    pub members: Vec<String>,
    pub n_images: usize,
    pub at_least_one: f64,
    pub both_all: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementReport {
    pub per_rad: Vec<AgreementRates>,
    pub groups: Vec<GroupAgreement>,
}

/// Per-annotator agreement rates, plus aggregates for `groups` when given
/// (a map rad_id → group name covering any subset of annotators).
///
/// Two annotators agree on an image exactly when their label sets are equal.
/// An image where the annotator worked alone counts as agreement under both
/// definitions: there is no colleague to contradict them. Group rates weight
/// members by image count, not uniformly.
pub fn agreement_rates(
    index: &ImageIndex,
    groups: Option<&BTreeMap<String, String>>,
) -> Result<AgreementReport, ConsistencyError> {
    // (n_images, n_at_least_one, n_both_all) per annotator.
    let mut counts: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
    for img in index.iter() {
        for a in &img.annotators {
            let others: Vec<_> = img
                .annotators
                .iter()
                .filter(|b| b.rad_id != a.rad_id)
                .collect();
            let any = others.is_empty() || others.iter().any(|b| b.labels == a.labels);
            let all = others.iter().all(|b| b.labels == a.labels);
            let entry = counts.entry(&a.rad_id).or_default();
            entry.0 += 1;
            entry.1 += usize::from(any);
            entry.2 += usize::from(all);
        }
    }

    let per_rad: Vec<AgreementRates> = counts
        .iter()
        .map(|(rad_id, (n, any, all))| AgreementRates {
            rad_id: (*rad_id).to_owned(),
            n_images: *n,
            at_least_one: *any as f64 / *n as f64,
            both_all: *all as f64 / *n as f64,
        })
        .collect();

    let mut group_rows = Vec::new();
    if let Some(groups) = groups {
        for rad_id in groups.keys() {
            if !counts.contains_key(rad_id.as_str()) {
                return Err(ConsistencyError::UnknownRadInGroups {
                    rad_id: rad_id.clone(),
                });
            }
        }
        let mut by_group: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (rad_id, group) in groups {
            by_group.entry(group).or_default().push(rad_id);
        }
        for (group, members) in by_group {
            let (mut n, mut any, mut all) = (0, 0, 0);
            for m in &members {
                let (cn, cany, call) = counts[*m];
                n += cn;
                any += cany;
                all += call;
            }
            group_rows.push(GroupAgreement {
                group: group.to_owned(),
                members: members.iter().map(|m| (*m).to_owned()).collect(),
                n_images: n,
                at_least_one: any as f64 / n as f64,
                both_all: all as f64 / n as f64,
            });
        }
    }

    Ok(AgreementReport {
        per_rad,
        groups: group_rows,
    })
}

/// One annotator's image counts under three exhaustive splits. Each split's
/// counts sum to `n_images`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadRow {
    pub rad_id: String,
    pub n_images: usize,
    /// Images where this annotator assigned at least one lesion label.
    pub n_finding: usize,
    pub n_no_finding: usize,
    pub by_sex: BTreeMap<SexCategory, usize>,
    pub by_age: BTreeMap<AgeBin, usize>,
}

/// Per-annotator workload split by finding status, sex category, and age bin.
/// Images without a parsed header fall into the missing bins of both
/// demographic splits. Rows are sorted by annotator id; an annotator with no
/// images has no row.
pub fn workload_summary(
    index: &ImageIndex,
    headers: &BTreeMap<String, DicomHeader>,
) -> Vec<WorkloadRow> {
    workload_summary_with(index, headers, crate::fairness::YOUNG_OLD_BOUNDARY_YEARS)
}

/// Like [`workload_summary`], with an explicit young/old age boundary.
pub fn workload_summary_with(
    index: &ImageIndex,
    headers: &BTreeMap<String, DicomHeader>,
    age_boundary: u32,
) -> Vec<WorkloadRow> {
    let mut rows: BTreeMap<&str, WorkloadRow> = BTreeMap::new();
    for img in index.iter() {
        let header = headers.get(&img.image_id);
        let sex = normalize_sex(header.and_then(|h| h.patient_sex_raw.as_deref()));
        let age = age_bin_with(header.and_then(|h| h.patient_age_raw.as_deref()), age_boundary);
        for a in &img.annotators {
            let row = rows.entry(&a.rad_id).or_insert_with(|| WorkloadRow {
                rad_id: a.rad_id.clone(),
                n_images: 0,
                n_finding: 0,
                n_no_finding: 0,
                by_sex: SexCategory::ALL.iter().map(|s| (*s, 0)).collect(),
                by_age: AgeBin::ALL.iter().map(|b| (*b, 0)).collect(),
            });
            row.n_images += 1;
            if a.has_finding() {
                row.n_finding += 1;
            } else {
                row.n_no_finding += 1;
            }
            *row.by_sex.get_mut(&sex).unwrap() += 1;
            *row.by_age.get_mut(&age).unwrap() += 1;
        }
    }
    rows.into_values().collect()
}

/// Count and mean IoU of cross-label co-locations for one unordered pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairCooccurrence {
    pub a: ClassLabel,
    pub b: ClassLabel,
    pub count: usize,
    pub mean_iou: f64,
}

/// Per-taxonomy-pair statistics, reported even when the count is zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapPairStat {
    pub a: ClassLabel,
    pub b: ClassLabel,
    pub count: usize,
    pub mean_iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CooccurrenceReport {
    pub iou_threshold: f64,
    /// Symmetrized counts for every label pair with at least one event,
    /// smaller label id first.
    pub pairs: Vec<PairCooccurrence>,
    /// The taxonomy's flagged relations, zero-count entries included.
    pub overlap_pairs: Vec<OverlapPairStat>,
}

impl CooccurrenceReport {
    /// Symmetrized count for an unordered label pair.
    pub fn count(&self, a: ClassLabel, b: ClassLabel) -> usize {
        let key = ordered_pair(a, b);
        self.pairs
            .iter()
            .find(|p| (p.a, p.b) == key)
            .map_or(0, |p| p.count)
    }
}

/// Cross-annotator, cross-label co-location counts.
///
/// An event is one (image, annotator pair, box pair) where the two boxes have
/// different labels and IoU at or above `iou_threshold`. Direction (which
/// annotator drew which label) is collapsed: counts are the symmetrized
/// matrix, so the diagonal is structurally zero.
pub fn class_cooccurrence(
    index: &ImageIndex,
    taxonomy: &Taxonomy,
    iou_threshold: f64,
) -> CooccurrenceReport {
    let mut events: BTreeMap<(ClassLabel, ClassLabel), (usize, f64)> = BTreeMap::new();
    for img in index.iter() {
        for (i, a) in img.annotators.iter().enumerate() {
            for b in &img.annotators[i + 1..] {
                for (c1, b1) in &a.boxes {
                    for (c2, b2) in &b.boxes {
                        if c1 == c2 {
                            continue;
                        }
                        let v = iou(b1, b2);
                        if v >= iou_threshold {
                            let e = events.entry(ordered_pair(*c1, *c2)).or_default();
                            e.0 += 1;
                            e.1 += v;
                        }
                    }
                }
            }
        }
    }

    let pairs: Vec<PairCooccurrence> = events
        .iter()
        .map(|((a, b), (count, iou_sum))| PairCooccurrence {
            a: *a,
            b: *b,
            count: *count,
            mean_iou: iou_sum / *count as f64,
        })
        .collect();
    let overlap_pairs = taxonomy
        .related_pairs()
        .into_iter()
        .map(|(a, b)| {
            let found = events.get(&(a, b));
            OverlapPairStat {
                a,
                b,
                count: found.map_or(0, |e| e.0),
                mean_iou: found.map(|(n, s)| s / *n as f64),
            }
        })
        .collect();
    CooccurrenceReport {
        iou_threshold,
        pairs,
        overlap_pairs,
    }
}

/// One coarse-box-vs-many-fine-boxes disagreement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GranularityConflict {
    pub image_id: String,
    pub label: ClassLabel,
    pub coarse_rad: String,
    pub fine_rad: String,
    pub coarse_box: BBox,
    /// At least 2 boxes, each with containment ratio ≥ the threshold.
    pub contained_boxes: Vec<BBox>,
}

/// Find boxes that swallow ≥ 2 of a colleague's same-class boxes.
///
/// Containment of a small box in a big one is area(small ∩ big)/area(small);
/// a fine box counts when that ratio is at least `containment_threshold`. A
/// fine box geometrically identical to any same-class box of the coarse
/// annotator is not counted: without that rule, two annotators submitting
/// identical nested annotations would conflict with each other. Results are
/// sorted by image id.
///
/// # Panics
/// If `containment_threshold` is not in (0, 1].
pub fn granularity_conflicts(
    index: &ImageIndex,
    containment_threshold: f64,
) -> Vec<GranularityConflict> {
    assert!(
        containment_threshold > 0.0 && containment_threshold <= 1.0,
        "containment threshold must be in (0, 1]"
    );
    let mut conflicts = Vec::new();
    for img in index.iter() {
        for coarse in &img.annotators {
            for fine in &img.annotators {
                if coarse.rad_id == fine.rad_id {
                    continue;
                }
                for (label, big) in &coarse.boxes {
                    let contained: Vec<BBox> = fine
                        .boxes_of(*label)
                        .filter(|small| small.containment_in(big) >= containment_threshold)
                        .filter(|small| coarse.boxes_of(*label).all(|own| own != *small))
                        .copied()
                        .collect();
                    if contained.len() >= 2 {
                        conflicts.push(GranularityConflict {
                            image_id: img.image_id.clone(),
                            label: *label,
                            coarse_rad: coarse.rad_id.clone(),
                            fine_rad: fine.rad_id.clone(),
                            coarse_box: *big,
                            contained_boxes: contained,
                        });
                    }
                }
            }
        }
    }
    // The index iterates images in id order and annotators in rad order, so
    // the list is already deterministically sorted by image_id.
    conflicts
}

/// Seeded sample of no-finding images per annotator, for manual re-review.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewWorksheet {
    pub seed: u64,
    pub n_per_rad: usize,
    /// Sampled image ids per annotator, sorted within each annotator.
    pub samples: BTreeMap<String, Vec<String>>,
}

/// Sample up to `n_per_rad` images each annotator marked "No finding",
/// uniformly without replacement. Sampling depends only on (seed, corpus):
/// each annotator draws from an RNG keyed by the seed and their id over
/// their sorted candidate list, so input order and other annotators' data
/// never shift a sample.
///
/// # Panics
/// If `n_per_rad` is 0.
pub fn sample_no_finding_review(
    index: &ImageIndex,
    n_per_rad: usize,
    seed: u64,
) -> ReviewWorksheet {
    assert!(n_per_rad >= 1, "n_per_rad must be at least 1");
    let mut candidates: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for img in index.iter() {
        for a in &img.annotators {
            if !a.has_finding() {
                candidates.entry(&a.rad_id).or_default().push(&img.image_id);
            }
        }
    }

    let mut samples = BTreeMap::new();
    for (rad_id, ids) in candidates {
        let mut rng = seeded_stream(seed, rad_id);
        let k = n_per_rad.min(ids.len());
        let mut picked: Vec<String> = rand::seq::index::sample(&mut rng, ids.len(), k)
            .into_iter()
            .map(|i| ids[i].to_owned())
            .collect();
        picked.sort();
        samples.insert(rad_id.to_owned(), picked);
    }
    ReviewWorksheet {
        seed,
        n_per_rad,
        samples,
    }
}

/// Emit the worksheet as a review CSV with blank verdict and notes columns.
pub fn write_review_csv<W: io::Write>(worksheet: &ReviewWorksheet, writer: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rad_id", "image_id", "verdict", "notes"])?;
    for (rad_id, ids) in &worksheet.samples {
        for image_id in ids {
            w.write_record([rad_id.as_str(), image_id.as_str(), "", ""])?;
        }
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{build_image_index, AnnotationRecord};

    fn label(name: &str) -> ClassLabel {
        ClassLabel::from_name(name).unwrap()
    }

    fn record(image: &str, rad: &str, class: &str, b: Option<BBox>) -> AnnotationRecord {
        AnnotationRecord {
            image_id: image.into(),
            rad_id: rad.into(),
            label: label(class),
            bbox: b,
        }
    }

    fn lesion(image: &str, rad: &str, class: &str, coords: [f64; 4]) -> AnnotationRecord {
        record(
            image,
            rad,
            class,
            Some(BBox::new(coords[0], coords[1], coords[2], coords[3]).unwrap()),
        )
    }

    fn nofinding(image: &str, rad: &str) -> AnnotationRecord {
        record(image, rad, "No finding", None)
    }

    fn bx(coords: [f64; 4]) -> BBox {
        BBox::new(coords[0], coords[1], coords[2], coords[3]).unwrap()
    }

    /// img1: A,B give {ILD}, C gives {Cardiomegaly}; img2: three distinct
    /// sets; img3: all three agree on {ILD}.
    fn worked_example_index() -> ImageIndex {
        let zone = [10.0, 10.0, 50.0, 50.0];
        let records = vec![
            lesion("img1", "A", "ILD", zone),
            lesion("img1", "B", "ILD", [200.0, 200.0, 240.0, 240.0]),
            lesion("img1", "C", "Cardiomegaly", zone),
            lesion("img2", "A", "ILD", zone),
            lesion("img2", "B", "Cardiomegaly", zone),
            lesion("img2", "C", "Atelectasis", zone),
            lesion("img3", "A", "ILD", zone),
            lesion("img3", "B", "ILD", zone),
            lesion("img3", "C", "ILD", zone),
        ];
        build_image_index(&records).unwrap()
    }

    #[test]
    fn worked_agreement_example_matches_hand_enumeration() {
        let report = agreement_rates(&worked_example_index(), None).unwrap();
        let a = report.per_rad.iter().find(|r| r.rad_id == "A").unwrap();
        assert_eq!(a.n_images, 3);
        assert!((a.at_least_one - 2.0 / 3.0).abs() < 1e-15);
        assert!((a.both_all - 1.0 / 3.0).abs() < 1e-15);
        for r in &report.per_rad {
            assert!(r.both_all <= r.at_least_one);
            assert!(r.at_least_one <= 1.0);
        }
    }

    #[test]
    fn identical_annotations_agree_fully() {
        let records = vec![
            nofinding("img1", "R1"),
            nofinding("img1", "R2"),
            nofinding("img1", "R3"),
            nofinding("img2", "R1"),
            nofinding("img2", "R2"),
            nofinding("img2", "R3"),
        ];
        let index = build_image_index(&records).unwrap();
        let report = agreement_rates(&index, None).unwrap();
        for r in report.per_rad {
            assert_eq!((r.at_least_one, r.both_all), (1.0, 1.0));
        }
    }

    #[test]
    fn solo_annotator_agrees_vacuously() {
        let index = build_image_index(&[nofinding("img1", "R1")]).unwrap();
        let r = &agreement_rates(&index, None).unwrap().per_rad[0];
        assert_eq!((r.at_least_one, r.both_all), (1.0, 1.0));
    }

    #[test]
    fn agreement_is_invariant_under_image_relabeling() {
        let base = agreement_rates(&worked_example_index(), None).unwrap();
        let zone = [10.0, 10.0, 50.0, 50.0];
        let renamed = vec![
            lesion("zz_9", "A", "ILD", zone),
            lesion("zz_9", "B", "ILD", [200.0, 200.0, 240.0, 240.0]),
            lesion("zz_9", "C", "Cardiomegaly", zone),
            lesion("aa_1", "A", "ILD", zone),
            lesion("aa_1", "B", "Cardiomegaly", zone),
            lesion("aa_1", "C", "Atelectasis", zone),
            lesion("mm_5", "A", "ILD", zone),
            lesion("mm_5", "B", "ILD", zone),
            lesion("mm_5", "C", "ILD", zone),
        ];
        let other = agreement_rates(&build_image_index(&renamed).unwrap(), None).unwrap();
        assert_eq!(base.per_rad, other.per_rad);
    }

    #[test]
    fn group_aggregates_are_image_weighted() {
        // R1: 2 images, agrees on both (solo). R2: 1 image, solo.
        // Merge into one group: 3/3 regardless of weighting; then make R2
        // disagree by pairing with R3.
        let records = vec![
            nofinding("img1", "R1"),
            nofinding("img2", "R1"),
            nofinding("img3", "R2"),
            lesion("img3", "R3", "ILD", [0.0, 0.0, 10.0, 10.0]),
        ];
        let index = build_image_index(&records).unwrap();
        let groups: BTreeMap<String, String> = [("R1", "G"), ("R2", "G")]
            .into_iter()
            .map(|(a, b)| (a.to_owned(), b.to_owned()))
            .collect();
        let report = agreement_rates(&index, Some(&groups)).unwrap();
        let g = &report.groups[0];
        // R1 agrees 2/2, R2 agrees 0/1 → image-weighted (2+0)/(2+1) = 2/3,
        // not the annotator mean (1.0 + 0.0)/2 = 1/2.
        assert_eq!(g.n_images, 3);
        assert!((g.at_least_one - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_rad_in_groups_is_rejected() {
        let index = build_image_index(&[nofinding("img1", "R1")]).unwrap();
        let groups: BTreeMap<String, String> =
            [("R9".to_owned(), "G".to_owned())].into_iter().collect();
        assert!(matches!(
            agreement_rates(&index, Some(&groups)),
            Err(ConsistencyError::UnknownRadInGroups { rad_id }) if rad_id == "R9"
        ));
    }

    #[test]
    fn workload_splits_sum_to_image_counts() {
        let mut headers = BTreeMap::new();
        headers.insert(
            "img1".to_owned(),
            DicomHeader {
                transfer_syntax: crate::dicom::TransferSyntax::ExplicitVrLittleEndian,
                patient_sex_raw: Some("F".into()),
                patient_age_raw: Some("060Y".into()),
                photometric: None,
                rows: None,
                columns: None,
                bits_allocated: None,
            },
        );
        // img2 has no header: missing bins.
        let records = vec![
            lesion("img1", "R1", "Cardiomegaly", [0.0, 0.0, 10.0, 10.0]),
            nofinding("img2", "R1"),
        ];
        let index = build_image_index(&records).unwrap();
        let rows = workload_summary(&index, &headers);
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!((r.n_images, r.n_finding, r.n_no_finding), (2, 1, 1));
        assert_eq!(r.by_sex[&SexCategory::Female], 1);
        assert_eq!(r.by_sex[&SexCategory::Missing], 1);
        assert_eq!(r.by_age[&AgeBin::Old], 1);
        assert_eq!(r.by_age[&AgeBin::Missing], 1);
        assert_eq!(r.by_sex.values().sum::<usize>(), r.n_images);
        assert_eq!(r.by_age.values().sum::<usize>(), r.n_images);
        assert_eq!(r.n_finding + r.n_no_finding, r.n_images);
    }

    #[test]
    fn cooccurrence_counts_identical_cross_label_boxes() {
        let b = [10.0, 10.0, 50.0, 50.0];
        let records = vec![
            lesion("img1", "A", "ILD", b),
            lesion("img1", "B", "Pulmonary fibrosis", b),
        ];
        let index = build_image_index(&records).unwrap();
        let report = class_cooccurrence(&index, &Taxonomy::default(), 0.5);
        let ild = label("ILD");
        let fib = label("Pulmonary fibrosis");
        assert_eq!(report.count(ild, fib), 1);
        assert_eq!(report.count(fib, ild), 1); // symmetrized
        assert_eq!(report.count(ild, ild), 0); // diagonal structurally zero
        let stat = report
            .overlap_pairs
            .iter()
            .find(|p| (p.a, p.b) == ordered_pair(ild, fib))
            .unwrap();
        assert_eq!(stat.count, 1);
        assert_eq!(stat.mean_iou, Some(1.0));
    }

    #[test]
    fn same_class_overlaps_never_count() {
        let b = [10.0, 10.0, 50.0, 50.0];
        let records = vec![lesion("img1", "A", "ILD", b), lesion("img1", "B", "ILD", b)];
        let index = build_image_index(&records).unwrap();
        let report = class_cooccurrence(&index, &Taxonomy::default(), 0.5);
        assert!(report.pairs.is_empty());
    }

    #[test]
    fn cooccurrence_respects_the_iou_threshold() {
        let records = vec![
            lesion("img1", "A", "ILD", [0.0, 0.0, 10.0, 10.0]),
            lesion("img1", "B", "Consolidation", [9.0, 9.0, 19.0, 19.0]),
        ];
        let index = build_image_index(&records).unwrap();
        // IoU is 1/199, far below 0.5.
        let report = class_cooccurrence(&index, &Taxonomy::default(), 0.5);
        assert!(report.pairs.is_empty());
        let report = class_cooccurrence(&index, &Taxonomy::default(), 0.001);
        assert_eq!(report.count(label("ILD"), label("Consolidation")), 1);
    }

    #[test]
    fn same_annotator_boxes_never_cooccur() {
        let b = [10.0, 10.0, 50.0, 50.0];
        let records = vec![
            lesion("img1", "A", "ILD", b),
            lesion("img1", "A", "Pulmonary fibrosis", b),
        ];
        let index = build_image_index(&records).unwrap();
        let report = class_cooccurrence(&index, &Taxonomy::default(), 0.5);
        assert!(report.pairs.is_empty());
    }

    #[test]
    fn worked_granularity_example_reports_one_conflict() {
        let records = vec![
            lesion("img1", "A", "Nodule/Mass", [0.0, 0.0, 100.0, 100.0]),
            lesion("img1", "B", "Nodule/Mass", [10.0, 10.0, 20.0, 20.0]),
            lesion("img1", "B", "Nodule/Mass", [60.0, 60.0, 80.0, 80.0]),
        ];
        let index = build_image_index(&records).unwrap();
        let conflicts = granularity_conflicts(&index, 0.9);
        assert_eq!(conflicts.len(), 1);
        let c = &conflicts[0];
        assert_eq!((c.coarse_rad.as_str(), c.fine_rad.as_str()), ("A", "B"));
        assert_eq!(c.contained_boxes.len(), 2);
        assert_eq!(c.coarse_box, bx([0.0, 0.0, 100.0, 100.0]));
    }

    #[test]
    fn single_contained_box_is_not_a_conflict() {
        let records = vec![
            lesion("img1", "A", "Nodule/Mass", [0.0, 0.0, 100.0, 100.0]),
            lesion("img1", "B", "Nodule/Mass", [10.0, 10.0, 20.0, 20.0]),
        ];
        let index = build_image_index(&records).unwrap();
        assert!(granularity_conflicts(&index, 0.9).is_empty());
    }

    #[test]
    fn identical_annotations_never_conflict_even_when_nested() {
        // Both annotators drew the same coarse box and the same two fine
        // boxes inside it; granularity did not differ between them.
        let boxes = [
            [0.0, 0.0, 100.0, 100.0],
            [10.0, 10.0, 20.0, 20.0],
            [60.0, 60.0, 80.0, 80.0],
        ];
        let mut records = Vec::new();
        for rad in ["A", "B"] {
            for b in boxes {
                records.push(lesion("img1", rad, "Nodule/Mass", b));
            }
        }
        let index = build_image_index(&records).unwrap();
        assert!(granularity_conflicts(&index, 0.9).is_empty());
    }

    #[test]
    fn containment_threshold_one_requires_exact_containment() {
        // Fine boxes poke 25% outside the coarse box.
        let records = vec![
            lesion("img1", "A", "Nodule/Mass", [0.0, 0.0, 100.0, 100.0]),
            lesion("img1", "B", "Nodule/Mass", [90.0, 0.0, 110.0, 20.0]),
            lesion("img1", "B", "Nodule/Mass", [90.0, 40.0, 110.0, 60.0]),
        ];
        let index = build_image_index(&records).unwrap();
        assert!(granularity_conflicts(&index, 1.0).is_empty());
        assert_eq!(granularity_conflicts(&index, 0.5).len(), 1);
    }

    #[test]
    fn cross_class_containment_is_ignored() {
        let records = vec![
            lesion("img1", "A", "Nodule/Mass", [0.0, 0.0, 100.0, 100.0]),
            lesion("img1", "B", "Calcification", [10.0, 10.0, 20.0, 20.0]),
            lesion("img1", "B", "Calcification", [60.0, 60.0, 80.0, 80.0]),
        ];
        let index = build_image_index(&records).unwrap();
        assert!(granularity_conflicts(&index, 0.9).is_empty());
    }

    fn review_fixture() -> ImageIndex {
        let mut records = Vec::new();
        for i in 0..20 {
            records.push(nofinding(&format!("clean_{i:02}"), "R1"));
        }
        records.push(lesion("sick_00", "R1", "ILD", [0.0, 0.0, 10.0, 10.0]));
        for i in 0..3 {
            records.push(nofinding(&format!("clean_{i:02}"), "R2"));
        }
        build_image_index(&records).unwrap()
    }

    #[test]
    fn review_sample_is_deterministic_and_bounded() {
        let index = review_fixture();
        let w1 = sample_no_finding_review(&index, 10, 7);
        let w2 = sample_no_finding_review(&index, 10, 7);
        assert_eq!(w1, w2);
        assert_eq!(w1.samples["R1"].len(), 10);
        assert_eq!(w1.samples["R2"].len(), 3); // exhausted below n_per_rad
        let w3 = sample_no_finding_review(&index, 10, 8);
        assert_ne!(w1.samples["R1"], w3.samples["R1"]);
    }

    #[test]
    fn review_sample_never_contains_a_finding_image() {
        let index = review_fixture();
        let w = sample_no_finding_review(&index, 50, 3);
        for (rad_id, ids) in &w.samples {
            for id in ids {
                let view = index.get(id).unwrap().annotator(rad_id).unwrap();
                assert!(!view.has_finding());
            }
        }
    }

    #[test]
    fn review_csv_has_blank_verdict_and_notes() {
        let index = review_fixture();
        let w = sample_no_finding_review(&index, 2, 7);
        let mut buf = Vec::new();
        write_review_csv(&w, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("rad_id,image_id,verdict,notes"));
        for line in lines {
            assert!(line.ends_with(",,"), "line {line:?} should end with two empty fields");
        }
    }
}
