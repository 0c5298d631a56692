//! Detector scoring against pooled multi-annotator ground truth: per-class
//! average precision at a fixed IoU threshold and the mean over classes.
//!
//! Ground truth pools every annotator's boxes per image, duplicates included:
//! a detector is rewarded once per drawn box, which is the only reading under
//! which multiple identical annotations are distinguishable from one.

use std::collections::BTreeMap;
use std::io::Read;

use serde::Serialize;
use thiserror::Error;

use crate::annotations::{BBox, ClassLabel, ImageIndex};

/// Intersection over union of two boxes; disjoint pairs give 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    inter / (a.area() + b.area() - inter)
}

/// One detector output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub image_id: String,
    pub label: ClassLabel,
    /// Confidence in [0, 1].
    pub score: f64,
    pub bbox: BBox,
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("row {row}: unknown class name {name:?}")]
    UnknownClassName { row: u64, name: String },
    #[error("row {row}: predictions must not use \"No finding\"")]
    NoFindingPrediction { row: u64 },
    #[error("row {row}: score {raw:?} is not a finite number in [0, 1]")]
    InvalidScore { row: u64, raw: String },
    #[error("row {row}: invalid box ({detail})")]
    InvalidBox { row: u64, detail: String },
    #[error("row {row}: malformed row ({detail})")]
    MalformedRow { row: u64, detail: String },
    #[error("IoU threshold {value} is outside (0, 1)")]
    InvalidThreshold { value: f64 },
    #[error("no class has ground truth or predictions; nothing to evaluate")]
    NoEvaluableClasses,
    #[error("failed to read prediction table: {0}")]
    Io(#[from] std::io::Error),
}

const CSV_HEADER: [&str; 7] = [
    "image_id",
    "class_name",
    "score",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
];

/// Parse a prediction table. Strict like the annotation parser: first bad row
/// aborts, row numbers are 1-based file lines with the header as row 1.
pub fn parse_prediction_csv<R: Read>(reader: R) -> Result<Vec<Prediction>, DetectionError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers().map_err(|e| DetectionError::MalformedRow {
            row: 1,
            detail: e.to_string(),
        })?;
        if headers.iter().ne(CSV_HEADER) {
            return Err(DetectionError::MalformedRow {
                row: 1,
                detail: format!("unexpected header {:?}", headers),
            });
        }
    }

    let mut preds = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i as u64 + 2;
        let rec = result.map_err(|e| DetectionError::MalformedRow {
            row,
            detail: e.to_string(),
        })?;
        if rec.len() != 7 {
            return Err(DetectionError::MalformedRow {
                row,
                detail: format!("expected 7 fields, got {}", rec.len()),
            });
        }
        let image_id = rec[0].trim().to_owned();
        if image_id.is_empty() {
            return Err(DetectionError::MalformedRow {
                row,
                detail: "empty image_id".into(),
            });
        }
        let name = rec[1].trim();
        let label =
            ClassLabel::from_name(name).ok_or_else(|| DetectionError::UnknownClassName {
                row,
                name: name.to_owned(),
            })?;
        if label.is_no_finding() {
            return Err(DetectionError::NoFindingPrediction { row });
        }
        let score_raw = rec[2].trim();
        let score: f64 = score_raw
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite() && (0.0..=1.0).contains(s))
            .ok_or_else(|| DetectionError::InvalidScore {
                row,
                raw: score_raw.to_owned(),
            })?;
        let mut coords = [0.0f64; 4];
        for (k, c) in coords.iter_mut().enumerate() {
            let f = rec[3 + k].trim();
            *c = f
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| DetectionError::MalformedRow {
                    row,
                    detail: format!("unparseable coordinate {f:?}"),
                })?;
        }
        let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]).ok_or_else(|| {
            DetectionError::InvalidBox {
                row,
                detail: format!("({},{},{},{})", coords[0], coords[1], coords[2], coords[3]),
            }
        })?;
        preds.push(Prediction {
            image_id,
            label,
            score,
            bbox,
        });
    }
    Ok(preds)
}

/// Serialize predictions in the layout [`parse_prediction_csv`] reads.
pub fn write_prediction_csv<W: std::io::Write>(
    preds: &[Prediction],
    writer: W,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for p in preds {
        w.write_record([
            p.image_id.as_str(),
            p.label.name(),
            &p.score.to_string(),
            &p.bbox.x_min.to_string(),
            &p.bbox.y_min.to_string(),
            &p.bbox.x_max.to_string(),
            &p.bbox.y_max.to_string(),
        ])?;
    }
    w.flush()
}

/// Evaluation of one lesion class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassEval {
    pub label: ClassLabel,
    pub n_gt: usize,
    pub n_pred: usize,
    pub tp: usize,
    pub fp: usize,
    /// (recall, precision) after each prediction in global score order.
    pub pr_points: Vec<(f64, f64)>,
    /// `None` when the class was excluded (no ground truth and no predictions).
    pub ap: Option<f64>,
}

/// Full detector evaluation: all fourteen lesion classes, one row each.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DetectionReport {
    pub iou_threshold: f64,
    pub per_class: Vec<ClassEval>,
    /// Classes with neither ground truth nor predictions, left out of the mean.
    pub excluded: Vec<ClassLabel>,
    /// Mean AP over the included classes.
    pub mean_ap: f64,
}

/// Pooled ground truth for one image and class: every annotator's boxes of
/// that label concatenated, duplicates preserved, no merging.
pub fn pool_ground_truth(image: &crate::annotations::ImageAnnotations, label: ClassLabel) -> Vec<BBox> {
    image
        .annotators
        .iter()
        .flat_map(|a| a.boxes_of(label).copied())
        .collect()
}

/// Pooled ground-truth boxes for one class across a corpus, keyed by image id.
pub fn ground_truth_boxes(index: &ImageIndex, label: ClassLabel) -> BTreeMap<&str, Vec<BBox>> {
    let mut gt: BTreeMap<&str, Vec<BBox>> = BTreeMap::new();
    for img in index.iter() {
        let boxes = pool_ground_truth(img, label);
        if !boxes.is_empty() {
            gt.insert(&img.image_id, boxes);
        }
    }
    gt
}

/// One prediction's fate under greedy matching, in input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PredictionMatch {
    pub is_tp: bool,
    /// Index into the ground-truth pool for TPs.
    pub gt_index: Option<usize>,
    /// Achieved IoU for TPs.
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchOutcome {
    /// Parallel to the input predictions.
    pub per_pred: Vec<PredictionMatch>,
    /// Parallel to the ground-truth pool.
    pub gt_matched: Vec<bool>,
}

/// Greedy one-to-one matching of one image's predictions of one class against
/// its ground-truth pool. Predictions are processed in descending score, ties
/// by ascending input order; each claims the unmatched box of maximal IoU at
/// or above the threshold (earliest pool index on IoU ties), else it is a FP.
pub fn match_detections(
    scored: &[(f64, BBox)],
    gt_pool: &[BBox],
    iou_threshold: f64,
) -> Result<MatchOutcome, DetectionError> {
    validate_threshold(iou_threshold)?;
    let mut order: Vec<usize> = (0..scored.len()).collect();
    order.sort_by(|a, b| scored[*b].0.partial_cmp(&scored[*a].0).unwrap());

    let mut per_pred = vec![
        PredictionMatch {
            is_tp: false,
            gt_index: None,
            iou: None,
        };
        scored.len()
    ];
    let mut gt_matched = vec![false; gt_pool.len()];
    for i in order {
        let best = gt_pool
            .iter()
            .enumerate()
            .filter(|(j, _)| !gt_matched[*j])
            .map(|(j, b)| (j, iou(&scored[i].1, b)))
            .filter(|(_, v)| *v >= iou_threshold)
            // max_by keeps the later element on ties; reversed index
            // comparison makes the earliest pool box win.
            .max_by(|(j1, v1), (j2, v2)| v1.partial_cmp(v2).unwrap().then(j2.cmp(j1)));
        if let Some((j, v)) = best {
            gt_matched[j] = true;
            per_pred[i] = PredictionMatch {
                is_tp: true,
                gt_index: Some(j),
                iou: Some(v),
            };
        }
    }
    Ok(MatchOutcome {
        per_pred,
        gt_matched,
    })
}

fn validate_threshold(t: f64) -> Result<(), DetectionError> {
    if t.is_finite() && t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(DetectionError::InvalidThreshold { value: t })
    }
}

/// Score predictions against pooled ground truth at `iou_threshold`.
///
/// Matching runs per image via [`match_detections`]; outcomes are then merged
/// and sorted globally by score (ties by image id, then input order) for the
/// precision–recall sweep. AP integrates the precision envelope over achieved
/// recall; no credit accrues beyond the last achieved recall point. Classes
/// with no ground truth but at least one prediction score 0; classes with
/// neither are excluded from the mean and listed.
pub fn evaluate_detections(
    index: &ImageIndex,
    predictions: &[Prediction],
    iou_threshold: f64,
) -> Result<DetectionReport, DetectionError> {
    validate_threshold(iou_threshold)?;

    let mut per_class = Vec::new();
    let mut excluded = Vec::new();
    for label in ClassLabel::lesions() {
        let gt = ground_truth_boxes(index, label);
        let n_gt: usize = gt.values().map(Vec::len).sum();

        // Group this class's predictions by image, remembering input order.
        let mut by_image: BTreeMap<&str, Vec<(usize, f64, BBox)>> = BTreeMap::new();
        let mut n_pred = 0usize;
        for (i, p) in predictions.iter().enumerate() {
            if p.label == label {
                by_image
                    .entry(p.image_id.as_str())
                    .or_default()
                    .push((i, p.score, p.bbox));
                n_pred += 1;
            }
        }
        if n_gt == 0 && n_pred == 0 {
            excluded.push(label);
            continue;
        }

        // (score, image_id, input index, is_tp) for every prediction.
        let mut outcomes: Vec<(f64, &str, usize, bool)> = Vec::with_capacity(n_pred);
        for (image_id, mut preds) in by_image {
            preds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
            let empty = Vec::new();
            let pool = gt.get(image_id).unwrap_or(&empty);
            let scored: Vec<(f64, BBox)> = preds.iter().map(|(_, s, b)| (*s, *b)).collect();
            let outcome = match_detections(&scored, pool, iou_threshold)?;
            for ((input_idx, score, _), m) in preds.iter().zip(&outcome.per_pred) {
                outcomes.push((*score, image_id, *input_idx, m.is_tp));
            }
        }
        outcomes.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then_with(|| a.1.cmp(b.1))
                .then_with(|| a.2.cmp(&b.2))
        });

        let mut tp = 0usize;
        let mut pr_points: Vec<(f64, f64)> = Vec::with_capacity(outcomes.len());
        for (seen, (_, _, _, is_tp)) in outcomes.iter().enumerate() {
            if *is_tp {
                tp += 1;
            }
            pr_points.push((
                tp as f64 / n_gt.max(1) as f64,
                tp as f64 / (seen + 1) as f64,
            ));
        }

        let ap = if n_gt == 0 {
            0.0
        } else {
            average_precision(&pr_points)
        };
        per_class.push(ClassEval {
            label,
            n_gt,
            n_pred,
            tp,
            fp: n_pred - tp,
            pr_points,
            ap: Some(ap),
        });
    }

    if per_class.is_empty() {
        return Err(DetectionError::NoEvaluableClasses);
    }
    let mean_ap =
        per_class.iter().map(|c| c.ap.unwrap()).sum::<f64>() / per_class.len() as f64;
    Ok(DetectionReport {
        iou_threshold,
        per_class,
        excluded,
        mean_ap,
    })
}

/// All-points AP over (recall, precision) pairs in processing order.
/// Integrates the running precision envelope against recall increments.
fn average_precision(points: &[(f64, f64)]) -> f64 {
    let mut envelope = vec![0.0f64; points.len()];
    let mut run = 0.0f64;
    for i in (0..points.len()).rev() {
        run = run.max(points[i].1);
        envelope[i] = run;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (i, (recall, _)) in points.iter().enumerate() {
        if *recall > prev_recall {
            ap += (recall - prev_recall) * envelope[i];
            prev_recall = *recall;
        }
    }
    ap
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{build_image_index, AnnotationRecord};

    fn bbox(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    fn label(name: &str) -> ClassLabel {
        ClassLabel::from_name(name).unwrap()
    }

    fn gt_record(image: &str, rad: &str, class: &str, b: BBox) -> AnnotationRecord {
        AnnotationRecord {
            image_id: image.into(),
            rad_id: rad.into(),
            label: label(class),
            bbox: Some(b),
        }
    }

    fn pred(image: &str, class: &str, score: f64, b: BBox) -> Prediction {
        Prediction {
            image_id: image.into(),
            label: label(class),
            score,
            bbox: b,
        }
    }

    #[test]
    fn iou_of_identical_disjoint_and_known_boxes() {
        let a = bbox(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bbox(5.0, 5.0, 6.0, 6.0)), 0.0);
        assert_eq!(iou(&a, &bbox(2.0, 0.0, 4.0, 2.0)), 0.0); // edge contact
        let b = bbox(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-15);
        assert_eq!(iou(&a, &bbox(0.0, 0.0, 2.0, 1.0)), 0.5);
    }

    #[test]
    fn worked_three_box_example_scores_five_ninths() {
        let g1 = bbox(0.0, 0.0, 10.0, 10.0);
        let g2 = bbox(100.0, 0.0, 110.0, 10.0);
        let g3 = bbox(200.0, 0.0, 210.0, 10.0);
        let records = vec![
            gt_record("img", "R1", "Cardiomegaly", g1),
            gt_record("img", "R1", "Cardiomegaly", g2),
            gt_record("img", "R1", "Cardiomegaly", g3),
        ];
        let index = build_image_index(&records).unwrap();
        let preds = vec![
            pred("img", "Cardiomegaly", 0.9, g1),
            pred("img", "Cardiomegaly", 0.8, bbox(500.0, 0.0, 510.0, 10.0)),
            pred("img", "Cardiomegaly", 0.7, g2),
        ];
        let report = evaluate_detections(&index, &preds, 0.4).unwrap();
        let c = &report.per_class[0];
        assert_eq!((c.n_gt, c.tp, c.fp), (3, 2, 1));
        assert!((c.ap.unwrap() - 5.0 / 9.0).abs() < 1e-12);
        assert_eq!(report.per_class.len(), 1);
        assert_eq!(report.excluded.len(), 13);
    }

    #[test]
    fn perfect_predictions_on_duplicated_ground_truth_score_one() {
        // Two annotators drew the same box: the pool holds two copies, and a
        // perfect detector must emit both to reach full recall.
        let b = bbox(10.0, 10.0, 50.0, 50.0);
        let records = vec![
            gt_record("img", "R1", "ILD", b),
            gt_record("img", "R2", "ILD", b),
        ];
        let index = build_image_index(&records).unwrap();
        let preds = vec![pred("img", "ILD", 1.0, b), pred("img", "ILD", 1.0, b)];
        let report = evaluate_detections(&index, &preds, 0.4).unwrap();
        let c = &report.per_class[0];
        assert_eq!((c.tp, c.fp), (2, 0));
        assert!((c.ap.unwrap() - 1.0).abs() < 1e-12);
        assert!((report.mean_ap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_prediction_on_a_consumed_box_is_a_false_positive() {
        let b = bbox(0.0, 0.0, 10.0, 10.0);
        let index = build_image_index(&[gt_record("img", "R1", "ILD", b)]).unwrap();
        let preds = vec![pred("img", "ILD", 0.9, b), pred("img", "ILD", 0.8, b)];
        let report = evaluate_detections(&index, &preds, 0.4).unwrap();
        let c = &report.per_class[0];
        assert_eq!((c.n_gt, c.tp, c.fp), (1, 1, 1));
        assert!((c.ap.unwrap() - 1.0).abs() < 1e-12); // envelope holds at r=1
    }

    #[test]
    fn greedy_match_takes_the_highest_iou_box() {
        let g_small = bbox(0.0, 0.0, 10.0, 10.0);
        let g_big = bbox(0.0, 0.0, 12.0, 12.0);
        let records = vec![
            gt_record("img", "R1", "ILD", g_small),
            gt_record("img", "R1", "ILD", g_big),
        ];
        let index = build_image_index(&records).unwrap();
        // First prediction equals g_big so it must claim g_big (IoU 1), leaving
        // g_small for the second.
        let preds = vec![
            pred("img", "ILD", 0.9, g_big),
            pred("img", "ILD", 0.8, g_small),
        ];
        let report = evaluate_detections(&index, &preds, 0.4).unwrap();
        assert_eq!(report.per_class[0].tp, 2);
    }

    #[test]
    fn iou_exactly_at_threshold_matches() {
        let g = bbox(0.0, 0.0, 2.0, 2.0);
        let index = build_image_index(&[gt_record("img", "R1", "ILD", g)]).unwrap();
        let half = pred("img", "ILD", 0.9, bbox(0.0, 0.0, 2.0, 1.0)); // IoU 0.5
        let report = evaluate_detections(&index, &[half], 0.5).unwrap();
        assert_eq!(report.per_class[0].tp, 1);
        let report = evaluate_detections(&index, &[pred("img", "ILD", 0.9, bbox(0.0, 0.0, 2.0, 1.0))], 0.5000001).unwrap();
        assert_eq!(report.per_class[0].tp, 0);
    }

    #[test]
    fn unknown_image_prediction_counts_as_false_positive() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        let index = build_image_index(&[gt_record("img", "R1", "ILD", g)]).unwrap();
        let preds = vec![pred("ghost", "ILD", 0.9, g)];
        let report = evaluate_detections(&index, &preds, 0.4).unwrap();
        let c = &report.per_class[0];
        assert_eq!((c.tp, c.fp), (0, 1));
        assert_eq!(c.ap, Some(0.0));
    }

    #[test]
    fn class_with_predictions_but_no_ground_truth_scores_zero() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        let index = build_image_index(&[gt_record("img", "R1", "ILD", g)]).unwrap();
        let preds = vec![
            pred("img", "ILD", 0.9, g),
            pred("img", "Cardiomegaly", 0.9, g),
        ];
        let report = evaluate_detections(&index, &preds, 0.4).unwrap();
        assert_eq!(report.per_class.len(), 2);
        let cardio = report
            .per_class
            .iter()
            .find(|c| c.label == label("Cardiomegaly"))
            .unwrap();
        assert_eq!((cardio.n_gt, cardio.ap), (0, Some(0.0)));
        assert!((report.mean_ap - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_corpus_has_nothing_to_evaluate() {
        let index = build_image_index(&[]).unwrap();
        assert!(matches!(
            evaluate_detections(&index, &[], 0.4),
            Err(DetectionError::NoEvaluableClasses)
        ));
        // "No finding" rows alone leave no lesion ground truth either.
        let records = vec![AnnotationRecord {
            image_id: "img".into(),
            rad_id: "R1".into(),
            label: ClassLabel::NO_FINDING,
            bbox: None,
        }];
        let index = build_image_index(&records).unwrap();
        assert!(matches!(
            evaluate_detections(&index, &[], 0.4),
            Err(DetectionError::NoEvaluableClasses)
        ));
    }

    #[test]
    fn thresholds_outside_unit_interval_are_rejected() {
        let index = build_image_index(&[]).unwrap();
        for bad in [0.0, -0.5, 1.0, 1.5, f64::NAN] {
            assert!(matches!(
                evaluate_detections(&index, &[], bad),
                Err(DetectionError::InvalidThreshold { .. })
            ));
        }
    }

    #[test]
    fn match_outcome_reports_identities_and_ious_in_input_order() {
        let g0 = bbox(0.0, 0.0, 10.0, 10.0);
        let g1 = bbox(100.0, 0.0, 110.0, 10.0);
        // Input order: low score first; processing order is by score, so the
        // 0.9 prediction claims g1 before the 0.4 one claims g0.
        let scored = [(0.4, g0), (0.9, g1), (0.2, bbox(300.0, 0.0, 310.0, 10.0))];
        let outcome = match_detections(&scored, &[g0, g1], 0.4).unwrap();
        assert_eq!(outcome.per_pred[0].gt_index, Some(0));
        assert_eq!(outcome.per_pred[1].gt_index, Some(1));
        assert_eq!(outcome.per_pred[1].iou, Some(1.0));
        assert!(!outcome.per_pred[2].is_tp);
        assert_eq!(outcome.gt_matched, vec![true, true]);
    }

    #[test]
    fn equal_scores_match_in_ascending_input_order() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        let near = bbox(0.0, 0.0, 10.0, 9.0); // IoU 0.9
        let outcome = match_detections(&[(0.5, near), (0.5, g)], &[g], 0.4).unwrap();
        // The first input row wins the box despite the lower IoU.
        assert!(outcome.per_pred[0].is_tp);
        assert!(!outcome.per_pred[1].is_tp);
    }

    #[test]
    fn evaluation_is_deterministic_across_runs() {
        let g = bbox(0.0, 0.0, 10.0, 10.0);
        let records = vec![
            gt_record("a", "R1", "ILD", g),
            gt_record("b", "R1", "ILD", g),
        ];
        let index = build_image_index(&records).unwrap();
        let preds = vec![
            pred("b", "ILD", 0.9, g),
            pred("a", "ILD", 0.9, g),
            pred("a", "ILD", 0.9, bbox(100.0, 100.0, 110.0, 110.0)),
        ];
        let r1 = evaluate_detections(&index, &preds, 0.4).unwrap();
        let r2 = evaluate_detections(&index, &preds, 0.4).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.per_class[0].tp, 2);
    }

    const HEADER: &str = "image_id,class_name,score,x_min,y_min,x_max,y_max\n";

    #[test]
    fn prediction_csv_parses_and_round_trips() {
        let text = format!("{HEADER}img1,Cardiomegaly,0.85,100,200,400,500\n");
        let preds = parse_prediction_csv(text.as_bytes()).unwrap();
        assert_eq!(preds.len(), 1);
        assert_eq!(preds[0].score, 0.85);
        let mut buf = Vec::new();
        write_prediction_csv(&preds, &mut buf).unwrap();
        assert_eq!(parse_prediction_csv(buf.as_slice()).unwrap(), preds);
    }

    #[test]
    fn bad_prediction_rows_are_rejected_with_row_numbers() {
        for (body, check) in [
            (
                "img,Pneumonia,0.5,1,1,2,2\n",
                matches!(
                    parse_prediction_csv(format!("{HEADER}img,Pneumonia,0.5,1,1,2,2\n").as_bytes()),
                    Err(DetectionError::UnknownClassName { row: 2, .. })
                ),
            ),
            (
                "img,No finding,0.5,1,1,2,2\n",
                matches!(
                    parse_prediction_csv(
                        format!("{HEADER}img,No finding,0.5,1,1,2,2\n").as_bytes()
                    ),
                    Err(DetectionError::NoFindingPrediction { row: 2 })
                ),
            ),
            (
                "img,ILD,1.5,1,1,2,2\n",
                matches!(
                    parse_prediction_csv(format!("{HEADER}img,ILD,1.5,1,1,2,2\n").as_bytes()),
                    Err(DetectionError::InvalidScore { row: 2, .. })
                ),
            ),
            (
                "img,ILD,abc,1,1,2,2\n",
                matches!(
                    parse_prediction_csv(format!("{HEADER}img,ILD,abc,1,1,2,2\n").as_bytes()),
                    Err(DetectionError::InvalidScore { row: 2, .. })
                ),
            ),
            (
                "img,ILD,0.5,2,1,1,2\n",
                matches!(
                    parse_prediction_csv(format!("{HEADER}img,ILD,0.5,2,1,1,2\n").as_bytes()),
                    Err(DetectionError::InvalidBox { row: 2, .. })
                ),
            ),
            (
                "img,ILD,0.5,1,1,2,\n",
                matches!(
                    parse_prediction_csv(format!("{HEADER}img,ILD,0.5,1,1,2,\n").as_bytes()),
                    Err(DetectionError::MalformedRow { row: 2, .. })
                ),
            ),
        ] {
            assert!(check, "case {body:?} did not produce the expected error");
        }
    }
}
