//! Annotation table ingestion: the 15-class label taxonomy, bounding boxes,
//! per-row records, and the per-image index every downstream analysis consumes.
//!
//! Parsing is strict: the first bad row aborts with its row number. An audit
//! that silently drops rows audits a different corpus than the one on disk.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Canonical class names, index position = class id.
const LABEL_NAMES: [&str; 15] = [
    "Aortic enlargement",
    "Atelectasis",
    "Calcification",
    "Cardiomegaly",
    "Consolidation",
    "ILD",
    "Infiltration",
    "Lung Opacity",
    "Nodule/Mass",
    "Pleural effusion",
    "Pleural thickening",
    "Pneumothorax",
    "Pulmonary fibrosis",
    "Other lesions",
    "No finding",
];

/// One of the fifteen classes: fourteen lesion classes plus "No finding".
///
/// Labels are interned by id (0-14), so they are `Copy` and order by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassLabel(u8);

impl ClassLabel {
    pub const COUNT: usize = 15;
    /// The unique lesion-free label.
    pub const NO_FINDING: ClassLabel = ClassLabel(14);

    pub fn from_id(id: u8) -> Option<ClassLabel> {
        (id < Self::COUNT as u8).then_some(ClassLabel(id))
    }

    pub fn from_name(name: &str) -> Option<ClassLabel> {
        LABEL_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| ClassLabel(i as u8))
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        LABEL_NAMES[self.0 as usize]
    }

    pub fn is_no_finding(self) -> bool {
        self == Self::NO_FINDING
    }

    /// All fifteen labels in id order.
    pub fn all() -> impl Iterator<Item = ClassLabel> {
        (0..Self::COUNT as u8).map(ClassLabel)
    }

    /// The fourteen lesion labels in id order.
    pub fn lesions() -> impl Iterator<Item = ClassLabel> {
        Self::all().filter(|l| !l.is_no_finding())
    }

    /// File-name-safe form: lowercase, spaces and slashes collapsed to `-`.
    pub fn slug(self) -> String {
        self.name()
            .to_ascii_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '/' { '-' } else { c })
            .collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let name = String::deserialize(deserializer)?;
        ClassLabel::from_name(&name)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown class name {name:?}")))
    }
}

/// Axis-aligned box in image pixel coordinates, origin top-left.
///
/// Invariant: `x_min < x_max`, `y_min < y_max`, all coordinates finite and >= 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Option<BBox> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        b.is_valid().then_some(b)
    }

    pub fn is_valid(&self) -> bool {
        let coords = [self.x_min, self.y_min, self.x_max, self.y_max];
        coords.iter().all(|c| c.is_finite() && *c >= 0.0)
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }

    /// Intersection area; disjoint or edge-touching boxes give 0.
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x_max.min(other.x_max) - self.x_min.max(other.x_min);
        let h = self.y_max.min(other.y_max) - self.y_min.max(other.y_min);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }

    /// Fraction of `self`'s area covered by `other`.
    pub fn containment_in(&self, other: &BBox) -> f64 {
        self.intersection_area(other) / self.area()
    }

    /// Total ordering used to canonicalize box lists; compares coordinates
    /// lexicographically. Only called on valid (finite) boxes.
    fn coord_key(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }
}

/// One annotator's class assignment on one image, with a box for lesion labels.
///
/// Invariant: `label` is "No finding" if and only if `bbox` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub rad_id: String,
    pub label: ClassLabel,
    pub bbox: Option<BBox>,
}

/// One annotator's view of one image inside an [`ImageAnnotations`] entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnotatorView {
    pub rad_id: String,
    /// Distinct labels this annotator assigned to the image.
    pub labels: BTreeSet<ClassLabel>,
    /// Lesion boxes in canonical order (by label id, then coordinates).
    /// Duplicate identical rows are kept as duplicate boxes.
    pub boxes: Vec<(ClassLabel, BBox)>,
    /// Number of input records behind this view (counts "No finding" rows too).
    pub n_records: usize,
}

impl AnnotatorView {
    pub fn has_finding(&self) -> bool {
        self.labels.iter().any(|l| !l.is_no_finding())
    }

    pub fn boxes_of(&self, label: ClassLabel) -> impl Iterator<Item = &BBox> {
        self.boxes
            .iter()
            .filter(move |(l, _)| *l == label)
            .map(|(_, b)| b)
    }
}

/// All annotators' label sets and boxes for one image, annotators sorted by id.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageAnnotations {
    pub image_id: String,
    pub annotators: Vec<AnnotatorView>,
}

impl ImageAnnotations {
    pub fn annotator(&self, rad_id: &str) -> Option<&AnnotatorView> {
        self.annotators.iter().find(|a| a.rad_id == rad_id)
    }

    /// True when any annotator assigned any lesion label.
    pub fn has_finding(&self) -> bool {
        self.annotators.iter().any(|a| a.has_finding())
    }
}

/// Per-image index over a full annotation table, keyed by image id.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ImageIndex {
    pub images: BTreeMap<String, ImageAnnotations>,
}

impl ImageIndex {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageAnnotations> {
        self.images.get(image_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ImageAnnotations> {
        self.images.values()
    }

    /// All annotator ids present anywhere in the index, sorted.
    pub fn annotator_ids(&self) -> Vec<String> {
        let mut ids: BTreeSet<&str> = BTreeSet::new();
        for img in self.images.values() {
            for a in &img.annotators {
                ids.insert(&a.rad_id);
            }
        }
        ids.into_iter().map(str::to_owned).collect()
    }

    /// Images annotated by `rad_id`, in id order.
    pub fn images_of<'a>(
        &'a self,
        rad_id: &'a str,
    ) -> impl Iterator<Item = &'a ImageAnnotations> + 'a {
        self.images
            .values()
            .filter(move |img| img.annotator(rad_id).is_some())
    }
}

/// Label-pair relations flagged as definitionally overlapping, plus an optional
/// umbrella mapping (one label covering several others).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Taxonomy {
    /// Unordered pairs stored with the smaller id first.
    pub overlap_pairs: BTreeSet<(ClassLabel, ClassLabel)>,
    pub umbrella: BTreeMap<ClassLabel, BTreeSet<ClassLabel>>,
}

impl Default for Taxonomy {
    fn default() -> Self {
        let mut overlap_pairs = BTreeSet::new();
        for (a, b) in [
            ("ILD", "Pulmonary fibrosis"),
            ("Consolidation", "Infiltration"),
        ] {
            let a = ClassLabel::from_name(a).unwrap();
            let b = ClassLabel::from_name(b).unwrap();
            overlap_pairs.insert(ordered_pair(a, b));
        }
        Taxonomy {
            overlap_pairs,
            umbrella: BTreeMap::new(),
        }
    }
}

impl Taxonomy {
    /// Fails if "No finding" appears in any relation.
    pub fn validate(&self) -> Result<(), AnnotationError> {
        let touches_no_finding = self
            .overlap_pairs
            .iter()
            .flat_map(|(a, b)| [*a, *b])
            .chain(self.umbrella.keys().copied())
            .chain(self.umbrella.values().flatten().copied())
            .any(|l| l.is_no_finding());
        if touches_no_finding {
            return Err(AnnotationError::NoFindingInTaxonomyRelation);
        }
        Ok(())
    }

    /// Overlap pairs plus every (umbrella, covered) pair, deduplicated.
    pub fn related_pairs(&self) -> BTreeSet<(ClassLabel, ClassLabel)> {
        let mut pairs = self.overlap_pairs.clone();
        for (u, covered) in &self.umbrella {
            for c in covered {
                pairs.insert(ordered_pair(*u, *c));
            }
        }
        pairs
    }
}

pub fn ordered_pair(a: ClassLabel, b: ClassLabel) -> (ClassLabel, ClassLabel) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("row {row}: unknown class name {name:?}")]
    UnknownClassName { row: u64, name: String },
    #[error("row {row}: class id {id} does not match {name:?} (expected {expected})")]
    ClassIdMismatch {
        row: u64,
        name: String,
        id: i64,
        expected: u8,
    },
    #[error("row {row}: invalid box ({detail})")]
    InvalidBox { row: u64, detail: String },
    #[error("row {row}: \"No finding\" row carries box coordinates")]
    BoxOnNoFinding { row: u64 },
    #[error("row {row}: malformed row ({detail})")]
    MalformedRow { row: u64, detail: String },
    #[error("annotator {rad_id} gave image {image_id} both \"No finding\" and a lesion label")]
    MixedNoFinding { image_id: String, rad_id: String },
    #[error("taxonomy relations must not reference \"No finding\"")]
    NoFindingInTaxonomyRelation,
    #[error("failed to read annotation table: {0}")]
    Io(#[from] std::io::Error),
}

const CSV_HEADER: [&str; 8] = [
    "image_id",
    "class_name",
    "class_id",
    "rad_id",
    "x_min",
    "y_min",
    "x_max",
    "y_max",
];

/// Parse an annotation table. Strict: the first offending row aborts the parse,
/// and every error carries the 1-based file row number (header = row 1).
pub fn parse_annotation_csv<R: Read>(reader: R) -> Result<Vec<AnnotationRecord>, AnnotationError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    {
        let headers = rdr.headers().map_err(|e| AnnotationError::MalformedRow {
            row: 1,
            detail: e.to_string(),
        })?;
        if headers.iter().ne(CSV_HEADER) {
            return Err(AnnotationError::MalformedRow {
                row: 1,
                detail: format!("unexpected header {:?}", headers),
            });
        }
    }

    let mut records = Vec::new();
    for (i, result) in rdr.records().enumerate() {
        let row = i as u64 + 2; // header occupies row 1
        let rec = result.map_err(|e| AnnotationError::MalformedRow {
            row,
            detail: e.to_string(),
        })?;
        if rec.len() != 8 {
            return Err(AnnotationError::MalformedRow {
                row,
                detail: format!("expected 8 fields, got {}", rec.len()),
            });
        }

        let image_id = rec[0].trim().to_owned();
        let class_name = rec[1].trim();
        let rad_id = rec[3].trim().to_owned();
        if image_id.is_empty() || rad_id.is_empty() {
            return Err(AnnotationError::MalformedRow {
                row,
                detail: "empty image_id or rad_id".into(),
            });
        }

        let label =
            ClassLabel::from_name(class_name).ok_or_else(|| AnnotationError::UnknownClassName {
                row,
                name: class_name.to_owned(),
            })?;
        // class_name is authoritative; the id column is cross-checked when it parses.
        if let Ok(id) = rec[2].trim().parse::<i64>() {
            if id != i64::from(label.id()) {
                return Err(AnnotationError::ClassIdMismatch {
                    row,
                    name: class_name.to_owned(),
                    id,
                    expected: label.id(),
                });
            }
        }

        let coords: Vec<Option<f64>> = (4..8)
            .map(|j| parse_coord(rec[j].trim(), row))
            .collect::<Result<_, _>>()?;
        let n_present = coords.iter().filter(|c| c.is_some()).count();

        let bbox = match n_present {
            0 => None,
            4 => {
                let (x0, y0, x1, y1) = (
                    coords[0].unwrap(),
                    coords[1].unwrap(),
                    coords[2].unwrap(),
                    coords[3].unwrap(),
                );
                Some(BBox::new(x0, y0, x1, y1).ok_or_else(|| AnnotationError::InvalidBox {
                    row,
                    detail: format!("({x0},{y0},{x1},{y1})"),
                })?)
            }
            _ => {
                return Err(AnnotationError::MalformedRow {
                    row,
                    detail: format!("{n_present} of 4 coordinates present"),
                })
            }
        };

        match (label.is_no_finding(), &bbox) {
            (true, Some(_)) => return Err(AnnotationError::BoxOnNoFinding { row }),
            (false, None) => {
                return Err(AnnotationError::MalformedRow {
                    row,
                    detail: format!("lesion row {:?} missing coordinates", class_name),
                })
            }
            _ => {}
        }

        records.push(AnnotationRecord {
            image_id,
            rad_id,
            label,
            bbox,
        });
    }
    Ok(records)
}

fn parse_coord(field: &str, row: u64) -> Result<Option<f64>, AnnotationError> {
    if field.is_empty() || field.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        _ => Err(AnnotationError::MalformedRow {
            row,
            detail: format!("unparseable coordinate {field:?}"),
        }),
    }
}

/// Serialize records in the same layout [`parse_annotation_csv`] reads.
pub fn write_annotation_csv<W: std::io::Write>(
    records: &[AnnotationRecord],
    writer: W,
) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_HEADER)?;
    for r in records {
        let coords = match &r.bbox {
            Some(b) => [
                b.x_min.to_string(),
                b.y_min.to_string(),
                b.x_max.to_string(),
                b.y_max.to_string(),
            ],
            None => Default::default(),
        };
        w.write_record([
            r.image_id.as_str(),
            r.label.name(),
            &r.label.id().to_string(),
            r.rad_id.as_str(),
            &coords[0],
            &coords[1],
            &coords[2],
            &coords[3],
        ])?;
    }
    w.flush()
}

/// Group records by image and annotator. Grouping is exact: no record is
/// dropped or duplicated, and the result does not depend on input row order
/// (per-annotator box lists are canonically sorted).
pub fn build_image_index(records: &[AnnotationRecord]) -> Result<ImageIndex, AnnotationError> {
    let mut images: BTreeMap<String, BTreeMap<String, AnnotatorView>> = BTreeMap::new();
    for r in records {
        let view = images
            .entry(r.image_id.clone())
            .or_default()
            .entry(r.rad_id.clone())
            .or_insert_with(|| AnnotatorView {
                rad_id: r.rad_id.clone(),
                labels: BTreeSet::new(),
                boxes: Vec::new(),
                n_records: 0,
            });
        view.labels.insert(r.label);
        if let Some(b) = r.bbox {
            view.boxes.push((r.label, b));
        }
        view.n_records += 1;
    }

    let mut index = ImageIndex::default();
    for (image_id, annotators) in images {
        let mut views: Vec<AnnotatorView> = annotators.into_values().collect();
        for v in &mut views {
            if v.labels.contains(&ClassLabel::NO_FINDING) && v.labels.len() > 1 {
                return Err(AnnotationError::MixedNoFinding {
                    image_id,
                    rad_id: v.rad_id.clone(),
                });
            }
            v.boxes.sort_by(|(la, ba), (lb, bb)| {
                la.cmp(lb)
                    .then_with(|| ba.coord_key().partial_cmp(&bb.coord_key()).unwrap())
            });
        }
        index.images.insert(
            image_id.clone(),
            ImageAnnotations {
                image_id,
                annotators: views,
            },
        );
    }
    Ok(index)
}
