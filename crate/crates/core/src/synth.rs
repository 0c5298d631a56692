//! Deterministic synthetic corpus generator.
//!
//! Generates DICOM files, annotation and prediction tables, and a manifest
//! recording every planted statistic as an exact count, so audit output can
//! be compared to the manifest with equality rather than tolerance. The
//! whole tree is a pure function of the spec (which includes the seed):
//! rerunning the generator produces byte-identical files.
//!
//! Planting uses exact counts, `floor(rate * n)` with the remainder policy
//! recorded in the manifest, never sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{write_annotation_csv, AnnotationRecord, BBox, ClassLabel};
use crate::detection::{write_prediction_csv, Prediction};
use crate::dicom::{AgeValidity, DicomWriter, ElementSpan};
use crate::fairness::AgeBin;
use crate::util::seeded_stream;

const IMAGE_SIDE: u16 = 512;
const PREDICTION_SCORE: f64 = 0.9;
const MALFORMED_AGE: &str = "?Y";
const OUT_OF_RANGE_AGE: &str = "120Y";
const OUT_OF_RANGE_YEARS: u32 = 120;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("corpus spec invalid: {detail}")]
    InvalidSpec { detail: String },
    #[error("cannot write {path}: {source}")]
    OutputNotWritable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Where boxes of a class land on the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Boxes come in exactly mirrored pairs (odd leftovers self-mirror), so
    /// the accumulated heatmap is mirror-symmetric by construction.
    Symmetric,
    LeftOnly,
    RightOnly,
}

/// How the predictions table is filled.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Empty table (header only).
    None,
    /// One prediction per pooled ground-truth box instance, IoU 1.
    Perfect { score: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptionKind {
    /// Cut the file inside a data element header before pixel data.
    Truncate,
    /// Overwrite the DICM magic with junk.
    WipeMagic,
    /// Flip every bit of the pixel payload; header parsing must not change.
    PixelNoise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub image_index: usize,
    pub kind: CorruptionKind,
}

/// Planted confusion counts for one subgroup of a parity plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellPlan {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl CellPlan {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn ppv(&self) -> Option<f64> {
        let denom = self.tp + self.fp;
        (denom > 0).then(|| self.tp as f64 / denom as f64)
    }
}

/// Exact image-level confusion counts to plant for one class, split by the
/// young/old age subgroup. Claimed images get valid ages in their bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityPlantSpec {
    pub label: ClassLabel,
    pub young: CellPlan,
    pub old: CellPlan,
}

/// Full description of a synthetic corpus. The manifest, the files, and
/// every byte of output are a pure function of this value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSpec {
    pub seed: u64,
    pub n_images: usize,
    /// Age category fractions of n_images; valid ages are the remainder.
    pub missing_age_rate: f64,
    pub malformed_age_rate: f64,
    pub out_of_range_age_rate: f64,
    /// Of the validly aged images, how many get ages 1 to 17.
    pub n_children: usize,
    pub missing_sex_rate: f64,
    pub sex_o_rate: f64,
    /// Share of the non-missing, non-O remainder planted as F.
    pub female_rate: f64,
    /// Photometric value fractions, summing to 1; the reserved key
    /// "missing" omits the tag.
    pub photometric_mix: BTreeMap<String, f64>,
    /// Fraction of files written in implicit VR little endian.
    pub implicit_syntax_rate: f64,
    pub n_annotators: usize,
    /// Fraction of images planted with a lesion (beyond parity claims).
    pub finding_rate: f64,
    /// Fraction of planted finding images where one annotator deviates by
    /// claiming "No finding".
    pub disagreement_rate: f64,
    /// Lesion classes cycled over finding images.
    pub classes: Vec<ClassLabel>,
    /// Per-class placement; unlisted classes default to Symmetric.
    pub placement: BTreeMap<ClassLabel, Placement>,
    pub predictions: PredictionMode,
    pub parity: Option<ParityPlantSpec>,
    pub corruptions: Vec<CorruptionSpec>,
}

impl Default for CorpusSpec {
    fn default() -> CorpusSpec {
        CorpusSpec {
            seed: 0,
            n_images: 0,
            missing_age_rate: 0.0,
            malformed_age_rate: 0.0,
            out_of_range_age_rate: 0.0,
            n_children: 0,
            missing_sex_rate: 0.0,
            sex_o_rate: 0.0,
            female_rate: 0.5,
            photometric_mix: [("MONOCHROME2".to_owned(), 1.0)].into_iter().collect(),
            implicit_syntax_rate: 0.0,
            n_annotators: 3,
            finding_rate: 0.0,
            disagreement_rate: 0.0,
            classes: vec![ClassLabel::from_name("Pneumothorax").unwrap()],
            placement: BTreeMap::new(),
            predictions: PredictionMode::None,
            parity: None,
            corruptions: Vec::new(),
        }
    }
}

impl CorpusSpec {
    /// Uniform demographics, perfect agreement, mirrored box placement, and
    /// a perfect detector: a corpus every audit should pass without flags.
    pub fn clean(n_images: usize, seed: u64) -> CorpusSpec {
        CorpusSpec {
            seed,
            n_images,
            implicit_syntax_rate: 0.3,
            finding_rate: 0.6,
            classes: ["Pneumothorax", "ILD", "Nodule/Mass"]
                .into_iter()
                .map(|n| ClassLabel::from_name(n).unwrap())
                .collect(),
            predictions: PredictionMode::Perfect {
                score: PREDICTION_SCORE,
            },
            ..CorpusSpec::default()
        }
    }

    /// 1,000 images planting headline metadata rates: 68% missing age, 3%
    /// malformed, 4% out of range (so 25% valid), 17% missing sex, 34% sex
    /// O, 17% MONOCHROME1, and a pediatric subset.
    pub fn metadata_audit(seed: u64) -> CorpusSpec {
        CorpusSpec {
            seed,
            n_images: 1000,
            missing_age_rate: 0.68,
            malformed_age_rate: 0.03,
            out_of_range_age_rate: 0.04,
            n_children: 40,
            missing_sex_rate: 0.17,
            sex_o_rate: 0.34,
            photometric_mix: [
                ("MONOCHROME1".to_owned(), 0.17),
                ("MONOCHROME2".to_owned(), 0.80),
                ("missing".to_owned(), 0.03),
            ]
            .into_iter()
            .collect(),
            implicit_syntax_rate: 0.5,
            finding_rate: 0.5,
            disagreement_rate: 0.2,
            ..CorpusSpec::default()
        }
    }

    /// Plants the predictive-parity contrast: aortic enlargement PPV 0.13
    /// in the young subgroup and 0.74 in the old, gap 0.61.
    pub fn parity(seed: u64) -> CorpusSpec {
        CorpusSpec {
            seed,
            n_images: 300,
            female_rate: 0.0,
            parity: Some(ParityPlantSpec {
                label: ClassLabel::from_name("Aortic enlargement").unwrap(),
                young: CellPlan {
                    tp: 13,
                    fp: 87,
                    fn_: 10,
                    tn: 40,
                },
                old: CellPlan {
                    tp: 74,
                    fp: 26,
                    fn_: 10,
                    tn: 40,
                },
            }),
            ..CorpusSpec::default()
        }
    }

    /// Small all-valid corpus with one file truncated, one with wiped
    /// magic, and one with corrupted pixels.
    pub fn corrupted(seed: u64) -> CorpusSpec {
        CorpusSpec {
            seed,
            n_images: 12,
            implicit_syntax_rate: 0.5,
            finding_rate: 0.5,
            corruptions: vec![
                CorruptionSpec {
                    image_index: 0,
                    kind: CorruptionKind::Truncate,
                },
                CorruptionSpec {
                    image_index: 1,
                    kind: CorruptionKind::WipeMagic,
                },
                CorruptionSpec {
                    image_index: 2,
                    kind: CorruptionKind::PixelNoise,
                },
            ],
            ..CorpusSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |detail: String| Err(SynthError::InvalidSpec { detail });
        let fractions = [
            ("missing_age_rate", self.missing_age_rate),
            ("malformed_age_rate", self.malformed_age_rate),
            ("out_of_range_age_rate", self.out_of_range_age_rate),
            ("missing_sex_rate", self.missing_sex_rate),
            ("sex_o_rate", self.sex_o_rate),
            ("female_rate", self.female_rate),
            ("implicit_syntax_rate", self.implicit_syntax_rate),
            ("finding_rate", self.finding_rate),
            ("disagreement_rate", self.disagreement_rate),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return fail(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        let age_sum =
            self.missing_age_rate + self.malformed_age_rate + self.out_of_range_age_rate;
        if age_sum > 1.0 + 1e-9 {
            return fail(format!("age category rates sum to {age_sum}, over 1"));
        }
        if self.n_images > 0 {
            if self.photometric_mix.is_empty() {
                return fail("photometric_mix must not be empty".into());
            }
            let mix_sum: f64 = self.photometric_mix.values().sum();
            if (mix_sum - 1.0).abs() > 1e-9 {
                return fail(format!("photometric_mix sums to {mix_sum}, not 1"));
            }
        }
        if self.photometric_mix.values().any(|v| !(0.0..=1.0).contains(v)) {
            return fail("photometric_mix fractions must be in [0, 1]".into());
        }
        if self.n_annotators == 0 || self.n_annotators > 99 {
            return fail(format!(
                "n_annotators must be 1 to 99, got {}",
                self.n_annotators
            ));
        }
        if self.finding_rate > 0.0 && self.classes.is_empty() {
            return fail("classes must not be empty when findings are planted".into());
        }
        if self.classes.iter().any(|c| c.is_no_finding()) {
            return fail("classes must be lesion labels".into());
        }
        if let Some(p) = &self.parity {
            if p.label.is_no_finding() {
                return fail("parity label must be a lesion class".into());
            }
        }
        let mut seen = BTreeSet::new();
        for c in &self.corruptions {
            if c.image_index >= self.n_images {
                return fail(format!(
                    "corruption index {} out of range for {} images",
                    c.image_index, self.n_images
                ));
            }
            if !seen.insert(c.image_index) {
                return fail(format!("duplicate corruption for image {}", c.image_index));
            }
        }
        Ok(())
    }
}

/// The planted truth for a single image.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImagePlant {
    pub age_validity: AgeValidity,
    pub age_raw: Option<String>,
    pub age_years: Option<u32>,
    pub sex_raw: Option<String>,
    /// None means the tag was omitted.
    pub photometric: Option<String>,
    pub implicit_syntax: bool,
    /// True when at least one annotator drew a lesion.
    pub finding: bool,
    pub label: Option<ClassLabel>,
    pub bbox: Option<BBox>,
    /// Annotator who claimed "No finding" against the consensus.
    pub deviator: Option<String>,
    pub parity: Option<ParityRole>,
    pub corruption: Option<CorruptionKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParityRole {
    pub subgroup: AgeBin,
    pub predicted: bool,
    pub actual: bool,
}

/// Expected output of the metadata audit, corruption effects included:
/// a file that no longer parses counts as fully missing metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetadataExpect {
    pub n_missing_age: usize,
    pub n_malformed_age: usize,
    pub n_out_of_range_age: usize,
    pub n_valid_age: usize,
    pub n_missing_sex: usize,
    pub n_sex_m: usize,
    pub n_sex_f: usize,
    pub n_sex_o: usize,
    /// Includes the "missing" key.
    pub photometric: BTreeMap<String, usize>,
    pub children: BTreeSet<String>,
    pub out_of_range_ages: BTreeMap<String, u32>,
    pub n_parse_failures: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AnnotationExpect {
    pub n_finding_images: usize,
    pub n_no_finding_images: usize,
    pub n_deviator_images: usize,
    pub n_rows: usize,
    /// Per annotator, every image they marked "No finding".
    pub no_finding_by_rad: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellExpect {
    pub support: usize,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
    pub ppv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessExpect {
    pub label: ClassLabel,
    pub young: CellExpect,
    pub old: CellExpect,
    pub expected_ppv_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorruptionRecord {
    pub image_id: String,
    pub kind: CorruptionKind,
    /// Expected parse error ("truncated", "missing_magic"); None means the
    /// file must still parse with an unchanged header.
    pub expected_error_kind: Option<String>,
    pub expected_error_offset: Option<u64>,
}

/// Everything the generator planted, as exact counts, plus the expected
/// outputs of the audits that have closed-form expectations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub spec: CorpusSpec,
    pub n_images: usize,
    /// How rounding remainders were assigned.
    pub remainder_notes: Vec<String>,
    pub metadata: MetadataExpect,
    pub annotations: AnnotationExpect,
    /// Expected mAP when the prediction mode has one.
    pub expected_map: Option<f64>,
    pub fairness: Option<FairnessExpect>,
    pub corruptions: Vec<CorruptionRecord>,
    pub images: BTreeMap<String, ImagePlant>,
}

struct PlantTable {
    ids: Vec<String>,
    plants: Vec<ImagePlant>,
    remainder_notes: Vec<String>,
}

/// Compute every per-image assignment. Pure function of the spec.
fn plant(spec: &CorpusSpec) -> Result<PlantTable, SynthError> {
    let n = spec.n_images;
    let ids: Vec<String> = (0..n).map(|i| format!("img_{i:05}")).collect();
    let mut plants: Vec<ImagePlant> = (0..n)
        .map(|_| ImagePlant {
            age_validity: AgeValidity::Missing,
            age_raw: None,
            age_years: None,
            sex_raw: None,
            photometric: None,
            implicit_syntax: false,
            finding: false,
            label: None,
            bbox: None,
            deviator: None,
            parity: None,
            corruption: None,
        })
        .collect();
    let mut notes = Vec::new();
    let fail = |detail: String| Err(SynthError::InvalidSpec { detail });

    // Parity roles claim images first; their age bins are forced.
    let mut free: Vec<usize> = (0..n).collect();
    if let Some(p) = &spec.parity {
        let total = p.young.total() + p.old.total();
        if total > n {
            return fail(format!("parity plant needs {total} images, have {n}"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seeded_stream(spec.seed, "parity_assign"));
        let claimed: Vec<usize> = order[..total].to_vec();
        let mut age_rng = seeded_stream(spec.seed, "parity_age");
        let mut it = claimed.iter();
        for (bin, plan) in [(AgeBin::Young, &p.young), (AgeBin::Old, &p.old)] {
            let roles = [
                (plan.tp, true, true),
                (plan.fp, true, false),
                (plan.fn_, false, true),
                (plan.tn, false, false),
            ];
            for (count, predicted, actual) in roles {
                for _ in 0..count {
                    let idx = *it.next().expect("claimed length equals total");
                    let years = match bin {
                        AgeBin::Young => age_rng.gen_range(18..=49),
                        AgeBin::Old => age_rng.gen_range(50..=99),
                        AgeBin::Missing => unreachable!(),
                    };
                    let pl = &mut plants[idx];
                    pl.parity = Some(ParityRole {
                        subgroup: bin,
                        predicted,
                        actual,
                    });
                    pl.age_validity = AgeValidity::Valid;
                    pl.age_years = Some(years);
                    pl.age_raw = Some(format!("{years:03}Y"));
                    pl.finding = actual;
                    if actual {
                        pl.label = Some(p.label);
                    }
                }
            }
        }
        let claimed_set: BTreeSet<usize> = claimed.into_iter().collect();
        free.retain(|i| !claimed_set.contains(i));
    }

    // Age categories: exact counts over n_images, planted on free images.
    let n_missing = (spec.missing_age_rate * n as f64).floor() as usize;
    let n_malformed = (spec.malformed_age_rate * n as f64).floor() as usize;
    let n_oor = (spec.out_of_range_age_rate * n as f64).floor() as usize;
    if n_missing + n_malformed + n_oor > free.len() {
        return fail(format!(
            "age plants need {} images, only {} unclaimed",
            n_missing + n_malformed + n_oor,
            free.len()
        ));
    }
    notes.push(format!(
        "age remainder: {} images left over after floor() go to the valid category",
        free.len() - n_missing - n_malformed - n_oor
    ));
    let mut age_order = free.clone();
    age_order.shuffle(&mut seeded_stream(spec.seed, "age"));
    let mut age_value_rng = seeded_stream(spec.seed, "age_value");
    let n_valid_free = age_order.len() - n_missing - n_malformed - n_oor;
    if spec.n_children > n_valid_free {
        return fail(format!(
            "n_children {} exceeds the {} validly aged free images",
            spec.n_children, n_valid_free
        ));
    }
    let mut valid_seen = 0usize;
    for (pos, idx) in age_order.iter().enumerate() {
        let pl = &mut plants[*idx];
        if pos < n_missing {
            pl.age_validity = AgeValidity::Missing;
        } else if pos < n_missing + n_malformed {
            pl.age_validity = AgeValidity::Malformed;
            pl.age_raw = Some(MALFORMED_AGE.to_owned());
        } else if pos < n_missing + n_malformed + n_oor {
            pl.age_validity = AgeValidity::OutOfRange;
            pl.age_raw = Some(OUT_OF_RANGE_AGE.to_owned());
            pl.age_years = Some(OUT_OF_RANGE_YEARS);
        } else {
            let years = if valid_seen < spec.n_children {
                age_value_rng.gen_range(1..=17)
            } else {
                age_value_rng.gen_range(18..=99)
            };
            valid_seen += 1;
            pl.age_validity = AgeValidity::Valid;
            pl.age_years = Some(years);
            pl.age_raw = Some(format!("{years:03}Y"));
        }
    }

    // Sex over all images.
    let n_missing_sex = (spec.missing_sex_rate * n as f64).floor() as usize;
    let n_o = (spec.sex_o_rate * n as f64).floor() as usize;
    if n_missing_sex + n_o > n {
        return fail("missing_sex_rate + sex_o_rate exceeds the corpus".into());
    }
    let rest = n - n_missing_sex - n_o;
    let n_f = (spec.female_rate * rest as f64).floor() as usize;
    notes.push("sex remainder: non-missing, non-O leftovers after floor() are M".to_owned());
    let mut sex_order: Vec<usize> = (0..n).collect();
    sex_order.shuffle(&mut seeded_stream(spec.seed, "sex"));
    for (pos, idx) in sex_order.iter().enumerate() {
        plants[*idx].sex_raw = if pos < n_missing_sex {
            None
        } else if pos < n_missing_sex + n_o {
            Some("O".to_owned())
        } else if pos < n_missing_sex + n_o + n_f {
            Some("F".to_owned())
        } else {
            Some("M".to_owned())
        };
    }

    // Photometric interpretation over all images.
    if n > 0 {
        let mut counts: Vec<(String, usize)> = spec
            .photometric_mix
            .iter()
            .map(|(k, frac)| (k.clone(), (frac * n as f64).floor() as usize))
            .collect();
        let assigned: usize = counts.iter().map(|(_, c)| c).sum();
        counts[0].1 += n - assigned;
        notes.push(format!(
            "photometric remainder: {} leftover images go to {:?}",
            n - assigned,
            counts[0].0
        ));
        let mut photo_order: Vec<usize> = (0..n).collect();
        photo_order.shuffle(&mut seeded_stream(spec.seed, "photometric"));
        let mut pos = 0usize;
        for (value, count) in counts {
            for idx in &photo_order[pos..pos + count] {
                plants[*idx].photometric =
                    (value != "missing").then(|| value.clone());
            }
            pos += count;
        }
    }

    // Transfer syntax over all images.
    let n_implicit = (spec.implicit_syntax_rate * n as f64).floor() as usize;
    let mut syntax_order: Vec<usize> = (0..n).collect();
    syntax_order.shuffle(&mut seeded_stream(spec.seed, "syntax"));
    for idx in &syntax_order[..n_implicit] {
        plants[*idx].implicit_syntax = true;
    }

    // Findings on free images; parity actuals already carry theirs.
    let n_finding = (spec.finding_rate * n as f64).floor() as usize;
    if n_finding > free.len() {
        return fail(format!(
            "finding_rate plants {} findings, only {} unclaimed images",
            n_finding,
            free.len()
        ));
    }
    let mut finding_order = free.clone();
    finding_order.shuffle(&mut seeded_stream(spec.seed, "finding"));
    let mut finding_free: Vec<usize> = finding_order[..n_finding].to_vec();
    finding_free.sort_unstable();
    for (ordinal, idx) in finding_free.iter().enumerate() {
        let pl = &mut plants[*idx];
        pl.finding = true;
        pl.label = Some(spec.classes[ordinal % spec.classes.len()]);
    }

    // Boxes: pair symmetric-placement images so the heatmap mirror-closes.
    let mut box_rng = seeded_stream(spec.seed, "boxes");
    let side = f64::from(IMAGE_SIDE);
    let left_box = |rng: &mut rand_chacha::ChaCha8Rng| {
        let x0 = f64::from(rng.gen_range(26u32..=150));
        let w = f64::from(rng.gen_range(50u32..=100));
        let y0 = f64::from(rng.gen_range(50u32..=350));
        let h = f64::from(rng.gen_range(50u32..=100));
        BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
    };
    let mirror = |b: &BBox| BBox::new(side - b.x_max, b.y_min, side - b.x_min, b.y_max).unwrap();
    for class in &spec.classes {
        let members: Vec<usize> = finding_free
            .iter()
            .copied()
            .filter(|i| plants[*i].label == Some(*class))
            .collect();
        let placement = spec
            .placement
            .get(class)
            .copied()
            .unwrap_or(Placement::Symmetric);
        match placement {
            Placement::Symmetric => {
                let mut j = 0;
                while j + 1 < members.len() {
                    let b = left_box(&mut box_rng);
                    plants[members[j]].bbox = Some(b);
                    plants[members[j + 1]].bbox = Some(mirror(&b));
                    j += 2;
                }
                if j < members.len() {
                    // Self-mirroring centered box keeps the multiset closed.
                    let x0 = f64::from(box_rng.gen_range(150u32..=250));
                    let y0 = f64::from(box_rng.gen_range(50u32..=350));
                    let h = f64::from(box_rng.gen_range(50u32..=100));
                    plants[members[j]].bbox =
                        Some(BBox::new(x0, y0, side - x0, y0 + h).unwrap());
                }
            }
            Placement::LeftOnly => {
                for idx in members {
                    plants[idx].bbox = Some(left_box(&mut box_rng));
                }
            }
            Placement::RightOnly => {
                for idx in members {
                    let b = left_box(&mut box_rng);
                    plants[idx].bbox = Some(mirror(&b));
                }
            }
        }
    }
    // Parity images draw independent boxes (side is irrelevant to parity).
    let mut parity_box_rng = seeded_stream(spec.seed, "parity_boxes");
    for pl in plants.iter_mut() {
        if pl.parity.is_some() {
            pl.bbox = Some(left_box(&mut parity_box_rng));
        }
    }

    // Deviators among the free finding images.
    let n_deviate = (spec.disagreement_rate * n_finding as f64).floor() as usize;
    let mut deviate_order = finding_free.clone();
    deviate_order.shuffle(&mut seeded_stream(spec.seed, "deviate"));
    for (ordinal, idx) in deviate_order[..n_deviate].iter().enumerate() {
        let rad = format!("R{:02}", (ordinal % spec.n_annotators) + 1);
        plants[*idx].deviator = Some(rad);
    }

    // Corruptions.
    for c in &spec.corruptions {
        plants[c.image_index].corruption = Some(c.kind);
    }

    Ok(PlantTable {
        ids,
        plants,
        remainder_notes: notes,
    })
}

fn rad_ids(n_annotators: usize) -> Vec<String> {
    (1..=n_annotators).map(|i| format!("R{i:02}")).collect()
}

fn annotation_rows(spec: &CorpusSpec, table: &PlantTable) -> Vec<AnnotationRecord> {
    let rads = rad_ids(spec.n_annotators);
    let mut rows = Vec::new();
    for (id, pl) in table.ids.iter().zip(&table.plants) {
        for rad in &rads {
            let no_finding = !pl.finding || pl.deviator.as_deref() == Some(rad);
            if no_finding {
                rows.push(AnnotationRecord {
                    image_id: id.clone(),
                    rad_id: rad.clone(),
                    label: ClassLabel::NO_FINDING,
                    bbox: None,
                });
            } else {
                rows.push(AnnotationRecord {
                    image_id: id.clone(),
                    rad_id: rad.clone(),
                    label: pl.label.expect("finding image has a label"),
                    bbox: Some(pl.bbox.expect("finding image has a box")),
                });
            }
        }
    }
    rows
}

fn prediction_rows(spec: &CorpusSpec, table: &PlantTable) -> Vec<Prediction> {
    let mut rows = Vec::new();
    match spec.predictions {
        PredictionMode::Perfect { score } => {
            let rads = spec.n_annotators;
            for (id, pl) in table.ids.iter().zip(&table.plants) {
                if !pl.finding {
                    continue;
                }
                // The pooled ground truth holds one copy per agreeing
                // annotator; a perfect detector must claim each copy.
                let copies = rads - usize::from(pl.deviator.is_some());
                for _ in 0..copies {
                    rows.push(Prediction {
                        image_id: id.clone(),
                        label: pl.label.expect("finding image has a label"),
                        score,
                        bbox: pl.bbox.expect("finding image has a box"),
                    });
                }
            }
        }
        PredictionMode::None => {}
    }
    if let Some(p) = &spec.parity {
        for (id, pl) in table.ids.iter().zip(&table.plants) {
            if pl.parity.is_some_and(|r| r.predicted) {
                rows.push(Prediction {
                    image_id: id.clone(),
                    label: p.label,
                    score: PREDICTION_SCORE,
                    bbox: pl.bbox.expect("parity image has a box"),
                });
            }
        }
    }
    rows
}

/// Serialize one image's DICOM file, returning the bytes and element spans.
fn dicom_bytes(pl: &ImagePlant) -> (Vec<u8>, BTreeMap<(u16, u16), ElementSpan>) {
    let mut w = DicomWriter::new(!pl.implicit_syntax);
    if let Some(sex) = &pl.sex_raw {
        w.put_str((0x0010, 0x0040), *b"CS", sex);
    }
    if let Some(age) = &pl.age_raw {
        w.put_str((0x0010, 0x1010), *b"AS", age);
    }
    if let Some(photo) = &pl.photometric {
        w.put_str((0x0028, 0x0004), *b"CS", photo);
    }
    w.put_u16((0x0028, 0x0010), IMAGE_SIDE);
    w.put_u16((0x0028, 0x0011), IMAGE_SIDE);
    w.put_u16((0x0028, 0x0100), 8);
    w.put_bytes((0x7FE0, 0x0010), *b"OB", vec![0u8; 64]);
    w.build()
}

/// Apply one corruption to the written bytes, returning the expected
/// parse outcome.
fn corrupt(
    bytes: &mut Vec<u8>,
    spans: &BTreeMap<(u16, u16), ElementSpan>,
    kind: CorruptionKind,
) -> (Option<String>, Option<u64>) {
    match kind {
        CorruptionKind::Truncate => {
            // Cut inside the Rows element header: the parser reads its tag
            // and then starves, anchoring the error at the element start.
            let span = &spans[&(0x0028, 0x0010)];
            bytes.truncate(span.tag_offset as usize + 7);
            ("truncated".to_owned().into(), Some(span.tag_offset))
        }
        CorruptionKind::WipeMagic => {
            bytes[128..132].copy_from_slice(b"XXXX");
            ("missing_magic".to_owned().into(), Some(128))
        }
        CorruptionKind::PixelNoise => {
            let span = &spans[&(0x7FE0, 0x0010)];
            for b in &mut bytes[span.value_offset as usize..] {
                *b ^= 0xFF;
            }
            (None, None)
        }
    }
}

fn metadata_expect(table: &PlantTable) -> MetadataExpect {
    let mut m = MetadataExpect::default();
    for (id, pl) in table.ids.iter().zip(&table.plants) {
        let parses = !matches!(
            pl.corruption,
            Some(CorruptionKind::Truncate | CorruptionKind::WipeMagic)
        );
        if !parses {
            m.n_parse_failures += 1;
            m.n_missing_age += 1;
            m.n_missing_sex += 1;
            *m.photometric.entry("missing".to_owned()).or_default() += 1;
            continue;
        }
        match pl.age_validity {
            AgeValidity::Missing => m.n_missing_age += 1,
            AgeValidity::Malformed => m.n_malformed_age += 1,
            AgeValidity::OutOfRange => {
                m.n_out_of_range_age += 1;
                m.out_of_range_ages
                    .insert(id.clone(), pl.age_years.unwrap());
            }
            AgeValidity::Valid => {
                m.n_valid_age += 1;
                let years = pl.age_years.unwrap();
                if (1..=17).contains(&years) {
                    m.children.insert(id.clone());
                }
            }
        }
        match pl.sex_raw.as_deref() {
            Some("M") => m.n_sex_m += 1,
            Some("F") => m.n_sex_f += 1,
            Some("O") => m.n_sex_o += 1,
            _ => m.n_missing_sex += 1,
        }
        let key = pl.photometric.clone().unwrap_or_else(|| "missing".into());
        *m.photometric.entry(key).or_default() += 1;
    }
    m
}

fn annotation_expect(spec: &CorpusSpec, table: &PlantTable) -> AnnotationExpect {
    let rads = rad_ids(spec.n_annotators);
    let mut a = AnnotationExpect {
        no_finding_by_rad: rads
            .iter()
            .map(|r| (r.clone(), BTreeSet::new()))
            .collect(),
        ..AnnotationExpect::default()
    };
    for (id, pl) in table.ids.iter().zip(&table.plants) {
        if pl.finding {
            a.n_finding_images += 1;
        } else {
            a.n_no_finding_images += 1;
        }
        if pl.deviator.is_some() {
            a.n_deviator_images += 1;
        }
        for rad in &rads {
            a.n_rows += 1;
            if !pl.finding || pl.deviator.as_deref() == Some(rad) {
                a.no_finding_by_rad
                    .get_mut(rad)
                    .unwrap()
                    .insert(id.clone());
            }
        }
    }
    a
}

fn fairness_expect(spec: &CorpusSpec) -> Option<FairnessExpect> {
    let p = spec.parity.as_ref()?;
    let cell = |plan: &CellPlan| CellExpect {
        support: plan.total(),
        tp: plan.tp,
        fp: plan.fp,
        fn_: plan.fn_,
        tn: plan.tn,
        ppv: plan.ppv(),
    };
    let gap = match (p.young.ppv(), p.old.ppv()) {
        (Some(y), Some(o)) => Some((y - o).abs()),
        _ => None,
    };
    Some(FairnessExpect {
        label: p.label,
        young: cell(&p.young),
        old: cell(&p.old),
        expected_ppv_gap: gap,
    })
}

/// Generate the corpus under `out`: `dicom/<image_id>.dicom` files,
/// `annotations.csv`, `predictions.csv`, and `manifest.json`. Returns the
/// manifest. Rerunning with the same spec produces byte-identical files.
/// Corruptions are applied to the file bytes after expectations are
/// computed, so the manifest records what each corrupted file must do.
pub fn generate_corpus(spec: &CorpusSpec, out: &Path) -> Result<Manifest, SynthError> {
    spec.validate()?;
    let table = plant(spec)?;

    let write_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source: io::Error| SynthError::OutputNotWritable { path, source }
    };
    let dicom_dir = out.join("dicom");
    fs::create_dir_all(&dicom_dir).map_err(write_err(&dicom_dir))?;

    let mut corruption_records = Vec::new();
    for (id, pl) in table.ids.iter().zip(&table.plants) {
        let (mut bytes, spans) = dicom_bytes(pl);
        if let Some(kind) = pl.corruption {
            let (expected_error_kind, expected_error_offset) =
                corrupt(&mut bytes, &spans, kind);
            corruption_records.push(CorruptionRecord {
                image_id: id.clone(),
                kind,
                expected_error_kind,
                expected_error_offset,
            });
        }
        let path = dicom_dir.join(format!("{id}.dicom"));
        fs::write(&path, &bytes).map_err(write_err(&path))?;
    }

    let ann_path = out.join("annotations.csv");
    let mut ann_buf = Vec::new();
    write_annotation_csv(&annotation_rows(spec, &table), &mut ann_buf)
        .map_err(|e| SynthError::OutputNotWritable {
            path: ann_path.clone(),
            source: e,
        })?;
    fs::write(&ann_path, &ann_buf).map_err(write_err(&ann_path))?;

    let pred_path = out.join("predictions.csv");
    let mut pred_buf = Vec::new();
    write_prediction_csv(&prediction_rows(spec, &table), &mut pred_buf)
        .map_err(|e| SynthError::OutputNotWritable {
            path: pred_path.clone(),
            source: e,
        })?;
    fs::write(&pred_path, &pred_buf).map_err(write_err(&pred_path))?;

    let expected_map = match spec.predictions {
        PredictionMode::Perfect { .. } => Some(1.0),
        PredictionMode::None => None,
    };
    let manifest = Manifest {
        n_images: spec.n_images,
        remainder_notes: table.remainder_notes.clone(),
        metadata: metadata_expect(&table),
        annotations: annotation_expect(spec, &table),
        expected_map,
        fairness: fairness_expect(spec),
        corruptions: corruption_records,
        images: table
            .ids
            .iter()
            .cloned()
            .zip(table.plants.iter().cloned())
            .collect(),
        spec: spec.clone(),
    };

    let manifest_path = out.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json + "\n").map_err(write_err(&manifest_path))?;
    Ok(manifest)
}
