//! Corpus-level metadata validity: missing/invalid age and sex rates,
//! pediatric flagging, photometric interpretation inventory, and the
//! age-versus-illness density comparison.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io;

use serde::Serialize;
use thiserror::Error;

use crate::annotations::ImageIndex;
use crate::dicom::{normalize_sex, parse_age, AgeValidity, DicomHeader, ScanEntry, SexCategory};

#[derive(Debug, Error)]
pub enum MetadataError {
    #[error("the {group} group has no member with a valid age")]
    EmptyGroup { group: IllnessGroup },
}

/// Age validity counts, malformed kept apart from absent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AgeDetail {
    /// Absent or empty age tag, or an unparsed file.
    pub n_missing: usize,
    /// Present but not a parseable age string.
    pub n_malformed: usize,
    pub n_out_of_range: usize,
    pub n_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutOfRangeAge {
    pub image_id: String,
    pub years: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetadataReport {
    pub n_images: usize,
    /// Fraction with age absent or malformed; `None` on an empty corpus.
    pub missing_age_frac: Option<f64>,
    pub missing_sex_frac: Option<f64>,
    /// Fraction with a parsed age of 1 to 99 years.
    pub valid_age_frac: Option<f64>,
    pub age_detail: AgeDetail,
    pub sex_distribution: BTreeMap<SexCategory, f64>,
    /// Keyed by the raw photometric interpretation value, plus a "missing"
    /// key for images that lack the tag or failed to parse.
    pub photometric_distribution: BTreeMap<String, f64>,
    /// Images with a valid age of 1 to 17 years, sorted by id.
    pub children: Vec<String>,
    /// Parseable ages outside 1 to 99 years, sorted by image id.
    pub out_of_range_ages: Vec<OutOfRangeAge>,
}

/// Aggregate metadata validity over scan entries. An entry whose parse failed
/// counts as fully missing: age missing, sex missing, photometric missing.
/// The report depends only on the entry set, not its order.
pub fn metadata_validity_report(entries: &[ScanEntry]) -> MetadataReport {
    let n_images = entries.len();
    let mut age_detail = AgeDetail::default();
    let mut n_missing_sex = 0usize;
    let mut sex_counts: BTreeMap<SexCategory, usize> = BTreeMap::new();
    let mut photo_counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut children = Vec::new();
    let mut out_of_range_ages = Vec::new();

    for entry in entries {
        let header = entry.header.as_ref().ok();
        let age = parse_age(header.and_then(|h| h.patient_age_raw.as_deref()));
        match age.validity {
            AgeValidity::Missing => age_detail.n_missing += 1,
            AgeValidity::Malformed => age_detail.n_malformed += 1,
            AgeValidity::OutOfRange => {
                age_detail.n_out_of_range += 1;
                out_of_range_ages.push(OutOfRangeAge {
                    image_id: entry.image_id.clone(),
                    years: age.years.expect("out-of-range age always has a value"),
                });
            }
            AgeValidity::Valid => {
                age_detail.n_valid += 1;
                let years = age.years.expect("valid age always has a value");
                if (1..=17).contains(&years) {
                    children.push(entry.image_id.clone());
                }
            }
        }

        let sex = normalize_sex(header.and_then(|h| h.patient_sex_raw.as_deref()));
        if sex == SexCategory::Missing {
            n_missing_sex += 1;
        }
        *sex_counts.entry(sex).or_default() += 1;

        let photo = header
            .and_then(|h| h.photometric.as_deref())
            .unwrap_or("missing");
        *photo_counts.entry(photo.to_owned()).or_default() += 1;
    }

    children.sort();
    out_of_range_ages.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let frac = |k: usize| (n_images > 0).then(|| k as f64 / n_images as f64);
    MetadataReport {
        n_images,
        missing_age_frac: frac(age_detail.n_missing + age_detail.n_malformed),
        missing_sex_frac: frac(n_missing_sex),
        valid_age_frac: frac(age_detail.n_valid),
        age_detail,
        sex_distribution: sex_counts
            .into_iter()
            .map(|(k, v)| (k, v as f64 / n_images as f64))
            .collect(),
        photometric_distribution: photo_counts
            .into_iter()
            .map(|(k, v)| (k, v as f64 / n_images as f64))
            .collect(),
        children,
        out_of_range_ages,
    }
}

/// Illness grouping for the age-density comparison: an image is `Finding`
/// when any annotator assigned any lesion label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IllnessGroup {
    Finding,
    NoFinding,
}

impl std::fmt::Display for IllnessGroup {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            IllnessGroup::Finding => "finding",
            IllnessGroup::NoFinding => "no finding",
        })
    }
}

/// Kernel density estimate of patient age for one illness group, evaluated
/// on the integer grid 1..=99 and renormalized so the trapezoidal integral
/// over the grid is 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCurve {
    pub group: IllnessGroup,
    /// Number of valid-age images behind the curve.
    pub n: usize,
    pub bandwidth: f64,
    pub support: Vec<(u32, f64)>,
}

impl DensityCurve {
    /// Trapezoidal integral over the support grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.support)
    }

    /// Density-weighted mean age.
    pub fn mean_age(&self) -> f64 {
        let weighted: f64 = self.support.iter().map(|(a, d)| f64::from(*a) * d).sum();
        let total: f64 = self.support.iter().map(|(_, d)| d).sum();
        weighted / total
    }

    /// Grid age with the highest density.
    pub fn argmax_age(&self) -> u32 {
        self.support
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(age, _)| *age)
            .expect("support grid is never empty")
    }
}

/// Five-year-bin histogram companion to a density curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeHistogram {
    pub group: IllnessGroup,
    pub bin_width: u32,
    /// (inclusive low edge, exclusive high edge, count), covering 0 to 100.
    pub bins: Vec<(u32, u32, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeDensityReport {
    pub finding: DensityCurve,
    pub no_finding: DensityCurve,
    pub finding_hist: AgeHistogram,
    pub no_finding_hist: AgeHistogram,
    /// Index images whose age was not valid (missing header included), per group.
    pub n_excluded: BTreeMap<IllnessGroup, usize>,
}

/// Compare the age distribution of images with findings against those
/// without. Ages come from `headers`; group membership from `index`. Images
/// without a valid age are excluded and counted. Errors with `EmptyGroup`
/// when either group has no valid-age member.
pub fn age_illness_density(
    headers: &BTreeMap<String, DicomHeader>,
    index: &ImageIndex,
) -> Result<AgeDensityReport, MetadataError> {
    let mut ages: BTreeMap<IllnessGroup, Vec<u32>> = BTreeMap::new();
    let mut n_excluded: BTreeMap<IllnessGroup, usize> =
        [(IllnessGroup::Finding, 0), (IllnessGroup::NoFinding, 0)]
            .into_iter()
            .collect();
    for img in index.iter() {
        let group = if img.has_finding() {
            IllnessGroup::Finding
        } else {
            IllnessGroup::NoFinding
        };
        let raw = headers
            .get(&img.image_id)
            .and_then(|h| h.patient_age_raw.as_deref());
        let age = parse_age(raw);
        if age.validity == AgeValidity::Valid {
            ages.entry(group).or_default().push(age.years.unwrap());
        } else {
            *n_excluded.get_mut(&group).unwrap() += 1;
        }
    }

    let curve_and_hist = |group: IllnessGroup| -> Result<(DensityCurve, AgeHistogram), MetadataError> {
        let xs = ages.get(&group).map(Vec::as_slice).unwrap_or(&[]);
        if xs.is_empty() {
            return Err(MetadataError::EmptyGroup { group });
        }
        Ok((density_curve(group, xs), histogram(group, xs)))
    };
    let (finding, finding_hist) = curve_and_hist(IllnessGroup::Finding)?;
    let (no_finding, no_finding_hist) = curve_and_hist(IllnessGroup::NoFinding)?;
    Ok(AgeDensityReport {
        finding,
        no_finding,
        finding_hist,
        no_finding_hist,
        n_excluded,
    })
}

fn density_curve(group: IllnessGroup, ages: &[u32]) -> DensityCurve {
    let xs: Vec<f64> = ages.iter().map(|a| f64::from(*a)).collect();
    let h = silverman_bandwidth(&xs);
    let n = xs.len() as f64;
    let norm = 1.0 / (n * h * TAU.sqrt());
    let mut support: Vec<(u32, f64)> = (1..=99)
        .map(|age| {
            let g = f64::from(age);
            let d: f64 = xs
                .iter()
                .map(|x| (-0.5 * ((g - x) / h).powi(2)).exp())
                .sum::<f64>()
                * norm;
            (age, d)
        })
        .collect();
    // Renormalize so the trapezoidal integral over the truncated support is
    // exactly 1; the Gaussian tails outside [1, 99] would otherwise leak mass.
    let integral = trapezoid(&support);
    for (_, d) in &mut support {
        *d /= integral;
    }
    DensityCurve {
        group,
        n: ages.len(),
        bandwidth: h,
        support,
    }
}

/// Silverman's rule of thumb: 0.9 min(sd, IQR/1.34) n^(-1/5), falling back
/// to 1.0 when the spread is zero or undefined (e.g. a single distinct age),
/// so degenerate groups still draw a visible bump.
fn silverman_bandwidth(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let iqr = quantile(xs, 0.75) - quantile(xs, 0.25);
    let h = 0.9 * sd.min(iqr / 1.34) * n.powf(-0.2);
    if h.is_finite() && h > 0.0 {
        h
    } else {
        1.0
    }
}

/// Linear-interpolation quantile over a copy of the data (R type 7).
fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

fn trapezoid(support: &[(u32, f64)]) -> f64 {
    support
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * f64::from(w[1].0 - w[0].0))
        .sum()
}

fn histogram(group: IllnessGroup, ages: &[u32]) -> AgeHistogram {
    let mut bins: Vec<(u32, u32, usize)> = (0..20).map(|k| (5 * k, 5 * k + 5, 0)).collect();
    for a in ages {
        bins[(*a / 5).min(19) as usize].2 += 1;
    }
    AgeHistogram {
        group,
        bin_width: 5,
        bins,
    }
}

/// Emit both curves as CSV: `age,density_finding,density_nofinding`.
pub fn write_density_csv<W: io::Write>(
    report: &AgeDensityReport,
    mut writer: W,
) -> io::Result<()> {
    writeln!(writer, "age,density_finding,density_nofinding")?;
    for ((age, df), (_, dn)) in report
        .finding
        .support
        .iter()
        .zip(&report.no_finding.support)
    {
        writeln!(writer, "{age},{df},{dn}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotations::{build_image_index, AnnotationRecord, BBox, ClassLabel};
    use crate::dicom::TransferSyntax;
    use std::path::PathBuf;

    fn entry(image_id: &str, age: Option<&str>, sex: Option<&str>, photo: Option<&str>) -> ScanEntry {
        ScanEntry {
            image_id: image_id.to_owned(),
            path: PathBuf::from(format!("{image_id}.dicom")),
            header: Ok(DicomHeader {
                transfer_syntax: TransferSyntax::ExplicitVrLittleEndian,
                patient_sex_raw: sex.map(str::to_owned),
                patient_age_raw: age.map(str::to_owned),
                photometric: photo.map(str::to_owned),
                rows: None,
                columns: None,
                bits_allocated: None,
            }),
        }
    }

    fn broken_entry(image_id: &str) -> ScanEntry {
        ScanEntry {
            image_id: image_id.to_owned(),
            path: PathBuf::from(format!("{image_id}.dicom")),
            header: Err(crate::dicom::DicomError::MissingMagic { offset: 128 }),
        }
    }

    fn header(age: Option<&str>) -> DicomHeader {
        DicomHeader {
            transfer_syntax: TransferSyntax::ExplicitVrLittleEndian,
            patient_sex_raw: None,
            patient_age_raw: age.map(str::to_owned),
            photometric: None,
            rows: None,
            columns: None,
            bits_allocated: None,
        }
    }

    fn finding_record(image: &str) -> AnnotationRecord {
        AnnotationRecord {
            image_id: image.into(),
            rad_id: "R1".into(),
            label: ClassLabel::from_name("ILD").unwrap(),
            bbox: Some(BBox::new(0.0, 0.0, 10.0, 10.0).unwrap()),
        }
    }

    fn nofinding_record(image: &str) -> AnnotationRecord {
        AnnotationRecord {
            image_id: image.into(),
            rad_id: "R1".into(),
            label: ClassLabel::NO_FINDING,
            bbox: None,
        }
    }

    #[test]
    fn validity_report_matches_hand_tally() {
        let entries = vec![
            entry("a", Some("040Y"), Some("M"), Some("MONOCHROME2")),
            entry("b", None, None, None),
            entry("c", Some("ABC"), Some("U"), None),
            entry("d", Some("120Y"), Some("F"), Some("MONOCHROME1")),
        ];
        let r = metadata_validity_report(&entries);
        assert_eq!(r.n_images, 4);
        assert_eq!(r.missing_age_frac, Some(0.5)); // b missing, c malformed
        assert_eq!(r.missing_sex_frac, Some(0.5)); // b absent, c unrecognized
        assert_eq!(r.valid_age_frac, Some(0.25));
        assert_eq!(
            r.age_detail,
            AgeDetail {
                n_missing: 1,
                n_malformed: 1,
                n_out_of_range: 1,
                n_valid: 1
            }
        );
        assert_eq!(r.sex_distribution[&SexCategory::Male], 0.25);
        assert_eq!(r.sex_distribution[&SexCategory::Female], 0.25);
        assert_eq!(r.sex_distribution[&SexCategory::Missing], 0.5);
        assert_eq!(r.photometric_distribution["MONOCHROME2"], 0.25);
        assert_eq!(r.photometric_distribution["MONOCHROME1"], 0.25);
        assert_eq!(r.photometric_distribution["missing"], 0.5);
        assert_eq!(
            r.out_of_range_ages,
            vec![OutOfRangeAge {
                image_id: "d".into(),
                years: 120
            }]
        );
        assert!(r.children.is_empty());
    }

    #[test]
    fn fraction_invariants_hold() {
        let entries = vec![
            entry("a", Some("040Y"), Some("M"), None),
            entry("b", None, None, None),
            entry("c", Some("junk"), Some("F"), None),
            entry("d", Some("000Y"), Some("O"), None),
            broken_entry("e"),
        ];
        let r = metadata_validity_report(&entries);
        let oor = r.age_detail.n_out_of_range as f64 / r.n_images as f64;
        let total = r.missing_age_frac.unwrap() + r.valid_age_frac.unwrap() + oor;
        assert!((total - 1.0).abs() < 1e-9);
        let sex_sum: f64 = r.sex_distribution.values().sum();
        assert!((sex_sum - 1.0).abs() < 1e-9);
        let photo_sum: f64 = r.photometric_distribution.values().sum();
        assert!((photo_sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unparsed_entries_count_as_fully_missing() {
        let r = metadata_validity_report(&[broken_entry("x")]);
        assert_eq!(r.missing_age_frac, Some(1.0));
        assert_eq!(r.missing_sex_frac, Some(1.0));
        assert_eq!(r.age_detail.n_missing, 1);
        assert_eq!(r.photometric_distribution["missing"], 1.0);
    }

    #[test]
    fn empty_corpus_reports_undefined_fractions() {
        let r = metadata_validity_report(&[]);
        assert_eq!(r.n_images, 0);
        assert_eq!(r.missing_age_frac, None);
        assert_eq!(r.missing_sex_frac, None);
        assert_eq!(r.valid_age_frac, None);
        assert!(r.sex_distribution.is_empty());
        assert!(r.photometric_distribution.is_empty());
        assert!(r.children.is_empty());
        assert!(r.out_of_range_ages.is_empty());
    }

    #[test]
    fn children_are_valid_ages_one_through_seventeen() {
        let entries = vec![
            entry("baby", Some("001Y"), None, None),
            entry("kid", Some("010Y"), None, None),
            entry("teen", Some("017Y"), None, None),
            entry("adult", Some("018Y"), None, None),
            entry("newborn", Some("000Y"), None, None), // out of range, not a child
            entry("months", Some("030M"), None, None),  // 2 years, a child
        ];
        let r = metadata_validity_report(&entries);
        assert_eq!(r.children, vec!["baby", "kid", "months", "teen"]);
    }

    #[test]
    fn report_is_order_invariant() {
        let mut entries = vec![
            entry("a", Some("040Y"), Some("M"), None),
            entry("b", None, None, None),
            entry("c", Some("012Y"), Some("F"), Some("MONOCHROME2")),
        ];
        let forward = metadata_validity_report(&entries);
        entries.reverse();
        assert_eq!(metadata_validity_report(&entries), forward);
    }

    fn density_fixture(
        finding_ages: &[&str],
        nofinding_ages: &[&str],
    ) -> (BTreeMap<String, DicomHeader>, ImageIndex) {
        let mut headers = BTreeMap::new();
        let mut records = Vec::new();
        for (i, age) in finding_ages.iter().enumerate() {
            let id = format!("f{i:02}");
            headers.insert(id.clone(), header(Some(age)));
            records.push(finding_record(&id));
        }
        for (i, age) in nofinding_ages.iter().enumerate() {
            let id = format!("n{i:02}");
            headers.insert(id.clone(), header(Some(age)));
            records.push(nofinding_record(&id));
        }
        (headers, build_image_index(&records).unwrap())
    }

    #[test]
    fn single_age_gives_a_bump_at_that_age() {
        let (headers, index) = density_fixture(&["040Y"], &["030Y", "035Y"]);
        let r = age_illness_density(&headers, &index).unwrap();
        assert_eq!(r.finding.n, 1);
        assert_eq!(r.finding.argmax_age(), 40);
        assert!((r.finding.integral() - 1.0).abs() < 1e-6);
        assert!((r.no_finding.integral() - 1.0).abs() < 1e-6);
        assert!(r.finding.support.iter().all(|(_, d)| *d >= 0.0));
    }

    #[test]
    fn identical_age_lists_give_identical_curves() {
        let ages = ["020Y", "045Y", "070Y"];
        let (headers, index) = density_fixture(&ages, &ages);
        let r = age_illness_density(&headers, &index).unwrap();
        for ((a1, d1), (a2, d2)) in r.finding.support.iter().zip(&r.no_finding.support) {
            assert_eq!(a1, a2);
            assert_eq!(d1, d2);
        }
    }

    #[test]
    fn older_finding_group_shifts_the_curve_mean_up() {
        let (headers, index) = density_fixture(
            &["055Y", "060Y", "065Y", "070Y"],
            &["025Y", "030Y", "035Y", "040Y"],
        );
        let r = age_illness_density(&headers, &index).unwrap();
        assert!(r.finding.mean_age() > r.no_finding.mean_age());
    }

    #[test]
    fn group_without_valid_ages_errors() {
        let (mut headers, index) = density_fixture(&["040Y"], &["030Y"]);
        headers.get_mut("n00").unwrap().patient_age_raw = Some("bogus".into());
        let err = age_illness_density(&headers, &index).unwrap_err();
        assert!(matches!(
            err,
            MetadataError::EmptyGroup {
                group: IllnessGroup::NoFinding
            }
        ));
    }

    #[test]
    fn invalid_ages_are_excluded_and_counted() {
        let (mut headers, index) =
            density_fixture(&["040Y", "050Y", "120Y"], &["030Y"]);
        headers.get_mut("f01").unwrap().patient_age_raw = None;
        let r = age_illness_density(&headers, &index).unwrap();
        assert_eq!(r.finding.n, 1); // 120Y out of range, f01 missing
        assert_eq!(r.n_excluded[&IllnessGroup::Finding], 2);
        assert_eq!(r.n_excluded[&IllnessGroup::NoFinding], 0);
    }

    #[test]
    fn histogram_uses_five_year_bins_and_conserves_counts() {
        let (headers, index) = density_fixture(&["003Y", "007Y", "052Y"], &["030Y"]);
        let r = age_illness_density(&headers, &index).unwrap();
        let h = &r.finding_hist;
        assert_eq!(h.bin_width, 5);
        assert_eq!(h.bins.len(), 20);
        let count_of = |lo: u32| h.bins.iter().find(|(l, _, _)| *l == lo).unwrap().2;
        assert_eq!(count_of(0), 1);
        assert_eq!(count_of(5), 1);
        assert_eq!(count_of(50), 1);
        assert_eq!(h.bins.iter().map(|(_, _, c)| c).sum::<usize>(), 3);
    }

    #[test]
    fn density_csv_covers_the_full_grid() {
        let (headers, index) = density_fixture(&["040Y"], &["030Y"]);
        let r = age_illness_density(&headers, &index).unwrap();
        let mut buf = Vec::new();
        write_density_csv(&r, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "age,density_finding,density_nofinding");
        assert_eq!(lines.len(), 100); // header plus ages 1..=99
        assert!(lines[1].starts_with("1,"));
        assert!(lines[99].starts_with("99,"));
    }

    #[test]
    fn bandwidth_falls_back_when_spread_is_zero() {
        assert_eq!(silverman_bandwidth(&[40.0]), 1.0);
        assert_eq!(silverman_bandwidth(&[40.0, 40.0, 40.0]), 1.0);
        let h = silverman_bandwidth(&[20.0, 30.0, 40.0, 50.0]);
        assert!(h > 0.0 && h.is_finite() && h != 1.0);
    }
}
