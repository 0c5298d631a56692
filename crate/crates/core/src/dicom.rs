//! Minimal DICOM part-10 reader for the handful of header attributes the
//! audits need, plus a writer used to build synthetic corpora and fixtures.
//!
//! Only two transfer syntaxes are accepted: Explicit VR Little Endian
//! (1.2.840.10008.1.2.1) and Implicit VR Little Endian (1.2.840.10008.1.2).
//! Parsing walks the data set element by element and stops at the PixelData
//! tag (7FE0,0010) without reading its length or value, so corrupt pixel
//! bytes never affect header extraction. Every parse error carries the byte
//! offset of the element where decoding failed.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub const EXPLICIT_VR_LE: &str = "1.2.840.10008.1.2.1";
pub const IMPLICIT_VR_LE: &str = "1.2.840.10008.1.2";

const PIXEL_DATA: (u16, u16) = (0x7FE0, 0x0010);
const TRANSFER_SYNTAX: (u16, u16) = (0x0002, 0x0010);
const ITEM: (u16, u16) = (0xFFFE, 0xE000);
const ITEM_DELIM: (u16, u16) = (0xFFFE, 0xE00D);
const SEQ_DELIM: (u16, u16) = (0xFFFE, 0xE0DD);
const UNDEFINED_LEN: u32 = 0xFFFF_FFFF;
const MAX_SEQ_DEPTH: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransferSyntax {
    ExplicitVrLittleEndian,
    ImplicitVrLittleEndian,
}

impl TransferSyntax {
    pub fn uid(self) -> &'static str {
        match self {
            TransferSyntax::ExplicitVrLittleEndian => EXPLICIT_VR_LE,
            TransferSyntax::ImplicitVrLittleEndian => IMPLICIT_VR_LE,
        }
    }
}

/// Header attributes extracted from one file. Absent or empty attributes are
/// `None`; `rows`/`columns`/`bits_allocated` of zero are also treated as
/// absent (the positive-integer invariant).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DicomHeader {
    pub transfer_syntax: TransferSyntax,
    /// (0010,0040) PatientSex, trailing padding stripped.
    pub patient_sex_raw: Option<String>,
    /// (0010,1010) PatientAge, raw string as stored.
    pub patient_age_raw: Option<String>,
    /// (0028,0004) PhotometricInterpretation, exact tag value.
    pub photometric: Option<String>,
    /// (0028,0010) Rows.
    pub rows: Option<u16>,
    /// (0028,0011) Columns.
    pub columns: Option<u16>,
    /// (0028,0100) BitsAllocated.
    pub bits_allocated: Option<u16>,
}

#[derive(Debug, Error)]
pub enum DicomError {
    #[error("missing DICM magic at offset {offset}")]
    MissingMagic { offset: u64 },
    #[error("truncated stream while reading element at offset {offset}")]
    Truncated { offset: u64 },
    #[error("unsupported transfer syntax {uid:?} declared at offset {offset}")]
    UnsupportedTransferSyntax { offset: u64, uid: String },
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl DicomError {
    /// Stable machine-readable discriminant used in reports and manifests.
    pub fn kind(&self) -> &'static str {
        match self {
            DicomError::MissingMagic { .. } => "missing_magic",
            DicomError::Truncated { .. } => "truncated",
            DicomError::UnsupportedTransferSyntax { .. } => "unsupported_transfer_syntax",
            DicomError::Io(_) => "io",
        }
    }

    /// Byte offset the error is anchored at, when it has one.
    pub fn offset(&self) -> Option<u64> {
        match self {
            DicomError::MissingMagic { offset }
            | DicomError::Truncated { offset }
            | DicomError::UnsupportedTransferSyntax { offset, .. } => Some(*offset),
            DicomError::Io(_) => None,
        }
    }
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    /// Take `n` bytes; on shortfall report a truncation anchored at `anchor`.
    fn take(&mut self, n: usize, anchor: usize) -> Result<&'a [u8], DicomError> {
        if self.remaining() < n {
            return Err(DicomError::Truncated {
                offset: anchor as u64,
            });
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16le(&mut self, anchor: usize) -> Result<u16, DicomError> {
        let b = self.take(2, anchor)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32le(&mut self, anchor: usize) -> Result<u32, DicomError> {
        let b = self.take(4, anchor)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// VRs encoded with 2 reserved bytes and a 32-bit length in explicit VR.
fn is_long_vr(vr: [u8; 2]) -> bool {
    matches!(&vr, b"OB" | b"OW" | b"OF" | b"SQ" | b"UT" | b"UN")
}

fn trim_value(bytes: &[u8]) -> String {
    let mut end = bytes.len();
    while end > 0 && (bytes[end - 1] == b' ' || bytes[end - 1] == 0) {
        end -= 1;
    }
    String::from_utf8_lossy(&bytes[..end]).into_owned()
}

fn non_empty(s: String) -> Option<String> {
    (!s.is_empty()).then_some(s)
}

/// A fully decoded defined-length element, or a skipped undefined-length one.
enum Element<'a> {
    Value { tag: (u16, u16), value: &'a [u8] },
    Skipped,
}

/// Decode one element. `explicit` selects the VR encoding. The cursor must sit
/// on the element's tag; on any shortfall the error offset is the tag offset.
fn read_element<'a>(cur: &mut Cursor<'a>, explicit: bool) -> Result<Element<'a>, DicomError> {
    let anchor = cur.pos;
    let group = cur.u16le(anchor)?;
    let elem = cur.u16le(anchor)?;
    let tag = (group, elem);

    // Delimitation items carry no VR in either syntax.
    let len = if group == 0xFFFE {
        cur.u32le(anchor)?
    } else if explicit {
        let vr_bytes = cur.take(2, anchor)?;
        let vr = [vr_bytes[0], vr_bytes[1]];
        if is_long_vr(vr) {
            cur.take(2, anchor)?;
            cur.u32le(anchor)?
        } else {
            u32::from(cur.u16le(anchor)?)
        }
    } else {
        cur.u32le(anchor)?
    };

    if len == UNDEFINED_LEN {
        skip_undefined(cur, anchor, 0)?;
        return Ok(Element::Skipped);
    }
    let value = cur.take(len as usize, anchor)?;
    Ok(Element::Value { tag, value })
}

/// Skip the items of an undefined-length sequence until its (FFFE,E0DD)
/// delimiter. Item contents are skipped bytewise; nested undefined-length
/// items recurse with a depth cap.
fn skip_undefined(cur: &mut Cursor<'_>, anchor: usize, depth: u32) -> Result<(), DicomError> {
    if depth > MAX_SEQ_DEPTH {
        return Err(DicomError::Truncated {
            offset: anchor as u64,
        });
    }
    loop {
        let group = cur.u16le(anchor)?;
        let elem = cur.u16le(anchor)?;
        let len = cur.u32le(anchor)?;
        match (group, elem) {
            SEQ_DELIM => return Ok(()),
            ITEM_DELIM => return Ok(()),
            ITEM if len == UNDEFINED_LEN => skip_undefined(cur, anchor, depth + 1)?,
            _ => {
                cur.take(len as usize, anchor)?;
            }
        }
    }
}

/// Parse a part-10 byte stream into a [`DicomHeader`].
pub fn parse_dicom_bytes(data: &[u8]) -> Result<DicomHeader, DicomError> {
    if data.len() < 132 {
        return Err(DicomError::Truncated {
            offset: data.len() as u64,
        });
    }
    if &data[128..132] != b"DICM" {
        return Err(DicomError::MissingMagic { offset: 128 });
    }

    let mut cur = Cursor { data, pos: 132 };

    // File meta group (0002,xxxx), always explicit VR little endian.
    let mut transfer_syntax: Option<(String, usize)> = None;
    loop {
        if cur.remaining() == 0 {
            break;
        }
        let peek_pos = cur.pos;
        if cur.remaining() < 4 {
            return Err(DicomError::Truncated {
                offset: peek_pos as u64,
            });
        }
        let group = u16::from_le_bytes([data[peek_pos], data[peek_pos + 1]]);
        if group != 0x0002 {
            break;
        }
        if let Element::Value { tag, value } = read_element(&mut cur, true)? {
            if tag == TRANSFER_SYNTAX {
                transfer_syntax = Some((trim_value(value), peek_pos));
            }
        }
    }

    let meta_end = cur.pos;
    let (uid, _) = transfer_syntax.ok_or(DicomError::UnsupportedTransferSyntax {
        offset: meta_end as u64,
        uid: String::new(),
    })?;
    let syntax = match uid.as_str() {
        EXPLICIT_VR_LE => TransferSyntax::ExplicitVrLittleEndian,
        IMPLICIT_VR_LE => TransferSyntax::ImplicitVrLittleEndian,
        _ => {
            return Err(DicomError::UnsupportedTransferSyntax {
                offset: meta_end as u64,
                uid,
            })
        }
    };
    let explicit = syntax == TransferSyntax::ExplicitVrLittleEndian;

    let mut header = DicomHeader {
        transfer_syntax: syntax,
        patient_sex_raw: None,
        patient_age_raw: None,
        photometric: None,
        rows: None,
        columns: None,
        bits_allocated: None,
    };

    loop {
        if cur.remaining() == 0 {
            break;
        }
        let tag_pos = cur.pos;
        if cur.remaining() >= 4 {
            let group = u16::from_le_bytes([data[tag_pos], data[tag_pos + 1]]);
            let elem = u16::from_le_bytes([data[tag_pos + 2], data[tag_pos + 3]]);
            if (group, elem) == PIXEL_DATA {
                break;
            }
        }
        if let Element::Value { tag, value } = read_element(&mut cur, explicit)? {
            match tag {
                (0x0010, 0x0040) => header.patient_sex_raw = non_empty(trim_value(value)),
                (0x0010, 0x1010) => header.patient_age_raw = non_empty(trim_value(value)),
                (0x0028, 0x0004) => header.photometric = non_empty(trim_value(value)),
                (0x0028, 0x0010) => header.rows = read_us(value).filter(|v| *v != 0),
                (0x0028, 0x0011) => header.columns = read_us(value).filter(|v| *v != 0),
                (0x0028, 0x0100) => header.bits_allocated = read_us(value).filter(|v| *v != 0),
                _ => {}
            }
        }
    }
    Ok(header)
}

fn read_us(value: &[u8]) -> Option<u16> {
    (value.len() == 2).then(|| u16::from_le_bytes([value[0], value[1]]))
}

pub fn read_dicom_file(path: &Path) -> Result<DicomHeader, DicomError> {
    let data = fs::read(path)?;
    parse_dicom_bytes(&data)
}

/// One file from a corpus scan. `image_id` is the file stem.
#[derive(Debug)]
pub struct ScanEntry {
    pub image_id: String,
    pub path: PathBuf,
    pub header: Result<DicomHeader, DicomError>,
}

/// Parse every `*.dicom` file directly under `dir`, in parallel. Entries come
/// back sorted by image id, so scan output is deterministic. Per-file parse
/// failures are entries, not errors; only directory I/O fails the scan.
pub fn scan_dicom_dir(dir: &Path) -> io::Result<Vec<ScanEntry>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "dicom"))
        .collect();
    paths.sort();
    Ok(paths
        .into_par_iter()
        .map(|path| {
            let image_id = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let header = read_dicom_file(&path);
            ScanEntry {
                image_id,
                path,
                header,
            }
        })
        .collect())
}

/// Successfully parsed headers keyed by image id; failed entries drop out.
pub fn header_map(entries: &[ScanEntry]) -> BTreeMap<String, DicomHeader> {
    entries
        .iter()
        .filter_map(|e| {
            e.header
                .as_ref()
                .ok()
                .map(|h| (e.image_id.clone(), h.clone()))
        })
        .collect()
}

/// Patient age parsed from a DICOM Age String.
///
/// Accepted forms: `nnnU` with unit D, W, M, or Y (days, weeks, months,
/// years; sub-year units divide down to whole years), and bare digit strings
/// read as years. Anything else is malformed. `Valid` means 1 to 99 years
/// inclusive; zero or 100+ is out of range but keeps its parsed value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedAge {
    pub raw: Option<String>,
    pub years: Option<u32>,
    pub validity: AgeValidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeValidity {
    Missing,
    Malformed,
    OutOfRange,
    Valid,
}

pub fn parse_age(raw: Option<&str>) -> ParsedAge {
    let trimmed = raw.map(str::trim).filter(|s| !s.is_empty());
    let Some(s) = trimmed else {
        return ParsedAge {
            raw: None,
            years: None,
            validity: AgeValidity::Missing,
        };
    };
    let years = parse_age_years(s);
    let validity = match years {
        None => AgeValidity::Malformed,
        Some(y) if (1..=99).contains(&y) => AgeValidity::Valid,
        Some(_) => AgeValidity::OutOfRange,
    };
    ParsedAge {
        raw: Some(s.to_owned()),
        years,
        validity,
    }
}

fn parse_age_years(s: &str) -> Option<u32> {
    if s.bytes().all(|b| b.is_ascii_digit()) {
        return s.parse().ok();
    }
    let (digits, unit) = s.split_at(s.len().checked_sub(1)?);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let n: u32 = digits.parse().ok()?;
    match unit {
        "D" => Some(n / 365),
        "W" => Some(n / 52),
        "M" => Some(n / 12),
        "Y" => Some(n),
        _ => None,
    }
}

/// Patient sex normalized from the raw attribute value. Anything other than
/// an exact (case-sensitive, padding-stripped) M, F, or O is Missing: a value
/// of the wrong type is treated the same as no value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum SexCategory {
    Male,
    Female,
    Other,
    Missing,
}

impl SexCategory {
    pub const ALL: [SexCategory; 4] = [
        SexCategory::Male,
        SexCategory::Female,
        SexCategory::Other,
        SexCategory::Missing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SexCategory::Male => "Male",
            SexCategory::Female => "Female",
            SexCategory::Other => "Other",
            SexCategory::Missing => "Missing",
        }
    }
}

pub fn normalize_sex(raw: Option<&str>) -> SexCategory {
    match raw.map(str::trim) {
        Some("M") => SexCategory::Male,
        Some("F") => SexCategory::Female,
        Some("O") => SexCategory::Other,
        _ => SexCategory::Missing,
    }
}

/// Byte layout of one written element, for targeted corruption in fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementSpan {
    /// Absolute offset of the element's tag.
    pub tag_offset: u64,
    /// Absolute offset of the first value byte.
    pub value_offset: u64,
    pub value_len: u64,
}

/// Builds part-10 files with a fixed file meta group and caller-supplied data
/// set elements. Elements are written in ascending tag order as required.
pub struct DicomWriter {
    explicit: bool,
    elements: BTreeMap<(u16, u16), ([u8; 2], Vec<u8>)>,
}

impl DicomWriter {
    pub fn new(explicit: bool) -> DicomWriter {
        DicomWriter {
            explicit,
            elements: BTreeMap::new(),
        }
    }

    /// Add a string element, padded to even length (`UI` pads with NUL,
    /// text VRs with space).
    pub fn put_str(&mut self, tag: (u16, u16), vr: [u8; 2], value: &str) -> &mut Self {
        let mut bytes = value.as_bytes().to_vec();
        if bytes.len() % 2 == 1 {
            bytes.push(if &vr == b"UI" { 0 } else { b' ' });
        }
        self.elements.insert(tag, (vr, bytes));
        self
    }

    pub fn put_u16(&mut self, tag: (u16, u16), value: u16) -> &mut Self {
        self.elements.insert(tag, (*b"US", value.to_le_bytes().to_vec()));
        self
    }

    pub fn put_bytes(&mut self, tag: (u16, u16), vr: [u8; 2], value: Vec<u8>) -> &mut Self {
        assert!(value.len() % 2 == 0, "element value must have even length");
        self.elements.insert(tag, (vr, value));
        self
    }

    /// Serialize preamble, magic, file meta, and all data set elements.
    /// Returns the bytes and the span of every data set element by tag.
    pub fn build(&self) -> (Vec<u8>, BTreeMap<(u16, u16), ElementSpan>) {
        let mut out = vec![0u8; 128];
        out.extend_from_slice(b"DICM");

        let syntax = if self.explicit {
            EXPLICIT_VR_LE
        } else {
            IMPLICIT_VR_LE
        };
        let mut meta = Vec::new();
        encode_explicit(&mut meta, (0x0002, 0x0001), *b"OB", &[0x00, 0x01]);
        encode_explicit(
            &mut meta,
            (0x0002, 0x0002),
            *b"UI",
            &pad_uid("1.2.840.10008.5.1.4.1.1.1"),
        );
        encode_explicit(
            &mut meta,
            (0x0002, 0x0003),
            *b"UI",
            &pad_uid("1.2.826.0.1.3680043.8.498.1"),
        );
        encode_explicit(&mut meta, TRANSFER_SYNTAX, *b"UI", &pad_uid(syntax));
        encode_explicit(
            &mut out,
            (0x0002, 0x0000),
            *b"UL",
            &(meta.len() as u32).to_le_bytes(),
        );
        out.extend_from_slice(&meta);

        let mut spans = BTreeMap::new();
        for (tag, (vr, value)) in &self.elements {
            let tag_offset = out.len() as u64;
            if self.explicit {
                encode_explicit(&mut out, *tag, *vr, value);
            } else {
                encode_implicit(&mut out, *tag, value);
            }
            spans.insert(
                *tag,
                ElementSpan {
                    tag_offset,
                    value_offset: out.len() as u64 - value.len() as u64,
                    value_len: value.len() as u64,
                },
            );
        }
        (out, spans)
    }
}

fn pad_uid(uid: &str) -> Vec<u8> {
    let mut v = uid.as_bytes().to_vec();
    if v.len() % 2 == 1 {
        v.push(0);
    }
    v
}

fn encode_explicit(out: &mut Vec<u8>, tag: (u16, u16), vr: [u8; 2], value: &[u8]) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    out.extend_from_slice(&vr);
    if is_long_vr(vr) {
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    } else {
        let len = u16::try_from(value.len()).expect("short-form element too long");
        out.extend_from_slice(&len.to_le_bytes());
    }
    out.extend_from_slice(value);
}

fn encode_implicit(out: &mut Vec<u8>, tag: (u16, u16), value: &[u8]) {
    out.extend_from_slice(&tag.0.to_le_bytes());
    out.extend_from_slice(&tag.1.to_le_bytes());
    out.extend_from_slice(&(value.len() as u32).to_le_bytes());
    out.extend_from_slice(value);
}
