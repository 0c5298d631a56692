//! Audit configuration: one TOML file carrying every threshold, the
//! taxonomy, annotator groups, and output knobs. Unknown keys are rejected
//! so a typo never silently falls back to a default. The effective config
//! is echoed into every report.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ClassLabel, Taxonomy};
use crate::spatial::{DepositMode, DEFAULT_ASYMMETRY_THRESHOLD, DEFAULT_GRID_SIZE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invalid: {detail}")]
    Invalid { detail: String },
}

/// Every numeric threshold in one place. Domains are validated on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    /// Detection match threshold, in (0, 1) exclusive.
    pub iou: f64,
    /// Cross-label co-location threshold, in (0, 1].
    pub co_location: f64,
    /// Granularity containment threshold, in (0, 1].
    pub containment: f64,
    /// Asymmetry flag threshold, in (0, 1) exclusive.
    pub asymmetry: f64,
    /// Fairness binarization score threshold, in [0, 1].
    pub score: f64,
    /// Fairness gap flag threshold, in (0, 1].
    pub gap: f64,
    /// Minimum subgroup support for gap computation, at least 1.
    pub min_support: usize,
}

impl Default for Thresholds {
    fn default() -> Thresholds {
        Thresholds {
            iou: 0.4,
            co_location: 0.5,
            containment: 0.9,
            asymmetry: DEFAULT_ASYMMETRY_THRESHOLD,
            score: 0.5,
            gap: 0.1,
            min_support: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub deposit: DepositMode,
}

impl Default for GridConfig {
    fn default() -> GridConfig {
        GridConfig {
            width: DEFAULT_GRID_SIZE.0,
            height: DEFAULT_GRID_SIZE.1,
            deposit: DepositMode::Indicator,
        }
    }
}

/// Taxonomy as written in config: class names, resolved to labels on load.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaxonomyConfig {
    /// Pairs whose cross-label overlap is expected, e.g. a finding and its
    /// radiological subtype.
    pub overlap_pairs: Vec<(String, String)>,
    /// Umbrella class name → the specific classes it covers.
    pub umbrella: BTreeMap<String, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpatialConfig {
    /// Classes exempt from asymmetry flagging.
    pub exempt: Vec<String>,
}

impl Default for SpatialConfig {
    fn default() -> SpatialConfig {
        SpatialConfig {
            exempt: vec!["Aortic enlargement".to_owned(), "Cardiomegaly".to_owned()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReviewConfig {
    /// No-finding images sampled per annotator.
    pub n_per_rad: usize,
}

impl Default for ReviewConfig {
    fn default() -> ReviewConfig {
        ReviewConfig { n_per_rad: 10 }
    }
}

/// Root configuration. All fields default, so an empty file is a valid
/// config and a missing file means pure defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuditConfig {
    pub seed: u64,
    /// Young/old split: young is strictly below this age in years.
    pub age_split: u32,
    pub thresholds: Thresholds,
    pub grid: GridConfig,
    /// Annotator id → group name, for grouped agreement aggregates.
    pub groups: BTreeMap<String, String>,
    pub taxonomy: TaxonomyConfig,
    pub spatial: SpatialConfig,
    pub review: ReviewConfig,
}

impl Default for AuditConfig {
    fn default() -> AuditConfig {
        AuditConfig {
            seed: 0,
            age_split: 50,
            thresholds: Thresholds::default(),
            grid: GridConfig::default(),
            groups: BTreeMap::new(),
            taxonomy: TaxonomyConfig::default(),
            spatial: SpatialConfig::default(),
            review: ReviewConfig::default(),
        }
    }
}

impl AuditConfig {
    pub fn from_toml(text: &str) -> Result<AuditConfig, ConfigError> {
        let config: AuditConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<AuditConfig, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        AuditConfig::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |detail: String| Err(ConfigError::Invalid { detail });
        let t = &self.thresholds;
        if !(t.iou > 0.0 && t.iou < 1.0) {
            return fail(format!("thresholds.iou must be in (0, 1), got {}", t.iou));
        }
        if !(t.co_location > 0.0 && t.co_location <= 1.0) {
            return fail(format!(
                "thresholds.co_location must be in (0, 1], got {}",
                t.co_location
            ));
        }
        if !(t.containment > 0.0 && t.containment <= 1.0) {
            return fail(format!(
                "thresholds.containment must be in (0, 1], got {}",
                t.containment
            ));
        }
        if !(t.asymmetry > 0.0 && t.asymmetry < 1.0) {
            return fail(format!(
                "thresholds.asymmetry must be in (0, 1), got {}",
                t.asymmetry
            ));
        }
        if !(0.0..=1.0).contains(&t.score) {
            return fail(format!("thresholds.score must be in [0, 1], got {}", t.score));
        }
        if !(t.gap > 0.0 && t.gap <= 1.0) {
            return fail(format!("thresholds.gap must be in (0, 1], got {}", t.gap));
        }
        if t.min_support == 0 {
            return fail("thresholds.min_support must be at least 1".into());
        }
        if self.grid.width == 0 || self.grid.height == 0 {
            return fail("grid dimensions must be positive".into());
        }
        if !(1..=99).contains(&self.age_split) {
            return fail(format!("age_split must be in 1..=99, got {}", self.age_split));
        }
        if self.review.n_per_rad == 0 {
            return fail("review.n_per_rad must be at least 1".into());
        }
        self.resolve_taxonomy()?;
        self.resolve_exempt()?;
        Ok(())
    }

    /// Resolve configured class names into a taxonomy. Empty config means
    /// the built-in default taxonomy.
    pub fn resolve_taxonomy(&self) -> Result<Taxonomy, ConfigError> {
        if self.taxonomy.overlap_pairs.is_empty() && self.taxonomy.umbrella.is_empty() {
            return Ok(Taxonomy::default());
        }
        let resolve = |name: &str| {
            ClassLabel::from_name(name).ok_or_else(|| ConfigError::Invalid {
                detail: format!("taxonomy references unknown class {name:?}"),
            })
        };
        let mut taxonomy = Taxonomy {
            overlap_pairs: Default::default(),
            umbrella: Default::default(),
        };
        for (a, b) in &self.taxonomy.overlap_pairs {
            let (a, b) = (resolve(a)?, resolve(b)?);
            if a == b {
                return Err(ConfigError::Invalid {
                    detail: format!("taxonomy pair repeats class {:?}", a.name()),
                });
            }
            taxonomy
                .overlap_pairs
                .insert(crate::annotations::ordered_pair(a, b));
        }
        for (umbrella, members) in &self.taxonomy.umbrella {
            let u = resolve(umbrella)?;
            let members = members
                .iter()
                .map(|m| resolve(m))
                .collect::<Result<_, _>>()?;
            taxonomy.umbrella.insert(u, members);
        }
        taxonomy.validate().map_err(|e| ConfigError::Invalid {
            detail: e.to_string(),
        })?;
        Ok(taxonomy)
    }

    /// Resolve the exempt class names for asymmetry flagging.
    pub fn resolve_exempt(&self) -> Result<std::collections::BTreeSet<ClassLabel>, ConfigError> {
        self.spatial
            .exempt
            .iter()
            .map(|name| {
                ClassLabel::from_name(name).ok_or_else(|| ConfigError::Invalid {
                    detail: format!("spatial.exempt references unknown class {name:?}"),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let config = AuditConfig::from_toml("").unwrap();
        assert_eq!(config, AuditConfig::default());
        assert_eq!(config.thresholds.iou, 0.4);
        assert_eq!(config.thresholds.min_support, 30);
        assert_eq!(config.age_split, 50);
        assert_eq!(config.review.n_per_rad, 10);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = AuditConfig::from_toml("iou_thresold = 0.4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
        let err = AuditConfig::from_toml("[thresholds]\nioo = 0.4\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn out_of_domain_thresholds_are_rejected() {
        for (key, value) in [
            ("iou", "1.0"),
            ("iou", "0.0"),
            ("co_location", "0.0"),
            ("containment", "1.5"),
            ("asymmetry", "1.0"),
            ("score", "1.1"),
            ("gap", "0.0"),
            ("min_support", "0"),
        ] {
            let text = format!("[thresholds]\n{key} = {value}\n");
            let err = AuditConfig::from_toml(&text).unwrap_err();
            assert!(
                matches!(err, ConfigError::Invalid { .. }),
                "{key}={value} should be invalid, got {err:?}"
            );
        }
    }

    #[test]
    fn full_config_round_trips() {
        let text = r#"
seed = 7
age_split = 40

[thresholds]
iou = 0.5
co_location = 0.6
containment = 0.95
asymmetry = 0.3
score = 0.25
gap = 0.2
min_support = 10

[grid]
width = 32
height = 32
deposit = "area_weighted"

[groups]
R01 = "high-volume"
R02 = "low-volume"

[taxonomy]
overlap_pairs = [["ILD", "Pulmonary fibrosis"]]

[taxonomy.umbrella]
"Infiltration" = ["Consolidation"]

[spatial]
exempt = ["Cardiomegaly"]

[review]
n_per_rad = 5
"#;
        let config = AuditConfig::from_toml(text).unwrap();
        assert_eq!(config.age_split, 40);
        assert_eq!(config.grid.deposit, DepositMode::AreaWeighted);
        assert_eq!(config.groups["R01"], "high-volume");
        let taxonomy = config.resolve_taxonomy().unwrap();
        assert_eq!(taxonomy.overlap_pairs.len(), 1);
        assert_eq!(taxonomy.umbrella.len(), 1);
        let exempt = config.resolve_exempt().unwrap();
        assert_eq!(exempt.len(), 1);
        let echo = toml::to_string(&config).unwrap();
        assert_eq!(AuditConfig::from_toml(&echo).unwrap(), config);
    }

    #[test]
    fn unknown_class_names_are_rejected() {
        let err = AuditConfig::from_toml("[taxonomy]\noverlap_pairs = [[\"ILD\", \"Fibrosis\"]]\n")
            .unwrap_err();
        assert!(err.to_string().contains("Fibrosis"));
        let err = AuditConfig::from_toml("[spatial]\nexempt = [\"Heart\"]\n").unwrap_err();
        assert!(err.to_string().contains("Heart"));
    }

    #[test]
    fn no_finding_in_taxonomy_is_rejected() {
        let err = AuditConfig::from_toml(
            "[taxonomy]\noverlap_pairs = [[\"ILD\", \"No finding\"]]\n",
        )
        .unwrap_err();
        assert!(matches!(err, ConfigError::Invalid { .. }));
    }
}
