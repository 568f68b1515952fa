//! The declarative pool of features a project can draw its goal and inputs
//! from.
//!
//! The registry lives in a TOML document with one `[[feature]]` table per
//! entry:
//!
//! ```toml
//! [[feature]]
//! id = "blood_group"
//! label = "Blood group"
//! explanation = "Recipient ABO blood group"
//! source_query = "blood_group"
//! is_integer = false
//! is_multivalued = false
//! goal_eligible = false
//! value_domain = ["A", "B", "AB", "O"]
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between a feature id and a categorical value in expanded
/// column names. Feature ids are lowercase, so the first occurrence always
/// ends the id.
pub const EQ: &str = "EQ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub id: String,
    pub label: String,
    pub explanation: String,
    pub source_query: String,
    pub is_integer: bool,
    pub is_multivalued: bool,
    pub goal_eligible: bool,
    #[serde(default)]
    pub value_domain: Vec<String>,
}

impl FeatureSpec {
    /// Number of dataset columns this feature expands to.
    pub fn width(&self) -> usize {
        if self.is_integer {
            1
        } else {
            self.value_domain.len()
        }
    }

    /// Names of the dataset columns this feature expands to, in order.
    pub fn column_names(&self) -> Vec<String> {
        if self.is_integer {
            vec![self.id.clone()]
        } else {
            self.value_domain
                .iter()
                .map(|v| format!("{}{EQ}{v}", self.id))
                .collect()
        }
    }

    fn validate(&self) -> Result<()> {
        let fail = |rule: &str| {
            Err(Error::validation(format!("feature `{}`: {rule}", self.id)))
        };
        if !is_feature_id(&self.id) {
            return fail("id must be a non-empty lowercase token of [a-z0-9_-]");
        }
        if self.is_integer && self.is_multivalued {
            return fail("is_integer and is_multivalued cannot both be set");
        }
        if self.is_integer && !self.value_domain.is_empty() {
            return fail("integer features must have an empty value_domain");
        }
        if !self.is_integer && self.value_domain.is_empty() {
            return fail("categorical features need a non-empty value_domain");
        }
        if self.goal_eligible && !self.is_integer {
            return fail("goal features must be integer features with values in {0, 1}");
        }
        let mut seen = HashSet::new();
        for value in &self.value_domain {
            if !is_value_token(value) {
                return fail(&format!(
                    "value `{value}` must be non-empty without commas, semicolons or whitespace"
                ));
            }
            if !seen.insert(value) {
                return fail(&format!("value `{value}` is listed twice"));
            }
        }
        Ok(())
    }
}

pub(crate) fn is_feature_id(s: &str) -> bool {
    !s.is_empty()
        && s
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

pub(crate) fn is_value_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c == ',' || c == ';' || c.is_whitespace())
}

/// What clients get to see about a feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub id: String,
    pub label: String,
    pub explanation: String,
    pub goal_eligible: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct RegistryDocument {
    #[serde(default, rename = "feature")]
    features: Vec<FeatureSpec>,
}

/// Immutable, validated list of features in declaration order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FeatureRegistry {
    features: Vec<FeatureSpec>,
}

impl FeatureRegistry {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut ids = HashSet::new();
        for spec in &features {
            spec.validate()?;
            if !ids.insert(spec.id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate feature id `{}`",
                    spec.id
                )));
            }
        }
        Ok(Self { features })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read registry: {e}")))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let doc: RegistryDocument =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim().to_owned()))?;
        Self::new(doc.features)
    }

    pub fn to_toml(&self) -> String {
        let doc = RegistryDocument {
            features: self.features.clone(),
        };
        toml::to_string(&doc).expect("registry documents always serialize")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn get(&self, id: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.id == id)
    }

    pub fn require(&self, id: &str) -> Result<&FeatureSpec> {
        self.get(id).ok_or_else(|| Error::not_found("feature", id))
    }

    pub fn list(&self) -> Vec<FeatureSummary> {
        self.features
            .iter()
            .map(|f| FeatureSummary {
                id: f.id.clone(),
                label: f.label.clone(),
                explanation: f.explanation.clone(),
                goal_eligible: f.goal_eligible,
            })
            .collect()
    }

    /// Resolves an encoded column name back to its feature and, for
    /// categorical columns, the value it indicates.
    pub fn resolve_column<'a>(&'a self, column: &'a str) -> Option<(&'a FeatureSpec, Option<&'a str>)> {
        if let Some(spec) = self.get(column) {
            return spec.is_integer.then_some((spec, None));
        }
        let (id, value) = column.split_once(EQ)?;
        let spec = self.get(id)?;
        spec.value_domain
            .iter()
            .any(|v| v == value)
            .then_some((spec, Some(value)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[[feature]]
id = "age"
label = "Age at transplant"
explanation = "Years"
source_query = "uniform:18:80"
is_integer = true
is_multivalued = false
goal_eligible = false

[[feature]]
id = "blood_group"
label = "Blood group"
explanation = "ABO"
source_query = "blood_group"
is_integer = false
is_multivalued = false
goal_eligible = false
value_domain = ["A", "B", "AB", "O"]

[[feature]]
id = "rejection_1y"
label = "Rejection within one year"
explanation = "Biopsy-proven"
source_query = "rejection_1y"
is_integer = true
is_multivalued = false
goal_eligible = true
"#;

    #[test]
    fn loads_in_declaration_order() {
        let reg = FeatureRegistry::from_toml(SAMPLE).unwrap();
        let ids: Vec<_> = reg.features().iter().map(|f| f.id.as_str()).collect();
        assert_eq!(ids, ["age", "blood_group", "rejection_1y"]);
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let text = format!("{SAMPLE}\n{}", &SAMPLE[..SAMPLE.find("[[feature]]\nid = \"blood").unwrap()]);
        let err = FeatureRegistry::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate feature id `age`"), "{err}");
    }

    #[test]
    fn categorical_without_domain_is_rejected() {
        let text = SAMPLE.replace(r#"value_domain = ["A", "B", "AB", "O"]"#, "value_domain = []");
        let err = FeatureRegistry::from_toml(&text).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("blood_group"), "{err}");
    }

    #[test]
    fn integer_and_multivalued_conflict() {
        let text = SAMPLE.replacen("is_multivalued = false", "is_multivalued = true", 1);
        let err = FeatureRegistry::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("age"), "{err}");
    }

    #[test]
    fn categorical_goal_is_rejected() {
        let text = SAMPLE.replacen("goal_eligible = false", "goal_eligible = true", 2);
        let err = FeatureRegistry::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("blood_group"), "{err}");
    }

    #[test]
    fn syntax_error_names_the_line() {
        let err = FeatureRegistry::from_toml("[[feature]]\nid = \"age\nlabel = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn listing_hides_queries() {
        let reg = FeatureRegistry::from_toml(SAMPLE).unwrap();
        let list = reg.list();
        assert_eq!(list.len(), 3);
        assert_eq!(list.iter().filter(|s| s.goal_eligible).count(), 1);
        let json = serde_json::to_string(&list).unwrap();
        assert!(!json.contains("source_query"));
        assert!(!json.contains("uniform:18:80"));
        assert!(FeatureRegistry::default().list().is_empty());
    }

    #[test]
    fn round_trip_through_toml() {
        let reg = FeatureRegistry::from_toml(SAMPLE).unwrap();
        assert_eq!(FeatureRegistry::from_toml(&reg.to_toml()).unwrap(), reg);
    }

    #[test]
    fn resolves_expanded_columns() {
        let reg = FeatureRegistry::from_toml(SAMPLE).unwrap();
        let (spec, value) = reg.resolve_column("blood_groupEQAB").unwrap();
        assert_eq!((spec.id.as_str(), value), ("blood_group", Some("AB")));
        assert_eq!(reg.resolve_column("age").unwrap().1, None);
        assert!(reg.resolve_column("blood_groupEQC").is_none());
        assert!(reg.resolve_column("blood_group").is_none());
        assert!(reg.resolve_column("height").is_none());
    }
}
