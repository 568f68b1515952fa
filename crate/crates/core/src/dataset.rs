//! Integer-encoded datasets: feature encoding, assembly from entity records,
//! and the CSV file format the learner reads.
//!
//! Column 0 is always the binary target. Integer features occupy one column
//! named by the feature id; categorical and multi-valued features expand to
//! one 0/1 column per domain value, named `<id>EQ<value>`, in the order the
//! registry declares the domain.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ColumnMismatch, Error, Result};
use crate::registry::{is_feature_id, FeatureRegistry, FeatureSpec};
use crate::source::{EntityRecord, RawValue};

/// Largest magnitude accepted for an integer cell.
pub const MAX_ABS_VALUE: i64 = 1_000_000;

/// A goal plus an ordered list of input features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub name: String,
    pub goal: String,
    pub inputs: Vec<String>,
}

impl ProjectConfig {
    pub fn new(name: impl Into<String>, goal: impl Into<String>, inputs: &[&str]) -> Self {
        Self {
            name: name.into(),
            goal: goal.into(),
            inputs: inputs.iter().map(|s| (*s).to_owned()).collect(),
        }
    }

    pub fn validate(&self, registry: &FeatureRegistry) -> Result<()> {
        if !is_name(&self.name) {
            return Err(Error::validation(format!(
                "project name `{}` must match [a-z0-9_-]{{1,64}}",
                self.name
            )));
        }
        let goal = registry.get(&self.goal).ok_or_else(|| {
            Error::validation(format!("goal `{}` is not a registered feature", self.goal))
        })?;
        if !goal.goal_eligible {
            return Err(Error::validation(format!(
                "feature `{}` cannot be chosen as a goal",
                self.goal
            )));
        }
        if self.inputs.is_empty() {
            return Err(Error::validation("a project needs at least one input feature"));
        }
        let mut seen = HashSet::new();
        for id in &self.inputs {
            if registry.get(id).is_none() {
                return Err(Error::validation(format!(
                    "input `{id}` is not a registered feature"
                )));
            }
            if id == &self.goal {
                return Err(Error::validation(format!(
                    "goal `{id}` cannot also be an input"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::validation(format!("input `{id}` is listed twice")));
            }
        }
        Ok(())
    }

    /// The dataset header every dataset of this project has. Depends only on
    /// the registry and the config.
    pub fn layout(&self, registry: &FeatureRegistry) -> Result<Vec<String>> {
        self.validate(registry)?;
        let mut header = vec![self.goal.clone()];
        for id in &self.inputs {
            header.extend(registry.require(id)?.column_names());
        }
        Ok(header)
    }

    pub fn specs<'a>(&self, registry: &'a FeatureRegistry) -> Result<Vec<&'a FeatureSpec>> {
        std::iter::once(&self.goal)
            .chain(&self.inputs)
            .map(|id| registry.require(id))
            .collect()
    }
}

/// Names used for projects, datasets and models.
pub fn is_name(s: &str) -> bool {
    (1..=64).contains(&s.len()) && is_feature_id(s)
}

fn encode_into(spec: &FeatureSpec, raw: &RawValue, out: &mut Vec<i64>) -> Result<()> {
    let domain_index = |token: &str| {
        spec.value_domain
            .iter()
            .position(|v| v == token)
            .ok_or_else(|| Error::encoding(&spec.id, format!("`{token}` is not in the value domain")))
    };
    match raw {
        RawValue::Int(v) if spec.is_integer => {
            if v.abs() > MAX_ABS_VALUE {
                return Err(Error::encoding(
                    &spec.id,
                    format!("{v} exceeds the supported magnitude {MAX_ABS_VALUE}"),
                ));
            }
            out.push(*v);
        }
        _ if spec.is_integer => {
            return Err(Error::encoding(&spec.id, "expected an integer value"));
        }
        RawValue::Token(t) if !spec.is_multivalued => {
            let k = domain_index(t)?;
            let start = out.len();
            out.resize(start + spec.value_domain.len(), 0);
            out[start + k] = 1;
        }
        RawValue::Set(tokens) if spec.is_multivalued => {
            let start = out.len();
            out.resize(start + spec.value_domain.len(), 0);
            for t in tokens {
                out[start + domain_index(t)?] = 1;
            }
        }
        _ if spec.is_multivalued => {
            return Err(Error::encoding(&spec.id, "expected a set of values"));
        }
        _ => return Err(Error::encoding(&spec.id, "expected a single categorical value")),
    }
    Ok(())
}

/// Encodes one raw value into its column names and integer cells.
pub fn encode_feature(spec: &FeatureSpec, raw: &RawValue) -> Result<(Vec<String>, Vec<i64>)> {
    let mut values = Vec::with_capacity(spec.width());
    encode_into(spec, raw, &mut values)?;
    Ok((spec.column_names(), values))
}

/// Inverse of [`encode_feature`] for the cells of a single feature.
pub fn decode_feature(spec: &FeatureSpec, cells: &[i64]) -> Result<RawValue> {
    if cells.len() != spec.width() {
        return Err(Error::Dimension {
            expected: spec.width(),
            found: cells.len(),
        });
    }
    if spec.is_integer {
        return Ok(RawValue::Int(cells[0]));
    }
    if cells.iter().any(|&c| c != 0 && c != 1) {
        return Err(Error::encoding(&spec.id, "indicator cells must be 0 or 1"));
    }
    let hot = spec
        .value_domain
        .iter()
        .zip(cells)
        .filter(|(_, &c)| c == 1)
        .map(|(v, _)| v.clone());
    if spec.is_multivalued {
        return Ok(RawValue::set(hot));
    }
    let hot: Vec<String> = hot.collect();
    match <[String; 1]>::try_from(hot) {
        Ok([token]) => Ok(RawValue::Token(token)),
        Err(hot) => Err(Error::encoding(
            &spec.id,
            format!("one-hot group has {} hot cells", hot.len()),
        )),
    }
}

/// Anything that carries an ordered dataset header (column 0 = target).
pub trait HasHeader {
    fn header(&self) -> &[String];
}

/// First column at which `found` departs from `expected`, if any.
pub fn first_mismatch(expected: &[String], found: &[String]) -> Option<ColumnMismatch> {
    let n = expected.len().max(found.len());
    (0..n)
        .find(|&i| expected.get(i) != found.get(i))
        .map(|index| ColumnMismatch {
            index,
            expected: expected.get(index).cloned(),
            found: found.get(index).cloned(),
        })
}

/// Headers must agree column for column, including order.
pub fn schema_compatible(a: &impl HasHeader, b: &DataSet) -> bool {
    a.header() == b.header()
}

pub fn check_compatible(a: &impl HasHeader, b: &DataSet) -> Result<()> {
    match first_mismatch(a.header(), b.header()) {
        None => Ok(()),
        Some(m) => Err(Error::Compatibility(m)),
    }
}

pub fn fingerprint(header: &[String]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(header.join(",").as_bytes());
    hex::encode(hasher.finalize())
}

/// Integer matrix with a header row; column 0 is the binary target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataSet {
    header: Vec<String>,
    rows: Vec<Vec<i64>>,
    fingerprint: String,
}

impl HasHeader for DataSet {
    fn header(&self) -> &[String] {
        &self.header
    }
}

impl DataSet {
    pub fn new(header: Vec<String>, rows: Vec<Vec<i64>>) -> Result<Self> {
        if header.len() < 2 {
            return Err(Error::validation("a dataset needs a target and at least one input column"));
        }
        let mut seen = HashSet::new();
        for name in &header {
            if name.is_empty() || name.contains(',') || name.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!("invalid column name `{name}`")));
            }
            if !seen.insert(name) {
                return Err(Error::validation(format!("duplicate column `{name}`")));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != header.len() {
                return Err(Error::validation(format!(
                    "row {i} has {} cells, header has {}",
                    row.len(),
                    header.len()
                )));
            }
            if row[0] != 0 && row[0] != 1 {
                return Err(Error::validation(format!(
                    "row {i}: target value {} is not 0 or 1",
                    row[0]
                )));
            }
        }
        let fingerprint = fingerprint(&header);
        Ok(Self {
            header,
            rows,
            fingerprint,
        })
    }

    pub fn rows(&self) -> &[Vec<i64>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Number of input columns.
    pub fn n_features(&self) -> usize {
        self.header.len() - 1
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn target(&self, row: usize) -> bool {
        self.rows[row][0] == 1
    }

    pub fn inputs(&self, row: usize) -> &[i64] {
        &self.rows[row][1..]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            for (j, v) in row.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let body = text.strip_suffix('\n').unwrap_or(text);
        let mut lines = body.split('\n');
        let header: Vec<String> = match lines.next() {
            Some(h) if !h.is_empty() => h.split(',').map(str::to_owned).collect(),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    detail: "missing header".into(),
                })
            }
        };
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let row = line
                .split(',')
                .map(|cell| {
                    cell.parse::<i64>().map_err(|_| Error::Parse {
                        line: lineno,
                        detail: format!("`{cell}` is not an integer"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            if row.len() != header.len() {
                return Err(Error::Parse {
                    line: lineno,
                    detail: format!("{} cells under a {}-column header", row.len(), header.len()),
                });
            }
            rows.push(row);
        }
        Self::new(header, rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_csv_str(&fs::read_to_string(path)?)
    }
}

/// Assembles the dataset for a project from entity records, one row per
/// record in record order.
pub fn build_dataset(
    config: &ProjectConfig,
    records: &[EntityRecord],
    registry: &FeatureRegistry,
) -> Result<DataSet> {
    let header = config.layout(registry)?;
    let goal = registry.require(&config.goal)?;
    if goal.width() != 1 {
        return Err(Error::Config(format!(
            "goal `{}` does not encode to a single column",
            goal.id
        )));
    }
    let inputs: Vec<&FeatureSpec> = config
        .inputs
        .iter()
        .map(|id| registry.require(id))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(records.len());
    for record in records {
        let with_entity = |e: Error| Error::Entity {
            entity: record.entity_id.clone(),
            source: Box::new(e),
        };
        let mut row = Vec::with_capacity(header.len());
        encode_into(goal, record.value(&goal.id).map_err(with_entity)?, &mut row)
            .map_err(with_entity)?;
        if row[0] != 0 && row[0] != 1 {
            return Err(with_entity(Error::encoding(
                &goal.id,
                format!("target value {} is not 0 or 1", row[0]),
            )));
        }
        for spec in &inputs {
            encode_into(spec, record.value(&spec.id).map_err(with_entity)?, &mut row)
                .map_err(with_entity)?;
        }
        rows.push(row);
    }
    DataSet::new(header, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use std::collections::BTreeMap;

    fn record(id: &str, values: &[(&str, RawValue)]) -> EntityRecord {
        EntityRecord {
            entity_id: id.into(),
            values: values
                .iter()
                .map(|(k, v)| ((*k).to_owned(), v.clone()))
                .collect::<BTreeMap<_, _>>(),
        }
    }

    #[test]
    fn integer_feature_is_one_column() {
        let reg = fixtures::registry();
        let (cols, vals) = encode_feature(reg.get("age").unwrap(), &RawValue::Int(54)).unwrap();
        assert_eq!(cols, ["age"]);
        assert_eq!(vals, [54]);
    }

    #[test]
    fn categorical_feature_is_one_hot() {
        let reg = fixtures::registry();
        let (cols, vals) =
            encode_feature(reg.get("blood_group").unwrap(), &RawValue::Token("B".into())).unwrap();
        assert_eq!(
            cols,
            ["blood_groupEQA", "blood_groupEQB", "blood_groupEQAB", "blood_groupEQO"]
        );
        assert_eq!(vals, [0, 1, 0, 0]);
    }

    #[test]
    fn multivalued_feature_is_multi_hot() {
        let reg = fixtures::registry();
        let spec = reg.get("biopsy").unwrap();
        let (cols, vals) = encode_feature(spec, &RawValue::set(["fibrosis", "infiltrate"])).unwrap();
        assert_eq!(cols, ["biopsyEQfibrosis", "biopsyEQatrophy", "biopsyEQinfiltrate"]);
        assert_eq!(vals, [1, 0, 1]);
        assert_eq!(decode_feature(spec, &vals).unwrap(), RawValue::set(["infiltrate", "fibrosis"]));
    }

    #[test]
    fn encoding_errors_name_the_feature() {
        let reg = fixtures::registry();
        let err = encode_feature(reg.get("blood_group").unwrap(), &RawValue::Token("C".into()))
            .unwrap_err();
        assert!(err.to_string().contains("blood_group") && err.to_string().contains("`C`"));
        let err = encode_feature(reg.get("age").unwrap(), &RawValue::Token("old".into())).unwrap_err();
        assert!(matches!(err, Error::Encoding { ref feature, .. } if feature == "age"));
        assert!(encode_feature(reg.get("biopsy").unwrap(), &RawValue::Token("fibrosis".into())).is_err());
    }

    #[test]
    fn builds_the_two_row_example() {
        let reg = fixtures::registry();
        let cfg = ProjectConfig::new("demo", "rejection_1y", &["age"]);
        let recs = [
            record("a", &[("age", RawValue::Int(54)), ("rejection_1y", RawValue::Int(1))]),
            record("b", &[("age", RawValue::Int(31)), ("rejection_1y", RawValue::Int(0))]),
        ];
        let ds = build_dataset(&cfg, &recs, &reg).unwrap();
        assert_eq!(ds.header(), ["rejection_1y", "age"]);
        assert_eq!(ds.rows(), [vec![1, 54], vec![0, 31]]);
        assert_eq!(ds.to_csv_string(), "rejection_1y,age\n1,54\n0,31\n");
    }

    #[test]
    fn zero_records_give_an_empty_dataset() {
        let reg = fixtures::registry();
        let cfg = ProjectConfig::new("demo", "rejection_1y", &["age"]);
        let ds = build_dataset(&cfg, &[], &reg).unwrap();
        assert_eq!(ds.header(), ["rejection_1y", "age"]);
        assert_eq!(ds.n_rows(), 0);
    }

    #[test]
    fn non_binary_target_is_rejected_with_entity() {
        let reg = fixtures::registry();
        let cfg = ProjectConfig::new("demo", "rejection_1y", &["age"]);
        let recs = [record("p7", &[("age", RawValue::Int(54)), ("rejection_1y", RawValue::Int(2))])];
        let err = build_dataset(&cfg, &recs, &reg).unwrap_err();
        assert!(err.to_string().contains("p7"), "{err}");
    }

    #[test]
    fn invalid_configs() {
        let reg = fixtures::registry();
        let bad = [
            ProjectConfig::new("demo", "age", &["blood_group"]),
            ProjectConfig::new("demo", "rejection_1y", &[]),
            ProjectConfig::new("demo", "rejection_1y", &["age", "age"]),
            ProjectConfig::new("demo", "rejection_1y", &["rejection_1y"]),
            ProjectConfig::new("demo", "rejection_1y", &["height"]),
            ProjectConfig::new("Demo", "rejection_1y", &["age"]),
        ];
        for cfg in bad {
            assert!(cfg.validate(&reg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn read_rejects_wide_row_with_line_number() {
        let err = DataSet::from_csv_str("rejection_1y,age\n1,54,9\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = DataSet::from_csv_str("rejection_1y,age\n1,54\n0,x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = DataSet::from_csv_str("rejection_1y,age\n3,54\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn compatibility_is_order_sensitive() {
        let h = |cols: &[&str]| cols.iter().map(|s| (*s).to_owned()).collect::<Vec<_>>();
        let a = DataSet::new(h(&["y", "a", "b"]), vec![]).unwrap();
        let swapped = DataSet::new(h(&["y", "b", "a"]), vec![]).unwrap();
        let longer = DataSet::new(h(&["y", "a", "b", "c"]), vec![]).unwrap();
        assert!(schema_compatible(&a, &a));
        assert!(!schema_compatible(&a, &swapped));
        assert!(!schema_compatible(&a, &longer));
        let m = first_mismatch(a.header(), longer.header()).unwrap();
        assert_eq!((m.index, m.expected, m.found.as_deref()), (3, None, Some("c")));
        assert_ne!(a.fingerprint(), swapped.fingerprint());
    }

    #[test]
    fn one_hot_rows_by_reencoding() {
        let reg = fixtures::registry();
        let pool = crate::source::generate_synthetic(5, 50, &reg, None).unwrap();
        let cfg = ProjectConfig::new("demo", "rejection_1y", &["blood_group"]);
        let ds = build_dataset(&cfg, pool.records(), &reg).unwrap();
        assert_eq!(ds.header().len(), 5);
        let spec = reg.get("blood_group").unwrap();
        for (row, rec) in ds.rows().iter().zip(pool.records()) {
            assert_eq!(row[1..].iter().sum::<i64>(), 1);
            let (_, expected) = encode_feature(spec, &rec.values["blood_group"]).unwrap();
            assert_eq!(&row[1..], expected.as_slice());
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn dataset() -> impl Strategy<Value = DataSet> {
            (1usize..12, 0usize..100).prop_flat_map(|(d, n)| {
                prop::collection::vec(
                    (0i64..=1, prop::collection::vec(-MAX_ABS_VALUE..=MAX_ABS_VALUE, d)),
                    n,
                )
                .prop_map(move |rows| {
                    let header = std::iter::once("y".to_owned())
                        .chain((0..d).map(|j| format!("x{j}")))
                        .collect();
                    let rows = rows
                        .into_iter()
                        .map(|(y, xs)| std::iter::once(y).chain(xs).collect())
                        .collect();
                    DataSet::new(header, rows).unwrap()
                })
            })
        }

        proptest! {
            #[test]
            fn csv_round_trip(ds in dataset()) {
                let text = ds.to_csv_string();
                let back = DataSet::from_csv_str(&text).unwrap();
                prop_assert_eq!(&back, &ds);
                prop_assert_eq!(back.to_csv_string(), text);
            }
        }
    }
}
