//! Raw per-entity feature values and the sources that answer
//! `source_query` lookups.
//!
//! Two interpreters ship: [`EntityPool`], an in-memory pool usually produced
//! by [`generate_synthetic`], and [`CsvSource`], which reads an entity table
//! from disk. Pools can be written with [`write_pool_csv`] and read back by
//! [`CsvSource`].

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode_feature, HasHeader};
use crate::error::{Error, Result};
use crate::learner::{predict_risk_from_score, RiskModel};
use crate::registry::{FeatureRegistry, FeatureSpec};

/// A raw value as read from the source, before encoding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Int(i64),
    Token(String),
    Set(BTreeSet<String>),
}

impl RawValue {
    pub fn set<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        RawValue::Set(tokens.into_iter().map(Into::into).collect())
    }

    fn cell(&self) -> String {
        match self {
            RawValue::Int(v) => v.to_string(),
            RawValue::Token(t) => t.clone(),
            RawValue::Set(s) => s.iter().map(String::as_str).collect::<Vec<_>>().join(";"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub entity_id: String,
    pub values: BTreeMap<String, RawValue>,
}

impl EntityRecord {
    pub fn value(&self, feature: &str) -> Result<&RawValue> {
        self.values.get(feature).ok_or_else(|| Error::MissingValue {
            entity: self.entity_id.clone(),
            feature: feature.to_owned(),
        })
    }
}

/// Anything that can answer feature lookups for a set of entities.
pub trait DataSource: Send + Sync {
    /// Returns one record per entity, covering every requested feature.
    /// `None` selects all entities in pool order; otherwise exactly the named
    /// entities are returned, in the given order.
    fn fetch(&self, entities: Option<&[String]>, features: &[&FeatureSpec]) -> Result<Vec<EntityRecord>>;
}

/// Immutable in-memory snapshot of entity records.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EntityPool {
    records: Vec<EntityRecord>,
    index: HashMap<String, usize>,
}

impl EntityPool {
    pub fn new(records: Vec<EntityRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            if index.insert(r.entity_id.clone(), i).is_some() {
                return Err(Error::validation(format!(
                    "duplicate entity id `{}`",
                    r.entity_id
                )));
            }
        }
        Ok(Self { records, index })
    }

    pub fn records(&self) -> &[EntityRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

fn select<'a, T>(
    all: &'a [T],
    index: &HashMap<String, usize>,
    entities: Option<&[String]>,
) -> Result<Vec<&'a T>> {
    match entities {
        None => Ok(all.iter().collect()),
        Some(ids) => ids
            .iter()
            .map(|id| {
                index
                    .get(id)
                    .map(|&i| &all[i])
                    .ok_or_else(|| Error::not_found("entity", id.clone()))
            })
            .collect(),
    }
}

impl DataSource for EntityPool {
    fn fetch(&self, entities: Option<&[String]>, features: &[&FeatureSpec]) -> Result<Vec<EntityRecord>> {
        select(&self.records, &self.index, entities)?
            .into_iter()
            .map(|r| {
                let values = features
                    .iter()
                    .map(|f| Ok((f.id.clone(), r.value(&f.id)?.clone())))
                    .collect::<Result<_>>()?;
                Ok(EntityRecord {
                    entity_id: r.entity_id.clone(),
                    values,
                })
            })
            .collect()
    }
}

/// Entity table read from a CSV file.
///
/// The first column holds entity ids. A feature's column is the one named
/// by its `source_query`; when no such column exists the feature id is used.
/// Multi-valued cells separate tokens with `;`. Cells are parsed lazily
/// against the requesting [`FeatureSpec`].
#[derive(Debug, Clone)]
pub struct CsvSource {
    columns: HashMap<String, usize>,
    rows: Vec<Vec<String>>,
    index: HashMap<String, usize>,
}

impl CsvSource {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path.as_ref())
            .map_err(|e| Error::Config(format!("cannot open entity table: {e}")))?;
        Self::from_reader(file)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr.headers().map_err(csv_error)?.clone();
        if header.get(0) != Some("entity_id") {
            return Err(Error::Parse {
                line: 1,
                detail: "first column must be `entity_id`".into(),
            });
        }
        let columns = header
            .iter()
            .enumerate()
            .skip(1)
            .map(|(i, name)| (name.to_owned(), i))
            .collect();
        let mut rows = Vec::new();
        let mut index = HashMap::new();
        for record in rdr.records() {
            let record = record.map_err(csv_error)?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let row: Vec<String> = record.iter().map(str::to_owned).collect();
            if index.insert(row[0].clone(), rows.len()).is_some() {
                return Err(Error::Parse {
                    line,
                    detail: format!("duplicate entity id `{}`", row[0]),
                });
            }
            rows.push(row);
        }
        Ok(Self {
            columns,
            rows,
            index,
        })
    }

    fn column_of(&self, spec: &FeatureSpec) -> Option<usize> {
        self.columns
            .get(&spec.source_query)
            .or_else(|| self.columns.get(&spec.id))
            .copied()
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::Parse {
        line,
        detail: e.to_string(),
    }
}

fn parse_cell(spec: &FeatureSpec, cell: &str) -> Result<RawValue> {
    if spec.is_multivalued {
        return Ok(RawValue::set(cell.split(';').filter(|t| !t.is_empty())));
    }
    if spec.is_integer {
        return cell
            .trim()
            .parse()
            .map(RawValue::Int)
            .map_err(|_| Error::encoding(&spec.id, format!("`{cell}` is not an integer")));
    }
    Ok(RawValue::Token(cell.to_owned()))
}

impl DataSource for CsvSource {
    fn fetch(&self, entities: Option<&[String]>, features: &[&FeatureSpec]) -> Result<Vec<EntityRecord>> {
        let cols: Vec<Option<usize>> = features.iter().map(|f| self.column_of(f)).collect();
        select(&self.rows, &self.index, entities)?
            .into_iter()
            .map(|row| {
                let entity = &row[0];
                let missing = |f: &FeatureSpec| Error::MissingValue {
                    entity: entity.clone(),
                    feature: f.id.clone(),
                };
                let mut values = BTreeMap::new();
                for (spec, col) in features.iter().zip(&cols) {
                    let cell = col.and_then(|c| row.get(c)).ok_or_else(|| missing(spec))?;
                    if cell.is_empty() && !spec.is_multivalued {
                        return Err(missing(spec));
                    }
                    let value = parse_cell(spec, cell).map_err(|e| Error::Entity {
                        entity: entity.clone(),
                        source: Box::new(e),
                    })?;
                    values.insert(spec.id.clone(), value);
                }
                Ok(EntityRecord {
                    entity_id: entity.clone(),
                    values,
                })
            })
            .collect()
    }
}

/// Writes a pool as an entity table with one column per registry feature,
/// named by feature id.
pub fn write_pool_csv(pool: &EntityPool, registry: &FeatureRegistry, out: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(out);
    let ids: Vec<&str> = registry.features().iter().map(|f| f.id.as_str()).collect();
    w.write_record(std::iter::once("entity_id").chain(ids.iter().copied()))
        .map_err(|e| Error::Io(e.into()))?;
    for r in pool.records() {
        let mut row = vec![r.entity_id.clone()];
        for id in &ids {
            row.push(r.values.get(*id).map(RawValue::cell).unwrap_or_default());
        }
        w.write_record(&row).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// How the synthetic generator draws an integer feature. Read from the
/// feature's `source_query`: `uniform:LO:HI` or `bernoulli:P`; anything else
/// draws 0/1 with equal odds.
#[derive(Debug, Clone, Copy, PartialEq)]
enum IntDistribution {
    Uniform(i64, i64),
    Bernoulli(f64),
}

impl IntDistribution {
    fn from_query(query: &str) -> Self {
        let parts: Vec<&str> = query.split(':').collect();
        match parts.as_slice() {
            ["uniform", lo, hi] => match (lo.parse(), hi.parse()) {
                (Ok(lo), Ok(hi)) if lo <= hi => IntDistribution::Uniform(lo, hi),
                _ => IntDistribution::Bernoulli(0.5),
            },
            ["bernoulli", p] => match p.parse::<f64>() {
                Ok(p) if (0.0..=1.0).contains(&p) => IntDistribution::Bernoulli(p),
                _ => IntDistribution::Bernoulli(0.5),
            },
            _ => IntDistribution::Bernoulli(0.5),
        }
    }

    fn draw(self, rng: &mut impl Rng) -> i64 {
        match self {
            IntDistribution::Uniform(lo, hi) => rng.random_range(lo..=hi),
            IntDistribution::Bernoulli(p) => rng.random_bool(p) as i64,
        }
    }
}

/// Probability that a multi-valued feature carries any one domain member.
const MULTI_VALUE_RATE: f64 = 0.3;

/// A planted model resolved against the registry: for each coefficient
/// column, the feature it reads and the categorical value it indicates.
struct Planted<'a> {
    goal: &'a str,
    bias: i64,
    terms: Vec<(&'a FeatureSpec, Option<&'a str>, i64)>,
}

impl<'a> Planted<'a> {
    fn resolve(model: &'a RiskModel, registry: &'a FeatureRegistry) -> Result<Self> {
        let header = model.header();
        let goal = registry
            .get(&header[0])
            .filter(|g| g.goal_eligible)
            .ok_or_else(|| {
                Error::validation(format!(
                    "planted model target `{}` is not a goal-eligible feature",
                    header[0]
                ))
            })?;
        let mut terms = Vec::new();
        for (column, &coef) in header[1..].iter().zip(model.coefficients()) {
            let (spec, value) = registry.resolve_column(column).ok_or_else(|| {
                Error::validation(format!(
                    "planted model column `{column}` does not match the registry encoding"
                ))
            })?;
            if spec.id == goal.id {
                return Err(Error::validation("planted model uses its target as an input"));
            }
            terms.push((spec, value, coef));
        }
        Ok(Self {
            goal: &goal.id,
            bias: model.bias(),
            terms,
        })
    }

    fn label(&self, values: &BTreeMap<String, RawValue>, rng: &mut impl Rng) -> Result<i64> {
        let mut score = 0i64;
        for (spec, value, coef) in &self.terms {
            let raw = &values[&spec.id];
            let x = match (raw, value) {
                (RawValue::Int(v), None) => *v,
                (RawValue::Token(t), Some(v)) => (t == v) as i64,
                (RawValue::Set(s), Some(v)) => s.contains(*v) as i64,
                _ => return Err(Error::encoding(&spec.id, "raw value kind does not match spec")),
            };
            score += coef * x;
        }
        let p = predict_risk_from_score(self.bias, score);
        Ok(rng.random_bool(p) as i64)
    }
}

/// Deterministic synthetic pool of `n` entities `p1..pn` covering every
/// registry feature.
///
/// Categorical features are uniform over their domain; multi-valued
/// features include each domain member independently with probability 0.3;
/// integer features follow the distribution named by `source_query` (see
/// [`IntDistribution`]). With a planted model, its target feature is drawn
/// as a Bernoulli with the model's risk for the entity's encoded row.
pub fn generate_synthetic(
    seed: u64,
    n: usize,
    registry: &FeatureRegistry,
    planted: Option<&RiskModel>,
) -> Result<EntityPool> {
    if n == 0 {
        return Err(Error::validation("synthetic pool size must be at least 1"));
    }
    let planted = planted.map(|m| Planted::resolve(m, registry)).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let int_dists: Vec<_> = registry
        .features()
        .iter()
        .map(|f| IntDistribution::from_query(&f.source_query))
        .collect();

    let mut records = Vec::with_capacity(n);
    for i in 1..=n {
        let mut values = BTreeMap::new();
        for (spec, dist) in registry.features().iter().zip(&int_dists) {
            if planted.as_ref().is_some_and(|p| p.goal == spec.id) {
                continue;
            }
            let value = if spec.is_integer {
                RawValue::Int(dist.draw(&mut rng))
            } else if spec.is_multivalued {
                RawValue::set(
                    spec.value_domain
                        .iter()
                        .filter(|_| rng.random_bool(MULTI_VALUE_RATE))
                        .cloned(),
                )
            } else {
                let k = rng.random_range(0..spec.value_domain.len());
                RawValue::Token(spec.value_domain[k].clone())
            };
            values.insert(spec.id.clone(), value);
        }
        if let Some(p) = &planted {
            let label = p.label(&values, &mut rng)?;
            values.insert(p.goal.to_owned(), RawValue::Int(label));
        }
        records.push(EntityRecord {
            entity_id: format!("p{i}"),
            values,
        });
    }
    let pool = EntityPool::new(records)?;
    debug_assert!(pool
        .records()
        .iter()
        .all(|r| registry.features().iter().all(|f| encode_feature(f, &r.values[&f.id]).is_ok())));
    Ok(pool)
}
