use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::context::{engineer_events, ActiveCaseIndex, TIME_FIELDS};
use super::{EncoderConfig, FeatureError, Prefix, ACTIVITY};
use crate::event_log::{AttrKind, AttrLevel, Event, Schema, Value};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Agg {
    Min,
    Max,
    Mean,
    Sum,
}

impl Agg {
    pub fn name(self) -> &'static str {
        match self {
            Agg::Min => "min",
            Agg::Max => "max",
            Agg::Mean => "mean",
            Agg::Sum => "sum",
        }
    }

    fn apply(self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return 0.0;
        }
        match self {
            Agg::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
            Agg::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Agg::Sum => values.iter().sum(),
            Agg::Mean => values.iter().sum::<f64>() / values.len() as f64,
        }
    }
}

impl std::str::FromStr for Agg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min" => Ok(Agg::Min),
            "max" => Ok(Agg::Max),
            "mean" => Ok(Agg::Mean),
            "sum" => Ok(Agg::Sum),
            other => Err(format!("unknown aggregation `{other}`")),
        }
    }
}

/// How one column is computed from a prefix. `back` counts events from the
/// end of the prefix (0 = last event).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureKind {
    Count { value: String },
    Aggregate { agg: Agg },
    LastNumeric { back: usize },
    LastCategory { back: usize, value: String },
    CaseNumeric,
    CaseCategory { value: String },
    Temporal { back: usize, field: usize },
    ActiveCases,
    StartOffset,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    /// Attribute the column derives from (`activity` for the label).
    pub source: String,
    pub kind: FeatureKind,
}

impl FeatureSpec {
    fn describe(&self) -> String {
        match &self.kind {
            FeatureKind::Count { value } => format!("count:{value}"),
            FeatureKind::Aggregate { agg } => format!("aggregate:{}", agg.name()),
            FeatureKind::LastNumeric { back } => format!("last-state:{back}"),
            FeatureKind::LastCategory { back, value } => {
                format!("last-state-onehot:{back}:{value}")
            }
            FeatureKind::CaseNumeric => "case".to_string(),
            FeatureKind::CaseCategory { value } => format!("case-onehot:{value}"),
            FeatureKind::Temporal { back, field } => {
                format!("temporal:{back}:{}", TIME_FIELDS[*field])
            }
            FeatureKind::ActiveCases => "inter-case".to_string(),
            FeatureKind::StartOffset => "case-start-offset".to_string(),
        }
    }
}

/// Ordered feature list. The order is fixed when fitting and shared by the
/// batch and online encoders.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDictionary {
    pub features: Vec<FeatureSpec>,
}

impl FeatureDictionary {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Column indices grouped by source attribute, in first-seen order.
    pub fn groups(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, f) in self.features.iter().enumerate() {
            match out.iter_mut().find(|(s, _)| *s == f.source) {
                Some((_, cols)) => cols.push(i),
                None => out.push((f.source.clone(), vec![i])),
            }
        }
        out
    }

    /// Text form: one feature per line, `index<TAB>name<TAB>source<TAB>kind`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (i, f) in self.features.iter().enumerate() {
            s.push_str(&format!("{i}\t{}\t{}\t{}\n", f.name, f.source, f.describe()));
        }
        s
    }

    /// SHA-256 of the text form, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// A fitted encoder: configuration, attribute schema, dictionary and the
/// log origin used for the case-start offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub schema: Schema,
    pub dictionary: FeatureDictionary,
    pub origin: Timestamp,
}

fn cat_of<'a>(e: &'a Event, attr: &str) -> Option<&'a str> {
    if attr == ACTIVITY {
        Some(e.activity.as_str())
    } else {
        e.attributes.get(attr).and_then(Value::as_cat)
    }
}

/// Builds the dictionary from training prefixes. Category universes come
/// from these prefixes only; the treatment activity is always part of the
/// activity universe.
pub fn fit_encoder(
    prefixes: &[Prefix],
    schema: &Schema,
    cfg: &EncoderConfig,
    origin: Timestamp,
) -> Result<Encoder, FeatureError> {
    cfg.validate()?;
    if prefixes.is_empty() {
        return Err(FeatureError::NoPrefixes);
    }
    let event_attrs: Vec<_> = schema.event_attributes().collect();
    let mut features = Vec::new();

    for attr in &cfg.aggregation_attributes {
        if attr != ACTIVITY {
            match schema.get(attr) {
                Some(a) if a.level == AttrLevel::Event && a.kind == AttrKind::Categorical => {}
                Some(_) => {
                    return Err(FeatureError::Config(format!(
                        "count aggregation needs a categorical event attribute, `{attr}` is not"
                    )))
                }
                None => return Err(FeatureError::Config(format!("unknown attribute `{attr}`"))),
            }
        }
        let mut universe: BTreeSet<String> =
            prefixes.iter().flat_map(|p| p.events.iter().filter_map(|e| cat_of(e, attr).map(String::from))).collect();
        if attr == ACTIVITY {
            universe.insert(cfg.treatment_activity.clone());
        }
        let short = if attr == ACTIVITY { "act" } else { attr.as_str() };
        for value in universe {
            features.push(FeatureSpec {
                name: format!("{short}_count[{value}]"),
                source: attr.clone(),
                kind: FeatureKind::Count { value },
            });
        }
    }

    for a in event_attrs.iter().filter(|a| a.kind == AttrKind::Numeric) {
        if cfg.aggregation_attributes.contains(&a.name) {
            continue;
        }
        for agg in &cfg.numeric_aggregations {
            features.push(FeatureSpec {
                name: format!("{}_{}", a.name, agg.name()),
                source: a.name.clone(),
                kind: FeatureKind::Aggregate { agg: *agg },
            });
        }
    }

    let last_attrs: Vec<String> = match &cfg.last_state_attributes {
        Some(list) => list.clone(),
        None => event_attrs
            .iter()
            .filter(|a| !cfg.aggregation_attributes.contains(&a.name))
            .map(|a| a.name.clone())
            .collect(),
    };
    for back in 0..cfg.last_state_window {
        let tag = if back == 0 { "last".to_string() } else { format!("last-{back}") };
        for name in &last_attrs {
            let a = schema
                .get(name)
                .filter(|a| a.level == AttrLevel::Event)
                .ok_or_else(|| FeatureError::Config(format!("unknown event attribute `{name}`")))?;
            match a.kind {
                AttrKind::Numeric => features.push(FeatureSpec {
                    name: format!("{tag}[{name}]"),
                    source: name.clone(),
                    kind: FeatureKind::LastNumeric { back },
                }),
                AttrKind::Categorical => {
                    let universe: BTreeSet<&str> =
                        prefixes.iter().flat_map(|p| p.events.iter().filter_map(|e| cat_of(e, name))).collect();
                    for value in universe {
                        features.push(FeatureSpec {
                            name: format!("{tag}[{name}={value}]"),
                            source: name.clone(),
                            kind: FeatureKind::LastCategory { back, value: value.to_string() },
                        });
                    }
                }
            }
        }
    }

    for a in schema.case_attributes() {
        match a.kind {
            AttrKind::Numeric => features.push(FeatureSpec {
                name: format!("case[{}]", a.name),
                source: a.name.clone(),
                kind: FeatureKind::CaseNumeric,
            }),
            AttrKind::Categorical => {
                let universe: BTreeSet<&str> =
                    prefixes.iter().filter_map(|p| p.case_attributes.get(&a.name).and_then(Value::as_cat)).collect();
                for value in universe {
                    features.push(FeatureSpec {
                        name: format!("case[{}={value}]", a.name),
                        source: a.name.clone(),
                        kind: FeatureKind::CaseCategory { value: value.to_string() },
                    });
                }
            }
        }
    }

    for back in 0..cfg.last_state_window {
        let tag = if back == 0 { "last".to_string() } else { format!("last-{back}") };
        for (field, fname) in TIME_FIELDS.iter().enumerate() {
            features.push(FeatureSpec {
                name: format!("{tag}[@{fname}]"),
                source: format!("@{fname}"),
                kind: FeatureKind::Temporal { back, field },
            });
        }
    }
    features.push(FeatureSpec {
        name: "active_cases".into(),
        source: "@active_cases".into(),
        kind: FeatureKind::ActiveCases,
    });
    features.push(FeatureSpec {
        name: "case_start_offset_days".into(),
        source: "@case_start".into(),
        kind: FeatureKind::StartOffset,
    });

    if features.is_empty() {
        return Err(FeatureError::NoFeatures);
    }
    let mut seen = BTreeSet::new();
    for f in &features {
        if !seen.insert(f.name.as_str()) {
            return Err(FeatureError::Config(format!("duplicate feature name `{}`", f.name)));
        }
    }
    Ok(Encoder { config: cfg.clone(), schema: schema.clone(), dictionary: FeatureDictionary { features }, origin })
}

impl Encoder {
    /// Column indices of the confounder set W.
    pub fn w_columns(&self) -> Vec<usize> {
        let excl = &self.config.w_exclude;
        self.dictionary
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| !excl.contains(&f.name) && !excl.contains(&f.source))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn encode_prefix(&self, prefix: &Prefix, context: &ActiveCaseIndex) -> (Vec<f64>, usize) {
        self.encode_events(&prefix.events, &prefix.case_attributes, prefix.case_start, context)
    }

    /// Encodes the given events (a prefix of one case). Returns the feature
    /// vector and the number of one-hot blocks left all-zero because the
    /// observed category was not seen at fit time.
    pub fn encode_events(
        &self,
        events: &[Event],
        case_attributes: &BTreeMap<String, Value>,
        case_start: Timestamp,
        context: &ActiveCaseIndex,
    ) -> (Vec<f64>, usize) {
        let eng = engineer_events(events, case_start, context, self.origin);
        let from_end = |back: usize| -> Option<&Event> { events.len().checked_sub(back + 1).map(|i| &events[i]) };
        let mut row = Vec::with_capacity(self.dictionary.len());
        // (source, back) -> (block has a hit, observed value present)
        let mut blocks: BTreeMap<(&str, Option<usize>), (bool, bool)> = BTreeMap::new();
        let mut numeric_cache: BTreeMap<&str, Vec<f64>> = BTreeMap::new();

        for f in &self.dictionary.features {
            let src = f.source.as_str();
            let v = match &f.kind {
                FeatureKind::Count { value } => {
                    events.iter().filter(|e| cat_of(e, src) == Some(value.as_str())).count() as f64
                }
                FeatureKind::Aggregate { agg } => {
                    let vals = numeric_cache.entry(src).or_insert_with(|| {
                        events.iter().filter_map(|e| e.attributes.get(src).and_then(Value::as_num)).collect()
                    });
                    agg.apply(vals)
                }
                FeatureKind::LastNumeric { back } => {
                    from_end(*back).and_then(|e| e.attributes.get(src)).and_then(Value::as_num).unwrap_or(0.0)
                }
                FeatureKind::LastCategory { back, value } => {
                    let observed = from_end(*back).and_then(|e| cat_of(e, src));
                    let hit = observed == Some(value.as_str());
                    let b = blocks.entry((src, Some(*back))).or_insert((false, observed.is_some()));
                    b.0 |= hit;
                    hit as u8 as f64
                }
                FeatureKind::CaseNumeric => case_attributes.get(src).and_then(Value::as_num).unwrap_or(0.0),
                FeatureKind::CaseCategory { value } => {
                    let observed = case_attributes.get(src).and_then(Value::as_cat);
                    let hit = observed == Some(value.as_str());
                    let b = blocks.entry((src, None)).or_insert((false, observed.is_some()));
                    b.0 |= hit;
                    hit as u8 as f64
                }
                FeatureKind::Temporal { back, field } => {
                    events.len().checked_sub(back + 1).map(|i| eng.per_event[i][*field]).unwrap_or(0.0)
                }
                FeatureKind::ActiveCases => eng.active_cases,
                FeatureKind::StartOffset => eng.start_offset_days,
            };
            row.push(v);
        }
        let unseen = blocks.values().filter(|(hit, present)| *present && !*hit).count();
        (row, unseen)
    }
}
