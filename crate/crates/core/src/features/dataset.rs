use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::context::ActiveCaseIndex;
use super::encoder::{fit_encoder, Encoder, FeatureDictionary};
use super::prefix::{decision_histogram, label_and_cut, temporal_split, KHistogram, Prefix};
use super::{EncoderConfig, FeatureError, Split};
use crate::event_log::EventLog;
use crate::matrix::Matrix;
use crate::time::Timestamp;

pub const MATRIX_FILE: &str = "matrix.csv";
pub const DICTIONARY_FILE: &str = "dictionary.txt";
pub const ENCODER_FILE: &str = "encoder.json";

const FIXED_COLUMNS: [&str; 5] = ["case_id", "k", "split", "T", "Y"];

/// Encoded prefixes, one row per case, sorted by case start time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedDataset {
    pub case_ids: Vec<String>,
    pub k: Vec<usize>,
    pub split: Vec<Split>,
    /// Treatment indicator, 0.0 or 1.0.
    pub t: Vec<f64>,
    /// Cycle time in days.
    pub y: Vec<f64>,
    pub x: Matrix,
    /// Columns of `x` forming the confounder set W.
    pub w_columns: Vec<usize>,
    pub dictionary: FeatureDictionary,
}

impl EncodedDataset {
    pub fn rows(&self) -> usize {
        self.case_ids.len()
    }

    pub fn w(&self) -> Matrix {
        self.x.select_cols(&self.w_columns)
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.split[i] == split).collect()
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, idx: &[usize]) -> EncodedDataset {
        EncodedDataset {
            case_ids: idx.iter().map(|&i| self.case_ids[i].clone()).collect(),
            k: idx.iter().map(|&i| self.k[i]).collect(),
            split: idx.iter().map(|&i| self.split[i]).collect(),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            x: self.x.select_rows(idx),
            w_columns: self.w_columns.clone(),
            dictionary: self.dictionary.clone(),
        }
    }

    pub fn subset(&self, split: Split) -> EncodedDataset {
        self.select(&self.indices(split))
    }

    /// Copy without the given feature columns; the dictionary shrinks to
    /// match.
    pub fn without_columns(&self, drop: &[usize]) -> EncodedDataset {
        let keep: Vec<usize> = (0..self.x.cols()).filter(|j| !drop.contains(j)).collect();
        let new_index = |j: usize| keep.iter().position(|&k| k == j);
        EncodedDataset {
            x: self.x.select_cols(&keep),
            w_columns: self.w_columns.iter().filter_map(|&j| new_index(j)).collect(),
            dictionary: FeatureDictionary {
                features: keep.iter().map(|&j| self.dictionary.features[j].clone()).collect(),
            },
            ..self.clone()
        }
    }

    /// Copy without every column derived from `source`.
    pub fn without_source(&self, source: &str) -> EncodedDataset {
        let drop: Vec<usize> =
            self.dictionary.features.iter().enumerate().filter(|(_, f)| f.source == source).map(|(i, _)| i).collect();
        self.without_columns(&drop)
    }

    /// Writes the matrix as CSV. Floats use the shortest representation that
    /// parses back to the same value.
    pub fn write_matrix<W: std::io::Write>(&self, out: W) -> Result<(), FeatureError> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(self.dictionary.names()).collect();
        w.write_record(&header)?;
        for i in 0..self.rows() {
            let mut rec = vec![
                self.case_ids[i].clone(),
                self.k[i].to_string(),
                self.split[i].as_str().to_string(),
                self.t[i].to_string(),
                self.y[i].to_string(),
            ];
            rec.extend(self.x.row(i).iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a matrix written by [`EncodedDataset::write_matrix`]. The header
    /// must list exactly the dictionary's feature names.
    pub fn read_matrix<R: std::io::Read>(input: R, encoder: &Encoder) -> Result<EncodedDataset, FeatureError> {
        let dictionary = encoder.dictionary.clone();
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers()?.clone();
        let expected: Vec<&str> = FIXED_COLUMNS.iter().copied().chain(dictionary.names()).collect();
        if header.iter().ne(expected.iter().copied()) {
            return Err(FeatureError::Format("matrix header does not match the feature dictionary".into()));
        }
        let p = dictionary.len();
        let (mut case_ids, mut ks, mut splits, mut t, mut y, mut rows) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| FeatureError::Format(format!("row {}: invalid {what}", line + 2));
            if rec.len() != FIXED_COLUMNS.len() + p {
                return Err(bad("width"));
            }
            let num = |j: usize| -> Result<f64, FeatureError> {
                rec[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| bad(&header[j]))
            };
            case_ids.push(rec[0].to_string());
            ks.push(rec[1].parse::<usize>().map_err(|_| bad("k"))?);
            splits.push(rec[2].parse::<Split>().map_err(|_| bad("split"))?);
            let ti = num(3)?;
            if ti != 0.0 && ti != 1.0 {
                return Err(bad("T"));
            }
            t.push(ti);
            y.push(num(4)?);
            let row = (0..p).map(|j| num(FIXED_COLUMNS.len() + j)).collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(EncodedDataset {
            case_ids,
            k: ks,
            split: splits,
            t,
            y,
            x: Matrix::from_rows(&rows, p),
            w_columns: encoder.w_columns(),
            dictionary,
        })
    }

    /// Persists the dataset and its encoder under `dir`.
    pub fn save(&self, dir: &Path, encoder: &Encoder) -> Result<(), FeatureError> {
        fs::create_dir_all(dir)?;
        self.write_matrix(fs::File::create(dir.join(MATRIX_FILE))?)?;
        fs::write(dir.join(DICTIONARY_FILE), encoder.dictionary.to_text())?;
        let json = serde_json::to_string_pretty(encoder).map_err(|e| FeatureError::Format(e.to_string()))?;
        fs::write(dir.join(ENCODER_FILE), json + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<(EncodedDataset, Encoder), FeatureError> {
        let encoder = load_encoder(dir)?;
        let file = fs::File::open(dir.join(MATRIX_FILE))?;
        let data = EncodedDataset::read_matrix(file, &encoder)?;
        Ok((data, encoder))
    }
}

pub fn load_encoder(dir: &Path) -> Result<Encoder, FeatureError> {
    let text = fs::read_to_string(dir.join(ENCODER_FILE))?;
    parse_encoder(&text)
}

pub fn parse_encoder(text: &str) -> Result<Encoder, FeatureError> {
    let encoder: Encoder = serde_json::from_str(text).map_err(|e| FeatureError::Format(e.to_string()))?;
    encoder.config.validate()?;
    Ok(encoder)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeaturizeReport {
    pub traces_in: usize,
    pub dropped_too_short: usize,
    pub dropped_treatment_at_start: usize,
    pub treated: usize,
    pub control: usize,
    pub features: usize,
    /// One-hot blocks encoded as all zeros because of unseen values.
    pub unseen_categories: usize,
    pub histogram: BTreeMap<usize, u64>,
}

impl FeaturizeReport {
    pub fn to_lines(&self) -> String {
        let mut s = format!(
            "traces_in={}\ndropped_too_short={}\ndropped_treatment_at_start={}\ntreated={}\ncontrol={}\nfeatures={}\nunseen_categories={}\n",
            self.traces_in,
            self.dropped_too_short,
            self.dropped_treatment_at_start,
            self.treated,
            self.control,
            self.features,
            self.unseen_categories
        );
        for (k, c) in &self.histogram {
            s.push_str(&format!("histogram[{k}]={c}\n"));
        }
        s
    }
}

/// Encodes prefixes with a fitted encoder. Rows come out sorted by case
/// start (ties by case id) with 60/20/20 split tags. Returns the dataset and
/// the number of unseen-category blocks.
pub fn encode(
    prefixes: &[Prefix],
    encoder: &Encoder,
    context: &ActiveCaseIndex,
) -> Result<(EncodedDataset, usize), FeatureError> {
    if prefixes.is_empty() {
        return Err(FeatureError::NoPrefixes);
    }
    let splits = temporal_split(prefixes.iter().map(|p| (p.case_id.as_str(), p.case_start)));
    let mut order: Vec<&Prefix> = prefixes.iter().collect();
    order.sort_by(|a, b| (a.case_start, &a.case_id).cmp(&(b.case_start, &b.case_id)));
    let p = encoder.dictionary.len();
    let encoded: Vec<(Vec<f64>, usize)> = order.par_iter().map(|pr| encoder.encode_prefix(pr, context)).collect();
    let mut rows = Vec::with_capacity(order.len());
    let mut unseen = 0;
    for (pr, (row, u)) in order.iter().zip(encoded) {
        if row.len() != p {
            return Err(FeatureError::DimensionMismatch { case: pr.case_id.clone(), got: row.len(), want: p });
        }
        unseen += u;
        rows.push(row);
    }
    let data = EncodedDataset {
        case_ids: order.iter().map(|p| p.case_id.clone()).collect(),
        k: order.iter().map(|p| p.k).collect(),
        split: order.iter().map(|p| splits[&p.case_id]).collect(),
        t: order.iter().map(|p| if p.treated { 1.0 } else { 0.0 }).collect(),
        y: order.iter().map(|p| p.outcome_days).collect(),
        x: Matrix::from_rows(&rows, p),
        w_columns: encoder.w_columns(),
        dictionary: encoder.dictionary.clone(),
    };
    Ok((data, unseen))
}

/// Split tag of every trace that featurization keeps, computed exactly as
/// [`build_dataset`] does.
pub fn case_splits(log: &EventLog, treatment_activity: &str) -> std::collections::HashMap<String, Split> {
    temporal_split(
        log.traces
            .iter()
            .filter(|t| t.len() >= 2 && t.first_position(treatment_activity) != Some(0))
            .map(|t| (t.case_id.as_str(), t.start())),
    )
}

/// Full featurization of a cleaned log: drop unusable traces, split by case
/// start, build the decision-point histogram on the training split, cut and
/// label every trace, fit the encoder on training prefixes and encode all.
pub fn build_dataset(
    log: &EventLog,
    cfg: &EncoderConfig,
    seed: u64,
) -> Result<(EncodedDataset, Encoder, FeaturizeReport), FeatureError> {
    cfg.validate()?;
    if !log.labels().contains(cfg.treatment_activity.as_str()) {
        return Err(FeatureError::UnknownTreatment(cfg.treatment_activity.clone()));
    }
    let mut report = FeaturizeReport { traces_in: log.traces.len(), ..Default::default() };
    let usable: Vec<_> = log
        .traces
        .iter()
        .filter(|t| {
            if t.len() < 2 {
                report.dropped_too_short += 1;
                false
            } else if t.first_position(&cfg.treatment_activity) == Some(0) {
                report.dropped_treatment_at_start += 1;
                false
            } else {
                true
            }
        })
        .collect();
    if usable.is_empty() {
        return Err(FeatureError::NoPrefixes);
    }
    let splits = temporal_split(usable.iter().map(|t| (t.case_id.as_str(), t.start())));
    let histogram: KHistogram = decision_histogram(
        usable.iter().copied().filter(|t| splits[&t.case_id] == Split::Train),
        &cfg.treatment_activity,
    );
    let prefixes = usable.par_iter().map(|t| label_and_cut(t, cfg, seed, &histogram)).collect::<Result<Vec<_>, _>>()?;
    let origin = log.origin().unwrap_or(Timestamp(0));
    let train: Vec<Prefix> = prefixes.iter().filter(|p| splits[&p.case_id] == Split::Train).cloned().collect();
    let encoder = fit_encoder(&train, &log.schema, cfg, origin)?;
    let context = ActiveCaseIndex::from_log(log);
    let (data, unseen) = encode(&prefixes, &encoder, &context)?;
    report.treated = prefixes.iter().filter(|p| p.treated).count();
    report.control = prefixes.len() - report.treated;
    report.features = encoder.dictionary.len();
    report.unseen_categories = unseen;
    report.histogram = histogram.counts().clone();
    Ok((data, encoder, report))
}
