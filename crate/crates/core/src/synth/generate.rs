use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution as _, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::spec::{Distribution, SyntheticSpec};
use super::SynthError;
use crate::event_log::{
    write_csv, AttrKind, AttrLevel, AttrSchema, ColumnMapping, Event, EventLog, Schema, Trace, Value,
};
use crate::policy::{group_size, CostModel};
use crate::seed;
use crate::time::{Timestamp, MILLIS_PER_DAY};

pub const PROPENSITY_BOUNDS: (f64, f64) = (0.02, 0.98);
const MAX_RESAMPLES: usize = 1000;
/// Minimum room between the decision point and the end of a case, in days.
const MIN_TAIL_DAYS: f64 = 0.01;

/// True quantities for one generated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub case_id: String,
    pub theta: f64,
    pub propensity: f64,
    pub y0: f64,
    pub y1: f64,
    pub t: bool,
    pub hidden: f64,
}

impl TruthRow {
    pub fn observed(&self) -> f64 {
        if self.t {
            self.y1
        } else {
            self.y0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOutput {
    pub log: EventLog,
    pub mapping: ColumnMapping,
    pub truth: Vec<TruthRow>,
    /// Noise draws rejected because a potential outcome was too short.
    pub resampled: usize,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn draw<R: Rng>(d: &Distribution, rng: &mut R) -> Result<Value, SynthError> {
    Ok(match d {
        Distribution::Uniform { lo, hi } => Value::Num(rng.random_range(*lo..*hi)),
        Distribution::Normal { mean, sd } => {
            Value::Num(Normal::new(*mean, *sd).map_err(|e| SynthError::Spec(e.to_string()))?.sample(rng))
        }
        Distribution::Laplace { loc, scale } => {
            let u: f64 = rng.random_range(-0.5..0.5);
            Value::Num(loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln())
        }
        Distribution::Categorical { values } => {
            let total: f64 = values.iter().map(|(_, p)| p).sum();
            let mut u = rng.random_range(0.0..total);
            let mut pick = &values[values.len() - 1].0;
            for (v, p) in values {
                if u < *p {
                    pick = v;
                    break;
                }
                u -= p;
            }
            Value::Cat(pick.clone())
        }
    })
}

fn to_millis(days: f64) -> i64 {
    (days * MILLIS_PER_DAY).round() as i64
}

fn from_millis(ms: i64) -> f64 {
    ms as f64 / MILLIS_PER_DAY
}

/// Mapping for logs written by [`generate`].
pub fn mapping_for(spec: &SyntheticSpec) -> ColumnMapping {
    let mut m = ColumnMapping::default();
    m.resource = Some("resource".into());
    m.case_attributes = spec.features.iter().map(|(n, _)| n.clone()).collect();
    m.numeric = spec
        .features
        .iter()
        .filter(|(_, d)| d.is_numeric())
        .map(|(n, _)| n.clone())
        .chain(["load".to_string()])
        .collect();
    m.categorical = spec.features.iter().filter(|(_, d)| !d.is_numeric()).map(|(n, _)| n.clone()).collect();
    m
}

/// Generates the log and its ground truth. Each case draws its features,
/// a treatment from the clipped propensity, and potential outcomes
/// `y0 = baseline + noise`, `y1 = y0 + theta`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticOutput, SynthError> {
    spec.validate()?;
    let mut rng = seed::stream_for(spec.seed, "synth");
    let arrivals = Exp::new(spec.arrivals_per_day).map_err(|e| SynthError::Spec(e.to_string()))?;
    let gaps = Exp::new(1.0 / spec.mean_gap_days).map_err(|e| SynthError::Spec(e.to_string()))?;
    let width = spec.n_cases.saturating_sub(1).to_string().len();

    let mut attributes: Vec<AttrSchema> = spec
        .features
        .iter()
        .map(|(n, d)| AttrSchema {
            name: n.clone(),
            kind: if d.is_numeric() { AttrKind::Numeric } else { AttrKind::Categorical },
            level: AttrLevel::Case,
        })
        .collect();
    attributes.push(AttrSchema { name: "resource".into(), kind: AttrKind::Categorical, level: AttrLevel::Event });
    attributes.push(AttrSchema { name: "load".into(), kind: AttrKind::Numeric, level: AttrLevel::Event });
    let schema = Schema { attributes, resource: Some("resource".into()) };

    let mut traces = Vec::with_capacity(spec.n_cases);
    let mut truth = Vec::with_capacity(spec.n_cases);
    let mut clock = 0.0f64;
    let mut resampled = 0;
    let mut seq = 0usize;
    for c in 0..spec.n_cases {
        let case_id = format!("case_{c:0width$}");
        clock += arrivals.sample(&mut rng);
        let start = Timestamp(spec.start_date.0 + to_millis(clock));

        let mut num = BTreeMap::new();
        let mut cat = BTreeMap::new();
        let mut case_attributes = BTreeMap::new();
        for (name, d) in &spec.features {
            let v = draw(d, &mut rng)?;
            match &v {
                Value::Num(x) => {
                    num.insert(name.clone(), *x);
                }
                Value::Cat(s) => {
                    cat.insert(name.clone(), s.clone());
                }
                Value::Missing => {}
            }
            case_attributes.insert(name.clone(), v);
        }
        let hidden: f64 = StandardNormal.sample(&mut rng);
        let theta = spec.effect.eval(&num, &cat);
        let mut logit = spec.propensity.eval(&num, &cat) + spec.hidden_strength_t * hidden;
        if spec.noise_t > 0.0 {
            logit += spec.noise_t * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            };
        }
        let propensity = sigmoid(logit).clamp(PROPENSITY_BOUNDS.0, PROPENSITY_BOUNDS.1);
        let treated = rng.random::<f64>() < propensity;

        // Events before the decision point; their timing is independent of
        // the outcome.
        let fillers = rng.random_range(0..=spec.max_fillers);
        let mut offsets = vec![0i64];
        let mut labels = vec![spec.start_activity.clone()];
        let mut at = 0.0;
        for _ in 0..fillers {
            at += gaps.sample(&mut rng);
            offsets.push(to_millis(at));
            labels.push(spec.activities[rng.random_range(0..spec.activities.len())].clone());
        }
        let decision = at + gaps.sample(&mut rng);

        let base = spec.baseline.eval(&num, &cat) + spec.hidden_strength_y * hidden;
        let mut tries = 0;
        let (y0_ms, y1_ms) = loop {
            let eps = spec.noise_y * {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            };
            let y0 = base + eps;
            let y1 = y0 + theta;
            if y0.min(y1) > decision + 2.0 * MIN_TAIL_DAYS {
                break (to_millis(y0), to_millis(y1));
            }
            tries += 1;
            resampled += 1;
            if tries >= MAX_RESAMPLES {
                return Err(SynthError::Spec(format!(
                    "case {case_id}: cannot draw positive durations (baseline {base:.3}, effect {theta:.3})"
                )));
            }
        };
        let y_ms = if treated { y1_ms } else { y0_ms };
        if treated {
            let d = to_millis(decision);
            offsets.push(d);
            labels.push(spec.treatment_activity.clone());
            let post = d + ((y_ms - d) as f64 * rng.random_range(0.2..0.8)).round() as i64;
            offsets.push(post);
            labels.push(spec.post_activity.clone());
        }
        offsets.push(y_ms);
        labels.push(spec.end_activity.clone());

        let events = offsets
            .iter()
            .zip(labels)
            .map(|(off, label)| {
                seq += 1;
                let mut e = Event::new(&case_id, label, Timestamp(start.0 + off))
                    .with_attr(
                        "resource",
                        Value::Cat(spec.resources[rng.random_range(0..spec.resources.len())].clone()),
                    )
                    .with_attr("load", Value::Num((rng.random::<f64>() * 1000.0).round() / 1000.0));
                e.seq = seq;
                e
            })
            .collect();
        let mut trace = Trace::new(&case_id, events);
        trace.case_attributes = case_attributes;
        traces.push(trace);
        truth.push(TruthRow {
            case_id,
            theta,
            propensity,
            y0: from_millis(y0_ms),
            y1: from_millis(y1_ms),
            t: treated,
            hidden,
        });
    }
    Ok(SyntheticOutput { log: EventLog::new(traces, schema), mapping: mapping_for(spec), truth, resampled })
}

pub const LOG_DIR: &str = "log";
pub const TRUTH_DIR: &str = "truth";
pub const LOG_FILE: &str = "events.csv";
pub const MAPPING_FILE: &str = "mapping.txt";
pub const TRUTH_FILE: &str = "ground_truth.csv";

/// Writes `<out>/log/{events.csv,mapping.txt}` and
/// `<out>/truth/ground_truth.csv`.
pub fn write_output(out: &SyntheticOutput, dir: &Path) -> Result<(), SynthError> {
    let log_dir = dir.join(LOG_DIR);
    let truth_dir = dir.join(TRUTH_DIR);
    std::fs::create_dir_all(&log_dir)?;
    std::fs::create_dir_all(&truth_dir)?;
    let mut buf = Vec::new();
    write_csv(&out.log, &out.mapping, &mut buf)?;
    std::fs::write(log_dir.join(LOG_FILE), buf)?;
    std::fs::write(log_dir.join(MAPPING_FILE), out.mapping.to_kv())?;
    write_truth(&out.truth, std::fs::File::create(truth_dir.join(TRUTH_FILE))?)?;
    Ok(())
}

pub fn write_truth<W: std::io::Write>(rows: &[TruthRow], out: W) -> Result<(), SynthError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "theta", "propensity", "y0", "y1", "t", "hidden"])?;
    for r in rows {
        w.write_record([
            r.case_id.clone(),
            r.theta.to_string(),
            r.propensity.to_string(),
            r.y0.to_string(),
            r.y1.to_string(),
            (r.t as u8).to_string(),
            r.hidden.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth<R: std::io::Read>(input: R) -> Result<Vec<TruthRow>, SynthError> {
    let mut r = csv::Reader::from_reader(input);
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || SynthError::Spec(format!("ground truth row {}: malformed", line + 2));
        if rec.len() != 7 {
            return Err(bad());
        }
        let f = |j: usize| rec[j].parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(bad);
        rows.push(TruthRow {
            case_id: rec[0].to_string(),
            theta: f(1)?,
            propensity: f(2)?,
            y0: f(3)?,
            y1: f(4)?,
            t: match &rec[5] {
                "1" => true,
                "0" => false,
                _ => return Err(bad()),
            },
            hidden: f(6)?,
        });
    }
    Ok(rows)
}

/// Gain of treating the top `n_percent` of cases ranked by true effect
/// (ascending, ties by case id), from the potential outcomes.
pub fn oracle_policy_gain(truth: &[TruthRow], cost: &CostModel, n_percent: f64) -> f64 {
    let mut idx: Vec<usize> = (0..truth.len()).collect();
    idx.sort_by(|&a, &b| {
        truth[a].theta.total_cmp(&truth[b].theta).then_with(|| truth[a].case_id.cmp(&truth[b].case_id))
    });
    let m = group_size(n_percent, truth.len());
    realized_gain(truth, idx[..m].iter().copied(), cost)
}

/// Gain of treating the given cases, from the potential outcomes.
pub fn realized_gain(truth: &[TruthRow], treated: impl IntoIterator<Item = usize>, cost: &CostModel) -> f64 {
    let mut benefit = 0.0;
    let mut count = 0usize;
    for i in treated {
        benefit += truth[i].y0 - truth[i].y1;
        count += 1;
    }
    cost.v * benefit - cost.c * count as f64
}

/// Best oracle gain over a percent grid; returns `(n_percent, gain)` with
/// ties going to the smallest n.
pub fn oracle_best(truth: &[TruthRow], cost: &CostModel, grid_step: f64) -> (f64, f64) {
    let grid = crate::policy::grid(grid_step).unwrap_or_else(|_| vec![0.0, 100.0]);
    let mut best = (0.0, 0.0);
    for n in grid {
        let g = oracle_policy_gain(truth, cost, n);
        if g > best.1 {
            best = (n, g);
        }
    }
    best
}
