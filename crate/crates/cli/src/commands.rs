use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use prescribe_core::event_log::{clean, log_statistics, parse_csv, write_csv, ColumnMapping, EventLog};
use prescribe_core::features::{
    build_dataset, parse_encoder, EncodedDataset, EncoderConfig, Polarity, Split, ENCODER_FILE,
};
use prescribe_core::orf::{fit_forest, FitOptions, OrfHyperparams, OrfModel};
use prescribe_core::policy::{evaluate, select_policy, CostModel, EvaluationReport, Policy, SelectedBy, Selection};
use prescribe_core::sensitivity::{analyze, SensitivityReport, TargetBias};
use prescribe_core::synth::{generate, read_truth, write_output, SyntheticSpec, TRUTH_DIR, TRUTH_FILE};
use prescribe_service::http::{router, AppState};
use prescribe_service::replay::{compare_with_truth, replay_shared, GainComparison, ReplayOptions, ReplaySummary};
use prescribe_service::{Engine, EngineConfig, ModelSnapshot, PolicyRecord, Provenance};
use serde_json::json;

use crate::args::*;
use crate::config::cleaning_rules;
use crate::CliError;

pub const MAPPING_FILE: &str = "mapping.txt";
pub const FEATURIZE_REPORT: &str = "featurize_report.txt";
pub const POLICY_FILE: &str = "policy.json";

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn make_parent(path: &Path) -> Result<(), CliError> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(|source| CliError::Io { path: dir.to_path_buf(), source }),
        None => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    make_parent(path)?;
    fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<fs::File, CliError> {
    make_parent(path)?;
    fs::File::create(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

/// Encoder file saved next to a model: `model.orf` -> `model.encoder.json`.
pub fn encoder_path(model: &Path) -> PathBuf {
    model.with_extension("encoder.json")
}

/// Mapping given explicitly, else `mapping.txt` beside the log, else the
/// default column names.
pub fn resolve_mapping(log: &Path, explicit: Option<&Path>) -> Result<ColumnMapping, CliError> {
    let side = log.parent().map(|d| d.join(MAPPING_FILE));
    match explicit.map(Path::to_path_buf).or(side.filter(|p| p.exists())) {
        Some(p) => Ok(ColumnMapping::from_kv(&read(&p)?)?),
        None => Ok(ColumnMapping::default()),
    }
}

pub fn load_log(path: &Path, mapping: &ColumnMapping) -> Result<EventLog, CliError> {
    let parsed = parse_csv(path, mapping)?;
    for d in &parsed.defects {
        tracing::warn!("{}: {d}", path.display());
    }
    Ok(parsed.log)
}

pub fn run_clean(a: &CleanArgs) -> Result<serde_json::Value, CliError> {
    let text = read(&a.map)?;
    let mapping = ColumnMapping::from_kv(&text)?;
    let rules = cleaning_rules(&text).map_err(|e| CliError::Usage(format!("{}: {e}", a.map.display())))?;
    let parsed = parse_csv(&a.input, &mapping)?;
    let (log, report) = clean(&parsed.log, &rules)?;
    let stats = log_statistics(&log)?;

    write_csv(&log, &mapping, BufWriter::new(create(&a.out)?))?;
    let side = a.out.parent().unwrap_or(Path::new(".")).join(MAPPING_FILE);
    if !side.exists() {
        write(&side, &mapping.to_kv())?;
    }

    let mut lines = String::new();
    for d in &parsed.defects {
        lines.push_str(&format!("defect\t{d}\n"));
    }
    for w in &parsed.warnings {
        lines.push_str(&format!("warning\t{w}\n"));
    }
    lines.push_str(&report.to_lines());
    lines.push_str(&format!(
        "traces\t{}\nevents\t{}\nlabels\t{}\nmean_trace_length\t{}\nmean_duration_days\t{}\n",
        stats.traces, stats.events, stats.labels, stats.mean_trace_length, stats.mean_duration_days
    ));
    write(&a.report, &lines)?;
    Ok(json!({ "defects": parsed.defects.len(), "cleaning": report, "statistics": stats }))
}

pub fn run_featurize(a: &FeaturizeArgs) -> Result<serde_json::Value, CliError> {
    let mapping = resolve_mapping(&a.input, a.map.as_deref())?;
    let log = load_log(&a.input, &mapping)?;
    let mut cfg = EncoderConfig::for_log(&a.treatment, &log);
    cfg.polarity = a.polarity.parse::<Polarity>().map_err(CliError::Usage)?;
    cfg.last_state_window = a.last_state_window;
    cfg.w_exclude = a.w_exclude.clone();
    let (data, encoder, report) = build_dataset(&log, &cfg, a.seed)?;
    data.save(&a.out, &encoder)?;
    write(&a.out.join(FEATURIZE_REPORT), &report.to_lines())?;
    Ok(json!({
        "rows": data.rows(),
        "features": data.dictionary.len(),
        "train": data.indices(Split::Train).len(),
        "validation": data.indices(Split::Validation).len(),
        "test": data.indices(Split::Test).len(),
        "report": report,
    }))
}

pub fn run_train(a: &TrainArgs) -> Result<serde_json::Value, CliError> {
    let (data, _) = EncodedDataset::load(&a.data)?;
    let hp = OrfHyperparams {
        n_trees: a.trees,
        min_leaf_size: a.min_leaf,
        max_depth: a.max_depth,
        subsample_ratio: a.subsample,
        lambda_reg: a.lambda,
        honest: true,
        bootstrap_groups: a.bags,
        seed: a.seed,
    };
    let opts = FitOptions { override_positivity: a.override_positivity, ..Default::default() };
    let model = fit_forest(&data, &hp, &opts)?;
    model.save(&a.out)?;
    let enc = encoder_path(&a.out);
    fs::copy(a.data.join(ENCODER_FILE), &enc).map_err(|source| CliError::Io { path: enc.clone(), source })?;
    Ok(json!({
        "trees": model.trees.len(),
        "train_rows": model.train_x.rows(),
        "positivity": model.positivity,
        "dictionary_hash": model.dictionary_hash,
    }))
}

fn load_model_for(model: &Path, data: &EncodedDataset) -> Result<OrfModel, CliError> {
    Ok(OrfModel::load(model, Some(&data.dictionary.hash()))?)
}

/// Estimates on one split of a dataset; abstentions are `None`.
pub fn split_estimates(model: &OrfModel, data: &EncodedDataset, split: Split) -> (EncodedDataset, Vec<Option<f64>>) {
    let part = data.subset(split);
    let theta = model.estimate_many(&part.x).into_iter().map(|r| r.ok().map(|e| e.theta)).collect();
    (part, theta)
}

pub fn run_evaluate(a: &EvaluateArgs) -> Result<EvaluationReport, CliError> {
    let (data, _) = EncodedDataset::load(&a.data)?;
    let model = load_model_for(&a.model, &data)?;
    let (test, theta) = split_estimates(&model, &data, Split::Test);
    let treated: Vec<bool> = test.t.iter().map(|t| *t > 0.5).collect();
    let report = evaluate(&test.case_ids, &theta, &treated, &test.y, &a.vc, a.grid_step, a.permutations, a.seed)?;
    report.save(&a.out)?;
    Ok(report)
}

pub fn run_policy(a: &PolicyArgs) -> Result<PolicyRecord, CliError> {
    let report = EvaluationReport::load(&a.report)?;
    let cost = CostModel::new(a.v, a.c)?;
    let net = report.net_curve(&cost)?;
    let (selection, by) = match a.target_gain {
        Some(g) => (Selection::TargetGain(g), SelectedBy::User),
        None => (Selection::Auto, SelectedBy::Auto),
    };
    let mut policy = select_policy(&net, &report.curve, selection, by, &report.curve_hash())?;
    policy.version = 1;
    let record = PolicyRecord {
        version: 1,
        policy,
        provenance: Provenance { author: a.author.clone(), reason: a.reason.clone(), committed_at: None },
    };
    let out = a.out.clone().unwrap_or_else(|| a.report.join(POLICY_FILE));
    write(&out, &(serde_json::to_string_pretty(&record).expect("policy record serializes") + "\n"))?;
    Ok(record)
}

/// Reads a policy file: a full record as written by `prescribe policy`, or
/// a bare policy.
pub fn load_policy(path: &Path) -> Result<(Policy, Provenance), CliError> {
    let text = read(path)?;
    if let Ok(r) = serde_json::from_str::<PolicyRecord>(&text) {
        r.policy.validate()?;
        return Ok((r.policy, r.provenance));
    }
    let p = Policy::from_json(&text)?;
    Ok((p, Provenance { author: "file".into(), reason: path.display().to_string(), committed_at: None }))
}

pub fn run_sensitivity(a: &SensitivityArgs) -> Result<SensitivityReport, CliError> {
    let target = match a.bias.as_str() {
        "auto" => TargetBias::Auto,
        v => TargetBias::Days(v.parse().map_err(|_| CliError::Usage(format!("--bias: `{v}` is not a number")))?),
    };
    let (data, _) = EncodedDataset::load(&a.data)?;
    let model = load_model_for(&a.model, &data)?;
    let report = analyze(&data, &model, target)?;
    report.save(&a.out)?;
    Ok(report)
}

pub fn run_synth(a: &SynthArgs) -> Result<serde_json::Value, CliError> {
    let spec = SyntheticSpec::parse(&read(&a.spec)?)?;
    let out = generate(&spec)?;
    write_output(&out, &a.out)?;
    Ok(json!({
        "cases": out.log.traces.len(),
        "events": out.log.event_count(),
        "treated": out.truth.iter().filter(|r| r.t).count(),
        "resampled": out.resampled,
    }))
}

/// Engine, shared state for the HTTP API, and the loaded snapshot.
pub fn build_state(a: &EngineArgs) -> Result<AppState, CliError> {
    let enc_path = a.encoder.clone().unwrap_or_else(|| encoder_path(&a.model));
    let encoder = parse_encoder(&read(&enc_path)?)?;
    let model = OrfModel::load(&a.model, Some(&encoder.dictionary.hash()))?;
    let snapshot = Arc::new(ModelSnapshot::new(model, encoder)?);
    let config = EngineConfig { min_prefix: a.min_prefix, end_activities: a.end_activities.clone() };
    let policy = a.policy.as_deref().map(load_policy).transpose()?;
    let engine = match &a.state_dir {
        Some(dir) => Engine::open(dir, Some(snapshot), config, policy)?,
        None => {
            let mut e = Engine::new(Some(snapshot), config);
            if let Some((p, prov)) = policy {
                e.commit_policy(p, prov)?;
            }
            e
        }
    };
    let curves = a.curves.as_deref().map(EvaluationReport::load).transpose()?;
    Ok(AppState { engine: Arc::new(Mutex::new(engine)), curves: Arc::new(RwLock::new(curves)) })
}

fn runtime() -> Result<tokio::runtime::Runtime, CliError> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|source| CliError::Io { path: PathBuf::from("<runtime>"), source })
}

async fn listen(host: &str, port: u16, state: AppState) -> Result<(), CliError> {
    let addr = format!("{host}:{port}");
    let listener = tokio::net::TcpListener::bind(&addr)
        .await
        .map_err(|source| CliError::Io { path: addr.clone().into(), source })?;
    tracing::info!("listening on {addr}");
    eprintln!("listening on http://{addr}");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|source| CliError::Io { path: addr.into(), source })
}

pub fn run_serve(a: &ServeArgs) -> Result<(), CliError> {
    let state = build_state(&a.engine)?;
    runtime()?.block_on(listen(&a.host, a.port, state))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ReplayOutcome {
    pub summary: ReplaySummary,
    pub scored_cases: usize,
    pub gain: Option<GainComparison>,
}

/// Cases a replay scores: the test split unless `all` is set.
pub fn scored_cases(log: &EventLog, treatment: &str, all: bool) -> HashSet<String> {
    if all {
        return log.traces.iter().map(|t| t.case_id.clone()).collect();
    }
    prescribe_core::features::case_splits(log, treatment)
        .into_iter()
        .filter(|(_, s)| *s == Split::Test)
        .map(|(c, _)| c)
        .collect()
}

fn truth_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        let nested = path.join(TRUTH_DIR).join(TRUTH_FILE);
        if nested.exists() {
            return nested;
        }
        return path.join(TRUTH_FILE);
    }
    path.to_path_buf()
}

pub fn replay_with_state(a: &ReplayArgs, state: &AppState) -> Result<ReplayOutcome, CliError> {
    let mapping = resolve_mapping(&a.log, a.map.as_deref())?;
    let log = load_log(&a.log, &mapping)?;
    let (treatment, cost) = {
        let e = state.engine.lock();
        let snap = e.snapshot().expect("state has a model");
        let policy = e.policy().ok_or(prescribe_service::ServiceError::PolicyMissing)?;
        (snap.encoder.config.treatment_activity.clone(), policy.policy.cost)
    };
    let score = scored_cases(&log, &treatment, a.all_cases);
    let opts = ReplayOptions { speed: a.speed, score: Some(score.clone()), close_on_last: true };

    let mut sink = match &a.transitions {
        Some(p) => Some(BufWriter::new(create(p)?)),
        None => None,
    };
    let mut io_err = None;
    let summary = replay_shared(&state.engine, &log, &opts, |_, steps| {
        if let Some(w) = sink.as_mut() {
            for s in steps {
                let line = serde_json::to_string(s).expect("transition serializes");
                if let Err(e) = writeln!(w, "{line}") {
                    io_err.get_or_insert(e);
                }
            }
        }
    })?;
    if let Some(mut w) = sink {
        if let Err(e) = w.flush() {
            io_err.get_or_insert(e);
        }
    }
    if let (Some(source), Some(p)) = (io_err, &a.transitions) {
        return Err(CliError::Io { path: p.clone(), source });
    }

    let gain = match &a.truth {
        Some(p) => {
            let path = truth_file(p);
            let file = fs::File::open(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            let truth = read_truth(file)?;
            Some(compare_with_truth(&state.engine.lock(), &truth, &score, &cost))
        }
        None => None,
    };
    Ok(ReplayOutcome { summary, scored_cases: score.len(), gain })
}

pub fn run_replay(a: &ReplayArgs) -> Result<ReplayOutcome, CliError> {
    let state = build_state(&a.engine)?;
    let Some(port) = a.port else {
        return replay_with_state(a, &state);
    };
    let rt = runtime()?;
    let server = {
        let (host, st) = (a.host.clone(), state.clone());
        rt.spawn(async move { listen(&host, port, st).await })
    };
    let outcome = replay_with_state(a, &state)?;
    println!("{}", serde_json::to_string_pretty(&outcome).expect("outcome serializes"));
    eprintln!("replay finished; still serving, Ctrl-C to stop");
    rt.block_on(server).map_err(|e| CliError::Usage(format!("server task failed: {e}")))??;
    Ok(outcome)
}
