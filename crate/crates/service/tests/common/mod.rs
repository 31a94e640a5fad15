#![allow(dead_code)]

use std::sync::Arc;

use prescribe_core::features::{build_dataset, EncodedDataset, EncoderConfig, Split};
use prescribe_core::orf::{fit_forest, FitOptions, OrfHyperparams};
use prescribe_core::policy::{evaluate, select_policy, CostModel, EvaluationReport, Policy, SelectedBy, Selection};
use prescribe_core::synth::{generate, SyntheticOutput, SyntheticSpec};
use prescribe_service::{Engine, EngineConfig, ModelSnapshot, Provenance};

pub struct Fixture {
    pub synth: SyntheticOutput,
    pub data: EncodedDataset,
    pub snapshot: Arc<ModelSnapshot>,
    pub report: EvaluationReport,
}

pub fn spec(n_cases: usize, effect: &str) -> String {
    format!(
        "n_cases = {n_cases}\nseed = 3\nfeature.x1 = uniform(0,1)\nfeature.w = normal(0,1)\n\
         feature.channel = categorical(web:0.6,phone:0.4)\neffect = {effect}\nbaseline = 30 + 3*w\n\
         propensity = 0.8*w\nnoise_y = 1\n"
    )
}

pub fn fixture(n_cases: usize, effect: &str) -> Fixture {
    let synth = generate(&SyntheticSpec::parse(&spec(n_cases, effect)).unwrap()).unwrap();
    let cfg = EncoderConfig::for_log("Treat", &synth.log);
    let (data, encoder, _) = build_dataset(&synth.log, &cfg, 1).unwrap();
    let hp = OrfHyperparams { n_trees: 24, min_leaf_size: 10, bootstrap_groups: 4, ..Default::default() };
    let model = fit_forest(&data, &hp, &FitOptions::default()).unwrap();
    let test = data.subset(Split::Test);
    let theta: Vec<Option<f64>> = model.estimate_many(&test.x).into_iter().map(|r| r.ok().map(|e| e.theta)).collect();
    let treated: Vec<bool> = test.t.iter().map(|t| *t > 0.5).collect();
    let report = evaluate(&test.case_ids, &theta, &treated, &test.y, &[0.3, 1.0, 3.0], 5.0, 0, 1).unwrap();
    let snapshot = Arc::new(ModelSnapshot::new(model, encoder).unwrap());
    Fixture { synth, data, snapshot, report }
}

impl Fixture {
    pub fn auto_policy(&self, cost: CostModel) -> Policy {
        let net = self.report.net_curve(&cost).unwrap();
        select_policy(&net, &self.report.curve, Selection::Auto, SelectedBy::Auto, &self.report.curve_hash()).unwrap()
    }

    pub fn engine(&self) -> Engine {
        Engine::new(Some(self.snapshot.clone()), EngineConfig::default())
    }

    pub fn engine_with_policy(&self, policy: Policy) -> Engine {
        let mut e = self.engine();
        e.commit_policy(policy, provenance("test")).unwrap();
        e
    }
}

pub fn provenance(author: &str) -> Provenance {
    Provenance { author: author.into(), reason: "fixture".into(), committed_at: None }
}

/// Policy that treats whenever the single-case gain is positive.
pub fn gain_policy(v: f64, c: f64) -> Policy {
    Policy {
        version: 0,
        kind: prescribe_core::policy::PolicyKind::EffectThreshold,
        top_fraction: 1.0,
        theta_threshold: Some(1e9),
        cost: CostModel::new(v, c).unwrap(),
        selected_by: SelectedBy::User,
        target_gain: None,
        expected_gain: 0.0,
        curve_hash: String::new(),
    }
}
