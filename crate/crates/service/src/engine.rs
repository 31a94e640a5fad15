//! Case state machine and scoring.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use prescribe_core::event_log::{AttrLevel, Event, Value};
use prescribe_core::features::{ActiveCaseIndex, Encoder};
use prescribe_core::orf::{EffectEstimate, OrfError, OrfModel};
use prescribe_core::policy::Policy;
use prescribe_core::Timestamp;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::journal::{read_lines, truncate_torn, Incoming, JournalEntry, LineFile, AUDIT_FILE, JOURNAL_FILE};
use crate::ServiceError;

const FEED_CAPACITY: usize = 4096;

/// A trained model with the encoder whose dictionary it was fitted on.
#[derive(Debug)]
pub struct ModelSnapshot {
    pub model: OrfModel,
    pub encoder: Encoder,
}

impl ModelSnapshot {
    pub fn new(model: OrfModel, encoder: Encoder) -> Result<Self, ServiceError> {
        let found = encoder.dictionary.hash();
        if model.dictionary_hash != found {
            return Err(OrfError::DictionaryMismatch { expected: model.dictionary_hash.clone(), found }.into());
        }
        Ok(ModelSnapshot { model, encoder })
    }
}

/// Who committed a policy and why.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub author: String,
    #[serde(default)]
    pub reason: String,
    #[serde(default)]
    pub committed_at: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub version: u64,
    pub policy: Policy,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CaseStatus {
    AwaitingApplicability,
    RecommendedTreat,
    RecommendedSkip,
    Abstained,
    Closed,
}

impl std::str::FromStr for CaseStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown status `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Treat,
    Skip,
    Abstain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    /// Position in the audit log, starting at 1.
    pub seq: u64,
    pub case_id: String,
    /// Prefix length the estimate was computed on.
    pub k: usize,
    pub theta: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    /// `v·(−θ) − c` under the policy's cost model.
    pub expected_gain: Option<f64>,
    pub decision: Decision,
    pub reason: Option<String>,
    pub policy_version: u64,
    /// Timestamp of the last event in the prefix.
    pub timestamp: Timestamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseState {
    pub case_id: String,
    pub events: Vec<Event>,
    pub case_attributes: BTreeMap<String, Value>,
    pub status: CaseStatus,
    pub last_estimate: Option<EffectEstimate>,
    pub policy_version: Option<u64>,
    pub treatment_seen: bool,
    pub last_recommendation: Option<u64>,
}

impl CaseState {
    fn new(case_id: &str) -> Self {
        CaseState {
            case_id: case_id.to_string(),
            events: Vec::new(),
            case_attributes: BTreeMap::new(),
            status: CaseStatus::AwaitingApplicability,
            last_estimate: None,
            policy_version: None,
            treatment_seen: false,
            last_recommendation: None,
        }
    }

    pub fn k(&self) -> usize {
        self.events.len()
    }

    pub fn start(&self) -> Option<Timestamp> {
        self.events.first().map(|e| e.timestamp)
    }

    pub fn last_timestamp(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.timestamp)
    }

    pub fn is_closed(&self) -> bool {
        self.status == CaseStatus::Closed
    }
}

/// Compact view for listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub case_id: String,
    pub k: usize,
    pub status: CaseStatus,
    pub last_estimate: Option<EffectEstimate>,
    pub policy_version: Option<u64>,
    pub last_recommendation: Option<u64>,
}

/// Decides whether a case may be scored after its latest event.
pub trait Applicability: Send + Sync {
    fn applicable(&self, case: &CaseState) -> bool;
}

/// Applicable once the prefix has `min_prefix` events, and never after the
/// treatment activity has been observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DefaultApplicability {
    pub treatment_activity: String,
    pub min_prefix: usize,
}

impl Applicability for DefaultApplicability {
    fn applicable(&self, case: &CaseState) -> bool {
        case.events.len() >= self.min_prefix && !case.events.iter().any(|e| e.activity == self.treatment_activity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EngineConfig {
    pub min_prefix: usize,
    /// Activities that close a case when observed; such events are never
    /// scored.
    pub end_activities: Vec<String>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { min_prefix: 1, end_activities: Vec::new() }
    }
}

pub struct Engine {
    snapshot: Option<Arc<ModelSnapshot>>,
    applicability: Option<Arc<dyn Applicability>>,
    config: EngineConfig,
    policies: Vec<PolicyRecord>,
    cases: BTreeMap<String, CaseState>,
    context: ActiveCaseIndex,
    audit: Vec<Recommendation>,
    journal: Option<LineFile>,
    audit_file: Option<LineFile>,
    scoring_filter: Option<HashSet<String>>,
    feed: broadcast::Sender<Recommendation>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("cases", &self.cases.len())
            .field("recommendations", &self.audit.len())
            .field("policy_version", &self.policy_version())
            .finish()
    }
}

impl Engine {
    /// In-memory engine without a journal.
    pub fn new(snapshot: Option<Arc<ModelSnapshot>>, config: EngineConfig) -> Self {
        Engine {
            snapshot,
            applicability: None,
            config,
            policies: Vec::new(),
            cases: BTreeMap::new(),
            context: ActiveCaseIndex::default(),
            audit: Vec::new(),
            journal: None,
            audit_file: None,
            scoring_filter: None,
            feed: broadcast::channel(FEED_CAPACITY).0,
        }
    }

    /// Engine backed by `dir/journal.jsonl` and `dir/audit.jsonl`. An existing
    /// journal is replayed first; the rebuilt recommendations must match the
    /// audit file. `initial_policy` is committed only when the journal holds
    /// no policy.
    pub fn open(
        dir: &Path,
        snapshot: Option<Arc<ModelSnapshot>>,
        config: EngineConfig,
        initial_policy: Option<(Policy, Provenance)>,
    ) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        let jpath = dir.join(JOURNAL_FILE);
        let apath = dir.join(AUDIT_FILE);
        truncate_torn(&jpath)?;
        truncate_torn(&apath)?;
        let mut engine = Engine::new(snapshot, config);
        for entry in read_lines::<JournalEntry>(&jpath)? {
            engine.apply_entry(entry)?;
        }
        let persisted: Vec<Recommendation> = read_lines(&apath)?;
        if persisted.len() > engine.audit.len() || persisted[..] != engine.audit[..persisted.len()] {
            return Err(ServiceError::Journal(
                "audit log does not match the journal replay (was the model changed?)".into(),
            ));
        }
        let mut audit_file = LineFile::open(&apath)?;
        for r in &engine.audit[persisted.len()..] {
            audit_file.append(r)?;
        }
        engine.audit_file = Some(audit_file);
        engine.journal = Some(LineFile::open(&jpath)?);
        if engine.policies.is_empty() {
            if let Some((p, prov)) = initial_policy {
                engine.commit_policy(p, prov)?;
            }
        }
        tracing::info!(cases = engine.cases.len(), recommendations = engine.audit.len(), "engine restored");
        Ok(engine)
    }

    pub fn set_applicability(&mut self, a: Arc<dyn Applicability>) {
        self.applicability = Some(a);
    }

    /// Limits scoring to the given cases; other cases only contribute context.
    pub fn set_scoring_filter(&mut self, filter: Option<HashSet<String>>) {
        self.scoring_filter = filter;
    }

    pub fn set_model(&mut self, snapshot: Arc<ModelSnapshot>) {
        self.snapshot = Some(snapshot);
    }

    pub fn snapshot(&self) -> Option<&Arc<ModelSnapshot>> {
        self.snapshot.as_ref()
    }

    pub fn policy(&self) -> Option<&PolicyRecord> {
        self.policies.last()
    }

    pub fn policy_history(&self) -> &[PolicyRecord] {
        &self.policies
    }

    pub fn policy_version(&self) -> Option<u64> {
        self.policy().map(|p| p.version)
    }

    pub fn case(&self, case_id: &str) -> Option<&CaseState> {
        self.cases.get(case_id)
    }

    pub fn cases(&self, status: Option<CaseStatus>) -> Vec<CaseSummary> {
        self.cases
            .values()
            .filter(|c| status.is_none_or(|s| c.status == s))
            .map(|c| CaseSummary {
                case_id: c.case_id.clone(),
                k: c.k(),
                status: c.status,
                last_estimate: c.last_estimate,
                policy_version: c.policy_version,
                last_recommendation: c.last_recommendation,
            })
            .collect()
    }

    pub fn case_count(&self) -> usize {
        self.cases.len()
    }

    pub fn audit(&self) -> &[Recommendation] {
        &self.audit
    }

    /// Recommendations after `seq` plus a receiver for later ones. Taken
    /// under the same borrow, so nothing falls between the two.
    pub fn subscribe(&self, after: u64) -> (Vec<Recommendation>, broadcast::Receiver<Recommendation>) {
        let rx = self.feed.subscribe();
        (self.audit.iter().filter(|r| r.seq > after).cloned().collect(), rx)
    }

    /// Commits a policy as the next version.
    pub fn commit_policy(&mut self, mut policy: Policy, provenance: Provenance) -> Result<PolicyRecord, ServiceError> {
        policy.validate().map_err(|e| ServiceError::InvalidPolicy(e.to_string()))?;
        let version = self.policies.len() as u64 + 1;
        policy.version = version;
        let record = PolicyRecord { version, policy, provenance };
        self.write_journal(&JournalEntry::Policy { record: record.clone() })?;
        self.policies.push(record.clone());
        tracing::info!(version, "policy committed");
        Ok(record)
    }

    /// Buffers one event and re-evaluates its case.
    pub fn ingest(&mut self, incoming: Incoming) -> Result<&CaseState, ServiceError> {
        let id = incoming.event.case_id.clone();
        self.ingest_batch(vec![incoming])?;
        Ok(&self.cases[&id])
    }

    /// Buffers events that share an instant, then re-evaluates every touched
    /// case, so all of them see the same active-case context. Returns the
    /// touched case ids in first-seen order.
    pub fn ingest_batch(&mut self, batch: Vec<Incoming>) -> Result<Vec<String>, ServiceError> {
        if self.snapshot.is_none() {
            return Err(ServiceError::UnknownModel);
        }
        self.validate_batch(&batch)?;
        let entry = JournalEntry::Events { events: batch };
        self.write_journal(&entry)?;
        let JournalEntry::Events { events } = entry else { unreachable!() };
        self.apply_events(events)
    }

    /// Closes a case. `at` defaults to its last event.
    pub fn close(&mut self, case_id: &str, at: Option<Timestamp>) -> Result<(), ServiceError> {
        let case = self.cases.get(case_id).ok_or_else(|| ServiceError::UnknownCase(case_id.to_string()))?;
        if case.is_closed() {
            return Err(ServiceError::CaseClosed(case_id.to_string()));
        }
        self.write_journal(&JournalEntry::Close { case_id: case_id.to_string(), at })?;
        self.apply_close(case_id, at);
        Ok(())
    }

    /// Latest recommendation for a case.
    pub fn recommendation(&self, case_id: &str) -> Result<&Recommendation, ServiceError> {
        let case = self.cases.get(case_id).ok_or_else(|| ServiceError::UnknownCase(case_id.to_string()))?;
        if let Some(seq) = case.last_recommendation {
            return Ok(&self.audit[seq as usize - 1]);
        }
        if self.policies.is_empty() {
            return Err(ServiceError::PolicyMissing);
        }
        if !case.is_closed() && !self.applicability().applicable(case) {
            return Err(ServiceError::NotApplicable(case_id.to_string()));
        }
        Err(ServiceError::NoRecommendation(case_id.to_string()))
    }

    /// Feature vector of the case's current prefix.
    pub fn encode_case(&self, case_id: &str) -> Result<Vec<f64>, ServiceError> {
        let snap = self.snapshot.as_ref().ok_or(ServiceError::UnknownModel)?;
        let case = self.cases.get(case_id).ok_or_else(|| ServiceError::UnknownCase(case_id.to_string()))?;
        Ok(self.encode(snap, case))
    }

    /// Effect estimate for the case's current prefix, without recording it.
    pub fn estimate_case(&self, case_id: &str) -> Result<EffectEstimate, ServiceError> {
        let snap = self.snapshot.as_ref().ok_or(ServiceError::UnknownModel)?;
        Ok(snap.model.estimate_effect(&self.encode_case(case_id)?)?)
    }

    fn encode(&self, snap: &ModelSnapshot, case: &CaseState) -> Vec<f64> {
        let start = case.start().unwrap_or(Timestamp(0));
        snap.encoder.encode_events(&case.events, &case.case_attributes, start, &self.context).0
    }

    fn applicability(&self) -> Arc<dyn Applicability> {
        if let Some(a) = &self.applicability {
            return a.clone();
        }
        let treatment = self.snapshot.as_ref().map(|s| s.encoder.config.treatment_activity.clone()).unwrap_or_default();
        Arc::new(DefaultApplicability { treatment_activity: treatment, min_prefix: self.config.min_prefix })
    }

    fn write_journal(&mut self, entry: &JournalEntry) -> Result<(), ServiceError> {
        match &mut self.journal {
            Some(j) => j.append(entry),
            None => Ok(()),
        }
    }

    fn validate_batch(&self, batch: &[Incoming]) -> Result<(), ServiceError> {
        let mut last: BTreeMap<&str, (Timestamp, bool)> = BTreeMap::new();
        for inc in batch {
            let e = &inc.event;
            if e.case_id.is_empty() || e.activity.is_empty() {
                return Err(ServiceError::InvalidEvent("case_id and activity must be non-empty".into()));
            }
            let prev = last
                .get(e.case_id.as_str())
                .copied()
                .or_else(|| self.cases.get(&e.case_id).and_then(|c| c.last_timestamp().map(|t| (t, c.is_closed()))));
            if let Some((t, closed)) = prev {
                if closed {
                    return Err(ServiceError::CaseClosed(e.case_id.clone()));
                }
                if e.timestamp < t {
                    return Err(ServiceError::OutOfOrderEvent {
                        case_id: e.case_id.clone(),
                        last: t,
                        got: e.timestamp,
                    });
                }
            }
            let closes = inc.close || self.config.end_activities.contains(&e.activity);
            last.insert(&e.case_id, (e.timestamp, closes));
        }
        Ok(())
    }

    fn apply_entry(&mut self, entry: JournalEntry) -> Result<(), ServiceError> {
        match entry {
            JournalEntry::Events { events } => {
                self.validate_batch(&events)?;
                self.apply_events(events)?;
            }
            JournalEntry::Close { case_id, at } => self.apply_close(&case_id, at),
            JournalEntry::Policy { record } => self.policies.push(record),
        }
        Ok(())
    }

    fn apply_events(&mut self, events: Vec<Incoming>) -> Result<Vec<String>, ServiceError> {
        let snap = self.snapshot.clone().ok_or(ServiceError::UnknownModel)?;
        let mut touched: Vec<String> = Vec::new();
        for Incoming { event, close } in events {
            let id = event.case_id.clone();
            let ts = event.timestamp;
            let closes = close || self.config.end_activities.contains(&event.activity);
            let is_treatment = event.activity == snap.encoder.config.treatment_activity;
            if !self.cases.contains_key(&id) {
                self.context.add_start(ts);
                self.cases.insert(id.clone(), CaseState::new(&id));
            }
            let case = self.cases.get_mut(&id).expect("case exists");
            let mut event = event;
            let attrs = std::mem::take(&mut event.attributes);
            for (name, v) in attrs {
                let is_case_level = snap.encoder.schema.get(&name).is_some_and(|a| a.level == AttrLevel::Case);
                if is_case_level {
                    let slot = case.case_attributes.entry(name).or_insert(Value::Missing);
                    if slot.is_missing() {
                        *slot = v;
                    }
                } else {
                    event.attributes.insert(name, v);
                }
            }
            case.events.push(event);
            case.treatment_seen |= is_treatment;
            if closes {
                self.apply_close(&id, Some(ts));
                touched.retain(|t| *t != id);
            } else if !touched.contains(&id) {
                touched.push(id);
            }
        }
        // Case attributes missing from every event so far stay missing, as in
        // batch parsing.
        for id in &touched {
            let case = self.cases.get_mut(id).expect("case exists");
            for a in snap.encoder.schema.case_attributes() {
                case.case_attributes.entry(a.name.clone()).or_insert(Value::Missing);
            }
        }
        for id in &touched {
            self.evaluate(&snap, id)?;
        }
        Ok(touched)
    }

    fn apply_close(&mut self, case_id: &str, at: Option<Timestamp>) {
        if let Some(case) = self.cases.get_mut(case_id) {
            if case.is_closed() {
                return;
            }
            let end = at.or(case.last_timestamp()).unwrap_or(Timestamp(0));
            self.context.add_end(end);
            case.status = CaseStatus::Closed;
        }
    }

    /// Scores the case if it is applicable, has not been told to treat yet,
    /// and a policy exists.
    fn evaluate(&mut self, snap: &Arc<ModelSnapshot>, case_id: &str) -> Result<(), ServiceError> {
        if self.scoring_filter.as_ref().is_some_and(|f| !f.contains(case_id)) {
            return Ok(());
        }
        let Some(policy) = self.policies.last().cloned() else { return Ok(()) };
        let case = &self.cases[case_id];
        if case.is_closed() || case.status == CaseStatus::RecommendedTreat || !self.applicability().applicable(case) {
            return Ok(());
        }
        let row = self.encode(snap, case);
        let seq = self.audit.len() as u64 + 1;
        let mut rec = Recommendation {
            seq,
            case_id: case_id.to_string(),
            k: case.k(),
            theta: None,
            ci_low: None,
            ci_high: None,
            expected_gain: None,
            decision: Decision::Abstain,
            reason: None,
            policy_version: policy.version,
            timestamp: case.last_timestamp().unwrap_or(Timestamp(0)),
        };
        let estimate = match snap.model.estimate_effect(&row) {
            Ok(e) => Some(e),
            Err(OrfError::DegenerateKernel) => {
                rec.reason = Some("degenerate kernel: neighbourhood has no treatment variation".into());
                None
            }
            Err(e) => return Err(e.into()),
        };
        let status = match estimate {
            Some(e) => {
                rec.theta = Some(e.theta);
                rec.ci_low = Some(e.ci_low);
                rec.ci_high = Some(e.ci_high);
                rec.expected_gain = Some(policy.policy.cost.case_gain(e.theta));
                if policy.policy.decide(e.theta) {
                    rec.decision = Decision::Treat;
                    CaseStatus::RecommendedTreat
                } else {
                    rec.decision = Decision::Skip;
                    CaseStatus::RecommendedSkip
                }
            }
            None => CaseStatus::Abstained,
        };
        if let Some(f) = &mut self.audit_file {
            f.append(&rec)?;
        }
        let case = self.cases.get_mut(case_id).expect("case exists");
        case.status = status;
        case.last_estimate = estimate;
        case.policy_version = Some(policy.version);
        case.last_recommendation = Some(seq);
        self.audit.push(rec.clone());
        let _ = self.feed.send(rec);
        Ok(())
    }
}
