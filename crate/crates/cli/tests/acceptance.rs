//! Acceptance criteria for the primary pipeline.
//!
//! Runs as a plain binary (`harness = false`) so each criterion prints one
//! line: `criterion N  PASS|FAIL|SKIP  <name>: <detail>`. The process exits
//! nonzero when any criterion fails.
//!
//! Criterion 10 needs the BPI 2017 log as CSV: set `PRESCRIBE_BPI17` to its
//! path and, optionally, `PRESCRIBE_BPI17_MAP` to a column mapping.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Parser;
use prescribe_cli::args::{Cli, Command};
use prescribe_cli::commands::{self, ReplayOutcome};
use prescribe_core::event_log::log_statistics;
use prescribe_core::features::{EncodedDataset, Split};
use prescribe_core::orf::{fit_forest, fit_lasso, logistic_gradient, logistic_objective, FitOptions, OrfModel};
use prescribe_core::policy::{qini_curve, CostModel, QiniInput};
use prescribe_core::sensitivity::{analyze, group_influence, TargetBias};
use prescribe_core::synth::{oracle_best, read_truth, TruthRow};
use prescribe_core::Matrix;
use prescribe_service::replay::{replay_shared, ReplayOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TREATMENT: &str = "Treat";

/// Effect recovery DGP: 8334 cases give 5000 training rows under the
/// 60/20/20 split.
const RECOVERY_SPEC: &str = "n_cases = 8334
seed = 11
feature.x1 = uniform(0, 1)
feature.w = normal(0, 1)
feature.channel = categorical(web:0.6, phone:0.4)
effect = -5 - 10*x1
baseline = 30 + 4*w + 2*is(channel,phone)
propensity = 1.2*w
noise_y = 2
";

/// Effect crosses the break-even point of every tested `v/c`, so the best
/// policy treats only part of the cases.
const POLICY_SPEC: &str = "n_cases = 8334
seed = 12
feature.x1 = uniform(0, 1)
feature.w = normal(0, 1)
effect = 2 - 10*x1
baseline = 30 + 4*w
propensity = 1.2*w
noise_y = 2
";

/// `u` drives both treatment and outcome; `n1..n3` are pure noise.
const CONFOUNDER_SPEC: &str = "n_cases = 6000
seed = 21
feature.x1 = uniform(0, 1)
feature.u = normal(0, 1)
feature.n1 = normal(0, 1)
feature.n2 = uniform(0, 1)
feature.n3 = categorical(a:0.5, b:0.5)
effect = -5 - 10*x1
baseline = 40 + 5*u
propensity = 1.5*u
noise_y = 2
";

const DETERMINISM_SPEC: &str = "n_cases = 3000
seed = 5
feature.x1 = uniform(0, 1)
feature.w = normal(0, 1)
feature.channel = categorical(web:0.5, phone:0.5)
effect = -3 - 6*x1
baseline = 20 + 3*w
propensity = w
noise_y = 1
";

type Verdict = Result<String, String>;

enum Status {
    Pass,
    Fail,
    Skip,
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn s(p: &Path) -> String {
    p.to_str().expect("utf-8 temp path").to_string()
}

fn parse(args: &[String]) -> Command {
    let argv = std::iter::once("prescribe".to_string()).chain(args.iter().cloned());
    Cli::try_parse_from(argv).unwrap_or_else(|e| panic!("bad arguments {args:?}: {e}")).command
}

fn args(list: &[&str]) -> Vec<String> {
    list.iter().map(|a| a.to_string()).collect()
}

/// Artifacts of one synth → featurize → train → evaluate → policy run.
struct Pipeline {
    root: PathBuf,
    log: PathBuf,
    syn: PathBuf,
    data: PathBuf,
    model: PathBuf,
    report: PathBuf,
}

impl Pipeline {
    fn run(root: &Path, spec: &str, vc: &str, permutations: usize) -> Pipeline {
        std::fs::create_dir_all(root).unwrap();
        let p = Pipeline {
            root: root.to_path_buf(),
            log: root.join("syn/log/events.csv"),
            syn: root.join("syn"),
            data: root.join("data"),
            model: root.join("model.orf"),
            report: root.join("report"),
        };
        let spec_path = root.join("spec.txt");
        std::fs::write(&spec_path, spec).unwrap();
        let Command::Synth(a) = parse(&args(&["synth", "--spec", &s(&spec_path), "--out", &s(&p.syn)])) else {
            unreachable!()
        };
        commands::run_synth(&a).unwrap();
        let Command::Featurize(a) = parse(&args(&[
            "featurize",
            "--in",
            &s(&p.log),
            "--treatment",
            TREATMENT,
            "--seed",
            "1",
            "--out",
            &s(&p.data),
        ])) else {
            unreachable!()
        };
        commands::run_featurize(&a).unwrap();
        let Command::Train(a) = parse(&args(&["train", "--data", &s(&p.data), "--seed", "7", "--out", &s(&p.model)]))
        else {
            unreachable!()
        };
        commands::run_train(&a).unwrap();
        let perms = permutations.to_string();
        let Command::Evaluate(a) = parse(&args(&[
            "evaluate",
            "--model",
            &s(&p.model),
            "--data",
            &s(&p.data),
            "--vc",
            vc,
            "--permutations",
            &perms,
            "--seed",
            "5",
            "--out",
            &s(&p.report),
        ])) else {
            unreachable!()
        };
        commands::run_evaluate(&a).unwrap();
        p.policy(1.0, &p.report.join(commands::POLICY_FILE));
        p
    }

    fn policy(&self, v: f64, out: &Path) {
        let v = v.to_string();
        let Command::Policy(a) =
            parse(&args(&["policy", "--report", &s(&self.report), "--auto", "--v", &v, "--c", "1", "--out", &s(out)]))
        else {
            unreachable!()
        };
        commands::run_policy(&a).unwrap();
    }

    fn dataset(&self) -> EncodedDataset {
        EncodedDataset::load(&self.data).unwrap().0
    }

    fn forest(&self, data: &EncodedDataset) -> OrfModel {
        OrfModel::load(&self.model, Some(&data.dictionary.hash())).unwrap()
    }

    fn truth(&self) -> HashMap<String, TruthRow> {
        let f = std::fs::File::open(self.syn.join("truth/ground_truth.csv")).unwrap();
        read_truth(f).unwrap().into_iter().map(|r| (r.case_id.clone(), r)).collect()
    }
}

struct Shared {
    _tmp: tempfile::TempDir,
    recovery: Pipeline,
    recovery_secs: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn c1_effect_recovery(sh: &Shared) -> Verdict {
    let p = &sh.recovery;
    let data = p.dataset();
    let model = p.forest(&data);
    let truth = p.truth();
    let (test, theta) = commands::split_estimates(&model, &data, Split::Test);
    let n = test.rows().min(500);
    let mut err = Vec::new();
    for i in 0..n {
        if let Some(t) = theta[i] {
            err.push(t - truth[&test.case_ids[i]].theta);
        }
    }
    let rmse = (err.iter().map(|e| e * e).sum::<f64>() / err.len() as f64).sqrt();
    let bias = mean(&err);
    let train = data.indices(Split::Train).len();
    check(
        train == 5000 && err.len() == n && n == 500 && rmse <= 2.5 && bias.abs() <= 0.75 && sh.recovery_secs <= 300.0,
        format!(
            "train={train} points={}/{n} rmse={rmse:.3} (<=2.5) bias={bias:+.3} (|.|<=0.75) pipeline={:.1}s (<=300)",
            err.len(),
            sh.recovery_secs
        ),
    )
}

fn c2_confounding(sh: &Shared) -> Verdict {
    let p = &sh.recovery;
    let data = p.dataset();
    let model = p.forest(&data);
    let truth = p.truth();
    let (test, theta) = commands::split_estimates(&model, &data, Split::Test);
    let est: Vec<f64> = theta.iter().flatten().copied().collect();
    let true_mean = mean(&test.case_ids.iter().map(|c| truth[c].theta).collect::<Vec<_>>());
    let (mut yt, mut yc) = (Vec::new(), Vec::new());
    for i in 0..test.rows() {
        if test.t[i] > 0.5 {
            yt.push(test.y[i]);
        } else {
            yc.push(test.y[i]);
        }
    }
    let dim = mean(&yt) - mean(&yc);
    let orf_gap = (mean(&est) - true_mean).abs();
    let dim_gap = (dim - true_mean).abs();
    check(
        2.0 * orf_gap <= dim_gap,
        format!("true mean={true_mean:.3} |orf-true|={orf_gap:.3} |dim-true|={dim_gap:.3} (need 2x)"),
    )
}

fn c3_qini_dominance(sh: &Shared) -> Verdict {
    let r = prescribe_core::policy::EvaluationReport::load(&sh.recovery.report).unwrap();
    let perm = r.permutation.as_ref().ok_or("no permutation test in report")?;
    check(
        r.fraction_on_or_above >= 0.9 && r.curve.coefficient > 0.0 && perm.permutations == 1000 && perm.p_value < 0.01,
        format!(
            "on/above={:.3} (>=0.9) coefficient={:.3} (>0) p={:.4} over {} shuffles (<0.01)",
            r.fraction_on_or_above, r.curve.coefficient, perm.p_value, perm.permutations
        ),
    )
}

/// Direct evaluation of the Qini formula on every top-n subset.
fn brute_force_qini(ids: &[String], theta: &[f64], treated: &[bool], y: &[f64]) -> Vec<f64> {
    let n = ids.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| theta[a].partial_cmp(&theta[b]).unwrap().then(ids[a].cmp(&ids[b])));
    let mut out = Vec::new();
    let mut last = 0.0;
    for pct in 0..=100u32 {
        let m = ((pct as f64 * n as f64 / 100.0).round() as usize).min(n);
        let subset = &order[..m];
        let (mut r1, mut n1, mut r0, mut n0) = (0.0, 0usize, 0.0, 0usize);
        for &i in subset {
            if treated[i] {
                r1 += y[i];
                n1 += 1;
            } else {
                r0 += y[i];
                n0 += 1;
            }
        }
        if n1 > 0 && n0 > 0 {
            last = r0 * (n1 as f64 / n0 as f64) - r1;
        }
        out.push(last);
    }
    out
}

fn c4_brute_force_qini() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sets = 0usize;
    for n in 2..=12usize {
        let ids: Vec<String> = (0..n).map(|i| format!("case-{:02}", (i * 7) % n)).collect();
        // Integer effects so ties are common; quarter-day outcomes.
        let theta: Vec<f64> = (0..n).map(|_| rng.random_range(-3..=3) as f64).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..400) as f64 / 4.0).collect();
        for mask in 1..(1u32 << n) - 1 {
            let treated: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let input = QiniInput::new(ids.clone(), theta.clone(), treated.clone(), y.clone()).unwrap();
            let curve = qini_curve(&input, 1.0).map_err(|e| format!("n={n} mask={mask:b}: {e}"))?;
            let want = brute_force_qini(&ids, &theta, &treated, &y);
            let got: Vec<f64> = curve.points.iter().map(|p| p.qini).collect();
            if got != want {
                return Err(format!("n={n} mask={mask:b}: curve {got:?} != direct {want:?}"));
            }
            sets += 1;
        }
    }
    Ok(format!("{sets} treatment assignments over n=2..=12, all 101 grid points exactly equal"))
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    Matrix::from_rows(&rows, p)
}

fn c6_numerics(sh: &Shared) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // Logistic gradient against central differences of the objective.
    let mut grad_err = 0.0f64;
    for _ in 0..10 {
        let (n, p) = (rng.random_range(30..200), rng.random_range(1..8));
        let x = random_matrix(&mut rng, n, p);
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.4) { 1.0 } else { 0.0 }).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let ridge = rng.random_range(0.0..0.5);
        let params: Vec<f64> = (0..=p).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g = logistic_gradient(&x, &y, &w, ridge, &params);
        let h = 1e-5;
        for j in 0..=p {
            let (mut up, mut dn) = (params.clone(), params.clone());
            up[j] += h;
            dn[j] -= h;
            let fd =
                (logistic_objective(&x, &y, &w, ridge, &up) - logistic_objective(&x, &y, &w, ridge, &dn)) / (2.0 * h);
            grad_err = grad_err.max((fd - g[j]).abs());
        }
    }

    // Lasso stationarity, with the gradient of
    // 1/2 sum (w_i / sum w) r_i^2 recomputed here.
    let mut kkt_excess = f64::NEG_INFINITY;
    let mut intercept_grad = 0.0f64;
    for _ in 0..50 {
        let (n, p) = (rng.random_range(40..200), rng.random_range(2..15));
        let x = random_matrix(&mut rng, n, p);
        let beta: Vec<f64> = (0..p).map(|j| if j % 3 == 0 { rng.random_range(-3.0..3.0) } else { 0.0 }).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.5 + x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-1.0..1.0))
            .collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
        let lambda = rng.random_range(0.01..0.8);
        let fit = fit_lasso(&x, &y, &w, lambda);
        let sw: f64 = w.iter().sum();
        let resid: Vec<f64> = (0..n).map(|i| y[i] - fit.predict(x.row(i))).collect();
        intercept_grad = intercept_grad.max((resid.iter().zip(&w).map(|(r, wi)| r * wi).sum::<f64>() / sw).abs());
        for j in 0..p {
            let gj = -(0..n).map(|i| w[i] * resid[i] * x.get(i, j)).sum::<f64>() / sw;
            kkt_excess = kkt_excess.max(gj.abs() - lambda);
        }
    }

    // Kernel weights rebuilt from the leaves of the recovery forest.
    let data = sh.recovery.dataset();
    let model = sh.recovery.forest(&data);
    let test = data.subset(Split::Test);
    let (mut sum_err, mut weight_err, mut off_support) = (0.0f64, 0.0f64, 0usize);
    for i in (0..test.rows()).step_by(37) {
        let x = test.x.row(i);
        let mut dense: BTreeMap<usize, f64> = BTreeMap::new();
        for tree in &model.trees {
            let est: HashSet<u32> = tree.estimate_half.iter().copied().collect();
            let leaf = tree.leaf(x);
            for &r in leaf {
                if !est.contains(&r) {
                    off_support += 1;
                }
                *dense.entry(r as usize).or_default() += 1.0 / model.trees.len() as f64 / leaf.len() as f64;
            }
        }
        let k = model.kernel_weights(x).unwrap();
        sum_err = sum_err.max((k.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs());
        if k.len() != dense.len() {
            off_support += k.len().abs_diff(dense.len());
        }
        for (r, w) in &k {
            weight_err = weight_err.max((w - dense.get(r).copied().unwrap_or(f64::INFINITY)).abs());
        }
    }

    check(
        grad_err < 1e-4 && kkt_excess <= 1e-6 && intercept_grad <= 1e-6 && sum_err <= 1e-12 && off_support == 0,
        format!(
            "logistic fd err={grad_err:.2e} (<1e-4) lasso max(|grad|-lambda)={kkt_excess:.2e} (<=1e-6) \
             intercept grad={intercept_grad:.2e} kernel |sum-1|={sum_err:.2e} (<=1e-12) \
             weight diff={weight_err:.2e} off-support rows={off_support}"
        ),
    )
}

fn replay_args(p: &Pipeline, policy: &Path) -> prescribe_cli::args::ReplayArgs {
    let Command::Replay(a) = parse(&args(&[
        "replay",
        "--log",
        &s(&p.log),
        "--model",
        &s(&p.model),
        "--policy",
        &s(policy),
        "--truth",
        &s(&p.syn),
    ])) else {
        unreachable!()
    };
    a
}

fn c5_policy_quality(root: &Path) -> Verdict {
    let p = Pipeline::run(&root.join("policy"), POLICY_SPEC, "0.3,1,3", 0);
    let truth = p.truth();
    let mut lines = Vec::new();
    let mut ok = true;
    for vc in [0.3, 1.0, 3.0] {
        let path = p.root.join(format!("policy-{vc}.json"));
        p.policy(vc, &path);
        let out: ReplayOutcome = commands::run_replay(&replay_args(&p, &path)).unwrap();
        let g = out.gain.ok_or("replay produced no gain comparison")?;
        let cost = CostModel::new(vc, 1.0).unwrap();
        let data = p.dataset();
        let scored: Vec<TruthRow> = data.subset(Split::Test).case_ids.iter().map(|c| truth[c].clone()).collect();
        let (best_pct, best) = oracle_best(&scored, &cost, 1.0);
        // Asserted against the oracle at the policy's own treated fraction.
        // The gap to the best oracle fraction is reported only: the curves
        // the policy is picked from are computed on confounded observations.
        ok &= g.realized_gain >= 0.85 * g.oracle_gain && g.cases == scored.len();
        lines.push(format!(
            "v/c={vc}: treated {:.1}% realized={:.0} oracle@same={:.0} ({:.1}%, need 85%) [info: oracle best={:.0} at {best_pct}%, {:.1}%]",
            g.treated_percent,
            g.realized_gain,
            g.oracle_gain,
            100.0 * g.realized_gain / g.oracle_gain,
            best,
            100.0 * g.realized_gain / best,
        ));
    }
    check(ok, lines.join("; "))
}

fn c7_parity(sh: &Shared) -> Verdict {
    let p = &sh.recovery;
    let data = p.dataset();
    let model = p.forest(&data);
    let test = data.subset(Split::Test);
    let batch = model.estimate_many(&test.x);
    let want: HashMap<&str, (usize, usize)> =
        test.case_ids.iter().enumerate().map(|(i, c)| (c.as_str(), (test.k[i], i))).collect();

    let a = replay_args(p, &p.report.join(commands::POLICY_FILE));
    let state = commands::build_state(&a.engine).unwrap();
    let log = commands::load_log(&p.log, &commands::resolve_mapping(&p.log, None).unwrap()).unwrap();
    let opts = ReplayOptions { score: Some(test.case_ids.iter().cloned().collect()), ..Default::default() };
    let mut checked = HashSet::new();
    let mut mismatches = Vec::new();
    replay_shared(&state.engine, &log, &opts, |eng, steps| {
        for st in steps {
            let Some(&(k, i)) = want.get(st.case_id.as_str()) else { continue };
            if st.k != k || checked.contains(&st.case_id) {
                continue;
            }
            checked.insert(st.case_id.clone());
            let x = eng.encode_case(&st.case_id).unwrap();
            let same_x =
                x.len() == test.x.cols() && x.iter().zip(test.x.row(i)).all(|(a, b)| a.to_bits() == b.to_bits());
            let same_theta = match (&batch[i], eng.estimate_case(&st.case_id)) {
                (Ok(b), Ok(o)) => b.theta.to_bits() == o.theta.to_bits(),
                (Err(_), Err(_)) => true,
                _ => false,
            };
            if !(same_x && same_theta) {
                mismatches.push(st.case_id.clone());
            }
        }
    })
    .unwrap();
    check(
        checked.len() == test.rows() && mismatches.is_empty(),
        format!(
            "{} of {} test cases compared, {} mismatches{}",
            checked.len(),
            test.rows(),
            mismatches.len(),
            mismatches.first().map(|c| format!(" (first {c})")).unwrap_or_default()
        ),
    )
}

fn c8_sensitivity(root: &Path) -> Verdict {
    let p = Pipeline::run(&root.join("confounder"), CONFOUNDER_SPEC, "1", 0);
    let full = p.dataset();
    let model = p.forest(&full);
    let blind = full.without_source("u");
    let blind_model = fit_forest(&blind, &model.hyperparams, &FitOptions::default()).unwrap();

    let test_mean = |m: &OrfModel, d: &EncodedDataset| {
        let t = d.subset(Split::Test);
        mean(&m.estimate_many(&t.x).into_iter().filter_map(|r| r.ok().map(|e| e.theta)).collect::<Vec<_>>())
    };
    let bias = (test_mean(&blind_model, &blind) - test_mean(&model, &full)).abs();
    let frontier = analyze(&blind, &blind_model, TargetBias::Days(bias)).map_err(|e| format!("frontier: {e}"))?;
    let u = group_influence(&full, model.hyperparams.lambda_reg, "u").unwrap();
    let planted_ok = !frontier.is_below(&u) && u.alpha > 0.1 && u.partial_r2 > 0.1;

    let report = analyze(&full, &model, TargetBias::Auto).unwrap();
    let noise: Vec<_> =
        report.points.iter().filter(|q| ["n1", "n2", "n3"].contains(&q.covariate_group.as_str())).collect();
    let worst = noise.iter().map(|q| q.alpha.hypot(q.partial_r2)).fold(0.0f64, f64::max);
    let need = frontier.scale.required_r2(u.alpha, bias);
    check(
        planted_ok && noise.len() == 3 && worst <= 0.02,
        format!(
            "realized bias={bias:.3} days; u=(alpha {:.3}, r2 {:.3}) frontier r2 at that alpha={} ; \
             {} noise points, max distance {worst:.4} (<=0.02)",
            u.alpha,
            u.partial_r2,
            need.map(|r| format!("{r:.3}")).unwrap_or_else(|| "none".into()),
            noise.len()
        ),
    )
}

fn files_under(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn c9_determinism(root: &Path) -> Verdict {
    let a = Pipeline::run(&root.join("det-a"), DETERMINISM_SPEC, "0.3,1,3", 200);
    let b = Pipeline::run(&root.join("det-b"), DETERMINISM_SPEC, "0.3,1,3", 200);
    let (fa, fb) = (files_under(&a.root), files_under(&b.root));
    let differ: Vec<_> =
        fa.iter().filter(|(k, v)| fb.get(*k) != Some(v)).map(|(k, _)| k.display().to_string()).collect();
    check(
        fa.len() == fb.len() && differ.is_empty() && fa.len() >= 8,
        format!("{} files compared, differing: {differ:?}", fa.len()),
    )
}

fn c10_bpi17(root: &Path) -> Option<Verdict> {
    let csv = PathBuf::from(std::env::var_os("PRESCRIBE_BPI17")?);
    let map = std::env::var_os("PRESCRIBE_BPI17_MAP").map(PathBuf::from);
    Some((|| {
        let mapping = commands::resolve_mapping(&csv, map.as_deref()).map_err(|e| e.to_string())?;
        let log = commands::load_log(&csv, &mapping).map_err(|e| e.to_string())?;
        let st = log_statistics(&log).map_err(|e| e.to_string())?;
        let data = root.join("bpi17");
        let mut fa = vec!["featurize", "--in", csv.to_str().unwrap(), "--treatment", "W_Call incomplete files"];
        let map_s = map.as_ref().map(|m| s(m));
        if let Some(m) = &map_s {
            fa.extend(["--map", m.as_str()]);
        }
        let data_s = s(&data);
        fa.extend(["--out", data_s.as_str()]);
        let Command::Featurize(f) = parse(&args(&fa)) else { unreachable!() };
        commands::run_featurize(&f).map_err(|e| e.to_string())?;
        let model = root.join("bpi17.orf");
        let Command::Train(t) = parse(&args(&[
            "train",
            "--data",
            &data_s,
            "--trees",
            "200",
            "--min-leaf",
            "20",
            "--max-depth",
            "30",
            "--subsample",
            "0.4",
            "--lambda",
            "0.01",
            "--out",
            &s(&model),
        ])) else {
            unreachable!()
        };
        commands::run_train(&t).map_err(|e| e.to_string())?;
        let ds = EncodedDataset::load(&data).unwrap().0;
        let m = OrfModel::load(&model, Some(&ds.dictionary.hash())).unwrap();
        let (_, theta) = commands::split_estimates(&m, &ds, Split::Test);
        let est: Vec<f64> = theta.into_iter().flatten().collect();
        check(
            st.traces == 31_509 && st.mean_duration_days.round() == 20.0,
            format!(
                "traces={} events={} labels={} mean length={:.2} mean duration={:.2} days; mean test effect={:.2} days",
                st.traces,
                st.events,
                st.labels,
                st.mean_trace_length,
                st.mean_duration_days,
                mean(&est)
            ),
        )
    })())
}

fn report(id: u32, name: &str, status: Status, detail: &str, failures: &mut u32) {
    let tag = match status {
        Status::Pass => "PASS",
        Status::Fail => {
            *failures += 1;
            "FAIL"
        }
        Status::Skip => "SKIP",
    };
    println!("criterion {id:>2}  {tag}  {name}: {detail}");
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    })
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let start = Instant::now();
    let recovery = Pipeline::run(&root.join("recovery"), RECOVERY_SPEC, "0.3,0.5,1", 1000);
    let sh = Shared { _tmp: tmp, recovery, recovery_secs: start.elapsed().as_secs_f64() };

    let mut failures = 0;
    let criteria: Vec<(u32, &str, Box<dyn FnOnce() -> Verdict + '_>)> = vec![
        (1, "effect recovery", Box::new(|| c1_effect_recovery(&sh))),
        (2, "confounding adjustment", Box::new(|| c2_confounding(&sh))),
        (3, "qini dominance", Box::new(|| c3_qini_dominance(&sh))),
        (4, "brute-force qini", Box::new(c4_brute_force_qini)),
        (5, "policy quality", Box::new(|| c5_policy_quality(&root))),
        (6, "numerics", Box::new(|| c6_numerics(&sh))),
        (7, "online/offline parity", Box::new(|| c7_parity(&sh))),
        (8, "sensitivity sanity", Box::new(|| c8_sensitivity(&root))),
        (9, "determinism", Box::new(|| c9_determinism(&root))),
    ];
    for (id, name, f) in criteria {
        let t = Instant::now();
        let (status, detail) = match guarded(f) {
            Ok(d) => (Status::Pass, d),
            Err(d) => (Status::Fail, d),
        };
        report(id, name, status, &format!("{detail} [{:.1}s]", t.elapsed().as_secs_f64()), &mut failures);
    }
    match guarded(|| c10_bpi17(&root).unwrap_or_else(|| Ok(String::new()))) {
        Ok(d) if d.is_empty() => report(10, "bpi17 smoke", Status::Skip, "PRESCRIBE_BPI17 not set", &mut failures),
        Ok(d) => report(10, "bpi17 smoke", Status::Pass, &d, &mut failures),
        Err(d) => report(10, "bpi17 smoke", Status::Fail, &d, &mut failures),
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
    println!("all criteria passed");
}
