//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are reported as FAIL but do not fail
//! the process; every other FAIL does.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use http_body_util::BodyExt;
use labelwise::eval::{jackknife, random_baseline, NllScope, PlanConfig};
use labelwise::io::PrunedPrior;
use labelwise::model::LabelSet;
use labelwise::planner::{
    bound_check, estimate_wsc, exact_wsc, greedy_plan, marginal_gain_fast, predictive, predictive_variance,
    restricted_posterior, Direction, GainState, PlannerModel, SpreadMeasure,
};
use labelwise::sbl::{evidence, posterior, EmConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::*;

const KNOWN_FAILURES: &[&str] = &["AC-6", "AC-7"];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn ac1() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..200 {
        let inst = random_instance(seed);
        let post = posterior(&inst.a, &inst.data, &inst.hyper).unwrap();
        let (mean, cov) = dense_posterior(inst.a.entries(), inst.data.values(), &inst.hyper);
        worst = worst.max(rel_err(&post.covariance, &cov)).max(rel_err(&post.mean, &mean));

        let model = PlannerModel::new(inst.a.clone(), inst.hyper.alpha.clone(), inst.hyper.sigma2).unwrap();
        let rp = restricted_posterior(&model, &inst.labels, Some(&inst.values)).unwrap();
        let aj = inst.a.restrict_rows(&inst.labels).unwrap();
        let yj = DMatrix::from_column_slice(inst.values.len(), 1, &inst.values);
        let (rmean, rcov) = dense_posterior(&aj, &yj, &inst.hyper);
        let got_mean = DMatrix::from_column_slice(rp.mean.len(), 1, rp.mean.as_slice());
        worst = worst.max(rel_err(&rp.covariance, &rcov)).max(rel_err(&got_mean, &rmean));

        let pred = predictive(&model, &rp);
        let a = inst.a.entries();
        let n = a.nrows();
        let pcov = DMatrix::identity(n, n) * inst.hyper.sigma2 + a * &rcov * a.transpose();
        let pmean = a * &rmean;
        let got_pmean = DMatrix::from_column_slice(n, 1, pred.mean.as_slice());
        worst = worst.max(rel_err(&pred.covariance, &pcov)).max(rel_err(&got_pmean, &pmean));

        let e = evidence(&inst.a, &inst.data, &inst.hyper).unwrap();
        let want = dense_evidence(a, inst.data.values(), &inst.hyper);
        worst = worst.max((e - want).abs() / want.abs().max(1.0));
    }
    outcome(worst <= 1e-8, format!("200 instances, max relative error {worst:.2e}"))
}

fn ac2() -> Outcome {
    let hits = (1..=20u64).filter(|&s| two_tone_fit(s).kept == vec![0, 4, 16]).count();
    outcome(hits >= 19, format!("{hits}/20 seeds keep exactly {{0, 4, 16}}"))
}

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonpositive = 0;
    let mut max_gain_err = 0.0f64;
    let trace_after = |m: &PlannerModel, s: &[usize]| {
        let rp = restricted_posterior(m, &LabelSet::new(s.to_vec(), m.n()).unwrap(), None).unwrap();
        m.trace_of(&rp.covariance)
    };
    for _ in 0..1000 {
        let model = random_model(&mut rng);
        let i = rng.random_range(0..model.n());
        let set = random_subset(&mut rng, model.n(), Some(i));
        let state = GainState::with_labels(&model, LabelSet::new(set.clone(), model.n()).unwrap()).unwrap();
        let fast = marginal_gain_fast(&state, i);
        let mut with_i = set.clone();
        with_i.push(i);
        let naive = trace_after(&model, &set) - trace_after(&model, &with_i);
        if fast <= 0.0 {
            nonpositive += 1;
        }
        max_gain_err = max_gain_err.max((fast - naive).abs() / naive.abs().max(1e-12));
    }
    let mut violations = 0;
    for _ in 0..1000 {
        let model = random_model(&mut rng);
        let y = random_subset(&mut rng, model.n(), None);
        let x: Vec<usize> = y.iter().copied().filter(|_| rng.random_bool(0.5)).collect();
        let prior = model.prior_trace();
        if prior - trace_after(&model, &x) > prior - trace_after(&model, &y) + 1e-12 * prior {
            violations += 1;
        }
    }
    outcome(
        nonpositive == 0 && violations == 0 && max_gain_err <= 1e-8,
        format!(
            "{nonpositive} non-positive gains, {violations} monotonicity violations, fast gain rel err {max_gain_err:.2e}"
        ),
    )
}

fn ac4() -> Outcome {
    let mut held = 0;
    let mut tightest = f64::INFINITY;
    for seed in 0..20 {
        let r = bound_check(&small_model(seed), 3).unwrap();
        if r.bound_satisfied {
            held += 1;
        }
        tightest = tightest.min(r.greedy_value / (r.factor * r.optimal_value));
    }
    outcome(held == 20, format!("bound holds on {held}/20, min f(greedy)/bound {tightest:.4}"))
}

fn ac5() -> Outcome {
    let mut ok = 0;
    let mut margin = f64::INFINITY;
    for seed in 0..20 {
        let model = small_model(seed);
        let exact = exact_wsc(&model).unwrap().constant;
        let est = estimate_wsc(&model, 30_000, 1000 + seed).unwrap();
        if est.max_ratio <= exact + 1e-10 {
            ok += 1;
        }
        margin = margin.min(exact - est.max_ratio);
    }
    let dc = estimate_wsc(&dc_only_model(12), 30_000, 5).unwrap();
    let dc_max = dc.samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    outcome(
        ok == 20 && dc_max <= 1.0 + 1e-10,
        format!("estimate <= exact on {ok}/20 (min gap {margin:.3e}), DC-only max ratio {dc_max:.12}"),
    )
}

fn ac6() -> Outcome {
    let fit = two_tone_fit(1);
    let plan = greedy_plan(&fit.model, 15, SpreadMeasure::Trace, Direction::Minimize).unwrap();
    let mut failures = Vec::new();
    let mut worst_ratio = 0.0f64;
    for k in 5..=15 {
        let rb = random_baseline(&fit.model, k, 1000, 100 + k as u64, SpreadMeasure::Trace, None, NllScope::AllPoints)
            .unwrap();
        let g = plan.spreads[k - 1];
        worst_ratio = worst_ratio.max(g / rb.spread_summary.q01);
        if g > rb.spread_summary.q01 {
            failures.push(k);
        }
    }
    outcome(
        failures.is_empty(),
        format!("greedy <= random 1st percentile for k=5..15, max greedy/q01 {worst_ratio:.4}, failing k {failures:?}"),
    )
}

fn ac7() -> Outcome {
    let fit = two_tone_fit(1);
    let cfg = PlanConfig {
        k_max: 15,
        draws: 1000,
        seed: 1,
        ..PlanConfig::default()
    };
    let reports = jackknife(&fit.data, &fit.a, &EmConfig::default(), &cfg).unwrap();
    let mut below_min = 0;
    let mut worst_above_median = 0;
    let mut band_ok = 0;
    let mut gaps = Vec::new();
    for r in &reports {
        let row15 = r.rows.iter().find(|row| row.k == 15).unwrap();
        let row5 = r.rows.iter().find(|row| row.k == 5).unwrap();
        let w15 = row15.worst.as_ref().unwrap();
        let w5 = row5.worst.as_ref().unwrap();
        if row15.greedy.nll <= row15.random.nll.min {
            below_min += 1;
        }
        gaps.push(row15.greedy.nll - row15.random.nll.min);
        if w15.nll >= row15.random.nll.median {
            worst_above_median += 1;
        }
        if w5.band_width >= 2.0 * row5.greedy.band_width {
            band_ok += 1;
        }
    }
    let folds = reports.len();
    let gaps: Vec<String> = gaps.iter().map(|g| format!("{g:.2}")).collect();
    outcome(
        below_min == folds && worst_above_median == folds && band_ok == folds,
        format!(
            "greedy <= random min {below_min}/{folds} (greedy - min nats: [{}]), worst >= median {worst_above_median}/{folds}, band ratio >= 2 {band_ok}/{folds}",
            gaps.join(", ")
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_labelwise"))
        .current_dir(dir)
        .env_remove("LABELWISE_OUT_DIR")
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let path = dir.join(String::from_utf8(out.stdout).unwrap().trim());
    std::fs::read(path).unwrap()
}

fn cli_artifacts(dir: &Path) -> Vec<Vec<u8>> {
    std::fs::write(dir.join("labels.json"), r#"{"labels":[{"index":3,"value":2.1},{"index":40,"value":1.7}]}"#)
        .unwrap();
    vec![
        cli(dir, &["synth", "--seed", "4", "--out", "data.csv"]),
        cli(dir, &["fit-prior", "--data", "data.csv", "--out", "prior.json"]),
        cli(dir, &["plan-labels", "--prior", "prior.json", "--k", "10", "--out", "plan.json"]),
        cli(dir, &["predict", "--prior", "prior.json", "--labels", "labels.json", "--out", "curve.json"]),
        cli(dir, &["evaluate", "--data", "data.csv", "--seed", "2", "--k-max", "6", "--draws", "50", "--out", "report.json"]),
        cli(dir, &["wsc", "--prior", "prior.json", "--n", "12", "--samples", "2000", "--seed", "8", "--out", "wsc.json"]),
    ]
}

fn ac8() -> Outcome {
    let model = two_tone_fit(2).model;
    let plan = greedy_plan(&model, 12, SpreadMeasure::Trace, Direction::Minimize).unwrap();
    let labels = LabelSet::new(plan.indices.clone(), model.n()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reference = restricted_posterior(&model, &labels, Some(&[0.0; 12])).unwrap().covariance;
    let mut identical = true;
    for _ in 0..10 {
        let values: Vec<f64> = (0..12).map(|_| rng.random_range(-10.0..10.0)).collect();
        let rp = restricted_posterior(&model, &labels, Some(&values)).unwrap();
        identical &= rp.covariance == reference;
        identical &= greedy_plan(&model, 12, SpreadMeasure::Trace, Direction::Minimize).unwrap() == plan;
    }
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = cli_artifacts(a.path());
    let second = cli_artifacts(b.path());
    let same = first
        .iter()
        .zip(&second)
        .filter(|(x, y)| strip_dir(x, a.path()) == strip_dir(y, b.path()))
        .count();
    outcome(
        identical && same == first.len(),
        format!("covariances and plans identical across values: {identical}, {same}/{} artifacts byte-identical", first.len()),
    )
}

/// Artifacts record absolute input paths; compare them relative to the run directory.
fn strip_dir(bytes: &[u8], dir: &Path) -> Vec<u8> {
    String::from_utf8_lossy(bytes)
        .replace(dir.to_str().unwrap(), "<run>")
        .into_bytes()
}

async fn call(app: &axum::Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn session_run() -> (f64, bool, bool) {
    let fit = two_tone_fit(1);
    let prior = PrunedPrior {
        threshold_ratio: 0.01,
        kept_indices: fit.kept.clone(),
        frequencies: fit.model.transfer().freq_grid().frequencies().to_vec(),
        alpha: fit.model.alpha().to_vec(),
        sigma2: fit.model.sigma2(),
    };
    let app = labelwise::service::router(Arc::new(labelwise::service::SessionStore::new()), None);
    let (_, st) = call(&app, Method::POST, "/v1/sessions", Some(json!({"prior": prior, "n": 300, "frame_rate": 30.0}))).await;
    let id = st["id"].as_str().unwrap().to_string();
    let truth = fit.data.slice(0);
    let mut spread = st["spread"].as_f64().unwrap();
    let mut decreasing = true;
    let mut max_err = 0.0f64;
    let mut history = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..10 {
        let (_, s) = call(&app, Method::GET, &format!("/v1/sessions/{id}/suggestion"), None).await;
        let i = s["index"].as_u64().unwrap() as usize;
        let (_, summary) = call(
            &app,
            Method::POST,
            &format!("/v1/sessions/{id}/labels"),
            Some(json!({"index": i, "value": truth[i]})),
        )
        .await;
        labels.push(i);
        let next = summary["spread"].as_f64().unwrap();
        decreasing &= next < spread;
        spread = next;
        let set = LabelSet::new(labels.clone(), 300).unwrap();
        let values: Vec<f64> = labels.iter().map(|&j| truth[j]).collect();
        let rp = restricted_posterior(&fit.model, &set, Some(&values)).unwrap();
        let mean = fit.model.a() * &rp.mean;
        let std: Vec<f64> = predictive_variance(&fit.model, &rp.covariance).into_iter().map(f64::sqrt).collect();
        let got_mean: Vec<f64> = serde_json::from_value(summary["mean"].clone()).unwrap();
        let got_std: Vec<f64> = serde_json::from_value(summary["std"].clone()).unwrap();
        for k in 0..300 {
            max_err = max_err
                .max((got_mean[k] - mean[k]).abs() / mean[k].abs().max(1.0))
                .max((got_std[k] - std[k]).abs() / std[k].abs().max(1.0));
        }
        history.push(summary);
    }
    let mut restored = true;
    for k in (0..9).rev() {
        let (_, summary) = call(&app, Method::DELETE, &format!("/v1/sessions/{id}/labels/last"), None).await;
        restored &= summary == history[k];
    }
    (max_err, decreasing, restored)
}

fn ac9() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let (err, decreasing, restored) = rt.block_on(session_run());
    outcome(
        err <= 1e-10 && decreasing && restored,
        format!("max deviation from batch {err:.2e}, spread strictly decreasing: {decreasing}, undo restores: {restored}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome, u64);

fn main() {
    let criteria: [Criterion; 9] = [
        ("AC-1", ac1, 30),
        ("AC-2", ac2, 300),
        ("AC-3", ac3, 60),
        ("AC-4", ac4, 600),
        ("AC-5", ac5, 300),
        ("AC-6", ac6, 300),
        ("AC-7", ac7, 600),
        ("AC-8", ac8, 30),
        ("AC-9", ac9, 30),
    ];
    let mut unexpected = Vec::new();
    for (name, run, limit) in criteria {
        let start = Instant::now();
        let result = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(limit);
        let pass = result.pass && in_time;
        println!(
            "{name} {} {} [{:.1}s, limit {limit}s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
        if !pass && !KNOWN_FAILURES.contains(&name) {
            unexpected.push(name);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
