use std::path::Path;
use std::time::Duration;

use churnlab_client::{Client, ClientError};
use churnlab_core::api::*;
use churnlab_core::dataset::RegimeKind;
use churnlab_core::experiment::pipeline::DataKey;
use churnlab_core::metrics::PredictionMatrix;
use churnlab_core::rng::SeededRng;
use churnlab_core::trainer::ModelClass;
use serde_json::{json, Value};

async fn client() -> Client {
    let (addr, _h) = churnlab_server::spawn("127.0.0.1:0".parse().unwrap(), 2).await.unwrap();
    Client::new(format!("http://{addr}"))
}

fn write_data(path: &Path, n: usize) {
    let mut rng = SeededRng::new(11, 0);
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["a", "b", "kind", "y"]).unwrap();
    for _ in 0..n {
        let (a, b) = (rng.normal(), rng.normal());
        let kind = if rng.uniform() < 0.5 { "p" } else { "q" };
        let z = a - 0.5 * b + if kind == "p" { 0.4 } else { 0.0 } + 0.7 * rng.normal();
        w.write_record([a.to_string(), b.to_string(), kind.into(), u8::from(z > 0.0).to_string()]).unwrap();
    }
    w.flush().unwrap();
}

fn config(path: &Path) -> Value {
    let lr = json!({"arch": {"kind": "logistic_regression"}, "learning_rate": 0.05, "epochs": 4, "batch_size": 32});
    json!({
        "dataset": {"path": path, "target": "y", "positive_label": "1"},
        "train": {"plain": lr, "uncertainty_aware": lr},
        "head": {"features": 16},
        "rashomon": {"m": 3, "epsilon": 0.05},
        "experiment": {"seed_arrays": [[5, 6, 7, 8, 9]]}
    })
}

#[tokio::test(flavor = "multi_thread")]
async fn health_and_validation() {
    let c = client().await;
    assert_eq!(c.health().await.unwrap().status, "ok");

    let bad = json!({"dataset": {"path": "x.csv", "target": "y"}, "rashomon": {"epsilon": -1.0, "epsilom": 2}});
    let err = c.validate(&bad).await.unwrap_err();
    let ClientError::Api { status, body } = err else { panic!("expected an api error") };
    assert_eq!(status, 422);
    assert_eq!(body.kind, ErrorKind::InvalidConfig);
    let paths: Vec<&str> = body.field_errors.iter().map(|e| e.path.as_str()).collect();
    assert!(paths.contains(&"dataset.path"));
    assert!(paths.contains(&"rashomon.epsilon"));
    assert_eq!(body.warnings[0].suggestion.as_deref(), Some("epsilon"));

    assert!(matches!(c.status("exp-999").await, Err(ClientError::Api { status: 404, .. })));
}

#[tokio::test(flavor = "multi_thread")]
async fn metric_endpoints() {
    let c = client().await;
    let r = c
        .churn(&ChurnRequest {
            scores_a: vec![0.2, 0.7, 0.5, 0.1],
            scores_b: vec![0.6, 0.7, 0.4, 0.1],
            y: Some(vec![0, 1, 1, 0]),
            gammas: vec![0.1],
        })
        .await
        .unwrap();
    assert_eq!(r.churn, 0.5);
    assert_eq!(r.churn_unstable, vec![0, 2]);
    assert_eq!(r.smooth_churn.len(), 1);

    let pm = PredictionMatrix::from_labels(&[vec![0, 1, 0], vec![1, 1, 0], vec![1, 1, 1]]).unwrap();
    let m = c.multiplicity(&MultiplicityRequest { matrix: pm, baseline: 0 }).await.unwrap();
    assert_eq!(m.rashomon_unstable, vec![0, 2]);
    assert_eq!(m.discrepancy.row, 2);

    let ca = c
        .common_arbitrariness(&ArbitrarinessRequest { rashomon_unstable: vec![0, 2], churn_unstable: vec![2, 3] })
        .await
        .unwrap();
    assert_eq!(ca.value, 0.5);

    let p = c.plots(&PlotRequest { scores: vec![0.1, 0.12, 0.9], unstable: vec![1], n_bins: 10, n_thresholds: 5 }).await.unwrap();
    assert_eq!(p.bins[1].flip_proportion, 0.5);
    assert_eq!(p.curve.len(), 5);

    let bad = c.churn(&ChurnRequest { scores_a: vec![0.1], scores_b: vec![0.1, 0.2], y: None, gammas: vec![] }).await;
    assert!(matches!(bad, Err(ClientError::Api { status: 400, .. })));
}

#[tokio::test(flavor = "multi_thread")]
async fn compute_endpoints_and_experiment_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("d.csv");
    write_data(&csv, 400);
    let cfg = config(&csv);
    let c = client().await;

    let ing = c.ingest(&cfg).await.unwrap();
    assert_eq!(ing.dataset.n, 400);
    assert_eq!(ing.dataset.n_test, 80);

    let plan = c.plan(&cfg).await.unwrap();
    assert_eq!(plan.plan.repetitions, vec![(0, 5)]);

    let t = c
        .train(&TrainRequest { config: cfg.clone(), class: ModelClass::Plain, data: DataKey::Regime(RegimeKind::Small), seed: None, repetition: 0 })
        .await
        .unwrap();
    assert_eq!(t.seed, 5);
    assert!(t.test_error < 0.4);

    let rs = c
        .rashomon(&RashomonRequest { config: cfg.clone(), mode: RashomonMode::Randomized, class: ModelClass::Plain, regime: None, repetition: 0, threads: 1 })
        .await
        .unwrap();
    let set = rs.bundle.clone().into_set().unwrap();
    assert!(!set.is_empty());
    assert!(rs.test.baseline_ambiguity <= rs.test.ambiguity);

    let cand = c
        .rashomon(&RashomonRequest { config: cfg.clone(), mode: RashomonMode::Candidates, class: ModelClass::Plain, regime: None, repetition: 0, threads: 0 })
        .await
        .unwrap();
    assert!(cand.bundle.models.len() == cand.bundle.set.members.len());

    let done = c
        .run(&ExperimentRequest { config: cfg.clone(), threads: 1, stage: RunStage::All, predictions: None }, Duration::from_millis(50), |_| {})
        .await
        .unwrap();
    assert_eq!(done.state, JobState::Succeeded, "{:?}", done.error);
    let result = done.result.unwrap();
    let report = result.report.unwrap();
    let preds = result.predictions.unwrap();

    // re-analysis over the wire reproduces the report
    let again = c.analyze(&AnalyzeRequest { config: cfg.clone(), predictions: preds.clone() }).await.unwrap();
    assert_eq!(again.report_hash, report.report_hash);

    let analyzed = c
        .run(
            &ExperimentRequest { config: cfg.clone(), threads: 1, stage: RunStage::Analyze, predictions: Some(preds) },
            Duration::from_millis(20),
            |_| {},
        )
        .await
        .unwrap();
    assert_eq!(analyzed.result.unwrap().report.unwrap().report_hash, report.report_hash);

    let missing = c.run(&ExperimentRequest { config: cfg, threads: 1, stage: RunStage::Analyze, predictions: None }, Duration::from_millis(20), |_| {}).await.unwrap();
    assert_eq!(missing.state, JobState::Failed);
    assert_eq!(missing.error.unwrap().kind, ErrorKind::BadRequest);
}
