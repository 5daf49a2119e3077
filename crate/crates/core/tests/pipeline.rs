use deferral_core::audit::{append_audit, read_audit};
use deferral_core::io::write_jsonl;
use deferral_core::metrics::error_audit;
use deferral_core::router::{route_batch, route_record, BatchMode, FixedClock, ModelIdentity};
use deferral_core::sweep::{run_sweep, select_operating_point, ThresholdGrid};
use deferral_core::toydata::{generate, predict_toy, train_toy, Category, DatasetExample, GenConfig, TrainConfig};
use deferral_core::{
    validate_distribution, CostMatrix, DecisionLabel, PolicyRegistry, PredictionRecord, ThresholdPolicy, Thresholds,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use DecisionLabel::{No, Tbd, Yes};

fn random_records(seed: u64, n: usize) -> Vec<PredictionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let w: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let s: f64 = w.iter().sum();
            let d = validate_distribution(w[0] / s, w[1] / s, w[2] / s).unwrap();
            let gold = DecisionLabel::ALL[rng.gen_range(0..3)];
            PredictionRecord::new(format!("r{i:05}"), d, Some(gold), None).unwrap()
        })
        .collect()
}

fn ops_policy() -> ThresholdPolicy {
    ThresholdPolicy::new(
        "ops",
        "1",
        Thresholds {
            yes: 0.55,
            no: 0.55,
            tbd: 0.0,
        },
        Some(0.05),
        Vec::new(),
    )
    .unwrap()
}

#[test]
fn batch_routing_is_byte_deterministic() {
    let records = random_records(1, 10_000);
    let model = ModelIdentity::new("toy", "v1").unwrap();
    let clock = FixedClock("2026-03-01T12:00:00Z".parse().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for run in 0..2 {
        let out = route_batch(&records, &ops_policy(), &model, &clock, BatchMode::Strict).unwrap();
        let path = dir.path().join(format!("audit-{run}.jsonl"));
        assert_eq!(append_audit(&path, &out.audit).unwrap(), 10_000);
        files.push(std::fs::read(&path).unwrap());

        let decisions = dir.path().join(format!("decisions-{run}.jsonl"));
        write_jsonl(&decisions, &out.decisions).unwrap();
        files.push(std::fs::read(&decisions).unwrap());
    }
    assert_eq!(files[0], files[2]);
    assert_eq!(files[1], files[3]);

    let back = read_audit(dir.path().join("audit-0.jsonl")).unwrap();
    assert_eq!(back.len(), 10_000);
    let mut registry = PolicyRegistry::new();
    registry.register(ops_policy()).unwrap();
    assert!(deferral_core::replay(&back, &registry).unwrap().is_clean());
}

/// Builds a record whose argmax is `pred` with the given confidence.
fn confident(id: String, pred: DecisionLabel, conf: f64, gold: DecisionLabel) -> PredictionRecord {
    let rest = (1.0 - conf) / 2.0;
    let mut p = [rest; 3];
    p[pred.index()] = conf;
    PredictionRecord::new(id, validate_distribution(p[0], p[1], p[2]).unwrap(), Some(gold), None).unwrap()
}

#[test]
fn error_audit_recovers_planted_errors() {
    let planted = [(Yes, No, 60u64), (No, Yes, 40), (Tbd, Yes, 30), (Yes, Tbd, 45), (No, Tbd, 25)];
    let mut records = Vec::new();
    for &(gold, pred, count) in &planted {
        for i in 0..count {
            records.push(confident(format!("{gold}-{pred}-{i}"), pred, 0.7, gold));
        }
    }
    for i in 0..300 {
        let l = DecisionLabel::ALL[i % 3];
        records.push(confident(format!("ok-{i}"), l, 0.8, l));
    }
    let argmax = ThresholdPolicy::argmax("argmax", "1");
    let decisions: Vec<_> = records.iter().map(|r| route_record(r, &argmax).unwrap()).collect();
    let stats = error_audit(&records, &decisions).unwrap();
    assert_eq!(stats.total_errors(), 200);
    assert_eq!(stats.n, 500);
    for &(gold, pred, count) in &planted {
        let cat = stats.get(gold, pred).unwrap();
        assert_eq!(cat.count, count);
        assert!((cat.mean_confidence - 0.7).abs() < 1e-12);
    }
    assert!(stats.get(No, Yes).is_some() && stats.get(Tbd, No).is_none());
}

fn toy_predictions() -> Vec<PredictionRecord> {
    let data = generate(&GenConfig::with_total(4000).with_label_noise(0.1), 42).unwrap();
    let (train, test) = data.split_at(2500);
    let config = TrainConfig {
        feature_dim: 4096,
        ..TrainConfig::default()
    };
    predict_toy(&train_toy(train, &config).unwrap(), test).unwrap()
}

#[test]
fn expensive_false_yes_raises_tau_yes() {
    let records = toy_predictions();
    let taus: Vec<f64> = (0..13).map(|k| 0.34 + 0.05 * k as f64).collect();
    let grid = ThresholdGrid::independent(taus.clone(), taus);
    let zero_one = CostMatrix::zero_one();
    let mut rows = CostMatrix::zero_one().rows();
    rows[No.index()][Yes.index()] = 20.0;
    rows[Tbd.index()][Yes.index()] = 20.0;
    let costly_yes = CostMatrix::new(rows).unwrap();

    let table = run_sweep(&records, &grid, Some(&zero_one), "toy").unwrap();
    let baseline = select_operating_point(&table, &zero_one, &records).unwrap();
    let penalized = select_operating_point(&table, &costly_yes, &records).unwrap();
    assert!(
        penalized.tau_yes > baseline.tau_yes,
        "penalized {} vs baseline {}",
        penalized.tau_yes,
        baseline.tau_yes
    );
}

#[test]
fn hedged_policy_pair_defers() {
    let data = generate(&GenConfig::with_total(6000), 42).unwrap();
    let model = train_toy(&data, &TrainConfig::default()).unwrap();
    let pair = DatasetExample {
        id: "example".into(),
        premise: "the policy may allow expedited review in limited cases".into(),
        hypothesis: "the request is approved".into(),
        gold: Tbd,
        category: Category::HedgeModal,
        noisy: false,
    };
    let pred = &predict_toy(&model, &[pair]).unwrap()[0];
    assert_eq!(pred.dist.argmax(), Tbd, "{:?}", pred.dist);
    let routed = route_record(pred, &ops_policy()).unwrap();
    assert_eq!(routed.routing.routed, Tbd);
}
