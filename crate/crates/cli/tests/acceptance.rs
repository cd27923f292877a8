//! Acceptance suite. Each test covers one release criterion and prints a
//! single `ACCEPTANCE <name>: PASS` / `FAIL` line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::collections::HashSet;
use std::panic::AssertUnwindSafe;
use std::rc::Rc;
use std::time::Instant;

use ddhm_cli::synth::{generate, SynthSpec};
use ddhm_core::conv::{conv1d_valid, ConvExtractor};
use ddhm_core::forest::{best_split, fit_forest, ForestConfig, Split};
use ddhm_core::gate::{classify_flow, decide, serve_stream, GatePolicy};
use ddhm_core::ingest::{clean_and_encode, load_csv_reader, ColumnSpec, FlowTable};
use ddhm_core::metrics::{accuracy, macro_report, precision_recall_f1, BoxError, ConfusionMatrix};
use ddhm_core::mlp::{init_layers, MlpModel, TrainLog};
use ddhm_core::pipeline::{crossval_all, evaluate_all};
use ddhm_core::rng::Xorshift64Star;
use ddhm_core::stack::{fit_hybrid, oof_meta_features, BaseLearner, BaseModel, HybridConfig};
use ddhm_core::store::{deserialize_model, serialize_model};

fn criterion(name: &str, f: impl FnOnce()) {
    match std::panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(()) => println!("ACCEPTANCE {name}: PASS"),
        Err(cause) => {
            println!("ACCEPTANCE {name}: FAIL");
            std::panic::resume_unwind(cause);
        }
    }
}

/// Frozen after a reference run of this pipeline: separation 8 keeps every
/// model comfortably above the 0.95 bar across seeds 1..=5.
fn synth_table(seed: u64) -> FlowTable {
    let spec = SynthSpec {
        separation: 8.0,
        seed,
        ..SynthSpec::default()
    };
    let csv = generate(&spec).unwrap();
    let columns = ColumnSpec::new(
        (0..spec.dims).map(|j| format!("f{j:02}")).collect(),
        "Label".into(),
        vec![],
    )
    .unwrap();
    let raw = load_csv_reader(csv.as_bytes(), &columns).unwrap();
    let (table, _) = clean_and_encode(&raw, &columns).unwrap();
    table
}

/// Reference hyperparameters for the synthetic benchmark, frozen alongside
/// the thresholds.
fn benchmark_cfg() -> HybridConfig {
    let mut cfg = HybridConfig::default();
    cfg.filter_count = 32;
    cfg.forest.tree_count = 50;
    cfg.mlp.learning_rate = 0.05;
    cfg.mlp.epochs = 200;
    cfg
}

#[test]
fn synthetic_end_to_end() {
    criterion("synthetic-end-to-end", || {
        let started = Instant::now();
        let cfg = benchmark_cfg();
        for seed in 1..=5u64 {
            let table = synth_table(seed);
            // data property backing the benchmark: one depth-3 tree on the
            // raw features already separates the blobs
            let tree_cfg = ForestConfig {
                tree_count: 1,
                max_depth: Some(3),
                bootstrap: false,
                features_per_split: Some(table.feature_count()),
                ..ForestConfig::default()
            };
            let split = ddhm_core::preprocess::train_test_split(table.row_count(), 0.8, 42).unwrap();
            let tr =
                |idx: &[usize]| -> Vec<Vec<f64>> { idx.iter().map(|&i| table.features[i].clone()).collect() };
            let train_y: Vec<usize> = split.train_idx.iter().map(|&i| table.labels[i]).collect();
            let test_y: Vec<usize> = split.test_idx.iter().map(|&i| table.labels[i]).collect();
            let tree = fit_forest(&tr(&split.train_idx), &train_y, table.class_count(), &tree_cfg)
                .unwrap();
            let cm = ConfusionMatrix::from_predictions(
                &test_y,
                &tree.predict(&tr(&split.test_idx)).unwrap(),
                table.class_count(),
            )
            .unwrap();
            assert!(
                accuracy(&cm).unwrap() > 0.9,
                "depth-3 tree below 0.9 on seed {seed}"
            );

            let (rows, _, _) = evaluate_all(&table, 0.8, 42, false, &cfg).unwrap();
            let acc: BTreeMap<&str, f64> = rows
                .iter()
                .map(|(name, report)| (name.as_str(), report.accuracy))
                .collect();
            for (model, a) in &acc {
                assert!(*a >= 0.95, "seed {seed}: {model} accuracy {a} < 0.95");
            }
            let base_max = acc["rf"].max(acc["mlp"]);
            assert!(
                acc["hybrid"] >= base_max - 0.02,
                "seed {seed}: hybrid {} < max(base) {} - 0.02",
                acc["hybrid"],
                base_max
            );
        }
        let elapsed = started.elapsed();
        assert!(
            elapsed.as_secs_f64() < 120.0,
            "end-to-end took {elapsed:?}, budget 2 minutes"
        );
    });
}

#[test]
fn mlp_gradient_check() {
    criterion("mlp-gradient-check", || {
        let started = Instant::now();
        let mut rng = Xorshift64Star::new(99);
        let mut max_rel = 0.0f64;
        for _ in 0..20 {
            let input_dim = 2 + rng.next_below(4) as usize;
            let hidden: Vec<usize> = (0..1 + rng.next_below(2))
                .map(|_| 2 + rng.next_below(6) as usize)
                .collect();
            let class_count = 2 + rng.next_below(3) as usize;
            let model = MlpModel {
                layers: init_layers(input_dim, &hidden, class_count, &mut rng),
                input_dim,
                class_count,
                train_log: TrainLog::default(),
            };
            // resample inputs whose hidden pre-activations sit on the ReLU
            // kink, where the loss is not differentiable and finite
            // differences disagree with any subgradient
            let x: Vec<f64> = loop {
                let candidate: Vec<f64> =
                    (0..input_dim).map(|_| rng.uniform(-2.0, 2.0)).collect();
                let cache = model.forward(&candidate).unwrap();
                let off_kink = cache
                    .pre()
                    .iter()
                    .take(model.layers.len() - 1)
                    .all(|layer| layer.iter().all(|&v| v.abs() > 1e-3));
                if off_kink {
                    break candidate;
                }
            };
            let target = rng.next_below(class_count) as usize;

            let cache = model.forward(&x).unwrap();
            let error = model.output_error(cache.probs(), target).unwrap();
            let analytic = model.backward(&cache, &error).unwrap();

            let h = 1e-5;
            let loss = |m: &MlpModel| -> f64 { -m.forward(&x).unwrap().probs()[target].ln() };
            for l in 0..model.layers.len() {
                for w in 0..model.layers[l].weights.len() {
                    let mut plus = model.clone();
                    plus.layers[l].weights[w] += h;
                    let mut minus = model.clone();
                    minus.layers[l].weights[w] -= h;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let a = analytic[l].d_weights[w];
                    let rel = (a - numeric).abs() / f64::max(1e-6, a.abs() + numeric.abs());
                    max_rel = max_rel.max(rel);
                }
                for b in 0..model.layers[l].biases.len() {
                    let mut plus = model.clone();
                    plus.layers[l].biases[b] += h;
                    let mut minus = model.clone();
                    minus.layers[l].biases[b] -= h;
                    let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                    let a = analytic[l].d_biases[b];
                    let rel = (a - numeric).abs() / f64::max(1e-6, a.abs() + numeric.abs());
                    max_rel = max_rel.max(rel);
                }
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
        let elapsed = started.elapsed();
        assert!(elapsed.as_secs() < 10, "gradient check took {elapsed:?}");
    });
}

#[test]
fn metrics_oracle() {
    criterion("metrics-oracle", || {
        let mut rng = Xorshift64Star::new(4242);
        for _ in 0..1000 {
            let class_count = 2 + rng.next_below(5) as usize;
            let n = 1 + rng.next_below(200) as usize;
            let y_true: Vec<usize> =
                (0..n).map(|_| rng.next_below(class_count) as usize).collect();
            let y_pred: Vec<usize> =
                (0..n).map(|_| rng.next_below(class_count) as usize).collect();
            let cm = ConfusionMatrix::from_predictions(&y_true, &y_pred, class_count).unwrap();

            let correct = y_true.iter().zip(&y_pred).filter(|(t, p)| t == p).count();
            assert_eq!(accuracy(&cm).unwrap(), correct as f64 / n as f64);

            for class in 0..class_count {
                let tp = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|&(&t, &p)| t == class && p == class)
                    .count();
                let fp = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|&(&t, &p)| t != class && p == class)
                    .count();
                let fn_ = y_true
                    .iter()
                    .zip(&y_pred)
                    .filter(|&(&t, &p)| t == class && p != class)
                    .count();
                let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
                let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
                let f1 = if precision + recall == 0.0 {
                    0.0
                } else {
                    2.0 * precision * recall / (precision + recall)
                };
                let (p, r, f) = precision_recall_f1(&cm, class).unwrap();
                assert_eq!((p, r, f), (precision, recall, f1));
            }
        }

        // worked example: binary, positive class 1, TP=8 TN=5 FP=2 FN=1
        let mut y_true = Vec::new();
        let mut y_pred = Vec::new();
        for _ in 0..8 {
            y_true.push(1);
            y_pred.push(1);
        }
        for _ in 0..5 {
            y_true.push(0);
            y_pred.push(0);
        }
        for _ in 0..2 {
            y_true.push(0);
            y_pred.push(1);
        }
        y_true.push(1);
        y_pred.push(0);
        let cm = ConfusionMatrix::from_predictions(&y_true, &y_pred, 2).unwrap();
        assert!((accuracy(&cm).unwrap() - 0.8125).abs() < 1e-12);
        let (p, r, f) = precision_recall_f1(&cm, 1).unwrap();
        assert!((p - 0.8).abs() < 1e-12);
        assert!((r - 0.888889).abs() < 1e-6);
        assert!((f - 0.842105).abs() < 1e-6);
    });
}

/// Exhaustive reference for best_split: every feature, every midpoint
/// between consecutive distinct sorted values, smallest weighted Gini with
/// ties to the smaller threshold then the smaller feature index.
fn best_split_reference(
    x: &[Vec<f64>],
    y: &[usize],
    indices: &[usize],
    candidates: &[usize],
    class_count: usize,
) -> Option<Split> {
    // identical arithmetic to the implementation so equality is exact
    let gini_of = |members: &[usize]| -> f64 {
        let mut counts = vec![0usize; class_count];
        for &i in members {
            counts[y[i]] += 1;
        }
        let n = members.len() as f64;
        1.0 - counts
            .iter()
            .map(|&c| {
                let p = c as f64 / n;
                p * p
            })
            .sum::<f64>()
    };
    if indices.len() < 2 || gini_of(indices) == 0.0 {
        return None;
    }
    let parent = gini_of(indices);
    let mut best: Option<Split> = None;
    for &feature in candidates {
        let mut values: Vec<f64> = indices.iter().map(|&i| x[i][feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let threshold = 0.5 * (pair[0] + pair[1]);
            let left: Vec<usize> =
                indices.iter().copied().filter(|&i| x[i][feature] <= threshold).collect();
            let right: Vec<usize> =
                indices.iter().copied().filter(|&i| x[i][feature] > threshold).collect();
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let n = indices.len() as f64;
            let weighted = (left.len() as f64 * gini_of(&left)
                + right.len() as f64 * gini_of(&right))
                / n;
            if weighted >= parent {
                continue;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    weighted < b.weighted_gini
                        || (weighted == b.weighted_gini
                            && (threshold < b.threshold
                                || (threshold == b.threshold && feature < b.feature)))
                }
            };
            if better {
                best = Some(Split {
                    feature,
                    threshold,
                    weighted_gini: weighted,
                });
            }
        }
    }
    best
}

#[test]
fn forest_oracles() {
    criterion("forest-oracles", || {
        let mut rng = Xorshift64Star::new(77);
        // best_split vs exhaustive enumeration on 100 random small datasets
        for _ in 0..100 {
            let n = 2 + rng.next_below(19) as usize;
            let d = 1 + rng.next_below(4) as usize;
            let class_count = 2 + rng.next_below(2) as usize;
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.next_below(5) as f64).collect())
                .collect();
            let y: Vec<usize> = (0..n).map(|_| rng.next_below(class_count) as usize).collect();
            let indices: Vec<usize> = (0..n).collect();
            let candidates: Vec<usize> = (0..d).collect();
            let got = best_split(&x, &y, &indices, &candidates, class_count);
            let want = best_split_reference(&x, &y, &indices, &candidates, class_count);
            assert_eq!(got, want);
        }

        // majority vote vs brute-force counting for small forests
        let table = synth_table(3);
        let x = &table.features[..300];
        let y = &table.labels[..300];
        for trees in 1..=5usize {
            let cfg = ForestConfig {
                tree_count: trees,
                max_depth: Some(4),
                ..ForestConfig::default()
            };
            let forest = fit_forest(x, y, table.class_count(), &cfg).unwrap();
            let pred = forest.predict(&x.to_vec()).unwrap();
            for (row, &got) in x.iter().zip(&pred) {
                let mut votes = vec![0usize; table.class_count()];
                for tree in &forest.trees {
                    votes[tree.predict_row(row)] += 1;
                }
                let best = votes
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0;
                assert_eq!(got, best);
            }
        }

        // a single-tree forest is its tree
        let cfg = ForestConfig {
            tree_count: 1,
            ..ForestConfig::default()
        };
        let forest = fit_forest(x, y, table.class_count(), &cfg).unwrap();
        for row in x.iter().take(100) {
            assert_eq!(
                forest.predict(&[row.clone()]).unwrap()[0],
                forest.trees[0].predict_row(row)
            );
        }
    });
}

#[test]
fn conv_oracle() {
    criterion("conv-oracle", || {
        // worked example
        assert_eq!(
            conv1d_valid(&[3.0, 1.0, 4.0, 1.0, 5.0], &[1.0, 0.0, -1.0], 0.0).unwrap(),
            vec![-1.0, 0.0, -1.0]
        );

        // triple-loop reference on random 5x8 inputs, F=2, N=3
        let mut rng = Xorshift64Star::new(11);
        let extractor = ConvExtractor::init(5, 2, 3).unwrap();
        let samples: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..8).map(|_| rng.uniform(-3.0, 3.0)).collect())
            .collect();
        let got = extractor.extract_features(&samples).unwrap();
        for (sample, out_row) in samples.iter().zip(&got) {
            for (f, kernel) in extractor.weights().iter().enumerate() {
                let positions = sample.len() - kernel.len() + 1;
                let mut pooled = 0.0;
                for i in 0..positions {
                    let mut v = extractor.biases()[f];
                    for (j, w) in kernel.iter().enumerate() {
                        v += sample[i + j] * w;
                    }
                    pooled += v.max(0.0);
                }
                pooled /= positions as f64;
                assert!((out_row[f] - pooled).abs() < 1e-12);
            }
        }
    });
}

struct InstrumentedLearner {
    violations: Rc<RefCell<usize>>,
}

struct InstrumentedModel {
    train_rows: HashSet<Vec<u64>>,
    class_count: usize,
    violations: Rc<RefCell<usize>>,
}

fn row_bits(row: &[f64]) -> Vec<u64> {
    row.iter().map(|v| v.to_bits()).collect()
}

impl BaseLearner for InstrumentedLearner {
    fn fit(
        &self,
        x: &[Vec<f64>],
        _y: &[usize],
        class_count: usize,
        _seed: u64,
    ) -> Result<Box<dyn BaseModel>, BoxError> {
        Ok(Box::new(InstrumentedModel {
            train_rows: x.iter().map(|r| row_bits(r)).collect(),
            class_count,
            violations: Rc::clone(&self.violations),
        }))
    }
}

impl BaseModel for InstrumentedModel {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BoxError> {
        for row in x {
            if self.train_rows.contains(&row_bits(row)) {
                *self.violations.borrow_mut() += 1;
            }
        }
        Ok(vec![vec![1.0 / self.class_count as f64; self.class_count]; x.len()])
    }
}

/// Memorizes its training rows exactly; anything unseen gets a uniform
/// distribution, so out-of-fold predictions can only be at chance.
struct MemorizerLearner;

struct MemorizerModel {
    memory: std::collections::HashMap<Vec<u64>, usize>,
    class_count: usize,
}

impl BaseLearner for MemorizerLearner {
    fn fit(
        &self,
        x: &[Vec<f64>],
        y: &[usize],
        class_count: usize,
        _seed: u64,
    ) -> Result<Box<dyn BaseModel>, BoxError> {
        Ok(Box::new(MemorizerModel {
            memory: x.iter().map(|r| row_bits(r)).zip(y.iter().copied()).collect(),
            class_count,
        }))
    }
}

impl BaseModel for MemorizerModel {
    fn predict_proba(&self, x: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, BoxError> {
        Ok(x.iter()
            .map(|row| match self.memory.get(&row_bits(row)) {
                Some(&class) => {
                    let mut p = vec![0.0; self.class_count];
                    p[class] = 1.0;
                    p
                }
                None => vec![1.0 / self.class_count as f64; self.class_count],
            })
            .collect())
    }
}

#[test]
fn stacking_no_leakage() {
    criterion("stacking-no-leakage", || {
        let table = synth_table(4);
        let x = &table.features[..600];
        let class_count = table.class_count();

        // every out-of-fold row must be unseen by its producing model
        let violations = Rc::new(RefCell::new(0usize));
        let learner = InstrumentedLearner {
            violations: Rc::clone(&violations),
        };
        let learners: [&dyn BaseLearner; 1] = [&learner];
        oof_meta_features(x, &table.labels[..600], class_count, &learners, 5, 42).unwrap();
        assert_eq!(*violations.borrow(), 0, "models scored their own rows");

        // a perfect memorizer stays at chance on shuffled labels
        let mut shuffled: Vec<usize> = table.labels[..600].to_vec();
        let mut rng = Xorshift64Star::new(5);
        rng.shuffle(&mut shuffled);
        let learners: [&dyn BaseLearner; 1] = [&MemorizerLearner];
        let meta = oof_meta_features(x, &shuffled, class_count, &learners, 5, 42).unwrap();
        let pred: Vec<usize> = meta
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(&a.0)))
                    .unwrap()
                    .0
            })
            .collect();
        let hits = pred.iter().zip(&shuffled).filter(|(p, t)| p == t).count();
        let n = shuffled.len() as f64;
        let p = 1.0 / class_count as f64;
        let sigma = (p * (1.0 - p) / n).sqrt();
        let observed = hits as f64 / n;
        assert!(
            (observed - p).abs() <= 3.0 * sigma,
            "memorizer accuracy {observed} vs chance {p} (3 sigma {})",
            3.0 * sigma
        );
    });
}

#[test]
fn cv_fold_spread() {
    criterion("cv-fold-spread", || {
        let table = synth_table(1);
        let mut cfg = benchmark_cfg();
        cfg.forest.tree_count = 30;
        cfg.mlp.epochs = 100;
        let rows = crossval_all(&table, 5, 42, true, &cfg).unwrap();
        let hybrid = rows
            .iter()
            .find(|(name, _)| name == "hybrid")
            .map(|(_, cv)| cv)
            .unwrap();
        assert_eq!(hybrid.fold_accuracies.len(), 5);
        let max = hybrid.fold_accuracies.iter().cloned().fold(f64::MIN, f64::max);
        let min = hybrid.fold_accuracies.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            max - min <= 0.05,
            "hybrid fold spread {} > 0.05 (folds {:?})",
            max - min,
            hybrid.fold_accuracies
        );
    });
}

fn small_model() -> (ddhm_core::stack::HybridModel, FlowTable) {
    let table = synth_table(2);
    let mut cfg = benchmark_cfg();
    cfg.forest.tree_count = 20;
    cfg.mlp.epochs = 40;
    let (model, _) = fit_hybrid(&table, 0.8, 42, false, &cfg).unwrap();
    (model, table)
}

#[test]
fn persistence_round_trip() {
    criterion("persistence-round-trip", || {
        let (model, table) = small_model();
        let bytes = serialize_model(&model);

        // file round trip
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ddhm");
        ddhm_core::store::save(&model, &path).unwrap();
        let from_file = ddhm_core::store::load(&path).unwrap();

        let rows: Vec<Vec<f64>> = table.features.iter().take(1000).cloned().collect();
        let restored = deserialize_model(&bytes).unwrap();
        let (pred_a, proba_a) = model.predict(&rows).unwrap();
        let (pred_b, proba_b) = restored.predict(&rows).unwrap();
        let (pred_c, proba_c) = from_file.predict(&rows).unwrap();
        assert_eq!(pred_a, pred_b);
        assert_eq!(pred_a, pred_c);
        for ((a, b), c) in proba_a.iter().zip(&proba_b).zip(&proba_c) {
            for ((&va, &vb), &vc) in a.iter().zip(b).zip(c) {
                assert_eq!(va.to_bits(), vb.to_bits());
                assert_eq!(va.to_bits(), vc.to_bits());
            }
        }

        // any single-byte corruption is detected
        let mut rng = Xorshift64Star::new(6);
        for _ in 0..50 {
            let mut corrupted = bytes.clone();
            let pos = rng.next_below(corrupted.len()) as usize;
            let flip = 1u8 << rng.next_below(8);
            corrupted[pos] ^= flip;
            assert!(
                deserialize_model(&corrupted).is_err(),
                "flip at byte {pos} not detected"
            );
        }
    });
}

fn record_json(table: &FlowTable, id: &str, row: &[f64]) -> String {
    let features: BTreeMap<&str, f64> = table
        .column_spec
        .feature_columns
        .iter()
        .map(String::as_str)
        .zip(row.iter().copied())
        .collect();
    serde_json::to_string(&serde_json::json!({ "id": id, "features": features })).unwrap()
}

#[test]
fn gatekeeper_contract() {
    criterion("gatekeeper-contract", || {
        let (model, table) = small_model();
        let policy = GatePolicy::default_for(
            &model.codec.classes().to_vec(),
            &["BENIGN".to_string()],
        );

        // 10k-row replay: streaming verdicts equal offline classification
        let rows: Vec<&Vec<f64>> = table.features.iter().cycle().take(10_000).collect();
        let input: String = rows
            .iter()
            .enumerate()
            .map(|(i, row)| record_json(&table, &i.to_string(), row) + "\n")
            .collect();
        let mut out = Vec::new();
        let summary = serve_stream(input.as_bytes(), &mut out, &model, &policy).unwrap();
        assert_eq!(summary.records, 10_000);
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 10_000);
        for (line, row) in text.lines().zip(&rows) {
            let verdict: ddhm_core::gate::VerdictRecord = serde_json::from_str(line).unwrap();
            let (label, confidence) = classify_flow(&model, row).unwrap();
            let (action, reason) = decide(&policy, &label, confidence, None);
            assert_eq!(verdict.class, label);
            assert_eq!(verdict.confidence.to_bits(), confidence.to_bits());
            assert_eq!(verdict.action, action);
            assert_eq!(verdict.reason, reason);
        }
        println!(
            "gatekeeper throughput: {:.0} records/s (soft target 5000, report-only)",
            summary.records_per_sec
        );

        // random-byte fuzz: one verdict per line, no crash
        let mut rng = Xorshift64Star::new(13);
        let mut fuzz = Vec::new();
        for _ in 0..10_000 {
            let len = rng.next_below(60) as usize;
            for _ in 0..len {
                let mut b = rng.next_below(256) as u8;
                if b == b'\n' {
                    b = b' ';
                }
                fuzz.push(b);
            }
            fuzz.push(b'\n');
        }
        let mut out = Vec::new();
        let summary = serve_stream(fuzz.as_slice(), &mut out, &model, &policy).unwrap();
        assert_eq!(summary.records, 10_000);
        assert_eq!(out.iter().filter(|&&b| b == b'\n').count(), 10_000);
    });
}

/// Indicative replication against captured traffic: enabled only when the
/// DDHM_CICDDOS2019 environment variable points at a labeled flow CSV.
#[test]
fn captured_dataset_indicative() {
    criterion("captured-dataset-indicative", || {
        let Ok(path) = std::env::var("DDHM_CICDDOS2019") else {
            println!(
                "ACCEPTANCE captured-dataset-indicative: SKIP (set DDHM_CICDDOS2019 to a flow CSV)"
            );
            return;
        };
        let cfg = ddhm_cli::config::RunConfig::default();
        let (table, clean) = ddhm_cli::commands::load_table(std::path::Path::new(&path), &cfg)
            .expect("loading captured dataset");
        println!("captured dataset: kept {} of {} rows", clean.rows_out, clean.rows_in);

        // stratified subsample to at most 100k rows
        let cap = 100_000usize;
        let table = if table.row_count() > cap {
            let keep_every = table.row_count().div_ceil(cap);
            let mut per_class_seen: BTreeMap<usize, usize> = BTreeMap::new();
            let mut features = Vec::new();
            let mut labels = Vec::new();
            for (row, &label) in table.features.iter().zip(&table.labels) {
                let seen = per_class_seen.entry(label).or_insert(0);
                if *seen % keep_every == 0 {
                    features.push(row.clone());
                    labels.push(label);
                }
                *seen += 1;
            }
            FlowTable {
                features,
                labels,
                codec: table.codec.clone(),
                column_spec: table.column_spec.clone(),
            }
        } else {
            table
        };

        let (rows, _, _) = evaluate_all(&table, 0.8, 42, true, &HybridConfig::default()).unwrap();
        let acc: BTreeMap<&str, f64> = rows
            .iter()
            .map(|(name, report)| (name.as_str(), report.accuracy))
            .collect();
        println!(
            "captured dataset accuracies: rf {:.4} mlp {:.4} hybrid {:.4}",
            acc["rf"], acc["mlp"], acc["hybrid"]
        );
        assert!(acc["hybrid"] >= 0.88);
        assert!(acc["hybrid"] >= acc["rf"] - 0.01);
        assert!(acc["hybrid"] >= acc["mlp"] - 0.01);
    });
}

#[test]
fn report_rows_and_schema() {
    criterion("report-rows-and-schema", || {
        let table = synth_table(1);
        let mut cfg = benchmark_cfg();
        cfg.forest.tree_count = 20;
        cfg.mlp.epochs = 40;
        let (rows, _, _) = evaluate_all(&table, 0.8, 42, false, &cfg).unwrap();
        let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, ["rf", "mlp", "hybrid"]);
        for (_, report) in &rows {
            // MetricsReport invariants: all rates in [0, 1], macro values
            // are means of the per-class values
            for value in [
                report.accuracy,
                report.precision_macro,
                report.recall_macro,
                report.f1_macro,
            ] {
                assert!((0.0..=1.0).contains(&value));
            }
            let c = report.per_class.len() as f64;
            let mean_p: f64 = report.per_class.iter().map(|m| m.precision).sum::<f64>() / c;
            assert!((mean_p - report.precision_macro).abs() < 1e-12);
            let again = macro_report(
                &ConfusionMatrix::from_predictions(&[0, 1], &[0, 1], 2).unwrap(),
            )
            .unwrap();
            assert_eq!(again.accuracy, 1.0);
        }
    });
}
