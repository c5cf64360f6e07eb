use expoloss::data::{gen_gaussians, normalize_unit_ball};
use expoloss::losses::{BaseLoss, LossSpec};
use expoloss::model::{Model, ModelSpec};
use expoloss::optim::{effective_e, evaluate, train, OptimizerConfig, TrainConfig};
use expoloss::TransformParams;

fn logistic(e: f64) -> LossSpec {
    LossSpec::new(BaseLoss::Logistic, TransformParams::new(e, 0.005).unwrap())
}

fn config(
    loss: LossSpec,
    optimizer: OptimizerConfig,
    epochs: usize,
    batch: usize,
    seed: u64,
) -> TrainConfig {
    TrainConfig {
        loss,
        model: ModelSpec::Linear { bias: true },
        optimizer,
        batch_size: batch,
        total_epochs: epochs,
        warmup_fraction: 0.1,
        seed,
        projection_radius: None,
    }
}

#[test]
fn separable_data_is_learned() {
    // separation 12 leaves no overlap in practice
    let train_set = gen_gaussians(200, 2, 12.0, 3).unwrap();
    let test_set = gen_gaussians(200, 2, 12.0, 4).unwrap();
    let cfg = config(logistic(1.0), OptimizerConfig::sgd(0.1), 50, 16, 1);
    let res = train(&cfg, &train_set, &test_set).unwrap();
    assert!(
        res.final_metrics().train_acc >= 0.99,
        "{:?}",
        res.final_metrics()
    );
}

#[test]
fn identical_runs_are_bit_identical() {
    let train_set = gen_gaussians(100, 3, 2.0, 5).unwrap();
    let test_set = gen_gaussians(100, 3, 2.0, 6).unwrap();
    for opt in [OptimizerConfig::sgd(0.05), OptimizerConfig::adam(0.01)] {
        let mut cfg = config(logistic(0.6), opt, 10, 8, 9);
        cfg.model = ModelSpec::Mlp { hidden: vec![6] };
        let a = train(&cfg, &train_set, &test_set).unwrap();
        let b = train(&cfg, &train_set, &test_set).unwrap();
        assert_eq!(
            serde_json::to_string(&a.epochs).unwrap(),
            serde_json::to_string(&b.epochs).unwrap()
        );
        assert_eq!(a.model, b.model);
    }
}

#[test]
fn zero_learning_rate_keeps_initial_model() {
    let train_set = gen_gaussians(50, 2, 2.0, 1).unwrap();
    for opt in [OptimizerConfig::sgd(0.0), OptimizerConfig::adam(0.0)] {
        let cfg = config(logistic(0.6), opt, 5, 7, 2);
        let res = train(&cfg, &train_set, &train_set).unwrap();
        assert_eq!(res.model, res.initial_model);
    }
}

#[test]
fn full_batch_step_decreases_risk() {
    for seed in 0..20u64 {
        let train_set = gen_gaussians(100, 2, 2.0, 100 + seed).unwrap();
        for e in [1.0, 0.6] {
            let mut cfg = config(
                logistic(e),
                OptimizerConfig::sgd(1e-4),
                1,
                train_set.len(),
                seed,
            );
            cfg.warmup_fraction = 0.0;
            let res = train(&cfg, &train_set, &train_set).unwrap();
            let before = evaluate(&res.initial_model, &cfg.loss, &train_set)
                .unwrap()
                .0;
            let after = evaluate(&res.model, &cfg.loss, &train_set).unwrap().0;
            assert!(after <= before, "seed={seed} e={e}: {before} -> {after}");
        }
    }
}

#[test]
fn projection_keeps_weights_in_ball() {
    let train_set = normalize_unit_ball(&gen_gaussians(100, 2, 6.0, 8).unwrap());
    for m in [0.5, 1.0, 2.0] {
        for epochs in 1..=6 {
            let mut cfg = config(logistic(1.0), OptimizerConfig::sgd(5.0), epochs, 4, 3);
            cfg.model = ModelSpec::Linear { bias: false };
            cfg.projection_radius = Some(m);
            let res = train(&cfg, &train_set, &train_set).unwrap();
            for model in [&res.initial_model, &res.model] {
                let Model::Linear(lin) = model else {
                    unreachable!()
                };
                assert!(
                    lin.norm() <= m + 1e-12,
                    "M={m} epochs={epochs}: {}",
                    lin.norm()
                );
            }
        }
    }
}

#[test]
fn warmup_trace() {
    let mut cfg = config(logistic(0.6), OptimizerConfig::sgd(0.1), 50, 10, 0);
    let trace: Vec<f64> = (0..50).map(|ep| effective_e(ep, &cfg).unwrap()).collect();
    assert!(trace[..5].iter().all(|&e| e == 1.0));
    assert!(trace[5..].iter().all(|&e| e == 0.6));

    cfg.warmup_fraction = 0.0;
    assert_eq!(effective_e(0, &cfg).unwrap(), 0.6);
    cfg.loss = logistic(1.0);
    assert!((0..50).all(|ep| effective_e(ep, &cfg).unwrap() == 1.0));
    assert!(effective_e(50, &cfg).is_err());

    let train_set = gen_gaussians(20, 2, 2.0, 0).unwrap();
    let cfg = config(logistic(0.75), OptimizerConfig::sgd(0.1), 20, 10, 0);
    let res = train(&cfg, &train_set, &train_set).unwrap();
    let mut want = vec![1.0; 2];
    want.extend(vec![0.75; 18]);
    assert_eq!(res.effective_e_trace(), want);
}

#[test]
fn softmax_mlp_trains_on_multiclass_data() {
    use expoloss::data::{Dataset, LabelKind};
    use ndarray::Array2;
    // three well-separated blobs at the corners of a triangle
    let base = gen_gaussians(150, 2, 0.0, 11).unwrap();
    let centres = [(6.0, 0.0), (-3.0, 5.0), (-3.0, -5.0)];
    let n = base.len();
    let mut x = Array2::zeros((n, 2));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let k = i % 3;
        x[[i, 0]] = base.features()[[i, 0]] + centres[k].0;
        x[[i, 1]] = base.features()[[i, 1]] + centres[k].1;
        labels.push(k as i32);
    }
    let ds = Dataset::new(x, labels, LabelKind::Multiclass { num_classes: 3 }).unwrap();
    let loss = LossSpec::new(
        BaseLoss::SoftmaxCe,
        TransformParams::new(0.6, 0.005).unwrap(),
    );
    let mut cfg = config(loss, OptimizerConfig::adam(0.01), 30, 16, 4);
    cfg.model = ModelSpec::Mlp { hidden: vec![16] };
    let res = train(&cfg, &ds, &ds).unwrap();
    assert!(
        res.final_metrics().train_acc >= 0.97,
        "{:?}",
        res.final_metrics()
    );
}

#[test]
fn incompatible_labels_are_rejected() {
    let ds = gen_gaussians(10, 2, 1.0, 0).unwrap();
    let loss = LossSpec::untransformed(BaseLoss::SoftmaxCe);
    let cfg = config(loss, OptimizerConfig::sgd(0.1), 1, 4, 0);
    assert!(train(&cfg, &ds, &ds).is_err());
}
