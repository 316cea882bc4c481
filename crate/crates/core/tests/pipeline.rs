use iibalance::align::{stage1_loss, stage1_loss_frozen, AlignmentConfig, PrototypeBank};
use iibalance::budget::{
    estimate_budget, normalize_budget, pretrain_unimodal, BudgetPrior, PretrainConfig,
};
use iibalance::data::{class_means, gen_dataset, Batch, Dataset, ModalitySpec, Split};
use iibalance::fusion::{stage2_loss, FusionConfig, FusionMode};
use iibalance::harness::{
    compare_prior_weights, evaluate, prepare, BenchmarkConfig, Lab, SweepParam, Variant,
};
use iibalance::model::{Architecture, MultimodalModel};
use iibalance::nn::{Activation, DenseNet, Layer, Matrix, ParamSet};
use iibalance::train::{infer, total_loss, train, FusionKind, TrainConfig, TrainedModel};

mod common;

fn arch(input_dims: Vec<usize>, classes: usize) -> Architecture {
    Architecture {
        input_dims,
        classes,
        hidden: 8,
        feature_dim: 4,
        gate_hidden: 5,
        pool_dim: 2,
    }
}

fn tiny_setup(seed: u64) -> (MultimodalModel, Batch, PrototypeBank, BudgetPrior) {
    let specs = [ModalitySpec::clean(3, 2.0), ModalitySpec::clean(5, 0.7)];
    let (data, _) = gen_dataset(&specs, 2, 32, 2, seed).unwrap();
    let model = MultimodalModel::init(&arch(vec![3, 5], 2), seed).unwrap();
    let mut bank = PrototypeBank::new(2, 4, 0.9).unwrap();
    let full = data.full_batch();
    bank.ema_update(&common::features(&model, &full, 0), &full.labels)
        .unwrap();
    let batch = data.batch(&[0, 1, 2, 3]);
    let prior = normalize_budget(&[0.7, 0.3], 0.4).unwrap();
    (model, batch, bank, prior)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

fn quick_bench() -> BenchmarkConfig {
    let mut bench = BenchmarkConfig::standard();
    bench.n_train = 400;
    bench.n_test = 200;
    bench.pretrain.epochs = 3;
    bench.train.epochs = 3;
    bench
}

#[test]
fn pretraining_reaches_separable_accuracy() {
    let specs = [ModalitySpec::clean(16, 20.0)];
    let (train_data, test) = gen_dataset(&specs, 2, 2000, 1000, 3).unwrap();
    let pair = pretrain_unimodal(&train_data, &test, 0, &PretrainConfig::default()).unwrap();
    assert!(
        pair.final_test_accuracy() > 0.98,
        "{}",
        pair.final_test_accuracy()
    );
    assert_eq!(pair.log.len(), 30);
}

#[test]
fn pretraining_on_label_free_inputs_stays_at_chance() {
    let specs = [ModalitySpec::clean(16, 0.0)];
    let (train_data, test) = gen_dataset(&specs, 2, 2000, 1000, 4).unwrap();
    let pair = pretrain_unimodal(&train_data, &test, 0, &PretrainConfig::default()).unwrap();
    let acc = pair.final_test_accuracy();
    assert!((0.45..=0.55).contains(&acc), "{acc}");
}

#[test]
fn pretraining_is_deterministic() {
    let specs = [ModalitySpec::clean(8, 2.0)];
    let (train_data, test) = gen_dataset(&specs, 3, 300, 100, 5).unwrap();
    let cfg = PretrainConfig {
        epochs: 4,
        seed: 9,
        ..PretrainConfig::default()
    };
    let a = pretrain_unimodal(&train_data, &test, 0, &cfg).unwrap();
    let b = pretrain_unimodal(&train_data, &test, 0, &cfg).unwrap();
    assert_eq!(a.encoder.to_blocks(), b.encoder.to_blocks());
    assert_eq!(a.classifier.to_blocks(), b.classifier.to_blocks());
    assert_eq!(a.log, b.log);
}

#[test]
fn budget_follows_modality_strength_over_five_seeds() {
    let specs = [ModalitySpec::clean(16, 4.0), ModalitySpec::clean(16, 0.5)];
    for seed in 1..=5 {
        let (train_data, test) = gen_dataset(&specs, 4, 2000, 500, seed).unwrap();
        let cfg = PretrainConfig {
            seed,
            ..PretrainConfig::default()
        };
        let pairs: Vec<_> = (0..2)
            .map(|m| pretrain_unimodal(&train_data, &test, m, &cfg).unwrap())
            .collect();
        let b = estimate_budget(&pairs, &train_data).unwrap();
        assert!(b[0] > b[1], "seed {seed}: {b:?}");
        assert!(b.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn stage1_matches_scalar_evaluation_after_the_ema_update() {
    let (model, batch, bank, prior) = tiny_setup(11);
    let align = AlignmentConfig::from_prior(&prior, 0.3, true).unwrap();
    let mut updated = bank.clone();
    let (obj, value) = stage1_loss(&model, &batch, &mut updated, &align).unwrap();

    let mut expected_bank = bank.clone();
    expected_bank
        .ema_update(&common::features(&model, &batch, 0), &batch.labels)
        .unwrap();
    assert_eq!(updated, expected_bank);
    let oracle = common::stage1(&model, &batch, &expected_bank, &align.lambdas, 0.3, true);
    assert!(close(obj.loss, oracle), "{} vs {oracle}", obj.loss);
    assert!(value.pra[1].is_some() && value.pra[0].is_none());

    let raw = AlignmentConfig::from_prior(&prior, 0.3, false).unwrap();
    let (obj, _) = stage1_loss_frozen(&model, &batch, &bank, &raw).unwrap();
    assert!(close(
        obj.loss,
        common::stage1(&model, &batch, &bank, &raw.lambdas, 0.3, false)
    ));
}

#[test]
fn stage1_without_alignment_is_the_unimodal_ce_sum() {
    let (model, batch, bank, _) = tiny_setup(12);
    let prior = normalize_budget(&[0.5, 0.5], 0.07).unwrap();
    let align = AlignmentConfig::from_prior(&prior, 0.5, true).unwrap();
    assert_eq!(align.lambdas, vec![0.0, 0.0]);
    let (obj, value) = stage1_loss_frozen(&model, &batch, &bank, &align).unwrap();
    assert_eq!(obj.loss, value.unimodal_ce.iter().sum::<f64>());
    assert!(close(
        obj.loss,
        common::stage1(&model, &batch, &bank, &[0.0, 0.0], 0.5, true)
    ));
}

#[test]
fn stage2_matches_scalar_evaluation() {
    let (model, batch, _, prior) = tiny_setup(13);
    for gamma in [0.0, 0.5, 2.0] {
        let (obj, value) =
            stage2_loss(&model, &batch, &prior, &FusionConfig::gated(gamma)).unwrap();
        let oracle = common::stage2(&model, &batch, prior.beta(), gamma, 2, None, None);
        assert!(
            close(obj.loss, oracle),
            "γ={gamma}: {} vs {oracle}",
            obj.loss
        );
        if gamma == 0.0 {
            assert_eq!(value.loss, value.fused_ce);
        }
    }
    let fixed = FusionConfig {
        mode: FusionMode::Fixed(vec![0.25, 0.75]),
        ..FusionConfig::gated(0.5)
    };
    let (obj, value) = stage2_loss(&model, &batch, &prior, &fixed).unwrap();
    assert!(close(
        obj.loss,
        common::stage2(
            &model,
            &batch,
            prior.beta(),
            0.5,
            2,
            None,
            Some(&[0.25, 0.75])
        )
    ));
    assert!(value
        .samples
        .iter()
        .all(|s| s.weights.weights == [0.25, 0.75]));
}

#[test]
fn total_loss_blends_the_stage_losses() {
    let (model, batch, bank, prior) = tiny_setup(14);
    let align = AlignmentConfig::from_prior(&prior, 0.5, true).unwrap();
    let fusion = FusionConfig::gated(0.5);
    let (l1, _) = stage1_loss_frozen(&model, &batch, &bank, &align).unwrap();
    let (l2, _) = stage2_loss(&model, &batch, &prior, &fusion).unwrap();
    let at = |lambda: f64| {
        total_loss(&model, &batch, &bank, &prior, lambda, &align, &fusion)
            .unwrap()
            .0
    };

    let one = at(1.0);
    assert_eq!(one.loss, l1.loss);
    assert_eq!(one.grads.to_blocks(), l1.grads.to_blocks());
    let zero = at(0.0);
    assert_eq!(zero.loss, l2.loss);
    assert_eq!(zero.grads.to_blocks(), l2.grads.to_blocks());

    let half = at(0.5);
    assert!(close(half.loss, 0.5 * (l1.loss + l2.loss)));
    for ((h, a), b) in half
        .grads
        .to_blocks()
        .iter()
        .zip(l1.grads.to_blocks())
        .zip(l2.grads.to_blocks())
    {
        for ((h, a), b) in h.iter().zip(&a).zip(&b) {
            assert!(close(*h, 0.5 * (a + b)));
        }
    }
    assert!(total_loss(&model, &batch, &bank, &prior, 1.5, &align, &fusion).is_err());
}

#[test]
fn inference_matches_a_manual_trace() {
    let (model, batch, _, prior) = tiny_setup(15);
    let fusion = FusionConfig::gated(0.5);
    for i in 0..batch.len() {
        let inputs: Vec<Vec<f64>> = common::sample_inputs(&batch, i)
            .iter()
            .map(|x| x.to_vec())
            .collect();
        let out = infer(&model, &prior, &fusion, &inputs).unwrap();
        let t = common::trace(&model, &common::sample_inputs(&batch, i));
        let w = common::gated_weights(&model, &t, prior.beta(), &t.u, 2);
        for (a, b) in out.weights.weights.iter().zip(&w) {
            assert!(close(*a, *b));
        }
        let mut z = vec![0.0; 4];
        for (wm, zm) in w.iter().zip(&t.z) {
            z.iter_mut().zip(zm).for_each(|(a, b)| *a += wm * b);
        }
        let fused = common::softmax(&common::net(&model.fuse_head, &z));
        for (a, b) in out.fused.probs().iter().zip(&fused) {
            assert!(close(*a, *b));
        }
        for (p, q) in out.probs.iter().zip(&t.probs) {
            assert!(p.probs().iter().zip(q).all(|(a, b)| close(*a, *b)));
        }
        assert_eq!(out.prediction, out.fused.argmax());
        assert_eq!(infer(&model, &prior, &fusion, &inputs).unwrap(), out);
    }
    assert!(infer(&model, &prior, &fusion, &[vec![0.0; 3], vec![0.0; 4]]).is_err());
}

#[test]
fn single_modality_inference_uses_the_only_feature() {
    let model = MultimodalModel::init(&arch(vec![3], 3), 2).unwrap();
    let prior = normalize_budget(&[0.4], 0.07).unwrap();
    let x = vec![0.3, -1.2, 2.0];
    let out = infer(
        &model,
        &prior,
        &FusionConfig::gated(0.5),
        std::slice::from_ref(&x),
    )
    .unwrap();
    assert_eq!(out.weights.weights, vec![1.0]);
    let z = common::net(&model.encoders[0], &x);
    let expected = common::softmax(&common::net(&model.fuse_head, &z));
    assert!(out
        .fused
        .probs()
        .iter()
        .zip(&expected)
        .all(|(a, b)| close(*a, *b)));
}

#[test]
fn mirrored_modalities_split_the_weight_evenly() {
    let mut model = MultimodalModel::init(&arch(vec![4, 4], 3), 6).unwrap();
    model.encoders[1] = model.encoders[0].clone();
    model.classifiers[1] = model.classifiers[0].clone();
    let h = model.gate.layers()[0].output_dim();
    let mut last = model.gate.layers()[1].clone();
    last.weight = Matrix::from_rows(&[vec![0.3; h], vec![0.3; h]]).unwrap();
    last.bias = vec![0.1, 0.1];
    model.gate = DenseNet::from_layers(vec![model.gate.layers()[0].clone(), last]).unwrap();
    let prior = normalize_budget(&[0.6, 0.6], 0.07).unwrap();
    let x = vec![0.5, -0.1, 1.5, 0.2];
    let out = infer(&model, &prior, &FusionConfig::gated(0.5), &[x.clone(), x]).unwrap();
    assert_eq!(out.weights.weights, vec![0.5, 0.5]);
}

fn nearest_mean_model(spec: &ModalitySpec, classes: usize) -> MultimodalModel {
    let means = class_means(spec, classes, spec.dim);
    let offset = 1e4;
    let encoder = DenseNet::from_layers(vec![
        Layer::new(
            Matrix::from_rows(&means).unwrap(),
            means
                .iter()
                .map(|m| offset - 0.5 * m.iter().map(|v| v * v).sum::<f64>())
                .collect(),
            Activation::Relu,
        )
        .unwrap(),
        Layer::new(
            Matrix::identity(classes),
            vec![0.0; classes],
            Activation::Identity,
        )
        .unwrap(),
    ])
    .unwrap();
    let head = || {
        DenseNet::from_layers(vec![Layer::new(
            Matrix::identity(classes),
            vec![0.0; classes],
            Activation::Identity,
        )
        .unwrap()])
        .unwrap()
    };
    let mut model = MultimodalModel::init(
        &Architecture {
            input_dims: vec![spec.dim],
            classes,
            hidden: classes,
            feature_dim: classes,
            gate_hidden: 3,
            pool_dim: 1,
        },
        0,
    )
    .unwrap();
    model.encoders[0] = encoder;
    model.classifiers[0] = head();
    model.fuse_head = head();
    model
}

fn wrap(model: MultimodalModel, classes: usize) -> TrainedModel {
    TrainedModel {
        bank: PrototypeBank::new(classes, model.feature_dim(), 0.9).unwrap(),
        prior: normalize_budget(&vec![0.5; model.modalities()], 0.07).unwrap(),
        model,
        log: Vec::new(),
        config: TrainConfig::default(),
    }
}

#[test]
fn evaluation_of_a_perfect_model_is_one() {
    let spec = ModalitySpec::clean(6, 40.0);
    let (_, test) = gen_dataset(&[spec], 3, 10, 600, 8).unwrap();
    let trained = wrap(nearest_mean_model(&spec, 3), 3);
    let report = evaluate(&trained, &test, 8, "d").unwrap();
    assert_eq!(report.acc_multimodal, 1.0);
    assert_eq!(report.acc_per_modality, vec![1.0]);
    assert_eq!(report.mean_fusion_weights, vec![1.0]);
}

#[test]
fn evaluation_of_an_untrained_model_is_near_chance() {
    let specs = [ModalitySpec::clean(16, 3.0), ModalitySpec::clean(16, 0.8)];
    let (_, test) = gen_dataset(&specs, 4, 10, 2000, 9).unwrap();
    let model =
        MultimodalModel::init(&TrainConfig::default().architecture(vec![16, 16], 4), 9).unwrap();
    let trained = wrap(model, 4);
    let report = evaluate(&trained, &test, 9, "d").unwrap();
    assert!(
        (report.acc_multimodal - 0.25).abs() <= 0.05,
        "{}",
        report.acc_multimodal
    );
    assert_eq!(
        format!("{:?}", evaluate(&trained, &test, 9, "d").unwrap()),
        format!("{report:?}")
    );
}

#[test]
fn training_leaves_the_prior_untouched_and_is_repeatable() {
    let bench = quick_bench();
    let p = prepare(&bench, 2).unwrap();
    let bytes = p.prior.to_bytes();
    let cfg = TrainConfig {
        seed: 2,
        ..bench.train.clone()
    };
    let a = train(&p.train, Some(&p.test), &p.prior, &cfg, Some(&p.pairs)).unwrap();
    assert_eq!(p.prior.to_bytes(), bytes);
    assert_eq!(a.prior.to_bytes(), bytes);
    let b = train(&p.train, Some(&p.test), &p.prior, &cfg, Some(&p.pairs)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
}

#[test]
fn single_epoch_of_pure_stage1_still_records_stage2() {
    let bench = quick_bench();
    let p = prepare(&bench, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        lambda_start: 1.0,
        gamma: 0.0,
        seed: 3,
        ..bench.train.clone()
    };
    let trained = train(&p.train, None, &p.prior, &cfg, Some(&p.pairs)).unwrap();
    let e = &trained.log[0];
    assert_eq!(trained.log.len(), 1);
    assert_eq!(e.lambda, 1.0);
    assert!(e.stage2.is_finite() && e.stage2 > 0.0);
    assert!(close(e.total, e.stage1));
    assert!(e.test_acc.is_nan());
}

#[test]
fn checkpoint_round_trip_restores_predictions() {
    let bench = quick_bench();
    let p = prepare(&bench, 4).unwrap();
    let cfg = TrainConfig {
        seed: 4,
        ..bench.train.clone()
    };
    let trained = train(&p.train, Some(&p.test), &p.prior, &cfg, Some(&p.pairs)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    trained.save(&path).unwrap();
    let back = TrainedModel::load(&path, cfg).unwrap();
    assert_eq!(back.model, trained.model);
    assert_eq!(back.bank, trained.bank);
    assert_eq!(back.prior, trained.prior);
    let (a, b) = (
        evaluate(&back, &p.test, 4, "d").unwrap(),
        evaluate(&trained, &p.test, 4, "d").unwrap(),
    );
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
}

#[test]
fn variant_definitions_hold_on_trained_models() {
    let mut lab = Lab::new(quick_bench()).unwrap();
    let no_stage2 = lab
        .run_variant(Variant::NoStage2, 1)
        .unwrap()
        .trained
        .clone();
    assert_eq!(no_stage2.config.fusion, FusionKind::Prior);
    let fused = no_stage2
        .fuse_dataset(&lab.prepared(1).unwrap().test)
        .unwrap();
    assert!(fused
        .samples
        .iter()
        .all(|s| s.weights.weights == no_stage2.prior.beta()));
    let gaps = compare_prior_weights(&no_stage2, &lab.prepared(1).unwrap().test).unwrap();
    assert!(gaps.iter().all(|g| g.gap == 0.0));

    let no_prior = lab.run_variant(Variant::NoPrior, 1).unwrap();
    assert_eq!(no_prior.trained.prior.beta(), &[0.5, 0.5]);

    let ablation = lab.run_ablation(&[1, 2, 3], &Variant::ABLATIONS).unwrap();
    assert_eq!(ablation.to_table().len(), Variant::ABLATIONS.len() * 4);
    assert_eq!(ablation.paired_wins(Variant::Full, Variant::Full), Some(3));
}

#[test]
fn single_point_sweep_equals_a_direct_run() {
    let bench = quick_bench();
    let mut lab = Lab::new(bench.clone()).unwrap();
    let sweep = lab.sweep(SweepParam::Gamma, &[0.25], &[5]).unwrap();

    let p = prepare(&bench, 5).unwrap();
    let cfg = TrainConfig {
        gamma: 0.25,
        seed: 5,
        ..bench.train.clone()
    };
    let trained = train(&p.train, Some(&p.test), &p.prior, &cfg, Some(&p.pairs)).unwrap();
    let direct = evaluate(&trained, &p.test, 5, "d").unwrap();
    assert_eq!(sweep.means(), vec![(0.25, direct.acc_multimodal)]);
}

#[test]
fn symmetric_duplicated_modalities_have_equal_gaps() {
    let mut model = MultimodalModel::init(&arch(vec![4, 4], 3), 7).unwrap();
    model.encoders[1] = model.encoders[0].clone();
    model.classifiers[1] = model.classifiers[0].clone();
    let h = model.gate.layers()[0].output_dim();
    let mut last = model.gate.layers()[1].clone();
    last.weight = Matrix::from_rows(&[vec![0.2; h], vec![0.2; h]]).unwrap();
    model.gate = DenseNet::from_layers(vec![model.gate.layers()[0].clone(), last]).unwrap();
    let spec = ModalitySpec::clean(4, 2.0);
    let (_, test) = gen_dataset(&[spec], 3, 10, 200, 7).unwrap();
    let mirrored = Dataset::new(
        3,
        vec![spec, spec],
        Split::Test,
        7,
        test.labels().to_vec(),
        vec![test.inputs(0).clone(), test.inputs(0).clone()],
        vec![vec![false; test.len()]; 2],
    )
    .unwrap();
    let trained = wrap(model, 3);
    let gaps = compare_prior_weights(&trained, &mirrored).unwrap();
    assert_eq!(gaps[0].mean_weight, 0.5);
    assert_eq!(gaps[0].gap, gaps[1].gap);
}
