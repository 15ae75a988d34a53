use replaceblock::cam::{compute_cam, threshold_to_tcdm};
use replaceblock::data::{synthetic_blobs, Dataset, Normalization};
use replaceblock::nn::{checkpoint, Architecture, MiniCnn, RunRecord, TrainConfig, Trainer};
use replaceblock::regularize::{
    forward, replace_block_apply, HookPoint, Mode, RegularizerKind, ReplaceBlockConfig, StepContext,
};

fn blobs() -> (Dataset, Dataset) {
    // 160 training images in batches of 16: ten steps per epoch.
    (
        synthetic_blobs(160, 2, 3, 32, 1).unwrap(),
        synthetic_blobs(40, 2, 3, 32, 2).unwrap(),
    )
}

fn trainer(kind: RegularizerKind, train: &Dataset, epochs: usize) -> Trainer {
    let cfg = TrainConfig {
        epochs,
        batch_size: 16,
        seed: 3,
        ..Default::default()
    };
    let model = MiniCnn::new(Architecture::mini(3, 2), 3).unwrap();
    Trainer::new(model, cfg, kind, ReplaceBlockConfig::default(), train.len())
        .unwrap()
        .with_normalization(Normalization::from_dataset(train).unwrap())
}

fn run(t: &mut Trainer, train: &Dataset, test: &Dataset, epochs: usize) -> Vec<RunRecord> {
    (0..epochs)
        .map(|_| t.train_epoch(train, test).unwrap())
        .collect()
}

#[test]
fn loss_decreases_on_separable_blobs() {
    let (train, test) = blobs();
    let mut t = trainer(RegularizerKind::None, &train, 5);
    let records = run(&mut t, &train, &test, 5);
    assert!(
        records[4].train_loss < records[0].train_loss,
        "{} -> {}",
        records[0].train_loss,
        records[4].train_loss
    );
    assert_eq!(t.step(), 50);
    assert!(records[4].lr.abs() < 1e-3);
}

#[test]
fn every_regularizer_is_deterministic() {
    let (train, test) = blobs();
    for kind in [
        RegularizerKind::None,
        RegularizerKind::ReplaceBlock,
        RegularizerKind::DropBlock {
            keep_prob: 0.9,
            block_size: 3,
        },
        RegularizerKind::SpatialDropout { keep_prob: 0.9 },
        RegularizerKind::Dropout { keep_prob: 0.7 },
        RegularizerKind::Cutout { size: 8 },
    ] {
        let mut a = trainer(kind.clone(), &train, 1);
        let mut b = trainer(kind.clone(), &train, 1);
        assert_eq!(
            run(&mut a, &train, &test, 1),
            run(&mut b, &train, &test, 1),
            "{kind:?}"
        );
        assert_eq!(
            checkpoint::encode(&a.model).unwrap(),
            checkpoint::encode(&b.model).unwrap()
        );
    }
}

#[test]
fn inference_after_replace_block_training_is_plain() {
    let (train, test) = blobs();
    let mut t = trainer(RegularizerKind::ReplaceBlock, &train, 2);
    run(&mut t, &train, &test, 2);
    // A model that never saw a regularizer, carrying the same weights.
    let copy = checkpoint::decode(&checkpoint::encode(&t.model).unwrap()).unwrap();
    let x = test.images();
    let ctx = StepContext { seed: 0, step: 0 };
    let wrapped = forward(
        &t.model,
        x,
        test.labels(),
        &RegularizerKind::ReplaceBlock,
        &ReplaceBlockConfig::default(),
        &ctx,
        Mode::Eval,
    )
    .unwrap();
    assert_eq!(wrapped.data(), copy.infer(x).unwrap().data());
}

#[test]
fn replaced_fraction_matches_keep_prob_end_to_end() {
    // Narrow widths keep 10,000 full passes cheap. The constant input makes
    // attention positive everywhere, so every image is eligible.
    let arch = Architecture {
        widths: [4, 4, 4],
        ..Architecture::mini(3, 2)
    };
    let mut model = MiniCnn::new(arch, 9).unwrap();
    model
        .classifier
        .weight
        .iter_mut()
        .for_each(|w| *w = w.abs());
    let x = synthetic_blobs(1, 2, 3, 32, 0).unwrap().images().clone();
    let cfg = ReplaceBlockConfig::default();
    let steps = 10_000u64;
    let mut zeros = [0usize; 2];
    let mut cells = [0usize; 2];
    for step in 0..steps {
        let pass = replace_block_apply(
            &model,
            &x,
            &[0],
            &cfg,
            &StepContext { seed: 1, step },
            Mode::Train,
        )
        .unwrap();
        assert!(!pass.attention[0].is_zero());
        for (i, hook) in [HookPoint::Block2, HookPoint::Block3]
            .into_iter()
            .enumerate()
        {
            let m = &pass.hook(hook).unwrap().masks[0];
            zeros[i] += m.count_zeros();
            cells[i] += m.bits().len();
        }
    }
    for i in 0..2 {
        let frac = zeros[i] as f64 / cells[i] as f64;
        assert!(
            (frac - 0.10).abs() <= 0.02,
            "hook {i}: replaced fraction {frac}"
        );
    }
}

#[test]
fn trained_cam_drop_region_holds_more_attention() {
    let (train, test) = blobs();
    let mut t = trainer(RegularizerKind::None, &train, 5);
    run(&mut t, &train, &test, 5);
    let norm = Normalization::from_dataset(&train).unwrap();
    let x = norm.apply(test.images()).unwrap();
    let (_, f3) = t.model.forward_backbone_detached(&x).unwrap();
    let cams = compute_cam(&f3, &t.model.classifier, test.labels()).unwrap();
    let mut compared = 0;
    for cam in &cams {
        if cam.is_zero() {
            continue;
        }
        let mask = threshold_to_tcdm(cam, 0.2).unwrap();
        let v = cam.values().data();
        let mean = |keep: u8| {
            let sel: Vec<f32> = v
                .iter()
                .zip(mask.bits())
                .filter(|(_, &b)| b == keep)
                .map(|(&a, _)| a)
                .collect();
            (!sel.is_empty()).then(|| sel.iter().sum::<f32>() / sel.len() as f32)
        };
        if let (Some(dropped), Some(kept)) = (mean(0), mean(1)) {
            assert!(dropped > kept);
            compared += 1;
        }
    }
    assert!(
        compared > test.len() / 2,
        "only {compared} informative maps"
    );
}
