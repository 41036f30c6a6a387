use capam_core::instance::{load_instance, save_instance, InstanceDistribution};
use capam_core::model::ModelConfig;
use capam_core::seed::rng_for;
use capam_core::trainer::{evaluate, TrainConfig, Trainer};
use capam_core::CapamModel;

fn tiny(seed: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        samples_per_epoch: 64,
        batch_size: 16,
        validation_size: 24,
        learning_rate: lr,
        seed,
        distribution: InstanceDistribution::with_size(6, 2),
        model: ModelConfig {
            h0: 8,
            hl: 8,
            heads: 2,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn training_is_reproducible() {
    let run = |seed| {
        let mut t = Trainer::new(tiny(seed, 1e-3)).unwrap();
        let reports = t.run(|_, _| Ok(())).unwrap();
        (reports, t.learner.params.clone())
    };
    let (a, pa) = run(5);
    let (b, pb) = run(5);
    assert_eq!(pa, pb);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.batches, y.batches);
        assert_eq!(x.validation_cost, y.validation_cost);
    }
    assert_eq!(a[0].batches.len(), 4);
    let (_, pc) = run(6);
    assert_ne!(pa, pc);
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let mut t = Trainer::new(tiny(2, 0.0)).unwrap();
    let before = t.learner.params.clone();
    t.run(|_, _| Ok(())).unwrap();
    assert_eq!(t.learner.params, before);
    assert_eq!(t.baseline.params, before);
}

#[test]
fn checkpoint_and_instance_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny(3, 1e-3)).unwrap();
    t.run(|_, _| Ok(())).unwrap();
    let ck = dir.path().join("model.json");
    t.learner.save(&ck).unwrap();
    let loaded = CapamModel::load(&ck).unwrap();
    assert_eq!(loaded.params, t.learner.params);

    let mut rng = rng_for(9, &[]);
    let insts: Vec<_> = (0..5)
        .map(|i| {
            let inst = InstanceDistribution::with_size(8, 3)
                .sample(&mut rng)
                .unwrap();
            let path = dir.path().join(format!("i{i}.json"));
            save_instance(&inst, &path).unwrap();
            let back = load_instance(&path).unwrap();
            assert_eq!(back, inst);
            back
        })
        .collect();
    let a = evaluate(&t.learner, &insts).unwrap();
    let b = evaluate(&loaded, &insts).unwrap();
    assert_eq!(a.results, b.results);
}
