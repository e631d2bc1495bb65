use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rma_core::data::synth_dataset;
use rma_core::params::ParamStore;
use rma_core::train::{augment, evaluate, evaluate_with, train, AdamState, EarlyStopping, Plateau, TrainConfig};
use rma_core::{Model, ModelConfig, Tensor, Variant};

#[test]
fn adam_descends_a_quadratic() {
    let mut store = ParamStore::new();
    let id = store.add("p", Tensor::scalar(1.0f64));
    let mut adam = AdamState::new(&store);
    let mut f = Vec::new();
    for _ in 0..50 {
        let p = store.get(id).data()[0];
        adam.step(&mut store, &[Some(Tensor::scalar(2.0 * p))], 1e-2).unwrap();
        f.push(store.get(id).data()[0].powi(2));
    }
    assert!(f[40..].windows(2).all(|w| w[1] < w[0]), "{:?}", &f[40..]);
    assert!(f[49] < 1.0);
    assert_eq!(adam.step, 50);
}

#[test]
fn plateau_learning_rate_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sched = Plateau::new(0.1, 3);
    let mut lr = 1e-2;
    for _ in 0..200 {
        let next = sched.step(rand::Rng::random_range(&mut rng, 0.0..1.0), lr);
        assert!(next <= lr);
        lr = next;
    }
}

#[test]
fn early_stopping_waits_for_patience() {
    let mut stop = EarlyStopping::new(5);
    let losses = [1.0, 0.9, 0.95, 0.8, 0.85, 0.85, 0.85, 0.85, 0.85];
    let fired: Vec<bool> = losses.iter().map(|&l| stop.step(l)).collect();
    assert_eq!(fired, [false, false, false, false, false, false, false, false, true]);
}

#[test]
fn augmentation_is_seed_reproducible_and_keeps_masks_binary() {
    let data = synth_dataset(3, 4, 32).unwrap();
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        data.iter().map(|s| augment(s, &mut rng)).collect::<Vec<_>>()
    };
    let (a, b) = (run(1), run(1));
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.image, y.image);
        assert_eq!(x.mask, y.mask);
        assert!(x.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        lr: 1e-3,
        max_epochs: 3,
        batch_size: 2,
        image_size: 32,
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_history_is_seed_reproducible() {
    let data = synth_dataset(1, 4, 32).unwrap();
    let run = || {
        let mut model: Model<f32> = Model::new(ModelConfig::desk(Variant::Tiny), 5).unwrap();
        let out = train(&mut model, &small_config(), &data[..3], &data[3..], |_| {}).unwrap();
        (out.history, model.params.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>())
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert_eq!(h1.len(), 3);
    assert!(h1.iter().all(|r| r.train_loss.is_finite() && r.val_loss.is_finite()));
}

#[test]
fn training_rejects_empty_or_mis_sized_data() {
    let data = synth_dataset(1, 2, 32).unwrap();
    let mut model: Model<f32> = Model::new(ModelConfig::desk(Variant::Tiny), 0).unwrap();
    assert!(train(&mut model, &small_config(), &[], &data, |_| {}).is_err());
    let wrong = TrainConfig {
        image_size: 64,
        ..small_config()
    };
    assert!(train(&mut model, &wrong, &data, &data, |_| {}).is_err());
}

#[test]
fn evaluation_needs_data_and_scores_ground_truth_perfectly() {
    let model: Model<f32> = Model::new(ModelConfig::desk(Variant::Tiny), 0).unwrap();
    assert!(evaluate(&model, &[]).is_err());
    let data = synth_dataset(2, 3, 32).unwrap();
    let eval = evaluate_with(&data, |s| Ok(s.mask.clone())).unwrap();
    assert_eq!(eval.mean.values(), [1.0, 1.0, 1.0, 1.0, 1.0, 0.0]);
    let twice = (evaluate(&model, &data).unwrap(), evaluate(&model, &data).unwrap());
    assert_eq!(twice.0.per_image, twice.1.per_image);
}
