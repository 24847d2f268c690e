use deepverify_core::embedding::EmbeddingDataset;
use deepverify_core::margin::LossPreset;
use deepverify_core::trainer::{
    compactness, extract_embeddings, generate_identities, train_embedder, Compactness, LossSpec,
    SyntheticSpec, TrainConfig,
};

const IDENTITIES: usize = 10;
const TRAIN_PER_ID: usize = 60;
const TEST_PER_ID: usize = 40;

/// Identity-major population split into the first 60 and last 40 samples of each identity.
fn split(seed_value: u64) -> (EmbeddingDataset, EmbeddingDataset) {
    let spec = SyntheticSpec {
        num_identities: IDENTITIES,
        samples_per_identity: TRAIN_PER_ID + TEST_PER_ID,
        raw_dim: 64,
        concentration: 5.0,
        seed: seed_value,
        first_subject_id: 0,
    };
    let all = generate_identities(&spec).unwrap().dataset;
    let mut train = EmbeddingDataset::new(64).unwrap();
    let mut test = EmbeddingDataset::new(64).unwrap();
    for (k, r) in all.iter().enumerate() {
        let target = if k % (TRAIN_PER_ID + TEST_PER_ID) < TRAIN_PER_ID { &mut train } else { &mut test };
        target.push(r.clone()).unwrap();
    }
    (train, test)
}

fn measure(preset: LossPreset, seed_value: u64) -> Compactness {
    let (train, test) = split(seed_value);
    let cfg = TrainConfig {
        seed: seed_value,
        ..TrainConfig::default()
    };
    let model = train_embedder(&train, &LossSpec::from_preset(preset), &cfg).unwrap();
    let embedded = extract_embeddings(&model.network, &test).unwrap();
    compactness(&embedded, model.head.as_ref()).unwrap()
}

#[test]
fn margin_losses_tighten_identities_and_spread_centers() {
    for seed_value in 1..=3 {
        let base = measure(LossPreset::Softmax, seed_value);
        let base_between = base.between_centers.unwrap();
        for preset in [LossPreset::CosFace, LossPreset::Combined] {
            let m = measure(preset, seed_value);
            let between = m.between_centers.unwrap();
            assert!(
                m.within_identity > base.within_identity,
                "seed {seed_value} {}: within {} vs softmax {}",
                preset.name(),
                m.within_identity,
                base.within_identity
            );
            assert!(
                between < base_between,
                "seed {seed_value} {}: between {between} vs softmax {base_between}",
                preset.name()
            );
        }
    }
}
