use proptest::prelude::*;
use rma_core::model::Supervision;
use rma_core::ss2d::ScanMode;
use rma_core::train::TrainConfig;
use rma_core::{AttentionMode, Model, ModelConfig, Variant};
use rma_mamba::checkpoint::{decode, encode, MAGIC};
use rma_mamba::config::RunConfig;
use rma_mamba::Error;
use std::sync::OnceLock;

prop_compose! {
    fn run_config()(
        small in any::<bool>(),
        ra in any::<bool>(),
        parallel in any::<bool>(),
        final_only in any::<bool>(),
        n_extra in 0usize..3,
        divisor in prop::sample::select(vec![1usize, 2, 4, 8]),
        depths in prop::array::uniform4(1usize..5),
        d_state in 1usize..32,
        expansion in 1usize..4,
        half_kernel in 0usize..3,
        ffn in 1usize..5,
        lr in 1e-7f64..1.0,
        factor in 0.01f64..0.99,
        patience in 1usize..100,
        epochs in 1usize..1000,
        stop in 1usize..100,
        batch in 1usize..64,
        size_units in 1usize..16,
        seed in any::<u64>(),
        augment in any::<bool>(),
    ) -> RunConfig {
        let mut model = ModelConfig::new(if small { Variant::Small } else { Variant::Tiny });
        model.attention = if ra { AttentionMode::Ra } else { AttentionMode::Rma };
        model.ssm.scan_mode = if parallel { ScanMode::Parallel } else { ScanMode::Sequential };
        model.supervision = if final_only { Supervision::FinalOnly } else { Supervision::Deep };
        model.n_extra_vss = n_extra;
        model.encoder.divisor = divisor;
        model.encoder.depths = depths;
        model.ssm.d_state = d_state;
        model.ssm.expansion = expansion;
        model.ssm.conv_kernel = 2 * half_kernel + 1;
        model.ffn_ratio = ffn;
        let train = TrainConfig {
            lr,
            plateau_factor: factor,
            plateau_patience: patience,
            max_epochs: epochs,
            early_stop_patience: stop,
            batch_size: batch,
            image_size: 32 * size_units,
            seed,
            augment,
        };
        RunConfig { model, train }
    }
}

fn encoded() -> &'static Vec<u8> {
    static BYTES: OnceLock<Vec<u8>> = OnceLock::new();
    BYTES.get_or_init(|| {
        let mut cfg = RunConfig {
            model: ModelConfig::desk(Variant::Tiny),
            ..RunConfig::default()
        };
        cfg.model.encoder.depths = [1, 1, 1, 1];
        cfg.model.ssm.d_state = 2;
        let model = Model::<f32>::new(cfg.model, 0).unwrap();
        encode(&cfg, &model.params, None)
    })
}

proptest! {
    #[test]
    fn config_text_round_trips(cfg in run_config()) {
        prop_assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn any_flipped_byte_is_rejected(pos in any::<prop::sample::Index>(), mask in 1u8..=255) {
        let mut bytes = encoded().clone();
        let i = pos.index(bytes.len());
        bytes[i] ^= mask;
        let err = decode(&bytes, None).err().expect("corrupt checkpoint decoded");
        if i >= MAGIC.len() {
            prop_assert!(matches!(err, Error::Checksum), "byte {}: {:?}", i, err);
        }
    }

    #[test]
    fn any_truncation_is_a_checksum_error(pos in any::<prop::sample::Index>()) {
        let bytes = encoded();
        let len = MAGIC.len() + pos.index(bytes.len() - MAGIC.len());
        prop_assert!(matches!(decode(&bytes[..len], None), Err(Error::Checksum)));
    }
}

#[test]
fn intact_bytes_decode() {
    assert!(decode(encoded(), None).unwrap().optimizer.is_none());
}
