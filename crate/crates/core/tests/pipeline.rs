use tscan_core::data::{
    generate_synthetic, isotonic_level, read_dataset, write_dataset, DataFormat, LoadOptions, SyntheticConfig,
    TreatmentKind,
};
use tscan_core::model::{checkpoint_bytes, checkpoint_from_bytes, ModelConfig, Variant};
use tscan_core::training::{pseudo_labels_from, train_two_stage, TrainConfig, UpliftModel};

fn continuous_data(n: usize, seed: u64) -> (Vec<tscan_core::data::InstanceRecord>, tscan_core::data::FeatureSchema) {
    let cfg = SyntheticConfig {
        n,
        treatment_kind: TreatmentKind::Continuous,
        seed,
        ..Default::default()
    };
    (generate_synthetic(&cfg).unwrap(), cfg.schema())
}

fn small_model(m: usize) -> ModelConfig {
    ModelConfig {
        embedding_dim: 4,
        context_mlp_widths: vec![8],
        head_mlp_widths: vec![8],
        isotonic_m: m,
        ..Default::default()
    }
}

#[test]
fn two_stage_run_round_trips_through_checkpoints() {
    let (records, schema) = continuous_data(1500, 4);
    let model_config = small_model(3);
    let cfg = TrainConfig {
        max_epochs: 3,
        seed: 9,
        ..Default::default()
    };
    let out = train_two_stage(&records, &schema, &model_config, &cfg).unwrap();
    assert_eq!(out.can_u.model.variant(), Variant::CanU);
    assert_eq!(out.can_d.model.variant(), Variant::CanD);
    assert!(!out.can_u.curve.is_empty() && out.can_u.curve.len() <= 3);

    let n = 200;
    let from = vec![0.1; n];
    let to = vec![0.9; n];
    for model in [&out.can_u.model, &out.can_d.model] {
        let restored = checkpoint_from_bytes(&checkpoint_bytes(model).unwrap()).unwrap();
        let a = model.uplift(&records[..n], &from, &to).unwrap();
        let b = restored.uplift(&records[..n], &from, &to).unwrap();
        assert_eq!(
            a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }
}

#[test]
fn pseudo_labels_move_to_another_level_and_match_the_labeler() {
    let (records, schema) = continuous_data(800, 6);
    let model_config = small_model(4);
    let cfg = TrainConfig {
        max_epochs: 2,
        ..Default::default()
    };
    let out = train_two_stage(&records, &schema, &model_config, &cfg).unwrap();
    let can_u = &out.can_u.model;
    let labels = pseudo_labels_from(can_u, &records, &model_config, &cfg).unwrap();
    assert_eq!(labels.len(), records.len());
    let m = model_config.isotonic_m;
    for l in &labels {
        assert_ne!(isotonic_level(l.t_cf, m), isotonic_level(l.base.treatment, m));
    }
    let base: Vec<_> = labels.iter().map(|l| l.base.clone()).collect();
    let t_f: Vec<f64> = base.iter().map(|r| r.treatment).collect();
    let t_cf: Vec<f64> = labels.iter().map(|l| l.t_cf).collect();
    let expected = can_u.predict_instance_uplifts(&base, &t_f, &t_cf).unwrap();
    for (l, e) in labels.iter().zip(expected) {
        assert_eq!(l.u_tilde.to_bits(), e.to_bits());
    }
}

#[test]
fn datasets_round_trip_through_csv_and_json_lines() {
    let (records, schema) = continuous_data(50, 8);
    for format in [DataFormat::Csv, DataFormat::JsonLines] {
        let mut buf = Vec::new();
        write_dataset(&mut buf, format, &schema, &records).unwrap();
        let back = read_dataset(buf.as_slice(), format, &schema, LoadOptions::default()).unwrap();
        assert_eq!(back, records, "{format:?}");
    }
}
