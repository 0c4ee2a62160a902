use super::*;
use crate::tensor::f32_quantize;

fn desk() -> ArchitectureConfig {
    ArchitectureConfig::default()
}

fn toy_batch(arch: &ArchitectureConfig, batch: usize, seed: u64) -> SampleBatch {
    let mut rng = Rng::seeded(seed, Stream::Tests);
    let [_, ha, wa] = arch.audio_input;
    let [_, hv, wv] = arch.visual_input;
    let mask_data: Vec<f64> = (0..batch * arch.mask_bins)
        .map(|_| rng.below(4).min(1) as f64)
        .collect();
    SampleBatch {
        audio: rng.uniform_tensor(&[batch, 1, ha, wa], -1.5, 1.5),
        visual: rng.uniform_tensor(&[batch, 1, hv, wv], 0.0, 1.0),
        mask: Tensor::new(vec![batch, arch.mask_bins], mask_data).unwrap(),
        clean: Tensor::zeros(&[batch, arch.mask_bins]),
    }
}

fn zero_head(model: &mut Model) {
    for name in ["head.w", "head.y"] {
        if let Some(p) = model.param_mut(name) {
            *p = Tensor::zeros(p.shape());
        }
    }
}

#[test]
fn zero_head_outputs_half() {
    for variant in Variant::ALL {
        let mut model = Model::init(variant, desk(), 3).unwrap();
        zero_head(&mut model);
        let batch = toy_batch(&desk(), 2, 5);
        let probs = model.forward_pass(&batch).unwrap();
        assert!(probs.data().iter().all(|&p| p == 0.5), "{variant:?}");
    }
}

#[test]
fn desk_preset_map_shapes() {
    let arch = desk();
    assert_eq!(arch.stack_shape(arch.audio_input, arch.audio_stride).unwrap(), (8, 64));
    assert_eq!(arch.stack_shape(arch.visual_input, arch.visual_stride).unwrap(), (6, 6));
    // intermediate visual extent: one stride-2 conv halves 24 -> 12
    let (s1, _) = arch.conv_specs(arch.visual_stride).unwrap();
    assert_eq!(s1.out_hw(24, 24).unwrap(), (12, 12));
}

#[test]
fn paper_scale_map_shapes() {
    let arch = ArchitectureConfig::paper_scale();
    arch.validate().unwrap();
    assert_eq!(arch.stack_shape(arch.audio_input, arch.audio_stride).unwrap(), (8, 500));
    assert_eq!(arch.stack_shape(arch.visual_input, arch.visual_stride).unwrap(), (13, 23));
}

#[test]
fn forward_is_reproducible_per_seed() {
    let batch = toy_batch(&desk(), 3, 8);
    for variant in Variant::ALL {
        let mut a = Model::init(variant, desk(), 11).unwrap();
        let mut b = Model::init(variant, desk(), 11).unwrap();
        assert_eq!(
            a.forward_pass(&batch).unwrap(),
            b.forward_pass(&batch).unwrap()
        );
        let mut c = Model::init(variant, desk(), 12).unwrap();
        assert_ne!(
            b.forward_pass(&batch).unwrap(),
            c.forward_pass(&batch).unwrap()
        );
    }
}

#[test]
fn burst_zero_teacher_is_fixed_point() {
    let mut model = Model::init(Variant::Mburst, desk(), 21).unwrap();
    let batch = toy_batch(&desk(), 2, 22);
    let probs = model.forward_pass(&batch).unwrap();
    let zero_grad = Tensor::zeros(probs.shape());
    let updates = model.feedback_gradients(&zero_grad, &BurstConfig::default()).unwrap();
    assert_eq!(updates.len(), model.param_names().len());
    for (name, grad) in &updates {
        assert!(
            grad.data().iter().all(|&v| v == 0.0),
            "{name} has nonzero pseudo-gradient"
        );
    }
    let (p, p_bar) = model.head_burst_probs().unwrap();
    assert!(p.data().iter().all(|&v| v == 0.2));
    assert!(p_bar.data().iter().all(|&v| v == 0.2));

    // per-layer taught/untaught states coincide bitwise
    if let Net::Burst { audio, visual, head } = &model.net {
        let pairs: Vec<(Option<(&Tensor, &Tensor)>, &str)> = vec![
            (head.rates(), "head"),
            (audio.conv1.rates(), "audio.conv1"),
            (audio.conv2.rates(), "audio.conv2"),
            (audio.embed.rates(), "audio.embed"),
            (visual.conv1.rates(), "visual.conv1"),
            (visual.conv2.rates(), "visual.conv2"),
            (visual.embed.rates(), "visual.embed"),
        ];
        for (pair, name) in pairs {
            let (b, b_bar) = pair.unwrap_or_else(|| panic!("{name} has no rates"));
            assert_eq!(b, b_bar, "{name}");
        }
    } else {
        panic!("expected burst net");
    }

    // applying the step through the optimizer leaves weights untouched
    let mut opt = Adam::new(crate::loss_opt::AdamConfig {
        weight_decay: 0.0,
        ..Default::default()
    });
    let before: Vec<Tensor> = model
        .param_names()
        .iter()
        .map(|n| model.param(n).unwrap().clone())
        .collect();
    for (name, grad) in &updates {
        opt.step(name, model.param_mut(name).unwrap(), grad).unwrap();
    }
    for (name, before) in model.param_names().iter().zip(&before) {
        assert_eq!(model.param(name).unwrap(), before, "{name} moved");
    }
}

#[test]
fn one_learn_step_decreases_loss() {
    let arch = desk();
    let batch = toy_batch(&arch, 4, 33);
    for variant in Variant::ALL {
        let mut model = Model::init(variant, arch.clone(), 34).unwrap();
        let mut opt = Adam::new(Default::default());
        let cfg = BurstConfig::default();
        let before = model.learn_step(&batch, 2.0, 1e-7, &cfg, &mut opt).unwrap();
        let probs = model.forward_pass(&batch).unwrap();
        let after = wbce_loss(&probs, &batch.mask, 2.0, 1e-7).unwrap();
        assert!(
            after < before,
            "{variant:?}: loss went {before} -> {after}"
        );
    }
}

#[test]
fn gradient_names_cover_all_params() {
    let arch = desk();
    let batch = toy_batch(&arch, 2, 44);
    for variant in Variant::ALL {
        let mut model = Model::init(variant, arch.clone(), 45).unwrap();
        let (_, updates) = model
            .loss_gradients(&batch, 1.0, 1e-7, &BurstConfig::default())
            .unwrap();
        let mut got: Vec<String> = updates.iter().map(|(n, _)| n.clone()).collect();
        got.sort();
        let mut expected = model.param_names();
        expected.sort();
        assert_eq!(got, expected, "{variant:?}");
        for (name, grad) in &updates {
            assert_eq!(
                grad.shape(),
                model.param(name).unwrap().shape(),
                "{variant:?} {name}"
            );
        }
    }
}

#[test]
fn concat_split_segments_have_embed_extent() {
    let arch = desk();
    let mut model = Model::init(Variant::Mburst, arch.clone(), 50).unwrap();
    let batch = toy_batch(&arch, 2, 51);
    model.forward_pass(&batch).unwrap();
    if let Net::Burst { head, .. } = &mut model.net {
        head.output_burst_prob(&Tensor::zeros(&[2, arch.mask_bins]), &BurstConfig::default())
            .unwrap();
        head.burst_rates().unwrap();
        let (fb, _) = head.project_feedback().unwrap();
        assert_eq!(fb.shape(), &[2, 2 * arch.embed_units]);
        let (fb_a, fb_v) = fb.split_cols(arch.embed_units).unwrap();
        assert_eq!(fb_a.shape(), &[2, arch.embed_units]);
        assert_eq!(fb_v.shape(), &[2, arch.embed_units]);
    }
}

#[test]
fn multimodal_variants_are_shape_symmetric() {
    let arch = desk();
    let bp = Model::init(Variant::MultimodalBp, arch.clone(), 60).unwrap();
    let burst = Model::init(Variant::Mburst, arch.clone(), 60).unwrap();
    assert_eq!(bp.forward_param_count(), burst.forward_param_count());
    for name in bp.param_names() {
        assert_eq!(
            bp.param(&name).unwrap().shape(),
            burst.param(&name).unwrap().shape(),
            "{name}"
        );
    }
    let uni = Model::init(Variant::UnimodalBp, arch.clone(), 60).unwrap();
    assert!(uni.forward_param_count() < bp.forward_param_count());
    assert!(uni.param("visual.conv1.w").is_none());
    // unimodal head spans one embedding, multimodal two
    assert_eq!(uni.param("head.w").unwrap().shape()[1], arch.embed_units);
    assert_eq!(bp.param("head.w").unwrap().shape()[1], 2 * arch.embed_units);
}

#[test]
fn burst_feedback_shapes_chain_back_to_inputs() {
    let arch = desk();
    let mut model = Model::init(Variant::Mburst, arch.clone(), 70).unwrap();
    let batch = toy_batch(&arch, 2, 71);
    model.forward_pass(&batch).unwrap();
    let grad = Tensor::full(&[2, arch.mask_bins], 0.01);
    model.feedback_gradients(&grad, &BurstConfig::default()).unwrap();
    if let Net::Burst { audio, visual, .. } = &model.net {
        let (fb_a, _) = audio.conv1.project_feedback().unwrap();
        assert_eq!(fb_a.shape(), batch.audio.shape());
        let (fb_v, _) = visual.conv1.project_feedback().unwrap();
        assert_eq!(fb_v.shape(), batch.visual.shape());
    }
}

#[test]
fn energy_fractions_are_bounded_and_dead_layers_read_zero() {
    let arch = desk();
    let mut model = Model::init(Variant::MultimodalBp, arch.clone(), 80).unwrap();
    let batch = toy_batch(&arch, 2, 81);
    model.forward_pass(&batch).unwrap();
    for fraction in model.layer_active_fractions() {
        assert!((0.0..=1.0).contains(&fraction));
    }
    // kill the audio conv1 kernel: its relu output is identically zero
    *model.param_mut("audio.conv1.w").unwrap() = Tensor::zeros(&[8, 1, 3, 3]);
    model.forward_pass(&batch).unwrap();
    assert_eq!(model.layer_active_fractions()[0], 0.0);
}

#[test]
fn training_trajectory_is_deterministic() {
    let arch = desk();
    let batch = toy_batch(&arch, 4, 90);
    let run = || -> Vec<f64> {
        let mut model = Model::init(Variant::Mburst, arch.clone(), 91).unwrap();
        let mut opt = Adam::new(Default::default());
        (0..3)
            .map(|_| {
                model
                    .learn_step(&batch, 1.5, 1e-7, &BurstConfig::default(), &mut opt)
                    .unwrap()
            })
            .collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn predict_mask_threshold_semantics() {
    let arch = desk();
    let mut model = Model::init(Variant::MultimodalBp, arch.clone(), 100).unwrap();
    zero_head(&mut model);
    let batch = toy_batch(&arch, 2, 101);
    // fresh zero head gives probs exactly 0.5: inclusive threshold keeps them
    let mask = model.predict_mask(&batch, 0.5).unwrap();
    assert!(mask.data().iter().all(|&v| v == 1.0));

    let mut model = Model::init(Variant::MultimodalBp, arch, 102).unwrap();
    let low = model.predict_mask(&batch, 0.4).unwrap();
    let high = model.predict_mask(&batch, 0.6).unwrap();
    for (l, h) in low.data().iter().zip(high.data()) {
        assert!(h <= l, "raising the threshold must never add positives");
    }
}

#[test]
fn checkpoint_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ckpt");
    let arch = desk();
    let batch = toy_batch(&arch, 2, 110);
    let mut model = Model::init(Variant::Mburst, arch, 111).unwrap();
    let mut opt = Adam::new(Default::default());
    model
        .learn_step(&batch, 1.0, 1e-7, &BurstConfig::default(), &mut opt)
        .unwrap();
    save_checkpoint(&model, &opt, 7, &dir).unwrap();

    let (restored, opt2, desc) = load_checkpoint(&dir).unwrap();
    assert_eq!(desc.epoch, 7);
    assert_eq!(desc.variant, Variant::Mburst);
    assert_eq!(desc.adam_step, 1);
    for name in model.param_names() {
        let expected = f32_quantize(model.param(&name).unwrap());
        assert_eq!(restored.param(&name).unwrap(), &expected, "{name}");
        let slot = opt2.slot(&name).unwrap();
        assert_eq!(slot.step, 1);
        assert_eq!(&slot.m, &f32_quantize(&opt.slot(&name).unwrap().m), "{name} m");
    }

    // saving the restored model again is byte-identical
    let dir2 = tmp.path().join("ckpt2");
    save_checkpoint(&restored, &opt2, 7, &dir2).unwrap();
    let read_all = |d: &std::path::Path| {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.is_file())
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        files
    };
    assert_eq!(read_all(&dir), read_all(&dir2));
}

#[test]
fn rejects_wrong_input_shapes() {
    let arch = desk();
    let mut model = Model::init(Variant::MultimodalBp, arch.clone(), 120).unwrap();
    let mut batch = toy_batch(&arch, 2, 121);
    batch.audio = Tensor::zeros(&[2, 1, 8, 32]);
    match model.forward_pass(&batch) {
        Err(Error::ShapeMismatch { op, .. }) => assert_eq!(op, "audio input"),
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}
