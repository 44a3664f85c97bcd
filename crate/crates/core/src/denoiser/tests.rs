use super::*;
use crate::ddpm::{make_linear_schedule, training_loss};
use crate::rng::{normal_tensor, seeded};
use proptest::prelude::*;
use rand::Rng;

fn small_config(classes: usize) -> DenoiserConfig {
    DenoiserConfig {
        patch_size: 8,
        num_classes: classes,
        base_width: 8,
        depth: 2,
        time_embed_dim: 8,
        use_attention: false,
        num_groups: 4,
        ir_replicate_3: false,
    }
}

fn conv(co: usize, ci: usize, k: usize) -> usize {
    co * ci * k * k + co
}

fn gn(c: usize) -> usize {
    2 * c
}

fn lin(a: usize, b: usize) -> usize {
    a * b + b
}

fn res(ci: usize, co: usize, d: usize) -> usize {
    let skip = if ci != co { conv(co, ci, 1) } else { 0 };
    gn(ci) + conv(co, ci, 3) + lin(d, co) + gn(co) + conv(co, co, 3) + skip
}

/// Closed-form parameter count of the reduced U-Net.
fn expected_params(c: &DenoiserConfig) -> usize {
    let d = c.time_embed_dim;
    let widths: Vec<usize> = (0..c.depth).map(|l| c.base_width << l).collect();
    let mut n = 2 * lin(d, d) + conv(c.base_width, c.in_channels(), 3);
    let mut ch = c.base_width;
    for &w in &widths {
        n += res(ch, w, d);
        ch = w;
    }
    n += res(ch, ch, d);
    if c.use_attention {
        n += gn(ch) + conv(3 * ch, ch, 1) + conv(ch, ch, 1);
    }
    for &w in widths.iter().rev() {
        n += res(ch + w, w, d);
        ch = w;
    }
    n + gn(c.base_width) + conv(3, c.base_width, 3)
}

fn patch_inputs(seed: u64, p: usize, classes: usize) -> (FrameTensor, FrameTensor, FrameTensor) {
    let mut rng = seeded(seed);
    let x = normal_tensor(&mut rng, p, p, 3);
    let y = FrameTensor::from_fn(p, p, 1, |_, _, _| rng.random_range(-1.0..1.0));
    let s = FrameTensor::from_fn(p, p, classes, |_, _, _| rng.random_range(0.0..1.0));
    (x, y, s)
}

#[test]
fn config_validation() {
    assert!(small_config(3).validate().is_ok());
    let bad = DenoiserConfig { patch_size: 10, depth: 2, ..small_config(3) };
    assert!(matches!(bad.validate(), Err(Error::InvalidConfig(_))));
    for bad in [
        DenoiserConfig { depth: 0, ..small_config(3) },
        DenoiserConfig { num_classes: 0, ..small_config(3) },
        DenoiserConfig { num_groups: 3, ..small_config(3) },
        DenoiserConfig { time_embed_dim: 7, ..small_config(3) },
    ] {
        assert!(matches!(build_denoiser::<f32, _>(&bad, &mut seeded(0)), Err(Error::InvalidConfig(_))));
    }
    assert_eq!(DenoiserConfig { ir_replicate_3: true, ..small_config(5) }.in_channels(), 11);
}

#[test]
fn same_seed_builds_identical_weights() {
    let c = small_config(4);
    let a: Denoiser = build_denoiser(&c, &mut seeded(3)).unwrap();
    let b: Denoiser = build_denoiser(&c, &mut seeded(3)).unwrap();
    let other: Denoiser = build_denoiser(&c, &mut seeded(4)).unwrap();
    assert_eq!(a.weights(), b.weights());
    assert_ne!(a.weights().params, other.weights().params);
    assert_eq!(a.weights().params, a.weights().ema);
}

#[test]
fn parameter_count_matches_closed_form() {
    let mut configs = vec![small_config(2), DenoiserConfig::default()];
    configs.push(DenoiserConfig { use_attention: true, depth: 3, ..small_config(7) });
    configs.push(DenoiserConfig { ir_replicate_3: true, patch_size: 64, num_classes: 150, ..DenoiserConfig::default() });
    for c in configs {
        let net = UNet::new(&c);
        assert_eq!(net.param_count(), expected_params(&c), "{c:?}");
        let summed: usize = net.entries().iter().map(|e| e.len()).sum();
        assert_eq!(summed, net.param_count());
    }
}

#[test]
fn sinusoidal_embedding_cases() {
    let zero = sinusoidal_embedding(0, 6).unwrap();
    assert_eq!(zero, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    assert_eq!(sinusoidal_embedding(1, 2).unwrap(), vec![1f64.sin(), 1f64.cos()]);
    for t in [1, 17, 999] {
        assert!(sinusoidal_embedding(t, 64).unwrap().iter().all(|v| v.abs() <= 1.0));
    }
    assert!(matches!(sinusoidal_embedding(3, 5), Err(Error::OddDimension(5))));
}

#[test]
fn prediction_is_pure_and_shaped() {
    for classes in [1, 3, 7] {
        let d: Denoiser = build_denoiser(&small_config(classes), &mut seeded(1)).unwrap();
        let (x, y, s) = patch_inputs(2, 8, classes);
        let a = d.predict_noise(&x, &y, &s, 12).unwrap();
        assert_eq!(a.shape(), (8, 8, 3));
        assert!(a.is_finite());
        assert_eq!(a, d.predict_noise(&x, &y, &s, 12).unwrap());
        let blank = FrameTensor::zeros(8, 8, classes);
        assert_ne!(a, d.predict_noise(&x, &y, &blank, 12).unwrap());
        assert_ne!(a, d.predict_noise(&x, &y, &s, 13).unwrap());
    }
    let d: Denoiser = build_denoiser(&small_config(3), &mut seeded(1)).unwrap();
    let (x, y, _) = patch_inputs(2, 8, 3);
    assert!(d.predict_noise(&x, &y, &FrameTensor::zeros(8, 8, 4), 1).is_err());
}

#[test]
fn logit_channel_permutation_is_absorbed_by_weights() {
    let classes = 5;
    let c = small_config(classes);
    let d: Denoiser = build_denoiser(&c, &mut seeded(9)).unwrap();
    let perm = [3usize, 0, 4, 1, 2];
    let (x, y, s) = patch_inputs(10, 8, classes);
    let s_perm = FrameTensor::from_fn(8, 8, classes, |u, v, k| s.get(u, v, perm[k]));

    let entry = d.net().entries().iter().find(|e| e.name == "conv_in.weight").unwrap().clone();
    let (cout, cin, k) = (entry.shape[0], entry.shape[1], entry.shape[2]);
    let first_logit = 3 + c.ir_channels();
    let mut weights = d.weights().clone();
    let base = weights.params.clone();
    for o in 0..cout {
        for j in 0..classes {
            for tap in 0..k * k {
                let dst = entry.offset + (o * cin + first_logit + j) * k * k + tap;
                let src = entry.offset + (o * cin + first_logit + perm[j]) * k * k + tap;
                weights.params[dst] = base[src];
            }
        }
    }
    let permuted = Denoiser::from_parts(&c, weights).unwrap();
    let a = d.predict_noise(&x, &y, &s, 20).unwrap();
    let b = permuted.predict_noise(&x, &y, &s_perm, 20).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-5, "{}", a.max_abs_diff(&b));
}

#[test]
fn zero_gradient_leaves_params_unchanged() {
    let mut opt = OptimizerState::<f32>::new(5, 1e-3);
    let mut params = vec![0.5f32, -1.0, 2.0, 0.0, 3.0];
    let before = params.clone();
    for _ in 0..3 {
        opt.apply(&mut params, &[0.0; 5]).unwrap();
    }
    assert_eq!(params, before);
    assert_eq!(opt.step, 3);
    assert!(opt.apply(&mut params, &[0.0; 4]).is_err());
}

#[test]
fn first_adam_step_moves_by_lr() {
    let mut opt = OptimizerState::<f64>::new(3, 0.01);
    let mut params = vec![1.0f64, 1.0, 1.0];
    opt.apply(&mut params, &[2.0, -0.5, 1e-3]).unwrap();
    for (p, s) in params.iter().zip([-1.0, 1.0, -1.0]) {
        assert!((p - (1.0 + 0.01 * s)).abs() < 1e-7, "{p}");
    }
}

fn random_samples(net: &UNet, seed: u64, count: usize, steps: usize) -> Vec<TrainingSample<f64>> {
    let c = net.config();
    let p = c.patch_size;
    let mut rng = seeded(seed);
    (0..count)
        .map(|_| {
            let mut input = Act::zeros(c.in_channels(), p, p);
            input.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            let target = (0..3 * p * p).map(|_| rng.random_range(-1.0..1.0)).collect();
            TrainingSample { input, t: rng.random_range(1..=steps), target }
        })
        .collect()
}

fn check_gradient(net: &UNet, params: &[f64], samples: &[TrainingSample<f64>], indices: &[usize]) {
    let (err, i) = max_gradient_error(net, params, samples, indices, 1e-4);
    assert!(err < 1e-4, "param {i} ({}): relative error {err}", param_name(net, i));
}

fn param_name(net: &UNet, i: usize) -> &str {
    &net.entries().iter().find(|e| (e.offset..e.offset + e.len()).contains(&i)).unwrap().name
}

fn perturbed_params(net: &UNet, seed: u64) -> Vec<f64> {
    let mut rng = seeded(seed);
    let mut p: Vec<f64> = net.init_params(&mut rng);
    // Move constant-initialized norms and biases off their special values.
    p.iter_mut().for_each(|v| *v += rng.random_range(-0.1..0.1));
    p
}

#[test]
fn gradients_match_finite_differences() {
    let net = UNet::new(&small_config(2));
    for seed in 0..3 {
        let params = perturbed_params(&net, 100 + seed);
        let samples = random_samples(&net, 200 + seed, 1, 50);
        let indices: Vec<usize> = if seed == 0 {
            (0..net.param_count()).collect()
        } else {
            let mut rng = seeded(300 + seed);
            (0..1500).map(|_| rng.random_range(0..net.param_count())).collect()
        };
        check_gradient(&net, &params, &samples, &indices);
    }
}

#[test]
fn attention_gradients_match_finite_differences() {
    let net = UNet::new(&DenoiserConfig { use_attention: true, ..small_config(2) });
    let params = perturbed_params(&net, 7);
    let samples = random_samples(&net, 8, 2, 50);
    let indices: Vec<usize> = net
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("mid"))
        .flat_map(|e| (e.offset..e.offset + e.len()).step_by(7))
        .collect();
    check_gradient(&net, &params, &samples, &indices);
}

#[test]
fn overfits_a_single_example() {
    let c = small_config(2);
    let mut d: Denoiser = build_denoiser(&c, &mut seeded(5)).unwrap();
    let net = d.net().clone();
    let mut rng = seeded(6);
    let mut input = Act::<f32>::zeros(c.in_channels(), 8, 8);
    input.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    let target: Vec<f32> = (0..3 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
    let samples = vec![TrainingSample { input, t: 10, target }];
    let mut opt = OptimizerState::new(net.param_count(), 1e-3);
    let initial = batch_loss(&net, &d.weights().params, &samples);
    for _ in 0..500 {
        let (_, g) = loss_and_grad(&net, &d.weights().params, &samples);
        opt.apply(&mut d.weights_mut().params, &g).unwrap();
    }
    let last = batch_loss(&net, &d.weights().params, &samples);
    assert!(last < 0.01 * initial, "{initial} -> {last}");
}

#[test]
fn train_step_reports_training_loss() {
    let c = small_config(3);
    let mut d: Denoiser = build_denoiser(&c, &mut seeded(1)).unwrap();
    let schedule = make_linear_schedule(40, 1e-4, 0.05).unwrap();
    let mut batch = crate::patch::PatchBatch::default();
    for k in 0..6 {
        let (x, y, s) = patch_inputs(50 + k, 8, 3);
        batch.visible.push(x.clamp(-1.0, 1.0));
        batch.infrared.push(y);
        batch.logits.push(s);
        batch.origins.push((k as usize, 0, 0));
    }
    let reference = training_loss(&batch.visible, &batch.infrared, &batch.logits, &d, &schedule, &mut seeded(77)).unwrap();
    let before = d.weights().params.clone();
    let mut opt = OptimizerState::new(before.len(), 1e-3);
    let loss = d.train_step(&mut opt, &batch, &schedule, &mut seeded(77)).unwrap();
    assert!((loss - reference).abs() <= 1e-5 * reference, "{loss} vs {reference}");
    assert_ne!(d.weights().params, before);
    assert_eq!(d.weights().ema, before);
}

#[test]
fn ema_momentum_extremes() {
    let params = vec![1.0f64, -2.0, 4.0];
    let mut ema = vec![0.0; 3];
    ema_update(&mut ema, &params, 1.0).unwrap();
    assert_eq!(ema, vec![0.0; 3]);
    ema_update(&mut ema, &params, 0.0).unwrap();
    assert_eq!(ema, params);
    let mut ema = vec![0.0f64];
    ema_update(&mut ema, &[1.0], 0.999).unwrap();
    assert!((ema[0] - 0.001).abs() < 1e-15);
    assert!(ema_update(&mut ema, &[1.0], 1.5).is_err());
    assert!(ema_update(&mut ema, &[1.0, 2.0], 0.5).is_err());
}

proptest! {
    #[test]
    fn ema_is_a_convex_combination(
        pairs in proptest::collection::vec((-1e3f32..1e3, -1e3f32..1e3), 1..50),
        momentum in 0.0f64..=1.0,
    ) {
        let mut ema: Vec<f32> = pairs.iter().map(|p| p.0).collect();
        let params: Vec<f32> = pairs.iter().map(|p| p.1).collect();
        ema_update(&mut ema, &params, momentum).unwrap();
        for ((e, p), &(old, _)) in ema.iter().zip(&params).zip(&pairs) {
            prop_assert!(*e >= old.min(*p) && *e <= old.max(*p));
        }
    }
}
