mod common;

use candle_core::{Device, Tensor};
use common::*;
use epvt::prompt::{check_simplex, softmax_rows};
use epvt::synth::ImageRecord;
use epvt::vit::EpvtModel;
use epvt::EpvtError;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn randomize_bank(model: &EpvtModel, rng: &mut ChaCha8Rng) {
    let bank = model.prompts();
    let fill = |var: &candle_core::Var, rng: &mut ChaCha8Rng| {
        let data: Vec<f64> = (0..var.elem_count()).map(|_| rng.random_range(-2.0..2.0)).collect();
        var.set(&Tensor::from_vec(data, var.shape(), &Device::Cpu).unwrap()).unwrap();
    };
    fill(bank.shared(), rng);
    for m in 0..bank.num_domains() {
        let (u, v) = bank.factors(m).unwrap();
        fill(u, rng);
        fill(v, rng);
    }
}

fn random_simplex(rng: &mut ChaCha8Rng, rows: usize, m: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * m);
    for _ in 0..rows {
        let e: Vec<f64> = (0..m).map(|_| -rng.random_range(1e-12f64..1.0).ln()).collect();
        let s: f64 = e.iter().sum();
        data.extend(e.iter().map(|x| x / s));
    }
    Tensor::from_vec(data, (rows, m), &Device::Cpu).unwrap()
}

#[test]
fn domain_prompts_match_nested_loop_oracle() {
    let model = tiny_model(0, false);
    let (s, d) = (4, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        randomize_bank(&model, &mut rng);
        let bank = model.prompts();
        let shared = flat(bank.shared().as_tensor());
        for m in 0..bank.num_domains() {
            let (u, v) = bank.factors(m).unwrap();
            let (u, v) = (flat(u.as_tensor()), flat(v.as_tensor()));
            let got = flat(&bank.domain_prompt(m).unwrap());
            for i in 0..s {
                for j in 0..d {
                    let want = shared[i * d + j] * u[i] * v[j];
                    assert!((got[i * d + j] - want).abs() < 1e-7);
                }
            }
        }
    }
}

#[test]
fn rank_one_factors_have_a_single_singular_value() {
    let model = tiny_model(0, false);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        randomize_bank(&model, &mut rng);
        for m in 0..3 {
            let r = flat(&model.prompts().rank_one(m).unwrap());
            let sv = DMatrix::from_row_slice(4, 16, &r).singular_values();
            let (s1, s2) = (sv[0], sv[1]);
            assert!(s1 > 0.0);
            assert!(s2 / s1 < 1e-6, "σ2/σ1 = {}", s2 / s1);
        }
    }
}

#[test]
fn all_equal_prompts_are_fixed_by_any_mixture() {
    // Ones-initialized factors make every domain prompt equal to P*.
    let model = tiny_model(3, false);
    let shared = flat(model.prompts().shared().as_tensor());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_simplex(&mut rng, 2, 3);
    for row in flat(&model.prompts().adapted_prompt(&w).unwrap()).chunks(shared.len()) {
        for (a, b) in row.iter().zip(&shared) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn adapter_output_is_invariant_to_logit_shifts() {
    let model = tiny_model(4, false);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let features = Tensor::from_vec(
        (0..5 * 16).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>(),
        (5, 16),
        &Device::Cpu,
    )
    .unwrap();
    let before = flat(&model.adapter().weights(&features).unwrap());
    let bias = model.adapter().output_layer().bias();
    bias.set(&(bias.as_tensor() + 3.7).unwrap()).unwrap();
    let after = flat(&model.adapter().weights(&features).unwrap());
    for (a, b) in before.iter().zip(&after) {
        assert!((a - b).abs() < 1e-6);
    }
    let logits = model.adapter().logits(&features).unwrap();
    let direct = flat(&softmax_rows(&logits).unwrap());
    assert_eq!(direct, after);
}

#[test]
fn random_adapter_stays_on_the_simplex() {
    let model = EpvtModel::new(&epvt::vit::ModelConfig::default(), candle_core::DType::F64, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for layer in [model.adapter().hidden_layer(), model.adapter().output_layer()] {
        for var in [layer.weight(), layer.bias()] {
            let data: Vec<f64> = (0..var.elem_count()).map(|_| rng.random_range(-0.3..0.3)).collect();
            var.set(&Tensor::from_vec(data, var.shape(), &Device::Cpu).unwrap()).unwrap();
        }
    }
    let features = Tensor::from_vec(
        (0..8 * 64).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>(),
        (8, 64),
        &Device::Cpu,
    )
    .unwrap();
    let w = model.adapter().weights(&features).unwrap();
    check_simplex(&w).unwrap();
    for row in flat(&w).chunks(5) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&x| x > 0.0 && x < 1.0));
    }
}

#[test]
fn one_hot_weights_reproduce_the_single_prompt_forward() {
    let model = tiny_model(6, true);
    let records = tiny_records(6);
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let x = model.images_to_tensor(&refs).unwrap();
    for m in 0..3 {
        let mut w = vec![0.0; 6 * 3];
        for i in 0..6 {
            w[i * 3 + m] = 1.0;
        }
        let w = Tensor::from_vec(w, (6, 3), &Device::Cpu).unwrap();
        let adapted = model.prompts().adapted_prompt(&w).unwrap();
        let a = flat(&model.forward_with_prompt(&x, &adapted).unwrap());
        let b = flat(&model.forward_with_prompt(&x, &model.prompts().domain_prompt(m).unwrap()).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-6);
        }
    }
}

#[test]
fn simplex_violations_are_rejected() {
    let model = tiny_model(7, false);
    let w = Tensor::new(&[[0.5f64, 0.3, 0.1]], &Device::Cpu).unwrap();
    assert!(matches!(
        model.prompts().adapted_prompt(&w),
        Err(EpvtError::SimplexViolation { .. })
    ));
    let ok = Tensor::new(&[[0.5f64, 0.3, 0.2 + 5e-5]], &Device::Cpu).unwrap();
    assert!(model.prompts().adapted_prompt(&ok).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adapted_prompt_is_a_convex_combination(seed in 0u64..10_000) {
        let model = tiny_model(seed, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_simplex(&mut rng, 1, 3);
        let got = flat(&model.prompts().adapted_prompt(&w).unwrap());
        let weights = flat(&w);
        let prompts: Vec<Vec<f64>> = (0..3).map(|m| flat(&model.prompts().domain_prompt(m).unwrap())).collect();
        for k in 0..got.len() {
            let want: f64 = (0..3).map(|m| weights[m] * prompts[m][k]).sum();
            prop_assert!((got[k] - want).abs() < 1e-12);
            let lo = prompts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
            let hi = prompts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(got[k] >= lo - 1e-12 && got[k] <= hi + 1e-12);
        }
    }

    #[test]
    fn adapter_weights_are_probabilities(seed in 0u64..10_000) {
        let model = tiny_model(seed, false);
        let records = tiny_records(seed % 50);
        let refs: Vec<&ImageRecord> = records.iter().collect();
        let f = model.forward_plain(&model.images_to_tensor(&refs).unwrap()).unwrap();
        for row in flat(&model.adapter_weights(&f).unwrap()).chunks(3) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|&x| x > 0.0));
        }
    }
}
