mod common;

use common::{audit, randomize, zeroed, Map};
use mbt_core::model::{
    cab_forward, cptb_forward, infer, init_weights, mbt_forward, module_param_counts, param_count, ppsa_forward,
    prm_forward, spal_forward, ModelConfig, ParamTree,
};
use mbt_core::ops::bilinear_resize;
use mbt_core::{Rng, Tape, Tensor};

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k * k + cout
}

/// Layer-by-layer count for a CAB of width c and squeeze 3.
fn cab_count(c: usize) -> usize {
    let h = c / 3;
    conv_params(c, h, 3) + conv_params(h, c, 3) + conv_params(c, h, 1) + conv_params(h, c, 1)
}

#[test]
fn tiny_param_count_matches_hand_count() {
    // C = 32, C1 = 32, C2 = 32, SPAL width 16, r = 2.
    let spal = 2 * 16 // norm1
        + conv_params(16, 32, 1) // lift
        + 3 * (16 * 16 + 16) + conv_params(16, 16, 1) // q, k, v, out
        + cab_count(16)
        + 2 * conv_params(16, 16, 1) // err, fuse
        + 2 * 16 // norm2
        + (16 * 32 + 32) + (32 * 16 + 16); // ffn
    assert_eq!(spal, 4954);
    let cptb = conv_params(32, 32, 1) + 2 * spal + conv_params(16, 16, 3) + cab_count(16) + 2 * conv_params(16, 32, 1);
    let total = conv_params(3, 32, 3)
        + cptb
        + conv_params(32, 32, 3)
        + conv_params(32, 12, 3)
        + conv_params(3, 3, 3)
        + conv_params(3, 16, 1)
        + conv_params(16, 3, 1);
    assert_eq!(total, 29_825);
    let cfg = ModelConfig::tiny(2);
    assert_eq!(param_count(&cfg), total);
    assert_eq!(init_weights::<f32>(&cfg, 0).unwrap().num_params(), total);
}

#[test]
fn module_counts_sum_to_total() {
    let cfg = ModelConfig::default();
    let groups = module_param_counts(&cfg);
    assert_eq!(groups.iter().map(|g| g.1).sum::<usize>(), param_count(&cfg));
    assert_eq!(groups.iter().filter(|g| g.0.starts_with("cptb.")).count(), 3);
}

fn input(shape: [usize; 4], seed: u64) -> Tensor<f64> {
    Tensor::rand_uniform(shape.to_vec(), 0.0, 1.0, &mut Rng::new(seed))
}

#[test]
fn zero_spal_and_cptb_are_identities() {
    let cfg = ModelConfig::tiny(2);
    let p = zeroed(&init_weights::<f64>(&cfg, 1).unwrap());
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let x = tape.leaf(input([1, 16, 16, 16], 3));
    let (h, t) = spal_forward(&x, &bound.root().sub("cptb.0.spal.0"), &cfg).unwrap();
    assert!(h.value().bit_eq(&x.value()));
    assert!(t.f_hat.bit_eq(&x.value()));
    assert!(t.f_bar.data().iter().all(|&v| v == 0.0));
    let y = tape.leaf(input([2, 32, 8, 16], 4));
    let (h, _) = cptb_forward(&y, &bound.root().sub("cptb.0"), &cfg).unwrap();
    assert!(h.value().bit_eq(&y.value()));
}

#[test]
fn zero_model_is_bilinear_and_fresh_prm_is_identity() {
    for r in [2, 3, 4] {
        let cfg = ModelConfig::tiny(r);
        let x = input([1, 3, 16, 8], r as u64);
        let up = bilinear_resize(&x, 16 * r, 8 * r).unwrap();
        let p = zeroed(&init_weights::<f64>(&cfg, 0).unwrap());
        assert!(infer(&p, &cfg, &x).unwrap().bit_eq(&up));

        let fresh = init_weights::<f64>(&cfg, 5).unwrap();
        let tape = Tape::new();
        let bound = fresh.bind_frozen(&tape);
        let (sr, t) = mbt_forward(&tape.constant(x.clone()), &bound.root(), &cfg).unwrap();
        assert!(sr.value().bit_eq(&t.sr_hat));
        // the zero-initialized head leaves only the interpolation skip
        assert!(t.sr_hat.bit_eq(&up));
    }
}

#[test]
fn output_shapes_follow_scale() {
    for r in [2, 3, 4] {
        let cfg = ModelConfig::tiny(r);
        let p = init_weights::<f32>(&cfg, 2).unwrap();
        for (h, w) in [(16, 16), (24, 8), (8, 32)] {
            let y = infer(&p, &cfg, &Tensor::zeros(vec![1, 3, h, w])).unwrap();
            assert_eq!(y.shape(), &[1, 3, r * h, r * w]);
        }
    }
    let p = init_weights::<f32>(&ModelConfig::tiny(2), 2).unwrap();
    assert!(infer(&p, &ModelConfig::tiny(2), &Tensor::zeros(vec![1, 3, 12, 16])).is_err());
}

#[test]
fn back_projection_relations_hold_exactly() {
    let cfg = ModelConfig::tiny(2);
    for seed in 0..5 {
        let p = randomize(&init_weights::<f64>(&cfg, seed).unwrap(), 0.2, seed + 100);
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let x = tape.leaf(input([1, 3, 16, 16], seed));
        let (_, t) = mbt_forward(&x, &bound.root(), &cfg).unwrap();
        let c = &t.cptbs[0];
        assert_eq!(c.h_p.shape()[1], 16);
        assert_eq!(c.h_c.shape()[1], 16);
        assert!(audit::cptb(c, &p, "cptb.0", &t.f0).is_empty());
        let mut spal_in = c.h_p.clone();
        for (j, s) in c.spals.iter().enumerate() {
            assert_eq!(s.f_c.shape()[1], 16);
            assert_eq!(s.f_p.shape()[1], 16);
            assert!(audit::spal(s, &p, &format!("cptb.0.spal.{j}"), &spal_in).is_empty());
            spal_in = s.h.clone();
        }
        assert_eq!(t.prm.i_lr_hat.shape(), &[1, 3, 16, 16]);
    }
}

#[test]
fn prm_diff_recomputes_independently() {
    let cfg = ModelConfig::tiny(3);
    let p = randomize(&init_weights::<f64>(&cfg, 0).unwrap(), 0.1, 9);
    let lr = input([1, 3, 8, 8], 1);
    let sr_hat = bilinear_resize(&lr, 24, 24).unwrap();
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let (out, t) = prm_forward(&tape.leaf(sr_hat.clone()), &tape.leaf(lr.clone()), &bound.root().sub("prm")).unwrap();
    let down = bilinear_resize(&sr_hat, 8, 8).unwrap();
    let d: Vec<f64> = down.data().iter().zip(lr.data()).map(|(a, b)| a - b).collect();
    assert_eq!(t.diff.data(), &d[..]);
    assert_eq!(out.shape(), vec![1, 3, 24, 24]);
}

fn block_tree(names: &[(&str, Vec<usize>)], seed: u64) -> ParamTree<f64> {
    let mut rng = Rng::new(seed);
    let mut t = ParamTree::new();
    for (n, s) in names {
        t.insert(*n, Tensor::rand_normal(s.clone(), 0.3, &mut rng)).unwrap();
    }
    t
}

fn ppsa_tree(c: usize, seed: u64) -> ParamTree<f64> {
    block_tree(
        &[
            ("q_proj.weight", vec![c, c]),
            ("q_proj.bias", vec![c]),
            ("k_proj.weight", vec![c, c]),
            ("k_proj.bias", vec![c]),
            ("v_proj.weight", vec![c, c]),
            ("v_proj.bias", vec![c]),
            ("out_proj.weight", vec![c, c, 1, 1]),
            ("out_proj.bias", vec![c]),
        ],
        seed,
    )
}

#[test]
fn ppsa_matches_naive_loops() {
    let p = ppsa_tree(8, 11);
    let x = input([1, 8, 16, 16], 12);
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let (y, t) = ppsa_forward(&tape.leaf(x.clone()), &bound.root(), 2, &[2, 4, 8]).unwrap();
    assert_eq!(t.kv_tokens, 64 + 16 + 4);
    let naive = common::ppsa(&Map::from_tensor(&x), &p, "", 2, &[2, 4, 8]);
    assert!(common::max_diff(&Map::from_tensor(&y.value()), &naive) < 1e-5);
}

#[test]
fn ppsa_with_zero_weights_is_zero() {
    let p = zeroed(&ppsa_tree(4, 0));
    let tape = Tape::new();
    let bound = p.bind(&tape);
    let (y, _) = ppsa_forward(&tape.leaf(Tensor::<f64>::full(vec![1, 4, 8, 8], 3.0)), &bound.root(), 2, &[2, 4]).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

fn cab_tree(c: usize, seed: u64) -> ParamTree<f64> {
    let h = c / 3;
    block_tree(
        &[
            ("conv1.weight", vec![h, c, 3, 3]),
            ("conv1.bias", vec![h]),
            ("conv2.weight", vec![c, h, 3, 3]),
            ("conv2.bias", vec![c]),
            ("ca_reduce.weight", vec![h, c, 1, 1]),
            ("ca_reduce.bias", vec![h]),
            ("ca_expand.weight", vec![c, h, 1, 1]),
            ("ca_expand.bias", vec![c]),
        ],
        seed,
    )
}

#[test]
fn cab_matches_naive_loops_and_gates_in_unit_interval() {
    let p = cab_tree(6, 21);
    for seed in 0..4 {
        let x = input([1, 6, 8, 8], seed);
        let tape = Tape::new();
        let bound = p.bind(&tape);
        let (y, t) = cab_forward(&tape.leaf(x.clone()), &bound.root()).unwrap();
        let naive = common::cab(&Map::from_tensor(&x), &p, "");
        assert!(common::max_diff(&Map::from_tensor(&y.value()), &naive) < 1e-5);
        assert!(t.gate.data().iter().all(|&g| g > 0.0 && g < 1.0));
    }
    let z = zeroed(&p);
    let tape = Tape::new();
    let bound = z.bind(&tape);
    let (y, _) = cab_forward(&tape.leaf(Tensor::<f64>::zeros(vec![1, 6, 8, 8])), &bound.root()).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn spal_preserves_shape_for_several_widths() {
    for c_in in [32, 48, 96] {
        let cfg = ModelConfig { c2: 2 * c_in, n_cptb: 1, n_spal: 1, ..ModelConfig::tiny(2) };
        let p = init_weights::<f32>(&cfg, 3).unwrap();
        let tape = Tape::new();
        let bound = p.bind_frozen(&tape);
        let x = tape.constant(Tensor::<f32>::full(vec![1, c_in, 8, 8], 0.5));
        let (h, _) = spal_forward(&x, &bound.root().sub("cptb.0.spal.0"), &cfg).unwrap();
        assert_eq!(h.shape(), vec![1, c_in, 8, 8]);
    }
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    let cfg = ModelConfig::tiny(2);
    let params = randomize(&init_weights::<f64>(&cfg, 0).unwrap(), 0.05, 1);
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let x = tape.constant(input([1, 3, 8, 8], 2));
    let target = tape.constant(input([1, 3, 16, 16], 3));
    let (y, _) = mbt_forward(&x, &bound.root(), &cfg).unwrap();
    let loss = y.sub(&target).unwrap().abs().unwrap().mean().unwrap();
    tape.backward(loss).unwrap();
    for name in params.names() {
        let g = bound.var(name).unwrap().grad().unwrap_or_else(|| panic!("{name} has no gradient"));
        assert!(g.is_finite(), "{name}");
    }
}
