use widesparse::allocator::LayerSizes;
use widesparse::mask::MaskMode;
use widesparse::model::*;

mod common;
use common::{max_grad_error, random_batch, small_arch};

#[test]
fn gradients_match_finite_differences() {
    for act in [Activation::Relu, Activation::Linear] {
        for param in [Parameterization::Standard, Parameterization::Ntk] {
            for sparse in [false, true] {
                let arch = small_arch(act, param, sparse);
                let mut model = MlpModel::init(&arch, 11).unwrap();
                let (x, y) = random_batch(10, 4, 3, 12);
                let err = max_grad_error(&mut model, &x, &y);
                assert!(err < 1e-5, "{act:?} {param:?} sparse={sparse}: {err}");
            }
        }
    }
}

#[test]
fn sparse_path_gradients_match_dense_expansion() {
    // connectivity 0.05 selects the gather/scatter kernels
    let arch = MlpArch::one_hidden(40, 20, 4, Activation::Relu, Parameterization::Standard, true).with_variant(
        Variant::Sparse(SparseSpec {
            keep: vec![40, 80],
            mask_seed: 1,
            mode: MaskMode::AllDims,
        }),
    );
    let mut model = MlpModel::init(&arch, 3).unwrap();
    let (x, y) = random_batch(40, 6, 4, 4);
    assert!(max_grad_error(&mut model, &x, &y) < 1e-5);
}

#[test]
fn masked_layer_with_no_kept_weights_has_zero_gradient() {
    let arch = MlpArch::one_hidden(4, 3, 2, Activation::Relu, Parameterization::Standard, true).with_variant(
        Variant::Sparse(SparseSpec {
            keep: vec![0, 6],
            mask_seed: 2,
            mode: MaskMode::AllDims,
        }),
    );
    let model = MlpModel::init(&arch, 0).unwrap();
    let (x, y) = random_batch(4, 5, 2, 1);
    let (_, g) = model.loss_and_gradients(&x, &y).unwrap();
    assert!(g.layers[0].weights.is_empty());
    assert!(g.dense_weights(&model, 0).iter().all(|&v| v == 0.0));
}

#[test]
fn duplicate_batch_gives_single_sample_gradient() {
    let model = MlpModel::init(&small_arch(Activation::Relu, Parameterization::Standard, true), 4).unwrap();
    let (x1, y1) = random_batch(10, 1, 3, 8);
    let x3 = Mat::from_samples(10, std::iter::repeat(x1.data()).take(3));
    let (l1, g1) = model.loss_and_gradients(&x1, &y1).unwrap();
    let (l3, g3) = model.loss_and_gradients(&x3, &[y1[0]; 3]).unwrap();
    assert!((l1 - l3).abs() < 1e-14);
    for (a, b) in g1.layers.iter().zip(&g3.layers) {
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}

#[test]
fn ntk_hand_example() {
    let arch = MlpArch::ntk_two_layer(1, 1, 1).with_variant(Variant::Dense);
    let arch = MlpArch {
        activation: Activation::Linear,
        ..arch
    };
    let model = MlpModel::from_parameters(&arch, vec![vec![2.0], vec![3.0]], vec![None, None]).unwrap();
    assert_eq!(model.forward(&[1.0]).unwrap(), vec![6.0]);
}

#[test]
fn ntk_forward_matches_formula() {
    let (d, n) = (7, 5);
    let arch = MlpArch::ntk_two_layer(d, n, 1);
    let model = MlpModel::init(&arch, 9).unwrap();
    let u = model.layers()[0].weights();
    let v = model.layers()[1].weights();
    let x: Vec<f64> = (0..d).map(|i| (i as f64 - 3.0) * 0.4).collect();
    let mut want = 0.0;
    for i in 0..n {
        let ux: f64 = (0..d).map(|k| u[i * d + k] * x[k]).sum();
        want += v[i] * ux.max(0.0);
    }
    want /= ((n * d) as f64).sqrt();
    let got = model.forward(&x).unwrap()[0];
    assert!((got - want).abs() < 1e-12);
}

#[test]
fn forward_rejects_wrong_length() {
    let model = MlpModel::init(&MlpArch::ntk_two_layer(3, 2, 1), 0).unwrap();
    assert!(matches!(
        model.forward(&[1.0, 2.0]),
        Err(ModelError::DimensionMismatch { expected: 3, got: 2 })
    ));
}

#[test]
fn relu_is_positively_homogeneous_without_biases() {
    let model = MlpModel::init(&MlpArch::ntk_two_layer(6, 9, 3), 1).unwrap();
    let x = [0.3, -1.0, 2.0, 0.0, 0.5, -0.2];
    assert!(model.forward(&[0.0; 6]).unwrap().iter().all(|&v| v == 0.0));
    let f = model.forward(&x).unwrap();
    let fx: Vec<f64> = x.iter().map(|v| 2.5 * v).collect();
    for (a, b) in model.forward(&fx).unwrap().iter().zip(&f) {
        assert!((a - 2.5 * b).abs() < 1e-12);
    }
}

#[test]
fn linear_model_is_affine() {
    let arch = MlpArch {
        activation: Activation::Linear,
        ..MlpArch::ntk_two_layer(4, 6, 2)
    };
    let model = MlpModel::init(&arch, 2).unwrap();
    let x = [0.1, 0.2, -0.3, 0.4];
    let y = [1.0, -2.0, 0.5, 0.0];
    let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
    let f = |v: &[f64]| model.forward(v).unwrap();
    let (a, b, c, z) = (f(&xy), f(&x), f(&y), f(&[0.0; 4]));
    for i in 0..2 {
        assert!((a[i] + z[i] - b[i] - c[i]).abs() < 1e-12);
    }
}

#[test]
fn standard_init_bounds() {
    let arch = MlpArch::one_hidden(784, 20, 10, Activation::Relu, Parameterization::Standard, true);
    let model = MlpModel::init(&arch, 0).unwrap();
    let bound = 1.0 / 28.0;
    assert!(model.layers()[0].weights().iter().all(|w| w.abs() < bound));
    assert!(model.layers()[0].bias().unwrap().iter().all(|w| w.abs() < bound));
    let b2 = 1.0 / 20f64.sqrt();
    assert!(model.layers()[1].weights().iter().all(|w| w.abs() < b2));
}

#[test]
fn sparse_ntk_init_variance() {
    let d = 100;
    let n = 400;
    let keep = d * n / 4;
    let arch = MlpArch::ntk_two_layer(d, n, 1).with_variant(Variant::Sparse(SparseSpec {
        keep: vec![keep as u64, n as u64],
        mask_seed: 3,
        mode: MaskMode::AllDims,
    }));
    let model = MlpModel::init(&arch, 5).unwrap();
    let w = model.layers()[0].weights();
    let kept: Vec<f64> = w.iter().copied().filter(|&v| v != 0.0).collect();
    assert_eq!(kept.len(), keep);
    let var_kept = kept.iter().map(|v| v * v).sum::<f64>() / keep as f64;
    let var_all = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
    assert!((var_kept - 4.0).abs() < 0.15, "{var_kept}");
    assert!((var_all - 1.0).abs() < 0.04, "{var_all}");
    // dense NTK layers use unit variance
    let dense = MlpModel::init(&MlpArch::ntk_two_layer(d, n, 1), 5).unwrap();
    let v = dense.layers()[0].weights();
    let var = v.iter().map(|v| v * v).sum::<f64>() / v.len() as f64;
    assert!((var - 1.0).abs() < 0.04);
}

#[test]
fn training_steps_keep_masked_weights_zero() {
    let arch = small_arch(Activation::Relu, Parameterization::Standard, true);
    let mut model = MlpModel::init(&arch, 7).unwrap();
    let before = model.mask_fingerprint();
    for s in 0..20 {
        let (x, y) = random_batch(10, 8, 3, 100 + s);
        let (_, g) = model.loss_and_gradients(&x, &y).unwrap();
        model.add_scaled(&g, -0.5);
    }
    assert_eq!(model.mask_fingerprint(), before);
    for (l, layer) in model.layers().iter().enumerate() {
        let m = layer.mask().unwrap();
        assert!(layer.nonzero_weights() <= m.keep_count(), "layer {l}");
        for (i, &w) in layer.weights().iter().enumerate() {
            if !m.is_kept(i) {
                assert_eq!(w, 0.0);
            }
        }
    }
}

#[test]
fn factorized_layer_composes_to_product() {
    let (d_i, d_o) = (6, 4);
    let (w1, w2) = factorize_layer(d_i, d_o, 4, 3).unwrap();
    let w = w1.matmul(&w2);
    // a linear bottleneck model holding the factors, against a dense model
    // holding their product; weights are stored output-major
    let t = |m: &Mat| {
        let mut out = Mat::zeros(m.cols(), m.rows());
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                out.set(j, i, m.get(i, j));
            }
        }
        out.into_vec()
    };
    let base = MlpArch {
        activation: Activation::Linear,
        ..MlpArch::one_hidden(d_i, d_o, 2, Activation::Linear, Parameterization::Standard, false)
    };
    let factored = base.clone().with_variant(Variant::LinearBottleneck { ranks: vec![4, 2] });
    let (v1, v2) = factorize_layer(d_o, 2, 2, 4).unwrap();
    let fm = MlpModel::from_parameters(&factored, vec![t(&w1), t(&w2), t(&v1), t(&v2)], vec![None; 4]).unwrap();
    let dm = MlpModel::from_parameters(&base, vec![t(&w), t(&v1.matmul(&v2))], vec![None; 2]).unwrap();
    let x = [0.5, -1.0, 0.25, 2.0, 0.0, -0.75];
    let (a, b) = (fm.forward(&x).unwrap(), dm.forward(&x).unwrap());
    for (u, v) in a.iter().zip(&b) {
        assert!((u - v).abs() < 1e-12);
    }
}

#[test]
fn rank_one_factors_give_rank_one_product() {
    let (w1, w2) = factorize_layer(5, 7, 1, 1).unwrap();
    let w = w1.matmul(&w2);
    // every 2x2 minor vanishes
    for i in 0..5 {
        for j in 0..7 {
            let minor = w.get(0, 0) * w.get(i, j) - w.get(i, 0) * w.get(0, j);
            assert!(minor.abs() < 1e-12);
        }
    }
    assert!(matches!(
        factorize_layer(5, 7, 6, 0),
        Err(ModelError::RankTooLarge { rank: 6, max: 5, .. })
    ));
}

#[test]
fn checkpoint_round_trip() {
    let arch = small_arch(Activation::Relu, Parameterization::Standard, true);
    let mut model = MlpModel::init(&arch, 21).unwrap();
    let (x, y) = random_batch(10, 8, 3, 1);
    let (_, g) = model.loss_and_gradients(&x, &y).unwrap();
    model.add_scaled(&g, -0.1);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.bin");
    save_checkpoint(&model, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.flat_parameters(), model.flat_parameters());
    assert_eq!(loaded.mask_fingerprint(), model.mask_fingerprint());

    // corrupt a masked position
    let layer = &model.layers()[0];
    let masked = (0..layer.weights().len()).find(|&i| !layer.mask().unwrap().is_kept(i)).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[masked * 8..masked * 8 + 8].copy_from_slice(&1.0f64.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(ModelError::Checkpoint(_))));
}

#[test]
fn param_count_is_invariant_in_sparse_family() {
    for w in [5usize, 10, 20, 40, 80, 160] {
        let arch = MlpArch::one_hidden(784, w, 10, Activation::Relu, Parameterization::Standard, true);
        let sizes: LayerSizes = arch.weight_sizes();
        let plan = widesparse::allocator::staggered_allocate(&sizes, sizes.total() - 3970).unwrap();
        let sparse = arch.sparsified(&plan, 1).unwrap();
        assert_eq!(sparse.param_count().unwrap(), 3970);
        let model = MlpModel::init(&sparse, 0).unwrap();
        let nz: usize = model.layers().iter().map(Layer::nonzero_weights).sum();
        assert!(nz <= 3970);
    }
}
