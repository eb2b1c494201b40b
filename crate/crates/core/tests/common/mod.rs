#![allow(dead_code)]

use rand::Rng as _;
use widesparse::mask::MaskMode;
use widesparse::model::*;
use widesparse::rng::rng_from_seed;

/// Line-by-line transcription of the reference `get_ntf` routine, operating on
/// counts already sorted in descending order. Returns `None` where the
/// reference raises (the total lies past the last staggered limit).
pub fn reference_get_ntf(num_to_freeze_tot: i64, num_w_sorted: &[i64]) -> Option<Vec<i64>> {
    let num_layers = num_w_sorted.len();
    let mut num_to_freeze = vec![0i64; num_layers];
    let num_w_diffs: Vec<i64> = num_w_sorted.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let aux_vect: Vec<i64> = (1..=num_w_diffs.len() as i64).collect();
    let ntf_lims: Vec<i64> = (1..num_layers)
        .map(|k| aux_vect[..k].iter().zip(&num_w_diffs[..k]).map(|(a, b)| a * b).sum())
        .collect();
    let lim_ind = ntf_lims.partition_point(|&l| l < num_to_freeze_tot);
    if lim_ind == ntf_lims.len() {
        return None;
    }
    let num_layers_to_sparsify = lim_ind as i64 + 1;
    let mut base_fill: Vec<i64> = (0..lim_ind).map(|lind| num_w_diffs[lind..lim_ind].iter().sum()).collect();
    base_fill.push(0);
    let rest_tot = num_to_freeze_tot - base_fill.iter().sum::<i64>();
    let rest = rest_tot.div_euclid(num_layers_to_sparsify);
    for (slot, base) in num_to_freeze.iter_mut().zip(&base_fill) {
        *slot = base + rest;
    }
    let rest_mismatch = rest_tot - rest * num_layers_to_sparsify;
    num_to_freeze[0] += rest_mismatch;
    assert_eq!(num_to_freeze.iter().sum::<i64>(), num_to_freeze_tot);
    Some(num_to_freeze)
}

pub fn random_batch(d: usize, b: usize, classes: usize, seed: u64) -> (Mat, Vec<usize>) {
    let mut rng = rng_from_seed(seed);
    let x = Mat::from_vec(d, b, (0..d * b).map(|_| rng.random_range(-1.0..1.0)).collect());
    let y = (0..b).map(|_| rng.random_range(0..classes)).collect();
    (x, y)
}

pub fn small_arch(act: Activation, param: Parameterization, sparse: bool) -> MlpArch {
    let arch = MlpArch::one_hidden(10, 8, 3, act, param, true);
    if sparse {
        arch.with_variant(Variant::Sparse(SparseSpec {
            keep: vec![30, 12],
            mask_seed: 5,
            mode: MaskMode::AllDims,
        }))
    } else {
        arch
    }
}

pub fn max_grad_error(model: &mut MlpModel, x: &Mat, y: &[usize]) -> f64 {
    let (_, grads) = model.loss_and_gradients(x, y).unwrap();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for l in 0..model.layers().len() {
        let dense = grads.dense_weights(model, l);
        let n = model.layers()[l].weights().len();
        for i in 0..n {
            let masked = model.layers()[l].mask().is_some_and(|m| !m.is_kept(i));
            if masked {
                assert_eq!(dense[i], 0.0);
                continue;
            }
            let w0 = model.layers()[l].weights()[i];
            model.layers_mut()[l].weights_mut()[i] = w0 + h;
            let lp = model.loss(x, y).unwrap();
            model.layers_mut()[l].weights_mut()[i] = w0 - h;
            let lm = model.loss(x, y).unwrap();
            model.layers_mut()[l].weights_mut()[i] = w0;
            let num = (lp - lm) / (2.0 * h);
            worst = worst.max(rel_err(dense[i], num));
        }
        let Some(gb) = grads.layers[l].bias.clone() else { continue };
        for (j, &g) in gb.iter().enumerate() {
            let b0 = model.layers()[l].bias().unwrap()[j];
            model.layers_mut()[l].bias_mut().unwrap()[j] = b0 + h;
            let lp = model.loss(x, y).unwrap();
            model.layers_mut()[l].bias_mut().unwrap()[j] = b0 - h;
            let lm = model.loss(x, y).unwrap();
            model.layers_mut()[l].bias_mut().unwrap()[j] = b0;
            worst = worst.max(rel_err(g, (lp - lm) / (2.0 * h)));
        }
    }
    worst
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}
