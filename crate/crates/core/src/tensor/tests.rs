use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{finite_diff_check, DEFAULT_REL_TOL, DEFAULT_STEP};

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

fn assert_close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn matmul_identity_and_selector() {
    let a = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(a.matmul(&eye).unwrap().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
    let row = t(&[1, 2], &[1.0, 0.0]);
    let col = t(&[2, 1], &[2.0, 5.0]);
    assert_eq!(row.matmul(&col).unwrap().to_vec(), vec![2.0]);
}

#[test]
fn matmul_gradient_of_sum() {
    let a = Tensor::param(&[1, 2], vec![1.0, 1.0]).unwrap();
    let b = t(&[2, 1], &[3.0, 4.0]);
    a.matmul(&b).unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(a.grad().unwrap(), vec![3.0, 4.0]);
    let r = finite_diff_check(|a| a.matmul(&b)?.sum(), &t(&[1, 2], &[1.0, 1.0]), 1e-5).unwrap();
    assert!(r.passes(1e-8));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = t(&[2, 3], &[0.0; 6]).matmul(&t(&[2, 2], &[0.0; 4])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_broadcasts_batch_axes() {
    let a = t(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]);
    let b = t(&[1, 2, 1], &[1.0, 1.0]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1, 1]);
    assert_eq!(c.to_vec(), vec![3.0, 7.0]);
}

#[test]
fn masked_softmax_examples() {
    let s = t(&[2], &[0.0, 0.0]);
    assert_eq!(s.masked_softmax(&t(&[2], &[1.0, 1.0])).unwrap().to_vec(), vec![0.5, 0.5]);
    let s = t(&[2], &[5.0, 99.0]);
    assert_eq!(s.masked_softmax(&t(&[2], &[1.0, 0.0])).unwrap().to_vec(), vec![1.0, 0.0]);
    let s = t(&[2], &[0.0, 3f64.ln()]);
    assert_close(
        &s.masked_softmax(&t(&[2], &[1.0, 1.0])).unwrap().to_vec(),
        &[0.25, 0.75],
        1e-15,
    );
}

#[test]
fn masked_softmax_rejects_empty_rows() {
    let s = t(&[2, 2], &[0.0; 4]);
    let err = s.masked_softmax(&t(&[2, 2], &[1.0, 1.0, 0.0, 0.0])).unwrap_err();
    assert!(matches!(err, Error::DegenerateRow { row: 1 }));
}

mod props {
    use proptest::prelude::*;

    use super::*;

    fn logits_and_mask() -> impl Strategy<Value = (usize, Vec<f64>, Vec<bool>)> {
        (1usize..9).prop_flat_map(|k| {
            (
                Just(k),
                proptest::collection::vec(-30.0f64..30.0, 3 * k),
                proptest::collection::vec(any::<bool>(), 3 * k),
            )
        })
    }

    proptest! {
        #[test]
        fn masked_softmax_rows_sum_to_one_and_invalid_are_zero((k, x, valid) in logits_and_mask()) {
            let mut mask: Vec<f64> = valid.iter().map(|&v| f64::from(u8::from(v))).collect();
            for r in 0..3 {
                mask[r * k] = 1.0;
            }
            let y = t(&[3, k], &x).masked_softmax(&t(&[3, k], &mask)).unwrap().to_vec();
            for r in 0..3 {
                let s: f64 = y[r * k..(r + 1) * k].iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                for j in 0..k {
                    if mask[r * k + j] == 0.0 {
                        prop_assert_eq!(y[r * k + j].to_bits(), 0.0f64.to_bits());
                    }
                }
            }
        }

        #[test]
        fn layer_norm_output_is_centred_and_scaled(x in proptest::collection::vec(-50.0f64..50.0, 2..16)) {
            let spread = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) - x.iter().copied().fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1.0);
            let n = x.len();
            let y = t(&[1, n], &x).layer_norm(&t(&[n], &vec![1.0; n]), &t(&[n], &vec![0.0; n])).unwrap().to_vec();
            let mean = y.iter().sum::<f64>() / n as f64;
            let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!(var <= 1.0 && var > 1.0 - 1e-3);
        }
    }
}

#[test]
fn layer_norm_examples() {
    let ones = t(&[2], &[1.0, 1.0]);
    let zeros = t(&[2], &[0.0, 0.0]);
    let y = t(&[2], &[1.0, 3.0]).layer_norm(&ones, &zeros).unwrap().to_vec();
    // population variance 1, eps 1e-5
    let s = 1.0 / (1.0f64 + 1e-5).sqrt();
    assert_close(&y, &[-s, s], 1e-15);
    assert!((y[0] + 1.0).abs() < 1e-5);
    let y = t(&[2], &[4.2, 4.2]).layer_norm(&ones, &zeros).unwrap().to_vec();
    assert_eq!(y, vec![0.0, 0.0]);
}

#[test]
fn layer_norm_gradient_matches_finite_differences() {
    let gain = t(&[3], &[0.7, -1.3, 2.0]);
    let bias = t(&[3], &[0.1, 0.2, 0.3]);
    let w = t(&[3], &[1.0, -2.0, 0.5]);
    let x = t(&[3], &[0.3, -1.2, 2.0]);
    let r = finite_diff_check(|x| x.layer_norm(&gain, &bias)?.mul(&w)?.sum(), &x, DEFAULT_STEP).unwrap();
    assert!(r.passes(DEFAULT_REL_TOL), "{r:?}");
}

#[test]
fn elementwise_examples() {
    assert_eq!(t(&[1], &[0.0]).sin().unwrap().to_vec(), vec![0.0]);
    let sum = Tensor::elementwise(Elementwise::Add, &[&t(&[2], &[1.0, 2.0]), &t(&[2], &[3.0, 4.0])]).unwrap();
    assert_eq!(sum.to_vec(), vec![4.0, 6.0]);
    let x = Tensor::param(&[1], vec![0.0]).unwrap();
    x.sin().unwrap().sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0]);
    assert!(Tensor::elementwise(Elementwise::Sin, &[]).is_err());
    assert!(t(&[2], &[0.0; 2]).add(&t(&[3], &[0.0; 3])).is_err());
}

#[test]
fn backward_examples() {
    let x = Tensor::param(&[2], vec![0.3, -0.9]).unwrap();
    x.sum().unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0, 1.0]);

    let x = Tensor::param(&[1], vec![2.0]).unwrap();
    x.mse(&[0.0]).unwrap().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0]);
}

#[test]
fn repeated_backward_accumulates() {
    let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    let loss = x.mul(&x).unwrap().sum().unwrap();
    loss.backward().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
    x.zero_grad();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(x.backward(), Err(Error::NonScalarLoss(_))));
}

#[test]
fn non_finite_results_are_errors() {
    assert!(Tensor::new(&[1], vec![f64::NAN]).is_err());
    let big = t(&[1], &[1e308]);
    assert!(matches!(big.scale(10.0), Err(Error::NonFinite { .. })));
}

#[test]
fn composite_softmax_matmul_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let v = random(&[4, 3], &mut rng);
    let w = random(&[2, 3], &mut rng);
    let mask = t(&[2, 4], &[1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0]);
    let scores = random(&[2, 4], &mut rng);
    let r = finite_diff_check(|s| s.masked_softmax(&mask)?.matmul(&v)?.mul(&w)?.sum(), &scores, DEFAULT_STEP).unwrap();
    assert!(r.passes(DEFAULT_REL_TOL), "{r:?}");
}

/// Randomized finite-difference sweep over every differentiable op.
#[test]
fn every_op_passes_gradient_check_across_seeds() {
    type Case = Box<dyn Fn(&Tensor) -> crate::error::Result<Tensor>>;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let other = random(&[2, 3], &mut rng);
        let row = random(&[3], &mut rng);
        let w = random(&[3, 4], &mut rng);
        let weights = random(&[2, 3], &mut rng);
        let gain = random(&[3], &mut rng);
        let bias = random(&[3], &mut rng);
        let mask = t(&[2, 3], &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let target: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let weighted = move |y: Tensor, w: &Tensor| y.mul(w)?.sum();
        let cases: Vec<(&str, Case)> = vec![
            (
                "add",
                Box::new({
                    let (o, ws) = (other.clone(), weights.clone());
                    move |x| weighted(x.add(&o)?, &ws)
                }),
            ),
            (
                "sub",
                Box::new({
                    let (o, ws) = (row.clone(), weights.clone());
                    move |x| weighted(x.sub(&o)?, &ws)
                }),
            ),
            (
                "mul",
                Box::new({
                    let o = other.clone();
                    move |x| x.mul(&o)?.mul(x)?.sum()
                }),
            ),
            (
                "scale",
                Box::new({
                    let ws = weights.clone();
                    move |x| weighted(x.scale(-2.5)?, &ws)
                }),
            ),
            (
                "sin",
                Box::new({
                    let ws = weights.clone();
                    move |x| weighted(x.sin()?, &ws)
                }),
            ),
            (
                "relu",
                Box::new({
                    let ws = weights.clone();
                    move |x| weighted(x.relu()?, &ws)
                }),
            ),
            (
                "matmul",
                Box::new({
                    let w = w.clone();
                    move |x| x.matmul(&w)?.sin()?.sum()
                }),
            ),
            (
                "permute",
                Box::new({
                    let o = other.clone();
                    move |x| x.transpose_last()?.matmul(&o)?.sin()?.sum()
                }),
            ),
            (
                "concat",
                Box::new({
                    let o = other.clone();
                    move |x| Tensor::concat(&[x, &o, x], 1)?.sin()?.sum()
                }),
            ),
            (
                "narrow",
                Box::new({
                    let ws = weights.narrow(1, 0, 2).unwrap();
                    move |x| weighted(x.narrow(1, 1, 2)?.sin()?, &ws)
                }),
            ),
            ("sum_axis", Box::new(|x| x.sum_axis(0)?.sin()?.sum())),
            (
                "broadcast_to",
                Box::new(|x| x.reshape(&[2, 1, 3])?.broadcast_to(&[2, 4, 3])?.sin()?.sum()),
            ),
            (
                "masked_softmax",
                Box::new({
                    let (m, ws) = (mask.clone(), weights.clone());
                    move |x| weighted(x.masked_softmax(&m)?, &ws)
                }),
            ),
            (
                "layer_norm",
                Box::new({
                    let (g, b, ws) = (gain.clone(), bias.clone(), weights.clone());
                    move |x| weighted(x.layer_norm(&g, &b)?, &ws)
                }),
            ),
            (
                "mse",
                Box::new({
                    let tg = target.clone();
                    move |x| x.masked_mse(&tg, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0])
                }),
            ),
            ("cross_entropy", Box::new(|x| x.cross_entropy(&[2, 0]))),
        ];
        let x = random(&[2, 3], &mut rng);
        for (name, f) in &cases {
            let r = finite_diff_check(f, &x, DEFAULT_STEP).unwrap();
            assert!(r.passes(DEFAULT_REL_TOL), "seed {seed}, op {name}: {r:?}");
        }
        // gain and bias of layer_norm
        let xs = x.clone();
        let r = finite_diff_check(|g| xs.layer_norm(g, &bias)?.mul(&weights)?.sum(), &gain, DEFAULT_STEP).unwrap();
        assert!(r.passes(DEFAULT_REL_TOL), "seed {seed}, layer_norm gain: {r:?}");
        let r = finite_diff_check(|b| xs.layer_norm(&gain, b)?.mul(&weights)?.sum(), &bias, DEFAULT_STEP).unwrap();
        assert!(r.passes(DEFAULT_REL_TOL), "seed {seed}, layer_norm bias: {r:?}");
        // rhs of a batched matmul
        let lhs = random(&[2, 2, 3], &mut rng);
        let rhs = random(&[2, 3, 2], &mut rng);
        let r = finite_diff_check(|b| lhs.matmul(b)?.sin()?.sum(), &rhs, DEFAULT_STEP).unwrap();
        assert!(r.passes(DEFAULT_REL_TOL), "seed {seed}, batched matmul rhs: {r:?}");
    }
}

#[test]
fn permute_roundtrip_restores_layout() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 4], &mut rng);
    let y = x.permute(&[2, 0, 1]).unwrap();
    assert_eq!(y.shape(), &[4, 2, 3]);
    let z = y.permute(&[1, 2, 0]).unwrap();
    assert_eq!(z.to_vec(), x.to_vec());
    assert!(x.permute(&[0, 0, 1]).is_err());
}

#[test]
fn identity_matmul_is_exact_for_integers() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let (p, q) = (rng.random_range(1..6), rng.random_range(1..6));
        let a: Vec<f64> = (0..p * q).map(|_| rng.random_range(-50..50) as f64).collect();
        let eye: Vec<f64> = (0..q * q).map(|i| if i / q == i % q { 1.0 } else { 0.0 }).collect();
        let out = t(&[p, q], &a).matmul(&t(&[q, q], &eye)).unwrap();
        assert_eq!(out.to_vec(), a);
    }
}
