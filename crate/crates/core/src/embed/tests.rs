use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::{finite_diff_check_params, DEFAULT_REL_TOL, DEFAULT_STEP};

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn setup(d: usize, heads: usize, seed: u64) -> (ParamStore, Tokenizer, AttnBlock) {
    let mut ps = ParamStore::new(seed);
    let tokenizer = Tokenizer {
        time: TimeEmbedder::new(&mut ps, "time", d).unwrap(),
        value: ValueEmbedder::new(&mut ps, "embed.value", d).unwrap(),
    };
    let block = AttnBlock::new(&mut ps, "embed.block", d, heads).unwrap();
    (ps, tokenizer, block)
}

fn random_input(shape: [usize; 4], rng: &mut ChaCha8Rng) -> ObservationInput {
    let n: usize = shape.iter().product();
    let masks: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.6) { 1.0 } else { 0.0 }).collect();
    let values = (0..n)
        .map(|i| if masks[i] != 0.0 { rng.random_range(-2.0..2.0) } else { 0.0 })
        .collect();
    let times = (0..n)
        .map(|i| if masks[i] != 0.0 { rng.random_range(0.0..1.0) } else { 0.0 })
        .collect();
    let offsets = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    ObservationInput::from_parts(shape, values, times, masks, offsets).unwrap()
}

fn spec(kind: EmbeddingKind, level: EmbeddingLevel, m: usize, n: usize, d: usize) -> EmbeddingSpec {
    EmbeddingSpec {
        kind,
        level,
        patches: m,
        variables: n,
        dim: d,
        heads: 2,
        query_init: QueryInit::RandomNormal,
        conv_bins: 3,
    }
}

fn build(kind: EmbeddingKind, level: EmbeddingLevel, m: usize, n: usize, d: usize, seed: u64) -> (ParamStore, Embedding) {
    let mut ps = ParamStore::new(seed);
    let time = TimeEmbedder::new(&mut ps, "time", d).unwrap();
    let e = Embedding::build(&mut ps, &spec(kind, level, m, n, d), &time).unwrap();
    (ps, e)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn all_masked_set_depends_on_query_only() {
    let (_, _, block) = setup(8, 2, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_tensor(&[8], &mut rng);
    let z1 = random_tensor(&[3, 8], &mut rng);
    let z2 = random_tensor(&[3, 8], &mut rng);
    let a = aggregate_variable(&z1, &[0.0; 3], &q, &block).unwrap().to_vec();
    let b = aggregate_variable(&z2, &[0.0; 3], &q, &block).unwrap().to_vec();
    let empty = aggregate_variable(&Tensor::zeros(&[0, 8]), &[], &q, &block).unwrap().to_vec();
    assert_eq!(a, b);
    assert!(max_diff(&a, &empty) < 1e-12);
}

#[test]
fn aggregation_ignores_observation_order() {
    let (_, _, block) = setup(8, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let q = random_tensor(&[8], &mut rng);
    let z = random_tensor(&[5, 8], &mut rng);
    let masks = [1.0, 0.0, 1.0, 1.0, 1.0];
    let order = [3, 0, 4, 2, 1];
    let rows = z.to_vec();
    let shuffled: Vec<f64> = order.iter().flat_map(|&i| rows[i * 8..(i + 1) * 8].to_vec()).collect();
    let shuffled = Tensor::new(&[5, 8], shuffled).unwrap();
    let shuffled_masks: Vec<f64> = order.iter().map(|&i| masks[i]).collect();
    let a = aggregate_variable(&z, &masks, &q, &block).unwrap().to_vec();
    let b = aggregate_variable(&shuffled, &shuffled_masks, &q, &block).unwrap().to_vec();
    assert!(max_diff(&a, &b) < 1e-9);
}

#[test]
fn single_patch_matches_variable_aggregation() {
    let (_, _, block) = setup(8, 2, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let q = random_tensor(&[1, 3, 8], &mut rng);
    let z = random_tensor(&[1, 3, 4, 8], &mut rng);
    let masks: Vec<f64> = (0..12).map(|i| (i % 3 != 1) as u8 as f64).collect();
    let patch = aggregate_patch(&z, &masks, &q, &block).unwrap().to_vec();
    for n in 0..3 {
        let zn = z.narrow(1, n, 1).unwrap().reshape(&[4, 8]).unwrap();
        let qn = q.narrow(1, n, 1).unwrap().reshape(&[8]).unwrap();
        let e = aggregate_variable(&zn, &masks[n * 4..(n + 1) * 4], &qn, &block)
            .unwrap()
            .to_vec();
        assert!(max_diff(&e, &patch[n * 8..(n + 1) * 8]) < 1e-12);
    }
}

#[test]
fn identical_patches_give_identical_outputs() {
    let (_, _, block) = setup(8, 2, 7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let qn = random_tensor(&[1, 1, 8], &mut rng);
    let q = Tensor::concat(&[&qn, &qn], 0).unwrap();
    let zn = random_tensor(&[1, 1, 3, 8], &mut rng);
    let z = Tensor::concat(&[&zn, &zn], 0).unwrap();
    let e = aggregate_patch(&z, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0], &q, &block)
        .unwrap()
        .to_vec();
    assert_eq!(e[..8], e[8..]);
}

#[test]
fn patch_output_shape() {
    let (_, e) = build(EmbeddingKind::Quite, EmbeddingLevel::Patch, 4, 3, 8, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let out = e.forward(&random_input([2, 4, 3, 5], &mut rng)).unwrap();
    assert_eq!(out.embeddings.shape(), [2, 4, 3, 8]);
    assert_eq!(out.instance(1).unwrap().shape(), [4, 3, 8]);
    assert_eq!(out.patch_valid.len(), 24);
}

#[test]
fn variable_output_shape() {
    let (_, e) = build(EmbeddingKind::Quite, EmbeddingLevel::Variable, 1, 3, 8, 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let out = e.forward(&random_input([2, 1, 3, 5], &mut rng)).unwrap();
    assert_eq!(out.instance(0).unwrap().shape(), [3, 8]);
    assert_eq!(out.variable_view().unwrap().shape(), [2, 3, 8]);
}

#[test]
fn every_kind_builds_and_runs_at_both_levels() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for kind in EmbeddingKind::ALL {
        for (level, m) in [(EmbeddingLevel::Variable, 1), (EmbeddingLevel::Patch, 3)] {
            let (_, e) = build(kind, level, m, 2, 4, 1);
            assert_eq!(e.kind(), kind);
            let out = e.forward(&random_input([2, m, 2, 3], &mut rng)).unwrap();
            assert_eq!(out.embeddings.shape(), [2, m, 2, 4], "{kind}");
        }
    }
}

#[test]
fn masked_mean_ignores_padding() {
    let input = ObservationInput::from_parts([1, 1, 1, 2], vec![0.0; 2], vec![0.0; 2], vec![1.0, 0.0], vec![0.0; 2]).unwrap();
    let tokens = Tensor::new(&[1, 1, 1, 2, 2], vec![1.0, 2.0, 50.0, -7.0]).unwrap();
    assert_eq!(masked_mean(&tokens, &input).unwrap().to_vec(), vec![1.0, 2.0]);
}

#[test]
fn add_of_opposite_tokens_is_zero() {
    let mut ps = ParamStore::new(0);
    let omega = Tensor::new(&[4], vec![0.0; 4]).unwrap();
    let alpha = Tensor::new(&[4], vec![0.0; 4]).unwrap();
    let tokenizer = Tokenizer {
        time: TimeEmbedder::from_parts(omega, alpha).unwrap(),
        value: ValueEmbedder::new(&mut ps, "v", 4).unwrap(),
    };
    let e = BaselineEmbedding::add(tokenizer, EmbeddingLevel::Variable);
    let input = ObservationInput::from_parts([1, 1, 1, 2], vec![1.5, -1.5], vec![0.3, 0.6], vec![1.0; 2], vec![0.0; 2]).unwrap();
    let out = e.forward(&input).unwrap().embeddings.to_vec();
    assert!(out.iter().all(|v| v.abs() < 1e-15), "{out:?}");
}

#[test]
fn mean_pool_of_one_observation_is_its_attended_token() {
    let (_, tokenizer, block) = setup(4, 1, 12);
    let e = BaselineEmbedding::mean_pool(tokenizer.clone(), block.clone(), EmbeddingLevel::Variable);
    let input = ObservationInput::from_parts([1, 1, 1, 2], vec![0.7, 0.0], vec![0.2, 0.0], vec![1.0, 0.0], vec![0.0; 2]).unwrap();
    let out = e.forward(&input).unwrap().embeddings.to_vec();
    let z = tokenizer
        .tokenize(&Tensor::new(&[1], vec![0.7]).unwrap(), &Tensor::new(&[1], vec![0.2]).unwrap())
        .unwrap()
        .reshape(&[1, 1, 4])
        .unwrap();
    let expected = block.forward(&z, None).unwrap().to_vec();
    assert!(max_diff(&out, &expected) < 1e-12);
}

#[test]
fn empty_cells_are_flagged_and_zero_for_baselines() {
    let input = ObservationInput::from_parts([1, 2, 1, 1], vec![0.4, 0.0], vec![0.1, 0.0], vec![1.0, 0.0], vec![0.0; 2]).unwrap();
    for kind in [EmbeddingKind::Add, EmbeddingKind::Concat, EmbeddingKind::MeanPool] {
        let (_, e) = build(kind, EmbeddingLevel::Patch, 2, 1, 4, 3);
        let out = e.forward(&input).unwrap();
        assert_eq!(out.patch_valid, vec![1.0, 0.0]);
        assert_eq!(out.embeddings.to_vec()[4..], [0.0; 4]);
    }
}

#[test]
fn queries_alone_receive_gradient_when_everything_is_masked() {
    let (_, _, block) = setup(4, 1, 13);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let z = Tensor::param(&[3, 4], random_tensor(&[3, 4], &mut rng).to_vec()).unwrap();
    let q = Tensor::param(&[4], random_tensor(&[4], &mut rng).to_vec()).unwrap();
    let w = random_tensor(&[4], &mut rng);
    aggregate_variable(&z, &[0.0; 3], &q, &block)
        .unwrap()
        .mul(&w)
        .unwrap()
        .sum()
        .unwrap()
        .backward()
        .unwrap();
    assert!(z.grad().unwrap().iter().all(|&g| g == 0.0));
    assert!(q.grad().unwrap().iter().any(|&g| g != 0.0));
}

#[test]
fn tokenize_and_aggregate_pass_gradient_check() {
    let mut ps = ParamStore::new(15);
    let time = TimeEmbedder::new(&mut ps, "time", 4).unwrap();
    let mut sp = spec(EmbeddingKind::Quite, EmbeddingLevel::Variable, 1, 2, 4);
    sp.heads = 1;
    sp.query_init = QueryInit::Xavier;
    let e = Embedding::build(&mut ps, &sp, &time).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let input = random_input([1, 1, 2, 3], &mut rng);
    let w = random_tensor(&[1, 1, 2, 4], &mut rng);
    let params: Vec<(String, Tensor)> = ps.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    let reports = finite_diff_check_params(|| e.forward(&input)?.embeddings.mul(&w)?.sum(), &params, DEFAULT_STEP).unwrap();
    for (name, r) in reports {
        assert!(r.passes(DEFAULT_REL_TOL), "{name}: {r:?}");
    }
}

#[test]
fn conventional_embedding_is_affine_in_values() {
    let (ps, e) = build(EmbeddingKind::Conventional, EmbeddingLevel::Patch, 2, 1, 4, 17);
    assert_eq!(ps.num_scalars() - 8, 3 * 4 + 4);
    let Embedding::Conventional(conv) = &e else { panic!() };
    conv.projection.bias.set_data(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    let zero = ObservationInput::from_parts(
        [1, 2, 1, 2],
        vec![0.0; 4],
        vec![0.0; 4],
        vec![1.0, 1.0, 0.0, 0.0],
        vec![0.1, 0.5, 0.0, 0.0],
    )
    .unwrap();
    let out = e.forward(&zero).unwrap().embeddings.to_vec();
    assert_eq!(out, [0.1, 0.2, 0.3, 0.4].repeat(2));

    let make = |k: f64| {
        ObservationInput::from_parts(
            [1, 2, 1, 2],
            vec![k, -k, 2.0 * k, 0.0],
            vec![0.0; 4],
            vec![1.0, 1.0, 1.0, 0.0],
            vec![0.1, 0.9, 0.5, 0.0],
        )
        .unwrap()
    };
    let bias = [0.1, 0.2, 0.3, 0.4].repeat(2);
    let one: Vec<f64> = e
        .forward(&make(1.0))
        .unwrap()
        .embeddings
        .to_vec()
        .iter()
        .zip(&bias)
        .map(|(a, b)| a - b)
        .collect();
    let two: Vec<f64> = e
        .forward(&make(2.0))
        .unwrap()
        .embeddings
        .to_vec()
        .iter()
        .zip(&bias)
        .map(|(a, b)| a - b)
        .collect();
    for (a, b) in one.iter().zip(&two) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn binning_averages_shared_slots() {
    let input = ObservationInput::from_parts(
        [1, 1, 1, 3],
        vec![1.0, 3.0, 5.0],
        vec![0.0; 3],
        vec![1.0; 3],
        vec![0.05, 0.2, 0.9],
    )
    .unwrap();
    assert_eq!(bin_values(&input, 2), vec![2.0, 5.0]);
}

#[test]
fn kind_names_round_trip() {
    for k in EmbeddingKind::ALL {
        assert_eq!(k.name().parse::<EmbeddingKind>().unwrap(), k);
    }
}

fn permuted_rows(z: &Tensor, order: &[usize], d: usize) -> Tensor {
    let rows = z.to_vec();
    let data = order.iter().flat_map(|&i| rows[i * d..(i + 1) * d].to_vec()).collect();
    Tensor::new(&[order.len(), d], data).unwrap()
}

mod props {
    use proptest::prelude::*;

    use super::*;

    fn set_and_order() -> impl Strategy<Value = (Vec<usize>, Vec<bool>, u64)> {
        (1usize..8).prop_flat_map(|k| {
            (
                Just((0..k).collect::<Vec<_>>()).prop_shuffle(),
                proptest::collection::vec(any::<bool>(), k),
                any::<u64>(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn aggregation_is_permutation_invariant((order, valid, seed) in set_and_order()) {
            let (_, _, block) = setup(8, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random_tensor(&[8], &mut rng);
            let z = random_tensor(&[order.len(), 8], &mut rng);
            let masks: Vec<f64> = valid.iter().map(|&v| f64::from(u8::from(v))).collect();
            let shuffled_masks: Vec<f64> = order.iter().map(|&i| masks[i]).collect();
            let a = aggregate_variable(&z, &masks, &q, &block).unwrap().to_vec();
            let b = aggregate_variable(&permuted_rows(&z, &order, 8), &shuffled_masks, &q, &block).unwrap().to_vec();
            prop_assert!(max_diff(&a, &b) < 1e-9);
        }

        #[test]
        fn padded_slots_do_not_change_the_embedding((order, valid, seed) in set_and_order(), pad in 1usize..4) {
            let (_, _, block) = setup(8, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
            let k = order.len();
            let q = random_tensor(&[8], &mut rng);
            let z = random_tensor(&[k, 8], &mut rng);
            let masks: Vec<f64> = valid.iter().map(|&v| f64::from(u8::from(v))).collect();
            let junk = random_tensor(&[pad, 8], &mut rng);
            let padded = Tensor::concat(&[&z, &junk], 0).unwrap();
            let mut padded_masks = masks.clone();
            padded_masks.resize(k + pad, 0.0);
            let a = aggregate_variable(&z, &masks, &q, &block).unwrap().to_vec();
            let b = aggregate_variable(&padded, &padded_masks, &q, &block).unwrap().to_vec();
            prop_assert!(max_diff(&a, &b) < 1e-9);
        }

        #[test]
        fn every_kind_keeps_its_output_shape(m in 1usize..4, n in 1usize..4, l in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for kind in EmbeddingKind::ALL {
                let (_, e) = build(kind, EmbeddingLevel::Patch, m, n, 8, seed);
                let out = e.forward(&random_input([2, m, n, l], &mut rng)).unwrap();
                prop_assert_eq!(out.embeddings.shape(), [2, m, n, 8]);
            }
        }
    }
}
