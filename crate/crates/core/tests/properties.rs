use dualx_core::nn::{AttentionBlockWeights, BlockDims, ParamSet, RopeParams, RopeTable, TokenPositions};
use dualx_core::nn::rope::{attention_scores, rope_apply};
use dualx_core::topology::{apply_variant, from_view, to_view, transpose_hw, AttentionVariant, GridShape, View};
use dualx_core::{Init, Rng, Tape, Tensor};
use proptest::prelude::*;

fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::create(shape, Init::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(seed)).unwrap()
}

fn rotate(x: &Tensor<f64>, pos: &TokenPositions, base: f64) -> Tensor<f64> {
    let dh = x.shape()[x.ndim() - 1];
    let table = RopeTable::new(pos, &RopeParams::new(dh, base).unwrap()).unwrap();
    let tape = Tape::inference();
    rope_apply(&tape, &tape.constant(x.clone()), &table).unwrap().into_tensor()
}

fn norm(xs: &[f64]) -> f64 {
    xs.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Random `axes`-dimensional coordinates for `len` tokens.
fn positions(axes: usize, len: usize, seed: u64) -> TokenPositions {
    let mut rng = Rng::new(seed);
    TokenPositions::new(axes, (0..axes * len).map(|_| rng.index(200)).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rope_preserves_token_norms(axes in 1usize..=2, half in 1usize..=8, len in 1usize..=6, seed in any::<u64>()) {
        let dh = 2 * axes * half;
        let x = randn(&[len, dh], seed);
        let pos = positions(axes, len, seed ^ 1);
        let y = rotate(&x, &pos, 10000.0);
        for t in 0..len {
            let (a, b) = (norm(&x.data()[t * dh..(t + 1) * dh]), norm(&y.data()[t * dh..(t + 1) * dh]));
            prop_assert!((a - b).abs() <= 1e-6 * a.max(1.0));
        }
    }

    #[test]
    fn rope_scores_depend_on_relative_position(axes in 1usize..=2, half in 1usize..=6, len in 1usize..=5, shift in 0usize..500, seed in any::<u64>()) {
        let dh = 2 * axes * half;
        let (q, k) = (randn(&[len, dh], seed), randn(&[len, dh], seed.wrapping_add(7)));
        let pos = positions(axes, len, seed ^ 3);
        let moved = pos.shifted(shift);
        let a = attention_scores(&rotate(&q, &pos, 10000.0), &rotate(&k, &pos, 10000.0)).unwrap();
        let b = attention_scores(&rotate(&q, &moved, 10000.0), &rotate(&k, &moved, 10000.0)).unwrap();
        prop_assert!(a.max_abs_diff(&b) <= 1e-5);
    }

    #[test]
    fn two_channel_rope_score_is_cosine(u in 0usize..1000, v in 0usize..1000) {
        let e = Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap();
        let q = rotate(&e, &TokenPositions::from_indices(&[u]), 10000.0);
        let k = rotate(&e, &TokenPositions::from_indices(&[v]), 10000.0);
        let s = attention_scores(&q, &k).unwrap().item();
        prop_assert!((s - (u as f64 - v as f64).cos()).abs() <= 1e-9);
    }

    #[test]
    fn layer_norm_standardizes_rows(rows in 1usize..6, width in 2usize..12, seed in any::<u64>(), shift in -50.0f64..50.0, gain in 0.1f64..20.0) {
        let x = randn(&[rows, width], seed).map(|v| v * gain + shift);
        let tape = Tape::inference();
        let ones = tape.constant(Tensor::ones(&[width]).unwrap());
        let zeros = tape.constant(Tensor::zeros(&[width]).unwrap());
        let y = tape.layer_norm(&tape.constant(x), &ones, &zeros, 1e-5).unwrap().into_tensor();
        for r in y.data().chunks(width) {
            let mean = r.iter().sum::<f64>() / width as f64;
            let var = r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / width as f64;
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn pixel_unshuffle_inverts_shuffle(b in 1usize..3, c in 1usize..4, r in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let x = randn(&[b, c * r * r, h, w], seed);
        let tape = Tape::inference();
        let y = tape.pixel_shuffle(&tape.constant(x.clone()), r).unwrap();
        prop_assert_eq!(y.shape(), &[b, c, r * h, r * w][..]);
        let back = tape.pixel_unshuffle(&y, r).unwrap().into_tensor();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn views_round_trip_exactly(b in 1usize..3, d in 1usize..5, n in 1usize..5, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let shape = GridShape::new(b, d, n, h, w);
        let g = randn(&shape.dims(), seed);
        let tape = Tape::inference();
        for view in [View::Spatial, View::Temporal, View::VerticalTemporal, View::HorizontalTemporal] {
            let (tokens, pos) = to_view(&tape, &tape.constant(g.clone()), view).unwrap();
            let (batch, len) = shape.view_extent(view);
            prop_assert_eq!(tokens.shape(), &[batch, len, d][..]);
            prop_assert_eq!(tokens.value().numel(), g.numel());
            prop_assert_eq!(pos.len(), len);
            let back = from_view(&tape, &tokens, view, &shape).unwrap().into_tensor();
            prop_assert_eq!(&back, &g);
        }
    }
}

fn block_params(tape: &Tape<f64>, dims: BlockDims, prefixes: &[&str], seed: u64) -> ParamSet<f64> {
    let mut rng = Rng::new(seed);
    let mut vars = Vec::new();
    for p in prefixes {
        for s in dims.specs(p) {
            let t = Tensor::create(&s.shape, Init::Normal { mean: 0.0, std: 0.3 }, &mut rng).unwrap();
            vars.push((s.name.clone(), tape.constant(t)));
        }
    }
    ParamSet::from_vars(vars)
}

fn run(variant: AttentionVariant, grid: &Tensor<f64>, dims: BlockDims, prefixes: &[&str], seed: u64) -> Tensor<f64> {
    let tape = Tape::inference();
    let ps = block_params(&tape, dims, prefixes, seed);
    let blocks: Vec<_> = prefixes.iter().map(|p| AttentionBlockWeights::from_params(&ps, p, dims).unwrap()).collect();
    apply_variant(&tape, &tape.constant(grid.clone()), variant, &blocks, 10000.0, 1e-5).unwrap().into_tensor()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn vertical_and_horizontal_blocks_are_transposition_dual(n in 1usize..4, h in 1usize..5, w in 1usize..5, seed in any::<u64>()) {
        let dims = BlockDims::new(8, 2, 16).unwrap();
        let g = randn(&[1, 8, n, h, w], seed);
        let vt = run(AttentionVariant::VerticalTemporal, &g, dims, &["a"], seed);
        let tape = Tape::inference();
        let gt = transpose_hw(&tape, &tape.constant(g)).unwrap().into_tensor();
        let ht = run(AttentionVariant::HorizontalTemporal, &gt, dims, &["a"], seed);
        let back = transpose_hw(&tape, &tape.constant(ht)).unwrap().into_tensor();
        prop_assert!(vt.max_abs_diff(&back) <= 1e-5);
    }
}

#[test]
fn zero_residual_branches_are_identity_for_every_variant() {
    let dims = BlockDims::new(8, 2, 16).unwrap();
    let g = randn(&[2, 8, 3, 2, 4], 5);
    for v in AttentionVariant::ALL {
        let tape = Tape::inference();
        let mut rng = Rng::new(1);
        let mut vars = Vec::new();
        for p in ["u0", "u1"] {
            for s in dims.specs(p) {
                let zero_out = s.name.ends_with("attn.out.weight") || s.name.ends_with("mlp.fc2.weight") || s.name.ends_with("bias");
                let init = if zero_out { Init::Zeros } else { Init::Normal { mean: 0.0, std: 0.5 } };
                vars.push((s.name.clone(), tape.constant(Tensor::create(&s.shape, init, &mut rng).unwrap())));
            }
        }
        let ps = ParamSet::from_vars(vars);
        let blocks: Vec<_> = ["u0", "u1"].iter().map(|p| AttentionBlockWeights::from_params(&ps, p, dims).unwrap()).collect();
        let out = apply_variant(&tape, &tape.constant(g.clone()), v, &blocks, 10000.0, 1e-5).unwrap();
        assert_eq!(out.value(), &g, "{}", v.name());
    }
}

#[test]
fn interleaved_and_serial_orders_differ() {
    let dims = BlockDims::new(8, 2, 16).unwrap();
    let g = randn(&[1, 8, 3, 3, 4], 9);
    let p = ["u0", "u1", "u2", "u3"];
    let serial = run(AttentionVariant::DualAxialSerialVtHt, &g, dims, &p, 2);
    let inter = run(AttentionVariant::DualAxialInterleaved, &g, dims, &p, 2);
    let ht_first = run(AttentionVariant::DualAxialSerialHtVt, &g, dims, &p, 2);
    assert!(serial.max_abs_diff(&inter) > 1e-3);
    assert!(serial.max_abs_diff(&ht_first) > 1e-3);
}

#[test]
fn temporal_blocks_ignore_spatial_neighbours() {
    // Perturbing one spatial site leaves every other site unchanged under temporal attention.
    let dims = BlockDims::new(8, 2, 16).unwrap();
    let g = randn(&[1, 8, 4, 3, 3], 11);
    let mut g2 = g.clone();
    let idx = ((0 * 4 + 2) * 3 + 1) * 3 + 1;
    g2.data_mut()[idx] += 1.0;
    let a = run(AttentionVariant::Temporal, &g, dims, &["t"], 3);
    let b = run(AttentionVariant::Temporal, &g2, dims, &["t"], 3);
    for c in 0..8 {
        for t in 0..4 {
            for y in 0..3 {
                for x in 0..3 {
                    let i = ((c * 4 + t) * 3 + y) * 3 + x;
                    if (y, x) != (1, 1) {
                        assert_eq!(a.data()[i], b.data()[i]);
                    }
                }
            }
        }
    }
}
