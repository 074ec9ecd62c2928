use super::*;
use crate::model::{ArchConfig, ConvSpec};
use proptest::prelude::*;

/// One 1×1 conv (`c_in` → `c_out`) and a classifier; weights `c_out·c_in` and `classes·c_out`.
fn toy(c_in: usize, c_out: usize, classes: usize, seed: u64) -> Network<f64> {
    let arch = ArchConfig {
        in_channels: c_in,
        height: 2,
        width: 2,
        n_classes: classes,
        convs: vec![ConvSpec { out_channels: c_out, kernel: 1, stride: 1, padding: 0 }],
    };
    Network::new(arch, &[1.0], seed).unwrap()
}

fn nonzero(net: &Network<f64>) -> Vec<usize> {
    net.noisy_weights().iter().map(|w| w.theta.value.data().iter().filter(|v| **v != 0.0).count()).collect()
}

fn active(mask: &PruneMask) -> Vec<usize> {
    mask.layers.iter().map(|l| l.iter().filter(|&&b| b).count()).collect()
}

#[test]
fn channel_scores_sum_squares_per_input_channel() {
    let theta = Tensor::new(&[2, 2, 1, 1], vec![1.0, 3.0, 2.0, 0.0]).unwrap();
    assert_eq!(channel_scores(&theta).unwrap(), vec![5.0, 9.0]);
    let scaled = theta.map(|v| 3.0 * v);
    assert_eq!(channel_scores(&scaled).unwrap(), vec![45.0, 81.0]);
    let zero_ch = Tensor::new(&[2, 2, 1, 1], vec![0.0, 1.0, 0.0, -1.0]).unwrap();
    assert_eq!(channel_scores(&zero_ch).unwrap()[0], 0.0);
    assert!(channel_scores(&Tensor::new(&[3], vec![1.0; 3]).unwrap()).is_err());
}

#[test]
fn init_mask_uniform_density() {
    let net = toy(8, 10, 2, 1);
    let mut rng = Stream::new(0, 9);
    let full = init_mask(&net, 1.0, Granularity::Irregular, &mut rng).unwrap();
    assert!(full.layers.iter().all(|l| l.iter().all(|&b| b)));
    let half = init_mask(&net, 0.5, Granularity::Irregular, &mut rng).unwrap();
    assert_eq!(active(&half), vec![40, 10]);
    assert!(half.satisfies_budget());
}

#[test]
fn init_mask_channel_rounding_floor_with_minimum() {
    let net = toy(4, 6, 2, 1);
    let m = init_mask(&net, 0.3, Granularity::Channel, &mut Stream::new(0, 9)).unwrap();
    assert!(m.is_channel_atomic());
    // conv: 1 of 4 input channels (6 weights); classifier: floor(1.8)=1 of 6 channels (2 weights)
    assert_eq!(active(&m), vec![6, 2]);
    let tiny = init_mask(&net, 0.01, Granularity::Irregular, &mut Stream::new(0, 9)).unwrap();
    assert_eq!(active(&tiny), vec![1, 1]);
    assert!(init_mask(&net, 0.0, Granularity::Irregular, &mut Stream::new(0, 9)).is_err());
    assert!(init_mask(&net, 1.5, Granularity::Channel, &mut Stream::new(0, 9)).is_err());
}

#[test]
fn apply_mask_zeroes_values_and_momentum() {
    let mut net = toy(8, 10, 2, 3);
    for w in net.noisy_weights_mut() {
        w.theta.momentum.iter_mut().for_each(|m| *m = 1.0);
    }
    let before = net.clone();
    let ones = init_mask(&net, 1.0, Granularity::Irregular, &mut Stream::new(1, 1)).unwrap();
    apply_mask(&mut net, &ones).unwrap();
    assert_eq!(net.fc.theta.value, before.fc.theta.value);
    assert_eq!(net.convs[0].weight.theta.value, before.convs[0].weight.theta.value);

    let half = init_mask(&net, 0.5, Granularity::Irregular, &mut Stream::new(1, 1)).unwrap();
    apply_mask(&mut net, &half).unwrap();
    assert!(nonzero(&net).iter().sum::<usize>() <= 50);
    for (w, m) in net.noisy_weights().iter().zip(&half.layers) {
        for (i, &on) in m.iter().enumerate() {
            if !on {
                assert_eq!(w.theta.value.data()[i], 0.0);
                assert_eq!(w.theta.momentum[i], 0.0);
            }
        }
    }
}

#[test]
fn apply_mask_rejects_bad_shapes_and_density() {
    let mut net = toy(8, 10, 2, 3);
    let mut m = init_mask(&net, 0.5, Granularity::Irregular, &mut Stream::new(1, 1)).unwrap();
    m.layers[1].pop();
    assert!(matches!(apply_mask(&mut net, &m), Err(crate::Error::Dimension(_))));
    let mut m = init_mask(&net, 0.5, Granularity::Irregular, &mut Stream::new(1, 1)).unwrap();
    m.density = 0.0;
    assert!(matches!(apply_mask(&mut net, &m), Err(crate::Error::Config(_))));
}

#[test]
fn channel_mask_zeroes_whole_slices() {
    let mut net = toy(4, 6, 2, 3);
    let m = init_mask(&net, 0.5, Granularity::Channel, &mut Stream::new(2, 2)).unwrap();
    apply_mask(&mut net, &m).unwrap();
    let theta = &net.convs[0].weight.theta.value;
    let scores = channel_scores(theta).unwrap();
    for c in 0..4 {
        if !m.layers[0][c] {
            assert_eq!(scores[c], 0.0);
        }
    }
}

#[test]
fn momentum_rank_shares() {
    let r = LayerMomentumRank::from_scores(vec![3.0, 1.0]);
    assert_eq!(r.shares, vec![0.75, 0.25]);
    let z = LayerMomentumRank::from_scores(vec![0.0, 0.0]);
    assert_eq!(z.shares, vec![0.5, 0.5]);

    let mut net = toy(8, 10, 2, 0);
    let mut mask = init_mask(&net, 1.0, Granularity::Irregular, &mut Stream::new(0, 0)).unwrap();
    mask.layers[1].iter_mut().for_each(|b| *b = false);
    for (i, m) in net.convs[0].weight.theta.momentum.iter_mut().enumerate() {
        *m = if i % 2 == 0 { 2.0 } else { -4.0 };
    }
    net.fc.theta.momentum.iter_mut().for_each(|m| *m = 100.0);
    let r = layer_momentum_rank(&net, &mask);
    assert_eq!(r.scores, vec![3.0, 0.0]);
    assert_eq!(r.shares, vec![1.0, 0.0]);
}

#[test]
fn allocation_largest_remainder() {
    assert_eq!(allocate(8, &[0.75, 0.25]), vec![6, 2]);
    assert_eq!(allocate(10, &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]), vec![4, 3, 3]);
    assert_eq!(allocate(7, &[0.5, 0.3, 0.2]), vec![4, 2, 1]);
    assert_eq!(allocate(0, &[0.5, 0.5]), vec![0, 0]);
    for b in 0..50 {
        assert_eq!(allocate(b, &[0.1, 0.6, 0.3]).iter().sum::<usize>(), b);
    }
}

#[test]
fn prune_rate_cosine_schedule() {
    assert!((prune_rate(0.3, 0, 10) - 0.3).abs() < 1e-15);
    assert!(prune_rate(0.3, 10, 10).abs() < 1e-15);
    assert!((prune_rate(0.3, 5, 10) - 0.15).abs() < 1e-12);
    for e in 0..10 {
        assert!(prune_rate(0.3, e + 1, 10) <= prune_rate(0.3, e, 10));
    }
}

/// Layer A (80 weights) and B (20 weights) each with 20 active weights; prune 20%.
fn proportional_setup() -> (Network<f64>, PruneMask) {
    let mut net = toy(8, 10, 2, 5);
    let mut mask = init_mask(&net, 1.0, Granularity::Irregular, &mut Stream::new(0, 0)).unwrap();
    for (i, b) in mask.layers[0].iter_mut().enumerate() {
        *b = i < 20;
    }
    apply_mask(&mut net, &mask).unwrap();
    // mean |momentum| over active weights: A = 3, B = 1
    for (i, m) in net.convs[0].weight.theta.momentum.iter_mut().enumerate() {
        *m = if i < 20 { 3.0 } else { 0.01 * i as f64 };
    }
    for (i, m) in net.fc.theta.momentum.iter_mut().enumerate() {
        *m = if i % 2 == 0 { -1.0 } else { 1.0 };
    }
    (net, mask)
}

#[test]
fn regrowth_follows_momentum_shares() {
    let (mut net, mut mask) = proportional_setup();
    let ranks = layer_momentum_rank(&net, &mask);
    assert_eq!(ranks.shares, vec![0.75, 0.25]);
    let before = active(&mask);
    let report = prune_regrow(&mut net, &mut mask, &ranks, 0.2).unwrap();
    assert_eq!(report.pruned, 8);
    assert_eq!(report.regrown_per_layer, vec![6, 2]);
    assert_eq!(active(&mask), vec![before[0] - 4 + 6, before[1] - 4 + 2]);
    // regrown conv positions are the dormant ones with the largest momentum: 79, 78, ...
    for i in 74..80 {
        assert!(mask.layers[0][i], "position {i} should be regrown");
        assert_eq!(net.convs[0].weight.theta.value.data()[i], 0.0);
        assert_eq!(net.convs[0].weight.theta.momentum[i], 0.0);
    }
}

#[test]
fn zero_rate_leaves_mask_unchanged() {
    let (mut net, mut mask) = proportional_setup();
    let before = (mask.clone(), net.clone());
    let ranks = layer_momentum_rank(&net, &mask);
    let r = prune_regrow(&mut net, &mut mask, &ranks, 0.0).unwrap();
    assert_eq!(r.pruned, 0);
    assert_eq!(mask, before.0);
    assert_eq!(net.convs[0].weight.theta.value, before.1.convs[0].weight.theta.value);
}

#[test]
fn pruning_picks_smallest_magnitude() {
    let mut net = toy(2, 2, 4, 0);
    net.convs[0].weight.theta.value = Tensor::new(&[2, 2, 1, 1], vec![0.5, -0.1, 0.1, 2.0]).unwrap();
    let mut mask = init_mask(&net, 1.0, Granularity::Irregular, &mut Stream::new(0, 0)).unwrap();
    for (i, b) in mask.layers[1].iter_mut().enumerate() {
        *b = i < 4;
    }
    apply_mask(&mut net, &mask).unwrap();
    let ranks = LayerMomentumRank::from_scores(vec![0.0, 1.0]);
    let r = prune_regrow(&mut net, &mut mask, &ranks, 0.5).unwrap();
    assert_eq!(r.pruned, 4);
    assert_eq!(r.regrown_per_layer, vec![0, 4]);
    assert_eq!(mask.layers[0], vec![true, false, false, true]);
    assert_eq!(net.convs[0].weight.theta.value.data(), &[0.5, 0.0, 0.0, 2.0]);
}

#[test]
fn tie_break_prunes_lowest_index() {
    let mut net = toy(1, 4, 2, 0);
    net.convs[0].weight.theta.value = Tensor::new(&[4, 1, 1, 1], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let mut mask = init_mask(&net, 1.0, Granularity::Irregular, &mut Stream::new(0, 0)).unwrap();
    mask.layers[1].iter_mut().for_each(|b| *b = false);
    mask.layers[1][0] = true;
    apply_mask(&mut net, &mask).unwrap();
    // the classifier owns all regrowth, so the conv only loses weights
    let ranks = LayerMomentumRank::from_scores(vec![0.0, 1.0]);
    prune_regrow(&mut net, &mut mask, &ranks, 0.5).unwrap();
    assert_eq!(mask.layers[0], vec![false, false, true, true]);
}

#[test]
fn spill_moves_overflow_in_share_order() {
    assert_eq!(spill(vec![5, 1, 0], &[2, 10, 10], &[0.5, 0.2, 0.3]), vec![2, 1, 3]);
    assert_eq!(spill(vec![5, 1, 0], &[2, 2, 10], &[0.5, 0.3, 0.2]), vec![2, 2, 2]);
}

#[test]
fn channel_prune_regrow_stays_atomic_and_within_budget() {
    let mut net = toy(6, 6, 3, 4);
    let mut mask = init_mask(&net, 0.5, Granularity::Channel, &mut Stream::new(3, 3)).unwrap();
    apply_mask(&mut net, &mask).unwrap();
    for (i, w) in net.noisy_weights_mut().into_iter().enumerate() {
        for (j, m) in w.theta.momentum.iter_mut().enumerate() {
            *m = ((i * 7 + j * 13) % 5) as f64 - 2.0;
        }
    }
    let before = mask.active();
    let ranks = layer_momentum_rank(&net, &mask);
    let r = prune_regrow(&mut net, &mut mask, &ranks, 0.5).unwrap();
    assert!(r.pruned > 0);
    assert!(r.regrown <= r.pruned);
    assert_eq!(mask.active(), before - r.pruned + r.regrown);
    assert!(mask.is_channel_atomic());
    assert!(mask.satisfies_budget());
    // at least one channel per layer survives
    for (m, shape) in mask.layers.iter().zip(&mask.shapes) {
        assert!(m.iter().filter(|&&b| b).count() >= shape[0]);
    }
}

#[test]
fn rejects_bad_rate_and_rank_length() {
    let (mut net, mut mask) = proportional_setup();
    let ranks = layer_momentum_rank(&net, &mask);
    assert!(prune_regrow(&mut net, &mut mask, &ranks, 1.0).is_err());
    let short = LayerMomentumRank::from_scores(vec![1.0]);
    assert!(prune_regrow(&mut net, &mut mask, &short, 0.1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn irregular_prune_regrow_conserves_count(
        seed in 0u64..1000,
        density in 0.05f64..1.0,
        rate in 0.0f64..0.9,
        m0 in 0.0f64..5.0,
        m1 in 0.0f64..5.0,
    ) {
        let mut net = toy(5, 7, 3, seed);
        let mut mask = init_mask(&net, density, Granularity::Irregular, &mut Stream::new(seed, 3)).unwrap();
        apply_mask(&mut net, &mask).unwrap();
        let mut rng = Stream::new(seed, 77);
        for w in net.noisy_weights_mut() {
            for m in w.theta.momentum.iter_mut() {
                *m = rng.standard_normal();
            }
        }
        let before = mask.active();
        let ranks = LayerMomentumRank::from_scores(vec![m0, m1]);
        let r = prune_regrow(&mut net, &mut mask, &ranks, rate).unwrap();
        prop_assert_eq!(r.pruned, r.regrown);
        prop_assert_eq!(mask.active(), before);
        let nz: usize = nonzero(&net).iter().sum();
        prop_assert!(nz <= mask.active());
        prop_assert!(nz as f64 <= density * mask.total() as f64 + 1.0 * mask.layers.len() as f64);
        for (w, m) in net.noisy_weights().iter().zip(&mask.layers) {
            for (i, &on) in m.iter().enumerate() {
                if !on {
                    prop_assert_eq!(w.theta.value.data()[i], 0.0);
                }
            }
        }
    }

    #[test]
    fn channel_masks_always_atomic(seed in 0u64..1000, density in 0.1f64..1.0, rate in 0.0f64..0.9) {
        let mut net = toy(6, 5, 4, seed);
        let mut mask = init_mask(&net, density, Granularity::Channel, &mut Stream::new(seed, 3)).unwrap();
        apply_mask(&mut net, &mask).unwrap();
        let mut rng = Stream::new(seed, 78);
        for w in net.noisy_weights_mut() {
            for m in w.theta.momentum.iter_mut() {
                *m = rng.standard_normal();
            }
        }
        let before = mask.active();
        let ranks = layer_momentum_rank(&net, &mask);
        prune_regrow(&mut net, &mut mask, &ranks, rate).unwrap();
        prop_assert!(mask.is_channel_atomic());
        prop_assert!(mask.active() <= before);
    }
}
