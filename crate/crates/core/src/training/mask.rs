//! Global-density pruning masks with momentum-driven prune/regrow.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{config_err, dim_err};
use crate::model::Network;
use crate::rng::Stream;
use crate::{Real, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Granularity {
    /// Individual weights.
    Irregular,
    /// Whole input-channel slices `θ[:, c, ...]`.
    Channel,
}

/// One boolean mask per noisy weight tensor (convs in order, then the classifier).
#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    pub layers: Vec<Vec<bool>>,
    pub shapes: Vec<Vec<usize>>,
    pub granularity: Granularity,
    pub density: f64,
}

impl PruneMask {
    pub fn total(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn active(&self) -> usize {
        self.layers.iter().map(|l| l.iter().filter(|&&b| b).count()).sum()
    }

    pub fn achieved_density(&self) -> f64 {
        self.active() as f64 / self.total() as f64
    }

    /// `Σ active ≤ d · Σ total`.
    pub fn satisfies_budget(&self) -> bool {
        self.active() as f64 <= self.density * self.total() as f64 + 1e-9
    }

    /// True when every input-channel slice is entirely on or entirely off.
    pub fn is_channel_atomic(&self) -> bool {
        self.layers.iter().zip(&self.shapes).all(|(m, shape)| {
            let g = ChannelGeometry::of(shape);
            (0..g.inputs).all(|c| {
                let first = m[g.index(0, c, 0)];
                g.positions(c).all(|i| m[i] == first)
            })
        })
    }

    pub fn as_slices(&self) -> &[Vec<bool>] {
        &self.layers
    }
}

/// Index arithmetic for `[O, I, rest...]` tensors grouped by input channel.
#[derive(Debug, Clone, Copy)]
struct ChannelGeometry {
    outputs: usize,
    inputs: usize,
    rest: usize,
}

impl ChannelGeometry {
    fn of(shape: &[usize]) -> Self {
        Self { outputs: shape[0], inputs: shape[1], rest: shape[2..].iter().product() }
    }

    fn index(&self, o: usize, c: usize, r: usize) -> usize {
        (o * self.inputs + c) * self.rest + r
    }

    fn size(&self) -> usize {
        self.outputs * self.rest
    }

    fn positions(&self, c: usize) -> impl Iterator<Item = usize> + '_ {
        let g = *self;
        (0..g.outputs).flat_map(move |o| (0..g.rest).map(move |r| g.index(o, c, r)))
    }
}

/// `f_c = ‖θ[:, c, ...]‖²_F` for every input channel `c`.
pub fn channel_scores<T: Real>(theta: &Tensor<T>) -> Result<Vec<f64>> {
    if theta.shape().len() < 2 {
        return Err(dim_err!("channel scores need ≥2 dims, got {:?}", theta.shape()));
    }
    let g = ChannelGeometry::of(theta.shape());
    Ok((0..g.inputs).map(|c| g.positions(c).map(|i| theta.data()[i].as_f64() * theta.data()[i].as_f64()).sum()).collect())
}

fn check_density(d: f64) -> Result<()> {
    if !(d > 0.0 && d <= 1.0) {
        return Err(config_err!("density must lie in (0, 1], got {}", d));
    }
    Ok(())
}

/// Random mask with the same density in every layer.
///
/// Irregular: `max(1, floor(d·n))` weights per layer. Channel: `max(1, floor(d·C_in))`
/// input channels per layer.
pub fn init_mask<T: Real>(net: &Network<T>, density: f64, granularity: Granularity, rng: &mut Stream) -> Result<PruneMask> {
    check_density(density)?;
    let shapes: Vec<Vec<usize>> = net.noisy_weights().iter().map(|w| w.theta.value.shape().to_vec()).collect();
    let mut layers = Vec::with_capacity(shapes.len());
    for shape in &shapes {
        let n: usize = shape.iter().product();
        let mut m = vec![false; n];
        match granularity {
            Granularity::Irregular => {
                let keep = floor_at_least_one(density, n);
                for i in choose(rng, n, keep) {
                    m[i] = true;
                }
            }
            Granularity::Channel => {
                let g = ChannelGeometry::of(shape);
                let keep = floor_at_least_one(density, g.inputs);
                for c in choose(rng, g.inputs, keep) {
                    for i in g.positions(c) {
                        m[i] = true;
                    }
                }
            }
        }
        layers.push(m);
    }
    Ok(PruneMask { layers, shapes, granularity, density })
}

fn floor_at_least_one(d: f64, n: usize) -> usize {
    (num_traits::Float::floor(d * n as f64) as usize).clamp(1, n)
}

/// `k` distinct indices from `0..n`, sorted.
fn choose(rng: &mut Stream, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.truncate(k);
    idx.sort_unstable();
    idx
}

/// Zeroes masked weights and their momentum buffers.
pub fn apply_mask<T: Real>(net: &mut Network<T>, mask: &PruneMask) -> Result<()> {
    check_density(mask.density)?;
    let weights = net.noisy_weights_mut();
    if weights.len() != mask.layers.len() {
        return Err(dim_err!("mask has {} layers, network {}", mask.layers.len(), weights.len()));
    }
    for (w, m) in weights.into_iter().zip(&mask.layers) {
        if m.len() != w.theta.len() {
            return Err(dim_err!("mask layer has {} entries, weight {}", m.len(), w.theta.len()));
        }
        for (i, &keep) in m.iter().enumerate() {
            if !keep {
                w.theta.value.data_mut()[i] = T::zero();
                w.theta.momentum[i] = T::zero();
            }
        }
    }
    Ok(())
}

/// Per-layer mean |momentum| over active weights and its normalized share.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMomentumRank {
    pub scores: Vec<f64>,
    pub shares: Vec<f64>,
}

impl LayerMomentumRank {
    /// Shares fall back to uniform when every score is zero.
    pub fn from_scores(scores: Vec<f64>) -> Self {
        let total: f64 = scores.iter().sum();
        let shares = if total > 0.0 {
            scores.iter().map(|s| s / total).collect()
        } else {
            vec![1.0 / scores.len() as f64; scores.len()]
        };
        Self { scores, shares }
    }
}

pub fn layer_momentum_rank<T: Real>(net: &Network<T>, mask: &PruneMask) -> LayerMomentumRank {
    let scores = net
        .noisy_weights()
        .iter()
        .zip(&mask.layers)
        .map(|(w, m)| {
            let (sum, count) = w
                .theta
                .momentum
                .iter()
                .zip(m)
                .filter(|(_, &on)| on)
                .fold((0.0, 0usize), |(s, c), (v, _)| (s + v.as_f64().abs(), c + 1));
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        })
        .collect();
    LayerMomentumRank::from_scores(scores)
}

/// Fraction of active weights pruned after `epoch` (cosine decay from `initial` to 0).
pub fn prune_rate(initial: f64, epoch: usize, total_epochs: usize) -> f64 {
    if total_epochs == 0 {
        return 0.0;
    }
    let t = (epoch as f64 / total_epochs as f64).min(1.0);
    0.5 * initial * (1.0 + num_traits::Float::cos(core::f64::consts::PI * t))
}

/// Splits `budget` proportionally to `shares` (largest remainder, ties to the lower index).
pub fn allocate(budget: usize, shares: &[f64]) -> Vec<usize> {
    let raw: Vec<f64> = shares.iter().map(|s| s * budget as f64).collect();
    let mut out: Vec<usize> = raw.iter().map(|r| num_traits::Float::floor(*r) as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (raw[a] - out[a] as f64, raw[b] - out[b] as f64);
        fb.partial_cmp(&fa).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().take(budget.saturating_sub(assigned)) {
        out[i] += 1;
    }
    out
}

/// Layer order by descending share, ties to the lower index.
fn rank_order(shares: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| shares[b].partial_cmp(&shares[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    order
}

/// Indices of `candidates` sorted by `key` ascending, ties by index.
fn smallest_first(candidates: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = candidates.to_vec();
    v.sort_by(|&a, &b| key(a).partial_cmp(&key(b)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    v
}

fn largest_first(candidates: &[usize], key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut v = candidates.to_vec();
    v.sort_by(|&a, &b| key(b).partial_cmp(&key(a)).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
    v
}

/// Outcome of one [`prune_regrow`] call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneRegrowReport {
    pub pruned: usize,
    pub regrown: usize,
    pub regrown_per_layer: Vec<usize>,
}

/// Prunes a fraction `rate` of each layer's active weights (or channels), then
/// regrows the freed budget across layers proportionally to `ranks.shares`,
/// picking dormant positions with the largest momentum. Regrown weights and
/// their momentum start at zero.
///
/// Irregular masks conserve the active count exactly; channel masks regrow
/// whole channels and never exceed the pruned count.
pub fn prune_regrow<T: Real>(
    net: &mut Network<T>,
    mask: &mut PruneMask,
    ranks: &LayerMomentumRank,
    rate: f64,
) -> Result<PruneRegrowReport> {
    if !(0.0..1.0).contains(&rate) {
        return Err(config_err!("prune rate must lie in [0, 1), got {}", rate));
    }
    if ranks.shares.len() != mask.layers.len() {
        return Err(dim_err!("{} layer ranks for {} mask layers", ranks.shares.len(), mask.layers.len()));
    }
    let report = match mask.granularity {
        Granularity::Irregular => prune_regrow_irregular(net, mask, ranks, rate),
        Granularity::Channel => prune_regrow_channel(net, mask, ranks, rate),
    }?;
    apply_mask(net, mask)?;
    Ok(report)
}

fn prune_regrow_irregular<T: Real>(
    net: &mut Network<T>,
    mask: &mut PruneMask,
    ranks: &LayerMomentumRank,
    rate: f64,
) -> Result<PruneRegrowReport> {
    let mut weights = net.noisy_weights_mut();
    let mut pruned = 0;
    for (w, m) in weights.iter_mut().zip(mask.layers.iter_mut()) {
        let active: Vec<usize> = (0..m.len()).filter(|&i| m[i]).collect();
        let n = (num_traits::Float::floor(rate * active.len() as f64) as usize).min(active.len().saturating_sub(1));
        let theta = w.theta.value.data();
        for i in smallest_first(&active, |i| theta[i].as_f64().abs()).into_iter().take(n) {
            m[i] = false;
            w.theta.value.data_mut()[i] = T::zero();
            w.theta.momentum[i] = T::zero();
        }
        pruned += n;
    }
    let capacity: Vec<usize> = mask.layers.iter().map(|m| m.iter().filter(|&&b| !b).count()).collect();
    let targets = spill(allocate(pruned, &ranks.shares), &capacity, &ranks.shares);
    for ((w, m), &r) in weights.iter_mut().zip(mask.layers.iter_mut()).zip(&targets) {
        let dormant: Vec<usize> = (0..m.len()).filter(|&i| !m[i]).collect();
        let mom = &w.theta.momentum;
        let chosen: Vec<usize> = largest_first(&dormant, |i| mom[i].as_f64().abs()).into_iter().take(r).collect();
        for i in chosen {
            m[i] = true;
            w.theta.value.data_mut()[i] = T::zero();
            w.theta.momentum[i] = T::zero();
        }
    }
    let regrown = targets.iter().sum();
    Ok(PruneRegrowReport { pruned, regrown, regrown_per_layer: targets })
}

/// Moves any demand above a layer's capacity to the next layers in share order.
fn spill(mut demand: Vec<usize>, capacity: &[usize], shares: &[f64]) -> Vec<usize> {
    let order = rank_order(shares);
    let mut overflow = 0;
    for (d, &c) in demand.iter_mut().zip(capacity) {
        if *d > c {
            overflow += *d - c;
            *d = c;
        }
    }
    for &l in &order {
        if overflow == 0 {
            break;
        }
        let room = capacity[l] - demand[l];
        let take = room.min(overflow);
        demand[l] += take;
        overflow -= take;
    }
    demand
}

fn prune_regrow_channel<T: Real>(
    net: &mut Network<T>,
    mask: &mut PruneMask,
    ranks: &LayerMomentumRank,
    rate: f64,
) -> Result<PruneRegrowReport> {
    let mut weights = net.noisy_weights_mut();
    let geoms: Vec<ChannelGeometry> = mask.shapes.iter().map(|s| ChannelGeometry::of(s)).collect();
    let mut pruned = 0;
    for ((w, m), g) in weights.iter_mut().zip(mask.layers.iter_mut()).zip(&geoms) {
        let active: Vec<usize> = (0..g.inputs).filter(|&c| m[g.index(0, c, 0)]).collect();
        let n = (num_traits::Float::floor(rate * active.len() as f64) as usize).min(active.len().saturating_sub(1));
        let scores = channel_scores(&w.theta.value)?;
        for c in smallest_first(&active, |c| scores[c]).into_iter().take(n) {
            for i in g.positions(c) {
                m[i] = false;
                w.theta.value.data_mut()[i] = T::zero();
                w.theta.momentum[i] = T::zero();
            }
        }
        pruned += n * g.size();
    }
    let targets = allocate(pruned, &ranks.shares);
    let mut budget = pruned;
    let mut grant = vec![0usize; geoms.len()];
    let dormant: Vec<Vec<usize>> = mask
        .layers
        .iter()
        .zip(&geoms)
        .map(|(m, g)| (0..g.inputs).filter(|&c| !m[g.index(0, c, 0)]).collect())
        .collect();
    for (l, g) in geoms.iter().enumerate() {
        let n = (targets[l] / g.size()).min(dormant[l].len()).min(budget / g.size());
        grant[l] = n;
        budget -= n * g.size();
    }
    for &l in &rank_order(&ranks.shares) {
        let g = &geoms[l];
        let extra = (budget / g.size()).min(dormant[l].len() - grant[l]);
        grant[l] += extra;
        budget -= extra * g.size();
    }
    let mut regrown_per_layer = vec![0; geoms.len()];
    for (l, ((w, m), g)) in weights.iter_mut().zip(mask.layers.iter_mut()).zip(&geoms).enumerate() {
        let mom = &w.theta.momentum;
        let energy = |c: usize| g.positions(c).map(|i| mom[i].as_f64() * mom[i].as_f64()).sum::<f64>();
        let chosen: Vec<usize> = largest_first(&dormant[l], energy).into_iter().take(grant[l]).collect();
        for c in chosen {
            for i in g.positions(c) {
                m[i] = true;
                w.theta.value.data_mut()[i] = T::zero();
                w.theta.momentum[i] = T::zero();
            }
        }
        regrown_per_layer[l] = grant[l] * g.size();
    }
    let regrown = regrown_per_layer.iter().sum();
    Ok(PruneRegrowReport { pruned, regrown, regrown_per_layer })
}

#[cfg(test)]
mod tests;
