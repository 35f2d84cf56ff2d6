//! Curve sorting, patch partitioning, code-shift pooling and branch layout.

mod config;

pub use config::{Branch, BranchConfig};

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::event_model::EventBatch;
use crate::sfc_codec::{self, Axes, CurveCode, CurveKind, CurveOrder};

/// Pick the curve used at one encoder/decoder layer.
///
/// Uniform over the branch's allowed orders and a pure function of
/// `(seed, branch, layer_index)`.
pub fn select_order(layer_index: usize, branch: &BranchConfig, seed: u64) -> Result<CurveOrder> {
    if branch.orders.is_empty() {
        return Err(Error::Parameter("branch has no curve orders".into()));
    }
    let stream = seed ^ (branch.branch.tag() << 56) ^ (layer_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let kind = branch.orders[rng.gen_range(0..branch.orders.len())];
    CurveOrder::new(kind, branch.branch.axes().dims(), branch.bits)
}

/// Points sorted along a curve and cut into patches.
#[derive(Debug, Clone, PartialEq)]
pub struct SerializedBatch {
    pub order_used: CurveOrder,
    /// `perm[k]` is the index of the `k`-th point in curve order.
    pub perm: Vec<usize>,
    /// Consecutive ranges over `perm`; the last may be shorter than the patch size.
    pub patches: Vec<Range<usize>>,
    /// Code of every point, indexed by original point index.
    pub codes: Vec<CurveCode>,
}

impl SerializedBatch {
    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    /// Patch id of every point, indexed by original point index.
    pub fn patch_of_point(&self) -> Vec<usize> {
        let mut out = vec![0; self.perm.len()];
        for (pid, r) in self.patches.iter().enumerate() {
            for &i in &self.perm[r.clone()] {
                out[i] = pid;
            }
        }
        out
    }
}

/// Curve codes of every point of a batch on the given axes.
pub fn encode_points(batch: &EventBatch, axes: Axes, order: &CurveOrder) -> Result<Vec<CurveCode>> {
    if axes.dims() != order.dims() {
        return Err(Error::Shape(format!("{}-D curve for {:?} axes", order.dims(), axes)));
    }
    let grid = sfc_codec::default_grid(order.bits());
    let d = order.dims() as usize;
    Ok(batch
        .events
        .iter()
        .map(|p| {
            let cells = sfc_codec::quantize(p, axes, grid, order.bits());
            sfc_codec::encode_unchecked(&cells[..d], order)
        })
        .collect())
}

/// Consecutive ranges of `patch_size` over `n` items, the last one possibly shorter.
pub fn partition(n: usize, patch_size: usize) -> Result<Vec<Range<usize>>> {
    if patch_size == 0 {
        return Err(Error::Parameter("patch size must be at least 1".into()));
    }
    Ok((0..n).step_by(patch_size).map(|s| s..(s + patch_size).min(n)).collect())
}

/// Stable sort of point indices by code.
pub fn sort_by_code(codes: &[CurveCode]) -> Vec<usize> {
    let mut keyed: Vec<(CurveCode, usize)> = codes.iter().copied().zip(0..).collect();
    // index in the key makes the unstable sort stable
    keyed.sort_unstable();
    keyed.into_iter().map(|(_, i)| i).collect()
}

/// Sort precomputed codes and partition them.
pub fn serialize_codes(codes: Vec<CurveCode>, order: CurveOrder, patch_size: usize) -> Result<SerializedBatch> {
    let perm = sort_by_code(&codes);
    let patches = partition(perm.len(), patch_size)?;
    Ok(SerializedBatch { order_used: order, perm, patches, codes })
}

/// Encode a batch on its branch axes, sort and partition with the first encoder patch size.
pub fn serialize(batch: &EventBatch, order: CurveOrder, branch: &BranchConfig) -> Result<SerializedBatch> {
    let codes = encode_points(batch, branch.branch.axes(), &order)?;
    serialize_codes(codes, order, branch.enc_patch[0])
}

/// Grouping produced by one code-shift pooling step.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolMap {
    /// Group of every input point, by original index.
    pub group: Vec<usize>,
    pub n_groups: usize,
    /// Shifted code of every group; groups are numbered in increasing code order.
    pub group_codes: Vec<CurveCode>,
    /// First member (in curve order) of every group.
    pub representative: Vec<usize>,
}

impl PoolMap {
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_groups];
        for &g in &self.group {
            sizes[g] += 1;
        }
        sizes
    }
}

pub(crate) fn shift(code: CurveCode, y: u32) -> CurveCode {
    CurveCode(code.0.checked_shr(y).unwrap_or(0))
}

/// Group points whose codes agree after a right shift by `y` bits.
pub fn pool_map(serialized: &SerializedBatch, y: u32) -> Result<PoolMap> {
    if y == 0 {
        return Err(Error::Parameter("pooling shift y must be at least 1".into()));
    }
    let n = serialized.len();
    let mut group = vec![0; n];
    let mut group_codes = Vec::new();
    let mut representative = Vec::new();
    for &i in &serialized.perm {
        let code = shift(serialized.codes[i], y);
        if group_codes.last() != Some(&code) {
            group_codes.push(code);
            representative.push(i);
        }
        group[i] = group_codes.len() - 1;
    }
    Ok(PoolMap { group, n_groups: group_codes.len(), group_codes, representative })
}

/// Max-pool `(N, C)` features over the groups of [`pool_map`].
pub fn grid_pool(
    serialized: &SerializedBatch,
    features: &ndarray::Array2<f64>,
    y: u32,
) -> Result<(ndarray::Array2<f64>, PoolMap)> {
    if features.nrows() != serialized.len() {
        return Err(Error::Shape(format!("{} feature rows for {} points", features.nrows(), serialized.len())));
    }
    let map = pool_map(serialized, y)?;
    let mut pooled = ndarray::Array2::from_elem((map.n_groups, features.ncols()), f64::NEG_INFINITY);
    for (row, &g) in features.rows().into_iter().zip(&map.group) {
        for (dst, &v) in pooled.row_mut(g).iter_mut().zip(row.iter()) {
            *dst = dst.max(v);
        }
    }
    Ok((pooled, map))
}

/// Broadcast pooled rows back to every member point.
pub fn unpool(pooled: &ndarray::Array2<f64>, map: &PoolMap) -> Result<ndarray::Array2<f64>> {
    if pooled.nrows() != map.n_groups {
        return Err(Error::Shape(format!("{} pooled rows for {} groups", pooled.nrows(), map.n_groups)));
    }
    Ok(pooled.select(ndarray::Axis(0), &map.group))
}

/// Curve cells covered after `layers` pooling steps of `y` bits from patch size `patch`:
/// `patch * 2^(y * layers)`.
pub fn receptive_field(patch: u64, y: u32, layers: u32) -> Result<u64> {
    receptive_field_schedule(patch, &vec![y; layers as usize])
}

/// Receptive field for a per-step shift schedule, `patch * 2^(sum of shifts)`.
pub fn receptive_field_schedule(patch: u64, shifts: &[u32]) -> Result<u64> {
    let total: u32 = shifts.iter().sum();
    1u64.checked_shl(total)
        .filter(|_| total < 64)
        .and_then(|f| f.checked_mul(patch))
        .ok_or_else(|| Error::Range(format!("receptive field {patch} * 2^{total} overflows")))
}

/// Orders available to a branch, by name.
pub fn order_names(orders: &[CurveKind]) -> Vec<&'static str> {
    orders.iter().map(|k| k.as_str()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_model::{CameraGeometry, NormalizedEvent};
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::Rng;

    fn batch_from(points: Vec<NormalizedEvent>) -> EventBatch {
        EventBatch { events: points, geometry: CameraGeometry::new(64, 64, 0.1).unwrap(), segments: 8, t_min: 0.0, t_max: 1.0 }
    }

    fn random_batch(n: usize, seed: u64) -> EventBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        batch_from(
            (0..n)
                .map(|_| NormalizedEvent {
                    h: 0,
                    w: 0,
                    x1: rng.gen(),
                    x2: rng.gen(),
                    x3: rng.gen(),
                    p_acc: 1.0,
                    c: 1.0,
                })
                .collect(),
        )
    }

    #[test]
    fn spatial_branch_selects_hilbert_only() {
        let cfg = BranchConfig::spatial();
        for layer in 0..200 {
            let o = select_order(layer, &cfg, 99).unwrap();
            assert!(o.kind.is_hilbert());
            assert_eq!(o.dims(), 2);
        }
        let st = BranchConfig::spatiotemporal();
        let kinds: std::collections::HashSet<_> = (0..200).map(|l| select_order(l, &st, 1).unwrap().kind).collect();
        assert_eq!(kinds.len(), 4);
    }

    #[test]
    fn select_order_single_and_deterministic() {
        let mut cfg = BranchConfig::temporal();
        cfg.orders = vec![CurveKind::HilbertTrans];
        assert_eq!(select_order(3, &cfg, 5).unwrap().kind, CurveKind::HilbertTrans);
        let st = BranchConfig::spatiotemporal();
        let a: Vec<_> = (0..10).map(|l| select_order(l, &st, 42).unwrap()).collect();
        let b: Vec<_> = (0..10).map(|l| select_order(l, &st, 42).unwrap()).collect();
        assert_eq!(a, b);
        cfg.orders.clear();
        assert!(select_order(0, &cfg, 0).is_err());
    }

    #[test]
    fn patch_partition_examples() {
        assert_eq!(partition(512, 512).unwrap(), vec![0..512]);
        assert_eq!(partition(2 * 7 + 3, 7).unwrap(), vec![0..7, 7..14, 14..17]);
        assert!(partition(5, 0).is_err());
    }

    #[test]
    fn serialize_sorts_stably() {
        let batch = random_batch(300, 1);
        let cfg = BranchConfig::spatial();
        let order = CurveOrder::new(CurveKind::Hilbert, 2, 3).unwrap();
        let s = serialize(&batch, order, &cfg).unwrap();
        for w in s.perm.windows(2) {
            let (a, b) = (s.codes[w[0]], s.codes[w[1]]);
            assert!(a < b || (a == b && w[0] < w[1]));
        }
        assert_eq!(s.patches.len(), 1);
    }

    #[test]
    fn branch_routing_ignores_other_axes() {
        let batch = random_batch(200, 2);
        let mut shuffled_t = batch.clone();
        let mut shuffled_s = batch.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ts: Vec<f64> = batch.events.iter().map(|e| e.x3).collect();
        rand::seq::SliceRandom::shuffle(ts.as_mut_slice(), &mut rng);
        for (e, t) in shuffled_t.events.iter_mut().zip(ts) {
            e.x3 = t;
        }
        let mut xy: Vec<(f64, f64)> = batch.events.iter().map(|e| (e.x1, e.x2)).collect();
        rand::seq::SliceRandom::shuffle(xy.as_mut_slice(), &mut rng);
        for (e, (a, b)) in shuffled_s.events.iter_mut().zip(xy) {
            e.x1 = a;
            e.x2 = b;
        }
        let s_order = CurveOrder::new(CurveKind::Hilbert, 2, 10).unwrap();
        let t_order = CurveOrder::new(CurveKind::Hilbert, 1, 10).unwrap();
        assert_eq!(
            encode_points(&batch, Axes::Spatial, &s_order).unwrap(),
            encode_points(&shuffled_t, Axes::Spatial, &s_order).unwrap()
        );
        assert_eq!(
            encode_points(&batch, Axes::Temporal, &t_order).unwrap(),
            encode_points(&shuffled_s, Axes::Temporal, &t_order).unwrap()
        );
        assert!(encode_points(&batch, Axes::Temporal, &s_order).is_err());
    }

    fn dense_grid(bits: u32, kind: CurveKind) -> SerializedBatch {
        let order = CurveOrder::new(kind, 2, bits).unwrap();
        let n = 1u32 << bits;
        let codes: Vec<CurveCode> = (0..n)
            .flat_map(|x| (0..n).map(move |y| (x, y)))
            .map(|(x, y)| sfc_codec::encode(&[x, y], &order).unwrap())
            .collect();
        serialize_codes(codes, order, 512).unwrap()
    }

    #[test]
    fn dense_grid_pool_count() {
        for kind in CurveKind::ALL {
            let s = dense_grid(6, kind);
            let map = pool_map(&s, 5).unwrap();
            assert_eq!(map.n_groups, 4096 / 32);
            assert!(map.group_sizes().iter().all(|&g| g == 32));
        }
    }

    #[test]
    fn oversized_shift_makes_one_group() {
        let s = dense_grid(3, CurveKind::Z);
        assert_eq!(pool_map(&s, 7).unwrap().n_groups, 1);
        assert_eq!(pool_map(&s, 64).unwrap().n_groups, 1);
        assert_eq!(pool_map(&s, 200).unwrap().n_groups, 1);
        assert!(pool_map(&s, 0).is_err());
    }

    #[test]
    fn single_point_pool_and_unpool() {
        let batch = random_batch(1, 4);
        let s = serialize(&batch, CurveOrder::new(CurveKind::Hilbert, 2, 10).unwrap(), &BranchConfig::spatial()).unwrap();
        let f = Array2::from_shape_vec((1, 3), vec![1.0, -2.0, 3.5]).unwrap();
        let (pooled, map) = grid_pool(&s, &f, 5).unwrap();
        assert_eq!(pooled, f);
        assert_eq!(unpool(&pooled, &map).unwrap(), f);
    }

    #[test]
    fn two_point_group_max() {
        let order = CurveOrder::new(CurveKind::Z, 2, 4).unwrap();
        let s = serialize_codes(vec![CurveCode(0), CurveCode(1)], order, 4).unwrap();
        let f = Array2::from_shape_vec((2, 1), vec![1.0, 5.0]).unwrap();
        let (pooled, map) = grid_pool(&s, &f, 1).unwrap();
        assert_eq!(pooled, Array2::from_elem((1, 1), 5.0));
        assert_eq!(unpool(&pooled, &map).unwrap(), Array2::from_elem((2, 1), 5.0));
        assert!(unpool(&Array2::zeros((3, 1)), &map).is_err());
    }

    #[test]
    fn receptive_field_examples() {
        assert_eq!(receptive_field(512, 5, 2).unwrap(), 524_288);
        assert_eq!(receptive_field(512, 5, 0).unwrap(), 512);
        assert_eq!(receptive_field(512, 3, 1).unwrap(), 4096);
        assert_eq!(receptive_field_schedule(512, &[5, 3]).unwrap(), 512 << 8);
        assert!(receptive_field(512, 20, 4).is_err());
    }

    proptest! {
        #[test]
        fn pool_groups_are_consecutive_and_unpool_constant(n in 1usize..400, y in 1u32..12, seed in any::<u64>()) {
            let batch = random_batch(n, seed);
            let order = CurveOrder::new(CurveKind::Hilbert, 3, 6).unwrap();
            let codes = encode_points(&batch, Axes::SpatioTemporal, &order).unwrap();
            let s = serialize_codes(codes, order, 16).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = Array2::from_shape_simple_fn((n, 4), || rng.gen_range(-1.0..1.0));
            let (pooled, map) = grid_pool(&s, &f, y).unwrap();
            prop_assert!(map.n_groups <= n);
            // consecutive along the curve: group ids never decrease in curve order
            let seq: Vec<usize> = s.perm.iter().map(|&i| map.group[i]).collect();
            prop_assert!(seq.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1));
            prop_assert!(map.group_sizes().iter().all(|&c| c > 0));
            let up = unpool(&pooled, &map).unwrap();
            for i in 0..n {
                prop_assert_eq!(up.row(i), pooled.row(map.group[i]));
            }
            // pooling the unpooled features again is idempotent
            let (again, _) = grid_pool(&s, &up, y).unwrap();
            prop_assert_eq!(again, pooled);
        }
    }
}
