//! Curve-patch grouping versus brute-force KNN: wall time, memory and locality.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::knn::{knn_oracle, KnnMetric};
use crate::error::{Error, Result};
use crate::event_model::{CameraGeometry, EventBatch, NormalizedEvent};
use crate::serial_pipeline::{self, select_order, serialize_codes, Branch, BranchConfig};

/// Patch sizes swept by the locality study.
pub const PATCH_SWEEP: [usize; 7] = [16, 32, 64, 128, 256, 512, 1024];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub k: usize,
    pub patch: usize,
    pub seeds: Vec<u64>,
    pub branch: Branch,
    /// Repetitions of the serialize stage; the minimum is reported.
    pub serialize_reps: usize,
    /// Run the sizes concurrently (throughput mode; timings then share cores).
    pub parallel: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            sizes: vec![2048, 4096, 8192],
            k: 512,
            patch: 512,
            seeds: vec![0],
            branch: Branch::SpatioTemporal,
            serialize_reps: 20,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub scenario: String,
    pub n: usize,
    pub seed: u64,
    pub k: Option<usize>,
    pub patch: usize,
    pub patches: usize,
    pub serialize_secs: f64,
    pub knn_secs: Option<f64>,
    pub serialize_bytes: usize,
    pub knn_bytes: Option<usize>,
    pub patch_spatial: f64,
    pub patch_temporal: f64,
    pub knn_spatial: Option<f64>,
    pub knn_temporal: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "scenario,n,seed,k,patch,patches,serialize_s,knn_s,serialize_bytes,knn_bytes,\
             patch_spatial,patch_temporal,knn_spatial,knn_temporal\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.9},{},{},{},{:.6},{:.6},{},{}",
                r.scenario,
                r.n,
                r.seed,
                opt(r.k),
                r.patch,
                r.patches,
                r.serialize_secs,
                r.knn_secs.map(|v| format!("{v:.9}")).unwrap_or_default(),
                r.serialize_bytes,
                opt(r.knn_bytes),
                r.patch_spatial,
                r.patch_temporal,
                r.knn_spatial.map(|v| format!("{v:.6}")).unwrap_or_default(),
                r.knn_temporal.map(|v| format!("{v:.6}")).unwrap_or_default(),
            );
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<12} {:>6} {:>5} {:>5} {:>8} {:>12} {:>12} {:>10} {:>10} {:>10} {:>10}\n",
            "scenario", "N", "K", "p", "patches", "serialize", "knn", "patch_xy", "patch_t", "knn_xy", "knn_t"
        );
        let dash = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>5} {:>5} {:>8} {:>12} {:>12} {:>10.5} {:>10.5} {:>10} {:>10}",
                r.scenario,
                r.n,
                dash(r.k.map(|k| k.to_string())),
                r.patch,
                r.patches,
                format!("{:.3}ms", r.serialize_secs * 1e3),
                dash(r.knn_secs.map(|s| format!("{:.3}ms", s * 1e3))),
                r.patch_spatial,
                r.patch_temporal,
                dash(r.knn_spatial.map(|v| format!("{v:.5}"))),
                dash(r.knn_temporal.map(|v| format!("{v:.5}"))),
            );
        }
        out
    }

    /// Ratios between consecutive sizes of a per-size time, taking the minimum over seeds.
    pub fn doubling_ratios(&self, scenario: &str, time: impl Fn(&BenchRow) -> Option<f64>) -> Vec<(usize, usize, f64)> {
        let mut sizes: Vec<usize> = self.rows.iter().filter(|r| r.scenario == scenario).map(|r| r.n).collect();
        sizes.sort_unstable();
        sizes.dedup();
        let best = |n: usize| {
            self.rows
                .iter()
                .filter(|r| r.scenario == scenario && r.n == n)
                .filter_map(&time)
                .fold(f64::INFINITY, f64::min)
        };
        sizes.windows(2).map(|w| (w[0], w[1], best(w[1]) / best(w[0]))).collect()
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    let u: f64 = 1.0 - rng.gen::<f64>();
    let v: f64 = rng.gen();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

/// Points from a few spatial Gaussian clusters whose centers drift over time.
pub fn clustered_points(n: usize, clusters: usize, seed: u64) -> EventBatch {
    let geometry = CameraGeometry::new(256, 256, 0.2).expect("fixed geometry");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clusters = clusters.max(1);
    let centers: Vec<[f64; 4]> = (0..clusters)
        .map(|_| [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)])
        .collect();
    let events = (0..n)
        .map(|_| {
            let [cx, cy, vx, vy] = centers[rng.gen_range(0..clusters)];
            let t: f64 = rng.gen();
            let x1 = (cx + vx * (t - 0.5) + 0.03 * normal(&mut rng)).clamp(0.0, 0.999);
            let x2 = (cy + vy * (t - 0.5) + 0.03 * normal(&mut rng)).clamp(0.0, 0.999);
            NormalizedEvent {
                h: (x1 * 256.0) as u16,
                w: (x2 * 256.0) as u16,
                x1,
                x2,
                x3: t,
                p_acc: if rng.gen() { 1.0 } else { -1.0 },
                c: 1.0,
            }
        })
        .collect();
    EventBatch { events, geometry, segments: 1, t_min: 0.0, t_max: 1.0 }
}

/// Mean spatial distance to the group centroid and mean absolute time deviation, averaged over groups.
pub fn group_spread<'a>(points: &[NormalizedEvent], groups: impl Iterator<Item = &'a [usize]>) -> (f64, f64) {
    let (mut xy, mut t, mut count) = (0.0, 0.0, 0usize);
    for g in groups {
        if g.is_empty() {
            continue;
        }
        let m = g.len() as f64;
        let (mut cx, mut cy, mut ct) = (0.0, 0.0, 0.0);
        for &i in g {
            cx += points[i].x1;
            cy += points[i].x2;
            ct += points[i].x3;
        }
        (cx, cy, ct) = (cx / m, cy / m, ct / m);
        xy += g.iter().map(|&i| ((points[i].x1 - cx).powi(2) + (points[i].x2 - cy).powi(2)).sqrt()).sum::<f64>() / m;
        t += g.iter().map(|&i| (points[i].x3 - ct).abs()).sum::<f64>() / m;
        count += 1;
    }
    if count == 0 {
        return (0.0, 0.0);
    }
    (xy / count as f64, t / count as f64)
}

fn metric_for(branch: Branch) -> KnnMetric {
    match branch {
        Branch::Spatial => KnnMetric::Spatial,
        Branch::Temporal => KnnMetric::Temporal,
        Branch::SpatioTemporal => KnnMetric::Euclidean3d,
    }
}

struct Grouping {
    secs: f64,
    perm: Vec<usize>,
    patches: Vec<std::ops::Range<usize>>,
}

fn time_serialize(batch: &EventBatch, branch: Branch, patch: usize, seed: u64, reps: usize) -> Result<Grouping> {
    let cfg = BranchConfig::default_for(branch);
    let order = select_order(0, &cfg, seed)?;
    let mut best = f64::INFINITY;
    let mut last = None;
    for _ in 0..reps.max(1) {
        let start = Instant::now();
        let codes = serial_pipeline::encode_points(batch, branch.axes(), &order)?;
        let ser = serialize_codes(codes, order, patch)?;
        best = best.min(start.elapsed().as_secs_f64());
        last = Some(ser);
    }
    let ser = last.expect("at least one repetition");
    Ok(Grouping { secs: best, perm: ser.perm, patches: ser.patches })
}

fn serialize_bytes(n: usize) -> usize {
    // code, sort key and permutation per point
    n * 3 * std::mem::size_of::<u64>()
}

fn run_size(n: usize, seed: u64, opts: &BenchOptions) -> Result<BenchRow> {
    let batch = clustered_points(n, 8, seed);
    let g = time_serialize(&batch, opts.branch, opts.patch, seed, opts.serialize_reps)?;
    let (patch_spatial, patch_temporal) = group_spread(&batch.events, g.patches.iter().map(|r| &g.perm[r.clone()]));

    let start = Instant::now();
    let neighbors = knn_oracle(&batch.events, opts.k, metric_for(opts.branch))?;
    let knn_secs = start.elapsed().as_secs_f64();
    let hoods: Vec<Vec<usize>> =
        neighbors.into_iter().enumerate().map(|(i, mut nb)| {
            nb.push(i);
            nb
        }).collect();
    let (knn_spatial, knn_temporal) = group_spread(&batch.events, hoods.iter().map(Vec::as_slice));

    Ok(BenchRow {
        scenario: "patch-vs-knn".into(),
        n,
        seed,
        k: Some(opts.k),
        patch: opts.patch,
        patches: g.patches.len(),
        serialize_secs: g.secs,
        knn_secs: Some(knn_secs),
        serialize_bytes: serialize_bytes(n),
        knn_bytes: Some(n * 16 + n * opts.k * std::mem::size_of::<usize>()),
        patch_spatial,
        patch_temporal,
        knn_spatial: Some(knn_spatial),
        knn_temporal: Some(knn_temporal),
    })
}

/// Serialize+partition against brute-force KNN for every size and seed.
pub fn bench_patch_vs_knn(opts: &BenchOptions) -> Result<BenchReport> {
    if opts.sizes.is_empty() || opts.seeds.is_empty() {
        return Err(Error::Parameter("benchmark needs at least one size and one seed".into()));
    }
    let jobs: Vec<(usize, u64)> = opts.sizes.iter().flat_map(|&n| opts.seeds.iter().map(move |&s| (n, s))).collect();
    let rows = if opts.parallel {
        jobs.par_iter().map(|&(n, s)| run_size(n, s, opts)).collect::<Result<Vec<_>>>()?
    } else {
        jobs.iter().map(|&(n, s)| run_size(n, s, opts)).collect::<Result<Vec<_>>>()?
    };
    Ok(BenchReport { rows })
}

/// Locality of curve patches for each patch size; KNN is not run.
pub fn patch_size_sweep(n: usize, patches: &[usize], branch: Branch, seed: u64) -> Result<BenchReport> {
    let batch = clustered_points(n, 8, seed);
    let rows = patches
        .iter()
        .map(|&p| {
            let g = time_serialize(&batch, branch, p, seed, 3)?;
            let (patch_spatial, patch_temporal) =
                group_spread(&batch.events, g.patches.iter().map(|r| &g.perm[r.clone()]));
            Ok(BenchRow {
                scenario: "patch-sweep".into(),
                n,
                seed,
                k: None,
                patch: p,
                patches: g.patches.len(),
                serialize_secs: g.secs,
                knn_secs: None,
                serialize_bytes: serialize_bytes(n),
                knn_bytes: None,
                patch_spatial,
                patch_temporal,
                knn_spatial: None,
                knn_temporal: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_patches_at_1024() {
        let opts = BenchOptions { sizes: vec![1024], k: 8, serialize_reps: 1, ..BenchOptions::default() };
        let report = bench_patch_vs_knn(&opts).unwrap();
        assert_eq!(report.rows.len(), 1);
        let r = &report.rows[0];
        assert_eq!(r.patches, 2);
        assert!(r.serialize_secs >= 0.0 && r.knn_secs.unwrap() >= 0.0);
        for v in [r.patch_spatial, r.patch_temporal, r.knn_spatial.unwrap(), r.knn_temporal.unwrap()] {
            assert!(v.is_finite() && v >= 0.0);
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 14);
        assert!(report.to_table().contains("patch-vs-knn"));
    }

    #[test]
    fn sweep_emits_one_row_per_size() {
        let report = patch_size_sweep(2048, &PATCH_SWEEP, Branch::SpatioTemporal, 1).unwrap();
        assert_eq!(report.rows.iter().map(|r| r.patch).collect::<Vec<_>>(), PATCH_SWEEP.to_vec());
        // larger patches cover more space
        assert!(report.rows[0].patch_spatial < report.rows[6].patch_spatial);
    }

    #[test]
    fn curve_patches_beat_random_grouping() {
        let batch = clustered_points(4096, 8, 2);
        let g = time_serialize(&batch, Branch::SpatioTemporal, 64, 2, 1).unwrap();
        let sorted = group_spread(&batch.events, g.patches.iter().map(|r| &g.perm[r.clone()]));
        let ident: Vec<usize> = (0..4096).collect();
        let random = group_spread(&batch.events, ident.chunks(64));
        assert!(sorted.0 < random.0 && sorted.1 < random.1);
    }

    #[test]
    fn ratios_use_best_seed() {
        let row = |n, s: f64| BenchRow {
            scenario: "x".into(),
            n,
            seed: 0,
            k: None,
            patch: 1,
            patches: 1,
            serialize_secs: s,
            knn_secs: None,
            serialize_bytes: 0,
            knn_bytes: None,
            patch_spatial: 0.0,
            patch_temporal: 0.0,
            knn_spatial: None,
            knn_temporal: None,
        };
        let report = BenchReport { rows: vec![row(2, 1.0), row(2, 3.0), row(4, 2.5)] };
        assert_eq!(report.doubling_ratios("x", |r| Some(r.serialize_secs)), vec![(2, 4, 2.5)]);
    }

    #[test]
    fn empty_options_rejected() {
        let opts = BenchOptions { sizes: vec![], ..BenchOptions::default() };
        assert!(bench_patch_vs_knn(&opts).is_err());
    }
}
