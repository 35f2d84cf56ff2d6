use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CameraGeometry, Event, EventBatch, FusedEvent, NormalizeOptions, NormalizedEvent};
use crate::error::{Error, Result};

/// `(t_min, t_max)` over a non-empty stream, `None` when empty.
pub fn time_span(events: &[Event]) -> Option<(f64, f64)> {
    let first = events.first()?.t;
    Some(events.iter().fold((first, first), |(lo, hi), e| (lo.min(e.t), hi.max(e.t))))
}

/// Temporal segment of timestamp `t` in a span split into `segments` equal slices.
///
/// The last slice is closed on the right; a degenerate span puts everything in slice 0.
pub fn segment_index(t: f64, t_min: f64, t_max: f64, segments: usize) -> usize {
    let span = t_max - t_min;
    if !(span > 0.0) {
        return 0;
    }
    let raw = (segments as f64 * (t - t_min) / span).floor();
    if raw <= 0.0 {
        0
    } else {
        (raw as usize).min(segments - 1)
    }
}

/// Merge events sharing a pixel and temporal segment.
///
/// Output is ordered by `(segment, h, w)`. Timestamps are averaged in input order.
pub fn fuse(events: &[Event], segments: usize, t_span: (f64, f64)) -> Result<Vec<FusedEvent>> {
    if segments == 0 {
        return Err(Error::Parameter("segment count T must be at least 1".into()));
    }
    let (t_min, t_max) = t_span;
    let mut keyed: Vec<(usize, u16, u16, usize)> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (segment_index(e.t, t_min, t_max, segments), e.h, e.w, i))
        .collect();
    // the trailing index keeps members in input order within a cell
    keyed.sort_unstable();

    let mut out = Vec::new();
    let mut run_start = 0;
    while run_start < keyed.len() {
        let (seg, h, w, _) = keyed[run_start];
        let mut run_end = run_start;
        let mut t_sum = 0.0;
        let mut p_acc = 0i64;
        while run_end < keyed.len() && keyed[run_end].0 == seg && keyed[run_end].1 == h && keyed[run_end].2 == w {
            let e = &events[keyed[run_end].3];
            t_sum += e.t;
            p_acc += i64::from(e.p);
            run_end += 1;
        }
        let c = run_end - run_start;
        out.push(FusedEvent { h, w, t_avg: t_sum / c as f64, p_acc, c: c as u32 });
        run_start = run_end;
    }
    Ok(out)
}

/// [`fuse`] over the stream's own time span.
pub fn fuse_stream(events: &[Event], segments: usize) -> Result<Vec<FusedEvent>> {
    match time_span(events) {
        Some(span) => fuse(events, segments, span),
        None if segments == 0 => Err(Error::Parameter("segment count T must be at least 1".into())),
        None => Ok(Vec::new()),
    }
}

/// Randomly draw exactly `m` fused points and normalize them.
///
/// With at least `m` candidates the draw is without replacement. With fewer,
/// every candidate is kept once and the shortfall is drawn with replacement.
pub fn sample_and_normalize(
    fused: &[FusedEvent],
    m: usize,
    geometry: &CameraGeometry,
    segments: usize,
    seed: u64,
    opts: NormalizeOptions,
) -> Result<EventBatch> {
    if m == 0 {
        return Err(Error::Parameter("sample count M must be at least 1".into()));
    }
    if fused.is_empty() {
        return Err(Error::Parameter("cannot sample from an empty fused event set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if fused.len() >= m {
        index::sample(&mut rng, fused.len(), m).into_vec()
    } else {
        let mut picks: Vec<usize> = (0..fused.len()).collect();
        picks.extend((fused.len()..m).map(|_| rng.gen_range(0..fused.len())));
        rand::seq::SliceRandom::shuffle(picks.as_mut_slice(), &mut rng);
        picks
    };

    let (t_min, t_max) = fused
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), f| (lo.min(f.t_avg), hi.max(f.t_avg)));
    let span = t_max - t_min;
    let w = geometry.width as f64;
    let h_scale = if opts.normalize_h_by_height { geometry.height as f64 } else { w };

    let events = picks
        .into_iter()
        .map(|i| {
            let f = &fused[i];
            let x3 = if span > 0.0 { ((f.t_avg - t_min) / span).clamp(0.0, 1.0) } else { 0.0 };
            NormalizedEvent {
                h: f.h,
                w: f.w,
                x1: f64::from(f.h) / h_scale,
                x2: f64::from(f.w) / w,
                x3,
                p_acc: f.p_acc as f64,
                c: f64::from(f.c),
            }
        })
        .collect();

    Ok(EventBatch { events, geometry: *geometry, segments, t_min, t_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::fuse_oracle;
    use proptest::prelude::*;
    use rand::Rng;

    fn geom() -> CameraGeometry {
        CameraGeometry::new(100, 100, 0.2).unwrap()
    }

    #[test]
    fn same_pixel_same_segment_fuses() {
        let events = [Event::new(3, 4, 0.2, 1), Event::new(3, 4, 0.4, 1)];
        let fused = fuse(&events, 8, (0.0, 4.0)).unwrap();
        assert_eq!(fused.len(), 1);
        assert!((fused[0].t_avg - 0.3).abs() < 1e-15);
        assert_eq!(fused[0].p_acc, 2);
        assert_eq!(fused[0].c, 2);
    }

    #[test]
    fn distinct_pixels_do_not_fuse() {
        let events: Vec<Event> = (0..50).map(|i| Event::new(i, 2 * i, f64::from(i) * 0.01, 1)).collect();
        let fused = fuse_stream(&events, 4).unwrap();
        assert_eq!(fused.len(), 50);
        assert!(fused.iter().all(|f| f.c == 1));
    }

    #[test]
    fn empty_input_and_zero_segments() {
        assert!(fuse_stream(&[], 8).unwrap().is_empty());
        assert!(matches!(fuse(&[Event::new(0, 0, 0.0, 1)], 0, (0.0, 1.0)), Err(Error::Parameter(_))));
    }

    #[test]
    fn segment_boundaries() {
        assert_eq!(segment_index(0.0, 0.0, 1.0, 8), 0);
        assert_eq!(segment_index(1.0, 0.0, 1.0, 8), 7);
        assert_eq!(segment_index(0.5, 0.0, 1.0, 8), 4);
        assert_eq!(segment_index(0.3, 0.3, 0.3, 8), 0);
    }

    #[test]
    fn random_instance_matches_grouping_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let events: Vec<Event> = (0..10_000)
            .map(|_| {
                Event::new(rng.gen_range(0..16), rng.gen_range(0..16), rng.gen_range(0.0..1.0), if rng.gen() { 1 } else { -1 })
            })
            .collect();
        let span = time_span(&events).unwrap();
        let mut ours = fuse(&events, 8, span).unwrap();
        let mut oracle = fuse_oracle(&events, 8, span);
        let key = |f: &FusedEvent| (f.h, f.w, f.t_avg.to_bits());
        ours.sort_by_key(key);
        oracle.sort_by_key(key);
        assert_eq!(ours.len(), oracle.len());
        for (a, b) in ours.iter().zip(&oracle) {
            assert_eq!((a.h, a.w, a.p_acc, a.c), (b.h, b.w, b.p_acc, b.c));
            assert!((a.t_avg - b.t_avg).abs() <= 1e-12 * b.t_avg.abs().max(1e-300));
        }
    }

    #[test]
    fn sampling_everything_is_a_permutation() {
        let fused: Vec<FusedEvent> =
            (0..20).map(|i| FusedEvent { h: i, w: i, t_avg: f64::from(i), p_acc: 1, c: 1 }).collect();
        let batch = sample_and_normalize(&fused, 20, &geom(), 8, 3, NormalizeOptions::default()).unwrap();
        let mut hs: Vec<u16> = batch.events.iter().map(|e| e.h).collect();
        hs.sort_unstable();
        assert_eq!(hs, (0..20).collect::<Vec<_>>());
    }

    #[test]
    fn normalization_formula() {
        let fused = [
            FusedEvent { h: 0, w: 0, t_avg: 0.0, p_acc: 1, c: 1 },
            FusedEvent { h: 10, w: 20, t_avg: 1.0, p_acc: -3, c: 5 },
            FusedEvent { h: 0, w: 0, t_avg: 2.0, p_acc: 1, c: 1 },
        ];
        let batch = sample_and_normalize(&fused, 3, &geom(), 8, 0, NormalizeOptions::default()).unwrap();
        let p = batch.events.iter().find(|e| e.h == 10).unwrap();
        assert!((p.x1 - 0.10).abs() < 1e-15);
        assert!((p.x2 - 0.20).abs() < 1e-15);
        assert!((p.x3 - 0.5).abs() < 1e-15);
        assert_eq!((p.p_acc, p.c), (-3.0, 5.0));
    }

    #[test]
    fn h_by_height_switch() {
        let g = CameraGeometry::new(50, 100, 0.2).unwrap();
        let fused = [FusedEvent { h: 10, w: 10, t_avg: 0.0, p_acc: 1, c: 1 }];
        let opts = NormalizeOptions { normalize_h_by_height: true };
        let batch = sample_and_normalize(&fused, 1, &g, 8, 0, opts).unwrap();
        assert!((batch.events[0].x1 - 0.2).abs() < 1e-15);
        assert_eq!(batch.events[0].x3, 0.0);
    }

    #[test]
    fn sampling_is_seeded_and_sized() {
        let fused: Vec<FusedEvent> =
            (0..30).map(|i| FusedEvent { h: i, w: 1, t_avg: f64::from(i), p_acc: 1, c: 1 }).collect();
        let a = sample_and_normalize(&fused, 64, &geom(), 8, 11, NormalizeOptions::default()).unwrap();
        let b = sample_and_normalize(&fused, 64, &geom(), 8, 11, NormalizeOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        // undersized sets keep every candidate at least once
        for h in 0..30u16 {
            assert!(a.events.iter().any(|e| e.h == h));
        }
        let c = sample_and_normalize(&fused, 10, &geom(), 8, 11, NormalizeOptions::default()).unwrap();
        assert_eq!(c.len(), 10);
        assert!(matches!(
            sample_and_normalize(&fused, 0, &geom(), 8, 11, NormalizeOptions::default()),
            Err(Error::Parameter(_))
        ));
    }

    fn arb_events() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec((0u16..8, 0u16..8, 0.0f64..10.0, prop::bool::ANY), 1..300)
            .prop_map(|v| v.into_iter().map(|(h, w, t, pos)| Event::new(h, w, t, if pos { 1 } else { -1 })).collect())
    }

    proptest! {
        #[test]
        fn fusion_conserves_mass_and_bounds_polarity(events in arb_events(), segments in 1usize..32) {
            let fused = fuse_stream(&events, segments).unwrap();
            let total: u64 = fused.iter().map(|f| u64::from(f.c)).sum();
            prop_assert_eq!(total, events.len() as u64);
            let (lo, hi) = time_span(&events).unwrap();
            for f in &fused {
                prop_assert!(f.p_acc.unsigned_abs() <= u64::from(f.c));
                prop_assert!(f.c >= 1);
                prop_assert!(f.t_avg >= lo - 1e-12 && f.t_avg <= hi + 1e-12);
            }
        }

        #[test]
        fn fusion_is_permutation_invariant(events in arb_events(), segments in 1usize..16, seed in any::<u64>()) {
            let mut shuffled = events.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut ChaCha8Rng::seed_from_u64(seed));
            let a = fuse_stream(&events, segments).unwrap();
            let b = fuse_stream(&shuffled, segments).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert_eq!((x.h, x.w, x.p_acc, x.c), (y.h, y.w, y.p_acc, y.c));
                prop_assert!((x.t_avg - y.t_avg).abs() <= 1e-12 * x.t_avg.abs().max(1e-300));
            }
        }

        #[test]
        fn normalized_coordinates_in_range(events in arb_events(), m in 1usize..100) {
            let g = CameraGeometry::new(8, 8, 0.1).unwrap();
            let fused = fuse_stream(&events, 4).unwrap();
            let batch = sample_and_normalize(&fused, m, &g, 4, 1, NormalizeOptions::default()).unwrap();
            prop_assert_eq!(batch.len(), m);
            for e in &batch.events {
                prop_assert!(e.x1 >= 0.0 && e.x1 < 1.0);
                prop_assert!(e.x2 >= 0.0 && e.x2 < 1.0);
                prop_assert!((0.0..=1.0).contains(&e.x3));
            }
        }
    }
}
