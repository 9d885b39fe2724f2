use ecgres_core::dataset::{BeatSource, Interval, UnitKind};
use ecgres_core::readout::{
    calibrate_thresholds, filter_spikes, n_samples, solve_normal_equations, trigger, FilterKernel, GramAccumulator,
    ScoreTrace, StateFilter, N_UNITS,
};
use ecgres_core::simulator::SpikeRecord;
use ecgres_core::wfdb::BeatLabel;
use ecgres_testkit::oracle::{convolve_spikes, exhaustive_threshold, ridge_objective, ScoredSpan, Span};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const PERIOD: f64 = 1.0 / 360.0;

fn random_spikes(rng: &mut ChaCha8Rng, n_neurons: u32, count: usize, duration: f64) -> Vec<(f64, u32)> {
    let mut s: Vec<(f64, u32)> = (0..count)
        .map(|i| {
            // Every fifth spike sits exactly on a sample time.
            let t = if i % 5 == 0 {
                rng.random_range(0..n_samples(duration, PERIOD)) as f64 * PERIOD
            } else {
                rng.random_range(0.0..duration)
            };
            (t, rng.random_range(0..n_neurons))
        })
        .collect();
    s.sort_by(|a, b| a.0.total_cmp(&b.0));
    s
}

fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    got.iter()
        .zip(want)
        .map(|(g, w)| if *w == 0.0 { g.abs() } else { (g - w).abs() / w.abs() })
        .fold(0.0, f64::max)
}

#[test]
fn recursive_filter_matches_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let duration = 4.0;
    let spikes = random_spikes(&mut rng, 12, 1500, duration);
    let rows = n_samples(duration, PERIOD);
    let oracle = convolve_spikes(&spikes, 12, 0.175, PERIOD, rows);
    let record = SpikeRecord { spikes: spikes.clone(), duration, n_neurons: 12 };
    let x = filter_spikes(&record, FilterKernel { tau_out: 0.175 }, PERIOD);
    assert_eq!(x.n_rows(), rows);
    let mut worst = 0.0f64;
    for (k, want) in oracle.iter().enumerate() {
        let got: Vec<f64> = x.x.row(k).iter().copied().collect();
        worst = worst.max(max_relative_error(&got, want));
    }
    assert!(worst < 1e-9, "relative error {worst:e}");
}

#[test]
fn streaming_filter_equals_in_memory() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let spikes = random_spikes(&mut rng, 5, 300, 2.0);
    let record = SpikeRecord { spikes: spikes.clone(), duration: 2.0, n_neurons: 5 };
    let x = filter_spikes(&record, FilterKernel::default(), PERIOD);
    let mut f = StateFilter::new(5, FilterKernel::default(), PERIOD);
    let mut k = 0;
    f.run(spikes.into_iter().map(Ok::<_, ()>), 2.0, |_, row| {
        assert_eq!(row, x.x.row(k).iter().copied().collect::<Vec<_>>().as_slice());
        k += 1;
        Ok(())
    })
    .unwrap();
    assert_eq!(k, x.n_rows());
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let g = Normal::new(0.0, 1.0).unwrap();
    (0..rows).map(|_| (0..cols).map(|_| g.sample(rng)).collect()).collect()
}

fn accumulate(x: &[Vec<f64>], y: &[Vec<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut acc = GramAccumulator::new(x[0].len(), y[0].len());
    for (xr, yr) in x.iter().zip(y) {
        acc.push(xr, yr);
    }
    acc.finish()
}

fn columns(w: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..w.ncols()).map(|c| w.column(c).iter().copied().collect()).collect()
}

#[test]
fn planted_weights_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (t, n) = (1500, 40);
    let x = gaussian_matrix(&mut rng, t, n);
    let planted = gaussian_matrix(&mut rng, N_UNITS, n);
    let y: Vec<Vec<f64>> = x
        .iter()
        .map(|r| planted.iter().map(|w| r.iter().zip(w).map(|(a, b)| a * b).sum()).collect())
        .collect();
    let (xtx, xty) = accumulate(&x, &y);
    let w = columns(&solve_normal_equations(&xtx, &xty, 0.0).unwrap());
    let worst = w.iter().flatten().zip(planted.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "recovery error {worst:e}");
}

#[test]
fn ridge_solution_beats_every_probe() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (t, n) = (400, 25);
    let x = gaussian_matrix(&mut rng, t, n);
    let y = gaussian_matrix(&mut rng, t, N_UNITS);
    let ridge = 3.0;
    let (xtx, xty) = accumulate(&x, &y);
    let w = columns(&solve_normal_equations(&xtx, &xty, ridge).unwrap());
    let best = ridge_objective(&x, &y, &w, ridge);
    let g = Normal::new(0.0, 1.0).unwrap();
    for probe in 0..300 {
        let scale = 10f64.powf(-4.0 + 4.0 * (probe as f64 / 300.0));
        let moved: Vec<Vec<f64>> = w.iter().map(|c| c.iter().map(|v| v + scale * g.sample(&mut rng)).collect()).collect();
        let j = ridge_objective(&x, &y, &moved, ridge);
        assert!(j >= best * (1.0 - 1e-12), "probe {probe} at scale {scale:e}: {j} < {best}");
    }
}

#[test]
fn unregularized_residual_is_orthogonal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (t, n) = (600, 30);
    let x = gaussian_matrix(&mut rng, t, n);
    let y = gaussian_matrix(&mut rng, t, 1);
    let (xtx, xty) = accumulate(&x, &y);
    let w = columns(&solve_normal_equations(&xtx, &xty, 0.0).unwrap());
    let mut xtr = vec![0.0; n];
    for (xr, yr) in x.iter().zip(&y) {
        let r = xr.iter().zip(&w[0]).map(|(a, b)| a * b).sum::<f64>() - yr[0];
        for j in 0..n {
            xtr[j] += xr[j] * r;
        }
    }
    let fro = |m: &[Vec<f64>]| m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let bound = 1e-6 * fro(&x) * fro(&y);
    assert!(xtr.iter().all(|v| v.abs() < bound));
}

/// Alternating normal beats and anomalous segments of every class on a
/// 360 Hz grid; scores are on the same grid.
fn scenario(rng: &mut ChaCha8Rng, n_units: usize) -> (Vec<Interval>, Vec<ScoredSpan>, usize) {
    let mut ivs = Vec::new();
    let mut spans = Vec::new();
    let mut at = 0usize;
    for id in 0..n_units {
        let (label, kind, len) = if id % 3 == 2 {
            let class = rng.random_range(0..N_UNITS);
            (BeatLabel::ANOMALIES[class], UnitKind::Segment, rng.random_range(900..2500))
        } else {
            (BeatLabel::Normal, UnitKind::Beat, rng.random_range(200..400))
        };
        ivs.push(Interval {
            start: at,
            end: at + len,
            label,
            unit_kind: kind,
            unit_id: id,
            sources: vec![BeatSource { record: "x".into(), start: at, end: at + len }],
        });
        let span = match label.anomaly_index() {
            Some(c) => Span::Segment(c),
            None => Span::Normal,
        };
        spans.push(ScoredSpan { start: at, end: at + len, kind: span });
        at += len;
    }
    (ivs, spans, at)
}

/// Overlapping Gaussian scores: anomalous spans of a unit's class score
/// higher on average.
fn overlapping_scores(rng: &mut ChaCha8Rng, spans: &[ScoredSpan], len: usize, rounding: Option<f64>) -> ScoreTrace {
    let g = Normal::new(0.0, 1.0).unwrap();
    let mut scores = vec![[0.0; N_UNITS]; len];
    for sp in spans {
        for s in &mut scores[sp.start..sp.end] {
            for (u, v) in s.iter_mut().enumerate() {
                let shift = if sp.kind == Span::Segment(u) { 1.0 } else { 0.0 };
                let x = shift + 0.6 * g.sample(rng);
                *v = rounding.map_or(x, |r| (x / r).round() * r);
            }
        }
    }
    ScoreTrace { sample_period: PERIOD, scores }
}

fn assert_matches_exhaustive(trace: &ScoreTrace, ivs: &[Interval], spans: &[ScoredSpan], lambda: f64) {
    let got = calibrate_thresholds(trace, ivs, 360.0, lambda).unwrap();
    for (u, c) in got.iter().enumerate() {
        let unit: Vec<f64> = trace.unit(u).collect();
        let (theta, cost) = exhaustive_threshold(&unit, spans, u, lambda);
        assert_eq!((c.theta, c.cost), (theta, cost), "unit {u}");
    }
}

#[test]
fn calibration_equals_exhaustive_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (ivs, spans, len) = scenario(&mut rng, 60);
    let trace = overlapping_scores(&mut rng, &spans, len, None);
    for lambda in [0.25, 1.0, 4.0] {
        assert_matches_exhaustive(&trace, &ivs, &spans, lambda);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn calibration_equals_exhaustive_with_ties(seed in any::<u64>(), lambda in 0.1f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (ivs, spans, len) = scenario(&mut rng, 15);
        // Coarse rounding makes many scores equal.
        let trace = overlapping_scores(&mut rng, &spans, len, Some(0.25));
        assert_matches_exhaustive(&trace, &ivs, &spans, lambda);
    }

    #[test]
    fn raising_a_threshold_never_creates_a_trigger(
        scores in prop::array::uniform5(-3.0f64..3.0),
        thresholds in prop::array::uniform5(-3.0f64..3.0),
        unit in 0usize..N_UNITS,
        raise in 0.0f64..2.0,
    ) {
        let mut higher = thresholds;
        higher[unit] += raise;
        prop_assert!(!trigger(&scores, &higher) || trigger(&scores, &thresholds));
    }

    #[test]
    fn filter_matches_convolution_on_random_trains(seed in any::<u64>(), tau in 0.02f64..0.5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spikes = random_spikes(&mut rng, 4, 120, 1.0);
        let rows = n_samples(1.0, PERIOD);
        let oracle = convolve_spikes(&spikes, 4, tau, PERIOD, rows);
        let x = filter_spikes(&SpikeRecord { spikes, duration: 1.0, n_neurons: 4 }, FilterKernel { tau_out: tau }, PERIOD);
        for (k, want) in oracle.iter().enumerate() {
            let got: Vec<f64> = x.x.row(k).iter().copied().collect();
            prop_assert!(max_relative_error(&got, want) < 1e-9);
        }
    }
}
