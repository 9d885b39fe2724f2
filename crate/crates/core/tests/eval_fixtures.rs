use ecgres_core::dataset::{BeatSource, Interval, UnitKind};
use ecgres_core::eval::{compute_metrics, count_outcomes, metrics_table, ConfusionCounts, Counts};
use ecgres_core::readout::{ScoreTrace, N_UNITS};
use ecgres_core::wfdb::BeatLabel;
use ecgres_testkit::oracle::{tally, ScoredSpan, Span};
use proptest::prelude::*;

const THETA: f64 = 1.0;

fn interval(id: usize, label: BeatLabel) -> Interval {
    let kind = if label == BeatLabel::Normal { UnitKind::Beat } else { UnitKind::Segment };
    Interval {
        start: 3 * id,
        end: 3 * id + 3,
        label,
        unit_kind: kind,
        unit_id: id,
        sources: vec![BeatSource { record: "f".into(), start: 3 * id, end: 3 * id + 3 }],
    }
}

/// Ten intervals of three samples each (1 Hz grid, one score per sample).
/// `hits` lists (interval, sample offset, unit, score).
fn fixture(hits: &[(usize, usize, usize, f64)]) -> (Vec<Interval>, ScoreTrace) {
    use BeatLabel::*;
    let labels = [Normal, Normal, Lbbb, Normal, Rbbb, Pvc, Normal, Paced, Apb, Normal];
    let ivs = labels.iter().enumerate().map(|(k, &l)| interval(k, l)).collect();
    let mut scores = vec![[0.0; N_UNITS]; 30];
    for &(iv, off, unit, s) in hits {
        scores[3 * iv + off][unit] = s;
    }
    (ivs, ScoreTrace { sample_period: 1.0, scores })
}

#[test]
fn hand_tallied_scenario() {
    let (ivs, trace) = fixture(&[
        (1, 2, 2, 1.5),  // normal beat flagged by the PVC unit
        (2, 0, 0, 2.0),  // LBBB caught by its own unit
        (4, 1, 3, 1.1),  // RBBB caught by the paced unit
        (6, 0, 0, 1.2),  // normal beat flagged twice: still one FP
        (6, 2, 4, 3.0),
        (7, 1, 3, THETA), // paced segment only reaches the threshold
        (8, 2, 4, 1.01), // APB caught on the last sample
        (9, 0, 1, THETA), // equality is not an exceedance
    ]);
    let c = count_outcomes(&trace, &[THETA; N_UNITS], &ivs, 1.0).unwrap();
    // Segments 2, 4, 8 detected; 5, 7 missed. Beats 1, 6 flagged; 0, 3, 9 clean.
    assert_eq!(c.overall, Counts { tp: 3, fn_: 2, fp: 2, tn: 3 });
    let expected = [
        Counts { tp: 1, fn_: 0, fp: 1, tn: 4 },
        Counts { tp: 1, fn_: 0, fp: 0, tn: 5 },
        Counts { tp: 0, fn_: 1, fp: 1, tn: 4 },
        Counts { tp: 0, fn_: 1, fp: 0, tn: 5 },
        Counts { tp: 1, fn_: 0, fp: 1, tn: 4 },
    ];
    assert_eq!(c.per_anomaly, expected);
    let m = compute_metrics(&c.overall, 3.0);
    assert_eq!(m.sensitivity, Some(0.6));
    assert_eq!(m.specificity, Some(0.6));
    assert_eq!(m.ppv, Some(0.6));
    assert_eq!(m.npv, Some(0.6));
    assert_eq!(m.mtbfp_s, Some(1.5));
}

#[test]
fn silent_and_saturated() {
    let (ivs, silent) = fixture(&[]);
    let c = count_outcomes(&silent, &[THETA; N_UNITS], &ivs, 1.0).unwrap();
    assert_eq!(c.overall, Counts { tp: 0, fn_: 5, fp: 0, tn: 5 });
    let loud = ScoreTrace { sample_period: 1.0, scores: vec![[5.0; N_UNITS]; 30] };
    let c = count_outcomes(&loud, &[THETA; N_UNITS], &ivs, 1.0).unwrap();
    assert_eq!(c.overall, Counts { tp: 5, fn_: 0, fp: 5, tn: 0 });
    let m = compute_metrics(&c.overall, 10.0);
    assert_eq!((m.specificity, m.npv, m.mtbfp_s), (Some(0.0), None, Some(2.0)));
}

/// Counts implied by the reference test-set table: segments per class from
/// the segment table, normal beats from the beat table, false positives from
/// the specificity and MTBFP columns, and the normal-input duration from
/// the single APB false positive.
fn reference_counts() -> (ConfusionCounts, f64) {
    let normal_beats = 1569;
    let per = |tp, fn_, fp| Counts { tp, fn_, fp, tn: normal_beats - fp };
    let c = ConfusionCounts {
        overall: per(70, 6, 37),
        per_anomaly: [per(15, 0, 2), per(15, 2, 10), per(10, 4, 12), per(16, 0, 12), per(14, 0, 1)],
    };
    (c, 1165.6)
}

/// `value` agrees with a table entry printed with `decimals` places.
fn agrees(value: Option<f64>, printed: f64, decimals: i32, scale: f64) -> bool {
    value.is_some_and(|v| (v * scale - printed).abs() <= 0.5 * 10f64.powi(-decimals) + 1e-9)
}

#[test]
fn reference_table_from_implied_counts() {
    let (c, normal_s) = reference_counts();
    // (sens, spec, ppv, npv, mtbfp) with printed decimals.
    let rows: [[(f64, i32); 5]; 6] = [
        [(100.0, 1), (99.87, 2), (88.24, 2), (100.0, 1), (582.8, 1)],
        [(88.24, 2), (99.36, 2), (60.0, 1), (99.87, 2), (116.56, 2)],
        [(71.43, 2), (99.24, 2), (45.45, 2), (99.74, 2), (97.1, 1)],
        [(100.0, 1), (99.24, 2), (57.14, 2), (100.0, 1), (97.1, 1)],
        [(100.0, 1), (99.94, 2), (93.33, 2), (100.0, 1), (1165.6, 1)],
        [(92.11, 2), (97.6, 1), (65.42, 2), (99.61, 2), (31.5, 1)],
    ];
    let table = metrics_table(&c, normal_s);
    for (row, want) in table.rows.iter().zip(rows) {
        let m = &row.metrics;
        let got = [m.sensitivity, m.specificity, m.ppv, m.npv];
        for (k, (g, (p, d))) in got.iter().zip(want).enumerate() {
            assert!(agrees(*g, p, d, 100.0), "{} column {k}: {g:?} vs {p}", row.label);
        }
        assert!(agrees(m.mtbfp_s, want[4].0, want[4].1, 1.0), "{} MTBFP {:?}", row.label, m.mtbfp_s);
    }
    let text = table.to_string();
    assert!(text.lines().any(|l| l.starts_with("OVERALL") && l.contains("92.11") && l.contains("65.42")));
}

#[test]
fn per_class_segments_add_up() {
    let (c, _) = reference_counts();
    let total: usize = c.per_anomaly.iter().map(Counts::segments).sum();
    assert_eq!(total, c.overall.segments());
    assert_eq!(total, 76);
}

fn spans_of(ivs: &[Interval]) -> Vec<ScoredSpan> {
    ivs.iter()
        .map(|iv| ScoredSpan {
            start: iv.start,
            end: iv.end,
            kind: match (iv.unit_kind, iv.label.anomaly_index()) {
                (UnitKind::Segment, Some(c)) => Span::Segment(c),
                (_, None) => Span::Normal,
                _ => Span::Other,
            },
        })
        .collect()
}

proptest! {
    #[test]
    fn counts_match_direct_tally(scores in prop::collection::vec(prop::array::uniform5(0.0f64..2.0), 30), theta in 0.5f64..1.5) {
        let (ivs, _) = fixture(&[]);
        let trace = ScoreTrace { sample_period: 1.0, scores: scores.clone() };
        let c = count_outcomes(&trace, &[theta; N_UNITS], &ivs, 1.0).unwrap();
        let fired: Vec<bool> = ivs.iter().map(|iv| scores[iv.start..iv.end].iter().flatten().any(|&s| s > theta)).collect();
        let (tp, fn_, fp, tn) = tally(&fired, &spans_of(&ivs));
        prop_assert_eq!(c.overall, Counts { tp, fn_, fp, tn });
    }

    #[test]
    fn raising_thresholds_is_monotone(
        scores in prop::collection::vec(prop::array::uniform5(0.0f64..2.0), 30),
        theta in prop::array::uniform5(0.0f64..2.0),
        unit in 0usize..N_UNITS,
        raise in 0.0f64..1.0,
    ) {
        let (ivs, _) = fixture(&[]);
        let trace = ScoreTrace { sample_period: 1.0, scores };
        let mut higher = theta;
        higher[unit] += raise;
        let lo = count_outcomes(&trace, &theta, &ivs, 1.0).unwrap().overall;
        let hi = count_outcomes(&trace, &higher, &ivs, 1.0).unwrap().overall;
        prop_assert!(hi.fp <= lo.fp && hi.tp <= lo.tp);
        prop_assert_eq!(hi.segments(), lo.segments());
        prop_assert_eq!(hi.normal_beats(), lo.normal_beats());
    }

    #[test]
    fn fractions_in_unit_interval(tp in 0usize..50, fn_ in 0usize..50, fp in 0usize..50, tn in 0usize..50) {
        let m = compute_metrics(&Counts { tp, fn_, fp, tn }, 100.0);
        for v in [m.sensitivity, m.specificity, m.ppv, m.npv].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!(m.mtbfp() > 0.0);
    }
}
