use proptest::prelude::*;

use oscd_core::calibrate::{
    build_grid, check_invariants, expand_strategies, grid_for_method, quantile_type7, select, Objective,
    QuantileSource, ScanInputs, StrategyFamily,
};
use oscd_core::communities::{apportion, generate_suite, round_half_even, CommunitySpec, CommunityType, Pool, UnknownRatio};
use oscd_core::community_metrics::{oscd, oscd_directional, AbundanceVector, MetricOptions};
use oscd_core::ingest::{parse_samples, ManifestSchema, Split};
use oscd_core::robustness::{midranks, paired_t_test, spearman};
use oscd_core::sample_metrics::{auroc, confusion_at, BinaryScoredSet, SortedScores};
use oscd_core::scoring::ScoreTable;
use oscd_core::synthetic::{generate, mismatch_scenario};

fn simplex(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, len).prop_filter_map("non-zero mass", |v| {
        let s: f64 = v.iter().sum();
        (s > 1e-9).then(|| v.iter().map(|x| x / s).collect())
    })
}

fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..20).prop_flat_map(|n| (simplex(n..=n), simplex(n..=n)))
}

fn labelled(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((-5i32..5, any::<bool>()), 2..max).prop_map(|v| {
        let s: Vec<f64> = v.iter().map(|(x, _)| *x as f64 * 0.5).collect();
        let mut u: Vec<bool> = v.iter().map(|(_, b)| *b).collect();
        u[0] = true;
        u[1] = false;
        (s, u)
    })
}

proptest! {
    #[test]
    fn oscd_is_a_bounded_symmetric_distance((p, q) in pair()) {
        let p = AbundanceVector::new(p).unwrap();
        let q = AbundanceVector::new(q).unwrap();
        let d = oscd(&p, &q).unwrap();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&d));
        prop_assert!((d - oscd(&q, &p).unwrap()).abs() < 1e-15);
        prop_assert!(oscd(&p, &p).unwrap() == 0.0);
        let (plus, minus) = oscd_directional(&p, &q).unwrap();
        prop_assert!((d - plus.max(minus)).abs() < 1e-12);
        let (rp, rm) = oscd_directional(&q, &p).unwrap();
        prop_assert!((plus - rm).abs() < 1e-15 && (minus - rp).abs() < 1e-15);
    }

    #[test]
    fn apportion_is_exact_and_within_one_of_quota(total in 0usize..2000, w in prop::collection::vec(0.0..10.0f64, 1..12)) {
        prop_assume!(w.iter().sum::<f64>() > 0.0);
        let slots = apportion(total, &w);
        prop_assert_eq!(slots.iter().sum::<usize>(), total);
        let sum: f64 = w.iter().sum();
        for (s, wi) in slots.iter().zip(&w) {
            let quota = total as f64 * wi / sum;
            prop_assert!((*s as f64 - quota).abs() < 1.0 + 1e-9);
            if *wi == 0.0 {
                prop_assert_eq!(*s, 0);
            }
        }
    }

    #[test]
    fn half_even_rounding(n in 0u32..100_000, frac in prop::sample::select(vec![0.0, 0.25, 0.5, 0.75])) {
        let x = n as f64 + frac;
        let r = round_half_even(x) as u32;
        let want = if frac == 0.5 { if n % 2 == 0 { n } else { n + 1 } } else { x.round() as u32 };
        prop_assert_eq!(r, want);
    }

    #[test]
    fn grid_is_strictly_ascending_and_covers_extrema(v in prop::collection::vec(-100.0..100.0f64, 1..400), n in 2usize..500) {
        let g = build_grid(&v, n).unwrap();
        prop_assert!(g.windows(2).all(|w| w[0] < w[1]));
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(g[0], lo);
        prop_assert_eq!(*g.last().unwrap(), hi);
    }

    #[test]
    fn type7_quantile_is_monotone(mut v in prop::collection::vec(-10.0..10.0f64, 1..100), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        v.sort_by(f64::total_cmp);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (ql, qh) = (quantile_type7(&v, lo), quantile_type7(&v, hi));
        prop_assert!(ql <= qh);
        prop_assert!(v[0] <= ql && qh <= v[v.len() - 1]);
    }

    #[test]
    fn confusion_is_monotone_in_threshold((s, u) in labelled(200), t1 in -3.0..3.0f64, t2 in -3.0..3.0f64) {
        let b = BinaryScoredSet::new(s, u).unwrap();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let (a, c) = (confusion_at(&b, lo), confusion_at(&b, hi));
        prop_assert!(a.known_recall <= c.known_recall);
        prop_assert!(a.unknown_recall >= c.unknown_recall);
        let sorted = SortedScores::new(&b);
        prop_assert_eq!(sorted.confusion_at(lo), a);
        prop_assert_eq!(a.total(), b.scores.len());
    }

    #[test]
    fn auroc_flips_under_negation((s, u) in labelled(200)) {
        let b = BinaryScoredSet::new(s.clone(), u.clone()).unwrap();
        let neg = BinaryScoredSet::new(s.iter().map(|x| -x).collect(), u).unwrap();
        let sum = auroc(&b).unwrap() + auroc(&neg).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn midranks_preserve_the_rank_sum(v in prop::collection::vec(-5i32..5, 1..100)) {
        let x: Vec<f64> = v.iter().map(|&i| i as f64).collect();
        let r = midranks(&x);
        let n = x.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] < x[j] {
                    prop_assert!(r[i] < r[j]);
                } else if x[i] == x[j] {
                    prop_assert_eq!(r[i], r[j]);
                }
            }
        }
    }

    #[test]
    fn spearman_ignores_monotone_warps(x in prop::collection::vec(-10.0..10.0f64, 3..50), y in prop::collection::vec(-10.0..10.0f64, 3..50)) {
        let n = x.len().min(y.len());
        let (x, y) = (&x[..n], &y[..n]);
        if let Ok(r) = spearman(x, y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
            let warped: Vec<f64> = x.iter().map(|v| v.powi(3) + 2.0 * v).collect();
            prop_assert!((spearman(&warped, y).unwrap() - r).abs() < 1e-12);
        }
    }

    #[test]
    fn paired_t_is_antisymmetric(a in prop::collection::vec(0.0..1.0f64, 2..30), shift in -0.2..0.2f64) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + shift + 0.01 * (i as f64).sin()).collect();
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        prop_assert!(ab.p > 0.0 && ab.p <= 1.0);
        prop_assert!((ab.p - ba.p).abs() < 1e-12);
        prop_assert!((ab.t + ba.t).abs() < 1e-9 * ab.t.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn manifests_and_score_tables_roundtrip(seed in any::<u64>(), n in 20usize..120, features in any::<bool>()) {
        let mut scn = mismatch_scenario();
        scn.seed = seed;
        scn.emit_features = features;
        let (set, table) = generate(&scn, n).unwrap();
        let again = parse_samples(&set.to_manifest_string(), &ManifestSchema::default()).unwrap();
        prop_assert_eq!(&again, &set);
        let t2 = ScoreTable::parse_tsv(&table.to_tsv_string()).unwrap();
        prop_assert_eq!(t2, table);
    }

    #[test]
    fn scans_satisfy_structural_invariants(seed in any::<u64>(), ratio in 0.05..0.6f64, size in 20usize..120) {
        let mut scn = mismatch_scenario();
        scn.seed = seed;
        let (set, table) = generate(&scn, 400).unwrap();
        let specs = |split| {
            [CommunityType::Balanced, CommunityType::LongTail, CommunityType::Empirical]
                .into_iter()
                .map(|t| {
                    let r = if t == CommunityType::Empirical { UnknownRatio::EMPIRICAL } else { UnknownRatio::Fixed(ratio) };
                    CommunitySpec { size, replicates: 3, ..CommunitySpec::new(t, r, split) }
                })
                .collect::<Vec<_>>()
        };
        let val = generate_suite(&Pool::build(&set, Split::Val).unwrap(), &specs(Split::Val), &[seed]).unwrap();
        let test = generate_suite(&Pool::build(&set, Split::Test).unwrap(), &specs(Split::Test), &[seed]).unwrap();
        let inputs = ScanInputs::new(&table, &set, "energy", &val, &test, MetricOptions::default()).unwrap();
        let grid = grid_for_method(&table, "energy", QuantileSource::Pooled, 101).unwrap();
        let scan = inputs.scan(&grid).unwrap();
        let results: Vec<_> = expand_strategies(&scan, &StrategyFamily::ALL, &Objective::ALL)
            .into_iter()
            .filter_map(|s| select(&scan, s).ok())
            .collect();
        prop_assert!(check_invariants(&scan, &results).is_ok());
        prop_assert_eq!(inputs.closed_set_baseline().unwrap(), scan.baseline.clone());
        prop_assert_eq!(&scan.rows.last().unwrap().test_mean, &scan.baseline.test_mean);
    }
}
