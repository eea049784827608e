use impactor_core::bsts::PredictiveDraws;
use impactor_core::evaluation::{mape, select_best_model, Criterion, EvalRecord, SettingId, Split};
use impactor_core::impact::{cumulative_impact, pointwise_impact, Band};
use impactor_core::matching::{best_match, fill_gaps, pearson, Strategy as Covariate};
use impactor_core::panel::{BusinessMeta, Category, Panel, PanelRole, Region, StudyWindows, VisitSeries};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

fn paired(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-100.0f64..100.0, n),
            prop::collection::vec(-100.0f64..100.0, n),
        )
    })
}

proptest! {
    #[test]
    fn pearson_is_symmetric_and_bounded((a, b) in paired(3..30)) {
        let (Ok(ab), Ok(ba)) = (pearson(&a, &b), pearson(&b, &a)) else { return Ok(()) };
        prop_assert!(close(ab, ba, 1e-12));
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&ab));
    }

    #[test]
    fn pearson_is_affine_invariant((a, b) in paired(3..30), scale in 0.01f64..100.0, shift in -1e3f64..1e3) {
        let Ok(r) = pearson(&a, &b) else { return Ok(()) };
        let moved: Vec<f64> = a.iter().map(|v| v * scale + shift).collect();
        let flipped: Vec<f64> = a.iter().map(|v| -v * scale + shift).collect();
        prop_assert!(close(pearson(&moved, &b).unwrap(), r, 1e-8));
        prop_assert!(close(pearson(&flipped, &b).unwrap(), -r, 1e-8));
    }

    #[test]
    fn mape_is_scale_invariant((y, yhat) in paired(1..30), c in 0.01f64..100.0) {
        let y: Vec<Option<f64>> = y.into_iter().map(|v| (v.abs() > 1e-3).then_some(v)).collect();
        let yhat: Vec<Option<f64>> = yhat.into_iter().map(Some).collect();
        let Ok((m, excluded)) = mape(&y, &yhat) else { return Ok(()) };
        let ys: Vec<Option<f64>> = y.iter().map(|v| v.map(|v| v * c)).collect();
        let yh: Vec<Option<f64>> = yhat.iter().map(|v| v.map(|v| v * c)).collect();
        let (ms, es) = mape(&ys, &yh).unwrap();
        prop_assert!(close(m, ms, 1e-10));
        prop_assert_eq!(excluded, es);
        prop_assert!(m >= 0.0);
    }

    #[test]
    fn band_quantiles_are_ordered(draws in prop::collection::vec(-1e3f64..1e3, 1..200)) {
        let b = Band::of(&draws);
        prop_assert!(b.q025 <= b.q05 && b.q05 <= b.q50 && b.q50 <= b.q95 && b.q95 <= b.q975);
        let lo = draws.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = draws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= b.q025 && b.q975 <= hi && lo <= b.mean + 1e-9 && b.mean <= hi + 1e-9);
    }

    #[test]
    fn impact_is_homogeneous_in_scale(
        seed in 0u64..1000,
        c in 1u32..6,
        rows in 1usize..20,
        landfall in any::<bool>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = StudyWindows::new(5, 8, 16).unwrap();
        let values: Vec<Option<u32>> = (0..16).map(|_| (rng.random_range(0..5) > 0).then(|| rng.random_range(0..300))).collect();
        let pred: Vec<f64> = (0..rows * 11).map(|_| rng.random_range(0.0..300.0)).collect();
        let ybar = rng.random_range(1.0..200.0);
        let draws = |k: f64| PredictiveDraws { start: 5, horizon: 11, values: pred.iter().map(|v| v * k).collect() };
        let scaled = VisitSeries::new("e", values.iter().map(|v| v.map(|v| v * c)).collect());
        let a = pointwise_impact(&VisitSeries::new("e", values.clone()), &draws(1.0), ybar, &w, landfall).unwrap();
        let b = pointwise_impact(&scaled, &draws(f64::from(c)), ybar * f64::from(c), &w, landfall).unwrap();
        for (x, y) in a.draws.iter().zip(&b.draws) {
            match (x, y) {
                (Some(x), Some(y)) => for (p, q) in x.iter().zip(y) { prop_assert!(close(*p, *q, 1e-12)) },
                (None, None) => {}
                _ => prop_assert!(false, "presence differs"),
            }
        }
        if let Ok(cum) = cumulative_impact(&a) {
            let terminal: f64 = a.draws.iter().flatten().map(|d| d[0]).sum();
            prop_assert!(close(cum.running[cum.len() - 1], terminal, 1e-12));
        }
    }

    #[test]
    fn selection_ignores_record_order(values in prop::collection::vec(0.0f64..1.0, 12), rotate in 0usize..12) {
        let mut records = Vec::new();
        for (k, v) in values.iter().enumerate() {
            let strategy = Covariate::ALL[k % 3];
            for split in [Split::Train, Split::Test] {
                records.push(EvalRecord {
                    setting: SettingId::Setting1,
                    entity_id: format!("e{}", k / 3),
                    strategy,
                    split,
                    mape: if split == Split::Test { *v } else { 1.0 - v },
                    pearson_r: *v,
                    excluded_zero_days: 0,
                });
            }
        }
        let base = select_best_model(&records, Criterion::TestMape).unwrap();
        records.rotate_left(rotate);
        records.reverse();
        prop_assert_eq!(&select_best_model(&records, Criterion::TestMape).unwrap(), &base);
        let total: f64 = base.percentages().values().sum();
        prop_assert!(close(total, 100.0, 1e-12));
    }

    #[test]
    fn best_match_ignores_days_after_training(seed in 0u64..1000, noise in 0.0f64..500.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let w = StudyWindows::new(20, 25, 30).unwrap();
        let target = VisitSeries::new("t", (0..30).map(|_| Some(rng.random_range(50..150))).collect());
        let controls: Vec<Vec<Option<u32>>> =
            (0..4).map(|_| (0..30).map(|_| Some(rng.random_range(50..150))).collect()).collect();
        let panel = |series: &[Vec<Option<u32>>]| {
            let mut p = Panel::new(w, PanelRole::Control);
            for (i, v) in series.iter().enumerate() {
                let id = format!("c{i}");
                let meta = BusinessMeta {
                    entity_id: id.clone(),
                    category: Category::Hotels,
                    region: Region::Other("elsewhere".into()),
                    brand: None,
                    county_id: "x".into(),
                    damage_rate: None,
                };
                p.insert(VisitSeries::new(id, v.clone()), meta).unwrap();
            }
            p
        };
        let before = best_match(&target, &panel(&controls), Category::Hotels, &w).unwrap();
        let mut changed = controls.clone();
        for v in &mut changed {
            for t in 20..30 {
                v[t] = (rng.random::<f64>() > 0.3).then(|| (rng.random::<f64>() * noise) as u32);
            }
        }
        let after = best_match(&target, &panel(&changed), Category::Hotels, &w).unwrap();
        prop_assert_eq!(before.source, after.source);
        prop_assert_eq!(before.pearson_r, after.pearson_r);
    }

    #[test]
    fn fill_gaps_keeps_observed_days_and_stays_in_range(
        series in prop::collection::vec(prop::option::weighted(0.6, -50.0f64..50.0), 1..40),
    ) {
        let Ok(filled) = fill_gaps(&series) else {
            prop_assert!(series.iter().all(Option::is_none));
            return Ok(());
        };
        prop_assert_eq!(filled.len(), series.len());
        let present: Vec<f64> = series.iter().flatten().copied().collect();
        let lo = present.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = present.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (f, s) in filled.iter().zip(&series) {
            if let Some(v) = s {
                prop_assert_eq!(f, v);
            }
            prop_assert!(lo - 1e-9 <= *f && *f <= hi + 1e-9);
        }
    }
}
