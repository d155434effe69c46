use mpple::{analyze, cif_influence, predict_cif, Dataset, Exec, SubjectRecord, TermGrammar};
use proptest::prelude::*;

fn record() -> impl Strategy<Value = SubjectRecord> {
    (1u32..40, -1.0f64..1.0, 0u8..5).prop_map(|(t, z, kind)| {
        // integer-valued times give plenty of ties
        let t = f64::from(t) / 10.0;
        match kind {
            0 => SubjectRecord::censored(t, vec![z], vec![]),
            1 => SubjectRecord::failure(t, None, vec![z], vec![]),
            2 => SubjectRecord::failure(t, Some(1), vec![z], vec![]),
            _ => SubjectRecord::failure(t, Some(0), vec![z], vec![]),
        }
    })
}

fn dataset() -> impl Strategy<Value = Dataset> {
    prop::collection::vec(record(), 25..70)
        .prop_map(|recs| Dataset::new(recs, 2, vec!["z".into()], vec![], None).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn influence_and_cif_invariants(ds in dataset(), z0 in -1.0f64..1.0) {
        let g = TermGrammar::parse(&["1", "z"], ds.covariate_names(), &[]).unwrap();
        let an = analyze(&ds, &g, Exec::Sequential);
        prop_assume!(an.is_ok());
        let an = an.unwrap();
        let n = ds.len() as f64;
        for j in 0..2 {
            prop_assert!(an.influence.beta.total[j].column(0).sum().abs() < 1e-8 * n);
            prop_assert!(an.beta_se(j)[0].is_finite());
        }
        let curves = predict_cif(&an.fit, &[z0]).unwrap();
        let grid = &curves[0].grid;
        let total_cumhaz = |t: f64| -> f64 {
            (0..2).map(|j| mpple::cumhaz_at_covariate(&an.fit, j, &[z0]).unwrap().eval(t)).sum()
        };
        // F_1 + F_2 = sum over jumps of exp(-Lambda(t-)) dLambda(t), which
        // dominates 1 - exp(-Lambda(t)) (and may exceed 1 on a large last jump)
        let mut expected = 0.0;
        let mut before = 0.0f64;
        for m in 0..grid.len() {
            let total = curves[0].values[m] + curves[1].values[m];
            let now = total_cumhaz(grid[m]);
            expected += (-before).exp() * (now - before);
            before = now;
            prop_assert!(m == 0 || curves.iter().all(|c| c.values[m] >= c.values[m - 1]));
            prop_assert!((total - expected).abs() < 1e-10);
            prop_assert!(total >= 1.0 - (-now).exp() - 1e-12);
        }
        let ci = cif_influence(&an.influence, &[z0]).unwrap();
        prop_assert!(ci.max_abs_column_sum() < 1e-8 * n);
    }

    #[test]
    fn execution_mode_does_not_change_results(ds in dataset()) {
        let g = TermGrammar::parse(&["1"], ds.covariate_names(), &[]).unwrap();
        let a = analyze(&ds, &g, Exec::Sequential);
        let b = analyze(&ds, &g, Exec::Parallel);
        prop_assert_eq!(a.is_ok(), b.is_ok());
        if let (Ok(a), Ok(b)) = (a, b) {
            for j in 0..2 {
                prop_assert_eq!(&a.fit.cause(j).beta, &b.fit.cause(j).beta);
                prop_assert_eq!(a.beta_se(j), b.beta_se(j));
            }
        }
    }
}
