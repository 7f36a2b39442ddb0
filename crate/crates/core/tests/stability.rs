use artdisp_core::grid::*;
use artdisp_core::stability::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn unloaded(case: &NetworkCase) -> NetworkCase {
    let mut c = case.clone();
    for b in &mut c.buses {
        b.p_load = 0.0;
        b.q_load = 0.0;
    }
    for g in &mut c.generators {
        g.p_gen = 0.0;
    }
    c
}

fn dense_blocks(case: &NetworkCase, part: &BusPartition) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let y = build_ybus(case).to_dense();
    let ll = DMatrix::from_fn(part.load_pos.len(), part.load_pos.len(), |r, c| {
        y[(part.load_pos[r], part.load_pos[c])]
    });
    let lg = DMatrix::from_fn(part.load_pos.len(), part.generator_pos.len(), |r, c| {
        y[(part.load_pos[r], part.generator_pos[c])]
    });
    (ll, lg)
}

#[test]
fn unloaded_networks_have_zero_indices() {
    for case in [bundled::ieee14(), bundled::ieee30(), bundled::ieee118()] {
        let case = unloaded(&case);
        let sol = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        assert!(sol.converged);
        let report = compute_l_index(&sol, &f_matrix_for_case(&case).unwrap(), &Thresholds::default()).unwrap();
        assert!(report.l_max <= 1e-9, "{}", report.l_max);
        assert!(report.l_sum <= 1e-9 * report.l_local.len() as f64);
        assert_eq!(report.state_class, StateClass::Normal);
    }
}

#[test]
fn f_solves_the_load_block_on_every_bundled_case() {
    for case in [bundled::ieee14(), bundled::ieee30(), bundled::ieee118()] {
        let f = f_matrix_for_case(&case).unwrap();
        let (ll, lg) = dense_blocks(&case, &f.partition);
        let residual = &ll * &f.entries + &lg;
        for r in 0..residual.nrows() {
            let row = residual.row(r).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(row < 1e-9, "row {r}: {row}");
        }
    }
}

#[test]
fn f_rows_sum_to_one_without_shunt_paths() {
    // With no charging, no shunts and nominal taps every Y row sums to zero,
    // so Y_LL·1 = −Y_LG·1 and F·1 = 1.
    let mut case = bundled::ieee14();
    for br in &mut case.branches {
        br.b_charging = 0.0;
        br.tap = 1.0;
        br.shift = 0.0;
    }
    for b in &mut case.buses {
        b.g_shunt = 0.0;
        b.b_shunt = 0.0;
    }
    let f = f_matrix_for_case(&case).unwrap();
    for r in 0..f.entries.nrows() {
        let s: Complex64 = f.entries.row(r).iter().sum();
        assert!((s - 1.0).norm() < 1e-6, "row {r}: {s}");
    }
}

#[test]
fn f_row_sums_follow_the_shunt_identity_on_ieee14() {
    // In general F·1 = 1 − Y_LL⁻¹·s_L, with s the Y row sums (shunts,
    // charging, off-nominal taps) at the load buses.
    let case = bundled::ieee14();
    let f = f_matrix_for_case(&case).unwrap();
    let y = build_ybus(&case).to_dense();
    let (ll, _) = dense_blocks(&case, &f.partition);
    let s_l = DMatrix::from_fn(f.partition.load_pos.len(), 1, |r, _| {
        y.row(f.partition.load_pos[r]).iter().sum::<Complex64>()
    });
    let correction = ll.lu().solve(&s_l).unwrap();
    for r in 0..f.entries.nrows() {
        let s: Complex64 = f.entries.row(r).iter().sum();
        assert!((s - (1.0 - correction[r])).norm() < 1e-9);
    }
}

#[test]
fn ieee14_partition_matches_the_generator_records() {
    let part = partition_buses(&bundled::ieee14()).unwrap();
    assert_eq!(part.generator_set, vec![1, 2, 3, 6, 8]);
    assert_eq!(part.load_set.len(), 9);
}

#[test]
fn ieee14_loadability_trace_rises() {
    let case = bundled::ieee14();
    let r = find_loadability_limit(&case, &vec![1.0; case.buses.len()], 1e-3, &ScanOptions::default()).unwrap();
    assert!(r.lambda_max > 1.0 && r.lambda_fail - r.lambda_max <= 1e-3);
    assert!(r.trace.windows(2).all(|w| w[1].1 > w[0].1));
    // The last converged point is strictly more stressed than the base.
    assert!(r.trace.last().unwrap().1 > r.trace[0].1);
}

fn thresholds() -> impl Strategy<Value = Thresholds> {
    (0.01f64..0.9, 0.01f64..0.5).prop_map(|(a, d)| Thresholds {
        alarm: a,
        emergency: a + d,
    })
}

proptest! {
    #[test]
    fn classification_is_monotone(t in thresholds(), a in 0.0f64..2.0, b in 0.0f64..2.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(classify_state(lo, &t).unwrap() <= classify_state(hi, &t).unwrap());
    }

    #[test]
    fn indices_match_a_dense_inverse(scale in 0.5f64..1.6) {
        let base = bundled::ieee30();
        let case = apply_perturbation(&base, &Perturbation::uniform_scale(&base, scale)).unwrap();
        let sol = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        prop_assume!(sol.converged);
        let f = f_matrix_for_case(&case).unwrap();
        let fast = local_indices(&sol.v, &f).unwrap();
        let (ll, lg) = dense_blocks(&case, &f.partition);
        let direct = -ll.try_inverse().unwrap() * lg;
        for (row, &j) in f.partition.load_pos.iter().enumerate() {
            let no_load: Complex64 = f.partition.generator_pos.iter().enumerate().map(|(c, &i)| direct[(row, c)] * sol.v[i]).sum();
            let l = (1.0 - no_load / sol.v[j]).norm();
            prop_assert!((l - fast[row]).abs() < 1e-9);
        }
    }
}
