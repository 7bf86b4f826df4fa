use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;

use psdmap::evaluate::nmse_with;
use psdmap::io::{measurements_from_csv, measurements_to_csv};
use psdmap::kernels::{assemble_kernel, kernel_block, projector, KernelSpec};
use psdmap::model::{Location, MeasurementRecord};
use psdmap::online::{loss_subgradient, Loss, OnlineState};
use psdmap::qp::{solve_qp, Hessian, QpOptions, QpProblem, QpStatus};
use psdmap::quantize::{QuantizerKind, QuantizerSpec};
use psdmap::simulate::{calibrate, QuantizerChoice, Scenario, ScenarioConfig};

fn boundaries() -> impl Strategy<Value = Vec<f64>> {
    (0.0f64..5.0, prop::collection::vec(0.01f64..3.0, 2..10)).prop_map(|(start, steps)| {
        let mut b = vec![start];
        for s in steps {
            b.push(b.last().unwrap() + s);
        }
        b
    })
}

fn points(d: usize, n: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Location>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), n)
        .prop_map(|v| v.into_iter().map(Location::new).collect())
}

fn min_eigenvalue(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m).eigenvalues.min()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantized_value_lies_in_its_cell(b in boundaries(), u in 0.0f64..1.0) {
        let q = QuantizerSpec::new(b.clone(), QuantizerKind::Explicit).unwrap();
        let v = b[0] + u * (b[b.len() - 1] - b[0]);
        let (i, clipped) = q.quantize_with_clip(v);
        prop_assert!(!clipped);
        let (y, eps) = q.interval_of(i).unwrap();
        prop_assert!(y - eps <= v + 1e-12 && v < y + eps + 1e-12);
        prop_assert!((y - eps - b[i]).abs() < 1e-12 && (y + eps - b[i + 1]).abs() < 1e-12);
    }

    #[test]
    fn out_of_range_values_map_to_end_cells(b in boundaries(), over in 0.0f64..100.0) {
        let q = QuantizerSpec::new(b.clone(), QuantizerKind::Explicit).unwrap();
        prop_assert_eq!(q.quantize(b[0] - 1e-9 - over), 0);
        let (i, clipped) = q.quantize_with_clip(b[b.len() - 1] + over);
        prop_assert_eq!(i, b.len() - 2);
        prop_assert!(clipped);
    }

    #[test]
    fn gaussian_kernel_matrix_is_psd(pts in points(2, 1..8), width in 0.05f64..2.0, m in 1usize..4) {
        let k = assemble_kernel(&KernelSpec::gaussian(width, m), &pts).unwrap().to_dense();
        prop_assert!((&k - k.transpose()).amax() < 1e-14);
        prop_assert!(min_eigenvalue(k) > -1e-9);
    }

    #[test]
    fn kernel_blocks_are_symmetric_in_arguments(pts in points(2, 2..3), s in 1u32..3) {
        for spec in [KernelSpec::gaussian(0.3, 3), KernelSpec::tps(s + 1, 2, 3)] {
            let a = kernel_block(&spec, &pts[0], &pts[1]).unwrap();
            let b = kernel_block(&spec, &pts[1], &pts[0]).unwrap();
            prop_assert!((a - b.transpose()).amax() < 1e-12);
        }
    }

    #[test]
    fn projector_is_idempotent_and_annihilates_basis(
        rows in 4usize..9,
        cols in 1usize..4,
        seed in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let b = DMatrix::from_fn(rows, cols, |i, j| seed[(i * 4 + j) % 36] + if i == j { 2.0 } else { 0.0 });
        let p = projector(&b).unwrap();
        prop_assert!((&p * &p - &p).amax() < 1e-10);
        prop_assert!((&p * &b).amax() < 1e-10);
    }

    #[test]
    fn nmse_of_scaled_truth(a in -3.0f64..3.0, seed in 0u64..50) {
        let cfg = ScenarioConfig::line(2, 4, 1, 3, QuantizerChoice::Uniform);
        let cal = calibrate(&cfg, 0).unwrap();
        let mut small = cfg.clone();
        small.eval_points = 50;
        let sc = Scenario::generate(&small, &cal, seed, 0).unwrap();
        let v = nmse_with(|x| sc.field.eval(x) * a, &sc.field, &sc.eval_points).unwrap();
        prop_assert!((v - (a - 1.0).powi(2)).abs() < 1e-10 * (1.0 + v));
    }

    #[test]
    fn box_qp_beats_random_feasible_points(
        n in 1usize..5,
        entries in prop::collection::vec(-1.0f64..1.0, 25),
        q in prop::collection::vec(-3.0f64..3.0, 5),
        probes in prop::collection::vec(0.0f64..1.0, 100),
    ) {
        let r = DMatrix::from_fn(n, n, |i, j| entries[i * 5 + j]);
        let h = &r * r.transpose() + DMatrix::identity(n, n) * 0.1;
        let p = QpProblem::boxed(
            Hessian::Dense(h),
            DVector::from_fn(n, |i, _| q[i]),
            DVector::zeros(n),
            DVector::from_element(n, 1.0),
        );
        let sol = solve_qp(&p, QpOptions::default()).unwrap();
        prop_assert_eq!(sol.status, QpStatus::Optimal);
        prop_assert!(sol.z.iter().all(|&z| (-1e-9..=1.0 + 1e-9).contains(&z)));
        for probe in probes.chunks(n).filter(|c| c.len() == n) {
            let z = DVector::from_row_slice(probe);
            prop_assert!(sol.objective <= p.objective(&z) + 1e-7);
        }
    }

    #[test]
    fn online_step_inside_tube_only_shrinks(
        xs in prop::collection::vec(0.0f64..1.0, 3..8),
        ys in prop::collection::vec(-2.0f64..2.0, 8),
        lambda in 1e-3f64..0.2,
    ) {
        let kernel = KernelSpec::gaussian(0.1, 1);
        let rec = |x: f64, y: f64, eps: f64| MeasurementRecord {
            sensor_index: 0,
            location: Location::new(vec![x]),
            phi: DVector::from_element(1, 1.0),
            q_index: None,
            y,
            eps,
            raw: None,
            is_virtual: false,
        };
        let mut state = OnlineState::distinct(kernel, Loss::L1Eps, lambda, 1.0, None).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            state.step(&rec(*x, *y, 0.05)).unwrap();
            prop_assert!(state.norm_sq() >= 0.0);
        }
        let before = state.norm_sq();
        let t = state.t() + 1;
        let x = 0.5;
        let inside = rec(x, state.predict(&Location::new(vec![x]))[0], 10.0);
        state.step(&inside).unwrap();
        let shrink = 1.0 - 2.0 * lambda / (t as f64).sqrt();
        prop_assert!((state.norm_sq() - shrink * shrink * before).abs() <= 1e-9 * (1.0 + before));
    }

    #[test]
    fn l1_subgradient_is_bounded(e in -5.0f64..5.0, eps in 0.0f64..2.0) {
        let g = loss_subgradient(Loss::L1Eps, e, eps);
        prop_assert!(g.abs() <= 1.0);
        if e.abs() < eps {
            prop_assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn measurement_csv_round_trips_random_records(
        rows in prop::collection::vec(
            (0usize..50, prop::collection::vec(-1e3f64..1e3, 2), prop::collection::vec(0.0f64..1.0, 3),
             prop::option::of(0usize..16), -1e6f64..1e6, 0.0f64..10.0, prop::option::of(-1e6f64..1e6), any::<bool>()),
            1..12),
    ) {
        let records: Vec<MeasurementRecord> = rows
            .into_iter()
            .map(|(s, x, phi, q, y, eps, raw, v)| MeasurementRecord {
                sensor_index: s,
                location: Location::new(x),
                phi: DVector::from_vec(phi),
                q_index: q,
                y,
                eps,
                raw,
                is_virtual: v,
            })
            .collect();
        let text = measurements_to_csv(&records, None).unwrap();
        let (back, q) = measurements_from_csv(&text).unwrap();
        prop_assert!(q.is_none());
        prop_assert_eq!(back, records);
    }
}
