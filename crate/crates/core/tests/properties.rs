//! Property tests of the invariants the optimizers rely on.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use proptest::prelude::*;
use rayon::prelude::*;

use saddlekit::bench::{hodges_lehmann, wilcoxon_normal_approx, wilcoxon_one_sided};
use saddlekit::covariance::{ensemble_covariance, logdet, CovarianceOperator, LocalBlock, Metric, MetricParams};
use saddlekit::dimer::{dimer_rotate, reflect, DimerParams};
use saddlekit::linalg::{Matrix, Vector};
use saddlekit::neb::ObliqueProjector;
use saddlekit::potentials::{build_vacancy_supercell, CoreField3D, EamFs, EamPotential, FinnisSinclair, PotentialField};
use saddlekit::rng::{NoiseStream, StreamKey};

fn stream(seed: u64) -> NoiseStream {
    StreamKey::new(seed, 0, 0).stream()
}

fn vector(s: &mut NoiseStream, d: usize) -> Vector {
    s.normals(d)
}

/// `A A^T / d` plus a small ridge, well conditioned enough for 1e-9 comparisons.
fn spd(s: &mut NoiseStream, d: usize) -> Matrix {
    let a = Matrix::from_fn(d, d, |_, _| s.normal());
    &a * a.transpose() / d as f64 + Matrix::identity(d, d) * 0.05
}

fn raw(lambda: f64) -> MetricParams {
    MetricParams { lambda, normalize_trace: false, ..MetricParams::default() }
}

fn operator(kind: u8, s: &mut NoiseStream, d: usize) -> CovarianceOperator {
    match kind % 4 {
        0 => CovarianceOperator::dense(spd(s, d)).unwrap(),
        1 => CovarianceOperator::diagonal(vector(s, d).map(|x| x * x)).unwrap(),
        2 => {
            let r = (d / 3).clamp(1, 8);
            let u = Matrix::from_fn(d, r, |_, _| s.normal());
            CovarianceOperator::low_rank(u, spd(s, r)).unwrap()
        }
        _ => {
            let blocks = (0..d / 2)
                .map(|b| LocalBlock::new(vec![2 * b, 2 * b + 1], spd(s, 2)).unwrap())
                .collect();
            CovarianceOperator::block_local(d, blocks).unwrap()
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn metric_solves_the_regularised_system(seed in any::<u64>(), kind in 0u8..4, d in 2usize..24, lambda in 0.01f64..2.0) {
        let mut s = stream(seed);
        let op = operator(kind, &mut s, d);
        let z = vector(&mut s, d);
        let p = raw(lambda);
        let y = Metric::new(&op, &p).unwrap().apply(&z).unwrap();
        let back = op.apply(&y).unwrap() + &y * lambda;
        prop_assert!((back - &z).norm() <= 1e-8 * z.norm(), "kind {kind}");
        prop_assert!(y.norm() <= z.norm() / lambda * (1.0 + 1e-9));
    }

    #[test]
    fn woodbury_matches_the_dense_solve(seed in any::<u64>(), d in 2usize..50, r in 1usize..8, lambda in 0.01f64..1.0) {
        let mut s = stream(seed);
        let u = Matrix::from_fn(d, r, |_, _| s.normal());
        let low = CovarianceOperator::low_rank(u, spd(&mut s, r)).unwrap();
        let dense = CovarianceOperator::dense(low.to_dense()).unwrap();
        let z = vector(&mut s, d);
        let a = Metric::new(&low, &raw(lambda)).unwrap().apply(&z).unwrap();
        let b = Metric::new(&dense, &raw(lambda)).unwrap().apply(&z).unwrap();
        prop_assert!((a - &b).amax() <= 1e-9 * b.amax().max(1.0));
    }

    #[test]
    fn logdet_increases_with_lambda(seed in any::<u64>(), kind in 0u8..4, d in 2usize..16, l1 in 0.001f64..1.0, dl in 1e-3f64..1.0) {
        let op = operator(kind, &mut stream(seed), d);
        prop_assert!(logdet(&op, l1 + dl).unwrap() > logdet(&op, l1).unwrap());
    }

    #[test]
    fn ensemble_covariance_is_psd(seed in any::<u64>(), d in 1usize..12, m in 2usize..10, rho in 0.0f64..1.0) {
        let mut s = stream(seed);
        let samples: Vec<Vector> = (0..m).map(|_| vector(&mut s, d)).collect();
        let p = MetricParams { shrink_rho: rho, sigma_floor: 1e-6, ..MetricParams::default() };
        let c = ensemble_covariance(&samples, &p, None).unwrap().to_dense();
        prop_assert!(c.symmetric_eigenvalues().min() >= -1e-10);
    }

    #[test]
    fn same_key_same_draws(seed in any::<u64>(), it in any::<u64>(), ent in any::<u64>()) {
        let key = StreamKey::new(seed, it, ent);
        let first = key.stream().normals(16);
        // other streams in between and on other threads do not matter
        let _ = StreamKey::new(seed ^ 1, it, ent).stream().normals(64);
        let others: Vec<Vector> = (0..8).into_par_iter().map(|_| key.stream().normals(16)).collect();
        for o in others {
            prop_assert_eq!(&o, &first);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn oblique_projection_identities(seed in any::<u64>(), di in 0usize..3, lambda in 0.01f64..1.0, c in 0.1f64..10.0) {
        let d = [2, 5, 50][di];
        let mut s = stream(seed);
        let metric = Metric::new(&CovarianceOperator::dense(spd(&mut s, d)).unwrap(), &raw(lambda)).unwrap();
        let tau = vector(&mut s, d).normalize();
        let p = ObliqueProjector::new(&metric, &tau, 1e-12).unwrap();
        let z = vector(&mut s, d);
        let scale = z.norm().max(1.0);
        let perp = p.perp(&z);
        let par = p.par(&z);
        prop_assert!(tau.dot(&perp).abs() <= 1e-10 * scale);
        prop_assert!((p.perp(&perp) - &perp).norm() <= 1e-10 * scale);
        prop_assert!((p.par(&par) - &par).norm() <= 1e-10 * scale);
        prop_assert!((&perp + &par - &z).norm() <= 1e-12 * scale);

        // zero set: Q_perp G g vanishes for g parallel to tau ...
        let g = &tau * c;
        prop_assert!(p.perp(&metric.apply(&g).unwrap()).norm() <= 1e-9 * c * metric.apply(&tau).unwrap().norm());
        // ... and not for g with a normal part
        let mut n = vector(&mut s, d);
        n -= &tau * tau.dot(&n);
        let g = &tau * c + n.normalize() * 1e-3;
        let r = p.perp(&metric.apply(&g).unwrap());
        prop_assert!(r.norm() > 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn oblique_step_solves_the_constrained_quadratic(seed in any::<u64>(), d in 2usize..12, lambda in 0.05f64..1.0) {
        let mut s = stream(seed);
        let sigma = spd(&mut s, d);
        let metric = Metric::new(&CovarianceOperator::dense(sigma.clone()).unwrap(), &raw(lambda)).unwrap();
        let tau = vector(&mut s, d).normalize();
        let g = vector(&mut s, d);
        let p = ObliqueProjector::new(&metric, &tau, 1e-12).unwrap();
        let step = -p.perp(&metric.apply(&g).unwrap());

        // minimise g^T s + s^T G^{-1} s / 2 subject to tau^T s = 0
        let ginv = sigma + Matrix::identity(d, d) * lambda;
        let mut kkt = Matrix::zeros(d + 1, d + 1);
        kkt.view_mut((0, 0), (d, d)).copy_from(&ginv);
        kkt.view_mut((0, d), (d, 1)).copy_from(&tau);
        kkt.view_mut((d, 0), (1, d)).copy_from(&tau.transpose());
        let mut rhs = Vector::zeros(d + 1);
        rhs.rows_mut(0, d).copy_from(&(-&g));
        let sol = kkt.lu().solve(&rhs).unwrap();
        prop_assert!((sol.rows(0, d) - &step).norm() <= 1e-8 * step.norm().max(1.0));
    }

    #[test]
    fn climbing_force_has_the_classical_limit(seed in any::<u64>(), d in 2usize..20, lambda in 1e-3f64..1.0) {
        let mut s = stream(seed);
        let metric = Metric::new(&CovarianceOperator::diagonal(Vector::zeros(d)).unwrap(), &raw(lambda)).unwrap();
        let tau = vector(&mut s, d).normalize();
        let g = vector(&mut s, d);
        let p = ObliqueProjector::new(&metric, &tau, 1e-12).unwrap();
        let gg = metric.apply(&g).unwrap();
        let ua = (-&gg + p.par(&gg) * 2.0) * lambda;
        let classical = -&g + &tau * (2.0 * tau.dot(&g));
        prop_assert!((ua - classical).norm() <= 1e-10 * g.norm().max(1.0));
    }

    #[test]
    fn reflected_metric_gradient_vanishes_only_at_zero(seed in any::<u64>(), d in 2usize..20, lambda in 0.01f64..1.0) {
        let mut s = stream(seed);
        let sigma = spd(&mut s, d);
        let lmin = 1.0 / (sigma.symmetric_eigenvalues().max() + lambda);
        let metric = Metric::new(&CovarianceOperator::dense(sigma).unwrap(), &raw(lambda)).unwrap();
        let v = vector(&mut s, d).normalize();
        let g = vector(&mut s, d);
        let out = metric.apply(&reflect(&v, &g)).unwrap().norm();
        prop_assert!(out >= lmin * g.norm() * (1.0 - 1e-10));
        prop_assert!(out > 0.0);
        prop_assert_eq!(metric.apply(&reflect(&v, &Vector::zeros(d))).unwrap().norm(), 0.0);
    }

    #[test]
    fn rotation_keeps_unit_length_and_the_trust_angle(seed in any::<u64>(), d in 2usize..10, weighted in any::<bool>(), beta in 0.001f64..5.0) {
        let mut s = stream(seed);
        let params = DimerParams { beta, ..DimerParams::default() };
        let v = vector(&mut s, d).normalize();
        let hv = vector(&mut s, d) * 10.0;
        let sigma = CovarianceOperator::dense(spd(&mut s, d)).unwrap();
        let step = dimer_rotate(&v, &hv, weighted.then_some(&sigma), &params).unwrap();
        prop_assert!((step.v.norm() - 1.0).abs() <= 1e-12);
        prop_assert!(step.angle <= params.theta_max + 1e-12);
        let angle = v.dot(&step.v).clamp(-1.0, 1.0).acos();
        prop_assert!(angle <= params.theta_max + 1e-12);
    }

    #[test]
    fn core_blocks_are_transversely_isotropic(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0, phi in 0.0f64..6.3, gate in 0.0f64..1.0, px in -5.0f64..5.0) {
        let h = Vector3::new(ax, ay, az).normalize();
        let field = CoreField3D {
            core_center: Vector3::new(6.0, 6.0, 6.0),
            hop_axis: h,
            core_radius: 4.2,
            midpoint_width: 0.3,
            floor: 0.01,
            parallel_amp: 0.045,
            transverse_amp: 0.35,
            migrating_atom: 0,
            hop_start: Vector3::zeros(),
            hop_length: 2.74,
            cell: Matrix3::identity() * 12.66,
            n_atoms: 2,
        };
        let b = field.block_for(Vector3::new(6.0 + px, 5.0, 7.0), gate);
        let r = Rotation3::from_axis_angle(&Unit::new_normalize(h), phi).into_inner();
        prop_assert!((r * b * r.transpose() - b).amax() <= 1e-14);
    }

    #[test]
    fn exact_wilcoxon_matches_sign_enumeration(seed in any::<u64>(), n in 1usize..11, ties in any::<bool>()) {
        let mut s = stream(seed);
        let d: Vec<f64> = (0..n).map(|_| { let x = s.normal(); if ties { (x * 2.0).round() / 2.0 } else { x } }).collect();
        let nz: Vec<f64> = d.iter().copied().filter(|x| *x != 0.0).collect();
        let expected = if nz.is_empty() {
            1.0
        } else {
            // average ranks of |d|
            let m = nz.len();
            let mut idx: Vec<usize> = (0..m).collect();
            idx.sort_by(|&a, &b| nz[a].abs().total_cmp(&nz[b].abs()));
            let mut rank = vec![0.0; m];
            let mut i = 0;
            while i < m {
                let mut j = i;
                while j + 1 < m && nz[idx[j + 1]].abs() == nz[idx[i]].abs() { j += 1; }
                for k in i..=j { rank[idx[k]] = (i + j) as f64 / 2.0 + 1.0; }
                i = j + 1;
            }
            let obs: f64 = (0..m).filter(|&k| nz[k] > 0.0).map(|k| rank[k]).sum();
            let hits = (0u32..1 << m)
                .filter(|mask| (0..m).filter(|k| mask >> k & 1 == 1).map(|k| rank[k]).sum::<f64>() >= obs - 1e-9)
                .count();
            hits as f64 / (1u64 << m) as f64
        };
        prop_assert!((wilcoxon_one_sided(&d) - expected).abs() <= 1e-12);
    }

    #[test]
    fn hodges_lehmann_is_the_walsh_median(seed in any::<u64>(), n in 1usize..30) {
        let mut s = stream(seed);
        let d: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let mut walsh = Vec::new();
        for i in 0..n {
            for j in i..n {
                walsh.push((d[i] + d[j]) / 2.0);
            }
        }
        walsh.sort_by(f64::total_cmp);
        let m = walsh.len();
        let med = if m % 2 == 1 { walsh[m / 2] } else { (walsh[m / 2 - 1] + walsh[m / 2]) / 2.0 };
        prop_assert_eq!(hodges_lehmann(&d).unwrap(), med);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normal_approximation_is_close_at_n_25(seed in any::<u64>(), shift in -0.8f64..0.8) {
        let mut s = stream(seed);
        let d: Vec<f64> = (0..25).map(|_| s.normal() + shift).collect();
        prop_assert!((wilcoxon_one_sided(&d) - wilcoxon_normal_approx(&d)).abs() <= 0.01);
    }
}

fn small_eam() -> (EamPotential, Vector) {
    let fs = FinnisSinclair::tungsten();
    let (cell, _) = build_vacancy_supercell(3, fs.lattice_constant, "W").unwrap();
    let x = cell.to_flat();
    (EamPotential::new(EamFs::from_tables(&fs.default_tables()).unwrap(), cell).unwrap(), x)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn eam_forces_sum_to_zero(seed in any::<u64>(), amp in 0.0f64..0.15) {
        let (pot, x0) = small_eam();
        let x = &x0 + stream(seed).normals(x0.len()) * amp;
        let g = pot.gradient(&x).unwrap();
        for k in 0..3 {
            let total: f64 = g.iter().skip(k).step_by(3).sum();
            prop_assert!(total.abs() <= 1e-9, "component {k}: {total}");
        }
    }
}

#[test]
fn euclidean_projection_counterexample() {
    let r3 = 3f64.sqrt();
    let g = Matrix::from_row_slice(2, 2, &[7.0 / 4.0, -3.0 * r3 / 4.0, -3.0 * r3 / 4.0, 13.0 / 4.0]);
    let tau = Vector::from_vec(vec![1.0, 0.0]);
    let gt = &g * &tau;
    let euclid = &gt - &tau * tau.dot(&gt);
    assert_eq!(euclid[0], 0.0);
    assert!((euclid[1] + 3.0 * r3 / 4.0).abs() <= 1e-15);
    // the oblique projector removes G tau exactly
    let p = ObliqueProjector::from_parts(tau.clone(), gt.clone(), 1e-12).unwrap();
    assert!(p.perp(&gt).norm() <= 1e-15);
}
