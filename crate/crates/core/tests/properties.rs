mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::lu::lu_partial_pivot;
use common::{random_matrix, random_symmetric, rel_diff};
use ofrr::basis::{arnoldi_mgs, hessenberg_basis, krylov_hessenberg, orthonormalize};
use ofrr::driver::{krylov_eig, subspace_iter_eig, subspace_iter_svd};
use ofrr::matrix::{
    gaussian_kernel, parse_matrix_market, power_iteration, sample_uniform_square, spectral_rescale,
};
use ofrr::precision::{mixed_dot, round_to, safe_norm2};
use ofrr::projection::{ofrr_eig, rr_eig, solve_svd_pencil, svd_pencil, ProjectionPrecision};
use ofrr::smallsolve::{cond2, reference_eigvals, small_svd, sym_def_gen_eig, sym_eigvals};
use ofrr::{
    BasisMethod, DenseMatrix, FpFormat, HessLayout, IterConfig, KernelConfig, LinearOperator,
    PrecisionPolicy, ProjectionKind,
};

const FORMATS: [FpFormat; 3] = [FpFormat::F16, FpFormat::F32, FpFormat::F64];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn f64p() -> PrecisionPolicy {
    PrecisionPolicy::default()
}

fn half_values(len: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-300.0f64..300.0, len)
        .prop_map(|v| v.into_iter().map(|x| round_to(x, FpFormat::F16)).collect())
}

fn spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let g = random_matrix(n, n, rng);
    let mut s = g.tr_matmul(&g).unwrap().scaled(1.0 / n as f64);
    for i in 0..n {
        s.set(i, i, s.get(i, i) + 1.0);
    }
    s.symmetrized()
}

fn well_conditioned(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    loop {
        let r = random_matrix(n, n, rng);
        if cond2(&r).unwrap() < 1e3 {
            return r;
        }
    }
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| rel_diff(*x, *y))
        .fold(0.0, f64::max)
}

fn f16_ulp(x: f64) -> f64 {
    let a = x.abs();
    if a < 6.103_515_625e-5 {
        2f64.powi(-24)
    } else {
        2f64.powi(a.log2().floor() as i32 - 10)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_to_is_idempotent(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        for f in FORMATS {
            let once = round_to(x, f);
            let twice = round_to(once, f);
            prop_assert!(once.to_bits() == twice.to_bits() || (once.is_nan() && twice.is_nan()));
        }
    }

    #[test]
    fn double_dot_matches_plain_loop(x in prop::collection::vec(-1e3f64..1e3, 0..40), seed in any::<u64>()) {
        let mut r = rng(seed);
        let y: Vec<f64> = x.iter().map(|_| rand::Rng::random_range(&mut r, -1e3..1e3)).collect();
        let plain = x.iter().zip(&y).fold(0.0, |acc, (a, b)| acc + a * b);
        prop_assert_eq!(mixed_dot(&x, &y, &f64p()).to_bits(), plain.to_bits());
    }

    #[test]
    fn mixed_half_dot_within_one_half_ulp(x in half_values(1..=48), y in half_values(48..=48)) {
        let (x, y): (Vec<f64>, Vec<f64>) = x.iter().zip(&y).map(|(a, b)| (a.abs(), b.abs())).unzip();
        let got = mixed_dot(&x, &y, &PrecisionPolicy::mixed_half());
        // same half-precision products, summed exactly
        let exact: f64 = x.iter().zip(&y).map(|(a, b)| round_to(a * b, FpFormat::F16)).sum();
        prop_assume!(exact.is_finite());
        prop_assert!((got - exact).abs() <= f16_ulp(exact), "{} vs {}", got, exact);
    }

    #[test]
    fn safe_norm2_finite_below_overflow(x in half_values(1..=32), target in 0.5f64..1.0) {
        let pol = PrecisionPolicy::native_half();
        // scale towards the overflow threshold
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(norm > 0.0);
        let scale = target * FpFormat::F16.max_finite() / norm;
        let x: Vec<f64> = x.iter().map(|v| round_to(v * scale, FpFormat::F16)).collect();
        let exact = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assume!(exact <= FpFormat::F16.max_finite());
        prop_assert!(safe_norm2(&x, &pol).is_finite(), "norm {}", exact);
        prop_assert!(safe_norm2(&x, &PrecisionPolicy::mixed_half()).is_finite());
    }

    #[test]
    fn dense_entries_are_representable(data in prop::collection::vec(-1e5f64..1e5, 12)) {
        for f in FORMATS {
            let m = DenseMatrix::new(3, 4, data.clone(), f).unwrap();
            prop_assert!(m.data().iter().all(|&v| round_to(v, f).to_bits() == v.to_bits() || v.is_infinite()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn congruence_preserves_generalized_spectrum(seed in any::<u64>(), n in 2usize..10) {
        let mut r = rng(seed);
        let b = spd(n, &mut r);
        let m = spd(n, &mut r);
        let t = well_conditioned(n, &mut r);
        let bt = t.tr_matmul(&b.matmul(&t).unwrap()).unwrap().symmetrized();
        let mt = t.tr_matmul(&m.matmul(&t).unwrap()).unwrap().symmetrized();
        let d = max_rel(&sym_def_gen_eig(&bt, &mt).unwrap().values, &sym_def_gen_eig(&b, &m).unwrap().values);
        prop_assert!(d <= 1e-9, "{:e}", d);
    }

    #[test]
    fn small_svd_matches_gram_eigenvalues(seed in any::<u64>(), rows in 3usize..14, cols in 1usize..8) {
        prop_assume!(cols <= rows);
        let mut r = rng(seed);
        let c = random_matrix(rows, cols, &mut r);
        let s = small_svd(&c).unwrap().values;
        let smax = s[0];
        prop_assume!(s[cols - 1] > 1e-2 * smax);
        prop_assume!(s.windows(2).all(|w| w[0] - w[1] > 1e-3 * smax));
        let g = sym_eigvals(&c.tr_matmul(&c).unwrap()).unwrap();
        let root: Vec<f64> = g.iter().map(|v| v.sqrt()).collect();
        prop_assert!(max_rel(&s, &root) <= 1e-10, "{:?} vs {:?}", s, root);
    }

    #[test]
    fn ofrr_ignores_change_of_basis(seed in any::<u64>(), k in 2usize..9) {
        let mut r = rng(seed);
        let a = spd(40, &mut r);
        let u = random_matrix(40, k, &mut r);
        let t = well_conditioned(k, &mut r);
        let v1 = ofrr_eig(&a, &u, &f64p()).unwrap().values;
        let v2 = ofrr_eig(&a, &u.matmul(&t).unwrap(), &f64p()).unwrap().values;
        prop_assert!(max_rel(&v2, &v1) <= 1e-8);
    }

    #[test]
    fn ofrr_equals_rr_on_orthonormal_bases(seed in any::<u64>(), k in 1usize..9) {
        let mut r = rng(seed);
        let a = spd(40, &mut r);
        let q = orthonormalize(&random_matrix(40, k, &mut r), BasisMethod::MgsLeftReorth, &f64p()).unwrap().q;
        let d = max_rel(&ofrr_eig(&a, &q, &f64p()).unwrap().values, &rr_eig(&a, &q, &f64p()).unwrap().values);
        prop_assert!(d <= 1e-12, "{:e}", d);
    }

    #[test]
    fn svd_pencil_spectrum_and_normalization(seed in any::<u64>(), k1 in 1usize..8, k2 in 1usize..8) {
        let mut r = rng(seed);
        let a = random_matrix(30, 20, &mut r);
        let u = random_matrix(30, k1, &mut r);
        let v = random_matrix(20, k2, &mut r);
        let p = svd_pencil(&a, &u, &v, &ProjectionPrecision::from_policy(&f64p())).unwrap();
        let sol = solve_svd_pencil(&p).unwrap();
        let vals = &sol.pencil_values;
        let rank = sol.values.len();
        prop_assert_eq!(rank, k1.min(k2));
        let smax = vals[0];
        for i in 0..rank {
            prop_assert!((vals[i] + vals[vals.len() - 1 - i]).abs() <= 1e-10);
        }
        for &z in &vals[rank..vals.len() - rank] {
            prop_assert!(z.abs() <= 1e-10 * smax);
        }
        for j in 0..rank {
            let (y, z, s) = (sol.y.col(j), sol.z.col(j), sol.values[j]);
            let quad = |w: &[f64], m: &DenseMatrix| -> f64 {
                w.iter().zip(m.apply_f64(w)).map(|(a, b)| a * b).sum()
            };
            prop_assert!((quad(y, &p.mu) - 0.5).abs() <= 1e-8);
            prop_assert!((quad(z, &p.mv) - 0.5).abs() <= 1e-8);
            // (-s; -y, z) satisfies the pencil equations iff G z = s Mu y and G' y = s Mv z
            let gz = p.g.apply_f64(z);
            let gty = p.g.apply_transpose_f64(y);
            let muy = p.mu.apply_f64(y);
            let mvz = p.mv.apply_f64(z);
            let tol = 1e-10;
            prop_assert!(gz.iter().zip(&muy).all(|(l, m)| (l - s * m).abs() <= tol));
            prop_assert!(gty.iter().zip(&mvz).all(|(l, m)| (s * m - l).abs() <= tol));
        }
    }

    #[test]
    fn hessenberg_matches_lu(seed in any::<u64>(), rows in 1usize..40, cols in 1usize..20) {
        prop_assume!(cols <= rows);
        let x = random_matrix(rows, cols, &mut rng(seed));
        let lu = lu_partial_pivot(&x);
        let left = hessenberg_basis(&x, HessLayout::Left, &f64p()).unwrap();
        let right = hessenberg_basis(&x, HessLayout::Right, &f64p()).unwrap();
        prop_assert_eq!(&left.q, &right.q);
        prop_assert_eq!(&left.pivots, &lu.pivots);
        for i in 0..rows {
            for j in 0..cols {
                prop_assert!((left.q.get(i, j) - lu.permuted_l[i][j]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn krylov_recurrence_holds(seed in any::<u64>(), k in 2usize..25) {
        let mut r = rng(seed);
        let a = random_symmetric(50, &mut r);
        let norm = reference_eigvals(&a).unwrap().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let v0: Vec<f64> = random_matrix(50, 1, &mut r).into_data();
        for b in [arnoldi_mgs(&a, &v0, k, &f64p()).unwrap(), krylov_hessenberg(&a, &v0, k, &f64p()).unwrap()] {
            let h = b.coefficients.as_ref().unwrap();
            for j in 0..h.cols() {
                let mut res = a.apply_f64(b.q.col(j));
                for i in 0..=(j + 1).min(b.width() - 1) {
                    for (x, q) in res.iter_mut().zip(b.q.col(i)) {
                        *x -= h.get(i, j) * q;
                    }
                }
                let n = res.iter().map(|x| x * x).sum::<f64>().sqrt();
                prop_assert!(n <= 1e-12 * norm, "{:?} step {}: {:e}", b.method, j, n / norm);
            }
        }
    }

    #[test]
    fn builders_preserve_the_column_space(seed in any::<u64>(), cols in 1usize..10) {
        let x = random_matrix(30, cols, &mut rng(seed));
        let basis_of_x = orthonormalize(&x, BasisMethod::MgsLeftReorth, &f64p()).unwrap().q;
        for m in BasisMethod::BLOCK {
            let q = m.build(&x, &f64p()).unwrap().q;
            prop_assert_eq!(q.cols(), cols);
            // every column of Q lies in span(X): residual after projecting onto an orthonormal basis of X
            let qo = orthonormalize(&q, BasisMethod::MgsLeftReorth, &f64p()).unwrap().q;
            let c = basis_of_x.tr_matmul(&qo).unwrap();
            let s = small_svd(&c).unwrap().values;
            // cosines of the principal angles
            prop_assert!(s.iter().all(|&v| v > 1.0 - 1e-10), "{}: {:?}", m, s);
        }
    }
}

fn small_kernel(n: usize, seed: u64) -> DenseMatrix {
    let cfg = KernelConfig {
        scale: 1.0,
        length_scale: 3.0,
        variance: 0.01,
        points: sample_uniform_square(n, (n as f64).sqrt(), seed).unwrap(),
        cross_points: None,
    };
    gaussian_kernel(&cfg, FpFormat::F64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn drivers_are_deterministic(seed in any::<u64>(), preset in 0usize..4, method in 0usize..7) {
        let pol = [
            PrecisionPolicy::full(FpFormat::F64),
            PrecisionPolicy::full(FpFormat::F32),
            PrecisionPolicy::mixed_half(),
            PrecisionPolicy::native_half(),
        ][preset];
        let a = small_kernel(60, seed);
        let cfg = IterConfig {
            k: 8,
            m: 2,
            iter: 2,
            basis_method: BasisMethod::BLOCK[method],
            projection: ProjectionKind::Ofrr,
            policy: pol,
            seed,
            ..IterConfig::default()
        };
        let same = |x: &ofrr::Result<ofrr::RitzSet>, y: &ofrr::Result<ofrr::RitzSet>| match (x, y) {
            (Ok(x), Ok(y)) => {
                x.values.iter().zip(&y.values).all(|(a, b)| a.to_bits() == b.to_bits())
                    && x.vectors == y.vectors
                    && x.residuals.iter().zip(&y.residuals).all(|(a, b)| a.to_bits() == b.to_bits())
            }
            (Err(x), Err(y)) => x.to_string() == y.to_string(),
            _ => false,
        };
        prop_assert!(same(&subspace_iter_eig(&a, &cfg), &subspace_iter_eig(&a, &cfg)));
        prop_assert!(same(&subspace_iter_svd(&a, &cfg), &subspace_iter_svd(&a, &cfg)));
        let kcfg = IterConfig { basis_method: BasisMethod::KrylovHess, k: 12, restarts: 1, ..cfg };
        prop_assert!(same(&krylov_eig(&a, &kcfg), &krylov_eig(&a, &kcfg)));
    }

    #[test]
    fn kernel_is_positive_semidefinite(seed in any::<u64>(), n in 2usize..60) {
        let a = small_kernel(n, seed);
        prop_assert_eq!(&a, &a.transpose());
        let ev = reference_eigvals(&a).unwrap();
        let norm = ev.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        prop_assert!(ev[n - 1] >= -(n as f64) * f64::EPSILON * norm);
    }

    #[test]
    fn matrix_market_spmv_reproduces_columns(seed in any::<u64>(), n in 1usize..12) {
        let a = random_symmetric(n, &mut rng(seed));
        let mut text = format!("%%MatrixMarket matrix coordinate real symmetric\n{n} {n} {}\n", n * (n + 1) / 2);
        for j in 0..n {
            for i in j..n {
                text.push_str(&format!("{} {} {:e}\n", i + 1, j + 1, a.get(i, j)));
            }
        }
        let csr = parse_matrix_market(&text, "generated").unwrap();
        prop_assert!(csr.is_symmetric());
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = csr.spmv(&e, &f64p()).unwrap();
            for (i, v) in col.iter().enumerate() {
                prop_assert_eq!(v.to_bits(), a.get(i, j).to_bits());
            }
        }
    }

    #[test]
    fn spectral_rescale_keeps_the_dominant_direction(seed in any::<u64>(), n in 3usize..12) {
        let mut r = rng(seed);
        let a = spd(n, &mut r);
        let mut text = format!("%%MatrixMarket matrix coordinate real symmetric\n{n} {n} {}\n", n * (n + 1) / 2);
        for j in 0..n {
            for i in j..n {
                text.push_str(&format!("{} {} {:e}\n", i + 1, j + 1, a.get(i, j)));
            }
        }
        let csr = parse_matrix_market(&text, "generated").unwrap();
        let ev = reference_eigvals(&csr.to_dense()).unwrap();
        prop_assume!(ev[0] - ev[1] > 0.2 * ev[0]);
        let scaled = spectral_rescale(&csr);
        let (_, v1) = power_iteration(&csr, 1);
        let (_, v2) = power_iteration(&scaled, 1);
        let dot: f64 = v1.iter().zip(&v2).map(|(a, b)| a * b).sum();
        prop_assert!((dot.abs() - 1.0).abs() <= 1e-8, "{}", dot);
    }

    #[test]
    fn stabilized_bases_are_well_conditioned(seed in any::<u64>(), l in prop::sample::select(vec![1.0, 10.0, 100.0])) {
        let cfg = KernelConfig {
            scale: 1.0,
            length_scale: l,
            variance: 0.01,
            points: sample_uniform_square(200, 200f64.sqrt(), seed).unwrap(),
            cross_points: None,
        };
        let a = gaussian_kernel(&cfg, FpFormat::F64).unwrap();
        let x = ofrr::driver::power_block(&a, &ofrr::driver::random_start(200, 10, seed, FpFormat::F64), 3, &f64p()).unwrap();
        for m in [BasisMethod::MgsLeftReorth, BasisMethod::Cgs2] {
            let q = m.build(&x, &f64p()).unwrap().q;
            prop_assert!(cond2(&q).unwrap() <= 1.0 + 1e-10, "{}", m);
        }
        let h64 = BasisMethod::HessRight.build(&x, &f64p()).unwrap().q;
        let h16 = BasisMethod::HessRight.build(&x, &PrecisionPolicy::mixed_half()).unwrap().q;
        let (c64, c16) = (cond2(&h64).unwrap(), cond2(&h16.to_f64()).unwrap());
        prop_assert!(c64.is_finite() && c16.is_finite());
        prop_assert!((c64 / c16).max(c16 / c64) < 100.0, "{} vs {}", c64, c16);
    }
}
