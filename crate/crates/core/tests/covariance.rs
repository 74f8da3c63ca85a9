mod common;

use common::*;
use rand::Rng;
use risdma_core::covariance::*;
use risdma_core::de::DeConfig;
use risdma_core::linalg::{self, real, CMat, C64};
use risdma_core::model::*;

fn random_hermitian(r: &mut impl Rng, n: usize) -> CMat {
    let a = gaussian(r, n, n);
    (&a + a.adjoint()) * real(0.5)
}

fn lagrangian(wf: &WaterFilling, k: &CMat, q: &CMat) -> f64 {
    wf.objective(q).unwrap() - linalg::trace_of_product(k, q).re
}

fn range_and_null(q: &CMat) -> (CMat, CMat) {
    let eig = linalg::eigh(q);
    let tol = 1e-9 * eig.max().max(1e-30);
    let rank = eig.values.iter().filter(|&&v| v > tol).count();
    let n = q.nrows();
    (eig.vectors.columns(0, rank).into_owned(), eig.vectors.columns(rank, n - rank).into_owned())
}

#[test]
fn water_filling_gradient_matches_finite_differences() {
    let mut r = rng(1);
    for _ in 0..20 {
        let n = r.random_range(2..=5);
        let tr = r.random_range(1.0..20.0);
        let wf = WaterFilling::new(random_psd(&mut r, n, tr));
        let k = random_psd(&mut r, n, 1.0) + linalg::identity(n) * real(0.1);
        let q = wf.maximize_with(&k).unwrap().q;
        let grad = wf.gradient(&q).unwrap() - &k;
        // Central differences along random Hermitian directions.
        for _ in 0..5 {
            let e = random_hermitian(&mut r, n);
            let base = q.clone() + linalg::identity(n) * real(0.01);
            let h = 1e-6;
            let fd = (lagrangian(&wf, &k, &(&base + &e * real(h))) - lagrangian(&wf, &k, &(&base - &e * real(h)))) / (2.0 * h);
            let g = wf.gradient(&base).unwrap() - &k;
            let an = linalg::trace_of_product(&g, &e).re;
            assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0), "{fd} vs {an}");
        }
        // KKT: zero gradient on the range of Q, nonpositive on its null space.
        let (range, null) = range_and_null(&q);
        assert!((range.adjoint() * &grad * &range).norm() <= 1e-8, "range residual");
        if null.ncols() > 0 {
            let nn = linalg::eigh(&(null.adjoint() * &grad * &null));
            assert!(nn.max() <= 1e-8, "null-space gradient {}", nn.max());
        }
    }
}

#[test]
fn water_filling_not_improved_by_psd_perturbations() {
    let mut r = rng(2);
    let n = 4;
    let wf = WaterFilling::new(random_psd(&mut r, n, 10.0));
    let k = random_psd(&mut r, n, 2.0) + linalg::identity(n) * real(0.05);
    let q = wf.maximize_with(&k).unwrap().q;
    let best = lagrangian(&wf, &k, &q);
    for _ in 0..50 {
        let d = random_psd(&mut r, n, 1.0);
        for t in [1e-4, 1e-2, 0.3] {
            let up = &q + &d * real(t);
            assert!(lagrangian(&wf, &k, &up) <= best + 1e-8);
            let mix = &q * real(1.0 - t) + &d * real(t);
            assert!(lagrangian(&wf, &k, &mix) <= best + 1e-8);
        }
    }
}

#[test]
fn water_levels_in_whitened_basis() {
    let mut r = rng(3);
    let n = 4;
    let wf = WaterFilling::new(random_psd(&mut r, n, 6.0));
    let k = random_psd(&mut r, n, 1.0) + linalg::identity(n) * real(0.2);
    let pt = wf.maximize_with(&k).unwrap();
    let ks = linalg::eigh(&k).map(f64::sqrt);
    let whitened = &ks * &pt.q * &ks;
    let got = linalg::eigh(&whitened).values;
    let mut want: Vec<f64> = pt.p.iter().map(|&p| (1.0 - 1.0 / p).max(0.0)).collect();
    want.sort_by(|a, b| b.total_cmp(a));
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() <= 1e-10, "{g} vs {w}");
    }
}

/// Classic water-filling by bisection on the water level.
fn classic_water_filling(gains: &[f64], p: f64) -> Vec<f64> {
    let alloc = |nu: f64| gains.iter().map(|&g| if g > 0.0 { (nu - 1.0 / g).max(0.0) } else { 0.0 }).collect::<Vec<_>>();
    let (mut lo, mut hi) = (0.0, p + gains.iter().filter(|&&g| g > 0.0).map(|g| 1.0 / g).fold(0.0, f64::max));
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc(mid).iter().sum::<f64>() > p {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    alloc(0.5 * (lo + hi))
}

#[test]
fn huge_sar_budget_reduces_to_classic_water_filling() {
    let mut r = rng(4);
    for _ in 0..10 {
        let n = r.random_range(2..=5);
        let tr = r.random_range(0.5..50.0);
        let gram = random_psd(&mut r, n, tr);
        let p = r.random_range(0.1..5.0);
        let wf = WaterFilling::new(gram.clone());
        let sar = SarConstraint::single(reference_sar_matrix_for(n), 1e12);
        let sol = solve_user(&wf, p, &sar, None, &CovarianceConfig::default()).unwrap();
        let eig = linalg::eigh(&gram);
        let levels = classic_water_filling(&eig.values, p);
        let want = levels
            .iter()
            .enumerate()
            .fold(CMat::zeros(n, n), |acc, (j, &l)| acc + eig.vectors.column(j) * eig.vectors.column(j).adjoint() * real(l));
        assert!((&sol.q - &want).norm() <= 1e-7 * p, "{}", (&sol.q - &want).norm());
        assert!((linalg::trace_re(&sol.q) - p).abs() <= 1e-9 * p);
        assert!(sol.lambda[0] == 0.0);
    }
}

fn reference_sar_matrix_for(n: usize) -> CMat {
    if n == 4 {
        reference_sar_matrix()
    } else {
        linalg::identity(n) * real(8.0)
    }
}

#[test]
fn dual_solution_beats_random_feasible_points() {
    let mut r = rng(5);
    for _ in 0..10 {
        let n = 4;
        let gram = random_psd(&mut r, n, 40.0);
        let wf = WaterFilling::new(gram);
        let r2 = random_psd(&mut r, n, 4.0);
        let sar = SarConstraint { r: vec![reference_sar_matrix(), r2], d: vec![0.8, 0.3] };
        let pmax = 0.5;
        let sol = solve_user(&wf, pmax, &sar, None, &CovarianceConfig::default()).unwrap();
        assert!(sol.converged);
        let best = wf.objective(&sol.q).unwrap();
        let tr = linalg::trace_re(&sol.q);
        assert!(tr <= pmax + 1e-6);
        assert!(sol.mu * (pmax - tr) <= 1e-5 * pmax.max(1.0) || sol.mu <= MU_FLOOR);
        for ((ri, &d), &l) in sar.r.iter().zip(&sar.d).zip(&sol.lambda) {
            let s = linalg::trace_of_product(ri, &sol.q).re;
            assert!(s <= d + 1e-6);
            assert!(l >= 0.0 && (l * (d - s)).abs() <= 1e-5);
        }
        for _ in 0..200 {
            let mut q = random_psd(&mut r, n, 1.0);
            let mut scale = pmax / linalg::trace_re(&q);
            for (ri, &d) in sar.r.iter().zip(&sar.d) {
                scale = scale.min(d / linalg::trace_of_product(ri, &q).re);
            }
            q *= real(scale);
            assert!(wf.objective(&q).unwrap() <= best + 1e-9);
        }
    }
}

fn full_instance(seed: u64, users: usize, pmax: f64, d: f64) -> (Instance, CMat, Constraints) {
    let dims = dims(users, 4, 6, 3, 2);
    let inst = instance(seed, dims.clone(), 1.0);
    let xi = random_block_xi(&mut rng(seed + 50), &dims, &FeasibleSet::Unconstrained);
    let (_, _, v1) = compact_svd_right_factor(&xi).unwrap();
    let cons = Constraints::uniform(&dims, pmax, &reference_sar_matrix(), d);
    (inst, v1, cons)
}

#[test]
fn binding_sar_met_at_large_power() {
    let (inst, v1, cons) = full_instance(6, 3, 100.0, 0.8);
    let rep = solve_full_csi(&inst.dims, &inst.ch, &inst.phi, &v1, &cons, 1e-2, None, &CovarianceConfig::default()).unwrap();
    assert!(rep.converged);
    for qk in &rep.q.q {
        let s = sar_value(qk, &reference_sar_matrix()).unwrap();
        assert!((s - 0.8).abs() <= 1e-4, "SAR {s}");
        assert!(linalg::trace_re(qk) <= 100.0 + 1e-6);
    }
    assert!(rep.kkt_residuals.iter().all(|&x| x >= -1e-8));
}

#[test]
fn zero_power_gives_zero() {
    let (inst, v1, cons) = full_instance(7, 2, 0.0, 0.8);
    let rep = solve_full_csi(&inst.dims, &inst.ch, &inst.phi, &v1, &cons, 1e-2, None, &CovarianceConfig::default()).unwrap();
    assert!(rep.q.q.iter().all(|q| q.norm() == 0.0));
    assert_eq!(evaluate_se_full(&rep.q, &inst.phi, &v1, &inst.ch, 1e-2).unwrap(), 0.0);
}

#[test]
fn full_csi_objective_nondecreasing_over_user_updates() {
    for seed in 0..10 {
        let (inst, v1, cons) = full_instance(10 + seed, 4, 2.0, 0.8);
        let rep = solve_full_csi(&inst.dims, &inst.ch, &inst.phi, &v1, &cons, 0.05, None, &CovarianceConfig::default()).unwrap();
        assert!(rep.converged);
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
        }
        assert!(cons.max_violation(&rep.q) <= 1e-6);
    }
}

#[test]
fn single_user_full_csi_is_one_dual_solve() {
    let (inst, v1, cons) = full_instance(20, 1, 1.5, 0.8);
    let rep = solve_full_csi(&inst.dims, &inst.ch, &inst.phi, &v1, &cons, 0.1, None, &CovarianceConfig::default()).unwrap();
    let g = effective_channels(&inst.phi, &v1, &inst.ch);
    let wf = WaterFilling::new(full_csi_gram(0, &g, &rep.q, 0.1).unwrap());
    let sol = solve_user(&wf, 1.5, &cons.sar[0], None, &CovarianceConfig::default()).unwrap();
    assert!((&sol.q - &rep.q.q[0]).norm() <= 1e-10);
}

#[test]
fn user_permutation_permutes_the_solution() {
    let (inst, v1, cons) = full_instance(21, 3, 1.0, 0.8);
    let cfg = CovarianceConfig { sweep_tol: 1e-14, max_sweeps: 2000, ..Default::default() };
    let a = solve_full_csi(&inst.dims, &inst.ch, &inst.phi, &v1, &cons, 0.1, None, &cfg).unwrap();
    let perm = [2, 0, 1];
    let ch = ChannelSet { h1: inst.ch.h1.clone(), h2: perm.iter().map(|&k| inst.ch.h2[k].clone()).collect() };
    let b = solve_full_csi(&inst.dims, &ch, &inst.phi, &v1, &cons, 0.1, None, &cfg).unwrap();
    let sa = ln_se_full(&a.q, &inst.phi, &v1, &inst.ch, 0.1).unwrap();
    let sb = ln_se_full(&b.q, &inst.phi, &v1, &ch, 0.1).unwrap();
    // Gauss-Seidel order differs, so compare at the common fixed point.
    assert!((sa - sb).abs() <= 1e-6, "{sa} vs {sb}");
    for (i, &k) in perm.iter().enumerate() {
        assert!((&b.q.q[i] - &a.q.q[k]).norm() <= 1e-3, "user {k}");
    }
}

fn partial(seed: u64, d: SystemDims, stats: Option<ChannelStatistics>, cons: &Constraints, sigma2: f64) -> (WaterFillReport, risdma_core::de::DeState) {
    let inst = instance(seed, d.clone(), 1.0);
    let stats = stats.unwrap_or(inst.stats);
    let v1 = random_orthonormal(&mut rng(seed), d.bs_elements(), d.microstrips);
    solve_partial_csi(
        &d,
        &stats,
        &inst.ch.h1,
        &inst.phi,
        &v1,
        cons,
        sigma2,
        None,
        1e-12,
        &DeConfig::default(),
        &CovarianceConfig::default(),
    )
    .unwrap()
}

#[test]
fn partial_csi_zero_statistics_gives_zero() {
    let d = dims(2, 3, 4, 2, 2);
    let stats = ChannelStatistics::exponential(&d, 0.7, 1.0).unwrap().zeroed();
    let cons = Constraints::uniform(&d, 1.0, &linalg::identity(3), 0.8);
    let (rep, state) = partial(30, d, Some(stats), &cons, 0.1);
    assert!(rep.q.q.iter().all(|q| q.norm() == 0.0));
    assert_eq!(state.ln_se, 0.0);
}

#[test]
fn partial_csi_scalar_closed_form() {
    // One antenna everywhere: SE grows with q, so q* = min(Pmax, D / r).
    let d = dims(1, 1, 1, 1, 1);
    for (pmax, r, budget) in [(2.0, 1.0, 5.0), (2.0, 4.0, 1.0), (0.3, 0.5, 0.1)] {
        let cons = Constraints::uniform(&d, pmax, &CMat::from_element(1, 1, real(r)), budget);
        let (rep, _) = partial(31, d.clone(), None, &cons, 0.2);
        let want: f64 = f64::min(pmax, budget / r);
        assert!((rep.q.q[0][(0, 0)].re - want).abs() <= 1e-9 * want, "{} vs {want}", rep.q.q[0][(0, 0)].re);
    }
}

#[test]
fn partial_csi_stationarity() {
    for seed in 0..5 {
        let d = dims(2, 3, 5, 2, 2);
        let cons = Constraints::uniform(&d, 1.0, &(linalg::identity(3) * real(0.5)), 0.3);
        let sigma2 = 0.3;
        let (rep, state) = partial(40 + seed, d, None, &cons, sigma2);
        assert!(rep.converged);
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12);
        }
        assert!(cons.max_violation(&rep.q) <= 1e-6);
        for (k, qk) in rep.q.q.iter().enumerate() {
            let gamma = &state.gamma_mat[k];
            let n = qk.nrows();
            let a = linalg::identity(n) * real(sigma2) + gamma * qk;
            let lhs = a.lu().solve(gamma).unwrap();
            let kk = k_matrix(n, rep.duals.mu[k], &rep.duals.lambda[k], &cons.sar[k]);
            let (range, _) = range_and_null(qk);
            let res = (range.adjoint() * (lhs - kk) * &range).norm();
            assert!(res <= 1e-6, "seed {seed} user {k}: residual {res}");
        }
    }
}

#[test]
fn feasible_start_is_feasible() {
    let d = dims(3, 4, 4, 2, 2);
    let cons = Constraints::uniform(&d, 2.0, &reference_sar_matrix(), 0.8);
    let q = feasible_start(&d, &cons);
    assert!(cons.max_violation(&q) <= 1e-12);
    let c = q.q[0][(0, 0)];
    assert_eq!(c, C64::new(0.8 / 32.0, 0.0));
}
