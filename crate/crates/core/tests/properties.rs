mod common;

use common::*;
use proptest::prelude::*;
use risdma_core::covariance::{solve_full_csi, CovarianceConfig};
use risdma_core::de::{de_fixed_point, effective_u, DeConfig};
use risdma_core::dma::{fit_constrained, project_entry, DmaConfig};
use risdma_core::linalg::{self, real, CMat, C64};
use risdma_core::model::*;

fn any_set() -> impl Strategy<Value = FeasibleSet> {
    prop_oneof![
        Just(FeasibleSet::Unconstrained),
        (0.0..1.0f64, 0.1..3.0f64).prop_map(|(lo, w)| FeasibleSet::AmplitudeOnly { lo, hi: lo + w }),
        (0.01..2.0f64).prop_map(|level| FeasibleSet::BinaryAmplitude { level }),
        Just(FeasibleSet::LorentzianPhase),
    ]
}

fn small_dims() -> impl Strategy<Value = SystemDims> {
    (1usize..=3, 1usize..=3, 1usize..=6, 1usize..=4, 1usize..=4).prop_map(|(k, nk, nr, s, l)| dims(k, nk, nr, s, l))
}

/// Compact right factor of Ξ without going through the library SVD.
fn orthonormal_rows(xi: &CMat) -> CMat {
    xi.adjoint().qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn se_evaluators_nonnegative(seed in any::<u64>(), d in small_dims(), power in 0.0..10.0f64, sigma2 in 0.01..5.0f64) {
        let inst = instance(seed, d.clone(), power);
        let v1 = random_orthonormal(&mut rng(seed), d.bs_elements(), d.microstrips);
        prop_assert!(evaluate_se_full(&inst.q, &inst.phi, &v1, &inst.ch, sigma2).unwrap() >= 0.0);
        prop_assert!(evaluate_se_conventional(&inst.q, &inst.phi, &inst.ch, sigma2).unwrap() >= 0.0);
        let xi = random_block_xi(&mut rng(seed), &d, &FeasibleSet::Unconstrained);
        prop_assert!(evaluate_se_projection_form(&inst.q, &inst.phi, &xi, &inst.ch, sigma2).unwrap() >= -1e-12);
    }

    #[test]
    fn se_monotone_in_power(seed in any::<u64>(), d in small_dims(), c in 1.0..20.0f64) {
        let inst = instance(seed, d.clone(), 1.0);
        let v1 = random_orthonormal(&mut rng(seed), d.bs_elements(), d.microstrips);
        let base = evaluate_se_full(&inst.q, &inst.phi, &v1, &inst.ch, 0.3).unwrap();
        let more = evaluate_se_full(&inst.q.scaled(&vec![c; d.users()]), &inst.phi, &v1, &inst.ch, 0.3).unwrap();
        prop_assert!(more >= base - 1e-12 * base.max(1.0));
    }

    #[test]
    fn projection_form_matches_and_is_scale_invariant(seed in any::<u64>(), s in 2usize..=8, l in 1usize..=8, re in 0.1..5.0f64, im in -5.0..5.0f64) {
        let d = dims(2, 2, 4, s, l);
        let inst = instance(seed, d.clone(), 1.0);
        let xi = random_block_xi(&mut rng(seed), &d, &FeasibleSet::Unconstrained);
        let a = evaluate_se_projection_form(&inst.q, &inst.phi, &xi, &inst.ch, 0.5).unwrap();
        let b = evaluate_se_full(&inst.q, &inst.phi, &orthonormal_rows(&xi), &inst.ch, 0.5).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0), "{a} vs {b}");
        let scaled = &xi * C64::new(re, im);
        let c = evaluate_se_projection_form(&inst.q, &inst.phi, &scaled, &inst.ch, 0.5).unwrap();
        prop_assert!((a - c).abs() <= 1e-10 * a.max(1.0));
    }

    #[test]
    fn sar_is_linear(seed in any::<u64>(), n in 1usize..=6, a in 0.0..10.0f64, b in 0.0..10.0f64) {
        let mut r = rng(seed);
        let q1 = random_psd(&mut r, n, 3.0);
        let q2 = random_psd(&mut r, n, 2.0);
        let rm = random_psd(&mut r, n, 5.0);
        let lhs = sar_value(&(&q1 * real(a) + &q2 * real(b)), &rm).unwrap();
        let rhs = a * sar_value(&q1, &rm).unwrap() + b * sar_value(&q2, &rm).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1.0));
    }

    #[test]
    fn projection_idempotent_and_feasible(set in any_set(), re in -10.0..10.0f64, im in -10.0..10.0f64) {
        let p = project_entry(C64::new(re, im), &set);
        prop_assert!(set.contains(p, 1e-12));
        prop_assert!((project_entry(p, &set) - p).norm() <= 1e-14);
    }

    #[test]
    fn phases_stay_unit_modulus(theta in prop::collection::vec(-100.0..100.0f64, 1..32)) {
        let phi = PhaseShifts::from_angles(&theta);
        prop_assert!(phi.phi.iter().all(|z| (z.norm() - 1.0).abs() <= 1e-12));
        prop_assert!(PhaseShifts::new(phi.phi.clone()).is_ok());
    }

    #[test]
    fn dma_fit_block_structured(seed in any::<u64>(), set in any_set(), s in 1usize..=4, l in 1usize..=4) {
        let d = dims(1, 1, 1, s, l);
        let v1 = random_orthonormal(&mut rng(seed), s * l, s);
        let rep = fit_constrained(&v1, &set, &d, &DmaConfig::default()).unwrap();
        for row in 0..s {
            for col in 0..s * l {
                let z = rep.weights.xi[(row, col)];
                if on_block(row, col, l) {
                    prop_assert!(set.contains(z, 1e-12));
                } else {
                    prop_assert_eq!(z, real(0.0));
                }
            }
        }
        for w in rep.residual_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-10);
        }
    }

    #[test]
    fn de_states_nonnegative(seed in any::<u64>(), d in small_dims(), power in 0.0..5.0f64, decay in 0.1..1.0f64) {
        let stats = ChannelStatistics::exponential(&d, decay, 1.0).unwrap();
        let h1 = generate_h1(&d, &H1Spec { seed, hop_loss_db: 0.0 });
        let mut r = rng(seed);
        let phi = random_phases(&mut r, d.ris_elements);
        let v1 = random_orthonormal(&mut r, d.bs_elements(), d.microstrips);
        let q = TransmitCovariances::new(d.user_antennas.iter().map(|&n| random_psd(&mut r, n, power)).collect()).unwrap();
        let st = de_fixed_point(&effective_u(&phi, &v1, &h1, &stats), &stats, &q, 0.3, None, &DeConfig::default()).unwrap();
        prop_assert!(st.gamma.iter().chain(&st.psi).all(|v| v.iter().all(|&x| x >= 0.0)));
        prop_assert!(st.se_bits() >= 0.0);
    }

    #[test]
    fn covariance_solution_feasible(seed in any::<u64>(), d in small_dims(), pmax in 0.01..100.0f64, budget in 0.05..5.0f64) {
        let inst = instance(seed, d.clone(), 1.0);
        let v1 = random_orthonormal(&mut rng(seed), d.bs_elements(), d.microstrips);
        let n = d.user_antennas[0];
        let cons = Constraints::uniform(&d, pmax, &(linalg::identity(n) * real(2.0)), budget);
        let rep = solve_full_csi(&d, &inst.ch, &inst.phi, &v1, &cons, 0.2, None, &CovarianceConfig::default()).unwrap();
        prop_assert!(cons.max_violation(&rep.q) <= 1e-6);
        for qk in &rep.q.q {
            prop_assert!((qk - qk.adjoint()).norm() <= 1e-10);
            prop_assert!(linalg::eigh(qk).min() >= -1e-10);
        }
        prop_assert!(rep.duals.mu.iter().chain(rep.duals.lambda.iter().flatten()).all(|&x| x >= 0.0));
    }

    #[test]
    fn sampling_is_deterministic(seed in any::<u64>(), stream in any::<u64>(), d in small_dims()) {
        let stats = ChannelStatistics::exponential(&d, 0.8, 1.0).unwrap();
        let h1 = generate_h1(&d, &H1Spec { seed, hop_loss_db: 60.0 });
        prop_assert_eq!(&h1, &generate_h1(&d, &H1Spec { seed, hop_loss_db: 60.0 }));
        let a = generate_channels(&stats, &d, &h1, seed, stream).unwrap();
        let b = generate_channels(&stats, &d, &h1, seed, stream).unwrap();
        prop_assert_eq!(a.h2, b.h2);
    }
}

#[test]
fn monte_carlo_is_deterministic() {
    let d = dims(2, 2, 4, 2, 2);
    let inst = instance(3, d.clone(), 1.0);
    let v1 = random_orthonormal(&mut rng(3), 4, 2);
    let run = || monte_carlo_ergodic_se(&inst.stats, &inst.ch.h1, &inst.q, &inst.phi, &v1, 0.2, 300, 11).unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
}
