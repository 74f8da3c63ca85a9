#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use risdma_core::linalg::{CMat, CVec, C64};
use risdma_core::model::{
    generate_channels, generate_h1, ChannelSet, ChannelStatistics, FeasibleSet, H1Spec, PhaseShifts, SystemDims,
    TransmitCovariances,
};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn cn(rng: &mut impl Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> CMat {
    CMat::from_fn(r, c, |_, _| cn(rng))
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| cn(rng))
}

pub fn random_psd(rng: &mut impl Rng, n: usize, trace: f64) -> CMat {
    let a = gaussian(rng, n, n);
    let m = &a * a.adjoint();
    let t = m.trace().re;
    m * C64::new(trace / t, 0.0)
}

pub fn random_unitary(rng: &mut impl Rng, n: usize) -> CMat {
    gaussian(rng, n, n).qr().q()
}

/// M × S matrix with orthonormal columns.
pub fn random_orthonormal(rng: &mut impl Rng, m: usize, s: usize) -> CMat {
    gaussian(rng, m, s).qr().q()
}

pub fn random_phases(rng: &mut impl Rng, n: usize) -> PhaseShifts {
    PhaseShifts::from_angles(&(0..n).map(|_| rng.random::<f64>() * std::f64::consts::TAU).collect::<Vec<_>>())
}

/// Block-structured S × M weights with every on-block entry drawn from
/// `set` (UC draws are complex Gaussian).
pub fn random_block_xi(rng: &mut impl Rng, dims: &SystemDims, set: &FeasibleSet) -> CMat {
    let (s, l) = (dims.microstrips, dims.elements_per_strip);
    let mut xi = CMat::zeros(s, s * l);
    for i in 0..s {
        for j in 0..l {
            xi[(i, i * l + j)] = match *set {
                FeasibleSet::Unconstrained => cn(rng),
                FeasibleSet::AmplitudeOnly { lo, hi } => C64::new(lo + (hi - lo) * rng.random::<f64>(), 0.0),
                FeasibleSet::BinaryAmplitude { level } => C64::new(if j == 0 || rng.random::<bool>() { level } else { 0.0 }, 0.0),
                FeasibleSet::LorentzianPhase => {
                    let t = rng.random::<f64>() * std::f64::consts::TAU;
                    (C64::new(0.0, 1.0) + C64::from_polar(1.0, t)) * 0.5
                }
            };
        }
    }
    xi
}

pub struct Instance {
    pub dims: SystemDims,
    pub stats: ChannelStatistics,
    pub ch: ChannelSet,
    pub q: TransmitCovariances,
    pub phi: PhaseShifts,
}

/// Random unit-scale instance; Q has total power `power` per user.
pub fn instance(seed: u64, dims: SystemDims, power: f64) -> Instance {
    let mut r = rng(seed ^ 0x9e37_79b9);
    let stats = ChannelStatistics::exponential(&dims, 0.7, 1.0).unwrap();
    let h1 = generate_h1(&dims, &H1Spec { seed, hop_loss_db: 0.0 });
    let ch = generate_channels(&stats, &dims, &h1, seed, 0).unwrap();
    let q = TransmitCovariances::new(dims.user_antennas.iter().map(|&n| random_psd(&mut r, n, power)).collect()).unwrap();
    let phi = random_phases(&mut r, dims.ris_elements);
    Instance { dims, stats, ch, q, phi }
}

pub fn dims(users: usize, nk: usize, nr: usize, s: usize, l: usize) -> SystemDims {
    SystemDims::new(vec![nk; users], nr, s, l).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}
