use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{db_to_linear, ChannelSet, ChannelStatistics, SystemDims};
use crate::error::Result;
use crate::linalg::{CMat, C64};

/// RNG for stream `stream` under `seed`. Distinct streams are independent,
/// so sample `i` of a Monte-Carlo run does not depend on how many samples
/// were drawn before it.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Standard circularly-symmetric complex Gaussian sample.
fn cn(rng: &mut ChaCha8Rng) -> C64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Deterministic RIS-to-BS channel: i.i.d. CN(0, g) entries with
/// `g = 10^(-hop_loss_db/10)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct H1Spec {
    pub seed: u64,
    pub hop_loss_db: f64,
}

pub fn generate_h1(dims: &SystemDims, spec: &H1Spec) -> CMat {
    let mut rng = rng_for(spec.seed, u64::MAX);
    let amp = db_to_linear(-spec.hop_loss_db).sqrt();
    CMat::from_fn(dims.bs_elements(), dims.ris_elements, |_, _| cn(&mut rng) * amp)
}

/// One draw of `H2[k] = U2[k] (√Ω2[k] ⊙ W) V2[k]ᴴ` for every user.
pub fn sample_h2(stats: &ChannelStatistics, rng: &mut ChaCha8Rng) -> Vec<CMat> {
    stats
        .u2
        .iter()
        .zip(&stats.v2)
        .zip(&stats.omega2)
        .map(|((u, v), omega)| {
            let inner = CMat::from_fn(omega.nrows(), omega.ncols(), |r, n| cn(rng) * omega[(r, n)].sqrt());
            u * inner * v.adjoint()
        })
        .collect()
}

/// Channel realization `seed` under fixed `h1`.
pub fn generate_channels(stats: &ChannelStatistics, dims: &SystemDims, h1: &CMat, seed: u64, stream: u64) -> Result<ChannelSet> {
    stats.validate(dims)?;
    let mut rng = rng_for(seed, stream);
    let set = ChannelSet {
        h1: h1.clone(),
        h2: sample_h2(stats, &mut rng),
    };
    set.validate(dims)?;
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let dims = SystemDims::new(vec![2, 3], 4, 2, 2).unwrap();
        let stats = ChannelStatistics::exponential(&dims, 0.7, 1.0).unwrap();
        let h1 = generate_h1(&dims, &H1Spec { seed: 1, hop_loss_db: 0.0 });
        let a = generate_channels(&stats, &dims, &h1, 5, 0).unwrap();
        let b = generate_channels(&stats, &dims, &h1, 5, 0).unwrap();
        let c = generate_channels(&stats, &dims, &h1, 5, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.h2[0], c.h2[0]);
    }

    #[test]
    fn h2_second_moment_matches_omega() {
        let dims = SystemDims::new(vec![2], 3, 1, 1).unwrap();
        let stats = ChannelStatistics::exponential(&dims, 0.5, 2.0).unwrap();
        let n = 20000;
        let mut acc = crate::linalg::RMat::zeros(3, 2);
        let mut rng = rng_for(9, 0);
        for _ in 0..n {
            let h = &sample_h2(&stats, &mut rng)[0];
            let inner = stats.u2[0].adjoint() * h * &stats.v2[0];
            for r in 0..3 {
                for c in 0..2 {
                    acc[(r, c)] += inner[(r, c)].norm_sqr() / n as f64;
                }
            }
        }
        for (a, o) in acc.iter().zip(stats.omega2[0].iter()) {
            assert!((a - o).abs() < 0.05 * o.max(0.2), "{a} vs {o}");
        }
    }

    #[test]
    fn h1_scaling() {
        let dims = SystemDims::new(vec![1], 16, 8, 8).unwrap();
        let h1 = generate_h1(&dims, &H1Spec { seed: 3, hop_loss_db: 60.0 });
        let mean = h1.iter().map(|z| z.norm_sqr()).sum::<f64>() / h1.len() as f64;
        assert!((mean / 1e-6 - 1.0).abs() < 0.15);
    }
}
