//! Posterior-mean denoiser for a QAM symbol observed in complex Gaussian
//! noise, `β(z) = Σ xᵢ exp(−|z−xᵢ|²/σ²) / Σ exp(−|z−xⱼ|²/σ²)`.
//!
//! For square QAM the posterior factorizes over the real and imaginary axes,
//! so the 2-D sum is evaluated as two 1-D PAM sums of `√M` terms each. The
//! exponent is shifted by its maximum before exponentiation, which keeps the
//! weights finite for any `σ² > 0`.

use crate::constellation::Constellation;
use crate::error::{contract, Result};
use crate::numerics::C64;

/// Variance floor applied before the denoiser is called.
pub const SIGMA2_FLOOR: f64 = 1e-12;

/// Derivatives of `β` at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DenoiseGrad {
    /// `jac[a][b] = ∂β_a/∂z_b` with index 0 = real, 1 = imaginary.
    pub jac: [[f64; 2]; 2],
    /// `∂β/∂σ²`, real and imaginary parts.
    pub d_sigma2: C64,
}

impl DenoiseGrad {
    /// Half the Jacobian trace, the per-element divergence used by AMP.
    pub fn half_trace(&self) -> f64 {
        0.5 * (self.jac[0][0] + self.jac[1][1])
    }
}

#[derive(Clone, Copy, Debug)]
struct PamMoments {
    mean: f64,
    var: f64,
    d_mean_d_s: f64,
}

#[inline]
fn pam_moments(v: f64, s: f64, levels: &[f64]) -> PamMoments {
    // Levels are symmetric about zero, so work on |v| and restore the sign;
    // this makes the output exactly odd in v.
    let neg = v < 0.0;
    let v = v.abs();
    let n = levels.len();
    // exponent −(v−a)²/s, shifted by the smallest distance
    let mut d = [0.0f64; 8];
    let mut d_min = f64::INFINITY;
    for (k, &a) in levels.iter().enumerate() {
        d[k] = (v - a) * (v - a);
        d_min = d_min.min(d[k]);
    }
    let mut w = [0.0f64; 8];
    for k in 0..n {
        d[k] -= d_min;
        w[k] = (-d[k] / s).exp();
    }
    // pair level k with its mirror n-1-k so v = 0 gives a mean of exactly 0
    let mut wsum = 0.0;
    let mut m1 = 0.0;
    for k in 0..n / 2 {
        let j = n - 1 - k;
        wsum += w[k] + w[j];
        m1 += levels[j] * (w[j] - w[k]);
    }
    let mean = m1 / wsum;
    let mut var = 0.0;
    let mut cov_ad = 0.0;
    for k in 0..n {
        let p = w[k] / wsum;
        let da = levels[k] - mean;
        var += p * da * da;
        cov_ad += p * da * d[k];
    }
    let sign = if neg { -1.0 } else { 1.0 };
    PamMoments {
        mean: sign * mean,
        var,
        d_mean_d_s: sign * cov_ad / (s * s),
    }
}

/// `β(z; σ²)` without argument checks. `sigma2` must be positive.
#[inline]
pub fn denoise(c: &Constellation, z: C64, sigma2: f64) -> C64 {
    let lv = c.levels();
    C64::new(pam_moments(z.re, sigma2, lv).mean, pam_moments(z.im, sigma2, lv).mean)
}

/// `β(z; σ²)` and its derivatives, without argument checks.
#[inline]
pub fn denoise_with_grad(c: &Constellation, z: C64, sigma2: f64) -> (C64, DenoiseGrad) {
    let lv = c.levels();
    let re = pam_moments(z.re, sigma2, lv);
    let im = pam_moments(z.im, sigma2, lv);
    let g = DenoiseGrad {
        jac: [[2.0 * re.var / sigma2, 0.0], [0.0, 2.0 * im.var / sigma2]],
        d_sigma2: C64::new(re.d_mean_d_s, im.d_mean_d_s),
    };
    (C64::new(re.mean, im.mean), g)
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(contract(format!("denoiser variance must be positive, got {sigma2}")));
    }
    Ok(())
}

pub fn gaussian_denoise(z: C64, sigma2: f64, c: &Constellation) -> Result<C64> {
    check_sigma2(sigma2)?;
    Ok(denoise(c, z, sigma2))
}

pub fn gaussian_denoise_grad(z: C64, sigma2: f64, c: &Constellation) -> Result<DenoiseGrad> {
    check_sigma2(sigma2)?;
    Ok(denoise_with_grad(c, z, sigma2).1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Direct M-term evaluation of the posterior mean.
    fn direct(c: &Constellation, z: C64, s: f64) -> C64 {
        let e: Vec<f64> = c.points().iter().map(|x| -(z - x).norm_sqr() / s).collect();
        let mx = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = e.iter().map(|v| (v - mx).exp()).collect();
        let zsum: f64 = w.iter().sum();
        c.points().iter().zip(&w).map(|(x, w)| x * *w).sum::<C64>() / zsum
    }

    #[test]
    fn large_variance_goes_to_mean() {
        let c = Constellation::new(16).unwrap();
        let b = gaussian_denoise(C64::new(0.7, -1.3), 1e9, &c).unwrap();
        assert!(b.norm() < 1e-8);
    }

    #[test]
    fn tiny_variance_is_hard_decision() {
        let c = Constellation::new(64).unwrap();
        for p in c.points() {
            assert!((gaussian_denoise(*p, 1e-9, &c).unwrap() - p).norm() < 1e-9);
        }
    }

    #[test]
    fn qam4_tanh_closed_form() {
        let c = Constellation::new(4).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let z = C64::new(0.3, -0.2);
        let b = gaussian_denoise(z, 0.5, &c).unwrap();
        let er = r * (2.0 * r * 0.3 / 0.5).tanh();
        let ei = -r * (2.0 * r * 0.2 / 0.5).tanh();
        assert!((b.re - er).abs() < 1e-14 && (b.im - ei).abs() < 1e-14);
        assert!((b.re - 0.4881).abs() < 5e-5 && (b.im + 0.3622).abs() < 5e-5);
        assert!((direct(&c, z, 0.5) - b).norm() < 1e-14);
    }

    #[test]
    fn rejects_nonpositive_variance() {
        let c = Constellation::new(4).unwrap();
        assert!(gaussian_denoise(C64::new(0.0, 0.0), 0.0, &c).is_err());
        assert!(gaussian_denoise_grad(C64::new(0.0, 0.0), -1.0, &c).is_err());
    }

    #[test]
    fn jacobian_limits() {
        let c = Constellation::new(16).unwrap();
        let g = gaussian_denoise_grad(C64::new(0.1, 0.2), 1e8, &c).unwrap();
        assert!(g.jac[0][0].abs() < 1e-7 && g.jac[1][1].abs() < 1e-7);
        let p = c.point(5);
        let g = gaussian_denoise_grad(p + C64::new(0.01, -0.01), 1e-4, &c).unwrap();
        assert!(g.jac[0][0].abs() < 1e-10 && g.jac[1][1].abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let c = Constellation::new(16).unwrap();
        let h = 1e-6;
        for (z, s) in [
            (C64::new(0.3, -0.1), 0.2),
            (C64::new(-0.8, 0.45), 0.05),
            (C64::new(1.1, 0.9), 0.7),
        ] {
            let (_, g) = denoise_with_grad(&c, z, s);
            let dre = (denoise(&c, z + h, s) - denoise(&c, z - h, s)) / (2.0 * h);
            let dim = (denoise(&c, z + C64::new(0.0, h), s) - denoise(&c, z - C64::new(0.0, h), s))
                / (2.0 * h);
            let hs = h * s;
            let ds = (denoise(&c, z, s + hs) - denoise(&c, z, s - hs)) / (2.0 * hs);
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
            assert!(rel(g.jac[0][0], dre.re) < 1e-6);
            assert!(rel(g.jac[1][1], dim.im) < 1e-6);
            assert!(dre.im.abs() < 1e-9 && dim.re.abs() < 1e-9);
            assert!(rel(g.d_sigma2.re, ds.re) < 1e-6);
            assert!(rel(g.d_sigma2.im, ds.im) < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn matches_direct_sum(
            m in prop::sample::select(vec![4usize, 16, 64]),
            re in -3.0f64..3.0, im in -3.0f64..3.0, log_s in -4.0f64..2.0,
        ) {
            let c = Constellation::new(m).unwrap();
            let z = C64::new(re, im);
            let s = 10f64.powf(log_s);
            prop_assert!((denoise(&c, z, s) - direct(&c, z, s)).norm() < 1e-12);
        }

        #[test]
        fn bounded_and_symmetric(
            m in prop::sample::select(vec![4usize, 16, 64]),
            re in -1e3f64..1e3, im in -1e3f64..1e3, log_s in -30.0f64..6.0,
        ) {
            let c = Constellation::new(m).unwrap();
            let z = C64::new(re, im);
            let s = 10f64.powf(log_s);
            let (b, g) = denoise_with_grad(&c, z, s);
            prop_assert!(b.re.is_finite() && b.im.is_finite());
            prop_assert!(g.jac.iter().flatten().all(|v| v.is_finite()));
            prop_assert!(g.d_sigma2.re.is_finite() && g.d_sigma2.im.is_finite());
            prop_assert!(b.norm() <= c.max_magnitude() * (1.0 + 1e-12));
            prop_assert_eq!(denoise(&c, -z, s), -b);
            prop_assert_eq!(denoise(&c, z.conj(), s), b.conj());
        }
    }
}
