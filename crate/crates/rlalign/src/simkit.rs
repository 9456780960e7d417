//! Intensity similarity metrics between equally shaped images.
//!
//! All statistics are global (one mean/variance per image, not windowed),
//! accumulated in f64 with two passes, and use population variance. The
//! dissimilarity that drives the alignment reward blends Pearson correlation
//! with SSIM:
//!
//! `D(x, y) = 1 - (rho(x, y) + ssim(x, y)) / 2`
//!
//! so identical images score 0 and unrelated ones approach 1. NMI is kept
//! separate as an evaluation metric and as the default baseline objective.

use crate::error::{Error, Result};
use crate::imgcore::Image2D;

/// Stabilizers and binning shared by metric callers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimilarityConfig {
    /// SSIM luminance stabilizer, (0.01)^2 for a unit dynamic range.
    pub c1: f64,
    /// SSIM contrast stabilizer, (0.03)^2 for a unit dynamic range.
    pub c2: f64,
    /// Histogram bins per axis for NMI.
    pub nmi_bins: usize,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            c1: 1e-4,
            c2: 9e-4,
            nmi_bins: 32,
        }
    }
}

fn check_pair(a: &Image2D, b: &Image2D) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.is_empty() {
        return Err(Error::Data("metric on empty image".into()));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::Data("metric on non-finite pixels".into()));
    }
    Ok(())
}

struct Moments {
    mean_x: f64,
    mean_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

/// Two-pass joint moments with population normalization.
fn moments(a: &Image2D, b: &Image2D) -> Moments {
    let n = a.len() as f64;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        sx += x as f64;
        sy += y as f64;
    }
    let mean_x = sx / n;
    let mean_y = sy / n;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    let mut cov = 0.0;
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        let dx = x as f64 - mean_x;
        let dy = y as f64 - mean_y;
        var_x += dx * dx;
        var_y += dy * dy;
        cov += dx * dy;
    }
    Moments {
        mean_x,
        mean_y,
        var_x: var_x / n,
        var_y: var_y / n,
        cov: cov / n,
    }
}

/// Pearson correlation coefficient. Either image constant => 0.
pub fn correlation(a: &Image2D, b: &Image2D) -> Result<f64> {
    check_pair(a, b)?;
    let m = moments(a, b);
    if m.var_x == 0.0 || m.var_y == 0.0 {
        return Ok(0.0);
    }
    Ok(m.cov / (m.var_x.sqrt() * m.var_y.sqrt()))
}

/// Global (whole-image) SSIM.
pub fn ssim(a: &Image2D, b: &Image2D, cfg: &SimilarityConfig) -> Result<f64> {
    check_pair(a, b)?;
    let m = moments(a, b);
    let num = (2.0 * m.mean_x * m.mean_y + cfg.c1) * (2.0 * m.cov + cfg.c2);
    let den = (m.mean_x * m.mean_x + m.mean_y * m.mean_y + cfg.c1) * (m.var_x + m.var_y + cfg.c2);
    Ok(num / den)
}

/// Blended dissimilarity `1 - (rho + ssim) / 2`; 0 for identical images.
pub fn dissimilarity(a: &Image2D, b: &Image2D, cfg: &SimilarityConfig) -> Result<f64> {
    let rho = correlation(a, b)?;
    let s = ssim(a, b, cfg)?;
    Ok(1.0 - (rho + s) / 2.0)
}

/// Normalized mutual information `2 I(X;Y) / (H(X) + H(Y))` over a joint
/// histogram with `bins` equal-width bins on `[0, 1]` per axis. Intensities
/// outside `[0, 1]` are clamped into the end bins. When both marginal
/// entropies vanish (two constant images) the ratio is defined as 1.
pub fn nmi(a: &Image2D, b: &Image2D, bins: usize) -> Result<f64> {
    check_pair(a, b)?;
    if bins == 0 {
        return Err(Error::Config("nmi needs at least one bin".into()));
    }
    let bin_of = |v: f32| -> usize {
        let scaled = (v as f64).clamp(0.0, 1.0) * bins as f64;
        (scaled as usize).min(bins - 1)
    };
    let mut joint = vec![0u32; bins * bins];
    for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
        joint[bin_of(x) * bins + bin_of(y)] += 1;
    }
    let n = a.len() as f64;
    let mut px = vec![0.0f64; bins];
    let mut py = vec![0.0f64; bins];
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] as f64 / n;
            px[i] += p;
            py[j] += p;
        }
    }
    let entropy = |p: &[f64]| -> f64 {
        p.iter()
            .filter(|&&v| v > 0.0)
            .map(|&v| -v * v.ln())
            .sum()
    };
    let hx = entropy(&px);
    let hy = entropy(&py);
    if hx + hy == 0.0 {
        return Ok(1.0);
    }
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let p = joint[i * bins + j] as f64 / n;
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    Ok(2.0 * mi / (hx + hy))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgcore::Image2D;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen::<f32>()).collect();
        Image2D::from_vec(h, w, data).unwrap()
    }

    /// Oracle: correlation from explicitly materialized deviation vectors.
    fn correlation_oracle(a: &Image2D, b: &Image2D) -> f64 {
        let n = a.len() as f64;
        let mx = a.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let my = b.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let dx: Vec<f64> = a.as_slice().iter().map(|&v| v as f64 - mx).collect();
        let dy: Vec<f64> = b.as_slice().iter().map(|&v| v as f64 - my).collect();
        let cov: f64 = dx.iter().zip(&dy).map(|(x, y)| x * y).sum();
        let vx: f64 = dx.iter().map(|x| x * x).sum();
        let vy: f64 = dy.iter().map(|y| y * y).sum();
        if vx == 0.0 || vy == 0.0 {
            return 0.0;
        }
        cov / (vx.sqrt() * vy.sqrt())
    }

    /// Oracle: SSIM evaluated term by term from its defining statistics.
    fn ssim_oracle(a: &Image2D, b: &Image2D, c1: f64, c2: f64) -> f64 {
        let n = a.len() as f64;
        let mx = a.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let my = b.as_slice().iter().map(|&v| v as f64).sum::<f64>() / n;
        let vx = a
            .as_slice()
            .iter()
            .map(|&v| (v as f64 - mx).powi(2))
            .sum::<f64>()
            / n;
        let vy = b
            .as_slice()
            .iter()
            .map(|&v| (v as f64 - my).powi(2))
            .sum::<f64>()
            / n;
        let cov = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| (x as f64 - mx) * (y as f64 - my))
            .sum::<f64>()
            / n;
        ((2.0 * mx * my + c1) * (2.0 * cov + c2))
            / ((mx * mx + my * my + c1) * (vx + vy + c2))
    }

    /// Oracle: NMI from a directly built joint histogram and logarithm
    /// identities, written independently of the implementation above.
    fn nmi_oracle(a: &Image2D, b: &Image2D, bins: usize) -> f64 {
        let idx = |v: f32| -> usize {
            let s = (v as f64).clamp(0.0, 1.0) * bins as f64;
            (s as usize).min(bins - 1)
        };
        let mut counts = std::collections::BTreeMap::<(usize, usize), f64>::new();
        for (&x, &y) in a.as_slice().iter().zip(b.as_slice()) {
            *counts.entry((idx(x), idx(y))).or_insert(0.0) += 1.0;
        }
        let n = a.len() as f64;
        let mut px = vec![0.0; bins];
        let mut py = vec![0.0; bins];
        for (&(i, j), &c) in &counts {
            px[i] += c / n;
            py[j] += c / n;
        }
        let h = |p: &[f64]| -> f64 { p.iter().filter(|&&v| v > 0.0).map(|&v| -v * v.ln()).sum() };
        // I(X;Y) = H(X) + H(Y) - H(X,Y)
        let hxy: f64 = counts
            .values()
            .map(|&c| {
                let p = c / n;
                -p * p.ln()
            })
            .sum();
        let (hx, hy) = (h(&px), h(&py));
        if hx + hy == 0.0 {
            return 1.0;
        }
        2.0 * (hx + hy - hxy) / (hx + hy)
    }

    #[test]
    fn metrics_match_oracles_on_seeded_pairs() {
        let cfg = SimilarityConfig::default();
        for seed in 0..50u64 {
            let a = random_image(16, 16, seed * 2);
            let b = random_image(16, 16, seed * 2 + 1);
            let rho = correlation(&a, &b).unwrap();
            assert!((rho - correlation_oracle(&a, &b)).abs() < 1e-12, "seed {seed}");
            let s = ssim(&a, &b, &cfg).unwrap();
            assert!((s - ssim_oracle(&a, &b, cfg.c1, cfg.c2)).abs() < 1e-12);
            let m = nmi(&a, &b, 32).unwrap();
            assert!((m - nmi_oracle(&a, &b, 32)).abs() < 1e-12);
            let d = dissimilarity(&a, &b, &cfg).unwrap();
            assert!((d - (1.0 - (rho + s) / 2.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn correlation_of_image_with_itself_is_one() {
        let a = random_image(12, 12, 7);
        assert!((correlation(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_of_image_with_its_negation_is_minus_one() {
        let a = random_image(12, 12, 8);
        let inv =
            Image2D::from_vec(12, 12, a.as_slice().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!((correlation(&a, &inv).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn correlation_with_constant_image_is_zero() {
        let a = random_image(6, 6, 9);
        let c = Image2D::from_vec(6, 6, vec![0.7; 36]).unwrap();
        assert_eq!(correlation(&a, &c).unwrap(), 0.0);
        assert_eq!(correlation(&c, &a).unwrap(), 0.0);
    }

    #[test]
    fn ssim_of_image_with_itself_is_one() {
        let cfg = SimilarityConfig::default();
        let a = random_image(10, 10, 10);
        assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_flat_zero_vs_flat_one() {
        let cfg = SimilarityConfig::default();
        let zeros = Image2D::new(8, 8);
        let ones = Image2D::from_vec(8, 8, vec![1.0; 64]).unwrap();
        let expect = cfg.c1 / (1.0 + cfg.c1);
        assert!((ssim(&zeros, &ones, &cfg).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn dissimilarity_is_zero_on_identical_images() {
        let cfg = SimilarityConfig::default();
        let a = random_image(10, 10, 11);
        assert!(dissimilarity(&a, &a, &cfg).unwrap().abs() < 1e-12);
    }

    #[test]
    fn dissimilarity_grows_as_noise_blends_in() {
        let cfg = SimilarityConfig::default();
        let a = random_image(16, 16, 12);
        let noise = random_image(16, 16, 13);
        let mut last = -1.0;
        for k in 0..=4 {
            let alpha = k as f32 / 4.0;
            let mixed: Vec<f32> = a
                .as_slice()
                .iter()
                .zip(noise.as_slice())
                .map(|(&x, &n)| (1.0 - alpha) * x + alpha * n)
                .collect();
            let b = Image2D::from_vec(16, 16, mixed).unwrap();
            let d = dissimilarity(&a, &b, &cfg).unwrap();
            assert!(d > last, "alpha {alpha}: {d} vs {last}");
            last = d;
        }
    }

    #[test]
    fn metric_symmetry() {
        let cfg = SimilarityConfig::default();
        for seed in 0..10u64 {
            let a = random_image(9, 9, 100 + seed);
            let b = random_image(9, 9, 200 + seed);
            assert!(
                (correlation(&a, &b).unwrap() - correlation(&b, &a).unwrap()).abs() < 1e-12
            );
            assert!((ssim(&a, &b, &cfg).unwrap() - ssim(&b, &a, &cfg).unwrap()).abs() < 1e-12);
            assert!((nmi(&a, &b, 16).unwrap() - nmi(&b, &a, 16).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn nmi_of_image_with_itself_is_one() {
        let a = random_image(14, 14, 14);
        assert!((nmi(&a, &a, 32).unwrap() - 1.0).abs() < 1e-12);
        let flat = Image2D::from_vec(4, 4, vec![0.5; 16]).unwrap();
        assert_eq!(nmi(&flat, &flat, 32).unwrap(), 1.0);
    }

    #[test]
    fn nmi_against_shuffled_pixels_is_low() {
        for seed in 0..20u64 {
            let a = random_image(84, 84, 300 + seed);
            let mut shuffled: Vec<f32> = a.as_slice().to_vec();
            let mut rng = ChaCha8Rng::seed_from_u64(400 + seed);
            shuffled.shuffle(&mut rng);
            let b = Image2D::from_vec(84, 84, shuffled).unwrap();
            let m = nmi(&a, &b, 32).unwrap();
            assert!(m < 0.2, "seed {seed}: nmi {m}");
        }
    }

    #[test]
    fn nmi_is_invariant_under_joint_intensity_flip() {
        let a = random_image(20, 20, 15);
        let b = random_image(20, 20, 16);
        let flip = |img: &Image2D| {
            Image2D::from_vec(20, 20, img.as_slice().iter().map(|v| 1.0 - v).collect()).unwrap()
        };
        // The flip permutes the joint histogram, so only summation order
        // differs.
        let m1 = nmi(&a, &b, 32).unwrap();
        let m2 = nmi(&flip(&a), &flip(&b), 32).unwrap();
        assert!((m1 - m2).abs() < 1e-12);
    }

    #[test]
    fn metrics_reject_shape_mismatch_and_nan() {
        let cfg = SimilarityConfig::default();
        let a = random_image(4, 4, 17);
        let b = random_image(4, 5, 18);
        assert!(matches!(correlation(&a, &b), Err(Error::Dimension(_))));
        let mut bad = a.clone();
        bad.set(0, 0, f32::NAN);
        assert!(matches!(ssim(&a, &bad, &cfg), Err(Error::Data(_))));
        assert!(matches!(nmi(&bad, &a, 8), Err(Error::Data(_))));
    }
}
