//! Synthetic layered B-scan phantoms with multiplicative speckle.
//!
//! A phantom is a stack of horizontal bands (the retina) on a dark
//! background. Band boundaries undulate as smooth sinusoid mixtures and each
//! band carries a gentle intensity modulation along x, so both translation
//! components and small rotations are observable. Speckle is multiplicative
//! gamma noise with mean one; `speckle_looks` is the gamma shape, so larger
//! values mean cleaner images.
//!
//! Structure and speckle draw from separate seed streams: a pair of slices
//! of the "same tissue" shares the structure stream and differs only in its
//! speckle realization, the way adjacent B-scans do.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::imgcore::{crop, normalize, warp, Image2D, RigidTransform2D};
use crate::seed;

const STREAM_STRUCTURE: u64 = 1;
const STREAM_SPECKLE: u64 = 2;
const STREAM_PAIR_SPECKLE: u64 = 3;
const STREAM_TRUTH: u64 = 4;
const STREAM_WINDOW: u64 = 5;

#[derive(Clone, Debug)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    /// Number of retina bands between background above and below.
    pub layer_count: usize,
    /// Peak-to-baseline undulation of band boundaries, in pixels.
    pub layer_amplitude: f64,
    /// Mean intensity per band, one entry per layer. Alternating bright and
    /// dark values give the row-mean profile its characteristic wiggles.
    pub layer_contrasts: Vec<f64>,
    /// Relative amplitude of the along-x intensity modulation per band.
    pub intensity_modulation: f64,
    /// Gamma shape of the multiplicative speckle; mean is always one.
    pub speckle_looks: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            height: 200,
            width: 200,
            layer_count: 5,
            layer_amplitude: 6.0,
            layer_contrasts: vec![0.85, 0.35, 0.95, 0.45, 0.70],
            intensity_modulation: 0.12,
            speckle_looks: 4.0,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height < 8 || self.width < 8 {
            return Err(Error::Config(format!(
                "phantom dimensions {}x{} are too small",
                self.height, self.width
            )));
        }
        if self.layer_count == 0 {
            return Err(Error::Config("layer_count must be at least 1".into()));
        }
        if self.layer_contrasts.len() != self.layer_count {
            return Err(Error::Config(format!(
                "{} layer_contrasts for {} layers",
                self.layer_contrasts.len(),
                self.layer_count
            )));
        }
        if self
            .layer_contrasts
            .iter()
            .any(|&c| !(0.0..=1.0).contains(&c))
        {
            return Err(Error::Config("layer_contrasts must lie in [0, 1]".into()));
        }
        if !(self.layer_amplitude >= 0.0) || !(self.intensity_modulation >= 0.0) {
            return Err(Error::Config("negative amplitude".into()));
        }
        if !(self.speckle_looks > 0.0) || !self.speckle_looks.is_finite() {
            return Err(Error::Config("speckle_looks must be positive".into()));
        }
        Ok(())
    }
}

/// How far a sampled rigid motion may go per component.
#[derive(Clone, Copy, Debug)]
pub struct MotionRange {
    /// Translation bound in pixels, both axes.
    pub translation: f64,
    /// Rotation bound in degrees.
    pub rotation: f64,
}

impl MotionRange {
    pub fn isotropic(range: f64) -> Self {
        MotionRange {
            translation: range,
            rotation: range,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=5.0).contains(&self.translation) || !(0.0..=5.0).contains(&self.rotation) {
            return Err(Error::Config(format!(
                "motion range ({}, {}) outside the supported [0, 5]",
                self.translation, self.rotation
            )));
        }
        Ok(())
    }
}

/// What was sampled when a windowed pair was produced.
#[derive(Clone, Copy, Debug)]
pub struct MotionSample {
    pub truth: RigidTransform2D,
    /// Window center (cx, cy) in the full phantom.
    pub window_center: (usize, usize),
}

/// Sinusoid mixture describing one band boundary or modulation curve.
struct Wave {
    amps: [f64; 3],
    freqs: [f64; 3],
    phases: [f64; 3],
    base: f64,
}

impl Wave {
    fn sample(rng: &mut ChaCha8Rng, base: f64, amplitude: f64) -> Self {
        let mut amps = [0.0; 3];
        let mut freqs = [0.0; 3];
        let mut phases = [0.0; 3];
        let mut total = 0.0;
        for i in 0..3 {
            amps[i] = rng.gen_range(0.2..1.0);
            total += amps[i];
            freqs[i] = rng.gen_range(0.5..2.5);
            phases[i] = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        let scale = if total > 0.0 {
            amplitude * rng.gen_range(0.6..1.0) / total
        } else {
            0.0
        };
        for a in amps.iter_mut() {
            *a *= scale;
        }
        Wave {
            amps,
            freqs,
            phases,
            base,
        }
    }

    fn at(&self, x: f64, width: f64) -> f64 {
        let mut v = self.base;
        for i in 0..3 {
            v += self.amps[i]
                * (self.freqs[i] * std::f64::consts::TAU * x / width + self.phases[i]).sin();
        }
        v
    }
}

const BACKGROUND: f64 = 0.06;

/// Noise-free structure as f64 intensities, deterministic in `cfg.seed`.
fn render_structure(cfg: &PhantomConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, STREAM_STRUCTURE));
    let h = cfg.height as f64;
    let w = cfg.width as f64;
    let band_top = 0.2 * h;
    let band_height = 0.6 * h;
    let spacing = band_height / cfg.layer_count as f64;
    // Keep undulation below half the band spacing so boundaries cannot cross.
    let amplitude = cfg.layer_amplitude.min(0.45 * spacing);

    let boundaries: Vec<Wave> = (0..=cfg.layer_count)
        .map(|k| Wave::sample(&mut rng, band_top + k as f64 * spacing, amplitude))
        .collect();
    let modulations: Vec<Wave> = (0..cfg.layer_count)
        .map(|_| Wave::sample(&mut rng, 0.0, cfg.intensity_modulation))
        .collect();

    let mut out = vec![0.0f64; cfg.height * cfg.width];
    for x in 0..cfg.width {
        let xs = x as f64;
        let bounds: Vec<f64> = boundaries.iter().map(|b| b.at(xs, w)).collect();
        let layer_value: Vec<f64> = (0..cfg.layer_count)
            .map(|k| cfg.layer_contrasts[k] * (1.0 + modulations[k].at(xs, w)))
            .collect();
        // Region r: 0 = background above, 1..=L = bands, L+1 = background
        // below.
        let region_of = |v: f64| -> usize {
            let mut r = 0;
            while r < bounds.len() && v >= bounds[r] {
                r += 1;
            }
            r
        };
        let value_of = |r: usize| -> f64 {
            if r == 0 || r > cfg.layer_count {
                BACKGROUND
            } else {
                layer_value[r - 1]
            }
        };
        for y in 0..cfg.height {
            // Integrate the piecewise-constant column over the pixel's
            // vertical extent so band edges are antialiased.
            let lo = y as f64 - 0.5;
            let hi = y as f64 + 0.5;
            let r_lo = region_of(lo);
            let r_hi = region_of(hi);
            let v = if r_lo == r_hi {
                value_of(r_lo)
            } else if r_hi == r_lo + 1 {
                let edge = bounds[r_lo];
                (edge - lo) * value_of(r_lo) + (hi - edge) * value_of(r_hi)
            } else {
                value_of(region_of(y as f64))
            };
            out[y * cfg.width + x] = v;
        }
    }
    out
}

/// Applies mean-one gamma speckle and rescales to `[0, 1]`.
fn speckle_and_normalize(structure: &[f64], cfg: &PhantomConfig, speckle_seed: u64) -> Image2D {
    let mut rng = ChaCha8Rng::seed_from_u64(speckle_seed);
    let gamma = Gamma::new(cfg.speckle_looks, 1.0 / cfg.speckle_looks)
        .expect("validated speckle_looks");
    let noisy: Vec<f32> = structure
        .iter()
        .map(|&v| (v * gamma.sample(&mut rng)) as f32)
        .collect();
    let img = Image2D::from_vec(cfg.height, cfg.width, noisy).expect("structure buffer shape");
    normalize(&img).expect("speckled phantom is finite")
}

/// One speckled B-scan, deterministic in `cfg.seed`.
pub fn generate_bscan(cfg: &PhantomConfig) -> Result<Image2D> {
    cfg.validate()?;
    let structure = render_structure(cfg);
    Ok(speckle_and_normalize(
        &structure,
        cfg,
        seed::derive(cfg.seed, STREAM_SPECKLE),
    ))
}

/// Fixed/moving pair at full phantom size with a known rigid motion.
///
/// `fixed` is exactly `generate_bscan(cfg)`. The moving image shares its
/// structure but carries an independent speckle realization (drawn from
/// `pair_seed`), then is warped by a truth transform whose components are
/// uniform in `[-range, range]`. Undoing the truth recovers alignment up to
/// speckle decorrelation.
pub fn generate_pair(
    cfg: &PhantomConfig,
    range: f64,
    pair_seed: u64,
) -> Result<(Image2D, Image2D, RigidTransform2D)> {
    cfg.validate()?;
    MotionRange::isotropic(range).validate()?;
    let structure = render_structure(cfg);
    let fixed = speckle_and_normalize(&structure, cfg, seed::derive(cfg.seed, STREAM_SPECKLE));
    let variant =
        speckle_and_normalize(&structure, cfg, seed::derive(pair_seed, STREAM_PAIR_SPECKLE));
    let truth = sample_truth(
        &MotionRange::isotropic(range),
        seed::derive(pair_seed, STREAM_TRUTH),
    );
    let moving = warp(&variant, &truth);
    Ok((fixed, moving, truth))
}

fn sample_truth(range: &MotionRange, truth_seed: u64) -> RigidTransform2D {
    let mut rng = ChaCha8Rng::seed_from_u64(truth_seed);
    let mut draw = |bound: f64| -> f64 {
        if bound == 0.0 {
            0.0
        } else {
            rng.gen_range(-bound..bound)
        }
    };
    RigidTransform2D::new(
        draw(range.translation),
        draw(range.translation),
        draw(range.rotation),
    )
}

/// Windowed fixed/moving pair, the shape consumed by training: a window is
/// sampled around the bright band of the full phantom, cropped from both
/// speckle realizations, and the moving crop is warped by the truth motion.
pub fn generate_windowed_pair(
    cfg: &PhantomConfig,
    window: usize,
    spacing_y: usize,
    spacing_x: usize,
    range: &MotionRange,
    pair_seed: u64,
) -> Result<(Image2D, Image2D, MotionSample)> {
    cfg.validate()?;
    range.validate()?;
    let structure = render_structure(cfg);
    let full = speckle_and_normalize(&structure, cfg, seed::derive(cfg.seed, STREAM_SPECKLE));
    let variant =
        speckle_and_normalize(&structure, cfg, seed::derive(pair_seed, STREAM_PAIR_SPECKLE));
    let mut wrng = ChaCha8Rng::seed_from_u64(seed::derive(pair_seed, STREAM_WINDOW));
    let (cx, cy) = sample_window(&full, window, spacing_y, spacing_x, &mut wrng)?;
    let fixed = crop(&full, cx, cy, window)?;
    let variant_win = crop(&variant, cx, cy, window)?;
    let truth = sample_truth(range, seed::derive(pair_seed, STREAM_TRUTH));
    let moving = warp(&variant_win, &truth);
    Ok((
        fixed,
        moving,
        MotionSample {
            truth,
            window_center: (cx, cy),
        },
    ))
}

/// Picks a window center `(cx, cy)` on the sampling grid, biased into the
/// bright band of rows (rows whose mean exceeds the image mean). The window
/// always fits inside the image; when the bright band is narrower than the
/// window the center collapses to the band midpoint, clamped inside.
pub fn sample_window(
    img: &Image2D,
    size: usize,
    spacing_y: usize,
    spacing_x: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(usize, usize)> {
    if size == 0 || spacing_y == 0 || spacing_x == 0 {
        return Err(Error::Config("window size and spacings must be positive".into()));
    }
    if img.height() < size || img.width() < size {
        return Err(Error::Bounds(format!(
            "{size}x{size} window does not fit a {}x{} image",
            img.height(),
            img.width()
        )));
    }
    let half = size / 2;
    let fit = |dim: usize| (half, dim - size + half);
    let (cx_lo, cx_hi) = fit(img.width());
    let (cy_lo, cy_hi) = fit(img.height());

    // Bright band: first..last row whose mean exceeds the global mean.
    let w = img.width();
    let mut row_means = Vec::with_capacity(img.height());
    for y in 0..img.height() {
        let row = &img.as_slice()[y * w..(y + 1) * w];
        row_means.push(row.iter().map(|&v| v as f64).sum::<f64>() / w as f64);
    }
    let global = row_means.iter().sum::<f64>() / row_means.len() as f64;
    let bright: Vec<usize> = (0..img.height())
        .filter(|&y| row_means[y] > global)
        .collect();
    let (band_lo, band_hi_excl) = match (bright.first(), bright.last()) {
        (Some(&first), Some(&last)) => (first, last + 1),
        _ => (0, img.height()),
    };

    let cy_band_lo = (band_lo + half).max(cy_lo);
    let cy_band_hi = (band_hi_excl + half).saturating_sub(size).min(cy_hi);
    let (cy_lo, cy_hi) = if cy_band_lo <= cy_band_hi {
        (cy_band_lo, cy_band_hi)
    } else {
        let mid = ((band_lo + band_hi_excl) / 2).clamp(cy_lo, cy_hi);
        (mid, mid)
    };

    let cy = grid_pick(rng, cy_lo, cy_hi, spacing_y);
    let cx = grid_pick(rng, cx_lo, cx_hi, spacing_x);
    Ok((cx, cy))
}

/// Uniform draw from the multiples of `spacing` inside `[lo, hi]`; when none
/// exist, the nearest multiple clamped into the interval.
fn grid_pick(rng: &mut ChaCha8Rng, lo: usize, hi: usize, spacing: usize) -> usize {
    let k_lo = lo.div_ceil(spacing);
    let k_hi = hi / spacing;
    if k_lo <= k_hi {
        rng.gen_range(k_lo..=k_hi) * spacing
    } else {
        let mid = (lo + hi) / 2;
        let snapped = (mid + spacing / 2) / spacing * spacing;
        snapped.clamp(lo, hi)
    }
}
