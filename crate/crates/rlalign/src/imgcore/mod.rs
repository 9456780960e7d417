//! Image container, rigid transforms, and the geometry ops built on them.
//!
//! Conventions used throughout the crate:
//!
//! * images are row-major `f32`, intensities nominally in `[0, 1]`
//!   (difference images are signed and live in `[-1, 1]`),
//! * a rigid transform is `(tx, ty, theta)` with translations in pixels and
//!   the rotation in degrees, pivoting about the image center
//!   `((w-1)/2, (h-1)/2)`,
//! * warping maps output pixels back through the inverse transform and
//!   samples bilinearly, with zero fill outside the source.

mod io;

pub use io::{read_image, read_img1, read_pgm, write_img1};

use crate::error::{Error, Result};

/// Row-major single-channel float image.
#[derive(Clone, Debug, PartialEq)]
pub struct Image2D {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image2D {
    /// All-zero image of the given shape.
    pub fn new(height: usize, width: usize) -> Self {
        Image2D {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Wraps an existing buffer; `data.len()` must equal `height * width`.
    pub fn from_vec(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "buffer holds {} values, shape {}x{} needs {}",
                data.len(),
                height,
                width,
                height * width
            )));
        }
        Ok(Image2D {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        debug_assert!(y < self.height && x < self.width);
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        debug_assert!(y < self.height && x < self.width);
        self.data[y * self.width + x] = v;
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f32] {
        &mut self.data
    }

    /// True when every pixel is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn same_shape(&self, other: &Image2D) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Rigid 2D transform: translate by `(tx, ty)` pixels and rotate by
/// `theta_deg` degrees about the image center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform2D {
    pub tx: f64,
    pub ty: f64,
    pub theta_deg: f64,
}

impl RigidTransform2D {
    pub fn new(tx: f64, ty: f64, theta_deg: f64) -> Self {
        RigidTransform2D { tx, ty, theta_deg }
    }

    pub fn identity() -> Self {
        RigidTransform2D {
            tx: 0.0,
            ty: 0.0,
            theta_deg: 0.0,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.tx == 0.0 && self.ty == 0.0 && self.theta_deg == 0.0
    }

    /// Parameters as `[tx, ty, theta_deg]`.
    pub fn params(&self) -> [f64; 3] {
        [self.tx, self.ty, self.theta_deg]
    }

    /// Euclidean distance in parameter space (pixels and degrees mixed).
    pub fn param_distance(&self, other: &RigidTransform2D) -> f64 {
        let dx = self.tx - other.tx;
        let dy = self.ty - other.ty;
        let dr = self.theta_deg - other.theta_deg;
        (dx * dx + dy * dy + dr * dr).sqrt()
    }

    /// Applies the forward map to a point, pivoting about `(cx, cy)`.
    fn apply(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        let rad = self.theta_deg.to_radians();
        let (sin, cos) = rad.sin_cos();
        let dx = x - cx;
        let dy = y - cy;
        (
            cos * dx - sin * dy + cx + self.tx,
            sin * dx + cos * dy + cy + self.ty,
        )
    }

    /// `self` after `other`: applying the result equals applying `other`
    /// first, then `self`.
    pub fn compose(&self, other: &RigidTransform2D) -> RigidTransform2D {
        let rad = self.theta_deg.to_radians();
        let (sin, cos) = rad.sin_cos();
        RigidTransform2D {
            tx: cos * other.tx - sin * other.ty + self.tx,
            ty: sin * other.tx + cos * other.ty + self.ty,
            theta_deg: self.theta_deg + other.theta_deg,
        }
    }

    pub fn invert(&self) -> RigidTransform2D {
        let rad = (-self.theta_deg).to_radians();
        let (sin, cos) = rad.sin_cos();
        RigidTransform2D {
            tx: -(cos * self.tx - sin * self.ty),
            ty: -(sin * self.tx + cos * self.ty),
            theta_deg: -self.theta_deg,
        }
    }
}

/// Bilinear sample at fractional coordinates. Taps outside the image
/// contribute zero, so samples fade out smoothly across the border.
fn bilinear(img: &Image2D, x: f64, y: f64) -> f64 {
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as i64;
    let y0 = y0 as i64;

    let tap = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= img.height as i64 || xx >= img.width as i64 {
            0.0
        } else {
            img.data[yy as usize * img.width + xx as usize] as f64
        }
    };

    let top = tap(y0, x0) * (1.0 - fx) + tap(y0, x0 + 1) * fx;
    let bot = tap(y0 + 1, x0) * (1.0 - fx) + tap(y0 + 1, x0 + 1) * fx;
    top * (1.0 - fy) + bot * fy
}

/// Resamples `img` under the rigid transform `t`: content moves in the +t
/// direction, uncovered pixels are zero-filled. Output pixels are found by
/// mapping back through the inverse and sampling bilinearly.
pub fn warp(img: &Image2D, t: &RigidTransform2D) -> Image2D {
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    let inv = t.invert();
    let mut out = Image2D::new(img.height, img.width);
    for y in 0..img.height {
        for x in 0..img.width {
            let (sx, sy) = inv.apply(x as f64, y as f64, cx, cy);
            if sx <= -1.0 || sy <= -1.0 || sx >= img.width as f64 || sy >= img.height as f64 {
                continue;
            }
            out.data[y * img.width + x] = bilinear(img, sx, sy) as f32;
        }
    }
    out
}

/// Elementwise `a - b`. Values are signed; callers treating the result as an
/// image should expect the `[-1, 1]` range.
pub fn diff(a: &Image2D, b: &Image2D) -> Result<Image2D> {
    a.same_shape(b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| x - y)
        .collect();
    Image2D::from_vec(a.height, a.width, data)
}

/// Square window of side `size` centered at `(cx, cy)`; the top-left corner
/// lands at `(cx - size/2, cy - size/2)`. The window must lie fully inside.
pub fn crop(img: &Image2D, cx: usize, cy: usize, size: usize) -> Result<Image2D> {
    let half = size / 2;
    let x0 = cx as i64 - half as i64;
    let y0 = cy as i64 - half as i64;
    if size == 0
        || x0 < 0
        || y0 < 0
        || x0 + size as i64 > img.width as i64
        || y0 + size as i64 > img.height as i64
    {
        return Err(Error::Bounds(format!(
            "{size}x{size} window at center ({cx}, {cy}) leaves the {}x{} image",
            img.height, img.width
        )));
    }
    let (x0, y0) = (x0 as usize, y0 as usize);
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        let row = (y0 + y) * img.width + x0;
        data.extend_from_slice(&img.data[row..row + size]);
    }
    Image2D::from_vec(size, size, data)
}

/// Bilinear resample to a new shape with a corner-aligned grid: output
/// corners sample input corners exactly.
pub fn resize(img: &Image2D, height: usize, width: usize) -> Result<Image2D> {
    if height == 0 || width == 0 || img.height == 0 || img.width == 0 {
        return Err(Error::Dimension(format!(
            "resize {}x{} -> {}x{}",
            img.height, img.width, height, width
        )));
    }
    let scale = |out_dim: usize, in_dim: usize| -> f64 {
        if out_dim > 1 {
            (in_dim as f64 - 1.0) / (out_dim as f64 - 1.0)
        } else {
            0.0
        }
    };
    let sy = scale(height, img.height);
    let sx = scale(width, img.width);
    let mut out = Image2D::new(height, width);
    for y in 0..height {
        for x in 0..width {
            out.data[y * width + x] = bilinear(img, x as f64 * sx, y as f64 * sy) as f32;
        }
    }
    Ok(out)
}

/// Affine rescale of intensities so min maps to 0 and max to 1. A constant
/// image maps to all zeros. Non-finite pixels are rejected.
pub fn normalize(img: &Image2D) -> Result<Image2D> {
    if !img.is_finite() {
        return Err(Error::Data("normalize: non-finite pixel".into()));
    }
    if img.is_empty() {
        return Err(Error::Data("normalize: empty image".into()));
    }
    let mut lo = f32::INFINITY;
    let mut hi = f32::NEG_INFINITY;
    for &v in &img.data {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo == hi {
        return Ok(Image2D::new(img.height, img.width));
    }
    let span = hi - lo;
    let data = img.data.iter().map(|v| (v - lo) / span).collect();
    Image2D::from_vec(img.height, img.width, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen::<f32>()).collect();
        Image2D::from_vec(h, w, data).unwrap()
    }

    /// Smooth test image: a mix of low-frequency sinusoids, so bilinear
    /// resampling round trips lose little.
    fn smooth_image(h: usize, w: usize, seed: u64) -> Image2D {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fy = rng.gen_range(0.5..2.0);
        let fx = rng.gen_range(0.5..2.0);
        let py = rng.gen_range(0.0..std::f64::consts::TAU);
        let px = rng.gen_range(0.0..std::f64::consts::TAU);
        let mut img = Image2D::new(h, w);
        for y in 0..h {
            for x in 0..w {
                let v = 0.5
                    + 0.25 * (fy * std::f64::consts::TAU * y as f64 / h as f64 + py).sin()
                    + 0.25 * (fx * std::f64::consts::TAU * x as f64 / w as f64 + px).cos();
                img.set(y, x, v as f32);
            }
        }
        img
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(matches!(
            Image2D::from_vec(4, 4, vec![0.0; 15]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn warp_identity_is_exact() {
        let img = random_image(33, 21, 1);
        let out = warp(&img, &RigidTransform2D::identity());
        assert_eq!(img, out);
    }

    #[test]
    fn warp_shifts_content_right_and_zero_fills() {
        let img = Image2D::from_vec(64, 64, vec![0.5; 64 * 64]).unwrap();
        let out = warp(&img, &RigidTransform2D::new(3.0, 0.0, 0.0));
        for y in 0..64 {
            for x in 0..64 {
                let expect = if x < 3 { 0.0 } else { 0.5 };
                assert_eq!(out.get(y, x), expect, "pixel ({y}, {x})");
            }
        }
    }

    #[test]
    fn warp_integer_translation_moves_pixels_exactly() {
        let img = random_image(20, 20, 2);
        let out = warp(&img, &RigidTransform2D::new(4.0, -2.0, 0.0));
        for y in 0..20usize {
            for x in 0..20usize {
                let sx = x as i64 - 4;
                let sy = y as i64 + 2;
                let expect = if sx < 0 || sy < 0 || sx >= 20 || sy >= 20 {
                    0.0
                } else {
                    img.get(sy as usize, sx as usize)
                };
                assert_eq!(out.get(y, x), expect);
            }
        }
    }

    #[test]
    fn warp_round_trip_is_close_on_the_interior() {
        for seed in 0..20u64 {
            let img = smooth_image(64, 64, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
            let t = RigidTransform2D::new(
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
                rng.gen_range(-5.0..5.0),
            );
            // Interior margin clears the zero-filled band: translations up to
            // 5*sqrt(2) px plus ~4 px of rotation sweep at the corners.
            let back = warp(&warp(&img, &t), &t.invert());
            let mut err = 0.0f64;
            let mut n = 0usize;
            for y in 14..50 {
                for x in 14..50 {
                    err += (back.get(y, x) as f64 - img.get(y, x) as f64).abs();
                    n += 1;
                }
            }
            let mean_err = err / n as f64;
            assert!(mean_err < 0.02, "seed {seed}: mean interior error {mean_err}");
        }
    }

    #[test]
    fn diff_of_equal_images_is_zero() {
        let img = random_image(9, 7, 3);
        let d = diff(&img, &img).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn diff_ones_minus_zeros() {
        let a = Image2D::from_vec(3, 3, vec![1.0; 9]).unwrap();
        let b = Image2D::new(3, 3);
        let d = diff(&a, &b).unwrap();
        assert!(d.as_slice().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn diff_rejects_shape_mismatch() {
        let a = Image2D::new(3, 3);
        let b = Image2D::new(3, 4);
        assert!(matches!(diff(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn crop_window_offset_matches_center() {
        let img = random_image(100, 100, 4);
        let win = crop(&img, 50, 50, 84).unwrap();
        assert_eq!(win.get(0, 0), img.get(8, 8));
        assert_eq!(win.get(83, 83), img.get(91, 91));
    }

    #[test]
    fn crop_full_size_returns_the_image() {
        let img = random_image(40, 40, 5);
        let win = crop(&img, 20, 20, 40).unwrap();
        assert_eq!(img, win);
    }

    #[test]
    fn crop_rejects_windows_leaving_the_image() {
        let img = Image2D::new(50, 50);
        assert!(matches!(crop(&img, 10, 25, 84), Err(Error::Bounds(_))));
        assert!(matches!(crop(&img, 3, 25, 10), Err(Error::Bounds(_))));
    }

    #[test]
    fn resize_to_same_shape_is_exact() {
        let img = random_image(17, 23, 6);
        let out = resize(&img, 17, 23).unwrap();
        assert_eq!(img, out);
    }

    #[test]
    fn resize_matches_direct_bilinear_formula() {
        let img = random_image(4, 4, 7);
        let out = resize(&img, 3, 3).unwrap();
        for y in 0..3usize {
            for x in 0..3usize {
                // Corner-aligned source coordinate and textbook bilinear mix.
                let sy = y as f64 * 1.5;
                let sx = x as f64 * 1.5;
                let y0 = sy.floor() as usize;
                let x0 = sx.floor() as usize;
                let fy = sy - y0 as f64;
                let fx = sx - x0 as f64;
                let y1 = (y0 + 1).min(3);
                let x1 = (x0 + 1).min(3);
                let expect = img.get(y0, x0) as f64 * (1.0 - fy) * (1.0 - fx)
                    + img.get(y0, x1) as f64 * (1.0 - fy) * fx
                    + img.get(y1, x0) as f64 * fy * (1.0 - fx)
                    + img.get(y1, x1) as f64 * fy * fx;
                assert!((out.get(y, x) as f64 - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn resize_constant_stays_constant() {
        let img = Image2D::from_vec(8, 8, vec![0.25; 64]).unwrap();
        let out = resize(&img, 5, 13).unwrap();
        assert!(out.as_slice().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn normalize_maps_extremes_to_unit_range() {
        let img = Image2D::from_vec(1, 3, vec![2.0, 4.0, 6.0]).unwrap();
        let out = normalize(&img).unwrap();
        assert_eq!(out.as_slice(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_constant_gives_zeros() {
        let img = Image2D::from_vec(2, 2, vec![3.0; 4]).unwrap();
        let out = normalize(&img).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_rejects_nan() {
        let img = Image2D::from_vec(1, 2, vec![0.0, f32::NAN]).unwrap();
        assert!(matches!(normalize(&img), Err(Error::Data(_))));
    }

    #[test]
    fn compose_with_identity_is_exact() {
        let t = RigidTransform2D::new(1.25, -3.5, 4.75);
        let id = RigidTransform2D::identity();
        assert_eq!(t.compose(&id), t);
        assert_eq!(id.compose(&t), t);
    }

    #[test]
    fn compose_matches_pointwise_application() {
        let a = RigidTransform2D::new(2.0, -1.0, 10.0);
        let b = RigidTransform2D::new(-3.0, 4.0, -25.0);
        let ab = a.compose(&b);
        let (cx, cy) = (41.5, 41.5);
        for &(x, y) in &[(0.0, 0.0), (10.0, 70.0), (83.0, 41.0)] {
            let (bx, by) = b.apply(x, y, cx, cy);
            let (ex, ey) = a.apply(bx, by, cx, cy);
            let (gx, gy) = ab.apply(x, y, cx, cy);
            assert!((ex - gx).abs() < 1e-9 && (ey - gy).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn invert_round_trips(tx in -10.0f64..10.0, ty in -10.0f64..10.0, th in -180.0f64..180.0) {
            let t = RigidTransform2D::new(tx, ty, th);
            let back = t.invert().invert();
            prop_assert!((back.tx - t.tx).abs() < 1e-9);
            prop_assert!((back.ty - t.ty).abs() < 1e-9);
            prop_assert!((back.theta_deg - t.theta_deg).abs() < 1e-9);
        }

        #[test]
        fn compose_with_inverse_is_identity(tx in -10.0f64..10.0, ty in -10.0f64..10.0, th in -180.0f64..180.0) {
            let t = RigidTransform2D::new(tx, ty, th);
            let id = t.compose(&t.invert());
            prop_assert!(id.tx.abs() < 1e-9);
            prop_assert!(id.ty.abs() < 1e-9);
            prop_assert!(id.theta_deg.abs() < 1e-9);
        }

        #[test]
        fn diff_is_antisymmetric(seed in 0u64..1000) {
            let a = random_image(6, 6, seed);
            let b = random_image(6, 6, seed ^ 0xffff);
            let ab = diff(&a, &b).unwrap();
            let ba = diff(&b, &a).unwrap();
            for (x, y) in ab.as_slice().iter().zip(ba.as_slice()) {
                prop_assert_eq!(*x, -*y);
            }
        }

        #[test]
        fn normalize_is_idempotent(seed in 0u64..1000) {
            let img = random_image(5, 5, seed);
            let once = normalize(&img).unwrap();
            let twice = normalize(&once).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
