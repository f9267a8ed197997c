//! Geometric warps: rotation, central scaling and diagonal translation.
//!
//! All warps run backwards: each output pixel is mapped through the inverse
//! transform into the source frame and bilinearly sampled there, with
//! out-of-range taps contributing the fill value (black for images, zero
//! for heatmaps). The image center is the pixel-center point
//! ((W-1)/2, (H-1)/2), so a 90 degree rotation of a square image permutes
//! pixel positions exactly.

use image::RgbImage;

/// Affine map `(x, y) -> (a x + b y + tx, c x + d y + ty)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Affine {
    pub a: f64,
    pub b: f64,
    pub tx: f64,
    pub c: f64,
    pub d: f64,
    pub ty: f64,
}

impl Affine {
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.a * x + self.b * y + self.tx,
            self.c * x + self.d * y + self.ty,
        )
    }

    /// Rotation by `degrees` about `(cx, cy)`, y axis pointing down.
    pub fn rotation_about(degrees: f64, cx: f64, cy: f64) -> Self {
        let rad = degrees.to_radians();
        let (sin, cos) = rad.sin_cos();
        Affine {
            a: cos,
            b: -sin,
            tx: cx - cos * cx + sin * cy,
            c: sin,
            d: cos,
            ty: cy - sin * cx - cos * cy,
        }
    }

    pub fn scale_about(factor: f64, cx: f64, cy: f64) -> Self {
        Affine {
            a: factor,
            b: 0.0,
            tx: cx * (1.0 - factor),
            c: 0.0,
            d: factor,
            ty: cy * (1.0 - factor),
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Affine {
            a: 1.0,
            b: 0.0,
            tx: dx,
            c: 0.0,
            d: 1.0,
            ty: dy,
        }
    }
}

/// Pixel-center coordinates of the image center.
pub(crate) fn center(width: usize, height: usize) -> (f64, f64) {
    ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0)
}

/// Signed whole-pixel shift for a translation fraction `t` of each side.
pub(crate) fn translate_pixels(t: f64, width: usize, height: usize) -> (f64, f64) {
    ((t * width as f64).round(), (t * height as f64).round())
}

/// Bilinear taps of a source coordinate: up to four (index, weight) pairs
/// per axis, out-of-range taps dropped.
#[inline]
fn axis_taps(coord: f64, len: usize) -> [(usize, f64); 2] {
    let floor = coord.floor();
    let frac = coord - floor;
    let i0 = floor as isize;
    let i1 = i0 + 1;
    let mut taps = [(usize::MAX, 0.0); 2];
    if i0 >= 0 && (i0 as usize) < len {
        taps[0] = (i0 as usize, 1.0 - frac);
    }
    if frac > 0.0 && i1 >= 0 && (i1 as usize) < len {
        taps[1] = (i1 as usize, frac);
    }
    taps
}

/// Sample one plane at a fractional source coordinate; out-of-range taps
/// contribute zero.
#[inline]
fn bilinear(plane: &[f64], width: usize, height: usize, sx: f64, sy: f64) -> f64 {
    let xs = axis_taps(sx, width);
    let ys = axis_taps(sy, height);
    let mut acc = 0.0;
    for &(yi, wy) in ys.iter().filter(|t| t.0 != usize::MAX) {
        for &(xi, wx) in xs.iter().filter(|t| t.0 != usize::MAX) {
            acc += wy * wx * plane[yi * width + xi];
        }
    }
    acc
}

/// Warp an RGB image through `inv` (the output-to-source map); pixels with
/// any missing source tap shade toward black.
pub(crate) fn warp_image(image: &RgbImage, inv: &Affine) -> RgbImage {
    let (w, h) = image.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut planes = vec![vec![0.0f64; w * h]; 3];
    for (i, p) in image.pixels().enumerate() {
        for c in 0..3 {
            planes[c][i] = p[c] as f64;
        }
    }
    let mut out = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let px = out.get_pixel_mut(x as u32, y as u32);
            for c in 0..3 {
                px[c] = bilinear(&planes[c], w, h, sx, sy).round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    out
}

/// Warp a single f32 plane through `inv` with zero fill.
pub(crate) fn warp_plane(plane: &[f32], width: usize, height: usize, inv: &Affine) -> Vec<f32> {
    let src: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    let mut out = vec![0.0f32; width * height];
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            out[y * width + x] = bilinear(&src, width, height, sx, sy) as f32;
        }
    }
    out
}

/// True where the inverse-mapped coordinate has full bilinear support, i.e.
/// every tap with nonzero weight lies inside the source frame. Equivalent to
/// warping an all-ones field and keeping the pixels that stay at 1.
pub(crate) fn support_mask(width: usize, height: usize, inv: &Affine) -> Vec<bool> {
    let mut out = vec![false; width * height];
    let (max_x, max_y) = (width as f64 - 1.0, height as f64 - 1.0);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            out[y * width + x] = (0.0..=max_x).contains(&sx) && (0.0..=max_y).contains(&sy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rotation_about_center_is_exact_on_quarter_turns() {
        let (cx, cy) = center(5, 5);
        let fwd = Affine::rotation_about(90.0, cx, cy);
        // (x=4, y=2) is 2 right of center; a quarter turn with y down moves
        // it 2 below center.
        let (x, y) = fwd.apply(4.0, 2.0);
        assert!((x - 2.0).abs() < 1e-12 && (y - 4.0).abs() < 1e-12);
    }

    #[test]
    fn inverse_pairs_cancel() {
        let (cx, cy) = center(7, 9);
        let fwd = Affine::rotation_about(33.0, cx, cy);
        let inv = Affine::rotation_about(-33.0, cx, cy);
        let (x, y) = fwd.apply(1.5, 6.25);
        let (bx, by) = inv.apply(x, y);
        assert!((bx - 1.5).abs() < 1e-12 && (by - 6.25).abs() < 1e-12);

        let fwd = Affine::scale_about(1.3, cx, cy);
        let inv = Affine::scale_about(1.0 / 1.3, cx, cy);
        let (x, y) = fwd.apply(2.0, 3.0);
        let (bx, by) = inv.apply(x, y);
        assert!((bx - 2.0).abs() < 1e-12 && (by - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bilinear_degenerates_to_lookup_on_integers() {
        let plane: Vec<f64> = (0..12).map(|v| v as f64).collect();
        assert_eq!(bilinear(&plane, 4, 3, 2.0, 1.0), 6.0);
        assert_eq!(bilinear(&plane, 4, 3, 3.0, 2.0), 11.0);
        // Halfway between columns 1 and 2 of row 0.
        assert_eq!(bilinear(&plane, 4, 3, 1.5, 0.0), 1.5);
        // Fully outside.
        assert_eq!(bilinear(&plane, 4, 3, -2.0, 0.0), 0.0);
    }

    #[test]
    fn support_mask_counts_translation_exactly() {
        let inv = Affine::translation(-6.0, -6.0);
        let mask = support_mask(100, 100, &inv);
        assert_eq!(mask.iter().filter(|&&m| m).count(), 94 * 94);
    }

    #[test]
    fn warp_plane_shifts_by_integers_exactly() {
        let mut plane = vec![0.0f32; 16];
        plane[5] = 3.0; // (x=1, y=1) in a 4x4
        let inv = Affine::translation(-1.0, -2.0);
        let out = warp_plane(&plane, 4, 4, &inv);
        let mut expected = vec![0.0f32; 16];
        expected[(1 + 2) * 4 + (1 + 1)] = 3.0;
        assert_eq!(out, expected);
    }

    #[test]
    fn translate_pixels_rounds_half_away_from_zero() {
        assert_eq!(translate_pixels(0.06, 100, 100), (6.0, 6.0));
        assert_eq!(translate_pixels(0.065, 100, 100), (7.0, 7.0));
        assert_eq!(translate_pixels(-0.065, 100, 100), (-7.0, -7.0));
        assert_eq!(translate_pixels(0.05, 50, 30), (3.0, 2.0));
    }
}
