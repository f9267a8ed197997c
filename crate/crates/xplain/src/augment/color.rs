//! HSV color shifts on byte images.
//!
//! Channels are kept as floats through the whole conversion (hue in byte-hue
//! units, 1 unit = 2 degrees, period 180; saturation and value on the byte
//! scale) and rounded half away from zero exactly once at the end. This
//! keeps rgb -> hsv -> rgb exact and makes a full hue cycle land within one
//! count per channel.

use image::RgbImage;

/// RGB bytes to (h, s, v) with h in [0, 180), s and v in [0, 255].
pub(crate) fn rgb_to_hsv(r: u8, g: u8, b: u8) -> (f64, f64, f64) {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    let v = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = v - min;
    let s = if v == 0.0 { 0.0 } else { delta / v * 255.0 };
    let h = if delta == 0.0 {
        0.0
    } else if v == r {
        let h = 30.0 * (g - b) / delta;
        if h < 0.0 {
            h + 180.0
        } else {
            h
        }
    } else if v == g {
        60.0 + 30.0 * (b - r) / delta
    } else {
        120.0 + 30.0 * (r - g) / delta
    };
    (h, s, v)
}

fn round_byte(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

/// (h, s, v) back to RGB bytes; the only rounding in the pipeline.
pub(crate) fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (u8, u8, u8) {
    let s = (s / 255.0).clamp(0.0, 1.0);
    let v = (v / 255.0).clamp(0.0, 1.0);
    let h6 = (h / 30.0).rem_euclid(6.0);
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let m = v - c;
    let (r1, g1, b1) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (
        round_byte((r1 + m) * 255.0),
        round_byte((g1 + m) * 255.0),
        round_byte((b1 + m) * 255.0),
    )
}

/// Shift every pixel in HSV space: hue wraps with period 180, saturation and
/// value clamp to the byte range.
pub(crate) fn shift_hsv(image: &RgbImage, dh: f64, ds: f64, dv: f64) -> RgbImage {
    let (w, h) = image.dimensions();
    let mut out = RgbImage::new(w, h);
    for (src, dst) in image.pixels().zip(out.pixels_mut()) {
        let (hue, sat, val) = rgb_to_hsv(src[0], src[1], src[2]);
        let hue = (hue + dh).rem_euclid(180.0);
        let sat = (sat + ds).clamp(0.0, 255.0);
        let val = (val + dv).clamp(0.0, 255.0);
        let (r, g, b) = hsv_to_rgb(hue, sat, val);
        *dst = image::Rgb([r, g, b]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_conversions() {
        assert_eq!(rgb_to_hsv(255, 0, 0), (0.0, 255.0, 255.0));
        let (h, s, v) = rgb_to_hsv(0, 255, 0);
        assert_eq!((h, s, v), (60.0, 255.0, 255.0));
        let (h, s, v) = rgb_to_hsv(0, 0, 255);
        assert_eq!((h, s, v), (120.0, 255.0, 255.0));
        let (h, s, v) = rgb_to_hsv(128, 128, 128);
        assert_eq!((h, s), (0.0, 0.0));
        assert_eq!(v, 128.0);
        assert_eq!(hsv_to_rgb(0.0, 255.0, 255.0), (255, 0, 0));
        assert_eq!(hsv_to_rgb(90.0, 255.0, 255.0), (0, 255, 255));
    }

    #[test]
    fn round_trip_is_exact_on_strided_color_cube() {
        for r in (0..=255u16).step_by(7) {
            for g in (0..=255u16).step_by(7) {
                for b in (0..=255u16).step_by(7) {
                    let (h, s, v) = rgb_to_hsv(r as u8, g as u8, b as u8);
                    let back = hsv_to_rgb(h, s, v);
                    let dr = (back.0 as i32 - r as i32).abs();
                    let dg = (back.1 as i32 - g as i32).abs();
                    let db = (back.2 as i32 - b as i32).abs();
                    assert!(
                        dr <= 1 && dg <= 1 && db <= 1,
                        "({r},{g},{b}) -> ({h},{s},{v}) -> {back:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn hue_negative_branch_wraps_into_range() {
        // v == r with b > g lands in the negative branch.
        let (h, _, _) = rgb_to_hsv(200, 10, 100);
        assert!((0.0..180.0).contains(&h));
        assert!(h > 90.0);
    }

    fn sample_image() -> RgbImage {
        let mut img = RgbImage::new(4, 3);
        let colors = [
            [255u8, 0, 0],
            [0, 200, 40],
            [30, 60, 220],
            [128, 128, 128],
            [0, 0, 0],
            [255, 255, 255],
            [17, 200, 90],
            [250, 240, 10],
            [90, 30, 200],
            [5, 5, 6],
            [200, 100, 50],
            [40, 220, 210],
        ];
        for (i, p) in img.pixels_mut().enumerate() {
            *p = image::Rgb(colors[i]);
        }
        img
    }

    #[test]
    fn brightness_shift_is_monotone_in_value() {
        let img = sample_image();
        let a = shift_hsv(&img, 0.0, 0.0, 20.0);
        let b = shift_hsv(&img, 0.0, 0.0, 60.0);
        for (pa, pb) in a.pixels().zip(b.pixels()) {
            let va = pa.0.iter().copied().max().unwrap();
            let vb = pb.0.iter().copied().max().unwrap();
            assert!(vb >= va);
        }
    }

    #[test]
    fn saturation_shift_clamps() {
        let img = sample_image();
        let up = shift_hsv(&img, 0.0, 400.0, 0.0);
        for p in up.pixels() {
            let (_, s, v) = rgb_to_hsv(p[0], p[1], p[2]);
            // Gray pixels stay gray only at v == 0; everything else is
            // fully saturated after a +400 shift.
            if v > 0.0 {
                assert!(s >= 254.0, "pixel {:?} has saturation {s}", p.0);
            }
        }
        let down = shift_hsv(&img, 0.0, -400.0, 0.0);
        for p in down.pixels() {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn full_hue_cycle_returns_within_one_count() {
        let img = sample_image();
        let cycled = shift_hsv(&img, 180.0, 0.0, 0.0);
        for (a, b) in img.pixels().zip(cycled.pixels()) {
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 1);
            }
        }
    }
}
