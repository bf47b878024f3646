//! Lossy label-invariant image transforms: zoom-out and darkening.
//!
//! Both leave tensor dimensions unchanged, keep values in `[0, 1]`, and are
//! exact identities at parameter 1.

use crate::error::{Error, Result};
use crate::map::{TransformKind, TransformationSpec};
use crate::tensor::ImageTensorSet;

/// Background value used by [`zoom_out`] unless overridden.
pub const DEFAULT_FILL: f32 = 0.0;

fn check_parameter(name: &str, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("{name} {value} outside (0, 1]")))
    }
}

/// Source coordinate sampled by output pixel `i` when resizing `src`
/// pixels to `dst` pixels with corner-aligned sampling. A single output
/// pixel samples the centre of the source.
fn source_coord(i: usize, src: usize, dst: usize) -> f64 {
    if dst == 1 {
        (src - 1) as f64 / 2.0
    } else {
        i as f64 * (src - 1) as f64 / (dst - 1) as f64
    }
}

fn bilinear_resize(plane: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(out_h * out_w);
    for oy in 0..out_h {
        let sy = source_coord(oy, h, out_h);
        let y0 = (sy.floor() as usize).min(h - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = source_coord(ox, w, out_w);
            let x0 = (sx.floor() as usize).min(w - 1);
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            let at = |y: usize, x: usize| f64::from(plane[y * w + x]);
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out.push(v.clamp(0.0, 1.0) as f32);
        }
    }
    out
}

/// Shrinks every plane by `scale` and centres it on a canvas of the
/// original size filled with `fill`.
///
/// The shrunken plane is `round(scale*H) x round(scale*W)` (at least 1x1)
/// and its top-left corner sits at `((H - h) / 2, (W - w) / 2)`, rounding
/// down.
pub fn zoom_out_with_fill(
    images: &ImageTensorSet,
    scale: f64,
    fill: f32,
) -> Result<ImageTensorSet> {
    check_parameter("zoom scale", scale)?;
    if !(0.0..=1.0).contains(&fill) {
        return Err(Error::domain(format!("fill value {fill} outside [0, 1]")));
    }
    let [n, c, h, w] = images.dims();
    let out_h = ((scale * h as f64).round() as usize).clamp(1, h);
    let out_w = ((scale * w as f64).round() as usize).clamp(1, w);
    let top = (h - out_h) / 2;
    let left = (w - out_w) / 2;
    let mut values = Vec::with_capacity(images.values().len());
    for plane in images.planes() {
        let small = bilinear_resize(plane, h, w, out_h, out_w);
        let mut canvas = vec![fill; h * w];
        for y in 0..out_h {
            let dst = (top + y) * w + left;
            canvas[dst..dst + out_w].copy_from_slice(&small[y * out_w..(y + 1) * out_w]);
        }
        values.extend(canvas);
    }
    ImageTensorSet::new([n, c, h, w], values)
}

/// [`zoom_out_with_fill`] with a black background.
pub fn zoom_out(images: &ImageTensorSet, scale: f64) -> Result<ImageTensorSet> {
    zoom_out_with_fill(images, scale, DEFAULT_FILL)
}

/// Multiplies every value by `factor`, clamping to `[0, 1]`.
pub fn brightness(images: &ImageTensorSet, factor: f64) -> Result<ImageTensorSet> {
    check_parameter("brightness factor", factor)?;
    let values = images
        .values()
        .iter()
        .map(|&v| ((f64::from(v) * factor).clamp(0.0, 1.0)) as f32)
        .collect();
    ImageTensorSet::new(images.dims(), values)
}

/// Applies an image transformation spec. Synthetic specs act on logits,
/// not images, and are rejected here.
pub fn apply_spec(
    images: &ImageTensorSet,
    spec: &TransformationSpec,
    fill: f32,
) -> Result<ImageTensorSet> {
    match spec.kind() {
        TransformKind::ZoomOut => zoom_out_with_fill(images, spec.parameter(), fill),
        TransformKind::Brightness => brightness(images, spec.parameter()),
        TransformKind::SyntheticLossy => Err(Error::contract(
            "synthetic_lossy transformations apply to logits, not images",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tensor(dims: [usize; 4], values: Vec<f32>) -> ImageTensorSet {
        ImageTensorSet::new(dims, values).unwrap()
    }

    #[test]
    fn zoom_two_by_two_to_single_pixel() {
        let t = tensor([1, 1, 2, 2], vec![0.0, 1.0, 1.0, 0.0]);
        let z = zoom_out(&t, 0.5).unwrap();
        assert_eq!(z.values(), &[0.5, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zoom_four_by_four_half() {
        // 2x2 result sampled at the corners, centred at offset (1, 1)
        let vals: Vec<f32> = (0..16).map(|v| v as f32 / 15.0).collect();
        let t = tensor([1, 1, 4, 4], vals.clone());
        let z = zoom_out(&t, 0.5).unwrap();
        let v = z.values();
        assert_eq!(v[5], vals[0]);
        assert_eq!(v[6], vals[3]);
        assert_eq!(v[9], vals[12]);
        assert_eq!(v[10], vals[15]);
        assert_eq!(v.iter().filter(|&&x| x == 0.0).count(), 13);
    }

    #[test]
    fn zoom_fill_value() {
        let t = tensor([1, 1, 3, 3], vec![1.0; 9]);
        let z = zoom_out_with_fill(&t, 0.34, 0.25).unwrap();
        assert_eq!(
            z.values(),
            &[0.25, 0.25, 0.25, 0.25, 1.0, 0.25, 0.25, 0.25, 0.25]
        );
        assert!(zoom_out_with_fill(&t, 0.5, 2.0).is_err());
    }

    #[test]
    fn parameters_out_of_range() {
        let t = tensor([1, 1, 1, 1], vec![0.5]);
        for bad in [0.0, -0.5, 1.01, f64::NAN] {
            assert!(matches!(zoom_out(&t, bad), Err(Error::Domain(_))));
            assert!(matches!(brightness(&t, bad), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn brightness_arithmetic() {
        let t = tensor([1, 1, 1, 2], vec![0.5, 1.0]);
        assert_eq!(brightness(&t, 0.5).unwrap().values(), &[0.25, 0.5]);
        assert_eq!(brightness(&t, 1.0).unwrap(), t);
    }

    #[test]
    fn spec_dispatch() {
        let t = tensor([1, 1, 2, 2], vec![0.2; 4]);
        let b = TransformationSpec::new(TransformKind::Brightness, 0.5).unwrap();
        assert_eq!(
            apply_spec(&t, &b, 0.0).unwrap(),
            brightness(&t, 0.5).unwrap()
        );
        let s = TransformationSpec::new(TransformKind::SyntheticLossy, 0.5).unwrap();
        assert!(apply_spec(&t, &s, 0.0).is_err());
    }
}
