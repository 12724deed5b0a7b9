//! Edge-aware inverse-depth smoothness.

use serde::{Deserialize, Serialize};

use super::photometric::LossMap;
use crate::error::{Error, Result};
use crate::raster::{ImageBuffer, InverseDepthMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SmoothnessOrder {
    First,
    #[default]
    Second,
}

type Stencil = &'static [(isize, isize, f64)];

const XX: Stencil = &[(-1, 0, 1.0), (0, 0, -2.0), (1, 0, 1.0)];
const YY: Stencil = &[(0, -1, 1.0), (0, 0, -2.0), (0, 1, 1.0)];
// Forward differences in x then y; the xy and yx terms coincide.
const XY: Stencil = &[(0, 0, 1.0), (1, 0, -1.0), (0, 1, -1.0), (1, 1, 1.0)];
const DX: Stencil = &[(0, 0, -1.0), (1, 0, 1.0)];
const DY: Stencil = &[(0, 0, -1.0), (0, 1, 1.0)];

fn stencils(order: SmoothnessOrder) -> &'static [(Stencil, f64)] {
    match order {
        SmoothnessOrder::Second => &[(XX, 1.0), (XY, 2.0), (YY, 1.0)],
        SmoothnessOrder::First => &[(DX, 1.0), (DY, 1.0)],
    }
}

#[inline]
fn apply(st: Stencil, v: &[f64], w: usize, x: usize, y: usize) -> f64 {
    st.iter()
        .map(|&(dx, dy, c)| c * v[(y as isize + dy) as usize * w + (x as isize + dx) as usize])
        .sum()
}

/// Pixels where the loss is defined: away from the border and with the
/// whole 3x3 neighbourhood valid.
pub(crate) fn interior_mask(valid: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w - 1 {
            out[y * w + x] = (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| valid[yy * w + xx]));
        }
    }
    out
}

/// Signs of every stencil response at the interior pixels.
pub(crate) fn smoothness_signs(
    values: &[f64],
    valid: &[bool],
    w: usize,
    h: usize,
    order: SmoothnessOrder,
) -> Vec<bool> {
    if w < 3 || h < 3 {
        return Vec::new();
    }
    let inside = interior_mask(valid, w, h);
    let mut out = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if inside[y * w + x] {
                out.extend(
                    stencils(order)
                        .iter()
                        .map(|(st, _)| apply(st, values, w, x, y) > 0.0),
                );
            }
        }
    }
    out
}

/// Smoothness value, per-pixel map and (optionally) gradient with respect
/// to `values`. `gray` is a single-channel image of the same size.
pub(crate) fn smoothness_terms(
    values: &[f64],
    valid: &[bool],
    gray: &[f64],
    w: usize,
    h: usize,
    order: SmoothnessOrder,
    want_gradient: bool,
) -> Result<(LossMap, Option<Vec<f64>>)> {
    if w < 3 || h < 3 {
        return Err(Error::Shape(format!(
            "smoothness needs at least 3x3 pixels, got {w}x{h}"
        )));
    }
    let inside = interior_mask(valid, w, h);
    let n = inside.iter().filter(|&&b| b).count();
    if n == 0 {
        return Err(Error::EmptyInput(
            "no valid interior pixels for smoothness".into(),
        ));
    }
    let inv_n = 1.0 / n as f64;
    let mut map = vec![0.0; w * h];
    let mut grad = want_gradient.then(|| vec![0.0; w * h]);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let i = y * w + x;
            if !inside[i] {
                continue;
            }
            let mut acc = 0.0;
            for &(st, mult) in stencils(order) {
                let s = apply(st, values, w, x, y);
                let damp = (-apply(st, gray, w, x, y).abs()).exp();
                acc += mult * s.abs() * damp;
                if let Some(g) = grad.as_mut() {
                    let sign = if s > 0.0 {
                        1.0
                    } else if s < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    let k = inv_n * mult * damp * sign;
                    for &(dx, dy, c) in st {
                        g[(y as isize + dy) as usize * w + (x as isize + dx) as usize] += k * c;
                    }
                }
            }
            map[i] = acc;
        }
    }
    let value = map.iter().sum::<f64>() * inv_n;
    Ok((LossMap { value, map }, grad))
}

/// Second-order edge-aware smoothness of `inv_depth`, damped by the
/// matching second derivatives of `image` (channel mean).
pub fn smoothness_loss(inv_depth: &InverseDepthMap, image: &ImageBuffer) -> Result<LossMap> {
    smoothness_loss_with(inv_depth, image, SmoothnessOrder::Second)
}

pub fn smoothness_loss_with(
    inv_depth: &InverseDepthMap,
    image: &ImageBuffer,
    order: SmoothnessOrder,
) -> Result<LossMap> {
    if inv_depth.width() != image.width() || inv_depth.height() != image.height() {
        return Err(Error::Shape("inverse depth and image sizes differ".into()));
    }
    let gray = image.to_gray();
    Ok(smoothness_terms(
        inv_depth.values(),
        inv_depth.valid(),
        gray.data(),
        image.width(),
        image.height(),
        order,
        false,
    )?
    .0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(w: usize, h: usize, f: impl Fn(f64, f64) -> f64) -> InverseDepthMap {
        let v = (0..w * h)
            .map(|i| f((i % w) as f64, (i / w) as f64))
            .collect();
        InverseDepthMap::dense(w, h, v).unwrap()
    }

    #[test]
    fn constant_and_affine_vanish() {
        let img =
            ImageBuffer::from_fn(8, 6, 1, |x, y, _| ((x * 7 + y * 3) % 5) as f64 / 4.0).unwrap();
        assert_eq!(
            smoothness_loss(&map(8, 6, |_, _| 2.0), &img).unwrap().value,
            0.0
        );
        let l = smoothness_loss(&map(8, 6, |x, y| 1.0 + 0.25 * x + 0.5 * y), &img).unwrap();
        assert!(l.value.abs() < 1e-14);
    }

    #[test]
    fn quadratic_gives_two() {
        let img = ImageBuffer::filled(7, 5, 1, 0.5).unwrap();
        let l = smoothness_loss(&map(7, 5, |x, _| 1.0 + x * x), &img).unwrap();
        assert!((l.value - 2.0).abs() < 1e-12);
        assert!(l.map.iter().all(|&v| v == 0.0 || (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn image_edges_damp_the_penalty() {
        let flat = ImageBuffer::filled(7, 5, 1, 0.5).unwrap();
        let edgy =
            ImageBuffer::from_fn(7, 5, 1, |x, _, _| if x % 2 == 0 { 0.0 } else { 1.0 }).unwrap();
        let d = map(7, 5, |x, _| 1.0 + x * x);
        assert!(
            smoothness_loss(&d, &edgy).unwrap().value < smoothness_loss(&d, &flat).unwrap().value
        );
    }

    #[test]
    fn too_small_is_rejected() {
        let img = ImageBuffer::filled(2, 5, 1, 0.5).unwrap();
        assert!(matches!(
            smoothness_loss(&map(2, 5, |_, _| 1.0), &img),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn quadratic_gradient_is_the_stencil_adjoint() {
        // d = x^2 (+1): only the xx term is active, with sign +1 everywhere,
        // so the gradient is the [1,-2,1] adjoint of the indicator of the
        // interior, divided by the interior count.
        let (w, h) = (7, 5);
        let d = map(w, h, |x, _| 1.0 + x * x);
        let gray = vec![0.5; w * h];
        let (_, g) = smoothness_terms(
            d.values(),
            d.valid(),
            &gray,
            w,
            h,
            SmoothnessOrder::Second,
            true,
        )
        .unwrap();
        let g = g.unwrap();
        let n = ((w - 2) * (h - 2)) as f64;
        for y in 0..h {
            for x in 0..w {
                let row_inside = y >= 1 && y + 1 < h;
                let mut want = 0.0;
                if row_inside {
                    for (cx, c) in [
                        (x as isize - 1, 1.0),
                        (x as isize, -2.0),
                        (x as isize + 1, 1.0),
                    ] {
                        if cx >= 1 && cx <= w as isize - 2 {
                            want += c;
                        }
                    }
                }
                assert!((g[y * w + x] - want / n).abs() < 1e-15, "({x},{y})");
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (w, h) = (6, 5);
        let vals: Vec<f64> = (0..w * h).map(|i| 2.0 + (i as f64 * 1.37).sin()).collect();
        let valid = vec![true; w * h];
        let gray: Vec<f64> = (0..w * h).map(|i| ((i * 13) % 11) as f64 / 10.0).collect();
        for order in [SmoothnessOrder::First, SmoothnessOrder::Second] {
            let f = |v: &[f64]| {
                smoothness_terms(v, &valid, &gray, w, h, order, false)
                    .unwrap()
                    .0
                    .value
            };
            let (_, g) = smoothness_terms(&vals, &valid, &gray, w, h, order, true).unwrap();
            let g = g.unwrap();
            for q in 0..w * h {
                let mut p = vals.clone();
                let mut m = vals.clone();
                p[q] += 1e-7;
                m[q] -= 1e-7;
                let fd = (f(&p) - f(&m)) / 2e-7;
                assert!(
                    (fd - g[q]).abs() < 1e-7,
                    "{order:?} q={q} fd={fd} g={}",
                    g[q]
                );
            }
        }
    }
}
