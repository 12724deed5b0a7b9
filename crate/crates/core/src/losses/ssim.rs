//! Windowed SSIM on a 3x3 uniform window with `C1 = 0.01^2`,
//! `C2 = 0.03^2`. Windows are clipped at the image border.

use super::photometric::{check_pair, LossMap};
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;
pub const WINDOW: usize = 3;

/// Sum and count of the clipped 3x3 neighbourhood of every pixel.
pub(crate) fn box3(values: &[f64], width: usize, height: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); width * height];
    for y in 0..height {
        let y0 = y.saturating_sub(1);
        let y1 = (y + 1).min(height - 1);
        for x in 0..width {
            let x0 = x.saturating_sub(1);
            let x1 = (x + 1).min(width - 1);
            let mut s = 0.0;
            for yy in y0..=y1 {
                for xx in x0..=x1 {
                    s += values[yy * width + xx];
                }
            }
            out[y * width + x] = (s, ((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
        }
    }
    out
}

fn channel(img: &ImageBuffer, c: usize) -> Vec<f64> {
    (0..img.len()).map(|i| img.pixel(i)[c]).collect()
}

/// Window statistics of one channel pair at every pixel.
pub(crate) struct SsimStats {
    pub ssim: Vec<f64>,
    pub mu_a: Vec<f64>,
    pub mu_b: Vec<f64>,
    pub n1: Vec<f64>,
    pub n2: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub count: Vec<f64>,
}

pub(crate) fn ssim_stats(a: &[f64], b: &[f64], width: usize, height: usize) -> SsimStats {
    let n = a.len();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (sa, sb) = (box3(a, width, height), box3(b, width, height));
    let (saa, sbb, sab) = (
        box3(&aa, width, height),
        box3(&bb, width, height),
        box3(&ab, width, height),
    );
    let mut st = SsimStats {
        ssim: vec![0.0; n],
        mu_a: vec![0.0; n],
        mu_b: vec![0.0; n],
        n1: vec![0.0; n],
        n2: vec![0.0; n],
        d1: vec![0.0; n],
        d2: vec![0.0; n],
        count: vec![0.0; n],
    };
    for i in 0..n {
        let cnt = sa[i].1;
        let ma = sa[i].0 / cnt;
        let mb = sb[i].0 / cnt;
        let va = saa[i].0 / cnt - ma * ma;
        let vb = sbb[i].0 / cnt - mb * mb;
        let cov = sab[i].0 / cnt - ma * mb;
        let n1 = 2.0 * ma * mb + C1;
        let n2 = 2.0 * cov + C2;
        let d1 = ma * ma + mb * mb + C1;
        let d2 = va + vb + C2;
        st.ssim[i] = (n1 * n2) / (d1 * d2);
        st.mu_a[i] = ma;
        st.mu_b[i] = mb;
        st.n1[i] = n1;
        st.n2[i] = n2;
        st.d1[i] = d1;
        st.d2[i] = d2;
        st.count[i] = cnt;
    }
    st
}

/// Gradient of `sum_p coef[p] * SSIM_p(a, b)` with respect to every `b_q`.
pub(crate) fn ssim_adjoint(
    st: &SsimStats,
    a: &[f64],
    b: &[f64],
    coef: &[f64],
    width: usize,
    height: usize,
) -> Vec<f64> {
    let n = a.len();
    let mut pa = vec![0.0; n];
    let mut pb = vec![0.0; n];
    let mut pc = vec![0.0; n];
    for p in 0..n {
        if coef[p] == 0.0 {
            continue;
        }
        let k = coef[p] * st.ssim[p] / st.count[p];
        let (ma, mb) = (st.mu_a[p], st.mu_b[p]);
        let inv_n2 = 2.0 / st.n2[p];
        let inv_d2 = 2.0 / st.d2[p];
        pa[p] = k * (2.0 * ma / st.n1[p] - 2.0 * mb / st.d1[p] - inv_n2 * ma + inv_d2 * mb);
        pb[p] = k * inv_n2;
        pc[p] = k * inv_d2;
    }
    let (sa, sb, sc) = (
        box3(&pa, width, height),
        box3(&pb, width, height),
        box3(&pc, width, height),
    );
    (0..n)
        .map(|q| sa[q].0 + a[q] * sb[q].0 - b[q] * sc[q].0)
        .collect()
}

/// Per-pixel SSIM averaged over channels.
pub fn ssim_map(a: &ImageBuffer, b: &ImageBuffer) -> Result<Vec<f64>> {
    if !a.same_shape(b) {
        return Err(Error::Shape("ssim inputs differ in shape".into()));
    }
    if a.width() < WINDOW || a.height() < WINDOW {
        return Err(Error::Shape(format!(
            "image {}x{} smaller than the {WINDOW}x{WINDOW} window",
            a.width(),
            a.height()
        )));
    }
    let mut out = vec![0.0; a.len()];
    let ch = a.channels();
    for c in 0..ch {
        let st = ssim_stats(&channel(a, c), &channel(b, c), a.width(), a.height());
        for (o, s) in out.iter_mut().zip(&st.ssim) {
            *o += s;
        }
    }
    if ch > 1 {
        out.iter_mut().for_each(|v| *v /= ch as f64);
    }
    Ok(out)
}

/// Mean of `(1 - SSIM) / 2` over masked pixels. Both images are zeroed
/// outside the mask before windowing.
pub fn ssim_loss(target: &ImageBuffer, warped: &ImageBuffer, mask: &[bool]) -> Result<LossMap> {
    check_pair(target, warped, mask)?;
    let masked = |img: &ImageBuffer| {
        let ch = img.channels();
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, v)| if mask[i / ch] { *v } else { 0.0 })
            .collect();
        ImageBuffer::new(img.width(), img.height(), ch, data)
    };
    let s = ssim_map(&masked(target)?, &masked(warped)?)?;
    ssim_loss_from_map(&s, mask)
}

pub fn ssim_loss_from_map(ssim: &[f64], mask: &[bool]) -> Result<LossMap> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::EmptyInput("ssim mask selects no pixels".into()));
    }
    let map: Vec<f64> = ssim
        .iter()
        .zip(mask)
        .map(|(s, m)| if *m { (1.0 - s) / 2.0 } else { 0.0 })
        .collect();
    Ok(LossMap {
        value: map.iter().sum::<f64>() / n as f64,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct per-pixel evaluation, no shared box sums.
    fn scalar_ssim(a: &ImageBuffer, b: &ImageBuffer, x: usize, y: usize) -> f64 {
        let (w, h) = (a.width() as i64, a.height() as i64);
        let mut vals = Vec::new();
        for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                if xx >= 0 && yy >= 0 && xx < w && yy < h {
                    vals.push((
                        a.get(xx as usize, yy as usize, 0),
                        b.get(xx as usize, yy as usize, 0),
                    ));
                }
            }
        }
        let n = vals.len() as f64;
        let ma = vals.iter().map(|v| v.0).sum::<f64>() / n;
        let mb = vals.iter().map(|v| v.1).sum::<f64>() / n;
        let va = vals.iter().map(|v| (v.0 - ma).powi(2)).sum::<f64>() / n;
        let vb = vals.iter().map(|v| (v.1 - mb).powi(2)).sum::<f64>() / n;
        let cov = vals.iter().map(|v| (v.0 - ma) * (v.1 - mb)).sum::<f64>() / n;
        ((2.0 * ma * mb + C1) * (2.0 * cov + C2)) / ((ma * ma + mb * mb + C1) * (va + vb + C2))
    }

    fn checker(w: usize, h: usize) -> ImageBuffer {
        ImageBuffer::from_fn(
            w,
            h,
            1,
            |x, y, _| if (x / 2 + y / 2) % 2 == 0 { 1.0 } else { 0.0 },
        )
        .unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let a = ImageBuffer::from_fn(7, 5, 3, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 / 6.0)
            .unwrap();
        for s in ssim_map(&a, &a).unwrap() {
            assert!((s - 1.0).abs() < 1e-12);
        }
        assert!(ssim_loss(&a, &a, &vec![true; a.len()]).unwrap().value.abs() < 1e-12);
    }

    #[test]
    fn equal_constants_score_one() {
        let a = ImageBuffer::filled(4, 4, 1, 0.3).unwrap();
        assert!(ssim_map(&a, &a)
            .unwrap()
            .iter()
            .all(|s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn inverted_binary_image_is_negative_at_edges() {
        let a = checker(8, 8);
        let b = ImageBuffer::from_fn(8, 8, 1, |x, y, _| 1.0 - a.get(x, y, 0)).unwrap();
        let s = ssim_map(&a, &b).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let want = scalar_ssim(&a, &b, x, y);
                assert!((s[y * 8 + x] - want).abs() < 1e-12);
            }
        }
        // Pixel (1,1) straddles the 2x2 block edge.
        assert!(s[8 + 1] < -0.5, "{}", s[9]);
    }

    #[test]
    fn matches_scalar_reference_on_random_images() {
        let a = ImageBuffer::from_fn(9, 6, 1, |x, y, _| ((x * 37 + y * 91) % 101) as f64 / 100.0)
            .unwrap();
        let b = ImageBuffer::from_fn(9, 6, 1, |x, y, _| {
            ((x * 53 + y * 17 + 11) % 97) as f64 / 96.0
        })
        .unwrap();
        let s = ssim_map(&a, &b).unwrap();
        for y in 0..6 {
            for x in 0..9 {
                assert!((s[y * 9 + x] - scalar_ssim(&a, &b, x, y)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_of_constant_ssim_maps() {
        assert_eq!(
            ssim_loss_from_map(&[0.0; 4], &[true; 4]).unwrap().value,
            0.5
        );
        assert_eq!(
            ssim_loss_from_map(&[-1.0; 4], &[true; 4]).unwrap().value,
            1.0
        );
        assert!(ssim_loss_from_map(&[1.0; 4], &[false; 4]).is_err());
    }

    #[test]
    fn too_small_is_shape_error() {
        let a = ImageBuffer::filled(2, 5, 1, 0.5).unwrap();
        assert!(matches!(ssim_map(&a, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn adjoint_matches_finite_differences() {
        let (w, h) = (6, 5);
        let a: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 29) as f64 / 28.0).collect();
        let b: Vec<f64> = (0..w * h)
            .map(|i| ((i * 11 + 5) % 23) as f64 / 22.0)
            .collect();
        let coef: Vec<f64> = (0..w * h)
            .map(|i| {
                if i % 4 == 0 {
                    0.0
                } else {
                    0.1 + (i % 3) as f64
                }
            })
            .collect();
        let f = |b: &[f64]| -> f64 {
            let st = ssim_stats(&a, b, w, h);
            st.ssim.iter().zip(&coef).map(|(s, c)| s * c).sum()
        };
        let st = ssim_stats(&a, &b, w, h);
        let g = ssim_adjoint(&st, &a, &b, &coef, w, h);
        let step = 1e-6;
        for q in 0..w * h {
            let mut bp = b.clone();
            let mut bm = b.clone();
            bp[q] += step;
            bm[q] -= step;
            let fd = (f(&bp) - f(&bm)) / (2.0 * step);
            assert!(
                (fd - g[q]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "q={q} fd={fd} an={}",
                g[q]
            );
        }
    }
}
