//! Image and per-pixel scalar grids, bilinear sampling, and the linear
//! resampling operators used by the multi-scale loss.

use crate::error::{Error, Result};

/// Row-major multi-channel intensity image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::Shape(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} samples, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            vec![value; width * height * channels],
        )
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        f: impl Fn(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    /// Builds an image without the range check; callers guarantee `[0, 1]`.
    pub(crate) fn from_raw(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Channel values of pixel `i` (row-major index).
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Mean over channels, as a single-channel image.
    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = (0..self.len())
            .map(|i| self.pixel(i).iter().sum::<f64>() / self.channels as f64)
            .collect();
        ImageBuffer::from_raw(self.width, self.height, 1, data)
    }

    /// 2x2 box average; odd trailing rows or columns are dropped.
    pub fn downsample2(&self) -> Result<ImageBuffer> {
        let (w, h) = (self.width / 2, self.height / 2);
        if w == 0 || h == 0 {
            return Err(Error::Shape("image too small to downsample".into()));
        }
        let c = self.channels;
        let mut data = vec![0.0; w * h * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let s = self.get(2 * x, 2 * y, ch)
                        + self.get(2 * x + 1, 2 * y, ch)
                        + self.get(2 * x, 2 * y + 1, ch)
                        + self.get(2 * x + 1, 2 * y + 1, ch);
                    data[(y * w + x) * c + ch] = 0.25 * s;
                }
            }
        }
        Ok(ImageBuffer::from_raw(w, h, c, data))
    }
}

/// Per-pixel scalar with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape("map dimensions must be positive".into()));
        }
        if values.len() != width * height || valid.len() != width * height {
            return Err(Error::Shape(format!(
                "expected {} entries, got {} values / {} mask",
                width * height,
                values.len(),
                valid.len()
            )));
        }
        Ok(Self {
            width,
            height,
            values,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then_some(self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    fn check_positive(&self, what: &str) -> Result<()> {
        for (v, ok) in self.values.iter().zip(&self.valid) {
            if *ok && !(v.is_finite() && *v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{what} entries must be positive and finite, found {v}"
                )));
            }
        }
        Ok(())
    }

}

/// Per-pixel depth `D(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap(ScalarMap);

/// Per-pixel inverse depth `d(p) = 1 / D(p)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseDepthMap(ScalarMap);

macro_rules! positive_map {
    ($ty:ident, $what:literal) => {
        impl $ty {
            pub fn new(
                width: usize,
                height: usize,
                values: Vec<f64>,
                valid: Vec<bool>,
            ) -> Result<Self> {
                Self::from_map(ScalarMap::new(width, height, values, valid)?)
            }

            pub fn from_map(map: ScalarMap) -> Result<Self> {
                map.check_positive($what)?;
                Ok(Self(map))
            }

            /// All pixels valid.
            pub fn dense(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
                let n = values.len();
                Self::new(width, height, values, vec![true; n])
            }

            pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
                Self::dense(width, height, vec![value; width * height])
            }

            pub fn as_map(&self) -> &ScalarMap {
                &self.0
            }

            pub fn into_map(self) -> ScalarMap {
                self.0
            }

            pub fn width(&self) -> usize {
                self.0.width
            }

            pub fn height(&self) -> usize {
                self.0.height
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.0.values
            }

            pub fn valid(&self) -> &[bool] {
                &self.0.valid
            }

            pub fn get(&self, x: usize, y: usize) -> Option<f64> {
                self.0.get(x, y)
            }

            pub fn valid_count(&self) -> usize {
                self.0.valid_count()
            }
        }
    };
}

positive_map!(DepthMap, "depth");
positive_map!(InverseDepthMap, "inverse depth");

impl DepthMap {
    pub fn to_inverse(&self) -> InverseDepthMap {
        InverseDepthMap(reciprocal(&self.0))
    }
}

impl InverseDepthMap {
    pub fn to_depth(&self) -> DepthMap {
        DepthMap(reciprocal(&self.0))
    }
}

fn reciprocal(m: &ScalarMap) -> ScalarMap {
    let values = m
        .values
        .iter()
        .zip(&m.valid)
        .map(|(v, ok)| if *ok { 1.0 / v } else { 0.0 })
        .collect();
    ScalarMap {
        width: m.width,
        height: m.height,
        values,
        valid: m.valid.clone(),
    }
}

/// Grid lines closer than this are snapped onto, so integer coordinates
/// that picked up round-off in a warp still sample a single pixel exactly.
pub const GRID_SNAP: f64 = 1e-10;

/// The four neighbours of a continuous coordinate and their weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTaps {
    /// Row-major pixel indices: (x0,y0), (x1,y0), (x0,y1), (x1,y1).
    pub index: [usize; 4],
    pub weight: [f64; 4],
    pub fx: f64,
    pub fy: f64,
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() <= GRID_SNAP {
        r
    } else {
        v
    }
}

/// Bilinear taps for `(x, y)`, or `None` when outside `[0, w-1] x [0, h-1]`.
pub fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> Option<BilinearTaps> {
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let (x, y) = (snap(x), snap(y));
    if x < 0.0 || y < 0.0 || x > (width - 1) as f64 || y > (height - 1) as f64 {
        return None;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    Some(BilinearTaps {
        index: [
            y0 * width + x0,
            y0 * width + x1,
            y1 * width + x0,
            y1 * width + x1,
        ],
        weight: [
            (1.0 - fx) * (1.0 - fy),
            fx * (1.0 - fy),
            (1.0 - fx) * fy,
            fx * fy,
        ],
        fx,
        fy,
    })
}

impl BilinearTaps {
    /// Interpolated value of channel `c`. Zero-weight taps are skipped so a
    /// snapped integer coordinate reads the pixel bit-exactly.
    pub fn sample(&self, img: &ImageBuffer, c: usize) -> f64 {
        let ch = img.channels;
        let mut acc = 0.0;
        for k in 0..4 {
            if self.weight[k] != 0.0 {
                acc += self.weight[k] * img.data[self.index[k] * ch + c];
            }
        }
        acc
    }

    /// Spatial derivative `(d/dx, d/dy)` of channel `c` inside the cell.
    pub fn gradient(&self, img: &ImageBuffer, c: usize) -> [f64; 2] {
        let ch = img.channels;
        let v = |k: usize| img.data[self.index[k] * ch + c];
        let (fx, fy) = (self.fx, self.fy);
        let gx = (1.0 - fy) * (v(1) - v(0)) + fy * (v(3) - v(2));
        let gy = (1.0 - fx) * (v(2) - v(0)) + fx * (v(3) - v(1));
        [gx, gy]
    }
}

/// Bilinearly interpolated channel values, `None` when out of bounds.
pub fn bilinear_sample(img: &ImageBuffer, coord: [f64; 2]) -> Option<Vec<f64>> {
    let taps = bilinear_taps(img.width, img.height, coord[0], coord[1])?;
    Some((0..img.channels).map(|c| taps.sample(img, c)).collect())
}

/// A sparse linear map between scalar grids, each output a weighted sum of
/// at most four inputs. Used for the pyramid down/up-sampling so the same
/// operator serves the forward pass and its adjoint.
#[derive(Debug, Clone)]
pub struct Resampler {
    pub in_width: usize,
    pub in_height: usize,
    pub out_width: usize,
    pub out_height: usize,
    taps: Vec<[(usize, f64); 4]>,
}

impl Resampler {
    /// 2x2 box average.
    pub fn downsample2(width: usize, height: usize) -> Result<Self> {
        let (w, h) = (width / 2, height / 2);
        if w == 0 || h == 0 {
            return Err(Error::Shape("map too small to downsample".into()));
        }
        let mut taps = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let i = |dx: usize, dy: usize| (2 * y + dy) * width + 2 * x + dx;
                taps.push([
                    (i(0, 0), 0.25),
                    (i(1, 0), 0.25),
                    (i(0, 1), 0.25),
                    (i(1, 1), 0.25),
                ]);
            }
        }
        Ok(Self {
            in_width: width,
            in_height: height,
            out_width: w,
            out_height: h,
            taps,
        })
    }

    /// Bilinear upsampling with pixel-centre alignment, clamped at borders.
    pub fn upsample(width: usize, height: usize, target_w: usize, target_h: usize) -> Result<Self> {
        if target_w < width || target_h < height {
            return Err(Error::Shape(format!(
                "cannot upsample {width}x{height} to smaller {target_w}x{target_h}"
            )));
        }
        let sx = width as f64 / target_w as f64;
        let sy = height as f64 / target_h as f64;
        let mut taps = Vec::with_capacity(target_w * target_h);
        for y in 0..target_h {
            let v = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (height - 1) as f64);
            for x in 0..target_w {
                let u = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (width - 1) as f64);
                let t = bilinear_taps(width, height, u, v).expect("clamped coordinate in bounds");
                taps.push([
                    (t.index[0], t.weight[0]),
                    (t.index[1], t.weight[1]),
                    (t.index[2], t.weight[2]),
                    (t.index[3], t.weight[3]),
                ]);
            }
        }
        Ok(Self {
            in_width: width,
            in_height: height,
            out_width: target_w,
            out_height: target_h,
            taps,
        })
    }

    pub fn apply(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.in_width * self.in_height);
        self.taps
            .iter()
            .map(|t| {
                t.iter()
                    .filter(|(_, w)| *w != 0.0)
                    .map(|(i, w)| w * input[*i])
                    .sum()
            })
            .collect()
    }

    /// Output valid only where every contributing input is valid.
    pub fn apply_mask(&self, valid: &[bool]) -> Vec<bool> {
        self.taps
            .iter()
            .map(|t| t.iter().filter(|(_, w)| *w != 0.0).all(|(i, _)| valid[*i]))
            .collect()
    }

    /// Adjoint: scatters output-space gradients back onto the input grid.
    pub fn apply_adjoint(&self, grad_out: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.in_width * self.in_height];
        for (t, go) in self.taps.iter().zip(grad_out) {
            for (i, w) in t {
                if *w != 0.0 {
                    g[*i] += w * go;
                }
            }
        }
        g
    }

    pub fn apply_map(&self, map: &ScalarMap) -> ScalarMap {
        // Invalid entries are zeroed so they cannot poison valid outputs.
        let clean: Vec<f64> = map
            .values
            .iter()
            .zip(&map.valid)
            .map(|(v, ok)| if *ok { *v } else { 0.0 })
            .collect();
        ScalarMap {
            width: self.out_width,
            height: self.out_height,
            values: self.apply(&clean),
            valid: self.apply_mask(&map.valid),
        }
    }
}
