use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::DepthMap;

/// Which quantity the cross-source consistency term compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConsistencyDomain {
    #[default]
    Depth,
    InverseDepth,
}

/// Sum over unordered pairs of `|a_i - a_j|`, averaged over jointly valid
/// pixels, with its gradient for each input map.
pub(crate) fn pairwise_abs(
    maps: &[&[f64]],
    valid: &[bool],
    want_gradient: bool,
) -> Result<(f64, Option<Vec<Vec<f64>>>)> {
    let n = valid.iter().filter(|&&v| v).count();
    if n == 0 {
        return Err(Error::EmptyInput(
            "no jointly valid pixels for depth consistency".into(),
        ));
    }
    let inv_n = 1.0 / n as f64;
    let len = valid.len();
    let mut grads = want_gradient.then(|| vec![vec![0.0; len]; maps.len()]);
    let mut total = 0.0;
    for p in 0..len {
        if !valid[p] {
            continue;
        }
        for i in 0..maps.len() {
            for j in i + 1..maps.len() {
                let d = maps[i][p] - maps[j][p];
                total += d.abs();
                if let Some(g) = grads.as_mut() {
                    let s = if d > 0.0 {
                        inv_n
                    } else if d < 0.0 {
                        -inv_n
                    } else {
                        0.0
                    };
                    g[i][p] += s;
                    g[j][p] -= s;
                }
            }
        }
    }
    Ok((total * inv_n, grads))
}

/// Mean over jointly valid pixels of `Σ_{i<j} |D_i - D_j|`.
pub fn depth_consistency_loss(depths: &[DepthMap]) -> Result<f64> {
    if depths.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: depths.len(),
        });
    }
    let (w, h) = (depths[0].width(), depths[0].height());
    if depths.iter().any(|d| d.width() != w || d.height() != h) {
        return Err(Error::Shape("depth maps differ in resolution".into()));
    }
    let valid: Vec<bool> = (0..w * h)
        .map(|p| depths.iter().all(|d| d.valid()[p]))
        .collect();
    let maps: Vec<&[f64]> = depths.iter().map(|d| d.values()).collect();
    Ok(pairwise_abs(&maps, &valid, false)?.0)
}
