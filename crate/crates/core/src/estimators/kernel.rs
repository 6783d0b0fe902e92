//! Gaussian coupling kernel tying neighboring signal-group losses into one
//! constrained objective.

use crate::error::{Result, SwsError};

/// Normalized spatial coupling weights over an `l x a` neighborhood
/// (lateral x axial, both odd). Cells can be invalidated near data edges;
/// the remaining weights are renormalized to keep the unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights {
    mu: Vec<f64>,
    valid: Vec<bool>,
    l: usize,
    a: usize,
}

impl KernelWeights {
    pub fn lateral_len(&self) -> usize {
        self.l
    }
    pub fn axial_len(&self) -> usize {
        self.a
    }

    #[inline]
    fn idx(&self, k_idx: usize, i_idx: usize) -> usize {
        k_idx * self.a + i_idx
    }

    /// Weight at lateral/axial offsets from the center.
    pub fn weight(&self, dk: i64, di: i64) -> f64 {
        let k_idx = (dk + (self.l as i64 - 1) / 2) as usize;
        let i_idx = (di + (self.a as i64 - 1) / 2) as usize;
        self.mu[self.idx(k_idx, i_idx)]
    }

    pub fn is_valid(&self, dk: i64, di: i64) -> bool {
        let k_idx = (dk + (self.l as i64 - 1) / 2) as usize;
        let i_idx = (di + (self.a as i64 - 1) / 2) as usize;
        self.valid[self.idx(k_idx, i_idx)]
    }

    /// Iterates `(dk, di, mu)` over valid cells.
    pub fn cells(&self) -> impl Iterator<Item = (i64, i64, f64)> + '_ {
        let half_l = (self.l as i64 - 1) / 2;
        let half_a = (self.a as i64 - 1) / 2;
        (0..self.l * self.a).filter_map(move |flat| {
            if !self.valid[flat] {
                return None;
            }
            let dk = (flat / self.a) as i64 - half_l;
            let di = (flat % self.a) as i64 - half_a;
            Some((dk, di, self.mu[flat]))
        })
    }

    pub fn weight_sum(&self) -> f64 {
        self.mu
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(&w, _)| w)
            .sum()
    }
}

/// Discrete 2-D Gaussian `w(x, z) = exp(-(x^2+z^2)/(2 s^2)) / (2 pi s^2)`
/// over the centered `l x a` grid, normalized to unit sum.
pub fn gaussian_kernel(l: usize, a: usize, sigma_w: f64) -> KernelWeights {
    assert!(l % 2 == 1 && a % 2 == 1, "kernel extents must be odd");
    assert!(sigma_w > 0.0, "sigma_w must be > 0");
    let half_l = (l as i64 - 1) / 2;
    let half_a = (a as i64 - 1) / 2;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma_w * sigma_w);
    let mut mu = Vec::with_capacity(l * a);
    for dk in -half_l..=half_l {
        for di in -half_a..=half_a {
            let r2 = (dk * dk + di * di) as f64;
            mu.push(norm * (-r2 / (2.0 * sigma_w * sigma_w)).exp());
        }
    }
    let total: f64 = mu.iter().sum();
    for w in &mut mu {
        *w /= total;
    }
    KernelWeights {
        mu,
        valid: vec![true; l * a],
        l,
        a,
    }
}

/// Drops the kernel cells that fall outside the data and renormalizes the
/// remainder so the weights still sum to one. The center cell must stay
/// inside.
pub fn edge_renormalize(kernel: &KernelWeights, inside: &[bool]) -> Result<KernelWeights> {
    assert_eq!(inside.len(), kernel.l * kernel.a);
    let center = kernel.idx(kernel.l / 2, kernel.a / 2);
    if !inside[center] {
        return Err(SwsError::Usage(
            "edge renormalization requires the center cell inside the data".into(),
        ));
    }
    let mut out = kernel.clone();
    for (flat, &keep) in inside.iter().enumerate() {
        if !keep {
            out.valid[flat] = false;
        }
    }
    let total: f64 = out
        .mu
        .iter()
        .zip(&out.valid)
        .filter(|(_, &ok)| ok)
        .map(|(&w, _)| w)
        .sum();
    for (w, &ok) in out.mu.iter_mut().zip(&out.valid) {
        if ok {
            *w /= total;
        } else {
            *w = 0.0;
        }
    }
    Ok(out)
}
