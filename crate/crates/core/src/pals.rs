//! Parametric level-set absorption images: compactly supported radial basis
//! functions combined through a smoothed Heaviside.

use crate::error::{CoreError, Result};
use crate::grid::{DomainSpec, NodeKind};

/// Sparse diagonal: explicit indices with values, everything else zero.
#[derive(Debug, Clone, Default)]
pub struct SparseDiag {
    pub idx: Vec<usize>,
    pub val: Vec<f64>,
}

impl SparseDiag {
    pub fn len(&self) -> usize {
        self.idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.idx.is_empty()
    }

    pub fn scatter_into(&self, dense: &mut [f64]) {
        for (&i, &v) in self.idx.iter().zip(&self.val) {
            dense[i] += v;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PalsConfig {
    /// Number of basis functions.
    pub m0: usize,
    /// Heaviside transition half-width.
    pub epsilon: f64,
    /// Smoothing constant in the regularized norm.
    pub gamma: f64,
    /// Level-set height.
    pub level: f64,
    pub mu_in: f64,
    pub mu_out: f64,
    /// Intra-anomaly absorption variation (fraction); used only by synth.
    pub sigma: f64,
}

impl Default for PalsConfig {
    fn default() -> Self {
        PalsConfig {
            m0: 15,
            epsilon: 0.1,
            gamma: 1e-3,
            level: 0.1,
            mu_in: 0.2,
            mu_out: 0.05,
            sigma: 0.05,
        }
    }
}

impl PalsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m0 < 1 {
            return Err(CoreError::validation("pals: m0 must be >= 1"));
        }
        if !(self.epsilon > 0.0) || !(self.gamma > 0.0) {
            return Err(CoreError::validation("pals: epsilon and gamma must be positive"));
        }
        if !(self.mu_in > 0.0) || !(self.mu_out > 0.0) || self.mu_in == self.mu_out {
            return Err(CoreError::validation(
                "pals: mu_in and mu_out must be positive and distinct",
            ));
        }
        Ok(())
    }

    pub fn param_len(&self) -> usize {
        4 * self.m0
    }
}

/// Flat parameter vector, ordered `[alpha_1..alpha_m0, beta_1..beta_m0,
/// chi_{1,x}, chi_{1,z}, chi_{2,x}, ...]`. This ordering is the stable
/// serialization order used in run reports.
#[derive(Debug, Clone, PartialEq)]
pub struct PalsParams(pub Vec<f64>);

impl PalsParams {
    pub fn new(p: Vec<f64>, cfg: &PalsConfig) -> Result<Self> {
        if p.len() != cfg.param_len() {
            return Err(CoreError::Dimension(format!(
                "pals: parameter vector has length {}, expected {}",
                p.len(),
                cfg.param_len()
            )));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::validation("pals: parameters must be finite"));
        }
        Ok(PalsParams(p))
    }

    pub fn alpha(&self, m0: usize, j: usize) -> f64 {
        debug_assert!(j < m0);
        self.0[j]
    }

    pub fn beta(&self, m0: usize, j: usize) -> f64 {
        self.0[m0 + j]
    }

    pub fn center(&self, m0: usize, j: usize) -> (f64, f64) {
        (self.0[2 * m0 + 2 * j], self.0[2 * m0 + 2 * j + 1])
    }
}

/// Parameter index roles for the flat layout above.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Alpha(usize),
    Beta(usize),
    CenterX(usize),
    CenterZ(usize),
}

pub fn param_role(m0: usize, k: usize) -> ParamRole {
    if k < m0 {
        ParamRole::Alpha(k)
    } else if k < 2 * m0 {
        ParamRole::Beta(k - m0)
    } else {
        let j = (k - 2 * m0) / 2;
        if (k - 2 * m0) % 2 == 0 {
            ParamRole::CenterX(j)
        } else {
            ParamRole::CenterZ(j)
        }
    }
}

/// Wendland-type CSRBF `(max(0, 1-r))^2 (2r + 1)`.
pub fn csrbf(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        let t = 1.0 - r;
        t * t * (2.0 * r + 1.0)
    }
}

pub fn csrbf_deriv(r: f64) -> f64 {
    if r >= 1.0 {
        0.0
    } else {
        -6.0 * r * (1.0 - r)
    }
}

/// C^1 Heaviside approximation: exactly 0 below `-eps`, exactly 1 above `eps`.
pub fn heaviside(r: f64, eps: f64) -> f64 {
    if r <= -eps {
        0.0
    } else if r >= eps {
        1.0
    } else {
        0.5 * (1.0 + r / eps + (1.0 / std::f64::consts::PI) * (std::f64::consts::PI * r / eps).sin())
    }
}

pub fn heaviside_deriv(r: f64, eps: f64) -> f64 {
    if r.abs() >= eps {
        0.0
    } else {
        (1.0 + (std::f64::consts::PI * r / eps).cos()) / (2.0 * eps)
    }
}

/// Regularized radial argument of basis function `j` at `(x, z)`.
fn radial(p: &PalsParams, cfg: &PalsConfig, j: usize, x: f64, z: f64) -> (f64, f64) {
    let beta = p.beta(cfg.m0, j);
    let (cx, cz) = p.center(cfg.m0, j);
    let dx = x - cx;
    let dz = z - cz;
    let d2 = dx * dx + dz * dz;
    let r = (beta * beta * d2 + cfg.gamma * cfg.gamma).sqrt();
    (r, d2)
}

/// Level-set value at a point.
pub fn level_set(x: (f64, f64), p: &PalsParams, cfg: &PalsConfig) -> f64 {
    (0..cfg.m0)
        .map(|j| {
            let (r, _) = radial(p, cfg, j, x.0, x.1);
            p.alpha(cfg.m0, j) * csrbf(r)
        })
        .sum()
}

fn mu_at(phi: f64, cfg: &PalsConfig) -> f64 {
    let h = heaviside(phi - cfg.level, cfg.epsilon);
    cfg.mu_in * h + cfg.mu_out * (1.0 - h)
}

/// Absorption values `mu(x, p)` at every node of the grid (the plottable
/// image, unscaled by `h^2`).
pub fn absorption_image(p: &PalsParams, cfg: &PalsConfig, domain: &DomainSpec) -> Vec<f64> {
    let mut img = vec![0.0; domain.n()];
    for iz in 0..domain.nz {
        for ix in 0..domain.nx {
            let phi = level_set(domain.node_pos(ix, iz), p, cfg);
            img[domain.node_index(ix, iz)] = mu_at(phi, cfg);
        }
    }
    img
}

/// Standard starting configuration: basis functions centered on a uniform
/// grid with alternating-sign amplitudes and widths tied to the grid spacing
/// (`beta = 1 / (2 * spacing)`).
pub fn initial_guess(cfg: &PalsConfig, domain: &DomainSpec) -> PalsParams {
    let g = (cfg.m0 as f64).sqrt().ceil() as usize;
    let sx = 2.0 * domain.half_width / g as f64;
    let sz = 2.0 * domain.half_height / g as f64;
    let spacing = 0.5 * (sx + sz);
    let mut p = vec![0.0; cfg.param_len()];
    for j in 0..cfg.m0 {
        let gx = j % g;
        let gz = j / g;
        let sign = if (gx + gz) % 2 == 0 { 1.0 } else { -1.0 };
        p[j] = 0.5 * sign;
        p[cfg.m0 + j] = 1.0 / (2.0 * spacing);
        p[2 * cfg.m0 + 2 * j] = -domain.half_width + (gx as f64 + 0.5) * sx;
        p[2 * cfg.m0 + 2 * j + 1] = domain.half_height - (gz as f64 + 0.5) * sz;
    }
    PalsParams(p)
}

/// Diagonal absorption operator `A1(p)`: `h^2 * mu(x, p)` at interior nodes,
/// zero on every boundary-constraint row.
pub fn absorption_diagonal(p: &PalsParams, cfg: &PalsConfig, domain: &DomainSpec) -> Vec<f64> {
    let h2 = domain.mesh_width().powi(2);
    let mut a1 = vec![0.0; domain.n()];
    for iz in 1..domain.nz - 1 {
        for ix in 1..domain.nx - 1 {
            let idx = domain.node_index(ix, iz);
            let phi = level_set(domain.node_pos(ix, iz), p, cfg);
            a1[idx] = h2 * mu_at(phi, cfg);
        }
    }
    a1
}

/// Absorption map in a raw per-node basis (used by synth for data generation;
/// deliberately a separate code path from `absorption_diagonal`).
pub fn absorption_from_pixels(mu: &[f64], domain: &DomainSpec) -> Vec<f64> {
    let h2 = domain.mesh_width().powi(2);
    let mut a1 = vec![0.0; domain.n()];
    for iz in 1..domain.nz - 1 {
        for ix in 1..domain.nx - 1 {
            let idx = domain.node_index(ix, iz);
            if domain.node_kind(ix, iz) == NodeKind::Interior {
                a1[idx] = h2 * mu[idx];
            }
        }
    }
    a1
}

/// Analytic derivative of `absorption_diagonal` with respect to parameter `k`,
/// returned sparsely (nonzero only inside the transition band of basis `j`'s
/// support).
pub fn absorption_derivative(
    p: &PalsParams,
    cfg: &PalsConfig,
    domain: &DomainSpec,
    k: usize,
) -> SparseDiag {
    let mut out = SparseDiag::default();
    accumulate_derivative(p, cfg, domain, k, &mut out);
    out
}

fn accumulate_derivative(
    p: &PalsParams,
    cfg: &PalsConfig,
    domain: &DomainSpec,
    k: usize,
    out: &mut SparseDiag,
) {
    let h2 = domain.mesh_width().powi(2);
    let contrast = cfg.mu_in - cfg.mu_out;
    let role = param_role(cfg.m0, k);
    let j = match role {
        ParamRole::Alpha(j) | ParamRole::Beta(j) | ParamRole::CenterX(j) | ParamRole::CenterZ(j) => j,
    };
    let beta = p.beta(cfg.m0, j);
    let (cx, cz) = p.center(cfg.m0, j);
    for iz in 1..domain.nz - 1 {
        for ix in 1..domain.nx - 1 {
            let (x, z) = domain.node_pos(ix, iz);
            let (r, d2) = radial(p, cfg, j, x, z);
            if r >= 1.0 {
                continue; // outside the basis support
            }
            let phi = level_set((x, z), p, cfg);
            let hprime = heaviside_deriv(phi - cfg.level, cfg.epsilon);
            if hprime == 0.0 {
                continue; // outside the transition band
            }
            let dphi = match role {
                ParamRole::Alpha(_) => csrbf(r),
                ParamRole::Beta(_) => p.alpha(cfg.m0, j) * csrbf_deriv(r) * beta * d2 / r,
                ParamRole::CenterX(_) => {
                    p.alpha(cfg.m0, j) * csrbf_deriv(r) * (-(beta * beta) * (x - cx) / r)
                }
                ParamRole::CenterZ(_) => {
                    p.alpha(cfg.m0, j) * csrbf_deriv(r) * (-(beta * beta) * (z - cz) / r)
                }
            };
            let v = h2 * contrast * hprime * dphi;
            if v != 0.0 {
                out.idx.push(domain.node_index(ix, iz));
                out.val.push(v);
            }
        }
    }
}

/// All parameter derivatives of the absorption diagonal.
pub fn absorption_derivatives(
    p: &PalsParams,
    cfg: &PalsConfig,
    domain: &DomainSpec,
) -> Vec<SparseDiag> {
    (0..cfg.param_len())
        .map(|k| absorption_derivative(p, cfg, domain, k))
        .collect()
}

/// Node indices where `A1` changed by more than 1e-14 in absolute value,
/// with new-minus-old values.
pub fn support_delta(
    p_old: &PalsParams,
    p_new: &PalsParams,
    cfg: &PalsConfig,
    domain: &DomainSpec,
) -> SparseDiag {
    let a_old = absorption_diagonal(p_old, cfg, domain);
    let a_new = absorption_diagonal(p_new, cfg, domain);
    diagonal_delta(&a_old, &a_new)
}

/// Sparse difference `new - old` with absolute threshold 1e-14.
pub fn diagonal_delta(a_old: &[f64], a_new: &[f64]) -> SparseDiag {
    let mut out = SparseDiag::default();
    for (i, (o, n)) in a_old.iter().zip(a_new).enumerate() {
        let d = n - o;
        if d.abs() > 1e-14 {
            out.idx.push(i);
            out.val.push(d);
        }
    }
    out
}
