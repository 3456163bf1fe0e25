//! Reduced-model fidelity diagnostics and solve/flop accounting.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::linalg::orthonormality_defect;
use crate::mor::RomModel;

/// Shared solve/flop counters. Atomic so backends can increment from
/// parallel column solves.
#[derive(Debug, Default)]
pub struct Counters {
    large_solves: AtomicU64,
    reduced_solves: AtomicU64,
    delta_flops: AtomicU64,
    k_fun: AtomicU64,
    k_jac: AtomicU64,
    samples: AtomicU64,
}

impl Counters {
    pub fn add_large_solves(&self, n: usize) {
        self.large_solves.fetch_add(n as u64, Ordering::Relaxed);
    }
    pub fn add_reduced_solves(&self, n: usize) {
        self.reduced_solves.fetch_add(n as u64, Ordering::Relaxed);
    }
    pub fn add_delta_flops(&self, n: u64) {
        self.delta_flops.fetch_add(n, Ordering::Relaxed);
    }
    pub fn bump_k_fun(&self) {
        self.k_fun.fetch_add(1, Ordering::Relaxed);
    }
    pub fn bump_k_jac(&self) {
        self.k_jac.fetch_add(1, Ordering::Relaxed);
    }
    pub fn set_samples(&self, k: usize) {
        self.samples.store(k as u64, Ordering::Relaxed);
    }

    pub fn large_solves(&self) -> u64 {
        self.large_solves.load(Ordering::Relaxed)
    }
    pub fn reduced_solves(&self) -> u64 {
        self.reduced_solves.load(Ordering::Relaxed)
    }
    pub fn delta_flops(&self) -> u64 {
        self.delta_flops.load(Ordering::Relaxed)
    }
    pub fn k_fun(&self) -> u64 {
        self.k_fun.load(Ordering::Relaxed)
    }
    pub fn k_jac(&self) -> u64 {
        self.k_jac.load(Ordering::Relaxed)
    }
    pub fn samples(&self) -> u64 {
        self.samples.load(Ordering::Relaxed)
    }

    pub fn report(&self) -> CostReport {
        let k = self.samples();
        let k_fun = self.k_fun();
        let k_jac = self.k_jac();
        CostReport {
            large_solves: self.large_solves(),
            reduced_solves: self.reduced_solves(),
            delta_flops: self.delta_flops(),
            k_fun,
            k_jac,
            samples: k,
            offline_online_ratio: if k > 0 {
                Some((k_fun + k_jac) as f64 / (2 * k) as f64)
            } else {
                None
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub large_solves: u64,
    pub reduced_solves: u64,
    pub delta_flops: u64,
    pub k_fun: u64,
    pub k_jac: u64,
    pub samples: u64,
    /// `(K_fun + K_Jac) / (2K)`; the full-model solve count relative to the
    /// offline basis cost.
    pub offline_online_ratio: Option<f64>,
}

/// Per-iteration subspace gaps `sin Theta(V_1, V_k)`.
#[derive(Debug, Clone, Default)]
pub struct GapSeries(pub Vec<f64>);

/// Per-iteration relative interpolation error ratios.
#[derive(Debug, Clone, Default)]
pub struct ErrorRatioSeries(pub Vec<f64>);

/// Sine of the largest canonical angle between the ranges of two matrices
/// with orthonormal columns. With unequal ranks this is the directed gap
/// measuring range(Va) against range(Vb).
pub fn subspace_gap(va: &DMatrix<f64>, vb: &DMatrix<f64>) -> Result<f64> {
    for (name, m) in [("Va", va), ("Vb", vb)] {
        let defect = orthonormality_defect(m);
        if defect > 1e-10 {
            return Err(CoreError::validation(format!(
                "subspace_gap: {name} columns are not orthonormal (defect {defect:.3e})"
            )));
        }
    }
    let g = va.transpose() * vb;
    let svd = g.svd(false, false);
    let sigma_min = svd
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    Ok((1.0 - sigma_min * sigma_min).max(0.0).sqrt())
}

/// Grid maximum of the spectral norm of the reduced frequency response; a
/// lower bound surrogate for the true H-infinity norm. Singular grid points
/// are skipped.
pub fn hinf_on_grid(model: &RomModel, omegas: &[f64], counters: &Counters) -> Result<f64> {
    if omegas.is_empty() {
        return Err(CoreError::validation("hinf_on_grid: empty frequency grid"));
    }
    let mut best: f64 = 0.0;
    let mut any = false;
    for &w in omegas {
        match model.reduced_frequency_response(w, counters) {
            Ok(psi) => {
                any = true;
                let svd = psi.svd(false, false);
                let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
                best = best.max(top);
            }
            Err(CoreError::SingularReduced(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if !any {
        return Err(CoreError::validation(
            "hinf_on_grid: reduced system singular at every grid point",
        ));
    }
    Ok(best)
}

/// Default evaluation grid: log-spaced points spanning the experiment's
/// frequency range, plus zero.
pub fn default_hinf_grid(omegas: &[f64]) -> Vec<f64> {
    let wmax = omegas.iter().copied().fold(0.0, f64::max);
    if wmax == 0.0 {
        return vec![0.0];
    }
    let lo = (wmax * 1e-4).ln();
    let hi = wmax.ln();
    let mut grid = vec![0.0];
    for i in 0..101 {
        grid.push((lo + (hi - lo) * i as f64 / 100.0).exp());
    }
    grid
}

/// Left-hand side of the canonical-angle error estimate: the spectral-norm
/// interpolation error of the surrogate at `(omega, p)` over the mean of the
/// two H-infinity surrogates.
pub fn interpolation_error_ratio(
    psi_full: &DMatrix<num_complex::Complex64>,
    psi_rom: &DMatrix<num_complex::Complex64>,
    hinf_k: f64,
    hinf_j: f64,
) -> Result<f64> {
    if psi_full.shape() != psi_rom.shape() {
        return Err(CoreError::Dimension(
            "interpolation_error_ratio: response shapes differ".into(),
        ));
    }
    let diff = psi_full - psi_rom;
    let err = diff.svd(false, false).singular_values.iter().copied().fold(0.0, f64::max);
    let denom = 0.5 * (hinf_k + hinf_j);
    if denom <= 0.0 {
        return Err(CoreError::validation(
            "interpolation_error_ratio: zero H-infinity surrogate",
        ));
    }
    Ok(err / denom)
}

/// Spearman rank correlation between two equally long series.
pub fn spearman_rank_correlation(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut order: Vec<usize> = (0..v.len()).collect();
        order.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &order[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    };
    let ra = ranks(a);
    let rb = ranks(b);
    let mean = (a.len() - 1) as f64 / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..a.len() {
        let xa = ra[i] - mean;
        let xb = rb[i] - mean;
        num += xa * xb;
        da += xa * xa;
        db += xb * xb;
    }
    if da == 0.0 || db == 0.0 {
        return None;
    }
    Some(num / (da * db).sqrt())
}

/// Writes a per-iteration series as comma-separated text:
/// `iteration,gap,error_ratio`.
pub fn write_series_csv(
    out: &mut dyn std::io::Write,
    gaps: &GapSeries,
    ratios: &ErrorRatioSeries,
) -> std::io::Result<()> {
    writeln!(out, "iteration,gap,error_ratio")?;
    let n = gaps.0.len().max(ratios.0.len());
    for i in 0..n {
        let g = gaps.0.get(i).map_or(String::new(), |v| format!("{v:.12e}"));
        let r = ratios.0.get(i).map_or(String::new(), |v| format!("{v:.12e}"));
        writeln!(out, "{i},{g},{r}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis(cols: &[Vec<f64>]) -> DMatrix<f64> {
        let n = cols[0].len();
        DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
    }

    #[test]
    fn gap_identity_and_complement() {
        let e1 = basis(&[vec![1.0, 0.0]]);
        let e2 = basis(&[vec![0.0, 1.0]]);
        assert_eq!(subspace_gap(&e1, &e1).unwrap(), 0.0);
        assert_eq!(subspace_gap(&e1, &e2).unwrap(), 1.0);
    }

    #[test]
    fn gap_45_degrees() {
        let s = 1.0 / 2.0f64.sqrt();
        let e1 = basis(&[vec![1.0, 0.0]]);
        let diag = basis(&[vec![s, s]]);
        let g = subspace_gap(&e1, &diag).unwrap();
        assert!((g - s).abs() < 1e-12);
    }

    #[test]
    fn gap_symmetric_for_equal_ranks() {
        let a = basis(&[vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]]);
        let s = 1.0 / 2.0f64.sqrt();
        let b = basis(&[vec![s, 0.0, s], vec![0.0, 1.0, 0.0]]);
        let g1 = subspace_gap(&a, &b).unwrap();
        let g2 = subspace_gap(&b, &a).unwrap();
        assert!((g1 - g2).abs() < 1e-12);
    }

    #[test]
    fn gap_rejects_non_orthonormal() {
        let bad = basis(&[vec![2.0, 0.0]]);
        let ok = basis(&[vec![1.0, 0.0]]);
        assert!(subspace_gap(&bad, &ok).is_err());
    }

    #[test]
    fn fresh_counters_are_zero() {
        let c = Counters::default();
        let r = c.report();
        assert_eq!(r.large_solves, 0);
        assert_eq!(r.reduced_solves, 0);
        assert_eq!(r.k_fun, 0);
        assert_eq!(r.k_jac, 0);
        assert!(r.offline_online_ratio.is_none());
    }

    #[test]
    fn spearman_monotone_series() {
        let a = [0.1, 0.2, 0.3, 0.7];
        let b = [1.0, 2.0, 5.0, 9.0];
        assert!((spearman_rank_correlation(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        let c = [9.0, 5.0, 2.0, 1.0];
        assert!((spearman_rank_correlation(&a, &c).unwrap() + 1.0).abs() < 1e-12);
    }
}
