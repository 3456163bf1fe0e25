//! Interpolatory parametric model order reduction.
//!
//! Local bases collect the source-side solutions `M^{-1} B` and detector-side
//! solutions `M^{-1} C^T` at sampled parameters and frequencies (the system is
//! complex symmetric, so the detector-side solve is the transpose solve). The
//! global basis is the span of their concatenation, compressed by a truncated
//! SVD. Projection is one-sided Galerkin (`W = V`), which preserves exact
//! response and parameter-Jacobian interpolation at every retained sample.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::diagnostics::Counters;
use crate::error::{CoreError, Result};
use crate::forward::{detector_rhs, source_rhs};
use crate::grid::DiscreteOperators;
use crate::linalg::{truncated_left_singular_vectors, DenseLu};
use crate::pals::SparseDiag;
use crate::solve::{solve_columns, SolverOpts};

/// Real column block extracted from one sampled parameter point.
#[derive(Debug, Clone)]
pub struct LocalBasis {
    /// Real columns: Re/Im parts of the state and co-state solutions.
    pub columns: DMatrix<f64>,
}

/// Solves the full-order systems at one sample and returns the real column
/// block. Every solved column counts as one large solve; the sample counts
/// once toward `K_fun` (source side) and once toward `K_Jac` (detector side).
pub fn build_local_basis(
    ops: &DiscreteOperators,
    a1: &[f64],
    omegas: &[f64],
    opts: &SolverOpts,
    counters: &Counters,
) -> Result<LocalBasis> {
    if omegas.is_empty() {
        return Err(CoreError::validation("local basis: empty frequency list"));
    }
    let src = source_rhs(ops);
    let det = detector_rhs(ops);
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut push = |x: &DMatrix<Complex64>, omega: f64| {
        for j in 0..x.ncols() {
            let re: Vec<f64> = x.column(j).iter().map(|v| v.re).collect();
            cols.push(re);
            if omega != 0.0 {
                let im: Vec<f64> = x.column(j).iter().map(|v| v.im).collect();
                cols.push(im);
            }
        }
    };
    counters.bump_k_fun();
    for &w in omegas {
        let x = solve_columns(ops, a1, w, &src, opts)?;
        counters.add_large_solves(ops.n_src());
        push(&x, w);
    }
    counters.bump_k_jac();
    for &w in omegas {
        let z = solve_columns(ops, a1, w, &det, opts)?;
        counters.add_large_solves(ops.n_det());
        push(&z, w);
    }
    let columns = DMatrix::from_fn(ops.n, cols.len(), |i, j| cols[j][i]);
    Ok(LocalBasis { columns })
}

/// Global reduction basis with the metadata needed to validate reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBasis {
    pub v: DMatrix<f64>,
    /// Singular values retained by the truncation.
    pub sigma: Vec<f64>,
    /// Truncation tolerance relative to the largest singular value.
    pub tau: f64,
    /// Frequencies the local bases were sampled at.
    pub omegas: Vec<f64>,
    /// Hash of the grid and source/detector layout the basis belongs to.
    pub grid_hash: u64,
}

const BASIS_MAGIC: &[u8; 4] = b"DOTB";
const BASIS_VERSION: u32 = 1;

impl GlobalBasis {
    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    /// Compresses local bases into a global one. Columns are normalized
    /// before the SVD so that truncation responds to directions, not scales.
    pub fn compress(
        ops: &DiscreteOperators,
        locals: &[LocalBasis],
        omegas: &[f64],
        tau: f64,
    ) -> Result<Self> {
        if locals.is_empty() {
            return Err(CoreError::validation("compress: no local bases"));
        }
        if !(0.0..1.0).contains(&tau) {
            return Err(CoreError::validation("compress: tau must be in [0, 1)"));
        }
        let total: usize = locals.iter().map(|l| l.columns.ncols()).sum();
        let mut stacked = DMatrix::<f64>::zeros(ops.n, total);
        let mut j = 0;
        for l in locals {
            if l.columns.nrows() != ops.n {
                return Err(CoreError::Dimension(
                    "compress: local basis has wrong row count".into(),
                ));
            }
            for c in 0..l.columns.ncols() {
                let col = l.columns.column(c);
                let nrm = col.norm();
                if nrm > 0.0 {
                    stacked.column_mut(j).copy_from(&(col / nrm));
                }
                j += 1;
            }
        }
        let (v, sigma) = truncated_left_singular_vectors(&stacked, tau)?;
        Ok(GlobalBasis {
            v,
            sigma,
            tau,
            omegas: omegas.to_vec(),
            grid_hash: ops.grid_hash(),
        })
    }

    /// Convenience wrapper: sample, then compress.
    pub fn build(
        ops: &DiscreteOperators,
        samples: &[Vec<f64>],
        omegas: &[f64],
        tau: f64,
        opts: &SolverOpts,
        counters: &Counters,
    ) -> Result<Self> {
        let locals: Vec<LocalBasis> = samples
            .iter()
            .map(|a1| build_local_basis(ops, a1, omegas, opts, counters))
            .collect::<Result<_>>()?;
        counters.set_samples(samples.len());
        Self::compress(ops, &locals, omegas, tau)
    }

    pub fn matches(&self, ops: &DiscreteOperators) -> bool {
        self.grid_hash == ops.grid_hash() && self.v.nrows() == ops.n
    }

    /// Serializes the basis. The layout is fixed little-endian, so identical
    /// bases produce byte-identical files.
    pub fn write_to(&self, out: &mut dyn Write) -> Result<()> {
        out.write_all(BASIS_MAGIC)?;
        out.write_all(&BASIS_VERSION.to_le_bytes())?;
        out.write_all(&self.grid_hash.to_le_bytes())?;
        out.write_all(&(self.v.nrows() as u64).to_le_bytes())?;
        out.write_all(&(self.v.ncols() as u64).to_le_bytes())?;
        out.write_all(&self.tau.to_le_bytes())?;
        out.write_all(&(self.omegas.len() as u64).to_le_bytes())?;
        for w in &self.omegas {
            out.write_all(&w.to_le_bytes())?;
        }
        for s in &self.sigma {
            out.write_all(&s.to_le_bytes())?;
        }
        for j in 0..self.v.ncols() {
            for i in 0..self.v.nrows() {
                out.write_all(&self.v[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(inp: &mut dyn Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        inp.read_exact(&mut magic)?;
        if &magic != BASIS_MAGIC {
            return Err(CoreError::Format("basis file: bad magic".into()));
        }
        let version = read_u32(inp)?;
        if version != BASIS_VERSION {
            return Err(CoreError::Format(format!(
                "basis file: unsupported version {version}"
            )));
        }
        let grid_hash = read_u64(inp)?;
        let n = read_u64(inp)? as usize;
        let r = read_u64(inp)? as usize;
        let tau = read_f64(inp)?;
        let n_omegas = read_u64(inp)? as usize;
        if n == 0 || r == 0 || n.checked_mul(r).is_none() {
            return Err(CoreError::Format("basis file: bad dimensions".into()));
        }
        let mut omegas = Vec::with_capacity(n_omegas);
        for _ in 0..n_omegas {
            omegas.push(read_f64(inp)?);
        }
        let mut sigma = Vec::with_capacity(r);
        for _ in 0..r {
            sigma.push(read_f64(inp)?);
        }
        let mut v = DMatrix::<f64>::zeros(n, r);
        for j in 0..r {
            for i in 0..n {
                v[(i, j)] = read_f64(inp)?;
            }
        }
        Ok(GlobalBasis {
            v,
            sigma,
            tau,
            omegas,
            grid_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn read_u32(inp: &mut dyn Read) -> Result<u32> {
    let mut b = [0u8; 4];
    inp.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(inp: &mut dyn Read) -> Result<u64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(inp: &mut dyn Read) -> Result<f64> {
    let mut b = [0u8; 8];
    inp.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Projected system with an incrementally maintained absorption block.
#[derive(Debug, Clone)]
pub struct RomModel {
    v: DMatrix<f64>,
    e_hat: DMatrix<f64>,
    a0_hat: DMatrix<f64>,
    a1_hat: DMatrix<f64>,
    b_hat: DMatrix<f64>,
    c_hat: DMatrix<f64>,
    /// Current full-order absorption diagonal, tracked for exact rebuilds.
    a1_dense: Vec<f64>,
    speed_of_light: f64,
    updates_since_rebuild: usize,
    /// Dense rebuild of `A1_hat` after this many incremental updates bounds
    /// floating-point drift.
    pub rebuild_interval: usize,
}

impl RomModel {
    /// Galerkin projection of the full-order operators onto `basis`.
    pub fn reduce(ops: &DiscreteOperators, basis: &GlobalBasis, a1: &[f64]) -> Result<Self> {
        if !basis.matches(ops) {
            return Err(CoreError::validation(
                "reduce: basis was built for a different grid or layout",
            ));
        }
        if a1.len() != ops.n {
            return Err(CoreError::Dimension("reduce: absorption diagonal length".into()));
        }
        let v = basis.v.clone();
        let r = v.ncols();
        // E and A1 are diagonal: scale rows of V, then multiply.
        let scale_rows = |d: &[f64]| -> DMatrix<f64> {
            let mut m = v.clone();
            for i in 0..ops.n {
                if d[i] != 1.0 {
                    for j in 0..r {
                        m[(i, j)] *= d[i];
                    }
                }
            }
            v.transpose() * m
        };
        let e_hat = scale_rows(&ops.e_diag);
        let a1_hat = scale_rows(a1);
        // A0 is sparse: form A0 * V row-wise.
        let mut a0v = DMatrix::<f64>::zeros(ops.n, r);
        for i in 0..ops.n {
            for (c, w) in ops.a0.row(i) {
                for j in 0..r {
                    a0v[(i, j)] += w * v[(c, j)];
                }
            }
        }
        let a0_hat = v.transpose() * a0v;
        let mut b_hat = DMatrix::<f64>::zeros(r, ops.n_src());
        for (s, col) in ops.b_cols.iter().enumerate() {
            for &(i, w) in col {
                for j in 0..r {
                    b_hat[(j, s)] += v[(i, j)] * w;
                }
            }
        }
        let mut c_hat = DMatrix::<f64>::zeros(ops.n_det(), r);
        for (d, row) in ops.c_rows.iter().enumerate() {
            for &(i, w) in row {
                for j in 0..r {
                    c_hat[(d, j)] += w * v[(i, j)];
                }
            }
        }
        Ok(RomModel {
            v,
            e_hat,
            a0_hat,
            a1_hat,
            b_hat,
            c_hat,
            a1_dense: a1.to_vec(),
            speed_of_light: ops.domain.speed_of_light,
            updates_since_rebuild: 0,
            rebuild_interval: 50,
        })
    }

    pub fn rank(&self) -> usize {
        self.v.ncols()
    }

    pub fn n_src(&self) -> usize {
        self.b_hat.ncols()
    }

    pub fn n_det(&self) -> usize {
        self.c_hat.nrows()
    }

    pub fn absorption(&self) -> &[f64] {
        &self.a1_dense
    }

    /// The projected absorption block `V^T diag(a1) V` as currently cached.
    pub fn absorption_block(&self) -> &DMatrix<f64> {
        &self.a1_hat
    }

    /// Incremental update `A1_hat += V^T diag(delta) V` at cost `O(r^2 q)`
    /// for `q` changed nodes. Flop accounting: `2 q r^2`.
    pub fn update_absorption(&mut self, delta: &SparseDiag, counters: &Counters) {
        let r = self.v.ncols();
        for (&i, &d) in delta.idx.iter().zip(&delta.val) {
            self.a1_dense[i] += d;
            for a in 0..r {
                let t = d * self.v[(i, a)];
                if t == 0.0 {
                    continue;
                }
                for b in 0..r {
                    self.a1_hat[(a, b)] += t * self.v[(i, b)];
                }
            }
        }
        counters.add_delta_flops(2 * delta.len() as u64 * (r * r) as u64);
        self.updates_since_rebuild += 1;
        if self.updates_since_rebuild >= self.rebuild_interval {
            self.rebuild_absorption();
        }
    }

    /// Replaces the absorption diagonal wholesale and reprojects it.
    pub fn set_absorption(&mut self, a1: &[f64]) -> Result<()> {
        if a1.len() != self.v.nrows() {
            return Err(CoreError::Dimension("set_absorption: diagonal length".into()));
        }
        self.a1_dense.copy_from_slice(a1);
        self.rebuild_absorption();
        Ok(())
    }

    fn rebuild_absorption(&mut self) {
        let (n, r) = self.v.shape();
        let mut scaled = self.v.clone();
        for i in 0..n {
            let d = self.a1_dense[i];
            for j in 0..r {
                scaled[(i, j)] *= d;
            }
        }
        self.a1_hat = self.v.transpose() * scaled;
        self.updates_since_rebuild = 0;
    }

    fn reduced_system(&self, omega: f64) -> DMatrix<Complex64> {
        let r = self.rank();
        let w = omega / self.speed_of_light;
        DMatrix::from_fn(r, r, |i, j| {
            Complex64::new(
                self.a0_hat[(i, j)] + self.a1_hat[(i, j)],
                w * self.e_hat[(i, j)],
            )
        })
    }

    fn factor(&self, omega: f64) -> Result<DenseLu> {
        DenseLu::factor(self.reduced_system(omega)).map_err(|_| CoreError::SingularReduced(omega))
    }

    fn b_complex(&self) -> DMatrix<Complex64> {
        self.b_hat.map(|v| Complex64::new(v, 0.0))
    }

    /// Reduced frequency response `Psi_hat = C_hat M_hat^{-1} B_hat`.
    /// Each solved column counts as one reduced solve.
    pub fn reduced_frequency_response(
        &self,
        omega: f64,
        counters: &Counters,
    ) -> Result<DMatrix<Complex64>> {
        let lu = self.factor(omega)?;
        let x = lu.solve_mat(&self.b_complex());
        counters.add_reduced_solves(self.n_src());
        Ok(self.c_hat.map(|v| Complex64::new(v, 0.0)) * x)
    }

    /// Reduced response and Jacobian sharing one factorization. The Jacobian
    /// row for (source i, detector i') is `i * n_det + i'`; the entry for
    /// parameter k is `-(V Z_hat)[:,i']^T diag(dA1/dp_k) (V X_hat)[:,i]`,
    /// evaluated only on the sparse support of each derivative.
    pub fn reduced_response_and_jacobian(
        &self,
        omega: f64,
        da1: &[SparseDiag],
        counters: &Counters,
    ) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
        let lu = self.factor(omega)?;
        let x = lu.solve_mat(&self.b_complex());
        let ct = self.c_hat.transpose().map(|v| Complex64::new(v, 0.0));
        let z = lu.solve_transpose_mat(&ct);
        counters.add_reduced_solves(self.n_src() + self.n_det());
        let psi = self.c_hat.map(|v| Complex64::new(v, 0.0)) * &x;

        let (n_src, n_det, r) = (self.n_src(), self.n_det(), self.rank());
        let mut jac = DMatrix::<Complex64>::zeros(n_det * n_src, da1.len());
        let mut u_row = vec![Complex64::default(); n_src];
        let mut y_row = vec![Complex64::default(); n_det];
        for (k, d) in da1.iter().enumerate() {
            for (&idx, &dv) in d.idx.iter().zip(&d.val) {
                // lift the states at the single node idx
                for (i, u) in u_row.iter_mut().enumerate() {
                    let mut acc = Complex64::default();
                    for a in 0..r {
                        acc += x[(a, i)] * self.v[(idx, a)];
                    }
                    *u = acc;
                }
                for (ip, y) in y_row.iter_mut().enumerate() {
                    let mut acc = Complex64::default();
                    for a in 0..r {
                        acc += z[(a, ip)] * self.v[(idx, a)];
                    }
                    *y = acc;
                }
                for i in 0..n_src {
                    let xv = u_row[i] * dv;
                    for ip in 0..n_det {
                        jac[(i * n_det + ip, k)] -= y_row[ip] * xv;
                    }
                }
            }
        }
        Ok((psi, jac))
    }
}
