//! Finite-difference assembly of the 2D diffusion forward model.
//!
//! The domain is a rectangle with Robin rows on the top and bottom surfaces
//! (sources and detectors live there) and homogeneous Dirichlet columns on the
//! lateral sides. All PDE rows are scaled by `h^2` and the Robin rows by
//! `h/(2*robin_constant)` so that the assembled matrix is exactly symmetric
//! and its diagonal stays O(1). The singular diagonal `E` encodes the Robin
//! constraints as algebraic rows of the DAE.

use crate::error::{CoreError, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub enum Diffusion {
    Constant(f64),
    PerNode(Vec<f64>),
}

impl Diffusion {
    pub fn at(&self, idx: usize) -> f64 {
        match self {
            Diffusion::Constant(d) => *d,
            Diffusion::PerNode(v) => v[idx],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainSpec {
    /// Half-width of the rectangle in cm (x direction).
    pub half_width: f64,
    /// Half-height of the rectangle in cm (depth direction).
    pub half_height: f64,
    pub nx: usize,
    pub nz: usize,
    pub speed_of_light: f64,
    pub robin_constant: f64,
    pub diffusion: Diffusion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Interior,
    RobinTop,
    RobinBottom,
    Dirichlet,
}

impl DomainSpec {
    pub fn n(&self) -> usize {
        self.nx * self.nz
    }

    /// Uniform mesh width; validation rejects non-square cells.
    pub fn mesh_width(&self) -> f64 {
        2.0 * self.half_width / (self.nx - 1) as f64
    }

    pub fn node_index(&self, ix: usize, iz: usize) -> usize {
        iz * self.nx + ix
    }

    /// Physical coordinates of a node; `iz = 0` is the top surface.
    pub fn node_pos(&self, ix: usize, iz: usize) -> (f64, f64) {
        let h = self.mesh_width();
        (
            -self.half_width + ix as f64 * h,
            self.half_height - iz as f64 * h,
        )
    }

    pub fn node_kind(&self, ix: usize, iz: usize) -> NodeKind {
        if ix == 0 || ix == self.nx - 1 {
            NodeKind::Dirichlet
        } else if iz == 0 {
            NodeKind::RobinTop
        } else if iz == self.nz - 1 {
            NodeKind::RobinBottom
        } else {
            NodeKind::Interior
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 3 || self.nz < 3 {
            return Err(CoreError::validation("domain: nx and nz must be >= 3"));
        }
        for (name, v) in [
            ("half_width", self.half_width),
            ("half_height", self.half_height),
            ("speed_of_light", self.speed_of_light),
            ("robin_constant", self.robin_constant),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CoreError::validation(format!(
                    "domain: {name} must be positive and finite"
                )));
            }
        }
        match &self.diffusion {
            Diffusion::Constant(d) => {
                if !(*d > 0.0) {
                    return Err(CoreError::validation("domain: diffusion must be positive"));
                }
            }
            Diffusion::PerNode(v) => {
                if v.len() != self.n() {
                    return Err(CoreError::validation(
                        "domain: diffusion: per-node diffusion length must equal nx*nz",
                    ));
                }
                if v.iter().any(|d| !(*d > 0.0)) {
                    return Err(CoreError::validation(
                        "domain: diffusion: entries must be positive",
                    ));
                }
            }
        }
        let hx = 2.0 * self.half_width / (self.nx - 1) as f64;
        let hz = 2.0 * self.half_height / (self.nz - 1) as f64;
        if (hx - hz).abs() > 1e-12 * hx.max(hz) {
            return Err(CoreError::validation(format!(
                "domain: non-square cells (hx={hx}, hz={hz}); choose nx/nz so the mesh is uniform"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceDetectorLayout {
    /// Node indices of the source centers; all on the top surface row.
    pub sources: Vec<usize>,
    /// Node indices of the detector centers; top and bottom surface rows.
    pub detectors: Vec<usize>,
    /// Footprint half-width in nodes (0 = point source/detector).
    pub footprint_half_width: usize,
}

impl SourceDetectorLayout {
    /// Sources uniformly spaced on the top surface; detectors split evenly
    /// between the top and bottom surfaces.
    pub fn uniform(domain: &DomainSpec, n_src: usize, n_det: usize, half_width: usize) -> Result<Self> {
        let avail = domain.nx.saturating_sub(2);
        if n_src == 0 || n_det == 0 {
            return Err(CoreError::validation("layout: need at least one source and detector"));
        }
        if n_src > avail || n_det > 2 * avail {
            return Err(CoreError::validation(format!(
                "layout: too many sources/detectors for {} interior surface columns",
                avail
            )));
        }
        let spread = |count: usize| -> Vec<usize> {
            (0..count)
                .map(|j| 1 + ((j as f64 + 0.5) * avail as f64 / count as f64) as usize)
                .collect()
        };
        let sources: Vec<usize> = spread(n_src)
            .into_iter()
            .map(|ix| domain.node_index(ix, 0))
            .collect();
        let n_top = n_det.div_ceil(2);
        let n_bot = n_det - n_top;
        let mut detectors: Vec<usize> = spread(n_top)
            .into_iter()
            .map(|ix| domain.node_index(ix, 0))
            .collect();
        if n_bot > 0 {
            detectors.extend(
                spread(n_bot)
                    .into_iter()
                    .map(|ix| domain.node_index(ix, domain.nz - 1)),
            );
        }
        let layout = SourceDetectorLayout {
            sources,
            detectors,
            footprint_half_width: half_width,
        };
        layout.validate(domain)?;
        Ok(layout)
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        let on_surface = |idx: usize| -> bool {
            let iz = idx / domain.nx;
            let ix = idx % domain.nx;
            (iz == 0 || iz == domain.nz - 1) && ix >= 1 && ix <= domain.nx - 2
        };
        for &s in &self.sources {
            let iz = s / domain.nx;
            if !on_surface(s) || iz != 0 {
                return Err(CoreError::validation(format!(
                    "layout: source index {s} is not an interior top-surface node"
                )));
            }
        }
        for &d in &self.detectors {
            if !on_surface(d) {
                return Err(CoreError::validation(format!(
                    "layout: detector index {d} is not an interior surface node"
                )));
            }
        }
        let mut s = self.sources.clone();
        s.sort_unstable();
        s.dedup();
        if s.len() != self.sources.len() {
            return Err(CoreError::validation("layout: sources must be pairwise distinct"));
        }
        let mut d = self.detectors.clone();
        d.sort_unstable();
        d.dedup();
        if d.len() != self.detectors.len() {
            return Err(CoreError::validation("layout: detectors must be pairwise distinct"));
        }
        Ok(())
    }
}

/// Assembled operators of the DAE: diagonal `E`, stiffness `A0`, source
/// columns `B`, detector rows `C`.
#[derive(Debug, Clone)]
pub struct DiscreteOperators {
    pub domain: DomainSpec,
    pub layout: SourceDetectorLayout,
    pub n: usize,
    /// Diagonal of E: `h^2` everywhere except the top/bottom surface rows (zero).
    pub e_diag: Vec<f64>,
    /// Real symmetric diffusion operator, row-scaled as described in the module docs.
    pub a0: CsrMatrix,
    /// Sparse source columns (node index, value), one per source.
    pub b_cols: Vec<Vec<(usize, f64)>>,
    /// Sparse detector quadrature rows (node index, weight), one per detector.
    pub c_rows: Vec<Vec<(usize, f64)>>,
    pub kinds: Vec<NodeKind>,
}

/// Assembles the scaled finite-difference system.
pub fn assemble(domain: &DomainSpec, layout: &SourceDetectorLayout) -> Result<DiscreteOperators> {
    domain.validate()?;
    layout.validate(domain)?;
    let (nx, nz) = (domain.nx, domain.nz);
    let n = domain.n();
    let h = domain.mesh_width();
    let h2 = h * h;
    let robin_scale = h / (2.0 * domain.robin_constant);

    let kinds: Vec<NodeKind> = (0..n)
        .map(|idx| domain.node_kind(idx % nx, idx / nx))
        .collect();

    let e_diag: Vec<f64> = (0..n)
        .map(|idx| {
            let iz = idx / nx;
            if iz == 0 || iz == nz - 1 {
                0.0
            } else {
                h2
            }
        })
        .collect();

    // Face diffusion between two nodes; arithmetic mean keeps the matrix symmetric.
    let d_face = |a: usize, b: usize| 0.5 * (domain.diffusion.at(a) + domain.diffusion.at(b));

    let mut trip: Vec<(usize, usize, f64)> = Vec::with_capacity(5 * n);
    for iz in 0..nz {
        for ix in 0..nx {
            let i = domain.node_index(ix, iz);
            match kinds[i] {
                NodeKind::Dirichlet => trip.push((i, i, 1.0)),
                NodeKind::RobinTop | NodeKind::RobinBottom => {
                    let inner = if kinds[i] == NodeKind::RobinTop {
                        domain.node_index(ix, 1)
                    } else {
                        domain.node_index(ix, nz - 2)
                    };
                    let df = d_face(i, inner);
                    trip.push((i, i, robin_scale + df));
                    trip.push((i, inner, -df));
                }
                NodeKind::Interior => {
                    let mut diag = 0.0;
                    let neighbors = [
                        domain.node_index(ix - 1, iz),
                        domain.node_index(ix + 1, iz),
                        domain.node_index(ix, iz - 1),
                        domain.node_index(ix, iz + 1),
                    ];
                    for nb in neighbors {
                        let df = d_face(i, nb);
                        diag += df;
                        // Homogeneous Dirichlet neighbors are eliminated to keep symmetry.
                        if kinds[nb] != NodeKind::Dirichlet {
                            trip.push((i, nb, -df));
                        }
                    }
                    trip.push((i, i, diag));
                }
            }
        }
    }
    let a0 = CsrMatrix::from_triplets(n, n, &trip);
    assert_eq!(a0.max_asymmetry(), 0.0, "assembled A0 must be exactly symmetric");

    let footprint = |center: usize| -> Vec<usize> {
        let iz = center / nx;
        let ix = center % nx;
        let w = layout.footprint_half_width;
        let lo = ix.saturating_sub(w).max(1);
        let hi = (ix + w).min(nx - 2);
        (lo..=hi).map(|x| domain.node_index(x, iz)).collect()
    };

    // Source columns: the boundary data is a unit-strength surface density
    // (nodal value 1/(count*h), so its quadrature over the footprint is one
    // regardless of the mesh). With the Robin row scale h/(2*robin_constant)
    // the stored entries are mesh-independent.
    let b_cols: Vec<Vec<(usize, f64)>> = layout
        .sources
        .iter()
        .map(|&s| {
            let nodes = footprint(s);
            let v = robin_scale / (nodes.len() as f64 * h);
            nodes.into_iter().map(|idx| (idx, v)).collect()
        })
        .collect();

    // Detector rows: trapezoidal quadrature over the footprint; a point
    // detector reads the nodal value directly.
    let c_rows: Vec<Vec<(usize, f64)>> = layout
        .detectors
        .iter()
        .map(|&d| {
            let nodes = footprint(d);
            let m = nodes.len();
            if m == 1 {
                vec![(nodes[0], 1.0)]
            } else {
                nodes
                    .into_iter()
                    .enumerate()
                    .map(|(k, idx)| {
                        let w = if k == 0 || k == m - 1 { 0.5 * h } else { h };
                        (idx, w)
                    })
                    .collect()
            }
        })
        .collect();

    Ok(DiscreteOperators {
        domain: domain.clone(),
        layout: layout.clone(),
        n,
        e_diag,
        a0,
        b_cols,
        c_rows,
        kinds,
    })
}

impl DiscreteOperators {
    pub fn n_src(&self) -> usize {
        self.b_cols.len()
    }

    pub fn n_det(&self) -> usize {
        self.c_rows.len()
    }

    /// Mask of nodes that carry the PDE (absorption acts only there).
    pub fn interior_mask(&self) -> Vec<bool> {
        self.kinds.iter().map(|k| *k == NodeKind::Interior).collect()
    }

    /// Hash of mesh geometry plus source/detector layout; reduction bases are
    /// only valid for the exact grid and layout they were built on.
    pub fn grid_hash(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.domain.nx as u64);
        h.write_u64(self.domain.nz as u64);
        h.write_f64(self.domain.half_width);
        h.write_f64(self.domain.half_height);
        h.write_f64(self.domain.speed_of_light);
        h.write_f64(self.domain.robin_constant);
        match &self.domain.diffusion {
            Diffusion::Constant(d) => h.write_f64(*d),
            Diffusion::PerNode(v) => {
                for d in v {
                    h.write_f64(*d);
                }
            }
        }
        h.write_u64(self.layout.footprint_half_width as u64);
        for &s in &self.layout.sources {
            h.write_u64(s as u64);
        }
        h.write_u64(u64::MAX); // separator between index lists
        for &d in &self.layout.detectors {
            h.write_u64(d as u64);
        }
        h.finish()
    }

    /// Debug dump of E/A0/B/C in coordinate-list text format.
    pub fn dump_coo(&self, out: &mut dyn std::io::Write) -> std::io::Result<()> {
        writeln!(out, "# E diagonal ({} rows)", self.n)?;
        for (i, v) in self.e_diag.iter().enumerate() {
            if *v != 0.0 {
                writeln!(out, "E {i} {i} {v:.17e}")?;
            }
        }
        writeln!(out, "# A0 ({} x {}, {} nonzeros)", self.n, self.n, self.a0.nnz())?;
        for r in 0..self.n {
            for (c, v) in self.a0.row(r) {
                writeln!(out, "A0 {r} {c} {v:.17e}")?;
            }
        }
        writeln!(out, "# B ({} columns)", self.n_src())?;
        for (j, col) in self.b_cols.iter().enumerate() {
            for (i, v) in col {
                writeln!(out, "B {i} {j} {v:.17e}")?;
            }
        }
        writeln!(out, "# C ({} rows)", self.n_det())?;
        for (i, row) in self.c_rows.iter().enumerate() {
            for (j, v) in row {
                writeln!(out, "C {i} {j} {v:.17e}")?;
            }
        }
        Ok(())
    }
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Self {
        Fnv1a(0xcbf29ce484222325)
    }
    fn write_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }
    fn write_f64(&mut self, v: f64) {
        self.write_u64(v.to_bits());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_domain(nx: usize) -> DomainSpec {
        DomainSpec {
            half_width: 2.5,
            half_height: 2.5,
            nx,
            nz: nx,
            speed_of_light: 1.0,
            robin_constant: 1.0,
            diffusion: Diffusion::Constant(0.03),
        }
    }

    #[test]
    fn state_dimension_matches_grid() {
        let d = small_domain(50);
        assert_eq!(d.n(), 2500);
        let d = small_domain(401);
        assert_eq!(d.n(), 160801);
    }

    #[test]
    fn rejects_non_square_cells() {
        let mut d = small_domain(10);
        d.nz = 14;
        assert!(matches!(d.validate(), Err(CoreError::Validation(_))));
    }

    #[test]
    fn rejects_layout_off_surface() {
        let d = small_domain(10);
        let layout = SourceDetectorLayout {
            sources: vec![d.node_index(3, 4)], // not a surface node
            detectors: vec![d.node_index(3, 0)],
            footprint_half_width: 0,
        };
        assert!(assemble(&d, &layout).is_err());
    }

    #[test]
    fn interior_stencil_weights() {
        // On a 5x5 grid the center node has no Dirichlet neighbor, so the full
        // 5-point stencil (-D,-D,4D,-D,-D) must appear verbatim.
        let d = small_domain(5);
        let layout = SourceDetectorLayout::uniform(&d, 2, 2, 0).unwrap();
        let ops = assemble(&d, &layout).unwrap();
        let dv = 0.03;
        let c = d.node_index(2, 2);
        assert_eq!(ops.a0.get(c, c), 4.0 * dv);
        for nb in [d.node_index(1, 2), d.node_index(3, 2), d.node_index(2, 1), d.node_index(2, 3)] {
            assert_eq!(ops.a0.get(c, nb), -dv);
        }
    }

    #[test]
    fn three_by_three_hand_assembly() {
        // The single interior node of a 3x3 grid has both lateral neighbors
        // eliminated (Dirichlet); only the vertical couplings survive.
        let d = small_domain(3);
        let layout = SourceDetectorLayout::uniform(&d, 1, 1, 0).unwrap();
        let ops = assemble(&d, &layout).unwrap();
        let dv = 0.03;
        let c = d.node_index(1, 1);
        assert_eq!(ops.a0.get(c, c), 4.0 * dv);
        assert_eq!(ops.a0.get(c, d.node_index(1, 0)), -dv);
        assert_eq!(ops.a0.get(c, d.node_index(1, 2)), -dv);
        assert_eq!(ops.a0.get(c, d.node_index(0, 1)), 0.0);
        let h = d.mesh_width();
        assert_eq!(ops.a0.get(d.node_index(1, 0), d.node_index(1, 0)), h / 2.0 + dv);
    }

    #[test]
    fn dae_structure_of_e() {
        let d = small_domain(7);
        let layout = SourceDetectorLayout::uniform(&d, 3, 4, 0).unwrap();
        let ops = assemble(&d, &layout).unwrap();
        let h2 = d.mesh_width().powi(2);
        let zeros = ops.e_diag.iter().filter(|v| **v == 0.0).count();
        assert_eq!(zeros, 2 * d.nx);
        for iz in 1..d.nz - 1 {
            for ix in 0..d.nx {
                assert_eq!(ops.e_diag[d.node_index(ix, iz)], h2);
            }
        }
    }

    #[test]
    fn b_and_c_live_on_surface_nodes() {
        let d = small_domain(20);
        let layout = SourceDetectorLayout::uniform(&d, 6, 6, 1).unwrap();
        let ops = assemble(&d, &layout).unwrap();
        for col in &ops.b_cols {
            // stored entries sum to 1/(2*robin_constant), independent of h
            let raw_sum: f64 = col.iter().map(|(_, v)| v).sum();
            assert!((raw_sum - 0.5).abs() < 1e-15);
            for (idx, _) in col {
                assert_ne!(ops.kinds[*idx], NodeKind::Interior);
            }
        }
        for row in &ops.c_rows {
            for (idx, _) in row {
                assert_ne!(ops.kinds[*idx], NodeKind::Interior);
            }
        }
    }

    #[test]
    fn grid_hash_sensitive_to_layout() {
        let d = small_domain(12);
        let l1 = SourceDetectorLayout::uniform(&d, 4, 4, 0).unwrap();
        let l2 = SourceDetectorLayout::uniform(&d, 5, 4, 0).unwrap();
        let h1 = assemble(&d, &l1).unwrap().grid_hash();
        let h2 = assemble(&d, &l2).unwrap().grid_hash();
        assert_ne!(h1, h2);
    }
}
