//! Synthetic ground truth and measurement generation.
//!
//! Phantoms are binary pixel masks with per-pixel absorption values; data is
//! simulated through the pixel-basis absorption path, never through the
//! CSRBF parametrization used for reconstruction, so no inverse crime is
//! committed.

use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diagnostics::Counters;
use crate::error::{CoreError, Result};
use crate::forward::frequency_response;
use crate::grid::{DiscreteOperators, DomainSpec};
use crate::inversion::{stack_responses, MeasurementSet};
use crate::pals::{absorption_from_pixels, PalsConfig};
use crate::solve::SolverOpts;

pub const PRESETS: [&str; 4] = ["block-pair", "triple-disc", "cup", "amoeba"];

/// Ground-truth absorption image on the reconstruction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub nx: usize,
    pub nz: usize,
    /// Anomaly indicator per node.
    pub mask: Vec<bool>,
    /// Per-node absorption values.
    pub absorption: Vec<f64>,
    pub seed: u64,
    /// Preset name or mask file the shape came from.
    pub descriptor: String,
}

impl Phantom {
    pub fn mask_fraction(&self) -> f64 {
        self.mask.iter().filter(|&&m| m).count() as f64 / self.mask.len() as f64
    }
}

/// Evaluates a named preset on unit-square coordinates (`u` right, `w` up).
fn preset_contains(name: &str, u: f64, w: f64) -> Result<bool> {
    let disc = |cu: f64, cw: f64, r: f64| (u - cu).powi(2) + (w - cw).powi(2) <= r * r;
    match name {
        "block-pair" => Ok((0.15..=0.40).contains(&u) && (0.25..=0.50).contains(&w)
            || (0.55..=0.85).contains(&u) && (0.55..=0.80).contains(&w)),
        "triple-disc" => Ok(disc(0.30, 0.30, 0.10) || disc(0.70, 0.35, 0.10) || disc(0.50, 0.70, 0.12)),
        "cup" => {
            let d2 = (u - 0.5).powi(2) + (w - 0.5).powi(2);
            Ok(d2 <= 0.30 * 0.30 && d2 >= 0.18 * 0.18 && w <= 0.58)
        }
        "amoeba" => {
            let du = u - 0.5;
            let dw = w - 0.5;
            let theta = dw.atan2(du);
            let rim = 0.25 + 0.07 * (3.0 * theta).sin() + 0.04 * (5.0 * theta).cos();
            Ok(du * du + dw * dw <= rim * rim)
        }
        other => Err(CoreError::validation(format!("unknown phantom preset '{other}'"))),
    }
}

/// Rasterizes a preset shape to a node mask. Boundary nodes stay background
/// because absorption only acts on interior nodes.
pub fn preset_mask(name: &str, domain: &DomainSpec) -> Result<Vec<bool>> {
    let (nx, nz) = (domain.nx, domain.nz);
    let mut mask = vec![false; nx * nz];
    for iz in 1..nz - 1 {
        for ix in 1..nx - 1 {
            let u = ix as f64 / (nx - 1) as f64;
            // w measures height from the bottom surface
            let w = 1.0 - iz as f64 / (nz - 1) as f64;
            mask[domain.node_index(ix, iz)] = preset_contains(name, u, w)?;
        }
    }
    Ok(mask)
}

/// Builds a phantom from an explicit mask: background pixels get `mu_out`,
/// anomaly pixels a normal perturbation of `mu_in` (std `sigma * mu_in`,
/// clipped positive), deterministic in `seed`.
pub fn phantom_from_mask(
    mask: Vec<bool>,
    domain: &DomainSpec,
    seed: u64,
    cfg: &PalsConfig,
    descriptor: &str,
) -> Result<Phantom> {
    if mask.len() != domain.n() {
        return Err(CoreError::Dimension(format!(
            "phantom mask has {} pixels, grid has {}",
            mask.len(),
            domain.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).map_err(|_| CoreError::validation("bad sigma"))?;
    let absorption: Vec<f64> = mask
        .iter()
        .map(|&inside| {
            if inside {
                let v = cfg.mu_in * (1.0 + cfg.sigma * normal.sample(&mut rng));
                v.max(1e-6)
            } else {
                cfg.mu_out
            }
        })
        .collect();
    Ok(Phantom {
        nx: domain.nx,
        nz: domain.nz,
        mask,
        absorption,
        seed,
        descriptor: descriptor.to_string(),
    })
}

/// Rasterizes a named preset into a phantom.
pub fn rasterize_phantom(
    shape: &str,
    domain: &DomainSpec,
    seed: u64,
    cfg: &PalsConfig,
) -> Result<Phantom> {
    let mask = preset_mask(shape, domain)?;
    phantom_from_mask(mask, domain, seed, cfg, shape)
}

/// Simulates boundary data with the full-order model on the pixel absorption
/// map and perturbs it with white noise. Real and imaginary parts receive
/// independent Gaussian noise with standard deviation
/// `noise * RMS(D0) / sqrt(2)`, so the expected relative perturbation is
/// `noise`.
pub fn simulate_measurements(
    phantom: &Phantom,
    ops: &DiscreteOperators,
    omegas: &[f64],
    noise: f64,
    seed: u64,
    solver: &SolverOpts,
) -> Result<MeasurementSet> {
    if phantom.nx != ops.domain.nx || phantom.nz != ops.domain.nz {
        return Err(CoreError::Dimension(
            "phantom grid does not match the assembled operators".into(),
        ));
    }
    if omegas.is_empty() {
        return Err(CoreError::validation("simulate: empty frequency list"));
    }
    if !(0.0..1.0).contains(&noise) {
        return Err(CoreError::validation("simulate: noise fraction must be in [0, 1)"));
    }
    let a1 = absorption_from_pixels(&phantom.absorption, &ops.domain);
    // data generation bookkeeping stays out of the inversion counters
    let local = Counters::default();
    let per: Vec<_> = omegas
        .iter()
        .map(|&w| frequency_response(ops, &a1, w, solver, &local))
        .collect::<Result<_>>()?;
    let mut data = stack_responses(&per);
    if noise > 0.0 {
        let rms = (data.iter().map(|v| v.norm_sqr()).sum::<f64>() / data.len() as f64).sqrt();
        let sigma = noise * rms / 2.0f64.sqrt();
        let normal = Normal::new(0.0, sigma).map_err(|_| CoreError::validation("bad noise"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut data {
            let re = normal.sample(&mut rng);
            let im = normal.sample(&mut rng);
            *v += Complex64::new(re, im);
        }
    }
    Ok(MeasurementSet {
        omegas: omegas.to_vec(),
        data,
        noise,
    })
}

/// Writes a mask as an ASCII portable graymap (0 background, 255 anomaly).
pub fn write_mask_pgm(out: &mut dyn Write, nx: usize, nz: usize, mask: &[bool]) -> Result<()> {
    write_pgm(out, nx, nz, &mask.iter().map(|&m| if m { 255 } else { 0 }).collect::<Vec<u8>>())
}

/// Writes 8-bit gray values row by row as plain (P2) PGM.
pub fn write_pgm(out: &mut dyn Write, nx: usize, nz: usize, gray: &[u8]) -> Result<()> {
    if gray.len() != nx * nz {
        return Err(CoreError::Dimension("pgm: pixel count mismatch".into()));
    }
    writeln!(out, "P2")?;
    writeln!(out, "{nx} {nz}")?;
    writeln!(out, "255")?;
    for row in gray.chunks(nx) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

/// Reads a P2 (plain) or P5 (binary) PGM.
pub fn read_pgm(inp: &mut dyn BufRead) -> Result<(usize, usize, Vec<u8>)> {
    let mut header_tokens: Vec<String> = Vec::new();
    let mut magic = String::new();
    // token scanner that skips whitespace and '#' comments
    let mut bytes: Vec<u8> = Vec::new();
    inp.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let next_token = |bytes: &[u8], pos: &mut usize| -> Option<String> {
        while *pos < bytes.len() {
            let b = bytes[*pos];
            if b == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                *pos += 1;
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos > start {
            Some(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
        } else {
            None
        }
    };
    for i in 0..4 {
        let tok = next_token(&bytes, &mut pos)
            .ok_or_else(|| CoreError::Format("pgm: truncated header".into()))?;
        if i == 0 {
            magic = tok;
        } else {
            header_tokens.push(tok);
        }
    }
    let nx: usize = header_tokens[0]
        .parse()
        .map_err(|_| CoreError::Format("pgm: bad width".into()))?;
    let nz: usize = header_tokens[1]
        .parse()
        .map_err(|_| CoreError::Format("pgm: bad height".into()))?;
    let maxval: usize = header_tokens[2]
        .parse()
        .map_err(|_| CoreError::Format("pgm: bad maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(CoreError::Format("pgm: only 8-bit maps supported".into()));
    }
    let count = nx * nz;
    let mut gray = Vec::with_capacity(count);
    match magic.as_str() {
        "P2" => {
            for _ in 0..count {
                let tok = next_token(&bytes, &mut pos)
                    .ok_or_else(|| CoreError::Format("pgm: truncated pixel data".into()))?;
                gray.push(
                    tok.parse::<u8>()
                        .map_err(|_| CoreError::Format("pgm: bad pixel value".into()))?,
                );
            }
        }
        "P5" => {
            pos += 1; // single whitespace after maxval
            if bytes.len() < pos + count {
                return Err(CoreError::Format("pgm: truncated pixel data".into()));
            }
            gray.extend_from_slice(&bytes[pos..pos + count]);
        }
        other => {
            return Err(CoreError::Format(format!(
                "pgm: unsupported magic '{other}'"
            )))
        }
    }
    Ok((nx, nz, gray))
}

const MEAS_MAGIC: &[u8; 4] = b"DOTM";
const MEAS_VERSION: u32 = 1;

/// Writes a measurement set with its layout dimensions and the grid hash of
/// the operators it was generated on. Fixed little-endian layout; identical
/// inputs give identical bytes.
pub fn write_measurements(
    out: &mut dyn Write,
    ms: &MeasurementSet,
    n_src: usize,
    n_det: usize,
    grid_hash: u64,
    seed: u64,
) -> Result<()> {
    out.write_all(MEAS_MAGIC)?;
    out.write_all(&MEAS_VERSION.to_le_bytes())?;
    out.write_all(&grid_hash.to_le_bytes())?;
    out.write_all(&(n_src as u64).to_le_bytes())?;
    out.write_all(&(n_det as u64).to_le_bytes())?;
    out.write_all(&(ms.omegas.len() as u64).to_le_bytes())?;
    out.write_all(&ms.noise.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;
    for w in &ms.omegas {
        out.write_all(&w.to_le_bytes())?;
    }
    for v in &ms.data {
        out.write_all(&v.re.to_le_bytes())?;
        out.write_all(&v.im.to_le_bytes())?;
    }
    Ok(())
}

pub struct MeasurementFile {
    pub set: MeasurementSet,
    pub n_src: usize,
    pub n_det: usize,
    pub grid_hash: u64,
    pub seed: u64,
}

pub fn read_measurements(inp: &mut dyn std::io::Read) -> Result<MeasurementFile> {
    let mut magic = [0u8; 4];
    inp.read_exact(&mut magic)?;
    if &magic != MEAS_MAGIC {
        return Err(CoreError::Format("measurement file: bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    inp.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != MEAS_VERSION {
        return Err(CoreError::Format(format!(
            "measurement file: unsupported version {version}"
        )));
    }
    let mut b8 = [0u8; 8];
    let mut read_u64 = |inp: &mut dyn std::io::Read| -> Result<u64> {
        inp.read_exact(&mut b8)?;
        Ok(u64::from_le_bytes(b8))
    };
    let grid_hash = read_u64(inp)?;
    let n_src = read_u64(inp)? as usize;
    let n_det = read_u64(inp)? as usize;
    let n_omega = read_u64(inp)? as usize;
    let noise = f64::from_bits(read_u64(inp)?);
    let seed = read_u64(inp)?;
    let mut omegas = Vec::with_capacity(n_omega);
    for _ in 0..n_omega {
        omegas.push(f64::from_bits(read_u64(inp)?));
    }
    let count = n_src
        .checked_mul(n_det)
        .and_then(|v| v.checked_mul(n_omega))
        .ok_or_else(|| CoreError::Format("measurement file: bad dimensions".into()))?;
    let mut data = Vec::with_capacity(count);
    for _ in 0..count {
        let re = f64::from_bits(read_u64(inp)?);
        let im = f64::from_bits(read_u64(inp)?);
        data.push(Complex64::new(re, im));
    }
    Ok(MeasurementFile {
        set: MeasurementSet {
            omegas,
            data,
            noise,
        },
        n_src,
        n_det,
        grid_hash,
        seed,
    })
}

pub fn save_measurements(
    path: &Path,
    ms: &MeasurementSet,
    n_src: usize,
    n_det: usize,
    grid_hash: u64,
    seed: u64,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_measurements(&mut f, ms, n_src, n_det, grid_hash, seed)?;
    f.flush()?;
    Ok(())
}

pub fn load_measurements(path: &Path) -> Result<MeasurementFile> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_measurements(&mut f)
}
