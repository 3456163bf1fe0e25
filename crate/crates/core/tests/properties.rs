//! Property tests for structural invariants of the discrete model and the
//! serialization formats.

use proptest::prelude::*;

use dot_pals_core::inversion::{lift_residual, stack_responses, MeasurementSet};
use dot_pals_core::pals::{csrbf, csrbf_deriv, diagonal_delta, heaviside};
use dot_pals_core::synth::{read_pgm, write_pgm};
use dot_pals_core::{assemble, Diffusion, DomainSpec, SourceDetectorLayout};

use nalgebra::DMatrix;
use num_complex::Complex64;

fn domain(nx: usize, nz: usize) -> DomainSpec {
    DomainSpec {
        half_width: 2.5,
        half_height: 2.5 * (nz as f64 - 1.0) / (nx as f64 - 1.0),
        nx,
        nz,
        speed_of_light: 1.0,
        robin_constant: 1.0,
        diffusion: Diffusion::Constant(0.03),
    }
}

proptest! {
    #[test]
    fn assembled_a0_is_symmetric(nx in 10usize..30, nz in 10usize..30, ns in 1usize..6) {
        let d = domain(nx, nz);
        let layout = SourceDetectorLayout::uniform(&d, ns, ns, 0).unwrap();
        let ops = assemble(&d, &layout).unwrap();
        prop_assert_eq!(ops.a0.max_asymmetry(), 0.0);
        // E vanishes exactly on the Robin boundary rows and is h^2 inside
        let h2 = d.mesh_width() * d.mesh_width();
        for (i, &e) in ops.e_diag.iter().enumerate() {
            prop_assert!(e == 0.0 || (e - h2).abs() < 1e-15 * h2, "row {i}: {e}");
        }
    }

    #[test]
    fn grid_hash_separates_layouts(nx in 10usize..20, ns in 1usize..5) {
        let d = domain(nx, nx);
        let a = assemble(&d, &SourceDetectorLayout::uniform(&d, ns, ns, 0).unwrap()).unwrap();
        let b = assemble(&d, &SourceDetectorLayout::uniform(&d, ns + 1, ns, 0).unwrap()).unwrap();
        prop_assert_ne!(a.grid_hash(), b.grid_hash());
    }

    #[test]
    fn csrbf_is_compact_and_bounded(r in 0.0f64..3.0) {
        let v = csrbf(r);
        prop_assert!((0.0..=1.0).contains(&v));
        if r >= 1.0 {
            prop_assert_eq!(v, 0.0);
            prop_assert_eq!(csrbf_deriv(r), 0.0);
        }
    }

    #[test]
    fn heaviside_is_monotone(a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let eps = 0.1;
        let (ha, hb) = (heaviside(lo, eps), heaviside(hi, eps));
        prop_assert!((0.0..=1.0).contains(&ha));
        prop_assert!(ha <= hb + 1e-15);
    }

    #[test]
    fn lifted_residual_norm_matches_complex(
        re in proptest::collection::vec(-1e3f64..1e3, 1..40),
        im in proptest::collection::vec(-1e3f64..1e3, 1..40),
    ) {
        let n = re.len().min(im.len());
        let m: Vec<Complex64> = (0..n).map(|i| Complex64::new(re[i], im[i])).collect();
        let d = vec![Complex64::new(0.25, -0.5); n];
        let lifted = lift_residual(&m, &d);
        let complex_norm: f64 = m.iter().zip(&d).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        prop_assert!((lifted.norm() - complex_norm).abs() <= 1e-12 * complex_norm.max(1.0));
    }

    #[test]
    fn stacking_matches_documented_index(n_src in 1usize..5, n_det in 1usize..5, n_omega in 1usize..4) {
        let per: Vec<DMatrix<Complex64>> = (0..n_omega)
            .map(|j| {
                DMatrix::from_fn(n_det, n_src, |ip, i| {
                    Complex64::new((i * 100 + j * 10 + ip) as f64, j as f64)
                })
            })
            .collect();
        let stacked = stack_responses(&per);
        let ms = MeasurementSet {
            omegas: vec![0.5; n_omega],
            data: stacked.clone(),
            noise: 0.0,
        };
        for i in 0..n_src {
            for j in 0..n_omega {
                for ip in 0..n_det {
                    let idx = ms.stacked_index(n_det, i, j, ip);
                    prop_assert_eq!(stacked[idx], per[j][(ip, i)]);
                }
            }
        }
    }

    #[test]
    fn diagonal_delta_reconstructs_target(
        old in proptest::collection::vec(-1.0f64..1.0, 1..50),
        step in proptest::collection::vec(-1.0f64..1.0, 1..50),
    ) {
        let n = old.len().min(step.len());
        let new: Vec<f64> = (0..n).map(|i| old[i] + step[i]).collect();
        let delta = diagonal_delta(&old[..n], &new);
        let mut rebuilt = old[..n].to_vec();
        for (&i, &v) in delta.idx.iter().zip(&delta.val) {
            rebuilt[i] += v;
        }
        for i in 0..n {
            prop_assert!((rebuilt[i] - new[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn pgm_roundtrip(nx in 1usize..20, nz in 1usize..20, seed in 0u8..255) {
        let gray: Vec<u8> = (0..nx * nz).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
        let mut buf = Vec::new();
        write_pgm(&mut buf, nx, nz, &gray).unwrap();
        let (rx, rz, back) = read_pgm(&mut std::io::Cursor::new(buf)).unwrap();
        prop_assert_eq!((rx, rz), (nx, nz));
        prop_assert_eq!(back, gray);
    }
}
