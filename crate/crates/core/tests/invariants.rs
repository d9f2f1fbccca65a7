//! Property tests of structural invariants that hold for any instance.

use kpzlab::coalescing::{kernel_g, pfaffian};
use kpzlab::estimators::lower_hull;
use kpzlab::inviscid::{gradient_distance, lax_oleinik_step};
use kpzlab::viscous::heat_step;
use kpzlab::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn grid() -> Grid {
    Grid::new(48, 12.0).unwrap()
}

fn field(seed: u64, amp: f64) -> Vec<f64> {
    PotentialField::fourier(seed, 12.0, 6, amp).sample_kick(0, &grid()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Ordered initial data stay ordered after a step.
    #[test]
    fn lax_oleinik_is_monotone(seed in 0u64..10_000, amp in 0.1f64..2.0, lift in 0.0f64..1.0) {
        let g = grid();
        let kick = field(seed + 1, amp);
        let base = field(seed, amp);
        let bump = field(seed + 2, 1.0);
        let lo: Vec<f64> = base.clone();
        let hi: Vec<f64> = base.iter().zip(&bump).map(|(a, b)| a + lift * b.abs()).collect();
        let a = lax_oleinik_step(&SolutionField::from_psi(g, 1.0, 0.0, lo, 0), &kick, &HamiltonianSpec::Quadratic).unwrap();
        let b = lax_oleinik_step(&SolutionField::from_psi(g, 1.0, 0.0, hi, 0), &kick, &HamiltonianSpec::Quadratic).unwrap();
        for i in 0..g.n {
            prop_assert!(a.phi_at(i) <= b.phi_at(i) + 1e-12);
        }
    }

    /// Adding a constant to the data adds it to the solution and leaves the
    /// gradient unchanged.
    #[test]
    fn constants_commute_with_the_step(seed in 0u64..10_000, c in -5.0f64..5.0, b in -0.5f64..0.5) {
        let g = grid();
        let kick = field(seed + 1, 1.0);
        let psi = field(seed, 1.0);
        let shifted: Vec<f64> = psi.iter().map(|v| v + c).collect();
        let a = lax_oleinik_step(&SolutionField::from_psi(g, 1.0, b, psi, 0), &kick, &HamiltonianSpec::Quadratic).unwrap();
        let s = lax_oleinik_step(&SolutionField::from_psi(g, 1.0, b, shifted, 0), &kick, &HamiltonianSpec::Quadratic).unwrap();
        for i in 0..g.n {
            prop_assert!((s.phi_at(i) - a.phi_at(i) - c).abs() < 1e-10);
        }
        prop_assert_eq!(&a.backpointers, &s.backpointers);
        prop_assert!(gradient_distance(&a, &s) < 1e-9);
        prop_assert_eq!(gradient_distance(&a, &a), 0.0);
    }

    /// The normalised kernel conserves total partition mass.
    #[test]
    fn heat_step_conserves_mass(seed in 0u64..10_000, nu in 0.2f64..1.0) {
        let g = grid();
        let cfg = ViscousConfig::new(nu, g, 1.0).unwrap();
        let z = PartitionField::from_psi(g, nu, 0.0, &field(seed, 1.0), 0);
        let next = heat_step(&z, &cfg).unwrap();
        let mass = |z: &PartitionField| (0..g.n).map(|i| z.log_z_raw(i, nu).exp()).sum::<f64>();
        prop_assert!((mass(&next) / mass(&z) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pfaffian_squares_to_determinant(seed in 0u64..100_000, half in 1usize..6) {
        let dim = 2 * half;
        let mut m = SkewMatrix::zeros(dim);
        let mut d = DMatrix::<f64>::zeros(dim, dim);
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        for i in 0..dim {
            for j in i + 1..dim {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5;
                m.set(i, j, v);
                d[(i, j)] = v;
                d[(j, i)] = -v;
            }
        }
        let pf = pfaffian(&m).unwrap();
        prop_assert!((pf * pf - d.determinant()).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_a_decreasing_probability(x in 0.0f64..10.0, dx in 0.0f64..1.0, t in 0.01f64..10.0) {
        let a = kernel_g(x, t).unwrap();
        let b = kernel_g(x + dx, t).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
    }

    /// The hull lies below the data, is convex and keeps both end values.
    #[test]
    fn lower_hull_is_convex(ys in proptest::collection::vec(-3.0f64..3.0, 3..20)) {
        let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64 * 0.25).collect();
        let hull = lower_hull(&xs, &ys);
        prop_assert!(hull.iter().zip(&ys).all(|(h, y)| *h <= y + 1e-12));
        prop_assert!(hull.windows(3).all(|w| w[0] + w[2] - 2.0 * w[1] >= -1e-12));
        prop_assert_eq!(hull[0], ys[0]);
        prop_assert!((hull[ys.len() - 1] - ys[ys.len() - 1]).abs() < 1e-12);
    }
}
