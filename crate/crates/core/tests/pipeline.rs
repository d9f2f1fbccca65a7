//! End-to-end runs through several modules at once.

use kpzlab::coalescing::coalescing_stack;
use kpzlab::export::{read_f64_columns, read_table, write_f64_columns, write_table};
use kpzlab::geometry::extract_strip;
use kpzlab::inviscid::{detect_shocks, evolve, track_shocks};
use kpzlab::renorm::{fold_stack, renorm_pair, renorm_sweep};
use kpzlab::*;

const Q: HamiltonianSpec = HamiltonianSpec::Quadratic;

fn forced_run(steps: usize) -> Vec<SolutionField> {
    let grid = Grid::new(512, 64.0).unwrap();
    let f = PotentialField::fourier(17, 64.0, 32, 1.0);
    evolve(&SolutionField::flat(grid, 1.0, 0.0, 0), &f, &Q, steps).unwrap()
}

#[test]
fn composed_strips_match_direct_extraction() {
    let fields = forced_run(96);
    let tol = 4.0 * fields[0].grid.h();
    let lower = extract_strip(&fields, 64, 32, tol).unwrap().strip;
    let upper = extract_strip(&fields, 96, 64, tol).unwrap().strip;
    let direct = extract_strip(&fields, 96, 32, tol).unwrap().strip;
    let composite = renorm_pair(&upper, &lower).unwrap();
    assert_eq!((composite.t_top, composite.t_bottom), (96.0, 32.0));
    assert!(composite.count() <= upper.count().min(lower.count()));
    assert_eq!(composite.count(), direct.count());
    for k in 0..direct.count() as i64 {
        assert!((composite.cross_pos(k) - direct.cross_pos(k)).abs() < 1e-12);
    }
}

#[test]
fn shocks_merge_and_thin_out() {
    let fields = forced_run(64);
    let mut shocks = Vec::new();
    let mut counts = Vec::new();
    for f in &fields[1..] {
        shocks = track_shocks(&shocks, &detect_shocks(f, 2, 0.0), 0.25 * f.grid.h(), f.grid.period).unwrap();
        counts.push(shocks.len());
        assert!(shocks.iter().all(|s| s.age() >= 0 && s.current_time == f.time_index));
    }
    // one-dimensional shocks only merge, so late counts do not exceed early ones
    assert!(counts[63] <= counts[15], "{counts:?}");
    assert!(counts[63] > 0);
}

#[test]
fn coalescing_density_decays_under_composition() {
    let stack = coalescing_stack(5, 0.25, 512.0, 16).unwrap();
    let sw = renorm_sweep(&stack, SweepMode::Incremental).unwrap();
    assert!(sw.densities.windows(2).all(|w| w[1].1 <= w[0].1));
    let whole = fold_stack(&stack.strips).unwrap();
    let last = sw.densities.last().unwrap();
    assert_eq!(last.0, 16.0);
    assert!((whole.cross_density() - last.1).abs() < 1e-12);
}

#[test]
fn snapshots_round_trip_through_text_and_binary() {
    let fields = forced_run(4);
    let rows = kpzlab::export::inviscid_snapshot_rows(&fields[4]);
    let mut text = Vec::new();
    write_table(&mut text, &["x", "phi", "u", "backpointer"], &rows).unwrap();
    let (headers, back) = read_table(std::str::from_utf8(&text).unwrap()).unwrap();
    assert_eq!(headers, ["x", "phi", "u", "backpointer"]);
    assert_eq!(back, rows);
    let mut bin = Vec::new();
    write_f64_columns(&mut bin, &rows).unwrap();
    assert_eq!(read_f64_columns(&bin, 4).unwrap(), rows);
}
