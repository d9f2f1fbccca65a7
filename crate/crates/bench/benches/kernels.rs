use criterion::{black_box, criterion_group, criterion_main, Criterion};
use kpzlab::airy::{glue_min, surrogate_field, FieldGrid, SurrogateSpec};
use kpzlab::coalescing::{coalescing_stack, pfaffian, SkewMatrix};
use kpzlab::inviscid::lax_oleinik_step;
use kpzlab::renorm::renorm_pair;
use kpzlab::viscous::heat_step;
use kpzlab::*;

fn solvers(c: &mut Criterion) {
    let grid = Grid::new(4096, 1024.0).unwrap();
    let f = PotentialField::fourier(1, 1024.0, 512, 1.0);
    let kick = f.sample_kick(1, &grid).unwrap();
    let state = SolutionField::from_phi(grid, 1.0, 0.0, &f.sample_kick(0, &grid).unwrap(), 0);
    c.bench_function("lax_oleinik_step n=4096", |b| b.iter(|| lax_oleinik_step(black_box(&state), &kick, &HamiltonianSpec::Quadratic).unwrap()));

    let cfg = ViscousConfig::new(0.5, grid, 1.0).unwrap();
    let z = PartitionField::from_psi(grid, 0.5, 0.0, &kick, 0);
    c.bench_function("heat_step n=4096", |b| b.iter(|| heat_step(black_box(&z), &cfg).unwrap()));
}

fn point_fields(c: &mut Criterion) {
    let stack = coalescing_stack(3, 0.125, 4096.0, 2).unwrap();
    c.bench_function("renorm_pair coalescing P=4096", |b| b.iter(|| renorm_pair(black_box(&stack.strips[0]), &stack.strips[1]).unwrap()));

    let mut m = SkewMatrix::zeros(12);
    for i in 0..12 {
        for j in i + 1..12 {
            m.set(i, j, ((i * 7 + j * 13) % 11) as f64 / 11.0 - 0.5);
        }
    }
    c.bench_function("pfaffian 12x12", |b| b.iter(|| pfaffian(black_box(&m)).unwrap()));

    let g = FieldGrid::new(8.0, 129).unwrap();
    let spec = SurrogateSpec { sigma: 1.0, corr_len: 1.0 };
    let (a, a2) = (surrogate_field(g, spec, 1, 0), surrogate_field(g, spec, 1, 1));
    c.bench_function("glue_min n=129", |b| b.iter(|| glue_min(&g, black_box(&a), &a2).unwrap()));
}

criterion_group!(benches, solvers, point_fields);
criterion_main!(benches);
