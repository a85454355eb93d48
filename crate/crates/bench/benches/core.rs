use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use heightinterp::curve::{generator, scalar_mul};
use heightinterp::formula::check_witness;
use heightinterp::gadgets::four_squares;
use heightinterp::heights::mult_height;
use heightinterp::Integer;
use heightinterp_bench::{em_instance, rational_pairs};

fn bench_mult_height(c: &mut Criterion) {
    let pairs = rational_pairs(64);
    c.bench_function("mult_height/triple", |b| {
        b.iter(|| {
            for (x, y) in &pairs {
                let xy = heightinterp::Rational::from(x * y);
                black_box(mult_height(&[x.clone(), y.clone(), xy]).unwrap());
            }
        })
    });
}

fn bench_scalar_mul(c: &mut Criterion) {
    let mut g = c.benchmark_group("scalar_mul");
    for n in [30u32, 200, 1000] {
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| scalar_mul(&Integer::from(n), &generator()).unwrap())
        });
    }
    g.finish();
}

fn bench_four_squares(c: &mut Criterion) {
    let mut g = c.benchmark_group("four_squares");
    g.sample_size(10);
    for bits in [20u32, 128, 512] {
        let n = (Integer::from(1) << bits) - 3u32;
        g.bench_with_input(BenchmarkId::from_parameter(bits), &n, |b, n| b.iter(|| four_squares(black_box(n))));
    }
    g.finish();
}

fn bench_check_witness(c: &mut Criterion) {
    let (g, w) = em_instance();
    c.bench_function("check_witness/E^4", |b| b.iter(|| check_witness(&g.formula, black_box(&w)).unwrap()));
}

criterion_group!(benches, bench_mult_height, bench_scalar_mul, bench_four_squares, bench_check_witness);
criterion_main!(benches);
