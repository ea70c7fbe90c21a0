use bolaz_bench::{enforcer, fixture, orders_store};
use bolaz_core::runtime::UserContext;
use bolaz_core::sql::Scalar;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn authorize(c: &mut Criterion) {
    let m = fixture("order.json");
    let mut g = c.benchmark_group("authorize");
    for orders in [1_000i64, 10_000] {
        let store = orders_store(&m, 100, orders);
        let e = enforcer(&m);
        let point = e.points_for("getOrder", "orderNo")[0].clone();
        let user = UserContext::new("u2").with_claim("uid", 2i64);
        e.cache().insert_all(
            "u2",
            &point.id(),
            (0..100_000).map(|i| Scalar::Int(1_000_000 + i)),
        );

        let cached = Scalar::Int(1_050_000);
        let owned = Scalar::Int(101);
        let foreign = Scalar::Int(102);
        for (name, value) in [
            ("cache_hit", &cached),
            ("store_hit", &owned),
            ("no_match", &foreign),
        ] {
            g.bench_with_input(BenchmarkId::new(name, orders), value, |b, v| {
                b.iter(|| e.authorize(&user, &point, v, &store).unwrap())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, authorize);
criterion_main!(benches);
