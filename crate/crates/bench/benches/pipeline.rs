use criterion::{black_box, criterion_group, criterion_main, Criterion};
use ldist_core::planner::STAGE_QUERIES;
use ldist_core::{
    build_default_base, BoardConfig, GameState, Planner, PolicySpec, RetrievalQuery, Retriever,
    StageTag, TaskSpec,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn retrieval(c: &mut Criterion) {
    let base = build_default_base();
    let retriever = Retriever::with_defaults(&base).unwrap();
    let state =
        GameState::sample(BoardConfig::default(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let (tenths, text) = STAGE_QUERIES[2];
    let query =
        RetrievalQuery::new(text, state.render(), Some(StageTag::from_tenths(tenths))).unwrap();
    c.bench_function("retrieve_top_k", |b| {
        b.iter(|| retriever.retrieve(black_box(&query)).unwrap())
    });
}

fn episodes(c: &mut Criterion) {
    let planner = Planner::with_defaults();
    let plain = TaskSpec::pursuit(BoardConfig::default(), false);
    let emergency = TaskSpec::pursuit(BoardConfig::with_restricted_center(), true);
    c.bench_function("oracle_episode", |b| {
        b.iter(|| {
            planner
                .run_episode(&plain, &PolicySpec::Oracle, black_box(7))
                .unwrap()
        })
    });
    c.bench_function("oracle_episode_emergency", |b| {
        b.iter(|| {
            planner
                .run_episode(&emergency, &PolicySpec::Oracle, black_box(7))
                .unwrap()
        })
    });
}

criterion_group!(benches, retrieval, episodes);
criterion_main!(benches);
