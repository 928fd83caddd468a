use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

use homewatch_bench::{centre_with, first_slot, report};
use homewatch_core::model::PatientId;
use homewatch_core::sim::{self, CohortSpec, InProcess};
use homewatch_core::store::{EventDraft, EventKind, EventStore};
use homewatch_core::token;
use homewatch_core::triage::reference;
use homewatch_core::{RuleSet, TriageCategory};

fn triage(c: &mut Criterion) {
    let rules = RuleSet::default_v1();
    let pairs = [
        (report(36.8, 0, false), report(36.9, 0, false)),
        (report(38.2, 2, false), report(37.1, 0, false)),
        (report(40.3, 8, true), report(38.0, 3, true)),
    ];
    let mut g = c.benchmark_group("classify");
    g.bench_function("compiled", |b| {
        b.iter(|| {
            for (cur, prev) in &pairs {
                black_box(rules.classify(black_box(cur), Some(prev)));
            }
        })
    });
    g.bench_function("reference", |b| {
        b.iter(|| {
            for (cur, prev) in &pairs {
                black_box(reference::classify(rules.source(), black_box(cur), Some(prev)));
            }
        })
    });
    g.finish();
}

fn tick(c: &mut Criterion) {
    let mut g = c.benchmark_group("tick");
    g.sample_size(10);
    g.bench_function("dispatch_1000", |b| {
        b.iter_batched(|| centre_with(1000), |mut centre| centre.tick(first_slot()).unwrap(), BatchSize::LargeInput)
    });
    let mut idle = centre_with(1000);
    idle.tick(first_slot()).unwrap();
    g.bench_function("idle_1000", |b| b.iter(|| idle.tick(first_slot()).unwrap()));
    g.finish();
}

fn tokens(c: &mut Criterion) {
    let pid = PatientId::new("p-bench");
    let dispatch = homewatch_core::model::DispatchId::new("p-bench-1");
    c.bench_function("token/issue", |b| b.iter(|| token::new_token(&pid, &dispatch, first_slot())));
    let raw = token::generate_secret();
    c.bench_function("token/hash", |b| b.iter(|| token::hash_token(black_box(&raw))));
}

fn store(c: &mut Criterion) {
    let pid = PatientId::new("p-bench");
    let kind = EventKind::FlagChanged {
        from: TriageCategory::Green,
        to: TriageCategory::Orange,
        ruleset_version: "default-v1".into(),
    };
    c.bench_function("store/append", |b| {
        b.iter_batched_ref(
            EventStore::in_memory,
            |s| s.append(EventDraft::patient(&pid, first_slot(), kind.clone())).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

fn simulate(c: &mut Criterion) {
    let spec = CohortSpec::new(200, 2, 7, "stable=0.3,deteriorating=0.1,quarantine=0.05,nonresponder=0.1".parse().unwrap());
    let mut g = c.benchmark_group("simulate");
    g.sample_size(10);
    g.bench_function("200x2d", |b| b.iter(|| sim::run(&spec, &mut InProcess::new()).unwrap()));
    g.finish();
}

criterion_group!(benches, triage, tick, tokens, store, simulate);
criterion_main!(benches);
