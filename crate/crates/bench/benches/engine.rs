use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use followup_core::fixtures;
use followup_core::flow::FlowConfig;
use followup_core::form::reachable_set;
use followup_core::gateway::{Gateway, GatewayConfig};
use followup_core::kb::KbBuildConfig;
use followup_core::patient::ScriptedPatient;
use followup_core::sim::SimModel;
use followup_core::simulate::{prepare, run_baseline, run_modular, SimContext};
use followup_core::LogicalClock;

fn gateway() -> Gateway {
    Gateway::with_config(Arc::new(SimModel), GatewayConfig::default(), Arc::new(LogicalClock::default()))
}

fn reachable(c: &mut Criterion) {
    let (form, ledger) = fixtures::by_id("form-3").unwrap();
    c.bench_function("reachable_set/form-3", |b| b.iter(|| reachable_set(black_box(&form), black_box(&ledger)).unwrap()));
}

fn retrieval(c: &mut Criterion) {
    let form = fixtures::form2();
    let gw = gateway();
    let (_, kb, _) = prepare(&form, &gw, &FlowConfig::default(), &KbBuildConfig::default(), &LogicalClock::default()).unwrap();
    let dialogue = "Q: Have you had any chest pain or shortness of breath since your last visit?\nA: A little breathless on stairs, no chest pain.";
    c.bench_function("kb_retrieve_similar/form-2/k=3", |b| b.iter(|| kb.retrieve_similar(black_box(dialogue), 3).len()));
}

fn sessions(c: &mut Criterion) {
    let (form, ledger) = fixtures::by_id("form-2").unwrap();
    let gw = gateway();
    let config = FlowConfig::default();
    let (grouping, kb, _) = prepare(&form, &gw, &config, &KbBuildConfig::default(), &LogicalClock::default()).unwrap();
    let patient = ScriptedPatient::new(ledger, fixtures::phrasing_table(&form.form_id));
    let mut group = c.benchmark_group("session/form-2");
    group.sample_size(20);
    group.bench_function("modular", |b| {
        b.iter(|| {
            let (clock, gw, pgw) = (LogicalClock::default(), gateway(), gateway());
            let ctx = SimContext { form: &form, gateway: &gw, patient_gateway: &pgw, patient: &patient, clock: &clock, config: &config };
            run_modular(&ctx, &grouping, &kb, "bench", "scripted").unwrap()
        })
    });
    group.bench_function("baseline", |b| {
        b.iter(|| {
            let (clock, gw, pgw) = (LogicalClock::default(), gateway(), gateway());
            let ctx = SimContext { form: &form, gateway: &gw, patient_gateway: &pgw, patient: &patient, clock: &clock, config: &config };
            run_baseline(&ctx, "bench", "scripted").unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, reachable, retrieval, sessions);
criterion_main!(benches);
