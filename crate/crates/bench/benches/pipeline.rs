//! Hot-path benchmarks: history assembly, turn parsing, trajectory
//! serialization, environment stepping, and a full scripted episode.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use preact_bench::{lettuce_policy, rendered_turns, transcript_steps, transcript_trajectory};
use preact_core::agent::{parse_turn, run_episode, template, EpisodeConfig};
use preact_core::envs::{builtin_spec, reset};
use preact_core::history::build_history;
use preact_core::{
    deserialize_trajectory, serialize_trajectory, EnvFamily, Framework, HistoryPolicy,
};

fn bench_build_history(c: &mut Criterion) {
    let steps = transcript_steps(50);
    let mut group = c.benchmark_group("build_history_50_steps");
    for (label, policy) in [
        ("retention_0", HistoryPolicy::react()),
        ("retention_1", HistoryPolicy::immediate()),
        ("retention_all", HistoryPolicy::permanent()),
    ] {
        group.bench_function(label, |b| {
            b.iter(|| build_history(black_box("You are in a room."), black_box(&steps), &[], policy))
        });
    }
    group.finish();
}

fn bench_parse_turn(c: &mut Criterion) {
    let turns = rendered_turns();
    let mut group = c.benchmark_group("parse_turn");
    for (template, rendered) in &turns {
        group.bench_function(template.family.to_string(), |b| {
            b.iter(|| parse_turn(black_box(rendered), template).unwrap())
        });
    }
    group.finish();
}

fn bench_trajectory_roundtrip(c: &mut Criterion) {
    let trajectory = transcript_trajectory(35);
    let line = serialize_trajectory(&trajectory);
    c.bench_function("serialize_trajectory_35_steps", |b| {
        b.iter(|| serialize_trajectory(black_box(&trajectory)))
    });
    c.bench_function("deserialize_trajectory_35_steps", |b| {
        b.iter(|| deserialize_trajectory(black_box(&line)).unwrap())
    });
}

fn bench_env_step(c: &mut Criterion) {
    let spec = builtin_spec("hh/trap-lettuce").unwrap();
    c.bench_function("household_reset_and_step", |b| {
        b.iter(|| {
            let mut env = reset(black_box(&spec)).unwrap();
            black_box(env.step("go to sidetable 1"))
        })
    });
}

fn bench_scripted_episode(c: &mut Criterion) {
    let policy = lettuce_policy();
    let spec = builtin_spec("hh/trap-lettuce").unwrap();
    let template = template(EnvFamily::Hh, Framework::PreAct).unwrap();
    let config = EpisodeConfig::seeded(0);
    c.bench_function("scripted_episode_to_success", |b| {
        b.iter(|| {
            let mut env = reset(&spec).unwrap();
            run_episode(
                black_box(&policy),
                env.as_mut(),
                &template,
                HistoryPolicy::permanent(),
                &config,
                &[],
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_build_history,
    bench_parse_turn,
    bench_trajectory_roundtrip,
    bench_env_step,
    bench_scripted_episode
);
criterion_main!(benches);
