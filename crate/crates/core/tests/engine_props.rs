//! Property tests for replicas, views, the dataflow runtime, graph models
//! and the cluster simulator.

mod common;

use proptest::prelude::*;
use protoflow_core::dataflow::{
    export_trace, identity_protocol, payload_bits_eq, DataflowError, Payload, Protocol, ProtocolRegistry,
};
use protoflow_core::models::{
    join_group_by, mapreduce, pagerank, sssp, wcc, wordcount_job, GraphSnapshot, JobConfig, JoinView, SsspScheduler,
};
use protoflow_core::replica::{PartitionMap, ReplicaConfig, ReplicaManager, Role};
use protoflow_core::sim::{simulate, ClusterSim, Job, JobSpec, SimConfig};
use protoflow_core::view::{Lineage, OperatorRegistry, StoreSource, ViewCatalog};
use protoflow_core::{replay, DataKey, EntityId, Value, Version};
use rand::Rng;

fn value() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::Int),
        // JSON has no encoding for NaN or infinities.
        any::<f64>().prop_filter("finite", |x| x.is_finite()).prop_map(Value::Float),
        ".{0,12}".prop_map(Value::from),
    ]
}

fn payload() -> impl Strategy<Value = Payload> {
    prop::collection::vec(value(), 0..8)
}

fn graph(seed: u64, max_n: usize) -> GraphSnapshot {
    let mut r = common::rng(seed);
    let n = r.gen_range(1..=max_n);
    let m = r.gen_range(0..=3 * n);
    common::random_graph(&mut r, n, m, 20)
}

fn stream_text(seed: u64) -> String {
    let mut r = common::rng(seed);
    let epochs = r.gen_range(1..5);
    common::render(&common::random_stream(&mut r, epochs, 12, 10))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn json_codec_round_trips(p in payload()) {
        prop_assert!(identity_protocol().round_trips(&p));
    }

    #[test]
    fn registry_self_test_rejects_lossy_samples(p in payload()) {
        let mut lossy = p.clone();
        lossy.push(Value::Float(f64::NAN));
        let mut r = ProtocolRegistry::new();
        let err = r.register(Protocol::new("lossy", |_| unreachable!()).samples(vec![p, lossy])).unwrap_err();
        prop_assert_eq!(err, DataflowError::CodecSelfTestFailed { protocol: "lossy".into(), sample: 1 });
    }
}

#[derive(Clone, Debug)]
enum Op {
    Write { key: usize, value: Option<i64> },
    Read { machine: usize, key: usize },
    Tick(u64),
    Window,
    Swap(usize),
    Rebalance,
    Gc,
}

fn ops() -> impl Strategy<Value = Vec<Op>> {
    prop::collection::vec(
        prop_oneof![
            4 => (0usize..30, prop::option::weighted(0.9, 0i64..100)).prop_map(|(key, value)| Op::Write { key, value }),
            4 => (0usize..4, 0usize..30).prop_map(|(machine, key)| Op::Read { machine, key }),
            2 => (1u64..4).prop_map(Op::Tick),
            1 => Just(Op::Window),
            1 => (0usize..16).prop_map(Op::Swap),
            1 => Just(Op::Rebalance),
            1 => Just(Op::Gc),
        ],
        1..150,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_partition_has_one_primary(script in ops(), skewed in any::<bool>()) {
        let mut rm = ReplicaManager::new(ReplicaConfig::new(4).with_partitions(16));
        let keys: Vec<DataKey> = (0..30).map(|i| DataKey::field(EntityId::node(format!("k{i}")), "x")).collect();
        let (mut v, mut tick) = (Version::new(0, 0), 0);
        for op in script {
            match op {
                Op::Write { key, value } => {
                    v.seq += 1;
                    let k = &keys[key];
                    rm.coherent_write(rm.place(k), k.clone(), v, value.map(Value::Int)).unwrap();
                    rm.advance_stable(v);
                }
                Op::Read { machine, key } => {
                    // Skewed runs read mostly from machine 3 to provoke swaps.
                    let m = if skewed { 3 } else { machine };
                    rm.coherent_read(m, &keys[key], v).unwrap();
                }
                Op::Tick(dt) => {
                    tick += dt;
                    rm.advance_to(tick);
                }
                Op::Window => {
                    rm.end_window();
                }
                Op::Swap(p) => {
                    rm.maybe_swap(p);
                }
                Op::Rebalance => {
                    rm.rebalance();
                }
                Op::Gc => {
                    rm.gc_replicas();
                }
            }
            for p in 0..rm.map().partitions() {
                let primaries: Vec<usize> =
                    rm.replicas_of(p).filter(|(_, r)| r.role == Role::Primary).map(|(m, _)| m).collect();
                prop_assert_eq!(primaries, vec![rm.map().owner(p)], "partition {}", p);
            }
        }
        prop_assert!(rm.check_single_primary());
        prop_assert_eq!(rm.monitor().single_primary_violations, 0);
    }
}

fn lineage(r: &mut impl Rng, depth: usize, source: Version) -> Lineage {
    if depth == 0 || r.gen_bool(0.25) {
        return Lineage::source(source);
    }
    match r.gen_range(0..5) {
        0 => Lineage::apply("identity", vec![lineage(r, depth - 1, source)]),
        1 => Lineage::apply("degree", vec![lineage(r, depth - 1, source)]),
        2 => Lineage::apply("select_prefix", vec![lineage(r, depth - 1, source)]).with_param("prefix", "e/"),
        3 => Lineage::apply("union", vec![lineage(r, depth - 1, source), lineage(r, depth - 1, source)]),
        _ => Lineage::apply("count_values", vec![lineage(r, depth - 1, source)]),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn views_are_deterministic(seed in any::<u64>()) {
        let replayed = replay(&common::random_stream(&mut common::rng(seed), 3, 15, 8)).unwrap();
        let src = StoreSource { stores: vec![&replayed.store], sealed: replayed.sealed };
        let mut r = common::rng(seed ^ 1);
        let source = Version::end_of(r.gen_range(0..3));
        let l = Lineage::apply("identity", vec![lineage(&mut r, 3, source)]);
        let registry = OperatorRegistry::with_builtins();
        let direct = registry.evaluate(&l, &src).unwrap();
        prop_assert_eq!(&direct, &registry.evaluate(&l, &src).unwrap());
        let mut a = ViewCatalog::new(OperatorRegistry::with_builtins(), PartitionMap::new(8, 2));
        let mut b = ViewCatalog::new(OperatorRegistry::with_builtins(), PartitionMap::new(5, 3));
        let (ia, ib) = (a.define(l.clone(), &src).unwrap(), b.define(l.clone(), &src).unwrap());
        prop_assert_eq!(&ia, &ib);
        prop_assert_eq!(&a.rows(&ia).unwrap(), &direct);
        prop_assert_eq!(a.export(&ia).unwrap(), b.export(&ib).unwrap());
    }

    #[test]
    fn dataflow_runs_repeat_under_a_seed(seed in any::<u64>(), other in any::<u64>()) {
        let mut r = common::rng(seed);
        let lines: Vec<Payload> = (0..r.gen_range(0..30))
            .map(|_| vec![Value::from(["a b", "b c c", "d", ""][r.gen_range(0..4)])])
            .collect();
        let (out1, run1) = mapreduce(lines.clone(), &wordcount_job(), 3, 2, seed).unwrap();
        let (out2, run2) = mapreduce(lines.clone(), &wordcount_job(), 3, 2, seed).unwrap();
        prop_assert_eq!(export_trace(&run1.trace), export_trace(&run2.trace));
        prop_assert_eq!(&run1.stats, &run2.stats);
        prop_assert_eq!(&out1, &out2);
        let (out3, _) = mapreduce(lines, &wordcount_job(), 3, 2, other).unwrap();
        prop_assert_eq!(out1, out3);
    }

    #[test]
    fn bsp_jobs_repeat_and_ignore_schedule(seed in any::<u64>(), other in any::<u64>(), workers in 1usize..5) {
        let g = graph(seed, 40);
        let job = JobConfig::new(workers, seed).with_trace();
        let (pr1, run1) = pagerank(&g, 10, 0.85, &job).unwrap();
        let (pr2, run2) = pagerank(&g, 10, 0.85, &job).unwrap();
        prop_assert_eq!(export_trace(&run1.trace), export_trace(&run2.trace));
        let (pr3, _) = pagerank(&g, 10, 0.85, &JobConfig::new(workers, other)).unwrap();
        for (v, x) in &pr1 {
            prop_assert!(x.bit_eq(&pr2[v]) && x.bit_eq(&pr3[v]), "{}: {:?} {:?} {:?}", v, x, pr2[v], pr3[v]);
        }
        let (cc1, _) = wcc(&g, &JobConfig::new(workers, seed)).unwrap();
        let (cc2, _) = wcc(&g, &JobConfig::new(workers, other)).unwrap();
        prop_assert_eq!(cc1, cc2);
    }

    #[test]
    fn sssp_schedulers_agree(seed in any::<u64>(), workers in 1usize..5) {
        let g = graph(seed, 60);
        let source = g.nodes.keys().next().unwrap().clone();
        let job = JobConfig::new(workers, seed);
        let (fifo, _) = sssp(&g, &source, SsspScheduler::Fifo, &job).unwrap();
        let (prio, _) = sssp(&g, &source, SsspScheduler::Priority, &job).unwrap();
        prop_assert_eq!(&fifo, &prio);
        let oracle = common::bellman_ford(&g, &source);
        prop_assert_eq!(fifo.len(), oracle.len());
        for (v, d) in oracle {
            prop_assert_eq!(fifo[&v].as_int(), Some(d));
        }
    }

    #[test]
    fn join_refresh_equals_rebuild(seed in any::<u64>()) {
        let records = common::random_stream(&mut common::rng(seed), 4, 15, 8);
        let replayed = replay(&records).unwrap();
        let at = |v: Version| GraphSnapshot::from_handle(&replayed.store.snapshot(v));
        let mut view = JoinView::rebuild(&at(Version::end_of(0)));
        for m in &replayed.mutations {
            view.observe(m);
        }
        for e in 1..4 {
            let g = at(Version::end_of(e));
            view.refresh(Version::end_of(e)).unwrap();
            let mut fresh = JoinView::rebuild(&g);
            prop_assert_eq!(view.export(), fresh.export());
            prop_assert_eq!(join_group_by(&g, &mut view).unwrap(), join_group_by(&g, &mut fresh).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Every sealed snapshot read mid-ingestion equals the sequential replay
    /// and stays fixed while later epochs arrive.
    #[test]
    fn snapshots_are_consistent_during_ingestion(seed in any::<u64>(), machines in 1usize..5) {
        let records = common::random_stream(&mut common::rng(seed), 4, 12, 10);
        let replayed = replay(&records).unwrap();
        let expected = |e: u64| GraphSnapshot::from_handle(&replayed.store.snapshot(Version::end_of(e)));
        let mut sim = ClusterSim::new(SimConfig::new(machines, seed), records).unwrap();
        let mut seen = Vec::new();
        while sim.step().unwrap() {
            if let Some(g) = sim.global_progress() {
                while seen.len() as u64 <= g {
                    let e = seen.len() as u64;
                    let snap = sim.graph_at(Version::end_of(e));
                    prop_assert_eq!(&snap, &expected(e), "epoch {} on {} machines", e, machines);
                    seen.push(snap);
                }
            }
        }
        prop_assert_eq!(seen.len(), 4);
        for (e, snap) in seen.iter().enumerate() {
            prop_assert_eq!(snap, &sim.graph_at(Version::end_of(e as u64)));
        }
    }

    /// The same job gives the same output on one machine or several.
    #[test]
    fn cluster_size_is_transparent(seed in any::<u64>(), machines in 2usize..6) {
        let text = stream_text(seed);
        for job in [Job::Wcc, Job::WordCount, Job::PageRank { iterations: 8, damping: 0.85 }] {
            let spec = JobSpec::new(job, None);
            let one = simulate(&SimConfig::new(1, seed), &text, &spec).unwrap();
            let many = simulate(&SimConfig::new(machines, seed.wrapping_add(7)), &text, &spec).unwrap();
            prop_assert_eq!(one.snapshot, many.snapshot);
            prop_assert_eq!(&one.output, &many.output);
            prop_assert!(many.metrics.monitors.clean());
        }
    }
}

#[test]
fn payload_equality_is_bitwise() {
    assert!(!payload_bits_eq(&vec![Value::Float(0.0)], &vec![Value::Float(-0.0)]));
    assert!(payload_bits_eq(&vec![Value::Float(f64::NAN)], &vec![Value::Float(f64::NAN)]));
}
