use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfcc_core::congestion::{node_cci, queue_congestion, QueueSource, QueueState, SigmaEvaluator};
use tfcc_core::rate::{adjust_on_queue, allocate_rates, assign_priorities};
use tfcc_core::routing::{build_trusted_graph, compute_routes, RouteEntry, TrustedGraph};
use tfcc_core::trust::{classify_links, compute_trust_metrics, LinkStatsWindow, TrustEvaluator, TrustMetrics, TrustTable};
use tfcc_core::{NodeId, Position};

fn metrics(alpha: f64, tau: f64, beta: f64) -> TrustMetrics {
    TrustMetrics {
        transmission_ratio: alpha,
        latency_ratio: tau,
        energy_ratio: beta,
        overflow: false,
    }
}

#[test]
fn trust_is_monotone_in_transmission_ratio() {
    let ev = TrustEvaluator::bundled();
    let mut prev = f64::NEG_INFINITY;
    for i in 0..=1000 {
        let t = ev.evaluate(&metrics(i as f64 / 1000.0, 0.8, 0.9)).unwrap();
        assert!(t >= prev, "alpha {} gave {t} after {prev}", i as f64 / 1000.0);
        prev = t;
    }
    assert!(prev > 0.7);
}

#[test]
fn low_energy_dominates() {
    let ev = TrustEvaluator::bundled();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let m = metrics(rng.random_range(0.0..=1.0), rng.random_range(0.0..=3.0), rng.random_range(0.0..=0.4));
        let t = ev.evaluate(&m).unwrap();
        assert!((0.0..=0.45).contains(&t), "{m:?} -> {t}");
    }
}

#[test]
fn threshold_is_inclusive() {
    let mut table = TrustTable::new([NodeId(0), NodeId(1)], 0.5);
    table.insert(NodeId(0), NodeId(1), 0.5, 0.0).unwrap();
    table.insert(NodeId(1), NodeId(0), 0.499_999_999, 0.0).unwrap();
    let c = classify_links(table.records(), 0.5);
    assert_eq!(c.trusted.len(), 1);
    assert_eq!(c.trusted[0].subject, NodeId(1));
    assert_eq!(table.malicious_nodes(&c), BTreeSet::from([NodeId(0)]));
}

#[test]
fn duplicate_forwarding_is_scored_untrusted() {
    let w = LinkStatsWindow {
        evaluator: NodeId(0),
        subject: NodeId(1),
        sent: 10,
        acked: 30,
        subject_latency: 0.02,
        peer_latency: 0.02,
        window_start: 0.0,
        window_end: 5.0,
    };
    let m = compute_trust_metrics(&w, 1e5, 1e5).unwrap();
    assert!(m.overflow && m.transmission_ratio > 1.0);
    assert!(TrustEvaluator::bundled().evaluate(&m).unwrap() < 0.5);
}

fn queue(occupancy: f64, capacity: f64, c_min: f64, c_max: f64) -> QueueState {
    QueueState {
        owner: NodeId(1),
        source: QueueSource::Local,
        occupancy,
        capacity,
        c_min,
        c_max,
    }
}

#[test]
fn queue_congestion_matches_piecewise_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..1000 {
        let capacity = rng.random_range(2.0..200.0);
        let c_max = rng.random_range(0.1 * capacity..=capacity);
        let c_min = rng.random_range(0.0..c_max);
        let q = rng.random_range(0.0..=capacity);
        let eps = rng.random_range(0.001..0.5);
        let want = if q <= c_min {
            eps
        } else if q > c_max {
            1.0
        } else {
            (1.0 - eps) * ((q - c_min) / (c_max - c_min)) + eps
        };
        let got = queue_congestion(&queue(q, capacity, c_min, c_max), eps).unwrap();
        assert!((got - want).abs() <= 1e-9, "q={q} cmin={c_min} cmax={c_max}: {got} vs {want}");
    }
}

#[test]
fn node_index_matches_log_domain_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for _ in 0..1000 {
        let n = rng.random_range(1..=12);
        let per: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..=0.99)).collect();
        let log_mean = per.iter().map(|ik| (1.0 - ik).ln()).sum::<f64>() / n as f64;
        let want = log_mean.exp();
        let (comp, idx) = node_cci(&per).unwrap();
        assert!((comp - want).abs() <= 1e-9);
        assert!((comp + idx - 1.0).abs() <= 1e-12);
    }
    let (comp, idx) = node_cci(&[0.05, 1.0]).unwrap();
    assert_eq!((comp, idx), (0.0, 1.0));
}

#[test]
fn sigma_rises_with_congestion() {
    let s = SigmaEvaluator::bundled();
    let trust = s.rules().input(1).clone();
    let vectors = [
        trust.singleton("MT").unwrap(),
        trust.singleton("HT").unwrap(),
        trust.fuzzify(0.72).unwrap(),
    ];
    for v in &vectors {
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=200 {
            let sigma = s.compute_sigma_ct(i as f64 / 200.0, v).unwrap();
            assert!(sigma >= prev - 1e-12, "sigma fell at I = {}", i as f64 / 200.0);
            assert!((0.0..=1.0).contains(&sigma));
            prev = sigma;
        }
    }
}

#[test]
fn rates_follow_priority_and_conserve_capacity() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10_000 {
        let n = rng.random_range(0..8);
        let children: Vec<(NodeId, f64)> = (0..n).map(|i| (NodeId(i + 1), rng.random_range(0.5..=1.0))).collect();
        let a = assign_priorities(NodeId(0), &children, 0.5).unwrap();
        assert_eq!(a.entries[0].source, QueueSource::Local);
        assert!(a.entries.windows(2).all(|w| w[0].weight >= w[1].weight));

        let capacity = rng.random_range(0.0..100.0);
        let sigma = rng.random_range(0.0..=1.0);
        let r = allocate_rates(&a, capacity, sigma);
        let expected = capacity * (1.0 - sigma).clamp(0.1, 1.0);
        assert!((r.total() - expected).abs() <= 1e-9 * expected.max(1.0));
        assert!(r.grants.windows(2).all(|w| w[0].1 >= w[1].1 - 1e-12));
        for (child, trust) in &children {
            let local = r.grant(QueueSource::Local).unwrap();
            let mine = r.grant(QueueSource::Child(*child)).unwrap();
            assert!(mine <= local + 1e-12);
            let _ = trust;
        }

        let grant = r.grants[0].1;
        let q = queue(rng.random_range(0.0..=40.0), 40.0, 10.0, 34.0);
        let current = rng.random_range(0.0..=grant.max(1e-9));
        let next = adjust_on_queue(current, grant, &q);
        assert!(next <= grant && next >= 0.0);
        if q.occupancy > q.c_max {
            assert!(next <= current);
        }
    }
}

/// All-pairs hop distances on a directed graph.
fn floyd_warshall(n: usize, edges: &BTreeMap<(usize, usize), f64>) -> Vec<Vec<u32>> {
    const INF: u32 = u32::MAX / 2;
    let mut d = vec![vec![INF; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = 0;
    }
    for &(i, j) in edges.keys() {
        d[i][j] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d
}

/// Best bottleneck trust over every shortest path from `u` to `sink`.
fn best_bottleneck(u: usize, sink: usize, d: &[Vec<u32>], edges: &BTreeMap<(usize, usize), f64>) -> f64 {
    if u == sink {
        return f64::INFINITY;
    }
    edges
        .iter()
        .filter(|(&(i, j), _)| i == u && d[j][sink] + 1 == d[u][sink])
        .map(|(&(_, j), &t)| t.min(best_bottleneck(j, sink, d, edges)))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn routes_match_floyd_warshall() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for _ in 0..100 {
        let n = 20;
        let density = rng.random_range(0.05..0.25);
        let mut edges = BTreeMap::new();
        let mut g = TrustedGraph::new((0..n as u32).map(NodeId));
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.random_bool(density) {
                    let t = (rng.random_range(0.5..=1.0f64) * 100.0).round() / 100.0;
                    edges.insert((i, j), t);
                    g.add_edge(NodeId(i as u32), NodeId(j as u32), t);
                }
            }
        }
        let sink = 0;
        let d = floyd_warshall(n, &edges);
        let routes = compute_routes(&g, NodeId(sink as u32)).unwrap();
        for u in 0..n {
            let entry = routes.route(NodeId(u as u32));
            if u == sink {
                assert_eq!(entry, RouteEntry::Sink);
                continue;
            }
            if d[u][sink] >= u32::MAX / 2 {
                assert_eq!(entry, RouteEntry::Unreachable, "node {u}");
                continue;
            }
            match entry {
                RouteEntry::Via {
                    next_hop,
                    hop_count,
                    path_min_trust,
                } => {
                    assert_eq!(hop_count, d[u][sink], "node {u}");
                    let v = next_hop.index();
                    assert!(edges.contains_key(&(u, v)));
                    assert_eq!(d[v][sink] + 1, d[u][sink]);
                    let want = best_bottleneck(u, sink, &d, &edges);
                    assert!((path_min_trust - want).abs() < 1e-12, "node {u}");
                }
                other => panic!("node {u}: expected a route, got {other:?}"),
            }
            let path = routes.path(NodeId(u as u32)).unwrap();
            assert_eq!(path.len() as u32, d[u][sink] + 1);
            assert_eq!(*path.last().unwrap(), NodeId(sink as u32));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trusted_graph_edges_follow_rules(
        coords in prop::collection::vec((0.0f64..30.0, 0.0f64..30.0), 2..10),
        trust_seed in any::<u64>(),
        blocked_mask in any::<u16>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(trust_seed);
        let ids: Vec<NodeId> = (0..coords.len() as u32).map(NodeId).collect();
        let positions: BTreeMap<NodeId, Position> =
            ids.iter().zip(&coords).map(|(&id, &(x, y))| (id, Position::new(x, y))).collect();
        let mut table = TrustTable::new(ids.clone(), 0.5);
        for &i in &ids {
            for &j in &ids {
                if i != j {
                    table.insert(i, j, rng.random_range(0.0..=1.0), 0.0).unwrap();
                }
            }
        }
        let blocked: BTreeSet<NodeId> = ids.iter().copied().filter(|n| blocked_mask & (1 << n.0) != 0).collect();
        let g = build_trusted_graph(&positions, &table, &blocked, 12.0);
        for &i in &ids {
            for &j in &ids {
                let want = i != j
                    && !blocked.contains(&i)
                    && !blocked.contains(&j)
                    && positions[&i].distance(&positions[&j]) <= 12.0
                    && table.trust(j, i).unwrap() >= 0.5;
                prop_assert_eq!(g.edge(i, j).is_some(), want);
            }
        }
    }
}
