use rand::SeedableRng;

use super::*;

fn single_event(n: usize) -> SimConfig {
    SimConfig {
        n,
        events: 1,
        warmup_discard: 0,
        cooldown_discard: 0,
        ..SimConfig::default()
    }
}

#[test]
fn two_node_forced_path() {
    let mut config = single_event(2);
    config.gossip.fanout = 1;
    config.gossip.initial_hops = 1;
    let m = run(&config).unwrap();
    assert_eq!(m.delivery_rate, 1.0);
    assert_eq!(m.mean_hops, 1.0);
    assert_eq!(m.atomic_fraction, 1.0);
    assert_eq!(m.total_transmissions, 1);
}

#[test]
fn eventing_is_sequential_unicast() {
    let config = SimConfig {
        n: 10,
        protocol: Protocol::Eventing,
        events: 3,
        warmup_discard: 0,
        cooldown_discard: 0,
        ..SimConfig::default()
    };
    let m = run(&config).unwrap();
    assert_eq!(m.delivery_rate, 1.0);
    assert_eq!(m.producer, NodeAddr(0));
    assert_eq!(m.producer_transmissions, 9 * 3);
    assert_eq!(m.total_transmissions, 9 * 3);
}

#[test]
fn eventing_publish_departures() {
    let latency = LatencyModel::default();
    let env = Envelope::new(
        MessageId::new("e").unwrap(),
        "set",
        Style::OneWay,
        None,
        Payload::new(1.0).unwrap(),
        None,
    )
    .unwrap();
    let now = SimTime::from_millis(10);
    let subs = [NodeAddr(1), NodeAddr(2), NodeAddr(3)];
    let txs = eventing_publish(NodeAddr(0), &subs, &env, now, &latency);
    let c = latency.per_send_cost;
    let departures: Vec<SimTime> = txs.iter().map(|t| t.send_time).collect();
    assert_eq!(departures, vec![now + c, now + c * 2, now + c * 3]);
    assert!(txs.iter().all(|t| t.deliver_time == t.send_time + latency.network_delay));
    assert!(eventing_publish(NodeAddr(0), &[], &env, now, &latency).is_empty());
}

#[test]
fn eventing_latency_matches_linear_model() {
    let latency = LatencyModel::default();
    for n in [5usize, 20, 60] {
        let config = SimConfig {
            protocol: Protocol::Eventing,
            ..single_event(n)
        };
        let m = run(&config).unwrap();
        let mut lat: Vec<u64> = m.messages[0].receipts.iter().map(|r| r.latency_ns).collect();
        lat.sort_unstable();
        // Subscriber k (1-based) hears after network_delay + k * per_send_cost.
        let expected: Vec<u64> = (1..n as u64)
            .map(|k| (latency.network_delay + latency.per_send_cost * k as u32).as_nanos() as u64)
            .collect();
        assert_eq!(lat, expected);
    }
}

#[test]
fn loss_injection_frequencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let t = Transmission {
        from: NodeAddr(0),
        to: NodeAddr(1),
        message: Message::PullIds,
        send_time: SimTime::ZERO,
        deliver_time: SimTime::from_millis(1),
        dropped: false,
    };
    assert!((0..1000).all(|_| !inject_loss(t.clone(), 0.0, &mut rng).dropped));
    assert!((0..1000).all(|_| inject_loss(t.clone(), 1.0, &mut rng).dropped));
    let dropped = (0..10_000)
        .filter(|_| inject_loss(t.clone(), 0.1, &mut rng).dropped)
        .count();
    let frac = dropped as f64 / 10_000.0;
    assert!((0.09..=0.11).contains(&frac), "drop fraction {frac}");
}

#[test]
fn same_seed_same_metrics() {
    let config = SimConfig {
        n: 40,
        loss: 0.1,
        events: 25,
        seed: 99,
        ..SimConfig::default()
    };
    let a = serde_json::to_string(&run(&config).unwrap()).unwrap();
    let b = serde_json::to_string(&run(&config).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = SimConfig { seed: 100, ..config };
    assert_ne!(a, serde_json::to_string(&run(&other).unwrap()).unwrap());
}

#[test]
fn conservation_and_causality() {
    let config = SimConfig {
        n: 30,
        loss: 0.2,
        events: 22,
        ..SimConfig::default()
    };
    let mut sim = Simulator::new(config).unwrap().with_tx_log();
    sim.schedule_events();
    sim.run_until(SimTime::from_secs(30)).unwrap();
    let mid = sim.metrics();
    assert_eq!(
        mid.delivered_transmissions + mid.dropped_transmissions + mid.in_flight_at_end,
        mid.total_transmissions
    );
    sim.run_to_completion().unwrap();
    let log = sim.tx_log().unwrap().to_vec();
    let end = sim.into_metrics();
    assert_eq!(end.in_flight_at_end, 0);
    assert_eq!(end.delivered_transmissions + end.dropped_transmissions, end.total_transmissions);
    assert_eq!(log.len() as u64, end.total_transmissions);
    assert!(log.iter().all(|r| r.deliver_ns >= r.send_ns));
    assert_eq!(
        log.iter().filter(|r| r.dropped).count() as u64,
        end.dropped_transmissions
    );
}

#[test]
fn receipts_never_precede_origination() {
    let config = SimConfig {
        n: 50,
        events: 21,
        ..SimConfig::default()
    };
    let m = run(&config).unwrap();
    for msg in &m.messages {
        assert!(msg.receipts.iter().all(|r| r.latency_ns > 0));
        assert!(msg.receipts.iter().all(|r| r.node != msg.origin));
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for bad in [
        SimConfig { n: 1, ..SimConfig::default() },
        SimConfig { loss: 1.5, ..SimConfig::default() },
        SimConfig { events: 20, ..SimConfig::default() },
    ] {
        assert!(matches!(Simulator::new(bad), Err(SimError::InvalidConfig(_))));
    }
}

fn query_run(n: usize, fanout: u32, hops: u32, filter: Filter, seed: u64) -> (f64, Vec<f64>) {
    let mut config = single_event(n);
    config.seed = seed;
    config.gossip.fanout = fanout;
    config.gossip.initial_hops = hops;
    let mut sim = Simulator::new(config).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for i in 0..n as u32 {
        sim.node_mut(NodeAddr(i)).service.value = rng.gen_range(-100.0..100.0);
    }
    let origin = NodeAddr(rng.gen_range(0..n as u32));
    sim.schedule(SimTime::from_secs(1), origin, Origination::query(Some(filter)));
    sim.run_to_completion().unwrap();
    let msg = &sim.messages()[0];
    let mut reached: Vec<NodeAddr> = msg.receipts.iter().map(|r| r.node).collect();
    reached.push(origin);
    let values = reached.iter().map(|&a| sim.node(a).service.value).collect();
    let inbox = sim.node(origin).inbox();
    assert_eq!(inbox.len(), 1, "exactly one aggregated answer");
    assert!(inbox[0].fault.is_none());
    (inbox[0].payload.value(), values)
}

#[test]
fn max_over_full_tree_is_global_max() {
    for seed in 0..20 {
        let (answer, values) = query_run(25, 24, 2, Filter::Max, seed);
        assert_eq!(values.len(), 25);
        let oracle = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(answer, oracle, "seed {seed}");
    }
}

#[test]
fn sparse_tree_aggregates_exactly_the_reached_nodes() {
    for seed in 0..20 {
        let (max, values) = query_run(25, 3, 4, Filter::Max, seed);
        assert_eq!(max, values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        let (count, values) = query_run(25, 3, 4, Filter::Count, seed);
        assert_eq!(count, values.len() as f64);
        let (sum, values) = query_run(25, 3, 4, Filter::Sum, seed);
        let oracle: f64 = values.iter().sum();
        assert!((sum - oracle).abs() < 1e-9, "seed {seed}: {sum} vs {oracle}");
    }
}

#[test]
fn eager_pull_spreads_a_seeded_value() {
    let n = 20;
    let fanout = 8u32;
    // ceil(log_8 20) + 2 pull periods.
    let periods = ((n as f64).ln() / (fanout as f64).ln()).ceil() as u32 + 2;
    let mut complete = 0;
    for seed in 0..100 {
        let mut config = single_event(n);
        config.seed = seed;
        config.gossip = GossipConfig::default().with_variant(crate::engine::Variant::EagerPull);
        config.gossip.fanout = fanout;
        let period = config.gossip.pull_period;
        let mut sim = Simulator::new(config).unwrap();
        let t0 = SimTime::from_secs(1);
        let end = t0 + period * periods;
        sim.extend_horizon(end + period);
        sim.run_until(t0).unwrap();

        // Seed the value at one node without any push.
        let holder = NodeAddr((seed % n as u64) as u32);
        let header = sim.node(holder).default_header(None).unwrap();
        let env = Envelope::new(
            MessageId::new("seeded").unwrap(),
            "set",
            Style::OneWay,
            None,
            Payload::new(42.0).unwrap(),
            Some(header),
        )
        .unwrap();
        let stranger = NodeAddr((holder.0 + 1) % n as u32);
        let sends = sim.nodes[holder.index()]
            .handle_receive(env.clone(), stranger, t0, &mut sim.rng)
            .unwrap();
        assert!(sends.is_empty(), "pull variants do not relay on receipt");
        sim.nodes[holder.index()].take_deliveries();

        sim.run_until(end).unwrap();
        if sim.nodes.iter().all(|node| node.dedup_entry(env.id(), end).is_some()) {
            complete += 1;
        }
    }
    assert!(complete >= 95, "{complete}/100 runs complete");
}

#[test]
fn lazy_push_moves_each_payload_once_per_node() {
    for seed in 0..5 {
        let mut config = SimConfig {
            n: 50,
            events: 21,
            seed,
            ..SimConfig::default()
        };
        config.gossip = GossipConfig::default().with_variant(crate::engine::Variant::LazyPush);
        config.gossip.eager_hops_threshold = Some(config.gossip.initial_hops);
        let (m, log) = run_logged(&config).unwrap();
        assert!(m.delivery_rate > 0.99, "delivery {}", m.delivery_rate);
        let mut seen = std::collections::BTreeSet::new();
        for r in log.iter().filter(|r| !r.payload_ids.is_empty()) {
            assert_eq!(r.kind, "push", "all payloads travel as fetch answers");
            for id in &r.payload_ids {
                assert!(seen.insert((r.to, id.clone())), "{id} sent twice to {}", r.to);
            }
        }
    }
}

#[test]
fn lazy_push_fetches_each_payload_once_with_eager_start() {
    let mut config = SimConfig {
        n: 50,
        events: 21,
        ..SimConfig::default()
    };
    config.gossip = GossipConfig::default().with_variant(crate::engine::Variant::LazyPush);
    let (m, log) = run_logged(&config).unwrap();
    assert!(m.delivery_rate > 0.99);
    let mut fetched = std::collections::BTreeSet::new();
    for r in log.iter().filter(|r| r.kind == "push") {
        for id in &r.payload_ids {
            assert!(fetched.insert((r.to, id.clone())));
        }
    }
    assert!(log.iter().any(|r| r.kind == "gossip"), "early rounds are eager");
}

#[test]
fn balls_and_bins_respects_the_geometric_bound() {
    let (f, h) = (2u32, 3u32);
    let bound: u64 = (1..=h).map(|d| u64::from(f).pow(d)).sum();
    assert_eq!(bound, 14);
    for seed in 0..50 {
        let mut config = single_event(10);
        config.seed = seed;
        config.gossip = GossipConfig::default().with_policy(crate::engine::DuplicatePolicy::BallsAndBins);
        config.gossip.fanout = f;
        config.gossip.initial_hops = h;
        let m = run(&config).unwrap();
        assert!(m.total_transmissions <= bound);
        // With n = 10 every node can always find two fresh peers.
        assert_eq!(m.total_transmissions, bound);
    }
}

#[test]
fn flooding_is_complete() {
    for n in [2usize, 7, 30] {
        let mut config = SimConfig {
            n,
            events: 21,
            ..SimConfig::default()
        };
        config.gossip.fanout = n as u32 - 1;
        config.gossip.initial_hops = 1;
        let m = run(&config).unwrap();
        assert_eq!(m.delivery_rate, 1.0);
        assert_eq!(m.atomic_fraction, 1.0);
    }
}

#[test]
fn newscast_views_converge() {
    let n = 20;
    let timeframe = Duration::from_secs(5);
    for seed in 0..10 {
        let config = SimConfig {
            n,
            seed,
            membership: MembershipMode::Newscast {
                capacity: n - 1,
                exchange_timeframe: timeframe,
                bootstrap: 3,
            },
            ..single_event(n)
        };
        let mut sim = Simulator::new(config).unwrap();
        let end = SimTime::ZERO + timeframe * 40;
        sim.extend_horizon(end);
        sim.run_until(end).unwrap();
        for node in sim.nodes() {
            assert_eq!(node.view().len(), n - 1, "seed {seed}, node {}", node.address());
            assert!(!node.view().contains(node.address()));
        }
    }
}
