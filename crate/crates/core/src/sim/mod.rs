//! Deterministic discrete-event simulator.
//!
//! All randomness comes from ChaCha8 streams derived from the run seed, one
//! stream per subsystem (placement, behaviour assignment, malicious coin
//! flips, and one traffic stream per node), so protocol variants sharing a
//! seed see the same placement and the same offered traffic.
//!
//! Evidence for trust comes from promiscuous overhearing: every radio
//! neighbour of a node counts the packets handed to it and the forwarding
//! transmissions it makes, and evaluates it when its window closes.

pub mod event;
pub mod metrics;
pub mod node;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::config::{Behavior, ConfigError, ScenarioConfig};
use crate::congestion::{self, QueueSource, QueueState, SigmaEvaluator};
use crate::fuzzy::FuzzyError;
use crate::rate;
use crate::routing::{self, RouteEntry, RoutingTable, TrustedGraph};
use crate::trust::{self, TrustEvaluator, TrustTable, WindowAccumulator, WindowPolicy};
use crate::{NodeId, Position};

pub use event::{from_secs, to_secs, Event, EventQueue, SimTime};
pub use metrics::{
    Counters, DetailLog, DropCause, MetricsRow, MetricsTimeline, QueueOverload, TraceEvent,
};
pub use node::{NodeState, Packet, PacketQueue};

const STREAM_PLACEMENT: u64 = 1;
const STREAM_BEHAVIOR: u64 = 2;
const STREAM_COIN: u64 = 3;
const STREAM_TRAFFIC_BASE: u64 = 1000;

pub const SINK: NodeId = NodeId(0);

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Record a [`TraceEvent`] per transmission, delivery, drop, trust window
    /// and block.
    pub trace: bool,
    /// Record per-tick trust, route, rate and congestion rows.
    pub detail: bool,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub struct Simulation {
    cfg: ScenarioConfig,
    seed: u64,
    options: SimOptions,
    nodes: Vec<NodeState>,
    neighbors: Vec<Vec<NodeId>>,
    /// `reverse[i][k]`: position of `i` in the neighbour list of its `k`-th
    /// neighbour.
    reverse: Vec<Vec<usize>>,
    /// `windows[j][k]`: evaluator `j` observing its `k`-th neighbour.
    windows: Vec<Vec<WindowAccumulator>>,
    window_policy: WindowPolicy,
    trust: TrustTable,
    routes: RoutingTable,
    trust_eval: TrustEvaluator,
    sigma_eval: SigmaEvaluator,
    events: EventQueue,
    now: SimTime,
    next_packet_id: u64,
    counters: Counters,
    interval_latency: (f64, u64),
    timeline: MetricsTimeline,
    overload: QueueOverload,
    trace: Vec<TraceEvent>,
    detail: DetailLog,
    traffic_rngs: Vec<ChaCha8Rng>,
    coin_rng: ChaCha8Rng,
    interarrival: Exp<f64>,
    tx_time: SimTime,
}

/// Builds the initial state; see [`Simulation::new`].
pub fn init_scenario(cfg: ScenarioConfig, seed: u64) -> Result<Simulation, SimError> {
    Simulation::new(cfg, seed)
}

impl Simulation {
    pub fn new(cfg: ScenarioConfig, seed: u64) -> Result<Self, SimError> {
        Self::with_options(cfg, seed, SimOptions::default())
    }

    pub fn with_options(cfg: ScenarioConfig, seed: u64, options: SimOptions) -> Result<Self, SimError> {
        cfg.validate()?;
        let trust_eval = TrustEvaluator::new(&cfg.fuzzy)?;
        let sigma_eval = SigmaEvaluator::new(&cfg.fuzzy)?;

        let nodes = place_nodes(&cfg, seed);
        let n = nodes.len();
        let ids: Vec<NodeId> = nodes.iter().map(|s| s.id).collect();

        let mut neighbors = vec![Vec::new(); n];
        for a in 0..n {
            for b in 0..n {
                if a != b && nodes[a].position.distance(&nodes[b].position) <= cfg.radio_range_m {
                    neighbors[a].push(NodeId(b as u32));
                }
            }
        }
        let reverse: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                neighbors[i]
                    .iter()
                    .map(|j| {
                        neighbors[j.index()]
                            .iter()
                            .position(|&x| x.index() == i)
                            .expect("neighbourhood is symmetric")
                    })
                    .collect()
            })
            .collect();
        let windows = neighbors
            .iter()
            .map(|nb| vec![WindowAccumulator::starting_at(0.0); nb.len()])
            .collect();

        let mut trust = TrustTable::new(ids.iter().copied(), cfg.trust_threshold);
        for (j, nb) in neighbors.iter().enumerate() {
            for &i in nb {
                let value = if i == SINK { 1.0 } else { cfg.initial_trust };
                trust
                    .insert(NodeId(j as u32), i, value, 0.0)
                    .expect("all nodes are registered");
            }
        }

        let link_rate = cfg.link_rate_pps;
        let tx_time = from_secs(cfg.packet_size / link_rate).max(1);
        let interarrival = Exp::new(cfg.traffic_rate_pps).expect("validated positive rate");
        let traffic_rngs = (0..n as u64).map(|i| stream(seed, STREAM_TRAFFIC_BASE + i)).collect();

        let mut sim = Self {
            window_policy: WindowPolicy {
                max_packets: cfg.trust_window_packets,
                max_age_s: cfg.trust_window_s,
                ack_timeout_s: cfg.ack_timeout_s,
            },
            overload: QueueOverload {
                samples: 0,
                over_cmax: vec![0; n],
            },
            routes: routing::compute_routes(&TrustedGraph::new([SINK]), SINK).expect("sink present"),
            cfg,
            seed,
            options,
            nodes,
            neighbors,
            reverse,
            windows,
            trust,
            trust_eval,
            sigma_eval,
            events: EventQueue::new(),
            now: 0,
            next_packet_id: 0,
            counters: Counters::default(),
            interval_latency: (0.0, 0),
            timeline: MetricsTimeline::default(),
            trace: Vec::new(),
            detail: DetailLog::default(),
            traffic_rngs,
            coin_rng: stream(seed, STREAM_COIN),
            interarrival,
            tx_time,
        };

        sim.events.push(0, Event::ControlTick);
        let sample = from_secs(sim.cfg.sample_interval_s).max(1);
        sim.events.push(sample, Event::Sample);
        for i in 1..n {
            if !sim.nodes[i].behavior.is_malicious() {
                let dt = sim.draw_interarrival(i);
                sim.events.push(dt, Event::Generate { node: NodeId(i as u32) });
            }
        }
        Ok(sim)
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn now_s(&self) -> f64 {
        to_secs(self.now)
    }

    pub fn nodes(&self) -> &[NodeState] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &NodeState {
        &self.nodes[id.index()]
    }

    pub fn neighbors(&self, id: NodeId) -> &[NodeId] {
        &self.neighbors[id.index()]
    }

    pub fn trust_table(&self) -> &TrustTable {
        &self.trust
    }

    pub fn routes(&self) -> &RoutingTable {
        &self.routes
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn timeline(&self) -> &MetricsTimeline {
        &self.timeline
    }

    pub fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    pub fn detail(&self) -> &DetailLog {
        &self.detail
    }

    pub fn queue_overload(&self) -> &QueueOverload {
        &self.overload
    }

    pub fn into_timeline(self) -> MetricsTimeline {
        self.timeline
    }

    /// True if no node is in radio range of the sink.
    pub fn sink_isolated(&self) -> bool {
        self.neighbors[SINK.index()].is_empty()
    }

    /// Processes every event up to and including `until_s` seconds of
    /// simulated time.
    pub fn run(&mut self, until_s: f64) -> &MetricsTimeline {
        let end = from_secs(until_s);
        while let Some(t) = self.events.peek_time() {
            if t > end {
                break;
            }
            let (t, ev) = self.events.pop().expect("peeked");
            self.now = t;
            self.handle(ev);
        }
        self.now = self.now.max(end);
        &self.timeline
    }

    /// Runs for the configured duration.
    pub fn run_to_end(&mut self) -> &MetricsTimeline {
        let d = self.cfg.duration_s;
        self.run(d)
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Generate { node } => self.on_generate(node),
            Event::TxComplete { from, to, packet } => self.on_tx_complete(from, to, packet),
            Event::Wake { node } => {
                let n = &mut self.nodes[node.index()];
                if n.wake_at == Some(self.now) {
                    n.wake_at = None;
                }
                self.try_transmit(node);
            }
            Event::Release { node, packet } => self.on_release(node, packet),
            Event::ControlTick => {
                self.control_tick();
                let next = self.now + from_secs(self.cfg.control_interval_s).max(1);
                self.events.push(next, Event::ControlTick);
            }
            Event::Sample => {
                self.sample();
                let next = self.now + from_secs(self.cfg.sample_interval_s).max(1);
                self.events.push(next, Event::Sample);
            }
        }
    }

    fn draw_interarrival(&mut self, i: usize) -> SimTime {
        let dt = self.interarrival.sample(&mut self.traffic_rngs[i]);
        from_secs(dt)
    }

    fn drop_packet(&mut self, node: NodeId, packet: &Packet, cause: DropCause) {
        if packet.duplicate {
            return;
        }
        match cause {
            DropCause::Overflow => self.counters.dropped_overflow += 1,
            DropCause::Malicious => self.counters.dropped_malicious += 1,
            DropCause::NoRoute => self.counters.dropped_noroute += 1,
        }
        if self.options.trace {
            self.trace.push(TraceEvent::Drop {
                time_s: to_secs(self.now),
                node,
                packet: packet.id,
                cause,
            });
        }
    }

    fn on_generate(&mut self, node: NodeId) {
        let i = node.index();
        let next = self.now + self.draw_interarrival(i);
        self.events.push(next, Event::Generate { node });

        // Thinning keeps the traffic stream identical across variants.
        let u: f64 = self.traffic_rngs[i].random();
        let admit = (self.nodes[i].local_rate / self.cfg.traffic_rate_pps).min(1.0);
        if u >= admit {
            return;
        }

        let packet = Packet::new(self.next_packet_id, node, self.cfg.packet_size, self.now);
        self.next_packet_id += 1;
        self.counters.generated += 1;
        if self.nodes[i].blocked {
            self.drop_packet(node, &packet, DropCause::Malicious);
            return;
        }
        if self.routes.next_hop(node).is_none() {
            self.drop_packet(node, &packet, DropCause::NoRoute);
            return;
        }
        self.enqueue(node, QueueSource::Local, packet);
        self.try_transmit(node);
    }

    fn enqueue(&mut self, node: NodeId, source: QueueSource, packet: Packet) {
        let cap = self.cfg.queue_capacity;
        let n = &mut self.nodes[node.index()];
        let qi = n.queue_index_or_insert(source);
        if n.queues[qi].len() >= cap {
            self.drop_packet(node, &packet, DropCause::Overflow);
            return;
        }
        n.queues[qi].packets.push_back(packet);
        n.refresh_pass(qi);
    }

    fn try_transmit(&mut self, node: NodeId) {
        let i = node.index();
        {
            let n = &self.nodes[i];
            if n.busy || n.blocked || n.energy < self.cfg.energy_tx || n.queued() == 0 {
                return;
            }
        }
        let Some(next_hop) = self.routes.next_hop(node) else {
            self.flush_queues(node, DropCause::NoRoute);
            return;
        };

        let out_rate = self.nodes[i].out_rate;
        if !(out_rate > 0.0) {
            return;
        }
        if let Some(last) = self.nodes[i].last_tx_start {
            let earliest = last.saturating_add(from_secs(1.0 / out_rate));
            if self.now < earliest {
                self.schedule_wake(node, earliest);
                return;
            }
        }
        let rx_free = self.nodes[next_hop.index()].rx_busy_until;
        if self.now < rx_free {
            self.schedule_wake(node, rx_free);
            return;
        }

        let equal = !self.cfg.protocol.uses_rate_control();
        let n = &mut self.nodes[i];
        let qi = n
            .select_queue(|q| if equal { 1.0 } else { q.rate.unwrap_or(1.0) })
            .expect("queued() > 0");
        let packet = n.queues[qi].packets.pop_front().expect("non-empty queue");
        n.busy = true;
        n.last_tx_start = Some(self.now);
        let done = self.now + self.tx_time;
        let spent = n.charge(self.cfg.energy_tx);
        self.counters.energy_consumed += spent;
        self.counters.transmissions += 1;

        // Every neighbour overhears the forward once it completes.
        if packet.last_sender.is_some() {
            let heard = to_secs(done);
            for (k, j) in self.neighbors[i].iter().enumerate() {
                self.windows[j.index()][self.reverse[i][k]].record_ack(packet.key(), heard);
            }
        }
        if self.options.trace {
            self.trace.push(TraceEvent::Transmit {
                time_s: to_secs(self.now),
                from: node,
                to: next_hop,
                packet: packet.id,
                duplicate: packet.duplicate,
            });
        }
        self.nodes[next_hop.index()].rx_busy_until = done;
        self.events.push(
            done,
            Event::TxComplete {
                from: node,
                to: next_hop,
                packet,
            },
        );
    }

    fn schedule_wake(&mut self, node: NodeId, at: SimTime) {
        let now = self.now;
        let n = &mut self.nodes[node.index()];
        if n.wake_at.is_none_or(|w| w > at || w < now) {
            n.wake_at = Some(at);
            self.events.push(at, Event::Wake { node });
        }
    }

    fn flush_queues(&mut self, node: NodeId, cause: DropCause) {
        let drained: Vec<Packet> = self.nodes[node.index()]
            .queues
            .iter_mut()
            .flat_map(|q| q.packets.drain(..))
            .collect();
        for p in &drained {
            self.drop_packet(node, p, cause);
        }
    }

    fn on_tx_complete(&mut self, from: NodeId, to: NodeId, mut packet: Packet) {
        self.nodes[from.index()].busy = false;
        self.try_transmit(from);

        let r = to.index();
        if self.nodes[r].blocked {
            self.drop_packet(to, &packet, DropCause::Malicious);
            return;
        }
        let spent = self.nodes[r].charge(self.cfg.energy_rx);
        self.counters.energy_consumed += spent;
        self.counters.receptions += 1;

        if to == SINK {
            if !packet.duplicate {
                let latency = to_secs(self.now - packet.created_at);
                self.counters.delivered += 1;
                self.counters.latency_sum += latency;
                self.interval_latency.0 += latency;
                self.interval_latency.1 += 1;
                if self.options.trace {
                    self.trace.push(TraceEvent::Deliver {
                        time_s: to_secs(self.now),
                        packet: packet.id,
                        latency_s: latency,
                    });
                }
            }
            return;
        }

        packet.hop_times.push(self.now);
        packet.last_sender = Some(from);
        let handed = to_secs(self.now);
        for (k, j) in self.neighbors[r].iter().enumerate() {
            self.windows[j.index()][self.reverse[r][k]].record_sent(packet.key(), handed, from);
        }

        match self.nodes[r].behavior {
            Behavior::Benevolent => self.enqueue(to, QueueSource::Child(from), packet),
            Behavior::Dropper { p_drop } => {
                let u: f64 = self.coin_rng.random();
                if u < p_drop {
                    self.drop_packet(to, &packet, DropCause::Malicious);
                    return;
                }
                self.enqueue(to, QueueSource::Child(from), packet);
            }
            Behavior::Flooder { dup_factor } => {
                let copies: Vec<Packet> = (1..dup_factor)
                    .map(|c| Packet {
                        duplicate: true,
                        copy: c,
                        ..packet.clone()
                    })
                    .collect();
                self.enqueue(to, QueueSource::Child(from), packet);
                for copy in copies {
                    self.enqueue(to, QueueSource::Child(from), copy);
                }
            }
            Behavior::Delayer { extra_delay_s } => {
                let at = self.now + from_secs(extra_delay_s);
                self.events.push(at, Event::Release { node: to, packet });
                return;
            }
        }
        self.try_transmit(to);
    }

    fn on_release(&mut self, node: NodeId, packet: Packet) {
        if self.nodes[node.index()].blocked {
            self.drop_packet(node, &packet, DropCause::Malicious);
            return;
        }
        let from = packet.last_sender.expect("released packets were received");
        self.enqueue(node, QueueSource::Child(from), packet);
        self.try_transmit(node);
    }

    fn control_tick(&mut self) {
        let t = to_secs(self.now);
        if self.cfg.protocol.uses_trust() {
            self.update_trust(t);
            self.update_blocking(t);
        }
        self.recompute_routes(t);
        if self.cfg.protocol.uses_rate_control() {
            self.update_rates(t);
        }
        for i in 0..self.nodes.len() {
            self.try_transmit(NodeId(i as u32));
        }
    }

    fn update_trust(&mut self, t: f64) {
        for j in 0..self.nodes.len() {
            let (sum, count) = self.windows[j]
                .iter()
                .fold((0.0, 0u64), |(s, c), w| (s + w.latency_sum, c + w.latency_count));
            for k in 0..self.neighbors[j].len() {
                let subject = self.neighbors[j][k];
                if subject == SINK || !self.windows[j][k].is_full(t, &self.window_policy) {
                    continue;
                }
                let own = &self.windows[j][k];
                let others = count - own.latency_count;
                let peer = if others > 0 {
                    (sum - own.latency_sum) / others as f64
                } else {
                    0.0
                };
                let evaluator = NodeId(j as u32);
                let timeout = self.ack_timeout(subject);
                let window = self.windows[j][k].close(evaluator, subject, peer, t, timeout);
                let s = &self.nodes[subject.index()];
                let metrics = match trust::compute_trust_metrics(&window, s.energy, s.energy_full) {
                    Ok(m) => m,
                    Err(_) => continue,
                };
                let value = self.trust_eval.evaluate(&metrics).expect("bundled rule table is total");
                self.trust
                    .update(evaluator, subject, value, t)
                    .expect("record exists for every neighbour pair");
                if self.options.trace {
                    self.trace.push(TraceEvent::TrustWindow {
                        time_s: t,
                        evaluator,
                        subject,
                        sent: window.sent,
                        acked: window.acked,
                        trust: value,
                    });
                }
                if self.options.detail {
                    self.detail.trust.push(metrics::TrustRow {
                        time_s: t,
                        evaluator: evaluator.0,
                        subject: subject.0,
                        sent: window.sent,
                        acked: window.acked,
                        transmission_ratio: metrics.transmission_ratio,
                        latency_ratio: metrics.latency_ratio,
                        energy_ratio: metrics.energy_ratio,
                        trust: value,
                    });
                }
            }
        }
    }

    /// A neighbour waits at least long enough for the subject to drain a
    /// full queue at its granted rate before writing a packet off.
    fn ack_timeout(&self, subject: NodeId) -> f64 {
        let drain = self.cfg.c_max() / self.nodes[subject.index()].out_rate;
        self.window_policy.ack_timeout_s.max(drain)
    }

    fn update_blocking(&mut self, t: f64) {
        let classification = self.trust.classify();
        let mut malicious = self.trust.malicious_nodes(&classification);
        malicious.remove(&SINK);
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            let now_blocked = malicious.contains(&id);
            if now_blocked == self.nodes[i].blocked {
                continue;
            }
            self.nodes[i].blocked = now_blocked;
            if now_blocked {
                self.flush_queues(id, DropCause::Malicious);
            }
            if self.options.trace {
                self.trace.push(if now_blocked {
                    TraceEvent::Block { time_s: t, node: id }
                } else {
                    TraceEvent::Unblock { time_s: t, node: id }
                });
            }
        }
    }

    fn positions(&self) -> BTreeMap<NodeId, Position> {
        self.nodes.iter().map(|n| (n.id, n.position)).collect()
    }

    fn recompute_routes(&mut self, t: f64) {
        let graph = if self.cfg.protocol.uses_trust() {
            let blocked: BTreeSet<NodeId> = self.nodes.iter().filter(|n| n.blocked).map(|n| n.id).collect();
            routing::build_trusted_graph(&self.positions(), &self.trust, &blocked, self.cfg.radio_range_m)
        } else {
            let mut g = TrustedGraph::new(self.nodes.iter().map(|n| n.id));
            for (i, nb) in self.neighbors.iter().enumerate() {
                for &j in nb {
                    g.add_edge(NodeId(i as u32), j, self.cfg.initial_trust);
                }
            }
            g
        };
        self.routes = routing::compute_routes(&graph, SINK).expect("the sink is never blocked");
        if self.options.detail {
            for n in &self.nodes {
                let e = self.routes.route(n.id);
                self.detail.routes.push(metrics::RouteRow {
                    time_s: t,
                    node: n.id.0,
                    next_hop: e.next_hop().map(|h| h.0),
                    hop_count: e.hop_count(),
                });
            }
        }
    }

    /// Trust the routing parent places in `node`, used as its trust class.
    fn parent_trust(&self, node: NodeId, parent: NodeId) -> f64 {
        if self.cfg.protocol.uses_trust() {
            self.trust.trust(parent, node).unwrap_or(self.cfg.initial_trust)
        } else {
            self.cfg.initial_trust
        }
    }

    fn update_rates(&mut self, t: f64) {
        let n = self.nodes.len();
        let mut children: Vec<Vec<NodeId>> = vec![Vec::new(); n];
        for (node, entry) in self.routes.entries() {
            if let RouteEntry::Via { next_hop, .. } = entry {
                children[next_hop.index()].push(node);
            }
        }
        let threshold = self.cfg.trust_threshold;
        self.grant_sink_children(&children[SINK.index()], threshold);

        let capacity = self.cfg.queue_capacity as f64;
        let (c_min, c_max) = (self.cfg.c_min(), self.cfg.c_max());
        let mt = self
            .trust_eval
            .trust_partition()
            .singleton("MT")
            .expect("bundled trust partition has MT");

        for i in 1..n {
            let id = NodeId(i as u32);
            let Some(parent) = self.routes.next_hop(id) else {
                continue;
            };
            if self.nodes[i].blocked {
                continue;
            }
            let kids = &children[i];
            {
                let node = &mut self.nodes[i];
                node.queues.retain(|q| match q.source {
                    QueueSource::Local => true,
                    QueueSource::Child(c) => !q.is_empty() || kids.contains(&c),
                });
                for &c in kids {
                    node.queue_index_or_insert(QueueSource::Child(c));
                }
            }

            let states: Vec<QueueState> = self.nodes[i]
                .queues
                .iter()
                .map(|q| QueueState {
                    owner: id,
                    source: q.source,
                    occupancy: (q.len() as f64).min(capacity),
                    capacity,
                    c_min,
                    c_max,
                })
                .collect();
            let per_queue: Vec<f64> = states
                .iter()
                .map(|q| congestion::queue_congestion(q, self.cfg.epsilon).expect("validated thresholds"))
                .collect();
            let (complementary, index) = congestion::node_cci(&per_queue).expect("at least the local queue");
            let own_trust = self.parent_trust(id, parent);
            let memberships = self
                .trust_eval
                .trust_memberships(own_trust)
                .expect("trust lies in [0, 1]");
            let sigma = match self.sigma_eval.compute_sigma_ct(index, &memberships) {
                Ok(s) => s,
                Err(congestion::CongestionError::NotBenevolent) => self
                    .sigma_eval
                    .compute_sigma_ct(index, &mt)
                    .expect("MT is a benevolent class"),
                Err(e) => panic!("σ_CT evaluation failed: {e}"),
            };

            let children_trust = self.children_trust(id, kids);
            let assignment =
                rate::assign_priorities(id, &children_trust, threshold).expect("weights clamped to threshold");
            let cap = self.cfg.link_rate_pps.min(self.nodes[i].out_rate);
            let alloc = rate::allocate_rates(&assignment, cap, sigma);

            let mut updates = Vec::with_capacity(states.len());
            for (q, state) in self.nodes[i].queues.iter_mut().zip(&states) {
                let grant = alloc.grant(q.source);
                let rate_now = match (q.rate, grant) {
                    (None, Some(g)) => g,
                    (Some(r), Some(g)) => rate::adjust_on_queue(r, g, state),
                    // Former child still draining: keep its last rate.
                    (Some(r), None) => r,
                    (None, None) => 1.0,
                };
                q.rate = Some(rate_now);
                updates.push((q.source, grant, rate_now));
            }
            for &(source, grant, r) in &updates {
                match source {
                    QueueSource::Local => self.nodes[i].local_rate = r,
                    QueueSource::Child(c) => {
                        if grant.is_some() {
                            self.nodes[c.index()].out_rate = r;
                        }
                    }
                }
                if self.options.detail {
                    self.detail.rates.push(metrics::RateRow {
                        time_s: t,
                        parent: id.0,
                        source: match source {
                            QueueSource::Local => "local".to_string(),
                            QueueSource::Child(c) => c.0.to_string(),
                        },
                        weight: assignment.weight_of(source).unwrap_or(0.0),
                        grant: grant.unwrap_or(0.0),
                        rate: r,
                    });
                }
            }
            if self.options.detail {
                self.detail.congestion.push(metrics::CongestionRow {
                    time_s: t,
                    node: id.0,
                    queues: states.len(),
                    queued: self.nodes[i].queued(),
                    complementary_index: complementary,
                    congestion_index: index,
                    sigma_ct: sigma,
                });
            }
        }
    }

    fn children_trust(&self, parent: NodeId, kids: &[NodeId]) -> Vec<(NodeId, f64)> {
        let threshold = self.cfg.trust_threshold;
        kids.iter()
            .map(|&c| {
                let t = if self.cfg.protocol.uses_trust() {
                    self.trust.trust(parent, c).unwrap_or(threshold)
                } else {
                    self.cfg.initial_trust
                };
                (c, t.max(threshold))
            })
            .collect()
    }

    /// The sink has no forwarding queues; it splits its reception capacity
    /// across its children by trust weight.
    fn grant_sink_children(&mut self, kids: &[NodeId], threshold: f64) {
        let mut assignment = rate::assign_priorities(SINK, &self.children_trust(SINK, kids), threshold)
            .expect("weights clamped to threshold");
        assignment.entries.retain(|e| e.source != QueueSource::Local);
        let alloc = rate::allocate_rates(&assignment, self.cfg.link_rate_pps, 0.0);
        for (source, grant) in alloc.grants {
            if let QueueSource::Child(c) = source {
                self.nodes[c.index()].out_rate = grant;
            }
        }
    }

    /// Packets generated but neither delivered nor dropped: queued, on the
    /// air, or held by a delaying node.
    pub fn in_flight(&self) -> u64 {
        let queued: usize = self
            .nodes
            .iter()
            .flat_map(|n| n.queues.iter())
            .flat_map(|q| q.packets.iter())
            .filter(|p| !p.duplicate)
            .count();
        let pending = self.events.carried_packets().filter(|p| !p.duplicate).count();
        (queued + pending) as u64
    }

    pub fn sample_metrics(&self) -> MetricsRow {
        let c = &self.counters;
        MetricsRow {
            time_s: to_secs(self.now),
            generated: c.generated,
            delivered: c.delivered,
            dropped_overflow: c.dropped_overflow,
            dropped_malicious: c.dropped_malicious,
            dropped_noroute: c.dropped_noroute,
            in_flight: self.in_flight(),
            mean_latency_s: (self.interval_latency.1 > 0)
                .then(|| self.interval_latency.0 / self.interval_latency.1 as f64),
            energy_units: c.energy_consumed,
            normalized_throughput: if c.generated > 0 {
                c.delivered as f64 / c.generated as f64
            } else {
                0.0
            },
        }
    }

    fn sample(&mut self) {
        let row = self.sample_metrics();
        self.interval_latency = (0.0, 0);
        self.timeline.rows.push(row);

        if to_secs(self.now) > self.cfg.warmup_s + 1e-9 {
            self.overload.samples += 1;
            let c_max = self.cfg.c_max();
            for (i, n) in self.nodes.iter().enumerate() {
                if n.queues.iter().any(|q| q.len() as f64 > c_max) {
                    self.overload.over_cmax[i] += 1;
                }
            }
        }
    }
}

fn place_nodes(cfg: &ScenarioConfig, seed: u64) -> Vec<NodeState> {
    if let Some(layout) = &cfg.layout {
        return layout
            .iter()
            .enumerate()
            .map(|(i, s)| NodeState::new(NodeId(i as u32), Position::new(s.x, s.y), s.behavior, cfg.energy_full))
            .collect();
    }

    let mut place = stream(seed, STREAM_PLACEMENT);
    let mut positions = vec![Position::new(cfg.field_width_m / 2.0, cfg.field_height_m / 2.0)];
    for _ in 1..cfg.node_count {
        let x = place.random::<f64>() * cfg.field_width_m;
        let y = place.random::<f64>() * cfg.field_height_m;
        positions.push(Position::new(x, y));
    }

    let mut rng = stream(seed, STREAM_BEHAVIOR);
    let others = cfg.node_count - 1;
    let malicious: Vec<bool> = if cfg.exact_malicious_count {
        let k = (cfg.malicious_fraction * others as f64).round() as usize;
        let mut idx: Vec<usize> = (0..others).collect();
        idx.shuffle(&mut rng);
        let chosen: BTreeSet<usize> = idx.into_iter().take(k).collect();
        (0..others).map(|i| chosen.contains(&i)).collect()
    } else {
        (0..others).map(|_| rng.random::<f64>() < cfg.malicious_fraction).collect()
    };

    let mix = &cfg.behavior_mix;
    let total = mix.dropper + mix.flooder + mix.delayer;
    let mut behaviors = vec![Behavior::Benevolent];
    for is_bad in malicious {
        if !is_bad {
            behaviors.push(Behavior::Benevolent);
            continue;
        }
        let u = rng.random::<f64>() * total;
        behaviors.push(if u < mix.dropper {
            Behavior::Dropper { p_drop: mix.p_drop }
        } else if u < mix.dropper + mix.flooder {
            Behavior::Flooder {
                dup_factor: mix.dup_factor,
            }
        } else {
            Behavior::Delayer {
                extra_delay_s: mix.extra_delay_s,
            }
        });
    }

    positions
        .into_iter()
        .zip(behaviors)
        .enumerate()
        .map(|(i, (p, b))| NodeState::new(NodeId(i as u32), p, b, cfg.energy_full))
        .collect()
}
