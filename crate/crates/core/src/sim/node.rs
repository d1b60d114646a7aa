//! Per-node simulator state: packets, forwarding queues and the node record.

use std::collections::VecDeque;

use crate::config::Behavior;
use crate::congestion::QueueSource;
use crate::{NodeId, Position};

use super::event::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: u64,
    pub origin: NodeId,
    pub size: f64,
    pub created_at: SimTime,
    /// Arrival time at each holder, starting with the origin.
    pub hop_times: Vec<SimTime>,
    /// Node that handed the packet to its current holder.
    pub last_sender: Option<NodeId>,
    /// Extra copy injected by a flooding node; not part of the traffic
    /// accounting.
    pub duplicate: bool,
    /// 0 for the original, 1.. for injected copies.
    pub copy: u32,
}

impl Packet {
    pub fn new(id: u64, origin: NodeId, size: f64, now: SimTime) -> Self {
        Self {
            id,
            origin,
            size,
            created_at: now,
            hop_times: vec![now],
            last_sender: None,
            duplicate: false,
            copy: 0,
        }
    }

    pub fn key(&self) -> (u64, u32) {
        (self.id, self.copy)
    }

    /// Time the packet reached its current holder.
    pub fn arrived_at(&self) -> SimTime {
        *self.hop_times.last().expect("hop_times starts non-empty")
    }

    pub fn hop_count(&self) -> usize {
        self.hop_times.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct PacketQueue {
    pub source: QueueSource,
    pub packets: VecDeque<Packet>,
    /// Sending rate controlled by this queue, packets/s. `None` until the
    /// first control tick that sees the queue.
    pub rate: Option<f64>,
    /// Stride-scheduling pass value.
    pub(crate) pass: f64,
}

impl PacketQueue {
    pub fn new(source: QueueSource) -> Self {
        Self {
            source,
            packets: VecDeque::new(),
            rate: None,
            pass: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub id: NodeId,
    pub position: Position,
    pub behavior: Behavior,
    pub energy_full: f64,
    pub energy: f64,
    pub blocked: bool,
    /// Local queue first, then one queue per child.
    pub queues: Vec<PacketQueue>,
    /// Allowed sending rate toward the parent, packets/s.
    pub out_rate: f64,
    /// Admission rate for locally generated packets, packets/s.
    pub local_rate: f64,
    pub(crate) busy: bool,
    pub(crate) last_tx_start: Option<SimTime>,
    pub(crate) wake_at: Option<SimTime>,
    /// The radio receives one packet at a time; busy until this instant.
    pub(crate) rx_busy_until: SimTime,
    pub(crate) virtual_time: f64,
}

impl NodeState {
    pub fn new(id: NodeId, position: Position, behavior: Behavior, energy_full: f64) -> Self {
        Self {
            id,
            position,
            behavior,
            energy_full,
            energy: energy_full,
            blocked: false,
            queues: vec![PacketQueue::new(QueueSource::Local)],
            out_rate: f64::INFINITY,
            local_rate: f64::INFINITY,
            busy: false,
            last_tx_start: None,
            wake_at: None,
            rx_busy_until: 0,
            virtual_time: 0.0,
        }
    }

    pub fn queue(&self, source: QueueSource) -> Option<&PacketQueue> {
        self.queues.iter().find(|q| q.source == source)
    }

    pub(crate) fn queue_index_or_insert(&mut self, source: QueueSource) -> usize {
        if let Some(i) = self.queues.iter().position(|q| q.source == source) {
            return i;
        }
        let mut q = PacketQueue::new(source);
        q.pass = self.virtual_time;
        self.queues.push(q);
        self.queues.len() - 1
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(PacketQueue::len).sum()
    }

    /// Deducts up to `amount`, never going below zero. Returns the charge.
    pub(crate) fn charge(&mut self, amount: f64) -> f64 {
        let taken = amount.min(self.energy);
        self.energy -= taken;
        taken
    }

    /// Picks the non-empty queue with the smallest pass value and advances it
    /// by `1 / weight`.
    pub(crate) fn select_queue(&mut self, weight: impl Fn(&PacketQueue) -> f64) -> Option<usize> {
        let idx = self
            .queues
            .iter()
            .enumerate()
            .filter(|(_, q)| !q.is_empty())
            .min_by(|a, b| a.1.pass.total_cmp(&b.1.pass).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i)?;
        let w = weight(&self.queues[idx]).max(1e-6);
        self.virtual_time = self.queues[idx].pass;
        self.queues[idx].pass += 1.0 / w;
        Some(idx)
    }

    /// Called when a packet lands in a previously empty queue so that idle
    /// queues do not bank service credit.
    pub(crate) fn refresh_pass(&mut self, idx: usize) {
        let q = &mut self.queues[idx];
        if q.len() == 1 && q.pass < self.virtual_time {
            q.pass = self.virtual_time;
        }
    }
}
