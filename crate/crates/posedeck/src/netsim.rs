//! Deterministic discrete-event network simulation.
//!
//! Provides the virtual clock every session runs on, plus point-to-point
//! links with base latency, seeded jitter, a serializing throughput cap and
//! a tail-drop queue. Identical seeds and inputs always produce identical
//! event sequences; equal-time events fire in insertion order.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};
use std::time::Duration;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::Timestamp;

/// A node in the simulated topology (server or client endpoint).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u16);

/// One unit of transmission.
#[derive(Debug, Clone)]
pub struct Packet {
    pub source: NodeId,
    pub destination: NodeId,
    pub payload: Vec<u8>,
    pub enqueued_at: Timestamp,
}

impl Packet {
    pub fn new(source: NodeId, destination: NodeId, payload: Vec<u8>, now: Timestamp) -> Result<Packet> {
        if payload.is_empty() {
            return Err(Error::invalid("packet payload must be non-empty"));
        }
        Ok(Packet {
            source,
            destination,
            payload,
            enqueued_at: now,
        })
    }

    pub fn len(&self) -> usize {
        self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.payload.is_empty()
    }
}

/// How a link sheds load once its queue is full. Tail drop discards the
/// newly arriving packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropPolicy {
    #[default]
    TailDrop,
}

/// One direction of a simulated link.
#[derive(Debug, Clone)]
pub struct LinkConfig {
    /// One-way base latency.
    pub base_latency: Duration,
    /// Jitter added per packet, uniform in [0, jitter], seeded.
    pub jitter: Duration,
    /// Serialization cap in bytes per second; `None` means unlimited.
    pub throughput_cap: Option<u64>,
    /// Queue capacity in bytes; arrivals beyond it are dropped.
    pub queue_capacity: u64,
    pub drop_policy: DropPolicy,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            base_latency: Duration::from_millis(20),
            jitter: Duration::from_millis(5),
            throughput_cap: Some(275_000),
            queue_capacity: 64 * 1024,
            drop_policy: DropPolicy::TailDrop,
        }
    }
}

impl LinkConfig {
    /// A loss-free link with no latency, jitter or cap; useful as a control
    /// channel and in tests.
    pub fn unconstrained() -> Self {
        LinkConfig {
            base_latency: Duration::ZERO,
            jitter: Duration::ZERO,
            throughput_cap: None,
            queue_capacity: u64::MAX,
            drop_policy: DropPolicy::TailDrop,
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.base_latency = latency;
        self
    }

    pub fn with_jitter(mut self, jitter: Duration) -> Self {
        self.jitter = jitter;
        self
    }

    pub fn with_cap(mut self, bytes_per_sec: Option<u64>) -> Self {
        self.throughput_cap = bytes_per_sec;
        self
    }
}

/// Counters maintained by each link. Conservation holds at every instant:
/// `sent == delivered + dropped + in_flight`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub packets_sent: u64,
    pub packets_delivered: u64,
    pub packets_dropped: u64,
    pub bytes_offered: u64,
    pub bytes_delivered: u64,
    pub bytes_dropped: u64,
}

impl LinkStats {
    pub fn in_flight(&self) -> u64 {
        self.packets_sent - self.packets_delivered - self.packets_dropped
    }
}

/// Outcome of handing a packet to a link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    /// The packet will arrive at the stated time; the caller schedules the
    /// delivery event and reports it back via [`Link::mark_delivered`].
    Scheduled { deliver_at: Timestamp },
    /// The queue was full; the packet is gone and already counted.
    Dropped,
}

/// A one-directional link: propagation delay (base latency + seeded jitter,
/// FIFO-clamped) feeding a serializer limited to the throughput cap, with a
/// tail-drop queue in front of the serializer.
#[derive(Debug, Clone)]
pub struct Link {
    config: LinkConfig,
    rng: ChaCha8Rng,
    /// When the serializer becomes idle.
    next_free: Timestamp,
    /// Monotone arrival clamp preserving FIFO order under jitter.
    last_arrival: Timestamp,
    /// Packets in the queue or serializer: (fully transmitted at, bytes).
    occupancy: VecDeque<(Timestamp, u64)>,
    stats: LinkStats,
}

impl Link {
    pub fn new(config: LinkConfig, seed: u64) -> Link {
        Link {
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            next_free: Timestamp::ZERO,
            last_arrival: Timestamp::ZERO,
            occupancy: VecDeque::new(),
            stats: LinkStats::default(),
        }
    }

    pub fn config(&self) -> &LinkConfig {
        &self.config
    }

    pub fn stats(&self) -> LinkStats {
        self.stats
    }

    /// Offers a packet to the link at simulation time `now`.
    pub fn send(&mut self, payload_bytes: usize, now: Timestamp) -> SendOutcome {
        let bytes = payload_bytes as u64;
        self.stats.packets_sent += 1;
        self.stats.bytes_offered += bytes;

        let jitter_us = self.config.jitter.as_micros() as u64;
        let jitter = if jitter_us == 0 {
            0
        } else {
            self.rng.gen_range(0..=jitter_us)
        };
        let mut arrival = now + self.config.base_latency + Duration::from_micros(jitter);
        if arrival < self.last_arrival {
            arrival = self.last_arrival;
        }
        self.last_arrival = arrival;

        // Queue occupancy at the arrival instant.
        while let Some(&(done, b)) = self.occupancy.front() {
            if done <= arrival {
                self.occupancy.pop_front();
                let _ = b;
            } else {
                break;
            }
        }
        let queued: u64 = self.occupancy.iter().map(|(_, b)| *b).sum();
        if queued + bytes > self.config.queue_capacity {
            self.stats.packets_dropped += 1;
            self.stats.bytes_dropped += bytes;
            return SendOutcome::Dropped;
        }

        let start = arrival.max(self.next_free);
        let tx = match self.config.throughput_cap {
            Some(cap) if cap > 0 => Duration::from_nanos(
                ((bytes as u128 * 1_000_000_000) / cap as u128) as u64,
            ),
            _ => Duration::ZERO,
        };
        let deliver_at = start + tx;
        self.next_free = deliver_at;
        self.occupancy.push_back((deliver_at, bytes));
        SendOutcome::Scheduled { deliver_at }
    }

    /// Records a delivery the caller's event loop just performed.
    pub fn mark_delivered(&mut self, payload_bytes: usize) {
        self.stats.packets_delivered += 1;
        self.stats.bytes_delivered += payload_bytes as u64;
    }
}

struct ScheduledEvent<E> {
    at: Timestamp,
    order: u64,
    event: E,
}

impl<E> PartialEq for ScheduledEvent<E> {
    fn eq(&self, other: &Self) -> bool {
        self.at == other.at && self.order == other.order
    }
}

impl<E> Eq for ScheduledEvent<E> {}

impl<E> PartialOrd for ScheduledEvent<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for ScheduledEvent<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; reverse for earliest-first, breaking ties
        // by insertion order.
        other
            .at
            .cmp(&self.at)
            .then_with(|| other.order.cmp(&self.order))
    }
}

/// The virtual clock: current time plus the pending event queue. Time never
/// decreases; events with equal time fire in insertion order.
#[derive(Debug)]
pub struct VirtualClock<E> {
    now: Timestamp,
    next_order: u64,
    queue: BinaryHeap<ScheduledEvent<E>>,
}

impl<E> std::fmt::Debug for ScheduledEvent<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScheduledEvent")
            .field("at", &self.at)
            .field("order", &self.order)
            .finish()
    }
}

impl<E> Default for VirtualClock<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E> VirtualClock<E> {
    pub fn new() -> Self {
        VirtualClock {
            now: Timestamp::ZERO,
            next_order: 0,
            queue: BinaryHeap::new(),
        }
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn schedule(&mut self, at: Timestamp, event: E) {
        debug_assert!(at >= self.now, "cannot schedule into the past");
        let order = self.next_order;
        self.next_order += 1;
        self.queue.push(ScheduledEvent { at, order, event });
    }

    /// Pops the next event due at or before `t_end`, advancing the clock to
    /// its timestamp.
    pub fn pop_due(&mut self, t_end: Timestamp) -> Option<(Timestamp, E)> {
        if self.queue.peek().map(|e| e.at <= t_end) == Some(true) {
            let e = self.queue.pop().unwrap();
            self.now = self.now.max(e.at);
            return Some((e.at, e.event));
        }
        None
    }

    /// Advances the clock to `t` without processing anything; used after the
    /// queue drains before the horizon.
    pub fn advance_to(&mut self, t: Timestamp) {
        self.now = self.now.max(t);
    }
}

/// A simulation world driven by [`run_until`].
pub trait SimWorld {
    type Event;

    fn handle(&mut self, clock: &mut VirtualClock<Self::Event>, at: Timestamp, event: Self::Event);
}

/// Processes every event with time at or before `t_end` (boundary inclusive)
/// in deterministic order, returning the number of events handled.
pub fn run_until<W: SimWorld>(
    clock: &mut VirtualClock<W::Event>,
    world: &mut W,
    t_end: Timestamp,
) -> usize {
    let mut count = 0;
    while let Some((at, event)) = clock.pop_due(t_end) {
        world.handle(clock, at, event);
        count += 1;
    }
    clock.advance_to(t_end);
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        seen: Vec<(Timestamp, u32)>,
    }

    impl SimWorld for Recorder {
        type Event = u32;

        fn handle(&mut self, clock: &mut VirtualClock<u32>, at: Timestamp, event: u32) {
            // Event 1 chains a follow-up at the same instant.
            if event == 1 {
                clock.schedule(at, 100);
            }
            self.seen.push((at, event));
        }
    }

    #[test]
    fn empty_queue_processes_zero_events() {
        let mut clock: VirtualClock<u32> = VirtualClock::new();
        let mut world = Recorder { seen: Vec::new() };
        assert_eq!(run_until(&mut clock, &mut world, Timestamp::from_secs(1)), 0);
        assert_eq!(clock.now(), Timestamp::from_secs(1));
    }

    #[test]
    fn boundary_event_is_processed() {
        let mut clock: VirtualClock<u32> = VirtualClock::new();
        clock.schedule(Timestamp::from_secs(1), 7);
        let mut world = Recorder { seen: Vec::new() };
        assert_eq!(run_until(&mut clock, &mut world, Timestamp::from_secs(1)), 1);
        assert_eq!(world.seen, vec![(Timestamp::from_secs(1), 7)]);
    }

    #[test]
    fn equal_time_events_fire_in_insertion_order() {
        let mut clock: VirtualClock<u32> = VirtualClock::new();
        let t = Timestamp::from_millis(5);
        clock.schedule(t, 1);
        clock.schedule(t, 2);
        clock.schedule(Timestamp::from_millis(2), 0);
        let mut world = Recorder { seen: Vec::new() };
        run_until(&mut clock, &mut world, Timestamp::from_secs(1));
        let order: Vec<u32> = world.seen.iter().map(|(_, e)| *e).collect();
        // The chained event was inserted last, so it fires after
        // already-queued events at the same instant.
        assert_eq!(order, vec![0, 1, 2, 100]);
    }

    #[test]
    fn rerun_is_deterministic() {
        let run = || {
            let mut clock: VirtualClock<u32> = VirtualClock::new();
            for i in 0..50u32 {
                clock.schedule(Timestamp::from_micros((i as u64 * 37) % 400), i);
            }
            let mut world = Recorder { seen: Vec::new() };
            run_until(&mut clock, &mut world, Timestamp::from_secs(1));
            world.seen
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn uncapped_link_delivers_at_base_latency() {
        let cfg = LinkConfig::unconstrained().with_latency(Duration::from_millis(5));
        let mut link = Link::new(cfg, 1);
        let now = Timestamp::from_millis(100);
        match link.send(100, now) {
            SendOutcome::Scheduled { deliver_at } => {
                assert_eq!(deliver_at, Timestamp::from_millis(105));
            }
            SendOutcome::Dropped => panic!("must not drop"),
        }
    }

    #[test]
    fn same_instant_sends_deliver_in_order() {
        let cfg = LinkConfig::unconstrained()
            .with_latency(Duration::from_millis(5))
            .with_cap(Some(1000));
        let mut link = Link::new(cfg, 1);
        let now = Timestamp::ZERO;
        let first = match link.send(100, now) {
            SendOutcome::Scheduled { deliver_at } => deliver_at,
            _ => panic!(),
        };
        let second = match link.send(100, now) {
            SendOutcome::Scheduled { deliver_at } => deliver_at,
            _ => panic!(),
        };
        assert!(second > first, "FIFO serialization: {second:?} vs {first:?}");
    }

    #[test]
    fn offered_overload_plateaus_at_cap_with_drops() {
        // 400 KB/s offered against a 275 KB/s cap for 10 s.
        let cfg = LinkConfig {
            base_latency: Duration::from_millis(20),
            jitter: Duration::from_millis(5),
            throughput_cap: Some(275_000),
            queue_capacity: 64 * 1024,
            drop_policy: DropPolicy::TailDrop,
        };
        let mut link = Link::new(cfg, 42);
        let packet_bytes = 800usize;
        let interval_us = 2_000u64; // 800 B every 2 ms = 400 KB/s
        let horizon = Timestamp::from_secs(10);
        let mut deliveries: Vec<(Timestamp, usize)> = Vec::new();
        let mut t = Timestamp::ZERO;
        while t < horizon {
            if let SendOutcome::Scheduled { deliver_at } = link.send(packet_bytes, t) {
                deliveries.push((deliver_at, packet_bytes));
            }
            t = Timestamp::from_micros(t.micros() + interval_us);
        }
        for (_, bytes) in &deliveries {
            link.mark_delivered(*bytes);
        }
        let delivered_in_horizon: u64 = deliveries
            .iter()
            .filter(|(at, _)| *at <= horizon)
            .map(|(_, b)| *b as u64)
            .sum();
        let rate = delivered_in_horizon as f64 / 10.0;
        assert!(
            (rate - 275_000.0).abs() / 275_000.0 < 0.05,
            "delivered rate {rate} not within 5% of the cap"
        );
        let stats = link.stats();
        assert!(stats.packets_dropped > 0, "overload must drop packets");
        assert_eq!(
            stats.packets_sent,
            stats.packets_delivered + stats.packets_dropped
        );
    }

    #[test]
    fn delivered_window_rate_never_exceeds_cap_by_more_than_one_packet() {
        let cfg = LinkConfig {
            base_latency: Duration::from_millis(10),
            jitter: Duration::from_millis(5),
            throughput_cap: Some(100_000),
            queue_capacity: 256 * 1024,
            drop_policy: DropPolicy::TailDrop,
        };
        let mut link = Link::new(cfg, 7);
        let mut deliveries: Vec<(Timestamp, u64)> = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut t = 0u64;
        for _ in 0..4000 {
            t += rng.gen_range(100..4000);
            let bytes = rng.gen_range(100..1500usize);
            if let SendOutcome::Scheduled { deliver_at } = link.send(bytes, Timestamp::from_micros(t)) {
                deliveries.push((deliver_at, bytes as u64));
            }
        }
        deliveries.sort();
        let max_packet = deliveries.iter().map(|(_, b)| *b).max().unwrap_or(0);
        for (i, (start, _)) in deliveries.iter().enumerate() {
            let window_end = Timestamp::from_micros(start.micros() + 1_000_000);
            let sum: u64 = deliveries[i..]
                .iter()
                .take_while(|(at, _)| *at <= window_end)
                .map(|(_, b)| *b)
                .sum();
            assert!(
                sum <= 100_000 + max_packet,
                "window starting at {start:?} delivered {sum} bytes"
            );
        }
    }

    #[test]
    fn fifo_deliveries_never_reorder() {
        let cfg = LinkConfig {
            base_latency: Duration::from_millis(15),
            jitter: Duration::from_millis(10),
            throughput_cap: Some(50_000),
            queue_capacity: 1 << 20,
            drop_policy: DropPolicy::TailDrop,
        };
        let mut link = Link::new(cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut last = Timestamp::ZERO;
        let mut t = 0u64;
        for _ in 0..2000 {
            t += rng.gen_range(10..3000);
            if let SendOutcome::Scheduled { deliver_at } =
                link.send(rng.gen_range(50..600), Timestamp::from_micros(t))
            {
                assert!(deliver_at >= last, "reordered delivery");
                last = deliver_at;
            }
        }
    }

    #[test]
    fn conservation_holds_under_load() {
        let cfg = LinkConfig {
            base_latency: Duration::from_millis(5),
            jitter: Duration::ZERO,
            throughput_cap: Some(10_000),
            queue_capacity: 4_000,
            drop_policy: DropPolicy::TailDrop,
        };
        let mut link = Link::new(cfg, 9);
        let mut scheduled = 0u64;
        for i in 0..500u64 {
            match link.send(900, Timestamp::from_micros(i * 500)) {
                SendOutcome::Scheduled { .. } => scheduled += 1,
                SendOutcome::Dropped => {}
            }
        }
        let stats = link.stats();
        assert_eq!(stats.packets_sent, 500);
        assert_eq!(stats.in_flight(), scheduled);
        assert!(stats.packets_dropped > 0);
    }
}
