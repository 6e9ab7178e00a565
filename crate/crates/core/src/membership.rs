//! Peer views: where a node finds the random targets it gossips to.
//!
//! Two sources are supported. A [`Registry`] holds every announced service
//! and hands out full snapshots (the centralized mode). A [`PeerView`] is a
//! bounded cache that nodes keep fresh by periodically exchanging their lists
//! with a random known peer and merging the answer, Newscast style.
//!
//! Entries carry a heartbeat. Views are kept ordered by heartbeat (highest
//! first, then by address), so entries that stop being refreshed drift to the
//! tail and are the first to go once the cache is full.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envelope::NodeAddr;
use crate::time::SimTime;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerEntry {
    pub address: NodeAddr,
    pub service_type: Cow<'static, str>,
    pub device_id: Option<String>,
    pub heartbeat: u64,
}

impl PeerEntry {
    pub fn new(address: NodeAddr, service_type: impl Into<Cow<'static, str>>) -> Self {
        PeerEntry {
            address,
            service_type: service_type.into(),
            device_id: None,
            heartbeat: 0,
        }
    }

    pub fn with_heartbeat(mut self, heartbeat: u64) -> Self {
        self.heartbeat = heartbeat;
        self
    }

    pub fn with_device(mut self, device_id: impl Into<String>) -> Self {
        self.device_id = Some(device_id.into());
        self
    }
}

/// Something a node noticed about another service.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MembershipEvent {
    /// A service entered the network (or re-announced itself).
    Announce(PeerEntry),
    /// A service left the network.
    Bye(NodeAddr),
    /// Any message was received from this address.
    MessageFrom(NodeAddr),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PeerView {
    owner: PeerEntry,
    entries: Vec<PeerEntry>,
    capacity: usize,
    exchange_timeframe: Duration,
    last_exchange: SimTime,
}

impl PeerView {
    /// # Panics
    ///
    /// If `capacity` is zero.
    pub fn new(owner: PeerEntry, capacity: usize, exchange_timeframe: Duration) -> Self {
        assert!(capacity > 0, "peer view capacity must be positive");
        PeerView {
            owner,
            entries: Vec::new(),
            capacity,
            exchange_timeframe,
            last_exchange: SimTime::ZERO,
        }
    }

    pub fn with_entries(mut self, entries: impl IntoIterator<Item = PeerEntry>) -> Self {
        self.merge(entries);
        self
    }

    pub fn owner(&self) -> &PeerEntry {
        &self.owner
    }

    pub fn entries(&self) -> &[PeerEntry] {
        &self.entries
    }

    pub fn addresses(&self) -> impl Iterator<Item = NodeAddr> + '_ {
        self.entries.iter().map(|e| e.address)
    }

    pub fn get(&self, address: NodeAddr) -> Option<&PeerEntry> {
        self.entries.iter().find(|e| e.address == address)
    }

    pub fn contains(&self, address: NodeAddr) -> bool {
        self.get(address).is_some()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn last_exchange(&self) -> SimTime {
        self.last_exchange
    }

    pub fn exchange_timeframe(&self) -> Duration {
        self.exchange_timeframe
    }

    /// Up to `k` distinct addresses drawn uniformly without replacement from
    /// the entries not listed in `exclude`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        k: usize,
        exclude: &[NodeAddr],
        rng: &mut R,
    ) -> Vec<NodeAddr> {
        let eligible: Vec<NodeAddr> = self
            .entries
            .iter()
            .map(|e| e.address)
            .filter(|a| !exclude.contains(a))
            .collect();
        eligible.choose_multiple(rng, k).copied().collect()
    }

    /// Starts a shuffle if nothing was exchanged for a whole timeframe:
    /// returns a random target and the list to send it (which includes a
    /// fresh entry for the owner so the target learns about us).
    pub fn exchange_request<R: Rng + ?Sized>(
        &mut self,
        now: SimTime,
        rng: &mut R,
    ) -> Option<(NodeAddr, Vec<PeerEntry>)> {
        if now.since(self.last_exchange) < self.exchange_timeframe {
            return None;
        }
        let target = self.entries.choose(rng)?.address;
        self.last_exchange = now;
        self.owner.heartbeat += 1;
        Some((target, self.outgoing_list()))
    }

    /// Answers an incoming shuffle: returns our list as it was before the
    /// merge, then folds the remote list in.
    pub fn handle_exchange(&mut self, remote: Vec<PeerEntry>, now: SimTime) -> Vec<PeerEntry> {
        self.last_exchange = now;
        let reply = self.outgoing_list();
        self.merge(remote);
        reply
    }

    fn outgoing_list(&self) -> Vec<PeerEntry> {
        let mut list = self.entries.clone();
        list.push(self.owner.clone());
        list
    }

    /// Union by address keeping the higher heartbeat; our own address is
    /// dropped and the lowest-heartbeat entries are evicted past capacity.
    pub fn merge(&mut self, remote: impl IntoIterator<Item = PeerEntry>) {
        let owner = self.owner.address;
        self.entries
            .extend(remote.into_iter().filter(|e| e.address != owner));
        // Stable sort: on equal heartbeats the entry already held stays first.
        self.entries
            .sort_by(|a, b| a.address.cmp(&b.address).then(b.heartbeat.cmp(&a.heartbeat)));
        self.entries.dedup_by_key(|e| e.address);
        self.normalize();
    }

    pub fn observe(&mut self, event: MembershipEvent) {
        match event {
            MembershipEvent::Announce(entry) => self.merge([entry]),
            MembershipEvent::Bye(address) => self.entries.retain(|e| e.address != address),
            MembershipEvent::MessageFrom(address) => {
                if let Some(i) = self.entries.iter().position(|e| e.address == address) {
                    self.entries[i].heartbeat += 1;
                    // Only this entry moved, and only towards the front.
                    let e = &self.entries[i];
                    let to = self.entries[..i]
                        .partition_point(|p| Self::order(p, e) == std::cmp::Ordering::Less);
                    self.entries[to..=i].rotate_right(1);
                }
            }
        }
    }

    /// Highest heartbeat first, then lowest address.
    fn order(a: &PeerEntry, b: &PeerEntry) -> std::cmp::Ordering {
        b.heartbeat.cmp(&a.heartbeat).then(a.address.cmp(&b.address))
    }

    fn normalize(&mut self) {
        self.entries.sort_by(Self::order);
        self.entries.truncate(self.capacity);
    }
}

/// Stand-in for a discovery proxy: services announce themselves with a
/// scope and the registry returns everything live in a scope.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    services: BTreeMap<NodeAddr, (String, PeerEntry)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn announce(&mut self, entry: PeerEntry, scope: impl Into<String>) {
        self.services.insert(entry.address, (scope.into(), entry));
    }

    pub fn bye(&mut self, address: NodeAddr) {
        self.services.remove(&address);
    }

    pub fn len(&self) -> usize {
        self.services.len()
    }

    pub fn is_empty(&self) -> bool {
        self.services.is_empty()
    }

    pub fn snapshot(&self, scope: &str) -> Vec<PeerEntry> {
        self.services
            .values()
            .filter(|(s, _)| s == scope)
            .map(|(_, e)| e.clone())
            .collect()
    }

    pub fn scopes(&self) -> BTreeSet<&str> {
        self.services.values().map(|(s, _)| s.as_str()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn addr(i: u32) -> NodeAddr {
        NodeAddr(i)
    }

    fn entry(i: u32, hb: u64) -> PeerEntry {
        PeerEntry::new(addr(i), "thermo").with_heartbeat(hb)
    }

    fn view(owner: u32, capacity: usize) -> PeerView {
        PeerView::new(entry(owner, 0), capacity, Duration::from_secs(50))
    }

    fn heartbeats(v: &PeerView) -> Vec<(u32, u64)> {
        v.entries().iter().map(|e| (e.address.0, e.heartbeat)).collect()
    }

    #[test]
    fn sample_forced_and_clamped() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = view(0, 10).with_entries([entry(1, 0), entry(2, 0), entry(3, 0)]);
        let mut picked = v.sample(2, &[addr(1)], &mut rng);
        picked.sort();
        assert_eq!(picked, vec![addr(2), addr(3)]);

        let single = view(0, 10).with_entries([entry(1, 0)]);
        assert_eq!(single.sample(5, &[], &mut rng), vec![addr(1)]);
        assert!(single.sample(5, &[addr(1)], &mut rng).is_empty());
    }

    #[test]
    fn sample_is_roughly_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = view(0, 10).with_entries((1..=10).map(|i| entry(i, 0)));
        let mut counts = [0u32; 11];
        let draws = 10_000;
        for _ in 0..draws {
            counts[v.sample(1, &[], &mut rng)[0].index()] += 1;
        }
        for &c in &counts[1..] {
            let rel = (f64::from(c) / f64::from(draws) - 0.1).abs() / 0.1;
            assert!(rel < 0.10, "count {c} deviates {rel:.3}");
        }
    }

    #[test]
    fn exchange_respects_timeframe() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut v = view(0, 10).with_entries([entry(1, 0), entry(2, 0)]);
        assert!(v.exchange_request(SimTime::ZERO, &mut rng).is_none());
        let (target, list) = v.exchange_request(SimTime::from_secs(50), &mut rng).unwrap();
        assert!(target == addr(1) || target == addr(2));
        assert_eq!(list.len(), 3);
        assert!(list.iter().any(|e| e.address == addr(0) && e.heartbeat == 1));
        assert_eq!(v.last_exchange(), SimTime::from_secs(50));
        assert!(v.exchange_request(SimTime::from_secs(60), &mut rng).is_none());
    }

    #[test]
    fn merge_rules() {
        let mut v = view(0, 10).with_entries([entry(1, 3)]);
        let before = v.clone();
        v.merge([]);
        assert_eq!(v, before);

        v.merge([entry(1, 7)]);
        assert_eq!(heartbeats(&v), vec![(1, 7)]);
        v.merge([entry(1, 2), entry(0, 99)]);
        assert_eq!(heartbeats(&v), vec![(1, 7)]);

        let mut small = view(0, 2);
        small.merge([entry(3, 1), entry(1, 5), entry(2, 3)]);
        assert_eq!(heartbeats(&small), vec![(1, 5), (2, 3)]);

        // Ties keep the lower address.
        let mut tie = view(0, 1);
        tie.merge([entry(9, 4), entry(4, 4)]);
        assert_eq!(heartbeats(&tie), vec![(4, 4)]);
    }

    #[test]
    fn observe_events() {
        let mut v = view(0, 10).with_entries([entry(1, 0), entry(2, 0)]);
        v.observe(MembershipEvent::Bye(addr(1)));
        assert_eq!(heartbeats(&v), vec![(2, 0)]);

        v.observe(MembershipEvent::MessageFrom(addr(2)));
        v.observe(MembershipEvent::MessageFrom(addr(2)));
        v.observe(MembershipEvent::MessageFrom(addr(5)));
        assert_eq!(heartbeats(&v), vec![(2, 2)]);

        let mut capped = view(0, 3);
        for (i, hb) in [(1, 4), (2, 9), (3, 1), (4, 7), (5, 2)] {
            capped.observe(MembershipEvent::Announce(entry(i, hb)));
        }
        assert_eq!(heartbeats(&capped), vec![(2, 9), (4, 7), (1, 4)]);
    }

    #[test]
    fn stale_entry_is_evicted_under_pressure() {
        // Capacity 4; entry 9 never refreshes while fresher peers keep arriving.
        let mut v = view(0, 4).with_entries([entry(9, 2), entry(1, 5), entry(2, 5)]);
        assert!(v.contains(addr(9)));
        // One free slot: the first newcomer fits alongside the stale entry.
        v.observe(MembershipEvent::Announce(entry(3, 4)));
        assert!(v.contains(addr(9)));
        assert_eq!(v.entries().last().unwrap().address, addr(9));
        // A second fresher newcomer overflows the cache and pushes it out.
        v.observe(MembershipEvent::Announce(entry(4, 3)));
        assert!(!v.contains(addr(9)));
        assert_eq!(v.len(), 4);
    }

    #[test]
    fn two_node_exchange_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tf = Duration::from_secs(50);
        let mut a = PeerView::new(entry(0, 0), 8, tf).with_entries([entry(1, 0)]);
        let mut b = PeerView::new(entry(1, 0), 8, tf);
        let mut converged_at = None;
        for round in 1..=2u64 {
            let now = SimTime::from_secs(50 * round);
            if let Some((_, list)) = a.exchange_request(now, &mut rng) {
                let reply = b.handle_exchange(list, now);
                a.merge(reply);
            }
            if let Some((_, list)) = b.exchange_request(now, &mut rng) {
                let reply = a.handle_exchange(list, now);
                b.merge(reply);
            }
            if a.contains(addr(1)) && b.contains(addr(0)) {
                converged_at = Some(round);
                break;
            }
        }
        assert!(converged_at.is_some());
        assert!(!a.contains(addr(0)) && !b.contains(addr(1)));
    }

    #[test]
    fn registry_snapshots() {
        let mut reg = Registry::new();
        assert!(reg.snapshot("zoneA").is_empty());
        for i in 0..10 {
            reg.announce(entry(i, 0), if i % 2 == 0 { "zoneA" } else { "zoneB" });
        }
        reg.bye(addr(3));
        assert_eq!(reg.len(), 9);
        let zone_a = reg.snapshot("zoneA");
        assert_eq!(zone_a.len(), 5);
        assert!(zone_a.iter().all(|e| e.address.0 % 2 == 0));
        assert_eq!(reg.snapshot("zoneB").len(), 4);
    }
}
