//! Coordinator/server communication substrate.
//!
//! Every word a protocol moves goes through a [`Link`], which charges the
//! [`CommLedger`] with a fixed rule: one word per channel initiation
//! (message-passing) or server turn (broadcast), and one word per scalar or
//! `(i, j)` tuple in a payload. Broadcast payloads are visible to every party
//! and are charged once.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{DayLocalCosts, ExpertId, ServerId};
use crate::error::{Error, Result};
use crate::rng::DayStreams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommModel {
    MessagePassing,
    Broadcast,
}

impl fmt::Display for CommModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CommModel::MessagePassing => "mp",
            CommModel::Broadcast => "bc",
        })
    }
}

impl FromStr for CommModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mp" | "message-passing" => Ok(CommModel::MessagePassing),
            "bc" | "broadcast" => Ok(CommModel::Broadcast),
            _ => Err(Error::Invalid(format!("unknown communication model {s:?} (expected mp or bc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Party {
    Coordinator,
    Server(ServerId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    /// Seen only by the two endpoints of a private channel.
    One,
    /// Seen by the coordinator and every server.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    ChannelInit { server: ServerId },
    ServerTurn { server: ServerId },
    Payload { words: u64, from: Party, visible: Visibility },
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::ChannelInit { .. } => "channel_init",
            EventKind::ServerTurn { .. } => "server_turn",
            EventKind::Payload { .. } => "payload",
        }
    }

    /// Words charged for this event.
    pub fn cost(&self) -> u64 {
        match self {
            EventKind::ChannelInit { .. } | EventKind::ServerTurn { .. } => 1,
            EventKind::Payload { words, .. } => *words,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommEvent {
    pub day: usize,
    pub kind: EventKind,
}

/// Word counters. `total_words` always equals the sum of `per_day` and the
/// sum of `per_kind`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    pub total_words: u64,
    pub per_day: Vec<u64>,
    pub per_kind: BTreeMap<String, u64>,
    #[serde(skip)]
    events: Option<Vec<CommEvent>>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// A ledger that also keeps every charged event for transcript dumps.
    pub fn recording() -> Self {
        Self { events: Some(Vec::new()), ..Self::default() }
    }

    /// Make sure day `day` has a counter, even if nothing is charged to it.
    pub fn open_day(&mut self, day: usize) {
        if self.per_day.len() <= day {
            self.per_day.resize(day + 1, 0);
        }
    }

    pub fn events(&self) -> Option<&[CommEvent]> {
        self.events.as_deref()
    }

    /// Add another ledger's counters (trial merge).
    pub fn merge(&mut self, other: &CommLedger) {
        self.total_words += other.total_words;
        if self.per_day.len() < other.per_day.len() {
            self.per_day.resize(other.per_day.len(), 0);
        }
        for (a, b) in self.per_day.iter_mut().zip(&other.per_day) {
            *a += b;
        }
        for (k, v) in &other.per_kind {
            *self.per_kind.entry(k.clone()).or_insert(0) += v;
        }
    }

    /// Counters only, without any recorded events.
    pub fn counters(&self) -> CommLedger {
        CommLedger { events: None, ..self.clone() }
    }
}

/// Charge one event to the ledger.
pub fn charge(ledger: &mut CommLedger, event: CommEvent) {
    let words = event.kind.cost();
    ledger.open_day(event.day);
    ledger.per_day[event.day] += words;
    ledger.total_words += words;
    *ledger.per_kind.entry(event.kind.label().to_string()).or_insert(0) += words;
    if let Some(events) = ledger.events.as_mut() {
        events.push(event);
    }
}

/// Write events as tab-separated lines: day, kind, server, words. Days and
/// servers are printed 1-indexed; the coordinator prints as `-`.
pub fn write_transcript<W: Write>(events: &[CommEvent], mut out: W) -> std::io::Result<()> {
    for e in events {
        let server = match e.kind {
            EventKind::ChannelInit { server } | EventKind::ServerTurn { server } => {
                (server.0 + 1).to_string()
            }
            EventKind::Payload { from: Party::Server(server), .. } => (server.0 + 1).to_string(),
            EventKind::Payload { from: Party::Coordinator, .. } => "-".to_string(),
        };
        writeln!(out, "{}\t{}\t{}\t{}", e.day + 1, e.kind.label(), server, e.kind.cost())?;
    }
    Ok(())
}

/// A server's per-day working memory.
#[derive(Debug, Clone)]
pub struct ServerScratch {
    words: Vec<f64>,
    capacity: usize,
}

impl ServerScratch {
    pub fn new(capacity: usize) -> Self {
        Self { words: Vec::with_capacity(capacity.min(4096)), capacity }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[f64] {
        &self.words
    }

    pub fn clear(&mut self) {
        self.words.clear();
    }
}

/// The servers' scratch buffers.
#[derive(Debug, Clone)]
pub struct ServerPool {
    scratch: Vec<ServerScratch>,
}

impl ServerPool {
    pub fn new(s: usize, capacity: usize) -> Self {
        Self { scratch: vec![ServerScratch::new(capacity); s] }
    }

    /// Pool sized for `n` experts: room for two words per expert per day.
    pub fn for_experts(s: usize, n: usize) -> Self {
        Self::new(s, 2 * n + 2)
    }

    pub fn len(&self) -> usize {
        self.scratch.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scratch.is_empty()
    }

    pub fn scratch(&self, server: usize) -> &ServerScratch {
        &self.scratch[server]
    }
}

/// Check that no server carries words across the day boundary.
pub fn assert_memoryless(servers: &ServerPool) -> Result<()> {
    match servers.scratch.iter().position(|s| !s.is_empty()) {
        Some(server) => Err(Error::MemoryBoundViolation {
            server,
            words: servers.scratch[server].len(),
        }),
        None => Ok(()),
    }
}

/// One message received by the coordinator.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// A fired `(i, j)` sample; `panel` separates independent sample panels.
    Tuple { expert: ExpertId, server: ServerId, panel: u8 },
    /// A single local value (or value derived from one).
    Value { expert: ExpertId, server: ServerId, value: f64 },
    /// A server's full column of local costs.
    Row { server: ServerId, values: Vec<f64> },
}

impl Message {
    pub fn words(&self) -> u64 {
        match self {
            Message::Tuple { .. } | Message::Value { .. } => 1,
            Message::Row { values, .. } => values.len() as u64,
        }
    }
}

/// Messages the coordinator received during one day.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Transcript {
    pub messages: Vec<Message>,
}

impl Transcript {
    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }
}

/// The day's communication channel between the coordinator and the servers.
pub struct Link<'a> {
    model: CommModel,
    day: usize,
    costs: &'a DayLocalCosts,
    servers: &'a mut ServerPool,
    ledger: &'a mut CommLedger,
    inbox: Vec<Message>,
}

impl<'a> Link<'a> {
    pub fn new(
        model: CommModel,
        costs: &'a DayLocalCosts,
        servers: &'a mut ServerPool,
        ledger: &'a mut CommLedger,
    ) -> Self {
        let day = costs.day();
        ledger.open_day(day);
        Self { model, day, costs, servers, ledger, inbox: Vec::new() }
    }

    pub fn model(&self) -> CommModel {
        self.model
    }

    pub fn day(&self) -> usize {
        self.day
    }

    pub fn num_experts(&self) -> usize {
        self.costs.num_experts()
    }

    pub fn num_servers(&self) -> usize {
        self.costs.num_servers()
    }

    /// Fails unless values can be made visible to all servers at once.
    pub fn require_broadcast(&self, what: &str) -> Result<()> {
        match self.model {
            CommModel::Broadcast => Ok(()),
            CommModel::MessagePassing => Err(Error::ModelViolation(format!(
                "{what} needs a broadcast channel, but the model is message-passing"
            ))),
        }
    }

    /// Give `server` the floor: a private channel (message-passing) or a turn
    /// on the broadcast channel.
    pub fn open(&mut self, server: ServerId) -> Session<'_, 'a> {
        let kind = match self.model {
            CommModel::MessagePassing => EventKind::ChannelInit { server },
            CommModel::Broadcast => EventKind::ServerTurn { server },
        };
        charge(self.ledger, CommEvent { day: self.day, kind });
        Session { link: self, server }
    }

    /// Take the messages received so far, leaving the inbox empty.
    pub fn take_transcript(&mut self) -> Transcript {
        Transcript { messages: std::mem::take(&mut self.inbox) }
    }
}

/// An open channel to one server. Methods that read local costs or touch the
/// scratch buffer run "on the server"; `send` moves words to the coordinator.
pub struct Session<'l, 'a> {
    link: &'l mut Link<'a>,
    server: ServerId,
}

impl Session<'_, '_> {
    pub fn server(&self) -> ServerId {
        self.server
    }

    /// The server's own observation `l_{i,j}`.
    #[inline]
    pub fn local_cost(&self, expert: usize) -> f64 {
        self.link.costs.get(expert, self.server.0)
    }

    /// Store one word in the server's scratch buffer.
    pub fn remember(&mut self, word: f64) -> Result<()> {
        let scratch = &mut self.link.servers.scratch[self.server.0];
        if scratch.words.len() >= scratch.capacity {
            return Err(Error::ScratchOverflow { server: self.server.0, capacity: scratch.capacity });
        }
        scratch.words.push(word);
        Ok(())
    }

    pub fn scratch(&self) -> &ServerScratch {
        &self.link.servers.scratch[self.server.0]
    }

    pub fn clear_memory(&mut self) {
        self.link.servers.scratch[self.server.0].clear();
    }

    /// Send a message to the coordinator.
    pub fn send(&mut self, message: Message) {
        let visible = match self.link.model {
            CommModel::MessagePassing => Visibility::One,
            CommModel::Broadcast => Visibility::All,
        };
        let kind = EventKind::Payload {
            words: message.words(),
            from: Party::Server(self.server),
            visible,
        };
        charge(self.link.ledger, CommEvent { day: self.link.day, kind });
        self.link.inbox.push(message);
    }
}

/// The communication schedule of a protocol for one day.
pub trait Exchange {
    fn exchange(&mut self, link: &mut Link<'_>, streams: &DayStreams) -> Result<()>;
}

/// Run one day's schedule of `protocol` and return what the coordinator
/// received. Every word passes through the ledger.
pub fn run_day_messaging<P: Exchange + ?Sized>(
    protocol: &mut P,
    model: CommModel,
    servers: &mut ServerPool,
    day_costs: &DayLocalCosts,
    ledger: &mut CommLedger,
    streams: &DayStreams,
) -> Result<Transcript> {
    let mut link = Link::new(model, day_costs, servers, ledger);
    protocol.exchange(&mut link, streams)?;
    Ok(link.take_transcript())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Forgetful;

    impl Exchange for Forgetful {
        fn exchange(&mut self, link: &mut Link<'_>, _: &DayStreams) -> Result<()> {
            let mut session = link.open(ServerId(1));
            session.remember(0.5)?;
            Ok(())
        }
    }

    struct Tidy;

    impl Exchange for Tidy {
        fn exchange(&mut self, link: &mut Link<'_>, _: &DayStreams) -> Result<()> {
            for j in 0..link.num_servers() {
                let mut session = link.open(ServerId(j));
                session.remember(1.0)?;
                session.send(Message::Tuple { expert: ExpertId(0), server: ServerId(j), panel: 0 });
                session.clear_memory();
            }
            Ok(())
        }
    }

    struct Shouter;

    impl Exchange for Shouter {
        fn exchange(&mut self, link: &mut Link<'_>, _: &DayStreams) -> Result<()> {
            link.require_broadcast("a public running value")
        }
    }

    fn day(n: usize, s: usize) -> DayLocalCosts {
        DayLocalCosts::zeros(0, n, s)
    }

    #[test]
    fn empty_day_charges_nothing() {
        let mut ledger = CommLedger::new();
        ledger.open_day(3);
        assert_eq!(ledger.per_day[3], 0);
        assert_eq!(ledger.total_words, 0);
    }

    #[test]
    fn fresh_pool_is_memoryless() {
        assert!(assert_memoryless(&ServerPool::new(4, 8)).is_ok());
    }

    #[test]
    fn retained_word_is_a_violation() {
        let costs = day(2, 3);
        let mut pool = ServerPool::new(3, 8);
        let mut ledger = CommLedger::new();
        let streams = DayStreams::new(0, 0, 0);
        run_day_messaging(&mut Forgetful, CommModel::MessagePassing, &mut pool, &costs, &mut ledger, &streams)
            .unwrap();
        match assert_memoryless(&pool) {
            Err(Error::MemoryBoundViolation { server: 1, words: 1 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tidy_protocol_charges_inits_and_payloads() {
        let costs = day(2, 3);
        let mut pool = ServerPool::new(3, 8);
        let mut ledger = CommLedger::recording();
        let streams = DayStreams::new(0, 0, 0);
        let t = run_day_messaging(&mut Tidy, CommModel::MessagePassing, &mut pool, &costs, &mut ledger, &streams)
            .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(ledger.total_words, 6);
        assert_eq!(ledger.per_kind["channel_init"], 3);
        assert_eq!(ledger.per_kind["payload"], 3);
        assert!(assert_memoryless(&pool).is_ok());

        // Replaying the recorded events reproduces the counters.
        let mut replay = CommLedger::new();
        for e in ledger.events().unwrap() {
            charge(&mut replay, *e);
        }
        assert_eq!(replay, ledger.counters());
    }

    #[test]
    fn broadcast_uses_turns() {
        let costs = day(2, 3);
        let mut pool = ServerPool::new(3, 8);
        let mut ledger = CommLedger::new();
        let streams = DayStreams::new(0, 0, 0);
        run_day_messaging(&mut Tidy, CommModel::Broadcast, &mut pool, &costs, &mut ledger, &streams).unwrap();
        assert_eq!(ledger.per_kind["server_turn"], 3);
        assert!(!ledger.per_kind.contains_key("channel_init"));
    }

    #[test]
    fn broadcast_primitive_rejected_under_message_passing() {
        let costs = day(2, 3);
        let mut pool = ServerPool::new(3, 8);
        let mut ledger = CommLedger::new();
        let streams = DayStreams::new(0, 0, 0);
        let err = run_day_messaging(&mut Shouter, CommModel::MessagePassing, &mut pool, &costs, &mut ledger, &streams)
            .unwrap_err();
        assert!(matches!(err, Error::ModelViolation(_)));
        assert!(run_day_messaging(&mut Shouter, CommModel::Broadcast, &mut pool, &costs, &mut ledger, &streams).is_ok());
    }

    #[test]
    fn scratch_capacity_enforced() {
        let costs = day(1, 1);
        let mut pool = ServerPool::new(1, 2);
        let mut ledger = CommLedger::new();
        let mut link = Link::new(CommModel::MessagePassing, &costs, &mut pool, &mut ledger);
        let mut session = link.open(ServerId(0));
        session.remember(1.0).unwrap();
        session.remember(2.0).unwrap();
        assert!(matches!(session.remember(3.0), Err(Error::ScratchOverflow { .. })));
    }

    #[test]
    fn transcript_dump_format() {
        let events = [
            CommEvent { day: 0, kind: EventKind::ChannelInit { server: ServerId(2) } },
            CommEvent {
                day: 0,
                kind: EventKind::Payload { words: 4, from: Party::Server(ServerId(2)), visible: Visibility::One },
            },
        ];
        let mut out = Vec::new();
        write_transcript(&events, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "1\tchannel_init\t3\t1\n1\tpayload\t3\t4\n");
    }

    #[test]
    fn merge_sums_counters() {
        let mut a = CommLedger::new();
        let mut b = CommLedger::new();
        charge(&mut a, CommEvent { day: 0, kind: EventKind::ServerTurn { server: ServerId(0) } });
        charge(&mut b, CommEvent { day: 2, kind: EventKind::ServerTurn { server: ServerId(0) } });
        a.merge(&b);
        assert_eq!(a.total_words, 2);
        assert_eq!(a.per_day, vec![1, 0, 1]);
        assert_eq!(a.per_kind["server_turn"], 2);
    }
}
