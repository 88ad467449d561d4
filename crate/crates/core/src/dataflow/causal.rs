//! Logical-time events and ordered delivery to observers.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use super::{DataflowError, Payload};

pub type EventId = u64;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EventKind {
    Receive,
    Send,
    Output,
    Custom(String),
}

impl Serialize for EventKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            EventKind::Receive => s.serialize_str("receive"),
            EventKind::Send => s.serialize_str("send"),
            EventKind::Output => s.serialize_str("output"),
            EventKind::Custom(label) => s.collect_str(&format_args!("custom:{label}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CausalEvent {
    #[serde(rename = "event")]
    pub id: EventId,
    pub vertex: String,
    #[serde(rename = "T")]
    pub t: u64,
    pub kind: EventKind,
    #[serde(skip)]
    pub protocol: Arc<str>,
    #[serde(skip)]
    pub vertex_index: usize,
    /// The vertex step that produced the event.
    #[serde(skip)]
    pub step: u64,
    #[serde(skip)]
    pub payload: Payload,
    #[serde(skip)]
    pub(crate) vc: Arc<Vec<u64>>,
}

/// Happened-before between events of different steps, from the vector
/// clocks the runtime attaches. Events of one step are unordered.
pub fn happened_before(a: &CausalEvent, b: &CausalEvent) -> bool {
    a.step != b.step && a.vc.len() == b.vc.len() && a.vc.iter().zip(b.vc.iter()).all(|(x, y)| x <= y)
}

pub type RelationFn = Arc<dyn Fn(&CausalEvent, &CausalEvent) -> bool + Send + Sync>;

/// A strict partial order on events that delivery must extend.
#[derive(Clone)]
pub enum Relation {
    HappenedBefore,
    Empty,
    Custom(RelationFn),
}

impl Relation {
    pub fn custom(f: impl Fn(&CausalEvent, &CausalEvent) -> bool + Send + Sync + 'static) -> Self {
        Relation::Custom(Arc::new(f))
    }

    pub fn related(&self, a: &CausalEvent, b: &CausalEvent) -> bool {
        match self {
            Relation::HappenedBefore => happened_before(a, b),
            Relation::Empty => false,
            Relation::Custom(f) => f(a, b),
        }
    }
}

impl fmt::Debug for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Relation::HappenedBefore => f.write_str("HappenedBefore"),
            Relation::Empty => f.write_str("Empty"),
            Relation::Custom(_) => f.write_str("Custom"),
        }
    }
}

const TRANSITIVITY_SAMPLES: usize = 64;
const SAMPLE_FANOUT: usize = 16;

/// Orders `events` as a linear extension of `relation`, breaking ties by
/// (T, vertex, event id). Irreflexivity is checked on every event and
/// transitivity on a deterministic sample.
pub fn deliver_events(events: &[CausalEvent], relation: &Relation) -> Result<Vec<EventId>, DataflowError> {
    let n = events.len();
    if let Some(e) = events.iter().find(|e| relation.related(e, e)) {
        return Err(DataflowError::NotPartialOrder(format!("event {} precedes itself", e.id)));
    }
    if matches!(relation, Relation::Empty) {
        let mut order: Vec<_> = events.iter().map(|e| (e.t, e.vertex_index, e.id)).collect();
        order.sort_unstable();
        return Ok(order.into_iter().map(|(_, _, id)| id).collect());
    }
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut indeg = vec![0usize; n];
    for (i, a) in events.iter().enumerate() {
        for (j, b) in events.iter().enumerate() {
            if i != j && relation.related(a, b) {
                succ[i].push(j);
                indeg[j] += 1;
            }
        }
    }
    check_transitivity(events, &succ, relation)?;
    let key = |i: usize| (events[i].t, events[i].vertex_index, events[i].id, i);
    let mut ready: BTreeSet<_> = (0..n).filter(|&i| indeg[i] == 0).map(key).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(first) = ready.pop_first() {
        let i = first.3;
        order.push(events[i].id);
        for &j in &succ[i] {
            indeg[j] -= 1;
            if indeg[j] == 0 {
                ready.insert(key(j));
            }
        }
    }
    if order.len() != n {
        return Err(DataflowError::NotPartialOrder("relation has a cycle".into()));
    }
    Ok(order)
}

fn check_transitivity(events: &[CausalEvent], succ: &[Vec<usize>], relation: &Relation) -> Result<(), DataflowError> {
    let n = events.len();
    if n == 0 {
        return Ok(());
    }
    let samples = TRANSITIVITY_SAMPLES.min(n);
    for s in 0..samples {
        let a = s * n / samples;
        for &b in succ[a].iter().take(SAMPLE_FANOUT) {
            for &c in succ[b].iter().take(SAMPLE_FANOUT) {
                if !relation.related(&events[a], &events[c]) {
                    return Err(DataflowError::NotPartialOrder(format!(
                        "not transitive: {} -> {} -> {} but not {} -> {}",
                        events[a].id, events[b].id, events[c].id, events[a].id, events[c].id
                    )));
                }
            }
        }
    }
    Ok(())
}

/// JSON-lines trace export.
pub fn export_trace(events: &[CausalEvent]) -> String {
    events.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
}
