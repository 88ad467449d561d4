//! Strided temporal analysis over a sequence of snapshots.

use serde::Serialize;

use crate::stream::Replayed;
use crate::tracker::TrackerError;
use crate::types::Version;

use super::{GraphSnapshot, ModelError};

/// Anything that can materialize the graph at a version.
pub trait GraphSource {
    fn graph_at(&self, v: Version) -> Result<GraphSnapshot, ModelError>;
}

impl GraphSource for Replayed {
    fn graph_at(&self, v: Version) -> Result<GraphSnapshot, ModelError> {
        if self.sealed.is_none_or(|s| s < v.epoch) {
            return Err(TrackerError::StreamEnded { requested: v, global: self.sealed }.into());
        }
        if !self.store.retains(v) {
            return Err(ModelError::SnapshotNotAvailable(v));
        }
        Ok(GraphSnapshot::from_handle(&self.store.snapshot(v)))
    }
}

/// Number of gainers listed in a digest.
pub const TOP_K: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Gain {
    pub vertex: String,
    pub gain: i64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DegreeDigest {
    pub nodes: usize,
    pub edges: usize,
    /// Largest positive degree gain, ties to the smallest id.
    pub top_gainer: Option<String>,
    pub gain: i64,
    pub top: Vec<Gain>,
}

/// Degree changes from `prev` to `cur`. Vertices absent from `prev` start
/// at degree 0.
pub fn degree_digest(prev: &GraphSnapshot, cur: &GraphSnapshot) -> DegreeDigest {
    let before = prev.degrees();
    let mut gains: Vec<Gain> = cur
        .degrees()
        .into_iter()
        .map(|(v, d)| {
            let gain = d - before.get(&v).copied().unwrap_or(0);
            Gain { vertex: v, gain }
        })
        .filter(|g| g.gain > 0)
        .collect();
    gains.sort_by(|a, b| b.gain.cmp(&a.gain).then_with(|| a.vertex.cmp(&b.vertex)));
    gains.truncate(TOP_K);
    DegreeDigest {
        nodes: cur.vertex_count(),
        edges: cur.links.len(),
        top_gainer: gains.first().map(|g| g.vertex.clone()),
        gain: gains.first().map_or(0, |g| g.gain),
        top: gains,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TemporalPoint {
    pub version: Version,
    pub digest: DegreeDigest,
}

/// `from`, then every `stride` epochs (same sequence number) up to `to`.
pub fn temporal_points(from: Version, to: Version, stride: u64) -> Result<Vec<Version>, ModelError> {
    if stride == 0 {
        return Err(ModelError::BadParameter("stride must be at least 1".into()));
    }
    if from > to {
        return Err(ModelError::BadParameter(format!("from {from} is after to {to}")));
    }
    let mut out = Vec::new();
    let mut v = from;
    while v <= to {
        out.push(v);
        v.epoch += stride;
    }
    Ok(out)
}

/// Runs `algo` on each strided snapshot. Each digest compares against the
/// snapshot one stride earlier (the empty graph before epoch 0).
pub fn temporal_series(
    source: &dyn GraphSource,
    algo: &str,
    from: Version,
    to: Version,
    stride: u64,
) -> Result<Vec<TemporalPoint>, ModelError> {
    if algo != "degree" {
        return Err(ModelError::BadParameter(format!("unknown temporal algorithm {algo:?}")));
    }
    let points = temporal_points(from, to, stride)?;
    let mut prev = match from.epoch.checked_sub(stride) {
        Some(e) => source.graph_at(Version { epoch: e, seq: from.seq })?,
        None => GraphSnapshot::default(),
    };
    let mut out = Vec::with_capacity(points.len());
    for v in points {
        let cur = source.graph_at(v)?;
        out.push(TemporalPoint { version: v, digest: degree_digest(&prev, &cur) });
        prev = cur;
    }
    Ok(out)
}

/// JSON-lines `{"version":"e:s","digest":{...}}`.
pub fn export_series(series: &[TemporalPoint]) -> String {
    series.iter().map(|p| serde_json::to_string(p).expect("point serializes") + "\n").collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{parse_stream, replay};

    fn stream() -> String {
        let mut s = String::new();
        let nodes = ["a1", "a2", "p0", "p1", "p2", "p3", "p4", "p5"];
        for n in nodes {
            s += &format!("{{\"epoch\":0,\"op\":\"add_node\",\"id\":\"{n}\"}}\n");
        }
        s += "{\"epoch\":0,\"op\":\"add_edge\",\"src\":\"a1\",\"dst\":\"p0\",\"slot\":\"w\"}\n";
        s += "{\"epoch\":0,\"op\":\"epoch_close\"}\n";
        s += "{\"epoch\":1,\"op\":\"add_edge\",\"src\":\"a1\",\"dst\":\"p1\",\"slot\":\"w\"}\n";
        s += "{\"epoch\":1,\"op\":\"epoch_close\"}\n";
        for p in 1..=5 {
            s += &format!("{{\"epoch\":2,\"op\":\"add_edge\",\"src\":\"a2\",\"dst\":\"p{p}\",\"slot\":\"w\"}}\n");
        }
        s += "{\"epoch\":2,\"op\":\"epoch_close\"}\n";
        s
    }

    #[test]
    fn names_the_epoch_gainer() {
        let r = replay(&parse_stream(&stream()).unwrap()).unwrap();
        let series = temporal_series(&r, "degree", Version::end_of(0), Version::end_of(2), 1).unwrap();
        assert_eq!(series.len(), 3);
        assert_eq!(series[1].digest.top_gainer.as_deref(), Some("a1"));
        assert_eq!(series[2].digest.top_gainer.as_deref(), Some("a2"));
        assert_eq!(series[2].digest.gain, 5);
        let line = export_series(&series[2..]);
        assert!(
            line.starts_with("{\"version\":\"2:*\",\"digest\":{\"nodes\":8,\"edges\":7,\"top_gainer\":\"a2\""),
            "{line}"
        );
    }

    #[test]
    fn single_point_and_empty_graph() {
        let r = replay(&parse_stream("{\"epoch\":0,\"op\":\"epoch_close\"}\n").unwrap()).unwrap();
        let series = temporal_series(&r, "degree", Version::end_of(0), Version::end_of(0), 3).unwrap();
        assert_eq!(series.len(), 1);
        assert_eq!(series[0].digest, DegreeDigest { nodes: 0, edges: 0, top_gainer: None, gain: 0, top: vec![] });
        assert!(matches!(
            temporal_series(&r, "degree", Version::end_of(0), Version::end_of(4), 1),
            Err(ModelError::Tracker(TrackerError::StreamEnded { .. }))
        ));
    }
}
