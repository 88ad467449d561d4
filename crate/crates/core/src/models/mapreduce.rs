//! MapReduce as a three-stage dataflow: a splitter ingress deals records
//! round-robin to mappers, mappers shuffle `(key, value)` pairs to the
//! reducer owning each key, and reducers group once every mapper closed.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::sync::Arc;

use crate::dataflow::{
    DataflowGraph, EosCounter, GraphSpec, Message, OutputScheduler, Payload, Protocol, ProtocolRegistry, RunOutput,
    StepContext, VertexInit, VertexLogic, VertexRole, VertexSpec,
};
use crate::types::{stable_hash, Value, ValueKind};

use super::{ModelError, RecordSink};

pub type MapFn = Arc<dyn Fn(&Payload) -> Vec<(String, Value)> + Send + Sync>;
pub type ReduceFn = Arc<dyn Fn(&str, &[Value]) -> Vec<Payload> + Send + Sync>;

/// A registered map/reduce pair. Reducers see their values sorted, so any
/// reduce function yields the same output for every shuffle interleaving.
#[derive(Clone)]
pub struct MapReduceJob {
    pub id: String,
    pub map: MapFn,
    pub reduce: ReduceFn,
    pub input_shape: Vec<ValueKind>,
    pub output_shape: Vec<ValueKind>,
}

impl MapReduceJob {
    pub fn new(
        id: impl Into<String>,
        input_shape: Vec<ValueKind>,
        output_shape: Vec<ValueKind>,
        map: impl Fn(&Payload) -> Vec<(String, Value)> + Send + Sync + 'static,
        reduce: impl Fn(&str, &[Value]) -> Vec<Payload> + Send + Sync + 'static,
    ) -> Self {
        Self { id: id.into(), map: Arc::new(map), reduce: Arc::new(reduce), input_shape, output_shape }
    }

    fn output_arity(&self) -> usize {
        self.output_shape.len().max(1)
    }
}

/// `[line] -> [word, count]`, splitting on whitespace.
pub fn wordcount_job() -> MapReduceJob {
    MapReduceJob::new(
        "mr-wordcount",
        vec![ValueKind::String],
        vec![ValueKind::String, ValueKind::Integer],
        |rec| {
            let line = rec.first().and_then(Value::as_str).unwrap_or_default();
            line.split_whitespace().map(|w| (w.to_string(), Value::Int(1))).collect()
        },
        |word, ones| vec![vec![Value::from(word), Value::Int(ones.iter().filter_map(Value::as_int).sum())]],
    )
}

/// `[src, dst] -> [src, dst, multiplicity]`. Its output has the shape graph
/// jobs accept as weighted edges.
pub fn edgecount_job() -> MapReduceJob {
    MapReduceJob::new(
        "mr-edgecount",
        vec![ValueKind::String, ValueKind::String],
        vec![ValueKind::String, ValueKind::String, ValueKind::Integer],
        |rec| match rec.as_slice() {
            [Value::Str(s), Value::Str(d), ..] => {
                vec![(serde_json::to_string(&[s, d]).expect("pair serializes"), Value::Int(1))]
            }
            _ => Vec::new(),
        },
        |key, ones| {
            let Ok([s, d]) = serde_json::from_str::<[String; 2]>(key) else { return Vec::new() };
            vec![vec![Value::from(s), Value::from(d), Value::Int(ones.iter().filter_map(Value::as_int).sum())]]
        },
    )
}

/// Total order on values used to present reducers with sorted input.
fn value_order(a: &Value, b: &Value) -> Ordering {
    let rank = |v: &Value| match v {
        Value::Bool(_) => 0,
        Value::Int(_) => 1,
        Value::Float(_) => 2,
        Value::Str(_) => 3,
    };
    match (a, b) {
        (Value::Bool(x), Value::Bool(y)) => x.cmp(y),
        (Value::Int(x), Value::Int(y)) => x.cmp(y),
        (Value::Float(x), Value::Float(y)) => x.total_cmp(y),
        (Value::Str(x), Value::Str(y)) => x.cmp(y),
        _ => rank(a).cmp(&rank(b)),
    }
}

struct Splitter {
    next: usize,
}

impl VertexLogic for Splitter {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if msg.is_eos() {
            ctx.finish();
            return Ok(());
        }
        let mappers = ctx.downstream().len();
        ctx.emit(self.next % mappers, msg.payload.clone());
        self.next += 1;
        Ok(())
    }
}

struct Mapper {
    map: MapFn,
    eos: EosCounter,
}

impl VertexLogic for Mapper {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if msg.is_eos() {
            if self.eos.observe(ctx.upstream_count()) {
                ctx.finish();
            }
            return Ok(());
        }
        let reducers = ctx.downstream().len() as u64;
        for (key, value) in (self.map)(&msg.payload) {
            let port = (stable_hash(key.as_bytes()) % reducers) as usize;
            ctx.emit(port, vec![Value::Str(key), value]);
        }
        Ok(())
    }
}

struct Reducer {
    reduce: ReduceFn,
    groups: BTreeMap<String, Vec<Value>>,
    eos: EosCounter,
}

impl VertexLogic for Reducer {
    fn on_message(&mut self, msg: &Message, ctx: &mut StepContext<'_>) -> Result<(), String> {
        if !msg.is_eos() {
            for r in msg.records(2) {
                let [Value::Str(k), v] = r else { return Err("shuffle record must be [key, value]".into()) };
                self.groups.entry(k.clone()).or_default().push(v.clone());
            }
            return Ok(());
        }
        if !self.eos.observe(ctx.upstream_count()) {
            return Ok(());
        }
        let mut out = Vec::new();
        for (key, mut values) in std::mem::take(&mut self.groups) {
            values.sort_by(value_order);
            out.extend((self.reduce)(&key, &values).into_iter().flatten());
        }
        if !out.is_empty() {
            ctx.emit(0, out);
        }
        ctx.finish();
        Ok(())
    }
}

pub fn mapreduce_protocol(job: MapReduceJob) -> Protocol {
    let arity = job.output_arity();
    let sample: Payload = job
        .output_shape
        .iter()
        .map(|k| match k {
            ValueKind::Boolean => Value::Bool(true),
            ValueKind::Integer => Value::Int(2),
            ValueKind::Float => Value::Float(0.5),
            ValueKind::String => Value::from("k"),
        })
        .collect();
    let (input_shape, output_shape) = (job.input_shape.clone(), job.output_shape.clone());
    Protocol::new(job.id.clone(), move |init: &VertexInit| -> Box<dyn VertexLogic> {
        match (init.role, init.param_str("stage")) {
            (VertexRole::Ingress, _) => Box::new(Splitter { next: 0 }),
            (VertexRole::Egress, _) => Box::new(RecordSink::new(arity)),
            (VertexRole::Internal, Some("reduce")) => {
                Box::new(Reducer { reduce: job.reduce.clone(), groups: BTreeMap::new(), eos: EosCounter::default() })
            }
            (VertexRole::Internal, _) => Box::new(Mapper { map: job.map.clone(), eos: EosCounter::default() }),
        }
    })
    .output(OutputScheduler::BatchByDestination)
    .confluent(true)
    .shapes(input_shape, output_shape)
    .samples(vec![sample])
}

/// `{prefix}in -> {prefix}m{i} -> {prefix}r{j} -> {prefix}out`, all mappers
/// connected to all reducers.
pub fn mapreduce_graph(prefix: &str, job_id: &str, mappers: usize, reducers: usize) -> GraphSpec {
    let (input, output) = (format!("{prefix}in"), format!("{prefix}out"));
    let ms: Vec<String> = (0..mappers.max(1)).map(|i| format!("{prefix}m{i}")).collect();
    let rs: Vec<String> = (0..reducers.max(1)).map(|i| format!("{prefix}r{i}")).collect();
    let mut spec = GraphSpec::default().vertex(VertexSpec::new(&input, job_id, VertexRole::Ingress));
    for m in &ms {
        spec = spec.vertex(VertexSpec::new(m, job_id, VertexRole::Internal).param("stage", "map"));
    }
    for r in &rs {
        spec = spec.vertex(VertexSpec::new(r, job_id, VertexRole::Internal).param("stage", "reduce"));
    }
    spec = spec.vertex(VertexSpec::new(&output, job_id, VertexRole::Egress));
    for m in &ms {
        spec = spec.edge(&input, m);
        for r in &rs {
            spec = spec.edge(m, r);
        }
    }
    for r in &rs {
        spec = spec.edge(r, &output);
    }
    spec
}

/// Runs `job` over `inputs`; outputs are returned sorted.
pub fn mapreduce(
    inputs: Vec<Payload>,
    job: &MapReduceJob,
    mappers: usize,
    reducers: usize,
    seed: u64,
) -> Result<(Vec<Payload>, RunOutput), ModelError> {
    let mut registry = ProtocolRegistry::new();
    registry.register(mapreduce_protocol(job.clone()))?;
    let g = DataflowGraph::build(mapreduce_graph("", &job.id, mappers, reducers), &registry)?;
    let out = crate::dataflow::run_single(&g, inputs, crate::dataflow::RunOptions::seeded(seed))?;
    let mut results: Vec<Payload> = out.outputs.iter().map(|(_, p)| p.clone()).collect();
    results.sort_by(|a, b| {
        a.iter().zip(b).map(|(x, y)| value_order(x, y)).find(|o| o.is_ne()).unwrap_or(a.len().cmp(&b.len()))
    });
    Ok((results, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(xs: &[&str]) -> Vec<Payload> {
        xs.iter().map(|l| vec![Value::from(*l)]).collect()
    }

    #[test]
    fn wordcount_small() {
        let (out, _) = mapreduce(lines(&["a b a"]), &wordcount_job(), 2, 3, 1).unwrap();
        assert_eq!(out, vec![vec![Value::from("a"), Value::Int(2)], vec![Value::from("b"), Value::Int(1)]]);
    }

    #[test]
    fn empty_input_and_reducer_count() {
        let (out, _) = mapreduce(Vec::new(), &wordcount_job(), 2, 2, 0).unwrap();
        assert!(out.is_empty());
        let text = lines(&["x y z", "z y", "q", "", "x x x"]);
        let (one, _) = mapreduce(text.clone(), &wordcount_job(), 1, 1, 3).unwrap();
        let (four, _) = mapreduce(text, &wordcount_job(), 3, 4, 8).unwrap();
        assert_eq!(one, four);
    }

    #[test]
    fn edgecount_groups_pairs() {
        let recs = vec![
            vec![Value::from("a"), Value::from("b")],
            vec![Value::from("a"), Value::from("b")],
            vec![Value::from("b"), Value::from("a")],
        ];
        let (out, _) = mapreduce(recs, &edgecount_job(), 2, 2, 5).unwrap();
        assert_eq!(
            out,
            vec![
                vec![Value::from("a"), Value::from("b"), Value::Int(2)],
                vec![Value::from("b"), Value::from("a"), Value::Int(1)],
            ]
        );
    }
}
