//! Event and sequence encoders.
//!
//! The event encoder maps each event to a latent row via per-field
//! embedding lookups (categoricals) and batch normalization (numericals),
//! concatenated in field order. The sequence encoder folds a GRU over the
//! event rows; the published embedding is the L2-normalized final state,
//! while the raw state is kept for incremental updates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Event, EventSequence, Vocabulary};
use crate::ndgrad::{Array, BnMode, GradError, Graph, NodeId, Scalar};

/// Norm floor for the embedding normalization.
pub const L2_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("empty sequence")]
    EmptySequence,
    #[error("state dimension {got} does not match encoder dimension {want}")]
    StateMismatch { got: usize, want: usize },
    #[error(transparent)]
    Grad(#[from] GradError),
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Hidden/output dimension d.
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    /// Embedding width applied to every categorical field; when absent
    /// each field uses `min(ceil(cardinality / 2), 16)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embed_width: Option<usize>,
    #[serde(default = "default_bn_eps")]
    pub bn_eps: f64,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
    /// Sequences longer than this keep only their most recent events.
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: usize,
}

fn default_hidden_dim() -> usize {
    256
}
fn default_bn_eps() -> f64 {
    1e-5
}
fn default_bn_momentum() -> f64 {
    0.1
}
fn default_max_seq_len() -> usize {
    600
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            hidden_dim: default_hidden_dim(),
            embed_width: None,
            bn_eps: default_bn_eps(),
            bn_momentum: default_bn_momentum(),
            max_seq_len: default_max_seq_len(),
        }
    }
}

impl EncoderConfig {
    pub fn width_for(&self, cardinality: usize) -> usize {
        match self.embed_width {
            Some(w) => w.max(1),
            None => (cardinality.div_ceil(2)).min(16).max(1),
        }
    }
}

/// Running statistics of one numerical field's batch-norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BnState<F> {
    pub mean: F,
    pub var: F,
}

/// Learnable state of the encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<F: Scalar> {
    /// Per categorical field, `[cardinality x width]`.
    pub embed_tables: Vec<Array<F>>,
    pub bn_states: Vec<BnState<F>>,
    pub w_z: Array<F>,
    pub w_r: Array<F>,
    pub w_h: Array<F>,
    pub u_z: Array<F>,
    pub u_r: Array<F>,
    pub u_h: Array<F>,
    pub b_z: Array<F>,
    pub b_r: Array<F>,
    pub b_h: Array<F>,
}

impl<F: Scalar> EncoderParams<F> {
    /// Seeded initialization: GRU matrices uniform in ±sqrt(1/fan_in),
    /// biases zero, embedding tables uniform in ±0.1. Batch-norm running
    /// stats start at the vocabulary's dataset statistics.
    pub fn init(config: &EncoderConfig, vocab: &Vocabulary, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let d = config.hidden_dim;
        let cards = vocab.cardinalities();
        let embed_tables: Vec<Array<F>> = cards
            .iter()
            .map(|&card| uniform_array(&mut rng, card, config.width_for(card), 0.1))
            .collect();
        let input_width: usize =
            embed_tables.iter().map(|t| t.cols()).sum::<usize>() + vocab.n_numerical();
        let w_scale = (1.0 / input_width as f64).sqrt();
        let u_scale = (1.0 / d as f64).sqrt();
        let bn_states = vocab
            .num_stats
            .iter()
            .map(|s| BnState {
                mean: F::from_f64(s.mean),
                var: F::from_f64(s.var.max(0.0)),
            })
            .collect();
        EncoderParams {
            embed_tables,
            bn_states,
            w_z: uniform_array(&mut rng, input_width, d, w_scale),
            w_r: uniform_array(&mut rng, input_width, d, w_scale),
            w_h: uniform_array(&mut rng, input_width, d, w_scale),
            u_z: uniform_array(&mut rng, d, d, u_scale),
            u_r: uniform_array(&mut rng, d, d, u_scale),
            u_h: uniform_array(&mut rng, d, d, u_scale),
            b_z: Array::zeros(1, d),
            b_r: Array::zeros(1, d),
            b_h: Array::zeros(1, d),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.u_z.rows()
    }

    pub fn input_width(&self) -> usize {
        self.w_z.rows()
    }

    /// Named tensors, checkpoint order. Batch-norm stats ride along as
    /// `[1 x 2]` (mean, var) tensors.
    pub fn to_named(&self) -> Vec<(String, Array<F>)> {
        let mut out = Vec::new();
        for (i, t) in self.embed_tables.iter().enumerate() {
            out.push((format!("embed.{i}"), t.clone()));
        }
        for (i, s) in self.bn_states.iter().enumerate() {
            out.push((format!("bn.{i}"), Array::from_vec(1, 2, vec![s.mean, s.var])));
        }
        for (name, t) in [
            ("gru.w_z", &self.w_z),
            ("gru.w_r", &self.w_r),
            ("gru.w_h", &self.w_h),
            ("gru.u_z", &self.u_z),
            ("gru.u_r", &self.u_r),
            ("gru.u_h", &self.u_h),
            ("gru.b_z", &self.b_z),
            ("gru.b_r", &self.b_r),
            ("gru.b_h", &self.b_h),
        ] {
            out.push((name.to_string(), t.clone()));
        }
        out
    }

    pub fn from_named(tensors: &[(String, Array<F>)]) -> Option<Self> {
        let find = |name: &str| -> Option<Array<F>> {
            tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t.clone())
        };
        let mut embed_tables = Vec::new();
        while let Some(t) = find(&format!("embed.{}", embed_tables.len())) {
            embed_tables.push(t);
        }
        let mut bn_states = Vec::new();
        while let Some(t) = find(&format!("bn.{}", bn_states.len())) {
            bn_states.push(BnState {
                mean: t.get(0, 0),
                var: t.get(0, 1),
            });
        }
        Some(EncoderParams {
            embed_tables,
            bn_states,
            w_z: find("gru.w_z")?,
            w_r: find("gru.w_r")?,
            w_h: find("gru.w_h")?,
            u_z: find("gru.u_z")?,
            u_r: find("gru.u_r")?,
            u_h: find("gru.u_h")?,
            b_z: find("gru.b_z")?,
            b_r: find("gru.b_r")?,
            b_h: find("gru.b_h")?,
        })
    }
}

fn uniform_array<F: Scalar>(rng: &mut ChaCha20Rng, rows: usize, cols: usize, scale: f64) -> Array<F> {
    let data = (0..rows * cols)
        .map(|_| F::from_f64(rng.random_range(-scale..scale)))
        .collect();
    Array::from_vec(rows, cols, data)
}

/// Tape handles to all parameter leaves of one forward pass.
pub struct ParamNodes {
    pub embed_tables: Vec<NodeId>,
    pub w_z: NodeId,
    pub w_r: NodeId,
    pub w_h: NodeId,
    pub u_z: NodeId,
    pub u_r: NodeId,
    pub u_h: NodeId,
    pub b_z: NodeId,
    pub b_r: NodeId,
    pub b_h: NodeId,
}

impl ParamNodes {
    pub fn insert<F: Scalar>(graph: &mut Graph<F>, params: &EncoderParams<F>) -> Self {
        ParamNodes {
            embed_tables: params
                .embed_tables
                .iter()
                .map(|t| graph.leaf(t.clone()))
                .collect(),
            w_z: graph.leaf(params.w_z.clone()),
            w_r: graph.leaf(params.w_r.clone()),
            w_h: graph.leaf(params.w_h.clone()),
            u_z: graph.leaf(params.u_z.clone()),
            u_r: graph.leaf(params.u_r.clone()),
            u_h: graph.leaf(params.u_h.clone()),
            b_z: graph.leaf(params.b_z.clone()),
            b_r: graph.leaf(params.b_r.clone()),
            b_h: graph.leaf(params.b_h.clone()),
        }
    }

    /// (name, node) pairs matching `EncoderParams::to_named` names for the
    /// differentiable tensors (batch-norm stats are not nodes).
    pub fn named(&self) -> Vec<(String, NodeId)> {
        let mut out = Vec::new();
        for (i, &id) in self.embed_tables.iter().enumerate() {
            out.push((format!("embed.{i}"), id));
        }
        for (name, id) in [
            ("gru.w_z", self.w_z),
            ("gru.w_r", self.w_r),
            ("gru.w_h", self.w_h),
            ("gru.u_z", self.u_z),
            ("gru.u_r", self.u_r),
            ("gru.u_h", self.u_h),
            ("gru.b_z", self.b_z),
            ("gru.b_r", self.b_r),
            ("gru.b_h", self.b_h),
        ] {
            out.push((name.to_string(), id));
        }
        out
    }
}

/// Encode a batch of event rows into `[rows x input_width]`: per-field
/// embedding lookups, per-field batch norm of numericals, concatenated in
/// field order (categoricals first). In train mode the updated running
/// stats are written back into `params.bn_states`.
pub fn encode_events<F: Scalar>(
    graph: &mut Graph<F>,
    events: &[&Event],
    params: &mut EncoderParams<F>,
    nodes: &ParamNodes,
    config: &EncoderConfig,
    mode: BnMode,
) -> Result<NodeId, EncoderError> {
    if events.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let mut parts = Vec::new();
    for (f, &table) in nodes.embed_tables.iter().enumerate() {
        let indices: Vec<usize> = events.iter().map(|e| e.cats[f] as usize).collect();
        parts.push(graph.gather_rows(table, &indices)?);
    }
    let eps = F::from_f64(config.bn_eps);
    let momentum = F::from_f64(config.bn_momentum);
    for f in 0..params.bn_states.len() {
        let col: Vec<F> = events.iter().map(|e| F::from_f64(e.nums[f])).collect();
        let x = graph.leaf(Array::from_vec(events.len(), 1, col));
        let state = &params.bn_states[f];
        let (node, updated) = graph.batch_norm(x, state.mean, state.var, mode, eps, momentum)?;
        if let Some((mean, var)) = updated {
            params.bn_states[f] = BnState { mean, var };
        }
        parts.push(node);
    }
    Ok(graph.concat_cols(&parts)?)
}

/// One GRU step:
/// `u = σ(z·W_z + h·U_z + b_z)`, `r = σ(z·W_r + h·U_r + b_r)`,
/// `h̃ = tanh(z·W_h + (r∘h)·U_h + b_h)`, `h' = (1−u)∘h + u∘h̃`.
pub fn gru_cell<F: Scalar>(
    graph: &mut Graph<F>,
    h: NodeId,
    z_in: NodeId,
    nodes: &ParamNodes,
) -> Result<NodeId, EncoderError> {
    let zu = graph.matmul(z_in, nodes.w_z)?;
    let hu = graph.matmul(h, nodes.u_z)?;
    let s = graph.add(zu, hu)?;
    let s = graph.add_row(s, nodes.b_z)?;
    let u = graph.sigmoid(s);

    let zr = graph.matmul(z_in, nodes.w_r)?;
    let hr = graph.matmul(h, nodes.u_r)?;
    let s = graph.add(zr, hr)?;
    let s = graph.add_row(s, nodes.b_r)?;
    let r = graph.sigmoid(s);

    let zh = graph.matmul(z_in, nodes.w_h)?;
    let rh = graph.mul_elem(r, h)?;
    let rhu = graph.matmul(rh, nodes.u_h)?;
    let s = graph.add(zh, rhu)?;
    let s = graph.add_row(s, nodes.b_h)?;
    let cand = graph.tanh(s);

    let keep = graph.one_minus(u);
    let kept = graph.mul_elem(keep, h)?;
    let new = graph.mul_elem(u, cand)?;
    Ok(graph.add(kept, new)?)
}

/// Fold the GRU over a `[rows x input_width]` block of encoded events,
/// starting from `h0` (`[1 x d]`), returning the raw final state node.
pub fn gru_fold<F: Scalar>(
    graph: &mut Graph<F>,
    z: NodeId,
    h0: NodeId,
    nodes: &ParamNodes,
) -> Result<NodeId, EncoderError> {
    let rows = graph.value(z).rows();
    let mut h = h0;
    for t in 0..rows {
        let zt = graph.slice_rows(z, t, t + 1)?;
        h = gru_cell(graph, h, zt, nodes)?;
    }
    Ok(h)
}

/// Output of a full-sequence encode: the unit-norm embedding and the raw
/// (pre-normalization) recurrent state.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded<F: Scalar> {
    pub embedding: Array<F>,
    pub state: Array<F>,
}

fn truncate<'a>(events: &'a [Event], max_len: usize) -> &'a [Event] {
    if events.len() > max_len {
        &events[events.len() - max_len..]
    } else {
        events
    }
}

/// Infer-mode encode of one sequence outside any training graph.
pub fn encode_sequence<F: Scalar>(
    seq: &EventSequence,
    params: &mut EncoderParams<F>,
    config: &EncoderConfig,
    mode: BnMode,
) -> Result<Encoded<F>, EncoderError> {
    if seq.events.is_empty() {
        return Err(EncoderError::EmptySequence);
    }
    let events = truncate(&seq.events, config.max_seq_len);
    let mut graph: Graph<F> = Graph::new();
    let nodes = ParamNodes::insert(&mut graph, params);
    let refs: Vec<&Event> = events.iter().collect();
    let z = encode_events(&mut graph, &refs, params, &nodes, config, mode)?;
    let h0 = graph.leaf(Array::zeros(1, params.hidden_dim()));
    let h = gru_fold(&mut graph, z, h0, &nodes)?;
    let emb = graph.l2_normalize(h, F::from_f64(L2_EPS));
    Ok(Encoded {
        embedding: graph.value(emb).clone(),
        state: graph.value(h).clone(),
    })
}

/// Continue the GRU fold from a stored raw state over new events
/// (infer-mode batch norm). With no new events the state is unchanged and
/// the embedding is just its normalized view.
pub fn incremental_update<F: Scalar>(
    state: &Array<F>,
    new_events: &[Event],
    params: &mut EncoderParams<F>,
    config: &EncoderConfig,
) -> Result<Encoded<F>, EncoderError> {
    let d = params.hidden_dim();
    if state.rows() != 1 || state.cols() != d {
        return Err(EncoderError::StateMismatch {
            got: state.rows() * state.cols(),
            want: d,
        });
    }
    let mut graph: Graph<F> = Graph::new();
    let nodes = ParamNodes::insert(&mut graph, params);
    let mut h = graph.leaf(state.clone());
    if !new_events.is_empty() {
        let refs: Vec<&Event> = new_events.iter().collect();
        let z = encode_events(&mut graph, &refs, params, &nodes, config, BnMode::Infer)?;
        h = gru_fold(&mut graph, z, h, &nodes)?;
    }
    let emb = graph.l2_normalize(h, F::from_f64(L2_EPS));
    Ok(Encoded {
        embedding: graph.value(emb).clone(),
        state: graph.value(h).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{generate_synthetic, build_vocabulary, synthetic_schema, SynthConfig};

    fn test_setup(d: usize) -> (EncoderConfig, EncoderParams<f64>, Vec<EventSequence>) {
        let cfg = SynthConfig {
            n_persons: 8,
            events_per_person: (5, 20),
            ..Default::default()
        };
        let raw = generate_synthetic(&cfg).unwrap();
        let schema = synthetic_schema();
        let vocab = build_vocabulary(&raw, &schema).unwrap();
        let dataset = vocab.encode_all(&raw);
        let config = EncoderConfig {
            hidden_dim: d,
            max_seq_len: 50,
            ..Default::default()
        };
        let params = EncoderParams::init(&config, &vocab, 11);
        (config, params, dataset)
    }

    #[test]
    fn encode_events_width_arithmetic() {
        let (config, mut params, dataset) = test_setup(8);
        let mut graph: Graph<f64> = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &params);
        let refs: Vec<&Event> = dataset[0].events.iter().collect();
        let z = encode_events(&mut graph, &refs, &mut params, &nodes, &config, BnMode::Infer).unwrap();
        let expected: usize = params.embed_tables.iter().map(|t| t.cols()).sum::<usize>()
            + params.bn_states.len();
        assert_eq!(graph.value(z).cols(), expected);
        assert_eq!(graph.value(z).rows(), refs.len());
    }

    #[test]
    fn identical_events_identical_rows() {
        let (config, mut params, dataset) = test_setup(8);
        let e = dataset[0].events[0].clone();
        let mut graph: Graph<f64> = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &params);
        let z = encode_events(&mut graph, &[&e, &e], &mut params, &nodes, &config, BnMode::Infer)
            .unwrap();
        assert_eq!(graph.value(z).row(0), graph.value(z).row(1));
    }

    #[test]
    fn gather_gradient_flows_only_to_used_rows() {
        let (config, mut params, dataset) = test_setup(8);
        let e = dataset[0].events[0].clone();
        let used = e.cats[0] as usize;
        let mut graph: Graph<f64> = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &params);
        let z = encode_events(&mut graph, &[&e, &e], &mut params, &nodes, &config, BnMode::Infer)
            .unwrap();
        let s = graph.sum(z);
        graph.backward(s).unwrap();
        let table_grad = graph.grad(nodes.embed_tables[0]);
        for r in 0..table_grad.rows() {
            let nonzero = table_grad.row(r).iter().any(|&x| x != 0.0);
            assert_eq!(nonzero, r == used, "row {r}");
        }
    }

    #[test]
    fn gru_cell_zero_params_zero_state() {
        let (config, params, _) = test_setup(4);
        let mut zeroed = params.clone();
        for t in [
            &mut zeroed.w_z, &mut zeroed.w_r, &mut zeroed.w_h,
            &mut zeroed.u_z, &mut zeroed.u_r, &mut zeroed.u_h,
            &mut zeroed.b_z, &mut zeroed.b_r, &mut zeroed.b_h,
        ] {
            t.fill(0.0);
        }
        let mut graph: Graph<f64> = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &zeroed);
        let h = graph.leaf(Array::zeros(1, 4));
        let z = graph.leaf(Array::from_vec(1, params.input_width(), vec![0.5; params.input_width()]));
        let out = gru_cell(&mut graph, h, z, &nodes).unwrap();
        assert!(graph.value(out).data().iter().all(|&v| v == 0.0));
        let _ = config;
    }

    #[test]
    fn gru_cell_large_negative_update_bias_carries_state() {
        let (_, params, _) = test_setup(4);
        let mut p = params.clone();
        p.b_z = Array::full(1, 4, -40.0);
        let mut graph: Graph<f64> = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &p);
        let h_val = Array::from_vec(1, 4, vec![0.3, -0.2, 0.9, 0.1]);
        let h = graph.leaf(h_val.clone());
        let z = graph.leaf(Array::from_vec(1, p.input_width(), vec![0.1; p.input_width()]));
        let out = gru_cell(&mut graph, h, z, &nodes).unwrap();
        for (a, b) in graph.value(out).data().iter().zip(h_val.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn gru_cell_matches_scalar_reimplementation() {
        let (_, params, _) = test_setup(4);
        let iw = params.input_width();
        let d = 4;
        let mut graph: Graph<f64> = Graph::new();
        let nodes = ParamNodes::insert(&mut graph, &params);
        let h_val: Vec<f64> = (0..d).map(|i| 0.1 * i as f64 - 0.2).collect();
        let z_val: Vec<f64> = (0..iw).map(|i| 0.05 * i as f64 - 0.3).collect();
        let h = graph.leaf(Array::from_vec(1, d, h_val.clone()));
        let z = graph.leaf(Array::from_vec(1, iw, z_val.clone()));
        let out = gru_cell(&mut graph, h, z, &nodes).unwrap();

        // independent scalar route over the same equations
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let affine = |w: &Array<f64>, u: &Array<f64>, b: &Array<f64>, hh: &[f64]| -> Vec<f64> {
            (0..d)
                .map(|j| {
                    let mut acc = b.get(0, j);
                    for (i, &zv) in z_val.iter().enumerate() {
                        acc += zv * w.get(i, j);
                    }
                    for (i, &hv) in hh.iter().enumerate() {
                        acc += hv * u.get(i, j);
                    }
                    acc
                })
                .collect()
        };
        let u_gate: Vec<f64> = affine(&params.w_z, &params.u_z, &params.b_z, &h_val)
            .into_iter()
            .map(sig)
            .collect();
        let r_gate: Vec<f64> = affine(&params.w_r, &params.u_r, &params.b_r, &h_val)
            .into_iter()
            .map(sig)
            .collect();
        let rh: Vec<f64> = r_gate.iter().zip(&h_val).map(|(r, h)| r * h).collect();
        let cand: Vec<f64> = affine(&params.w_h, &params.u_h, &params.b_h, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        for j in 0..d {
            let expected = (1.0 - u_gate[j]) * h_val[j] + u_gate[j] * cand[j];
            assert!(
                (graph.value(out).get(0, j) - expected).abs() < 1e-6,
                "coordinate {j}"
            );
        }
    }

    #[test]
    fn embedding_is_unit_norm() {
        let (config, mut params, dataset) = test_setup(16);
        for seq in &dataset {
            let enc = encode_sequence(seq, &mut params, &config, BnMode::Infer).unwrap();
            let norm: f64 = enc.embedding.data().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn empty_sequence_rejected() {
        let (config, mut params, dataset) = test_setup(8);
        let empty = EventSequence {
            person_id: "x".into(),
            events: vec![],
            label: None,
        };
        assert!(matches!(
            encode_sequence(&empty, &mut params, &config, BnMode::Infer),
            Err(EncoderError::EmptySequence)
        ));
        let _ = dataset;
    }

    #[test]
    fn full_encode_equals_stepwise_fold() {
        let (config, mut params, dataset) = test_setup(8);
        let seq = &dataset[0];
        let full = encode_sequence(seq, &mut params, &config, BnMode::Infer).unwrap();
        // step-by-step oracle: one incremental_update per event
        let mut state = Array::zeros(1, 8);
        for e in &seq.events {
            let enc = incremental_update(&state, &[e.clone()], &mut params, &config).unwrap();
            state = enc.state;
        }
        for (a, b) in full.state.data().iter().zip(state.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn incremental_empty_is_identity() {
        let (config, mut params, dataset) = test_setup(8);
        let enc = encode_sequence(&dataset[0], &mut params, &config, BnMode::Infer).unwrap();
        let upd = incremental_update(&enc.state, &[], &mut params, &config).unwrap();
        assert_eq!(upd.state, enc.state);
        assert_eq!(upd.embedding, enc.embedding);
    }

    #[test]
    fn incremental_matches_full_recompute() {
        let (config, mut params, dataset) = test_setup(8);
        for (i, seq) in dataset.iter().enumerate() {
            let split = seq.events.len() / 2;
            let head = EventSequence {
                person_id: seq.person_id.clone(),
                events: seq.events[..split.max(1)].to_vec(),
                label: None,
            };
            let tail = &seq.events[split.max(1)..];
            let full = encode_sequence(seq, &mut params, &config, BnMode::Infer).unwrap();
            let part = encode_sequence(&head, &mut params, &config, BnMode::Infer).unwrap();
            let upd = incremental_update(&part.state, tail, &mut params, &config).unwrap();
            for (a, b) in full.state.data().iter().zip(upd.state.data()) {
                assert!((a - b).abs() < 1e-5, "seq {i}");
            }
        }
    }

    #[test]
    fn incremental_composes() {
        let (config, mut params, dataset) = test_setup(8);
        let seq = &dataset[1];
        let n = seq.events.len();
        let (a, b, c) = (&seq.events[..n / 3], &seq.events[n / 3..2 * n / 3], &seq.events[2 * n / 3..]);
        let head = EventSequence {
            person_id: seq.person_id.clone(),
            events: a.to_vec(),
            label: None,
        };
        let start = encode_sequence(&head, &mut params, &config, BnMode::Infer).unwrap();
        let two_step = {
            let s1 = incremental_update(&start.state, b, &mut params, &config).unwrap();
            incremental_update(&s1.state, c, &mut params, &config).unwrap()
        };
        let bc: Vec<Event> = b.iter().chain(c).cloned().collect();
        let one_step = incremental_update(&start.state, &bc, &mut params, &config).unwrap();
        for (x, y) in two_step.state.data().iter().zip(one_step.state.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn state_dimension_mismatch_rejected() {
        let (config, mut params, _) = test_setup(8);
        let bad = Array::zeros(1, 5);
        assert!(matches!(
            incremental_update(&bad, &[], &mut params, &config),
            Err(EncoderError::StateMismatch { .. })
        ));
    }

    #[test]
    fn truncation_keeps_most_recent() {
        let (mut config, mut params, dataset) = test_setup(8);
        let seq = &dataset[0];
        config.max_seq_len = 3;
        let truncated = encode_sequence(seq, &mut params, &config, BnMode::Infer).unwrap();
        let tail = EventSequence {
            person_id: seq.person_id.clone(),
            events: seq.events[seq.events.len() - 3..].to_vec(),
            label: None,
        };
        let direct = encode_sequence(&tail, &mut params, &config, BnMode::Infer).unwrap();
        assert_eq!(truncated.state, direct.state);
    }
}
