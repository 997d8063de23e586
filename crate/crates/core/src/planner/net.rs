//! Forward pass: point embedding, local GNN per element, ego-query global
//! attention and the trajectory head.

use std::f64::consts::PI;

use vcplan_numerics::{Array, Tape, Var};

use super::batch::{build_element_batch, Element, ElementKind};
use super::params::Parameters;
use crate::error::{CoreError, Result};
use crate::scenario::Scenario;
use crate::trajectory::PlannedTrajectory;

/// Standard sinusoidal encoding: channel `2i` is `sin(pos / 10000^(2i/d))`,
/// channel `2i + 1` the matching cosine.
pub fn positional_encoding(n: usize, d: usize) -> Array {
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in (0..d).step_by(2) {
            let freq = 10000f64.powf(-(i as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + i] = angle.sin();
            if i + 1 < d {
                data[pos * d + i + 1] = angle.cos();
            }
        }
    }
    Array::matrix(n, d, data)
}

/// Intermediate nodes of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Per-element descriptors stacked as `elements × d_model`.
    pub descriptors: Var,
    /// Ego-centric fused vector, `1 × attn_out`.
    pub fused: Var,
    /// De-normalized trajectory, `T × 3`.
    pub trajectory: Var,
    /// Soft adjacency of every GNN layer, per element.
    pub adjacency: Vec<Vec<Var>>,
    /// Attention weights of every head over the key elements.
    pub attention: Vec<Var>,
}

/// The planner network bound to parameter nodes on a tape.
pub struct Net<'a> {
    params: &'a Parameters,
    vars: &'a [Var],
}

impl<'a> Net<'a> {
    pub fn new(params: &'a Parameters, vars: &'a [Var]) -> Self {
        Self { params, vars }
    }

    fn p(&self, i: usize) -> Var {
        self.vars[i]
    }

    fn linear(&self, tape: &mut Tape, x: Var, w: usize, b: usize) -> Result<Var> {
        let y = tape.matmul(x, self.p(w))?;
        Ok(tape.add_row(y, self.p(b))?)
    }

    /// Shared two-layer MLP per row, plus the positional encoding of the row
    /// index; absent rows are zeroed afterwards.
    pub fn embed_points(&self, tape: &mut Tape, element: &Element) -> Result<Var> {
        let idx = &self.params.index;
        let d = self.params.config.d_model;
        let x = tape.constant(element.nodes.clone());
        let h = self.linear(tape, x, idx.input_w1, idx.input_b1)?;
        let h = tape.relu(h);
        let h = self.linear(tape, h, idx.input_w2, idx.input_b2)?;
        let pe = tape.constant(positional_encoding(element.len(), d));
        let h = tape.add(h, pe)?;
        if element.present() == element.len() {
            return Ok(h);
        }
        let mut mask = Vec::with_capacity(element.len() * d);
        for &m in &element.mask {
            mask.extend(std::iter::repeat_n(if m { 1.0 } else { 0.0 }, d));
        }
        let mask = tape.constant(Array::matrix(element.len(), d, mask));
        Ok(tape.mul(h, mask)?)
    }

    /// Fully connected GNN with learned soft adjacency and residual updates,
    /// summed over present nodes. Returns `(descriptor, adjacency per layer)`.
    pub fn local_gnn(&self, tape: &mut Tape, nodes: Var, mask: &[bool]) -> Result<(Var, Vec<Var>)> {
        if !mask.iter().any(|&m| m) {
            return Err(CoreError::Contract("element has no present node".into()));
        }
        let d = self.params.config.d_model as f64;
        let mut h = nodes;
        let mut adjacency = Vec::with_capacity(self.params.index.gnn.len());
        for &[wq, wk, wv, wu] in &self.params.index.gnn {
            let q = tape.matmul(h, self.p(wq))?;
            let k = tape.matmul(h, self.p(wk))?;
            let v = tape.matmul(h, self.p(wv))?;
            let kt = tape.transpose(k);
            let logits = tape.matmul(q, kt)?;
            let logits = tape.scale(logits, 1.0 / d.sqrt());
            let a = tape.softmax_rows_masked(logits, Some(mask))?;
            adjacency.push(a);
            let msg = tape.matmul(a, v)?;
            let msg = tape.matmul(msg, self.p(wu))?;
            let msg = tape.relu(msg);
            h = tape.add(h, msg)?;
        }
        let readout: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        let readout = tape.constant(Array::matrix(1, mask.len(), readout));
        Ok((tape.matmul(readout, h)?, adjacency))
    }

    /// Multi-head attention with the ego descriptor as query; type embeddings
    /// are added to the keys only. Returns `(fused, weights per head)`.
    pub fn global_attention(
        &self,
        tape: &mut Tape,
        descriptors: &[Var],
        kinds: &[ElementKind],
    ) -> Result<(Var, Vec<Var>)> {
        let idx = &self.params.index;
        let cfg = &self.params.config;
        let egos: Vec<usize> = (0..kinds.len())
            .filter(|&i| kinds[i] == ElementKind::Ego)
            .collect();
        let &[ego] = egos.as_slice() else {
            return Err(CoreError::Contract(format!(
                "global attention needs exactly one ego element, found {}",
                egos.len()
            )));
        };
        let keys: Vec<usize> = (0..kinds.len())
            .filter(|&i| cfg.ego_in_keys || i != ego)
            .collect();
        if keys.is_empty() {
            return Err(CoreError::Contract("no key elements for attention".into()));
        }
        let key_desc: Vec<Var> = keys.iter().map(|&i| descriptors[i]).collect();
        let values = tape.concat_rows(&key_desc)?;
        let types: Vec<usize> = keys.iter().map(|&i| kinds[i].index()).collect();
        let types = tape.gather_rows(self.p(idx.type_embedding), &types)?;
        let typed = tape.add(values, types)?;

        let scale = 1.0 / (cfg.head_width() as f64).sqrt();
        let mut heads = Vec::with_capacity(idx.attn.len());
        let mut weights = Vec::with_capacity(idx.attn.len());
        for &[wq, wk, wv] in &idx.attn {
            let q = tape.matmul(descriptors[ego], self.p(wq))?;
            let k = tape.matmul(typed, self.p(wk))?;
            let v = tape.matmul(values, self.p(wv))?;
            let kt = tape.transpose(k);
            let logits = tape.matmul(q, kt)?;
            let logits = tape.scale(logits, scale);
            let a = tape.softmax_rows(logits);
            weights.push(a);
            heads.push(tape.matmul(a, v)?);
        }
        let joined = tape.concat_cols(&heads)?;
        let fused = self.linear(tape, joined, idx.attn_wo, idx.attn_bo)?;
        Ok((fused, weights))
    }

    /// MLP to `T × 3`; positions are scaled to meters, yaw to radians and
    /// wrapped.
    pub fn trajectory_head(&self, tape: &mut Tape, fused: Var) -> Result<Var> {
        let idx = &self.params.index;
        let cfg = &self.params.config;
        let h = self.linear(tape, fused, idx.head_w1, idx.head_b1)?;
        let h = tape.relu(h);
        let raw = self.linear(tape, h, idx.head_w2, idx.head_b2)?;
        let raw = tape.reshape(raw, &[cfg.t_future, 3])?;
        let scale: Vec<f64> = (0..cfg.t_future)
            .flat_map(|_| [cfg.coord_scale, cfg.coord_scale, PI])
            .collect();
        let scale = tape.constant(Array::matrix(cfg.t_future, 3, scale));
        let out = tape.mul(raw, scale)?;
        Ok(tape.wrap_column(out, 2)?)
    }

    pub fn forward(&self, tape: &mut Tape, elements: &[Element]) -> Result<ForwardTrace> {
        let mut descriptors = Vec::with_capacity(elements.len());
        let mut adjacency = Vec::with_capacity(elements.len());
        for e in elements {
            let nodes = self.embed_points(tape, e)?;
            let (desc, adj) = self.local_gnn(tape, nodes, &e.mask)?;
            descriptors.push(desc);
            adjacency.push(adj);
        }
        let kinds: Vec<ElementKind> = elements.iter().map(|e| e.kind).collect();
        let (fused, attention) = self.global_attention(tape, &descriptors, &kinds)?;
        let trajectory = self.trajectory_head(tape, fused)?;
        Ok(ForwardTrace {
            descriptors: tape.concat_rows(&descriptors)?,
            fused,
            trajectory,
            adjacency,
            attention,
        })
    }
}

/// Runs the full planner on a scenario.
pub fn plan(scenario: &Scenario, params: &Parameters) -> Result<PlannedTrajectory> {
    let elements = build_element_batch(scenario, &params.config)?;
    let mut tape = Tape::new();
    let vars = params.register(&mut tape, false);
    let trace = Net::new(params, &vars).forward(&mut tape, &elements)?;
    Ok(PlannedTrajectory::from_array(
        scenario.dt,
        tape.value(trace.trajectory),
    ))
}
