use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vcplan_numerics::{Array, Tape, Var};

use super::batch::ElementKind;
use super::config::PlannerConfig;
use crate::error::{CoreError, Result};

/// Positions of each learnable tensor inside [`Parameters::tensors`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamIndex {
    pub input_w1: usize,
    pub input_b1: usize,
    pub input_w2: usize,
    pub input_b2: usize,
    /// Per GNN layer: query, key, value, update.
    pub gnn: Vec<[usize; 4]>,
    /// Per attention head: query, key, value.
    pub attn: Vec<[usize; 3]>,
    pub attn_wo: usize,
    pub attn_bo: usize,
    pub type_embedding: usize,
    pub head_w1: usize,
    pub head_b1: usize,
    pub head_w2: usize,
    pub head_b2: usize,
}

/// Name, shape and initialization fan-in (`None` for zero-initialized biases).
type Spec = (String, [usize; 2], Option<usize>);

fn layout(config: &PlannerConfig) -> (Vec<Spec>, ParamIndex) {
    let d = config.d_model;
    let fw = config.feature_width;
    let dh = config.head_width();
    let mut specs: Vec<Spec> = Vec::new();
    let mut add = |name: String, shape: [usize; 2], bias: bool| {
        let fan_in = (!bias).then_some(shape[0]);
        specs.push((name, shape, fan_in));
        specs.len() - 1
    };

    let input_w1 = add("input.w1".into(), [fw, d], false);
    let input_b1 = add("input.b1".into(), [1, d], true);
    let input_w2 = add("input.w2".into(), [d, d], false);
    let input_b2 = add("input.b2".into(), [1, d], true);
    let gnn = (0..config.gnn_layers)
        .map(|l| ["w_q", "w_k", "w_v", "w_u"].map(|w| add(format!("gnn.{l}.{w}"), [d, d], false)))
        .collect();
    let attn = (0..config.heads)
        .map(|h| ["w_q", "w_k", "w_v"].map(|w| add(format!("attn.{h}.{w}"), [d, dh], false)))
        .collect();
    let attn_wo = add("attn.w_o".into(), [d, config.attn_out], false);
    let attn_bo = add("attn.b_o".into(), [1, config.attn_out], true);
    let type_embedding = add("type_embedding".into(), [ElementKind::COUNT, d], false);
    let head_w1 = add(
        "head.w1".into(),
        [config.attn_out, config.head_hidden],
        false,
    );
    let head_b1 = add("head.b1".into(), [1, config.head_hidden], true);
    let head_w2 = add(
        "head.w2".into(),
        [config.head_hidden, 3 * config.t_future],
        false,
    );
    let head_b2 = add("head.b2".into(), [1, 3 * config.t_future], true);

    let index = ParamIndex {
        input_w1,
        input_b1,
        input_w2,
        input_b2,
        gnn,
        attn,
        attn_wo,
        attn_bo,
        type_embedding,
        head_w1,
        head_b1,
        head_w2,
        head_b2,
    };
    (specs, index)
}

/// Every learnable tensor of the planner, in a fixed named order.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub config: PlannerConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Array>,
    pub index: ParamIndex,
}

impl Parameters {
    /// Weights uniform in ±1/√fan_in, biases zero, seeded by `config.init_seed`.
    pub fn init(config: &PlannerConfig) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, [r, c], fan_in) in specs {
            let data = match fan_in {
                Some(f) => {
                    let bound = 1.0 / (f as f64).sqrt();
                    (0..r * c).map(|_| rng.gen_range(-bound..bound)).collect()
                }
                None => vec![0.0; r * c],
            };
            names.push(name);
            tensors.push(Array::matrix(r, c, data));
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
            index,
        })
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against the layout implied by `config`.
    pub fn from_named(config: &PlannerConfig, named: Vec<(String, Array)>) -> Result<Self> {
        config.validate()?;
        let (specs, index) = layout(config);
        let (expected, found) = (specs.len(), named.len());
        let mut names = Vec::with_capacity(expected);
        let mut tensors = Vec::with_capacity(expected);
        for ((name, shape, _), (got_name, array)) in specs.into_iter().zip(named) {
            if name != got_name {
                return Err(CoreError::Checkpoint(format!(
                    "expected tensor `{name}` of shape {shape:?}, found `{got_name}` of shape {:?}",
                    array.shape()
                )));
            }
            if array.shape() != shape {
                return Err(CoreError::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, config expects {:?}",
                    array.shape(),
                    shape
                )));
            }
            names.push(name);
            tensors.push(array);
        }
        if expected != found {
            return Err(CoreError::Checkpoint(format!(
                "expected {expected} tensors, found {found}"
            )));
        }
        Ok(Self {
            config: config.clone(),
            names,
            tensors,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Array::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Array::is_finite)
    }

    /// Records every tensor on the tape: as differentiable leaves when
    /// `trainable`, as constants otherwise.
    pub fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.tensors
            .iter()
            .map(|t| {
                if trainable {
                    tape.leaf(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }
}
