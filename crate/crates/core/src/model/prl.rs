//! Shared embedding encoder, auxiliary tag decoder and LSTM language-model
//! decoder. The auxiliary decoder reads `[e_t ; T_t]` and produces a
//! predictive representation `R_t` over the next word's tag; the LM decoder
//! concatenates `R_t` with its first layer's hidden state before layer 2.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{HeadKind, ModelConfig};
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::BpttBatch;
use crate::error::{Error, Result};
use crate::trace::LabelTraceState;

/// Which update scope a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Aux,
    Lm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct LstmIds {
    weight: usize,
    bias: usize,
    hidden: usize,
}

/// Index of every parameter in [`PrlModel::params`], fixed by the config.
#[derive(Clone, Debug, PartialEq)]
struct Layout {
    embedding: usize,
    aux: Vec<LstmIds>,
    head_weight: Option<usize>,
    head_bias: Option<usize>,
    lm: Vec<LstmIds>,
    out_weight: Option<usize>,
    out_bias: usize,
}

/// Name, group and shape of every parameter, in storage order.
pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<(String, ParamGroup, Vec<usize>)> {
    let mut specs = vec![(
        "encoder.embedding".to_string(),
        ParamGroup::Encoder,
        vec![cfg.vocab_size, cfg.embed_dim],
    )];
    let lstm = |prefix: &str, layer: usize, input: usize, hidden: usize, group| {
        [
            (
                format!("{prefix}.lstm{layer}.weight"),
                group,
                vec![input + hidden, 4 * hidden],
            ),
            (
                format!("{prefix}.lstm{layer}.bias"),
                group,
                vec![1, 4 * hidden],
            ),
        ]
    };
    if cfg.head.has_aux() {
        let mut input = cfg.aux_input_dim();
        for l in 0..cfg.aux_layers {
            specs.extend(lstm("aux", l, input, cfg.aux_hidden, ParamGroup::Aux));
            input = cfg.aux_hidden;
        }
        specs.push((
            "aux.head.weight".into(),
            ParamGroup::Aux,
            vec![input, cfg.num_tags],
        ));
        specs.push((
            "aux.head.bias".into(),
            ParamGroup::Aux,
            vec![1, cfg.num_tags],
        ));
    }
    for l in 0..cfg.lm_layers {
        let input = match l {
            0 => cfg.embed_dim,
            1 => cfg.lm_layer2_input_dim(),
            _ => cfg.lm_hidden,
        };
        specs.extend(lstm("lm", l, input, cfg.lm_hidden, ParamGroup::Lm));
    }
    if !cfg.tie_weights {
        specs.push((
            "lm.out.weight".into(),
            ParamGroup::Lm,
            vec![cfg.lm_hidden, cfg.vocab_size],
        ));
    }
    specs.push((
        "lm.out.bias".into(),
        ParamGroup::Lm,
        vec![1, cfg.vocab_size],
    ));
    specs
}

fn layout(cfg: &ModelConfig) -> Layout {
    let specs = param_specs(cfg);
    let find = |name: &str| specs.iter().position(|s| s.0 == name);
    let stack = |prefix: &str, layers: usize, hidden: usize| {
        (0..layers)
            .map(|l| LstmIds {
                weight: find(&format!("{prefix}.lstm{l}.weight")).expect("layout"),
                bias: find(&format!("{prefix}.lstm{l}.bias")).expect("layout"),
                hidden,
            })
            .collect::<Vec<_>>()
    };
    Layout {
        embedding: 0,
        aux: if cfg.head.has_aux() {
            stack("aux", cfg.aux_layers, cfg.aux_hidden)
        } else {
            Vec::new()
        },
        head_weight: find("aux.head.weight"),
        head_bias: find("aux.head.bias"),
        lm: stack("lm", cfg.lm_layers, cfg.lm_hidden),
        out_weight: find("lm.out.weight"),
        out_bias: find("lm.out.bias").expect("layout"),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrlModel {
    config: ModelConfig,
    params: Vec<Param>,
    layout: Layout,
}

/// Parameters placed on a graph for one forward pass.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Option<Var>>,
}

impl Bound {
    /// One slot per model parameter, in storage order.
    pub fn from_vars(vars: Vec<Option<Var>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, idx: usize) -> Result<Var> {
        self.vars[idx].ok_or_else(|| Error::Contract(format!("parameter {idx} is not bound")))
    }

    /// `(param index, var)` for every bound parameter.
    pub fn iter(&self) -> impl Iterator<Item = (usize, Var)> + '_ {
        self.vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (i, v)))
    }
}

/// Hidden and cell state of one LSTM stack, `[B×hidden]` per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct StackState {
    pub h: Vec<Tensor>,
    pub c: Vec<Tensor>,
}

impl StackState {
    pub fn zeros(layers: usize, batch: usize, hidden: usize) -> Self {
        StackState {
            h: vec![Tensor::zeros(&[batch, hidden]); layers],
            c: vec![Tensor::zeros(&[batch, hidden]); layers],
        }
    }

    fn reset_rows(&mut self, reset: &[bool]) {
        for t in self.h.iter_mut().chain(self.c.iter_mut()) {
            let cols = t.shape()[1];
            for (b, _) in reset.iter().enumerate().filter(|(_, r)| **r) {
                t.data_mut()[b * cols..(b + 1) * cols].fill(0.0);
            }
        }
    }
}

/// Where label traces come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraceMode {
    /// Ground-truth tags of the observed words.
    Gold,
    /// The model's own argmax predictions.
    #[serde(rename = "self")]
    SelfPredicted,
}

impl std::str::FromStr for TraceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(TraceMode::Gold),
            "self" => Ok(TraceMode::SelfPredicted),
            _ => Err(Error::Input(format!(
                "unknown trace mode {s:?} (gold|self)"
            ))),
        }
    }
}

/// Everything carried from one BPTT window to the next, per stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Carry {
    pub aux: StackState,
    pub lm: StackState,
    pub traces: Vec<LabelTraceState>,
    /// Self-trace mode: the predicted tag of the current word, made one step earlier.
    pub pending: Vec<Option<usize>>,
}

impl Carry {
    pub fn new(model: &PrlModel, batch: usize) -> Result<Self> {
        let cfg = model.config();
        let aux_layers = if cfg.head.has_aux() {
            cfg.aux_layers
        } else {
            0
        };
        Ok(Carry {
            aux: StackState::zeros(aux_layers, batch, cfg.aux_hidden),
            lm: StackState::zeros(cfg.lm_layers, batch, cfg.lm_hidden),
            traces: vec![LabelTraceState::new(cfg.num_tags, cfg.trace_gamma)?; batch],
            pending: vec![None; batch],
        })
    }

    /// Zeroes state for every stream flagged in `reset`.
    pub fn apply_resets(&mut self, reset: &[bool]) {
        self.aux.reset_rows(reset);
        self.lm.reset_rows(reset);
        for (b, _) in reset.iter().enumerate().filter(|(_, r)| **r) {
            self.traces[b].reset();
            self.pending[b] = None;
        }
    }
}

/// Dropout driven by an externally owned RNG; `None` disables it.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn dropout(g: &mut Graph, x: Var, d: &mut Option<Dropout<'_>>) -> Result<Var> {
    match d {
        Some(d) if d.rate > 0.0 => {
            let keep = 1.0 - d.rate;
            let n = g.value(x).numel();
            let mask = (0..n)
                .map(|_| {
                    if d.rng.gen::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
                .collect();
            g.mask_mul(x, mask)
        }
        _ => Ok(x),
    }
}

/// Output of the auxiliary decoder over one window.
#[derive(Debug)]
pub struct AuxOutput {
    /// Head output per step, `[B×K]`: logits for P, action values for Q.
    pub scores: Vec<Var>,
    /// Predictive representation per step, `[B×K]`.
    pub r: Vec<Var>,
    /// Argmax of R per step and stream.
    pub predicted: Vec<Vec<usize>>,
}

/// How the auxiliary decoder receives label traces for a window.
pub enum TraceFeed<'a> {
    /// Traces are built from these `[B×L]` tags of the input words.
    Gold(&'a [usize]),
    /// Traces are built from the decoder's own predictions.
    SelfPredicted,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl PrlModel {
    /// Randomly initialized model.
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let params = param_specs(&config)
            .into_iter()
            .map(|(name, group, shape)| {
                let n: usize = shape.iter().product();
                let scale = if name.ends_with("embedding") || name.starts_with("lm.out") {
                    0.1
                } else {
                    1.0 / (shape[1] as f64 / 4.0).sqrt()
                };
                let data = if name == "lm.out.bias" || name == "aux.head.bias" {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
                };
                Param {
                    name,
                    group,
                    value: Tensor::from_parts(shape, data),
                }
            })
            .collect();
        let layout = layout(&config);
        Ok(PrlModel {
            config,
            params,
            layout,
        })
    }

    /// Builds a model from parameter tensors in storage order.
    pub fn from_params(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != tensors.len() {
            return Err(Error::Schema(format!(
                "expected {} parameter tensors, got {}",
                specs.len(),
                tensors.len()
            )));
        }
        let mut params = Vec::with_capacity(specs.len());
        for ((name, group, shape), value) in specs.into_iter().zip(tensors) {
            if value.shape() != shape.as_slice() {
                return Err(Error::Schema(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    value.shape()
                )));
            }
            params.push(Param { name, group, value });
        }
        let layout = layout(&config);
        Ok(PrlModel {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn num_parameters(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Places parameters of the `include` groups on `g`; those also in
    /// `trainable` receive gradients, the rest are constants.
    pub fn bind(&self, g: &mut Graph, include: &[ParamGroup], trainable: &[ParamGroup]) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if !include.contains(&p.group) {
                    None
                } else if trainable.contains(&p.group) {
                    Some(g.param(&p.value))
                } else {
                    Some(g.constant(p.value.clone()))
                }
            })
            .collect();
        Bound { vars }
    }

    /// Embeds `[B×L]` ids into one `[B×d_e]` tensor per time step.
    pub fn encode(
        &self,
        g: &mut Graph,
        p: &Bound,
        ids: &[usize],
        batch: usize,
        len: usize,
    ) -> Result<Vec<Var>> {
        if ids.len() != batch * len {
            return Err(Error::dim("encode", &[batch, len], &[ids.len()]));
        }
        let table = p.var(self.layout.embedding)?;
        (0..len)
            .map(|t| g.lookup(table, &BpttBatch::column(ids, batch, len, t)))
            .collect()
    }

    fn lstm_step(
        g: &mut Graph,
        p: &Bound,
        ids: LstmIds,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var)> {
        let n = ids.hidden;
        let xh = g.concat2(x, h, 1)?;
        let z = g.matmul(xh, p.var(ids.weight)?)?;
        let z = g.add_bias(z, p.var(ids.bias)?)?;
        let i = g.slice(z, 1, 0, n)?;
        let f = g.slice(z, 1, n, 2 * n)?;
        let cand = g.slice(z, 1, 2 * n, 3 * n)?;
        let o = g.slice(z, 1, 3 * n, 4 * n)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_next = g.add(keep, write)?;
        let squashed = g.tanh(c_next);
        let h_next = g.mul(o, squashed)?;
        Ok((h_next, c_next))
    }

    fn load_state(g: &mut Graph, state: &StackState) -> (Vec<Var>, Vec<Var>) {
        let h = state.h.iter().map(|t| g.constant(t.clone())).collect();
        let c = state.c.iter().map(|t| g.constant(t.clone())).collect();
        (h, c)
    }

    fn store_state(g: &Graph, state: &mut StackState, h: &[Var], c: &[Var]) {
        for (dst, v) in state.h.iter_mut().zip(h) {
            *dst = g.value(*v).clone();
        }
        for (dst, v) in state.c.iter_mut().zip(c) {
            *dst = g.value(*v).clone();
        }
    }

    /// Runs the auxiliary decoder over one window. `inputs` are the per-step
    /// embeddings it reads: current words normally, next words in oracle mode.
    #[allow(clippy::too_many_arguments)]
    pub fn aux_forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        inputs: &[Var],
        feed: Option<TraceFeed<'_>>,
        state: &mut StackState,
        traces: &mut [LabelTraceState],
        pending: &mut [Option<usize>],
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<AuxOutput> {
        let cfg = &self.config;
        if !cfg.head.has_aux() {
            return Err(Error::Contract(
                "baseline model has no auxiliary decoder".into(),
            ));
        }
        if cfg.use_trace && feed.is_none() {
            return Err(Error::Contract(
                "label traces are required by this model".into(),
            ));
        }
        let batch = traces.len();
        let len = inputs.len();
        if let Some(TraceFeed::Gold(tags)) = &feed {
            if tags.len() != batch * len {
                return Err(Error::dim("aux_forward", &[batch, len], &[tags.len()]));
            }
        }
        let k = cfg.num_tags;
        let (mut h, mut c) = Self::load_state(g, state);
        let head_w = p.var(self.layout.head_weight.expect("aux head"))?;
        let head_b = p.var(self.layout.head_bias.expect("aux head"))?;
        let mut out = AuxOutput {
            scores: Vec::with_capacity(len),
            r: Vec::with_capacity(len),
            predicted: Vec::with_capacity(len),
        };
        for (t, &e) in inputs.iter().enumerate() {
            let mut x = e;
            if cfg.use_trace {
                let flat: Vec<f64> = traces
                    .iter()
                    .flat_map(|s| s.values().iter().copied())
                    .collect();
                let tr = g.constant(Tensor::from_parts(vec![batch, k], flat));
                x = g.concat2(x, tr, 1)?;
            }
            for (l, ids) in self.layout.aux.iter().enumerate() {
                x = dropout(g, x, drop)?;
                let (hn, cn) = Self::lstm_step(g, p, *ids, x, h[l], c[l])?;
                h[l] = hn;
                c[l] = cn;
                x = hn;
            }
            x = dropout(g, x, drop)?;
            let z = g.matmul(x, head_w)?;
            let z = g.add_bias(z, head_b)?;
            let r = match cfg.head {
                HeadKind::P => g.softmax(z)?,
                _ => z,
            };
            let preds: Vec<usize> = (0..batch).map(|b| argmax(g.value(r).row(b))).collect();

            if let Some(feed) = &feed {
                for b in 0..batch {
                    let observed = match feed {
                        TraceFeed::Gold(tags) => Some(tags[b * len + t]),
                        TraceFeed::SelfPredicted => pending[b],
                    };
                    if let Some(y) = observed {
                        traces[b].observe(y)?;
                    }
                    pending[b] = Some(preds[b]);
                }
            }
            out.scores.push(z);
            out.r.push(r);
            out.predicted.push(preds);
        }
        Self::store_state(g, state, &h, &c);
        Ok(out)
    }

    /// Runs the LM decoder over one window and returns time-major logits
    /// `[(L·B)×V]`. `r` holds one `[B×K]` representation per step and is
    /// required exactly when the model has an auxiliary head.
    pub fn lm_forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        inputs: &[Var],
        r: Option<&[Var]>,
        state: &mut StackState,
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<Var> {
        let cfg = &self.config;
        match (cfg.head.has_aux(), r) {
            (true, None) => {
                return Err(Error::Contract("predictive representation required".into()))
            }
            (false, Some(_)) => {
                return Err(Error::Contract(
                    "baseline model takes no representation".into(),
                ))
            }
            (true, Some(r)) if r.len() != inputs.len() => {
                return Err(Error::dim("lm_forward", &[inputs.len()], &[r.len()]))
            }
            _ => {}
        }
        let (mut h, mut c) = Self::load_state(g, state);
        let mut tops = Vec::with_capacity(inputs.len());
        for (t, &e) in inputs.iter().enumerate() {
            let mut x = e;
            for (l, ids) in self.layout.lm.iter().enumerate() {
                x = dropout(g, x, drop)?;
                let (hn, cn) = Self::lstm_step(g, p, *ids, x, h[l], c[l])?;
                h[l] = hn;
                c[l] = cn;
                x = hn;
                if l == 0 {
                    if let Some(r) = r {
                        let rt = r[t];
                        if g.shape(rt) != [g.shape(x)[0], cfg.num_tags] {
                            return Err(Error::dim("lm_forward", g.shape(x), g.shape(rt)));
                        }
                        x = g.concat2(x, rt, 1)?;
                    }
                }
            }
            tops.push(dropout(g, x, drop)?);
        }
        Self::store_state(g, state, &h, &c);
        let stacked = g.concat(&tops, 0)?;
        let logits = match self.layout.out_weight {
            Some(w) => g.matmul(stacked, p.var(w)?)?,
            None => g.matmul_bt(stacked, p.var(self.layout.embedding)?)?,
        };
        g.add_bias(logits, p.var(self.layout.out_bias)?)
    }

    /// Embeddings the auxiliary decoder reads for `batch`.
    pub fn aux_inputs(&self, g: &mut Graph, p: &Bound, batch: &BpttBatch) -> Result<Vec<Var>> {
        let ids = if self.config.oracle {
            &batch.targets
        } else {
            &batch.inputs
        };
        self.encode(g, p, ids, batch.batch_size, batch.bptt_len)
    }

    /// Same as [`PrlModel::aux_forward`], for oracle models whose inputs are
    /// embeddings of the next words.
    #[allow(clippy::too_many_arguments)]
    pub fn oracle_aux_forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        next_inputs: &[Var],
        feed: Option<TraceFeed<'_>>,
        state: &mut StackState,
        traces: &mut [LabelTraceState],
        pending: &mut [Option<usize>],
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<AuxOutput> {
        if !self.config.oracle {
            return Err(Error::Contract(
                "oracle forward on a non-oracle model".into(),
            ));
        }
        self.aux_forward(g, p, next_inputs, feed, state, traces, pending, drop)
    }

    /// Auxiliary pass over a batch with every parameter constant; returns
    /// R values per step and the argmax tags.
    pub fn representations(
        &self,
        batch: &BpttBatch,
        mode: TraceMode,
        carry: &mut Carry,
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<(Vec<Tensor>, Vec<Vec<usize>>)> {
        let mut g = Graph::new();
        let p = self.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Aux], &[]);
        let inputs = self.aux_inputs(&mut g, &p, batch)?;
        let feed = self.trace_feed(batch, mode);
        let out = self.aux_forward(
            &mut g,
            &p,
            &inputs,
            feed,
            &mut carry.aux,
            &mut carry.traces,
            &mut carry.pending,
            drop,
        )?;
        let r = out.r.iter().map(|v| g.value(*v).clone()).collect();
        Ok((r, out.predicted))
    }

    pub fn trace_feed<'b>(&self, batch: &'b BpttBatch, mode: TraceMode) -> Option<TraceFeed<'b>> {
        if !self.config.head.has_aux() {
            return None;
        }
        Some(match mode {
            TraceMode::Gold => TraceFeed::Gold(&batch.input_tags),
            TraceMode::SelfPredicted => TraceFeed::SelfPredicted,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny(head: HeadKind) -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            num_tags: 3,
            embed_dim: 8,
            lm_hidden: 8,
            lm_layers: 3,
            aux_hidden: 8,
            aux_layers: 2,
            head,
            use_trace: head.has_aux(),
            trace_gamma: 0.5,
            oracle: false,
            tie_weights: false,
        }
    }

    #[test]
    fn parameter_shapes_follow_wiring() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = PrlModel::new(tiny(HeadKind::Q), &mut rng).unwrap();
        assert_eq!(
            m.param("aux.lstm0.weight").unwrap().value.shape(),
            &[8 + 3 + 8, 32]
        );
        assert_eq!(
            m.param("lm.lstm1.weight").unwrap().value.shape(),
            &[8 + 3 + 8, 32]
        );
        assert_eq!(m.param("lm.lstm2.weight").unwrap().value.shape(), &[16, 32]);

        let mut cfg = tiny(HeadKind::Q);
        cfg.use_trace = false;
        let m = PrlModel::new(cfg, &mut rng).unwrap();
        assert_eq!(
            m.param("aux.lstm0.weight").unwrap().value.shape(),
            &[16, 32]
        );

        let base = PrlModel::new(tiny(HeadKind::None), &mut rng).unwrap();
        assert!(base.params().iter().all(|p| p.group != ParamGroup::Aux));
        assert_eq!(
            base.param("lm.lstm1.weight").unwrap().value.shape(),
            &[16, 32]
        );
    }

    #[test]
    fn oracle_has_same_parameter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = tiny(HeadKind::Q);
        let a = PrlModel::new(cfg.clone(), &mut rng).unwrap();
        cfg.oracle = true;
        let b = PrlModel::new(cfg, &mut rng).unwrap();
        assert_eq!(a.num_parameters(), b.num_parameters());
    }

    #[test]
    fn tied_weights_drop_output_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut cfg = tiny(HeadKind::None);
        cfg.tie_weights = true;
        let m = PrlModel::new(cfg, &mut rng).unwrap();
        assert!(m.param("lm.out.weight").is_none());
        let mut g = Graph::new();
        let p = m.bind(&mut g, &[ParamGroup::Encoder, ParamGroup::Lm], &[]);
        let e = m.encode(&mut g, &p, &[1, 2, 3, 4], 2, 2).unwrap();
        let mut st = StackState::zeros(3, 2, 8);
        let logits = m
            .lm_forward(&mut g, &p, &e, None, &mut st, &mut None)
            .unwrap();
        assert_eq!(g.shape(logits), &[4, 11]);
    }

    #[test]
    fn trace_mode_parse() {
        assert_eq!(
            "self".parse::<TraceMode>().unwrap(),
            TraceMode::SelfPredicted
        );
        assert_eq!(
            serde_json::to_string(&TraceMode::SelfPredicted).unwrap(),
            "\"self\""
        );
        assert!("x".parse::<TraceMode>().is_err());
    }
}
