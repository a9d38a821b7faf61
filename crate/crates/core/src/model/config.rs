use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What the auxiliary decoder's head produces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    /// No auxiliary decoder: plain LSTM language model.
    None,
    /// Softmax probabilities over the next word's tag.
    P,
    /// Action values of the tagging MDP, no output nonlinearity.
    Q,
}

impl HeadKind {
    pub fn has_aux(self) -> bool {
        self != HeadKind::None
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(HeadKind::None),
            "p" => Ok(HeadKind::P),
            "q" => Ok(HeadKind::Q),
            _ => Err(Error::Input(format!("unknown head kind {s:?} (none|p|q)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub num_tags: usize,
    pub embed_dim: usize,
    pub lm_hidden: usize,
    pub lm_layers: usize,
    pub aux_hidden: usize,
    pub aux_layers: usize,
    pub head: HeadKind,
    /// Feed the label trace to the auxiliary decoder alongside the embedding.
    pub use_trace: bool,
    /// Discount of the label trace.
    pub trace_gamma: f64,
    /// The auxiliary decoder reads the *next* word's embedding (diagnostic only).
    pub oracle: bool,
    /// Share the embedding table with the output projection.
    pub tie_weights: bool,
}

/// Upper bound on any single dimension accepted from untrusted input.
const MAX_DIM: usize = 1 << 20;

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary and tag set size.
    pub fn new(vocab_size: usize, num_tags: usize, head: HeadKind) -> Self {
        ModelConfig {
            vocab_size,
            num_tags,
            embed_dim: 128,
            lm_hidden: 256,
            lm_layers: 3,
            aux_hidden: 64,
            aux_layers: 2,
            head,
            use_trace: head.has_aux(),
            trace_gamma: 0.9,
            oracle: false,
            tie_weights: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("num_tags", self.num_tags),
            ("embed_dim", self.embed_dim),
            ("lm_hidden", self.lm_hidden),
            ("aux_hidden", self.aux_hidden),
            ("aux_layers", self.aux_layers),
        ];
        for (name, v) in dims {
            if v == 0 || v > MAX_DIM {
                return Err(Error::Validation(format!("{name} = {v} is out of range")));
            }
        }
        if self.num_tags < 2 {
            return Err(Error::Validation("num_tags must be at least 2".into()));
        }
        if !(2..=16).contains(&self.lm_layers) {
            return Err(Error::Validation(format!(
                "lm_layers = {} (the representation enters after layer 1, so at least 2 are needed)",
                self.lm_layers
            )));
        }
        if self.aux_layers > 16 {
            return Err(Error::Validation("aux_layers must be at most 16".into()));
        }
        if !(0.0..=1.0).contains(&self.trace_gamma) {
            return Err(Error::Validation(format!(
                "trace_gamma = {} must lie in [0, 1]",
                self.trace_gamma
            )));
        }
        if self.tie_weights && self.lm_hidden != self.embed_dim {
            return Err(Error::Validation(
                "tie_weights needs lm_hidden == embed_dim".into(),
            ));
        }
        if !self.head.has_aux() && (self.use_trace || self.oracle) {
            return Err(Error::Validation(
                "use_trace and oracle need an auxiliary head".into(),
            ));
        }
        Ok(())
    }

    /// Width of the auxiliary decoder's input: embedding plus optional trace.
    pub fn aux_input_dim(&self) -> usize {
        self.embed_dim + if self.use_trace { self.num_tags } else { 0 }
    }

    /// Width of the LM layer that follows the first one.
    pub fn lm_layer2_input_dim(&self) -> usize {
        self.lm_hidden
            + if self.head.has_aux() {
                self.num_tags
            } else {
                0
            }
    }
}
