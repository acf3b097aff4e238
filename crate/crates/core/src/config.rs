use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Switches for the module ablations. Everything on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Agent-agent temporal attention.
    pub temporal: bool,
    /// Agent-agent spatial attention.
    pub spatial: bool,
    /// Hierarchical feature aggregation. When off, queries are built from the
    /// most recent agent feature and `K` learned mode embeddings.
    pub aggregation: bool,
    /// Query-query attention in the decoder.
    pub query_query: bool,
    /// Per-iteration embedding added to decoder queries.
    pub iter_embedding: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            temporal: true,
            spatial: true,
            aggregation: true,
            query_query: true,
            iter_embedding: true,
        }
    }
}

/// Architecture and data-shape configuration shared by teacher and student.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Observed history points per agent (the most recent is index `history_len - 1`).
    pub history_len: usize,
    /// Future points to predict.
    pub future_len: usize,
    /// Number of predicted modes.
    pub modes: usize,
    /// Hierarchical query levels; level `h` (1-based) looks at stride `2^(h-1)`.
    pub hier_levels: usize,
    pub encoder_layers: usize,
    /// Attention layers per decoder iteration; weights are shared across iterations.
    pub decoder_layers: usize,
    pub decode_iters: usize,
    /// Future points emitted per decoder iteration.
    pub step_len: usize,
    /// Feature width.
    pub d_model: usize,
    pub heads: usize,
    /// FFN hidden width as a multiple of `d_model`.
    pub ffn_mult: usize,
    /// Neighbourhood radius in meters for all spatial attention sites.
    pub neighbor_radius: f64,
    /// Points per map polyline.
    pub polyline_len: usize,
    pub sample_rate: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            history_len: 20,
            future_len: 30,
            modes: 6,
            hier_levels: 3,
            encoder_layers: 3,
            decoder_layers: 3,
            decode_iters: 3,
            step_len: 10,
            d_model: 64,
            heads: 4,
            ffn_mult: 4,
            neighbor_radius: 100.0,
            polyline_len: 10,
            sample_rate: 10.0,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Number of motion vectors per agent history.
    pub fn steps(&self) -> usize {
        self.history_len - 1
    }

    pub fn ffn_hidden(&self) -> usize {
        self.d_model * self.ffn_mult
    }

    /// Sets `decode_iters` and derives `step_len` from `future_len`.
    pub fn with_decode_iters(mut self, iters: usize) -> Result<Self> {
        if iters == 0 || !self.future_len.is_multiple_of(iters) {
            return Err(Error::Config(format!(
                "{iters} decoder iterations do not divide {} future points",
                self.future_len
            )));
        }
        self.decode_iters = iters;
        self.step_len = self.future_len / iters;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.history_len < 2 {
            return fail("history_len must be at least 2".into());
        }
        if self.decode_iters * self.step_len != self.future_len {
            return fail(format!(
                "decode_iters ({}) x step_len ({}) != future_len ({})",
                self.decode_iters, self.step_len, self.future_len
            ));
        }
        if self.hier_levels == 0 || (1usize << (self.hier_levels - 1)) > self.steps() {
            return fail(format!(
                "2^(hier_levels-1) = {} exceeds history steps {}",
                1usize << self.hier_levels.saturating_sub(1),
                self.steps()
            ));
        }
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!(
                "heads ({}) must divide d_model ({})",
                self.heads, self.d_model
            ));
        }
        if self.modes == 0 {
            return fail("modes must be at least 1".into());
        }
        if self.encoder_layers == 0 || self.decoder_layers == 0 {
            return fail("layer counts must be positive".into());
        }
        if self.polyline_len < 2 {
            return fail("polyline_len must be at least 2".into());
        }
        if !(self.neighbor_radius > 0.0) || !(self.sample_rate > 0.0) {
            return fail("neighbor_radius and sample_rate must be positive".into());
        }
        Ok(())
    }
}
