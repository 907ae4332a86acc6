use serde::{Deserialize, Serialize};

use super::ModelError;

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Encoder channels.
    pub n: usize,
    /// Encoder kernel length in samples; the hop is `p / 2`.
    pub p: usize,
    /// Chunk length in frames; the chunk hop is `r / 2`.
    pub r: usize,
    pub heads: usize,
    /// Transformer width.
    pub d: usize,
    /// Feed-forward width.
    pub d1: usize,
    pub blocks: usize,
    /// Hidden size of each LSTM direction.
    pub blstm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n: 256,
            p: 64,
            r: 71,
            heads: 4,
            d: 256,
            d1: 1024,
            blocks: 4,
            blstm_hidden: 128,
        }
    }
}

impl ModelConfig {
    /// Smallest configuration that still exercises every component.
    pub fn tiny() -> Self {
        Self {
            n: 8,
            p: 4,
            r: 4,
            heads: 2,
            d: 8,
            d1: 16,
            blocks: 2,
            blstm_hidden: 4,
        }
    }

    /// Small configuration that trains on one-second clips in minutes.
    pub fn desk() -> Self {
        Self {
            n: 16,
            p: 160,
            r: 20,
            heads: 2,
            d: 16,
            d1: 32,
            blocks: 2,
            blstm_hidden: 8,
        }
    }

    pub fn encoder_hop(&self) -> usize {
        self.p / 2
    }

    pub fn chunk_hop(&self) -> usize {
        self.r / 2
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        let fields = [
            ("N", self.n),
            ("P", self.p),
            ("R", self.r),
            ("h", self.heads),
            ("d", self.d),
            ("d1", self.d1),
            ("num_dprnn_blocks", self.blocks),
            ("blstm_hidden", self.blstm_hidden),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.p % 2 != 0 {
            return fail(format!("P must be even, got {}", self.p));
        }
        if self.r < 2 {
            return fail(format!("R must be at least 2, got {}", self.r));
        }
        if self.d != self.n {
            return fail(format!(
                "d ({}) must equal N ({}) for the attention residual",
                self.d, self.n
            ));
        }
        if fields.iter().any(|(_, v)| *v > u32::MAX as usize) {
            return fail("field exceeds u32 range".into());
        }
        Ok(())
    }

    /// Named integer fields in serialisation order.
    pub fn fields(&self) -> [(&'static str, usize); 8] {
        [
            ("N", self.n),
            ("P", self.p),
            ("R", self.r),
            ("h", self.heads),
            ("d", self.d),
            ("d1", self.d1),
            ("num_dprnn_blocks", self.blocks),
            ("blstm_hidden", self.blstm_hidden),
        ]
    }

    /// Sets a field by its serialised name. Returns false for unknown names.
    pub fn set_field(&mut self, name: &str, value: usize) -> bool {
        let slot = match name {
            "N" => &mut self.n,
            "P" => &mut self.p,
            "R" => &mut self.r,
            "h" => &mut self.heads,
            "d" => &mut self.d,
            "d1" => &mut self.d1,
            "num_dprnn_blocks" => &mut self.blocks,
            "blstm_hidden" => &mut self.blstm_hidden,
            _ => return false,
        };
        *slot = value;
        true
    }
}
