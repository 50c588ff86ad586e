use alloc::format;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::numerics::{AttentionMask, Graph, ParamId, ParamStore, Var};
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.add_glorot(&format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add_zeros(&format!("{name}.bias"), 1, fan_out);
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add_filled(&format!("{name}.gamma"), 1, width, 1.0);
        let beta = store.add_zeros(&format!("{name}.beta"), 1, width);
        Self { gamma, beta }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        g.layer_norm(x, gamma, beta)
    }
}

/// Multi-head self-attention with input and output projections.
#[derive(Debug, Clone, Copy)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            query: Linear::new(store, &format!("{name}.query"), hidden, hidden, rng),
            key: Linear::new(store, &format!("{name}.key"), hidden, hidden, rng),
            value: Linear::new(store, &format!("{name}.value"), hidden, hidden, rng),
            output: Linear::new(store, &format!("{name}.output"), hidden, hidden, rng),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, mask: &AttentionMask) -> Result<Var> {
        let q = self.query.forward(g, store, x);
        let k = self.key.forward(g, store, x);
        let v = self.value.forward(g, store, x);
        let a = g.attention(q, k, v, mask, self.heads)?;
        Ok(self.output.forward(g, store, a))
    }
}

/// Post-norm transformer block with a GELU feed-forward.
#[derive(Debug, Clone, Copy)]
pub struct Block {
    pub attention: SelfAttention,
    pub norm1: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub norm2: LayerNorm,
}

impl Block {
    pub fn new(store: &mut ParamStore, name: &str, hidden: usize, heads: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            attention: SelfAttention::new(store, &format!("{name}.attn"), hidden, heads, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), hidden),
            ff_in: Linear::new(store, &format!("{name}.ff_in"), hidden, ffn, rng),
            ff_out: Linear::new(store, &format!("{name}.ff_out"), ffn, hidden, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), hidden),
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        x: Var,
        mask: &AttentionMask,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let a = self.attention.forward(g, store, x, mask)?;
        let (a, rng) = match rng {
            Some(r) => (g.dropout(a, dropout, r), Some(r)),
            None => (a, None),
        };
        let r1 = g.add(x, a);
        let h = self.norm1.forward(g, store, r1);
        let f = self.ff_in.forward(g, store, h);
        let f = g.gelu(f);
        let f = self.ff_out.forward(g, store, f);
        let f = match rng {
            Some(r) => g.dropout(f, dropout, r),
            None => f,
        };
        let r2 = g.add(h, f);
        Ok(self.norm2.forward(g, store, r2))
    }
}

pub fn stack(store: &mut ParamStore, name: &str, layers: usize, hidden: usize, heads: usize, ffn: usize, rng: &mut ChaCha8Rng) -> Vec<Block> {
    (0..layers).map(|l| Block::new(store, &format!("{name}.{l}"), hidden, heads, ffn, rng)).collect()
}
