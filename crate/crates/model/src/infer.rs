//! Incremental inference with cached source-side keys and values.

use hyspa_tensor::{Graph, Tensor};

use crate::model::{Context, Model, ModelError};

/// Per-sentence values reused by every decoding step.
#[derive(Debug, Clone)]
pub struct SourceCache {
    pub n: usize,
    h: Tensor,
    h_types: Tensor,
    h_text: Tensor,
    span_logits: Tensor,
    /// Per-layer source keys and values.
    k_src: Vec<Tensor>,
    v_src: Vec<Tensor>,
}

/// Decoder state after consuming `inp` (which starts with `[SOS]`).
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub inp: Vec<usize>,
    k_tgt: Vec<Tensor>,
    v_tgt: Vec<Tensor>,
    /// Raw output scores for the next element.
    pub logits: Vec<f64>,
}

impl DecoderState {
    /// Generated elements, `[SOS]` excluded.
    pub fn items(&self) -> &[usize] {
        &self.inp[1..]
    }
}

impl Model {
    /// Run the encoder side once. Source rows never attend to target rows,
    /// so their values match a full pass exactly.
    pub fn prepare(&self, token_ids: &[usize]) -> Result<SourceCache, ModelError> {
        let mut g = Graph::new(&self.params);
        let ctx = self.encode_context(&mut g, token_ids)?;
        let n = ctx.n;
        let mut x = self.source_rows(&mut g, &ctx);
        let mask = Tensor::zeros(n, n);
        let (mut k_src, mut v_src) = (Vec::new(), Vec::new());
        for l in 0..self.cfg.layers {
            let (k, v) = self.project_kv(&mut g, l, x);
            k_src.push(g.value(k).clone());
            v_src.push(g.value(v).clone());
            x = self.block(&mut g, l, x, k, v, &mask, None);
        }
        Ok(SourceCache {
            n,
            h: g.value(ctx.h).clone(),
            h_types: g.value(ctx.h_types).clone(),
            h_text: g.value(ctx.h_text).clone(),
            span_logits: g.value(ctx.span_logits).clone(),
            k_src,
            v_src,
        })
    }

    /// State after feeding `[SOS]`.
    pub fn start(&self, src: &SourceCache) -> Result<DecoderState, ModelError> {
        let d = self.d();
        let empty = DecoderState {
            inp: Vec::new(),
            k_tgt: vec![Tensor::zeros(0, d); self.cfg.layers],
            v_tgt: vec![Tensor::zeros(0, d); self.cfg.layers],
            logits: Vec::new(),
        };
        self.step(src, &empty, self.types.sos())
    }

    /// Feed one element and return the extended state.
    pub fn step(&self, src: &SourceCache, state: &DecoderState, k: usize) -> Result<DecoderState, ModelError> {
        let mut g = Graph::new(&self.params);
        let ctx = Context {
            n: src.n,
            h: g.constant(src.h.clone()),
            h_types: g.constant(src.h_types.clone()),
            h_text: g.constant(src.h_text.clone()),
            span_logits: g.constant(src.span_logits.clone()),
        };
        let mut inp = state.inp.clone();
        inp.push(k);
        let t = inp.len() - 1;
        let mut x = self.target_rows(&mut g, &ctx, &inp, t..t + 1)?;
        let mask = Tensor::zeros(1, src.n + t + 1);
        let mut k_tgt = Vec::with_capacity(self.cfg.layers);
        let mut v_tgt = Vec::with_capacity(self.cfg.layers);
        for l in 0..self.cfg.layers {
            let (kn, vn) = self.project_kv(&mut g, l, x);
            let kt = Tensor::concat_rows(&[&state.k_tgt[l], g.value(kn)]);
            let vt = Tensor::concat_rows(&[&state.v_tgt[l], g.value(vn)]);
            let k_all = g.constant(Tensor::concat_rows(&[&src.k_src[l], &kt]));
            let v_all = g.constant(Tensor::concat_rows(&[&src.v_src[l], &vt]));
            k_tgt.push(kt);
            v_tgt.push(vt);
            x = self.block(&mut g, l, x, k_all, v_all, &mask, None);
        }
        let logits = self.span_head(&mut g, &ctx, x);
        Ok(DecoderState { inp, k_tgt, v_tgt, logits: g.value(logits).data.clone() })
    }

    /// Raw output scores for every row of `inp` by full recomputation.
    pub fn full_logits(&self, token_ids: &[usize], inp: &[usize]) -> Result<Tensor, ModelError> {
        let mut g = Graph::new(&self.params);
        let ctx = self.encode_context(&mut g, token_ids)?;
        let y = self.decoder_forward(&mut g, &ctx, inp, None)?;
        let logits = self.span_head(&mut g, &ctx, y);
        Ok(g.value(logits).clone())
    }
}
