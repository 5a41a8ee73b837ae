//! The network: hybrid representation, span encoding, mixed-attention
//! decoder blocks and the hybrid span head.

use std::ops::Range;
use std::path::Path;
use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use hyspa_core::graph::EdgeFreq;
use hyspa_core::hybrid::{index_to_hspan_checked, SpanError};
use hyspa_core::vocab::VocabConfig;
use hyspa_core::vocab::VocabError;
use hyspa_core::TypeVocab;
use hyspa_tensor::{CeTarget, CheckpointError, Graph, LossError, ParamId, ParamStore, Tensor, Var, MASKED};

use crate::config::{ConfigError, ModelConfig, TokenVocab, CLS};
use crate::embed::{self, sinusoidal, EmbedError, TraversalInputs, DFS_LEVELS, TREE_WIDTH};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("input has {n} tokens; accepted range is 1..={max}")]
    InputLength { n: usize, max: usize },
    #[error("target sequence is empty")]
    EmptyTarget,
    #[error("target element {index} at position {pos}: {source}")]
    Target { pos: usize, index: usize, source: SpanError },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
struct LayerIds {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bv: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w3: ParamId,
    b3: ParamId,
    w4: ParamId,
    b4: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

#[derive(Debug, Clone)]
enum TravIds {
    Bfs { parent_child: ParamId, tree: ParamId },
    Dfs { level: ParamId },
}

#[derive(Debug, Clone)]
struct Ids {
    tok: ParamId,
    types: ParamId,
    meta: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    trav: TravIds,
    src_tgt: ParamId,
    layers: Vec<LayerIds>,
    w5: ParamId,
    b5: ParamId,
    w6: ParamId,
    b6: ParamId,
}

/// Model configuration, vocabularies and parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ModelConfig,
    pub types: TypeVocab,
    pub tokens: TokenVocab,
    /// Relation frequencies that fix the canonical target order.
    pub edge_freq: EdgeFreq,
    pub params: ParamStore,
    ids: Ids,
}

/// Dropout settings for one forward pass.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

/// Per-sentence tensors on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Context {
    pub n: usize,
    /// `H`, `l_p + n` rows.
    pub h: Var,
    pub h_types: Var,
    pub h_text: Var,
    /// Span-encoding logits of the `[CLS]` query against every row of `H`.
    pub span_logits: Var,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config: ModelConfig,
    types: VocabConfig,
    tokens: TokenVocab,
    edge_freq: Vec<(usize, u64)>,
    params: ParamStore,
}

impl Model {
    /// Fresh parameters drawn from `seed`.
    pub fn new(cfg: ModelConfig, types: TypeVocab, tokens: TokenVocab, edge_freq: EdgeFreq, seed: u64) -> Result<Self, ModelError> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = cfg.d_model;
        let lin = 1.0 / (d as f64).sqrt();
        let mut p = ParamStore::new();
        let zeros = |p: &mut ParamStore, name: &str, r: usize, c: usize| p.add(name, Tensor::zeros(r, c));
        let tok = p.add_normal("tok_emb", tokens.len(), d, 1.0, &mut rng);
        let types_id = p.add_normal("type_emb", types.l_p(), d, 1.0, &mut rng);
        let meta = p.add_normal("meta_type", 4, d, 1.0, &mut rng);
        let w1 = p.add_normal("span.w1", d, d, lin, &mut rng);
        let b1 = zeros(&mut p, "span.b1", 1, d);
        let w2 = p.add_normal("span.w2", d, d, lin, &mut rng);
        let trav = match cfg.traversal {
            hyspa_core::Traversal::Bfs => TravIds::Bfs {
                parent_child: p.add_normal("trav.parent_child", 2, d, 1.0, &mut rng),
                tree: p.add_normal("trav.tree", TREE_WIDTH, d, 1.0, &mut rng),
            },
            hyspa_core::Traversal::Dfs => TravIds::Dfs {
                level: p.add_normal("trav.level", DFS_LEVELS, d, 1.0, &mut rng),
            },
        };
        let src_tgt = p.add_normal("src_tgt", 2, d, 1.0, &mut rng);
        let mut layers = Vec::new();
        for l in 0..cfg.layers {
            let name = |s: &str| format!("layer{l}.{s}");
            let ffn = 1.0 / ((4 * d) as f64).sqrt();
            layers.push(LayerIds {
                wq: p.add_normal(name("wq"), d, d, lin, &mut rng),
                bq: zeros(&mut p, &name("bq"), 1, d),
                wk: p.add_normal(name("wk"), d, d, lin, &mut rng),
                wv: p.add_normal(name("wv"), d, d, lin, &mut rng),
                bv: zeros(&mut p, &name("bv"), 1, d),
                ln1_g: p.add(name("ln1.g"), Tensor::filled(1, d, 1.0)),
                ln1_b: zeros(&mut p, &name("ln1.b"), 1, d),
                w3: p.add_normal(name("w3"), d, 4 * d, lin, &mut rng),
                b3: zeros(&mut p, &name("b3"), 1, 4 * d),
                w4: p.add_normal(name("w4"), 4 * d, d, ffn, &mut rng),
                b4: zeros(&mut p, &name("b4"), 1, d),
                ln2_g: p.add(name("ln2.g"), Tensor::filled(1, d, 1.0)),
                ln2_b: zeros(&mut p, &name("ln2.b"), 1, d),
            });
        }
        let w5 = p.add_normal("head.w5", d, d, lin, &mut rng);
        let b5 = zeros(&mut p, "head.b5", 1, d);
        let w6 = p.add_normal("head.w6", d, d, lin, &mut rng);
        let b6 = zeros(&mut p, "head.b6", 1, d);
        let ids = Ids { tok, types: types_id, meta, w1, b1, w2, trav, src_tgt, layers, w5, b5, w6, b6 };
        Ok(Self { cfg, types, tokens, edge_freq, params: p, ids })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let ck = Checkpoint {
            config: self.cfg.clone(),
            types: self.types.config(),
            tokens: self.tokens.clone(),
            edge_freq: self.edge_freq.entries(),
            params: self.params.clone(),
        };
        std::fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let ck: Checkpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let types = TypeVocab::from_config(&ck.types)?;
        let mut model = Self::new(ck.config, types, ck.tokens.restored(), ck.edge_freq.into_iter().collect(), 0)?;
        model.params.copy_from(&ck.params)?;
        Ok(model)
    }

    pub fn d(&self) -> usize {
        self.cfg.d_model
    }

    pub fn m(&self) -> usize {
        self.cfg.max_span_len
    }

    /// Output-space width `l_p + n·m`.
    pub fn width(&self, n: usize) -> usize {
        self.types.l_p() + n * self.m()
    }

    pub fn check_input(&self, n: usize) -> Result<(), ModelError> {
        if n == 0 || n > self.cfg.max_tokens {
            return Err(ModelError::InputLength { n, max: self.cfg.max_tokens });
        }
        Ok(())
    }

    /// Build `H` for a sentence of token ids: type rows, then text rows with
    /// sinusoidal positions, plus the meta-type vector of each row.
    pub fn encode_context(&self, g: &mut Graph, token_ids: &[usize]) -> Result<Context, ModelError> {
        let n = token_ids.len();
        self.check_input(n)?;
        let d = self.d();
        let l_p = self.types.l_p();
        let types = g.param(self.ids.types);
        let text = g.gather(self.ids.tok, token_ids);
        let mut pos = Tensor::zeros(n, d);
        for j in 0..n {
            pos.row_mut(j).copy_from_slice(&sinusoidal(j, d)?);
        }
        let text = g.add_const(text, &pos);
        let h0 = g.concat_rows(&[types, text]);
        let seg: Vec<usize> = self.types.segment_ids(n)?.into_iter().map(usize::from).collect();
        let meta = g.gather(self.ids.meta, &seg);
        let h = g.add(h0, meta);
        let cls = g.gather(self.ids.tok, &[CLS]);
        let cls_meta = g.gather(self.ids.meta, &[3]);
        let cls = g.add(cls, cls_meta);
        // Keys carry no bias: it would shift every score of the row equally.
        let (w1, b1, w2) = (g.param(self.ids.w1), g.param(self.ids.b1), g.param(self.ids.w2));
        let q = g.matmul(cls, w1);
        let q = g.add_row(q, b1);
        let k = g.matmul(h, w2);
        let s = g.matmul_t(q, k);
        let span_logits = g.scale(s, 1.0 / (d as f64).sqrt());
        let h_types = g.slice_rows(h, 0, l_p);
        let h_text = g.slice_rows(h, l_p, n);
        Ok(Context { n, h, h_types, h_text, span_logits })
    }

    /// Span encoding of decoder-input rows `rows` of `inp`: attention of the
    /// `[CLS]` query over the rows of `H` that each element covers.
    pub fn span_encode(&self, g: &mut Graph, ctx: &Context, inp: &[usize], rows: Range<usize>) -> Result<Var, ModelError> {
        let l_p = self.types.l_p();
        let l_h = l_p + ctx.n;
        let t = rows.len();
        let mut mask = Tensor::filled(t, l_h, MASKED);
        for (r, pos) in rows.clone().enumerate() {
            let k = inp[pos];
            let hs = index_to_hspan_checked(k, ctx.n, self.m(), l_p).map_err(|source| ModelError::Target { pos, index: k, source })?;
            mask.row_mut(r)[hs.a..=hs.b].fill(0.0);
        }
        let rep = g.concat_rows(&vec![ctx.span_logits; t]);
        let sc = g.add_const(rep, &mask);
        let att = g.softmax_rows(sc);
        Ok(g.matmul(att, ctx.h))
    }

    /// Span-encode decoder-input rows `rows` of `inp` (which starts with
    /// `[SOS]`), add traversal and target-side embeddings.
    pub fn target_rows(&self, g: &mut Graph, ctx: &Context, inp: &[usize], rows: Range<usize>) -> Result<Var, ModelError> {
        let hy = self.span_encode(g, ctx, inp, rows.clone())?;
        let sep = self.types.sep();
        let items = &inp[1..];
        let hy = match (embed::traversal_inputs(self.cfg.traversal, items, sep, self.d(), rows.clone())?, &self.ids.trav) {
            (TraversalInputs::Bfs { level, parent_child, tree }, TravIds::Bfs { parent_child: pc_id, tree: tree_id }) => {
                let hy = g.add_const(hy, &level);
                let sel = g.constant(parent_child);
                let pc = g.param(*pc_id);
                let pc = g.matmul(sel, pc);
                let hy = g.add(hy, pc);
                let code = g.constant(tree);
                let proj = g.param(*tree_id);
                let tr = g.matmul(code, proj);
                g.add(hy, tr)
            }
            (TraversalInputs::Dfs { level_rows, keep, connection }, TravIds::Dfs { level }) => {
                let lv = g.gather(*level, &level_rows);
                let lv = g.mul_const(lv, Rc::new(keep));
                let hy = g.add(hy, lv);
                g.add_const(hy, &connection)
            }
            _ => unreachable!("traversal parameters follow the config"),
        };
        let tgt = g.gather(self.ids.src_tgt, &[1]);
        Ok(g.add_row(hy, tgt))
    }

    pub fn source_rows(&self, g: &mut Graph, ctx: &Context) -> Var {
        let src = g.gather(self.ids.src_tgt, &[0]);
        g.add_row(ctx.h_text, src)
    }

    /// Key and value projections of layer `l`. Keys have no bias, for the
    /// same reason as in the span encoding.
    pub fn project_kv(&self, g: &mut Graph, l: usize, x: Var) -> (Var, Var) {
        let ly = &self.ids.layers[l];
        let (wk, wv, bv) = (g.param(ly.wk), g.param(ly.wv), g.param(ly.bv));
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        let v = g.add_row(v, bv);
        (k, v)
    }

    /// One decoder block for rows `x`, attending over keys/values `k`, `v`
    /// under the additive `mask` (`rows(x) × rows(k)`).
    pub fn block(&self, g: &mut Graph, l: usize, x: Var, k: Var, v: Var, mask: &Tensor, mut dropout: Option<&mut Dropout>) -> Var {
        let ly = &self.ids.layers[l];
        let heads = self.cfg.heads;
        let dh = self.cfg.head_dim();
        let (wq, bq) = (g.param(ly.wq), g.param(ly.bq));
        let q = g.matmul(x, wq);
        let q = g.add_row(q, bq);
        let scale = 1.0 / (self.d() as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let s = g.matmul_t(qh, kh);
            let s = g.scale(s, scale);
            let s = g.add_const(s, mask);
            let p = g.softmax_rows(s);
            outs.push(g.matmul(p, vh));
        }
        let a = g.concat_cols(&outs);
        let a = apply_dropout(g, a, dropout.as_deref_mut());
        let x1 = g.add(a, x);
        let x1 = self.layer_norm(g, x1, ly.ln1_g, ly.ln1_b);
        let (w3, b3, w4, b4) = (g.param(ly.w3), g.param(ly.b3), g.param(ly.w4), g.param(ly.b4));
        let f = g.matmul(x1, w3);
        let f = g.add_row(f, b3);
        let f = g.relu(f);
        let f = g.matmul(f, w4);
        let f = g.add_row(f, b4);
        let f = apply_dropout(g, f, dropout);
        let x2 = g.add(f, x1);
        self.layer_norm(g, x2, ly.ln2_g, ly.ln2_b)
    }

    fn layer_norm(&self, g: &mut Graph, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let y = g.layer_norm_rows(x);
        let (ga, be) = (g.param(gamma), g.param(beta));
        let y = g.mul_row(y, ga);
        g.add_row(y, be)
    }

    /// Full (non-incremental) decoder pass over `inp = [SOS] + items`;
    /// returns the final target rows `H_y^N`.
    pub fn decoder_forward(&self, g: &mut Graph, ctx: &Context, inp: &[usize], mut dropout: Option<&mut Dropout>) -> Result<Var, ModelError> {
        let n = ctx.n;
        let t = inp.len();
        let src = self.source_rows(g, ctx);
        let tgt = self.target_rows(g, ctx, inp, 0..t)?;
        let mut x = g.concat_rows(&[src, tgt]);
        let mask = Tensor::from_fn(n + t, n + t, |r, j| if j < n || j <= r { 0.0 } else { MASKED });
        for l in 0..self.cfg.layers {
            let (k, v) = self.project_kv(g, l, x);
            x = self.block(g, l, x, k, v, &mask, dropout.as_deref_mut());
        }
        Ok(g.slice_rows(x, n, t))
    }

    /// Raw output scores `h_i ⊕ t_i` for each row of `y`, one column per
    /// hybrid index. Window cells past the end of the text hold `MASKED`.
    pub fn span_head(&self, g: &mut Graph, ctx: &Context, y: Var) -> Var {
        let (w5, b5, w6, b6) = (g.param(self.ids.w5), g.param(self.ids.b5), g.param(self.ids.w6), g.param(self.ids.b6));
        let s = g.matmul(y, w5);
        let s = g.add_row(s, b5);
        let e = g.matmul(y, w6);
        let e = g.add_row(e, b6);
        let hs = g.matmul_t(s, ctx.h_types);
        let he = g.matmul_t(e, ctx.h_types);
        let h = g.add(hs, he);
        let ts = g.matmul_t(s, ctx.h_text);
        let te = g.matmul_t(e, ctx.h_text);
        let t = g.span_scores(ts, te, self.m(), MASKED);
        g.concat_cols(&[h, t])
    }

    /// Admitted output slots after `prev` under the alternating masks.
    pub fn admitted(&self, prev: usize, n: usize) -> Vec<bool> {
        crate::decode::admitted_slots(&self.types, prev, n, self.m(), self.cfg.strict_typing)
    }

    /// Teacher-forced summed label-smoothed loss of `items + [EOS]`.
    pub fn sequence_loss(
        &self,
        g: &mut Graph,
        token_ids: &[usize],
        items: &[usize],
        eps: f64,
        dropout: Option<&mut Dropout>,
    ) -> Result<Var, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyTarget);
        }
        let ctx = self.encode_context(g, token_ids)?;
        let mut inp = Vec::with_capacity(items.len() + 1);
        inp.push(self.types.sos());
        inp.extend_from_slice(items);
        let y = self.decoder_forward(g, &ctx, &inp, dropout)?;
        let logits = self.span_head(g, &ctx, y);
        let targets: Vec<CeTarget> = (0..inp.len())
            .map(|r| {
                let target = items.get(r).copied().unwrap_or(self.types.eos());
                CeTarget::new(target, self.admitted(inp[r], ctx.n))
            })
            .collect();
        Ok(g.masked_ce(logits, &targets, eps)?)
    }
}

fn apply_dropout(g: &mut Graph, x: Var, dropout: Option<&mut Dropout>) -> Var {
    match dropout {
        Some(d) if d.rate > 0.0 => {
            let [r, c] = g.shape(x);
            let keep = 1.0 - d.rate;
            let mask = Tensor::from_vec(r, c, (0..r * c).map(|_| if d.rng.gen_bool(keep) { 1.0 / keep } else { 0.0 }).collect())
                .expect("shape");
            g.mul_const(x, Rc::new(mask))
        }
        _ => x,
    }
}
