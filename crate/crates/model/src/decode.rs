//! Greedy and beam search over the hybrid output space, plus graph
//! extraction with partial-output salvage.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use hyspa_core::codec::levels;
use hyspa_core::constraint::{ConstraintError, DecodeConstraint};
use hyspa_core::masks::alternating_masks;
use hyspa_core::{decode_sequence, AltSequence, InfoGraph, Traversal, TypeVocab};

use crate::infer::{DecoderState, SourceCache};
use crate::model::{Model, ModelError};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error("no admissible element at step {step}")]
    Stuck { step: usize },
    #[error("beam size must be at least 1")]
    Beam,
}

/// Which output restrictions apply while searching.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Alternating masks plus the sequence constraint; every output decodes.
    #[default]
    Grammar,
    /// Alternating masks only; malformed outputs go through salvage.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam: usize,
    pub length_penalty: f64,
    /// Emitted tokens, `[EOS]` included.
    pub max_len: usize,
    pub mode: MaskMode,
    pub strict_typing: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { beam: 1, length_penalty: 1.0, max_len: 128, mode: MaskMode::Grammar, strict_typing: false }
    }
}

/// The shape of one decoding problem.
#[derive(Debug, Clone, Copy)]
pub struct Problem<'v> {
    pub vocab: &'v TypeVocab,
    pub n: usize,
    pub m: usize,
    pub traversal: Traversal,
}

/// Source of next-element scores.
pub trait Scorer {
    type State: Clone;
    /// State after `[SOS]`.
    fn start(&self) -> Result<Self::State, DecodeError>;
    /// Raw scores over the output space for the next element.
    fn logits<'a>(&self, state: &'a Self::State) -> &'a [f64];
    fn advance(&self, state: &Self::State, k: usize) -> Result<Self::State, DecodeError>;
}

/// Scores from a model with cached source keys and values.
pub struct ModelScorer<'m> {
    pub model: &'m Model,
    pub source: SourceCache,
}

impl<'m> ModelScorer<'m> {
    pub fn new(model: &'m Model, token_ids: &[usize]) -> Result<Self, DecodeError> {
        Ok(Self { model, source: model.prepare(token_ids)? })
    }
}

impl Scorer for ModelScorer<'_> {
    type State = DecoderState;

    fn start(&self) -> Result<DecoderState, DecodeError> {
        Ok(self.model.start(&self.source)?)
    }

    fn logits<'a>(&self, state: &'a DecoderState) -> &'a [f64] {
        &state.logits
    }

    fn advance(&self, state: &DecoderState, k: usize) -> Result<DecoderState, DecodeError> {
        Ok(self.model.step(&self.source, state, k)?)
    }
}

/// A search result. `items` excludes `[EOS]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub items: Vec<usize>,
    /// Whether `[EOS]` was produced.
    pub finished: bool,
    /// Summed log-probability, `[EOS]` included when finished.
    pub score: f64,
}

impl Decoded {
    /// `score / len^penalty`, with `len` counting `[EOS]`.
    pub fn normalized(&self, penalty: f64) -> f64 {
        let len = self.items.len() + usize::from(self.finished);
        self.score / (len.max(1) as f64).powf(penalty)
    }

    pub fn sequence(&self, p: &Problem) -> AltSequence {
        AltSequence::new(self.items.clone(), p.traversal, p.n, p.m)
    }
}

/// Alternating-mask admission over the flat output space `[0, l_p + n·m)`.
pub fn admitted_slots(vocab: &TypeVocab, prev: usize, n: usize, m: usize, strict: bool) -> Vec<bool> {
    let am = alternating_masks(prev, vocab, n, strict);
    let mut out = am.types;
    out.reserve(n * m);
    for j in 0..n {
        for d in 0..m {
            out.push(j + d < n && am.text[j] && am.text[j + d]);
        }
    }
    out
}

/// Log-softmax over admitted entries; others get `-inf`.
pub fn masked_log_softmax(logits: &[f64], admitted: &[bool]) -> Vec<f64> {
    let max = logits.iter().zip(admitted).filter(|(_, &a)| a).map(|(&l, _)| l).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().zip(admitted).filter(|(_, &a)| a).map(|(&l, _)| (l - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().zip(admitted).map(|(&l, &a)| if a { l - lse } else { f64::NEG_INFINITY }).collect()
}

#[derive(Clone)]
struct Hyp<'v, S> {
    state: S,
    con: DecodeConstraint<'v>,
    score: f64,
}

/// Tracks the prefix; in alternating mode its admissibility is not consulted
/// and pushes bypass it.
struct Tracker<'v> {
    mode: MaskMode,
    strict: bool,
    p: Problem<'v>,
}

impl<'v> Tracker<'v> {
    fn fresh(&self, max_len: usize) -> Result<DecodeConstraint<'v>, DecodeError> {
        Ok(DecodeConstraint::new(self.p.vocab, self.p.n, self.p.m, self.p.traversal, max_len.max(3))?)
    }

    fn admitted(&self, con: &DecodeConstraint, items: &[usize]) -> Vec<bool> {
        let prev = items.last().copied().unwrap_or(self.p.vocab.sos());
        let mut adm = admitted_slots(self.p.vocab, prev, self.p.n, self.p.m, self.strict);
        if self.mode == MaskMode::Grammar {
            for (a, c) in adm.iter_mut().zip(con.admissible()) {
                *a &= c;
            }
        }
        adm
    }
}

/// Highest-probability admitted element at each step; ties go to the lowest index.
pub fn greedy<S: Scorer>(scorer: &S, p: Problem, cfg: &DecodeConfig) -> Result<Decoded, DecodeError> {
    let tr = Tracker { mode: cfg.mode, strict: cfg.strict_typing, p };
    let mut con = tr.fresh(cfg.max_len)?;
    let mut items = Vec::new();
    let mut state = scorer.start()?;
    let mut score = 0.0;
    let eos = p.vocab.eos();
    for step in 0..cfg.max_len {
        let adm = tr.admitted(&con, &items);
        let lp = masked_log_softmax(scorer.logits(&state), &adm);
        let mut best: Option<usize> = None;
        for (k, &v) in lp.iter().enumerate() {
            if adm[k] && best.map_or(true, |b| v > lp[b]) {
                best = Some(k);
            }
        }
        let k = best.ok_or(DecodeError::Stuck { step })?;
        score += lp[k];
        if k == eos {
            return Ok(Decoded { items, finished: true, score });
        }
        if cfg.mode == MaskMode::Grammar {
            con.push(k)?;
        }
        items.push(k);
        if step + 1 < cfg.max_len {
            state = scorer.advance(&state, k)?;
        }
    }
    Ok(Decoded { items, finished: false, score })
}

/// Beam search: each step keeps the best `2·beam` extensions, retires
/// `[EOS]` extensions ranked within the first `beam`, and continues the
/// best `beam` others. Stops once `beam` hypotheses have finished. Finished
/// hypotheses compete on `score / len^length_penalty`.
pub fn beam_search<S: Scorer>(scorer: &S, p: Problem, cfg: &DecodeConfig) -> Result<Decoded, DecodeError> {
    if cfg.beam == 0 {
        return Err(DecodeError::Beam);
    }
    let tr = Tracker { mode: cfg.mode, strict: cfg.strict_typing, p };
    let eos = p.vocab.eos();
    let mut live = vec![(Vec::<usize>::new(), Hyp { state: scorer.start()?, con: tr.fresh(cfg.max_len)?, score: 0.0 })];
    let mut finished: Vec<Decoded> = Vec::new();
    for step in 0..cfg.max_len {
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, (items, hyp)) in live.iter().enumerate() {
            let adm = tr.admitted(&hyp.con, items);
            let lp = masked_log_softmax(scorer.logits(&hyp.state), &adm);
            for (k, &a) in adm.iter().enumerate() {
                if a {
                    cands.push((hyp.score + lp[k], h, k));
                }
            }
        }
        if cands.is_empty() {
            if finished.is_empty() {
                return Err(DecodeError::Stuck { step });
            }
            break;
        }
        cands.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.beam);
        for (rank, &(score, h, k)) in cands.iter().take(2 * cfg.beam).enumerate() {
            let (items, hyp) = &live[h];
            if k == eos {
                if rank < cfg.beam {
                    finished.push(Decoded { items: items.clone(), finished: true, score });
                }
                continue;
            }
            if next.len() == cfg.beam {
                continue;
            }
            let mut con = hyp.con.clone();
            if cfg.mode == MaskMode::Grammar {
                con.push(k)?;
            }
            let mut items = items.clone();
            items.push(k);
            let state = if step + 1 < cfg.max_len { scorer.advance(&hyp.state, k)? } else { hyp.state.clone() };
            next.push((items, Hyp { state, con, score }));
        }
        if finished.len() >= cfg.beam || next.is_empty() {
            live = next;
            break;
        }
        live = next;
    }
    let best_of = |v: &[Decoded]| -> Option<Decoded> {
        let mut best: Option<&Decoded> = None;
        for d in v {
            if best.map_or(true, |b| d.normalized(cfg.length_penalty) > b.normalized(cfg.length_penalty)) {
                best = Some(d);
            }
        }
        best.cloned()
    };
    if let Some(d) = best_of(&finished) {
        return Ok(d);
    }
    let partial: Vec<Decoded> = live.into_iter().map(|(items, h)| Decoded { items, finished: false, score: h.score }).collect();
    best_of(&partial).ok_or(DecodeError::Stuck { step: cfg.max_len })
}

/// Greedy for `beam == 1`, beam search otherwise.
pub fn search<S: Scorer>(scorer: &S, p: Problem, cfg: &DecodeConfig) -> Result<Decoded, DecodeError> {
    if cfg.beam == 1 {
        greedy(scorer, p, cfg)
    } else {
        beam_search(scorer, p, cfg)
    }
}

/// Decoded graph plus a note when the output needed repair.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub graph: InfoGraph,
    pub diagnostic: Option<String>,
}

/// Convert a search result into a graph. Unfinished or malformed outputs are
/// cut back to the longest prefix of whole levels that decodes; if none does
/// the graph is empty.
pub fn extract_graph(d: &Decoded, p: &Problem) -> Extraction {
    let full = d.sequence(p);
    let err = match decode_sequence(&full, p.vocab) {
        Ok(graph) if d.finished => return Extraction { graph, diagnostic: None },
        Ok(_) => "output hit the length limit".to_string(),
        Err(e) => e.to_string(),
    };
    let sep = p.vocab.sep();
    let ends: Vec<usize> = levels(&d.items, sep)
        .iter()
        .filter(|(start, lv)| d.items.get(start + lv.len()) == Some(&sep))
        .map(|(start, lv)| start + lv.len() + 1)
        .collect();
    for &end in ends.iter().rev() {
        if end == d.items.len() && d.finished {
            continue;
        }
        let s = AltSequence::new(d.items[..end].to_vec(), p.traversal, p.n, p.m);
        if let Ok(graph) = decode_sequence(&s, p.vocab) {
            return Extraction { graph, diagnostic: Some(format!("{err}; kept the first {end} of {} elements", d.items.len())) };
        }
    }
    Extraction { graph: InfoGraph::new(p.n, p.m), diagnostic: Some(format!("{err}; no decodable prefix, returning an empty graph")) }
}

/// Tokenize, search and extract for one sentence.
pub fn predict(model: &Model, tokens: &[String], cfg: &DecodeConfig) -> Result<(Decoded, Extraction), DecodeError> {
    let ids = model.tokens.ids(tokens);
    let scorer = ModelScorer::new(model, &ids)?;
    let p = Problem { vocab: &model.types, n: tokens.len(), m: model.m(), traversal: model.cfg.traversal };
    let d = search(&scorer, p, cfg)?;
    let e = extract_graph(&d, &p);
    Ok((d, e))
}
