use hyspa_core::constraint::DecodeConstraint;
use hyspa_core::{decode_sequence, Traversal, TypeVocab};
use hyspa_model::decode::{admitted_slots, masked_log_softmax};
use hyspa_model::*;

/// Logits are a fixed pseudo-random function of the prefix.
struct Rigged {
    width: usize,
    salt: u64,
    flat: bool,
}

fn mix(mut x: u64) -> u64 {
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

impl Rigged {
    fn scores(&self, items: &[usize]) -> Vec<f64> {
        if self.flat {
            return vec![0.0; self.width];
        }
        let h = items.iter().fold(self.salt, |h, &k| mix(h ^ (k as u64 + 1)));
        (0..self.width).map(|k| (mix(h ^ (k as u64) << 20) % 10_000) as f64 / 1000.0 - 5.0).collect()
    }
}

impl Scorer for Rigged {
    type State = (Vec<usize>, Vec<f64>);

    fn start(&self) -> Result<Self::State, DecodeError> {
        Ok((vec![], self.scores(&[])))
    }

    fn logits<'a>(&self, s: &'a Self::State) -> &'a [f64] {
        &s.1
    }

    fn advance(&self, s: &Self::State, k: usize) -> Result<Self::State, DecodeError> {
        let mut items = s.0.clone();
        items.push(k);
        let l = self.scores(&items);
        Ok((items, l))
    }
}

fn problem(v: &TypeVocab, n: usize, m: usize, traversal: Traversal) -> Problem<'_> {
    Problem { vocab: v, n, m, traversal }
}

#[test]
fn flat_scores_pick_lowest_index() {
    let v = TypeVocab::ace_like();
    let r = Rigged { width: v.l_p() + 3 * 2, salt: 0, flat: true };
    let p = problem(&v, 3, 2, Traversal::Bfs);
    let d = greedy(&r, p, &DecodeConfig::default()).unwrap();
    assert_eq!(d.items, vec![v.null_node(), v.sep()]);
    assert!(d.finished);
    assert!(extract_graph(&d, &p).graph.is_empty());
}

#[test]
fn beam_one_matches_greedy() {
    let v = TypeVocab::ace_like();
    for salt in 0..60 {
        let n = 1 + (salt as usize) % 5;
        let tr = if salt % 2 == 0 { Traversal::Bfs } else { Traversal::Dfs };
        let r = Rigged { width: v.l_p() + n * 3, salt, flat: false };
        let p = problem(&v, n, 3, tr);
        let cfg = DecodeConfig { max_len: 24, ..Default::default() };
        let g = greedy(&r, p, &cfg).unwrap();
        let b = beam_search(&r, p, &DecodeConfig { beam: 1, ..cfg }).unwrap();
        assert_eq!(g, b, "salt {salt}");
    }
}

/// Best length-normalized complete sequence by enumeration.
fn exhaustive(r: &Rigged, p: Problem, max_len: usize, penalty: f64) -> (Vec<usize>, f64) {
    fn go(r: &Rigged, p: &Problem, con: &DecodeConstraint, score: f64, penalty: f64, best: &mut (Vec<usize>, f64)) {
        let items = con.items();
        let prev = items.last().copied().unwrap_or(p.vocab.sos());
        let mut adm = admitted_slots(p.vocab, prev, p.n, p.m, false);
        for (a, c) in adm.iter_mut().zip(con.admissible()) {
            *a &= c;
        }
        let lp = masked_log_softmax(&r.scores(items), &adm);
        for k in (0..adm.len()).filter(|&k| adm[k]) {
            let s = score + lp[k];
            if k == p.vocab.eos() {
                let norm = s / ((items.len() + 1) as f64).powf(penalty);
                if norm > best.1 {
                    *best = (items.to_vec(), norm);
                }
            } else {
                let mut c = con.clone();
                c.push(k).unwrap();
                go(r, p, &c, s, penalty, best);
            }
        }
    }
    let con = DecodeConstraint::new(p.vocab, p.n, p.m, p.traversal, max_len).unwrap();
    let mut best = (vec![], f64::NEG_INFINITY);
    go(r, &p, &con, 0.0, penalty, &mut best);
    best
}

#[test]
fn wide_beam_is_exact_and_dominates_greedy() {
    let v = TypeVocab::new(&["[TYPE]", "R"], &["[NULL]", "A"]).unwrap();
    for salt in 0..12 {
        let tr = if salt % 2 == 0 { Traversal::Bfs } else { Traversal::Dfs };
        let p = problem(&v, 2, 2, tr);
        let r = Rigged { width: v.l_p() + 4, salt, flat: false };
        for penalty in [0.0, 1.0] {
            let cfg = DecodeConfig { beam: 100_000, length_penalty: penalty, max_len: 9, ..Default::default() };
            let (items, best) = exhaustive(&r, p, cfg.max_len, penalty);
            let b = beam_search(&r, p, &cfg).unwrap();
            assert!(b.finished);
            assert_eq!(b.items, items, "salt {salt} penalty {penalty}");
            assert!((b.normalized(penalty) - best).abs() < 1e-12);
            let g = greedy(&r, p, &cfg).unwrap();
            assert!(b.normalized(penalty) >= g.normalized(penalty) - 1e-12);
        }
    }
}

#[test]
fn grammar_mode_always_decodes() {
    let v = TypeVocab::ace_like();
    for salt in 0..300 {
        let n = 1 + (salt as usize) % 9;
        let tr = if salt % 3 == 0 { Traversal::Dfs } else { Traversal::Bfs };
        let r = Rigged { width: v.l_p() + n * 4, salt, flat: false };
        let p = problem(&v, n, 4, tr);
        let cfg = DecodeConfig { beam: 1 + (salt as usize) % 3, max_len: 5 + (salt as usize) % 30, ..Default::default() };
        let d = search(&r, p, &cfg).unwrap();
        assert!(d.finished);
        assert!(d.items.len() < cfg.max_len);
        assert!(decode_sequence(&d.sequence(&p), &v).is_ok(), "{:?}", d.items);
        assert!(extract_graph(&d, &p).diagnostic.is_none());
    }
}

#[test]
fn alternating_mode_salvages() {
    let v = TypeVocab::ace_like();
    let mut salvaged = 0;
    for salt in 0..200 {
        let n = 2 + (salt as usize) % 6;
        let r = Rigged { width: v.l_p() + n * 4, salt, flat: false };
        let p = problem(&v, n, 4, Traversal::Bfs);
        let cfg = DecodeConfig { mode: MaskMode::Alternating, max_len: 20, ..Default::default() };
        let d = greedy(&r, p, &cfg).unwrap();
        let e = extract_graph(&d, &p);
        if e.diagnostic.is_some() {
            salvaged += 1;
        }
        assert!(hyspa_core::validate_graph(&e.graph, &v).is_ok());
    }
    assert!(salvaged > 0);
}

#[test]
fn salvage_keeps_whole_levels() {
    let v = TypeVocab::ace_like();
    let p = problem(&v, 8, 16, Traversal::Bfs);
    // He [TYPE] PER [SEP] Baghdad [TYPE]   (cut off)
    let d = Decoded { items: vec![19, 0, 12, 10, 83, 0], finished: false, score: 0.0 };
    let e = extract_graph(&d, &p);
    assert_eq!(e.graph.mentions.len(), 1);
    assert!(e.diagnostic.is_some());

    let d = Decoded { items: vec![19, 3], finished: false, score: 0.0 };
    let e = extract_graph(&d, &p);
    assert!(e.graph.is_empty());
    assert!(e.diagnostic.unwrap().contains("empty"));

    let d = Decoded { items: vec![19, 0, 12, 10], finished: true, score: 0.0 };
    assert!(extract_graph(&d, &p).diagnostic.is_none());
}

#[test]
fn masked_log_softmax_normalizes() {
    let l = [1.0, 2.0, 3.0, 1e3];
    let lp = masked_log_softmax(&l, &[true, true, true, false]);
    let s: f64 = lp[..3].iter().map(|x| x.exp()).sum();
    assert!((s - 1.0).abs() < 1e-12);
    assert_eq!(lp[3], f64::NEG_INFINITY);
}

/// Puts all mass on a fixed script, one element per step.
struct Scripted {
    width: usize,
    script: Vec<usize>,
}

impl Scorer for Scripted {
    type State = (usize, Vec<f64>);

    fn start(&self) -> Result<Self::State, DecodeError> {
        Ok((0, self.peak(0)))
    }

    fn logits<'a>(&self, s: &'a Self::State) -> &'a [f64] {
        &s.1
    }

    fn advance(&self, s: &Self::State, _k: usize) -> Result<Self::State, DecodeError> {
        Ok((s.0 + 1, self.peak(s.0 + 1)))
    }
}

impl Scripted {
    fn peak(&self, step: usize) -> Vec<f64> {
        let mut l = vec![0.0; self.width];
        if let Some(&k) = self.script.get(step) {
            l[k] = 20.0;
        }
        l
    }
}

#[test]
fn rigged_worked_example_yields_its_graph() {
    let v = TypeVocab::ace_like();
    let p = problem(&v, 8, 16, Traversal::Bfs);
    // He was captured in Baghdad late Monday night
    let script = vec![19, 0, 12, 10, 83, 0, 14, 6, 19, 10, v.eos()];
    let r = Scripted { width: v.l_p() + 8 * 16, script };
    for beam in [1, 4] {
        let d = search(&r, p, &DecodeConfig { beam, ..Default::default() }).unwrap();
        assert!(d.finished);
        let e = extract_graph(&d, &p);
        assert!(e.diagnostic.is_none());
        let g = e.graph;
        let mut spans: Vec<_> = g.mentions.iter().map(|m| (m.span.start, m.span.end, v.name(m.node_type).unwrap().to_string())).collect();
        spans.sort();
        assert_eq!(spans, vec![(0, 1, "PER".to_string()), (4, 5, "GPE".to_string())]);
        assert_eq!(g.relations.len(), 1);
        let rel = g.relations[0];
        assert_eq!(v.name(rel.edge_type).unwrap(), "PHYS");
        assert_eq!((g.mentions[rel.head].span.start, g.mentions[rel.tail].span.start), (4, 0));
    }
}

#[test]
fn null_then_end_is_the_empty_graph() {
    let v = TypeVocab::ace_like();
    let p = problem(&v, 5, 4, Traversal::Dfs);
    let r = Scripted { width: v.l_p() + 5 * 4, script: vec![v.null_node(), v.sep(), v.eos()] };
    let d = greedy(&r, p, &DecodeConfig::default()).unwrap();
    assert_eq!(d.items, vec![v.null_node(), v.sep()]);
    let e = extract_graph(&d, &p);
    assert!(e.graph.is_empty() && e.diagnostic.is_none());
}
