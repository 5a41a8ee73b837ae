use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::graph::InfoGraph;

/// Micro-averaged counts and scores.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Prf {
    pub tp: usize,
    pub pred: usize,
    pub gold: usize,
}

impl Prf {
    pub fn precision(&self) -> f64 {
        if self.pred == 0 {
            0.0
        } else {
            self.tp as f64 / self.pred as f64
        }
    }

    pub fn recall(&self) -> f64 {
        if self.gold == 0 {
            0.0
        } else {
            self.tp as f64 / self.gold as f64
        }
    }

    /// F1; defined as 1 when there is nothing to predict and nothing predicted.
    pub fn f1(&self) -> f64 {
        if self.pred == 0 && self.gold == 0 {
            return 1.0;
        }
        let denom = self.pred + self.gold;
        2.0 * self.tp as f64 / denom as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct F1Report {
    pub ner: Prf,
    pub re: Prf,
}

fn overlap<T: Eq + Hash>(pred: Vec<T>, gold: Vec<T>) -> Prf {
    let (np, ng) = (pred.len(), gold.len());
    let mut counts: HashMap<T, usize> = HashMap::new();
    for g in gold {
        *counts.entry(g).or_default() += 1;
    }
    let mut tp = 0;
    for p in pred {
        if let Some(c) = counts.get_mut(&p) {
            if *c > 0 {
                *c -= 1;
                tp += 1;
            }
        }
    }
    Prf { tp, pred: np, gold: ng }
}

/// Mention F1 requires exact span and type; relation F1 requires the type
/// and both argument spans.
///
/// Panics if the lists are not aligned.
pub fn eval_f1(pred: &[InfoGraph], gold: &[InfoGraph]) -> F1Report {
    assert_eq!(pred.len(), gold.len(), "prediction and gold lists differ in length");
    let mut report = F1Report::default();
    for (p, g) in pred.iter().zip(gold) {
        let ner = overlap(p.mention_set(), g.mention_set());
        let re = overlap(p.relation_set(), g.relation_set());
        report.ner.tp += ner.tp;
        report.ner.pred += ner.pred;
        report.ner.gold += ner.gold;
        report.re.tp += re.tp;
        report.re.pred += re.pred;
        report.re.gold += re.gold;
    }
    report
}
