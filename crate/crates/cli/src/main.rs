use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context as _};
use clap::{Parser, Subcommand};
use log::info;
use serde::Serialize;

use hyspa_core::data::{eval_f1, load_jsonl, save_jsonl, synth_generate, to_record, Example, SynthConfig};
use hyspa_core::{
    canonicalize, decode_sequence, encode, graph_equal, validate_sequence, AltSequence, InfoGraph, TypeVocab,
};
use hyspa_model::{bench, batch_gradients, batch_loss, instances, predict, Instance, Model, TokenVocab, Trainer};
use hyspa_tensor::{finite_diff_check, CheckOptions};

mod settings;

use settings::{require_file, Flags, Settings, UsageError};

#[derive(Parser)]
#[command(name = "hyspa", version, about = "Hybrid-span graph extraction: codec, trainer and decoder")]
struct Cli {
    #[command(flatten)]
    flags: Flags,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Serialize every graph of a JSONL corpus into sequence dumps.
    Encode {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Decode sequence dumps back into graph records.
    Decode {
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Encode and decode every example; fails unless all graphs come back equal.
    Roundtrip {
        /// JSONL corpus; omit to use `--synth` generated examples.
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        synth: usize,
    },
    /// Check a JSONL corpus, or sequence dumps with `--sequences`.
    Validate {
        input: PathBuf,
        #[arg(long)]
        sequences: bool,
    },
    /// Write a synthetic JSONL corpus.
    Synth {
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Train a model from scratch.
    Train {
        train: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Held-out corpus scored every `--eval-every` steps.
        #[arg(long)]
        dev: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        eval_every: u64,
    },
    /// Report NER and RE F1 of a model on a JSONL corpus.
    Eval {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
    },
    /// Extract graphs from raw text, one whitespace-tokenized sentence per line.
    Extract {
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Compare reverse-mode gradients with central differences on one batch.
    Gradcheck {
        #[arg(long, default_value_t = 2)]
        batch: usize,
        /// Coordinates sampled per parameter tensor; 0 checks all of them.
        #[arg(long, default_value_t = 0)]
        coords: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Time one decoding step and size the score vector across input lengths.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = [128usize, 256, 512, 1024])]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 16)]
        steps_per_size: usize,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// Fail when either fitted exponent reaches this value.
        #[arg(long, default_value_t = 1.2)]
        max_exponent: f64,
    },
}

/// An expected property did not hold.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct AssertionFailed(String);

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("HYSPA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: HYSPA_THREADS ignored: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.downcast_ref::<UsageError>().is_some() => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn writer(path: &Option<PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn load(path: &Path, s: &Settings, v: &TypeVocab) -> anyhow::Result<Vec<Example>> {
    require_file(path)?;
    Ok(load_jsonl(path, v, s.max_span_len).with_context(|| format!("reading {}", path.display()))?.examples)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let s = Settings::resolve(&cli.flags)?;
    let v = s.type_vocab()?;
    match cli.cmd {
        Cmd::Encode { input, output } => {
            require_file(&input)?;
            let data = load_jsonl(&input, &v, s.max_span_len)?;
            let mut w = writer(&output)?;
            for ex in &data.examples {
                let seq = encode(&canonicalize(&ex.graph, &v, &data.edge_freq), &v, s.traversal)?;
                write!(w, "{}", seq.to_text(&v))?;
            }
            w.flush()?;
        }
        Cmd::Decode { input, output } => {
            require_file(&input)?;
            let text = std::fs::read_to_string(&input)?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            if lines.len() % 2 == 1 {
                bail!(AssertionFailed(format!("{}: header without sequence line", input.display())));
            }
            let mut w = writer(&output)?;
            for (i, pair) in lines.chunks(2).enumerate() {
                let seq = AltSequence::parse_text(pair[0], pair[1], &v).with_context(|| format!("sequence {}", i + 1))?;
                let g = decode_sequence(&seq, &v).with_context(|| format!("sequence {}", i + 1))?;
                writeln!(w, "{}", serde_json::to_string(&graph_record(&g, &v))?)?;
            }
            w.flush()?;
        }
        Cmd::Roundtrip { input, synth } => {
            let data = match input {
                Some(p) => {
                    require_file(&p)?;
                    load_jsonl(&p, &v, s.max_span_len)?
                }
                None => synth_generate(&SynthConfig::default(), &v, synth, s.seed, s.max_span_len)?,
            };
            let mut bad = 0;
            for (i, ex) in data.examples.iter().enumerate() {
                let seq = encode(&canonicalize(&ex.graph, &v, &data.edge_freq), &v, s.traversal)?;
                let ok = validate_sequence(&seq, &v).is_ok() && decode_sequence(&seq, &v).is_ok_and(|g| graph_equal(&g, &ex.graph));
                if !ok {
                    bad += 1;
                    eprintln!("example {}: round trip failed", i + 1);
                }
            }
            println!("{} examples, {} round-trip failures ({})", data.len(), bad, s.traversal);
            if bad > 0 {
                bail!(AssertionFailed(format!("{bad} examples did not round-trip")));
            }
        }
        Cmd::Validate { input, sequences } => {
            require_file(&input)?;
            if sequences {
                let text = std::fs::read_to_string(&input)?;
                let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
                let mut bad = 0;
                for (i, pair) in lines.chunks(2).enumerate() {
                    let res = match pair {
                        [h, b] => AltSequence::parse_text(h, b, &v)
                            .map_err(|e| e.to_string())
                            .and_then(|seq| decode_sequence(&seq, &v).map_err(|e| e.to_string())),
                        _ => Err("header without sequence line".to_string()),
                    };
                    if let Err(e) = res {
                        bad += 1;
                        eprintln!("sequence {}: {e}", i + 1);
                    }
                }
                println!("{} sequences, {bad} invalid", lines.len().div_ceil(2));
                if bad > 0 {
                    bail!(AssertionFailed(format!("{bad} invalid sequences")));
                }
            } else {
                let data = load_jsonl(&input, &v, s.max_span_len).map_err(|e| AssertionFailed(e.to_string()))?;
                println!("{}", serde_json::to_string(&data.manifest(&v))?);
            }
        }
        Cmd::Synth { count, output } => {
            let data = synth_generate(&SynthConfig::default(), &v, count, s.seed, s.max_span_len)?;
            match output {
                Some(p) => save_jsonl(&p, &data.examples, &v)?,
                None => {
                    let mut w = writer(&None)?;
                    for ex in &data.examples {
                        writeln!(w, "{}", serde_json::to_string(&to_record(ex, &v))?)?;
                    }
                    w.flush()?;
                }
            }
        }
        Cmd::Train { train, output, dev, eval_every } => {
            require_file(&train)?;
            let data = load_jsonl(&train, &v, s.max_span_len)?;
            let dev = dev.map(|p| load(&p, &s, &v)).transpose()?;
            let tokens = TokenVocab::new(data.examples.iter().flat_map(|e| e.tokens.iter()));
            let mut model = Model::new(s.model_config(), v.clone(), tokens, data.edge_freq.clone(), s.seed)?;
            let inst = instances(&model, &data.examples)?;
            info!("{} examples, {} parameters", inst.len(), model.params.num_scalars());
            let mut trainer = Trainer::new(&model, s.train_config());
            let dc = s.decode_config();
            let t0 = Instant::now();
            let mut eval_err = None;
            trainer.run(&mut model, &inst, |st, m| {
                if st.step % 100 == 0 {
                    info!("step {} loss {:.4} grad-norm {:.3} lr {:.2e} ({:.0}s)", st.step, st.loss, st.grad_norm, st.lr, t0.elapsed().as_secs_f64());
                }
                if let Some(dev) = &dev {
                    if eval_every > 0 && st.step % eval_every == 0 && eval_err.is_none() {
                        match score(m, dev, &dc) {
                            Ok(r) => info!("step {} dev {}", st.step, serde_json::to_string(&r).unwrap_or_default()),
                            Err(e) => eval_err = Some(e),
                        }
                    }
                }
            })?;
            if let Some(e) = eval_err {
                return Err(e);
            }
            model.save(&output)?;
            info!("saved {}", output.display());
        }
        Cmd::Eval { model, input } => {
            require_file(&model)?;
            let model = Model::load(&model)?;
            let test = load(&input, &s, &model.types)?;
            println!("{}", serde_json::to_string(&score(&model, &test, &s.decode_config())?)?);
        }
        Cmd::Extract { model, input, output } => {
            require_file(&model)?;
            require_file(&input)?;
            let model = Model::load(&model)?;
            let dc = s.decode_config();
            let mut w = writer(&output)?;
            for (i, line) in BufReader::new(File::open(&input)?).lines().enumerate() {
                let line = line?;
                let tokens: Vec<String> = line.split_whitespace().map(str::to_string).collect();
                if tokens.is_empty() {
                    continue;
                }
                let (_, e) = predict(&model, &tokens, &dc).with_context(|| format!("line {}", i + 1))?;
                if let Some(d) = &e.diagnostic {
                    eprintln!("line {}: {d}", i + 1);
                }
                let rec = to_record(&Example { tokens, graph: e.graph }, &model.types);
                writeln!(w, "{}", serde_json::to_string(&rec)?)?;
            }
            w.flush()?;
        }
        Cmd::Gradcheck { batch, coords, tolerance } => {
            let sc = SynthConfig::default();
            let data = synth_generate(&sc, &v, batch.max(1) * 4, s.seed, s.max_span_len)?;
            let mut cfg = s.model_config();
            cfg.dropout = 0.0;
            let model = Model::new(cfg, v.clone(), TokenVocab::new(sc.token_inventory()), data.edge_freq.clone(), s.seed)?;
            let inst = instances(&model, &data.examples)?;
            let batch: Vec<&Instance> = inst.iter().filter(|x| x.items.len() > 4).take(batch.max(1)).collect();
            let eps = s.label_smoothing;
            let (_, tokens, mut grads) = batch_gradients(&model, &model.params, &batch, eps, None)?;
            grads.scale(1.0 / tokens as f64);
            let opts = CheckOptions { coords_per_param: (coords > 0).then_some(coords), prefer_touched: true, seed: s.seed, ..Default::default() };
            let t0 = Instant::now();
            let rep = finite_diff_check(&model.params, &grads, |p| batch_loss(&model, p, &batch, eps).unwrap_or(f64::NAN), &opts)?;
            for p in &rep.per_param {
                println!("{:<24} {:>7} {:.3e}", p.name, p.checked, p.max_rel_err);
            }
            println!("max relative error {:.3e} over {} coordinates ({:.1}s)", rep.max_rel_err, rep.checked, t0.elapsed().as_secs_f64());
            if rep.max_rel_err >= tolerance {
                bail!(AssertionFailed(format!("max relative error {:.3e} >= {tolerance:e}", rep.max_rel_err)));
            }
        }
        Cmd::Bench { sizes, steps_per_size, repeats, max_exponent } => {
            if sizes.len() < 2 {
                bail!(UsageError("--sizes needs at least two values".into()));
            }
            let mut cfg = s.model_config();
            cfg.max_tokens = cfg.max_tokens.max(sizes.iter().copied().max().unwrap_or(0));
            let words: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
            let model = Model::new(cfg, v.clone(), TokenVocab::new(&words), Default::default(), s.seed)?;
            let rep = bench(&model, &sizes, steps_per_size, repeats)?;
            println!("{:>6} {:>14} {:>14}", "n", "step_secs", "score_bytes");
            for p in &rep.points {
                println!("{:>6} {:>14.6e} {:>14}", p.n, p.step_secs, p.score_bytes);
            }
            println!("time exponent {:.3}, memory exponent {:.3}", rep.time_exponent, rep.memory_exponent);
            if rep.time_exponent >= max_exponent || rep.memory_exponent >= max_exponent {
                bail!(AssertionFailed(format!("scaling exponent at or above {max_exponent}")));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GraphRecord {
    n: usize,
    entities: Vec<hyspa_core::data::EntityRecord>,
    relations: Vec<hyspa_core::data::RelationRecord>,
}

fn graph_record(g: &InfoGraph, v: &TypeVocab) -> GraphRecord {
    let rec = to_record(&Example { tokens: Vec::new(), graph: g.clone() }, v);
    GraphRecord { n: g.n, entities: rec.entities, relations: rec.relations }
}

#[derive(Serialize)]
struct Scores {
    examples: usize,
    exact_match: f64,
    ner: hyspa_core::data::Prf,
    ner_f1: f64,
    re: hyspa_core::data::Prf,
    re_f1: f64,
    repaired: usize,
}

fn score(model: &Model, test: &[Example], dc: &hyspa_model::DecodeConfig) -> anyhow::Result<Scores> {
    let mut preds = Vec::with_capacity(test.len());
    let (mut exact, mut repaired) = (0, 0);
    for ex in test {
        let (_, e) = predict(model, &ex.tokens, dc)?;
        exact += usize::from(graph_equal(&e.graph, &ex.graph));
        repaired += usize::from(e.diagnostic.is_some());
        preds.push(e.graph);
    }
    let gold: Vec<InfoGraph> = test.iter().map(|e| e.graph.clone()).collect();
    let f = eval_f1(&preds, &gold);
    Ok(Scores {
        examples: test.len(),
        exact_match: exact as f64 / test.len().max(1) as f64,
        ner_f1: f.ner.f1(),
        ner: f.ner,
        re_f1: f.re.f1(),
        re: f.re,
        repaired,
    })
}
