#![allow(dead_code)]

use ptrparse::decode::{Hypothesis, SearchModel};
use ptrparse::symtab::{BOS, EOS, PAD};
use ptrparse::model::{Model, ModelConfig, ModelError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ptrparse_tensor::gradcheck::GradStats;

/// A small random architecture with dropout off.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let heads = [1, 2][rng.gen_range(0..2)];
    let d = heads * [4, 8][rng.gen_range(0..2)];
    let dec_heads = [1, 2][rng.gen_range(0..2)];
    let d_dec = dec_heads * [4, 8][rng.gen_range(0..2)];
    ModelConfig {
        d_model: d,
        n_enc_layers: rng.gen_range(1..=2),
        n_enc_heads: heads,
        enc_ffn: 2 * d,
        d_dec,
        n_dec_layers: rng.gen_range(1..=2),
        n_dec_heads: dec_heads,
        dec_ffn: 2 * d_dec,
        dropout: 0.0,
        max_src_len: rng.gen_range(1..=8),
        vocab_size: rng.gen_range(3..=10),
        src_vocab_size: rng.gen_range(2..=12),
    }
}

pub fn random_source(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Vec<usize> {
    let n = rng.gen_range(1..=cfg.max_src_len);
    (0..n).map(|_| rng.gen_range(1..cfg.src_vocab_size)).collect()
}

/// Random model and source, with the initial weights scaled up so that
/// distributions are peaked enough for search to matter.
pub fn random_case(seed: u64) -> (Model, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = random_config(&mut rng);
    let mut m = Model::new(cfg.clone(), seed).unwrap();
    let gain = rng.gen_range(1.0..4.0);
    for p in m.params_mut() {
        p.data_mut().iter_mut().for_each(|x| *x *= gain);
    }
    let src = random_source(&mut rng, &cfg);
    (m, src)
}

/// Distributions that depend on the whole prefix, drawn from a hash of it.
pub struct PrefixTable {
    pub width: usize,
    pub seed: u64,
}

impl PrefixTable {
    pub fn log_probs(&self, prefix: &[usize]) -> Vec<f32> {
        let key = prefix.iter().fold(self.seed, |h, &t| h.wrapping_mul(1_000_003).wrapping_add(t as u64 + 1));
        let mut rng = ChaCha8Rng::seed_from_u64(key);
        let w: Vec<f64> = (0..self.width).map(|_| rng.gen_range(0.05..1.0f64).powi(3)).collect();
        let z: f64 = w.iter().sum();
        w.iter().map(|x| (x / z).ln() as f32).collect()
    }
}

impl SearchModel for PrefixTable {
    type State = Vec<usize>;

    fn start(&self) -> Result<(Vec<usize>, Vec<f32>), ModelError> {
        let s = vec![BOS];
        let lp = self.log_probs(&s);
        Ok((s, lp))
    }

    fn advance(&self, state: &Vec<usize>, token: usize) -> Result<(Vec<usize>, Vec<f32>), ModelError> {
        let mut s = state.clone();
        s.push(token);
        let lp = self.log_probs(&s);
        Ok((s, lp))
    }
}


/// Every sequence of at most `max_len` tokens, scored and ranked the way
/// beam search reports them.
pub fn enumerate(m: &PrefixTable, max_len: usize) -> Vec<Hypothesis> {
    let mut finished = Vec::new();
    let mut truncated = Vec::new();
    let mut frontier = vec![(vec![BOS], 0f64)];
    for step in 0..max_len {
        let mut next = Vec::new();
        for (ids, score) in frontier {
            let lp = m.log_probs(&ids);
            for tok in (0..m.width).filter(|&t| t != PAD && t != BOS) {
                let mut ids = ids.clone();
                ids.push(tok);
                let s = score + lp[tok] as f64;
                if tok == EOS {
                    finished.push(Hypothesis { ids, score: s, finished: true, truncated: false });
                } else if step + 1 == max_len {
                    truncated.push(Hypothesis { ids, score: s, finished: true, truncated: true });
                } else {
                    next.push((ids, s));
                }
            }
        }
        frontier = next;
    }
    finished.extend(truncated);
    finished.sort_by(|a, b| b.score.total_cmp(&a.score));
    finished
}

use ptrparse::linearizer::{NodeKind, ParseNode, Query, SemanticParse, Style, TargetSequence, TargetSymbol};

pub fn query_of_len(n: usize) -> Query {
    Query::new(&(0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "))
}

const FLAT_INTENTS: &[&str] = &["PlayMusic", "GetWeather", "atis_flight#atis_airfare"];
const FLAT_SLOTS: &[&str] = &["artist", "Date", "city_name", "B-like"];
const TREE_INTENTS: &[&str] = &["IN:GET_DISTANCE", "IN:GET_LOCATION", "IN:X"];
const TREE_SLOTS: &[&str] = &["SL:DESTINATION", "SL:TYPE_FOOD", "SL:X"];
const SPAN_LABELS: &[&str] = &["Bleeding_Event", "Anatomical_Site", "E"];

fn pick(rng: &mut ChaCha8Rng, xs: &[&str]) -> String {
    xs[rng.gen_range(0..xs.len())].to_string()
}

fn tree_node(rng: &mut ChaCha8Rng, lo: usize, hi: usize, kind: NodeKind, depth: usize) -> ParseNode {
    let label = match kind {
        NodeKind::Intent => pick(rng, TREE_INTENTS),
        NodeKind::Slot => pick(rng, TREE_SLOTS),
    };
    let mut node = ParseNode {
        label,
        kind,
        indices: vec![],
        children: vec![],
    };
    let mut i = lo;
    while i < hi {
        let len = rng.gen_range(1..=hi - i);
        if depth > 0 && rng.gen_bool(0.4) {
            let k = if rng.gen_bool(0.5) { NodeKind::Intent } else { NodeKind::Slot };
            node.children.push(tree_node(rng, i, i + len, k, depth - 1));
        } else {
            node.indices.extend(i..i + len);
        }
        i += len;
    }
    node
}

/// A random valid parse of the given style over `n` tokens.
pub fn random_parse(rng: &mut ChaCha8Rng, style: Style, n: usize) -> SemanticParse {
    match style {
        Style::Flat => {
            let mut slots = Vec::new();
            let mut i = 0;
            while i < n {
                let len = rng.gen_range(1..=(n - i).min(3));
                if rng.gen_bool(0.5) {
                    slots.push((pick(rng, FLAT_SLOTS), (i..i + len).collect::<Vec<_>>()));
                }
                i += len;
            }
            let intent = pick(rng, FLAT_INTENTS);
            SemanticParse::flat(&intent, slots.iter().map(|(l, ix)| (l.as_str(), ix.clone())).collect())
        }
        Style::Tree => {
            let lo = rng.gen_range(0..n);
            let hi = rng.gen_range(lo + 1..=n);
            SemanticParse::tree(tree_node(rng, lo, hi, NodeKind::Intent, 3))
        }
        Style::SpanSet => {
            let k = rng.gen_range(0..=3);
            let anns: Vec<(String, Vec<usize>)> = (0..k)
                .map(|_| {
                    let mut ix: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.35)).collect();
                    if ix.is_empty() {
                        ix.push(rng.gen_range(0..n));
                    }
                    (pick(rng, SPAN_LABELS), ix)
                })
                .collect();
            SemanticParse::span_set(anns.iter().map(|(l, ix)| (l.as_str(), ix.clone())).collect())
        }
    }
}

pub fn random_style(rng: &mut ChaCha8Rng) -> Style {
    [Style::Flat, Style::Tree, Style::SpanSet][rng.gen_range(0..3)]
}

/// Symbols are drawn as surface strings so each has a canonical reading.
fn random_symbol(rng: &mut ChaCha8Rng, n: usize) -> TargetSymbol {
    let l = pick(rng, &["A", "IN:A", "SL:B", "b", "E"]);
    let text = match rng.gen_range(0..9) {
        0 => l,
        1 => format!("[{l}"),
        2 => format!("{l}]"),
        3 => format!("{l}("),
        4 => format!("){l}"),
        _ => format!("@ptr_{}", rng.gen_range(0..n + 2)),
    };
    text.parse().unwrap()
}

/// Random symbol soup, or a valid linearization with a few edits.
pub fn fuzz_sequence(rng: &mut ChaCha8Rng, style: Style, n: usize) -> TargetSequence {
    if rng.gen_bool(0.5) {
        let len = rng.gen_range(0..10);
        return TargetSequence((0..len).map(|_| random_symbol(rng, n)).collect());
    }
    let parse = random_parse(rng, style, n);
    let mut syms = ptrparse::linearizer::linearize(&parse, &query_of_len(n)).unwrap().0;
    for _ in 0..rng.gen_range(0..3) {
        match rng.gen_range(0..3) {
            0 if !syms.is_empty() => {
                let i = rng.gen_range(0..syms.len());
                syms.remove(i);
            }
            1 => {
                let i = rng.gen_range(0..=syms.len());
                syms.insert(i, random_symbol(rng, n));
            }
            _ if syms.len() > 1 => {
                let i = rng.gen_range(0..syms.len() - 1);
                syms.swap(i, i + 1);
            }
            _ => {}
        }
    }
    TargetSequence(syms)
}

pub struct ModelGradcheck {
    pub loss: f64,
    /// Name, element count and gradient norms of every parameter tensor.
    pub tensors: Vec<(String, usize, GradStats)>,
}

/// Gradient check of the label-smoothed loss of a d_model=16, one-layer
/// model on a padded two-example batch, one parameter tensor at a time.
pub fn model_gradcheck(seed: u64) -> ModelGradcheck {
    use ptrparse::model::Batch;
    use ptrparse::train::label_smoothed_ce;
    use ptrparse_tensor::gradcheck::{grad_stats, H};
    use ptrparse_tensor::Tape;

    let cfg = ModelConfig::tiny(7, 9, 5);
    let model = Model::new(cfg, seed).unwrap();
    let a: (&[usize], &[usize]) = (&[2, 3, 4, 5], &[4, 7, 8, 5]);
    let b: (&[usize], &[usize]) = (&[6, 8], &[3, 8]);
    let batch = Batch::new(&[a, b], EOS);
    let params = model.params().to_vec();
    let names = model.names().to_vec();
    let loss = {
        let tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
        let lp = model.forward(&vars, &batch, false).unwrap();
        label_smoothed_ce(lp, &batch, 7, 0.1).unwrap().0.value().item().unwrap() as f64
    };
    let tensors = (0..params.len())
        .map(|i| {
            // the other tensors enter as constants
            let stats = grad_stats(std::slice::from_ref(&params[i]), H, |tape, v| {
                let mut vars: Vec<_> = params.iter().map(|p| tape.constant(p.clone())).collect();
                vars[i] = v[0];
                let lp = model.forward(&vars, &batch, false).unwrap();
                label_smoothed_ce(lp, &batch, 7, 0.1).unwrap().0
            });
            (names[i].clone(), params[i].numel(), stats[0])
        })
        .collect();
    ModelGradcheck { loss, tensors }
}

/// Absolute slack for one tensor's finite-difference gradient: f32
/// round-off in the loss, divided by the step, over `numel` entries.
pub fn fd_noise(loss: f64, numel: usize) -> f64 {
    8.0 * f32::EPSILON as f64 * loss.abs().max(1.0) * (numel as f64).sqrt() / ptrparse_tensor::gradcheck::H as f64
}

/// Check the output distribution contract on one random model: every
/// incremental step and every teacher-forced row has |V| + n entries
/// summing to one, and pointers past a source's length get no mass.
pub fn distribution_contract(seed: u64) -> Result<(), String> {
    use ptrparse::model::Batch;
    use ptrparse_tensor::Tape;

    let (m, _) = random_case(seed);
    let cfg = m.config().clone();
    let v = cfg.vocab_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);

    let count = rng.gen_range(1..=3);
    let examples: Vec<(Vec<usize>, Vec<usize>)> = (0..count)
        .map(|_| {
            let src = random_source(&mut rng, &cfg);
            let len = rng.gen_range(0..6);
            let tgt = (0..len).map(|_| rng.gen_range(3..v + src.len())).collect();
            (src, tgt)
        })
        .collect();

    for (src, tgt) in &examples {
        let enc = m.encode(src).map_err(|e| e.to_string())?;
        let dec = m.decoder(&enc).map_err(|e| e.to_string())?;
        let mut state = dec.start();
        for &tok in std::iter::once(&BOS).chain(tgt) {
            let (next, d) = dec.step(&state, tok).map_err(|e| e.to_string())?;
            state = next;
            if d.len() != v + src.len() {
                return Err(format!("seed {seed}: length {} != {}", d.len(), v + src.len()));
            }
            let total: f64 = d.probs.iter().map(|&p| p as f64).sum();
            if (total - 1.0).abs() > 1e-5 || d.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(format!("seed {seed}: incremental mass {total}"));
            }
        }
    }

    let pairs: Vec<(&[usize], &[usize])> = examples.iter().map(|(s, t)| (s.as_slice(), t.as_slice())).collect();
    let batch = Batch::new(&pairs, EOS);
    let tape = Tape::new();
    let lp = m
        .forward(&m.params_on(&tape), &batch, false)
        .map_err(|e| e.to_string())?
        .value()
        .into_data();
    let w = v + batch.src_len;
    for (b, (src, _)) in examples.iter().enumerate() {
        for t in 0..batch.tgt_len {
            let row = &lp[(b * batch.tgt_len + t) * w..][..w];
            let total: f64 = row.iter().map(|&x| (x as f64).exp()).sum();
            if (total - 1.0).abs() > 1e-5 {
                return Err(format!("seed {seed}: row {b}/{t} mass {total}"));
            }
            if row[v + src.len()..].iter().any(|&x| x.exp() != 0.0) {
                return Err(format!("seed {seed}: row {b}/{t} puts mass on padding"));
            }
        }
    }
    Ok(())
}

/// Encoded train and dev splits of a synthetic corpus plus its vocabularies.
pub struct Prepared {
    pub vocab: ptrparse::pipeline::Vocabularies,
    pub splits: ptrparse::dataio::Splits,
    pub train: Vec<ptrparse::train::Encoded>,
    pub dev: Vec<ptrparse::train::Encoded>,
}

pub fn prepare(count: usize, seed: u64) -> Prepared {
    use ptrparse::dataio::{generate_synthetic, SyntheticGrammar};
    use ptrparse::pipeline::Vocabularies;
    let splits = generate_synthetic(&SyntheticGrammar::default(), count, seed).unwrap();
    let vocab = Vocabularies::build(&splits.train, None).unwrap();
    let train = vocab.encode_all(&splits.train).unwrap();
    let dev = vocab.encode_all_for_eval(&splits.dev).unwrap();
    Prepared { vocab, splits, train, dev }
}

impl Prepared {
    pub fn tiny(&self) -> ModelConfig {
        let v = &self.vocab;
        ModelConfig::tiny(v.symtab.vocab_size(), v.source.size(), v.symtab.max_src_len())
    }
}

pub fn bin() -> std::process::Command {
    std::process::Command::new(env!("CARGO_BIN_EXE_ptrparse"))
}

/// Run the binary; `Err` carries stderr when the exit code is not zero.
pub fn run(args: &[&str]) -> Result<String, String> {
    let out = bin().args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

pub fn same_tree(a: &std::path::Path, b: &std::path::Path) -> Result<(), String> {
    let mut names: Vec<_> = std::fs::read_dir(a).map_err(|e| e.to_string())?.map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in names {
        let (x, y) = (std::fs::read(a.join(&n)), std::fs::read(b.join(&n)));
        match (x, y) {
            (Ok(x), Ok(y)) if x == y => {}
            _ => return Err(format!("{} differs from {}", a.join(&n).display(), b.join(&n).display())),
        }
    }
    Ok(())
}

/// Two single-threaded training runs, and a run interrupted and resumed
/// halfway, must produce byte-identical checkpoints and eval reports.
pub fn reproducibility_check(root: &std::path::Path) -> Result<(), String> {
    let p = |s: &str| root.join(s).display().to_string();
    let config = root.join("config.json");
    std::fs::write(
        &config,
        r#"{"model.preset": "tiny", "model.dropout": 0.1, "train.batch_size": 8, "train.warmup_steps": 20,
            "train.eval_every": 20, "train.log_every": 10, "beam.beam_size": 2}"#,
    )
    .map_err(|e| e.to_string())?;
    let cfg = config.display().to_string();
    let corpus = p("corpus");
    run(&["generate", "--seed", "5", "--count", "120", "--out", &corpus])?;
    let train = |run_dir: &str, steps: &str, resume: bool| {
        let mut args = vec!["--deterministic", "--config", &cfg, "train", "--corpus", &corpus];
        let dir = p(run_dir);
        args.extend(["--checkpoint", &dir, "--max-steps", steps]);
        if resume {
            args.push("--resume");
        }
        run(&args).map(|_| ())
    };
    train("a", "40", false)?;
    train("b", "40", false)?;
    train("c", "20", false)?;
    train("c", "40", true)?;
    for other in ["b", "c"] {
        same_tree(&root.join("a/step-000040"), &root.join(other).join("step-000040"))?;
    }
    let test = p("corpus/test.jsonl");
    for run_dir in ["a", "b", "c"] {
        let out = p(&format!("eval-{run_dir}"));
        let ck = p(&format!("{run_dir}/step-000040"));
        run(&["--deterministic", "eval", "--checkpoint", &ck, "--corpus", &test, "--out", &out])?;
    }
    same_tree(&root.join("eval-a"), &root.join("eval-b"))?;
    same_tree(&root.join("eval-a"), &root.join("eval-c"))
}
