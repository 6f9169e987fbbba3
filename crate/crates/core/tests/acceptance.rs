//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any enforced criterion fails.
//!
//! Criteria 1-4 need the LectureBankCD corpus in the layout read by
//! `Dataset::load`, with domains `nlp`, `cv` and `bio`, under the directory
//! named by `LECTUREBANK_CD_DIR`. Embedding files are taken from
//! `LECTUREBANK_CD_EMBEDDINGS_CV` and `LECTUREBANK_CD_EMBEDDINGS_BIO` (dimension
//! `LECTUREBANK_CD_DIM`); without them hashed token features are used. When
//! the corpus is absent these criteria print NOT RUN.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cdvgae::autodiff::{finite_diff_check, six_node_fixture};
use cdvgae::dataset::fallback_features;
use cdvgae::eval::{
    all_pairs, compute_metrics, make_split, run_protocol, run_seed, split_sizes, train_graph_model, ModelKind,
    ProtocolConfig, SeedReport,
};
use cdvgae::graph::{build_graph, graph_domain_neighbors, NeighborScope};
use cdvgae::model::{encode, vgae_baseline_encode, EncoderOptions, ModelParams};
use cdvgae::synthetic::planted_config;
use cdvgae::train::{fit, ValidationPairs};
use cdvgae::{generate, Dataset, Domain, EmbeddingTable, PlantedSpec, RelationSet, SeededRng};

/// Gradient certification tolerance on relative error.
const GRAD_TOL: f64 = 1e-4;
/// Finite-difference step.
const GRAD_EPS: f64 = 1e-5;
const GRAD_FIXTURES: u64 = 20;
/// Planted recovery floor on mean test F1.
const PLANTED_F1: f64 = 0.85;
/// Randomised instances for the protocol invariants.
const PROTOCOL_CASES: u64 = 1000;
/// Runtime budget for one five-seed protocol on a real target.
const PROTOCOL_BUDGET: Duration = Duration::from_secs(600);
const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

enum Outcome {
    Pass(String),
    Fail(String),
    /// Reported only; does not fail the suite.
    Report(String),
    NotRun(String),
}

fn line(id: u32, name: &str, outcome: &Outcome) {
    let (tag, detail) = match outcome {
        Outcome::Pass(d) => ("PASS", d),
        Outcome::Fail(d) => ("FAIL", d),
        Outcome::Report(d) => ("PASS (reported)", d),
        Outcome::NotRun(d) => ("NOT RUN", d),
    };
    println!("{tag:<8} criterion {id}: {name}: {detail}");
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn planted_spec() -> PlantedSpec {
    PlantedSpec::new(20, 20, 10, 0.15, 0.9, 32, 0.05, 3)
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = Vec::new();
    for seed in 0..GRAD_FIXTURES {
        let (problem, params) = six_node_fixture(seed);
        match finite_diff_check(&problem, &params, GRAD_EPS) {
            Ok(r) => {
                worst = worst.max(r.max_rel_err());
                if !r.passes(GRAD_TOL) {
                    failures.push(format!("seed {seed} rel err {:.3e}", r.max_rel_err()));
                }
            }
            Err(e) => failures.push(format!("seed {seed}: {e}")),
        }
    }
    check(
        failures.is_empty(),
        format!(
            "{GRAD_FIXTURES} fixtures, worst rel err {worst:.3e} (tol {GRAD_TOL:e}){}",
            if failures.is_empty() {
                String::new()
            } else {
                format!("; failing: {}", failures.join(", "))
            }
        ),
    )
}

fn criterion_6() -> Outcome {
    let planted = generate(&planted_spec()).expect("planted fixture");
    let mut cd = planted_config(&planted.spec);
    cd.train.dn_keep_fraction = 0.0;
    let vgae = planted_config(&planted.spec);
    let mut mismatches = Vec::new();
    for &seed in &SEEDS {
        let a = train_graph_model(&planted.dataset, &planted.embeddings, ModelKind::Cdvgae, &cd, seed)
            .expect("cd-vgae run");
        let b = train_graph_model(&planted.dataset, &planted.embeddings, ModelKind::Vgae, &vgae, seed)
            .expect("vgae run");
        let same_params = a.model.params == b.model.params;
        let same_z = a.model.z_mean.as_slice().iter().map(|v| v.to_bits()).eq(b
            .model
            .z_mean
            .as_slice()
            .iter()
            .map(|v| v.to_bits()));
        // Compared bitwise: validation F1 is NaN when no pairs are held out.
        let log_bits = |m: &cdvgae::TrainedModel| {
            m.log
                .iter()
                .map(|e| {
                    (
                        e.epoch,
                        e.recon_loss.to_bits(),
                        e.kl.to_bits(),
                        e.val_f1.to_bits(),
                        e.mean_loss.to_bits(),
                    )
                })
                .collect::<Vec<_>>()
        };
        let same_log = log_bits(&a.model) == log_bits(&b.model) && a.model.best_epoch == b.model.best_epoch;

        // Encoder level: zero-fraction map against the plain VGAE encoder.
        let map = graph_domain_neighbors(&a.graph, 0.0, NeighborScope::Global).expect("map");
        let params = ModelParams::init(
            a.graph.features().cols(),
            16,
            8,
            &mut SeededRng::new(seed),
        );
        let opts = EncoderOptions::default();
        let ea = encode(&a.graph, &map, &params, &opts, &mut SeededRng::new(seed)).expect("encode");
        let eb = vgae_baseline_encode(&a.graph, &params, &opts, &mut SeededRng::new(seed)).expect("encode");
        let same_enc = ea.z.as_slice().iter().map(|v| v.to_bits()).eq(eb.z.as_slice().iter().map(|v| v.to_bits()));

        if !(same_params && same_z && same_log && same_enc) {
            mismatches.push(seed);
        }
    }
    check(
        mismatches.is_empty(),
        format!(
            "{} seeds, params/latents/logs/encoder bit-identical{}",
            SEEDS.len(),
            if mismatches.is_empty() {
                String::new()
            } else {
                format!("; differing seeds {mismatches:?}")
            }
        ),
    )
}

fn criterion_7() -> Outcome {
    let planted = generate(&planted_spec()).expect("planted fixture");
    let cfg = planted_config(&planted.spec);
    let cd = run_protocol(&planted.dataset, &planted.embeddings, ModelKind::Cdvgae, &SEEDS, &cfg, 1)
        .expect("cd-vgae protocol");
    let vgae = run_protocol(&planted.dataset, &planted.embeddings, ModelKind::Vgae, &SEEDS, &cfg, 1)
        .expect("vgae protocol");
    check(
        cd.mean.f1 >= PLANTED_F1 && cd.mean.f1 > vgae.mean.f1,
        format!(
            "CD-VGAE mean F1 {:.4} (floor {PLANTED_F1}), VGAE {:.4}",
            cd.mean.f1, vgae.mean.f1
        ),
    )
}

fn random_relations(rng: &mut SeededRng) -> RelationSet {
    let n_concepts = 7 + rng.below(14);
    let mut pairs = all_pairs(n_concepts);
    let max = pairs.len() / 2;
    let n = 20 + rng.below(max.saturating_sub(20).max(1));
    for i in 0..n {
        let j = i + rng.below(pairs.len() - i);
        pairs.swap(i, j);
    }
    pairs.truncate(n);
    RelationSet::new(Domain::Target, n_concepts, pairs).expect("valid pairs")
}

fn split_violations(rel: &RelationSet, seed: u64) -> Option<String> {
    let s = match make_split(rel, seed) {
        Ok(s) => s,
        Err(e) => return Some(e.to_string()),
    };
    let n = rel.len();
    let (a, b, c) = split_sizes(n);
    if (s.train_pos.len(), s.val_pos.len(), s.test_pos.len()) != (n * 85 / 100, n * 5 / 100, n - a - b) || c != s.test_pos.len() {
        return Some("positive sizes".into());
    }
    let pos: HashSet<_> = rel.pairs().iter().copied().collect();
    let mut seen_pos = HashSet::new();
    for p in s.train_pos.iter().chain(&s.val_pos).chain(&s.test_pos) {
        if !pos.contains(p) || !seen_pos.insert(*p) {
            return Some(format!("positive {p:?} not a disjoint member"));
        }
    }
    if seen_pos.len() != n {
        return Some("positives not covered".into());
    }
    for (p, q) in [(&s.train_pos, &s.train_neg), (&s.val_pos, &s.val_neg), (&s.test_pos, &s.test_neg)] {
        if p.len() != q.len() {
            return Some("negative list size".into());
        }
    }
    let mut seen_neg = HashSet::new();
    for &(a, b) in s.train_neg.iter().chain(&s.val_neg).chain(&s.test_neg) {
        if a == b || a >= rel.n_concepts || b >= rel.n_concepts || pos.contains(&(a, b)) || !seen_neg.insert((a, b)) {
            return Some(format!("negative ({a}, {b}) invalid or repeated"));
        }
    }
    if make_split(rel, seed).ok().as_ref() != Some(&s) {
        return Some("not reproducible".into());
    }
    None
}

fn criterion_8() -> Outcome {
    let mut rng = SeededRng::new(8);
    let mut problems = Vec::new();
    for case in 0..PROTOCOL_CASES {
        let rel = random_relations(&mut rng);
        if let Some(v) = split_violations(&rel, case) {
            problems.push(format!("split case {case}: {v}"));
        }
    }
    for case in 0..PROTOCOL_CASES {
        let n = 1 + rng.below(60);
        let preds: Vec<bool> = (0..n).map(|_| rng.unit() < 0.5).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.unit() < 0.5).collect();
        let m = compute_metrics(&preds, &labels).expect("metrics");
        let count = |p: bool, l: bool| preds.iter().zip(&labels).filter(|(a, b)| **a == p && **b == l).count();
        let (tp, fp, tn, fn_) = (count(true, true), count(true, false), count(false, false), count(false, true));
        let pre = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
        let rec = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
        let f1 = if pre + rec > 0.0 { 2.0 * pre * rec / (pre + rec) } else { 0.0 };
        let acc = (tp + tn) as f64 / n as f64;
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        if (m.tp, m.fp, m.tn, m.fn_) != (tp, fp, tn, fn_)
            || !close(m.precision, pre)
            || !close(m.recall, rec)
            || !close(m.f1, f1)
            || !close(m.accuracy, acc)
        {
            problems.push(format!("metric case {case}"));
        }
    }
    if split_sizes(871) != (740, 43, 88) {
        problems.push(format!("CV sizes {:?}", split_sizes(871)));
    }
    if split_sizes(234) != (198, 11, 25) {
        problems.push(format!("BIO sizes {:?}", split_sizes(234)));
    }
    check(
        problems.is_empty(),
        format!(
            "{PROTOCOL_CASES} splits, {PROTOCOL_CASES} metric instances, CV 740/43/88, BIO 198/11/25{}",
            if problems.is_empty() {
                String::new()
            } else {
                format!("; {} problems, first: {}", problems.len(), problems[0])
            }
        ),
    )
}

fn criterion_9() -> Outcome {
    let planted = generate(&planted_spec()).expect("planted fixture");
    let cfg = planted_config(&planted.spec);
    let graph = build_graph(
        &planted.dataset,
        planted.dataset.source.relations.pairs(),
        &planted.embeddings,
        &cfg.graph,
    )
    .expect("graph");
    let map = graph_domain_neighbors(&graph, cfg.train.dn_keep_fraction, cfg.graph.dn_scope).expect("map");
    let mut train = cfg.train.clone();
    train.epochs = 20;
    fit(&graph, &map, &ValidationPairs::default(), &train).expect("fit");
    let during_fit = graph.target_gold_reads();
    let outcome = run_seed(&planted.dataset, &planted.embeddings, ModelKind::Cdvgae, 0, &cfg).expect("protocol seed");
    let during_protocol = outcome.run.as_ref().map_or(0, |r| r.graph.target_gold_reads());
    // The recorder itself must register a read.
    let _ = graph.target_gold();
    let recorder_works = graph.target_gold_reads() == 1;
    check(
        during_fit == 0 && during_protocol == 0 && recorder_works,
        format!("gold reads during fit {during_fit}, during protocol seed {during_protocol}, recorder live {recorder_works}"),
    )
}

// Real-corpus criteria.

struct Corpus {
    root: PathBuf,
}

impl Corpus {
    fn locate() -> Option<Corpus> {
        let root = PathBuf::from(std::env::var_os("LECTUREBANK_CD_DIR")?);
        ["nlp", "cv", "bio"]
            .iter()
            .all(|d| root.join(d).join("concepts.tsv").exists())
            .then_some(Corpus { root })
    }

    fn load(&self, target: &str) -> (Dataset, EmbeddingTable) {
        let dataset = Dataset::load(&self.root, "nlp", target).expect("corpus loads");
        let var = format!("LECTUREBANK_CD_EMBEDDINGS_{}", target.to_uppercase());
        let table = match std::env::var_os(&var) {
            Some(path) => {
                let dim: usize = std::env::var("LECTUREBANK_CD_DIM")
                    .ok()
                    .and_then(|d| d.parse().ok())
                    .expect("LECTUREBANK_CD_DIM must be set with an embedding file");
                dataset.load_embeddings(Path::new(&path), dim).expect("embeddings load")
            }
            None => fallback_features(
                &[&dataset.source.concepts, &dataset.target.concepts],
                &dataset.resources,
                64,
                0,
            ),
        };
        (dataset, table)
    }
}

struct TargetRun {
    target: &'static str,
    cd: SeedReport,
    vgae: SeedReport,
    cls: SeedReport,
    slowest: Duration,
}

fn real_runs(corpus: &Corpus) -> Vec<TargetRun> {
    let cfg = ProtocolConfig::default();
    ["cv", "bio"]
        .into_iter()
        .map(|target| {
            let (dataset, table) = corpus.load(target);
            let timed = |kind| {
                let t = Instant::now();
                let r = run_protocol(&dataset, &table, kind, &SEEDS, &cfg, SEEDS.len()).expect("protocol");
                (r, t.elapsed())
            };
            let (cd, t1) = timed(ModelKind::Cdvgae);
            let (vgae, t2) = timed(ModelKind::Vgae);
            let (cls, _) = timed(ModelKind::Cls);
            TargetRun {
                target,
                cd,
                vgae,
                cls,
                slowest: t1.max(t2),
            }
        })
        .collect()
}

fn real_criteria(runs: &[TargetRun]) -> Vec<(u32, &'static str, Outcome)> {
    let mut out = Vec::new();

    let ok1 = runs
        .iter()
        .all(|r| r.cd.mean.f1 > r.vgae.mean.f1 && r.slowest < PROTOCOL_BUDGET);
    let d1 = runs
        .iter()
        .map(|r| {
            format!(
                "{}: CD-VGAE {:.4} vs VGAE {:.4} ({:.0}s)",
                r.target,
                r.cd.mean.f1,
                r.vgae.mean.f1,
                r.slowest.as_secs_f64()
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    out.push((1, "F1 ordering on NLP->CV and NLP->BIO", check(ok1, d1)));

    let ok2 = runs
        .iter()
        .all(|r| r.cd.mean.rec > r.vgae.mean.rec && r.vgae.mean.rec > r.cls.mean.rec);
    let d2 = runs
        .iter()
        .map(|r| {
            format!(
                "{}: recall {:.4} > {:.4} > {:.4}",
                r.target, r.cd.mean.rec, r.vgae.mean.rec, r.cls.mean.rec
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    out.push((2, "recall ordering", check(ok2, d2)));

    let band = |t: &str| match t {
        "cv" => (0.60, 0.75, 0.6754),
        _ => (0.58, 0.72, 0.6512),
    };
    let in_band = runs.iter().all(|r| {
        let (lo, hi, _) = band(r.target);
        (lo..=hi).contains(&r.cd.mean.f1)
    });
    let d3 = runs
        .iter()
        .map(|r| {
            let (lo, hi, reference) = band(r.target);
            format!(
                "{}: F1 {:.4} band [{lo}, {hi}] gap to {reference} {:+.4}",
                r.target,
                r.cd.mean.f1,
                r.cd.mean.f1 - reference
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    out.push((
        3,
        "absolute F1 band",
        if in_band {
            Outcome::Pass(d3)
        } else {
            Outcome::Report(format!("outside band, not enforced: {d3}"))
        },
    ));

    let cv = runs.iter().find(|r| r.target == "cv").expect("cv run");
    let (c, v, d) = (cv.cls.mean.recovered_edges, cv.vgae.mean.recovered_edges, cv.cd.mean.recovered_edges);
    let refs = runs
        .iter()
        .map(|r| {
            format!(
                "{} CLS/VGAE/CD-VGAE {:.0}/{:.0}/{:.0}",
                r.target, r.cls.mean.recovered_edges, r.vgae.mean.recovered_edges, r.cd.mean.recovered_edges
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    out.push((
        4,
        "recovered edge counts on CV",
        check(
            c < v && v < d,
            format!("{refs} (references 527/963/1209 and 128/261/303)"),
        ),
    ));
    out
}

fn main() {
    // Honour `cargo test -- --list` and filters loosely: this target always
    // runs in full.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    println!("acceptance suite");
    let mut failed = 0;
    let mut record = |id: u32, name: &str, o: Outcome| {
        if matches!(o, Outcome::Fail(_)) {
            failed += 1;
        }
        line(id, name, &o);
    };

    match Corpus::locate() {
        Some(corpus) => {
            let runs = real_runs(&corpus);
            for (id, name, o) in real_criteria(&runs) {
                record(id, name, o);
            }
        }
        None => {
            let why = "LectureBankCD corpus not found (set LECTUREBANK_CD_DIR)".to_owned();
            record(1, "F1 ordering on NLP->CV and NLP->BIO", Outcome::NotRun(why.clone()));
            record(2, "recall ordering", Outcome::NotRun(why.clone()));
            record(3, "absolute F1 band", Outcome::NotRun(why.clone()));
            record(4, "recovered edge counts on CV", Outcome::NotRun(why));
        }
    }
    record(5, "gradient certification", criterion_5());
    record(6, "VGAE reduction equivalence", criterion_6());
    record(7, "planted-graph recovery", criterion_7());
    record(8, "protocol invariants", criterion_8());
    record(9, "leakage guard", criterion_9());

    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
    println!("all enforced criteria passed");
}
