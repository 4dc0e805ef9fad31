//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use privgraph::feature_store::{Dataset, Detection, EntityVocabulary, ImageRecord, Split};
use privgraph::harness::{generate, MetricsReport, SynthConfig};
use privgraph::models::*;
use privgraph::numcore::{gradcheck, BnLayout, GradcheckReport, ParameterStore, SlotKind, Tape, Tensor2, Var};
use privgraph::prior_graph::{build_combined_graph, mask_and_binarise, MaskMode, PriorGraph};

pub const GRAD_TOL: f64 = 1e-4;
pub const GRAD_H: f64 = 1e-6;

pub fn toy_vocab(k_o: usize, scenes: usize) -> EntityVocabulary {
    let mut objects = vec!["person".to_string()];
    objects.extend((1..k_o).map(|i| format!("obj{i}")));
    EntityVocabulary::new(objects, (0..scenes).map(|i| format!("scene{i}")).collect()).unwrap()
}

/// Random labelled records over `k_o` categories, up to 4 instances each.
pub fn random_records(rng: &mut impl Rng, k_o: usize, n: usize) -> Vec<ImageRecord> {
    (0..n)
        .map(|i| {
            let mut r = ImageRecord::new(&format!("r{i}"), rng.gen_range(0..2));
            for c in 0..k_o {
                if rng.gen_bool(0.3) {
                    for _ in 0..rng.gen_range(1..=4) {
                        r.detections.push(Detection { category: c, confidence: rng.gen_range(0.5..1.0), bbox: [0.0; 4] });
                    }
                }
            }
            r
        })
        .collect()
}

/// Brute-force frequency counts: images (not instances) of class y containing v,
/// over images of class y. Indexed `[v][y]`.
pub fn frequency_oracle(records: &[ImageRecord], k_o: usize) -> Vec<[f64; 2]> {
    let mut out = vec![[0.0; 2]; k_o];
    for (v, row) in out.iter_mut().enumerate() {
        for (y, cell) in row.iter_mut().enumerate() {
            let class: Vec<&ImageRecord> = records.iter().filter(|r| r.label as usize == y).collect();
            let with_v = class.iter().filter(|r| r.detections.iter().any(|d| d.category == v)).count();
            *cell = with_v as f64 / class.len() as f64;
        }
    }
    out
}

/// Brute-force co-occurrence: 1 iff two different categories share an image.
pub fn cooccurrence_oracle(records: &[ImageRecord], k_o: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; k_o]; k_o];
    for i in 0..k_o {
        for j in 0..k_o {
            let linked = i != j
                && records.iter().any(|r| {
                    r.detections.iter().any(|d| d.category == i) && r.detections.iter().any(|d| d.category == j)
                });
            out[i][j] = if linked { 1.0 } else { 0.0 };
        }
    }
    out
}

/// Hand-computed rates from raw label vectors, in `MetricsReport::scalars` order.
pub fn metrics_oracle(truth: &[usize], pred: &[usize]) -> [f64; 9] {
    let count = |t: usize, p: usize| truth.iter().zip(pred).filter(|&(&a, &b)| a == t && b == p).count() as f64;
    let per_class = |y: usize| {
        let tp = count(y, y);
        let fp = count(1 - y, y);
        let fn_ = count(y, 1 - y);
        let p = if tp + fp == 0.0 { 0.0 } else { tp / (tp + fp) };
        let r = if tp + fn_ == 0.0 { 0.0 } else { tp / (tp + fn_) };
        let f = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
        [p, r, f]
    };
    let [pp, rp, fp] = per_class(1);
    let [pq, rq, fq] = per_class(0);
    let correct = truth.iter().zip(pred).filter(|(a, b)| a == b).count() as f64;
    [pp, rp, fp, pq, rq, fq, (pp + pq) / 2.0, (rp + rq) / 2.0, correct / truth.len() as f64]
}

pub fn max_metric_gap(report: &MetricsReport, oracle: &[f64; 9]) -> f64 {
    report.scalars().iter().zip(oracle).map(|((_, a), b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Small synthetic dataset carrying every feature kind the models consume.
pub fn small_dataset(vocab: &EntityVocabulary, n: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig {
        n_train: n,
        n_val: 4,
        n_test: 4,
        seed,
        deep_dim: 3,
        image_dim: 4,
        pixel_dim: 16,
        ..SynthConfig::default()
    };
    generate(&cfg, vocab).unwrap()
}

pub fn small_spec(preset_name: &str, vocab: &EntityVocabulary) -> ModelSpec {
    let Predictor::Model(mut s) = preset(preset_name).unwrap() else { panic!("{preset_name} is a baseline") };
    s.objects = vocab.k_o();
    s.scenes = vocab.n_scenes();
    s.input_dim = 16;
    s.d_obj = 3;
    s.image_dim = 4;
    if s.scheme == NodeScheme::Deep {
        s.output = 3;
    }
    s
}

/// Gradcheck of the full training loss of `spec` on a small batch.
pub fn model_gradcheck(spec: &ModelSpec, vocab: &EntityVocabulary, seed: u64) -> GradcheckReport {
    let ds = small_dataset(vocab, 12, seed);
    let train = ds.indices(Split::Train);
    let enc = encode(spec, &ds, None, &train, seed).unwrap();
    let graph = if spec.uses_graph() {
        let g = build_combined_graph(&ds.subset(Split::Train), vocab).unwrap();
        let g = match spec.graph {
            GraphChoice::Cooccurrence => mask_and_binarise(&g, MaskMode::GpaObjects),
            GraphChoice::Bipartite => mask_and_binarise(&g, MaskMode::GipBipartite),
            GraphChoice::None => PriorGraph::zero(vocab),
        };
        Some(GraphInputs::from_graph(&g))
    } else {
        None
    };
    let idx: Vec<usize> = train.iter().copied().take(6).collect();
    let labels: Vec<usize> = idx.iter().map(|&i| enc.labels[i]).collect();
    let mut store = init_store(spec, seed).unwrap();
    perturb(&mut store, seed);
    gradcheck(&mut store, true, GRAD_H, GRAD_TOL, |t, s| {
        let z = logits(spec, t, s, &enc, graph.as_ref(), &idx);
        t.softmax_cross_entropy(z, &labels, None)
    })
    .unwrap()
}

/// Moves zero-initialised biases off zero so every path carries gradient.
pub fn perturb(store: &mut ParameterStore, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for slot in store.slots_mut() {
        if slot.kind == SlotKind::Trainable {
            for v in slot.value.data_mut() {
                *v += rng.gen_range(-0.1..0.1);
            }
        }
    }
}

pub fn random_tensor(rng: &mut impl Rng, r: usize, c: usize) -> Tensor2 {
    Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn store_of(entries: &[(&str, Tensor2)]) -> ParameterStore {
    let mut s = ParameterStore::new();
    for (name, t) in entries {
        s.insert(name, t.clone(), SlotKind::Trainable).unwrap();
    }
    s
}

pub type PrimitiveCase = (&'static str, ParameterStore, Box<dyn Fn(&mut Tape, &ParameterStore) -> Var>);

/// One gradcheck case per tape primitive.
pub fn primitive_cases() -> Vec<PrimitiveCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut t = |r: usize, c: usize| random_tensor(&mut rng, r, c);
    let xy = |a: Tensor2, b: Tensor2| store_of(&[("x", a), ("y", b)]);
    let mut cases: Vec<PrimitiveCase> = Vec::new();
    cases.push(("matmul", xy(t(3, 4), t(4, 2)), Box::new(|tp, s| {
        let (x, y) = (tp.param(s, "x"), tp.param(s, "y"));
        tp.matmul(x, y)
    })));
    cases.push(("linear", store_of(&[("x", t(5, 3)), ("w", t(3, 2)), ("b", t(1, 2))]), Box::new(|tp, s| {
        let (x, w, b) = (tp.param(s, "x"), tp.param(s, "w"), tp.param(s, "b"));
        tp.linear(x, w, Some(b))
    })));
    for (name, f) in [
        ("add", Tape::add as fn(&mut Tape, Var, Var) -> Var),
        ("sub", Tape::sub),
        ("mul", Tape::mul),
    ] {
        cases.push((name, xy(t(3, 4), t(3, 4)), Box::new(move |tp, s| {
            let (x, y) = (tp.param(s, "x"), tp.param(s, "y"));
            f(tp, x, y)
        })));
    }
    for (name, f) in [
        ("relu", Tape::relu as fn(&mut Tape, Var) -> Var),
        ("tanh", Tape::tanh),
        ("sigmoid", Tape::sigmoid),
        ("softmax", Tape::softmax),
        ("sum_all", Tape::sum_all),
    ] {
        cases.push((name, store_of(&[("x", t(4, 3))]), Box::new(move |tp, s| {
            let x = tp.param(s, "x");
            f(tp, x)
        })));
    }
    cases.push(("dropout", store_of(&[("x", t(6, 5))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        tp.dropout(x, 0.4)
    })));
    cases.push(("batchnorm_per_column", store_of(&[("x", t(6, 3)), ("g", t(1, 3)), ("b", t(1, 3))]), Box::new(|tp, s| {
        let (x, g, b) = (tp.param(s, "x"), tp.param(s, "g"), tp.param(s, "b"));
        tp.batchnorm(x, g, b, BnLayout::PerColumn, (&[0.0; 3], &[1.0; 3]), "bn")
    })));
    cases.push(("batchnorm_per_node", store_of(&[("x", t(8, 3)), ("g", t(1, 4)), ("b", t(1, 4))]), Box::new(|tp, s| {
        let (x, g, b) = (tp.param(s, "x"), tp.param(s, "g"), tp.param(s, "b"));
        tp.batchnorm(x, g, b, BnLayout::PerNode(4), (&[0.0; 4], &[1.0; 4]), "bn")
    })));
    cases.push(("concat_cols", xy(t(3, 2), t(3, 4)), Box::new(|tp, s| {
        let (x, y) = (tp.param(s, "x"), tp.param(s, "y"));
        tp.concat_cols(&[x, y, x])
    })));
    cases.push(("gather_rows", store_of(&[("x", t(4, 3))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        tp.gather_rows(x, &[3, 0, 0, 2])
    })));
    cases.push(("scatter_add", xy(t(5, 3), t(3, 1)), Box::new(|tp, s| {
        let (x, y) = (tp.param(s, "x"), tp.param(s, "y"));
        tp.scatter_add(x, y, &[4, 1, 4], 2)
    })));
    cases.push(("reshape", store_of(&[("x", t(4, 3))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        let r = tp.reshape(x, 2, 6);
        let y = tp.tanh(r);
        tp.reshape(y, 3, 4)
    })));
    cases.push(("scale_rows", xy(t(4, 3), t(4, 1)), Box::new(|tp, s| {
        let (x, y) = (tp.param(s, "x"), tp.param(s, "y"));
        tp.scale_rows(x, y)
    })));
    cases.push(("aggregate", store_of(&[("x", t(6, 2))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        let edges = std::sync::Arc::new(privgraph::numcore::BlockEdges {
            block: 3,
            edges: vec![(0, 1, 0.5), (2, 0, 1.5), (1, 1, -1.0), (0, 2, 2.0)],
        });
        tp.aggregate(x, &edges)
    })));
    cases.push(("sum_blocks", store_of(&[("x", t(6, 2))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        tp.sum_blocks(x, 3)
    })));
    cases.push(("cross_entropy", store_of(&[("x", t(4, 2))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        let p = tp.softmax(x);
        tp.cross_entropy(p, &[0, 1, 1, 0], Some(&[0.7, 1.9]))
    })));
    cases.push(("softmax_cross_entropy", store_of(&[("x", t(4, 2))]), Box::new(|tp, s| {
        let x = tp.param(s, "x");
        tp.softmax_cross_entropy(x, &[1, 1, 0, 1], Some(&[1.3, 0.6]))
    })));
    cases
}

/// Model presets whose forward passes are gradchecked.
pub const GRADCHECK_PRESETS: &[&str] = &[
    "s2p",
    "s2p-mlp1",
    "s2p-mlp2",
    "mlp",
    "mlp-bn",
    "mlp-i",
    "gamlp",
    "gamlp-bn",
    "gpa",
    "gpa-bipartite",
    "gpa-no-flag",
    "gpa-no-reshape",
    "gpa-zeros",
    "gpa-random",
    "gpa-no-graph",
    "gip-fixed",
    "gip-zeros",
    "gip-no-type",
];

/// GGNN with K = 5 nodes, D = 2, 3 propagation steps.
pub fn ggnn_case() -> (ParameterStore, GraphInputs) {
    let spec = ModelSpec { kind: ModelKind::Grm, objects: 3, scenes: 2, ..ModelSpec::default() };
    assert_eq!(spec.node_dim(), 2);
    let mut store = init_store(&spec, 3).unwrap();
    perturb(&mut store, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    store.insert("x", random_tensor(&mut rng, 10, 2), SlotKind::Trainable).unwrap();
    let mut g = PriorGraph::zero(&toy_vocab(3, 2));
    for (i, j, w) in [(0, 1, 1.0), (1, 0, 1.0), (0, 3, 0.4), (3, 0, 0.4), (2, 4, 0.7), (4, 2, 0.7), (1, 4, 0.2), (4, 1, 0.2)] {
        g.set(i, j, w);
    }
    (store, GraphInputs::from_graph(&g))
}
