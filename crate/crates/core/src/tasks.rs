//! Data generation, training drivers, evaluation metrics and CSV output.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradsim::fidelity_at;
use crate::neural::{unitary_features, AdamState, ClassifierNet, EncoderModel, FamilyRef};
use crate::qmat::{standard_gate, CMatrix, GateName, C64};
use crate::synth::{refine, RefineConfig, TracePoint};
use crate::templates::{assemble, sample_params, slots_to_params, TemplateFamily, TemplateSpec};

/// Independent random streams derived from one user seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    ClassifierTrain = 2,
    ClassifierEval = 3,
    EncoderTrain = 4,
    EncoderEval = 5,
    RandomStart = 6,
    SynthRestart = 7,
    OracleRestart = 8,
}

/// Counter-based generator: every `(seed, stream, index)` triple yields its
/// own reproducible sequence, independent of evaluation order.
pub fn sample_rng(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << 48) | (index & ((1 << 48) - 1)));
    rng
}

/// Anything that assigns probabilities over a template family.
pub trait TemplateScorer {
    fn n_qubits(&self) -> usize;
    fn n_templates(&self) -> usize;
    /// Hash of the family the scorer was built for, when it records one.
    fn family_hash(&self) -> Option<&str> {
        None
    }
    fn probabilities(&self, unitaries: &[&CMatrix]) -> Result<Vec<Vec<f64>>>;
}

impl TemplateScorer for ClassifierNet {
    fn n_qubits(&self) -> usize {
        self.family.n_qubits
    }

    fn n_templates(&self) -> usize {
        self.n_classes()
    }

    fn family_hash(&self) -> Option<&str> {
        Some(&self.family.hash)
    }

    fn probabilities(&self, unitaries: &[&CMatrix]) -> Result<Vec<Vec<f64>>> {
        let mut features = Vec::with_capacity(unitaries.len() * self.n_inputs());
        for u in unitaries {
            features.extend(unitary_features(u, self.canonicalize_phase));
        }
        let probs = self.forward_batch(&features)?;
        Ok(probs.chunks(self.n_classes()).map(<[f64]>::to_vec).collect())
    }
}

/// Scorer returning the same distribution for every input.
#[derive(Clone, Debug)]
pub struct FixedScorer {
    n_qubits: usize,
    probs: Vec<f64>,
}

impl FixedScorer {
    pub fn new(n_qubits: usize, probs: Vec<f64>) -> Self {
        Self { n_qubits, probs }
    }

    /// All mass on one template.
    pub fn favoring(family: &TemplateFamily, id: usize) -> Self {
        let mut probs = vec![0.0; family.len()];
        probs[id] = 1.0;
        Self::new(family.n_qubits, probs)
    }
}

impl TemplateScorer for FixedScorer {
    fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    fn n_templates(&self) -> usize {
        self.probs.len()
    }

    fn probabilities(&self, unitaries: &[&CMatrix]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.probs.clone(); unitaries.len()])
    }
}

/// Indices by descending probability, ties broken by lower index.
pub fn rank_by_probability(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

/// How classifier inputs are presented.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureOptions {
    /// Rotate the largest-magnitude entry onto the positive real axis.
    pub canonicalize_phase: bool,
    /// Multiply each training unitary by a random d-th root of unity, the
    /// global phases that leave its determinant unchanged.
    pub phase_augment: bool,
}

/// Classifier rows `first_index..first_index + batch_size`: a uniformly
/// drawn template, uniform angles, and the flattened assembled unitary.
/// Labels are positions in `templates`.
pub fn gen_classifier_batch(
    templates: &[TemplateSpec],
    batch_size: usize,
    seed: u64,
    first_index: u64,
    opts: FeatureOptions,
) -> Result<(Vec<f64>, Vec<usize>)> {
    if templates.is_empty() {
        return Err(Error::Config("empty template family".into()));
    }
    let d = templates[0].dim();
    let mut features = Vec::with_capacity(batch_size * 2 * d * d);
    let mut labels = Vec::with_capacity(batch_size);
    for r in 0..batch_size as u64 {
        let mut rng = sample_rng(seed, Stream::ClassifierTrain, first_index + r);
        let label = rng.gen_range(0..templates.len());
        let t = &templates[label];
        let mut u = assemble(t, &sample_params(t, &mut rng))?;
        if opts.phase_augment {
            let k = rng.gen_range(0..d);
            u = u.scale(C64::from_polar(1.0, 2.0 * PI * k as f64 / d as f64));
        }
        features.extend(unitary_features(&u, opts.canonicalize_phase));
        labels.push(label);
    }
    Ok((features, labels))
}

fn encoder_samples(t: &TemplateSpec, n: usize, seed: u64, stream: Stream, first_index: u64) -> Vec<CMatrix> {
    (0..n as u64)
        .map(|r| {
            let mut rng = sample_rng(seed, stream, first_index + r);
            assemble(t, &sample_params(t, &mut rng)).expect("sampled params fit their template")
        })
        .collect()
}

/// Unitaries assembled from `t` at uniformly drawn angles.
pub fn gen_encoder_batch(t: &TemplateSpec, batch_size: usize, seed: u64, first_index: u64) -> Vec<CMatrix> {
    encoder_samples(t, batch_size, seed, Stream::EncoderTrain, first_index)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub log_every: usize,
    pub canonicalize_phase: bool,
    pub phase_augment: bool,
    /// Anneal the learning rate to zero along a half cosine.
    #[serde(default)]
    pub cosine_decay: bool,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 256,
            seed: 0,
            hidden: vec![256, 256],
            lr: 1e-3,
            log_every: 100,
            canonicalize_phase: false,
            phase_augment: false,
            cosine_decay: false,
        }
    }
}

/// Learning rate for step `s` of `steps`.
fn scheduled_lr(base: f64, s: usize, steps: usize, cosine: bool) -> f64 {
    if cosine {
        0.5 * base * (1.0 + (PI * s as f64 / steps as f64).cos())
    } else {
        base
    }
}

fn check_loop(steps: usize, batch_size: usize, log_every: usize) -> Result<()> {
    if steps == 0 || batch_size == 0 || log_every == 0 {
        return Err(Error::Config("steps, batch_size and log_every must be positive".into()));
    }
    Ok(())
}

/// Drives `step` for `steps` iterations and averages its values per logging window.
fn run_curve(
    steps: usize,
    log_every: usize,
    mut step: impl FnMut(usize) -> Result<f64>,
    mut on_log: impl FnMut(&CurvePoint),
) -> Result<Vec<CurvePoint>> {
    let mut curve = Vec::new();
    let mut acc = 0.0;
    let mut count = 0;
    for s in 0..steps {
        acc += step(s)?;
        count += 1;
        if count == log_every || s + 1 == steps {
            let point = CurvePoint {
                step: s + 1,
                value: acc / count as f64,
            };
            on_log(&point);
            curve.push(point);
            acc = 0.0;
            count = 0;
        }
    }
    Ok(curve)
}

/// Trains a classifier on freshly generated batches; the curve holds the
/// mean pre-update loss over each logging window.
pub fn train_classifier(
    family: &TemplateFamily,
    cfg: &ClassifierTrainConfig,
    on_log: impl FnMut(&CurvePoint),
) -> Result<(ClassifierNet, Vec<CurvePoint>)> {
    check_loop(cfg.steps, cfg.batch_size, cfg.log_every)?;
    let mut init = sample_rng(cfg.seed, Stream::Init, 0);
    let mut net = ClassifierNet::new(FamilyRef::of(family), &cfg.hidden, cfg.canonicalize_phase, &mut init);
    let mut adam = AdamState::new(net.n_params(), cfg.lr);
    let curve = run_curve(
        cfg.steps,
        cfg.log_every,
        |s| {
            let first = (s * cfg.batch_size) as u64;
            let opts = FeatureOptions {
                canonicalize_phase: cfg.canonicalize_phase,
                phase_augment: cfg.phase_augment,
            };
            let (x, y) = gen_classifier_batch(&family.templates, cfg.batch_size, cfg.seed, first, opts)?;
            adam.lr = scheduled_lr(cfg.lr, s, cfg.steps, cfg.cosine_decay);
            net.train_step(&x, &y, &mut adam)
        },
        on_log,
    )?;
    Ok((net, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierEvalReport {
    pub n_samples: usize,
    pub accuracy: f64,
    pub top_k_accuracy: BTreeMap<usize, f64>,
    /// Rows are true templates, columns predicted ones.
    pub confusion: Vec<Vec<u64>>,
    /// Mean 1-based rank of the true template.
    pub expected_visits: f64,
}

/// `n_per_template` fresh samples of every template, with labels.
pub fn classifier_eval_set(family: &TemplateFamily, n_per_template: usize, seed: u64) -> Vec<(CMatrix, usize)> {
    let mut out = Vec::with_capacity(n_per_template * family.len());
    for (label, t) in family.templates.iter().enumerate() {
        let first = (label * n_per_template) as u64;
        for u in encoder_samples(t, n_per_template, seed, Stream::ClassifierEval, first) {
            out.push((u, label));
        }
    }
    out
}

/// Scores labelled samples: accuracy, top-k, confusion and expected visits.
pub fn eval_on_samples<S: TemplateScorer + ?Sized>(scorer: &S, samples: &[(CMatrix, usize)]) -> Result<ClassifierEvalReport> {
    let k = scorer.n_templates();
    if samples.is_empty() {
        return Err(Error::Config("no evaluation samples".into()));
    }
    let mut confusion = vec![vec![0u64; k]; k];
    let mut rank_hits = vec![0u64; k];
    let mut rank_sum = 0u64;
    for chunk in samples.chunks(512) {
        let refs: Vec<&CMatrix> = chunk.iter().map(|(u, _)| u).collect();
        let probs = scorer.probabilities(&refs)?;
        for ((_, label), p) in chunk.iter().zip(&probs) {
            if *label >= k {
                return Err(Error::LabelOutOfRange { label: *label, classes: k });
            }
            let order = rank_by_probability(p);
            confusion[*label][order[0]] += 1;
            let rank = order.iter().position(|&c| c == *label).expect("ranking is a permutation");
            rank_hits[rank] += 1;
            rank_sum += rank as u64 + 1;
        }
    }
    let n = samples.len() as f64;
    let mut top_k_accuracy = BTreeMap::new();
    let mut cumulative = 0;
    for (i, hits) in rank_hits.iter().enumerate() {
        cumulative += hits;
        top_k_accuracy.insert(i + 1, cumulative as f64 / n);
    }
    let trace: u64 = (0..k).map(|i| confusion[i][i]).sum();
    Ok(ClassifierEvalReport {
        n_samples: samples.len(),
        accuracy: trace as f64 / n,
        top_k_accuracy,
        confusion,
        expected_visits: rank_sum as f64 / n,
    })
}

pub fn eval_classifier<S: TemplateScorer + ?Sized>(
    scorer: &S,
    family: &TemplateFamily,
    n_per_template: usize,
    seed: u64,
) -> Result<ClassifierEvalReport> {
    if scorer.n_templates() != family.len() {
        return Err(Error::DimensionMismatch {
            expected: family.len(),
            actual: scorer.n_templates(),
        });
    }
    eval_on_samples(scorer, &classifier_eval_set(family, n_per_template, seed))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggesterTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub lr: f64,
    pub log_every: usize,
    /// Anneal the learning rate to zero along a half cosine.
    #[serde(default)]
    pub cosine_decay: bool,
}

impl Default for SuggesterTrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 64,
            seed: 0,
            hidden: vec![256, 256],
            lr: 1e-3,
            log_every: 100,
            cosine_decay: false,
        }
    }
}

/// Trains an encoder for `t` by maximizing reconstruction fidelity; the
/// curve holds the mean pre-update batch fidelity per logging window.
pub fn train_suggester(
    family: FamilyRef,
    t: &TemplateSpec,
    cfg: &SuggesterTrainConfig,
    on_log: impl FnMut(&CurvePoint),
) -> Result<(EncoderModel, Vec<CurvePoint>)> {
    check_loop(cfg.steps, cfg.batch_size, cfg.log_every)?;
    let mut init = sample_rng(cfg.seed, Stream::Init, 1);
    let mut enc = EncoderModel::new(family, t.clone(), &cfg.hidden, &mut init);
    let mut adam = AdamState::new(enc.n_params(), cfg.lr);
    let curve = run_curve(
        cfg.steps,
        cfg.log_every,
        |s| {
            let batch = gen_encoder_batch(t, cfg.batch_size, cfg.seed, (s * cfg.batch_size) as u64);
            adam.lr = scheduled_lr(cfg.lr, s, cfg.steps, cfg.cosine_decay);
            enc.train_step(&batch, &mut adam)
        },
        on_log,
    )?;
    Ok((enc, curve))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinedSample {
    pub fidelity: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityStats {
    pub mean: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

impl FidelityStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let pos = p * (v.len() - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            q10: q(0.1),
            median: q(0.5),
            q90: q(0.9),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuggesterEvalReport {
    pub template_id: usize,
    pub n_samples: usize,
    pub model_start: Vec<f64>,
    pub random_start: Vec<f64>,
    pub model_stats: FidelityStats,
    pub random_stats: FidelityStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<Vec<RefinedSample>>,
}

/// Start fidelities from encoder suggestions (projected onto template
/// angles) against uniformly random angles, optionally refined.
pub fn eval_suggester(
    enc: &EncoderModel,
    n_samples: usize,
    refine_cfg: Option<&RefineConfig>,
    seed: u64,
) -> Result<SuggesterEvalReport> {
    if n_samples == 0 {
        return Err(Error::Config("no evaluation samples".into()));
    }
    let t = &enc.template;
    let targets = encoder_samples(t, n_samples, seed, Stream::EncoderEval, 0);
    let mut model_start = Vec::with_capacity(n_samples);
    let mut random_start = Vec::with_capacity(n_samples);
    let mut refined = refine_cfg.map(|_| Vec::with_capacity(n_samples));
    for (i, u) in targets.iter().enumerate() {
        let p = slots_to_params(t, &enc.forward(u)?.slots)?;
        model_start.push(fidelity_at(t, p.as_slice(), u)?);
        let mut rng = sample_rng(seed, Stream::RandomStart, i as u64);
        let r = sample_params(t, &mut rng);
        random_start.push(fidelity_at(t, r.as_slice(), u)?);
        if let (Some(cfg), Some(out)) = (refine_cfg, refined.as_mut()) {
            let run = refine(t, &p, u, cfg)?;
            out.push(RefinedSample {
                fidelity: run.fidelity,
                iterations: run.iterations,
                converged: run.converged,
            });
        }
    }
    Ok(SuggesterEvalReport {
        template_id: t.id,
        n_samples,
        model_stats: FidelityStats::of(&model_start),
        random_stats: FidelityStats::of(&random_start),
        model_start,
        random_start,
        refined,
    })
}

/// `CX · (I ⊗ RZ(θ)) · CX`, the RZ on the CNOT target.
pub fn sweep_unitary(theta: f64) -> CMatrix {
    let cx = standard_gate(GateName::Cx, None).expect("fixed gate");
    let rz = CMatrix::identity(2).kron(&standard_gate(GateName::Rz, Some(theta)).expect("finite angle"));
    cx.matmul(&rz).and_then(|m| m.matmul(&cx)).expect("matching dims")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub probabilities: Vec<f64>,
    pub argmax: usize,
}

/// Classifier output for the sweep circuit on a uniform grid over [−π, π].
pub fn sweep_rz<S: TemplateScorer + ?Sized>(scorer: &S, resolution: usize) -> Result<Vec<SweepRow>> {
    if resolution < 2 {
        return Err(Error::Config("resolution must be at least 2".into()));
    }
    if scorer.n_qubits() != 2 {
        return Err(Error::UnsupportedQubits(scorer.n_qubits()));
    }
    let m = (resolution - 1) as f64;
    let thetas: Vec<f64> = (0..resolution).map(|k| PI * (2.0 * k as f64 - m) / m).collect();
    let us: Vec<CMatrix> = thetas.iter().map(|&t| sweep_unitary(t)).collect();
    let refs: Vec<&CMatrix> = us.iter().collect();
    let probs = scorer.probabilities(&refs)?;
    Ok(thetas
        .into_iter()
        .zip(probs)
        .map(|(theta, p)| SweepRow {
            theta,
            argmax: rank_by_probability(&p)[0],
            probabilities: p,
        })
        .collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// `step,<value_name>` rows.
pub fn write_curve_csv(path: impl AsRef<Path>, value_name: &str, curve: &[CurvePoint]) -> Result<()> {
    let mut s = format!("step,{value_name}\n");
    for p in curve {
        let _ = writeln!(s, "{},{}", p.step, p.value);
    }
    write_text(path.as_ref(), &s)
}

/// Flat `key,value` rows, then the confusion matrix as K rows of K counts.
pub fn write_classifier_report_csv(path: impl AsRef<Path>, report: &ClassifierEvalReport) -> Result<()> {
    let mut s = String::from("key,value\n");
    let _ = writeln!(s, "n_samples,{}", report.n_samples);
    let _ = writeln!(s, "accuracy,{}", report.accuracy);
    for (k, v) in &report.top_k_accuracy {
        let _ = writeln!(s, "top_{k},{v}");
    }
    let _ = writeln!(s, "expected_visits,{}", report.expected_visits);
    for (i, row) in report.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        let _ = writeln!(s, "confusion_{i},{}", cells.join(" "));
    }
    write_text(path.as_ref(), &s)
}

/// Confusion matrix with a header row of predicted ids.
pub fn write_confusion_csv(path: impl AsRef<Path>, confusion: &[Vec<u64>]) -> Result<()> {
    let k = confusion.len();
    let mut s = String::from("true");
    for j in 0..k {
        let _ = write!(s, ",pred_{j}");
    }
    s.push('\n');
    for (i, row) in confusion.iter().enumerate() {
        let _ = write!(s, "{i}");
        for c in row {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
    }
    write_text(path.as_ref(), &s)
}

pub fn write_suggester_csv(path: impl AsRef<Path>, report: &SuggesterEvalReport) -> Result<()> {
    let mut s = String::from("sample,model_start,random_start");
    if report.refined.is_some() {
        s.push_str(",refined,iterations,converged");
    }
    s.push('\n');
    for i in 0..report.n_samples {
        let _ = write!(s, "{i},{},{}", report.model_start[i], report.random_start[i]);
        if let Some(r) = &report.refined {
            let _ = write!(s, ",{},{},{}", r[i].fidelity, r[i].iterations, r[i].converged);
        }
        s.push('\n');
    }
    write_text(path.as_ref(), &s)
}

/// `theta_over_pi,p0..p{K-1},argmax` rows.
pub fn write_sweep_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let k = rows.first().map_or(0, |r| r.probabilities.len());
    let mut s = String::from("theta_over_pi");
    for j in 0..k {
        let _ = write!(s, ",p{j}");
    }
    s.push_str(",argmax\n");
    for r in rows {
        let _ = write!(s, "{}", r.theta / PI);
        for p in &r.probabilities {
            let _ = write!(s, ",{p}");
        }
        let _ = writeln!(s, ",{}", r.argmax);
    }
    write_text(path.as_ref(), &s)
}

pub fn write_trace_csv(path: impl AsRef<Path>, trace: &[TracePoint]) -> Result<()> {
    let mut s = String::from("iteration,error\n");
    for p in trace {
        let _ = writeln!(s, "{},{}", p.iteration, p.error);
    }
    write_text(path.as_ref(), &s)
}
