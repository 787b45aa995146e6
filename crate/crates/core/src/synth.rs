//! Gradient refinement, the classify → suggest → refine pipeline, and the
//! minimal-CZ ladder oracle.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradsim::{fidelity_at, fidelity_grad_angles};
use crate::neural::{AdamState, EncoderModel};
use crate::qmat::CMatrix;
use crate::tasks::{rank_by_probability, sample_rng, Stream, TemplateScorer};
use crate::templates::{sample_params, slots_to_params, ParamVector, TemplateFamily, TemplateSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub max_iters: usize,
    /// Stop once `1 − F` is at or below this.
    pub target_error: f64,
    pub lr: f64,
    /// The learning rate is multiplied by `decay_factor` every `decay_every` iterations.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub log_every: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            max_iters: 5000,
            target_error: 1e-8,
            lr: 0.05,
            decay_every: 1000,
            decay_factor: 0.5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            log_every: 10,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.target_error > 0.0 && self.target_error < 1.0) {
            return Err(Error::Config("target_error must lie in (0, 1)".into()));
        }
        if !(self.lr > 0.0) || self.decay_every == 0 || self.log_every == 0 {
            return Err(Error::Config("lr, decay_every and log_every must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineOutcome {
    /// Best iterate seen.
    pub params: ParamVector,
    pub fidelity: f64,
    pub start_fidelity: f64,
    /// Number of optimizer updates performed.
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TracePoint>,
}

/// Adam ascent on fidelity from `p0`, reporting the best iterate.
pub fn refine(t: &TemplateSpec, p0: &ParamVector, target: &CMatrix, cfg: &RefineConfig) -> Result<RefineOutcome> {
    cfg.validate()?;
    if p0.len() != t.param_count() {
        return Err(Error::ParamLength {
            expected: t.param_count(),
            actual: p0.len(),
        });
    }
    let mut p = p0.clone();
    let mut adam = AdamState::new(p.len(), cfg.lr);
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.eps = cfg.eps;

    let mut trace = Vec::new();
    let mut best = p.clone();
    let mut best_f = f64::NEG_INFINITY;
    let mut start_f = 0.0;
    let mut iterations = 0;
    let mut neg_grad = vec![0.0; p.len()];
    loop {
        let g = fidelity_grad_angles(t, &p, target)?;
        let err = 1.0 - g.fidelity;
        if iterations == 0 {
            start_f = g.fidelity;
        }
        if g.fidelity > best_f {
            best_f = g.fidelity;
            best.0.copy_from_slice(&p.0);
        }
        let done = err <= cfg.target_error || iterations == cfg.max_iters;
        if iterations % cfg.log_every == 0 || done {
            trace.push(TracePoint { iteration: iterations, error: err });
        }
        if done {
            break;
        }
        adam.lr = cfg.lr * cfg.decay_factor.powi((iterations / cfg.decay_every) as i32);
        for (n, d) in neg_grad.iter_mut().zip(&g.grad) {
            *n = -d;
        }
        adam.update(&mut p.0, &neg_grad);
        iterations += 1;
    }
    Ok(RefineOutcome {
        converged: 1.0 - best_f <= cfg.target_error,
        params: best,
        fidelity: best_f,
        start_fidelity: start_f,
        iterations,
        trace,
    })
}

/// Template ids by descending classifier probability, ties broken by id,
/// optionally dropping templates with more than `max_cz` CZ gates.
pub fn rank_templates<S: TemplateScorer + ?Sized>(
    scorer: &S,
    family: &TemplateFamily,
    target: &CMatrix,
    max_cz: Option<usize>,
) -> Result<Vec<usize>> {
    let probs = scorer.probabilities(&[target])?.pop().unwrap_or_default();
    if probs.len() != family.len() {
        return Err(Error::DimensionMismatch {
            expected: family.len(),
            actual: probs.len(),
        });
    }
    Ok(rank_by_probability(&probs)
        .into_iter()
        .map(|pos| &family.templates[pos])
        .filter(|t| max_cz.map_or(true, |m| t.cz_count() <= m))
        .map(|t| t.id)
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub refine: RefineConfig,
    /// Starts per template: the suggested one (if any) plus random restarts.
    pub restarts: usize,
    pub max_cz: Option<usize>,
    /// Stop after this many templates even if more remain in the ranking.
    pub max_templates: Option<usize>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            refine: RefineConfig::default(),
            restarts: 3,
            max_cz: None,
            max_templates: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TemplateVisit {
    pub template_id: usize,
    pub cz_count: usize,
    /// Fidelity of the first start tried (the suggested one when available).
    pub start_fidelity: f64,
    /// Best fidelity after refinement over all starts.
    pub final_fidelity: f64,
    /// Optimizer iterations summed over starts.
    pub iterations: usize,
    pub starts: usize,
    pub suggested: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub classify_s: f64,
    pub suggest_s: f64,
    pub refine_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub success: bool,
    pub template_id: Option<usize>,
    pub cz_count: Option<usize>,
    pub cz_sequence: Option<Vec<(usize, usize)>>,
    pub params: Option<ParamVector>,
    pub fidelity: f64,
    pub target_error: f64,
    pub templates_visited: Vec<TemplateVisit>,
    /// Wall-clock time per stage; not serialized so reports stay reproducible.
    #[serde(skip)]
    pub timings: StageTimings,
    /// Refinement trace of the best run on the chosen (or last) template.
    #[serde(skip)]
    pub trace: Vec<TracePoint>,
}

/// The three-stage pipeline over one template family.
pub struct Synthesizer<'a, S: TemplateScorer + ?Sized> {
    family: &'a TemplateFamily,
    classifier: &'a S,
    suggesters: BTreeMap<usize, &'a EncoderModel>,
}

impl<'a, S: TemplateScorer + ?Sized> Synthesizer<'a, S> {
    /// Checks that the classifier and every suggester belong to `family`.
    pub fn new(family: &'a TemplateFamily, classifier: &'a S, suggesters: impl IntoIterator<Item = &'a EncoderModel>) -> Result<Self> {
        let hash = family.hash();
        if classifier.n_templates() != family.len() || classifier.n_qubits() != family.n_qubits {
            return Err(Error::FamilyMismatch {
                expected: format!("{} templates on {} qubits", family.len(), family.n_qubits),
                found: format!("{} templates on {} qubits", classifier.n_templates(), classifier.n_qubits()),
            });
        }
        if let Some(h) = classifier.family_hash() {
            if h != hash {
                return Err(Error::FamilyMismatch {
                    expected: hash,
                    found: h.into(),
                });
            }
        }
        let mut map = BTreeMap::new();
        for enc in suggesters {
            if enc.family.hash != hash {
                return Err(Error::FamilyMismatch {
                    expected: hash,
                    found: enc.family.hash.clone(),
                });
            }
            match family.get(enc.template.id) {
                Some(t) if *t == enc.template => {}
                _ => {
                    return Err(Error::InvalidTemplate(format!(
                        "suggester template {} is not in the family",
                        enc.template.id
                    )))
                }
            }
            map.insert(enc.template.id, enc);
        }
        Ok(Self {
            family,
            classifier,
            suggesters: map,
        })
    }

    pub fn synthesize(&self, target: &CMatrix, cfg: &SynthConfig) -> Result<SynthesisReport> {
        cfg.refine.validate()?;
        if cfg.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        let dim = 1usize << self.family.n_qubits;
        if target.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: target.dim(),
            });
        }
        let mut timings = StageTimings::default();
        let clock = Instant::now();
        let mut ranking = rank_templates(self.classifier, self.family, target, cfg.max_cz)?;
        if let Some(m) = cfg.max_templates {
            ranking.truncate(m);
        }
        timings.classify_s = clock.elapsed().as_secs_f64();

        let mut visits = Vec::new();
        let mut best: Option<(usize, RefineOutcome)> = None;
        for &id in &ranking {
            let t = self.family.get(id).expect("ranked ids come from the family");
            let mut starts = Vec::with_capacity(cfg.restarts);
            let suggested = match self.suggesters.get(&id) {
                Some(enc) => {
                    let c = Instant::now();
                    let out = enc.forward(target)?;
                    starts.push(slots_to_params(t, &out.slots)?);
                    timings.suggest_s += c.elapsed().as_secs_f64();
                    true
                }
                None => false,
            };
            let mut rng = sample_rng(cfg.seed, Stream::SynthRestart, id as u64);
            while starts.len() < cfg.restarts {
                starts.push(sample_params(t, &mut rng));
            }

            let c = Instant::now();
            let mut visit = TemplateVisit {
                template_id: id,
                cz_count: t.cz_count(),
                start_fidelity: 0.0,
                final_fidelity: 0.0,
                iterations: 0,
                starts: 0,
                suggested,
            };
            let mut template_best: Option<RefineOutcome> = None;
            for p0 in &starts {
                let run = refine(t, p0, target, &cfg.refine)?;
                if visit.starts == 0 {
                    visit.start_fidelity = run.start_fidelity;
                }
                visit.starts += 1;
                visit.iterations += run.iterations;
                let converged = run.converged;
                if template_best.as_ref().map_or(true, |b| run.fidelity > b.fidelity) {
                    template_best = Some(run);
                }
                if converged {
                    break;
                }
            }
            timings.refine_s += c.elapsed().as_secs_f64();
            let run = template_best.expect("at least one start");
            visit.final_fidelity = run.fidelity;
            visits.push(visit);
            let converged = run.converged;
            if converged || best.as_ref().map_or(true, |(_, b)| run.fidelity > b.fidelity) {
                best = Some((id, run));
            }
            if converged {
                break;
            }
        }

        let Some((id, run)) = best else {
            return Err(Error::Config("no template left after filtering".into()));
        };
        let t = self.family.get(id).expect("ranked ids come from the family");
        let success = run.converged;
        Ok(SynthesisReport {
            success,
            template_id: success.then_some(id),
            cz_count: success.then(|| t.cz_count()),
            cz_sequence: success.then(|| t.cz_sequence.clone()),
            params: success.then(|| run.params.clone()),
            fidelity: run.fidelity,
            target_error: cfg.refine.target_error,
            templates_visited: visits,
            timings,
            trace: run.trace,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub restarts: usize,
    pub threshold: f64,
    pub max_cz: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            restarts: 20,
            threshold: 1.0 - 1e-6,
            max_cz: 3,
            seed: 0,
            max_iters: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRung {
    pub cz_count: usize,
    pub best_fidelity: f64,
    pub best_template: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub min_cz: usize,
    pub rungs: Vec<OracleRung>,
}

/// Tries templates in increasing CZ count, with `restarts` random starts
/// each, and returns the first count whose best fidelity clears the threshold.
pub fn oracle_ladder(target: &CMatrix, n_qubits: usize, cfg: &OracleConfig) -> Result<OracleResult> {
    if cfg.restarts == 0 || !(cfg.threshold > 0.0 && cfg.threshold < 1.0) {
        return Err(Error::Config("oracle needs restarts ≥ 1 and a threshold in (0, 1)".into()));
    }
    let templates = crate::templates::enumerate_templates(n_qubits, cfg.max_cz)?;
    let dim = 1usize << n_qubits;
    if target.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: target.dim(),
        });
    }
    let refine_cfg = RefineConfig {
        max_iters: cfg.max_iters,
        target_error: 1.0 - cfg.threshold,
        log_every: cfg.max_iters.max(1),
        ..RefineConfig::default()
    };
    let mut rungs = Vec::new();
    let mut overall = 0.0f64;
    for k in 0..=cfg.max_cz {
        let mut rung = OracleRung {
            cz_count: k,
            best_fidelity: f64::NEG_INFINITY,
            best_template: 0,
        };
        'templates: for t in templates.iter().filter(|t| t.cz_count() == k) {
            let mut rng = sample_rng(cfg.seed, Stream::OracleRestart, t.id as u64);
            for _ in 0..cfg.restarts {
                let run = refine(t, &sample_params(t, &mut rng), target, &refine_cfg)?;
                if run.fidelity > rung.best_fidelity {
                    rung.best_fidelity = run.fidelity;
                    rung.best_template = t.id;
                }
                if rung.best_fidelity >= cfg.threshold {
                    break 'templates;
                }
            }
        }
        overall = overall.max(rung.best_fidelity);
        let hit = rung.best_fidelity >= cfg.threshold;
        rungs.push(rung);
        if hit {
            return Ok(OracleResult { min_cz: k, rungs });
        }
    }
    Err(Error::NotRepresentable { best_fidelity: overall })
}

/// Smallest CZ count at which the family reaches the oracle threshold.
pub fn oracle_min_cz(target: &CMatrix, n_qubits: usize, cfg: &OracleConfig) -> Result<usize> {
    oracle_ladder(target, n_qubits, cfg).map(|r| r.min_cz)
}

/// Fidelity of a finished report on its template, recomputed from scratch.
pub fn report_fidelity(family: &TemplateFamily, report: &SynthesisReport, target: &CMatrix) -> Result<Option<f64>> {
    match (report.template_id, &report.params) {
        (Some(id), Some(p)) => {
            let t = family
                .get(id)
                .ok_or_else(|| Error::InvalidTemplate(format!("unknown template {id}")))?;
            fidelity_at(t, p.as_slice(), target).map(Some)
        }
        _ => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::{standard_gate, GateName};
    use crate::tasks::FixedScorer;
    use crate::templates::assemble;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zz(theta: f64) -> CMatrix {
        let cx = standard_gate(GateName::Cx, None).unwrap();
        let rz = CMatrix::identity(2).kron(&standard_gate(GateName::Rz, Some(theta)).unwrap());
        cx.matmul(&rz).unwrap().matmul(&cx).unwrap()
    }

    #[test]
    fn refine_stops_immediately_at_the_optimum() {
        let fam = TemplateFamily::new(2, 3).unwrap();
        let t = &fam.templates[2];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = sample_params(t, &mut rng);
        let target = assemble(t, &p).unwrap();
        let out = refine(t, &p, &target, &RefineConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert!(out.converged);
        assert_eq!(out.params, p);
    }

    #[test]
    fn refine_converges_and_trace_is_exact() {
        let fam = TemplateFamily::new(2, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut converged = 0;
        for id in 0..4 {
            let t = &fam.templates[id];
            let target = assemble(t, &sample_params(t, &mut rng)).unwrap();
            let p0 = sample_params(t, &mut rng);
            let cfg = RefineConfig::default();
            let out = refine(t, &p0, &target, &cfg).unwrap();
            assert!(out.fidelity >= out.start_fidelity - 1e-12);
            assert!(out.iterations <= cfg.max_iters);
            converged += usize::from(out.converged);
            assert!(out.trace.len() >= 2);
        }
        assert!(converged >= 3, "only {converged} of 4 converged");
    }

    #[test]
    fn trace_errors_are_actual_errors() {
        let fam = TemplateFamily::new(2, 3).unwrap();
        let t = &fam.templates[1];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let target = assemble(t, &sample_params(t, &mut rng)).unwrap();
        let p0 = sample_params(t, &mut rng);
        let cfg = RefineConfig {
            max_iters: 300,
            log_every: 50,
            ..RefineConfig::default()
        };
        let out = refine(t, &p0, &target, &cfg).unwrap();
        // replay the optimizer to the logged iterates
        let mut p = p0.clone();
        let mut adam = AdamState::new(p.len(), cfg.lr);
        let mut it = 0;
        for point in &out.trace {
            while it < point.iteration {
                let g = fidelity_grad_angles(t, &p, &target).unwrap();
                adam.lr = cfg.lr * cfg.decay_factor.powi((it / cfg.decay_every) as i32);
                let neg: Vec<f64> = g.grad.iter().map(|x| -x).collect();
                adam.update(&mut p.0, &neg);
                it += 1;
            }
            let f = fidelity_at(t, p.as_slice(), &target).unwrap();
            assert!(((1.0 - f) - point.error).abs() <= 1e-12);
        }
    }

    #[test]
    fn refine_rejects_bad_input() {
        let t = TemplateSpec::from_sequence(2, vec![]).unwrap();
        let cfg = RefineConfig::default();
        assert!(refine(&t, &ParamVector(vec![0.0; 5]), &CMatrix::identity(4), &cfg).is_err());
        assert!(refine(&t, &ParamVector(vec![0.0; 6]), &CMatrix::identity(8), &cfg).is_err());
        let bad = RefineConfig {
            target_error: 0.0,
            ..cfg
        };
        assert!(refine(&t, &ParamVector(vec![0.0; 6]), &CMatrix::identity(4), &bad).is_err());
    }

    #[test]
    fn ranking_filters_by_cost() {
        let fam = TemplateFamily::new(2, 3).unwrap();
        let stub = FixedScorer::favoring(&fam, 3);
        assert_eq!(rank_templates(&stub, &fam, &CMatrix::identity(4), None).unwrap(), vec![3, 0, 1, 2]);
        assert_eq!(rank_templates(&stub, &fam, &CMatrix::identity(4), Some(0)).unwrap(), vec![0]);
    }

    #[test]
    fn synthesize_locals_and_cz() {
        let fam = TemplateFamily::new(2, 3).unwrap();
        let stub = FixedScorer::favoring(&fam, 0);
        let synth = Synthesizer::new(&fam, &stub, []).unwrap();
        let cfg = SynthConfig::default();
        let h = standard_gate(GateName::H, None).unwrap();
        let local = h.kron(&standard_gate(GateName::Rz, Some(0.4)).unwrap());
        let r = synth.synthesize(&local, &cfg).unwrap();
        assert!(r.success);
        assert_eq!(r.cz_count, Some(0));
        assert_eq!(r.templates_visited.len(), 1);

        let cz = standard_gate(GateName::Cz, None).unwrap();
        let r = synth.synthesize(&cz, &cfg).unwrap();
        assert!(r.success);
        assert_eq!(r.cz_count, Some(1));
        assert_eq!(r.templates_visited[0].template_id, 0);
        assert!(r.templates_visited[0].final_fidelity <= 0.5 + 1e-9);
        let ids: Vec<usize> = r.templates_visited.iter().map(|v| v.template_id).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!(r.fidelity >= 1.0 - 1e-8);
        let again = report_fidelity(&fam, &r, &cz).unwrap().unwrap();
        assert_eq!(again, r.fidelity);
    }

    #[test]
    fn exhausted_synthesis_is_a_structured_failure() {
        let fam = TemplateFamily::new(2, 3).unwrap();
        let stub = FixedScorer::favoring(&fam, 0);
        let synth = Synthesizer::new(&fam, &stub, []).unwrap();
        let cfg = SynthConfig {
            max_cz: Some(0),
            restarts: 2,
            ..SynthConfig::default()
        };
        let cz = standard_gate(GateName::Cz, None).unwrap();
        let r = synth.synthesize(&cz, &cfg).unwrap();
        assert!(!r.success);
        assert!(r.template_id.is_none() && r.params.is_none());
        assert_eq!(r.templates_visited.len(), 1);
        assert_eq!(r.templates_visited[0].starts, 2);
    }

    #[test]
    fn oracle_ladder_two_qubit_cases() {
        let cfg = OracleConfig::default();
        let aux = [
            (CMatrix::identity(4), 0),
            (standard_gate(GateName::Cz, None).unwrap(), 1),
            (zz(std::f64::consts::FRAC_PI_2), 1),
            (zz(0.3 * std::f64::consts::PI), 2),
        ];
        for (u, k) in aux {
            assert_eq!(oracle_min_cz(&u, 2, &cfg).unwrap(), k);
        }
        let capped = OracleConfig { max_cz: 1, ..cfg };
        let swap = standard_gate(GateName::Swap, None).unwrap();
        assert!(matches!(oracle_min_cz(&swap, 2, &capped), Err(Error::NotRepresentable { .. })));
    }
}
