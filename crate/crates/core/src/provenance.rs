//! Shared-ownership watermarking on a synthetic linear classifier.
//!
//! Each owner keeps a private trigger set (random inputs with arbitrary
//! labels) and registers a small subset with a sealed registry. The registry
//! fuses one registered trigger per owner into each joint-watermark sample,
//! labelled with the normalized histogram of the constituent labels. A
//! suspect model is judged ours when its outputs on the joint watermark sit
//! close to those soft labels, and only after every owner has proven
//! knowledge of its registered triggers.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ledger::codec::{Decoder, Encoder};
use crate::ledger::{Canonical, CodecError, Digest};
use crate::rng;

pub type ClientId = u32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProvenanceError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("embedding failed after {steps} steps (reached {achieved:.4})")]
    EmbeddingFailed { steps: usize, achieved: f64 },
    #[error("registry is missing client {0}")]
    IncompleteRegistry(ClientId),
    #[error("client {0} is not a registered owner")]
    UnknownClient(ClientId),
    #[error("client {0} already registered")]
    AlreadyRegistered(ClientId),
    #[error("registry is sealed")]
    Sealed,
    #[error("registry is not sealed")]
    NotSealed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WatermarkConfig {
    pub dim: usize,
    pub classes: usize,
    pub trigger_samples: usize,
    pub upload: usize,
    pub fused: usize,
    pub max_steps: usize,
    pub embed_lr: f64,
    /// Main-task samples replayed during fine-tuning.
    pub replay: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    pub center_scale: f64,
    pub blob_noise: f64,
    pub main_steps: usize,
    pub main_lr: f64,
}

impl Default for WatermarkConfig {
    fn default() -> Self {
        WatermarkConfig {
            dim: 32,
            classes: 10,
            trigger_samples: 100,
            upload: 10,
            fused: 20,
            max_steps: 5000,
            embed_lr: 1.0,
            replay: 500,
            train_samples: 500,
            test_samples: 1000,
            center_scale: 2.5,
            blob_noise: 0.5,
            main_steps: 1000,
            main_lr: 0.5,
        }
    }
}

impl WatermarkConfig {
    pub fn validate(&self) -> Result<(), ProvenanceError> {
        let counts = [
            self.dim,
            self.classes,
            self.trigger_samples,
            self.upload,
            self.fused,
            self.train_samples,
            self.test_samples,
        ];
        if counts.contains(&0) || self.upload > self.trigger_samples || self.classes < 2 || !(self.embed_lr > 0.0) {
            return Err(ProvenanceError::InvalidInput(format!("bad watermark config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyThresholds {
    pub s_min: f64,
    pub delta_div: f64,
    pub eps_gap: f64,
}

impl Default for VerifyThresholds {
    fn default() -> Self {
        VerifyThresholds { s_min: 0.95, delta_div: 0.1, eps_gap: 0.3 }
    }
}

impl VerifyThresholds {
    pub fn validate(&self) -> Result<(), ProvenanceError> {
        if self.s_min > 0.0 && self.s_min <= 1.0 && self.delta_div > 0.0 && self.eps_gap > 0.0 {
            Ok(())
        } else {
            Err(ProvenanceError::InvalidInput(format!("bad thresholds {self:?}")))
        }
    }
}

/// Linear softmax classifier without bias; weights are `classes x dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub trained: bool,
}

impl Classifier {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        Classifier { classes, dim, weights: vec![0.0; classes * dim], trained: false }
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        let z: Vec<f64> =
            self.weights.chunks(self.dim).map(|row| row.iter().zip(x).map(|(w, v)| w * v).sum()).collect();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probs(x);
        (0..p.len()).fold(0, |best, k| if p[k] > p[best] { k } else { best })
    }

    pub fn accuracy(&self, samples: &[TriggerSample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        samples.iter().filter(|s| self.predict(&s.input) == s.label).count() as f64 / samples.len() as f64
    }

    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.u32(self.classes as u32).u32(self.dim as u32);
        for w in &self.weights {
            e.f64(*w);
        }
        Digest::of_parts(&[b"socialfl/model", &e.finish()])
    }

    /// Adds the mean soft-target cross-entropy gradient of `batch`, scaled by `scale`, into `grad`.
    fn accumulate(&self, batch: &[(&[f64], Target<'_>)], scale: f64, grad: &mut [f64]) {
        if batch.is_empty() {
            return;
        }
        let k = scale / batch.len() as f64;
        for (x, t) in batch {
            let p = self.probs(x);
            for l in 0..self.classes {
                let r = k * (p[l] - t.at(l));
                if r != 0.0 {
                    for (g, v) in grad[l * self.dim..(l + 1) * self.dim].iter_mut().zip(x.iter()) {
                        *g += r * v;
                    }
                }
            }
        }
    }

    fn step(&mut self, grad: &[f64], lr: f64) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
    }
}

#[derive(Clone, Copy)]
enum Target<'a> {
    Hard(usize),
    Soft(&'a [f64]),
}

impl Target<'_> {
    fn at(&self, l: usize) -> f64 {
        match self {
            Target::Hard(y) => (l == *y) as u8 as f64,
            Target::Soft(p) => p[l],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriggerSample {
    pub input: Vec<f64>,
    pub label: usize,
}

/// Gaussian-blob classification task standing in for the real workload.
#[derive(Clone, Debug)]
pub struct MainTask {
    pub train: Vec<TriggerSample>,
    pub test: Vec<TriggerSample>,
}

impl MainTask {
    pub fn generate(seed: u64, cfg: &WatermarkConfig) -> Self {
        let mut r = rng::stream(seed, "main_task", 0, 0);
        let centers: Vec<Vec<f64>> = (0..cfg.classes)
            .map(|_| (0..cfg.dim).map(|_| cfg.center_scale * r.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        let draw = |n: usize, r: &mut rng::SimRng| -> Vec<TriggerSample> {
            (0..n)
                .map(|_| {
                    let label = r.random_range(0..cfg.classes);
                    let input = centers[label]
                        .iter()
                        .map(|c| c + cfg.blob_noise * r.sample::<f64, _>(StandardNormal))
                        .collect();
                    TriggerSample { input, label }
                })
                .collect()
        };
        let train = draw(cfg.train_samples, &mut r);
        let test = draw(cfg.test_samples, &mut r);
        MainTask { train, test }
    }

    /// Full-batch gradient descent from zero weights.
    pub fn train_model(&self, cfg: &WatermarkConfig) -> Classifier {
        let mut m = Classifier::zeros(cfg.classes, cfg.dim);
        let batch: Vec<(&[f64], Target)> =
            self.train.iter().map(|s| (s.input.as_slice(), Target::Hard(s.label))).collect();
        let mut grad = vec![0.0; m.weights.len()];
        for _ in 0..cfg.main_steps {
            grad.iter_mut().for_each(|g| *g = 0.0);
            m.accumulate(&batch, 1.0, &mut grad);
            m.step(&grad, cfg.main_lr);
        }
        m.trained = true;
        m
    }

    fn replay(&self, cfg: &WatermarkConfig) -> Vec<(&[f64], Target<'_>)> {
        self.train.iter().take(cfg.replay).map(|s| (s.input.as_slice(), Target::Hard(s.label))).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrivateWatermark {
    pub owner: ClientId,
    pub samples: Vec<TriggerSample>,
    pub upload_subset: Vec<usize>,
}

impl PrivateWatermark {
    pub fn uploaded(&self) -> Vec<TriggerSample> {
        self.upload_subset.iter().map(|i| self.samples[*i].clone()).collect()
    }
}

pub fn gen_private_watermark(client: ClientId, seed: u64, cfg: &WatermarkConfig) -> PrivateWatermark {
    let mut r = rng::stream(seed, "private_watermark", client as u64, 0);
    let samples = (0..cfg.trigger_samples)
        .map(|_| TriggerSample {
            input: (0..cfg.dim).map(|_| r.random_range(-1.0..=1.0)).collect(),
            label: r.random_range(0..cfg.classes),
        })
        .collect();
    let mut idx: Vec<usize> = (0..cfg.trigger_samples).collect();
    idx.shuffle(&mut r);
    idx.truncate(cfg.upload);
    idx.sort();
    PrivateWatermark { owner: client, samples, upload_subset: idx }
}

/// Fine-tunes on the triggers (with main-task replay) until trigger
/// accuracy reaches 95%.
pub fn embed_watermark(
    model: &Classifier,
    samples: &[TriggerSample],
    task: &MainTask,
    cfg: &WatermarkConfig,
) -> Result<Classifier, ProvenanceError> {
    let mut m = model.clone();
    if samples.is_empty() {
        return Ok(m);
    }
    let replay = task.replay(cfg);
    let triggers: Vec<(&[f64], Target)> = samples.iter().map(|s| (s.input.as_slice(), Target::Hard(s.label))).collect();
    let mut grad = vec![0.0; m.weights.len()];
    for _ in 0..cfg.max_steps {
        if m.accuracy(samples) >= 0.95 {
            return Ok(m);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        m.accumulate(&replay, 1.0, &mut grad);
        m.accumulate(&triggers, 1.0, &mut grad);
        m.step(&grad, cfg.embed_lr);
    }
    let achieved = m.accuracy(samples);
    if achieved >= 0.95 {
        Ok(m)
    } else {
        Err(ProvenanceError::EmbeddingFailed { steps: cfg.max_steps, achieved })
    }
}

/// Registered trigger subsets, reachable only through fusion and scoring.
#[derive(Clone, Debug)]
pub struct WatermarkRegistry {
    owners: BTreeSet<ClientId>,
    uploads: BTreeMap<ClientId, Vec<TriggerSample>>,
    sealed: bool,
}

impl WatermarkRegistry {
    pub fn new(owners: impl IntoIterator<Item = ClientId>) -> Self {
        WatermarkRegistry { owners: owners.into_iter().collect(), uploads: BTreeMap::new(), sealed: false }
    }

    pub fn register(&mut self, wm: &PrivateWatermark) -> Result<(), ProvenanceError> {
        if self.sealed {
            return Err(ProvenanceError::Sealed);
        }
        if !self.owners.contains(&wm.owner) {
            return Err(ProvenanceError::UnknownClient(wm.owner));
        }
        if self.uploads.contains_key(&wm.owner) {
            return Err(ProvenanceError::AlreadyRegistered(wm.owner));
        }
        self.uploads.insert(wm.owner, wm.uploaded());
        Ok(())
    }

    pub fn seal(&mut self) {
        self.sealed = true;
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn owners(&self) -> impl Iterator<Item = ClientId> + '_ {
        self.owners.iter().copied()
    }

    fn complete(&self) -> Result<(), ProvenanceError> {
        if !self.sealed {
            return Err(ProvenanceError::NotSealed);
        }
        match self.owners.iter().find(|o| !self.uploads.contains_key(o)) {
            Some(o) => Err(ProvenanceError::IncompleteRegistry(*o)),
            None => Ok(()),
        }
    }

    /// Registers every watermark and seals.
    pub fn from_watermarks(wms: &[PrivateWatermark]) -> Result<Self, ProvenanceError> {
        let mut reg = WatermarkRegistry::new(wms.iter().map(|w| w.owner));
        for w in wms {
            reg.register(w)?;
        }
        reg.seal();
        Ok(reg)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointWatermark {
    /// `(input, soft_label)` pairs.
    pub fused: Vec<(Vec<f64>, Vec<f64>)>,
}

impl JointWatermark {
    pub fn digest(&self) -> Digest {
        let mut e = Encoder::new();
        e.seq_len(self.fused.len());
        for (x, p) in &self.fused {
            x.iter().chain(p).for_each(|v| {
                e.f64(*v);
            });
        }
        Digest::of_parts(&[b"socialfl/joint", &e.finish()])
    }

    /// Mean L1 distance between the model's output distribution and the soft labels.
    pub fn gap(&self, model: &Classifier) -> f64 {
        if self.fused.is_empty() {
            return 0.0;
        }
        let total: f64 =
            self.fused.iter().map(|(x, t)| model.probs(x).iter().zip(t).map(|(p, q)| (p - q).abs()).sum::<f64>()).sum();
        total / self.fused.len() as f64
    }
}

/// Normalized histogram of hard labels.
pub fn soft_label(labels: &[usize], classes: usize) -> Vec<f64> {
    let mut c = vec![0.0; classes];
    for l in labels {
        c[*l] += 1.0;
    }
    let n = labels.len() as f64;
    c.iter_mut().for_each(|v| *v /= n);
    c
}

/// Each fused sample mixes one registered trigger per owner with
/// Dirichlet(1) weights, rescaled to norm `sqrt(dim)`.
pub fn fuse_joint(
    registry: &WatermarkRegistry,
    seed: u64,
    m: usize,
    classes: usize,
) -> Result<JointWatermark, ProvenanceError> {
    registry.complete()?;
    let mut fused = Vec::with_capacity(m);
    for j in 0..m {
        let mut r = rng::stream(seed, "fuse_joint", 0, j as u64);
        let mut x: Vec<f64> = Vec::new();
        let mut labels = Vec::with_capacity(registry.uploads.len());
        let mut wsum = 0.0;
        for set in registry.uploads.values() {
            let w: f64 = r.sample(Exp1);
            let s = &set[r.random_range(0..set.len())];
            if x.is_empty() {
                x = vec![0.0; s.input.len()];
            }
            for (a, b) in x.iter_mut().zip(&s.input) {
                *a += w * b;
            }
            wsum += w;
            labels.push(s.label);
        }
        let norm = x.iter().map(|v| (v / wsum) * (v / wsum)).sum::<f64>().sqrt();
        let target = (x.len() as f64).sqrt();
        let x: Vec<f64> = x.iter().map(|v| v / wsum / norm * target).collect();
        fused.push((x, soft_label(&labels, classes)));
    }
    Ok(JointWatermark { fused })
}

/// Fine-tunes towards the soft labels (with main-task replay) until the
/// gap drops below `target_gap`.
pub fn embed_joint(
    model: &Classifier,
    joint: &JointWatermark,
    task: &MainTask,
    cfg: &WatermarkConfig,
    target_gap: f64,
) -> Result<Classifier, ProvenanceError> {
    let mut m = model.clone();
    if joint.fused.is_empty() {
        return Ok(m);
    }
    let replay = task.replay(cfg);
    let soft: Vec<(&[f64], Target)> = joint.fused.iter().map(|(x, t)| (x.as_slice(), Target::Soft(t))).collect();
    let mut grad = vec![0.0; m.weights.len()];
    for _ in 0..cfg.max_steps {
        if joint.gap(&m) < target_gap {
            return Ok(m);
        }
        grad.iter_mut().for_each(|g| *g = 0.0);
        m.accumulate(&replay, 1.0, &mut grad);
        m.accumulate(&soft, 1.0, &mut grad);
        m.step(&grad, cfg.embed_lr);
    }
    let achieved = joint.gap(&m);
    if achieved < target_gap {
        Ok(m)
    } else {
        Err(ProvenanceError::EmbeddingFailed { steps: cfg.max_steps, achieved })
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return v.to_vec();
    }
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Each submitted vector, in order, claims the most similar registered
/// vector not yet claimed. The score is the summed cosine over the number
/// of registered vectors.
pub fn similarity_score(submitted: &[Vec<f64>], registered: &[TriggerSample]) -> f64 {
    if registered.is_empty() {
        return 0.0;
    }
    let reg: Vec<Vec<f64>> = registered.iter().map(|s| normalized(&s.input)).collect();
    let mut free: Vec<bool> = vec![true; reg.len()];
    let mut total = 0.0;
    for s in submitted {
        let s = normalized(s);
        let best =
            (0..reg.len()).filter(|j| free[*j]).map(|j| (j, dot(&s, &reg[j]))).max_by(|a, b| a.1.total_cmp(&b.1));
        match best {
            Some((j, c)) => {
                free[j] = false;
                total += c;
            }
            None => break,
        }
    }
    total / reg.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub scores: BTreeMap<ClientId, f64>,
    /// Smallest distance between normalized submissions of different
    /// clients; `None` when the check was skipped.
    pub min_cross_distance: Option<f64>,
    pub collusion: bool,
}

pub fn score_submissions(
    registry: &WatermarkRegistry,
    submissions: &BTreeMap<ClientId, Vec<Vec<f64>>>,
    th: &VerifyThresholds,
) -> Result<ScoreReport, ProvenanceError> {
    let mut scores = BTreeMap::new();
    for (c, sub) in submissions {
        let reg = registry.uploads.get(c).ok_or(ProvenanceError::UnknownClient(*c))?;
        scores.insert(*c, similarity_score(sub, reg));
    }
    if scores.values().any(|s| *s < th.s_min) {
        return Ok(ScoreReport { scores, min_cross_distance: None, collusion: true });
    }
    let tagged: Vec<(ClientId, Vec<f64>)> =
        submissions.iter().flat_map(|(c, vs)| vs.iter().map(move |v| (*c, normalized(v)))).collect();
    let mut min = f64::INFINITY;
    for (i, (ca, a)) in tagged.iter().enumerate() {
        for (cb, b) in &tagged[i + 1..] {
            if ca != cb {
                let d = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                min = min.min(d);
            }
        }
    }
    Ok(ScoreReport { scores, min_cross_distance: Some(min), collusion: min < th.delta_div })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Owned,
    NotOwned,
    Refused,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefusalReason {
    IncompleteAuthorization,
    ScoringFailed,
}

/// Outcome of one verification, serialized canonically for the ledger.
#[derive(Clone, Debug, PartialEq)]
pub struct VerdictRecord {
    pub verdict: Verdict,
    pub reason: Option<RefusalReason>,
    pub gap: Option<f64>,
    pub model: Digest,
    pub joint: Option<Digest>,
    pub scores: BTreeMap<ClientId, f64>,
}

impl VerdictRecord {
    pub fn digest(&self) -> Digest {
        Digest::of(&self.to_bytes())
    }
}

impl Canonical for VerdictRecord {
    fn encode(&self, e: &mut Encoder) {
        e.u8(match self.verdict {
            Verdict::Owned => 0,
            Verdict::NotOwned => 1,
            Verdict::Refused => 2,
        });
        e.u8(match self.reason {
            None => 0,
            Some(RefusalReason::IncompleteAuthorization) => 1,
            Some(RefusalReason::ScoringFailed) => 2,
        });
        match self.gap {
            None => e.u8(0),
            Some(g) => e.u8(1).f64(g),
        };
        e.digest(&self.model);
        match &self.joint {
            None => e.u8(0),
            Some(d) => e.u8(1).digest(d),
        };
        e.seq_len(self.scores.len());
        for (c, s) in &self.scores {
            e.u32(*c).f64(*s);
        }
    }

    fn decode(d: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let verdict = match d.u8()? {
            0 => Verdict::Owned,
            1 => Verdict::NotOwned,
            2 => Verdict::Refused,
            tag => return Err(CodecError::BadTag { what: "verdict", tag }),
        };
        let reason = match d.u8()? {
            0 => None,
            1 => Some(RefusalReason::IncompleteAuthorization),
            2 => Some(RefusalReason::ScoringFailed),
            tag => return Err(CodecError::BadTag { what: "refusal", tag }),
        };
        let gap = match d.u8()? {
            0 => None,
            1 => Some(d.f64()?),
            tag => return Err(CodecError::BadTag { what: "gap", tag }),
        };
        let model = d.digest()?;
        let joint = match d.u8()? {
            0 => None,
            1 => Some(d.digest()?),
            tag => return Err(CodecError::BadTag { what: "joint", tag }),
        };
        let n = d.seq_len(12)?;
        let mut scores = BTreeMap::new();
        for _ in 0..n {
            let c = d.u32()?;
            scores.insert(c, d.f64()?);
        }
        Ok(VerdictRecord { verdict, reason, gap, model, joint, scores })
    }
}

/// All-owner-approved verification of `suspect`. `seed` and `m` must be the
/// ones the joint watermark was fused with at training time.
pub fn verify_ownership(
    suspect: &Classifier,
    submissions: &BTreeMap<ClientId, Vec<Vec<f64>>>,
    registry: &WatermarkRegistry,
    th: &VerifyThresholds,
    seed: u64,
    m: usize,
) -> Result<VerdictRecord, ProvenanceError> {
    let refused = |reason, scores| VerdictRecord {
        verdict: Verdict::Refused,
        reason: Some(reason),
        gap: None,
        model: suspect.digest(),
        joint: None,
        scores,
    };
    if registry.owners().any(|o| !submissions.contains_key(&o)) {
        return Ok(refused(RefusalReason::IncompleteAuthorization, BTreeMap::new()));
    }
    let report = score_submissions(registry, submissions, th)?;
    if report.collusion {
        return Ok(refused(RefusalReason::ScoringFailed, report.scores));
    }
    let joint = fuse_joint(registry, seed, m, suspect.classes)?;
    let gap = joint.gap(suspect);
    Ok(VerdictRecord {
        verdict: if gap < th.eps_gap { Verdict::Owned } else { Verdict::NotOwned },
        reason: None,
        gap: Some(gap),
        model: suspect.digest(),
        joint: Some(joint.digest()),
        scores: report.scores,
    })
}

/// Every owner's genuine registered inputs.
pub fn genuine_submissions(wms: &[PrivateWatermark]) -> BTreeMap<ClientId, Vec<Vec<f64>>> {
    wms.iter().map(|w| (w.owner, w.uploaded().into_iter().map(|s| s.input).collect())).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attack {
    /// Guesses for other owners are taken from fused watermark inputs.
    Stealing,
    /// Guesses for other owners are fresh random triggers.
    Counterfeiting,
}

impl Attack {
    pub fn name(&self) -> &'static str {
        match self {
            Attack::Stealing => "stealing",
            Attack::Counterfeiting => "counterfeiting",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttackOutcome {
    pub trials: usize,
    pub successes: usize,
}

impl AttackOutcome {
    pub fn rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

/// One protected deployment: owners' watermarks, sealed registry, joint
/// watermark and the fine-tuned model.
pub struct Deployment {
    pub watermarks: Vec<PrivateWatermark>,
    pub registry: WatermarkRegistry,
    pub joint: JointWatermark,
    pub fusion_seed: u64,
    pub model: Classifier,
}

impl Deployment {
    pub fn build(
        n_clients: usize,
        seed: u64,
        clean: &Classifier,
        task: &MainTask,
        cfg: &WatermarkConfig,
        th: &VerifyThresholds,
    ) -> Result<Self, ProvenanceError> {
        if n_clients == 0 {
            return Err(ProvenanceError::InvalidInput("no owners".into()));
        }
        let watermarks: Vec<PrivateWatermark> =
            (0..n_clients as ClientId).map(|c| gen_private_watermark(c, seed, cfg)).collect();
        let registry = WatermarkRegistry::from_watermarks(&watermarks)?;
        let fusion_seed = rng::child_seed(seed, "fusion", 0);
        let joint = fuse_joint(&registry, fusion_seed, cfg.fused, cfg.classes)?;
        let model = embed_joint(clean, &joint, task, cfg, th.eps_gap / 2.0)?;
        Ok(Deployment { watermarks, registry, joint, fusion_seed, model })
    }

    pub fn verify(
        &self,
        suspect: &Classifier,
        submissions: &BTreeMap<ClientId, Vec<Vec<f64>>>,
        th: &VerifyThresholds,
    ) -> Result<VerdictRecord, ProvenanceError> {
        verify_ownership(suspect, submissions, &self.registry, th, self.fusion_seed, self.joint.fused.len())
    }
}

/// What `ceil(ratio * n)` colluders can put together on their own.
pub fn colluder_submissions(
    dep: &Deployment,
    attack: Attack,
    ratio: f64,
    seed: u64,
    cfg: &WatermarkConfig,
) -> BTreeMap<ClientId, Vec<Vec<f64>>> {
    let n = dep.watermarks.len();
    let k = ((ratio * n as f64) - 1e-9).ceil().max(0.0) as usize;
    let mut r = rng::stream(seed, "colluders", 0, 0);
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(&mut r);
    let colluders: BTreeSet<usize> = ids.into_iter().take(k.min(n)).collect();
    if colluders.is_empty() {
        return BTreeMap::new();
    }
    let mut out = BTreeMap::new();
    let mut g = 0usize;
    for (i, w) in dep.watermarks.iter().enumerate() {
        let vecs = if colluders.contains(&i) {
            w.uploaded().into_iter().map(|s| s.input).collect()
        } else {
            (0..cfg.upload)
                .map(|_| match attack {
                    Attack::Stealing => {
                        g += 1;
                        dep.joint.fused[(g - 1) % dep.joint.fused.len()].0.clone()
                    }
                    Attack::Counterfeiting => (0..cfg.dim).map(|_| r.random_range(-1.0..=1.0)).collect(),
                })
                .collect()
        };
        out.insert(w.owner, vecs);
    }
    out
}

/// Fraction of trials in which the colluders get an `Owned` verdict.
#[allow(clippy::too_many_arguments)]
pub fn simulate_collusion(
    attack: Attack,
    ratio: f64,
    trials: usize,
    n_clients: usize,
    seed: u64,
    clean: &Classifier,
    task: &MainTask,
    cfg: &WatermarkConfig,
    th: &VerifyThresholds,
) -> Result<AttackOutcome, ProvenanceError> {
    if !(0.0..=1.0).contains(&ratio) || trials == 0 {
        return Err(ProvenanceError::InvalidInput(format!("ratio {ratio}, trials {trials}")));
    }
    let mut successes = 0;
    for t in 0..trials {
        let trial_seed = rng::child_seed(seed, "collusion_trial", t as u64);
        let dep = Deployment::build(n_clients, trial_seed, clean, task, cfg, th)?;
        let subs = colluder_submissions(&dep, attack, ratio, trial_seed, cfg);
        if dep.verify(&dep.model, &subs, th)?.verdict == Verdict::Owned {
            successes += 1;
        }
    }
    Ok(AttackOutcome { trials, successes })
}
