//! Four-layer federated learning on a synthetic quadratic task.
//!
//! Every avatar's local model is the optimum `w*` plus Gaussian error that
//! shrinks with its effective sample count `d * q`. Clusters average raw
//! updates and add one noise draw at their boundary, edges and the cloud
//! take contribution-weighted means.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coalition::{AvatarProfile, Partition, Profiles};
use crate::ids::AvatarId;
use crate::ledger::codec::{Decoder, Encoder};
use crate::ledger::{Canonical, CodecError};
use crate::rng;

pub const DEFAULT_DIM: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FlError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelVector(pub Vec<f64>);

impl ModelVector {
    pub fn zeros(dim: usize) -> Self {
        ModelVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn sq_dist(&self, other: &ModelVector) -> Result<f64, FlError> {
        if self.dim() != other.dim() {
            return Err(FlError::Dimension(self.dim(), other.dim()));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum())
    }

    fn add_noise<R: Rng + ?Sized>(&mut self, std: f64, r: &mut R) {
        for v in &mut self.0 {
            let z: f64 = r.sample(StandardNormal);
            *v += std * z;
        }
    }
}

impl Canonical for ModelVector {
    fn encode(&self, enc: &mut Encoder) {
        enc.seq_len(self.0.len());
        for v in &self.0 {
            enc.f64(*v);
        }
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let n = dec.seq_len(8)?;
        (0..n).map(|_| dec.f64()).collect::<Result<_, _>>().map(ModelVector)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LocalUpdate {
    pub avatar: AvatarId,
    pub params: ModelVector,
    pub contribution: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DpMode {
    Solo,
    Cluster,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpParams {
    pub sigma: f64,
    pub mode: DpMode,
}

impl Default for DpParams {
    fn default() -> Self {
        DpParams { sigma: 1.0, mode: DpMode::Cluster }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub w_star: ModelVector,
    pub noise_scale: f64,
}

impl GroundTruth {
    /// `w*` with standard-normal coordinates; `s = 2`.
    pub fn generate(dim: usize, seed: u64) -> Self {
        let mut r = rng::stream(seed, "ground_truth", 0, 0);
        let mut w = ModelVector::zeros(dim);
        w.add_noise(1.0, &mut r);
        GroundTruth { w_star: w, noise_scale: 2.0 }
    }
}

/// Social-layer (or edge-layer) aggregate.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialAggregate {
    pub params: ModelVector,
    pub contribution: f64,
    pub members: Vec<AvatarId>,
}

pub fn local_update(profile: &AvatarProfile, truth: &GroundTruth, round: u64, seed: u64) -> LocalUpdate {
    let d = profile.contribution();
    let mut r = rng::stream(seed, "local_update", profile.id.0 as u64, round);
    let mut params = truth.w_star.clone();
    params.add_noise(truth.noise_scale / d.sqrt(), &mut r);
    LocalUpdate { avatar: profile.id, params, contribution: d }
}

pub fn perturb_solo<R: Rng + ?Sized>(update: &LocalUpdate, dp: &DpParams, r: &mut R) -> Result<LocalUpdate, FlError> {
    if dp.mode != DpMode::Solo {
        return Err(FlError::InvalidInput("perturb_solo needs solo mode".into()));
    }
    check_sigma(dp)?;
    let mut out = update.clone();
    out.params.add_noise(dp.sigma, r);
    Ok(out)
}

fn check_sigma(dp: &DpParams) -> Result<(), FlError> {
    if dp.sigma >= 0.0 && dp.sigma.is_finite() {
        Ok(())
    } else {
        Err(FlError::InvalidInput(format!("sigma {}", dp.sigma)))
    }
}

fn weighted_mean<'a>(items: impl Iterator<Item = (&'a ModelVector, f64)>) -> Result<(ModelVector, f64), FlError> {
    let mut acc: Option<ModelVector> = None;
    let mut total = 0.0;
    for (v, w) in items {
        if !(w > 0.0) {
            return Err(FlError::InvalidInput(format!("non-positive weight {w}")));
        }
        let a = acc.get_or_insert_with(|| ModelVector::zeros(v.dim()));
        if a.dim() != v.dim() {
            return Err(FlError::Dimension(a.dim(), v.dim()));
        }
        for (x, y) in a.0.iter_mut().zip(&v.0) {
            *x += w * y;
        }
        total += w;
    }
    let mut a = acc.ok_or_else(|| FlError::InvalidInput("nothing to aggregate".into()))?;
    for x in &mut a.0 {
        *x /= total;
    }
    Ok((a, total))
}

pub fn pre_aggregate_cluster<R: Rng + ?Sized>(
    updates: &[LocalUpdate],
    dp: &DpParams,
    r: &mut R,
) -> Result<SocialAggregate, FlError> {
    if dp.mode != DpMode::Cluster {
        return Err(FlError::InvalidInput("pre_aggregate_cluster needs cluster mode".into()));
    }
    check_sigma(dp)?;
    let (mut params, contribution) = weighted_mean(updates.iter().map(|u| (&u.params, u.contribution)))?;
    params.add_noise(dp.sigma / updates.len() as f64, r);
    let mut members: Vec<AvatarId> = updates.iter().map(|u| u.avatar).collect();
    members.sort();
    Ok(SocialAggregate { params, contribution, members })
}

pub fn edge_aggregate(aggregates: &[SocialAggregate]) -> Result<SocialAggregate, FlError> {
    let (params, contribution) = weighted_mean(aggregates.iter().map(|a| (&a.params, a.contribution)))?;
    let mut members: Vec<AvatarId> = aggregates.iter().flat_map(|a| a.members.iter().copied()).collect();
    members.sort();
    Ok(SocialAggregate { params, contribution, members })
}

pub fn global_aggregate(edge_results: &[SocialAggregate]) -> Result<ModelVector, FlError> {
    Ok(weighted_mean(edge_results.iter().map(|a| (&a.params, a.contribution)))?.0)
}

pub fn empirical_utility(model: &ModelVector, truth: &GroundTruth) -> Result<f64, FlError> {
    let f = model.dim() as f64;
    Ok(1.0 / (1.0 + model.sq_dist(&truth.w_star)? / f))
}

/// Everything one hierarchical round produced.
#[derive(Clone, Debug, PartialEq)]
pub struct RoundOutcome {
    /// One per cluster, in partition order.
    pub clusters: Vec<SocialAggregate>,
    /// Which edge each cluster was routed to.
    pub edge_of_cluster: Vec<usize>,
    pub edges: Vec<SocialAggregate>,
    pub global: ModelVector,
    pub utility: f64,
}

/// Runs one round over `partition`, assigning clusters to `n_edges` edge
/// servers round-robin.
pub fn run_round(
    partition: &Partition,
    profiles: &Profiles,
    truth: &GroundTruth,
    sigma: f64,
    n_edges: usize,
    round: u64,
    seed: u64,
) -> Result<RoundOutcome, FlError> {
    if n_edges == 0 {
        return Err(FlError::InvalidInput("need at least one edge".into()));
    }
    let dp = DpParams { sigma, mode: DpMode::Cluster };
    let mut clusters = Vec::with_capacity(partition.len());
    for c in partition.clusters() {
        let updates: Vec<LocalUpdate> = c
            .iter()
            .map(|a| {
                let p = profiles.get(a).ok_or_else(|| FlError::InvalidInput(format!("no profile for {a}")))?;
                Ok(local_update(p, truth, round, seed))
            })
            .collect::<Result<_, FlError>>()?;
        let mut r = rng::stream(seed, "cluster_noise", c[0].0 as u64, round);
        clusters.push(pre_aggregate_cluster(&updates, &dp, &mut r)?);
    }
    let edge_of_cluster: Vec<usize> = (0..clusters.len()).map(|k| k % n_edges).collect();
    let mut edges = Vec::new();
    for e in 0..n_edges.min(clusters.len()) {
        let mine: Vec<SocialAggregate> =
            clusters.iter().zip(&edge_of_cluster).filter(|(_, x)| **x == e).map(|(c, _)| c.clone()).collect();
        edges.push(edge_aggregate(&mine)?);
    }
    let global = global_aggregate(&edges)?;
    let utility = empirical_utility(&global, truth)?;
    Ok(RoundOutcome { clusters, edge_of_cluster, edges, global, utility })
}

/// Non-cooperative baseline: every avatar perturbs its own update, the cloud
/// averages the lot.
pub fn run_solo_round(
    profiles: &Profiles,
    truth: &GroundTruth,
    sigma: f64,
    round: u64,
    seed: u64,
) -> Result<ModelVector, FlError> {
    let dp = DpParams { sigma, mode: DpMode::Solo };
    let noisy: Vec<LocalUpdate> = profiles
        .values()
        .map(|p| {
            let mut r = rng::stream(seed, "solo_noise", p.id.0 as u64, round);
            perturb_solo(&local_update(p, truth, round, seed), &dp, &mut r)
        })
        .collect::<Result<_, _>>()?;
    Ok(weighted_mean(noisy.iter().map(|u| (&u.params, u.contribution)))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coalition::{profiles_from, random_profiles};
    use proptest::prelude::*;

    fn truth() -> GroundTruth {
        GroundTruth::generate(DEFAULT_DIM, 1)
    }

    fn upd(a: u32, v: Vec<f64>, c: f64) -> LocalUpdate {
        LocalUpdate { avatar: AvatarId(a), params: ModelVector(v), contribution: c }
    }

    fn agg(v: Vec<f64>, c: f64) -> SocialAggregate {
        SocialAggregate { params: ModelVector(v), contribution: c, members: vec![] }
    }

    #[test]
    fn local_update_variance() {
        let t = truth();
        // d*q = s^2 = 4 gives unit per-coordinate error.
        let p = AvatarProfile::new(AvatarId(3), 4.0, 1.0).unwrap();
        let a = local_update(&p, &t, 0, 7);
        assert_eq!(a, local_update(&p, &t, 0, 7));
        assert_eq!(a.contribution, 4.0);
        let p2 = AvatarProfile::new(AvatarId(3), 5.0, 0.8).unwrap();
        let mean: f64 = (0..10_000u64)
            .map(|r| local_update(&p2, &t, r, 7).params.sq_dist(&t.w_star).unwrap() / DEFAULT_DIM as f64)
            .sum::<f64>()
            / 10_000.0;
        assert!((mean - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn solo_noise() {
        let u = upd(0, vec![0.5; DEFAULT_DIM], 1.0);
        let zero = DpParams { sigma: 0.0, mode: DpMode::Solo };
        assert_eq!(perturb_solo(&u, &zero, &mut rng::stream(1, "t", 0, 0)).unwrap(), u);
        let dp = DpParams { sigma: 1.5, mode: DpMode::Solo };
        let a = perturb_solo(&u, &dp, &mut rng::stream(1, "t", 0, 0)).unwrap();
        assert_eq!(a, perturb_solo(&u, &dp, &mut rng::stream(1, "t", 0, 0)).unwrap());
        let mut r = rng::stream(2, "t", 0, 0);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            sum += perturb_solo(&u, &dp, &mut r).unwrap().params.sq_dist(&u.params).unwrap() / DEFAULT_DIM as f64;
        }
        assert!((sum / 10_000.0 / 2.25 - 1.0).abs() < 0.05);
        assert!(perturb_solo(&u, &DpParams { sigma: 1.0, mode: DpMode::Cluster }, &mut r).is_err());
    }

    #[test]
    fn cluster_pre_aggregation() {
        let cl = |s| DpParams { sigma: s, mode: DpMode::Cluster };
        let out = pre_aggregate_cluster(
            &[upd(0, vec![1.0, 1.0], 1.0), upd(1, vec![3.0, 3.0], 3.0)],
            &cl(0.0),
            &mut rng::stream(0, "t", 0, 0),
        )
        .unwrap();
        assert_eq!(out.params.0, vec![2.5, 2.5]);
        assert_eq!(out.contribution, 4.0);
        assert_eq!(out.members, vec![AvatarId(0), AvatarId(1)]);

        let u = upd(5, vec![0.25; 8], 2.0);
        let solo =
            perturb_solo(&u, &DpParams { sigma: 0.7, mode: DpMode::Solo }, &mut rng::stream(3, "n", 0, 0)).unwrap();
        let single = pre_aggregate_cluster(&[u.clone()], &cl(0.7), &mut rng::stream(3, "n", 0, 0)).unwrap();
        assert_eq!(single.params, solo.params);

        let members: Vec<LocalUpdate> = (0..4).map(|k| upd(k, vec![0.0; DEFAULT_DIM], 1.0)).collect();
        let mut r = rng::stream(4, "n", 0, 0);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            sum +=
                pre_aggregate_cluster(&members, &cl(2.0), &mut r).unwrap().params.0.iter().map(|x| x * x).sum::<f64>()
                    / DEFAULT_DIM as f64;
        }
        // (sigma / |C|)^2 = 0.25
        assert!((sum / 10_000.0 / 0.25 - 1.0).abs() < 0.05);
        assert!(pre_aggregate_cluster(&[], &cl(1.0), &mut r).is_err());
    }

    #[test]
    fn edge_and_global() {
        let one = agg(vec![1.0, 2.0], 2.0);
        assert_eq!(edge_aggregate(&[one.clone()]).unwrap().params, one.params);
        let e = edge_aggregate(&[agg(vec![1.0, 1.0], 1.0), agg(vec![3.0, 3.0], 3.0)]).unwrap();
        assert_eq!((e.params.0.clone(), e.contribution), (vec![2.5, 2.5], 4.0));
        let e2 = edge_aggregate(&[agg(vec![3.0, 3.0], 3.0), agg(vec![1.0, 1.0], 1.0)]).unwrap();
        assert_eq!(e.params, e2.params);
        assert!(edge_aggregate(&[]).is_err());
        assert!(global_aggregate(&[]).is_err());
        assert_eq!(global_aggregate(&[one.clone()]).unwrap(), one.params);
        assert_eq!(global_aggregate(&[one.clone(), one.clone()]).unwrap(), one.params);

        let cs = [agg(vec![1.0, -1.0], 1.5), agg(vec![0.5, 4.0], 2.0), agg(vec![-2.0, 0.0], 0.5)];
        let two_edges = [edge_aggregate(&cs[..2]).unwrap(), edge_aggregate(&cs[2..]).unwrap()];
        let g = global_aggregate(&two_edges).unwrap();
        let flat = global_aggregate(&cs).unwrap();
        assert!(g.sq_dist(&flat).unwrap() < 1e-18);
    }

    #[test]
    fn utility_surrogate() {
        let t = truth();
        assert_eq!(empirical_utility(&t.w_star, &t).unwrap(), 1.0);
        let shifted = ModelVector(t.w_star.0.iter().map(|x| x + 1.0).collect());
        assert!((empirical_utility(&shifted, &t).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(empirical_utility(&ModelVector::zeros(3), &t), Err(FlError::Dimension(..))));
    }

    #[test]
    fn cluster_mode_beats_solo_mode() {
        let t = truth();
        let profiles = random_profiles(12, 5);
        let part = Partition::new(vec![
            (0..4).map(AvatarId).collect(),
            (4..8).map(AvatarId).collect(),
            (8..12).map(AvatarId).collect(),
        ])
        .unwrap();
        let mut wins = 0;
        let (mut cu, mut su) = (0.0, 0.0);
        for trial in 0..200u64 {
            let c = run_round(&part, &profiles, &t, 1.0, 2, trial, 99).unwrap().utility;
            let s = empirical_utility(&run_solo_round(&profiles, &t, 1.0, trial, 99).unwrap(), &t).unwrap();
            cu += c;
            su += s;
            wins += (c > s) as u32;
        }
        assert!(cu > su && wins > 120, "{cu} {su} {wins}");
    }

    #[test]
    fn round_routes_round_robin() {
        let t = truth();
        let profiles = profiles_from((0..5).map(|k| AvatarProfile::new(AvatarId(k), 4.0, 1.0).unwrap()));
        let part = Partition::singletons((0..5).map(AvatarId));
        let out = run_round(&part, &profiles, &t, 0.5, 4, 0, 1).unwrap();
        assert_eq!(out.edge_of_cluster, vec![0, 1, 2, 3, 0]);
        assert_eq!(out.edges.len(), 4);
        assert_eq!(out.edges[0].members, vec![AvatarId(0), AvatarId(4)]);
        assert_eq!(out, run_round(&part, &profiles, &t, 0.5, 4, 0, 1).unwrap());
    }

    #[test]
    fn model_vector_codec() {
        let v = ModelVector(vec![1.5, -0.0, f64::MIN_POSITIVE]);
        let b = v.to_bytes();
        assert_eq!(ModelVector::from_bytes(&b).unwrap(), v);
        assert!(ModelVector::from_bytes(&b[..b.len() - 1]).is_err());
    }

    proptest! {
        #[test]
        fn aggregation_permutation_invariant_and_idempotent(
            items in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 4), 0.1..10.0f64), 1..8),
            rot in 0usize..8,
        ) {
            let aggs: Vec<SocialAggregate> = items.iter().map(|(v, c)| agg(v.clone(), *c)).collect();
            let mut rotated = aggs.clone();
            rotated.rotate_left(rot % aggs.len());
            let a = edge_aggregate(&aggs).unwrap();
            let b = edge_aggregate(&rotated).unwrap();
            prop_assert!(a.params.sq_dist(&b.params).unwrap() < 1e-20);
            let same: Vec<SocialAggregate> = aggs.iter().map(|x| agg(aggs[0].params.0.clone(), x.contribution)).collect();
            let s = edge_aggregate(&same).unwrap();
            prop_assert!(s.params.sq_dist(&aggs[0].params).unwrap() < 1e-20);
        }

        #[test]
        fn hierarchy_flattens(
            items in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 4), 0.1..10.0f64), 2..10),
            edges in 1usize..5,
        ) {
            let aggs: Vec<SocialAggregate> = items.iter().map(|(v, c)| agg(v.clone(), *c)).collect();
            let groups: Vec<SocialAggregate> = (0..edges.min(aggs.len()))
                .map(|e| {
                    let mine: Vec<_> = aggs.iter().enumerate().filter(|(k, _)| k % edges == e).map(|(_, a)| a.clone()).collect();
                    edge_aggregate(&mine).unwrap()
                })
                .collect();
            let g = global_aggregate(&groups).unwrap();
            let flat = global_aggregate(&aggs).unwrap();
            for (x, y) in g.0.iter().zip(&flat.0) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
