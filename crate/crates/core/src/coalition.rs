//! Hedonic coalition game over the avatar population.
//!
//! Avatars start alone and, one at a time in id order, ask to join the
//! cluster they prefer most. A cluster admits a newcomer only if nobody in
//! it loses and someone gains. Play stops after a pass in which nobody moves.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::AvatarId;
use crate::ledger::Digest;
use crate::rng;
use crate::social_graph::TrustMatrix;

/// Slack used for every payoff comparison.
pub const PAYOFF_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CoalitionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown avatar {0}")]
    UnknownAvatar(AvatarId),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AvatarProfile {
    pub id: AvatarId,
    pub data_size: f64,
    pub data_quality: f64,
}

impl AvatarProfile {
    pub fn new(id: AvatarId, data_size: f64, data_quality: f64) -> Result<Self, CoalitionError> {
        if !(data_size > 0.0) || !(data_quality > 0.0 && data_quality <= 1.0) {
            return Err(CoalitionError::InvalidInput(format!("{id}: d={data_size}, q={data_quality}")));
        }
        Ok(AvatarProfile { id, data_size, data_quality })
    }

    /// Learning-contribution proxy `d * q`.
    pub fn contribution(&self) -> f64 {
        self.data_size * self.data_quality
    }
}

pub type Profiles = BTreeMap<AvatarId, AvatarProfile>;

pub fn profiles_from(list: impl IntoIterator<Item = AvatarProfile>) -> Profiles {
    list.into_iter().map(|p| (p.id, p)).collect()
}

/// `d ~ U[1, 10]`, `q ~ U[0.5, 1]`.
pub fn random_profiles(n: usize, seed: u64) -> Profiles {
    let mut r = rng::stream(seed, "profiles", 0, 0);
    profiles_from((0..n as u32).map(|i| AvatarProfile {
        id: AvatarId(i),
        data_size: r.random_range(1.0..10.0),
        data_quality: r.random_range(0.5..=1.0),
    }))
}

/// Cluster utility model. Swap in an empirical one by implementing this.
pub trait Utility {
    fn utility(&self, members: &[&AvatarProfile]) -> f64;
    fn cost_per_member(&self) -> f64;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QualityParams {
    pub u_max: f64,
    pub kappa: f64,
    pub beta: f64,
    pub sigma_dp: f64,
    pub cost_per_member: f64,
}

impl Default for QualityParams {
    fn default() -> Self {
        QualityParams { u_max: 1.0, kappa: 10.0, beta: 0.2, sigma_dp: 1.0, cost_per_member: 0.01 }
    }
}

impl QualityParams {
    pub fn validate(&self) -> Result<(), CoalitionError> {
        let ok = [self.u_max, self.kappa, self.beta, self.sigma_dp, self.cost_per_member].iter().all(|v| *v >= 0.0)
            && self.kappa > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoalitionError::InvalidInput(format!("bad quality parameters {self:?}")))
        }
    }
}

impl Utility for QualityParams {
    /// `u_max * D / (D + kappa) - beta * sigma^2 / |C|`.
    fn utility(&self, members: &[&AvatarProfile]) -> f64 {
        let d: f64 = members.iter().map(|p| p.contribution()).sum();
        self.u_max * d / (d + self.kappa) - self.beta * self.sigma_dp * self.sigma_dp / members.len() as f64
    }

    fn cost_per_member(&self) -> f64 {
        self.cost_per_member
    }
}

fn lookup<'p>(members: &[AvatarId], profiles: &'p Profiles) -> Result<Vec<&'p AvatarProfile>, CoalitionError> {
    if members.is_empty() {
        return Err(CoalitionError::InvalidInput("empty cluster".into()));
    }
    members.iter().map(|m| profiles.get(m).ok_or(CoalitionError::UnknownAvatar(*m))).collect()
}

pub fn cluster_utility<U: Utility + ?Sized>(
    members: &[AvatarId],
    profiles: &Profiles,
    u: &U,
) -> Result<f64, CoalitionError> {
    Ok(u.utility(&lookup(members, profiles)?))
}

pub fn federated_payoff<U: Utility + ?Sized>(
    members: &[AvatarId],
    profiles: &Profiles,
    u: &U,
) -> Result<f64, CoalitionError> {
    let ps = lookup(members, profiles)?;
    Ok(u.utility(&ps) - u.cost_per_member() * ps.len() as f64)
}

pub fn noncoop_payoff<U: Utility + ?Sized>(
    avatar: AvatarId,
    profiles: &Profiles,
    u: &U,
) -> Result<f64, CoalitionError> {
    federated_payoff(&[avatar], profiles, u)
}

/// Every member's share `p_i + w_i * E`, in the order of `members`.
pub fn payoff_shares<U: Utility + ?Sized>(
    members: &[AvatarId],
    profiles: &Profiles,
    u: &U,
) -> Result<Vec<f64>, CoalitionError> {
    let ps = lookup(members, profiles)?;
    let total = u.utility(&ps) - u.cost_per_member() * ps.len() as f64;
    let solo: Vec<f64> = ps.iter().map(|p| u.utility(&[*p]) - u.cost_per_member()).collect();
    let extra = total - solo.iter().sum::<f64>();
    let d: f64 = ps.iter().map(|p| p.contribution()).sum();
    Ok(ps.iter().zip(&solo).map(|(p, s)| s + p.contribution() / d * extra).collect())
}

pub fn individual_payoff<U: Utility + ?Sized>(
    avatar: AvatarId,
    members: &[AvatarId],
    profiles: &Profiles,
    u: &U,
) -> Result<f64, CoalitionError> {
    let k = members
        .iter()
        .position(|m| *m == avatar)
        .ok_or_else(|| CoalitionError::InvalidInput(format!("{avatar} is not in the cluster")))?;
    Ok(payoff_shares(members, profiles, u)?[k])
}

/// Disjoint clusters covering every avatar, each sorted, listed by smallest
/// member. A cluster's id is its index in that listing.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    clusters: Vec<Vec<AvatarId>>,
}

impl Partition {
    pub fn singletons(ids: impl IntoIterator<Item = AvatarId>) -> Self {
        Partition::new(ids.into_iter().map(|a| vec![a]).collect()).expect("distinct ids")
    }

    pub fn new(clusters: Vec<Vec<AvatarId>>) -> Result<Self, CoalitionError> {
        let mut seen = BTreeSet::new();
        let mut clusters: Vec<Vec<AvatarId>> = clusters
            .into_iter()
            .map(|mut c| {
                c.sort();
                c
            })
            .collect();
        for c in &clusters {
            if c.is_empty() {
                return Err(CoalitionError::InvalidInput("empty cluster".into()));
            }
            for a in c {
                if !seen.insert(*a) {
                    return Err(CoalitionError::InvalidInput(format!("{a} appears twice")));
                }
            }
        }
        clusters.sort();
        Ok(Partition { clusters })
    }

    pub fn clusters(&self) -> &[Vec<AvatarId>] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn avatars(&self) -> impl Iterator<Item = AvatarId> + '_ {
        self.clusters.iter().flatten().copied()
    }

    pub fn cluster_of(&self, a: AvatarId) -> Option<usize> {
        self.clusters.iter().position(|c| c.binary_search(&a).is_ok())
    }

    /// Moves `a` into cluster `to`, or into a fresh singleton when `to` is `None`.
    fn relocate(&mut self, a: AvatarId, to: Option<usize>) {
        let from = self.cluster_of(a).expect("avatar placed");
        let target = to.map(|t| self.clusters[t][0]);
        self.clusters[from].retain(|m| *m != a);
        match target {
            Some(anchor) => {
                let t = self.clusters.iter().position(|c| c.first() == Some(&anchor)).unwrap();
                let pos = self.clusters[t].binary_search(&a).unwrap_err();
                self.clusters[t].insert(pos, a);
            }
            None => self.clusters.push(vec![a]),
        }
        self.clusters.retain(|c| !c.is_empty());
        self.clusters.sort();
    }

    /// Mean of every avatar's individual payoff.
    pub fn mean_payoff<U: Utility + ?Sized>(&self, profiles: &Profiles, u: &U) -> Result<f64, CoalitionError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for c in &self.clusters {
            sum += payoff_shares(c, profiles, u)?.iter().sum::<f64>();
            n += c.len();
        }
        Ok(sum / n as f64)
    }
}

/// Hash of a cluster's sorted member list; rejections are keyed on it.
pub fn composition_hash(members: &[AvatarId]) -> Digest {
    let mut sorted = members.to_vec();
    sorted.sort();
    let bytes: Vec<u8> = sorted.iter().flat_map(|a| a.0.to_le_bytes()).collect();
    Digest::of_parts(&[b"socialfl/cluster", &bytes])
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RejectionRecord {
    entries: BTreeSet<(AvatarId, Digest)>,
}

impl RejectionRecord {
    pub fn record(&mut self, avatar: AvatarId, members: &[AvatarId]) {
        self.entries.insert((avatar, composition_hash(members)));
    }

    pub fn contains(&self, avatar: AvatarId, members: &[AvatarId]) -> bool {
        self.entries.contains(&(avatar, composition_hash(members)))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Join(usize),
    Singleton,
}

/// Orders options by payoff, dropping those that do not beat `current`.
/// Ties go to the lower cluster id, with the singleton last.
pub fn rank_options(current: f64, options: &[(Choice, f64)]) -> Vec<Choice> {
    let mut keep: Vec<(Choice, f64)> = options.iter().copied().filter(|(_, v)| *v > current + PAYOFF_EPS).collect();
    let tie_key = |c: &Choice| match c {
        Choice::Join(k) => *k,
        Choice::Singleton => usize::MAX,
    };
    keep.sort_by(|a, b| b.1.total_cmp(&a.1).then(tie_key(&a.0).cmp(&tie_key(&b.0))));
    keep.into_iter().map(|(c, _)| c).collect()
}

fn with_member(members: &[AvatarId], a: AvatarId) -> Vec<AvatarId> {
    let mut v = members.to_vec();
    let pos = v.binary_search(&a).unwrap_or_else(|p| p);
    v.insert(pos, a);
    v
}

/// What `avatar` would earn in each reachable option.
fn option_payoffs<U: Utility + ?Sized>(
    avatar: AvatarId,
    partition: &Partition,
    rejections: Option<&RejectionRecord>,
    profiles: &Profiles,
    u: &U,
    trust: &TrustMatrix,
) -> Result<(f64, Vec<(Choice, f64)>), CoalitionError> {
    let own = partition.cluster_of(avatar).ok_or(CoalitionError::UnknownAvatar(avatar))?;
    let current = individual_payoff(avatar, &partition.clusters[own], profiles, u)?;
    let mut options = Vec::new();
    for (k, c) in partition.clusters.iter().enumerate() {
        if k == own || !trust.admits(avatar, c) || rejections.is_some_and(|r| r.contains(avatar, c)) {
            continue;
        }
        options.push((Choice::Join(k), individual_payoff(avatar, &with_member(c, avatar), profiles, u)?));
    }
    if partition.clusters[own].len() > 1 {
        options.push((Choice::Singleton, noncoop_payoff(avatar, profiles, u)?));
    }
    Ok((current, options))
}

pub fn preference_order<U: Utility + ?Sized>(
    avatar: AvatarId,
    partition: &Partition,
    rejections: &RejectionRecord,
    profiles: &Profiles,
    u: &U,
    trust: &TrustMatrix,
) -> Result<Vec<Choice>, CoalitionError> {
    let (current, options) = option_payoffs(avatar, partition, Some(rejections), profiles, u, trust)?;
    Ok(rank_options(current, &options))
}

/// True iff adding `candidate` leaves no member worse and some member better.
pub fn pareto_admissible<U: Utility + ?Sized>(
    members: &[AvatarId],
    candidate: AvatarId,
    profiles: &Profiles,
    u: &U,
) -> Result<bool, CoalitionError> {
    let before = payoff_shares(members, profiles, u)?;
    let grown = with_member(members, candidate);
    let after = payoff_shares(&grown, profiles, u)?;
    let after: Vec<f64> = grown.iter().zip(after).filter(|(a, _)| **a != candidate).map(|(_, v)| v).collect();
    let none_worse = before.iter().zip(&after).all(|(b, a)| *a >= *b - PAYOFF_EPS);
    let some_better = before.iter().zip(&after).any(|(b, a)| *a > *b + PAYOFF_EPS);
    Ok(none_worse && some_better)
}

/// Cluster-side decision over simultaneous requests. Returns the admitted
/// avatar, if any, and the rejected ones.
pub fn admit_candidate<U: Utility + ?Sized>(
    members: &[AvatarId],
    candidates: &[AvatarId],
    profiles: &Profiles,
    u: &U,
) -> Result<(Option<AvatarId>, Vec<AvatarId>), CoalitionError> {
    let base = federated_payoff(members, profiles, u)?;
    let mut best: Option<(f64, AvatarId)> = None;
    for &c in candidates {
        if !pareto_admissible(members, c, profiles, u)? {
            continue;
        }
        let gain = federated_payoff(&with_member(members, c), profiles, u)? - base;
        let better = match best {
            None => true,
            Some((g, id)) => gain > g || (gain == g && c < id),
        };
        if better {
            best = Some((gain, c));
        }
    }
    let admitted = best.map(|(_, c)| c);
    let rejected = candidates.iter().copied().filter(|c| Some(*c) != admitted).collect();
    Ok((admitted, rejected))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub mean_payoff: f64,
    pub num_clusters: usize,
    pub moved: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GameTrace {
    pub iterations: usize,
    /// Entry 0 is the all-singleton start.
    pub series: Vec<IterationRecord>,
    pub final_partition: Partition,
    pub truncated: bool,
    pub noncoop_mean: f64,
}

pub fn form_stable_partition<U: Utility + ?Sized>(
    trust: &TrustMatrix,
    profiles: &Profiles,
    u: &U,
    max_iter: usize,
) -> Result<GameTrace, CoalitionError> {
    if max_iter == 0 {
        return Err(CoalitionError::InvalidInput("max_iter must be at least 1".into()));
    }
    if profiles.is_empty() {
        return Err(CoalitionError::InvalidInput("no avatars".into()));
    }
    for a in profiles.keys() {
        if !trust.ids().contains(a) {
            return Err(CoalitionError::UnknownAvatar(*a));
        }
    }
    let mut partition = Partition::singletons(profiles.keys().copied());
    let mut rejections = RejectionRecord::default();
    let noncoop_mean = partition.mean_payoff(profiles, u)?;
    let mut series =
        vec![IterationRecord { iteration: 0, mean_payoff: noncoop_mean, num_clusters: partition.len(), moved: 0 }];
    let mut truncated = true;
    for iteration in 1..=max_iter {
        let mut moved = 0;
        for &a in profiles.keys() {
            for choice in preference_order(a, &partition, &rejections, profiles, u, trust)? {
                match choice {
                    Choice::Singleton => {
                        partition.relocate(a, None);
                        moved += 1;
                        break;
                    }
                    Choice::Join(k) => {
                        let members = partition.clusters[k].clone();
                        let (admitted, _) = admit_candidate(&members, &[a], profiles, u)?;
                        if admitted == Some(a) {
                            partition.relocate(a, Some(k));
                            moved += 1;
                            break;
                        }
                        rejections.record(a, &members);
                    }
                }
            }
        }
        series.push(IterationRecord {
            iteration,
            mean_payoff: partition.mean_payoff(profiles, u)?,
            num_clusters: partition.len(),
            moved,
        });
        if moved == 0 {
            truncated = false;
            break;
        }
    }
    Ok(GameTrace { iterations: series.len() - 1, series, final_partition: partition, truncated, noncoop_mean })
}

/// True iff no avatar has a strictly improving move that would be accepted:
/// leaving for a singleton, or joining a trusted cluster that admits it.
pub fn is_nash_stable<U: Utility + ?Sized>(
    partition: &Partition,
    profiles: &Profiles,
    u: &U,
    trust: &TrustMatrix,
) -> Result<bool, CoalitionError> {
    for a in partition.avatars() {
        let (current, options) = option_payoffs(a, partition, None, profiles, u, trust)?;
        for (choice, v) in options {
            if v <= current + PAYOFF_EPS {
                continue;
            }
            let accepted = match choice {
                Choice::Singleton => true,
                Choice::Join(k) => pareto_admissible(&partition.clusters[k], a, profiles, u)?,
            };
            if accepted {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// True iff every pair inside every cluster clears the trust threshold.
pub fn respects_trust_gate(partition: &Partition, trust: &TrustMatrix) -> bool {
    partition.clusters().iter().all(|c| c.iter().all(|a| trust.admits(*a, c)))
}
