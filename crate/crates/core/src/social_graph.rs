//! Avatar social graph and the trust measures derived from it.
//!
//! Direct trust on an edge is a capped sum over the interaction history of
//! `experience * (1 - exp(-duration / tau)) * exp(-lambda * age)`. Indirect
//! trust multiplies direct trusts along a minimum-hop path, picking the
//! largest product among equal-hop paths.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ids::AvatarId;
use crate::rng;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unknown avatar {0}")]
    UnknownAvatar(AvatarId),
    #[error("graph file: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub experience: f64,
    pub duration: f64,
    pub timestamp: f64,
}

impl Interaction {
    pub fn new(experience: f64, duration: f64, timestamp: f64) -> Result<Self, GraphError> {
        let i = Interaction { experience, duration, timestamp };
        i.check()?;
        Ok(i)
    }

    fn check(&self) -> Result<(), GraphError> {
        if !(0.0..=1.0).contains(&self.experience) {
            return Err(GraphError::InvalidInput(format!("experience {} outside [0,1]", self.experience)));
        }
        if !(self.duration >= 0.0) || !(self.timestamp >= 0.0) {
            return Err(GraphError::InvalidInput("negative duration or timestamp".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrustParams {
    pub lambda_decay: f64,
    pub tau_duration: f64,
    pub alpha_mix: f64,
    pub theta_trust: f64,
}

impl Default for TrustParams {
    fn default() -> Self {
        TrustParams { lambda_decay: 0.1, tau_duration: 1.0, alpha_mix: 0.7, theta_trust: 0.5 }
    }
}

impl TrustParams {
    pub fn validate(&self) -> Result<(), GraphError> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(self.lambda_decay >= 0.0) || !(self.tau_duration > 0.0) || !unit(self.alpha_mix) || !unit(self.theta_trust)
        {
            return Err(GraphError::InvalidInput(format!("bad trust parameters {self:?}")));
        }
        Ok(())
    }
}

pub fn direct_trust(history: &[Interaction], now: f64, params: &TrustParams) -> Result<f64, GraphError> {
    let mut sum = 0.0;
    for it in history {
        it.check()?;
        if it.timestamp > now {
            return Err(GraphError::InvalidInput(format!("interaction at {} is after now={now}", it.timestamp)));
        }
        let saturation = 1.0 - (-it.duration / params.tau_duration).exp();
        let decay = (-params.lambda_decay * (now - it.timestamp)).exp();
        sum += it.experience * saturation * decay;
    }
    Ok(sum.min(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SocialEdge {
    pub history: Vec<Interaction>,
    pub tie_strength: f64,
}

fn key(a: AvatarId, b: AvatarId) -> (AvatarId, AvatarId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Undirected, loop-free graph with cached tie strengths.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialGraph {
    params: TrustParams,
    now: f64,
    avatars: BTreeSet<AvatarId>,
    edges: BTreeMap<(AvatarId, AvatarId), SocialEdge>,
    adjacency: BTreeMap<AvatarId, BTreeSet<AvatarId>>,
}

impl SocialGraph {
    pub fn new(avatars: impl IntoIterator<Item = AvatarId>, now: f64, params: TrustParams) -> Result<Self, GraphError> {
        params.validate()?;
        if !(now >= 0.0) {
            return Err(GraphError::InvalidInput("negative clock".into()));
        }
        let avatars: BTreeSet<_> = avatars.into_iter().collect();
        let adjacency = avatars.iter().map(|a| (*a, BTreeSet::new())).collect();
        Ok(SocialGraph { params, now, avatars, edges: BTreeMap::new(), adjacency })
    }

    pub fn params(&self) -> &TrustParams {
        &self.params
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn avatars(&self) -> impl ExactSizeIterator<Item = AvatarId> + '_ {
        self.avatars.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.avatars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avatars.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    fn require(&self, a: AvatarId) -> Result<(), GraphError> {
        if self.avatars.contains(&a) {
            Ok(())
        } else {
            Err(GraphError::UnknownAvatar(a))
        }
    }

    /// Appends an interaction to the (possibly new) edge `a`–`b` and refreshes
    /// its tie strength.
    pub fn record_interaction(&mut self, a: AvatarId, b: AvatarId, it: Interaction) -> Result<(), GraphError> {
        self.require(a)?;
        self.require(b)?;
        if a == b {
            return Err(GraphError::InvalidInput(format!("self-loop on {a}")));
        }
        let mut history = self.edges.get(&key(a, b)).map(|e| e.history.clone()).unwrap_or_default();
        history.push(it);
        let tie_strength = direct_trust(&history, self.now, &self.params)?;
        self.edges.insert(key(a, b), SocialEdge { history, tie_strength });
        self.adjacency.get_mut(&a).unwrap().insert(b);
        self.adjacency.get_mut(&b).unwrap().insert(a);
        Ok(())
    }

    pub fn edge(&self, a: AvatarId, b: AvatarId) -> Option<&SocialEdge> {
        self.edges.get(&key(a, b))
    }

    pub fn edges(&self) -> impl Iterator<Item = ((AvatarId, AvatarId), &SocialEdge)> {
        self.edges.iter().map(|(k, e)| (*k, e))
    }

    pub fn tie_strength(&self, a: AvatarId, b: AvatarId) -> f64 {
        self.edge(a, b).map_or(0.0, |e| e.tie_strength)
    }

    pub fn neighbors(&self, a: AvatarId) -> Result<impl Iterator<Item = AvatarId> + '_, GraphError> {
        self.require(a)?;
        Ok(self.adjacency[&a].iter().copied())
    }

    /// Best minimum-hop path from `src` to every reachable node: the
    /// product of tie strengths along it, and the path itself. Ties on the
    /// product fall to the lexicographically smallest node sequence.
    fn best_paths(&self, src: AvatarId) -> BTreeMap<AvatarId, (f64, Vec<AvatarId>)> {
        let mut dist: BTreeMap<AvatarId, usize> = BTreeMap::new();
        let mut order = Vec::new();
        let mut q = VecDeque::from([src]);
        dist.insert(src, 0);
        while let Some(u) = q.pop_front() {
            order.push(u);
            for &v in &self.adjacency[&u] {
                if !dist.contains_key(&v) {
                    dist.insert(v, dist[&u] + 1);
                    q.push_back(v);
                }
            }
        }
        let mut best: BTreeMap<AvatarId, (f64, Vec<AvatarId>)> = BTreeMap::new();
        best.insert(src, (1.0, vec![src]));
        // BFS order visits every node after all of its shortest-path predecessors.
        for &v in order.iter().skip(1) {
            let dv = dist[&v];
            let mut choice: Option<(f64, Vec<AvatarId>)> = None;
            for &u in &self.adjacency[&v] {
                if dist.get(&u) != Some(&(dv - 1)) {
                    continue;
                }
                let (pu, path_u) = &best[&u];
                let p = pu * self.tie_strength(u, v);
                let better = match &choice {
                    None => true,
                    Some((pc, path_c)) => p > *pc || (p == *pc && path_u.as_slice() < &path_c[..path_c.len() - 1]),
                };
                if better {
                    let mut path = path_u.clone();
                    path.push(v);
                    choice = Some((p, path));
                }
            }
            best.insert(v, choice.expect("non-source BFS node has a predecessor"));
        }
        best
    }

    /// The path indirect trust is evaluated along, or `None` if disconnected.
    pub fn trust_path(&self, i: AvatarId, j: AvatarId) -> Result<Option<Vec<AvatarId>>, GraphError> {
        self.require(i)?;
        self.require(j)?;
        Ok(self.best_paths(i).remove(&j).map(|(_, p)| p))
    }

    pub fn indirect_trust(&self, i: AvatarId, j: AvatarId) -> Result<f64, GraphError> {
        self.require(i)?;
        self.require(j)?;
        if i == j {
            return Ok(1.0);
        }
        Ok(self.best_paths(i).get(&j).map_or(0.0, |(p, _)| *p))
    }

    pub fn combined_trust(&self, i: AvatarId, j: AvatarId) -> Result<f64, GraphError> {
        self.require(i)?;
        self.require(j)?;
        if i == j {
            return Err(GraphError::InvalidInput(format!("combined trust of {i} with itself")));
        }
        let a = self.params.alpha_mix;
        Ok(a * self.tie_strength(i, j) + (1.0 - a) * self.indirect_trust(i, j)?)
    }

    pub fn social_impact(&self, i: AvatarId) -> Result<f64, GraphError> {
        Ok(self.neighbors(i)?.map(|j| self.tie_strength(i, j)).sum())
    }

    /// Pairwise combined trust for every pair, one BFS per source.
    pub fn trust_matrix(&self) -> TrustMatrix {
        let ids: Vec<AvatarId> = self.avatars.iter().copied().collect();
        let index: BTreeMap<AvatarId, usize> = ids.iter().enumerate().map(|(k, a)| (*a, k)).collect();
        let n = ids.len();
        let a = self.params.alpha_mix;
        let mut values = vec![0.0; n * n];
        for (si, &s) in ids.iter().enumerate() {
            values[si * n + si] = 1.0;
            for (t, (p, _)) in self.best_paths(s) {
                if t != s {
                    values[si * n + index[&t]] = a * self.tie_strength(s, t) + (1.0 - a) * p;
                }
            }
        }
        TrustMatrix { ids, index, values, theta: self.params.theta_trust }
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            now: self.now,
            params: self.params,
            nodes: self.avatars.iter().copied().collect(),
            edges: self.edges.iter().map(|((a, b), e)| (*a, *b, e.history.clone())).collect(),
        }
    }

    pub fn from_file(file: GraphFile) -> Result<Self, GraphError> {
        let mut g = SocialGraph::new(file.nodes, file.now, file.params)?;
        for (a, b, history) in file.edges {
            if g.edge(a, b).is_some() {
                return Err(GraphError::InvalidInput(format!("duplicate edge {a}-{b}")));
            }
            for it in history {
                g.record_interaction(a, b, it)?;
            }
        }
        Ok(g)
    }

    pub fn save(&self, path: &Path) -> Result<(), GraphError> {
        let s = serde_json::to_string_pretty(&self.to_file()).map_err(|e| GraphError::Io(e.to_string()))?;
        fs::write(path, s).map_err(|e| GraphError::Io(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, GraphError> {
        let s = fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
        Self::from_file(serde_json::from_str(&s).map_err(|e| GraphError::Io(e.to_string()))?)
    }
}

/// On-disk form: node list plus `(id_a, id_b, interactions)` triples.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GraphFile {
    pub now: f64,
    pub params: TrustParams,
    pub nodes: Vec<AvatarId>,
    pub edges: Vec<(AvatarId, AvatarId, Vec<Interaction>)>,
}

/// Precomputed combined trust between every pair of avatars.
#[derive(Clone, Debug)]
pub struct TrustMatrix {
    ids: Vec<AvatarId>,
    index: BTreeMap<AvatarId, usize>,
    values: Vec<f64>,
    theta: f64,
}

impl TrustMatrix {
    pub fn get(&self, a: AvatarId, b: AvatarId) -> f64 {
        let n = self.ids.len();
        self.values[self.index[&a] * n + self.index[&b]]
    }

    pub fn threshold(&self) -> f64 {
        self.theta
    }

    pub fn trusts(&self, a: AvatarId, b: AvatarId) -> bool {
        a == b || (self.get(a, b) >= self.theta && self.get(b, a) >= self.theta)
    }

    /// True iff `a` trusts, and is trusted by, every member.
    pub fn admits<'m>(&self, a: AvatarId, members: impl IntoIterator<Item = &'m AvatarId>) -> bool {
        members.into_iter().all(|m| self.trusts(a, *m))
    }

    pub fn ids(&self) -> &[AvatarId] {
        &self.ids
    }

    /// A matrix where every pair has the same trust; handy for tests.
    pub fn uniform(ids: impl IntoIterator<Item = AvatarId>, trust: f64, theta: f64) -> Self {
        let ids: Vec<AvatarId> = ids.into_iter().collect();
        let n = ids.len();
        let index = ids.iter().enumerate().map(|(k, a)| (*a, k)).collect();
        let mut values = vec![trust; n * n];
        for k in 0..n {
            values[k * n + k] = 1.0;
        }
        TrustMatrix { ids, index, values, theta }
    }
}

/// Erdős–Rényi graph whose edges carry one synthetic interaction each, tuned
/// so that the tie strength equals a uniform draw on `[0, 1]`.
pub fn random_graph(n: usize, density: f64, seed: u64, params: TrustParams) -> Result<SocialGraph, GraphError> {
    if n == 0 {
        return Err(GraphError::InvalidInput("graph needs at least one avatar".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(GraphError::InvalidInput(format!("density {density} outside [0,1]")));
    }
    let mut g = SocialGraph::new((0..n as u32).map(AvatarId), 0.0, params)?;
    let mut r = rng::stream(seed, "social_graph", 0, 0);
    // exp(-60) vanishes against 1.0 in binary64, so the duration factor is exactly 1.
    let duration = 60.0 * params.tau_duration;
    for a in 0..n as u32 {
        for b in a + 1..n as u32 {
            let present = r.random::<f64>() < density;
            let strength = r.random::<f64>();
            if present {
                g.record_interaction(AvatarId(a), AvatarId(b), Interaction::new(strength, duration, 0.0)?)?;
            }
        }
    }
    Ok(g)
}
