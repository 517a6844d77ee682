//! Greedy demonstration retrieval: relevance scoring with an optional
//! quality-bias term, maximal-marginal-relevance diversification, and the
//! ablation variants that use only some of the three components.
//!
//! Selection is exhaustive over the candidate pool (no approximate index)
//! and fully deterministic: every argmax breaks ties on the lowest
//! candidate position.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{Embedding, EmbeddingError, UNIT_NORM_TOL};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("candidate index is empty")]
    EmptyIndex,
    #[error("index fields have mismatched lengths: {0} ids, {1} embeddings, {2} biases")]
    MismatchedLengths(usize, usize, usize),
    #[error("candidate {0} is not unit-normalized (norm {1})")]
    NotUnitNorm(usize, f64),
    #[error("method {0} requires a query embedding")]
    MissingQuery(Method),
    #[error("method Fix requires at least one fixed id")]
    MissingFixedIds,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

/// The six retriever variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// A fixed, user-supplied list of demonstration ids.
    Fix,
    /// Pure quality bias: top-k by b.
    Bias,
    /// Pure semantic similarity: top-k by cosine to the query.
    Rel,
    /// Semantic similarity mixed with quality bias.
    RelBias,
    /// Semantic similarity with diversity re-ranking.
    RelDiv,
    /// All three components.
    RelDivBias,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Fix,
        Method::Bias,
        Method::Rel,
        Method::RelBias,
        Method::RelDiv,
        Method::RelDivBias,
    ];

    /// Whether this variant reads the quality-bias column.
    pub fn uses_bias(self) -> bool {
        matches!(self, Method::Bias | Method::RelBias | Method::RelDivBias)
    }

    /// Whether this variant needs a query embedding.
    pub fn needs_query(self) -> bool {
        !matches!(self, Method::Fix | Method::Bias)
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s.to_ascii_lowercase().as_str() {
            "fix" => Some(Method::Fix),
            "bias" => Some(Method::Bias),
            "rel" => Some(Method::Rel),
            "rel-bias" | "relbias" => Some(Method::RelBias),
            "rel-div" | "reldiv" => Some(Method::RelDiv),
            "rel-div-bias" | "reldivbias" => Some(Method::RelDivBias),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Method::Fix => "Fix",
            Method::Bias => "Bias",
            Method::Rel => "Rel",
            Method::RelBias => "Rel+Bias",
            Method::RelDiv => "Rel+Div",
            Method::RelDivBias => "Rel+Div+Bias",
        };
        f.write_str(name)
    }
}

/// Retriever configuration. `lambda_d` trades relevance against diversity
/// (1 = pure relevance); `lambda_b` trades relevance against quality bias
/// (1 = no bias).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub method: Method,
    pub k: usize,
    pub lambda_d: f64,
    pub lambda_b: f64,
    /// Demonstration ids used by the Fix variant, ignored otherwise.
    #[serde(default)]
    pub fixed_ids: Vec<String>,
    /// Min-max rescale biases to [0, 1] over the index before mixing.
    /// Off by default: raw mean log-probabilities are mixed as-is.
    #[serde(default)]
    pub rescale_bias: bool,
}

impl RetrieverConfig {
    pub fn new(method: Method, k: usize, lambda_d: f64, lambda_b: f64) -> Self {
        Self {
            method,
            k,
            lambda_d,
            lambda_b,
            fixed_ids: Vec::new(),
            rescale_bias: false,
        }
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        if !(0.0..=1.0).contains(&self.lambda_d) || !self.lambda_d.is_finite() {
            return Err(RetrievalError::InvalidConfig(format!(
                "lambda_d must be in [0, 1], got {}",
                self.lambda_d
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda_b) || !self.lambda_b.is_finite() {
            return Err(RetrievalError::InvalidConfig(format!(
                "lambda_b must be in [0, 1], got {}",
                self.lambda_b
            )));
        }
        if self.k < 1 {
            return Err(RetrievalError::InvalidConfig("k must be >= 1".into()));
        }
        if self.method == Method::Fix && self.fixed_ids.is_empty() {
            return Err(RetrievalError::MissingFixedIds);
        }
        Ok(())
    }
}

/// The candidate pool in columnar form: ids, unit-normalized question
/// embeddings, and quality biases, all of equal length n >= 1. Immutable
/// after construction.
#[derive(Debug, Clone)]
pub struct CandidateIndex {
    ids: Vec<String>,
    embeddings: Vec<Arc<Embedding>>,
    biases: Vec<f64>,
}

impl CandidateIndex {
    pub fn new(
        ids: Vec<String>,
        embeddings: Vec<Arc<Embedding>>,
        biases: Vec<f64>,
    ) -> Result<Self, RetrievalError> {
        if ids.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        if ids.len() != embeddings.len() || ids.len() != biases.len() {
            return Err(RetrievalError::MismatchedLengths(
                ids.len(),
                embeddings.len(),
                biases.len(),
            ));
        }
        for (i, e) in embeddings.iter().enumerate() {
            let norm = e.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(RetrievalError::NotUnitNorm(i, norm));
            }
        }
        if let Some(i) = biases.iter().position(|b| !b.is_finite()) {
            return Err(RetrievalError::InvalidConfig(format!(
                "bias {i} is not finite"
            )));
        }
        Ok(Self {
            ids,
            embeddings,
            biases,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn embeddings(&self) -> &[Arc<Embedding>] {
        &self.embeddings
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn dim(&self) -> usize {
        self.embeddings[0].dim()
    }

    /// Biases with the optional min-max rescale applied.
    fn effective_biases(&self, rescale: bool) -> Vec<f64> {
        if !rescale {
            return self.biases.clone();
        }
        let min = self.biases.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self
            .biases
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let span = max - min;
        if span <= 0.0 {
            return vec![0.0; self.biases.len()];
        }
        self.biases.iter().map(|b| (b - min) / span).collect()
    }
}

/// An ordered selection of demonstration ids with the per-step selection
/// scores that chose them.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievedContext {
    pub ids: Vec<String>,
    pub scores: Vec<f64>,
}

impl RetrievedContext {
    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            scores: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Position of the maximum, ties broken by lowest position. None on empty.
fn argmax(values: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values {
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

/// Relevance mixed with quality bias:
/// `v_i = lambda_b * (Q . E_i) + (1 - lambda_b) * b_i`.
///
/// The query must be unit-normalized and match the index dimension. With
/// `lambda_b = 1` this is plain cosine to the query; with `lambda_b = 0`
/// it is the raw bias column.
pub fn biased_relevance(
    query: &Embedding,
    index: &CandidateIndex,
    lambda_b: f64,
) -> Result<Vec<f64>, RetrievalError> {
    let mut out = Vec::with_capacity(index.len());
    for (e, b) in index.embeddings.iter().zip(&index.biases) {
        let sim = query.dot(e)?;
        out.push(lambda_b * sim + (1.0 - lambda_b) * b);
    }
    Ok(out)
}

fn biased_relevance_with(
    query: &Embedding,
    index: &CandidateIndex,
    lambda_b: f64,
    biases: &[f64],
) -> Result<Vec<f64>, RetrievalError> {
    let mut out = Vec::with_capacity(index.len());
    for (e, b) in index.embeddings.iter().zip(biases) {
        let sim = query.dot(e)?;
        out.push(lambda_b * sim + (1.0 - lambda_b) * b);
    }
    Ok(out)
}

/// Greedy maximal-marginal-relevance selection with quality bias.
///
/// The query is normalized, `v = biased_relevance(Q, index, lambda_b)` is
/// computed once, the first pick is `argmax v`, and each subsequent pick
/// maximizes `w_i = lambda_d * v_i - (1 - lambda_d) * m_i` over unselected
/// candidates, where `m_i` is the maximum dot product between candidate i
/// and the already-selected embeddings. Returns `min(k, n)` items in
/// selection order; the recorded score for the first pick is its v value,
/// for later picks the w value at selection time.
pub fn mmr_select(
    index: &CandidateIndex,
    query: &Embedding,
    k: usize,
    lambda_d: f64,
    lambda_b: f64,
) -> Result<RetrievedContext, RetrievalError> {
    mmr_select_with(index, query, k, lambda_d, lambda_b, false)
}

fn mmr_select_with(
    index: &CandidateIndex,
    query: &Embedding,
    k: usize,
    lambda_d: f64,
    lambda_b: f64,
    rescale_bias: bool,
) -> Result<RetrievedContext, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let n = index.len();
    let take = k.min(n);
    if take == 0 {
        return Ok(RetrievedContext::empty());
    }

    let query = query.normalize()?;
    let biases = index.effective_biases(rescale_bias);
    let v = biased_relevance_with(&query, index, lambda_b, &biases)?;

    let mut selected: Vec<usize> = Vec::with_capacity(take);
    let mut scores: Vec<f64> = Vec::with_capacity(take);
    let mut taken = vec![false; n];
    // m[i] = max dot product between candidate i and the selected set
    let mut m = vec![f64::NEG_INFINITY; n];

    let first = argmax(v.iter().copied().enumerate()).expect("non-empty index");
    selected.push(first);
    scores.push(v[first]);
    taken[first] = true;

    while selected.len() < take {
        let last = *selected.last().expect("at least one selected");
        for (mi, emb) in m.iter_mut().zip(&index.embeddings) {
            let sim = emb
                .dot(&index.embeddings[last])
                .expect("index embeddings share a dimension");
            if sim > *mi {
                *mi = sim;
            }
        }
        let pick = argmax(
            (0..n)
                .filter(|&i| !taken[i])
                .map(|i| (i, lambda_d * v[i] - (1.0 - lambda_d) * m[i])),
        )
        .expect("unselected candidates remain");
        scores.push(lambda_d * v[pick] - (1.0 - lambda_d) * m[pick]);
        selected.push(pick);
        taken[pick] = true;
    }

    Ok(RetrievedContext {
        ids: selected.iter().map(|&i| index.ids[i].clone()).collect(),
        scores,
    })
}

/// Top-k candidates by the given score vector, descending, ties broken by
/// lowest position. `scores` must have one entry per candidate.
pub fn top_k_by_score(
    index: &CandidateIndex,
    scores: &[f64],
    k: usize,
) -> Result<RetrievedContext, RetrievalError> {
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    assert_eq!(
        scores.len(),
        index.len(),
        "one score per candidate required"
    );
    let mut order: Vec<usize> = (0..index.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    Ok(RetrievedContext {
        ids: order.iter().map(|&i| index.ids[i].clone()).collect(),
        scores: order.iter().map(|&i| scores[i]).collect(),
    })
}

/// Dispatch a retriever configuration against the index. A query embedding
/// is required for every method except Fix and Bias.
pub fn retrieve(
    config: &RetrieverConfig,
    index: &CandidateIndex,
    query: Option<&Embedding>,
) -> Result<RetrievedContext, RetrievalError> {
    config.validate()?;
    let need_query = || query.ok_or(RetrievalError::MissingQuery(config.method));
    match config.method {
        Method::Fix => {
            let positions: HashMap<&str, usize> = index
                .ids
                .iter()
                .enumerate()
                .map(|(i, id)| (id.as_str(), i))
                .collect();
            let mut seen = std::collections::HashSet::new();
            let ids: Vec<String> = config
                .fixed_ids
                .iter()
                .filter(|id| positions.contains_key(id.as_str()) && seen.insert(id.as_str()))
                .cloned()
                .collect();
            let scores = vec![0.0; ids.len()];
            Ok(RetrievedContext { ids, scores })
        }
        Method::Bias => {
            let biases = index.effective_biases(config.rescale_bias);
            top_k_by_score(index, &biases, config.k)
        }
        Method::Rel => mmr_select_with(index, need_query()?, config.k, 1.0, 1.0, false),
        Method::RelBias => mmr_select_with(
            index,
            need_query()?,
            config.k,
            1.0,
            config.lambda_b,
            config.rescale_bias,
        ),
        Method::RelDiv => {
            mmr_select_with(index, need_query()?, config.k, config.lambda_d, 1.0, false)
        }
        Method::RelDivBias => mmr_select_with(
            index,
            need_query()?,
            config.k,
            config.lambda_d,
            config.lambda_b,
            config.rescale_bias,
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(v: &[f64]) -> Arc<Embedding> {
        Arc::new(Embedding::new(v.to_vec()).unwrap().normalize().unwrap())
    }

    fn index(embs: &[&[f64]], biases: &[f64]) -> CandidateIndex {
        let ids = (0..embs.len()).map(|i| format!("d{i}")).collect();
        let embeddings = embs.iter().map(|e| unit(e)).collect();
        CandidateIndex::new(ids, embeddings, biases.to_vec()).unwrap()
    }

    #[test]
    fn biased_relevance_lambda_one_is_cosine() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0]], &[-5.0, -1.0]);
        let q = unit(&[1.0, 0.0]);
        let v = biased_relevance(&q, &idx, 1.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-12);
        assert!(v[1].abs() < 1e-12);
    }

    #[test]
    fn biased_relevance_lambda_zero_is_bias() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0]], &[-5.0, -1.0]);
        let q = unit(&[1.0, 0.0]);
        let v = biased_relevance(&q, &idx, 0.0).unwrap();
        assert_eq!(v, vec![-5.0, -1.0]);
    }

    #[test]
    fn biased_relevance_mix() {
        let idx = index(&[&[1.0, 0.0]], &[-2.0]);
        let q = unit(&[1.0, 0.0]);
        let v = biased_relevance(&q, &idx, 0.95).unwrap();
        assert!((v[0] - 0.85).abs() < 1e-12); // 0.95*1 + 0.05*(-2)
    }

    #[test]
    fn mmr_hand_trace() {
        // duplicate of the query at positions 0 and 1, orthogonal at 2;
        // step 1 takes position 0 (tie broken low), step 2 the orthogonal
        // candidate: w_1 = 0.4*1 - 0.6*1 = -0.2 < w_2 = 0.4*0 - 0.6*0 = 0
        let idx = index(&[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0, 0.0]);
        let q = unit(&[1.0, 0.0]);
        let ctx = mmr_select(&idx, &q, 2, 0.4, 1.0).unwrap();
        assert_eq!(ctx.ids, vec!["d0", "d2"]);
        assert!((ctx.scores[0] - 1.0).abs() < 1e-12);
        assert!(ctx.scores[1].abs() < 1e-12);
    }

    #[test]
    fn mmr_pure_relevance_is_top_k() {
        let idx = index(
            &[&[1.0, 0.2], &[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.1]],
            &[0.0; 4],
        );
        let q = unit(&[1.0, 0.0]);
        let mmr = mmr_select(&idx, &q, 3, 1.0, 1.0).unwrap();
        let sims: Vec<f64> = idx.embeddings().iter().map(|e| q.dot(e).unwrap()).collect();
        let top = top_k_by_score(&idx, &sims, 3).unwrap();
        assert_eq!(mmr.ids, top.ids);
    }

    #[test]
    fn mmr_k_equals_n_returns_all() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], &[0.0; 3]);
        let q = unit(&[1.0, 0.0]);
        let ctx = mmr_select(&idx, &q, 3, 0.5, 1.0).unwrap();
        assert_eq!(ctx.len(), 3);
        let mut ids = ctx.ids.clone();
        ids.sort();
        assert_eq!(ids, vec!["d0", "d1", "d2"]);
    }

    #[test]
    fn mmr_k_larger_than_n() {
        let idx = index(&[&[1.0, 0.0]], &[0.0]);
        let q = unit(&[1.0, 0.0]);
        assert_eq!(mmr_select(&idx, &q, 10, 0.5, 1.0).unwrap().len(), 1);
    }

    #[test]
    fn top_k_examples() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]], &[0.0; 3]);
        let ctx = top_k_by_score(&idx, &[0.1, 0.9, 0.5], 2).unwrap();
        assert_eq!(ctx.ids, vec!["d1", "d2"]);
        // ties broken by lowest position
        let ctx = top_k_by_score(&idx, &[0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(ctx.ids, vec!["d0", "d1"]);
        // k > n returns everything
        assert_eq!(top_k_by_score(&idx, &[0.1, 0.2, 0.3], 5).unwrap().len(), 3);
    }

    #[test]
    fn retrieve_rel_equals_reldiv_at_lambda_one() {
        let idx = index(
            &[&[1.0, 0.3], &[0.5, 1.0], &[1.0, 0.0], &[0.2, 0.9]],
            &[-1.0, -2.0, -3.0, -4.0],
        );
        let q = unit(&[1.0, 0.1]);
        let rel = retrieve(
            &RetrieverConfig::new(Method::Rel, 3, 0.75, 0.95),
            &idx,
            Some(&q),
        )
        .unwrap();
        let mut cfg = RetrieverConfig::new(Method::RelDiv, 3, 1.0, 0.95);
        cfg.lambda_d = 1.0;
        let reldiv = retrieve(&cfg, &idx, Some(&q)).unwrap();
        assert_eq!(rel.ids, reldiv.ids);
    }

    #[test]
    fn retrieve_bias_ranks_by_bias() {
        let idx = index(
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]],
            &[-1.0, -3.0, -2.0],
        );
        let ctx = retrieve(&RetrieverConfig::new(Method::Bias, 2, 1.0, 1.0), &idx, None).unwrap();
        assert_eq!(ctx.ids, vec!["d0", "d2"]);
    }

    #[test]
    fn retrieve_fix_intersects_preserving_order() {
        let idx = index(&[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0]);
        let mut cfg = RetrieverConfig::new(Method::Fix, 6, 1.0, 1.0);
        cfg.fixed_ids = vec!["d1".into(), "missing".into(), "d0".into(), "d1".into()];
        let ctx = retrieve(&cfg, &idx, None).unwrap();
        assert_eq!(ctx.ids, vec!["d1", "d0"]);
    }

    #[test]
    fn retrieve_missing_query_and_fixed_ids() {
        let idx = index(&[&[1.0, 0.0]], &[0.0]);
        let err =
            retrieve(&RetrieverConfig::new(Method::Rel, 1, 1.0, 1.0), &idx, None).unwrap_err();
        assert!(matches!(err, RetrievalError::MissingQuery(Method::Rel)));
        let err =
            retrieve(&RetrieverConfig::new(Method::Fix, 1, 1.0, 1.0), &idx, None).unwrap_err();
        assert!(matches!(err, RetrievalError::MissingFixedIds));
    }

    #[test]
    fn config_validation_bounds() {
        let mut cfg = RetrieverConfig::new(Method::Rel, 1, 1.2, 1.0);
        assert!(cfg.validate().is_err());
        cfg.lambda_d = 0.5;
        cfg.lambda_b = -0.1;
        assert!(cfg.validate().is_err());
        cfg.lambda_b = 0.5;
        cfg.k = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn index_rejects_bad_inputs() {
        assert!(matches!(
            CandidateIndex::new(vec![], vec![], vec![]),
            Err(RetrievalError::EmptyIndex)
        ));
        let not_unit = Arc::new(Embedding::new(vec![2.0, 0.0]).unwrap());
        assert!(matches!(
            CandidateIndex::new(vec!["a".into()], vec![not_unit], vec![0.0]),
            Err(RetrievalError::NotUnitNorm(0, _))
        ));
    }

    #[test]
    fn bias_rescale_maps_to_unit_interval() {
        let idx = index(
            &[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]],
            &[-4.0, -2.0, -3.0],
        );
        let scaled = idx.effective_biases(true);
        assert_eq!(scaled, vec![0.0, 1.0, 0.5]);
        let idx = index(&[&[1.0, 0.0]], &[-4.0]);
        assert_eq!(idx.effective_biases(true), vec![0.0]);
    }

    #[test]
    fn first_pick_ignores_lambda_d() {
        let idx = index(
            &[&[1.0, 0.1], &[0.9, 0.5], &[0.1, 1.0]],
            &[-1.0, -0.5, -2.0],
        );
        let q = unit(&[1.0, 0.0]);
        let mut first_ids = std::collections::HashSet::new();
        for lambda_d in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let ctx = mmr_select(&idx, &q, 2, lambda_d, 0.9).unwrap();
            first_ids.insert(ctx.ids[0].clone());
        }
        assert_eq!(first_ids.len(), 1);
    }
}
