//! Cross-modality retrieval: cosine ranking, CMC and mAP.

use serde::Serialize;

use crate::data::Modality;
use crate::error::{Result, VldError};
use crate::kernels::map_indices;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// infrared queries against a visible gallery
    Ir2Vis,
    /// visible queries against an infrared gallery
    Vis2Ir,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Ir2Vis => "ir2vis",
            Direction::Vis2Ir => "vis2ir",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ir2vis" => Some(Direction::Ir2Vis),
            "vis2ir" => Some(Direction::Vis2Ir),
            _ => None,
        }
    }

    pub fn query_modality(self) -> Modality {
        match self {
            Direction::Ir2Vis => Modality::Infrared,
            Direction::Vis2Ir => Modality::Visible,
        }
    }
}

/// Unit-norm features with their identity, modality and tracklet id.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    features: Tensor,
    pub identities: Vec<usize>,
    pub modalities: Vec<Modality>,
    pub ids: Vec<u64>,
}

impl GalleryIndex {
    /// Normalises the rows of `features` (`[G, D]`).
    pub fn new(features: Tensor, identities: Vec<usize>, modalities: Vec<Modality>, ids: Vec<u64>) -> Result<Self> {
        let s = features.shape();
        if s.len() != 2 || s[0] != identities.len() || s[0] != modalities.len() || s[0] != ids.len() {
            return Err(VldError::Dimension(format!(
                "features {:?} with {} identities, {} modalities, {} ids",
                s,
                identities.len(),
                modalities.len(),
                ids.len()
            )));
        }
        let d = s[1];
        let mut data = features.into_data();
        for row in data.chunks_mut(d.max(1)) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
        Ok(Self { features: Tensor::from_parts(vec![ids.len(), d], data), identities, modalities, ids })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn select(&self, modality: Modality) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.modalities[i] == modality).collect();
        let d = self.dim();
        let data = keep.iter().flat_map(|&i| self.features.row(i).iter().copied()).collect();
        Self {
            features: Tensor::from_parts(vec![keep.len(), d], data),
            identities: keep.iter().map(|&i| self.identities[i]).collect(),
            modalities: keep.iter().map(|&i| self.modalities[i]).collect(),
            ids: keep.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Query and gallery halves for one protocol direction.
    pub fn split(&self, direction: Direction) -> (Self, Self) {
        let q = direction.query_modality();
        let g = match q {
            Modality::Infrared => Modality::Visible,
            Modality::Visible => Modality::Infrared,
        };
        (self.select(q), self.select(g))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalReport {
    pub direction: Option<Direction>,
    /// `cmc[k]` is the match rate within the top `k + 1`
    pub cmc: Vec<f64>,
    pub map: f64,
    /// gallery tracklet ids in ranked order, per query
    pub ranked: Vec<Vec<u64>>,
    /// queries whose identity is absent from the gallery
    pub excluded: usize,
}

#[derive(Serialize)]
struct MetricsJson {
    rank1: f64,
    rank5: f64,
    rank10: f64,
    map: f64,
    direction: &'static str,
    queries: usize,
    excluded: usize,
}

impl RetrievalReport {
    /// CMC at rank `k` (1-based), saturating at the gallery size.
    pub fn rank(&self, k: usize) -> f64 {
        if self.cmc.is_empty() || k == 0 {
            return 0.0;
        }
        self.cmc[k.min(self.cmc.len()) - 1]
    }

    pub fn metrics_json(&self) -> String {
        let m = MetricsJson {
            rank1: self.rank(1),
            rank5: self.rank(5),
            rank10: self.rank(10),
            map: self.map,
            direction: self.direction.map_or("custom", |d| d.as_str()),
            queries: self.ranked.len(),
            excluded: self.excluded,
        };
        serde_json::to_string_pretty(&m).expect("metrics serialize") + "\n"
    }

    pub fn cmc_csv(&self) -> String {
        let mut s = String::from("rank,value\n");
        for (i, v) in self.cmc.iter().enumerate() {
            s.push_str(&format!("{},{}\n", i + 1, v));
        }
        s
    }
}

struct QueryResult {
    ranked: Vec<u64>,
    first_hit: Option<usize>,
    ap: f64,
}

fn rank_query(q: &[f64], qid: usize, gallery: &GalleryIndex) -> QueryResult {
    let sims: Vec<f64> = (0..gallery.len())
        .map(|j| q.iter().zip(gallery.features.row(j)).map(|(a, b)| a * b).sum())
        .collect();
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|&a, &b| {
        sims[b]
            .partial_cmp(&sims[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(gallery.ids[a].cmp(&gallery.ids[b]))
    });
    let mut hits = 0usize;
    let mut ap = 0.0;
    let mut first_hit = None;
    for (r, &j) in order.iter().enumerate() {
        if gallery.identities[j] == qid {
            hits += 1;
            ap += hits as f64 / (r + 1) as f64;
            first_hit.get_or_insert(r);
        }
    }
    if hits > 0 {
        ap /= hits as f64;
    }
    QueryResult { ranked: order.iter().map(|&j| gallery.ids[j]).collect(), first_hit, ap }
}

/// Ranks the gallery for every query by cosine similarity, ties broken by
/// ascending tracklet id.
pub fn evaluate(queries: &GalleryIndex, gallery: &GalleryIndex) -> Result<RetrievalReport> {
    if queries.is_empty() || gallery.is_empty() {
        return Err(VldError::EmptyInput("query or gallery set is empty".into()));
    }
    if queries.dim() != gallery.dim() {
        return Err(VldError::Dimension(format!("query dim {} vs gallery dim {}", queries.dim(), gallery.dim())));
    }
    if queries.modalities.iter().any(|m| gallery.modalities.contains(m)) {
        return Err(VldError::Contract("query and gallery share a modality".into()));
    }
    let results = map_indices(queries.len(), |i| rank_query(queries.features.row(i), queries.identities[i], gallery));
    let g = gallery.len();
    let mut counts = vec![0usize; g];
    let mut ap_sum = 0.0;
    let mut valid = 0usize;
    for r in &results {
        if let Some(f) = r.first_hit {
            counts[f] += 1;
            ap_sum += r.ap;
            valid += 1;
        }
    }
    if valid == 0 {
        return Err(VldError::EmptyInput("no query identity appears in the gallery".into()));
    }
    let mut cmc = Vec::with_capacity(g);
    let mut acc = 0usize;
    for c in counts {
        acc += c;
        cmc.push(acc as f64 / valid as f64);
    }
    Ok(RetrievalReport {
        direction: None,
        cmc,
        map: ap_sum / valid as f64,
        excluded: queries.len() - valid,
        ranked: results.into_iter().map(|r| r.ranked).collect(),
    })
}

/// [`evaluate`] for one protocol direction over a mixed-modality index.
pub fn evaluate_direction(index: &GalleryIndex, direction: Direction) -> Result<RetrievalReport> {
    let (q, g) = index.split(direction);
    let mut r = evaluate(&q, &g)?;
    r.direction = Some(direction);
    Ok(r)
}
