//! Identity-balanced cross-modality batches: `P` identities, `K` tracklets of
//! each modality per identity.

use super::format::Dataset;
use super::Modality;
use crate::error::{Result, VldError};
use crate::rng::CounterRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub identities: usize,
    pub per_identity: usize,
}

impl BatchPlan {
    pub fn size(&self) -> usize {
        2 * self.identities * self.per_identity
    }
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self { identities: 4, per_identity: 4 }
    }
}

/// Visible block first, then infrared; identity-major inside each block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceBatch {
    /// indices into `Dataset::tracklets`
    pub indices: Vec<usize>,
    /// contiguous class indices
    pub labels: Vec<usize>,
    pub modalities: Vec<Modality>,
}

impl SequenceBatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Batch for an explicit identity list. Tracklets are drawn without
/// replacement when an identity has at least `K` of a modality.
pub fn batch_for(plan: &BatchPlan, ds: &Dataset, identities: &[usize], rng: &mut CounterRng) -> Result<SequenceBatch> {
    if identities.len() < 2 || plan.per_identity == 0 {
        return Err(VldError::Data(format!(
            "batch needs at least 2 identities and 1 tracklet each, got {} x {}",
            identities.len(),
            plan.per_identity
        )));
    }
    let mut b = SequenceBatch { indices: Vec::new(), labels: Vec::new(), modalities: Vec::new() };
    for m in [Modality::Visible, Modality::Infrared] {
        for &id in identities {
            let label = ds
                .class_of(id)
                .ok_or_else(|| VldError::Data(format!("identity {} not in dataset", id)))?;
            let mut pool: Vec<usize> = ds
                .tracklets
                .iter()
                .enumerate()
                .filter(|(_, t)| t.identity == id && t.modality == m)
                .map(|(i, _)| i)
                .collect();
            if pool.is_empty() {
                return Err(VldError::Data(format!("identity {} has no {} tracklets", id, m.as_str())));
            }
            rng.shuffle(&mut pool);
            for k in 0..plan.per_identity {
                let idx = if k < pool.len() { pool[k] } else { pool[rng.below(pool.len())] };
                b.indices.push(idx);
                b.labels.push(label);
                b.modalities.push(m);
            }
        }
    }
    Ok(b)
}

/// Random `P` identities among those present in both modalities.
pub fn sample_batch(plan: &BatchPlan, ds: &Dataset, rng: &mut CounterRng) -> Result<SequenceBatch> {
    let mut ids = ds.identities_with(1);
    if ids.len() < plan.identities {
        return Err(VldError::Data(format!(
            "plan needs {} identities with both modalities, dataset has {}",
            plan.identities,
            ids.len()
        )));
    }
    rng.shuffle(&mut ids);
    ids.truncate(plan.identities);
    batch_for(plan, ds, &ids, rng)
}

/// Identity groups covering one epoch: a shuffled identity list cut into
/// chunks of `P`; a short tail is topped up from the front of the shuffle.
pub fn epoch_groups(plan: &BatchPlan, ds: &Dataset, rng: &mut CounterRng) -> Result<Vec<Vec<usize>>> {
    let mut ids = ds.identities_with(1);
    if ids.len() < plan.identities || plan.identities < 2 {
        return Err(VldError::Data(format!(
            "plan needs {} identities with both modalities, dataset has {}",
            plan.identities,
            ids.len()
        )));
    }
    rng.shuffle(&mut ids);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < ids.len() {
        let mut g: Vec<usize> = ids[i..(i + plan.identities).min(ids.len())].to_vec();
        let mut j = 0;
        while g.len() < plan.identities {
            if !g.contains(&ids[j]) {
                g.push(ids[j]);
            }
            j += 1;
        }
        groups.push(g);
        i += plan.identities;
    }
    Ok(groups)
}
