//! IID and label-skewed (Dirichlet) client partitioning.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::image::Dataset;
use crate::error::{Error, Result};
use crate::rng::dirichlet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub scheme: PartitionScheme,
    /// Dirichlet concentration; smaller is more skewed. Ignored for IID.
    pub beta: f64,
    pub client_sizes: Vec<usize>,
}

/// Disjoint index sets into the source dataset, one per client.
pub fn partition_indices<R: Rng + ?Sized>(
    dataset: &Dataset,
    plan: &PartitionPlan,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    let total: usize = plan.client_sizes.iter().sum();
    if total > dataset.len() {
        return Err(Error::InfeasiblePartition(format!(
            "clients need {total} examples, source has {}",
            dataset.len()
        )));
    }
    if plan.client_sizes.contains(&0) {
        return Err(Error::InfeasiblePartition("client size 0".into()));
    }
    match plan.scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..dataset.len()).collect();
            order.shuffle(rng);
            let mut offset = 0;
            Ok(plan
                .client_sizes
                .iter()
                .map(|&n| {
                    let part = order[offset..offset + n].to_vec();
                    offset += n;
                    part
                })
                .collect())
        }
        PartitionScheme::Dirichlet => {
            if !(plan.beta > 0.0 && plan.beta.is_finite()) {
                return Err(Error::invalid(format!("dirichlet beta must be positive, got {}", plan.beta)));
            }
            let labels = dataset.labels()?;
            let classes = dataset.num_classes();
            let mut pools: Vec<Vec<usize>> = vec![Vec::new(); classes];
            for (i, &l) in labels.iter().enumerate() {
                pools[l].push(i);
            }
            for pool in &mut pools {
                pool.shuffle(rng);
            }
            plan.client_sizes
                .iter()
                .map(|&n| {
                    let props = dirichlet(plan.beta, classes, rng);
                    let targets = largest_remainder(&props, n);
                    draw_from_pools(&mut pools, &targets, &props, n)
                })
                .collect()
        }
    }
}

pub fn partition<R: Rng + ?Sized>(dataset: &Dataset, plan: &PartitionPlan, rng: &mut R) -> Result<Vec<Dataset>> {
    partition_indices(dataset, plan, rng)?
        .iter()
        .map(|idx| dataset.subset(idx))
        .collect()
}

/// Integer counts summing to `total` that best match `props * total`.
pub fn largest_remainder(props: &[f64], total: usize) -> Vec<usize> {
    let raw: Vec<f64> = props.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..props.len()).collect();
    // stable sort keeps ties at the lowest class index
    order.sort_by(|&a, &b| {
        let ra = raw[a] - raw[a].floor();
        let rb = raw[b] - raw[b].floor();
        rb.total_cmp(&ra)
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn draw_from_pools(pools: &mut [Vec<usize>], targets: &[usize], props: &[f64], n: usize) -> Result<Vec<usize>> {
    let mut picked = Vec::with_capacity(n);
    for (pool, &want) in pools.iter_mut().zip(targets) {
        let take = want.min(pool.len());
        picked.extend(pool.drain(pool.len() - take..));
    }
    // Shortfalls from exhausted classes go to the remaining classes, most
    // preferred first.
    let mut order: Vec<usize> = (0..pools.len()).collect();
    order.sort_by(|&a, &b| props[b].total_cmp(&props[a]));
    for c in order {
        if picked.len() == n {
            break;
        }
        let take = (n - picked.len()).min(pools[c].len());
        let pool = &mut pools[c];
        picked.extend(pool.drain(pool.len() - take..));
    }
    if picked.len() < n {
        return Err(Error::InfeasiblePartition(format!(
            "ran out of examples: wanted {n}, found {}",
            picked.len()
        )));
    }
    Ok(picked)
}
