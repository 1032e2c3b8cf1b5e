use std::sync::mpsc::sync_channel;

use super::data::BatchPlan;
use crate::error::{Error, Result};
use crate::hetgraph::HeteroGraph;
use crate::hgt::gather_features;
use crate::sampler::{hg_sample, SampledSubgraph, SamplerConfig};
use crate::tensor::Tensor;

/// A sampled mini-batch with its raw input features.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub sg: SampledSubgraph,
    pub features: Vec<Tensor>,
}

pub fn sample_plan(graph: &HeteroGraph, cfg: &SamplerConfig, plan: &BatchPlan) -> Result<Sampled> {
    let sg = hg_sample(graph, &plan.seeds, &plan.exclude, cfg, plan.id)?;
    let features = gather_features(graph, &sg);
    Ok(Sampled { sg, features })
}

/// Samples every plan and hands the results to `consume` in plan order.
/// With more than one worker, sampling runs ahead on background threads,
/// each feeding a bounded queue; the result is the same as with one worker
/// because every batch draws from its own RNG stream.
pub fn for_each_batch<F>(
    graph: &HeteroGraph,
    cfg: &SamplerConfig,
    plans: &[BatchPlan],
    workers: usize,
    mut consume: F,
) -> Result<()>
where
    F: FnMut(usize, &BatchPlan, Sampled) -> Result<()>,
{
    let workers = workers.clamp(1, plans.len().max(1));
    if workers == 1 {
        for (i, plan) in plans.iter().enumerate() {
            consume(i, plan, sample_plan(graph, cfg, plan)?)?;
        }
        return Ok(());
    }
    std::thread::scope(|scope| {
        let mut queues = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = sync_channel::<Result<Sampled>>(2);
            queues.push(rx);
            scope.spawn(move || {
                for plan in plans.iter().skip(w).step_by(workers) {
                    if tx.send(sample_plan(graph, cfg, plan)).is_err() {
                        break;
                    }
                }
            });
        }
        for (i, plan) in plans.iter().enumerate() {
            let batch = queues[i % workers]
                .recv()
                .map_err(|_| Error::Data(format!("sampler worker for batch {i} stopped")))??;
            consume(i, plan, batch)?;
        }
        Ok(())
    })
}
