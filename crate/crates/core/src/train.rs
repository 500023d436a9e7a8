//! Mini-batch Adam training and evaluation for graph classifiers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, GeoError, Result};
use crate::geom::GeometricGraph;
use crate::unet::{batch_inputs, GraphClassifier, Hierarchy};
use crate::tensor::{ParamStore, Tape, Tensor};

/// A labelled graph with its precomputed pooling hierarchy.
#[derive(Debug, Clone)]
pub struct Sample {
    pub graph: GeometricGraph,
    pub hierarchy: Hierarchy,
    pub label: usize,
}

impl Sample {
    pub fn new<M: GraphClassifier + ?Sized>(model: &M, graph: GeometricGraph, label: usize) -> Result<Self> {
        let hierarchy = model.hierarchy(&graph)?;
        Ok(Sample { graph, hierarchy, label })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    /// Graphs per Adam step; the whole set when larger than it.
    pub batch_size: usize,
    /// Seed for the per-epoch shuffle.
    pub shuffle_seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Set when training stopped on a non-finite loss or gradient.
    pub diverged: Option<String>,
}

/// Mean cross-entropy of a batch and its parameter gradients.
pub fn loss_and_gradients<M: GraphClassifier + ?Sized>(
    model: &M,
    store: &ParamStore,
    batch: &[&Sample],
) -> Result<(f64, BTreeMap<String, Tensor>)> {
    let mut tape = Tape::new();
    let b = store.bind(&mut tape);
    let h = Hierarchy::batch(&batch.iter().map(|s| &s.hierarchy).collect::<Vec<_>>())?;
    let input = batch_inputs(&mut tape, &batch.iter().map(|s| &s.graph).collect::<Vec<_>>())?;
    let logits = model.logits(&mut tape, &b, &h, input)?;
    let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
    let loss = tape.softmax_cross_entropy_mean(logits, &labels)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), b.gradients(&grads)))
}

/// Trains in place. Divergence ends training early and is reported in the
/// log rather than as an error.
pub fn fit<M: GraphClassifier + ?Sized>(
    model: &M,
    store: &mut ParamStore,
    samples: &[Sample],
    opts: &TrainOptions,
) -> Result<TrainLog> {
    if samples.is_empty() {
        return Err(invalid("cannot train on an empty dataset"));
    }
    if opts.batch_size == 0 || !(opts.lr > 0.0) {
        return Err(invalid("batch_size and lr must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();
    for epoch in 0..opts.epochs {
        if opts.batch_size < samples.len() {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (loss, grads) = loss_and_gradients(model, store, &batch)?;
            if !loss.is_finite() {
                log.diverged = Some(format!("non-finite loss in epoch {epoch}"));
                return Ok(log);
            }
            match store.adam_step(&grads, opts.lr) {
                Ok(()) => {}
                Err(GeoError::NonFiniteGradient(name)) => {
                    log.diverged = Some(format!("non-finite gradient for `{name}` in epoch {epoch}"));
                    return Ok(log);
                }
                Err(e) => return Err(e),
            }
            total += loss * batch.len() as f64;
        }
        log.epoch_losses.push(total / samples.len() as f64);
    }
    Ok(log)
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of every sample, evaluated in batches of `batch_size`.
pub fn predict<M: GraphClassifier + ?Sized>(
    model: &M,
    store: &ParamStore,
    samples: &[Sample],
    batch_size: usize,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let h = Hierarchy::batch(&chunk.iter().map(|s| &s.hierarchy).collect::<Vec<_>>())?;
        let input = batch_inputs(&mut tape, &chunk.iter().map(|s| &s.graph).collect::<Vec<_>>())?;
        let logits = model.logits(&mut tape, &b, &h, input)?;
        let y = tape.value(logits);
        out.extend((0..y.rows()).map(|r| argmax(y.row(r))));
    }
    Ok(out)
}

/// Fraction of samples classified correctly.
pub fn accuracy<M: GraphClassifier + ?Sized>(
    model: &M,
    store: &ParamStore,
    samples: &[Sample],
    batch_size: usize,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid("cannot evaluate an empty dataset"));
    }
    let pred = predict(model, store, samples, batch_size)?;
    let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::knn_edges;
    use crate::layers::LayerKind;
    use crate::unet::{FlatModel, UNetConfig};
    use rand::Rng;

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn population_std() {
        let xs: Vec<f64> = [100.0; 6].iter().chain(&[50.0; 4]).copied().collect();
        let (m, s) = mean_std(&xs);
        assert_eq!(m, 80.0);
        assert!((s - 24.494_897_427_831_78).abs() < 1e-12);
    }

    #[test]
    fn fit_separates_two_sizes_of_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let config = UNetConfig {
            layer_kind: LayerKind::Invariant,
            feature_width: 8,
            vector_channels: 1,
            readout_width: 8,
            hidden_width: 16,
            input_width: 1,
            input_channels: 0,
            rbf_cutoff: 6.0,
            ..UNetConfig::default()
        };
        let mut store = ParamStore::new();
        let model = FlatModel::new(config, 1, &mut store, &mut rng).unwrap();
        let mut samples = Vec::new();
        for i in 0..8 {
            let scale = if i % 2 == 0 { 0.5 } else { 2.0 };
            let coords: Vec<f64> = (0..18).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let edges = knn_edges(&coords, 3, 3).unwrap();
            let g = GeometricGraph::from_parts(3, coords, &edges, 1, vec![1.0; 6], 0, Vec::new()).unwrap();
            samples.push(Sample::new(&model, g, i % 2).unwrap());
        }
        let opts = TrainOptions { epochs: 150, lr: 0.01, batch_size: 4, shuffle_seed: 1 };
        let log = fit(&model, &mut store, &samples, &opts).unwrap();
        assert!(log.diverged.is_none());
        assert!(log.epoch_losses.last().unwrap() < &log.epoch_losses[0]);
        assert_eq!(accuracy(&model, &store, &samples, 3).unwrap(), 1.0);
    }
}
