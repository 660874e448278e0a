use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rig::Pose;
use crate::synth::ProceduralHand;

pub const KDE_EPS: f64 = 1e-8;

/// Flattened posed vertices with the root transform removed. An empty
/// subset keeps every vertex.
pub fn root_normalized_vertices(hand: &ProceduralHand, pose: &Pose, subset: &[usize]) -> Result<Vec<f64>> {
    let local = Pose { root: crate::math::Rigid::IDENTITY, ..pose.clone() };
    let mesh = hand.posed_mesh(&local)?;
    let pick: Box<dyn Iterator<Item = usize>> = if subset.is_empty() { Box::new(0..mesh.vertices.len()) } else { Box::new(subset.iter().copied()) };
    pick.map(|i| mesh.vertices.get(i).map(|v| v.to_array()).ok_or_else(|| Error::invalid(format!("vertex {i} out of range"))))
        .collect::<Result<Vec<_>>>()
        .map(|v| v.concat())
}

/// Gaussian-KDE density of every vector against the whole set, with the
/// kernel normalization dropped. The bandwidth follows Scott's rule on the
/// mean per-dimension standard deviation.
pub fn kde_density(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = vectors.len();
    let d = vectors.first().map(Vec::len).ok_or_else(|| Error::invalid("KDE over an empty set"))?;
    if vectors.iter().any(|v| v.len() != d) {
        return Err(Error::invalid("KDE vectors differ in length"));
    }
    let mean: Vec<f64> = (0..d).map(|j| vectors.iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
    let sigma = (0..d)
        .map(|j| (vectors.iter().map(|v| (v[j] - mean[j]).powi(2)).sum::<f64>() / n as f64).sqrt())
        .sum::<f64>()
        / d.max(1) as f64;
    let h = sigma * (n as f64).powf(-1.0 / (d as f64 + 4.0));
    let h2 = if h > 0.0 { 2.0 * h * h } else { 1.0 };
    Ok(vectors
        .iter()
        .map(|a| {
            vectors
                .iter()
                .map(|b| (-a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / h2).exp())
                .sum::<f64>()
                / n as f64
        })
        .collect())
}

/// Sampling probabilities `∝ 1/(density + ε)`.
pub fn pose_importance_weights(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let inv: Vec<f64> = kde_density(vectors)?.into_iter().map(|p| 1.0 / (p + KDE_EPS)).collect();
    let total: f64 = inv.iter().sum();
    Ok(inv.into_iter().map(|w| w / total).collect())
}

/// Draws `count` indices by KDE importance. Without replacement when
/// `count ≤ n`; otherwise with replacement and a warning.
pub fn pose_importance_sample(vectors: &[Vec<f64>], count: usize, seed: u64) -> Result<Vec<usize>> {
    let weights = pose_importance_weights(vectors)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if count > vectors.len() {
        log::warn!("sampling {count} poses from {} with replacement", vectors.len());
        let dist = WeightedIndex::new(&weights).map_err(|e| Error::invalid(e.to_string()))?;
        return Ok((0..count).map(|_| dist.sample(&mut rng)).collect());
    }
    let picked = rand::seq::index::sample_weighted(&mut rng, vectors.len(), |i| weights[i], count)
        .map_err(|e| Error::invalid(e.to_string()))?;
    Ok(picked.into_vec())
}
