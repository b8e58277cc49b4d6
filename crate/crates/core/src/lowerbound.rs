//! The worst-case instance whose generalization gap provably scales with
//! the diffusion spectral norm: a complete graph with self-loops (all-ones
//! diffusion), rank-1 features aligned with the weight product's top left
//! singular vector, uniform binary labels, and the logistic loss.
//!
//! The model output collapses to `alpha * v1^T` with
//! `alpha = n^{l-1} * sigma_max(W^(1) ... W^(l))`, so each example's loss
//! is one of two values and the empirical-minus-expected loss is a
//! centered two-point average whose standard deviation is exactly
//! `|L+ - L-| / (2 sqrt(N))`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{DiffusionKind, Graph};
use crate::linalg::{top_singular_triplet, DenseMatrix};
use crate::math::{softplus, F64Ext};
use crate::model::{forward, ActivationTriple, Activation, DatasetExample, MpnnModel};
use crate::rng::SeedTree;

/// The constructed instance with its two attainable losses.
#[derive(Debug, Clone)]
pub struct LowerBoundInstance {
    pub n: usize,
    pub depth: usize,
    /// Product of the weight matrices, `d_0 x 2`.
    pub z: DenseMatrix,
    /// `n^{l-1} * sigma_max(Z)`.
    pub alpha: f64,
    /// First and second coordinates of the top right singular vector.
    pub v11: f64,
    pub v12: f64,
    /// Loss when the label is `+1`: `log(1 + exp(-alpha v11))`.
    pub l_plus: f64,
    /// Loss when the label is `-1`: `log(1 + exp(alpha v12))`.
    pub l_minus: f64,
    /// Top singular space of `Z` was (near-)degenerate; the triplet is
    /// still deterministic via the sign convention.
    pub degenerate: bool,
}

/// Builds the instance from a weight chain ending in output dimension 2,
/// and verifies by direct forward evaluation that the network output on
/// the constructed example equals `alpha * v1^T`.
pub fn build_instance(weights: &[DenseMatrix], n: usize) -> Result<LowerBoundInstance> {
    if weights.len() < 2 {
        return Err(Error::InvalidParameter(
            "need at least two weight matrices (depth l >= 2)".into(),
        ));
    }
    if n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    let l = weights.len();
    let mut z = weights[0].clone();
    for w in &weights[1..] {
        z = z.matmul(w)?;
    }
    if z.cols() != 2 {
        return Err(Error::ShapeMismatch(format!(
            "weight product must have 2 columns (binary output), got {}",
            z.cols()
        )));
    }
    let triplet = top_singular_triplet(&z, 1e-10)?;
    let lambda = triplet.sigma;
    let alpha = (n as f64).powi(l as i32 - 1) * lambda;
    let v11 = triplet.v[0];
    let v12 = triplet.v[1];
    let l_plus = softplus(-alpha * v11);
    let l_minus = softplus(alpha * v12);

    // Cross-check against the model module: linear GCN on the all-ones
    // diffusion with X = 1_n u1^T must output alpha * v1^T.
    if lambda > 0.0 {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i..n {
                edges.push((i, j));
            }
        }
        let graph = Graph::new(n, edges)?;
        let d0 = z.rows();
        let x = DenseMatrix::from_fn(n, d0, |_, j| triplet.u[j]);
        let mut widths = Vec::with_capacity(l + 1);
        widths.push(d0);
        for w in weights {
            widths.push(w.cols());
        }
        let model = MpnnModel::new(
            widths,
            weights.to_vec(),
            None,
            None,
            alloc::vec![ActivationTriple::uniform(Activation::Identity); l - 1],
            DiffusionKind::Adjacency,
            false,
        )?;
        let out = forward(&model, &DatasetExample::new(x, graph, 0)?)?;
        let expect = [alpha * v11, alpha * v12];
        for (got, want) in out.output.iter().zip(&expect) {
            let scale = alpha.max(1.0);
            if (got - want).abs() > 1e-8 * scale {
                return Err(Error::InvalidParameter(format!(
                    "construction self-check failed: forward gave {got}, expected {want}"
                )));
            }
        }
    }

    Ok(LowerBoundInstance {
        n,
        depth: l,
        z,
        alpha,
        v11,
        v12,
        l_plus,
        l_minus,
        degenerate: triplet.degenerate,
    })
}

/// Exact standard deviation of the empirical-minus-expected loss over
/// `N` uniform labels: `|L+ - L-| / (2 sqrt(N))`.
pub fn analytic_gap_std(instance: &LowerBoundInstance, n_samples: usize) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    Ok((instance.l_plus - instance.l_minus).abs() / (2.0 * (n_samples as f64).sqrt()))
}

/// Simulated gaps: each trial draws `N` uniform labels, averages the
/// two-point losses, and subtracts the expected loss. No network runs
/// inside the loop; the loss distribution is two-point by construction.
#[derive(Debug, Clone)]
pub struct GapSimulation {
    pub gaps: Vec<f64>,
    pub empirical_std: f64,
}

pub fn simulate_gap(
    instance: &LowerBoundInstance,
    n_samples: usize,
    trials: usize,
    seed: u64,
) -> Result<GapSimulation> {
    if trials < 30 {
        return Err(Error::InvalidParameter(
            "need at least 30 trials for a stable std".into(),
        ));
    }
    if n_samples == 0 {
        return Err(Error::InvalidParameter("N must be at least 1".into()));
    }
    let expected = 0.5 * (instance.l_plus + instance.l_minus);
    let tree = SeedTree::new(seed);
    let mut gaps = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = tree.stream("gap-trial", t as u64);
        let mut plus = 0usize;
        for _ in 0..n_samples {
            if rng.gen::<bool>() {
                plus += 1;
            }
        }
        let mean = (plus as f64 * instance.l_plus
            + (n_samples - plus) as f64 * instance.l_minus)
            / n_samples as f64;
        gaps.push(mean - expected);
    }
    let mean_gap = gaps.iter().sum::<f64>() / trials as f64;
    let var = gaps
        .iter()
        .map(|g| (g - mean_gap) * (g - mean_gap))
        .sum::<f64>()
        / (trials - 1) as f64;
    Ok(GapSimulation {
        gaps,
        empirical_std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn alpha_is_power_of_n_times_top_singular_value() {
        // W1 W2 = diag(2, 1): lambda_max = 2, n = 4, l = 2 -> alpha = 8.
        let w1 = DenseMatrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 4).unwrap();
        assert!((inst.alpha - 8.0).abs() < 1e-8, "{}", inst.alpha);
    }

    #[test]
    fn single_node_alpha_is_lambda() {
        let w1 = DenseMatrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, 0.5]).unwrap();
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 1).unwrap();
        assert!((inst.alpha - 3.0).abs() < 1e-8);
    }

    #[test]
    fn zero_weights_have_zero_gap_std() {
        let w1 = DenseMatrix::zeros(3, 2);
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 5).unwrap();
        assert_eq!(inst.alpha, 0.0);
        assert!((inst.l_plus - 2f64.ln()).abs() < 1e-15);
        assert!((inst.l_minus - 2f64.ln()).abs() < 1e-15);
        assert_eq!(analytic_gap_std(&inst, 100).unwrap(), 0.0);
    }

    #[test]
    fn analytic_std_halves_when_n_quadruples() {
        let w1 = DenseMatrix::from_vec(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 4).unwrap();
        let a = analytic_gap_std(&inst, 100).unwrap();
        let b = analytic_gap_std(&inst, 400).unwrap();
        assert!((a - 2.0 * b).abs() < 1e-12);
    }

    #[test]
    fn simulation_matches_analytic_std() {
        let w1 = DenseMatrix::from_vec(2, 2, vec![1.5, 0.2, -0.1, 0.8]).unwrap();
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 3).unwrap();
        let n = 400;
        let trials = 2_000;
        let sim = simulate_gap(&inst, n, trials, 7).unwrap();
        let analytic = analytic_gap_std(&inst, n).unwrap();
        // Std of a sample std over T trials is about std / sqrt(2(T-1)).
        let mc_err = analytic / (2.0 * (trials as f64 - 1.0)).sqrt();
        assert!(
            (sim.empirical_std - analytic).abs() <= 3.0 * mc_err,
            "{} vs {} (3se = {})",
            sim.empirical_std,
            analytic,
            3.0 * mc_err
        );
    }

    #[test]
    fn simulation_is_deterministic() {
        let w1 = DenseMatrix::identity(2);
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 4).unwrap();
        let a = simulate_gap(&inst, 50, 64, 3).unwrap();
        let b = simulate_gap(&inst, 50, 64, 3).unwrap();
        assert_eq!(a.gaps, b.gaps);
    }

    #[test]
    fn rejects_bad_shapes_and_params() {
        let w = DenseMatrix::identity(3);
        assert!(build_instance(&[w.clone(), w.clone()], 4).is_err()); // 3 cols
        let w1 = DenseMatrix::zeros(3, 2);
        assert!(build_instance(&[w1.clone()], 4).is_err()); // depth 1
        let w2 = DenseMatrix::identity(2);
        let inst = build_instance(&[w1, w2], 4).unwrap();
        assert!(simulate_gap(&inst, 10, 5, 0).is_err()); // too few trials
    }
}
