//! Spectral properties of generated graphs and their diffusion matrices.

use graphbound_core::graph::{
    diffusion_matrix, fact_a1_check, generate, gin_average_diffusion, DiffusionKind, Graph,
    GraphFamily,
};
use graphbound_core::linalg::spectral_norm;
use graphbound_core::rng::SeedTree;
use graphbound_core::DenseMatrix;
use rand::Rng;

fn sample_families(seed: u64) -> Vec<Graph> {
    let mut out = Vec::new();
    let mut rng = SeedTree::new(seed).stream("sizes", 0);
    for case in 0..12u64 {
        let n = 5 + (rng.gen::<u64>() % 40) as usize;
        out.push(generate(GraphFamily::Star { leaves: n }, 0).unwrap());
        out.push(generate(GraphFamily::Complete { n }, 0).unwrap());
        out.push(generate(GraphFamily::Cycle { n: n.max(3) }, 0).unwrap());
        out.push(generate(GraphFamily::ErdosRenyi { n, p: 0.25 }, seed + case).unwrap());
        out.push(
            generate(
                GraphFamily::EgoCollab { n, communities: 3, p_in: 0.5, p_out: 0.05 },
                seed + case,
            )
            .unwrap(),
        );
    }
    out
}

#[test]
fn adjacency_norm_sits_between_sqrt_degree_and_degree() {
    for (i, g) in sample_families(42).into_iter().enumerate() {
        if g.edge_count() == 0 {
            continue;
        }
        let f = fact_a1_check(&g).unwrap();
        assert!(
            f.sqrt_d <= f.norm_a * (1.0 + 1e-8),
            "graph {i}: sqrt(d) = {} > |A| = {}",
            f.sqrt_d,
            f.norm_a
        );
        assert!(
            f.norm_a <= f.d * (1.0 + 1e-8),
            "graph {i}: |A| = {} > d = {}",
            f.norm_a,
            f.d
        );
        assert!(f.norm_sym <= 1.0 + 1e-10, "graph {i}: |sym| = {}", f.norm_sym);
    }
}

#[test]
fn row_normalized_diffusion_is_stochastic_with_unit_spectral_radius() {
    // sigma_max(D^-1 A) can exceed 1 on irregular graphs; the true
    // statements are unit row sums and a unit bound on the similar
    // symmetric matrix D^{-1/2} A D^{-1/2}.
    for g in sample_families(7) {
        if g.degrees().iter().any(|&d| d == 0) {
            continue;
        }
        let p = diffusion_matrix(&g, DiffusionKind::RowNormalized).unwrap();
        for i in 0..g.node_count() {
            let sum: f64 = p.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let deg = g.degrees();
        let n = g.node_count();
        let a = g.adjacency();
        let sym = DenseMatrix::from_fn(n, n, |i, j| {
            a.at(i, j) / ((deg[i] as f64).sqrt() * (deg[j] as f64).sqrt())
        });
        let norm = spectral_norm(&sym, 1e-10, 10_000).unwrap();
        assert!(norm <= 1.0 + 1e-10, "similar symmetric norm {norm}");
    }
}

#[test]
fn gin_average_norm_respects_the_triangle_inequality() {
    for seed in [3u64, 5, 9] {
        let g = generate(GraphFamily::ErdosRenyi { n: 12, p: 0.3 }, seed).unwrap();
        let a = g.adjacency();
        let norm_a = spectral_norm(&a, 1e-10, 10_000).unwrap();
        for l in [2usize, 3, 5] {
            let avg = gin_average_diffusion(&a, l).unwrap();
            let norm_avg = spectral_norm(&avg, 1e-10, 10_000).unwrap();
            let mean_of_powers: f64 =
                (1..l).map(|j| norm_a.powi(j as i32)).sum::<f64>() / (l - 1) as f64;
            assert!(
                norm_avg <= mean_of_powers * (1.0 + 1e-10),
                "seed {seed} l {l}: {norm_avg} > {mean_of_powers}"
            );
        }
    }
}

#[test]
fn gin_average_norm_is_exact_for_nonnegative_adjacency() {
    // For a nonnegative symmetric matrix the top eigenvalue is the
    // spectral radius, so the averaged powers share the Perron vector and
    // the triangle inequality is tight.
    for seed in [1u64, 4] {
        let g = generate(GraphFamily::EgoCollab { n: 15, communities: 3, p_in: 0.5, p_out: 0.1 }, seed)
            .unwrap();
        let a = g.adjacency();
        let norm_a = spectral_norm(&a, 1e-10, 10_000).unwrap();
        for l in [3usize, 4] {
            let avg = gin_average_diffusion(&a, l).unwrap();
            let norm_avg = spectral_norm(&avg, 1e-10, 10_000).unwrap();
            let mean_of_powers: f64 =
                (1..l).map(|j| norm_a.powi(j as i32)).sum::<f64>() / (l - 1) as f64;
            assert!(
                (norm_avg - mean_of_powers).abs() <= 1e-8 * mean_of_powers,
                "seed {seed} l {l}: {norm_avg} vs {mean_of_powers}"
            );
        }
    }
}
