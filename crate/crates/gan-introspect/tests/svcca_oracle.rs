//! SVCCA pipeline against the independent generalized-eigenvalue oracle.

mod common;

use common::{cca_oracle, TestRng};
use gan_introspect::svcca::{cca, center_rows, svd_reduce, ActivationMatrix, ReducedSubspace};

fn random_amat(rng: &mut TestRng, name: &str, rows: usize, cols: usize) -> ActivationMatrix {
    ActivationMatrix::new(name, rows, cols, rng.normal_vec(rows * cols), 0).unwrap()
}

#[test]
fn cca_matches_generalized_eigenvalue_oracle() {
    let mut rng = TestRng::new(41);
    let (x, y) = (random_amat(&mut rng, "a", 4, 200), random_amat(&mut rng, "b", 6, 200));
    let rx = ReducedSubspace::from_rows(4, 200, &center_rows(&x).unwrap().data).unwrap();
    let ry = ReducedSubspace::from_rows(6, 200, &center_rows(&y).unwrap().data).unwrap();
    let result = cca(&rx, &ry, 0.0).unwrap();
    let oracle = cca_oracle(&x.data, 4, &y.data, 6, 200, 0.0);
    assert_eq!(result.correlations.len(), oracle.len());
    for (got, want) in result.correlations.iter().zip(&oracle) {
        assert!(
            (got - want).abs() < 1e-6,
            "coefficient {} vs oracle {}",
            got,
            want
        );
    }
}

#[test]
fn full_pipeline_matches_oracle_on_random_pairs() {
    let mut rng = TestRng::new(99);
    for case in 0..25 {
        let rows_x = rng.range(2, 10);
        let rows_y = rng.range(2, 10);
        let cols = rng.range(120, 300);
        let a = random_amat(&mut rng, "a", rows_x, cols);
        let b = random_amat(&mut rng, "b", rows_y, cols);

        let ra = svd_reduce(&center_rows(&a).unwrap(), 0.99).unwrap();
        let rb = svd_reduce(&center_rows(&b).unwrap(), 0.99).unwrap();
        // Gaussian matrices have no sub-1% variance directions at these
        // shapes, so the reduction keeps everything and the oracle on raw
        // rows sees the same subspaces.
        assert_eq!(ra.retained, rows_x, "case {}", case);
        assert_eq!(rb.retained, rows_y, "case {}", case);

        let result = cca(&ra, &rb, 0.0).unwrap();
        let oracle = cca_oracle(&a.data, rows_x, &b.data, rows_y, cols, 0.0);
        for (i, (got, want)) in result.correlations.iter().zip(&oracle).enumerate() {
            assert!(
                (got - want).abs() < 1e-6,
                "case {} coefficient {}: {} vs oracle {}",
                case,
                i,
                got,
                want
            );
        }
    }
}

/// Chance-level similarity of independent matrices is not asserted against
/// a constant, only against the oracle on the same data.
#[test]
fn independent_layers_match_oracle_mean() {
    let mut rng = TestRng::new(7);
    let a = random_amat(&mut rng, "a", 10, 500);
    let b = random_amat(&mut rng, "b", 10, 500);
    let sim = gan_introspect::svcca::svcca_similarity(&a, &b, 0.99, 0.0).unwrap();
    let oracle = cca_oracle(&a.data, 10, &b.data, 10, 500, 0.0);
    let oracle_mean = oracle.iter().sum::<f64>() / oracle.len() as f64;
    assert!(
        (sim - oracle_mean).abs() < 1e-6,
        "{} vs oracle {}",
        sim,
        oracle_mean
    );
    // sanity: far from both 0 and 1 for independent data at these shapes
    assert!(sim > 0.05 && sim < 0.6, "chance-level band, got {}", sim);
}

#[test]
fn ridge_matches_when_applied_to_both_routes() {
    let mut rng = TestRng::new(13);
    let a = random_amat(&mut rng, "a", 5, 150);
    let b = random_amat(&mut rng, "b", 5, 150);
    let ra = ReducedSubspace::from_rows(5, 150, &center_rows(&a).unwrap().data).unwrap();
    let rb = ReducedSubspace::from_rows(5, 150, &center_rows(&b).unwrap().data).unwrap();
    for ridge in [1e-10, 1e-6, 1e-2] {
        let result = cca(&ra, &rb, ridge).unwrap();
        let oracle = cca_oracle(&a.data, 5, &b.data, 5, 150, ridge);
        for (got, want) in result.correlations.iter().zip(&oracle) {
            assert!((got - want).abs() < 1e-6, "ridge {}: {} vs {}", ridge, got, want);
        }
    }
}
