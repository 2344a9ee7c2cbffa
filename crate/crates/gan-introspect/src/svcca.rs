//! SVCCA similarity between layer activation matrices.
//!
//! The pipeline follows the usual three steps: center each neuron's
//! activation vector, truncate to the leading singular directions that
//! explain a target variance fraction (0.99 by default), then run CCA on the
//! two reduced subspaces and report the canonical correlation coefficients.
//! The mean coefficient is the layer-similarity score used throughout the
//! experiment drivers.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Activations of one named layer: one row per neuron (channel), one column
/// per datapoint (probe batch x spatial positions).
#[derive(Debug, Clone)]
pub struct ActivationMatrix {
    pub layer_name: String,
    pub rows: usize,
    pub cols: usize,
    /// Row-major rows x cols payload.
    pub data: Vec<f64>,
    pub checkpoint_iteration: u64,
}

impl ActivationMatrix {
    pub fn new(
        layer_name: impl Into<String>,
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        checkpoint_iteration: u64,
    ) -> Result<Self> {
        let m = ActivationMatrix {
            layer_name: layer_name.into(),
            rows,
            cols,
            data,
            checkpoint_iteration,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols < self.rows {
            return Err(Error::InvalidData(format!(
                "activation matrix {} needs rows >= 1 and cols >= rows, got {}x{}",
                self.layer_name, self.rows, self.cols
            )));
        }
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidData(format!(
                "activation matrix {}: {} values for {}x{}",
                self.layer_name,
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if !self.data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "activation matrix {} contains non-finite entries",
                self.layer_name
            )));
        }
        Ok(())
    }
}

/// Variance-truncated subspace of an activation matrix: the retained
/// principal-component time series (rows) over the original datapoints.
#[derive(Debug, Clone)]
pub struct ReducedSubspace {
    pub basis_projection: DMatrix<f64>,
    pub retained: usize,
    pub variance_fraction_achieved: f64,
}

impl ReducedSubspace {
    /// Treat raw centered rows directly as a subspace (no truncation).
    /// Used by tests exercising CCA invariances on known directions.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch("from_rows: data length".into()));
        }
        Ok(ReducedSubspace {
            basis_projection: DMatrix::from_row_slice(rows, cols, data),
            retained: rows,
            variance_fraction_achieved: 1.0,
        })
    }

    pub fn datapoints(&self) -> usize {
        self.basis_projection.ncols()
    }
}

/// Canonical correlation coefficients for a pair of subspaces, sorted in
/// descending order, each clamped to [0, 1].
#[derive(Debug, Clone)]
pub struct CcaResult {
    pub correlations: Vec<f64>,
    pub retained_x: usize,
    pub retained_y: usize,
}

impl CcaResult {
    /// Mean canonical correlation; the scalar similarity score.
    pub fn mean(&self) -> f64 {
        if self.correlations.is_empty() {
            return 0.0;
        }
        self.correlations.iter().sum::<f64>() / self.correlations.len() as f64
    }
}

/// SVCCA knobs shared by all comparisons in one experiment.
#[derive(Debug, Clone, Copy)]
pub struct SvccaParams {
    pub variance_threshold: f64,
    pub ridge: f64,
}

impl Default for SvccaParams {
    fn default() -> Self {
        // ridge keeps near-singular reduced covariances invertible; it is
        // small enough not to move coefficients at the tolerances used here
        SvccaParams {
            variance_threshold: 0.99,
            ridge: 1e-10,
        }
    }
}

/// Subtract each row's mean, making every neuron activation vector zero-mean.
pub fn center_rows(m: &ActivationMatrix) -> Result<ActivationMatrix> {
    m.validate()?;
    let mut out = m.clone();
    for r in 0..m.rows {
        let row = &mut out.data[r * m.cols..(r + 1) * m.cols];
        let mean = row.iter().sum::<f64>() / m.cols as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

/// Keep the smallest set of leading singular directions whose squared
/// singular values reach `variance_threshold` of the total. The basis rows
/// are the retained right-singular directions scaled by their singular
/// values, i.e. the leading principal-component time series.
pub fn svd_reduce(m: &ActivationMatrix, variance_threshold: f64) -> Result<ReducedSubspace> {
    m.validate()?;
    if !(variance_threshold > 0.0 && variance_threshold <= 1.0) {
        return Err(Error::ConfigError(format!(
            "variance threshold must be in (0, 1], got {}",
            variance_threshold
        )));
    }
    let mat = DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    let svd = mat.svd(false, true);
    let v_t = svd.v_t.expect("svd requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
    });

    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    if total <= 0.0 {
        return Err(Error::DegenerateSubspace(format!(
            "activation matrix {} has no variance",
            m.layer_name
        )));
    }
    let mut cum = 0.0;
    let mut retained = 0;
    for &i in &order {
        cum += svd.singular_values[i] * svd.singular_values[i];
        retained += 1;
        if cum / total >= variance_threshold {
            break;
        }
    }

    let mut basis = DMatrix::zeros(retained, m.cols);
    for (out_row, &i) in order[..retained].iter().enumerate() {
        let s = svd.singular_values[i];
        for c in 0..m.cols {
            basis[(out_row, c)] = s * v_t[(i, c)];
        }
    }
    Ok(ReducedSubspace {
        basis_projection: basis,
        retained,
        variance_fraction_achieved: cum / total,
    })
}

/// Canonical correlation analysis of two subspaces over a shared set of
/// datapoints. The coefficients are the singular values of
/// `Sxx^{-1/2} Sxy Syy^{-1/2}`; `ridge` is added to the auto-covariance
/// diagonals before the inverse square roots.
pub fn cca(x: &ReducedSubspace, y: &ReducedSubspace, ridge: f64) -> Result<CcaResult> {
    if x.datapoints() != y.datapoints() {
        return Err(Error::ShapeMismatch(format!(
            "cca: {} vs {} datapoints",
            x.datapoints(),
            y.datapoints()
        )));
    }
    if ridge < 0.0 {
        return Err(Error::ConfigError("ridge must be >= 0".into()));
    }
    let n = x.datapoints();
    if n < 2 {
        return Err(Error::InvalidData("cca needs at least 2 datapoints".into()));
    }
    let scale = 1.0 / (n as f64 - 1.0);
    let bx = &x.basis_projection;
    let by = &y.basis_projection;
    let mut sxx = bx * bx.transpose() * scale;
    let mut syy = by * by.transpose() * scale;
    let sxy = bx * by.transpose() * scale;
    for i in 0..sxx.nrows() {
        sxx[(i, i)] += ridge;
    }
    for i in 0..syy.nrows() {
        syy[(i, i)] += ridge;
    }

    let sxx_inv_sqrt = inv_sqrt_sym(&sxx, ridge)?;
    let syy_inv_sqrt = inv_sqrt_sym(&syy, ridge)?;
    let k = &sxx_inv_sqrt * &sxy * &syy_inv_sqrt;

    let svd = k.svd(false, false);
    let mut correlations: Vec<f64> = svd
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    correlations.sort_by(|a, b| b.partial_cmp(a).unwrap());
    correlations.truncate(x.retained.min(y.retained));
    Ok(CcaResult {
        correlations,
        retained_x: x.retained,
        retained_y: y.retained,
    })
}

/// Inverse square root of a symmetric positive (semi-)definite matrix via
/// its eigendecomposition.
fn inv_sqrt_sym(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigen();
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    if max_eig <= 0.0 {
        return Err(Error::SingularCovariance(
            "covariance block is identically zero".into(),
        ));
    }
    let sing_tol = max_eig * 1e-13;
    let mut inv_sqrt_vals = DVector::zeros(eig.eigenvalues.len());
    for (i, &ev) in eig.eigenvalues.iter().enumerate() {
        if ev < sing_tol {
            if ridge == 0.0 {
                return Err(Error::SingularCovariance(format!(
                    "eigenvalue {:.3e} below tolerance {:.3e} with ridge = 0",
                    ev, sing_tol
                )));
            }
            // ridge was supplied; floor the eigenvalue instead of failing
            inv_sqrt_vals[i] = 1.0 / sing_tol.sqrt();
        } else {
            inv_sqrt_vals[i] = 1.0 / ev.sqrt();
        }
    }
    let v = &eig.eigenvectors;
    let mut scaled = v.clone();
    for c in 0..scaled.ncols() {
        let f = inv_sqrt_vals[c];
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= f;
        }
    }
    Ok(&scaled * v.transpose())
}

/// Full SVCCA similarity of two activation matrices: center, reduce, CCA,
/// then the mean canonical correlation. Symmetric in its arguments.
pub fn svcca_similarity(
    a: &ActivationMatrix,
    b: &ActivationMatrix,
    variance_threshold: f64,
    ridge: f64,
) -> Result<f64> {
    if a.cols != b.cols {
        return Err(Error::ShapeMismatch(format!(
            "svcca: {} vs {} datapoints",
            a.cols, b.cols
        )));
    }
    let ra = svd_reduce(&center_rows(a)?, variance_threshold)?;
    let rb = svd_reduce(&center_rows(b)?, variance_threshold)?;
    let result = cca(&ra, &rb, ridge)?;
    Ok(result.mean())
}

/// Per-layer similarity values in the canonical layer order.
#[derive(Debug, Clone)]
pub struct LayerSimilarityReport {
    pub entries: Vec<(String, f64)>,
}

/// Mean similarity over the downsampling, repeating and upsampling portions
/// of the generator.
#[derive(Debug, Clone, Copy)]
pub struct GroupSummary {
    pub d_mean: f64,
    pub r_mean: f64,
    pub u_mean: f64,
}

/// Which portion of the generator a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGroup {
    Down,
    Repeat,
    Up,
}

/// The fixed layer naming scheme: D1, D2, D3, DC, R1..RN, UC, U1, U2, Out.
pub fn canonical_layer_order(repeat_blocks: usize) -> Vec<String> {
    let mut names = vec!["D1".into(), "D2".into(), "D3".into(), "DC".into()];
    for i in 1..=repeat_blocks {
        names.push(format!("R{}", i));
    }
    names.extend(["UC".into(), "U1".into(), "U2".into(), "Out".into()]);
    names
}

/// Sort key establishing the canonical ordering for any repeat depth.
pub fn layer_sort_key(name: &str) -> Result<(u8, usize)> {
    match name {
        "D1" => Ok((0, 1)),
        "D2" => Ok((0, 2)),
        "D3" => Ok((0, 3)),
        "DC" => Ok((0, 4)),
        "UC" => Ok((2, 0)),
        "U1" => Ok((2, 1)),
        "U2" => Ok((2, 2)),
        "Out" => Ok((3, 0)),
        _ => {
            if let Some(idx) = name.strip_prefix('R') {
                if let Ok(k) = idx.parse::<usize>() {
                    if k >= 1 {
                        return Ok((1, k));
                    }
                }
            }
            Err(Error::UnknownLayer(name.to_string()))
        }
    }
}

pub fn layer_group(name: &str) -> Result<LayerGroup> {
    Ok(match layer_sort_key(name)?.0 {
        0 => LayerGroup::Down,
        1 => LayerGroup::Repeat,
        _ => LayerGroup::Up,
    })
}

/// Compare two activation dumps layer by layer. Both dumps must cover the
/// same layer names and the same probe datapoints.
pub fn compare_checkpoints(
    dump_a: &[ActivationMatrix],
    dump_b: &[ActivationMatrix],
    params: &SvccaParams,
) -> Result<LayerSimilarityReport> {
    let names_a: BTreeSet<&str> = dump_a.iter().map(|m| m.layer_name.as_str()).collect();
    let names_b: BTreeSet<&str> = dump_b.iter().map(|m| m.layer_name.as_str()).collect();
    if names_a != names_b || names_a.len() != dump_a.len() || names_b.len() != dump_b.len() {
        return Err(Error::LayerSetMismatch(format!(
            "dump a covers {:?}, dump b covers {:?}",
            names_a, names_b
        )));
    }
    let mut ordered: Vec<&str> = names_a.into_iter().collect();
    let mut keyed: Vec<((u8, usize), &str)> = Vec::with_capacity(ordered.len());
    for name in &ordered {
        keyed.push((layer_sort_key(name)?, name));
    }
    keyed.sort();
    ordered = keyed.into_iter().map(|(_, n)| n).collect();

    let mut entries = Vec::with_capacity(ordered.len());
    for name in ordered {
        let a = dump_a.iter().find(|m| m.layer_name == name).unwrap();
        let b = dump_b.iter().find(|m| m.layer_name == name).unwrap();
        let sim = svcca_similarity(a, b, params.variance_threshold, params.ridge)?;
        entries.push((name.to_string(), sim));
    }
    Ok(LayerSimilarityReport { entries })
}

/// Arithmetic means of the D, R and U groups of a layer report.
pub fn group_summary(report: &LayerSimilarityReport) -> Result<GroupSummary> {
    let mut sums = [0.0f64; 3];
    let mut counts = [0usize; 3];
    for (name, sim) in &report.entries {
        let idx = match layer_group(name)? {
            LayerGroup::Down => 0,
            LayerGroup::Repeat => 1,
            LayerGroup::Up => 2,
        };
        sums[idx] += sim;
        counts[idx] += 1;
    }
    let mean = |i: usize| {
        if counts[i] == 0 {
            f64::NAN
        } else {
            sums[i] / counts[i] as f64
        }
    };
    Ok(GroupSummary {
        d_mean: mean(0),
        r_mean: mean(1),
        u_mean: mean(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn_amat(name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> ActivationMatrix {
        let data: Vec<f64> = (0..rows * cols)
            .map(|_| StandardNormal.sample(rng))
            .collect();
        ActivationMatrix::new(name, rows, cols, data, 0).unwrap()
    }

    #[test]
    fn center_rows_simple() {
        let m = ActivationMatrix::new("D1", 1, 3, vec![1.0, 2.0, 3.0], 0).unwrap();
        let c = center_rows(&m).unwrap();
        assert_eq!(c.data, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn center_rows_zero_matrix_fixed_point() {
        let m = ActivationMatrix::new("D1", 2, 4, vec![0.0; 8], 0).unwrap();
        let c = center_rows(&m).unwrap();
        assert_eq!(c.data, vec![0.0; 8]);
    }

    #[test]
    fn center_rows_random_means_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = randn_amat("R1", 5, 40, &mut rng);
        let c = center_rows(&m).unwrap();
        for r in 0..5 {
            let mean: f64 = c.data[r * 40..(r + 1) * 40].iter().sum::<f64>() / 40.0;
            assert!(mean.abs() < 1e-12);
        }
    }

    #[test]
    fn center_rows_rejects_non_finite() {
        let m = ActivationMatrix {
            layer_name: "D1".into(),
            rows: 1,
            cols: 3,
            data: vec![1.0, f64::NAN, 0.0],
            checkpoint_iteration: 0,
        };
        assert!(matches!(center_rows(&m), Err(Error::InvalidData(_))));
    }

    #[test]
    fn svd_reduce_drops_negligible_direction() {
        // exactly orthogonal zero-mean unit rows scaled to the target
        // singular values {10, 1e-9}
        let v1 = [0.5, -0.5, 0.5, -0.5];
        let v2 = [0.5, 0.5, -0.5, -0.5];
        let mut data = Vec::new();
        data.extend(v1.iter().map(|v| 10.0 * v));
        data.extend(v2.iter().map(|v| 1e-9 * v));
        let m = ActivationMatrix::new("D1", 2, 4, data, 0).unwrap();
        let red = svd_reduce(&m, 0.99).unwrap();
        assert_eq!(red.retained, 1);
        assert!(red.variance_fraction_achieved >= 0.99);
    }

    #[test]
    fn svd_reduce_threshold_one_keeps_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let m = randn_amat("D1", 6, 50, &mut rng);
        let c = center_rows(&m).unwrap();
        let red = svd_reduce(&c, 1.0).unwrap();
        assert_eq!(red.retained, 6);
    }

    #[test]
    fn svd_reduce_exact_rank3_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let a: Vec<f64> = (0..8 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..3 * 60).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut data = vec![0.0; 8 * 60];
        for r in 0..8 {
            for c in 0..60 {
                let mut acc = 0.0;
                for p in 0..3 {
                    acc += a[r * 3 + p] * b[p * 60 + c];
                }
                data[r * 60 + c] = acc;
            }
        }
        let m = ActivationMatrix::new("D2", 8, 60, data, 0).unwrap();
        let red = svd_reduce(&center_rows(&m).unwrap(), 0.99).unwrap();
        assert_eq!(red.retained, 3);
    }

    #[test]
    fn svd_reduce_zero_matrix_is_degenerate() {
        let m = ActivationMatrix::new("D1", 2, 4, vec![0.0; 8], 0).unwrap();
        assert!(matches!(
            svd_reduce(&m, 0.99),
            Err(Error::DegenerateSubspace(_))
        ));
    }

    #[test]
    fn cca_self_similarity_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let m = randn_amat("R3", 5, 100, &mut rng);
        let r = svd_reduce(&center_rows(&m).unwrap(), 0.99).unwrap();
        let result = cca(&r, &r, 1e-10).unwrap();
        for c in &result.correlations {
            assert!((c - 1.0).abs() < 1e-8, "self correlation {}", c);
        }
    }

    #[test]
    fn cca_invariant_under_invertible_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let x = randn_amat("R1", 4, 150, &mut rng);
        let y = randn_amat("R2", 6, 150, &mut rng);
        let cx = center_rows(&x).unwrap();
        let cy = center_rows(&y).unwrap();
        let sx = ReducedSubspace::from_rows(4, 150, &cx.data).unwrap();
        let sy = ReducedSubspace::from_rows(6, 150, &cy.data).unwrap();
        let base = cca(&sx, &sy, 0.0).unwrap();

        // A = I + 0.5 G keeps things comfortably invertible
        let mut a = DMatrix::<f64>::identity(4, 4);
        for v in a.iter_mut() {
            let jitter: f64 = StandardNormal.sample(&mut rng);
            *v += 0.5 * jitter;
        }
        let ax = &a * &sx.basis_projection;
        let sax = ReducedSubspace {
            basis_projection: ax,
            retained: 4,
            variance_fraction_achieved: 1.0,
        };
        let mapped = cca(&sax, &sy, 0.0).unwrap();
        for (c0, c1) in base.correlations.iter().zip(&mapped.correlations) {
            assert!((c0 - c1).abs() < 1e-6, "{} vs {}", c0, c1);
        }
    }

    #[test]
    fn cca_rejects_datapoint_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let x = randn_amat("R1", 3, 50, &mut rng);
        let y = randn_amat("R2", 3, 60, &mut rng);
        let sx = svd_reduce(&center_rows(&x).unwrap(), 0.99).unwrap();
        let sy = svd_reduce(&center_rows(&y).unwrap(), 0.99).unwrap();
        assert!(matches!(cca(&sx, &sy, 0.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn cca_singular_without_ridge() {
        // duplicated direction makes Sxx singular
        let row = [1.0, -1.0, 2.0, -2.0, 0.0, 0.0];
        let mut data = Vec::new();
        data.extend_from_slice(&row);
        data.extend_from_slice(&row);
        let sx = ReducedSubspace::from_rows(2, 6, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let y = randn_amat("R2", 2, 6, &mut rng);
        let sy = ReducedSubspace::from_rows(2, 6, &center_rows(&y).unwrap().data).unwrap();
        assert!(matches!(
            cca(&sx, &sy, 0.0),
            Err(Error::SingularCovariance(_))
        ));
        // a ridge makes the same pair well-posed
        assert!(cca(&sx, &sy, 1e-10).is_ok());
    }

    #[test]
    fn svcca_identical_layers_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let a = randn_amat("D2", 8, 200, &mut rng);
        let sim = svcca_similarity(&a, &a, 0.99, 1e-10).unwrap();
        assert!((sim - 1.0).abs() < 1e-8);
    }

    #[test]
    fn svcca_row_permutation_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let a = randn_amat("D2", 6, 120, &mut rng);
        let mut b = a.clone();
        // swap rows 0 and 3: same subspace
        for c in 0..120 {
            b.data.swap(c, 3 * 120 + c);
        }
        let sim = svcca_similarity(&a, &b, 0.99, 1e-10).unwrap();
        assert!((sim - 1.0).abs() < 1e-8);
    }

    #[test]
    fn svcca_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let a = randn_amat("R5", 7, 300, &mut rng);
        let b = randn_amat("R5", 9, 300, &mut rng);
        let ab = svcca_similarity(&a, &b, 0.99, 1e-10).unwrap();
        let ba = svcca_similarity(&b, &a, 0.99, 1e-10).unwrap();
        assert!((ab - ba).abs() < 1e-8);
    }

    #[test]
    fn compare_checkpoints_self_is_all_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let dump: Vec<ActivationMatrix> = canonical_layer_order(3)
            .iter()
            .map(|n| randn_amat(n, 4, 80, &mut rng))
            .collect();
        let report = compare_checkpoints(&dump, &dump, &SvccaParams::default()).unwrap();
        assert_eq!(report.entries.len(), 11);
        for (_, sim) in &report.entries {
            assert!((sim - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn compare_checkpoints_orders_17_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let mut order = canonical_layer_order(9);
        assert_eq!(order.len(), 17);
        // scramble the dump order; the report must come back canonical
        order.reverse();
        let dump_a: Vec<ActivationMatrix> = order
            .iter()
            .map(|n| randn_amat(n, 4, 80, &mut rng))
            .collect();
        let dump_b: Vec<ActivationMatrix> = order
            .iter()
            .map(|n| randn_amat(n, 4, 80, &mut rng))
            .collect();
        let report = compare_checkpoints(&dump_a, &dump_b, &SvccaParams::default()).unwrap();
        let names: Vec<&str> = report.entries.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, canonical_layer_order(9));
    }

    #[test]
    fn compare_checkpoints_missing_layer_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let dump_a: Vec<ActivationMatrix> = canonical_layer_order(2)
            .iter()
            .map(|n| randn_amat(n, 4, 80, &mut rng))
            .collect();
        let mut dump_b = dump_a.clone();
        dump_b.pop();
        assert!(matches!(
            compare_checkpoints(&dump_a, &dump_b, &SvccaParams::default()),
            Err(Error::LayerSetMismatch(_))
        ));
    }

    /// Per-layer values reported for the fully trained network; the group
    /// means must reproduce the reported per-group series.
    #[test]
    fn group_summary_reproduces_reported_group_series() {
        let layer_values: [(&str, f64); 17] = [
            ("D1", 0.95081901),
            ("D2", 0.64401135),
            ("D3", 0.466416249),
            ("DC", 0.524992852),
            ("R1", 0.7203537862),
            ("R2", 0.665458838),
            ("R3", 0.673149512),
            ("R4", 0.672189948),
            ("R5", 0.669999936),
            ("R6", 0.659725778),
            ("R7", 0.641958305),
            ("R8", 0.615165762),
            ("R9", 0.557961023),
            ("UC", 0.797768338),
            ("U1", 0.274934408),
            ("U2", 0.294947739),
            ("Out", 0.358606247),
        ];
        let report = LayerSimilarityReport {
            entries: layer_values
                .iter()
                .map(|(n, v)| (n.to_string(), *v))
                .collect(),
        };
        let summary = group_summary(&report).unwrap();
        assert!((summary.d_mean - 0.646559865).abs() < 5e-4);
        assert!((summary.r_mean - 0.652884765).abs() < 5e-4);
        assert!((summary.u_mean - 0.431564183).abs() < 5e-4);
        // and the rounded values quoted alongside the per-layer chart
        assert!((summary.d_mean - 0.6466).abs() < 5e-4);
        assert!((summary.r_mean - 0.6529).abs() < 5e-4);
    }

    #[test]
    fn group_summary_constant_report() {
        let report = LayerSimilarityReport {
            entries: canonical_layer_order(4)
                .into_iter()
                .map(|n| (n, 0.37))
                .collect(),
        };
        let s = group_summary(&report).unwrap();
        assert!((s.d_mean - 0.37).abs() < 1e-12);
        assert!((s.r_mean - 0.37).abs() < 1e-12);
        assert!((s.u_mean - 0.37).abs() < 1e-12);
    }
}
