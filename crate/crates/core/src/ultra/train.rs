//! Transform-union learning: closed-form transform updates alternating with
//! joint sparse coding and clustering.

use ndarray::Array2;
use rand::Rng;

use super::{sparse_code_and_cluster_with_penalty, Clustering, PatchConfig, TransformUnion};
use crate::ct::Image;
use crate::error::{CoreError, Result};
use crate::rng::named_rng;

/// `log |det M|` via LU; also returns the largest-magnitude entry as a scale.
pub(crate) fn log_abs_det(m: &Array2<f64>) -> (f64, f64) {
    let n = m.nrows();
    let dm = to_nalgebra(m);
    let lu = dm.lu();
    let mut log_det = 0.0;
    for i in 0..n {
        log_det += lu.u()[(i, i)].abs().ln();
    }
    let scale = m.iter().map(|v| v.abs()).fold(0.0, f64::max);
    (scale, log_det)
}

fn to_nalgebra(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |r, c| a[[r, c]])
}

fn from_nalgebra(a: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(r, c)| a[(r, c)])
}

/// Closed-form minimizer of
/// `||W X - Z||_F^2 + lambda (||W||_F^2 - log|det W|)`:
/// factor `X X^T + lambda I = L L^T`, take the full SVD
/// `L^{-1} X Z^T = U S V^T`, and return
/// `W = 0.5 V (S + (S^2 + 2 lambda I)^{1/2}) U^T L^{-1}`.
pub fn update_transform(
    patches: &Array2<f64>,
    codes: &Array2<f64>,
    lambda_k: f64,
) -> Result<Array2<f64>> {
    if !(lambda_k > 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "transform update needs lambda > 0, got {lambda_k}"
        )));
    }
    if patches.dim() != codes.dim() {
        return Err(CoreError::DimensionMismatch(
            "patch and code matrices differ in shape".into(),
        ));
    }
    let m = patches.nrows();
    let x = to_nalgebra(patches);
    let z = to_nalgebra(codes);

    let mut gram = &x * x.transpose();
    for i in 0..m {
        gram[(i, i)] += lambda_k;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| CoreError::InvalidParameter("singular factorization".into()))?;
    let l = chol.l();

    let xzt = &x * z.transpose();
    let c = l
        .solve_lower_triangular(&xzt)
        .ok_or_else(|| CoreError::InvalidParameter("singular factorization".into()))?;

    let svd = c.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested V^T");
    let mut d = nalgebra::DMatrix::zeros(m, m);
    for i in 0..m {
        let s = svd.singular_values[i];
        d[(i, i)] = 0.5 * (s + (s * s + 2.0 * lambda_k).sqrt());
    }

    // W = V D U^T L^{-1}; compute U^T L^{-1} as (L^{-T} U)^T.
    let lt_inv_u = l
        .transpose()
        .solve_upper_triangular(u)
        .ok_or_else(|| CoreError::InvalidParameter("singular factorization".into()))?;
    let w = v_t.transpose() * d * lt_inv_u.transpose();
    Ok(from_nalgebra(&w))
}

/// Value of the training objective for the current state:
/// coding error + `eta^2` sparsity count + `sum_k lambda_k Q(Omega_k)` with
/// `lambda_k = lambda0 * sum_{i in C_k} ||X_i||^2` and
/// `Q(W) = ||W||_F^2 - log|det W|`.
pub(crate) fn training_objective(
    patches: &Array2<f64>,
    union: &TransformUnion,
    clustering: &Clustering,
    eta: f64,
) -> f64 {
    let k = union.k();
    let q: Vec<f64> = union.transforms.iter().map(transform_penalty).collect();
    let mut cluster_energy = vec![0.0f64; k];
    let mut coding = 0.0;
    let eta2 = eta * eta;
    for (i, &label) in clustering.labels.iter().enumerate() {
        let col = patches.column(i);
        cluster_energy[label] += col.iter().map(|v| v * v).sum::<f64>();
        let r = union.transforms[label].dot(&col);
        for (rv, zv) in r.iter().zip(clustering.codes.column(i).iter()) {
            coding += (rv - zv).powi(2);
            if *zv != 0.0 {
                coding += eta2;
            }
        }
    }
    let reg: f64 = (0..k)
        .map(|kk| union.lambda0 * cluster_energy[kk] * q[kk])
        .sum();
    coding + reg
}

/// `Q(W) = ||W||_F^2 - log|det W|`.
pub(crate) fn transform_penalty(w: &Array2<f64>) -> f64 {
    let fro: f64 = w.iter().map(|v| v * v).sum();
    let (_, logdet) = log_abs_det(w);
    fro - logdet
}

/// Orthonormal 1-D DCT-II matrix of size `p`.
fn dct_1d(p: usize) -> Array2<f64> {
    let mut d = Array2::zeros((p, p));
    for k in 0..p {
        let scale = if k == 0 {
            (1.0 / p as f64).sqrt()
        } else {
            (2.0 / p as f64).sqrt()
        };
        for n in 0..p {
            d[[k, n]] =
                scale * (std::f64::consts::PI * k as f64 * (n as f64 + 0.5) / p as f64).cos();
        }
    }
    d
}

/// 2-D DCT operating on column-major vectorized `p x p` patches.
pub fn dct_2d(p: usize) -> Array2<f64> {
    let d = dct_1d(p);
    let m = p * p;
    let mut out = Array2::zeros((m, m));
    // kron(D, D): out[(kc*p+kr), (nc*p+nr)] = D[kc,nc] * D[kr,nr]
    for kc in 0..p {
        for kr in 0..p {
            for nc in 0..p {
                for nr in 0..p {
                    out[[kc * p + kr, nc * p + nr]] = d[[kc, nc]] * d[[kr, nr]];
                }
            }
        }
    }
    out
}

/// DCT perturbed by a seeded product of small Givens rotations; breaks the
/// symmetry between clusters at initialization.
fn rotated_dct(p: usize, k_index: usize) -> Array2<f64> {
    let m = p * p;
    let mut w = dct_2d(p);
    if k_index == 0 {
        return w;
    }
    let mut rng = named_rng(0x0dc7, &format!("init-rotation-{k_index}"));
    for _ in 0..m {
        let i = rng.random_range(0..m);
        let mut j = rng.random_range(0..m - 1);
        if j >= i {
            j += 1;
        }
        let theta: f64 = rng.random_range(-0.15..0.15);
        let (s, c) = theta.sin_cos();
        for col in 0..m {
            let wi = w[[i, col]];
            let wj = w[[j, col]];
            w[[i, col]] = c * wi - s * wj;
            w[[j, col]] = s * wi + c * wj;
        }
    }
    w
}

/// Learns a union of `k` transforms from training images by exact
/// alternating minimization. Records the objective after every iteration;
/// empty clusters are re-seeded with a DCT and the worst-coded 1% of patches.
pub fn train_ultra(
    images: &[Image],
    k: usize,
    iterations: usize,
    cfg: &PatchConfig,
    lambda0: f64,
    eta: f64,
) -> Result<TransformUnion> {
    if images.is_empty() || k == 0 || iterations == 0 {
        return Err(CoreError::InvalidParameter(
            "need at least one image, one cluster and one iteration".into(),
        ));
    }
    if !(lambda0 > 0.0) {
        return Err(CoreError::InvalidParameter("lambda0 must be positive".into()));
    }
    let mut columns: Vec<Array2<f64>> = Vec::new();
    for img in images {
        columns.push(super::extract_patches(&img.pixels, cfg)?);
    }
    let patches = ndarray::concatenate(
        ndarray::Axis(1),
        &columns.iter().map(|c| c.view()).collect::<Vec<_>>(),
    )
    .expect("consistent patch dimension");

    let degenerate = (0..patches.ncols()).all(|i| {
        let col = patches.column(i);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo == 0.0
    });
    if degenerate {
        return Err(CoreError::DegenerateTrainingSet(
            "all training patches are constant".into(),
        ));
    }

    let p = cfg.patch_side;
    let mut union = TransformUnion {
        transforms: (0..k).map(|kk| rotated_dct(p, kk)).collect(),
        lambda0,
        eta,
        training_log: Vec::with_capacity(iterations),
    };
    let energies: Vec<f64> = (0..patches.ncols())
        .map(|i| patches.column(i).iter().map(|v| v * v).sum())
        .collect();

    for _ in 0..iterations {
        // Sparse coding and clustering, accounting for each patch's share of
        // the cluster-weighted transform penalty so the step is exact.
        let offsets: Vec<f64> = union
            .transforms
            .iter()
            .map(|w| lambda0 * transform_penalty(w))
            .collect();
        let mut clustering =
            sparse_code_and_cluster_with_penalty(&patches, &union, eta, Some(&offsets))?;

        reseed_empty_clusters(&patches, &mut union, &mut clustering, eta)?;

        // Per-cluster closed-form transform update.
        for kk in 0..k {
            let members: Vec<usize> = clustering
                .labels
                .iter()
                .enumerate()
                .filter(|(_, &l)| l == kk)
                .map(|(i, _)| i)
                .collect();
            if members.is_empty() {
                continue;
            }
            let lambda_k: f64 = lambda0 * members.iter().map(|&i| energies[i]).sum::<f64>();
            let xk = gather_columns(&patches, &members);
            let zk = gather_columns(&clustering.codes, &members);
            union.transforms[kk] = update_transform(&xk, &zk, lambda_k)?;
        }

        union
            .training_log
            .push(training_objective(&patches, &union, &clustering, eta));
    }
    union.validate()?;
    Ok(union)
}

fn gather_columns(a: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), idx.len()));
    for (j, &i) in idx.iter().enumerate() {
        out.column_mut(j).assign(&a.column(i));
    }
    out
}

/// Re-seeds any empty cluster with a fresh DCT (free: an empty cluster has
/// zero weight in the objective) and offers it the 1% worst-represented
/// patches, moving only those whose exact objective contribution does not
/// increase, so the alternation stays monotone.
fn reseed_empty_clusters(
    patches: &Array2<f64>,
    union: &mut TransformUnion,
    clustering: &mut Clustering,
    eta: f64,
) -> Result<()> {
    let k = union.k();
    let empties: Vec<usize> = (0..k)
        .filter(|kk| !clustering.labels.iter().any(|l| l == kk))
        .collect();
    if empties.is_empty() {
        return Ok(());
    }
    let n = patches.ncols();
    let take = (n / 100).max(1);
    let q: Vec<f64> = union.transforms.iter().map(transform_penalty).collect();
    // Exact per-patch objective share under the current assignment.
    let mut costs: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let label = clustering.labels[i];
            let r = union.transforms[label].dot(&patches.column(i));
            let rv: Vec<f64> = r.iter().copied().collect();
            let energy: f64 = patches.column(i).iter().map(|v| v * v).sum();
            (i, super::coding_cost(&rv, eta) + union.lambda0 * energy * q[label])
        })
        .collect();
    costs.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite costs"));

    for (slot, kk) in empties.into_iter().enumerate() {
        let p = (union.transforms[kk].nrows() as f64).sqrt() as usize;
        union.transforms[kk] = dct_2d(p);
        let q_new = transform_penalty(&union.transforms[kk]);
        for &(i, old_cost) in costs.iter().skip(slot * take).take(take) {
            let r = union.transforms[kk].dot(&patches.column(i));
            let rv: Vec<f64> = r.iter().copied().collect();
            let energy: f64 = patches.column(i).iter().map(|v| v * v).sum();
            let new_cost = super::coding_cost(&rv, eta) + union.lambda0 * energy * q_new;
            if new_cost > old_cost {
                continue;
            }
            clustering.labels[i] = kk;
            for (row, &v) in rv.iter().enumerate() {
                clustering.codes[[row, i]] = if v.abs() >= eta { v } else { 0.0 };
            }
        }
    }
    Ok(())
}
