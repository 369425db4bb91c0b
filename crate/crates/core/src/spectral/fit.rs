use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::log::{LogMode, TrajectoryLog};

/// Singular values below this fraction of the largest one are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Linear model `w_{k+1} ≈ A w_k` restricted to the leading left singular subspace
/// of the snapshot matrix.
#[derive(Debug, Clone)]
pub struct ReducedOperator {
    /// `Û = U_rᵀ Y V_r Σ_r⁻¹`, r×r.
    pub matrix: DMatrix<f64>,
    /// `U_r`, d×r.
    pub basis: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub requested_rank: usize,
    pub effective_rank: usize,
}

/// Fits the reduced operator to consecutive snapshot pairs `X = [w_0..w_{K-1}]`,
/// `Y = [w_1..w_K]`. With `center`, the snapshot mean is removed from both first.
pub fn fit_reduced_operator(log: &TrajectoryLog, rank: usize, center: bool) -> Result<ReducedOperator> {
    if log.mode() != LogMode::Full {
        return Err(Error::usage("operator fit needs full-state snapshots"));
    }
    let snaps = log.snapshots();
    let d = log.state_len();
    if rank == 0 {
        return Err(Error::usage("rank must be >= 1"));
    }
    if snaps.len() < rank + 1 {
        return Err(Error::usage(format!(
            "rank {rank} needs at least {} snapshots, got {}",
            rank + 1,
            snaps.len()
        )));
    }
    if rank > d {
        return Err(Error::usage(format!("rank {rank} exceeds state dimension {d}")));
    }
    let k = snaps.len() - 1;
    let mut x = DMatrix::from_fn(d, k, |i, j| snaps[j].state[i]);
    let mut y = DMatrix::from_fn(d, k, |i, j| snaps[j + 1].state[i]);
    if center {
        let mean = DVector::from_fn(d, |i, _| {
            snaps.iter().map(|s| s.state[i]).sum::<f64>() / snaps.len() as f64
        });
        for mut col in x.column_iter_mut().chain(y.column_iter_mut()) {
            col -= &mean;
        }
    }
    fit_snapshot_matrices(&x, &y, rank)
}

pub(crate) fn fit_snapshot_matrices(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rank: usize,
) -> Result<ReducedOperator> {
    let svd = x.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::numerical("snapshot SVD", None)),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(Ordering::Equal)
    });
    let sigma: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let top = sigma.first().copied().unwrap_or(0.0);
    if !top.is_finite() {
        return Err(Error::numerical("snapshot singular values", None));
    }
    let effective = sigma
        .iter()
        .take(rank)
        .take_while(|&&s| top > 0.0 && s >= RANK_TOLERANCE * top)
        .count();
    let d = x.nrows();
    let mut basis = DMatrix::zeros(d, effective);
    let mut v_r = DMatrix::zeros(x.ncols(), effective);
    for (j, &i) in order.iter().take(effective).enumerate() {
        basis.set_column(j, &u.column(i));
        v_r.set_column(j, &v_t.row(i).transpose());
    }
    let mut matrix = basis.tr_mul(&(y * &v_r));
    for (j, mut col) in matrix.column_iter_mut().enumerate() {
        col /= sigma[j];
    }
    Ok(ReducedOperator {
        matrix,
        basis,
        singular_values: sigma,
        requested_rank: rank,
        effective_rank: effective,
    })
}

fn modulus(z: &Complex<f64>) -> f64 {
    z.re.hypot(z.im)
}

/// Descending modulus; conjugates ordered with the positive imaginary part first.
pub(crate) fn sort_by_modulus(values: &mut [Complex<f64>]) {
    values.sort_by(|a, b| {
        modulus(b)
            .partial_cmp(&modulus(a))
            .unwrap_or(Ordering::Equal)
            .then(b.re.partial_cmp(&a.re).unwrap_or(Ordering::Equal))
            .then(b.im.partial_cmp(&a.im).unwrap_or(Ordering::Equal))
    });
}

fn dense_unsorted(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::numerical("Schur decomposition did not converge", None))?;
    Ok(schur.complex_eigenvalues().iter().cloned().collect())
}

/// All eigenvalues of a square matrix via the real Schur form, sorted by modulus.
pub fn dominant_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex<f64>>> {
    if !a.is_square() {
        return Err(Error::usage(format!(
            "eigenvalues need a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if let Some(i) = a.iter().position(|v| !v.is_finite()) {
        return Err(Error::numerical("reduced operator", Some(i)));
    }
    let mut values = dense_unsorted(a)?;
    sort_by_modulus(&mut values);
    Ok(values)
}

/// Outcome of the Krylov eigen path.
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeEigen {
    pub eigenvalues: Vec<Complex<f64>>,
    /// Set when the Krylov iteration gave up and the dense solver was used instead.
    pub fell_back: bool,
    pub krylov_dim: usize,
}

const LEADING: usize = 5;

/// Arnoldi with full reorthogonalization. The Krylov space grows until the
/// leading Ritz moduli stop moving for two consecutive steps; an early breakdown
/// or a stall at full dimension falls back to the dense solver.
pub fn dominant_eigenvalues_iterative(a: &DMatrix<f64>) -> Result<IterativeEigen> {
    if !a.is_square() {
        return Err(Error::usage("eigenvalues need a square matrix"));
    }
    let r = a.nrows();
    let dense = |k: usize| -> Result<IterativeEigen> {
        Ok(IterativeEigen {
            eigenvalues: dominant_eigenvalues(a)?,
            fell_back: true,
            krylov_dim: k,
        })
    };
    if r == 0 {
        return Ok(IterativeEigen {
            eigenvalues: Vec::new(),
            fell_back: false,
            krylov_dim: 0,
        });
    }
    let scale = a.norm().max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q0 = DVector::from_fn(r, |_, _| rng.random_range(-1.0..1.0));
    q0 /= q0.norm();
    let mut basis = vec![q0];
    let mut h = DMatrix::<f64>::zeros(r + 1, r);
    let mut previous: Option<Vec<f64>> = None;
    let mut calm = 0;
    for j in 0..r {
        let mut v = a * &basis[j];
        for _ in 0..2 {
            for (i, qi) in basis.iter().enumerate() {
                let c = qi.dot(&v);
                h[(i, j)] += c;
                v.axpy(-c, qi, 1.0);
            }
        }
        let beta = v.norm();
        h[(j + 1, j)] = beta;
        let size = j + 1;
        let mut ritz = dense_unsorted(&h.view((0, 0), (size, size)).into_owned())?;
        sort_by_modulus(&mut ritz);
        let lead: Vec<f64> = ritz.iter().take(LEADING).map(modulus).collect();
        let done = |ritz: Vec<Complex<f64>>| IterativeEigen {
            eigenvalues: ritz,
            fell_back: false,
            krylov_dim: size,
        };
        if beta <= 1e-13 * scale {
            return if size == r { Ok(done(ritz)) } else { dense(size) };
        }
        if size == r {
            return Ok(done(ritz));
        }
        if let Some(prev) = &previous {
            let tol = 1e-12 * lead[0].max(1.0);
            let steady = prev.len() == lead.len()
                && lead.len() == LEADING.min(r)
                && prev.iter().zip(&lead).all(|(p, l)| (p - l).abs() <= tol);
            calm = if steady { calm + 1 } else { 0 };
            if calm >= 2 {
                return Ok(done(ritz));
            }
        }
        previous = Some(lead);
        basis.push(v / beta);
    }
    dense(r)
}
