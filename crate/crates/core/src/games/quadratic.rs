use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::game::{Batch, Game, GameDims, JointIterate, MixedBlocks};

/// Convex-concave testbed `f = ½xᵀPx + xᵀBy`, `g = ½yᵀQy − xᵀBy`.
///
/// The coupling enters both players with opposite signs, so the antisymmetric
/// part of the game Hessian is the constant, nonzero block `B`.
#[derive(Debug, Clone)]
pub struct QuadraticGame {
    p: DMatrix<f64>,
    q: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl QuadraticGame {
    /// Validates shapes, symmetry and positive semidefiniteness of `P` and `Q`.
    pub fn new(p: DMatrix<f64>, q: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let m = p.nrows();
        let n = q.nrows();
        if m == 0 || n == 0 || !p.is_square() || !q.is_square() {
            return Err(Error::usage("P and Q must be non-empty square matrices"));
        }
        if b.nrows() != m || b.ncols() != n {
            return Err(Error::usage(format!(
                "B must be {m}x{n}, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        check_psd(&p, "P")?;
        check_psd(&q, "Q")?;
        Ok(QuadraticGame { p, q, b })
    }

    /// Random instance: `P = LLᵀ/m`, `Q = KKᵀ/n` and a uniform coupling in [-1, 1].
    pub fn random<R: Rng>(m: usize, n: usize, rng: &mut R) -> Self {
        let l = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
        let k = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let b = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        let p = symmetrize(&(&l * l.transpose() / m as f64));
        let q = symmetrize(&(&k * k.transpose() / n as f64));
        QuadraticGame { p, q, b }
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// The analytic game Hessian `[[P, B], [−Bᵀ, Q]]`.
    pub fn hessian(&self) -> DMatrix<f64> {
        let (m, n) = (self.p.nrows(), self.q.nrows());
        let mut h = DMatrix::zeros(m + n, m + n);
        h.view_mut((0, 0), (m, m)).copy_from(&self.p);
        h.view_mut((0, m), (m, n)).copy_from(&self.b);
        h.view_mut((m, 0), (n, m)).copy_from(&(-self.b.transpose()));
        h.view_mut((m, m), (n, n)).copy_from(&self.q);
        h
    }
}

fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_psd(a: &DMatrix<f64>, name: &str) -> Result<()> {
    let scale = a.amax().max(1.0);
    if (a - a.transpose()).amax() > 1e-12 * scale {
        return Err(Error::usage(format!("{name} must be symmetric")));
    }
    let min_eig = a
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_eig < -1e-10 * scale {
        return Err(Error::usage(format!(
            "{name} must be positive semidefinite (min eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

impl Game for QuadraticGame {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dims(&self) -> GameDims {
        GameDims {
            m: self.p.nrows(),
            n: self.q.nrows(),
        }
    }

    fn grad_x_f(&self, w: &JointIterate, _batch: &Batch) -> DVector<f64> {
        &self.p * &w.x + &self.b * &w.y
    }

    fn grad_y_g(&self, w: &JointIterate, _batch: &Batch) -> DVector<f64> {
        &self.q * &w.y - self.b.tr_mul(&w.x)
    }

    fn loss_f(&self, w: &JointIterate, _batch: &Batch) -> Option<f64> {
        Some(0.5 * w.x.dot(&(&self.p * &w.x)) + w.x.dot(&(&self.b * &w.y)))
    }

    fn loss_g(&self, w: &JointIterate, _batch: &Batch) -> Option<f64> {
        Some(0.5 * w.y.dot(&(&self.q * &w.y)) - w.x.dot(&(&self.b * &w.y)))
    }

    fn mixed_blocks(&self, _w: &JointIterate) -> Option<MixedBlocks> {
        Some(MixedBlocks {
            fxy: self.b.clone(),
            gyx: -self.b.transpose(),
        })
    }
}

/// `gx = Px + By`, `gy = Qy − Bᵀx`.
pub fn quadratic_gradients(
    p: &DMatrix<f64>,
    q: &DMatrix<f64>,
    b: &DMatrix<f64>,
    w: &JointIterate,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let (m, n) = w.dims();
    if p.shape() != (m, m) || q.shape() != (n, n) || b.shape() != (m, n) {
        return Err(Error::usage(format!(
            "P {:?}, Q {:?}, B {:?} do not match iterate dims ({m}, {n})",
            p.shape(),
            q.shape(),
            b.shape()
        )));
    }
    Ok((p * &w.x + b * &w.y, q * &w.y - b.tr_mul(&w.x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{evaluate_field, DEFAULT_FD_STEP};
    use crate::games::bilinear_gradients;
    use rand::SeedableRng;

    #[test]
    fn hand_evaluated_gradients() {
        let i1 = DMatrix::identity(1, 1);
        let z1 = DMatrix::zeros(1, 1);

        let w = JointIterate::from_slices(&[0.7], &[-1.3]);
        let quad = quadratic_gradients(&z1, &z1, &i1, &w).unwrap();
        let bil = bilinear_gradients(&i1, &w).unwrap();
        assert_eq!(quad, bil);

        let w = JointIterate::from_slices(&[1.0], &[1.0]);
        let (gx, gy) = quadratic_gradients(&i1, &i1, &z1, &w).unwrap();
        assert_eq!((gx[0], gy[0]), (1.0, 1.0));

        let w = JointIterate::from_slices(&[1.0], &[2.0]);
        let (gx, gy) = quadratic_gradients(&i1, &i1, &i1, &w).unwrap();
        assert_eq!((gx[0], gy[0]), (3.0, 1.0));
    }

    #[test]
    fn rejects_indefinite_and_misshapen() {
        let neg = DMatrix::from_row_slice(1, 1, &[-1.0]);
        let i1 = DMatrix::identity(1, 1);
        assert!(QuadraticGame::new(neg, i1.clone(), i1.clone()).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(QuadraticGame::new(asym, i1.clone(), DMatrix::zeros(2, 1)).is_err());
        assert!(QuadraticGame::new(i1.clone(), i1.clone(), DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn equilibrium_at_origin() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let game = QuadraticGame::random(4, 3, &mut rng);
        let f = evaluate_field(&game, &JointIterate::zeros(game.dims()), &Batch::Full).unwrap();
        assert_eq!(f.norm(), 0.0);
    }

    #[test]
    fn field_matches_loss_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let game = QuadraticGame::random(3, 2, &mut rng);
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w = JointIterate::from_slices(&x, &y);
            let f = evaluate_field(&game, &w, &Batch::Full).unwrap();
            let fd = crate::game::fd_loss_field(&game, &w, &Batch::Full, DEFAULT_FD_STEP).unwrap();
            for (a, b) in f.iter().zip(fd.iter()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1.0), "{a} vs {b}");
            }
        }
    }
}
