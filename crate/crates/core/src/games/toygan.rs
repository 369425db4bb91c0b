//! A desk-scale GAN with scalar data.
//!
//! Generator `G(z) = Σᵢ θᵢ zⁱ` (features 1, z, z², z³ truncated to `m`), discriminator
//! `D(x) = σ(Σⱼ φⱼ χⱼ(x))` with features `χ = (x, 1, x², x³)` truncated to `n`.
//! Player 1 is the generator minimizing `L_G`, player 2 the discriminator minimizing `L_D`:
//!
//! ```text
//! L_D = −E_x[log D(x)] − E_z[log(1 − D(G(z)))]
//! L_G = −E_z[log D(G(z))] + λ‖θ_G‖
//! ```
//!
//! A fixed pool of (real sample, latent) pairs is drawn once from `data_seed`; batches
//! are sliding windows over that pool so consecutive batches overlap when
//! `batch_stride < batch_size`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Batch, BatchToken, Game, GameDims, JointIterate};

const D_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RealDistribution {
    PointMass { value: f64 },
    Gaussian { mean: f64, std: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyNorm {
    L1,
    L2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyGanConfig {
    pub m: usize,
    pub n: usize,
    pub real: RealDistribution,
    pub lambda: f64,
    pub penalty: PenaltyNorm,
    pub pool_size: usize,
    /// Zero means every evaluation uses the whole pool (deterministic game).
    pub batch_size: usize,
    pub batch_stride: usize,
    pub data_seed: u64,
}

impl Default for ToyGanConfig {
    fn default() -> Self {
        ToyGanConfig {
            m: 1,
            n: 1,
            real: RealDistribution::PointMass { value: 1.0 },
            lambda: 0.01,
            penalty: PenaltyNorm::L2,
            pool_size: 256,
            batch_size: 32,
            batch_stride: 16,
            data_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyGanGame {
    cfg: ToyGanConfig,
    real: Vec<f64>,
    latent: Vec<f64>,
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl ToyGanGame {
    pub fn new(cfg: ToyGanConfig) -> Result<Self> {
        if !(1..=4).contains(&cfg.m) || !(1..=4).contains(&cfg.n) {
            return Err(Error::usage(format!(
                "toy GAN supports 1..=4 parameters per player, got m={}, n={}",
                cfg.m, cfg.n
            )));
        }
        if !(cfg.lambda >= 0.0) {
            return Err(Error::usage("penalty weight lambda must be >= 0"));
        }
        if cfg.pool_size == 0 {
            return Err(Error::usage("pool_size must be positive"));
        }
        if cfg.batch_size > 0 && cfg.batch_stride == 0 {
            return Err(Error::usage("batch_stride must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
        let real = match cfg.real {
            RealDistribution::PointMass { value } => vec![value; cfg.pool_size],
            RealDistribution::Gaussian { mean, std } => {
                let normal = Normal::new(mean, std)
                    .map_err(|e| Error::usage(format!("invalid Gaussian: {e}")))?;
                (0..cfg.pool_size).map(|_| normal.sample(&mut rng)).collect()
            }
        };
        let latent = (0..cfg.pool_size)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        Ok(ToyGanGame { cfg, real, latent })
    }

    pub fn config(&self) -> &ToyGanConfig {
        &self.cfg
    }

    fn indices<'a>(&'a self, batch: &'a Batch) -> Box<dyn Iterator<Item = usize> + 'a> {
        match batch {
            Batch::Full => Box::new(0..self.cfg.pool_size),
            Batch::Samples(ix) => Box::new(ix.iter().copied()),
        }
    }

    fn batch_len(&self, batch: &Batch) -> usize {
        match batch {
            Batch::Full => self.cfg.pool_size,
            Batch::Samples(ix) => ix.len(),
        }
    }

    pub fn generate(&self, theta: &DVector<f64>, z: f64) -> f64 {
        let mut pow = 1.0;
        let mut out = 0.0;
        for t in theta.iter() {
            out += t * pow;
            pow *= z;
        }
        out
    }

    fn disc_features(x: f64, n: usize) -> [f64; 4] {
        let all = [x, 1.0, x * x, x * x * x];
        let mut out = [0.0; 4];
        out[..n].copy_from_slice(&all[..n]);
        out
    }

    fn logit(phi: &DVector<f64>, x: f64) -> f64 {
        let feats = Self::disc_features(x, phi.len());
        phi.iter().zip(feats.iter()).map(|(p, f)| p * f).sum()
    }

    fn logit_slope(phi: &DVector<f64>, x: f64) -> f64 {
        let slopes = [1.0, 0.0, 2.0 * x, 3.0 * x * x];
        phi.iter().zip(slopes.iter()).map(|(p, s)| p * s).sum()
    }

    /// Discriminator output clamped away from {0, 1}.
    pub fn discriminate(&self, phi: &DVector<f64>, x: f64) -> f64 {
        sigmoid(Self::logit(phi, x)).clamp(D_CLAMP, 1.0 - D_CLAMP)
    }

    fn penalty(&self, theta: &DVector<f64>) -> f64 {
        match self.cfg.penalty {
            PenaltyNorm::L2 => theta.norm(),
            PenaltyNorm::L1 => theta.iter().map(|t| t.abs()).sum(),
        }
    }

    /// Gradient of `‖θ_G‖`; zero where the norm is not differentiable.
    pub fn penalty_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        match self.cfg.penalty {
            PenaltyNorm::L2 => {
                let norm = theta.norm();
                if norm > 0.0 {
                    theta / norm
                } else {
                    DVector::zeros(theta.len())
                }
            }
            PenaltyNorm::L1 => theta.map(|t| if t == 0.0 { 0.0 } else { t.signum() }),
        }
    }
}

impl Game for ToyGanGame {
    fn name(&self) -> &str {
        "toy_gan"
    }

    fn dims(&self) -> GameDims {
        GameDims {
            m: self.cfg.m,
            n: self.cfg.n,
        }
    }

    fn grad_x_f(&self, w: &JointIterate, batch: &Batch) -> DVector<f64> {
        let (theta, phi) = (&w.x, &w.y);
        let mut grad = DVector::zeros(self.cfg.m);
        let count = self.batch_len(batch);
        if count > 0 {
            for i in self.indices(batch) {
                let z = self.latent[i];
                let g = self.generate(theta, z);
                let d = sigmoid(Self::logit(phi, g));
                // ∂/∂G of −log D(G) is −(1 − D)·a'(G).
                let coeff = -(1.0 - d) * Self::logit_slope(phi, g);
                let mut pow = 1.0;
                for k in 0..self.cfg.m {
                    grad[k] += coeff * pow;
                    pow *= z;
                }
            }
            grad /= count as f64;
        }
        grad + self.penalty_gradient(theta) * self.cfg.lambda
    }

    fn grad_y_g(&self, w: &JointIterate, batch: &Batch) -> DVector<f64> {
        let (theta, phi) = (&w.x, &w.y);
        let n = self.cfg.n;
        let mut grad = DVector::zeros(n);
        let count = self.batch_len(batch);
        if count == 0 {
            return grad;
        }
        for i in self.indices(batch) {
            let xr = self.real[i];
            let dr = sigmoid(Self::logit(phi, xr));
            let fr = Self::disc_features(xr, n);
            let xf = self.generate(theta, self.latent[i]);
            let df = sigmoid(Self::logit(phi, xf));
            let ff = Self::disc_features(xf, n);
            for j in 0..n {
                grad[j] += -(1.0 - dr) * fr[j] + df * ff[j];
            }
        }
        grad / count as f64
    }

    fn loss_f(&self, w: &JointIterate, batch: &Batch) -> Option<f64> {
        let count = self.batch_len(batch);
        let mut total = 0.0;
        for i in self.indices(batch) {
            let g = self.generate(&w.x, self.latent[i]);
            total -= self.discriminate(&w.y, g).ln();
        }
        let data = if count > 0 { total / count as f64 } else { 0.0 };
        Some(data + self.cfg.lambda * self.penalty(&w.x))
    }

    fn loss_g(&self, w: &JointIterate, batch: &Batch) -> Option<f64> {
        let count = self.batch_len(batch);
        if count == 0 {
            return Some(0.0);
        }
        let mut total = 0.0;
        for i in self.indices(batch) {
            let g = self.generate(&w.x, self.latent[i]);
            total -= self.discriminate(&w.y, self.real[i]).ln();
            total -= (1.0 - self.discriminate(&w.y, g)).ln();
        }
        Some(total / count as f64)
    }

    fn is_stochastic(&self) -> bool {
        self.cfg.batch_size > 0 && self.cfg.batch_size < self.cfg.pool_size
    }

    fn batch(&self, token: BatchToken) -> Batch {
        if !self.is_stochastic() {
            return Batch::Full;
        }
        let pool = self.cfg.pool_size as u64;
        let offset = splitmix64(token.seed) % pool;
        let start = (offset + token.index.wrapping_mul(self.cfg.batch_stride as u64) % pool) % pool;
        let mut ix: Vec<usize> = (0..self.cfg.batch_size as u64)
            .map(|j| ((start + j) % pool) as usize)
            .collect();
        ix.sort_unstable();
        Batch::Samples(ix)
    }
}
