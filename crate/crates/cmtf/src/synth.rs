//! Seeded generator of planted coupled instances: ground-truth factors,
//! optional additive Gaussian noise at a target SNR, optional sparsification
//! of the tensor, and optional missing-entry masks.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::als::FactorSet;
use crate::error::{Error, Result};
use crate::missing::WeightMask;
use crate::seeds;
use crate::tensor::{CoupledData, Matrix, Tensor3};

/// Controls for [`generate`].
#[derive(Clone, Copy, Debug)]
pub struct SynthOptions {
    pub dims: (usize, usize, usize),
    /// Uncoupled dimension of each side matrix; `None` omits it.
    pub side_dims: [Option<usize>; 3],
    pub rank: usize,
    /// Additive Gaussian noise scaled to this signal-to-noise ratio in dB;
    /// `None` keeps the instance noiseless.
    pub noise_snr_db: Option<f64>,
    /// Fraction of tensor cells kept as (structural) nonzeros; the rest are
    /// zeroed. 1.0 keeps the dense planted tensor.
    pub density: f64,
    /// Fraction of tensor cells marked missing in the generated mask;
    /// 0 produces no mask.
    pub missing_fraction: f64,
    /// Exponential decay of tensor-factor row magnitudes: row `i` of an
    /// n-row factor is scaled by `exp(-row_decay * i / (n - 1))`. Zero
    /// keeps all rows at the same scale; positive values concentrate the
    /// data's energy on low indices, the skewed-density regime that biased
    /// sampling exploits.
    pub row_decay: f64,
    pub seed: u64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            dims: (20, 20, 20),
            side_dims: [Some(10), None, None],
            rank: 2,
            noise_snr_db: None,
            density: 1.0,
            missing_fraction: 0.0,
            row_decay: 0.0,
            seed: 0,
        }
    }
}

impl SynthOptions {
    pub fn validate(&self) -> Result<()> {
        let (i, j, k) = self.dims;
        if i == 0 || j == 0 || k == 0 {
            return Err(Error::InvalidArgument("dimensions must be positive".into()));
        }
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.density) || self.density == 0.0 {
            return Err(Error::InvalidArgument(format!(
                "density must lie in (0, 1], got {}",
                self.density
            )));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::InvalidArgument(format!(
                "missing fraction must lie in [0, 1), got {}",
                self.missing_fraction
            )));
        }
        if !(self.row_decay >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "row decay must be non-negative, got {}",
                self.row_decay
            )));
        }
        Ok(())
    }
}

/// A generated instance: the observable data, an optional observation mask,
/// and the factors that generated it.
#[derive(Clone, Debug)]
pub struct SynthInstance {
    pub data: CoupledData,
    pub mask: Option<WeightMask>,
    pub truth: FactorSet,
}

const D_FACTOR: u64 = 0x10;
const D_NOISE: u64 = 0x20;
const D_DENSITY: u64 = 0x30;
const D_MISSING: u64 = 0x40;

fn uniform_factor(seed: u64, slot: u64, rows: usize, cols: usize, decay: f64) -> Matrix {
    let mut rng = seeds::rng_for(seed, D_FACTOR, slot);
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.random::<f64>()).collect();
    let mut arr = ndarray::Array2::from_shape_vec((rows, cols), values).expect("sized");
    if decay > 0.0 && rows > 1 {
        for (i, mut row) in arr.rows_mut().into_iter().enumerate() {
            let scale = (-decay * i as f64 / (rows - 1) as f64).exp();
            row.mapv_inplace(|v| v * scale);
        }
    }
    Matrix::from_raw(arr)
}

/// Adds Gaussian noise scaled so `||signal||^2 / ||noise||^2` hits the
/// requested dB value.
fn add_noise(values: &mut [f64], snr_db: f64, rng: &mut rand_chacha::ChaCha8Rng) {
    let signal_energy: f64 = values.iter().map(|v| v * v).sum();
    if signal_energy == 0.0 {
        return;
    }
    let raw: Vec<f64> = (0..values.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let raw_energy: f64 = raw.iter().map(|v| v * v).sum();
    if raw_energy == 0.0 {
        return;
    }
    let target = signal_energy / 10f64.powf(snr_db / 10.0);
    let scale = (target / raw_energy).sqrt();
    for (v, n) in values.iter_mut().zip(raw) {
        *v += scale * n;
    }
}

/// Generates a planted coupled instance. Factors are uniform [0, 1), so
/// components are nonnegative and well-conditioned for recovery tests.
pub fn generate(opts: &SynthOptions) -> Result<SynthInstance> {
    opts.validate()?;
    let (di, dj, dk) = opts.dims;
    let a = uniform_factor(opts.seed, 0, di, opts.rank, opts.row_decay);
    let b = uniform_factor(opts.seed, 1, dj, opts.rank, opts.row_decay);
    let c = uniform_factor(opts.seed, 2, dk, opts.rank, opts.row_decay);
    let d = opts.side_dims[0].map(|n| uniform_factor(opts.seed, 3, n, opts.rank, 0.0));
    let e = opts.side_dims[1].map(|n| uniform_factor(opts.seed, 4, n, opts.rank, 0.0));
    let g = opts.side_dims[2].map(|n| uniform_factor(opts.seed, 5, n, opts.rank, 0.0));
    let truth = FactorSet::new(a, b, c, d, e, g)?;

    let mut x_values = truth.reconstruct_tensor()?.dense_values().into_owned();
    if let Some(db) = opts.noise_snr_db {
        let mut rng = seeds::rng_for(opts.seed, D_NOISE, 0);
        add_noise(&mut x_values, db, &mut rng);
    }
    if opts.density < 1.0 {
        let mut rng = seeds::rng_for(opts.seed, D_DENSITY, 0);
        for v in x_values.iter_mut() {
            if rng.random::<f64>() >= opts.density {
                *v = 0.0;
            }
        }
    }
    let entries: Vec<(usize, usize, usize, f64)> = x_values
        .iter()
        .enumerate()
        .filter(|&(_, v)| *v != 0.0)
        .map(|(idx, &v)| {
            let k = idx % dk;
            let j = (idx / dk) % dj;
            let i = idx / (dj * dk);
            (i, j, k, v)
        })
        .collect();
    let x = Tensor3::from_entries_auto(opts.dims, entries)?;

    let mut sides: [Option<Matrix>; 3] = [None, None, None];
    for (mode, side) in sides.iter_mut().enumerate() {
        if opts.side_dims[mode].is_some() {
            let clean = truth.reconstruct_side(mode)?;
            let mut values: Vec<f64> = clean.as_array().iter().copied().collect();
            if let Some(db) = opts.noise_snr_db {
                let mut rng = seeds::rng_for(opts.seed, D_NOISE, 1 + mode as u64);
                add_noise(&mut values, db, &mut rng);
            }
            let arr = ndarray::Array2::from_shape_vec(clean.dims(), values).expect("sized");
            *side = Some(Matrix::from_raw(arr));
        }
    }
    let data = CoupledData::new(x, sides[0].take(), sides[1].take(), sides[2].take())?;

    let mask = if opts.missing_fraction > 0.0 {
        let mut rng = seeds::rng_for(opts.seed, D_MISSING, 0);
        let w = Tensor3::from_fn(opts.dims, |_, _, _| {
            if rng.random::<f64>() < opts.missing_fraction {
                0.0
            } else {
                1.0
            }
        });
        Some(WeightMask::new(w, None, None, None)?)
    } else {
        None
    };

    Ok(SynthInstance { data, mask, truth })
}

/// Nested observation masks: the missing set of each fraction contains the
/// missing sets of all smaller fractions, which makes downstream trends
/// monotone in the fraction rather than re-randomized.
pub fn nested_masks(dims: (usize, usize, usize), fractions: &[f64], seed: u64) -> Vec<Tensor3> {
    let total = dims.0 * dims.1 * dims.2;
    let mut order: Vec<usize> = (0..total).collect();
    let mut rng = seeds::rng_for(seed, D_MISSING, 1);
    // Fisher-Yates over the cell order.
    for i in (1..total).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    fractions
        .iter()
        .map(|&frac| {
            let missing = ((frac * total as f64).round() as usize).min(total);
            let mut values = vec![1.0; total];
            for &cell in order.iter().take(missing) {
                values[cell] = 0.0;
            }
            Tensor3::dense(dims, values).expect("sized")
        })
        .collect()
}
