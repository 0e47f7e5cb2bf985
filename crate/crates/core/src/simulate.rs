//! Monte-Carlo evolution of the closed loop under aggregation noise.
//!
//! With the gain realized over the air, the only deviation from the nominal
//! loop `x⁺ = Âx` is the receiver noise. Actuator `i` sees
//! `Σ_t d_it n_it` with `n_it ~ N(0, σ²)` i.i.d. over slots, actuators and
//! time, so the state obeys `x[k+1] = Âx[k] + B n̂[k]`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::{self, Mode};
use crate::factorization::{reconstructed_gain, OacCode};
use crate::linalg::check_shape;
use crate::model::{closed_loop_matrix, ChannelRealization, PlantModel};

/// A trajectory whose state norm exceeds this is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopSystem {
    a_hat: DMatrix<f64>,
    b: DMatrix<f64>,
    decoders: DMatrix<f64>,
    sigma2: f64,
}

impl ClosedLoopSystem {
    /// `decoders` is `T × m`; column `i` weights the slots at actuator `i`.
    pub fn new(a_hat: DMatrix<f64>, b: DMatrix<f64>, decoders: DMatrix<f64>, sigma2: f64) -> Result<Self> {
        let n = a_hat.nrows();
        check_shape(&a_hat, n, n, "closed-loop matrix")?;
        check_shape(&b, n, b.ncols(), "input matrix")?;
        check_shape(&decoders, decoders.nrows(), b.ncols(), "decoder matrix")?;
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be nonnegative, got {sigma2}"
            )));
        }
        Ok(Self {
            a_hat,
            b,
            decoders,
            sigma2,
        })
    }

    /// The loop that a code actually closes over a channel: the realized gain
    /// `H ⊙ (PᵀD)ᵀ` replaces the designed one, and the channel's noise
    /// variance drives the decoders.
    pub fn from_code(plant: &PlantModel, code: &OacCode, channel: &ChannelRealization) -> Result<Self> {
        let gain = reconstructed_gain(code, channel)?;
        let a_hat = closed_loop_matrix(plant, &gain)?;
        Self::new(a_hat, plant.b().clone(), code.decoders().clone(), channel.sigma2())
    }

    pub fn a_hat(&self) -> &DMatrix<f64> {
        &self.a_hat
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn decoders(&self) -> &DMatrix<f64> {
        &self.decoders
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn n(&self) -> usize {
        self.a_hat.nrows()
    }

    /// `σ²‖d_i‖²` per actuator.
    pub fn effective_noise_variances(&self) -> Vec<f64> {
        self.decoders
            .column_iter()
            .map(|d| self.sigma2 * d.norm_squared())
            .collect()
    }
}

/// `n̂_i = Σ_t d_ti n_ti` from `T·m` fresh `N(0, σ²)` draws.
pub fn effective_noise_vector<R: rand::Rng + ?Sized>(
    decoders: &DMatrix<f64>,
    sigma2: f64,
    rng: &mut R,
) -> DVector<f64> {
    let sigma = sigma2.sqrt();
    let mut out = DVector::zeros(decoders.ncols());
    for i in 0..decoders.ncols() {
        let mut acc = 0.0;
        for t in 0..decoders.nrows() {
            let n: f64 = StandardNormal.sample(rng);
            acc += decoders[(t, i)] * sigma * n;
        }
        out[i] = acc;
    }
    out
}

/// `Âx + B n̂` with fresh noise.
pub fn step<R: rand::Rng + ?Sized>(x: &DVector<f64>, system: &ClosedLoopSystem, rng: &mut R) -> DVector<f64> {
    let noise = effective_noise_vector(&system.decoders, system.sigma2, rng);
    &system.a_hat * x + &system.b * noise
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `x[0], …`; length `K + 1` unless the run diverged, in which case it
    /// stops at the first state past [`DIVERGENCE_BOUND`].
    pub states: Vec<DVector<f64>>,
    /// `n̂[k]` applied between `x[k]` and `x[k+1]`.
    pub inputs: Vec<DVector<f64>>,
    pub diverged: bool,
    pub seed: u64,
}

/// Where each Monte-Carlo run starts.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Fixed(DVector<f64>),
    /// Uniform on the unit sphere, drawn from the run's own generator before
    /// any noise.
    RandomUnit,
}

impl InitialState {
    fn draw<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DVector<f64>> {
        match self {
            InitialState::Fixed(x0) => {
                if x0.len() != n {
                    return Err(Error::DimensionMismatch(format!(
                        "initial state has {} entries, plant has {n}",
                        x0.len()
                    )));
                }
                Ok(x0.clone())
            }
            InitialState::RandomUnit => loop {
                let v: DVector<f64> = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
                let norm = v.norm();
                if norm > 0.0 {
                    return Ok(v / norm);
                }
            },
        }
    }
}

/// Shared loop; `visit` sees every `(x[k+1], n̂[k])`. Returns the MSE and the
/// divergence flag.
fn evolve<R, F>(system: &ClosedLoopSystem, x0: DVector<f64>, horizon: usize, rng: &mut R, mut visit: F) -> (f64, bool)
where
    R: rand::Rng + ?Sized,
    F: FnMut(&DVector<f64>, &DVector<f64>),
{
    let n = system.n();
    let mut x = x0;
    let mut energy = 0.0;
    for _ in 0..horizon {
        let noise = effective_noise_vector(&system.decoders, system.sigma2, rng);
        x = &system.a_hat * &x + &system.b * &noise;
        visit(&x, &noise);
        let ns = x.norm_squared();
        if !(ns.sqrt() <= DIVERGENCE_BOUND) {
            return (f64::INFINITY, true);
        }
        energy += ns;
    }
    (energy / (horizon * n) as f64, false)
}

/// One seeded run; the MSE is `(1/(K·n)) Σ_{k=1..K} ‖x[k]‖²`, or `+∞` for
/// a divergent run.
pub fn run_trajectory(
    system: &ClosedLoopSystem,
    x0: &DVector<f64>,
    horizon: usize,
    seed: u64,
) -> Result<(Trajectory, f64)> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least one step".into()));
    }
    if x0.len() != system.n() {
        return Err(Error::DimensionMismatch(format!(
            "initial state has {} entries, plant has {}",
            x0.len(),
            system.n()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![x0.clone()];
    let mut inputs = Vec::with_capacity(horizon);
    let (mse, diverged) = evolve(system, x0.clone(), horizon, &mut rng, |x, u| {
        states.push(x.clone());
        inputs.push(u.clone());
    });
    Ok((
        Trajectory {
            states,
            inputs,
            diverged,
            seed,
        },
        mse,
    ))
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MonteCarloReport {
    pub runs: usize,
    pub mse_mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub mse_std: f64,
    pub unstable_fraction: f64,
    pub per_run: Vec<f64>,
}

/// `runs` trajectories with seeds `base_seed + r`, in the default execution
/// mode.
pub fn monte_carlo(
    system: &ClosedLoopSystem,
    x0: &InitialState,
    horizon: usize,
    runs: usize,
    base_seed: u64,
) -> Result<MonteCarloReport> {
    monte_carlo_with(Mode::default(), system, x0, horizon, runs, base_seed)
}

pub fn monte_carlo_with(
    mode: Mode,
    system: &ClosedLoopSystem,
    x0: &InitialState,
    horizon: usize,
    runs: usize,
    base_seed: u64,
) -> Result<MonteCarloReport> {
    if runs == 0 {
        return Err(Error::InvalidArgument(
            "at least one Monte-Carlo run is required".into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least one step".into()));
    }
    let results = exec::map_range(mode, runs, |r| -> Result<(f64, bool)> {
        let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(r as u64));
        let start = x0.draw(system.n(), &mut rng)?;
        Ok(evolve(system, start, horizon, &mut rng, |_, _| {}))
    });
    let results: Vec<(f64, bool)> = results.into_iter().collect::<Result<_>>()?;
    let per_run: Vec<f64> = results.iter().map(|r| r.0).collect();
    let unstable = results.iter().filter(|r| r.1).count();
    let mean = exec::pairwise_sum(&per_run) / runs as f64;
    let std = if runs > 1 && mean.is_finite() {
        let dev: Vec<f64> = per_run.iter().map(|v| (v - mean).powi(2)).collect();
        (exec::pairwise_sum(&dev) / (runs - 1) as f64).sqrt()
    } else if mean.is_finite() {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MonteCarloReport {
        runs,
        mse_mean: mean,
        mse_std: std,
        unstable_fraction: unstable as f64 / runs as f64,
        per_run,
    })
}

/// `10 log₁₀(P/σ²)`.
pub fn snr_db(power: f64, sigma2: f64) -> Result<f64> {
    if !(power > 0.0 && sigma2 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "SNR needs positive power and noise, got {power} and {sigma2}"
        )));
    }
    Ok(10.0 * (power / sigma2).log10())
}
