//! Domain types for plants, topologies, gain constraints and channels, plus
//! the elementary closed-loop analyses the rest of the crate builds on.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Schur};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::check_shape;

/// Tolerance on `ρ > 1` when classifying a closed loop as unstable.
pub const UNSTABLE_TOL: f64 = 1e-9;

/// Range the spectral radius of a random plant's `A` is rescaled into.
pub const RANDOM_PLANT_RHO: (f64, f64) = (0.8, 1.5);

/// Discrete-time LTI plant `x[k+1] = A x[k] + B u[k]`, `y[k] = C x[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    delta: f64,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, delta: f64) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch(format!(
                "A must be square and non-empty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "B must be {n}xm with m >= 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(Error::DimensionMismatch(format!(
                "C must be px{n} with p >= 1, got {}x{}",
                c.nrows(),
                c.ncols()
            )));
        }
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sampling period must be positive, got {delta}"
            )));
        }
        Ok(Self { a, b, c, delta })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn delta(&self) -> f64 {
        self.delta
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Number of actuators (inputs).
    pub fn m(&self) -> usize {
        self.b.ncols()
    }
    /// Number of sensors (outputs).
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

/// Bipartite sensor → actuator communication graph.
///
/// An edge `(i, j)` means actuator `a_i` hears sensor `s_j` directly, so
/// gain entry `g_ij` may be nonzero.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    m: usize,
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl NetworkTopology {
    pub fn new(m: usize, p: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let edges: BTreeSet<_> = edges.into_iter().collect();
        if let Some(&(i, j)) = edges.iter().find(|&&(i, j)| i >= m || j >= p) {
            return Err(Error::InvalidArgument(format!(
                "edge (a{i}, s{j}) out of range for {m} actuators and {p} sensors"
            )));
        }
        Ok(Self { m, p, edges })
    }

    /// Every actuator hears every sensor.
    pub fn full(m: usize, p: usize) -> Self {
        let edges = (0..m).flat_map(|i| (0..p).map(move |j| (i, j))).collect();
        Self { m, p, edges }
    }

    pub fn from_support(support: &DMatrix<bool>) -> Self {
        let (m, p) = support.shape();
        let edges = (0..m)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| support[(i, j)])
            .collect();
        Self { m, p, edges }
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }
    pub fn contains(&self, actuator: usize, sensor: usize) -> bool {
        self.edges.contains(&(actuator, sensor))
    }
    /// Sensors in the neighbourhood of actuator `i`.
    pub fn neighbours(&self, actuator: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((actuator, 0)..(actuator + 1, 0)).map(|&(_, j)| j)
    }

    pub fn support(&self) -> DMatrix<bool> {
        DMatrix::from_fn(self.m, self.p, |i, j| self.contains(i, j))
    }
}

/// Convex admissible set for `G`: a sparsity pattern plus an optional
/// Frobenius-norm ball.
#[derive(Debug, Clone, PartialEq)]
pub struct GainConstraintSet {
    support: DMatrix<bool>,
    frobenius_bound: Option<f64>,
}

impl GainConstraintSet {
    pub fn new(support: DMatrix<bool>, frobenius_bound: Option<f64>) -> Result<Self> {
        if let Some(g) = frobenius_bound {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "Frobenius bound must be positive, got {g}"
                )));
            }
        }
        Ok(Self {
            support,
            frobenius_bound,
        })
    }

    pub fn from_topology(topology: &NetworkTopology, frobenius_bound: Option<f64>) -> Result<Self> {
        Self::new(topology.support(), frobenius_bound)
    }

    pub fn support(&self) -> &DMatrix<bool> {
        &self.support
    }
    pub fn frobenius_bound(&self) -> Option<f64> {
        self.frobenius_bound
    }

    /// Support entries in row-major order; this is the ordering of the free
    /// gain variables everywhere in the crate.
    pub fn free_entries(&self) -> Vec<(usize, usize)> {
        let (m, p) = self.support.shape();
        (0..m)
            .flat_map(|i| (0..p).map(move |j| (i, j)))
            .filter(|&(i, j)| self.support[(i, j)])
            .collect()
    }

    /// Zeroes every entry outside the support.
    pub fn mask(&self, g: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(
            g.nrows(),
            g.ncols(),
            |i, j| if self.support[(i, j)] { g[(i, j)] } else { 0.0 },
        )
    }

    /// Exact zeros off support and, if bounded, `‖G‖_F ≤ g_max + tol`.
    pub fn admits(&self, g: &DMatrix<f64>, tol: f64) -> bool {
        if g.shape() != self.support.shape() {
            return false;
        }
        let structured = g.iter().zip(self.support.iter()).all(|(&v, &on)| on || v == 0.0);
        structured && self.frobenius_bound.is_none_or(|bound| g.norm() <= bound + tol)
    }
}

/// Real channel gains `h_ij` on the topology's edges plus the receiver noise
/// variance. Entries off the edge set are absent, not zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    m: usize,
    p: usize,
    gains: Vec<Option<f64>>,
    sigma2: f64,
}

impl ChannelRealization {
    /// `gains` is row-major `m × p`.
    pub fn new(m: usize, p: usize, gains: Vec<Option<f64>>, sigma2: f64) -> Result<Self> {
        if gains.len() != m * p {
            return Err(Error::DimensionMismatch(format!(
                "expected {} channel entries, got {}",
                m * p,
                gains.len()
            )));
        }
        if let Some(k) = gains
            .iter()
            .position(|h| matches!(h, Some(v) if *v == 0.0 || !v.is_finite()))
        {
            return Err(Error::MissingChannel {
                actuator: k / p,
                sensor: k % p,
            });
        }
        if !(sigma2 >= 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be nonnegative, got {sigma2}"
            )));
        }
        Ok(Self { m, p, gains, sigma2 })
    }

    /// Takes `h` on the topology's edges and drops everything else.
    pub fn from_matrix(h: &DMatrix<f64>, topology: &NetworkTopology, sigma2: f64) -> Result<Self> {
        check_shape(h, topology.m(), topology.p(), "channel matrix")?;
        let gains = (0..topology.m())
            .flat_map(|i| (0..topology.p()).map(move |j| (i, j)))
            .map(|(i, j)| topology.contains(i, j).then(|| h[(i, j)]))
            .collect();
        Self::new(topology.m(), topology.p(), gains, sigma2)
    }

    pub fn m(&self) -> usize {
        self.m
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
    pub fn gain(&self, actuator: usize, sensor: usize) -> Option<f64> {
        self.gains[actuator * self.p + sensor]
    }
    pub fn defined_count(&self) -> usize {
        self.gains.iter().filter(|h| h.is_some()).count()
    }
    pub fn with_noise(mut self, sigma2: f64) -> Result<Self> {
        Self::new(self.m, self.p, std::mem::take(&mut self.gains), sigma2)
    }
}

/// Per-sensor power budgets `P_j`, bounding `‖p_j‖² ≤ P_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerBudget(Vec<f64>);

impl PowerBudget {
    pub fn new(budgets: Vec<f64>) -> Result<Self> {
        if budgets.is_empty() {
            return Err(Error::InvalidArgument("power budget vector is empty".into()));
        }
        if let Some(b) = budgets.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "power budgets must be positive, got {b}"
            )));
        }
        Ok(Self(budgets))
    }

    pub fn uniform(p: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; p])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
    pub fn len(&self) -> usize {
        self.0.len()
    }
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `Â = A + B G C`.
pub fn closed_loop_matrix(plant: &PlantModel, g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_shape(g, plant.m(), plant.p(), "gain")?;
    Ok(plant.a() + plant.b() * g * plant.c())
}

/// Largest eigenvalue modulus of a real square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "spectral radius needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.is_empty() {
        return Ok(0.0);
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenNonConvergence)?;
    Ok(schur.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// `ρ(M) > 1` with the crate-wide tolerance.
pub fn is_unstable(m: &DMatrix<f64>) -> Result<bool> {
    Ok(spectral_radius(m)? > 1.0 + UNSTABLE_TOL)
}

/// Random plant with i.i.d. standard normal entries, `A` rescaled so that
/// `ρ(A)` is uniform in [`RANDOM_PLANT_RHO`]. Deterministic per seed.
pub fn random_plant(n: usize, m: usize, p: usize, seed: u64) -> Result<PlantModel> {
    if n == 0 || m == 0 || p == 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions must be positive, got ({n}, {m}, {p})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal =
        |r: usize, c: usize, rng: &mut ChaCha8Rng| DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (lo, hi) = RANDOM_PLANT_RHO;
    let a = loop {
        let a = normal(n, n, &mut rng);
        let rho = spectral_radius(&a)?;
        if rho > 1e-8 {
            let target = rng.gen_range(lo..=hi);
            break a * (target / rho);
        }
    };
    let b = normal(n, m, &mut rng);
    let c = normal(p, n, &mut rng);
    PlantModel::new(a, b, c, 0.1)
}

/// Rayleigh(σ) draw by inversion.
pub fn rayleigh<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    // 1 - U lies in (0, 1], so the log is finite
    let u: f64 = rng.gen();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Rayleigh(1) channel on every edge, noise variance zero (set it with
/// [`ChannelRealization::with_noise`]).
pub fn sample_channel(topology: &NetworkTopology, seed: u64) -> ChannelRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_channel_with(topology, &mut rng)
}

pub fn sample_channel_with<R: Rng + ?Sized>(topology: &NetworkTopology, rng: &mut R) -> ChannelRealization {
    let (m, p) = (topology.m(), topology.p());
    let mut gains = vec![None; m * p];
    for (i, j) in topology.edges() {
        let mut h = 0.0;
        while h == 0.0 {
            h = rayleigh(rng, 1.0);
        }
        gains[i * p + j] = Some(h);
    }
    ChannelRealization {
        m,
        p,
        gains,
        sigma2: 0.0,
    }
}
