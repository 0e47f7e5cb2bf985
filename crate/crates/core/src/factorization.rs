//! Precoder/decoder design for over-the-air aggregation.
//!
//! Sensor `j` transmits `p_jt · y_j` in slot `t`; actuator `i` scales what it
//! receives by `d_it` and sums over the `T` slots. The receiver therefore
//! applies `Σ_j h_ij (p_jᵀ d_i) y_j`, and realizing a gain `G` exactly means
//! `PᵀD = M` with `M = (G ⊙ H⁻¹)ᵀ`. Among exact factorizations with
//! `‖p_j‖² ≤ P_j` we look for small decoder energy `½‖D‖²`, since that is
//! what multiplies the receiver noise.
//!
//! The solver is a proximal ADMM whose penalty grows as
//! `τ_k = τ₀ (k+1)^e` with `e > 1`. The D-step is one `T × T` SPD solve; the
//! P-step splits into independent ball-constrained least-squares problems,
//! one per sensor, each solved through its secular equation.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{check_shape, numerical_rank};
use crate::model::{ChannelRealization, PowerBudget};

/// Relative singular-value cutoff for the rank gate.
pub const RANK_TOL: f64 = 1e-10;
/// Slack allowed on `‖p_j‖² ≤ P_j`.
pub const POWER_TOL: f64 = 1e-9;
/// Relative accuracy of the secular-equation root.
pub const SECULAR_TOL: f64 = 1e-12;

/// `M = (G ⊙ H⁻¹)ᵀ`, a `p × m` matrix with `M[j, i] = g_ij / h_ij`.
///
/// Every nonzero gain entry needs a defined channel; zero entries map to 0
/// whether or not the link exists.
pub fn target_matrix(g: &DMatrix<f64>, channel: &ChannelRealization) -> Result<DMatrix<f64>> {
    check_shape(g, channel.m(), channel.p(), "gain")?;
    let mut target = DMatrix::zeros(channel.p(), channel.m());
    for i in 0..channel.m() {
        for j in 0..channel.p() {
            if g[(i, j)] == 0.0 {
                continue;
            }
            let h = channel
                .gain(i, j)
                .ok_or(Error::MissingChannel { actuator: i, sensor: j })?;
            target[(j, i)] = g[(i, j)] / h;
        }
    }
    Ok(target)
}

/// The gain the network actually applies: `(H ⊙ (PᵀD)ᵀ)`, with absent links
/// contributing nothing.
pub fn reconstructed_gain(code: &OacCode, channel: &ChannelRealization) -> Result<DMatrix<f64>> {
    let product = code.product();
    check_shape(&product, channel.p(), channel.m(), "code product")?;
    Ok(DMatrix::from_fn(channel.m(), channel.p(), |i, j| {
        channel.gain(i, j).map_or(0.0, |h| h * product[(j, i)])
    }))
}

/// One factorization instance: target `M`, per-sensor budgets and slot count.
#[derive(Debug, Clone, PartialEq)]
pub struct OacProblem {
    target: DMatrix<f64>,
    budgets: PowerBudget,
    slots: usize,
}

impl OacProblem {
    pub fn new(target: DMatrix<f64>, budgets: PowerBudget, slots: usize) -> Result<Self> {
        if slots == 0 {
            return Err(Error::InvalidArgument(
                "at least one transmission slot is required".into(),
            ));
        }
        if budgets.len() != target.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} power budgets for {} sensors",
                budgets.len(),
                target.nrows()
            )));
        }
        if target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("target matrix has non-finite entries".into()));
        }
        Ok(Self { target, budgets, slots })
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }
    pub fn budgets(&self) -> &PowerBudget {
        &self.budgets
    }
    pub fn slots(&self) -> usize {
        self.slots
    }
    pub fn sensors(&self) -> usize {
        self.target.nrows()
    }
    pub fn actuators(&self) -> usize {
        self.target.ncols()
    }

    pub fn target_rank(&self) -> usize {
        numerical_rank(&self.target, RANK_TOL)
    }

    /// `T ≥ rank(M)`; without it no exact factorization exists.
    pub fn rank_sufficient(&self) -> bool {
        self.slots >= self.target_rank()
    }
}

/// Precoders `P` (`T × p`, column `j` for sensor `j`) and decoders `D`
/// (`T × m`, column `i` for actuator `i`).
#[derive(Debug, Clone, PartialEq)]
pub struct OacCode {
    precoders: DMatrix<f64>,
    decoders: DMatrix<f64>,
}

impl OacCode {
    pub fn new(precoders: DMatrix<f64>, decoders: DMatrix<f64>) -> Result<Self> {
        if precoders.nrows() != decoders.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "precoders use {} slots, decoders {}",
                precoders.nrows(),
                decoders.nrows()
            )));
        }
        if precoders.iter().chain(decoders.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("code has non-finite entries".into()));
        }
        Ok(Self { precoders, decoders })
    }

    pub fn precoders(&self) -> &DMatrix<f64> {
        &self.precoders
    }
    pub fn decoders(&self) -> &DMatrix<f64> {
        &self.decoders
    }
    pub fn slots(&self) -> usize {
        self.precoders.nrows()
    }

    /// `PᵀD`, `p × m`.
    pub fn product(&self) -> DMatrix<f64> {
        self.precoders.transpose() * &self.decoders
    }

    /// `‖M − PᵀD‖_F`.
    pub fn residual(&self, problem: &OacProblem) -> f64 {
        (problem.target() - self.product()).norm()
    }

    /// `max_j (‖p_j‖² − P_j)`; nonpositive when every budget holds.
    pub fn power_excess(&self, budgets: &PowerBudget) -> f64 {
        budgets
            .as_slice()
            .iter()
            .enumerate()
            .map(|(j, b)| self.precoders.column(j).norm_squared() - b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn decoder_energy(&self) -> f64 {
        0.5 * self.decoders.norm_squared()
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AdmmOptions {
    pub tau0: f64,
    pub exponent: f64,
    pub alpha: f64,
    pub beta: f64,
    pub primal_tol: f64,
    pub iterate_tol: f64,
    pub max_iters: usize,
    /// Ceiling on the penalty; the schedule would otherwise overflow.
    pub tau_cap: f64,
    /// Keep every iterate in the trace (needed by [`descent_check`]).
    #[serde(skip)]
    pub record_iterates: bool,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tau0: 1.0,
            exponent: 1.5,
            alpha: 0.1,
            beta: 0.1,
            primal_tol: 1e-6,
            iterate_tol: 1e-8,
            max_iters: 5000,
            tau_cap: 1e12,
            record_iterates: false,
        }
    }
}

impl AdmmOptions {
    pub fn validate(&self) -> Result<()> {
        step_schedule(0, self.tau0, self.exponent)?;
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "proximal weights must be positive, got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        if !(self.tau_cap >= self.tau0) {
            return Err(Error::InvalidArgument("penalty cap below the initial penalty".into()));
        }
        Ok(())
    }
}

/// Iterate `(D, P, Λ)` at step `k` with the penalty `τ_k` used to produce
/// the next iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub decoders: DMatrix<f64>,
    pub precoders: DMatrix<f64>,
    /// `p × m`, same shape as the target.
    pub dual: DMatrix<f64>,
    pub k: usize,
    pub tau: f64,
}

impl AdmmState {
    pub fn code(&self) -> OacCode {
        OacCode {
            precoders: self.precoders.clone(),
            decoders: self.decoders.clone(),
        }
    }

    pub fn residual_matrix(&self, problem: &OacProblem) -> DMatrix<f64> {
        problem.target() - self.precoders.transpose() * &self.decoders
    }
}

/// `τ₀ (k+1)^e`. Exponents `≤ 1` make `Σ 1/τ_k` diverge and are rejected.
pub fn step_schedule(k: usize, tau0: f64, exponent: f64) -> Result<f64> {
    if !(exponent > 1.0 && exponent.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "penalty exponent must exceed 1 for a summable schedule, got {exponent}"
        )));
    }
    if !(tau0 > 0.0 && tau0.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "initial penalty must be positive, got {tau0}"
        )));
    }
    Ok(tau0 * ((k + 1) as f64).powf(exponent))
}

/// Precoder columns uniform in their power balls, decoders `0.1·N(0, 1)`,
/// zero dual.
pub fn init(problem: &OacProblem, tau0: f64, seed: u64) -> AdmmState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = problem.slots();
    let mut precoders = DMatrix::zeros(t, problem.sensors());
    for (j, &budget) in problem.budgets().as_slice().iter().enumerate() {
        let dir: DVector<f64> = DVector::from_fn(t, |_, _| StandardNormal.sample(&mut rng));
        let norm = dir.norm();
        if norm == 0.0 {
            continue;
        }
        let u: f64 = rand::Rng::gen(&mut rng);
        let radius = budget.sqrt() * u.powf(1.0 / t as f64);
        precoders.set_column(j, &(dir * (radius / norm)));
    }
    let decoders = DMatrix::from_fn(t, problem.actuators(), |_, _| {
        0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    });
    AdmmState {
        decoders,
        precoders,
        dual: DMatrix::zeros(problem.sensors(), problem.actuators()),
        k: 0,
        tau: tau0,
    }
}

/// Exact minimizer in `D` of the proximal augmented Lagrangian:
/// `((1+α)I + τPPᵀ) D = τP(M + Λ/τ) + αD_k`.
pub fn d_update(state: &AdmmState, problem: &OacProblem, alpha: f64) -> Result<DMatrix<f64>> {
    let p = &state.precoders;
    let t = problem.slots();
    let lhs = DMatrix::identity(t, t) * (1.0 + alpha) + p * p.transpose() * state.tau;
    let rhs = p * (problem.target() * state.tau + &state.dual) + &state.decoders * alpha;
    let chol = lhs
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("decoder normal equations".into()))?;
    Ok(chol.solve(&rhs))
}

/// Exact minimizer in `P` given the new decoders: for each sensor `j`,
/// `min (τ/2)‖Dᵀp − c_j‖² + (β/2)‖p − p_j^k‖²  s.t. ‖p‖² ≤ P_j` with `c_j`
/// row `j` of `M + Λ/τ`.
pub fn p_update(state: &AdmmState, decoders: &DMatrix<f64>, problem: &OacProblem, beta: f64) -> Result<DMatrix<f64>> {
    Ok(p_update_with_multipliers(state, decoders, problem, beta)?.0)
}

/// As [`p_update`], also returning the ball multipliers `μ_j` in the
/// normalization `∇f + μ p = 0`.
pub fn p_update_with_multipliers(
    state: &AdmmState,
    decoders: &DMatrix<f64>,
    problem: &OacProblem,
    beta: f64,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let t = problem.slots();
    let tau = state.tau;
    let hessian = decoders * decoders.transpose() * tau + DMatrix::identity(t, t) * beta;
    let eig = SymmetricEigen::new(hessian);
    let rhs = decoders * (problem.target() * tau + &state.dual).transpose() + &state.precoders * beta;
    let mut out = DMatrix::zeros(t, problem.sensors());
    let mut multipliers = Vec::with_capacity(problem.sensors());
    for (j, &budget) in problem.budgets().as_slice().iter().enumerate() {
        let (p, mu) = ball_constrained_solve(&eig, &rhs.column(j).into_owned(), budget)?;
        out.set_column(j, &p);
        multipliers.push(mu);
    }
    Ok((out, multipliers))
}

/// `argmin ½pᵀQp − bᵀp` subject to `‖p‖² ≤ radius_sq`, given `Q = VΛVᵀ ⪰ 0`.
///
/// Returns the minimizer and the multiplier `μ ≥ 0` with `(Q + μI)p = b`.
/// When the ball is active, `μ` is the root of `1/‖p(μ)‖ − 1/√r`, which is
/// increasing and nearly linear in `μ`; Newton steps are kept inside a
/// shrinking bracket.
pub fn ball_constrained_solve(
    eig: &SymmetricEigen<f64, nalgebra::Dyn>,
    b: &DVector<f64>,
    radius_sq: f64,
) -> Result<(DVector<f64>, f64)> {
    if !(radius_sq > 0.0 && radius_sq.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "ball radius must be positive, got {radius_sq}"
        )));
    }
    let v = &eig.eigenvectors;
    let lambda = &eig.eigenvalues;
    let bt = v.transpose() * b;
    let norm_sq = |mu: f64| -> f64 {
        bt.iter()
            .zip(lambda.iter())
            .map(|(bi, li)| (bi / (li + mu)).powi(2))
            .sum()
    };
    let solution = |mu: f64| -> DVector<f64> {
        let coeffs = DVector::from_iterator(bt.len(), bt.iter().zip(lambda.iter()).map(|(bi, li)| bi / (li + mu)));
        v * coeffs
    };
    if b.iter().all(|x| *x == 0.0) {
        return Ok((DVector::zeros(b.len()), 0.0));
    }
    let lambda_min = lambda.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min > 0.0 && norm_sq(0.0) <= radius_sq {
        return Ok((solution(0.0), 0.0));
    }

    let radius = radius_sq.sqrt();
    let secular = |mu: f64| -> (f64, f64) {
        let ns = norm_sq(mu);
        let norm = ns.sqrt();
        let d_ns: f64 = -2.0
            * bt.iter()
                .zip(lambda.iter())
                .map(|(bi, li)| bi * bi / (li + mu).powi(3))
                .sum::<f64>();
        (1.0 / norm - 1.0 / radius, -0.5 * d_ns / (ns * norm))
    };
    // ‖p(μ)‖ ≤ ‖b‖ / (λ_min + μ), so the upper end already lies inside the ball.
    let mut lo = (-lambda_min).max(0.0);
    let mut hi = lo.max(0.0) + b.norm() / radius + lambda_min.abs() + 1.0;
    let mut mu = hi;
    for _ in 0..200 {
        let (f, df) = secular(mu);
        if f.abs() <= SECULAR_TOL / radius {
            break;
        }
        if f < 0.0 {
            lo = mu;
        } else {
            hi = mu;
        }
        let newton = mu - f / df;
        mu = if df > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= SECULAR_TOL * hi.max(1.0) {
            break;
        }
    }
    let mut p = solution(mu);
    let ns = p.norm_squared();
    if ns > radius_sq {
        p *= (radius_sq / ns).sqrt();
    }
    Ok((p, mu))
}

/// `Λ + τ(M − PᵀD)`.
pub fn dual_update(
    dual: &DMatrix<f64>,
    problem: &OacProblem,
    precoders: &DMatrix<f64>,
    decoders: &DMatrix<f64>,
    tau: f64,
) -> DMatrix<f64> {
    dual + (problem.target() - precoders.transpose() * decoders) * tau
}

/// `½‖D‖² + ⟨Λ, r⟩ + (τ/2)‖r‖²` with `r = M − PᵀD`, at the state's own `τ`.
pub fn augmented_lagrangian(state: &AdmmState, problem: &OacProblem) -> f64 {
    let r = state.residual_matrix(problem);
    0.5 * state.decoders.norm_squared() + state.dual.dot(&r) + 0.5 * state.tau * r.norm_squared()
}

/// Slack in the per-step bound
/// `L_k − L_{k+1} ≥ (α/2)‖ΔD‖² + (β/2)‖ΔP‖² − δτ‖ΔΛ‖²`,
/// `δτ = (τ_k + τ_{k+1}) / (2τ_k²)`. Nonnegative for exact block updates.
pub fn descent_check(prev: &AdmmState, next: &AdmmState, problem: &OacProblem, alpha: f64, beta: f64) -> f64 {
    let lhs = augmented_lagrangian(prev, problem) - augmented_lagrangian(next, problem);
    let delta_tau = (prev.tau + next.tau) / (2.0 * prev.tau * prev.tau);
    let rhs = 0.5 * alpha * (&prev.decoders - &next.decoders).norm_squared()
        + 0.5 * beta * (&prev.precoders - &next.precoders).norm_squared()
        - delta_tau * (&prev.dual - &next.dual).norm_squared();
    lhs - rhs
}

/// Residuals of the stationarity system of the factorization problem.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KktReport {
    /// `‖PΛ − D‖_F`
    pub decoder_stationarity: f64,
    /// `‖DΛᵀ − P diag(γ)‖_F`
    pub precoder_stationarity: f64,
    /// `‖M − PᵀD‖_F`
    pub primal: f64,
    /// `max_j |γ_j (‖p_j‖² − P_j)|`
    pub complementarity: f64,
    /// `max(0, −min_j γ_j)`
    pub dual_sign: f64,
    /// Estimated ball multipliers `γ_j`.
    pub multipliers: Vec<f64>,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.decoder_stationarity,
            self.precoder_stationarity,
            self.primal,
            self.complementarity,
            self.dual_sign,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// `γ_j` is the least-squares fit `p_jᵀ(DΛᵀ)e_j / ‖p_j‖²`, or 0 for a zero
/// column.
pub fn kkt_residuals(
    precoders: &DMatrix<f64>,
    decoders: &DMatrix<f64>,
    dual: &DMatrix<f64>,
    problem: &OacProblem,
) -> KktReport {
    let pull = decoders * dual.transpose();
    let budgets = problem.budgets().as_slice();
    let multipliers: Vec<f64> = (0..problem.sensors())
        .map(|j| {
            let pj = precoders.column(j);
            let ns = pj.norm_squared();
            if ns > 0.0 {
                pj.dot(&pull.column(j)) / ns
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(precoders.nrows(), precoders.ncols(), |t, j| {
        precoders[(t, j)] * multipliers[j]
    });
    let complementarity = multipliers
        .iter()
        .enumerate()
        .map(|(j, g)| (g * (precoders.column(j).norm_squared() - budgets[j])).abs())
        .fold(0.0, f64::max);
    let min_gamma = multipliers.iter().cloned().fold(f64::INFINITY, f64::min);
    KktReport {
        decoder_stationarity: (precoders * dual - decoders).norm(),
        precoder_stationarity: (pull - scaled).norm(),
        primal: (problem.target() - precoders.transpose() * decoders).norm(),
        complementarity,
        dual_sign: if min_gamma.is_finite() {
            (-min_gamma).max(0.0)
        } else {
            0.0
        },
        multipliers,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum AdmmStatus {
    Converged,
    MaxIterations,
}

/// Per-iteration record; entry `k` describes the state after `k` steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdmmTrace {
    pub primal_residual: Vec<f64>,
    pub dual_norm: Vec<f64>,
    pub tau: Vec<f64>,
    /// Empty unless `record_iterates` was set.
    pub iterates: Vec<AdmmState>,
}

#[derive(Debug, Clone)]
pub struct AdmmOutcome {
    pub code: OacCode,
    pub kkt: KktReport,
    pub status: AdmmStatus,
    pub iterations: usize,
    /// The state the code was taken from.
    pub state: AdmmState,
    pub trace: AdmmTrace,
}

impl AdmmOutcome {
    pub fn primal_residual(&self) -> f64 {
        self.kkt.primal
    }
}

/// Runs the D, P and dual updates until the residual and the iterate change
/// are both small, or the iteration budget runs out. On a budget stop the
/// iterate with the smallest residual is returned.
pub fn run_admm(problem: &OacProblem, options: &AdmmOptions, seed: u64) -> Result<AdmmOutcome> {
    options.validate()?;
    let mut state = init(problem, options.tau0, seed);
    let mut trace = AdmmTrace::default();
    let record = |trace: &mut AdmmTrace, s: &AdmmState| {
        trace.primal_residual.push(s.residual_matrix(problem).norm());
        trace.dual_norm.push(s.dual.norm());
        trace.tau.push(s.tau);
        if options.record_iterates {
            trace.iterates.push(s.clone());
        }
    };
    record(&mut trace, &state);
    let mut best = state.clone();
    let mut best_residual = f64::INFINITY;
    let mut status = AdmmStatus::MaxIterations;

    for k in 0..options.max_iters {
        let decoders = d_update(&state, problem, options.alpha)?;
        let precoders = p_update(&state, &decoders, problem, options.beta)?;
        let dual = dual_update(&state.dual, problem, &precoders, &decoders, state.tau);
        let change = (&decoders - &state.decoders)
            .norm()
            .max((&precoders - &state.precoders).norm());
        let tau = step_schedule(k + 1, options.tau0, options.exponent)?.min(options.tau_cap);
        state = AdmmState {
            decoders,
            precoders,
            dual,
            k: k + 1,
            tau,
        };
        record(&mut trace, &state);
        let residual = *trace.primal_residual.last().expect("recorded");
        if !residual.is_finite() {
            break;
        }
        if residual < best_residual {
            best_residual = residual;
            best = state.clone();
        }
        if residual <= options.primal_tol && change <= options.iterate_tol {
            status = AdmmStatus::Converged;
            best = state.clone();
            break;
        }
    }

    let kkt = kkt_residuals(&best.precoders, &best.decoders, &best.dual, problem);
    Ok(AdmmOutcome {
        code: best.code(),
        kkt,
        status,
        iterations: state.k,
        state: best,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{sample_channel, NetworkTopology};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn problem(target: DMatrix<f64>, budget: f64, slots: usize) -> OacProblem {
        let p = target.nrows();
        OacProblem::new(target, PowerBudget::uniform(p, budget).unwrap(), slots).unwrap()
    }

    fn state(p: DMatrix<f64>, d: DMatrix<f64>, dual: DMatrix<f64>, tau: f64) -> AdmmState {
        AdmmState {
            decoders: d,
            precoders: p,
            dual,
            k: 0,
            tau,
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
    }

    fn hat_lagrangian(
        s: &AdmmState,
        pr: &OacProblem,
        d: &DMatrix<f64>,
        p: &DMatrix<f64>,
        alpha: f64,
        beta: f64,
    ) -> f64 {
        let moved = AdmmState {
            decoders: d.clone(),
            precoders: p.clone(),
            ..s.clone()
        };
        augmented_lagrangian(&moved, pr)
            + 0.5 * alpha * (d - &s.decoders).norm_squared()
            + 0.5 * beta * (p - &s.precoders).norm_squared()
    }

    #[test]
    fn target_divides_entrywise_and_transposes() {
        let g = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let topo = NetworkTopology::new(2, 2, [(0, 0), (1, 1)]).unwrap();
        let h = ChannelRealization::from_matrix(&DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]), &topo, 0.0)
            .unwrap();
        assert_eq!(
            target_matrix(&g, &h).unwrap(),
            DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 12.0])
        );
        assert_eq!(target_matrix(&DMatrix::zeros(2, 2), &h).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn target_matches_loop_oracle() {
        let topo = NetworkTopology::full(4, 4);
        let h = sample_channel(&topo, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = random_matrix(&mut rng, 4, 4);
        let m = target_matrix(&g, &h).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(m[(j, i)], g[(i, j)] / h.gain(i, j).unwrap());
            }
        }
    }

    #[test]
    fn target_needs_channel_on_support() {
        let topo = NetworkTopology::new(2, 2, [(0, 0)]).unwrap();
        let h = sample_channel(&topo, 0);
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(
            target_matrix(&g, &h),
            Err(Error::MissingChannel { actuator: 1, sensor: 1 })
        ));
    }

    #[test]
    fn init_is_feasible_and_deterministic() {
        let pr = OacProblem::new(
            DMatrix::zeros(5, 3),
            PowerBudget::new(vec![0.1, 0.5, 1.0, 2.0, 0.01]).unwrap(),
            4,
        )
        .unwrap();
        for seed in 0..50 {
            let s = init(&pr, 1.0, seed);
            assert!(s.code().power_excess(pr.budgets()) <= 0.0);
            assert_eq!(s.dual, DMatrix::zeros(5, 3));
            assert_eq!(s, init(&pr, 1.0, seed));
        }
    }

    #[test]
    fn scalar_d_update_matches_golden_section() {
        let pr = problem(DMatrix::from_element(1, 1, 2.0), 10.0, 1);
        let s = state(
            DMatrix::from_element(1, 1, 1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            1.0,
        );
        let d = d_update(&s, &pr, 0.0).unwrap();
        assert_abs_diff_eq!(d[(0, 0)], 1.0, epsilon = 1e-14);

        let f = |x: f64| hat_lagrangian(&s, &pr, &DMatrix::from_element(1, 1, x), &s.precoders, 0.0, 0.0);
        let (mut a, mut b) = (-10.0, 10.0);
        let phi = (5f64.sqrt() - 1.0) / 2.0;
        while b - a > 1e-10 {
            let (c, e) = (b - phi * (b - a), a + phi * (b - a));
            if f(c) < f(e) {
                b = e;
            } else {
                a = c;
            }
        }
        assert_abs_diff_eq!(d[(0, 0)], 0.5 * (a + b), epsilon = 1e-6);
    }

    #[test]
    fn d_update_with_silent_precoders_shrinks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pr = problem(random_matrix(&mut rng, 3, 2), 1.0, 4);
        let d_k = random_matrix(&mut rng, 4, 2);
        let s = state(DMatrix::zeros(4, 3), d_k.clone(), random_matrix(&mut rng, 3, 2), 3.0);
        let d = d_update(&s, &pr, 0.1).unwrap();
        assert!((d - d_k * (0.1 / 1.1)).amax() < 1e-14);
    }

    #[test]
    fn d_update_zeroes_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let pr = problem(random_matrix(&mut rng, 4, 3), 1.0, 4);
            let s = state(
                random_matrix(&mut rng, 4, 4),
                random_matrix(&mut rng, 4, 3),
                random_matrix(&mut rng, 4, 3),
                7.0,
            );
            let alpha = 0.1;
            let d = d_update(&s, &pr, alpha).unwrap();
            let r = pr.target() - s.precoders.transpose() * &d;
            let grad = &d + (&d - &s.decoders) * alpha - &s.precoders * (r * s.tau + &s.dual);
            assert!(grad.norm() <= 1e-9, "{}", grad.norm());

            // finite differences of the same objective at a perturbed point
            let probe = &d + random_matrix(&mut rng, 4, 3) * 0.3;
            let rp = pr.target() - s.precoders.transpose() * &probe;
            let analytic = &probe + (&probe - &s.decoders) * alpha - &s.precoders * (rp * s.tau + &s.dual);
            let h = 1e-6;
            for idx in 0..probe.len() {
                let mut up = probe.clone();
                let mut dn = probe.clone();
                up[idx] += h;
                dn[idx] -= h;
                let fd = (hat_lagrangian(&s, &pr, &up, &s.precoders, alpha, 0.0)
                    - hat_lagrangian(&s, &pr, &dn, &s.precoders, alpha, 0.0))
                    / (2.0 * h);
                assert!((fd - analytic[idx]).abs() <= 1e-4 * analytic[idx].abs().max(1.0));
            }
        }
    }

    #[test]
    fn scalar_p_update_hits_boundary() {
        let pr = problem(DMatrix::from_element(1, 1, 2.0), 1.0, 1);
        let s = state(DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), DMatrix::zeros(1, 1), 1.0);
        let d = DMatrix::from_element(1, 1, 1.0);
        let p = p_update(&s, &d, &pr, 0.0).unwrap()[(0, 0)];
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);

        let big = problem(DMatrix::from_element(1, 1, 2.0), 100.0, 1);
        assert_abs_diff_eq!(p_update(&s, &d, &big, 0.0).unwrap()[(0, 0)], 2.0, epsilon = 1e-12);

        // grid oracle over [-3, 3]
        let f = |x: f64| 0.5 * (x - 2.0f64).powi(2);
        let best = (0..=60000)
            .map(|i| -3.0 + 6.0 * i as f64 / 60000.0)
            .filter(|x| x * x <= 1.0)
            .min_by(|a, b| f(*a).total_cmp(&f(*b)))
            .unwrap();
        assert_abs_diff_eq!(p, best, epsilon = 1e-4);
    }

    #[test]
    fn p_update_inactive_ball_is_linear_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pr = problem(random_matrix(&mut rng, 3, 2), 1e9, 4);
        let s = state(
            random_matrix(&mut rng, 4, 3),
            DMatrix::zeros(4, 2),
            random_matrix(&mut rng, 3, 2),
            2.0,
        );
        let d = random_matrix(&mut rng, 4, 2);
        let p = p_update(&s, &d, &pr, 0.1).unwrap();
        let q = &d * d.transpose() * 2.0 + DMatrix::identity(4, 4) * 0.1;
        let rhs = &d * (pr.target() * 2.0 + &s.dual).transpose() + &s.precoders * 0.1;
        assert!((p - q.lu().solve(&rhs).unwrap()).amax() < 1e-10);
    }

    #[test]
    fn p_update_columns_satisfy_kkt_and_beat_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let budgets = PowerBudget::new((0..3).map(|_| rng.gen_range(0.05..1.0)).collect()).unwrap();
            let pr = OacProblem::new(random_matrix(&mut rng, 3, 2) * 3.0, budgets.clone(), 4).unwrap();
            let s = state(
                random_matrix(&mut rng, 4, 3) * 0.2,
                DMatrix::zeros(4, 2),
                random_matrix(&mut rng, 3, 2),
                4.0,
            );
            let d = random_matrix(&mut rng, 4, 2);
            let beta = 0.1;
            let (p, mus) = p_update_with_multipliers(&s, &d, &pr, beta).unwrap();
            let c = pr.target() + &s.dual / s.tau;
            for (j, &mu) in mus.iter().enumerate() {
                let pj = p.column(j).into_owned();
                let cj = c.row(j).transpose();
                let pk = s.precoders.column(j).into_owned();
                let budget = budgets.as_slice()[j];
                assert!(pj.norm_squared() <= budget + POWER_TOL);
                let grad = &d * (d.transpose() * &pj - &cj) * s.tau + (&pj - &pk) * beta;
                assert!(mu >= 0.0);
                assert!(
                    (&grad + &pj * mu).norm() <= 1e-8,
                    "stationarity {}",
                    (&grad + &pj * mu).norm()
                );
                assert!((mu * (pj.norm_squared() - budget)).abs() <= 1e-8);

                let obj = |x: &DVector<f64>| {
                    0.5 * s.tau * (d.transpose() * x - &cj).norm_squared() + 0.5 * beta * (x - &pk).norm_squared()
                };
                let f_star = obj(&pj);
                for _ in 0..1000 {
                    let dir = DVector::from_fn(4, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let r = budget.sqrt() * rng.gen::<f64>().powf(0.25);
                    let x = &dir * (r / dir.norm());
                    assert!(obj(&x) >= f_star - 1e-10);
                }
            }
        }
    }

    #[test]
    fn dual_update_arithmetic() {
        let pr = problem(DMatrix::from_element(1, 1, 0.5), 1.0, 1);
        let zero = DMatrix::zeros(1, 1);
        let l = dual_update(&zero, &pr, &zero, &zero, 2.0);
        assert_eq!(l[(0, 0)], 1.0);
        assert_eq!(dual_update(&zero, &pr, &zero, &zero, 4.0)[(0, 0)], 2.0);
        let exact = problem(DMatrix::from_element(1, 1, 1.0), 1.0, 1);
        let one = DMatrix::from_element(1, 1, 1.0);
        let lam = DMatrix::from_element(1, 1, 0.7);
        assert_eq!(dual_update(&lam, &exact, &one, &one, 5.0), lam);
    }

    #[test]
    fn schedule_values_and_summability() {
        assert_eq!(step_schedule(0, 1.0, 1.5).unwrap(), 1.0);
        assert_abs_diff_eq!(step_schedule(3, 1.0, 1.5).unwrap(), 8.0, epsilon = 1e-12);
        assert!(step_schedule(3, 1.0, 1.0).is_err());
        assert!(step_schedule(3, 1.0, 0.5).is_err());
        assert!(step_schedule(3, 0.0, 1.5).is_err());
        let mut sum = 0.0;
        for k in 0..100_000 {
            let t0 = step_schedule(k, 1.0, 1.5).unwrap();
            let t1 = step_schedule(k + 1, 1.0, 1.5).unwrap();
            assert!(t1 / t0 <= 2f64.powf(1.5) + 1e-12);
            sum += 1.0 / t0;
        }
        // ζ(1.5) minus the tail ∫_{N}^∞ x^{-1.5} dx bounds the partial sum
        let zeta = 2.612_375_348_685_488;
        assert!(sum < zeta);
        assert!(sum > zeta - 2.0 / (100_000f64).sqrt());
    }

    #[test]
    fn scalar_stationary_point_has_zero_kkt_residuals() {
        let (m, budget) = (1.7, 0.4);
        let pr = problem(DMatrix::from_element(1, 1, m), budget, 1);
        let p = budget.sqrt();
        let d = m / p;
        let lambda = d / p;
        let report = kkt_residuals(
            &DMatrix::from_element(1, 1, p),
            &DMatrix::from_element(1, 1, d),
            &DMatrix::from_element(1, 1, lambda),
            &pr,
        );
        assert!(report.max_residual() <= 1e-10, "{report:?}");
        assert!(report.multipliers[0] > 0.0);

        let zero = problem(DMatrix::zeros(2, 3), 1.0, 2);
        let z = kkt_residuals(
            &DMatrix::zeros(2, 2),
            &DMatrix::zeros(2, 3),
            &DMatrix::zeros(2, 3),
            &zero,
        );
        assert_eq!(z.max_residual(), 0.0);
    }

    #[test]
    fn descent_check_vanishes_at_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pr = problem(random_matrix(&mut rng, 3, 2), 1.0, 2);
        let s = state(
            random_matrix(&mut rng, 2, 3),
            random_matrix(&mut rng, 2, 2),
            random_matrix(&mut rng, 3, 2),
            3.0,
        );
        assert_abs_diff_eq!(descent_check(&s, &s.clone(), &pr, 0.1, 0.1), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn identity_target_reaches_global_minimum() {
        let pr = problem(DMatrix::identity(2, 2), 1.0, 2);
        let out = run_admm(&pr, &AdmmOptions::default(), 0).unwrap();
        assert_eq!(out.status, AdmmStatus::Converged);
        assert!(out.primal_residual() <= 1e-6);
        let energy = out.code.decoders().norm_squared();

        // brute force: unit-ball precoder pairs on a polar grid, D = P⁻ᵀ
        let mut grid_best = f64::INFINITY;
        let steps = 24;
        for a in 0..steps {
            for b in 0..steps {
                let (ta, tb) = (
                    a as f64 * std::f64::consts::TAU / steps as f64,
                    b as f64 * std::f64::consts::TAU / steps as f64,
                );
                for ra in [0.5, 0.75, 1.0] {
                    for rb in [0.5, 0.75, 1.0] {
                        let p = DMatrix::from_row_slice(
                            2,
                            2,
                            &[ra * ta.cos(), rb * tb.cos(), ra * ta.sin(), rb * tb.sin()],
                        );
                        if let Some(inv) = p.clone().try_inverse() {
                            grid_best = grid_best.min(inv.norm_squared());
                        }
                    }
                }
            }
        }
        assert!(grid_best >= 2.0 - 1e-9);
        assert!(energy >= 2.0 - 1e-5, "{energy}");
        assert!(energy <= grid_best + 1e-3, "{energy} vs grid {grid_best}");
    }

    fn battery_problem(seed: u64) -> OacProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let g = random_matrix(&mut rng, 4, 4);
        let h = sample_channel(&NetworkTopology::full(4, 4), seed);
        problem(target_matrix(&g, &h).unwrap(), 1.0, 4)
    }

    #[test]
    fn default_schedule_is_feasible_and_descends() {
        let options = AdmmOptions {
            record_iterates: true,
            ..AdmmOptions::default()
        };
        for seed in 0..10 {
            let pr = battery_problem(seed);
            let out = run_admm(&pr, &options, seed).unwrap();
            assert!(out.primal_residual() <= 1e-6, "seed {seed}");
            assert!(out.code.power_excess(pr.budgets()) <= POWER_TOL);
            for w in out.trace.iterates.windows(2) {
                assert!(descent_check(&w[0], &w[1], &pr, options.alpha, options.beta) >= -1e-8);
            }
        }
    }

    #[test]
    fn slow_penalty_growth_reaches_stationarity() {
        let options = AdmmOptions {
            tau0: 0.01,
            ..AdmmOptions::default()
        };
        for seed in 0..10 {
            let pr = battery_problem(seed);
            let out = run_admm(&pr, &options, seed).unwrap();
            assert_eq!(out.status, AdmmStatus::Converged, "seed {seed}");
            assert!(out.kkt.max_residual() <= 1e-6, "{:?}", out.kkt);
        }
    }

    #[test]
    fn reconstruction_recovers_gain() {
        let topo = NetworkTopology::full(4, 4);
        let h = sample_channel(&topo, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random_matrix(&mut rng, 4, 4);
        let pr = problem(target_matrix(&g, &h).unwrap(), 1.0, 4);
        let out = run_admm(&pr, &AdmmOptions::default(), 1).unwrap();
        let rebuilt = reconstructed_gain(&out.code, &h).unwrap();
        assert!((rebuilt - g).amax() < 1e-5);
    }

    #[test]
    fn rank_gate() {
        let pr = problem(DMatrix::identity(3, 3), 1.0, 2);
        assert_eq!(pr.target_rank(), 3);
        assert!(!pr.rank_sufficient());
        assert!(problem(DMatrix::identity(3, 3), 1.0, 3).rank_sufficient());
    }
}
