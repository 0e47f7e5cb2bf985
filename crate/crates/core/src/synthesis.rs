//! Structured energy-to-energy-optimal static output feedback.
//!
//! For `Â = A + BGC` and disturbance entering through `B`, the gain `γ_ee`
//! from disturbance to state is below `γ` iff some `X ≻ 0` makes
//!
//! ```text
//! ⎡ X    0    Â    B ⎤
//! ⎢ 0   γ²I   I    0 ⎥
//! ⎢ Âᵀ   I   X⁻¹   0 ⎥  ≻ 0.
//! ⎣ Bᵀ   0    0    I ⎦
//! ```
//!
//! The `X⁻¹` block makes the joint problem in `(γ², X, G)` nonconvex. It is
//! replaced by its tangent `L(X⁻¹, X_k) = X_k⁻¹ − X_k⁻¹(X − X_k)X_k⁻¹`, which
//! minorizes `X⁻¹` on the positive definite cone, so every point feasible for
//! the linearized LMI is feasible for the true one. Re-linearizing at each
//! minimizer yields a nonincreasing `γ` sequence whose accumulation points
//! are stationary.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{check_shape, spd_inverse, symmetrize};
use crate::model::{closed_loop_matrix, spectral_radius, GainConstraintSet, PlantModel};
use crate::sdp::{self, AffineLmi, ConicProblem, SolveStatus, SolverOptions};

/// Frequency grid resolution used by [`verify_energy_gain`].
pub const FREQUENCY_POINTS: usize = 2048;

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    /// Stop once `|γ_k − γ_{k+1}|` falls below this.
    pub gamma_tol: f64,
    pub max_outer_iters: usize,
    pub feasibility_iters: usize,
    /// Strict LMIs are imposed as `⪰ margin·I`.
    pub margin: f64,
    /// `γ` held fixed while searching for a feasible start.
    pub feasibility_gamma: f64,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            gamma_tol: 1e-5,
            max_outer_iters: 200,
            feasibility_iters: 100,
            margin: 1e-6,
            feasibility_gamma: 1e3,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthesisStatus {
    Converged,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub gain: DMatrix<f64>,
    /// Certified bound on the energy-to-energy gain.
    pub gamma: f64,
    /// Positive definite certificate.
    pub x: DMatrix<f64>,
    pub outer_iterations: usize,
    pub gamma_history: Vec<f64>,
    pub status: SynthesisStatus,
}

impl SynthesisResult {
    pub fn closed_loop(&self, plant: &PlantModel) -> Result<DMatrix<f64>> {
        closed_loop_matrix(plant, &self.gain)
    }

    /// Minimum eigenvalue of the unlinearized LMI at the returned point.
    pub fn certificate_slack(&self, plant: &PlantModel) -> Result<f64> {
        let lmi = assemble_gain_lmi(plant, &self.gain, &self.x, self.gamma * self.gamma)?;
        sdp::min_eigenvalue(&lmi)
    }
}

/// Tangent of `X ↦ X⁻¹` at `X_k`, evaluated at `X`.
pub fn linearize_inverse(x_k: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_k.shape() != x.shape() {
        return Err(Error::DimensionMismatch(format!(
            "linearization point is {}x{}, argument is {}x{}",
            x_k.nrows(),
            x_k.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let inv = spd_inverse(x_k)?;
    Ok(linearize_with_inverse(&inv, x))
}

fn linearize_with_inverse(x_k_inv: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    // 2 X_k⁻¹ − X_k⁻¹ X X_k⁻¹
    symmetrize(&(x_k_inv * 2.0 - x_k_inv * x * x_k_inv))
}

/// The block LMI with the `(3,3)` block `X⁻¹`; block sizes `(n, n, n, m)`.
pub fn assemble_gain_lmi(plant: &PlantModel, g: &DMatrix<f64>, x: &DMatrix<f64>, eta: f64) -> Result<DMatrix<f64>> {
    check_shape(x, plant.n(), plant.n(), "certificate X")?;
    let x_inv = spd_inverse(x).map_err(|_| Error::NotPositiveDefinite("X must be positive definite".into()))?;
    assemble_blocks(plant, g, x, eta, &x_inv)
}

/// Same as [`assemble_gain_lmi`] with `X⁻¹` replaced by its tangent at `X_k`.
/// Affine in `(η, X, G)`.
pub fn assemble_linearized_lmi(
    plant: &PlantModel,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    eta: f64,
    x_k: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_shape(x, plant.n(), plant.n(), "X")?;
    check_shape(x_k, plant.n(), plant.n(), "linearization point X_k")?;
    let x_k_inv = spd_inverse(x_k)?;
    assemble_blocks(plant, g, x, eta, &linearize_with_inverse(&x_k_inv, x))
}

fn assemble_blocks(
    plant: &PlantModel,
    g: &DMatrix<f64>,
    x: &DMatrix<f64>,
    eta: f64,
    inverse_block: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let a_hat = closed_loop_matrix(plant, g)?;
    Ok(fill_blocks(plant.b(), &a_hat, x, eta, inverse_block))
}

fn fill_blocks(
    b: &DMatrix<f64>,
    a_hat: &DMatrix<f64>,
    x: &DMatrix<f64>,
    eta: f64,
    inverse_block: &DMatrix<f64>,
) -> DMatrix<f64> {
    let n = a_hat.nrows();
    let m = b.ncols();
    let mut out = DMatrix::zeros(3 * n + m, 3 * n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&symmetrize(x));
    out.view_mut((0, 2 * n), (n, n)).copy_from(a_hat);
    out.view_mut((2 * n, 0), (n, n)).copy_from(&a_hat.transpose());
    out.view_mut((0, 3 * n), (n, m)).copy_from(b);
    out.view_mut((3 * n, 0), (m, n)).copy_from(&b.transpose());
    out.view_mut((2 * n, 2 * n), (n, n)).copy_from(inverse_block);
    for i in 0..n {
        out[(n + i, n + i)] = eta;
        out[(n + i, 2 * n + i)] = 1.0;
        out[(2 * n + i, n + i)] = 1.0;
    }
    for i in 0..m {
        out[(3 * n + i, 3 * n + i)] = 1.0;
    }
    out
}

/// Packing of `(scalar, X, G)` into one decision vector: the scalar first,
/// then the upper triangle of `X` row by row, then the free gain entries.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    m: usize,
    p: usize,
    free: Vec<(usize, usize)>,
}

impl Layout {
    fn new(plant: &PlantModel, constraints: &GainConstraintSet) -> Self {
        Self {
            n: plant.n(),
            m: plant.m(),
            p: plant.p(),
            free: constraints.free_entries(),
        }
    }

    fn x_len(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn len(&self) -> usize {
        1 + self.x_len() + self.free.len()
    }

    fn pack(&self, scalar: f64, x: &DMatrix<f64>, g: &DMatrix<f64>) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        v[0] = scalar;
        let mut k = 1;
        for i in 0..self.n {
            for j in i..self.n {
                v[k] = x[(i, j)];
                k += 1;
            }
        }
        for &(i, j) in &self.free {
            v[k] = g[(i, j)];
            k += 1;
        }
        v
    }

    fn unpack(&self, v: &DVector<f64>) -> (f64, DMatrix<f64>, DMatrix<f64>) {
        let mut x = DMatrix::zeros(self.n, self.n);
        let mut k = 1;
        for i in 0..self.n {
            for j in i..self.n {
                x[(i, j)] = v[k];
                x[(j, i)] = v[k];
                k += 1;
            }
        }
        let mut g = DMatrix::zeros(self.m, self.p);
        for &(i, j) in &self.free {
            g[(i, j)] = v[k];
            k += 1;
        }
        (v[0], x, g)
    }
}

/// Builds the convex subproblem linearized at `X_k`.
///
/// With `fixed_eta = None` the leading variable is `η` and the objective is
/// `min η`. With `Some(η)` the leading variable is a slack `s` added as `s·I`
/// to the main block and the objective is `min s` (feasibility search).
fn subproblem(
    plant: &PlantModel,
    constraints: &GainConstraintSet,
    layout: &Layout,
    x_k: &DMatrix<f64>,
    fixed_eta: Option<f64>,
    margin: f64,
) -> Result<ConicProblem> {
    let x_k_inv = spd_inverse(x_k)?;
    let n = plant.n();
    let dim = 3 * n + plant.m();
    let main = AffineLmi::from_affine_map(layout.len(), |v| {
        let (scalar, x, g) = layout.unpack(v);
        let a_hat = plant.a() + plant.b() * &g * plant.c();
        let lin = linearize_with_inverse(&x_k_inv, &x);
        match fixed_eta {
            None => fill_blocks(plant.b(), &a_hat, &x, scalar, &lin),
            Some(eta) => fill_blocks(plant.b(), &a_hat, &x, eta, &lin) + DMatrix::identity(dim, dim) * scalar,
        }
    })?;
    let positivity = AffineLmi::from_affine_map(layout.len(), |v| layout.unpack(v).1)?;

    let mut objective = DVector::zeros(layout.len());
    objective[0] = 1.0;
    let mut problem = ConicProblem::new(objective).with_margin(margin);
    problem.add_constraint(main)?;
    problem.add_constraint(positivity)?;
    if let Some(bound) = constraints.frobenius_bound() {
        problem.add_constraint(frobenius_ball(1 + layout.x_len(), layout.free.len(), bound)?)?;
    }
    Ok(problem)
}

/// `[[g_max, vᵀ], [v, g_max·I]] ⪰ 0  ⇔  ‖v‖ ≤ g_max` for the free gain entries `v`.
fn frobenius_ball(offset: usize, k: usize, bound: f64) -> Result<AffineLmi> {
    let mut lmi = AffineLmi::new(DMatrix::identity(k + 1, k + 1) * bound)?;
    for e in 0..k {
        let mut coef = DMatrix::zeros(k + 1, k + 1);
        coef[(0, e + 1)] = 1.0;
        coef[(e + 1, 0)] = 1.0;
        lmi.add_term(offset + e, coef)?;
    }
    Ok(lmi)
}

/// Solves `X − A X Aᵀ = Q` through the Kronecker form.
pub fn discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_shape(q, n, n, "Lyapunov right-hand side")?;
    let kron = DMatrix::identity(n * n, n * n) - a.kronecker(a);
    let rhs = DVector::from_column_slice(q.as_slice());
    let sol = kron
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::InvalidArgument("Lyapunov operator is singular".into()))?;
    Ok(symmetrize(&DMatrix::from_column_slice(n, n, sol.as_slice())))
}

/// A strictly feasible `(X₀, G₀, γ₀)` for the linearized subproblem at `X₀`.
///
/// An open-loop stable plant with an admissible zero gain starts from
/// `G₀ = 0` and the Lyapunov solution `X₀ = A X₀ Aᵀ + BBᵀ + I`.
///
/// Otherwise `γ` is fixed at `feasibility_gamma` and the `X⁻¹` block is
/// replaced by a free `Y` coupled through `[[X, I], [I, Y]] ⪰ 0`, i.e.
/// `Y ⪰ X⁻¹`. Minimizing the linearized complementarity `tr(X_k Y + Y_k X)`
/// drives `Y` towards `X⁻¹`; the search stops as soon as the unrelaxed LMI
/// holds at `(X, G)`, and reports an infeasible structure when the
/// complementarity stalls.
pub fn find_feasible_start(
    plant: &PlantModel,
    constraints: &GainConstraintSet,
    options: &SynthesisOptions,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    check_gain_set(plant, constraints)?;
    let gamma = options.feasibility_gamma;
    let eta = gamma * gamma;
    let n = plant.n();
    let zero = DMatrix::zeros(plant.m(), plant.p());
    let certified = |x: &DMatrix<f64>, g: &DMatrix<f64>| -> Result<bool> {
        if sdp::min_eigenvalue(x)? <= options.margin {
            return Ok(false);
        }
        Ok(sdp::min_eigenvalue(&assemble_gain_lmi(plant, g, x, eta)?)? > options.margin)
    };

    // Any stabilizing admissible gain yields a start through the closed-loop
    // Lyapunov equation X = Â X Âᵀ + BBᵀ + I.
    let q = plant.b() * plant.b().transpose() + DMatrix::identity(n, n);
    let lyapunov_start = |g: &DMatrix<f64>| -> Result<Option<DMatrix<f64>>> {
        let a_hat = closed_loop_matrix(plant, g)?;
        if spectral_radius(&a_hat)? >= 1.0 {
            return Ok(None);
        }
        match discrete_lyapunov(&a_hat, &q) {
            Ok(x0) if certified(&x0, g)? => Ok(Some(x0)),
            _ => Ok(None),
        }
    };
    if let Some(x0) = lyapunov_start(&zero)? {
        return Ok((x0, zero, gamma));
    }

    let layout = PairLayout::new(plant, constraints);
    let base = complementarity_problem(plant, constraints, &layout, eta, options.margin)?;
    let (mut x_k, mut y_k) = (DMatrix::identity(n, n), DMatrix::identity(n, n));
    // X = Y = cI, G = 0 is strictly feasible once c dominates A, B and 1/η.
    let mut c = 2.0 * (1.0 + plant.a().norm() + plant.b().norm_squared());
    let mut start = layout.pack(&DMatrix::identity(n, n), &DMatrix::identity(n, n), c);
    while base.min_slack(&start)? <= 0.0 {
        if c > 1e12 {
            return Err(Error::InfeasibleStructure(
                "no interior point for the relaxed problem".into(),
            ));
        }
        c *= 4.0;
        start = layout.pack(&DMatrix::identity(n, n), &DMatrix::identity(n, n), c);
    }
    let mut start = Some(start);
    let mut previous = f64::INFINITY;
    for _ in 0..options.feasibility_iters {
        let problem = base
            .clone()
            .with_objective(layout.complementarity_objective(&x_k, &y_k))?;
        let sol = sdp::solve(&problem, start.as_ref(), &options.solver)?;
        if sol.status != SolveStatus::Optimal {
            return Err(Error::InfeasibleStructure(format!(
                "complementarity subproblem ended with {:?}",
                sol.status
            )));
        }
        let (x, y, g) = layout.unpack(&sol.x);
        if certified(&x, &g)? {
            return Ok((x, g, gamma));
        }
        if constraints.admits(&g, 0.0) {
            if let Some(x0) = lyapunov_start(&g)? {
                return Ok((x0, g, gamma));
            }
        }
        let value = (&x * &y).trace();
        if (previous - value).abs() <= 1e-9 * value.abs().max(1.0) {
            return Err(Error::InfeasibleStructure(format!(
                "complementarity stalled at tr(XY) = {value:.6} (target {n})"
            )));
        }
        previous = value;
        x_k = x;
        y_k = y;
        start = Some(sol.x);
    }
    Err(Error::InfeasibleStructure(format!(
        "no strictly feasible start after {} complementarity iterations (tr(XY) = {previous:.6}, target {n})",
        options.feasibility_iters
    )))
}

/// Variables `(X, Y, G)` for the complementarity search: upper triangles of
/// `X` and `Y`, then the free gain entries.
#[derive(Debug, Clone)]
struct PairLayout {
    n: usize,
    m: usize,
    p: usize,
    free: Vec<(usize, usize)>,
}

impl PairLayout {
    fn new(plant: &PlantModel, constraints: &GainConstraintSet) -> Self {
        Self {
            n: plant.n(),
            m: plant.m(),
            p: plant.p(),
            free: constraints.free_entries(),
        }
    }

    fn tri(&self) -> usize {
        self.n * (self.n + 1) / 2
    }

    fn len(&self) -> usize {
        2 * self.tri() + self.free.len()
    }

    /// Packs `(scale·X, scale·Y)` with a zero gain.
    fn pack(&self, x: &DMatrix<f64>, y: &DMatrix<f64>, scale: f64) -> DVector<f64> {
        let mut v = DVector::zeros(self.len());
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                v[k] = scale * x[(i, j)];
                v[self.tri() + k] = scale * y[(i, j)];
                k += 1;
            }
        }
        v
    }

    fn unpack(&self, v: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let x = unpack_sym(self.n, &v.as_slice()[..self.tri()]);
        let y = unpack_sym(self.n, &v.as_slice()[self.tri()..2 * self.tri()]);
        let mut g = DMatrix::zeros(self.m, self.p);
        for (k, &(i, j)) in self.free.iter().enumerate() {
            g[(i, j)] = v[2 * self.tri() + k];
        }
        (x, y, g)
    }

    /// Coefficients of `tr(X_k Y + Y_k X)`.
    fn complementarity_objective(&self, x_k: &DMatrix<f64>, y_k: &DMatrix<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(self.len());
        let mut k = 0;
        for i in 0..self.n {
            for j in i..self.n {
                let w = if i == j { 1.0 } else { 2.0 };
                c[k] = w * y_k[(i, j)];
                c[self.tri() + k] = w * x_k[(i, j)];
                k += 1;
            }
        }
        c
    }
}

fn unpack_sym(n: usize, v: &[f64]) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            x[(i, j)] = v[k];
            x[(j, i)] = v[k];
            k += 1;
        }
    }
    x
}

fn complementarity_problem(
    plant: &PlantModel,
    constraints: &GainConstraintSet,
    layout: &PairLayout,
    eta: f64,
    margin: f64,
) -> Result<ConicProblem> {
    let n = plant.n();
    let main = AffineLmi::from_affine_map(layout.len(), |v| {
        let (x, y, g) = layout.unpack(v);
        let a_hat = plant.a() + plant.b() * &g * plant.c();
        fill_blocks(plant.b(), &a_hat, &x, eta, &y)
    })?;
    let coupling = AffineLmi::from_affine_map(layout.len(), |v| {
        let (x, y, _) = layout.unpack(v);
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        out.view_mut((0, 0), (n, n)).copy_from(&x);
        out.view_mut((n, n), (n, n)).copy_from(&y);
        for i in 0..n {
            out[(i, n + i)] = 1.0;
            out[(n + i, i)] = 1.0;
        }
        out
    })?;
    let mut problem = ConicProblem::new(DVector::zeros(layout.len())).with_margin(margin);
    problem.add_constraint(main)?;
    problem.add_constraint(coupling)?;
    if let Some(bound) = constraints.frobenius_bound() {
        problem.add_constraint(frobenius_ball(
            layout.len() - layout.free.len(),
            layout.free.len(),
            bound,
        )?)?;
    }
    Ok(problem)
}

fn check_gain_set(plant: &PlantModel, constraints: &GainConstraintSet) -> Result<()> {
    let shape = constraints.support().shape();
    if shape != (plant.m(), plant.p()) {
        return Err(Error::DimensionMismatch(format!(
            "gain support is {}x{}, plant needs {}x{}",
            shape.0,
            shape.1,
            plant.m(),
            plant.p()
        )));
    }
    Ok(())
}

/// Runs the linearize-and-solve iteration from a feasible start.
pub fn synthesize(
    plant: &PlantModel,
    constraints: &GainConstraintSet,
    options: &SynthesisOptions,
) -> Result<SynthesisResult> {
    let (mut x_k, mut g, gamma0) = find_feasible_start(plant, constraints, options)?;
    let layout = Layout::new(plant, constraints);
    let mut eta = gamma0 * gamma0;
    let mut gamma_history = Vec::new();
    let mut status = SynthesisStatus::MaxIterations;
    let mut iterations = 0;

    for _ in 0..options.max_outer_iters {
        let problem = subproblem(plant, constraints, &layout, &x_k, None, options.margin)?;
        let start = layout.pack(eta, &x_k, &g);
        let sol = sdp::solve(&problem, Some(&start), &options.solver)?;
        if sol.status != SolveStatus::Optimal {
            // keep the last certified iterate
            break;
        }
        iterations += 1;
        let (eta_next, x_next, g_next) = layout.unpack(&sol.x);
        let gamma_prev = eta.sqrt();
        let gamma_next = eta_next.sqrt();
        let step = (&x_next - &x_k).amax();
        gamma_history.push(gamma_next);
        eta = eta_next;
        x_k = x_next;
        g = g_next;
        if (gamma_prev - gamma_next).abs() < options.gamma_tol || step <= 1e-10 {
            status = SynthesisStatus::Converged;
            break;
        }
    }

    if gamma_history.is_empty() {
        return Err(Error::InfeasibleStructure("first descent subproblem failed".into()));
    }
    Ok(SynthesisResult {
        gain: constraints.mask(&g),
        gamma: eta.sqrt(),
        x: x_k,
        outer_iterations: iterations,
        gamma_history,
        status,
    })
}

/// `max_ω σ_max((e^{jω}I − Â)⁻¹ B)` over `points` frequencies in `[0, π]`.
pub fn energy_gain_estimate(plant: &PlantModel, g: &DMatrix<f64>, points: usize) -> Result<f64> {
    let a_hat = closed_loop_matrix(plant, g)?;
    let rho = spectral_radius(&a_hat)?;
    if rho >= 1.0 {
        return Err(Error::Unstable(rho));
    }
    let n = plant.n();
    let a_c = a_hat.map(|v| Complex::new(v, 0.0));
    let b_c = plant.b().map(|v| Complex::new(v, 0.0));
    let mut worst = 0.0f64;
    for k in 0..points.max(2) {
        let omega = std::f64::consts::PI * k as f64 / (points.max(2) - 1) as f64;
        let z = Complex::from_polar(1.0, omega);
        let resolvent = DMatrix::<Complex<f64>>::identity(n, n) * z - &a_c;
        let h = resolvent.lu().solve(&b_c).ok_or(Error::Unstable(1.0))?;
        let smax = h.singular_values().iter().cloned().fold(0.0, f64::max);
        worst = worst.max(smax);
    }
    Ok(worst)
}

/// Independent frequency-domain check that `γ` bounds the energy-to-energy
/// gain of `A + BGC`.
pub fn verify_energy_gain(plant: &PlantModel, g: &DMatrix<f64>, gamma: f64) -> Result<bool> {
    Ok(gamma > energy_gain_estimate(plant, g, FREQUENCY_POINTS)?)
}
