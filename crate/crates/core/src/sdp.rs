//! Small dense semidefinite programming layer.
//!
//! Problems have the form
//!
//! ```text
//! minimize    cᵀx
//! subject to  F_b(x) = F_b0 + Σ_i x_i F_bi  ⪰  margin · I   for every block b
//! ```
//!
//! Strict LMIs are expressed through the margin. The backend is a primal
//! log-det barrier path-following method with damped Newton centering and a
//! phase-I stage (`min s  s.t.  F_b(x) + s·I ⪰ margin·I`) whenever the start
//! point is not strictly feasible. It is intended for the few-dozen-variable,
//! ~20-row LMIs arising in gain synthesis, where dense Newton systems are
//! cheap.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::asymmetry;

/// Largest asymmetry tolerated by [`min_eigenvalue`] and constraint builders.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Affine symmetric matrix expression `F0 + Σ x_i F_i`.
#[derive(Debug, Clone)]
pub struct AffineLmi {
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

impl AffineLmi {
    pub fn new(constant: DMatrix<f64>) -> Result<Self> {
        check_symmetric(&constant)?;
        Ok(Self {
            constant,
            terms: Vec::new(),
        })
    }

    /// Adds `x_var · coef`, merging with an existing term for the same variable.
    pub fn add_term(&mut self, var: usize, coef: DMatrix<f64>) -> Result<()> {
        if coef.shape() != self.constant.shape() {
            return Err(Error::DimensionMismatch(format!(
                "LMI term is {}x{}, block is {}x{}",
                coef.nrows(),
                coef.ncols(),
                self.dim(),
                self.dim()
            )));
        }
        check_symmetric(&coef)?;
        match self.terms.iter_mut().find(|(v, _)| *v == var) {
            Some((_, existing)) => *existing += coef,
            None => self.terms.push((var, coef)),
        }
        Ok(())
    }

    pub fn with_term(mut self, var: usize, coef: DMatrix<f64>) -> Result<Self> {
        self.add_term(var, coef)?;
        Ok(self)
    }

    /// Recovers the coefficients of an affine map by probing it at the origin
    /// and at each unit vector. Coefficients that vanish identically are
    /// dropped.
    pub fn from_affine_map<F>(num_vars: usize, map: F) -> Result<Self>
    where
        F: Fn(&DVector<f64>) -> DMatrix<f64>,
    {
        let mut x = DVector::zeros(num_vars);
        let constant = map(&x);
        let mut lmi = Self::new(constant.clone())?;
        for i in 0..num_vars {
            x[i] = 1.0;
            let coef = map(&x) - &constant;
            x[i] = 0.0;
            if coef.iter().any(|v| *v != 0.0) {
                // probing differences carry rounding noise of order ε·|F0|
                lmi.add_term(i, crate::linalg::symmetrize(&coef))?;
            }
        }
        Ok(lmi)
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn constant(&self) -> &DMatrix<f64> {
        &self.constant
    }

    pub fn terms(&self) -> &[(usize, DMatrix<f64>)] {
        &self.terms
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut s = self.constant.clone();
        for (var, coef) in &self.terms {
            s += coef * x[*var];
        }
        s
    }

    fn max_var(&self) -> Option<usize> {
        self.terms.iter().map(|(v, _)| *v).max()
    }
}

/// Linear objective over a list of LMI blocks.
#[derive(Debug, Clone)]
pub struct ConicProblem {
    objective: DVector<f64>,
    constraints: Vec<AffineLmi>,
    margin: f64,
}

impl ConicProblem {
    pub const DEFAULT_MARGIN: f64 = 1e-6;

    pub fn new(objective: DVector<f64>) -> Self {
        Self {
            objective,
            constraints: Vec::new(),
            margin: Self::DEFAULT_MARGIN,
        }
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.margin = margin;
        self
    }

    /// Replaces the objective, keeping the constraints.
    pub fn with_objective(mut self, objective: DVector<f64>) -> Result<Self> {
        if objective.len() != self.objective.len() {
            return Err(Error::DimensionMismatch(format!(
                "objective has {} entries, problem has {} variables",
                objective.len(),
                self.objective.len()
            )));
        }
        self.objective = objective;
        Ok(self)
    }

    pub fn add_constraint(&mut self, lmi: AffineLmi) -> Result<()> {
        if let Some(v) = lmi.max_var() {
            if v >= self.num_vars() {
                return Err(Error::DimensionMismatch(format!(
                    "LMI references variable {v} but the problem has {}",
                    self.num_vars()
                )));
            }
        }
        self.constraints.push(lmi);
        Ok(())
    }

    pub fn with_constraint(mut self, lmi: AffineLmi) -> Result<Self> {
        self.add_constraint(lmi)?;
        Ok(self)
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }
    pub fn objective(&self) -> &DVector<f64> {
        &self.objective
    }
    pub fn constraints(&self) -> &[AffineLmi] {
        &self.constraints
    }
    pub fn margin(&self) -> f64 {
        self.margin
    }

    /// Smallest eigenvalue of `F_b(x) − margin·I` over all blocks.
    pub fn min_slack(&self, x: &DVector<f64>) -> Result<f64> {
        let mut worst = f64::INFINITY;
        for c in &self.constraints {
            worst = worst.min(min_eigenvalue(&c.evaluate(x))? - self.margin);
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Target duality gap (barrier parameter over `t`).
    pub tol: f64,
    /// Phase I declares infeasibility once its optimal slack is above `-feas_tol`.
    pub feas_tol: f64,
    /// Budget of Newton steps across all centering rounds.
    pub max_iter: usize,
    /// Growth factor of the barrier weight between centering rounds.
    pub growth: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            feas_tol: 1e-7,
            max_iter: 2000,
            growth: 20.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIterations,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// `max(0, −min_b λ_min(F_b(x) − margin·I))`.
    pub infeasibility: f64,
    pub status: SolveStatus,
    pub newton_steps: usize,
}

/// Solves `problem`, starting from `start` when given (it need not be
/// feasible).
pub fn solve(problem: &ConicProblem, start: Option<&DVector<f64>>, options: &SolverOptions) -> Result<ConicSolution> {
    let n = problem.num_vars();
    let x0 = match start {
        Some(x) if x.len() == n => x.clone(),
        Some(x) => {
            return Err(Error::DimensionMismatch(format!(
                "start has {} entries, problem has {n} variables",
                x.len()
            )))
        }
        None => DVector::zeros(n),
    };

    let mut steps = 0usize;
    let phase2 = Barrier::new(problem, false);
    let x = if phase2.is_interior(&x0) {
        x0
    } else {
        let phase1 = Barrier::new(problem, true);
        let worst = problem.min_slack(&x0)?;
        let mut z = x0.clone().insert_row(n, (-worst).max(0.0) + 1.0);
        let outcome = phase1.path_follow(&mut z, options, &mut steps, |z| z[n] < 0.0);
        let s = z[n];
        let x = z.remove_row(n);
        if s >= 0.0 {
            let status = match outcome {
                Outcome::Stopped | Outcome::Converged if s > -options.feas_tol => SolveStatus::Infeasible,
                Outcome::Unbounded => SolveStatus::Unbounded,
                _ => SolveStatus::MaxIterations,
            };
            return finish(problem, x, status, steps);
        }
        x
    };

    let mut x = x;
    let status = match phase2.path_follow(&mut x, options, &mut steps, |_| false) {
        Outcome::Converged | Outcome::Stopped => SolveStatus::Optimal,
        Outcome::MaxIterations => SolveStatus::MaxIterations,
        Outcome::Unbounded => SolveStatus::Unbounded,
    };
    finish(problem, x, status, steps)
}

fn finish(problem: &ConicProblem, x: DVector<f64>, status: SolveStatus, steps: usize) -> Result<ConicSolution> {
    let infeasibility = (-problem.min_slack(&x)?).max(0.0);
    Ok(ConicSolution {
        objective: problem.objective.dot(&x),
        x,
        infeasibility,
        status,
        newton_steps: steps,
    })
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(s: &DMatrix<f64>) -> Result<f64> {
    if !s.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    check_symmetric(s)?;
    if s.is_empty() {
        return Ok(f64::INFINITY);
    }
    let eig = SymmetricEigen::try_new(s.clone(), f64::EPSILON, 10_000).ok_or(Error::EigenNonConvergence)?;
    Ok(eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let scale = 1.0f64.max(m.amax());
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

enum Outcome {
    Converged,
    /// The caller's early-exit predicate fired.
    Stopped,
    MaxIterations,
    Unbounded,
}

struct Block {
    /// `F0 − margin·I`.
    constant: DMatrix<f64>,
    terms: Vec<(usize, DMatrix<f64>)>,
}

/// `t·cᵀz − Σ_b log det S_b(z)`.
struct Barrier {
    c: DVector<f64>,
    blocks: Vec<Block>,
    /// Sum of block dimensions; the central-path gap is `nu / t`.
    nu: f64,
}

const NEWTON_DECREMENT_TOL: f64 = 1e-9;
const DIVERGENCE_NORM: f64 = 1e14;

impl Barrier {
    /// With `phase_one`, an extra trailing variable `s` enters every block as
    /// `s·I` and becomes the sole objective.
    fn new(problem: &ConicProblem, phase_one: bool) -> Self {
        let n = problem.num_vars();
        let blocks = problem
            .constraints
            .iter()
            .map(|lmi| {
                let dim = lmi.dim();
                let mut terms = lmi.terms.clone();
                if phase_one {
                    terms.push((n, DMatrix::identity(dim, dim)));
                }
                Block {
                    constant: &lmi.constant - DMatrix::identity(dim, dim) * problem.margin,
                    terms,
                }
            })
            .collect::<Vec<_>>();
        let c = if phase_one {
            let mut c = DVector::zeros(n + 1);
            c[n] = 1.0;
            c
        } else {
            problem.objective.clone()
        };
        let nu = blocks.iter().map(|b| b.constant.nrows() as f64).sum();
        Self { c, blocks, nu }
    }

    fn slack(block: &Block, z: &DVector<f64>) -> DMatrix<f64> {
        let mut s = block.constant.clone();
        for (var, coef) in &block.terms {
            s += coef * z[*var];
        }
        s
    }

    fn is_interior(&self, z: &DVector<f64>) -> bool {
        self.blocks.iter().all(|b| Self::slack(b, z).cholesky().is_some())
    }

    /// Barrier value, or `None` outside the interior.
    fn value(&self, z: &DVector<f64>, t: f64) -> Option<f64> {
        let mut v = t * self.c.dot(z);
        for b in &self.blocks {
            let chol = Self::slack(b, z).cholesky()?;
            v -= 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        }
        Some(v)
    }

    /// Gradient and Hessian at an interior point.
    fn derivatives(&self, z: &DVector<f64>, t: f64) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let nz = z.len();
        let mut grad = &self.c * t;
        let mut hess = DMatrix::<f64>::zeros(nz, nz);
        for b in &self.blocks {
            let inv = Self::slack(b, z).cholesky()?.inverse();
            // W_k = S⁻¹ F_k; the Hessian entry is tr(W_k W_l)
            let w: Vec<DMatrix<f64>> = b.terms.iter().map(|(_, f)| &inv * f).collect();
            let wt: Vec<DMatrix<f64>> = w.iter().map(|m| m.transpose()).collect();
            for (k, (vk, _)) in b.terms.iter().enumerate() {
                grad[*vk] -= w[k].trace();
                for (l, (vl, _)) in b.terms.iter().enumerate().take(k + 1) {
                    let h = w[k].dot(&wt[l]);
                    hess[(*vk, *vl)] += h;
                    if vk != vl {
                        hess[(*vl, *vk)] += h;
                    }
                }
            }
        }
        Some((grad, hess))
    }

    fn newton_direction(grad: &DVector<f64>, hess: &DMatrix<f64>) -> Option<DVector<f64>> {
        let scale = hess.diagonal().amax().max(1e-300);
        let mut reg = 0.0;
        for _ in 0..12 {
            let mut h = hess.clone();
            for i in 0..h.nrows() {
                h[(i, i)] += reg;
            }
            if let Some(chol) = h.cholesky() {
                return Some(-chol.solve(grad));
            }
            reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
        }
        None
    }

    /// Damped Newton minimization of the barrier at weight `t`.
    fn centre<S>(&self, z: &mut DVector<f64>, t: f64, budget: usize, steps: &mut usize, stop: &S) -> Outcome
    where
        S: Fn(&DVector<f64>) -> bool,
    {
        loop {
            if stop(z) {
                return Outcome::Stopped;
            }
            if *steps >= budget {
                return Outcome::MaxIterations;
            }
            let Some((grad, hess)) = self.derivatives(z, t) else {
                return Outcome::MaxIterations;
            };
            let Some(dz) = Self::newton_direction(&grad, &hess) else {
                return Outcome::MaxIterations;
            };
            let slope = grad.dot(&dz);
            if -slope / 2.0 <= NEWTON_DECREMENT_TOL {
                return Outcome::Converged;
            }
            *steps += 1;
            let f0 = self.value(z, t).unwrap_or(f64::INFINITY);
            let mut step = 1.0;
            let mut accepted = false;
            let mut stalled = false;
            for _ in 0..60 {
                let trial = &*z + &dz * step;
                if let Some(f) = self.value(&trial, t) {
                    if f <= f0 + 0.25 * step * slope {
                        // decrease below rounding level of the barrier value
                        stalled = f0 - f <= 1e-14 * f0.abs().max(1.0);
                        *z = trial;
                        accepted = true;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !accepted || stalled {
                // no further progress representable in floating point
                return Outcome::Converged;
            }
            if z.amax() > DIVERGENCE_NORM {
                return Outcome::Unbounded;
            }
        }
    }

    /// Barrier weight whose centering condition `t·c + ∇φ = 0` is best
    /// satisfied at `z` in the local Hessian norm; falls back to balancing the
    /// objective against the barrier parameter.
    fn initial_weight(&self, z: &DVector<f64>, options: &SolverOptions) -> f64 {
        let fallback = self.nu / self.c.dot(z).abs().max(1.0);
        let fitted = self.derivatives(z, 0.0).and_then(|(grad, hess)| {
            let chol = hess.cholesky()?;
            let h_inv_c = chol.solve(&self.c);
            let denom = self.c.dot(&h_inv_c);
            (denom > 0.0).then(|| -grad.dot(&h_inv_c) / denom)
        });
        let t = match fitted {
            Some(t) if t.is_finite() && t > 0.0 => t,
            _ => fallback,
        };
        t.clamp(1e-12, self.nu / options.tol)
    }

    fn path_follow<S>(&self, z: &mut DVector<f64>, options: &SolverOptions, steps: &mut usize, stop: S) -> Outcome
    where
        S: Fn(&DVector<f64>) -> bool,
    {
        let mut t = self.initial_weight(z, options);
        loop {
            match self.centre(z, t, options.max_iter, steps, &stop) {
                Outcome::Converged => {}
                other => return other,
            }
            if self.nu / t < options.tol {
                return Outcome::Converged;
            }
            t *= options.growth;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn scalar_lower_bound() {
        // minimize η  s.t.  η − 4 ⪰ 0
        let lmi = AffineLmi::new(scalar(-4.0)).unwrap().with_term(0, scalar(1.0)).unwrap();
        let problem = ConicProblem::new(DVector::from_element(1, 1.0))
            .with_margin(0.0)
            .with_constraint(lmi)
            .unwrap();
        let sol = solve(&problem, None, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 4.0).abs() < 1e-6, "{}", sol.x[0]);
        assert!(sol.x[0] >= 4.0);
    }

    #[test]
    fn two_by_two_schur_bound() {
        // [[η, 1], [1, 1]] ⪰ 0  ⇔  η ≥ 1
        let lmi = AffineLmi::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 1.0]))
            .unwrap()
            .with_term(0, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]))
            .unwrap();
        let problem = ConicProblem::new(DVector::from_element(1, 1.0))
            .with_margin(0.0)
            .with_constraint(lmi)
            .unwrap();
        let sol = solve(
            &problem,
            Some(&DVector::from_element(1, 50.0)),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "{}", sol.x[0]);
    }

    #[test]
    fn margin_shifts_optimum() {
        let lmi = AffineLmi::new(scalar(-4.0)).unwrap().with_term(0, scalar(1.0)).unwrap();
        let problem = ConicProblem::new(DVector::from_element(1, 1.0))
            .with_margin(1e-3)
            .with_constraint(lmi)
            .unwrap();
        let sol = solve(&problem, None, &SolverOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 4.001, epsilon = 1e-6);
        assert_eq!(sol.infeasibility, 0.0);
    }

    #[test]
    fn impossible_constraint_is_infeasible() {
        let lmi = AffineLmi::new(-DMatrix::<f64>::identity(2, 2)).unwrap();
        let problem = ConicProblem::new(DVector::zeros(0)).with_constraint(lmi).unwrap();
        let sol = solve(&problem, None, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert!(sol.infeasibility > 0.9);
    }

    #[test]
    fn infeasible_with_variables() {
        // x ⪰ 1 and −x ⪰ 0 cannot both hold
        let a = AffineLmi::new(scalar(-1.0)).unwrap().with_term(0, scalar(1.0)).unwrap();
        let b = AffineLmi::new(scalar(0.0)).unwrap().with_term(0, scalar(-1.0)).unwrap();
        let problem = ConicProblem::new(DVector::from_element(1, 0.0))
            .with_constraint(a)
            .unwrap()
            .with_constraint(b)
            .unwrap();
        let sol = solve(&problem, None, &SolverOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);
    }

    #[test]
    fn unbounded_objective_is_flagged() {
        let lmi = AffineLmi::new(scalar(0.0)).unwrap().with_term(0, scalar(1.0)).unwrap();
        let problem = ConicProblem::new(DVector::from_element(1, -1.0))
            .with_constraint(lmi)
            .unwrap();
        let sol = solve(
            &problem,
            Some(&DVector::from_element(1, 1.0)),
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn optimal_points_reverify() {
        // minimize trace-like objective over a random feasible LMI family
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let n = 4;
            let mut lmi = AffineLmi::new(DMatrix::identity(n, n)).unwrap();
            for v in 0..3 {
                let r = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
                lmi.add_term(v, crate::linalg::symmetrize(&r)).unwrap();
            }
            // bounded box via diagonal blocks |x_v| ≤ 2
            let mut problem = ConicProblem::new(DVector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0)));
            problem.add_constraint(lmi).unwrap();
            for v in 0..3 {
                let bx = AffineLmi::new(DMatrix::identity(2, 2) * 2.0)
                    .unwrap()
                    .with_term(v, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]))
                    .unwrap();
                problem.add_constraint(bx).unwrap();
            }
            let sol = solve(&problem, None, &SolverOptions::default()).unwrap();
            assert_eq!(sol.status, SolveStatus::Optimal);
            for c in problem.constraints() {
                assert!(min_eigenvalue(&c.evaluate(&sol.x)).unwrap() >= problem.margin() - 1e-7);
            }
        }
    }

    #[test]
    fn affine_probe_recovers_coefficients() {
        let f = |x: &DVector<f64>| DMatrix::from_row_slice(2, 2, &[1.0 + 2.0 * x[0], x[1], x[1], 3.0 - x[0]]);
        let lmi = AffineLmi::from_affine_map(3, f).unwrap();
        assert_eq!(lmi.terms().len(), 2);
        let x = DVector::from_vec(vec![0.3, -1.2, 9.0]);
        assert!((lmi.evaluate(&x) - f(&x)).norm() < 1e-14);
    }

    #[test]
    fn min_eigenvalue_examples() {
        assert_relative_eq!(min_eigenvalue(&DMatrix::identity(3, 3)).unwrap(), 1.0, epsilon = 1e-14);
        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, -2.0]);
        assert_relative_eq!(min_eigenvalue(&d).unwrap(), -2.0, epsilon = 1e-14);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(matches!(min_eigenvalue(&asym), Err(Error::NotSymmetric(_))));
    }

    /// Number of eigenvalues of `s` strictly below `lambda`, read off the sign
    /// changes in the sequence of leading principal minors of `s − λI`
    /// (Sylvester's law of inertia, computed by pivot-free elimination).
    fn count_below(s: &DMatrix<f64>, lambda: f64) -> usize {
        let n = s.nrows();
        let mut m = s - DMatrix::identity(n, n) * lambda;
        let mut negatives = 0;
        for k in 0..n {
            let pivot = m[(k, k)];
            if pivot < 0.0 {
                negatives += 1;
            }
            for i in (k + 1)..n {
                let f = m[(i, k)] / pivot;
                for j in k..n {
                    m[(i, j)] -= f * m[(k, j)];
                }
            }
        }
        negatives
    }

    #[test]
    fn min_eigenvalue_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let r = DMatrix::from_fn(10, 10, |_, _| rng.gen_range(-1.0..1.0));
            let s = crate::linalg::symmetrize(&r);
            let bound = s.abs().row_sum().amax() + 1.0;
            let (mut lo, mut hi) = (-bound, bound);
            while hi - lo > 1e-12 {
                let mid = 0.5 * (lo + hi);
                if count_below(&s, mid) >= 1 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            assert!((min_eigenvalue(&s).unwrap() - 0.5 * (lo + hi)).abs() < 1e-8);
        }
    }
}
