//! Small dense nonlinear least-squares solvers shared by the estimators.
//!
//! Problems expose residuals and an analytic Jacobian; the cost is `0.5 * |r|^2`.

use nalgebra::{DMatrix, DVector};

pub trait LeastSquaresProblem {
    fn num_params(&self) -> usize;

    /// Residual vector at `x`, or `None` when `x` is outside the model domain.
    fn residuals(&self, x: &DVector<f64>) -> Option<DVector<f64>>;

    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub initial_lambda: f64,
    /// Stop when the relative cost decrease of an accepted step falls below this.
    pub cost_tolerance: f64,
    /// Stop when the step is this small relative to the parameters.
    pub step_tolerance: f64,
    /// Stop when the gradient infinity norm falls below this.
    pub gradient_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            initial_lambda: 1e-3,
            cost_tolerance: 1e-15,
            step_tolerance: 1e-14,
            gradient_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    /// Iteration budget exhausted; the report carries the best state found.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub params: DVector<f64>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Cost after every accepted iteration, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

fn cost_of(r: &DVector<f64>) -> f64 {
    0.5 * r.norm_squared()
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Some(ch.solve(b));
    }
    a.clone().lu().solve(b)
}

/// Levenberg-Marquardt with Marquardt diagonal scaling. Only cost-decreasing steps are accepted.
///
/// Returns `None` if the residuals are undefined at `x0`.
pub fn levenberg_marquardt<P: LeastSquaresProblem>(
    problem: &P,
    x0: DVector<f64>,
    cfg: &LmConfig,
) -> Option<SolveReport> {
    let mut x = x0;
    let mut r = problem.residuals(&x)?;
    let mut cost = cost_of(&r);
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut status = SolveStatus::Diverged;
    let mut iterations = 0;

    'outer: while iterations < cfg.max_iterations {
        iterations += 1;
        let j = problem.jacobian(&x);
        let jtj = j.transpose() * &j;
        let g = j.transpose() * &r;
        if g.amax() <= cfg.gradient_tolerance || cost == 0.0 {
            status = SolveStatus::Converged;
            break;
        }
        let diag_floor = jtj.diagonal().amax().max(1.0) * 1e-12;
        loop {
            let mut damped = jtj.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda * jtj[(i, i)].max(diag_floor);
            }
            let step = match solve_spd(&damped, &(-&g)) {
                Some(s) => s,
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        break 'outer;
                    }
                    continue;
                }
            };
            let candidate = &x + &step;
            let trial = problem.residuals(&candidate).map(|rc| (cost_of(&rc), rc));
            match trial {
                Some((c, rc)) if c < cost => {
                    let rel_decrease = (cost - c) / cost.max(f64::MIN_POSITIVE);
                    let small_step = step.norm() <= cfg.step_tolerance * (x.norm() + cfg.step_tolerance);
                    x = candidate;
                    r = rc;
                    cost = c;
                    history.push(cost);
                    lambda = (lambda / 3.0).max(1e-15);
                    if rel_decrease < cfg.cost_tolerance || small_step {
                        status = SolveStatus::Converged;
                        break 'outer;
                    }
                    break;
                }
                _ => {
                    if step.norm() <= cfg.step_tolerance * (x.norm() + cfg.step_tolerance) {
                        // no representable improvement left
                        status = SolveStatus::Converged;
                        break 'outer;
                    }
                    lambda *= 4.0;
                    if lambda > 1e16 {
                        status = SolveStatus::Converged;
                        break 'outer;
                    }
                }
            }
        }
    }

    Some(SolveReport {
        params: x,
        initial_cost,
        final_cost: cost,
        iterations,
        status,
        cost_history: history,
    })
}

/// Central-difference Jacobian, used by tests and diagnostics.
pub fn numeric_jacobian<F>(f: F, x: &DVector<f64>, step: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let m = f(x).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let col = (f(&xp) - f(&xm)) / (2.0 * step);
        jac.set_column(k, &col);
    }
    jac
}

/// `|A - B|_F / max(|B|_F, tiny)`.
pub fn relative_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
