//! Dense convex quadratic programming:
//! minimize `½ xᵀPx + qᵀx` subject to `Ax ≤ b`, `Cx = d`, with `P` positive
//! semidefinite.
//!
//! The solver is an over-relaxed operator-splitting (ADMM) iteration on the
//! stacked constraint form `l ≤ Mx ≤ u`, followed by an active-set polish
//! that re-solves the KKT equality system on the identified active rows.
//! Everything is deterministic given the inputs and options.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    /// Inequality rows `a x <= b`; may have zero rows.
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Equality rows `c x = d`; may have zero rows.
    pub c: DMatrix<f64>,
    pub d: DVector<f64>,
}

impl QpProblem {
    /// Problem without constraints.
    pub fn unconstrained(p: DMatrix<f64>, q: DVector<f64>) -> Self {
        let n = q.len();
        QpProblem {
            p,
            q,
            a: DMatrix::zeros(0, n),
            b: DVector::zeros(0),
            c: DMatrix::zeros(0, n),
            d: DVector::zeros(0),
        }
    }

    fn check_dims(&self) -> Result<()> {
        let n = self.q.len();
        if self.p.nrows() != n || self.p.ncols() != n {
            return Err(Error::Dimension(format!(
                "P is {}x{}, q has {n} entries",
                self.p.nrows(),
                self.p.ncols()
            )));
        }
        if self.a.ncols() != n && self.a.nrows() > 0 {
            return Err(Error::Dimension("A column count".into()));
        }
        if self.a.nrows() != self.b.len() {
            return Err(Error::Dimension("A rows vs b".into()));
        }
        if self.c.ncols() != n && self.c.nrows() > 0 {
            return Err(Error::Dimension("C column count".into()));
        }
        if self.c.nrows() != self.d.len() {
            return Err(Error::Dimension("C rows vs d".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iter: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Over-relaxation parameter in `(1, 2)`.
    pub alpha: f64,
    pub polish: bool,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iter: 50_000,
            eps_abs: 1e-8,
            eps_rel: 1e-9,
            alpha: 1.6,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Max of equality violation and positive part of inequality violation.
    pub primal_residual: f64,
    /// `‖Px + q + Aᵀμ + Cᵀν‖∞`.
    pub dual_residual: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Inequality multipliers `μ ≥ 0`.
    pub ineq_multipliers: DVector<f64>,
    /// Equality multipliers `ν` (free sign).
    pub eq_multipliers: DVector<f64>,
    /// Infinity norm of the primal infeasibility certificate, when detected.
    pub certificate_norm: Option<f64>,
}

/// Solve the QP. Nonconvex `P` (eigenvalue below `-1e-8 ‖P‖`) is a domain
/// error; infeasibility is reported through the solution status.
pub fn solve(problem: &QpProblem, options: &QpOptions) -> Result<QpSolution> {
    problem.check_dims()?;
    let n = problem.q.len();

    // Symmetrize on intake.
    let p_sym = (&problem.p + problem.p.transpose()) * 0.5;
    let eigs = p_sym.clone().symmetric_eigen().eigenvalues;
    let spectral = eigs.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    let min_eig = eigs.iter().fold(f64::INFINITY, |m, e| m.min(*e));
    if min_eig < -1e-8 * (1.0 + spectral) {
        return Err(Error::domain(format!(
            "P is not positive semidefinite: min eigenvalue {min_eig:.3e}"
        )));
    }

    // Diagonal regularization inside the solver only.
    let reg = 1e-10 * p_sym.trace() / n as f64;
    let mut p_solver = p_sym.clone();
    for i in 0..n {
        p_solver[(i, i)] += reg;
    }

    // Cost scaling keeps the argmin invariant under (P, q) -> s (P, q).
    let cost_scale = p_sym.amax().max(problem.q.amax()).max(1e-12);
    let p_s = &p_solver / cost_scale;
    let q_s = &problem.q / cost_scale;

    let n_ineq = problem.a.nrows();
    let n_eq = problem.c.nrows();
    let m_rows = n_ineq + n_eq;

    if m_rows == 0 {
        return solve_unconstrained(&p_sym, &p_s, &q_s, problem, cost_scale);
    }

    // Stack constraints as l <= Mx <= u with per-row scaling to unit inf-norm.
    let mut m_mat = DMatrix::zeros(m_rows, n);
    let mut lower = DVector::from_element(m_rows, f64::NEG_INFINITY);
    let mut upper = DVector::zeros(m_rows);
    let mut row_scale = DVector::from_element(m_rows, 1.0);
    for r in 0..n_ineq {
        let s = problem.a.row(r).amax().max(1e-12);
        row_scale[r] = s;
        for c in 0..n {
            m_mat[(r, c)] = problem.a[(r, c)] / s;
        }
        upper[r] = problem.b[r] / s;
    }
    for r in 0..n_eq {
        let s = problem.c.row(r).amax().max(1e-12);
        row_scale[n_ineq + r] = s;
        for c in 0..n {
            m_mat[(n_ineq + r, c)] = problem.c[(r, c)] / s;
        }
        upper[n_ineq + r] = problem.d[r] / s;
        lower[n_ineq + r] = problem.d[r] / s;
    }

    let sigma = 1e-6;
    let mut rho = DVector::from_element(m_rows, 0.1);
    for r in n_ineq..m_rows {
        rho[r] = 100.0; // equalities held stiffer
    }

    let factor = |rho: &DVector<f64>| -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
        let mut kkt = p_s.clone();
        for i in 0..n {
            kkt[(i, i)] += sigma;
        }
        // kkt += Mᵀ diag(rho) M
        for r in 0..m_rows {
            let row = m_mat.row(r);
            for i in 0..n {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in 0..n {
                    kkt[(i, j)] += rho[r] * ri * row[j];
                }
            }
        }
        nalgebra::Cholesky::new(kkt).ok_or_else(|| Error::Solver("KKT factorization failed".into()))
    };
    let mut chol = factor(&rho)?;

    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m_rows);
    let mut yv = DVector::zeros(m_rows);

    let alpha = options.alpha;
    let mut iterations = 0;
    let mut status = QpStatus::MaxIter;
    let mut polished: Option<(DVector<f64>, DVector<f64>)> = None;
    let check_every = 25;

    while iterations < options.max_iter {
        iterations += 1;
        // x-step
        let mut rhs = sigma * &x - &q_s;
        for r in 0..m_rows {
            let coeff = rho[r] * z[r] - yv[r];
            for i in 0..n {
                rhs[i] += m_mat[(r, i)] * coeff;
            }
        }
        let x_tilde = chol.solve(&rhs);
        let z_tilde = &m_mat * &x_tilde;
        x = alpha * &x_tilde + (1.0 - alpha) * &x;
        let v = alpha * &z_tilde + (1.0 - alpha) * &z;
        let mut z_next = DVector::zeros(m_rows);
        let mut dy = DVector::zeros(m_rows);
        for r in 0..m_rows {
            let cand: f64 = v[r] + yv[r] / rho[r];
            z_next[r] = cand.clamp(lower[r], upper[r]);
            let y_new = yv[r] + rho[r] * (v[r] - z_next[r]);
            dy[r] = y_new - yv[r];
            yv[r] = y_new;
        }
        z = z_next;

        if iterations % check_every != 0 && iterations != options.max_iter {
            continue;
        }

        let mx = &m_mat * &x;
        let r_prim = (&mx - &z).amax();
        let px = &p_s * &x;
        let mty = m_mat.transpose() * &yv;
        let r_dual = (&px + &q_s + &mty).amax();
        let eps_prim = options.eps_abs + options.eps_rel * mx.amax().max(z.amax());
        let eps_dual =
            options.eps_abs + options.eps_rel * px.amax().max(q_s.amax()).max(mty.amax());

        // Primal infeasibility certificate from the dual update direction.
        let dy_norm = dy.amax();
        if dy_norm > 1e-12 {
            let dyn_ = &dy / dy_norm;
            let mtdy = (m_mat.transpose() * &dyn_).amax();
            let mut support = 0.0;
            let mut unbounded = false;
            for r in 0..m_rows {
                if dyn_[r] > 0.0 {
                    if upper[r].is_finite() {
                        support += upper[r] * dyn_[r];
                    } else {
                        unbounded = true;
                    }
                } else if dyn_[r] < 0.0 {
                    if lower[r].is_finite() {
                        support += lower[r] * dyn_[r];
                    } else {
                        unbounded = true;
                    }
                }
            }
            if !unbounded && mtdy < 1e-10 && support < -1e-10 {
                status = QpStatus::Infeasible;
                let cert = &dy / dy_norm;
                return Ok(QpSolution {
                    x,
                    objective: f64::NAN,
                    primal_residual: r_prim,
                    dual_residual: r_dual,
                    iterations,
                    status,
                    ineq_multipliers: DVector::zeros(n_ineq),
                    eq_multipliers: DVector::zeros(n_eq),
                    certificate_norm: Some(cert.amax()),
                });
            }
        }

        let near = r_prim < 1e-5 && r_dual < 1e-5;
        if near && options.polish {
            if let Some((px_pol, ypol)) = try_polish(&p_s, &q_s, &m_mat, &lower, &upper, n_ineq, &z, &yv)
            {
                polished = Some((px_pol, ypol));
                status = QpStatus::Optimal;
                break;
            }
        }
        if r_prim <= eps_prim && r_dual <= eps_dual {
            status = QpStatus::Optimal;
            break;
        }

        // Residual-balancing rho update, refactoring when it moves.
        if iterations % 200 == 0 {
            let prim_rel = r_prim / (mx.amax().max(z.amax()).max(1e-12));
            let dual_rel = r_dual / (px.amax().max(q_s.amax()).max(mty.amax()).max(1e-12));
            let ratio = (prim_rel / dual_rel.max(1e-16)).sqrt();
            if ratio > 5.0 || ratio < 0.2 {
                for r in 0..m_rows {
                    rho[r] = (rho[r] * ratio).clamp(1e-6, 1e6);
                }
                chol = factor(&rho)?;
            }
        }
    }

    let (x_final, y_final) = match polished {
        Some((xp, yp)) => (xp, yp),
        None => (x, yv),
    };

    // Unscale multipliers back to the original row scaling.
    let mut mu = DVector::zeros(n_ineq);
    for r in 0..n_ineq {
        mu[r] = (y_final[r].max(0.0)) * cost_scale / row_scale[r];
    }
    let mut nu = DVector::zeros(n_eq);
    for r in 0..n_eq {
        nu[r] = y_final[n_ineq + r] * cost_scale / row_scale[n_ineq + r];
    }

    let objective = 0.5 * (x_final.transpose() * &p_sym * &x_final)[(0, 0)]
        + problem.q.dot(&x_final);
    let mut primal_residual = 0.0f64;
    if n_ineq > 0 {
        let viol = &problem.a * &x_final - &problem.b;
        primal_residual = viol.iter().fold(0.0f64, |m, v| m.max(*v));
    }
    if n_eq > 0 {
        let viol = (&problem.c * &x_final - &problem.d).amax();
        primal_residual = primal_residual.max(viol);
    }
    let stationarity = (&p_sym * &x_final
        + &problem.q
        + problem.a.transpose() * &mu
        + problem.c.transpose() * &nu)
        .amax();

    Ok(QpSolution {
        x: x_final,
        objective,
        primal_residual,
        dual_residual: stationarity,
        iterations,
        status,
        ineq_multipliers: mu,
        eq_multipliers: nu,
        certificate_norm: None,
    })
}

fn solve_unconstrained(
    p_sym: &DMatrix<f64>,
    p_s: &DMatrix<f64>,
    q_s: &DVector<f64>,
    problem: &QpProblem,
    _cost_scale: f64,
) -> Result<QpSolution> {
    let chol = nalgebra::Cholesky::new(p_s.clone())
        .ok_or_else(|| Error::Solver("unconstrained problem is singular".into()))?;
    let x = chol.solve(&(-q_s));
    let objective = 0.5 * (x.transpose() * p_sym * &x)[(0, 0)] + problem.q.dot(&x);
    let dual = (p_sym * &x + &problem.q).amax();
    Ok(QpSolution {
        x,
        objective,
        primal_residual: 0.0,
        dual_residual: dual,
        iterations: 0,
        status: QpStatus::Optimal,
        ineq_multipliers: DVector::zeros(0),
        eq_multipliers: DVector::zeros(0),
        certificate_norm: None,
    })
}

/// Re-solve the KKT system on the candidate active set. Returns the polished
/// `(x, stacked multipliers)` when the result passes a strict feasibility,
/// stationarity and multiplier-sign check.
#[allow(clippy::too_many_arguments)]
fn try_polish(
    p_s: &DMatrix<f64>,
    q_s: &DVector<f64>,
    m_mat: &DMatrix<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
    n_ineq: usize,
    z: &DVector<f64>,
    yv: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = q_s.len();
    let m_rows = m_mat.nrows();
    let act_tol = 1e-6;
    let mut active: Vec<usize> = (0..m_rows)
        .filter(|&r| {
            r >= n_ineq // equalities always active
                || upper[r] - z[r] <= act_tol * (1.0 + upper[r].abs())
                || yv[r] > act_tol
        })
        .collect();

    for _round in 0..24 {
        let na = active.len();
        let dim = n + na;
        // Regularized system for factorization, unregularized for residuals;
        // refinement drives the solution to the true KKT point.
        let mut kkt = DMatrix::zeros(dim, dim);
        let delta = 1e-9;
        for i in 0..n {
            for j in 0..n {
                kkt[(i, j)] = p_s[(i, j)];
            }
        }
        for (a_idx, &r) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a_idx, j)] = m_mat[(r, j)];
                kkt[(j, n + a_idx)] = m_mat[(r, j)];
            }
        }
        let mut kkt_reg = kkt.clone();
        for i in 0..n {
            kkt_reg[(i, i)] += delta;
        }
        for a_idx in 0..na {
            kkt_reg[(n + a_idx, n + a_idx)] = -delta;
        }
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            rhs[i] = -q_s[i];
        }
        for (a_idx, &r) in active.iter().enumerate() {
            rhs[n + a_idx] = upper[r];
        }
        let lu = kkt_reg.lu();
        let mut sol = lu.solve(&rhs)?;
        let mut last_resid = f64::INFINITY;
        for _ in 0..8 {
            let resid = &rhs - &kkt * &sol;
            let norm = resid.amax();
            if norm < 1e-14 * (1.0 + rhs.amax()) || norm >= last_resid {
                break;
            }
            last_resid = norm;
            match lu.solve(&resid) {
                Some(corr) => sol += corr,
                None => break,
            }
        }

        let x = sol.rows(0, n).into_owned();
        let mut y_full = DVector::zeros(m_rows);
        for (a_idx, &r) in active.iter().enumerate() {
            y_full[r] = sol[n + a_idx];
        }
        // Drop inequality rows whose multiplier came out negative, then add
        // any row the trial point violates; together this walks to the
        // optimal active set.
        let keep: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&r| r >= n_ineq || y_full[r] > -1e-9)
            .collect();
        if keep.len() != active.len() {
            active = keep;
            continue;
        }
        let mx = m_mat * &x;
        let mut added = false;
        for r in 0..m_rows {
            if active.contains(&r) {
                continue;
            }
            if mx[r] > upper[r] + 1e-11 * (1.0 + upper[r].abs()) {
                active.push(r);
                added = true;
            }
        }
        if added {
            active.sort_unstable();
            continue;
        }

        // Strict validation on the scaled problem.
        let feas_tol = 1e-9;
        let mut ok = true;
        for r in 0..m_rows {
            if mx[r] > upper[r] + feas_tol * (1.0 + upper[r].abs()) {
                ok = false;
                break;
            }
            if lower[r].is_finite() && mx[r] < lower[r] - feas_tol * (1.0 + lower[r].abs()) {
                ok = false;
                break;
            }
        }
        if !ok {
            return None;
        }
        let grad = p_s * &x + q_s + m_mat.transpose() * &y_full;
        if grad.amax() > 1e-8 * (1.0 + q_s.amax()) {
            return None;
        }
        for r in 0..n_ineq {
            if y_full[r] < 0.0 {
                y_full[r] = 0.0;
            }
        }
        return Some((x, y_full));
    }
    None
}
