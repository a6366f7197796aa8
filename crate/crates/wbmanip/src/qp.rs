//! Dense strictly-convex QP solver for the whole-body controller:
//!
//! ```text
//!     minimize     x' H x  (+ g' x internally)
//!     subject to   A_eq x = b_eq
//!                  lb <= x <= ub
//! ```
//!
//! Primal active-set method over the box bounds. The equality block stays in
//! the working set throughout; bounds are added/removed until the KKT
//! conditions hold. A feasible start comes from a phase-1 alternating
//! projection between the equality manifold and the box; failure of phase-1
//! is how equality-infeasible problems (singular Jacobians at full EE-twist
//! demand) are reported.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("KKT system singular even after regularization")]
    SingularKkt,
    #[error("dimension mismatch in QP data: {0}")]
    Dimension(String),
    #[error("invalid QP data: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive-definite cost matrix (objective `x' H x`).
    pub h: DMatrix<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.h.nrows();
        if self.h.ncols() != n {
            return Err(QpError::Dimension("H must be square".into()));
        }
        if self.a_eq.ncols() != n && self.a_eq.nrows() > 0 {
            return Err(QpError::Dimension("A_eq column count != n".into()));
        }
        if self.a_eq.nrows() != self.b_eq.len() {
            return Err(QpError::Dimension("A_eq rows != b_eq length".into()));
        }
        if self.lb.len() != n || self.ub.len() != n {
            return Err(QpError::Dimension("bound length != n".into()));
        }
        if self.a_eq.nrows() > n {
            return Err(QpError::Invalid("more equality rows than variables".into()));
        }
        for i in 0..n {
            if self.lb[i] > self.ub[i] {
                return Err(QpError::Invalid(format!("lb[{i}] > ub[{i}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    /// Signed bound multipliers: positive entries belong to active lower
    /// bounds, negative entries to active upper bounds, zero elsewhere.
    pub bound_multipliers: DVector<f64>,
    pub active_set: Vec<(usize, BoundSide)>,
    pub status: QpStatus,
    pub objective: f64,
}

/// Infinity norms of the KKT blocks for `s` on problem `p`.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_eq: f64,
    pub primal_bounds: f64,
    pub complementarity: f64,
    pub dual_feasibility: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_eq)
            .max(self.primal_bounds)
            .max(self.complementarity)
            .max(self.dual_feasibility)
    }
}

pub fn kkt_residuals(p: &QpProblem, s: &QpSolution) -> KktResiduals {
    let n = p.h.nrows();
    // stationarity: 2 H x - A' lambda - mu = 0 (mu signed)
    let mut grad = 2.0 * &p.h * &s.x;
    if p.a_eq.nrows() > 0 {
        grad -= p.a_eq.transpose() * &s.eq_multipliers;
    }
    grad -= &s.bound_multipliers;
    let stationarity = grad.amax();

    let primal_eq = if p.a_eq.nrows() > 0 {
        (&p.a_eq * &s.x - &p.b_eq).amax()
    } else {
        0.0
    };

    let mut primal_bounds: f64 = 0.0;
    let mut complementarity: f64 = 0.0;
    for i in 0..n {
        primal_bounds = primal_bounds
            .max(p.lb[i] - s.x[i])
            .max(s.x[i] - p.ub[i])
            .max(0.0);
        let mu = s.bound_multipliers[i];
        if mu > 0.0 {
            complementarity = complementarity.max((mu * (s.x[i] - p.lb[i])).abs());
        } else if mu < 0.0 {
            complementarity = complementarity.max((mu * (p.ub[i] - s.x[i])).abs());
        }
    }

    // sign consistency of the tagged active set
    let mut dual_feasibility: f64 = 0.0;
    for &(i, side) in &s.active_set {
        let mu = s.bound_multipliers[i];
        let viol = match side {
            BoundSide::Lower => -mu,
            BoundSide::Upper => mu,
        };
        dual_feasibility = dual_feasibility.max(viol).max(0.0);
    }

    KktResiduals {
        stationarity,
        primal_eq,
        primal_bounds,
        complementarity,
        dual_feasibility,
    }
}

/// Solve the box-and-equality constrained QP. `tol` bounds the accepted
/// multiplier sign violation and step size at termination.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.h.nrows();
    let (a, b, dropped_inconsistent) = independent_rows(&p.a_eq, &p.b_eq);
    if dropped_inconsistent {
        return Ok(infeasible_solution(n, p.a_eq.nrows()));
    }
    let x0 = match phase1_feasible_point(&a, &b, &p.lb, &p.ub) {
        Some(x0) => x0,
        None => return Ok(infeasible_solution(n, p.a_eq.nrows())),
    };
    let g = DVector::zeros(n);
    let mut sol = active_set_solve(&p.h, &g, &a, &b, &p.lb, &p.ub, x0, tol, max_iter)?;
    // report multipliers in the caller's (possibly rank-deficient) row space
    if a.nrows() != p.a_eq.nrows() {
        sol.eq_multipliers = lift_multipliers(&p.a_eq, &a, &sol.eq_multipliers);
    }
    sol.objective = (sol.x.transpose() * &p.h * &sol.x)[(0, 0)];
    Ok(sol)
}

/// Penalty fallback used when the equality block is infeasible (singular
/// Jacobian): `min x' H x + penalty * ||A_eq x - b_eq||^2` subject to the
/// box only. Always returns `Optimal` or `MaxIter`.
pub fn solve_qp_relaxed(p: &QpProblem, penalty: f64) -> Result<QpSolution, QpError> {
    p.validate()?;
    let n = p.h.nrows();
    let mut h = p.h.clone();
    let mut g = DVector::zeros(n);
    if p.a_eq.nrows() > 0 {
        h += penalty * p.a_eq.transpose() * &p.a_eq;
        g -= 2.0 * penalty * p.a_eq.transpose() * &p.b_eq;
    }
    // unconstrained minimizer clamped into the box is a feasible start
    let x_unc = solve_spd(&h, &(-0.5 * &g))?;
    let mut x0 = x_unc;
    for i in 0..n {
        x0[i] = x0[i].clamp(p.lb[i], p.ub[i]);
    }
    let empty_a = DMatrix::zeros(0, n);
    let empty_b = DVector::zeros(0);
    let mut sol = active_set_solve(&h, &g, &empty_a, &empty_b, &p.lb, &p.ub, x0, 1e-10, 200)?;
    sol.eq_multipliers = DVector::zeros(p.a_eq.nrows());
    sol.objective = {
        let base = (sol.x.transpose() * &p.h * &sol.x)[(0, 0)];
        let res = if p.a_eq.nrows() > 0 {
            (&p.a_eq * &sol.x - &p.b_eq).norm_squared()
        } else {
            0.0
        };
        base + penalty * res
    };
    Ok(sol)
}

fn infeasible_solution(n: usize, m: usize) -> QpSolution {
    QpSolution {
        x: DVector::zeros(n),
        eq_multipliers: DVector::zeros(m),
        bound_multipliers: DVector::zeros(n),
        active_set: Vec::new(),
        status: QpStatus::Infeasible,
        objective: f64::INFINITY,
    }
}

/// Row-reduce `[A | b]`, returning the independent rows. The boolean is true
/// when a dependent row of A carries an inconsistent right-hand side.
fn independent_rows(a: &DMatrix<f64>, b: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>, bool) {
    let m = a.nrows();
    let n = a.ncols();
    if m == 0 {
        return (a.clone(), b.clone(), false);
    }
    let scale = a.amax().max(1.0);
    let tol = 1e-12 * scale * (n.max(m) as f64);
    let mut work = DMatrix::zeros(m, n + 1);
    work.view_mut((0, 0), (m, n)).copy_from(a);
    for i in 0..m {
        work[(i, n)] = b[i];
    }
    let mut kept = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row >= m {
            break;
        }
        let (piv, pmax) = (row..m)
            .map(|r| (r, work[(r, col)].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        if pmax <= tol {
            continue;
        }
        work.swap_rows(row, piv);
        for r in (row + 1)..m {
            let f = work[(r, col)] / work[(row, col)];
            for c in col..=n {
                work[(r, c)] -= f * work[(row, c)];
            }
        }
        kept.push(col);
        row += 1;
    }
    // rows below `row` are dependent: inconsistent iff their rhs survived
    let inconsistent = (row..m).any(|r| work[(r, n)].abs() > tol.max(1e-9));
    // keep the first `rank` independent rows of the original matrix, chosen
    // greedily so the reported multipliers stay attached to original rows
    let rank = row;
    let mut keep_rows: Vec<usize> = Vec::new();
    let mut acc = DMatrix::<f64>::zeros(0, n);
    for r in 0..m {
        if keep_rows.len() == rank {
            break;
        }
        let prev = acc.nrows();
        let mut cand = DMatrix::zeros(prev + 1, n);
        cand.view_mut((0, 0), (prev, n)).copy_from(&acc);
        for c in 0..n {
            cand[(prev, c)] = a[(r, c)];
        }
        if matrix_rank(&cand, tol) == cand.nrows() {
            keep_rows.push(r);
            acc = cand;
        }
    }
    let a_red = DMatrix::from_fn(keep_rows.len(), n, |i, j| a[(keep_rows[i], j)]);
    let b_red = DVector::from_fn(keep_rows.len(), |i, _| b[keep_rows[i]]);
    (a_red, b_red, inconsistent)
}

fn matrix_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    m.clone().svd(false, false).rank(tol)
}

/// Express multipliers found for the reduced row set in terms of the
/// original rows (dropped rows get zero).
fn lift_multipliers(
    a_full: &DMatrix<f64>,
    a_red: &DMatrix<f64>,
    lam_red: &DVector<f64>,
) -> DVector<f64> {
    let mut out = DVector::zeros(a_full.nrows());
    let mut k = 0;
    for i in 0..a_full.nrows() {
        if k < a_red.nrows() {
            let same = (0..a_full.ncols()).all(|j| a_full[(i, j)] == a_red[(k, j)]);
            if same {
                out[i] = lam_red[k];
                k += 1;
            }
        }
    }
    out
}

/// Alternating projection between `{x : A x = b}` and the box. Returns a
/// point satisfying both within 1e-10, or None when the intersection is
/// (numerically) empty.
fn phase1_feasible_point(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
) -> Option<DVector<f64>> {
    let n = lb.len();
    let clamp = |x: &mut DVector<f64>| {
        for i in 0..n {
            x[i] = x[i].clamp(lb[i], ub[i]);
        }
    };
    if a.nrows() == 0 {
        let mut x = DVector::zeros(n);
        clamp(&mut x);
        return Some(x);
    }
    // projection onto the affine set: x + A'(AA')^-1 (b - Ax)
    let aat = a * a.transpose();
    let chol = aat.clone().cholesky()?;
    let project = |x: &DVector<f64>| -> DVector<f64> {
        let r = b - a * x;
        x + a.transpose() * chol.solve(&r)
    };

    let mut x = project(&DVector::zeros(n));
    let feas_tol = 1e-10 * (1.0 + b.amax());
    for _ in 0..20_000 {
        let mut xc = x.clone();
        clamp(&mut xc);
        let res = (a * &xc - b).amax();
        if res <= feas_tol {
            return Some(xc);
        }
        let x_next = project(&xc);
        let progress = (&x_next - &x).amax();
        x = x_next;
        if progress < 1e-15 {
            break; // stalled: empty intersection
        }
    }
    let mut xc = x.clone();
    clamp(&mut xc);
    if (a * &xc - b).amax() <= 1e-8 * (1.0 + b.amax()) {
        Some(xc)
    } else {
        None
    }
}

fn solve_spd(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, QpError> {
    if let Some(chol) = h.clone().cholesky() {
        return Ok(chol.solve(rhs));
    }
    let reg = h + DMatrix::identity(h.nrows(), h.ncols()) * 1e-12;
    reg.cholesky()
        .map(|c| c.solve(rhs))
        .ok_or(QpError::SingularKkt)
}

/// Solve the KKT system of the equality-constrained subproblem
/// `min x' H x + g' x  s.t.  A x = b, x_i = v_i for i in fixed`.
/// Returns (x, eq multipliers, fixed-variable multipliers).
fn kkt_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    fixed: &[(usize, f64)],
) -> Result<(DVector<f64>, DVector<f64>, Vec<f64>), QpError> {
    let n = h.nrows();
    let m = a.nrows();
    let k = fixed.len();
    let dim = n + m + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        for j in 0..n {
            kkt[(i, j)] = 2.0 * h[(i, j)];
        }
        rhs[i] = -g[i];
    }
    for r in 0..m {
        for c in 0..n {
            kkt[(n + r, c)] = a[(r, c)];
            kkt[(c, n + r)] = a[(r, c)];
        }
        rhs[n + r] = b[r];
    }
    for (t, &(i, v)) in fixed.iter().enumerate() {
        kkt[(n + m + t, i)] = 1.0;
        kkt[(i, n + m + t)] = 1.0;
        rhs[n + m + t] = v;
    }
    let lu = kkt.clone().full_piv_lu();
    let sol = match lu.solve(&rhs) {
        Some(s) => s,
        None => {
            // regularize the Hessian block and retry once
            for i in 0..n {
                kkt[(i, i)] += 1e-12;
            }
            kkt.full_piv_lu().solve(&rhs).ok_or(QpError::SingularKkt)?
        }
    };
    let x = sol.rows(0, n).into_owned();
    // the assembled system carries +A' in the top block, so the solved
    // multipliers are negated relative to 2Hx + g - A'lam - mu = 0
    let lam = -sol.rows(n, m).into_owned();
    let mu = (0..k).map(|t| -sol[n + m + t]).collect();
    Ok((x, lam, mu))
}

/// Primal active-set iteration from a feasible starting point.
#[allow(clippy::too_many_arguments)]
fn active_set_solve(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    mut x: DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<QpSolution, QpError> {
    let n = h.nrows();
    let m = a.nrows();
    let edge_tol = 1e-11;

    // start with every bound that holds with equality in the working set
    let mut working: Vec<(usize, BoundSide)> = (0..n)
        .filter_map(|i| {
            if (x[i] - lb[i]).abs() <= edge_tol {
                Some((i, BoundSide::Lower))
            } else if (x[i] - ub[i]).abs() <= edge_tol {
                Some((i, BoundSide::Upper))
            } else {
                None
            }
        })
        .collect();

    for _ in 0..max_iter {
        let fixed: Vec<(usize, f64)> = working
            .iter()
            .map(|&(i, side)| {
                let v = match side {
                    BoundSide::Lower => lb[i],
                    BoundSide::Upper => ub[i],
                };
                (i, v)
            })
            .collect();
        let (x_eq, lam, mu) = match kkt_solve(h, g, a, b, &fixed) {
            Ok(v) => v,
            // an over-determined working set (corner start) makes the KKT
            // matrix singular; drop the newest bound and retry
            Err(QpError::SingularKkt) if !working.is_empty() => {
                working.pop();
                continue;
            }
            Err(e) => return Err(e),
        };
        let d = &x_eq - &x;

        if d.amax() <= tol.max(1e-12) {
            // subproblem optimum reached; check multiplier signs
            let mut worst: Option<(usize, f64)> = None;
            for (t, &(_, side)) in working.iter().enumerate() {
                let viol = match side {
                    BoundSide::Lower => -mu[t],
                    BoundSide::Upper => mu[t],
                };
                if viol > tol.max(1e-10) && worst.map_or(true, |(_, w)| viol > w) {
                    worst = Some((t, viol));
                }
            }
            match worst {
                None => {
                    let mut bound_mult = DVector::zeros(n);
                    for (t, &(i, side)) in working.iter().enumerate() {
                        let _ = side;
                        bound_mult[i] = mu[t];
                    }
                    return Ok(QpSolution {
                        x: x_eq,
                        eq_multipliers: lam,
                        bound_multipliers: bound_mult,
                        active_set: working,
                        status: QpStatus::Optimal,
                        objective: 0.0, // filled by the caller
                    });
                }
                Some((t, _)) => {
                    working.remove(t);
                    continue;
                }
            }
        }

        // step toward the subproblem optimum until a new bound blocks
        let mut alpha = 1.0f64;
        let mut blocking: Option<(usize, BoundSide)> = None;
        for i in 0..n {
            if working.iter().any(|&(j, _)| j == i) || d[i].abs() < 1e-14 {
                continue;
            }
            if d[i] < 0.0 {
                let step = (lb[i] - x[i]) / d[i];
                if step < alpha {
                    alpha = step.max(0.0);
                    blocking = Some((i, BoundSide::Lower));
                }
            } else {
                let step = (ub[i] - x[i]) / d[i];
                if step < alpha {
                    alpha = step.max(0.0);
                    blocking = Some((i, BoundSide::Upper));
                }
            }
        }
        x += alpha * &d;
        let _ = m;
        if let Some(bl) = blocking {
            x[bl.0] = match bl.1 {
                BoundSide::Lower => lb[bl.0],
                BoundSide::Upper => ub[bl.0],
            };
            working.push(bl);
        }
    }

    Ok(QpSolution {
        x,
        eq_multipliers: DVector::zeros(m),
        bound_multipliers: DVector::zeros(n),
        active_set: working,
        status: QpStatus::MaxIter,
        objective: 0.0,
    })
}
