//! Feasibility-driven DDP with squashed control limits.
//!
//! The solver optimizes in an unconstrained pre-control space `w`; the
//! logistic squash `u = u̲ + (u̅-u̲)·σ(s·w)` keeps every emitted control
//! strictly inside its bounds while staying smooth for the backward pass.
//!
//! Shooting gaps between nodes are tolerated: the backward pass folds each
//! gap into the value gradient and the forward pass contracts the gaps by
//! `(1-α)` along the line search, so infeasible warm starts (e.g. shifted
//! MPC solutions) are first-class citizens.

use nalgebra::{DMatrix, DVector};

use crate::cost::{CostQuad, NodeCost};
use crate::dynamics::{integrate, Control, State};
use crate::model::RobotModel;

/// Smooth logistic reparameterization keeping controls inside `[lo, hi]`.
#[derive(Clone, Debug)]
pub struct Squash {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    /// Per-channel sharpness, default `10 / (hi - lo)`.
    pub sharpness: DVector<f64>,
}

impl Squash {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        for i in 0..lo.len() {
            assert!(
                lo[i] < hi[i] && lo[i].is_finite() && hi[i].is_finite(),
                "squash bounds must be finite with lo < hi (channel {i})"
            );
        }
        let sharpness = DVector::from_fn(lo.len(), |i, _| 10.0 / (hi[i] - lo[i]));
        Squash { lo, hi, sharpness }
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| {
            // Clamp so saturated channels stay strictly inside the bounds
            // even after f64 rounding.
            let s = sigmoid(self.sharpness[i] * w[i]).clamp(1e-12, 1.0 - 1e-12);
            self.lo[i] + (self.hi[i] - self.lo[i]) * s
        })
    }

    /// Elementwise derivative du/dw.
    pub fn derivative(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(w.len(), |i, _| {
            let s = sigmoid(self.sharpness[i] * w[i]);
            (self.hi[i] - self.lo[i]) * self.sharpness[i] * s * (1.0 - s)
        })
    }

    /// Inverse on the open interval; inputs are clamped strictly inside.
    pub fn inverse(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| {
            let p = ((u[i] - self.lo[i]) / (self.hi[i] - self.lo[i])).clamp(1e-9, 1.0 - 1e-9);
            (p / (1.0 - p)).ln() / self.sharpness[i]
        })
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Problem definition consumed by the solver. The robot OCP implements this
/// through [`ShootingProblem`]; tests implement it directly for analytic
/// benchmark problems.
pub trait OcpDef {
    type State: Clone;

    fn horizon(&self) -> usize;
    fn nx(&self) -> usize;
    fn nu(&self) -> usize;
    fn initial_state(&self) -> Self::State;
    fn control_bounds(&self) -> (DVector<f64>, DVector<f64>);
    fn step(&self, k: usize, x: &Self::State, u: &DVector<f64>) -> Self::State;
    fn running_cost(&self, k: usize, x: &Self::State, u: &DVector<f64>) -> f64;
    fn terminal_cost(&self, x: &Self::State) -> f64;
    fn running_quad(&self, k: usize, x: &Self::State, u: &DVector<f64>) -> CostQuad;
    fn terminal_quad(&self, x: &Self::State) -> (DVector<f64>, DMatrix<f64>);
    /// `x ⊕ dx`.
    fn retract(&self, x: &Self::State, dx: &DVector<f64>) -> Self::State;
    /// `other ⊖ base`, tangent at `base`.
    fn difference(&self, base: &Self::State, other: &Self::State) -> DVector<f64>;
    /// Control used to build cold-start trajectories.
    fn nominal_control(&self) -> DVector<f64> {
        DVector::zeros(self.nu())
    }

    /// Dynamics Jacobians `(fx, fu)` in tangent coordinates; the default uses
    /// forward differences through `step`/`retract`/`difference`.
    fn step_diff(&self, k: usize, x: &Self::State, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let h = 1e-6;
        let nx = self.nx();
        let nu = self.nu();
        let nominal = self.step(k, x, u);
        let mut fx = DMatrix::zeros(nx, nx);
        let mut dx = DVector::zeros(nx);
        for i in 0..nx {
            dx[i] = h;
            let pert = self.step(k, &self.retract(x, &dx), u);
            fx.set_column(i, &(self.difference(&nominal, &pert) / h));
            dx[i] = 0.0;
        }
        let mut fu = DMatrix::zeros(nx, nu);
        let mut du = u.clone();
        for i in 0..nu {
            du[i] += h;
            let pert = self.step(k, x, &du);
            fu.set_column(i, &(self.difference(&nominal, &pert) / h));
            du[i] = u[i];
        }
        (fx, fu)
    }
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop when the expected improvement of a full step falls below this.
    pub tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub gap_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iters: 100,
            tol: 1e-9,
            reg_init: 1e-9,
            reg_min: 1e-9,
            reg_max: 1e9,
            gap_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolverResult<S> {
    pub xs: Vec<S>,
    pub us: Vec<DVector<f64>>,
    pub cost: f64,
    /// Cost after the initial rollout and after each accepted step.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
    /// Backward-pass sweeps executed.
    pub iterations: usize,
    /// Max tangent-norm of the remaining shooting gaps.
    pub gap_norm: f64,
}

pub struct FddpSolver {
    pub opts: SolverOptions,
}

impl FddpSolver {
    pub fn new(opts: SolverOptions) -> Self {
        FddpSolver { opts }
    }

    pub fn solve<P: OcpDef>(
        &self,
        problem: &P,
        x_init: Option<Vec<P::State>>,
        u_init: Option<Vec<DVector<f64>>>,
    ) -> SolverResult<P::State> {
        let n = problem.horizon();
        assert!(n >= 1, "shooting problem needs at least one node");
        let (lo, hi) = problem.control_bounds();
        let squash = Squash::new(lo, hi);

        let us: Vec<DVector<f64>> = match u_init {
            Some(us) => {
                assert_eq!(us.len(), n, "warm-start U length");
                us
            }
            None => vec![problem.nominal_control(); n],
        };
        let mut ws: Vec<DVector<f64>> = us.iter().map(|u| squash.inverse(u)).collect();
        let mut xs: Vec<P::State> = match x_init {
            Some(mut xs) => {
                assert_eq!(xs.len(), n + 1, "warm-start X length");
                xs[0] = problem.initial_state();
                xs
            }
            None => {
                let mut xs = Vec::with_capacity(n + 1);
                xs.push(problem.initial_state());
                for k in 0..n {
                    let u = squash.apply(&ws[k]);
                    let next = problem.step(k, &xs[k], &u);
                    xs.push(next);
                }
                xs
            }
        };

        let mut gaps: Vec<DVector<f64>> = vec![DVector::zeros(problem.nx()); n + 1];
        for k in 0..n {
            let u = squash.apply(&ws[k]);
            let pred = problem.step(k, &xs[k], &u);
            gaps[k + 1] = problem.difference(&xs[k + 1], &pred);
        }
        let mut gap_norm = max_gap(&gaps);
        let mut cost = self.total_cost(problem, &xs, &ws, &squash);
        let mut cost_trace = vec![cost];

        let mut mu = self.opts.reg_init;
        let mut converged = false;
        let mut iterations = 0;
        let alphas: Vec<f64> = (0..=10).map(|i| 0.5f64.powi(i)).collect();

        while iterations < self.opts.max_iters {
            iterations += 1;

            // Node derivatives in w-space.
            let mut dyn_x = Vec::with_capacity(n);
            let mut dyn_w = Vec::with_capacity(n);
            let mut quads = Vec::with_capacity(n);
            for k in 0..n {
                let u = squash.apply(&ws[k]);
                let du_dw = squash.derivative(&ws[k]);
                let (fx, fu) = problem.step_diff(k, &xs[k], &u);
                let mut fw = fu;
                scale_columns(&mut fw, &du_dw);
                let mut q = problem.running_quad(k, &xs[k], &u);
                q.lu = q.lu.component_mul(&du_dw);
                scale_columns(&mut q.lxu, &du_dw);
                scale_rows_cols(&mut q.luu, &du_dw);
                dyn_x.push(fx);
                dyn_w.push(fw);
                quads.push(q);
            }

            // Backward pass, retried with stronger regularization on failure.
            let backward = loop {
                match self.backward_pass(problem, &xs, &gaps, &dyn_x, &dyn_w, &quads, mu) {
                    Some(b) => break b,
                    None => {
                        mu *= 10.0;
                        if mu > self.opts.reg_max {
                            return SolverResult {
                                xs,
                                us: ws.iter().map(|w| squash.apply(w)).collect(),
                                cost,
                                cost_trace,
                                converged: false,
                                iterations,
                                gap_norm,
                            };
                        }
                    }
                }
            };
            let (kff, kfb, d1, d2) = backward;

            let expected_full = -(d1 + 0.5 * d2);
            if gap_norm < self.opts.gap_tol && expected_full < self.opts.tol {
                converged = true;
                break;
            }

            // Line search.
            let mut accepted = false;
            for &alpha in &alphas {
                let mut xs_new = Vec::with_capacity(n + 1);
                let mut ws_new = Vec::with_capacity(n);
                let mut gaps_new = vec![DVector::zeros(problem.nx()); n + 1];
                xs_new.push(problem.initial_state());
                let mut cost_new = 0.0;
                let mut finite = true;
                for k in 0..n {
                    let dx = problem.difference(&xs[k], &xs_new[k]);
                    let w = &ws[k] + &kff[k] * alpha + &kfb[k] * &dx;
                    let u = squash.apply(&w);
                    let c = problem.running_cost(k, &xs_new[k], &u);
                    if !c.is_finite() {
                        finite = false;
                        break;
                    }
                    cost_new += c;
                    let pred = problem.step(k, &xs_new[k], &u);
                    let retained = &gaps[k + 1] * (1.0 - alpha);
                    let next = problem.retract(&pred, &(-&retained));
                    gaps_new[k + 1] = retained;
                    ws_new.push(w);
                    xs_new.push(next);
                }
                if finite {
                    let tc = problem.terminal_cost(&xs_new[n]);
                    finite = tc.is_finite();
                    cost_new += tc;
                }
                if !finite {
                    continue;
                }
                let expected = -(alpha * d1 + 0.5 * alpha * alpha * d2);
                if cost - cost_new >= 0.1 * expected.max(0.0) {
                    xs = xs_new;
                    ws = ws_new;
                    gaps = gaps_new;
                    gap_norm = max_gap(&gaps);
                    cost = cost_new;
                    cost_trace.push(cost);
                    mu = (mu * 0.5).max(self.opts.reg_min);
                    accepted = true;
                    break;
                }
            }

            if !accepted {
                mu *= 10.0;
                if mu > self.opts.reg_max {
                    break;
                }
            }
        }

        SolverResult {
            us: ws.iter().map(|w| squash.apply(w)).collect(),
            xs,
            cost,
            cost_trace,
            converged,
            iterations,
            gap_norm,
        }
    }

    fn total_cost<P: OcpDef>(
        &self,
        problem: &P,
        xs: &[P::State],
        ws: &[DVector<f64>],
        squash: &Squash,
    ) -> f64 {
        let n = problem.horizon();
        let mut cost = 0.0;
        for k in 0..n {
            cost += problem.running_cost(k, &xs[k], &squash.apply(&ws[k]));
        }
        cost + problem.terminal_cost(&xs[n])
    }

    /// Returns feed-forward terms, feedback gains and the expected-improvement
    /// coefficients `(d1, d2)`; `None` when the Quu factorization fails.
    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    fn backward_pass<P: OcpDef>(
        &self,
        problem: &P,
        xs: &[P::State],
        gaps: &[DVector<f64>],
        dyn_x: &[DMatrix<f64>],
        dyn_w: &[DMatrix<f64>],
        quads: &[CostQuad],
        mu: f64,
    ) -> Option<(Vec<DVector<f64>>, Vec<DMatrix<f64>>, f64, f64)> {
        let n = problem.horizon();
        let nu = problem.nu();
        let (mut vx, mut vxx) = problem.terminal_quad(&xs[n]);
        let mut kff = vec![DVector::zeros(nu); n];
        let mut kfb = vec![DMatrix::zeros(nu, problem.nx()); n];
        let (mut d1, mut d2) = (0.0, 0.0);
        for k in (0..n).rev() {
            let fx = &dyn_x[k];
            let fw = &dyn_w[k];
            let q = &quads[k];
            let vx_gap = &vx + &vxx * &gaps[k + 1];
            let vxx_reg = &vxx + DMatrix::from_diagonal_element(vxx.nrows(), vxx.ncols(), mu);
            let qx = &q.lx + fx.transpose() * &vx_gap;
            let qw = &q.lu + fw.transpose() * &vx_gap;
            let qxx = &q.lxx + fx.transpose() * &vxx * fx;
            let qwx = q.lxu.transpose() + fw.transpose() * &vxx_reg * fx;
            let mut qww = &q.luu + fw.transpose() * &vxx_reg * fw;
            for i in 0..nu {
                qww[(i, i)] += mu;
            }
            let chol = qww.clone().cholesky()?;
            let kf = -chol.solve(&qw);
            let kb = -chol.solve(&qwx);
            d1 += kf.dot(&qw);
            d2 += (qww.clone() * &kf).dot(&kf);
            vx = &qx + kb.transpose() * (&qww * &kf + &qw) + qwx.transpose() * &kf;
            vxx = &qxx + kb.transpose() * &qww * &kb + kb.transpose() * &qwx + qwx.transpose() * &kb;
            vxx = (&vxx + vxx.transpose()) * 0.5;
            kff[k] = kf;
            kfb[k] = kb;
        }
        Some((kff, kfb, d1, d2))
    }
}

fn max_gap(gaps: &[DVector<f64>]) -> f64 {
    gaps.iter().map(|g| g.norm()).fold(0.0, f64::max)
}

fn scale_columns(m: &mut DMatrix<f64>, d: &DVector<f64>) {
    for (i, mut col) in m.column_iter_mut().enumerate() {
        col *= d[i];
    }
}

fn scale_rows_cols(m: &mut DMatrix<f64>, d: &DVector<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            m[(i, j)] *= d[i] * d[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Robot shooting problem
// ---------------------------------------------------------------------------

/// One discretized OCP node: integration step and running cost.
#[derive(Clone, Debug)]
pub struct ProblemNode {
    pub dt: f64,
    pub cost: NodeCost,
}

/// Discretized whole-body OCP over the robot dynamics.
pub struct ShootingProblem<'m> {
    pub model: &'m RobotModel,
    pub x0: State,
    pub nodes: Vec<ProblemNode>,
    pub terminal: NodeCost,
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl<'m> ShootingProblem<'m> {
    pub fn new(model: &'m RobotModel, x0: State, nodes: Vec<ProblemNode>, terminal: NodeCost) -> Self {
        assert!(!nodes.is_empty(), "OCP needs at least one node");
        assert!(nodes.iter().all(|n| n.dt > 0.0), "node dt must be positive");
        let (lo, hi) = model.control_bounds();
        ShootingProblem { model, x0, nodes, terminal, lo, hi }
    }
}

impl OcpDef for ShootingProblem<'_> {
    type State = State;

    fn horizon(&self) -> usize {
        self.nodes.len()
    }

    fn nx(&self) -> usize {
        self.model.nx()
    }

    fn nu(&self) -> usize {
        self.model.nu()
    }

    fn initial_state(&self) -> State {
        self.x0.clone()
    }

    fn control_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn step(&self, k: usize, x: &State, u: &DVector<f64>) -> State {
        let control = Control::from_vector(self.model.n_props(), u);
        integrate(self.model, x, &control, self.nodes[k].dt, 1)
    }

    fn running_cost(&self, k: usize, x: &State, u: &DVector<f64>) -> f64 {
        self.nodes[k].cost.eval(self.model, x, u)
    }

    fn terminal_cost(&self, x: &State) -> f64 {
        self.terminal.eval(self.model, x, &DVector::zeros(self.nu()))
    }

    fn running_quad(&self, k: usize, x: &State, u: &DVector<f64>) -> CostQuad {
        self.nodes[k].cost.quadratic(self.model, x, u)
    }

    fn terminal_quad(&self, x: &State) -> (DVector<f64>, DMatrix<f64>) {
        let q = self.terminal.quadratic(self.model, x, &DVector::zeros(self.nu()));
        (q.lx, q.lxx)
    }

    fn retract(&self, x: &State, dx: &DVector<f64>) -> State {
        x.boxplus(dx)
    }

    fn difference(&self, base: &State, other: &State) -> DVector<f64> {
        other.boxminus(base)
    }

    fn nominal_control(&self) -> DVector<f64> {
        Control::hover(self.model).as_vector()
    }
}
