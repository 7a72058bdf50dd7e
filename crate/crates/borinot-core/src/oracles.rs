//! Independent numerical oracles used by the test suites.
//!
//! Everything here deliberately avoids the algorithms used on the main code
//! paths so the two sides can cross-validate:
//!
//! - SE(3) exponential by truncated matrix power series (vs. the closed-form
//!   Rodrigues/V-matrix construction),
//! - forward dynamics from an explicit world-frame mass matrix and bias built
//!   out of geometric Jacobians (vs. the articulated-body recursion),
//! - LQR by Riccati recursion (vs. the DDP solver).
//!
//! Enabled by the `oracles` feature, which only the test targets turn on.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::dynamics::{Control, State};
use crate::lie::skew;
use crate::model::RobotModel;
use crate::{Pose, Rotation, Tangent6};

/// SE(3) exponential as a truncated power series of the 4x4 twist matrix.
pub fn se3_exp_series(tau: &Tangent6) -> Pose {
    let mut hat = Matrix4::<f64>::zeros();
    hat.fixed_view_mut::<3, 3>(0, 0).copy_from(&skew(&tau.angular));
    hat.fixed_view_mut::<3, 1>(0, 3).copy_from(&tau.linear);
    let mut sum = Matrix4::identity();
    let mut term = Matrix4::identity();
    for k in 1..40 {
        term = term * hat / k as f64;
        sum += term;
    }
    let r = sum.fixed_view::<3, 3>(0, 0).into_owned();
    let t: Vector3<f64> = sum.fixed_view::<3, 1>(0, 3).into_owned();
    Pose::new(rotation_from_matrix(&r), t)
}

/// Rotation from a (numerically) orthonormal matrix via the robust
/// Shepperd-style quaternion extraction.
pub fn rotation_from_matrix(m: &Matrix3<f64>) -> Rotation {
    let tr = m.trace();
    let (w, x, y, z);
    if tr > 0.0 {
        let s = (tr + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (m[(2, 1)] - m[(1, 2)]) / s;
        y = (m[(0, 2)] - m[(2, 0)]) / s;
        z = (m[(1, 0)] - m[(0, 1)]) / s;
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(2, 1)] - m[(1, 2)]) / s;
        x = 0.25 * s;
        y = (m[(0, 1)] + m[(1, 0)]) / s;
        z = (m[(0, 2)] + m[(2, 0)]) / s;
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        w = (m[(0, 2)] - m[(2, 0)]) / s;
        x = (m[(0, 1)] + m[(1, 0)]) / s;
        y = 0.25 * s;
        z = (m[(1, 2)] + m[(2, 1)]) / s;
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        w = (m[(1, 0)] - m[(0, 1)]) / s;
        x = (m[(0, 2)] + m[(2, 0)]) / s;
        y = (m[(1, 2)] + m[(2, 1)]) / s;
        z = 0.25 * s;
    }
    Rotation::from_quaternion(w, x, y, z)
}

// ---------------------------------------------------------------------------
// Explicit mass-matrix dynamics
// ---------------------------------------------------------------------------

/// World-frame spatial quantities for one link.
struct WorldLink {
    pose: Pose,
    /// Spatial velocity in world coordinates about the world origin.
    vel: Vector6<f64>,
    /// 6x6 spatial inertia in world coordinates about the world origin.
    inertia: Matrix6<f64>,
    /// Geometric Jacobian: generalized velocity -> world spatial velocity.
    jacobian: DMatrix<f64>,
}

fn world_links(model: &RobotModel, state: &State) -> Vec<WorldLink> {
    let nv = model.nv();
    let nb = model.links.len();

    // World poses and per-link ancestor joint chains.
    let mut poses = vec![Pose::identity(); nb];
    poses[0] = state.pose;
    let mut parent_joint = vec![usize::MAX; nb];
    for (ji, j) in model.joints.iter().enumerate() {
        let local = j.origin
            * Pose::new(Rotation::from_axis_angle(&j.axis, state.joints[ji]), Vector3::zeros());
        poses[j.child] = poses[j.parent] * local;
        parent_joint[j.child] = ji;
    }

    // Base block of every Jacobian: body twist (ang, lin) to world spatial.
    let rb = state.pose.rotation.matrix();
    let tb = state.pose.translation;
    let mut base_block = Matrix6::<f64>::zeros();
    base_block.fixed_view_mut::<3, 3>(0, 0).copy_from(&rb);
    base_block.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&tb) * rb));
    base_block.fixed_view_mut::<3, 3>(3, 3).copy_from(&rb);

    let mut out = Vec::with_capacity(nb);
    for k in 0..nb {
        let mut jac = DMatrix::<f64>::zeros(6, nv);
        jac.view_mut((0, 0), (6, 6)).copy_from(&base_block);
        // Walk the chain from link k up to the base.
        let mut cur = k;
        while parent_joint[cur] != usize::MAX {
            let ji = parent_joint[cur];
            let j = &model.joints[ji];
            let axis_w = poses[j.child].rotation * j.axis;
            let point_w = poses[j.child].translation;
            let col_lin = point_w.cross(&axis_w);
            for r in 0..3 {
                jac[(r, 6 + ji)] = axis_w[r];
                jac[(r + 3, 6 + ji)] = col_lin[r];
            }
            cur = j.parent;
        }

        // Spatial inertia about the world origin.
        let l = &model.links[k];
        let com_w = poses[k].transform_point(&l.com);
        let r = poses[k].rotation.matrix();
        let i_com_w = r * l.inertia * r.transpose();
        let cx = skew(&com_w);
        let io = i_com_w + (Matrix3::identity() * com_w.dot(&com_w) - com_w * com_w.transpose()) * l.mass;
        let hx = cx * l.mass;
        let mut inertia = Matrix6::zeros();
        inertia.fixed_view_mut::<3, 3>(0, 0).copy_from(&io);
        inertia.fixed_view_mut::<3, 3>(0, 3).copy_from(&hx);
        inertia.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-hx));
        inertia
            .fixed_view_mut::<3, 3>(3, 3)
            .copy_from(&(Matrix3::identity() * l.mass));

        let mut nu = DVector::zeros(nv);
        nu.rows_mut(0, 3).copy_from(&state.twist.angular);
        nu.rows_mut(3, 3).copy_from(&state.twist.linear);
        nu.rows_mut(6, model.n_joints()).copy_from(&state.rates);
        let vel6 = &jac * nu;

        out.push(WorldLink {
            pose: poses[k],
            vel: Vector6::from_column_slice(vel6.as_slice()),
            inertia,
            jacobian: jac,
        });
    }
    out
}

fn motion_cross6(v: &Vector6<f64>, m: &Vector6<f64>) -> Vector6<f64> {
    let (va, vl) = (v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned());
    let (ma, ml) = (m.fixed_rows::<3>(0).into_owned(), m.fixed_rows::<3>(3).into_owned());
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&va.cross(&ma));
    out.fixed_rows_mut::<3>(3).copy_from(&(va.cross(&ml) + vl.cross(&ma)));
    out
}

fn force_cross6(v: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (va, vl) = (v.fixed_rows::<3>(0).into_owned(), v.fixed_rows::<3>(3).into_owned());
    let (fa, fl) = (f.fixed_rows::<3>(0).into_owned(), f.fixed_rows::<3>(3).into_owned());
    let mut out = Vector6::zeros();
    out.fixed_rows_mut::<3>(0).copy_from(&(va.cross(&fa) + vl.cross(&fl)));
    out.fixed_rows_mut::<3>(3).copy_from(&(va.cross(&fl)));
    out
}

/// Joint-space mass matrix built explicitly as `Σ Jᵀ I J` in world frame.
pub fn explicit_mass_matrix(model: &RobotModel, state: &State) -> DMatrix<f64> {
    let links = world_links(model, state);
    let nv = model.nv();
    let mut m = DMatrix::zeros(nv, nv);
    for l in &links {
        m += l.jacobian.transpose() * l.inertia * &l.jacobian;
    }
    m
}

/// Forward dynamics from the explicit mass matrix and a Newton-Euler bias,
/// all in world coordinates. Returns the generalized acceleration in the same
/// ordering as the main path: base angular, base linear, joint accelerations.
pub fn explicit_forward_dynamics(
    model: &RobotModel,
    state: &State,
    control: &Control,
    gravity: f64,
) -> (Tangent6, DVector<f64>) {
    let links = world_links(model, state);
    let nv = model.nv();
    let nj = model.n_joints();

    // Bias spatial accelerations (q̈ = 0): zero at the base, then each joint
    // adds the derivative of its moving axis.
    let mut bias_acc = vec![Vector6::<f64>::zeros(); model.links.len()];
    for (ji, j) in model.joints.iter().enumerate() {
        let axis_w = links[j.child].pose.rotation * j.axis;
        let point_w = links[j.child].pose.translation;
        let mut s = Vector6::zeros();
        s.fixed_rows_mut::<3>(0).copy_from(&axis_w);
        s.fixed_rows_mut::<3>(3).copy_from(&point_w.cross(&axis_w));
        let sdot = motion_cross6(&links[j.child].vel, &s);
        bias_acc[j.child] = bias_acc[j.parent] + sdot * state.rates[ji];
    }

    let g_vec = Vector3::new(0.0, 0.0, -gravity);
    let mut h = DVector::<f64>::zeros(nv);
    for (k, l) in links.iter().enumerate() {
        let mass = model.links[k].mass;
        let com_w = l.pose.transform_point(&model.links[k].com);
        let fg = g_vec * mass;
        let mut grav = Vector6::zeros();
        grav.fixed_rows_mut::<3>(0).copy_from(&com_w.cross(&fg));
        grav.fixed_rows_mut::<3>(3).copy_from(&fg);
        let f = l.inertia * bias_acc[k] + force_cross6(&l.vel, &(l.inertia * l.vel)) - grav;
        h += l.jacobian.transpose() * f;
    }

    // Applied generalized forces: propeller wrench on the base plus direct
    // joint torques.
    let mut q_act = DVector::<f64>::zeros(nv);
    let z = Vector3::z();
    let mut force_b = Vector3::zeros();
    let mut torque_b = Vector3::zeros();
    for (i, p) in model.propellers.iter().enumerate() {
        let t = control.thrusts[i];
        force_b += z * t;
        torque_b += (p.position.cross(&z) + z * (p.spin * p.torque_to_thrust)) * t;
    }
    let rb = state.pose.rotation;
    let f_w = rb * force_b;
    let n_w = rb * torque_b + state.pose.translation.cross(&f_w);
    let mut wrench_w = Vector6::zeros();
    wrench_w.fixed_rows_mut::<3>(0).copy_from(&n_w);
    wrench_w.fixed_rows_mut::<3>(3).copy_from(&f_w);
    q_act += links[0].jacobian.transpose() * wrench_w;
    for ji in 0..nj {
        q_act[6 + ji] += control.torques[ji];
    }

    let m = explicit_mass_matrix(model, state);
    let acc = m
        .cholesky()
        .expect("explicit mass matrix must be SPD")
        .solve(&(q_act - h));
    (
        Tangent6::new(
            Vector3::new(acc[3], acc[4], acc[5]),
            Vector3::new(acc[0], acc[1], acc[2]),
        ),
        acc.rows(6, nj).into_owned(),
    )
}

// ---------------------------------------------------------------------------
// Riccati LQR
// ---------------------------------------------------------------------------

/// Finite-horizon discrete LQR solved by backward Riccati recursion.
///
/// Dynamics `x' = A x + B u`, cost `½ Σ (xᵀQx + uᵀRu) + ½ x_NᵀQf x_N`.
/// Returns the optimal control sequence from `x0`.
pub fn riccati_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> Vec<DVector<f64>> {
    let mut p = qf.clone();
    let mut gains = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let k = s
            .cholesky()
            .expect("LQR: R + BᵀPB must be SPD")
            .solve(&(&btp * a));
        p = q + a.transpose() * &p * (a - b * &k);
        p = (&p + p.transpose()) * 0.5;
        gains.push(k);
    }
    gains.reverse();
    let mut x = x0.clone();
    let mut us = Vec::with_capacity(horizon);
    for k in &gains {
        let u = -(k * &x);
        x = a * &x + b * &u;
        us.push(u);
    }
    us
}

/// Linear-quadratic shooting problem on a vector state, for benchmarking the
/// DDP solver against the Riccati recursion.
pub struct LinearQuadraticProblem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub horizon: usize,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl crate::solver::OcpDef for LinearQuadraticProblem {
    type State = DVector<f64>;

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn nx(&self) -> usize {
        self.a.nrows()
    }

    fn nu(&self) -> usize {
        self.b.ncols()
    }

    fn initial_state(&self) -> DVector<f64> {
        self.x0.clone()
    }

    fn control_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn running_cost(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        0.5 * (x.dot(&(&self.q * x)) + u.dot(&(&self.r * u)))
    }

    fn terminal_cost(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.qf * x))
    }

    fn running_quad(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> crate::cost::CostQuad {
        crate::cost::CostQuad {
            lx: &self.q * x,
            lu: &self.r * u,
            lxx: self.q.clone(),
            lxu: DMatrix::zeros(self.nx(), self.nu()),
            luu: self.r.clone(),
        }
    }

    fn terminal_quad(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.qf * x, self.qf.clone())
    }

    fn retract(&self, x: &DVector<f64>, dx: &DVector<f64>) -> DVector<f64> {
        x + dx
    }

    fn difference(&self, base: &DVector<f64>, other: &DVector<f64>) -> DVector<f64> {
        other - base
    }
}

/// Central finite-difference gradient of a scalar function.
pub fn numeric_gradient(
    f: impl Fn(&DVector<f64>) -> f64,
    at: &DVector<f64>,
    step: f64,
) -> DVector<f64> {
    let mut g = DVector::zeros(at.len());
    for i in 0..at.len() {
        let mut plus = at.clone();
        plus[i] += step;
        let mut minus = at.clone();
        minus[i] -= step;
        g[i] = (f(&plus) - f(&minus)) / (2.0 * step);
    }
    g
}
