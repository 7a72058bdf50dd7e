//! Whole-body forward dynamics and the fixed-step integrator.
//!
//! The floating base plus revolute-joint tree is integrated with a
//! velocity-first Euler step: velocities advance with the articulated-body
//! acceleration, poses advance along the average of the old and new twist so
//! constant-acceleration motion is reproduced exactly.
//!
//! Internal spatial algebra follows Featherstone's body-frame recursion with
//! `(angular, linear)` component pairs; the public types keep the crate-wide
//! `[linear; angular]` tangent ordering.

use nalgebra::{DVector, Matrix3, Matrix6, Vector3, Vector6};

use crate::lie::skew;
use crate::model::{RobotModel, GRAVITY};
use crate::{Pose, Tangent6};

/// Robot configuration and velocity: base pose on SE(3), joint angles, body
/// twist and joint rates.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub pose: Pose,
    pub joints: DVector<f64>,
    /// Base twist in the body frame (m/s, rad/s).
    pub twist: Tangent6,
    pub rates: DVector<f64>,
}

impl State {
    /// Resting state at the given base pose and joint configuration.
    pub fn at_rest(pose: Pose, joints: DVector<f64>) -> Self {
        let n = joints.len();
        Self {
            pose,
            joints,
            twist: Tangent6::zero(),
            rates: DVector::zeros(n),
        }
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Tangent dimension: 12 + 2 n_joints.
    pub fn nx(&self) -> usize {
        12 + 2 * self.n_joints()
    }

    /// Retract a tangent increment `[pose(6); joints(n); twist(6); rates(n)]`.
    pub fn boxplus(&self, dx: &DVector<f64>) -> Self {
        let n = self.n_joints();
        debug_assert_eq!(dx.len(), self.nx());
        let dpose = Tangent6::from_vector(&Vector6::from_column_slice(&dx.as_slice()[0..6]));
        let dtwist =
            Tangent6::from_vector(&Vector6::from_column_slice(&dx.as_slice()[6 + n..12 + n]));
        Self {
            pose: self.pose.boxplus(&dpose),
            joints: &self.joints + dx.rows(6, n),
            twist: self.twist + dtwist,
            rates: &self.rates + dx.rows(12 + n, n),
        }
    }

    /// Tangent difference `self ⊖ other`, the inverse of [`State::boxplus`].
    pub fn boxminus(&self, other: &Self) -> DVector<f64> {
        let n = self.n_joints();
        let mut dx = DVector::zeros(self.nx());
        let dpose = self.pose.boxminus(&other.pose);
        dx.rows_mut(0, 6).copy_from(&dpose.as_vector());
        dx.rows_mut(6, n).copy_from(&(&self.joints - &other.joints));
        dx.rows_mut(6 + n, 6)
            .copy_from(&(self.twist - other.twist).as_vector());
        dx.rows_mut(12 + n, n)
            .copy_from(&(&self.rates - &other.rates));
        dx
    }
}

/// Propeller thrusts (N, >= 0) and joint torques (N·m).
#[derive(Clone, Debug, PartialEq)]
pub struct Control {
    pub thrusts: DVector<f64>,
    pub torques: DVector<f64>,
}

impl Control {
    pub fn zeros(n_props: usize, n_joints: usize) -> Self {
        Self {
            thrusts: DVector::zeros(n_props),
            torques: DVector::zeros(n_joints),
        }
    }

    /// Gravity-compensating hover: allocation-consistent thrusts, no torques.
    pub fn hover(model: &RobotModel) -> Self {
        Self {
            thrusts: model.hover_thrusts(),
            torques: DVector::zeros(model.n_joints()),
        }
    }

    pub fn from_vector(n_props: usize, u: &DVector<f64>) -> Self {
        Self {
            thrusts: u.rows(0, n_props).into_owned(),
            torques: u.rows(n_props, u.len() - n_props).into_owned(),
        }
    }

    pub fn as_vector(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.thrusts.len() + self.torques.len());
        u.rows_mut(0, self.thrusts.len()).copy_from(&self.thrusts);
        u.rows_mut(self.thrusts.len(), self.torques.len())
            .copy_from(&self.torques);
        u
    }
}

/// Output of the forward dynamics: body-frame derivative of the base twist
/// plus joint accelerations.
#[derive(Clone, Debug)]
pub struct Acceleration {
    pub base: Tangent6,
    pub joints: DVector<f64>,
}

/// Point force on a link, both expressed in world coordinates.
#[derive(Clone, Copy, Debug)]
pub struct ExternalForce {
    pub link: usize,
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

// ---------------------------------------------------------------------------
// Spatial algebra (internal, (angular, linear) ordering)
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct Spatial {
    ang: Vector3<f64>,
    lin: Vector3<f64>,
}

impl Spatial {
    fn zero() -> Self {
        Spatial {
            ang: Vector3::zeros(),
            lin: Vector3::zeros(),
        }
    }

    fn as_vector6(&self) -> Vector6<f64> {
        let mut v = Vector6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.ang);
        v.fixed_rows_mut::<3>(3).copy_from(&self.lin);
        v
    }

    fn from_vector6(v: &Vector6<f64>) -> Self {
        Spatial {
            ang: v.fixed_rows::<3>(0).into(),
            lin: v.fixed_rows::<3>(3).into(),
        }
    }
}

impl std::ops::Add for Spatial {
    type Output = Spatial;
    fn add(self, o: Spatial) -> Spatial {
        Spatial {
            ang: self.ang + o.ang,
            lin: self.lin + o.lin,
        }
    }
}

impl std::ops::Sub for Spatial {
    type Output = Spatial;
    fn sub(self, o: Spatial) -> Spatial {
        Spatial {
            ang: self.ang - o.ang,
            lin: self.lin - o.lin,
        }
    }
}

/// Motion vector from parent coordinates to child coordinates, `x` the pose
/// of the child frame in the parent frame.
fn motion_to_child(x: &Pose, m: &Spatial) -> Spatial {
    let rinv = x.rotation.inverse();
    Spatial {
        ang: rinv * m.ang,
        lin: rinv * (m.lin + m.ang.cross(&x.translation)),
    }
}

/// Force vector from child coordinates to parent coordinates.
fn force_to_parent(x: &Pose, f: &Spatial) -> Spatial {
    let fw = x.rotation * f.lin;
    Spatial {
        ang: x.rotation * f.ang + x.translation.cross(&fw),
        lin: fw,
    }
}

/// Motion cross product `v × m`.
fn motion_cross(v: &Spatial, m: &Spatial) -> Spatial {
    Spatial {
        ang: v.ang.cross(&m.ang),
        lin: v.ang.cross(&m.lin) + v.lin.cross(&m.ang),
    }
}

/// Force cross product `v ×* f`.
fn force_cross(v: &Spatial, f: &Spatial) -> Spatial {
    Spatial {
        ang: v.ang.cross(&f.ang) + v.lin.cross(&f.lin),
        lin: v.ang.cross(&f.lin),
    }
}

/// 6x6 spatial inertia of a link about its frame origin.
fn spatial_inertia(mass: f64, com: &Vector3<f64>, inertia_com: &Matrix3<f64>) -> Matrix6<f64> {
    let h = com * mass;
    let hx = skew(&h);
    let io = inertia_com + (Matrix3::identity() * com.dot(com) - com * com.transpose()) * mass;
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&io);
    m.fixed_view_mut::<3, 3>(0, 3).copy_from(&hx);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-hx));
    m.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * mass));
    m
}

/// 6x6 motion transform, child coordinates to parent coordinates.
fn motion_matrix_to_parent(x: &Pose) -> Matrix6<f64> {
    let r = x.rotation.matrix();
    let tx_r = skew(&x.translation) * r;
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&tx_r);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    m
}

/// Transform a spatial inertia from child to parent coordinates.
fn inertia_to_parent(x: &Pose, inertia: &Matrix6<f64>) -> Matrix6<f64> {
    // I_p = X_m(c->p)^-T I_c X_m(c->p)^-1, with X_f(c->p) = X_m(p->c)^T.
    let xm = motion_matrix_to_parent(x);
    let xm_inv = xm
        .try_inverse()
        .expect("motion transform is always invertible");
    xm_inv.transpose() * inertia * xm_inv
}

/// World poses of every link at the given configuration.
pub fn link_poses(model: &RobotModel, state: &State) -> Vec<Pose> {
    let mut poses = vec![Pose::identity(); model.links.len()];
    poses[0] = state.pose;
    for (ji, j) in model.joints.iter().enumerate() {
        let x = j.origin * Pose::new(crate::Rotation::from_axis_angle(&j.axis, state.joints[ji]), Vector3::zeros());
        poses[j.child] = poses[j.parent] * x;
    }
    poses
}

/// Spatial velocity of every link in its own frame.
fn link_velocities(model: &RobotModel, state: &State, placements: &[Pose]) -> Vec<Spatial> {
    let mut vels = vec![Spatial::zero(); model.links.len()];
    vels[0] = Spatial {
        ang: state.twist.angular,
        lin: state.twist.linear,
    };
    for (ji, j) in model.joints.iter().enumerate() {
        let mut v = motion_to_child(&placements[ji], &vels[j.parent]);
        v.ang += j.axis * state.rates[ji];
        vels[j.child] = v;
    }
    vels
}

/// Pose of each joint's child frame in its parent frame at the configuration.
fn joint_placements(model: &RobotModel, state: &State) -> Vec<Pose> {
    model
        .joints
        .iter()
        .enumerate()
        .map(|(ji, j)| {
            j.origin
                * Pose::new(
                    crate::Rotation::from_axis_angle(&j.axis, state.joints[ji]),
                    Vector3::zeros(),
                )
        })
        .collect()
}

/// Base wrench (about the base origin, base coordinates) from the propellers.
fn thrust_wrench(model: &RobotModel, thrusts: &DVector<f64>) -> Spatial {
    let z = Vector3::z();
    let mut w = Spatial::zero();
    for (i, p) in model.propellers.iter().enumerate() {
        let t = thrusts[i];
        w.lin += z * t;
        w.ang += (p.position.cross(&z) + z * (p.spin * p.torque_to_thrust)) * t;
    }
    w
}

/// Articulated-body forward dynamics with explicit gravity and external
/// point forces. Solves `M(q)·a = τ(u) − h(q,v)` without forming `M`.
pub fn forward_dynamics_with(
    model: &RobotModel,
    state: &State,
    control: &Control,
    external: &[ExternalForce],
    gravity: f64,
) -> Acceleration {
    let nb = model.links.len();
    let placements = joint_placements(model, state);
    let world = {
        let mut poses = vec![Pose::identity(); nb];
        poses[0] = state.pose;
        for (ji, j) in model.joints.iter().enumerate() {
            poses[j.child] = poses[j.parent] * placements[ji];
        }
        poses
    };
    let vels = link_velocities(model, state, &placements);

    // Per-link articulated inertia and bias force.
    let mut inertia_a: Vec<Matrix6<f64>> = model
        .links
        .iter()
        .map(|l| spatial_inertia(l.mass, &l.com, &l.inertia))
        .collect();
    let mut bias: Vec<Spatial> = Vec::with_capacity(nb);
    let g_world = Vector3::new(0.0, 0.0, -gravity);
    for k in 0..nb {
        let momentum = Spatial::from_vector6(&(inertia_a[k] * vels[k].as_vector6()));
        let mut p = force_cross(&vels[k], &momentum);
        // Gravity acts at the CoM, expressed in the link frame.
        let g_local = world[k].rotation.inverse() * g_world;
        let f = g_local * model.links[k].mass;
        p = p - Spatial {
            ang: model.links[k].com.cross(&f),
            lin: f,
        };
        bias.push(p);
    }
    // Propeller wrench on the base.
    bias[0] = bias[0] - thrust_wrench(model, &control.thrusts);
    // External point forces.
    for e in external {
        let rinv = world[e.link].rotation.inverse();
        let f_local = rinv * e.force;
        let arm = rinv * (e.point - world[e.link].translation);
        bias[e.link] = bias[e.link]
            - Spatial {
                ang: arm.cross(&f_local),
                lin: f_local,
            };
    }

    // Joint bias velocities c = v × (S q̇).
    let joint_bias: Vec<Spatial> = model
        .joints
        .iter()
        .enumerate()
        .map(|(ji, j)| {
            let s_qd = Spatial {
                ang: j.axis * state.rates[ji],
                lin: Vector3::zeros(),
            };
            motion_cross(&vels[j.child], &s_qd)
        })
        .collect();

    // Inward pass: fold each child's articulated quantities into its parent.
    let nj = model.joints.len();
    let mut u_joint = vec![0.0; nj];
    let mut d_joint = vec![0.0; nj];
    let mut u_vec = vec![Vector6::<f64>::zeros(); nj];
    for ji in (0..nj).rev() {
        let j = &model.joints[ji];
        let c = j.child;
        let s = Spatial {
            ang: j.axis,
            lin: Vector3::zeros(),
        }
        .as_vector6();
        let u = inertia_a[c] * s;
        let d = s.dot(&u);
        assert!(
            d > 1e-12,
            "degenerate apparent inertia at joint `{}` (D = {d})",
            j.name
        );
        let tau = control.torques[ji];
        let ujnt = tau - s.dot(&bias[c].as_vector6());
        let ia = inertia_a[c] - u * u.transpose() / d;
        let pa_v = bias[c].as_vector6()
            + ia * joint_bias[ji].as_vector6()
            + u * (ujnt / d);
        let pa = Spatial::from_vector6(&pa_v);
        let parent = j.parent;
        inertia_a[parent] += inertia_to_parent(&placements[ji], &ia);
        bias[parent] = bias[parent] + force_to_parent(&placements[ji], &pa);
        u_joint[ji] = ujnt;
        d_joint[ji] = d;
        u_vec[ji] = u;
    }

    // Base acceleration, then outward propagation.
    let chol = inertia_a[0]
        .cholesky()
        .expect("articulated base inertia must be SPD; check link inertias");
    let a0 = -chol.solve(&bias[0].as_vector6());
    let mut accels = vec![Spatial::zero(); nb];
    accels[0] = Spatial::from_vector6(&a0);
    let mut qdd = DVector::zeros(nj);
    for (ji, j) in model.joints.iter().enumerate() {
        let a_in = motion_to_child(&placements[ji], &accels[j.parent]) + joint_bias[ji];
        let qdd_j = (u_joint[ji] - u_vec[ji].dot(&a_in.as_vector6())) / d_joint[ji];
        qdd[ji] = qdd_j;
        accels[j.child] = Spatial {
            ang: a_in.ang + j.axis * qdd_j,
            lin: a_in.lin,
        };
    }

    Acceleration {
        base: Tangent6::new(accels[0].lin, accels[0].ang),
        joints: qdd,
    }
}

/// Forward dynamics under standard gravity with no external contacts.
pub fn forward_dynamics(model: &RobotModel, state: &State, control: &Control) -> Acceleration {
    forward_dynamics_with(model, state, control, &[], GRAVITY)
}

/// One velocity-first Euler step of size `h`. The pose advances along the
/// average of the old and new twist, which reproduces constant-acceleration
/// motion exactly.
pub fn integrate_step(state: &State, acc: &Acceleration, h: f64) -> State {
    let twist_new = state.twist + acc.base.scaled(h);
    let rates_new = &state.rates + &acc.joints * h;
    let mid = (state.twist + twist_new).scaled(0.5 * h);
    State {
        pose: state.pose.boxplus(&mid),
        joints: &state.joints + (&state.rates + &rates_new) * (0.5 * h),
        twist: twist_new,
        rates: rates_new,
    }
}

/// Integrate the dynamics over `dt` holding the control constant, in
/// `substeps` equal steps. Deterministic: identical inputs give bit-identical
/// outputs.
pub fn integrate(
    model: &RobotModel,
    state: &State,
    control: &Control,
    dt: f64,
    substeps: usize,
) -> State {
    assert!(dt > 0.0 && substeps >= 1, "integrate: dt > 0, substeps >= 1");
    let h = dt / substeps as f64;
    let mut s = state.clone();
    for _ in 0..substeps {
        let acc = forward_dynamics(model, &s, control);
        s = integrate_step(&s, &acc, h);
    }
    s
}

/// Roll a control sequence out from `x0`: returns `N+1` states.
pub fn rollout(
    model: &RobotModel,
    x0: &State,
    controls: &[Control],
    dt: f64,
) -> Vec<State> {
    let mut xs = Vec::with_capacity(controls.len() + 1);
    xs.push(x0.clone());
    for u in controls {
        let next = integrate(model, xs.last().unwrap(), u, dt, 1);
        xs.push(next);
    }
    xs
}

// ---------------------------------------------------------------------------
// Derived quantities
// ---------------------------------------------------------------------------

/// World position of the whole-robot center of mass.
pub fn com_position(model: &RobotModel, state: &State) -> Vector3<f64> {
    let poses = link_poses(model, state);
    let mut acc = Vector3::zeros();
    for (k, l) in model.links.iter().enumerate() {
        acc += poses[k].transform_point(&l.com) * l.mass;
    }
    acc / model.total_mass()
}

/// World velocity of the whole-robot center of mass.
pub fn com_velocity(model: &RobotModel, state: &State) -> Vector3<f64> {
    let placements = joint_placements(model, state);
    let poses = link_poses(model, state);
    let vels = link_velocities(model, state, &placements);
    let mut acc = Vector3::zeros();
    for (k, l) in model.links.iter().enumerate() {
        let v_com_local = vels[k].lin + vels[k].ang.cross(&l.com);
        acc += (poses[k].rotation * v_com_local) * l.mass;
    }
    acc / model.total_mass()
}

/// Linear and angular momentum in world coordinates (angular about the world
/// origin).
pub fn momentum(model: &RobotModel, state: &State) -> (Vector3<f64>, Vector3<f64>) {
    let placements = joint_placements(model, state);
    let poses = link_poses(model, state);
    let vels = link_velocities(model, state, &placements);
    let mut lin = Vector3::zeros();
    let mut ang = Vector3::zeros();
    for (k, l) in model.links.iter().enumerate() {
        let inertia = spatial_inertia(l.mass, &l.com, &l.inertia);
        let h = Spatial::from_vector6(&(inertia * vels[k].as_vector6()));
        let hw = force_to_parent(&poses[k], &h);
        ang += hw.ang;
        lin += hw.lin;
    }
    (lin, ang)
}

/// Total kinetic energy, J.
pub fn kinetic_energy(model: &RobotModel, state: &State) -> f64 {
    let placements = joint_placements(model, state);
    let vels = link_velocities(model, state, &placements);
    let mut e = 0.0;
    for (k, l) in model.links.iter().enumerate() {
        let inertia = spatial_inertia(l.mass, &l.com, &l.inertia);
        let v = vels[k].as_vector6();
        e += 0.5 * v.dot(&(inertia * v));
    }
    e
}

/// Gravitational potential energy relative to z = 0, J.
pub fn potential_energy(model: &RobotModel, state: &State) -> f64 {
    let poses = link_poses(model, state);
    model
        .links
        .iter()
        .enumerate()
        .map(|(k, l)| l.mass * GRAVITY * poses[k].transform_point(&l.com).z)
        .sum()
}

/// World position of the end-effector point.
pub fn ee_position(model: &RobotModel, state: &State) -> Vector3<f64> {
    let poses = link_poses(model, state);
    poses[model.end_effector.link].transform_point(&model.end_effector.offset)
}

/// World velocity of the end-effector point.
pub fn ee_velocity(model: &RobotModel, state: &State) -> Vector3<f64> {
    let placements = joint_placements(model, state);
    let poses = link_poses(model, state);
    let vels = link_velocities(model, state, &placements);
    let k = model.end_effector.link;
    let v_local = vels[k].lin + vels[k].ang.cross(&model.end_effector.offset);
    poses[k].rotation * v_local
}

/// End-effector position in the *base* frame at the given joint angles.
pub fn ee_in_base(model: &RobotModel, joints: &DVector<f64>) -> Vector3<f64> {
    let state = State::at_rest(Pose::identity(), joints.clone());
    ee_position(model, &state)
}

/// End-effector position in the base frame and its Jacobian with respect to
/// the joint angles (geometric columns `axis × (ee − joint origin)`).
pub fn ee_base_jacobian(
    model: &RobotModel,
    joints: &DVector<f64>,
) -> (Vector3<f64>, nalgebra::Matrix3xX<f64>) {
    let state = State::at_rest(Pose::identity(), joints.clone());
    let poses = link_poses(model, &state);
    let ee = poses[model.end_effector.link].transform_point(&model.end_effector.offset);
    let mut jac = nalgebra::Matrix3xX::zeros(model.n_joints());
    // Ancestor chain of the end-effector link.
    let mut chain = vec![false; model.joints.len()];
    let mut cur = model.end_effector.link;
    while cur != 0 {
        let ji = model
            .joints
            .iter()
            .position(|j| j.child == cur)
            .expect("tree validated at load");
        chain[ji] = true;
        cur = model.joints[ji].parent;
    }
    for (ji, j) in model.joints.iter().enumerate() {
        if !chain[ji] {
            continue;
        }
        let axis_b = poses[j.child].rotation * j.axis;
        let origin_b = poses[j.child].translation;
        jac.set_column(ji, &axis_b.cross(&(ee - origin_b)));
    }
    (ee, jac)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn reference() -> RobotModel {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/borinot.json"
        ))
        .unwrap();
        load_model(&text).unwrap()
    }

    fn random_state(model: &RobotModel, rng: &mut StdRng) -> State {
        let n = model.n_joints();
        State {
            pose: Pose::exp(&Tangent6::new(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            )),
            joints: DVector::from_fn(n, |_, _| rng.gen_range(-1.5..1.5)),
            twist: Tangent6::new(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            ),
            rates: DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
        }
    }

    #[test]
    fn free_fall_from_rest_accelerates_at_g() {
        let m = reference();
        let mut rng = StdRng::seed_from_u64(1);
        for _ in 0..10 {
            let mut s = random_state(&m, &mut rng);
            s.twist = Tangent6::zero();
            s.rates.fill(0.0);
            let acc = forward_dynamics(&m, &s, &Control::zeros(6, 2));
            // Uniform field, no initial motion: pure translation at g.
            let world_lin = s.pose.rotation * acc.base.linear;
            assert!((world_lin - Vector3::new(0.0, 0.0, -GRAVITY)).norm() < 1e-9);
            assert!(acc.base.angular.norm() < 1e-9);
            assert!(acc.joints.amax() < 1e-9);
        }
    }

    #[test]
    fn free_fall_com_acceleration_any_state() {
        let m = reference();
        let mut rng = StdRng::seed_from_u64(2);
        let u = Control::zeros(6, 2);
        for _ in 0..10 {
            let s = random_state(&m, &mut rng);
            let h = 1e-6;
            let s1 = integrate(&m, &s, &u, h, 1);
            let a = (com_velocity(&m, &s1) - com_velocity(&m, &s)) / h;
            assert!(
                (a - Vector3::new(0.0, 0.0, -GRAVITY)).norm() < 1e-4,
                "com accel {a:?}"
            );
        }
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let m = reference();
        let s = State::at_rest(Pose::identity(), DVector::zeros(2));
        let u = Control::hover(&m);
        let acc = forward_dynamics(&m, &s, &u);
        assert!(acc.base.linear.norm() < 1e-6, "{:?}", acc.base.linear);
        assert!(acc.base.angular.norm() < 1e-6);
        assert!(acc.joints.amax() < 1e-6);
    }

    #[test]
    fn integrate_preserves_rest_at_equilibrium() {
        let m = reference();
        let s = State::at_rest(Pose::identity(), DVector::zeros(2));
        let u = Control::hover(&m);
        let s1 = integrate(&m, &s, &u, 0.5, 50);
        assert!((s1.pose.translation - s.pose.translation).norm() < 1e-9);
        assert!(s1.twist.norm() < 1e-9);
    }

    #[test]
    fn free_fall_displacement_matches_kinematics() {
        let m = reference();
        let s = State::at_rest(Pose::identity(), DVector::zeros(2));
        let u = Control::zeros(6, 2);
        let s1 = integrate(&m, &s, &u, 0.1, 100);
        let expect = -0.5 * GRAVITY * 0.1 * 0.1;
        assert!(
            (s1.pose.translation.z - expect).abs() < 1e-5,
            "z = {}, expect {expect}",
            s1.pose.translation.z
        );
    }

    #[test]
    fn tumbling_energy_drift_is_small() {
        let m = reference();
        let mut s = State::at_rest(Pose::identity(), DVector::from_vec(vec![0.4, -0.8]));
        s.twist = Tangent6::new(Vector3::new(0.1, 0.0, 0.0), Vector3::new(2.0, 1.0, 0.5));
        s.rates = DVector::from_vec(vec![0.5, -0.3]);
        let u = Control::zeros(6, 2);
        let e0 = kinetic_energy(&m, &s);
        let steps = 10_000; // 1 s at h = 1e-4
        let h = 1e-4;
        for _ in 0..steps {
            let acc = forward_dynamics_with(&m, &s, &u, &[], 0.0);
            s = integrate_step(&s, &acc, h);
        }
        let e1 = kinetic_energy(&m, &s);
        assert!(
            (e1 - e0).abs() / e0 < 1e-3,
            "energy drift {} of {e0}",
            (e1 - e0).abs() / e0
        );
    }

    #[test]
    fn momentum_conserved_without_actuation_or_gravity() {
        let m = reference();
        let mut s = State::at_rest(Pose::identity(), DVector::from_vec(vec![0.3, -0.5]));
        s.twist = Tangent6::new(Vector3::new(0.1, -0.05, 0.08), Vector3::new(0.3, 0.1, 0.2));
        s.rates = DVector::from_vec(vec![0.4, -0.2]);
        let u = Control::zeros(6, 2);
        let (l0, a0) = momentum(&m, &s);
        let h = 5e-6;
        for _ in 0..200_000 {
            let acc = forward_dynamics_with(&m, &s, &u, &[], 0.0);
            s = integrate_step(&s, &acc, h);
        }
        let (l1, a1) = momentum(&m, &s);
        let lin_rel = (l1 - l0).norm() / l0.norm();
        let ang_rel = (a1 - a0).norm() / a0.norm();
        assert!(lin_rel < 1e-6, "linear momentum drift {lin_rel}");
        assert!(ang_rel < 1e-6, "angular momentum drift {ang_rel}");
    }

    #[test]
    fn dynamics_affine_in_control() {
        let m = reference();
        let mut rng = StdRng::seed_from_u64(3);
        let s = random_state(&m, &mut rng);
        let mk = |rng: &mut StdRng| Control {
            thrusts: DVector::from_fn(6, |_, _| rng.gen_range(0.0..10.0)),
            torques: DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0)),
        };
        let u1 = mk(&mut rng);
        let u2 = mk(&mut rng);
        let sum = Control {
            thrusts: &u1.thrusts + &u2.thrusts,
            torques: &u1.torques + &u2.torques,
        };
        let a0 = forward_dynamics(&m, &s, &Control::zeros(6, 2));
        let a1 = forward_dynamics(&m, &s, &u1);
        let a2 = forward_dynamics(&m, &s, &u2);
        let a12 = forward_dynamics(&m, &s, &sum);
        let lhs = (a12.base - a0.base).as_vector();
        let rhs = ((a1.base - a0.base) + (a2.base - a0.base)).as_vector();
        assert!((lhs - rhs).norm() < 1e-9);
        let lhs_j = &a12.joints - &a0.joints;
        let rhs_j = (&a1.joints - &a0.joints) + (&a2.joints - &a0.joints);
        assert!((lhs_j - rhs_j).norm() < 1e-9);
    }

    #[test]
    fn rollout_is_repeated_integrate() {
        let m = reference();
        let mut rng = StdRng::seed_from_u64(4);
        let x0 = random_state(&m, &mut rng);
        let controls: Vec<Control> = (0..5)
            .map(|_| Control {
                thrusts: DVector::from_fn(6, |_, _| rng.gen_range(0.0..8.0)),
                torques: DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0)),
            })
            .collect();
        let xs = rollout(&m, &x0, &controls, 0.02);
        assert_eq!(xs.len(), 6);
        let mut s = x0.clone();
        for (k, u) in controls.iter().enumerate() {
            s = integrate(&m, &s, u, 0.02, 1);
            assert_eq!(s, xs[k + 1], "bitwise identical rollout");
        }
        // Zero-length rollout.
        let xs0 = rollout(&m, &x0, &[], 0.02);
        assert_eq!(xs0.len(), 1);
    }

    #[test]
    fn hover_rollout_stays_put() {
        let m = reference();
        let x0 = State::at_rest(Pose::identity(), DVector::zeros(2));
        let controls = vec![Control::hover(&m); 50];
        let xs = rollout(&m, &x0, &controls, 0.02);
        for x in &xs {
            assert!(x.pose.translation.norm() < 1e-4);
        }
    }

    #[test]
    fn state_boxplus_boxminus_round_trip() {
        let m = reference();
        let mut rng = StdRng::seed_from_u64(5);
        let a = random_state(&m, &mut rng);
        let dx = DVector::from_fn(a.nx(), |_, _| rng.gen_range(-0.5..0.5));
        let b = a.boxplus(&dx);
        assert!((b.boxminus(&a) - &dx).norm() < 1e-9);
    }
}
