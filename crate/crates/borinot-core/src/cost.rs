//! Residual cost terms for OCP nodes with analytic Gauss-Newton derivatives.
//!
//! Every term is `½ ‖r(x, u)‖²_W` with a nonnegative diagonal weight. The
//! state-tracking residual applies `boxminus` on the pose block and plain
//! subtraction elsewhere; gradients and Hessians are Gauss-Newton (`Jᵀ W r`,
//! `Jᵀ W J`), so the Hessian is positive semidefinite by construction.

use nalgebra::{DMatrix, DVector, Vector3};

use crate::dynamics::{ee_base_jacobian, State};
use crate::lie::se3_right_jacobian_inv;
use crate::model::RobotModel;
use crate::Rotation;

/// One weighted residual.
#[derive(Clone, Debug)]
pub enum ResidualTerm {
    /// `x ⊖ x_ref`, diagonal weight over the full tangent (dim 12 + 2n).
    StateTracking {
        reference: State,
        weight: DVector<f64>,
    },
    /// `u − u_ref`, diagonal weight over the control vector.
    ControlReg {
        reference: DVector<f64>,
        weight: DVector<f64>,
    },
    /// World-frame end-effector position error.
    EePosition {
        target: Vector3<f64>,
        weight: Vector3<f64>,
    },
    /// Base pitch (elevation of the body x-axis, positive nose-down) error.
    BasePitch { target: f64, weight: f64 },
    /// One-sided quadratic on joint angles beyond `limit ∓ margin`.
    JointBarrier {
        lower: DVector<f64>,
        upper: DVector<f64>,
        margin: f64,
        weight: f64,
    },
}

/// Phase flavor of a node, per the mission pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Navigation,
    Task,
}

/// Sum of residual terms attached to one OCP node.
#[derive(Clone, Debug)]
pub struct NodeCost {
    pub terms: Vec<ResidualTerm>,
    pub kind: NodeKind,
}

/// Gradient and Gauss-Newton Hessian blocks over `[state tangent; control]`.
#[derive(Clone, Debug)]
pub struct CostQuad {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub lxu: DMatrix<f64>,
    pub luu: DMatrix<f64>,
}

impl CostQuad {
    fn zeros(nx: usize, nu: usize) -> Self {
        CostQuad {
            lx: DVector::zeros(nx),
            lu: DVector::zeros(nu),
            lxx: DMatrix::zeros(nx, nx),
            lxu: DMatrix::zeros(nx, nu),
            luu: DMatrix::zeros(nu, nu),
        }
    }
}

/// Pitch of a rotation: elevation angle of the body x-axis below the world
/// horizontal plane (positive nose-down), in (-pi/2, pi/2].
pub fn base_pitch(rotation: &Rotation) -> f64 {
    let e = *rotation * Vector3::x();
    let h = (e.x * e.x + e.y * e.y).sqrt();
    (-e.z).atan2(h)
}

impl NodeCost {
    pub fn new(kind: NodeKind, terms: Vec<ResidualTerm>) -> Self {
        NodeCost { terms, kind }
    }

    /// Total cost `Σ ½‖r_i‖²_{W_i}` at `(x, u)`.
    pub fn eval(&self, model: &RobotModel, x: &State, u: &DVector<f64>) -> f64 {
        let mut total = 0.0;
        for term in &self.terms {
            match term {
                ResidualTerm::StateTracking { reference, weight } => {
                    let r = x.boxminus(reference);
                    total += 0.5 * r.iter().zip(weight.iter()).map(|(r, w)| w * r * r).sum::<f64>();
                }
                ResidualTerm::ControlReg { reference, weight } => {
                    let r = u - reference;
                    total += 0.5 * r.iter().zip(weight.iter()).map(|(r, w)| w * r * r).sum::<f64>();
                }
                ResidualTerm::EePosition { target, weight } => {
                    let (ee_b, _) = ee_base_jacobian(model, &x.joints);
                    let r = x.pose.transform_point(&ee_b) - target;
                    total += 0.5 * (weight.x * r.x * r.x + weight.y * r.y * r.y + weight.z * r.z * r.z);
                }
                ResidualTerm::BasePitch { target, weight } => {
                    let r = base_pitch(&x.pose.rotation) - target;
                    total += 0.5 * weight * r * r;
                }
                ResidualTerm::JointBarrier { lower, upper, margin, weight } => {
                    for j in 0..x.joints.len() {
                        let d = barrier_distance(x.joints[j], lower[j], upper[j], *margin);
                        total += 0.5 * weight * d * d;
                    }
                }
            }
        }
        total
    }

    /// Gradient and Gauss-Newton Hessian at `(x, u)`.
    pub fn quadratic(&self, model: &RobotModel, x: &State, u: &DVector<f64>) -> CostQuad {
        let n = x.n_joints();
        let nx = x.nx();
        let mut q = CostQuad::zeros(nx, u.len());
        for term in &self.terms {
            match term {
                ResidualTerm::StateTracking { reference, weight } => {
                    let r = x.boxminus(reference);
                    // Jacobian: Jr⁻¹ of the SE(3) residual on the pose block,
                    // identity elsewhere.
                    let pose_res = crate::Tangent6::from_vector(
                        &nalgebra::Vector6::from_column_slice(&r.as_slice()[0..6]),
                    );
                    let jpose = se3_right_jacobian_inv(&pose_res);
                    let wr = r.component_mul(weight);
                    // lx = Jᵀ W r with block structure.
                    let mut lx = wr.clone();
                    let top = jpose.transpose() * wr.rows(0, 6);
                    lx.rows_mut(0, 6).copy_from(&top);
                    q.lx += &lx;
                    // lxx = Jᵀ W J.
                    let wdiag_pose = DMatrix::from_diagonal(&weight.rows(0, 6).into_owned());
                    let block = jpose.transpose() * wdiag_pose * jpose;
                    let mut top_left = q.lxx.view_mut((0, 0), (6, 6));
                    top_left += block;
                    for i in 6..nx {
                        q.lxx[(i, i)] += weight[i];
                    }
                }
                ResidualTerm::ControlReg { reference, weight } => {
                    let r = u - reference;
                    q.lu += r.component_mul(weight);
                    for i in 0..u.len() {
                        q.luu[(i, i)] += weight[i];
                    }
                }
                ResidualTerm::EePosition { target, weight } => {
                    let (ee_b, jb) = ee_base_jacobian(model, &x.joints);
                    let rmat = x.pose.rotation.matrix();
                    let r = x.pose.transform_point(&ee_b) - target;
                    // d(ee)/d[pose lin, pose ang, joints]:
                    let mut jac = DMatrix::zeros(3, nx);
                    jac.view_mut((0, 0), (3, 3)).copy_from(&rmat);
                    jac.view_mut((0, 3), (3, 3))
                        .copy_from(&(-rmat * crate::lie::skew(&ee_b)));
                    jac.view_mut((0, 6), (3, n)).copy_from(&(rmat * jb));
                    let w = DVector::from_vec(vec![weight.x, weight.y, weight.z]);
                    accumulate(&mut q, &jac, &w, &DVector::from_vec(vec![r.x, r.y, r.z]));
                }
                ResidualTerm::BasePitch { target, weight } => {
                    let e = x.pose.rotation * Vector3::x();
                    let h = (e.x * e.x + e.y * e.y).sqrt();
                    if h < 1e-9 {
                        continue; // body x-axis vertical: pitch gradient undefined
                    }
                    let r = (-e.z).atan2(h) - target;
                    let grad_e = Vector3::new(e.z * e.x / h, e.z * e.y / h, -h);
                    let de = -x.pose.rotation.matrix() * crate::lie::skew(&Vector3::x());
                    let dpitch = de.transpose() * grad_e; // 3x1 over angular tangent
                    let mut jac = DMatrix::zeros(1, nx);
                    for i in 0..3 {
                        jac[(0, 3 + i)] = dpitch[i];
                    }
                    accumulate(&mut q, &jac, &DVector::from_element(1, *weight), &DVector::from_element(1, r));
                }
                ResidualTerm::JointBarrier { lower, upper, margin, weight } => {
                    for j in 0..n {
                        let d = barrier_distance(x.joints[j], lower[j], upper[j], *margin);
                        if d != 0.0 {
                            q.lx[6 + j] += weight * d;
                            q.lxx[(6 + j, 6 + j)] += weight;
                        }
                    }
                }
            }
        }
        q
    }
}

/// Signed distance beyond the soft limits (zero inside).
fn barrier_distance(angle: f64, lower: f64, upper: f64, margin: f64) -> f64 {
    let hi = upper - margin;
    let lo = lower + margin;
    if angle > hi {
        angle - hi
    } else if angle < lo {
        angle - lo
    } else {
        0.0
    }
}

fn accumulate(q: &mut CostQuad, jac: &DMatrix<f64>, weight: &DVector<f64>, r: &DVector<f64>) {
    let wr = r.component_mul(weight);
    q.lx += jac.transpose() * &wr;
    let wj = DMatrix::from_diagonal(weight) * jac;
    q.lxx += jac.transpose() * wj;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::Control;
    use crate::model::load_model;
    use crate::{Pose, Tangent6};
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
            joints: DVector::from_fn(n, |_, _| rng.gen_range(-1.8..1.8)),
            twist: Tangent6::new(
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
            ),
            rates: DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0)),
        }
    }

    fn full_cost(model: &RobotModel, reference_state: &State, rng: &mut StdRng) -> NodeCost {
        let nx = reference_state.nx();
        NodeCost::new(
            NodeKind::Task,
            vec![
                ResidualTerm::StateTracking {
                    reference: reference_state.clone(),
                    weight: DVector::from_fn(nx, |_, _| rng.gen_range(0.1..5.0)),
                },
                ResidualTerm::ControlReg {
                    reference: DVector::zeros(model.nu()),
                    weight: DVector::from_element(model.nu(), 0.1),
                },
                ResidualTerm::EePosition {
                    target: Vector3::new(0.4, -0.2, 0.5),
                    weight: Vector3::new(2.0, 2.0, 2.0),
                },
                ResidualTerm::BasePitch {
                    target: 0.3,
                    weight: 1.5,
                },
                ResidualTerm::JointBarrier {
                    lower: DVector::from_element(2, -2.5),
                    upper: DVector::from_element(2, 2.5),
                    margin: 0.05,
                    weight: 100.0,
                },
            ],
        )
    }

    #[test]
    fn zero_cost_at_reference() {
        let model = reference();
        let x = State::at_rest(Pose::identity(), DVector::zeros(2));
        let cost = NodeCost::new(
            NodeKind::Navigation,
            vec![
                ResidualTerm::StateTracking {
                    reference: x.clone(),
                    weight: DVector::from_element(x.nx(), 3.0),
                },
                ResidualTerm::ControlReg {
                    reference: DVector::zeros(model.nu()),
                    weight: DVector::from_element(model.nu(), 0.1),
                },
            ],
        );
        assert_eq!(cost.eval(&model, &x, &DVector::zeros(model.nu())), 0.0);
        let q = cost.quadratic(&model, &x, &DVector::zeros(model.nu()));
        assert!(q.lx.amax() < 1e-15);
        assert!(q.lu.amax() < 1e-15);
    }

    #[test]
    fn barrier_is_definitional_quadratic() {
        let model = reference();
        let mut x = State::at_rest(Pose::identity(), DVector::zeros(2));
        x.joints[0] = 2.5 + 0.1; // hard limit + 0.1 rad
        let w = 40.0;
        let cost = NodeCost::new(
            NodeKind::Navigation,
            vec![ResidualTerm::JointBarrier {
                lower: DVector::from_element(2, -2.5),
                upper: DVector::from_element(2, 2.5),
                margin: 0.0,
                weight: w,
            }],
        );
        let v = cost.eval(&model, &x, &DVector::zeros(model.nu()));
        assert!((v - 0.5 * w * 0.01).abs() < 1e-12, "{v}");
    }

    #[test]
    fn eval_matches_straight_line_recomputation() {
        let model = reference();
        let mut rng = StdRng::seed_from_u64(20);
        for _ in 0..20 {
            let xref = random_state(&model, &mut rng);
            let x = random_state(&model, &mut rng);
            let u = DVector::from_fn(model.nu(), |_, _| rng.gen_range(-3.0..8.0));
            let w = DVector::from_fn(x.nx(), |_, _| rng.gen_range(0.0..4.0));
            let wu = DVector::from_fn(model.nu(), |_, _| rng.gen_range(0.0..1.0));
            let cost = NodeCost::new(
                NodeKind::Navigation,
                vec![
                    ResidualTerm::StateTracking { reference: xref.clone(), weight: w.clone() },
                    ResidualTerm::ControlReg { reference: DVector::zeros(model.nu()), weight: wu.clone() },
                ],
            );
            // Independent recomputation from raw residuals.
            let r = x.boxminus(&xref);
            let mut expect = 0.0;
            for i in 0..r.len() {
                expect += 0.5 * w[i] * r[i] * r[i];
            }
            for i in 0..u.len() {
                expect += 0.5 * wu[i] * u[i] * u[i];
            }
            let got = cost.eval(&model, &x, &u);
            assert!((got - expect).abs() < 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn gradient_matches_central_finite_differences() {
        let model = reference();
        let mut rng = StdRng::seed_from_u64(21);
        let nu = model.nu();
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let xref = random_state(&model, &mut rng);
            let x = random_state(&model, &mut rng);
            let u = DVector::from_fn(nu, |_, _| rng.gen_range(-3.0..8.0));
            let cost = full_cost(&model, &xref, &mut rng);
            let q = cost.quadratic(&model, &x, &u);
            let nx = x.nx();
            let f = |z: &DVector<f64>| {
                let xp = x.boxplus(&z.rows(0, nx).into_owned());
                let up = &u + z.rows(nx, nu);
                cost.eval(&model, &xp, &up)
            };
            let fd = crate::oracles::numeric_gradient(f, &DVector::zeros(nx + nu), 1e-6);
            let mut analytic = DVector::zeros(nx + nu);
            analytic.rows_mut(0, nx).copy_from(&q.lx);
            analytic.rows_mut(nx, nu).copy_from(&q.lu);
            let rel = (&fd - &analytic).norm() / fd.norm().max(1.0);
            worst = worst.max(rel);
            assert!(rel < 1e-5, "gradient rel err {rel}");
        }
        // Representative of the oracle examples: keep visibility on slack.
        assert!(worst < 1e-5, "worst rel err {worst}");
    }

    #[test]
    fn control_reg_hessian_is_exact_weight() {
        let model = reference();
        let x = State::at_rest(Pose::identity(), DVector::zeros(2));
        let w = DVector::from_fn(model.nu(), |i, _| 0.1 + i as f64);
        let cost = NodeCost::new(
            NodeKind::Navigation,
            vec![ResidualTerm::ControlReg { reference: DVector::zeros(model.nu()), weight: w.clone() }],
        );
        let q = cost.quadratic(&model, &x, &DVector::from_element(model.nu(), 1.0));
        for i in 0..model.nu() {
            for j in 0..model.nu() {
                let expect = if i == j { w[i] } else { 0.0 };
                assert_eq!(q.luu[(i, j)], expect);
            }
        }
    }

    #[test]
    fn gauss_newton_hessian_is_psd() {
        let model = reference();
        let mut rng = StdRng::seed_from_u64(22);
        for _ in 0..20 {
            let xref = random_state(&model, &mut rng);
            let x = random_state(&model, &mut rng);
            let u = DVector::from_fn(model.nu(), |_, _| rng.gen_range(-3.0..8.0));
            let cost = full_cost(&model, &xref, &mut rng);
            let q = cost.quadratic(&model, &x, &u);
            for e in q.lxx.symmetric_eigenvalues().iter() {
                assert!(*e > -1e-9, "lxx eigenvalue {e}");
            }
            for e in q.luu.symmetric_eigenvalues().iter() {
                assert!(*e > -1e-9, "luu eigenvalue {e}");
            }
        }
    }

    #[test]
    fn eval_nonnegative_and_zero_iff_residuals_vanish() {
        let model = reference();
        let mut rng = StdRng::seed_from_u64(23);
        for _ in 0..50 {
            let xref = random_state(&model, &mut rng);
            let x = random_state(&model, &mut rng);
            let u = DVector::from_fn(model.nu(), |_, _| rng.gen_range(-3.0..8.0));
            let cost = full_cost(&model, &xref, &mut rng);
            assert!(cost.eval(&model, &x, &u) >= 0.0);
        }
        let _ = Control::zeros(6, 2);
    }
}
