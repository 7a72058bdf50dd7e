//! Robot description: links, joints, propellers, actuation bounds.
//!
//! Models are loaded from a JSON document (see `models/borinot.json` for the
//! reference hexarotor + 2-DoF tail). Loading validates the kinematic tree
//! and the physical invariants; the loaded model is immutable afterwards.

use nalgebra::{DVector, Matrix3, Matrix6xX, MatrixXx6, Vector3, Vector6};
use serde::Deserialize;
use thiserror::Error;

use crate::{Pose, Rotation};

/// Standard gravity along -z, m/s².
pub const GRAVITY: f64 = 9.81;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("failed to read model file: {0}")]
    Io(#[from] std::io::Error),
    #[error("model JSON parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("model field `{field}`: {reason}")]
    Schema { field: String, reason: String },
}

impl ModelError {
    fn schema(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ModelError::Schema {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Rigid link: mass, center of mass and rotational inertia about the CoM,
/// both expressed in the link frame.
#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

/// Revolute joint connecting `parent` to `child`. The child link frame
/// coincides with the joint frame: `origin` places it in the parent frame and
/// the joint rotates it about `axis` by the joint angle.
#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    pub axis: Vector3<f64>,
    pub origin: Pose,
    pub angle_limits: (f64, f64),
    pub torque_limit: f64,
}

/// Fixed-pitch propeller rigidly attached to the base link.
#[derive(Clone, Debug)]
pub struct Propeller {
    /// Hub position in the base frame, m.
    pub position: Vector3<f64>,
    /// +1 or -1; sign of the reaction torque about +z per unit thrust.
    pub spin: f64,
    /// N.
    pub max_thrust: f64,
    /// Yaw moment per newton of thrust, m.
    pub torque_to_thrust: f64,
}

/// Point of interest on the kinematic tree (end effector, foot tip).
#[derive(Clone, Debug)]
pub struct EndEffector {
    pub link: usize,
    pub offset: Vector3<f64>,
}

#[derive(Clone, Debug)]
pub struct RobotModel {
    pub name: String,
    /// Link 0 is the floating base; the rest follow the joint tree order.
    pub links: Vec<Link>,
    /// Sorted so that a joint's parent link always appears earlier.
    pub joints: Vec<Joint>,
    pub propellers: Vec<Propeller>,
    pub thrust_min: f64,
    pub end_effector: EndEffector,
}

impl RobotModel {
    pub fn n_props(&self) -> usize {
        self.propellers.len()
    }

    pub fn n_joints(&self) -> usize {
        self.joints.len()
    }

    /// Generalized-velocity dimension: base twist plus joint rates.
    pub fn nv(&self) -> usize {
        6 + self.n_joints()
    }

    /// Tangent dimension of the full state.
    pub fn nx(&self) -> usize {
        12 + 2 * self.n_joints()
    }

    pub fn nu(&self) -> usize {
        self.n_props() + self.n_joints()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Thrust-to-weight ratio of the whole assembly.
    pub fn twr(&self) -> f64 {
        let max: f64 = self.propellers.iter().map(|p| p.max_thrust).sum();
        max / (self.total_mass() * GRAVITY)
    }

    /// Fraction of the thrust range spent hovering.
    pub fn hover_throttle(&self) -> f64 {
        1.0 / self.twr()
    }

    /// Control bounds `[thrusts; joint torques]` as flat vectors.
    pub fn control_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let nu = self.nu();
        let mut lo = DVector::zeros(nu);
        let mut hi = DVector::zeros(nu);
        for (i, p) in self.propellers.iter().enumerate() {
            lo[i] = self.thrust_min;
            hi[i] = p.max_thrust;
        }
        for (j, joint) in self.joints.iter().enumerate() {
            lo[self.n_props() + j] = -joint.torque_limit;
            hi[self.n_props() + j] = joint.torque_limit;
        }
        (lo, hi)
    }

    /// Per-propeller thrusts that balance gravity with zero base torque.
    pub fn hover_thrusts(&self) -> DVector<f64> {
        let map = allocation_map(self);
        let mut wrench = Vector6::zeros();
        wrench[2] = self.total_mass() * GRAVITY;
        map.thrusts_for_wrench(&wrench)
    }
}

/// Linear map from per-propeller thrusts to the base wrench
/// `[force; torque]` about the base-frame origin, plus its pseudo-inverse.
#[derive(Clone, Debug)]
pub struct AllocationMap {
    pub matrix: Matrix6xX<f64>,
    pub pinv: MatrixXx6<f64>,
}

impl AllocationMap {
    /// Base wrench `[force; torque]` produced by the given thrusts.
    pub fn wrench(&self, thrusts: &DVector<f64>) -> Vector6<f64> {
        let w = &self.matrix * thrusts;
        Vector6::from_column_slice(w.as_slice())
    }

    /// Least-squares thrust vector realizing a desired wrench.
    pub fn thrusts_for_wrench(&self, wrench: &Vector6<f64>) -> DVector<f64> {
        &self.pinv * wrench
    }
}

/// Build the allocation map from the propeller geometry. Each propeller
/// pushes along +z of the base frame; yaw uses the spin-signed
/// torque-to-thrust ratio.
pub fn allocation_map(model: &RobotModel) -> AllocationMap {
    let n = model.n_props();
    let mut matrix = Matrix6xX::zeros(n);
    let z = Vector3::z();
    for (i, p) in model.propellers.iter().enumerate() {
        let torque = p.position.cross(&z) + z * (p.spin * p.torque_to_thrust);
        matrix[(2, i)] = 1.0;
        matrix[(3, i)] = torque.x;
        matrix[(4, i)] = torque.y;
        matrix[(5, i)] = torque.z;
    }
    let pinv = matrix
        .clone()
        .svd(true, true)
        .pseudo_inverse(1e-10)
        .expect("allocation SVD");
    AllocationMap {
        matrix,
        pinv: MatrixXx6::from_iterator(n, pinv.iter().copied()),
    }
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

#[derive(Deserialize)]
struct LinkDoc {
    name: String,
    mass: f64,
    com: [f64; 3],
    /// [ixx, iyy, izz, ixy, ixz, iyz] about the CoM, link frame.
    inertia: [f64; 6],
}

#[derive(Deserialize)]
struct OriginDoc {
    translation: [f64; 3],
    #[serde(default = "identity_quat")]
    rotation_wxyz: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Deserialize)]
struct JointDoc {
    name: String,
    parent: String,
    child: String,
    axis: [f64; 3],
    origin: OriginDoc,
    angle_limits: [f64; 2],
    torque_limit: f64,
}

#[derive(Deserialize)]
struct PropellerDoc {
    position: [f64; 3],
    spin: f64,
    max_thrust: f64,
    torque_to_thrust: f64,
}

#[derive(Deserialize, Default)]
struct LimitsDoc {
    #[serde(default)]
    thrust_min: f64,
}

#[derive(Deserialize)]
struct EndEffectorDoc {
    link: String,
    offset: [f64; 3],
}

#[derive(Deserialize)]
struct ModelDoc {
    name: String,
    links: Vec<LinkDoc>,
    joints: Vec<JointDoc>,
    propellers: Vec<PropellerDoc>,
    #[serde(default)]
    limits: LimitsDoc,
    end_effector: EndEffectorDoc,
}

/// Load and validate a robot model from a JSON document.
pub fn load_model(document: &str) -> Result<RobotModel, ModelError> {
    let doc: ModelDoc = serde_json::from_str(document)?;
    build_model(doc)
}

pub fn load_model_file(path: &std::path::Path) -> Result<RobotModel, ModelError> {
    load_model(&std::fs::read_to_string(path)?)
}

fn build_model(doc: ModelDoc) -> Result<RobotModel, ModelError> {
    if doc.links.is_empty() {
        return Err(ModelError::schema("links", "at least one link required"));
    }

    let mut links = Vec::with_capacity(doc.links.len());
    for l in &doc.links {
        if !(l.mass > 0.0) {
            return Err(ModelError::schema(
                format!("links[{}].mass", l.name),
                format!("must be > 0, got {}", l.mass),
            ));
        }
        let [ixx, iyy, izz, ixy, ixz, iyz] = l.inertia;
        let inertia = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
        let spd = inertia
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .all(|&e| e > 0.0);
        if !spd {
            return Err(ModelError::schema(
                format!("links[{}].inertia", l.name),
                "must be symmetric positive definite".to_string(),
            ));
        }
        links.push(Link {
            name: l.name.clone(),
            mass: l.mass,
            com: Vector3::from(l.com),
            inertia,
        });
    }

    let link_index = |name: &str, field: &str| -> Result<usize, ModelError> {
        links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::schema(field, format!("unknown link `{name}`")))
    };

    let mut joints = Vec::with_capacity(doc.joints.len());
    for j in &doc.joints {
        let parent = link_index(&j.parent, &format!("joints[{}].parent", j.name))?;
        let child = link_index(&j.child, &format!("joints[{}].child", j.name))?;
        let axis = Vector3::from(j.axis);
        if axis.norm() < 1e-9 {
            return Err(ModelError::schema(
                format!("joints[{}].axis", j.name),
                "must be a nonzero vector",
            ));
        }
        if j.angle_limits[0] >= j.angle_limits[1] {
            return Err(ModelError::schema(
                format!("joints[{}].angle_limits", j.name),
                "lower limit must be below upper limit",
            ));
        }
        if !(j.torque_limit > 0.0) {
            return Err(ModelError::schema(
                format!("joints[{}].torque_limit", j.name),
                "must be > 0",
            ));
        }
        let [w, x, y, z] = j.origin.rotation_wxyz;
        joints.push(Joint {
            name: j.name.clone(),
            parent,
            child,
            axis: axis.normalize(),
            origin: Pose::new(
                Rotation::from_quaternion(w, x, y, z),
                Vector3::from(j.origin.translation),
            ),
            angle_limits: (j.angle_limits[0], j.angle_limits[1]),
            torque_limit: j.torque_limit,
        });
    }

    // Tree validation: link 0 is the base; each other link is the child of
    // exactly one joint and every parent chain terminates at the base.
    let mut child_of = vec![usize::MAX; links.len()];
    for (ji, j) in joints.iter().enumerate() {
        if j.child == 0 {
            return Err(ModelError::schema(
                format!("joints[{}].child", j.name),
                "the base link cannot be a joint child",
            ));
        }
        if child_of[j.child] != usize::MAX {
            return Err(ModelError::schema(
                format!("joints[{}].child", j.name),
                "link is the child of more than one joint",
            ));
        }
        child_of[j.child] = ji;
    }
    for (li, l) in links.iter().enumerate().skip(1) {
        if child_of[li] == usize::MAX {
            return Err(ModelError::schema(
                format!("links[{}]", l.name),
                "link is not connected to the tree by any joint",
            ));
        }
        // Walk to the base; more hops than links means a cycle.
        let mut cur = li;
        for hops in 0.. {
            if cur == 0 {
                break;
            }
            if hops > links.len() {
                return Err(ModelError::schema(
                    format!("links[{}]", l.name),
                    "joint graph contains a cycle",
                ));
            }
            cur = joints[child_of[cur]].parent;
        }
    }

    // Topological order: parents before children.
    let mut order: Vec<usize> = (0..joints.len()).collect();
    order.sort_by_key(|&ji| depth_of(&joints, &child_of, joints[ji].child));
    let joints: Vec<Joint> = order.into_iter().map(|ji| joints[ji].clone()).collect();

    for (i, p) in doc.propellers.iter().enumerate() {
        if p.spin.abs() != 1.0 {
            return Err(ModelError::schema(
                format!("propellers[{i}].spin"),
                format!("must be +1 or -1, got {}", p.spin),
            ));
        }
        if !(p.max_thrust > 0.0) {
            return Err(ModelError::schema(
                format!("propellers[{i}].max_thrust"),
                "must be > 0",
            ));
        }
    }
    let propellers = doc
        .propellers
        .iter()
        .map(|p| Propeller {
            position: Vector3::from(p.position),
            spin: p.spin,
            max_thrust: p.max_thrust,
            torque_to_thrust: p.torque_to_thrust,
        })
        .collect();

    let ee_link = link_index(&doc.end_effector.link, "end_effector.link")?;

    Ok(RobotModel {
        name: doc.name,
        links,
        joints,
        propellers,
        thrust_min: doc.limits.thrust_min,
        end_effector: EndEffector {
            link: ee_link,
            offset: Vector3::from(doc.end_effector.offset),
        },
    })
}

fn depth_of(joints: &[Joint], child_of: &[usize], mut link: usize) -> usize {
    let mut depth = 0;
    while link != 0 {
        depth += 1;
        link = joints[child_of[link]].parent;
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference() -> RobotModel {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/borinot.json"
        ))
        .unwrap();
        load_model(&text).unwrap()
    }

    #[test]
    fn reference_model_masses() {
        let m = reference();
        assert!((m.total_mass() - 2.854).abs() < 1e-9);
        assert!((m.links[0].mass - 2.112).abs() < 1e-9);
        let limb: f64 = m.links.iter().skip(1).map(|l| l.mass).sum();
        assert!((limb - 0.742).abs() < 1e-9);
        assert_eq!(m.n_props(), 6);
        assert_eq!(m.n_joints(), 2);
    }

    #[test]
    fn reference_model_twr_and_throttle() {
        let m = reference();
        assert!((m.twr() - 3.45).abs() < 0.05, "twr {}", m.twr());
        // Platform alone.
        let mut platform = m.clone();
        platform.links.truncate(1);
        platform.joints.clear();
        assert!((platform.twr() - 4.66).abs() < 0.05);
        let throttle = m.hover_throttle();
        assert!((throttle - 0.286).abs() < 0.005, "throttle {throttle}");
    }

    #[test]
    fn reference_joint_torque_limit() {
        let m = reference();
        for j in &m.joints {
            assert_eq!(j.torque_limit, 2.7);
        }
    }

    #[test]
    fn negative_mass_rejected() {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/borinot.json"
        ))
        .unwrap();
        let bad = text.replace("\"mass\": 2.112", "\"mass\": -2.112");
        let err = load_model(&bad).unwrap_err();
        assert!(err.to_string().contains("mass"), "{err}");
    }

    #[test]
    fn joint_cycle_rejected() {
        // Two joints forming a loop between link1 and link2 (link1 declared
        // child twice would be caught separately; here link2 -> link1 closes
        // a cycle that never reaches the base).
        let doc = r#"{
            "name": "loop",
            "links": [
                {"name": "base", "mass": 1.0, "com": [0,0,0], "inertia": [0.1,0.1,0.1,0,0,0]},
                {"name": "a", "mass": 0.1, "com": [0,0,0], "inertia": [0.01,0.01,0.01,0,0,0]},
                {"name": "b", "mass": 0.1, "com": [0,0,0], "inertia": [0.01,0.01,0.01,0,0,0]}
            ],
            "joints": [
                {"name": "j1", "parent": "b", "child": "a", "axis": [0,1,0],
                 "origin": {"translation": [0,0,-0.1]}, "angle_limits": [-1,1], "torque_limit": 1.0},
                {"name": "j2", "parent": "a", "child": "b", "axis": [0,1,0],
                 "origin": {"translation": [0,0,-0.1]}, "angle_limits": [-1,1], "torque_limit": 1.0}
            ],
            "propellers": [],
            "end_effector": {"link": "b", "offset": [0,0,0]}
        }"#;
        let err = load_model(doc).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn non_spd_inertia_rejected() {
        let doc = r#"{
            "name": "bad",
            "links": [
                {"name": "base", "mass": 1.0, "com": [0,0,0], "inertia": [0.1,-0.1,0.1,0,0,0]}
            ],
            "joints": [],
            "propellers": [],
            "end_effector": {"link": "base", "offset": [0,0,0]}
        }"#;
        let err = load_model(doc).unwrap_err();
        assert!(err.to_string().contains("positive definite"), "{err}");
    }

    #[test]
    fn equal_thrusts_give_pure_lift() {
        let m = reference();
        let map = allocation_map(&m);
        let t = DVector::from_element(6, 2.5);
        let w = map.wrench(&t);
        assert!((w[2] - 15.0).abs() < 1e-12);
        for i in [0, 1, 3, 4, 5] {
            assert!(w[i].abs() < 1e-12, "wrench[{i}] = {}", w[i]);
        }
    }

    #[test]
    fn single_prop_pitch_torque_arm() {
        let m = reference();
        let map = allocation_map(&m);
        // Propeller 0 sits on the +x arm at 0.185 m.
        assert!((m.propellers[0].position - Vector3::new(0.185, 0.0, 0.0)).norm() < 1e-12);
        let mut t = DVector::zeros(6);
        t[0] = 3.0;
        let w = map.wrench(&t);
        assert!((w[4].abs() - 0.185 * 3.0).abs() < 1e-12, "pitch {}", w[4]);
    }

    #[test]
    fn hover_thrusts_total_weight() {
        let m = reference();
        let map = allocation_map(&m);
        let hover = m.hover_thrusts();
        let w = map.wrench(&hover);
        assert!((w[2] - 27.998).abs() < 1e-3, "lift {}", w[2]);
        for t in hover.iter() {
            assert!((t - 27.99774 / 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn mirrored_layout_negates_roll_column() {
        let m = reference();
        let mut mirrored = m.clone();
        for p in &mut mirrored.propellers {
            p.position.y = -p.position.y;
            p.spin = -p.spin;
        }
        let a = allocation_map(&m).matrix;
        let b = allocation_map(&mirrored).matrix;
        for i in 0..6 {
            assert!((a[(3, i)] + b[(3, i)]).abs() < 1e-12);
        }
    }

    #[test]
    fn twr_decreases_with_payload() {
        let m = reference();
        let mut prev = m.twr();
        for extra in [0.1, 0.2, 0.5, 1.0] {
            let mut heavier = m.clone();
            heavier.links[0].mass += extra;
            let t = heavier.twr();
            assert!(t < prev);
            prev = t;
        }
    }
}
