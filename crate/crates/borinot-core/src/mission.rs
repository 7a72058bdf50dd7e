//! Mission pipeline: specification → node discretization → offline OCP →
//! reference rail → sliding-window MPC.
//!
//! A mission is an ordered list of navigation and task phases plus a terminal
//! target. Navigation nodes carry weak regularization residuals; task nodes
//! carry the strong residuals of their targets. The offline solution becomes
//! the rail that the MPC windows track with constant weights, where the
//! phase distinction is gone: every MPC node has exactly one state-tracking
//! and one control-regularization term.

use nalgebra::{DVector, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::cost::{NodeCost, NodeKind, ResidualTerm};
use crate::dynamics::{Control, State};
use crate::model::RobotModel;
use crate::solver::{FddpSolver, ProblemNode, ShootingProblem, SolverOptions, SolverResult};
use crate::{Pose, Rotation};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("failed to read mission file: {0}")]
    Io(#[from] std::io::Error),
    #[error("mission JSON parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("mission `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

impl MissionError {
    fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        MissionError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Residual targets a phase (or the terminal node) can carry.
#[derive(Clone, Debug, Default)]
pub struct PhaseTargets {
    pub waypoint: Option<Pose>,
    pub ee_position: Option<Vector3<f64>>,
    pub pitch: Option<f64>,
    pub joints: Option<DVector<f64>>,
}

impl PhaseTargets {
    pub fn is_empty(&self) -> bool {
        self.waypoint.is_none()
            && self.ee_position.is_none()
            && self.pitch.is_none()
            && self.joints.is_none()
    }
}

#[derive(Clone, Debug)]
pub struct Phase {
    pub kind: NodeKind,
    pub duration: f64,
    pub targets: PhaseTargets,
}

/// Cost weights, exposed in the mission file. `task` and `nav` set the
/// strong-residual and navigation-regularization scales of the offline OCP;
/// the `track_*` entries are the MPC tracking weights `W_x`, and the
/// `control_*` entries `W_u`.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct MissionWeights {
    pub task: f64,
    pub nav: f64,
    /// Roll/pitch regularization in navigation nodes (kept weak so the
    /// platform is free to tilt into the maneuver).
    pub nav_attitude: f64,
    /// Yaw regularization in navigation nodes; missions keep their heading.
    pub nav_yaw: f64,
    /// Body angular-rate damping in navigation nodes.
    pub nav_angular_velocity: f64,
    pub control_thrust: f64,
    pub control_torque: f64,
    pub barrier: f64,
    pub barrier_margin: f64,
    pub track_position: f64,
    pub track_orientation: f64,
    pub track_velocity: f64,
    pub track_joints: f64,
}

impl Default for MissionWeights {
    fn default() -> Self {
        MissionWeights {
            task: 1e3,
            nav: 1e-2,
            nav_attitude: 0.05,
            nav_yaw: 5.0,
            nav_angular_velocity: 0.1,
            control_thrust: 0.1,
            control_torque: 0.02,
            barrier: 1e4,
            barrier_margin: 0.05,
            track_position: 10.0,
            track_orientation: 10.0,
            track_velocity: 1.0,
            track_joints: 5.0,
        }
    }
}

/// MPC window geometry and per-step solver budget.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub nodes: usize,
    pub dt: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        MpcConfig {
            nodes: 35,
            dt: 0.02,
            max_iters: 5,
            tol: 1e-6,
        }
    }
}

/// Offline solve budget.
#[derive(Clone, Debug, Deserialize)]
#[serde(default)]
pub struct OfflineConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            max_iters: 500,
            tol: 1e-7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MissionSpec {
    pub name: String,
    pub dt: f64,
    pub start_translation: Vector3<f64>,
    pub start_joints: DVector<f64>,
    pub phases: Vec<Phase>,
    pub terminal: PhaseTargets,
    pub weights: MissionWeights,
    pub mpc: MpcConfig,
    pub offline: OfflineConfig,
}

impl MissionSpec {
    pub fn total_duration(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Resting state at the mission start.
    pub fn start_state(&self, _model: &RobotModel) -> State {
        State::at_rest(
            Pose::from_translation(self.start_translation),
            self.start_joints.clone(),
        )
    }
}

// --- JSON schema -----------------------------------------------------------

#[derive(Deserialize)]
struct WaypointDoc {
    translation: [f64; 3],
    #[serde(default = "identity_quat")]
    rotation_wxyz: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

#[derive(Deserialize, Default)]
struct TargetsDoc {
    waypoint: Option<WaypointDoc>,
    ee_position: Option<[f64; 3]>,
    pitch: Option<f64>,
    joints: Option<Vec<f64>>,
}

#[derive(Deserialize)]
struct PhaseDoc {
    kind: String,
    duration: f64,
    #[serde(default)]
    targets: TargetsDoc,
}

#[derive(Deserialize)]
struct StartDoc {
    translation: [f64; 3],
    #[serde(default)]
    joints: Vec<f64>,
}

#[derive(Deserialize)]
struct MissionDoc {
    name: String,
    #[serde(default = "default_dt")]
    dt: f64,
    start: StartDoc,
    phases: Vec<PhaseDoc>,
    #[serde(default)]
    terminal: TargetsDoc,
    #[serde(default)]
    weights: MissionWeights,
    #[serde(default)]
    mpc: MpcConfig,
    #[serde(default)]
    offline: OfflineConfig,
}

fn default_dt() -> f64 {
    0.02
}

fn convert_targets(doc: TargetsDoc) -> PhaseTargets {
    PhaseTargets {
        waypoint: doc.waypoint.map(|w| {
            let [qw, qx, qy, qz] = w.rotation_wxyz;
            Pose::new(
                Rotation::from_quaternion(qw, qx, qy, qz),
                Vector3::from(w.translation),
            )
        }),
        ee_position: doc.ee_position.map(Vector3::from),
        pitch: doc.pitch,
        joints: doc.joints.map(DVector::from_vec),
    }
}

/// Parse and validate a mission document.
pub fn load_mission(document: &str) -> Result<MissionSpec, MissionError> {
    let doc: MissionDoc = serde_json::from_str(document)?;
    if doc.phases.is_empty() {
        return Err(MissionError::invalid("phases", "mission has zero phases"));
    }
    if !(doc.dt > 0.0) {
        return Err(MissionError::invalid("dt", "must be positive"));
    }
    let mut phases = Vec::with_capacity(doc.phases.len());
    for (i, p) in doc.phases.into_iter().enumerate() {
        let kind = match p.kind.as_str() {
            "navigation" => NodeKind::Navigation,
            "task" => NodeKind::Task,
            other => {
                return Err(MissionError::invalid(
                    format!("phases[{i}].kind"),
                    format!("expected `navigation` or `task`, got `{other}`"),
                ))
            }
        };
        if !(p.duration > 0.0) {
            return Err(MissionError::invalid(
                format!("phases[{i}].duration"),
                "must be positive",
            ));
        }
        let targets = convert_targets(p.targets);
        if kind == NodeKind::Task && targets.is_empty() {
            return Err(MissionError::invalid(
                format!("phases[{i}].targets"),
                "task phases need at least one target",
            ));
        }
        phases.push(Phase {
            kind,
            duration: p.duration,
            targets,
        });
    }
    let spec = MissionSpec {
        name: doc.name,
        dt: doc.dt,
        start_translation: Vector3::from(doc.start.translation),
        start_joints: DVector::from_vec(doc.start.joints),
        phases,
        terminal: convert_targets(doc.terminal),
        weights: doc.weights,
        mpc: doc.mpc,
        offline: doc.offline,
    };
    if spec.total_duration() + 1e-9 < spec.mpc.nodes as f64 * spec.mpc.dt {
        return Err(MissionError::invalid(
            "phases",
            "total duration shorter than the MPC horizon",
        ));
    }
    Ok(spec)
}

pub fn load_mission_file(path: &std::path::Path) -> Result<MissionSpec, MissionError> {
    load_mission(&std::fs::read_to_string(path)?)
}

// --- Cost assembly ---------------------------------------------------------

/// Diagonal state weight `[pos, ori, joints, lin vel, ang vel, rates]`.
fn state_weight(
    n_joints: usize,
    pos: f64,
    ori: f64,
    joints: f64,
    lin_vel: f64,
    ang_vel: f64,
    rates: f64,
) -> DVector<f64> {
    let nx = 12 + 2 * n_joints;
    let mut w = DVector::zeros(nx);
    for i in 0..3 {
        w[i] = pos;
        w[3 + i] = ori;
        w[6 + n_joints + i] = lin_vel;
        w[9 + n_joints + i] = ang_vel;
    }
    for j in 0..n_joints {
        w[6 + j] = joints;
        w[12 + n_joints + j] = rates;
    }
    w
}

fn barrier_term(model: &RobotModel, weights: &MissionWeights) -> ResidualTerm {
    let n = model.n_joints();
    ResidualTerm::JointBarrier {
        lower: DVector::from_fn(n, |j, _| model.joints[j].angle_limits.0),
        upper: DVector::from_fn(n, |j, _| model.joints[j].angle_limits.1),
        margin: weights.barrier_margin,
        weight: weights.barrier,
    }
}

fn control_weight(model: &RobotModel, weights: &MissionWeights) -> DVector<f64> {
    let mut w = DVector::zeros(model.nu());
    for i in 0..model.n_props() {
        w[i] = weights.control_thrust;
    }
    for j in 0..model.n_joints() {
        w[model.n_props() + j] = weights.control_torque;
    }
    w
}

/// Strong residuals of a task node (also used as terminal cost).
fn task_terms(
    model: &RobotModel,
    mission: &MissionSpec,
    targets: &PhaseTargets,
    start: &State,
) -> Vec<ResidualTerm> {
    let w = &mission.weights;
    let n = model.n_joints();
    let mut terms = Vec::new();
    let reference = State::at_rest(
        targets.waypoint.unwrap_or(start.pose),
        targets.joints.clone().unwrap_or_else(|| start.joints.clone()),
    );
    let pos_w = if targets.waypoint.is_some() { w.task } else { 0.0 };
    let ori_w = if targets.waypoint.is_some() { w.task * 0.1 } else { 0.0 };
    let joint_w = if targets.joints.is_some() { w.task * 0.1 } else { w.nav };
    let vel_w = if targets.waypoint.is_some() { w.task * 0.01 } else { w.nav };
    terms.push(ResidualTerm::StateTracking {
        reference,
        weight: state_weight(n, pos_w, ori_w, joint_w, vel_w, vel_w, vel_w),
    });
    if let Some(target) = targets.ee_position {
        terms.push(ResidualTerm::EePosition {
            target,
            weight: Vector3::from_element(w.task),
        });
    }
    if let Some(pitch) = targets.pitch {
        terms.push(ResidualTerm::BasePitch {
            target: pitch,
            weight: w.task * 0.1,
        });
    }
    terms
}

/// Discretize a mission into a shooting problem over the robot dynamics.
pub fn build_ocp<'m>(
    mission: &MissionSpec,
    model: &'m RobotModel,
) -> Result<ShootingProblem<'m>, MissionError> {
    if mission.start_joints.len() != model.n_joints() {
        return Err(MissionError::invalid(
            "start.joints",
            format!("expected {} entries", model.n_joints()),
        ));
    }
    let start = mission.start_state(model);
    let u_hover = Control::hover(model).as_vector();
    let w = &mission.weights;
    let n = model.n_joints();

    let nav_tracking = ResidualTerm::StateTracking {
        reference: start.clone(),
        weight: {
            let mut wv = state_weight(n, 0.0, w.nav_attitude, w.nav, w.nav, w.nav_angular_velocity, w.nav);
            wv[5] = w.nav_yaw; // body-z rotation component
            wv
        },
    };
    let control_reg = ResidualTerm::ControlReg {
        reference: u_hover,
        weight: control_weight(model, w),
    };
    let barrier = barrier_term(model, w);

    let mut nodes = Vec::new();
    for phase in &mission.phases {
        let count = (phase.duration / mission.dt).round().max(1.0) as usize;
        let cost = match phase.kind {
            NodeKind::Navigation => NodeCost::new(
                NodeKind::Navigation,
                vec![nav_tracking.clone(), control_reg.clone(), barrier.clone()],
            ),
            NodeKind::Task => {
                let mut terms = task_terms(model, mission, &phase.targets, &start);
                terms.push(control_reg.clone());
                terms.push(barrier.clone());
                NodeCost::new(NodeKind::Task, terms)
            }
        };
        nodes.extend(std::iter::repeat_n(
            ProblemNode {
                dt: mission.dt,
                cost,
            },
            count,
        ));
    }

    let terminal_targets = if mission.terminal.is_empty() {
        // Default: come back to rest at the start.
        PhaseTargets {
            waypoint: Some(start.pose),
            joints: Some(start.joints.clone()),
            ..Default::default()
        }
    } else {
        mission.terminal.clone()
    };
    let terminal = NodeCost::new(
        NodeKind::Task,
        task_terms(model, mission, &terminal_targets, &start),
    );

    Ok(ShootingProblem::new(model, start, nodes, terminal))
}

// --- Rail ------------------------------------------------------------------

/// Offline optimal trajectory sampled at uniform `dt`: the reference the MPC
/// runs on.
#[derive(Clone, Debug)]
pub struct Rail {
    pub dt: f64,
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
}

impl Rail {
    /// Reference state at a node index, holding the final state past the end.
    pub fn state_at(&self, index: usize) -> &State {
        self.states.get(index).unwrap_or_else(|| self.states.last().unwrap())
    }

    /// Reference control at a node index, holding the final control.
    pub fn control_at(&self, index: usize) -> &Control {
        self.controls
            .get(index)
            .unwrap_or_else(|| self.controls.last().unwrap())
    }

    /// Nearest rail node for a point in time.
    pub fn index_at(&self, t: f64) -> usize {
        (t / self.dt).round().max(0.0) as usize
    }

    pub fn duration(&self) -> f64 {
        self.controls.len() as f64 * self.dt
    }
}

/// Solve the offline mission OCP and package the result as a rail.
pub fn solve_offline(mission: &MissionSpec, model: &RobotModel) -> Result<Rail, MissionError> {
    let problem = build_ocp(mission, model)?;
    let solver = FddpSolver::new(SolverOptions {
        max_iters: mission.offline.max_iters,
        tol: mission.offline.tol,
        ..Default::default()
    });
    let result = solver.solve(&problem, None, None);
    if !result.converged {
        log::warn!(
            "offline OCP `{}` not converged after {} iterations (cost {:.6}, gap {:.2e})",
            mission.name,
            result.iterations,
            result.cost,
            result.gap_norm
        );
    }
    Ok(Rail {
        dt: mission.dt,
        states: result.xs,
        controls: result
            .us
            .iter()
            .map(|u| Control::from_vector(model.n_props(), u))
            .collect(),
        converged: result.converged,
        cost_trace: result.cost_trace,
    })
}

// --- MPC -------------------------------------------------------------------

/// Sliding-window MPC tracking the rail (Rail-MPC).
pub struct MpcController<'m> {
    pub model: &'m RobotModel,
    pub rail: Rail,
    pub config: MpcConfig,
    pub weights: MissionWeights,
    warm: Option<(usize, SolverResult<State>)>,
}

/// Outcome of one MPC step.
#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub xs: Vec<State>,
    pub us: Vec<Control>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    /// False when the solver made no usable progress and the previous
    /// solution was returned instead.
    pub fresh: bool,
}

impl<'m> MpcController<'m> {
    pub fn new(
        model: &'m RobotModel,
        rail: Rail,
        config: MpcConfig,
        weights: MissionWeights,
    ) -> Self {
        assert!(config.nodes >= 2, "MPC horizon needs at least two nodes");
        MpcController {
            model,
            rail,
            config,
            weights,
            warm: None,
        }
    }

    /// Build the Eq.-(2)-style window problem anchored at rail time `t`.
    pub fn window_problem(&self, x_hat: &State, t: f64) -> ShootingProblem<'m> {
        let i0 = self.rail.index_at(t);
        let n = self.config.nodes;
        let w = &self.weights;
        let wx = state_weight(
            self.model.n_joints(),
            w.track_position,
            w.track_orientation,
            w.track_joints,
            w.track_velocity,
            w.track_velocity,
            w.track_velocity,
        );
        let wu = control_weight(self.model, w);
        let nodes: Vec<ProblemNode> = (0..n)
            .map(|k| {
                let cost = NodeCost::new(
                    NodeKind::Navigation,
                    vec![
                        ResidualTerm::StateTracking {
                            reference: self.rail.state_at(i0 + k).clone(),
                            weight: wx.clone(),
                        },
                        ResidualTerm::ControlReg {
                            reference: self.rail.control_at(i0 + k).as_vector(),
                            weight: wu.clone(),
                        },
                    ],
                );
                ProblemNode {
                    dt: self.config.dt,
                    cost,
                }
            })
            .collect();
        let terminal = NodeCost::new(
            NodeKind::Navigation,
            vec![ResidualTerm::StateTracking {
                reference: self.rail.state_at(i0 + n).clone(),
                weight: &wx * 10.0,
            }],
        );
        ShootingProblem::new(self.model, x_hat.clone(), nodes, terminal)
    }

    /// Solve the window at time `t` from the estimate `x_hat`, warm-starting
    /// from the previous solution shifted by the elapsed nodes.
    pub fn step(&mut self, x_hat: &State, t: f64) -> MpcSolution {
        let i0 = self.rail.index_at(t);
        let n = self.config.nodes;
        let problem = self.window_problem(x_hat, t);
        let solver = FddpSolver::new(SolverOptions {
            max_iters: self.config.max_iters,
            tol: self.config.tol,
            ..Default::default()
        });

        let (x_init, u_init) = match &self.warm {
            Some((i_prev, prev)) if i0 >= *i_prev => {
                let shift = i0 - i_prev;
                let mut xs = Vec::with_capacity(n + 1);
                xs.push(x_hat.clone());
                for k in 1..=n {
                    let idx = (k + shift).min(prev.xs.len() - 1);
                    xs.push(prev.xs[idx].clone());
                }
                let mut us = Vec::with_capacity(n);
                for k in 0..n {
                    let idx = (k + shift).min(prev.us.len() - 1);
                    us.push(prev.us[idx].clone());
                }
                (Some(xs), Some(us))
            }
            _ => (None, None),
        };

        let result = solver.solve(&problem, x_init, u_init);
        let usable = result.cost.is_finite();
        let solution = if usable {
            self.warm = Some((i0, result.clone()));
            MpcSolution {
                xs: result.xs,
                us: result
                    .us
                    .iter()
                    .map(|u| Control::from_vector(self.model.n_props(), u))
                    .collect(),
                cost: result.cost,
                converged: result.converged,
                iterations: result.iterations,
                fresh: true,
            }
        } else if let Some((_, prev)) = &self.warm {
            MpcSolution {
                xs: prev.xs.clone(),
                us: prev
                    .us
                    .iter()
                    .map(|u| Control::from_vector(self.model.n_props(), u))
                    .collect(),
                cost: prev.cost,
                converged: false,
                iterations: 0,
                fresh: false,
            }
        } else {
            let hover = Control::hover(self.model);
            MpcSolution {
                xs: vec![x_hat.clone(); n + 1],
                us: vec![hover; n],
                cost: f64::INFINITY,
                converged: false,
                iterations: 0,
                fresh: false,
            }
        };
        solution
    }

    pub fn reset_warm_start(&mut self) {
        self.warm = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;
    use crate::solver::OcpDef;

    fn reference() -> RobotModel {
        let text = std::fs::read_to_string(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../models/borinot.json"
        ))
        .unwrap();
        load_model(&text).unwrap()
    }

    fn hover_mission_doc() -> &'static str {
        r#"{
            "name": "hover-test",
            "start": {"translation": [0, 0, 1], "joints": [0, 0]},
            "phases": [
                {"kind": "task", "duration": 1.0,
                 "targets": {"waypoint": {"translation": [0, 0, 1]}, "joints": [0, 0]}}
            ],
            "terminal": {"waypoint": {"translation": [0, 0, 1]}, "joints": [0, 0]}
        }"#
    }

    #[test]
    fn node_counts_match_phase_arithmetic() {
        let model = reference();
        let doc = r#"{
            "name": "counts",
            "start": {"translation": [0, 0, 1], "joints": [0, 0]},
            "phases": [{"kind": "navigation", "duration": 1.0}],
            "terminal": {"waypoint": {"translation": [1, 0, 1]}},
            "mpc": {"nodes": 35, "dt": 0.02}
        }"#;
        let mission = load_mission(doc).unwrap();
        let problem = build_ocp(&mission, &model).unwrap();
        assert_eq!(problem.horizon(), 50);
    }

    #[test]
    fn empty_mission_rejected() {
        let doc = r#"{
            "name": "empty",
            "start": {"translation": [0, 0, 1], "joints": [0, 0]},
            "phases": []
        }"#;
        let err = load_mission(doc).unwrap_err();
        assert!(err.to_string().contains("zero phases"), "{err}");
    }

    #[test]
    fn hover_mission_rail_is_stationary_hover() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let rail = solve_offline(&mission, &model).unwrap();
        assert!(rail.converged);
        let hover = model.total_mass() * crate::model::GRAVITY / 6.0;
        for (k, x) in rail.states.iter().enumerate() {
            let err = (x.pose.translation - Vector3::new(0.0, 0.0, 1.0)).norm();
            assert!(err < 1e-4, "node {k}: drift {err}");
        }
        for (k, u) in rail.controls.iter().enumerate() {
            for t in u.thrusts.iter() {
                assert!((t - hover).abs() < 0.02, "node {k}: thrust {t} vs {hover}");
            }
            assert!(u.torques.amax() < 1e-3, "node {k}: torques {:?}", u.torques);
        }
    }

    #[test]
    fn mpc_fixed_point_on_hover_rail() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let rail = solve_offline(&mission, &model).unwrap();
        let u_ref = rail.control_at(0).clone();
        let x0 = rail.state_at(0).clone();
        let mut mpc = MpcController::new(&model, rail, MpcConfig { nodes: 20, ..Default::default() }, MissionWeights::default());
        let sol = mpc.step(&x0, 0.0);
        let du = (&sol.us[0].as_vector() - u_ref.as_vector()).amax();
        assert!(du < 1e-3, "first control deviates from rail by {du}");
    }

    #[test]
    fn mpc_window_past_rail_end_holds_final_state() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let rail = solve_offline(&mission, &model).unwrap();
        let last = rail.states.last().unwrap().clone();
        let mpc = MpcController::new(&model, rail, MpcConfig::default(), MissionWeights::default());
        let problem = mpc.window_problem(&last, 100.0);
        // Every node past the end references the final rail state.
        for node in &problem.nodes {
            match &node.cost.terms[0] {
                ResidualTerm::StateTracking { reference, .. } => {
                    assert!((reference.pose.translation - last.pose.translation).norm() < 1e-12);
                }
                _ => panic!("first term must be state tracking"),
            }
        }
    }

    #[test]
    fn mpc_recovers_from_displacement() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let rail = solve_offline(&mission, &model).unwrap();
        let mut x = rail.state_at(0).clone();
        x.pose.translation.z += 0.1;
        let initial_err = 0.1;
        let mut mpc = MpcController::new(
            &model,
            rail,
            MpcConfig { max_iters: 50, ..Default::default() },
            MissionWeights::default(),
        );
        let sol = mpc.step(&x, 0.0);
        let terminal_err = (sol.xs.last().unwrap().pose.translation - Vector3::new(0.0, 0.0, 1.0)).norm();
        assert!(
            terminal_err < 0.5 * initial_err,
            "window does not contract toward the rail: {terminal_err}"
        );
    }

    #[test]
    fn mpc_problems_carry_only_tracking_and_regularization() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let rail = solve_offline(&mission, &model).unwrap();
        let x0 = rail.state_at(0).clone();
        let mpc = MpcController::new(&model, rail, MpcConfig::default(), MissionWeights::default());
        let problem = mpc.window_problem(&x0, 0.0);
        for node in &problem.nodes {
            assert_eq!(node.cost.terms.len(), 2);
            assert!(matches!(node.cost.terms[0], ResidualTerm::StateTracking { .. }));
            assert!(matches!(node.cost.terms[1], ResidualTerm::ControlReg { .. }));
        }
        assert_eq!(problem.terminal.terms.len(), 1);
    }

    #[test]
    fn window_extraction_is_time_consistent() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let mut rail = solve_offline(&mission, &model).unwrap();
        // Make rail states distinguishable by index.
        for (i, s) in rail.states.iter_mut().enumerate() {
            s.pose.translation.x = i as f64;
        }
        let x0 = rail.state_at(0).clone();
        let mpc = MpcController::new(&model, rail, MpcConfig { nodes: 5, ..Default::default() }, MissionWeights::default());
        let t = 0.2; // node 10
        let problem = mpc.window_problem(&x0, t);
        for (k, node) in problem.nodes.iter().enumerate() {
            match &node.cost.terms[0] {
                ResidualTerm::StateTracking { reference, .. } => {
                    assert_eq!(reference.pose.translation.x, (10 + k) as f64);
                }
                _ => unreachable!(),
            }
        }
    }

    #[test]
    fn warm_start_not_worse_than_cold() {
        let model = reference();
        let mission = load_mission(hover_mission_doc()).unwrap();
        let rail = solve_offline(&mission, &model).unwrap();
        let mut x = rail.state_at(0).clone();
        x.pose.translation.x += 0.05;
        let config = MpcConfig { max_iters: 3, ..Default::default() };
        // Warm: take one step at t=0, then ask for t=0.02 from a detuned state.
        let mut warm_mpc = MpcController::new(&model, rail.clone(), config.clone(), MissionWeights::default());
        warm_mpc.step(&x, 0.0);
        let mut x2 = x.clone();
        x2.pose.translation.z += 0.02;
        let warm = warm_mpc.step(&x2, 0.02);
        let mut cold_mpc = MpcController::new(&model, rail, config, MissionWeights::default());
        let cold = cold_mpc.step(&x2, 0.02);
        assert!(
            warm.cost <= cold.cost + 1e-9,
            "warm {} vs cold {}",
            warm.cost,
            cold.cost
        );
    }
}
