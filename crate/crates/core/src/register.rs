//! Point-based 3D-to-2D registration by triangulation optimization.
//!
//! The objective is the sum over both views of the Frobenius norm of the
//! difference between predicted landmark landing points and the central
//! projections of the posed model landmarks, restricted to landmarks visible
//! in both fields of view. Because symmetric landmarks may be predicted
//! mirrored, the search runs once per mirror variant and keeps the pose with
//! the smallest optimized objective.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{project_point, system_center, DualFluoroSystem, RigidPose};
use crate::landmarks::LandmarkSet3D;
use crate::optim::{levenberg_marquardt, nelder_mead, LmOptions, SimplexOptions};

#[derive(Debug, Error, PartialEq)]
pub enum RegistrationError {
    #[error("only {n_vis} landmarks visible in both views; at least {min} required")]
    TooFewLandmarks { n_vis: usize, min: usize },
    #[error("predicted landmark arrays must match the landmark set size {expected}, got {got}")]
    SizeMismatch { got: usize, expected: usize },
}

/// Minimum common-visible landmarks for a well-posed two-view 6-DOF solve.
pub const MIN_COMMON_VISIBLE: usize = 3;

/// Finite objective value assigned to poses that throw any used landmark
/// into a degenerate projection, letting the simplex retreat.
pub const DEGENERATE_POSE_PENALTY: f64 = 1e6;

/// One predicted landmark on one intensifier: post-undistortion in-plane
/// coordinates (mm) and a field-of-view visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedLandmark {
    pub uv_mm: (f64, f64),
    pub visible: bool,
}

impl PredictedLandmark {
    pub fn invisible() -> Self {
        Self { uv_mm: (0.0, 0.0), visible: false }
    }
}

/// Per-view predicted landmark arrays, dense over the landmark set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedLandmarks {
    pub f1: Vec<PredictedLandmark>,
    pub f2: Vec<PredictedLandmark>,
}

impl PredictedLandmarks {
    pub fn new(f1: Vec<PredictedLandmark>, f2: Vec<PredictedLandmark>) -> Self {
        assert_eq!(f1.len(), f2.len(), "per-view arrays must cover the same landmark set");
        Self { f1, f2 }
    }

    /// Builds dense arrays from sparse (index, uv, visible) rows; missing
    /// indices become invisible entries.
    pub fn from_rows(
        n_landmarks: usize,
        rows_f1: &[(usize, (f64, f64), bool)],
        rows_f2: &[(usize, (f64, f64), bool)],
    ) -> Result<Self, RegistrationError> {
        let mut build = |rows: &[(usize, (f64, f64), bool)]| -> Result<Vec<PredictedLandmark>, RegistrationError> {
            let mut v = vec![PredictedLandmark::invisible(); n_landmarks];
            for &(idx, uv, visible) in rows {
                if idx >= n_landmarks {
                    return Err(RegistrationError::SizeMismatch { got: idx + 1, expected: n_landmarks });
                }
                v[idx] = PredictedLandmark { uv_mm: uv, visible };
            }
            Ok(v)
        };
        Ok(Self { f1: build(rows_f1)?, f2: build(rows_f2)? })
    }

    /// Indices visible in both views.
    pub fn common_visible(&self) -> Vec<usize> {
        self.f1
            .iter()
            .zip(&self.f2)
            .enumerate()
            .filter(|(_, (a, b))| a.visible && b.visible)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn n_vis(&self) -> usize {
        self.common_visible().len()
    }
}

/// The four landmark-mirroring cases, in the order the registration runs
/// them: nothing mirrored, F1 only, F2 only, both views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MirrorVariant {
    None,
    F1Mirrored,
    F2Mirrored,
    BothMirrored,
}

impl MirrorVariant {
    pub const ALL: [MirrorVariant; 4] =
        [MirrorVariant::None, MirrorVariant::F1Mirrored, MirrorVariant::F2Mirrored, MirrorVariant::BothMirrored];

    pub fn mirrors_f1(&self) -> bool {
        matches!(self, MirrorVariant::F1Mirrored | MirrorVariant::BothMirrored)
    }

    pub fn mirrors_f2(&self) -> bool {
        matches!(self, MirrorVariant::F2Mirrored | MirrorVariant::BothMirrored)
    }
}

/// Swaps the predicted coordinates (and visibility flags) of each symmetric
/// pair within the views selected by the variant.
pub fn mirror_landmarks(
    pred: &PredictedLandmarks,
    pairs: &[(usize, usize)],
    variant: MirrorVariant,
) -> PredictedLandmarks {
    let mut out = pred.clone();
    if variant.mirrors_f1() {
        for &(a, b) in pairs {
            out.f1.swap(a, b);
        }
    }
    if variant.mirrors_f2() {
        for &(a, b) in pairs {
            out.f2.swap(a, b);
        }
    }
    out
}

/// Precomputed evaluation state for one objective.
struct Problem<'a> {
    positions: Vec<nalgebra::Point3<f64>>,
    /// Predicted landing points as 3D intensifier-plane coordinates.
    u_f1: Vec<Vector3<f64>>,
    u_f2: Vec<Vector3<f64>>,
    system: &'a DualFluoroSystem,
}

impl<'a> Problem<'a> {
    fn new(
        landmarks: &LandmarkSet3D,
        pred: &PredictedLandmarks,
        system: &'a DualFluoroSystem,
    ) -> Result<Self, RegistrationError> {
        if pred.f1.len() != landmarks.len() {
            return Err(RegistrationError::SizeMismatch { got: pred.f1.len(), expected: landmarks.len() });
        }
        let vis = pred.common_visible();
        if vis.len() < MIN_COMMON_VISIBLE {
            return Err(RegistrationError::TooFewLandmarks { n_vis: vis.len(), min: MIN_COMMON_VISIBLE });
        }
        let positions = vis.iter().map(|&i| landmarks.points[i].position).collect();
        let u_f1 = vis.iter().map(|&i| system.f1.plane_point(pred.f1[i].uv_mm).coords).collect();
        let u_f2 = vis.iter().map(|&i| system.f2.plane_point(pred.f2[i].uv_mm).coords).collect();
        Ok(Self { positions, u_f1, u_f2, system })
    }

    /// The triangulation objective: ||U_F1 - V_F1||_F + ||U_F2 - V_F2||_F.
    fn mu(&self, pose: &RigidPose) -> f64 {
        let m = pose.matrix();
        let mut sq_f1 = 0.0;
        let mut sq_f2 = 0.0;
        for (i, p) in self.positions.iter().enumerate() {
            let world = m.transform_point(p);
            let Ok(v1) = project_point(&self.system.f1, &world) else {
                return DEGENERATE_POSE_PENALTY;
            };
            let Ok(v2) = project_point(&self.system.f2, &world) else {
                return DEGENERATE_POSE_PENALTY;
            };
            sq_f1 += (v1.landing.coords - self.u_f1[i]).norm_squared();
            sq_f2 += (v2.landing.coords - self.u_f2[i]).norm_squared();
        }
        sq_f1.sqrt() + sq_f2.sqrt()
    }

    /// Stacked 3D residuals for the least-squares cross-check path.
    fn residuals(&self, pose: &RigidPose) -> Vec<f64> {
        let m = pose.matrix();
        let mut res = Vec::with_capacity(self.positions.len() * 6);
        for (i, p) in self.positions.iter().enumerate() {
            let world = m.transform_point(p);
            match (project_point(&self.system.f1, &world), project_point(&self.system.f2, &world)) {
                (Ok(v1), Ok(v2)) => {
                    let d1 = v1.landing.coords - self.u_f1[i];
                    let d2 = v2.landing.coords - self.u_f2[i];
                    res.extend_from_slice(&[d1.x, d1.y, d1.z, d2.x, d2.y, d2.z]);
                }
                _ => res.extend_from_slice(&[DEGENERATE_POSE_PENALTY; 6]),
            }
        }
        res
    }
}

/// Evaluates the registration objective at one pose.
pub fn objective_mu(
    pose: &RigidPose,
    landmarks: &LandmarkSet3D,
    pred: &PredictedLandmarks,
    system: &DualFluoroSystem,
) -> Result<f64, RegistrationError> {
    Ok(Problem::new(landmarks, pred, system)?.mu(pose))
}

/// Outcome of one pose search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseOptimization {
    pub pose: RigidPose,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn simplex_options() -> SimplexOptions {
    SimplexOptions {
        // 5 deg on angles, 20 mm on translations.
        initial_steps: vec![5.0, 5.0, 5.0, 20.0, 20.0, 20.0],
        max_iterations: 50_000,
        diameter_tol: 1e-6,
        value_tol: 1e-9,
    }
}

/// Derivative-free simplex search over the six pose DOFs.
pub fn optimize_pose<F: Fn(&RigidPose) -> f64>(objective: F, init: &RigidPose) -> PoseOptimization {
    let result = nelder_mead(|x| objective(&RigidPose::from_vector(x)), &init.to_vector(), &simplex_options());
    PoseOptimization {
        pose: RigidPose::from_vector(&result.x),
        value: result.value,
        iterations: result.iterations,
        converged: result.converged,
    }
}

/// Euclidean residual of one landmark on each view at the final pose, mm.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LandmarkResidual {
    /// 1-based landmark number, as in prediction files.
    pub landmark: usize,
    pub f1_mm: f64,
    pub f2_mm: f64,
}

/// Final registration outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: RigidPose,
    /// Optimized objective of the winning variant, mm.
    pub objective_mm: f64,
    pub variant: MirrorVariant,
    /// Optimized objective per variant, in [`MirrorVariant::ALL`] order
    /// (infinite when a variant had too few common-visible landmarks).
    pub variant_objectives: [f64; 4],
    pub n_vis: usize,
    pub residuals: Vec<LandmarkResidual>,
    pub iterations: usize,
    pub converged: bool,
}

/// Runs the four-variant registration: one simplex search per mirror variant,
/// each initialized at theta = 0 and tau at the system center, returning the
/// variant with the minimal optimized objective.
pub fn register(
    landmarks: &LandmarkSet3D,
    pred: &PredictedLandmarks,
    system: &DualFluoroSystem,
) -> Result<RegistrationResult, RegistrationError> {
    // Surface the input contract violation before running any variant.
    let n_vis_input = pred.n_vis();
    if n_vis_input < MIN_COMMON_VISIBLE {
        return Err(RegistrationError::TooFewLandmarks { n_vis: n_vis_input, min: MIN_COMMON_VISIBLE });
    }
    if pred.f1.len() != landmarks.len() {
        return Err(RegistrationError::SizeMismatch { got: pred.f1.len(), expected: landmarks.len() });
    }

    let tau0 = system_center(system);
    let init = RigidPose::new([0.0; 3], [tau0.x, tau0.y, tau0.z]);

    let runs: Vec<Option<(PoseOptimization, PredictedLandmarks)>> = MirrorVariant::ALL
        .par_iter()
        .map(|&variant| {
            let mirrored = mirror_landmarks(pred, &landmarks.symmetric_pairs, variant);
            let problem = Problem::new(landmarks, &mirrored, system).ok()?;
            Some((optimize_pose(|pose| problem.mu(pose), &init), mirrored))
        })
        .collect();

    let mut variant_objectives = [f64::INFINITY; 4];
    for (slot, run) in variant_objectives.iter_mut().zip(&runs) {
        if let Some((opt, _)) = run {
            *slot = opt.value;
        }
    }

    // Strictly-smaller comparison over the fixed variant order makes the
    // selection independent of how the four runs were scheduled.
    let mut best: Option<usize> = None;
    for (i, run) in runs.iter().enumerate() {
        if run.is_some() && best.map_or(true, |b| variant_objectives[i] < variant_objectives[b]) {
            best = Some(i);
        }
    }
    let Some(best) = best else {
        return Err(RegistrationError::TooFewLandmarks { n_vis: 0, min: MIN_COMMON_VISIBLE });
    };
    let (opt, mirrored) = runs[best].as_ref().unwrap();

    let problem = Problem::new(landmarks, mirrored, system)?;
    let m = opt.pose.matrix();
    let vis = mirrored.common_visible();
    let residuals = vis
        .iter()
        .enumerate()
        .map(|(row, &i)| {
            let world = m.transform_point(&landmarks.points[i].position);
            let f1_mm = project_point(&system.f1, &world)
                .map(|p| (p.landing.coords - problem.u_f1[row]).norm())
                .unwrap_or(f64::INFINITY);
            let f2_mm = project_point(&system.f2, &world)
                .map(|p| (p.landing.coords - problem.u_f2[row]).norm())
                .unwrap_or(f64::INFINITY);
            LandmarkResidual { landmark: i + 1, f1_mm, f2_mm }
        })
        .collect();

    Ok(RegistrationResult {
        pose: opt.pose,
        objective_mm: opt.value,
        variant: MirrorVariant::ALL[best],
        variant_objectives,
        n_vis: vis.len(),
        residuals,
        iterations: opt.iterations,
        converged: opt.converged,
    })
}

/// Squared-residual Levenberg-Marquardt refinement over the same landing-point
/// residuals; a cross-check for the simplex path. The reported value is the
/// plain objective recomputed at the refined pose.
pub fn refine_pose_lm(
    landmarks: &LandmarkSet3D,
    pred: &PredictedLandmarks,
    system: &DualFluoroSystem,
    init: &RigidPose,
) -> Result<PoseOptimization, RegistrationError> {
    let problem = Problem::new(landmarks, pred, system)?;
    let result = levenberg_marquardt(
        |x| problem.residuals(&RigidPose::from_vector(x)),
        &init.to_vector(),
        &LmOptions::default(),
    );
    let pose = RigidPose::from_vector(&result.x);
    let value = problem.mu(&pose);
    Ok(PoseOptimization { pose, value, iterations: result.iterations, converged: result.converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom;
    use approx::assert_relative_eq;

    fn setup() -> (LandmarkSet3D, DualFluoroSystem) {
        (phantom::shell_landmarks(), phantom::dual_system(60.0))
    }

    fn truth_pose(system: &DualFluoroSystem) -> RigidPose {
        let c = system_center(system);
        RigidPose::new([12.0, -18.0, 25.0], [c.x + 8.0, c.y - 5.0, c.z + 10.0])
    }

    #[test]
    fn objective_zero_at_truth() {
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &pose);
        assert_eq!(pred.n_vis(), landmarks.len());
        let mu = objective_mu(&pose, &landmarks, &pred, &system).unwrap();
        assert!(mu <= 1e-9, "mu {mu}");
    }

    #[test]
    fn objective_positive_off_truth() {
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &pose);
        let shifted = RigidPose::new(pose.theta, [pose.tau[0] + 1.0, pose.tau[1], pose.tau[2]]);
        let mu = objective_mu(&shifted, &landmarks, &pred, &system).unwrap();
        assert!(mu > 0.1, "mu {mu}");
    }

    #[test]
    fn objective_matches_independent_frobenius_oracle() {
        use nalgebra::DMatrix;
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &pose);
        let eval_pose = RigidPose::new([5.0, 3.0, -7.0], {
            let c = system_center(&system);
            [c.x - 4.0, c.y + 6.0, c.z - 12.0]
        });
        let mu = objective_mu(&eval_pose, &landmarks, &pred, &system).unwrap();

        // Oracle: assemble the n_vis x 3 matrices and take nalgebra's norms.
        let vis = pred.common_visible();
        let m = eval_pose.matrix();
        let mut frob_total = 0.0;
        for (view, geom) in [(&pred.f1, &system.f1), (&pred.f2, &system.f2)] {
            let mut diff = DMatrix::zeros(vis.len(), 3);
            for (row, &i) in vis.iter().enumerate() {
                let u3 = geom.plane_point(view[i].uv_mm);
                let v3 = crate::geometry::project_point(geom, &m.transform_point(&landmarks.points[i].position))
                    .unwrap()
                    .landing;
                for c in 0..3 {
                    diff[(row, c)] = u3[c] - v3[c];
                }
            }
            frob_total += diff.norm();
        }
        assert_relative_eq!(mu, frob_total, epsilon = 1e-12 * frob_total.max(1.0));
    }

    #[test]
    fn too_few_landmarks_rejected() {
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let mut pred = phantom::synth_predictions(&landmarks, &system, &pose);
        for lm in pred.f1.iter_mut().skip(2) {
            lm.visible = false;
        }
        assert_eq!(
            objective_mu(&pose, &landmarks, &pred, &system),
            Err(RegistrationError::TooFewLandmarks { n_vis: 2, min: 3 })
        );
        assert!(matches!(
            register(&landmarks, &pred, &system),
            Err(RegistrationError::TooFewLandmarks { .. })
        ));
    }

    #[test]
    fn degenerate_pose_gets_penalty() {
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &pose);
        // Drop the model far behind the F1 source.
        let behind = RigidPose::new([0.0; 3], [0.0, 0.0, 5000.0]);
        let mu = objective_mu(&behind, &landmarks, &pred, &system).unwrap();
        assert_eq!(mu, DEGENERATE_POSE_PENALTY);
    }

    #[test]
    fn mirror_none_is_identity_and_involution() {
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &pose);
        let pairs = &landmarks.symmetric_pairs;

        assert_eq!(mirror_landmarks(&pred, pairs, MirrorVariant::None), pred);
        for variant in [MirrorVariant::F1Mirrored, MirrorVariant::F2Mirrored, MirrorVariant::BothMirrored] {
            let twice = mirror_landmarks(&mirror_landmarks(&pred, pairs, variant), pairs, variant);
            assert_eq!(twice, pred, "variant {variant:?} is not an involution");
        }
    }

    #[test]
    fn both_mirrored_touches_26_entries_per_view() {
        let (landmarks, system) = setup();
        let pose = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &pose);
        let swapped = mirror_landmarks(&pred, &landmarks.symmetric_pairs, MirrorVariant::BothMirrored);
        let changed_f1 = pred.f1.iter().zip(&swapped.f1).filter(|(a, b)| a != b).count();
        let changed_f2 = pred.f2.iter().zip(&swapped.f2).filter(|(a, b)| a != b).count();
        assert_eq!(changed_f1, 26);
        assert_eq!(changed_f2, 26);
    }

    #[test]
    fn register_recovers_pose_and_variant() {
        let (landmarks, system) = setup();
        let truth = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &truth);

        let result = register(&landmarks, &pred, &system).unwrap();
        assert_eq!(result.variant, MirrorVariant::None);
        assert!(result.objective_mm <= 1e-6, "mu {}", result.objective_mm);
        let err = crate::metrics::dof_errors(&truth, &result.pose);
        assert!(err.eps_theta_deg <= 1e-3, "theta err {}", err.eps_theta_deg);
        assert!(err.eps_tau_mm <= 1e-3, "tau err {}", err.eps_tau_mm);
        assert_eq!(result.n_vis, 33);
        assert_eq!(result.residuals.len(), 33);
    }

    #[test]
    fn register_detects_mirrored_inputs() {
        let (landmarks, system) = setup();
        let truth = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &truth);

        for variant in [MirrorVariant::F1Mirrored, MirrorVariant::BothMirrored] {
            let corrupted = mirror_landmarks(&pred, &landmarks.symmetric_pairs, variant);
            let result = register(&landmarks, &corrupted, &system).unwrap();
            assert_eq!(result.variant, variant);
            let err = crate::metrics::dof_errors(&truth, &result.pose);
            assert!(err.eps_theta_deg <= 1e-3 && err.eps_tau_mm <= 1e-3);
        }
    }

    #[test]
    fn dropping_one_landmark_barely_moves_the_pose() {
        let (landmarks, system) = setup();
        let truth = truth_pose(&system);
        let mut pred = phantom::synth_predictions(&landmarks, &system, &truth);
        // Work on a 10-landmark problem.
        for i in 10..landmarks.len() {
            pred.f1[i].visible = false;
            pred.f2[i].visible = false;
        }
        let full = register(&landmarks, &pred, &system).unwrap();
        let mut dropped = pred.clone();
        dropped.f1[4].visible = false;
        dropped.f2[4].visible = false;
        let partial = register(&landmarks, &dropped, &system).unwrap();
        let err = crate::metrics::dof_errors(&full.pose, &partial.pose);
        assert!(err.eps_theta_deg < 1e-3, "theta shift {}", err.eps_theta_deg);
        assert!(err.eps_tau_mm < 1e-3, "tau shift {}", err.eps_tau_mm);
    }

    #[test]
    fn lm_cross_check_agrees_with_simplex() {
        let (landmarks, system) = setup();
        let truth = truth_pose(&system);
        let pred = phantom::synth_predictions(&landmarks, &system, &truth);
        let c = system_center(&system);
        let init = RigidPose::new([0.0; 3], [c.x, c.y, c.z]);
        let lm = refine_pose_lm(&landmarks, &pred, &system, &init).unwrap();
        let err = crate::metrics::dof_errors(&truth, &lm.pose);
        assert!(err.eps_theta_deg <= 1e-3, "theta err {}", err.eps_theta_deg);
        assert!(err.eps_tau_mm <= 1e-3, "tau err {}", err.eps_tau_mm);
        assert!(lm.value <= 1e-6);
    }
}
