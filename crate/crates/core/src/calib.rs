//! Intensifier distortion correction and dual-fluoroscope pose calibration.
//!
//! Distortion is modeled as two bivariate polynomials of total degree <= 5
//! (21 monomials each) mapping observed (distorted) coordinates to ideal
//! coordinates, fitted from a bead-grid calibration plate. The relative pose
//! of the two fluoroscopes is recovered from a four-bead source alignment
//! tool by nonlinear least squares over 12 unknowns (F2 pose + tool pose)
//! against 16 reprojection residuals.

use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3, Point2, Point3, Vector3};
use thiserror::Error;

use crate::geometry::{
    matrix_to_pose, pose_to_matrix, project_point, DualFluoroSystem, FluoroscopeGeometry, RigidPose,
};
use crate::img::GrayImage;
use crate::optim::{levenberg_marquardt, LmOptions};

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("detected {found} beads, expected {expected}")]
    TooFewBeads { found: usize, expected: usize },
    #[error("bead grid needs matching ideal/observed counts of at least {min}, got {ideal}/{observed}")]
    BadGrid { ideal: usize, observed: usize, min: usize },
    #[error("design matrix is numerically rank-deficient")]
    RankDeficient,
    #[error("optimizer exhausted its iteration budget without reducing the residual")]
    NonConvergence,
    #[error("alignment tool beads are degenerate (coplanar or coincident)")]
    DegenerateTool,
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Number of bivariate monomials of total degree <= 5.
pub const POLY_TERMS: usize = 21;
/// Minimum bead correspondences for a degree-5 per-coordinate fit.
pub const MIN_BEADS: usize = POLY_TERMS;

/// Ideal/observed bead correspondences (mm), matched by index.
#[derive(Debug, Clone)]
pub struct BeadGrid {
    pub ideal: Vec<Point2<f64>>,
    pub observed: Vec<Point2<f64>>,
}

impl BeadGrid {
    pub fn new(ideal: Vec<Point2<f64>>, observed: Vec<Point2<f64>>) -> Result<Self, CalibError> {
        if ideal.len() != observed.len() || ideal.len() < MIN_BEADS {
            return Err(CalibError::BadGrid { ideal: ideal.len(), observed: observed.len(), min: MIN_BEADS });
        }
        Ok(Self { ideal, observed })
    }
}

/// Affine input conditioning used before polynomial evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNormalization {
    pub center: (f64, f64),
    pub scale: (f64, f64),
}

impl InputNormalization {
    fn apply(&self, p: &Point2<f64>) -> (f64, f64) {
        ((p.x - self.center.0) * self.scale.0, (p.y - self.center.1) * self.scale.1)
    }
}

/// Fitted observed->ideal distortion field.
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionModel {
    /// Coefficients for the output x (u) coordinate over the monomial basis.
    pub coeffs_u: Vec<f64>,
    /// Coefficients for the output y (v) coordinate.
    pub coeffs_v: Vec<f64>,
    pub normalization: InputNormalization,
    /// Convex hull of the observed beads expanded 5%; points outside are
    /// flagged as extrapolated.
    pub region: Vec<Point2<f64>>,
}

/// Monomial exponents in basis order: total degree 0..=5, x-power descending
/// within each degree.
pub fn monomial_exponents() -> Vec<(u32, u32)> {
    let mut exps = Vec::with_capacity(POLY_TERMS);
    for degree in 0..=5u32 {
        for px in (0..=degree).rev() {
            exps.push((px, degree - px));
        }
    }
    exps
}

fn basis_row(x: f64, y: f64, exps: &[(u32, u32)]) -> Vec<f64> {
    exps.iter().map(|&(px, py)| x.powi(px as i32) * y.powi(py as i32)).collect()
}

/// Result of a distortion fit.
#[derive(Debug, Clone)]
pub struct DistortionFit {
    pub model: DistortionModel,
    /// RMS over all scalar residual coordinates, mm.
    pub rms_mm: f64,
}

/// Least-squares fit of the observed->ideal mapping over the degree-5 basis
/// with affine input conditioning.
pub fn fit_distortion(grid: &BeadGrid) -> Result<DistortionFit, CalibError> {
    let n = grid.observed.len();
    let (min_x, max_x) = min_max(grid.observed.iter().map(|p| p.x));
    let (min_y, max_y) = min_max(grid.observed.iter().map(|p| p.y));
    if max_x - min_x <= 0.0 || max_y - min_y <= 0.0 {
        return Err(CalibError::RankDeficient);
    }
    let normalization = InputNormalization {
        center: ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0),
        scale: (2.0 / (max_x - min_x), 2.0 / (max_y - min_y)),
    };

    let exps = monomial_exponents();
    let mut design = DMatrix::zeros(n, POLY_TERMS);
    for (i, obs) in grid.observed.iter().enumerate() {
        let (x, y) = normalization.apply(obs);
        for (j, v) in basis_row(x, y, &exps).into_iter().enumerate() {
            design[(i, j)] = v;
        }
    }
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > smax * 1e-12).count();
    if rank < POLY_TERMS {
        return Err(CalibError::RankDeficient);
    }
    let rhs_u = DVector::from_iterator(n, grid.ideal.iter().map(|p| p.x));
    let rhs_v = DVector::from_iterator(n, grid.ideal.iter().map(|p| p.y));
    let coeffs_u = svd.solve(&rhs_u, smax * 1e-12).map_err(|_| CalibError::RankDeficient)?;
    let coeffs_v = svd.solve(&rhs_v, smax * 1e-12).map_err(|_| CalibError::RankDeficient)?;

    let mut sum_sq = 0.0;
    for (i, ideal) in grid.ideal.iter().enumerate() {
        let row = design.row(i);
        let u: f64 = row.iter().zip(coeffs_u.iter()).map(|(a, b)| a * b).sum();
        let v: f64 = row.iter().zip(coeffs_v.iter()).map(|(a, b)| a * b).sum();
        sum_sq += (u - ideal.x).powi(2) + (v - ideal.y).powi(2);
    }
    let rms_mm = (sum_sq / (2 * n) as f64).sqrt();

    let region = expand_hull(&convex_hull(&grid.observed), 1.05);
    Ok(DistortionFit {
        model: DistortionModel {
            coeffs_u: coeffs_u.iter().copied().collect(),
            coeffs_v: coeffs_v.iter().copied().collect(),
            normalization,
            region,
        },
        rms_mm,
    })
}

/// A corrected point plus an extrapolation warning flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UndistortedPoint {
    pub point: Point2<f64>,
    /// Set when the input fell outside the calibrated region (the result is
    /// still returned).
    pub extrapolated: bool,
}

/// Evaluates the distortion polynomials at each point.
pub fn undistort_points(model: &DistortionModel, points: &[Point2<f64>]) -> Vec<UndistortedPoint> {
    let exps = monomial_exponents();
    points
        .iter()
        .map(|p| {
            let (x, y) = model.normalization.apply(p);
            let row = basis_row(x, y, &exps);
            let u: f64 = row.iter().zip(&model.coeffs_u).map(|(a, b)| a * b).sum();
            let v: f64 = row.iter().zip(&model.coeffs_v).map(|(a, b)| a * b).sum();
            UndistortedPoint {
                point: Point2::new(u, v),
                extrapolated: !point_in_convex_polygon(p, &model.region),
            }
        })
        .collect()
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Andrew monotone chain; returns counter-clockwise hull vertices.
pub fn convex_hull(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut pts: Vec<Point2<f64>> = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| a.x == b.x && a.y == b.y);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &Point2<f64>, a: &Point2<f64>, b: &Point2<f64>| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut lower: Vec<Point2<f64>> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<Point2<f64>> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn expand_hull(hull: &[Point2<f64>], factor: f64) -> Vec<Point2<f64>> {
    if hull.is_empty() {
        return Vec::new();
    }
    let cx = hull.iter().map(|p| p.x).sum::<f64>() / hull.len() as f64;
    let cy = hull.iter().map(|p| p.y).sum::<f64>() / hull.len() as f64;
    hull.iter()
        .map(|p| Point2::new(cx + (p.x - cx) * factor, cy + (p.y - cy) * factor))
        .collect()
}

fn point_in_convex_polygon(p: &Point2<f64>, hull: &[Point2<f64>]) -> bool {
    if hull.len() < 3 {
        return false;
    }
    for i in 0..hull.len() {
        let a = &hull[i];
        let b = &hull[(i + 1) % hull.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if cross < -1e-12 {
            return false;
        }
    }
    true
}

/// Blob-detection thresholds for [`detect_beads`].
#[derive(Debug, Clone)]
pub struct BeadDetection {
    /// Pixels at or above this intensity belong to a blob.
    pub threshold: f64,
    /// Connected-component area filters, pixels.
    pub min_area: usize,
    pub max_area: usize,
}

/// Finds bead centroids in a grayscale image and orders them to match the
/// ideal lattice by nearest-ideal assignment. Coordinates are 1-based pixel
/// centers, like landmark coordinates.
pub fn detect_beads(
    image: &GrayImage,
    detection: &BeadDetection,
    ideal_px: &[Point2<f64>],
) -> Result<Vec<Point2<f64>>, CalibError> {
    let centroids = blob_centroids(image, detection);
    if centroids.len() < ideal_px.len() {
        return Err(CalibError::TooFewBeads { found: centroids.len(), expected: ideal_px.len() });
    }
    // Globally greedy nearest assignment: sort all (ideal, centroid) pairs by
    // distance and take each ideal/centroid at most once.
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(ideal_px.len() * centroids.len());
    for (i, ideal) in ideal_px.iter().enumerate() {
        for (j, c) in centroids.iter().enumerate() {
            pairs.push(((ideal - c).norm_squared(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut ideal_taken = vec![false; ideal_px.len()];
    let mut centroid_taken = vec![false; centroids.len()];
    let mut out = vec![Point2::origin(); ideal_px.len()];
    let mut assigned = 0;
    for (_, i, j) in pairs {
        if ideal_taken[i] || centroid_taken[j] {
            continue;
        }
        ideal_taken[i] = true;
        centroid_taken[j] = true;
        out[i] = centroids[j];
        assigned += 1;
        if assigned == ideal_px.len() {
            break;
        }
    }
    Ok(out)
}

/// Intensity-weighted centroids of thresholded connected components
/// (8-connectivity) passing the area filters.
fn blob_centroids(image: &GrayImage, detection: &BeadDetection) -> Vec<Point2<f64>> {
    let (w, h) = (image.width, image.height);
    let mut visited = vec![false; w * h];
    let mut centroids = Vec::new();
    let mut stack = Vec::new();
    for start in 0..w * h {
        if visited[start] || (image.pixels[start] as f64) < detection.threshold {
            continue;
        }
        stack.push(start);
        visited[start] = true;
        let mut area = 0usize;
        let mut wsum = 0.0;
        let mut ux = 0.0;
        let mut uy = 0.0;
        while let Some(i) = stack.pop() {
            area += 1;
            let weight = image.pixels[i] as f64;
            let (x, y) = (i % w, i / w);
            wsum += weight;
            ux += weight * (x as f64 + 1.0);
            uy += weight * (y as f64 + 1.0);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    if !visited[ni] && (image.pixels[ni] as f64) >= detection.threshold {
                        visited[ni] = true;
                        stack.push(ni);
                    }
                }
            }
        }
        if area >= detection.min_area && area <= detection.max_area && wsum > 0.0 {
            centroids.push(Point2::new(ux / wsum, uy / wsum));
        }
    }
    centroids
}

/// Four-bead source alignment tool: bead positions in the tool frame plus
/// their observed intensifier coordinates in each view (mm).
#[derive(Debug, Clone)]
pub struct AlignmentTool {
    pub beads_tool_frame: [Point3<f64>; 4],
    pub observed_f1: [(f64, f64); 4],
    pub observed_f2: [(f64, f64); 4],
}

impl AlignmentTool {
    pub fn validate(&self) -> Result<(), CalibError> {
        let b = &self.beads_tool_frame;
        let volume = (b[1] - b[0]).cross(&(b[2] - b[0])).dot(&(b[3] - b[0])).abs() / 6.0;
        if volume < 1e-6 {
            return Err(CalibError::DegenerateTool);
        }
        Ok(())
    }
}

/// Pose of a fluoroscope's canonical local frame (intensifier center at the
/// origin, u/v along x/y) in the global frame.
fn fluoro_pose(f: &FluoroscopeGeometry) -> (RigidPose, Vector3<f64>) {
    let r = Matrix3::from_columns(&[f.axis_u.into_inner(), f.axis_v.into_inner(), f.normal().into_inner()]);
    let mut m = nalgebra::Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&f.intensifier_center.coords);
    let source_local = r.transpose() * (f.source - f.intensifier_center);
    (matrix_to_pose(&m), source_local)
}

/// Rebuilds a fluoroscope from its local layout and a pose.
fn place_fluoro(template: &FluoroscopeGeometry, source_local: &Vector3<f64>, pose: &RigidPose) -> FluoroscopeGeometry {
    let m = pose_to_matrix(pose);
    let r = m.fixed_view::<3, 3>(0, 0).into_owned();
    let t = m.fixed_view::<3, 1>(0, 3).into_owned();
    FluoroscopeGeometry {
        source: Point3::from(r * source_local + t),
        intensifier_center: Point3::from(t),
        axis_u: nalgebra::Unit::new_normalize(r.column(0).into_owned()),
        axis_v: nalgebra::Unit::new_normalize(r.column(1).into_owned()),
        ..template.clone()
    }
}

/// Result of a dual-pose calibration run.
#[derive(Debug, Clone)]
pub struct DualPoseCalibration {
    pub system: DualFluoroSystem,
    pub tool_pose: RigidPose,
    /// RMS over all scalar reprojection residuals, mm.
    pub rms_mm: f64,
    /// Per-bead Euclidean reprojection error (mm) on each view.
    pub per_bead_mm: [(f64, f64); 4],
    pub iterations: usize,
    pub converged: bool,
}

const PROJECTION_PENALTY: f64 = 1e4;

fn tool_residuals(
    tool: &AlignmentTool,
    f1: &FluoroscopeGeometry,
    f2: &FluoroscopeGeometry,
    tool_pose: &RigidPose,
) -> Vec<f64> {
    let m = pose_to_matrix(tool_pose);
    let mut res = Vec::with_capacity(16);
    for (i, bead) in tool.beads_tool_frame.iter().enumerate() {
        let world = m.transform_point(bead);
        for (geom, obs) in [(f1, tool.observed_f1[i]), (f2, tool.observed_f2[i])] {
            match project_point(geom, &world) {
                Ok(p) => {
                    res.push(p.uv.0 - obs.0);
                    res.push(p.uv.1 - obs.1);
                }
                Err(_) => {
                    res.push(PROJECTION_PENALTY);
                    res.push(PROJECTION_PENALTY);
                }
            }
        }
    }
    res
}

/// Jointly optimizes the F2 pose (relative to the F1-anchored global frame)
/// and the 6-DOF tool pose, minimizing squared 2D reprojection error of the
/// four beads on both intensifiers. Source-to-intensifier layouts are taken
/// from `initial` and held fixed; only the 12 pose unknowns move.
pub fn calibrate_dual_pose(tool: &AlignmentTool, initial: &DualFluoroSystem) -> Result<DualPoseCalibration, CalibError> {
    tool.validate()?;
    let (f2_pose0, f2_source_local) = fluoro_pose(&initial.f2);
    // The tool initializer only needs to be in the optimization basin; the
    // system center is the natural place to look for it.
    let tool_pose0 = RigidPose::new([0.0; 3], crate::geometry::system_center(initial).coords.into());

    let mut x0 = Vec::with_capacity(12);
    x0.extend_from_slice(&f2_pose0.to_vector());
    x0.extend_from_slice(&tool_pose0.to_vector());

    let f1 = initial.f1.clone();
    let residuals = |x: &[f64]| -> Vec<f64> {
        let f2 = place_fluoro(&initial.f2, &f2_source_local, &RigidPose::from_vector(&x[0..6]));
        tool_residuals(tool, &f1, &f2, &RigidPose::from_vector(&x[6..12]))
    };

    let opts = LmOptions { max_iterations: 400, ..Default::default() };
    let result = levenberg_marquardt(residuals, &x0, &opts);
    if !result.converged && result.cost >= result.initial_cost {
        return Err(CalibError::NonConvergence);
    }

    let f2_pose = RigidPose::from_vector(&result.x[0..6]);
    let tool_pose = RigidPose::from_vector(&result.x[6..12]);
    let f2 = place_fluoro(&initial.f2, &f2_source_local, &f2_pose);
    let final_res = tool_residuals(tool, &f1, &f2, &tool_pose);
    let rms_mm = (final_res.iter().map(|r| r * r).sum::<f64>() / final_res.len() as f64).sqrt();
    let mut per_bead_mm = [(0.0, 0.0); 4];
    for i in 0..4 {
        let f1_err = (final_res[4 * i].powi(2) + final_res[4 * i + 1].powi(2)).sqrt();
        let f2_err = (final_res[4 * i + 2].powi(2) + final_res[4 * i + 3].powi(2)).sqrt();
        per_bead_mm[i] = (f1_err, f2_err);
    }
    // Keep the recovered system in the F1-anchored frame.
    let system = DualFluoroSystem::new(f1, f2).map_err(|e| CalibError::Malformed(e.to_string()))?;
    Ok(DualPoseCalibration {
        system,
        tool_pose,
        rms_mm,
        per_bead_mm,
        iterations: result.iterations,
        converged: result.converged,
    })
}

/// Per-bead Euclidean reprojection errors (mm per view) of a tool's observed
/// coordinates against fixed fluoroscope geometry and tool pose. The
/// attribution diagnostic: with a trusted calibration, a corrupted bead
/// observation shows up on exactly that bead.
pub fn tool_reprojection_report(
    tool: &AlignmentTool,
    system: &DualFluoroSystem,
    tool_pose: &RigidPose,
) -> [(f64, f64); 4] {
    let res = tool_residuals(tool, &system.f1, &system.f2, tool_pose);
    let mut per_bead = [(0.0, 0.0); 4];
    for (i, entry) in per_bead.iter_mut().enumerate() {
        *entry = (
            (res[4 * i].powi(2) + res[4 * i + 1].powi(2)).sqrt(),
            (res[4 * i + 2].powi(2) + res[4 * i + 3].powi(2)).sqrt(),
        );
    }
    per_bead
}

/// Versioned distortion-model file: normalization, 2x21 coefficients, and the
/// calibrated-region polygon.
pub fn format_distortion_file(model: &DistortionModel) -> String {
    let mut s = String::from("dualfluoro-distortion v1\n");
    s.push_str(&format!("center {} {}\n", model.normalization.center.0, model.normalization.center.1));
    s.push_str(&format!("scale {} {}\n", model.normalization.scale.0, model.normalization.scale.1));
    let join = |c: &[f64]| c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
    s.push_str(&format!("coeffs_u {}\n", join(&model.coeffs_u)));
    s.push_str(&format!("coeffs_v {}\n", join(&model.coeffs_v)));
    s.push_str(&format!("region {}\n", model.region.len()));
    for p in &model.region {
        s.push_str(&format!("vertex {} {}\n", p.x, p.y));
    }
    s
}

pub fn parse_distortion_file(text: &str) -> Result<DistortionModel, CalibError> {
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some(l) if l.trim() == "dualfluoro-distortion v1" => {}
        other => return Err(CalibError::Malformed(format!("expected 'dualfluoro-distortion v1', got {other:?}"))),
    }
    let mut center = None;
    let mut scale = None;
    let mut coeffs_u = None;
    let mut coeffs_v = None;
    let mut region: Vec<Point2<f64>> = Vec::new();
    for line in lines {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap();
        let vals: Vec<f64> = it
            .map(|t| t.parse::<f64>().map_err(|_| CalibError::Malformed(format!("bad number {t:?}"))))
            .collect::<Result<_, _>>()?;
        match key {
            "center" if vals.len() == 2 => center = Some((vals[0], vals[1])),
            "scale" if vals.len() == 2 => scale = Some((vals[0], vals[1])),
            "coeffs_u" if vals.len() == POLY_TERMS => coeffs_u = Some(vals),
            "coeffs_v" if vals.len() == POLY_TERMS => coeffs_v = Some(vals),
            "region" if vals.len() == 1 => {}
            "vertex" if vals.len() == 2 => region.push(Point2::new(vals[0], vals[1])),
            other => return Err(CalibError::Malformed(format!("unexpected line {other:?}"))),
        }
    }
    Ok(DistortionModel {
        coeffs_u: coeffs_u.ok_or_else(|| CalibError::Malformed("missing coeffs_u".into()))?,
        coeffs_v: coeffs_v.ok_or_else(|| CalibError::Malformed("missing coeffs_v".into()))?,
        normalization: InputNormalization {
            center: center.ok_or_else(|| CalibError::Malformed("missing center".into()))?,
            scale: scale.ok_or_else(|| CalibError::Malformed("missing scale".into()))?,
        },
        region,
    })
}

pub fn read_distortion_file<P: AsRef<Path>>(path: P) -> Result<DistortionModel, CalibError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibError::Io(e.to_string()))?;
    parse_distortion_file(&text)
}

pub fn write_distortion_file<P: AsRef<Path>>(path: P, model: &DistortionModel) -> Result<(), CalibError> {
    std::fs::write(path, format_distortion_file(model)).map_err(|e| CalibError::Io(e.to_string()))
}

/// Bead table I/O: lines of `index u v`, 1-based indices, mm (or px) units.
pub fn parse_bead_file(text: &str) -> Result<Vec<Point2<f64>>, CalibError> {
    let mut rows: Vec<(usize, Point2<f64>)> = Vec::new();
    for line in text.lines() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = t.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(CalibError::Malformed(format!("bead line needs 'index u v': {line:?}")));
        }
        let idx: usize = toks[0].parse().map_err(|_| CalibError::Malformed(format!("bad index {:?}", toks[0])))?;
        let u: f64 = toks[1].parse().map_err(|_| CalibError::Malformed(format!("bad coord {:?}", toks[1])))?;
        let v: f64 = toks[2].parse().map_err(|_| CalibError::Malformed(format!("bad coord {:?}", toks[2])))?;
        rows.push((idx, Point2::new(u, v)));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}

pub fn read_bead_file<P: AsRef<Path>>(path: P) -> Result<Vec<Point2<f64>>, CalibError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibError::Io(e.to_string()))?;
    parse_bead_file(&text)
}

pub fn format_bead_file(beads: &[Point2<f64>]) -> String {
    let mut s = String::new();
    for (i, b) in beads.iter().enumerate() {
        s.push_str(&format!("{} {} {}\n", i + 1, b.x, b.y));
    }
    s
}

/// Alignment-tool file: four `bead x y z f1u f1v f2u f2v` lines.
pub fn parse_tool_file(text: &str) -> Result<AlignmentTool, CalibError> {
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some(l) if l.trim() == "dualfluoro-tool v1" => {}
        other => return Err(CalibError::Malformed(format!("expected 'dualfluoro-tool v1', got {other:?}"))),
    }
    let mut beads = Vec::new();
    let mut f1 = Vec::new();
    let mut f2 = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 8 || toks[0] != "bead" {
            return Err(CalibError::Malformed(format!("tool line needs 'bead x y z f1u f1v f2u f2v': {line:?}")));
        }
        let vals: Vec<f64> = toks[1..]
            .iter()
            .map(|t| t.parse::<f64>().map_err(|_| CalibError::Malformed(format!("bad number {t:?}"))))
            .collect::<Result<_, _>>()?;
        beads.push(Point3::new(vals[0], vals[1], vals[2]));
        f1.push((vals[3], vals[4]));
        f2.push((vals[5], vals[6]));
    }
    if beads.len() != 4 {
        return Err(CalibError::Malformed(format!("expected 4 beads, got {}", beads.len())));
    }
    let tool = AlignmentTool {
        beads_tool_frame: [beads[0], beads[1], beads[2], beads[3]],
        observed_f1: [f1[0], f1[1], f1[2], f1[3]],
        observed_f2: [f2[0], f2[1], f2[2], f2[3]],
    };
    tool.validate()?;
    Ok(tool)
}

pub fn read_tool_file<P: AsRef<Path>>(path: P) -> Result<AlignmentTool, CalibError> {
    let text = std::fs::read_to_string(path).map_err(|e| CalibError::Io(e.to_string()))?;
    parse_tool_file(&text)
}

pub fn format_tool_file(tool: &AlignmentTool) -> String {
    let mut s = String::from("dualfluoro-tool v1\n");
    for i in 0..4 {
        let b = tool.beads_tool_frame[i];
        let (f1u, f1v) = tool.observed_f1[i];
        let (f2u, f2v) = tool.observed_f2[i];
        s.push_str(&format!("bead {} {} {} {} {} {} {}\n", b.x, b.y, b.z, f1u, f1v, f2u, f2v));
    }
    s
}
