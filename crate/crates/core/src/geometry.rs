//! Rigid-pose algebra, the virtual dual-fluoroscope coordinate model, and
//! point-source perspective projection.
//!
//! The global frame is anchored at the F1 intensifier center with the F1
//! in-plane axes aligned to global x/y; [`DualFluoroSystem::new`] re-expresses
//! any input system in that frame. Angles are degrees, lengths millimetres.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    /// The ray from the source through the point does not land on the
    /// intensifier: the point coincides with the source, the ray is parallel
    /// to the plane, or the point sits behind the source.
    #[error("degenerate projection ray")]
    DegenerateRay,
    #[error("invalid fluoroscope geometry: {0}")]
    InvalidGeometry(String),
    #[error("malformed system file: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(String),
}

/// Six degrees of freedom: three Euler angles in degrees applied as extrinsic
/// rotations in the sequence z, then y, then x, plus a translation in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    /// (theta_x, theta_y, theta_z) in degrees, each stored in (-180, 180].
    pub theta: [f64; 3],
    /// Translation of the model origin in the global frame, mm.
    pub tau: [f64; 3],
}

/// Wraps an angle in degrees into (-180, 180].
pub fn wrap_angle_deg(a: f64) -> f64 {
    let mut r = a.rem_euclid(360.0);
    if r > 180.0 {
        r -= 360.0;
    }
    r
}

impl RigidPose {
    pub fn new(theta: [f64; 3], tau: [f64; 3]) -> Self {
        Self { theta: theta.map(wrap_angle_deg), tau }
    }

    pub fn identity() -> Self {
        Self { theta: [0.0; 3], tau: [0.0; 3] }
    }

    pub fn matrix(&self) -> Matrix4<f64> {
        pose_to_matrix(self)
    }

    pub fn transform_point(&self, p: &Point3<f64>) -> Point3<f64> {
        self.matrix().transform_point(p)
    }

    /// Flattened [theta, tau] vector used by the optimizers.
    pub fn to_vector(&self) -> [f64; 6] {
        [self.theta[0], self.theta[1], self.theta[2], self.tau[0], self.tau[1], self.tau[2]]
    }

    pub fn from_vector(v: &[f64]) -> Self {
        Self::new([v[0], v[1], v[2]], [v[3], v[4], v[5]])
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().chain(self.tau.iter()).all(|x| x.is_finite())
    }
}

fn rot_x(rad: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), rad)
}

fn rot_y(rad: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), rad)
}

fn rot_z(rad: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), rad)
}

/// Rotation matrix of the extrinsic z-y-x sequence: R = Rx(tx) * Ry(ty) * Rz(tz).
pub fn rotation_matrix(theta_deg: &[f64; 3]) -> Matrix3<f64> {
    let [tx, ty, tz] = theta_deg.map(f64::to_radians);
    (rot_x(tx) * rot_y(ty) * rot_z(tz)).into_inner()
}

/// Homogeneous transform T(tau) * Rx * Ry * Rz acting on column points.
pub fn pose_to_matrix(pose: &RigidPose) -> Matrix4<f64> {
    let r = rotation_matrix(&pose.theta);
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    m.fixed_view_mut::<3, 1>(0, 3)
        .copy_from(&Vector3::new(pose.tau[0], pose.tau[1], pose.tau[2]));
    m
}

/// Recovers the pose from a rigid homogeneous transform. Valid away from
/// gimbal lock (|theta_y| != 90 deg).
pub fn matrix_to_pose(m: &Matrix4<f64>) -> RigidPose {
    let sy = m[(0, 2)].clamp(-1.0, 1.0);
    let ty = sy.asin();
    let tx = (-m[(1, 2)]).atan2(m[(2, 2)]);
    let tz = (-m[(0, 1)]).atan2(m[(0, 0)]);
    RigidPose::new(
        [tx.to_degrees(), ty.to_degrees(), tz.to_degrees()],
        [m[(0, 3)], m[(1, 3)], m[(2, 3)]],
    )
}

/// One point-source/intensifier unit. The intensifier plane passes through
/// `intensifier_center` and is spanned by the orthonormal `axis_u`, `axis_v`.
#[derive(Debug, Clone, PartialEq)]
pub struct FluoroscopeGeometry {
    pub source: Point3<f64>,
    pub intensifier_center: Point3<f64>,
    pub axis_u: Unit<Vector3<f64>>,
    pub axis_v: Unit<Vector3<f64>>,
    /// Intensifier half-extents, mm.
    pub half_width: f64,
    pub half_height: f64,
    /// mm per pixel on the intensifier.
    pub pixel_pitch: f64,
}

const AXIS_TOL: f64 = 1e-9;

impl FluoroscopeGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        source: Point3<f64>,
        intensifier_center: Point3<f64>,
        axis_u: Vector3<f64>,
        axis_v: Vector3<f64>,
        half_width: f64,
        half_height: f64,
        pixel_pitch: f64,
    ) -> Result<Self, GeometryError> {
        let nu = axis_u.norm();
        let nv = axis_v.norm();
        if (nu - 1.0).abs() > 1e-6 || (nv - 1.0).abs() > 1e-6 {
            return Err(GeometryError::InvalidGeometry("intensifier axes must be unit length".into()));
        }
        let axis_u = Unit::new_normalize(axis_u);
        let axis_v = Unit::new_normalize(axis_v);
        if axis_u.dot(&axis_v).abs() > AXIS_TOL {
            return Err(GeometryError::InvalidGeometry("intensifier axes must be orthogonal".into()));
        }
        if half_width <= 0.0 || half_height <= 0.0 || pixel_pitch <= 0.0 {
            return Err(GeometryError::InvalidGeometry("extents and pixel pitch must be positive".into()));
        }
        let normal = axis_u.cross(&axis_v);
        if (source - intensifier_center).dot(&normal).abs() <= AXIS_TOL {
            return Err(GeometryError::InvalidGeometry("source must lie off the intensifier plane".into()));
        }
        Ok(Self { source, intensifier_center, axis_u, axis_v, half_width, half_height, pixel_pitch })
    }

    /// Plane normal, u cross v.
    pub fn normal(&self) -> Unit<Vector3<f64>> {
        Unit::new_normalize(self.axis_u.cross(&self.axis_v))
    }

    /// Distance from the source to the intensifier plane, mm.
    pub fn source_distance(&self) -> f64 {
        (self.source - self.intensifier_center).dot(&self.normal()).abs()
    }

    /// 3D point of an in-plane (u, v) coordinate.
    pub fn plane_point(&self, uv: (f64, f64)) -> Point3<f64> {
        self.intensifier_center + self.axis_u.into_inner() * uv.0 + self.axis_v.into_inner() * uv.1
    }

    /// Detector pixel count implied by the extents and pitch.
    pub fn pixel_dims(&self) -> (usize, usize) {
        (
            (2.0 * self.half_width / self.pixel_pitch).round() as usize,
            (2.0 * self.half_height / self.pixel_pitch).round() as usize,
        )
    }

    fn transformed(&self, r: &Matrix3<f64>, origin: &Point3<f64>) -> Self {
        Self {
            source: Point3::from(r * (self.source - origin)),
            intensifier_center: Point3::from(r * (self.intensifier_center - origin)),
            axis_u: Unit::new_normalize(r * self.axis_u.into_inner()),
            axis_v: Unit::new_normalize(r * self.axis_v.into_inner()),
            ..*self
        }
    }
}

/// Result of projecting a 3D point onto an intensifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// In-plane coordinates about the intensifier center, mm.
    pub uv: (f64, f64),
    /// The 3D landing point on the intensifier plane.
    pub landing: Point3<f64>,
}

/// Central projection of `p` from the point source onto the intensifier plane.
pub fn project_point(geom: &FluoroscopeGeometry, p: &Point3<f64>) -> Result<Projection, GeometryError> {
    let dir = p - geom.source;
    let len = dir.norm();
    if len <= AXIS_TOL {
        return Err(GeometryError::DegenerateRay);
    }
    let n = geom.normal();
    let denom = dir.dot(&n);
    if denom.abs() <= 1e-12 * len {
        return Err(GeometryError::DegenerateRay);
    }
    let t = (geom.intensifier_center - geom.source).dot(&n) / denom;
    if t <= 0.0 {
        // Point behind the source: the forward ray never reaches the plane.
        return Err(GeometryError::DegenerateRay);
    }
    let landing = geom.source + dir * t;
    let rel = landing - geom.intensifier_center;
    Ok(Projection { uv: (rel.dot(&geom.axis_u), rel.dot(&geom.axis_v)), landing })
}

/// True iff the in-plane coordinate lies within the closed field of view.
pub fn is_visible(geom: &FluoroscopeGeometry, uv: (f64, f64)) -> bool {
    uv.0.abs() <= geom.half_width && uv.1.abs() <= geom.half_height
}

/// Two fluoroscopes in the global frame anchored at the F1 intensifier
/// center (F1 axes coincide with the global x/y axes).
#[derive(Debug, Clone, PartialEq)]
pub struct DualFluoroSystem {
    pub f1: FluoroscopeGeometry,
    pub f2: FluoroscopeGeometry,
}

impl DualFluoroSystem {
    /// Builds the system, re-expressing both fluoroscopes in the F1-anchored
    /// global frame.
    pub fn new(f1: FluoroscopeGeometry, f2: FluoroscopeGeometry) -> Result<Self, GeometryError> {
        let n1 = f1.normal();
        // Rows u, v, n map world vectors into the F1 frame.
        let r = Matrix3::from_rows(&[
            f1.axis_u.into_inner().transpose(),
            f1.axis_v.into_inner().transpose(),
            n1.into_inner().transpose(),
        ]);
        let origin = f1.intensifier_center;
        let mut f1 = f1.transformed(&r, &origin);
        // Snap the anchor exactly onto the convention.
        f1.intensifier_center = Point3::origin();
        f1.axis_u = Vector3::x_axis();
        f1.axis_v = Vector3::y_axis();
        let f2 = f2.transformed(&r, &origin);
        Ok(Self { f1, f2 })
    }
}

/// Mean of the four source/intensifier-center points; the registration
/// translation initializer tau0.
pub fn system_center(system: &DualFluoroSystem) -> Point3<f64> {
    let sum = system.f1.source.coords
        + system.f1.intensifier_center.coords
        + system.f2.source.coords
        + system.f2.intensifier_center.coords;
    Point3::from(sum / 4.0)
}

fn fmt_triplet(v: &Vector3<f64>) -> String {
    format!("{} {} {}", v.x, v.y, v.z)
}

/// Serializes a system definition.
///
/// Field order per fluoroscope: source, center, axis_u, axis_v, half_width,
/// half_height, pixel_pitch. Units are mm throughout. Lines beginning with
/// `#` are comments.
pub fn format_system_file(system: &DualFluoroSystem, comments: &[String]) -> String {
    let mut s = String::from("dualfluoro-system v1\n");
    for c in comments {
        let _ = writeln!(s, "# {c}");
    }
    for (tag, f) in [("f1", &system.f1), ("f2", &system.f2)] {
        let _ = writeln!(s, "{tag}.source {}", fmt_triplet(&f.source.coords));
        let _ = writeln!(s, "{tag}.center {}", fmt_triplet(&f.intensifier_center.coords));
        let _ = writeln!(s, "{tag}.axis_u {}", fmt_triplet(&f.axis_u));
        let _ = writeln!(s, "{tag}.axis_v {}", fmt_triplet(&f.axis_v));
        let _ = writeln!(s, "{tag}.half_width {}", f.half_width);
        let _ = writeln!(s, "{tag}.half_height {}", f.half_height);
        let _ = writeln!(s, "{tag}.pixel_pitch {}", f.pixel_pitch);
    }
    s
}

pub fn write_system_file<P: AsRef<Path>>(
    path: P,
    system: &DualFluoroSystem,
    comments: &[String],
) -> Result<(), GeometryError> {
    std::fs::write(path, format_system_file(system, comments)).map_err(|e| GeometryError::Io(e.to_string()))
}

pub fn parse_system_file(text: &str) -> Result<DualFluoroSystem, GeometryError> {
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some(l) if l.trim() == "dualfluoro-system v1" => {}
        other => {
            return Err(GeometryError::Malformed(format!(
                "expected 'dualfluoro-system v1' header, got {other:?}"
            )))
        }
    }
    let mut fields: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for line in lines {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap().to_string();
        let vals: Vec<f64> = it
            .map(|t| t.parse::<f64>().map_err(|_| GeometryError::Malformed(format!("bad number {t:?}"))))
            .collect::<Result<_, _>>()?;
        fields.insert(key, vals);
    }
    let take = |key: &str, n: usize| -> Result<Vec<f64>, GeometryError> {
        let v = fields.get(key).ok_or_else(|| GeometryError::Malformed(format!("missing field {key}")))?;
        if v.len() != n {
            return Err(GeometryError::Malformed(format!("field {key} expects {n} values")));
        }
        Ok(v.clone())
    };
    let read_fluoro = |tag: &str| -> Result<FluoroscopeGeometry, GeometryError> {
        let s = take(&format!("{tag}.source"), 3)?;
        let c = take(&format!("{tag}.center"), 3)?;
        let u = take(&format!("{tag}.axis_u"), 3)?;
        let v = take(&format!("{tag}.axis_v"), 3)?;
        let hw = take(&format!("{tag}.half_width"), 1)?[0];
        let hh = take(&format!("{tag}.half_height"), 1)?[0];
        let pp = take(&format!("{tag}.pixel_pitch"), 1)?[0];
        FluoroscopeGeometry::new(
            Point3::new(s[0], s[1], s[2]),
            Point3::new(c[0], c[1], c[2]),
            Vector3::new(u[0], u[1], u[2]),
            Vector3::new(v[0], v[1], v[2]),
            hw,
            hh,
            pp,
        )
    };
    let f1 = read_fluoro("f1")?;
    let f2 = read_fluoro("f2")?;
    DualFluoroSystem::new(f1, f2)
}

pub fn read_system_file<P: AsRef<Path>>(path: P) -> Result<DualFluoroSystem, GeometryError> {
    let text = std::fs::read_to_string(path).map_err(|e| GeometryError::Io(e.to_string()))?;
    parse_system_file(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Independent rotation oracle: explicit elementary matrices composed by
    // hand-rolled 3x3 multiplication, no shared code with rotation_matrix.
    fn oracle_rotate(theta_deg: [f64; 3], p: [f64; 3]) -> [f64; 3] {
        let [ax, ay, az] = theta_deg.map(f64::to_radians);
        let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
        let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
        let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
        let mul = |m: [[f64; 3]; 3], v: [f64; 3]| {
            [
                m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
                m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
                m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
            ]
        };
        mul(rx, mul(ry, mul(rz, p)))
    }

    #[test]
    fn identity_pose_is_identity_matrix() {
        let m = pose_to_matrix(&RigidPose::identity());
        assert_eq!(m, Matrix4::identity());
    }

    #[test]
    fn quarter_turn_about_z() {
        let pose = RigidPose::new([0.0, 0.0, 90.0], [0.0; 3]);
        let p = pose.transform_point(&Point3::new(1.0, 0.0, 0.0));
        assert_relative_eq!(p.x, 0.0, epsilon = 1e-12);
        assert_relative_eq!(p.y, 1.0, epsilon = 1e-12);
        assert_relative_eq!(p.z, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn composition_matches_oracle() {
        let pose = RigidPose::new([10.0, 20.0, 30.0], [1.0, 2.0, 3.0]);
        let got = pose.transform_point(&Point3::new(1.0, 1.0, 1.0));
        let r = oracle_rotate([10.0, 20.0, 30.0], [1.0, 1.0, 1.0]);
        let want = [r[0] + 1.0, r[1] + 2.0, r[2] + 3.0];
        for i in 0..3 {
            assert_relative_eq!(got[i], want[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn pose_matrix_round_trip() {
        let cases = [
            [10.0, 20.0, 30.0],
            [-170.0, 45.0, 179.5],
            [0.1, -89.0, 0.3],
            [180.0, 0.0, -90.0],
        ];
        for theta in cases {
            let pose = RigidPose::new(theta, [4.0, -5.0, 6.0]);
            let back = matrix_to_pose(&pose_to_matrix(&pose));
            for i in 0..3 {
                assert_relative_eq!(back.theta[i], pose.theta[i], epsilon = 1e-9);
                assert_relative_eq!(back.tau[i], pose.tau[i], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn angle_wrapping() {
        assert_eq!(wrap_angle_deg(180.0), 180.0);
        assert_eq!(wrap_angle_deg(-180.0), 180.0);
        assert_relative_eq!(wrap_angle_deg(190.0), -170.0);
        assert_relative_eq!(wrap_angle_deg(-190.0), 170.0);
        assert_relative_eq!(wrap_angle_deg(540.0), 180.0);
    }

    fn basic_geom() -> FluoroscopeGeometry {
        FluoroscopeGeometry::new(
            Point3::new(0.0, 0.0, 1000.0),
            Point3::origin(),
            Vector3::x(),
            Vector3::y(),
            100.0,
            100.0,
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn projection_fixed_point_on_plane() {
        let g = basic_geom();
        let p = Point3::new(7.0, -3.0, 0.0);
        let proj = project_point(&g, &p).unwrap();
        assert_relative_eq!((proj.landing - p).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(proj.uv.0, 7.0, epsilon = 1e-12);
        assert_relative_eq!(proj.uv.1, -3.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_similar_triangles() {
        let g = basic_geom();
        let proj = project_point(&g, &Point3::new(10.0, 0.0, 500.0)).unwrap();
        assert_relative_eq!(proj.uv.0, 20.0, epsilon = 1e-12);
        assert_relative_eq!(proj.uv.1, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_degenerate_cases() {
        let g = basic_geom();
        assert_eq!(project_point(&g, &g.source.clone()), Err(GeometryError::DegenerateRay));
        // Parallel ray: target at the source height.
        assert_eq!(
            project_point(&g, &Point3::new(50.0, 0.0, 1000.0)),
            Err(GeometryError::DegenerateRay)
        );
        // Behind the source.
        assert_eq!(
            project_point(&g, &Point3::new(0.0, 3.0, 1500.0)),
            Err(GeometryError::DegenerateRay)
        );
    }

    #[test]
    fn projection_collinearity_randomized() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let src = Point3::new(
                rng.gen_range(-200.0..200.0),
                rng.gen_range(-200.0..200.0),
                rng.gen_range(500.0..1500.0),
            );
            let axis_u = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if axis_u.norm() < 1e-3 {
                continue;
            }
            let axis_u = axis_u.normalize();
            let helper = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let axis_v = axis_u.cross(&helper);
            if axis_v.norm() < 1e-3 {
                continue;
            }
            let axis_v = axis_v.normalize();
            let g = match FluoroscopeGeometry::new(src, Point3::origin(), axis_u, axis_v, 150.0, 150.0, 0.5) {
                Ok(g) => g,
                Err(_) => continue,
            };
            let p = Point3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let Ok(proj) = project_point(&g, &p) else { continue };
            // Independent line-plane oracle: solve for the intersection
            // parameter with the plane through the origin.
            let n = g.axis_u.cross(&g.axis_v);
            let t = (-g.source.coords).dot(&n) / (p - g.source).dot(&n);
            let oracle = g.source + (p - g.source) * t;
            assert_relative_eq!((proj.landing - oracle).norm(), 0.0, epsilon = 1e-9 * oracle.coords.norm().max(1.0));
            // Collinearity: cross product of the two direction vectors vanishes.
            let d1 = (p - g.source).normalize();
            let d2 = (proj.landing - g.source).normalize();
            assert!(d1.cross(&d2).norm() < 1e-9);
        }
    }

    #[test]
    fn visibility_closed_region() {
        let g = basic_geom();
        assert!(is_visible(&g, (0.0, 0.0)));
        assert!(is_visible(&g, (100.0, 100.0)));
        assert!(!is_visible(&g, (100.0001, 0.0)));
        assert!(!is_visible(&g, (0.0, -100.0001)));
    }

    fn tilted_system() -> DualFluoroSystem {
        let f1 = FluoroscopeGeometry::new(
            Point3::new(10.0, 20.0, 30.0) + Vector3::new(0.0, 0.6, 0.8) * 1000.0,
            Point3::new(10.0, 20.0, 30.0),
            Vector3::x(),
            Vector3::new(0.0, 0.8, -0.6),
            120.0,
            110.0,
            0.4,
        )
        .unwrap();
        let f2 = FluoroscopeGeometry::new(
            Point3::new(900.0, 50.0, 80.0),
            Point3::new(-100.0, 40.0, 60.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(-0.1, 0.0, 0.0).normalize().cross(&Vector3::y()),
            130.0,
            140.0,
            0.3,
        )
        .unwrap();
        DualFluoroSystem::new(f1, f2).unwrap()
    }

    #[test]
    fn system_normalized_to_f1_frame() {
        let sys = tilted_system();
        assert_eq!(sys.f1.intensifier_center, Point3::origin());
        assert_relative_eq!((sys.f1.axis_u.into_inner() - Vector3::x()).norm(), 0.0);
        assert_relative_eq!((sys.f1.axis_v.into_inner() - Vector3::y()).norm(), 0.0);
    }

    #[test]
    fn normalization_preserves_distances() {
        let f1 = FluoroscopeGeometry::new(
            Point3::new(10.0, 20.0, 30.0) + Vector3::new(0.0, 0.6, 0.8) * 1000.0,
            Point3::new(10.0, 20.0, 30.0),
            Vector3::x(),
            Vector3::new(0.0, 0.8, -0.6),
            120.0,
            110.0,
            0.4,
        )
        .unwrap();
        let f2 = FluoroscopeGeometry::new(
            Point3::new(900.0, 50.0, 80.0),
            Point3::new(-100.0, 40.0, 60.0),
            Vector3::y(),
            Vector3::z(),
            130.0,
            140.0,
            0.3,
        )
        .unwrap();
        let before = [
            (f1.source - f1.intensifier_center).norm(),
            (f2.source - f2.intensifier_center).norm(),
            (f1.source - f2.source).norm(),
            (f1.intensifier_center - f2.intensifier_center).norm(),
        ];
        let sys = DualFluoroSystem::new(f1, f2).unwrap();
        let after = [
            (sys.f1.source - sys.f1.intensifier_center).norm(),
            (sys.f2.source - sys.f2.intensifier_center).norm(),
            (sys.f1.source - sys.f2.source).norm(),
            (sys.f1.intensifier_center - sys.f2.intensifier_center).norm(),
        ];
        for (b, a) in before.iter().zip(after.iter()) {
            assert_relative_eq!(b, a, epsilon = 1e-9 * b.max(1.0));
        }
    }

    #[test]
    fn system_center_mean_of_four() {
        let f1 = FluoroscopeGeometry::new(
            Point3::new(0.0, 0.0, 1000.0),
            Point3::origin(),
            Vector3::x(),
            Vector3::y(),
            100.0,
            100.0,
            0.5,
        )
        .unwrap();
        let f2 = FluoroscopeGeometry::new(
            Point3::new(1000.0, 0.0, 0.0),
            Point3::origin(),
            Vector3::y(),
            Vector3::z(),
            100.0,
            100.0,
            0.5,
        )
        .unwrap();
        let sys = DualFluoroSystem::new(f1, f2).unwrap();
        let c = system_center(&sys);
        assert_relative_eq!(c.x, 250.0, epsilon = 1e-12);
        assert_relative_eq!(c.y, 0.0, epsilon = 1e-12);
        assert_relative_eq!(c.z, 250.0, epsilon = 1e-12);
    }

    #[test]
    fn system_center_matches_componentwise_mean() {
        let sys = tilted_system();
        let c = system_center(&sys);
        for i in 0..3 {
            let mean = (sys.f1.source[i]
                + sys.f1.intensifier_center[i]
                + sys.f2.source[i]
                + sys.f2.intensifier_center[i])
                / 4.0;
            assert_relative_eq!(c[i], mean, epsilon = 1e-12);
        }
    }

    #[test]
    fn system_file_round_trip() {
        let sys = tilted_system();
        let text = format_system_file(&sys, &["written by test".into()]);
        let back = parse_system_file(&text).unwrap();
        assert_relative_eq!((back.f2.source - sys.f2.source).norm(), 0.0, epsilon = 1e-9);
        assert_relative_eq!((back.f2.intensifier_center - sys.f2.intensifier_center).norm(), 0.0, epsilon = 1e-9);
        assert_relative_eq!(back.f1.half_width, sys.f1.half_width);
        assert_relative_eq!(back.f2.pixel_pitch, sys.f2.pixel_pitch);
    }

    #[test]
    fn malformed_system_rejected() {
        assert!(parse_system_file("not a header\n").is_err());
        assert!(parse_system_file("dualfluoro-system v1\nf1.source 1 2\n").is_err());
    }
}
