//! Synthetic validation fixtures: an ellipsoid-shell head phantom with an
//! asymmetry feature, a 33-landmark set in 13 symmetric pairs, a non-orthogonal
//! dual-fluoroscope layout, and prediction synthesis.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{project_point, DualFluoroSystem, FluoroscopeGeometry, RigidPose};
use crate::landmarks::{LandmarkSet3D, NamedLandmark};
use crate::register::{PredictedLandmark, PredictedLandmarks};
use crate::volume::CtVolume;

/// Outer semi-axes (mm) of the phantom shell.
pub const SHELL_OUTER: [f64; 3] = [26.0, 22.0, 24.0];
/// Inner semi-axes (mm); the shell is the region between the two ellipsoids.
pub const SHELL_INNER: [f64; 3] = [21.0, 17.0, 19.0];

fn in_ellipsoid(p: &[f64; 3], semi: &[f64; 3]) -> bool {
    (p[0] / semi[0]).powi(2) + (p[1] / semi[1]).powi(2) + (p[2] / semi[2]).powi(2) <= 1.0
}

/// 64^3 (by default) ellipsoid-shell volume, 1 mm spacing, centered on the
/// model origin, with a dense asymmetric lump on the +x side standing in for
/// a distinguishing anatomic feature. The skull label covers shell and lump.
pub fn shell_volume(n: usize) -> CtVolume {
    let half = (n as f64 - 1.0) / 2.0;
    let mut data = vec![0.0f32; n * n * n];
    let mut labels = vec![false; n * n * n];
    let lump_center = [20.0, 2.0, 6.0];
    let lump_radius = 5.0;
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64 - half, y as f64 - half, z as f64 - half];
                let i = x + n * (y + n * z);
                if in_ellipsoid(&p, &SHELL_OUTER) && !in_ellipsoid(&p, &SHELL_INNER) {
                    data[i] = 1.0;
                    labels[i] = true;
                }
                let d2 = (p[0] - lump_center[0]).powi(2)
                    + (p[1] - lump_center[1]).powi(2)
                    + (p[2] - lump_center[2]).powi(2);
                if d2 <= lump_radius * lump_radius {
                    data[i] = 2.0;
                    labels[i] = true;
                }
            }
        }
    }
    CtVolume::new((n, n, n), (1.0, 1.0, 1.0), [-half; 3], data, Some(labels)).unwrap()
}

/// Smooth random volume (sum of broad Gaussian blobs), used by the renderer
/// oracle comparisons.
pub fn smooth_volume(n: usize, seed: u64) -> CtVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = n as f64 / 10.0;
    let blobs: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            (
                [rng.gen_range(-span..span), rng.gen_range(-span..span), rng.gen_range(-span..span)],
                rng.gen_range(0.12 * n as f64..0.2 * n as f64),
                rng.gen_range(0.5..1.0),
            )
        })
        .collect();
    let half = (n as f64 - 1.0) / 2.0;
    let mut data = vec![0.0f32; n * n * n];
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let p = [x as f64 - half, y as f64 - half, z as f64 - half];
                let mut v = 0.0;
                for (c, sigma, amp) in &blobs {
                    let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2) + (p[2] - c[2]).powi(2);
                    v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                }
                data[x + n * (y + n * z)] = v as f32;
            }
        }
    }
    let half_mm = (n as f64 - 1.0) / 2.0;
    CtVolume::new((n, n, n), (1.0, 1.0, 1.0), [-half_mm; 3], data, None).unwrap()
}

fn ellipsoid_point(dir: Vector3<f64>, semi: &[f64; 3]) -> Point3<f64> {
    let u = dir.normalize();
    Point3::new(semi[0] * u.x, semi[1] * u.y, semi[2] * u.z)
}

/// 33 landmarks on the shell surface: 13 pairs mirrored across the model
/// x = 0 plane plus 7 unpaired points placed off the symmetry plane, all
/// separated by at least 6 mm.
pub fn shell_landmarks() -> LandmarkSet3D {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5ca1ab1e);
    let mut points: Vec<NamedLandmark> = Vec::with_capacity(33);
    let mut pairs = Vec::with_capacity(13);

    let min_sep = 6.0;
    let far_enough = |points: &[NamedLandmark], q: &Point3<f64>| {
        points.iter().all(|p| (p.position - q).norm() >= min_sep)
    };

    while pairs.len() < 13 {
        let dir = Vector3::new(rng.gen_range(0.25..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if dir.norm() < 1e-6 {
            continue;
        }
        let right = ellipsoid_point(dir, &SHELL_OUTER);
        let left = Point3::new(-right.x, right.y, right.z);
        if far_enough(&points, &right) && far_enough(&points, &left) {
            let k = pairs.len() + 1;
            let a = points.len();
            points.push(NamedLandmark { name: format!("pair{k:02}_r"), position: right });
            points.push(NamedLandmark { name: format!("pair{k:02}_l"), position: left });
            pairs.push((a, a + 1));
        }
    }
    let mut unpaired = 0;
    while unpaired < 7 {
        let x = if unpaired % 2 == 0 { rng.gen_range(0.15..0.9) } else { rng.gen_range(-0.9..-0.15) };
        let dir = Vector3::new(x, rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if dir.norm() < 1e-6 {
            continue;
        }
        let q = ellipsoid_point(dir, &SHELL_OUTER);
        if far_enough(&points, &q) {
            unpaired += 1;
            points.push(NamedLandmark { name: format!("u{unpaired:02}"), position: q });
        }
    }
    let set = LandmarkSet3D::new(points, pairs).unwrap();
    set.validate_skull_config().unwrap();
    set
}

/// Two point-source fluoroscopes whose viewing axes meet at the given angle
/// (60 degrees in the acceptance layout), sharing the imaging volume around
/// the point (0, 0, 550) in the F1-anchored global frame.
pub fn dual_system(angle_deg: f64) -> DualFluoroSystem {
    let sid = 1100.0; // source-to-intensifier distance
    let focus = Point3::new(0.0, 0.0, sid / 2.0);
    let f1 = FluoroscopeGeometry::new(
        Point3::new(0.0, 0.0, sid),
        Point3::origin(),
        Vector3::x(),
        Vector3::y(),
        150.0,
        150.0,
        0.3,
    )
    .unwrap();
    let a = angle_deg.to_radians();
    let normal = Vector3::new(a.sin(), 0.0, a.cos());
    let axis_u = Vector3::new(a.cos(), 0.0, -a.sin());
    let f2 = FluoroscopeGeometry::new(
        focus + normal * (sid / 2.0),
        focus - normal * (sid / 2.0),
        axis_u,
        Vector3::y(),
        150.0,
        150.0,
        0.3,
    )
    .unwrap();
    DualFluoroSystem::new(f1, f2).unwrap()
}

/// Projects the posed landmarks onto both intensifiers; entries outside a
/// field of view (or with degenerate rays) are flagged invisible.
pub fn synth_predictions(
    landmarks: &LandmarkSet3D,
    system: &DualFluoroSystem,
    pose: &RigidPose,
) -> PredictedLandmarks {
    let m = pose.matrix();
    let mut f1 = Vec::with_capacity(landmarks.len());
    let mut f2 = Vec::with_capacity(landmarks.len());
    for p in &landmarks.points {
        let world = m.transform_point(&p.position);
        for (geom, out) in [(&system.f1, &mut f1), (&system.f2, &mut f2)] {
            match project_point(geom, &world) {
                Ok(proj) if crate::geometry::is_visible(geom, proj.uv) => {
                    out.push(PredictedLandmark { uv_mm: proj.uv, visible: true })
                }
                Ok(proj) => out.push(PredictedLandmark { uv_mm: proj.uv, visible: false }),
                Err(_) => out.push(PredictedLandmark::invisible()),
            }
        }
    }
    PredictedLandmarks::new(f1, f2)
}

/// Standard normal draw (Box-Muller).
pub fn gauss<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u1.ln()).sqrt() * u2.cos()
}

/// Adds isotropic Gaussian noise (mm) to every visible predicted coordinate.
pub fn perturb_predictions<R: Rng>(pred: &PredictedLandmarks, sigma_mm: f64, rng: &mut R) -> PredictedLandmarks {
    let mut out = pred.clone();
    for view in [&mut out.f1, &mut out.f2] {
        for lm in view.iter_mut() {
            if lm.visible {
                lm.uv_mm.0 += sigma_mm * gauss(rng);
                lm.uv_mm.1 += sigma_mm * gauss(rng);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::system_center;
    use approx::assert_relative_eq;

    #[test]
    fn landmark_set_is_skull_shaped() {
        let set = shell_landmarks();
        assert_eq!(set.len(), 33);
        assert_eq!(set.symmetric_pairs.len(), 13);
        for &(a, b) in &set.symmetric_pairs {
            let (pa, pb) = (set.points[a].position, set.points[b].position);
            assert_relative_eq!(pa.x, -pb.x, epsilon = 1e-12);
            assert_relative_eq!(pa.y, pb.y, epsilon = 1e-12);
            assert_relative_eq!(pa.z, pb.z, epsilon = 1e-12);
        }
        // Deterministic between calls.
        assert_eq!(set, shell_landmarks());
    }

    #[test]
    fn system_layout_is_60_degrees() {
        let sys = dual_system(60.0);
        let n1 = sys.f1.normal();
        let n2 = sys.f2.normal();
        let angle = n1.dot(&n2).clamp(-1.0, 1.0).acos().to_degrees();
        assert_relative_eq!(angle, 60.0, epsilon = 1e-9);
        // The initialization point sits at the shared imaging center.
        let c = system_center(&sys);
        assert_relative_eq!(c.x, 0.0, epsilon = 1e-9);
        assert_relative_eq!(c.z, 550.0, epsilon = 1e-9);
    }

    #[test]
    fn phantom_fully_visible_at_moderate_poses() {
        let sys = dual_system(60.0);
        let set = shell_landmarks();
        let c = system_center(&sys);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let pose = RigidPose::new(
                [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)],
                [
                    c.x + rng.gen_range(-20.0..20.0),
                    c.y + rng.gen_range(-20.0..20.0),
                    c.z + rng.gen_range(-20.0..20.0),
                ],
            );
            let pred = synth_predictions(&set, &sys, &pose);
            assert_eq!(pred.n_vis(), 33, "pose {pose:?} clipped the phantom");
        }
    }

    #[test]
    fn shell_volume_has_labels_and_asymmetry() {
        let vol = shell_volume(64);
        let labels = vol.skull_label.as_ref().unwrap();
        assert!(labels.iter().any(|&l| l));
        // The lump makes +x denser than -x.
        let n = 64usize;
        let mut pos_x = 0.0;
        let mut neg_x = 0.0;
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let v = vol.intensities[x + n * (y + n * z)] as f64;
                    if x >= n / 2 {
                        pos_x += v;
                    } else {
                        neg_x += v;
                    }
                }
            }
        }
        assert!(pos_x > neg_x * 1.02, "phantom lacks asymmetry: {pos_x} vs {neg_x}");
    }
}
