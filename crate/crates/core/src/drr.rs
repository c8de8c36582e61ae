//! Parallel-beam DRR rendering via shear-warp factorization, landmark
//! co-projection, and binary skull-mask rendering.
//!
//! The rendering frame has rays running along +z. Pixel coordinates are
//! 1-based at pixel centers, so pixel (i, j) sits at plane position
//! `((i - (w+1)/2) * scale, (j - (h+1)/2) * scale)` mm and landmark
//! coordinates of visible points fall in [1, w] x [1, h].

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::{pose_to_matrix, RigidPose};
use crate::img::GrayImage;
use crate::landmarks::LandmarkSet3D;
use crate::volume::CtVolume;

#[derive(Debug, Error, PartialEq)]
pub enum RenderError {
    #[error("volume has a zero-sized axis")]
    EmptyVolume,
    #[error("volume carries no skull label")]
    MissingLabel,
    #[error("invalid render parameters: {0}")]
    InvalidParams(String),
}

/// View and raster controls for one render.
#[derive(Debug, Clone)]
pub struct RenderParams {
    /// Pose of the volume relative to the rendering plane.
    pub view: RigidPose,
    /// Output (width, height) in pixels.
    pub out_dims: (usize, usize),
    /// Integrated attenuation mapped linearly onto [0, 255]; values at or
    /// below `lo` render black, at or above `hi` render white.
    pub intensity_window: (f64, f64),
    /// mm per pixel on the rendering plane.
    pub scale: f64,
}

impl RenderParams {
    fn validate(&self) -> Result<(), RenderError> {
        let (w, h) = self.out_dims;
        if w == 0 || h == 0 {
            return Err(RenderError::InvalidParams("output dims must be positive".into()));
        }
        let (lo, hi) = self.intensity_window;
        if !(lo < hi) {
            return Err(RenderError::InvalidParams("window requires lo < hi".into()));
        }
        if !(self.scale > 0.0) {
            return Err(RenderError::InvalidParams("scale must be positive".into()));
        }
        if !self.view.is_finite() {
            return Err(RenderError::InvalidParams("view pose must be finite".into()));
        }
        Ok(())
    }
}

/// A landmark projected to the rendering plane, pixel units.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectedLandmark {
    pub u: f64,
    pub v: f64,
    pub visible: bool,
}

/// One rendered sample: image, co-projected landmarks, optional skull mask.
#[derive(Debug, Clone)]
pub struct Drr {
    pub image: GrayImage,
    pub landmarks2d: Vec<ProjectedLandmark>,
    pub mask: Option<GrayImage>,
}

fn check_volume(volume: &CtVolume) -> Result<(), RenderError> {
    if volume.dims.0 == 0 || volume.dims.1 == 0 || volume.dims.2 == 0 {
        return Err(RenderError::EmptyVolume);
    }
    Ok(())
}

fn window_to_u8(value: f64, window: (f64, f64)) -> u8 {
    let t = ((value - window.0) / (window.1 - window.0)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

struct ViewBasis {
    /// Rotation rows of the model->render transform.
    r: nalgebra::Matrix3<f64>,
    t: Vector3<f64>,
}

impl ViewBasis {
    fn new(view: &RigidPose) -> Self {
        let m = pose_to_matrix(view);
        Self { r: m.fixed_view::<3, 3>(0, 0).into_owned(), t: m.fixed_view::<3, 1>(0, 3).into_owned() }
    }

    /// Unit ray direction expressed in the volume frame.
    fn ray_dir_volume(&self) -> Vector3<f64> {
        self.r.transpose() * Vector3::z()
    }

    /// Render-plane (x, y) of a volume-frame point.
    fn plane_xy(&self, w: &Vector3<f64>) -> Vector2<f64> {
        let p = self.r * w + self.t;
        Vector2::new(p.x, p.y)
    }

    /// Volume-frame position of the render-plane point (x, y, 0).
    fn plane_origin_volume(&self, x: f64, y: f64) -> Vector3<f64> {
        self.r.transpose() * (Vector3::new(x, y, 0.0) - self.t)
    }
}

fn spacings(volume: &CtVolume) -> [f64; 3] {
    [volume.spacing.0, volume.spacing.1, volume.spacing.2]
}

fn dims(volume: &CtVolume) -> [usize; 3] {
    [volume.dims.0, volume.dims.1, volume.dims.2]
}

#[inline]
fn axis_unit(i: usize) -> Vector3<f64> {
    match i {
        0 => Vector3::x(),
        1 => Vector3::y(),
        _ => Vector3::z(),
    }
}

/// Bilinear sample of one volume slice perpendicular to `k_ax`, zero outside.
#[inline]
fn sample_slice(volume: &CtVolume, axes: (usize, usize, usize), ik: i64, u: f64, v: f64) -> f64 {
    let (u_ax, v_ax, k_ax) = axes;
    let u0 = u.floor();
    let v0 = v.floor();
    let fu = u - u0;
    let fv = v - v0;
    let (u0, v0) = (u0 as i64, v0 as i64);
    let mut acc = 0.0;
    for dv in 0..2i64 {
        let wv = if dv == 0 { 1.0 - fv } else { fv };
        if wv == 0.0 {
            continue;
        }
        for du in 0..2i64 {
            let wu = if du == 0 { 1.0 - fu } else { fu };
            if wu == 0.0 {
                continue;
            }
            let mut idx = [0i64; 3];
            idx[u_ax] = u0 + du;
            idx[v_ax] = v0 + dv;
            idx[k_ax] = ik;
            acc += wu * wv * volume.intensity_at(idx[0], idx[1], idx[2]);
        }
    }
    acc
}

/// Renders a parallel-beam DRR using shear-warp factorization: slices along
/// the principal viewing axis are sheared and accumulated into an
/// intermediate image, which a 2D affine warp resamples onto the output grid.
pub fn render_drr(volume: &CtVolume, params: &RenderParams) -> Result<GrayImage, RenderError> {
    check_volume(volume)?;
    params.validate()?;

    let basis = ViewBasis::new(&params.view);
    let d_vol = basis.ray_dir_volume();
    let sp = spacings(volume);
    let nd = dims(volume);
    let d_idx = [d_vol.x / sp[0], d_vol.y / sp[1], d_vol.z / sp[2]];

    // Principal axis: largest |direction| in index space.
    let k_ax = (0..3).max_by(|&a, &b| d_idx[a].abs().partial_cmp(&d_idx[b].abs()).unwrap()).unwrap();
    let u_ax = (k_ax + 1) % 3;
    let v_ax = (k_ax + 2) % 3;
    let su = d_idx[u_ax] / d_idx[k_ax];
    let sv = d_idx[v_ax] / d_idx[k_ax];
    // World-space path length along the ray per slice step.
    let dt = ((su * sp[u_ax]).powi(2) + (sv * sp[v_ax]).powi(2) + sp[k_ax].powi(2)).sqrt();

    let nk = nd[k_ax] as i64;
    let nu = nd[u_ax] as i64;
    let nv = nd[v_ax] as i64;

    // Sheared extent: ray (a, b) passes slice ik at (a + su*ik, b + sv*ik).
    let shear_span = |s: f64, n: i64| -> (i64, i64) {
        let drift = s * (nk - 1) as f64;
        let lo = (0f64).min(-drift).floor() as i64;
        let hi = ((n - 1) as f64).max((n - 1) as f64 - drift).ceil() as i64;
        (lo, hi)
    };
    let (a_lo, a_hi) = shear_span(su, nu);
    let (b_lo, b_hi) = shear_span(sv, nv);
    let na = (a_hi - a_lo + 1) as usize;
    let nb = (b_hi - b_lo + 1) as usize;

    // Composite the sheared slices; each intermediate pixel is one ray.
    let mut intermediate = vec![0.0f64; na * nb];
    intermediate
        .par_chunks_mut(na)
        .enumerate()
        .for_each(|(ib, row)| {
            let b = (b_lo + ib as i64) as f64;
            for (ia, out) in row.iter_mut().enumerate() {
                let a = (a_lo + ia as i64) as f64;
                let mut acc = 0.0;
                for ik in 0..nk {
                    let u = a + su * ik as f64;
                    let v = b + sv * ik as f64;
                    if u <= -1.0 || u >= nu as f64 || v <= -1.0 || v >= nv as f64 {
                        continue;
                    }
                    acc += sample_slice(volume, (u_ax, v_ax, k_ax), ik, u, v);
                }
                *out = acc * dt;
            }
        });

    // Affine warp from intermediate coordinates (a, b) to plane (x, y):
    // the intermediate pixel (a, b) is the ray crossing slice 0 at volume
    // index coordinates a (axis u_ax) and b (axis v_ax).
    let origin = Vector3::new(volume.origin[0], volume.origin[1], volume.origin[2]);
    let col_a = basis.plane_xy(&(axis_unit(u_ax) * sp[u_ax])) - basis.plane_xy(&Vector3::zeros());
    let col_b = basis.plane_xy(&(axis_unit(v_ax) * sp[v_ax])) - basis.plane_xy(&Vector3::zeros());
    let c0 = basis.plane_xy(&(origin + axis_unit(u_ax) * (sp[u_ax] * a_lo as f64) + axis_unit(v_ax) * (sp[v_ax] * b_lo as f64)));
    let fwd = Matrix2::from_columns(&[col_a, col_b]);
    let inv = fwd
        .try_inverse()
        .ok_or_else(|| RenderError::InvalidParams("degenerate view transform".into()))?;

    let (w, h) = params.out_dims;
    let cx = (w as f64 + 1.0) / 2.0;
    let cy = (h as f64 + 1.0) / 2.0;
    let window = params.intensity_window;
    let scale = params.scale;

    let mut pixels = vec![0u8; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(row, out_row)| {
        let j = (row + 1) as f64;
        let y = (j - cy) * scale;
        for (col, out) in out_row.iter_mut().enumerate() {
            let i = (col + 1) as f64;
            let x = (i - cx) * scale;
            let ab = inv * (Vector2::new(x, y) - c0);
            // Bilinear sample of the intermediate image, zero outside.
            let a0 = ab.x.floor();
            let b0 = ab.y.floor();
            let fa = ab.x - a0;
            let fb = ab.y - b0;
            let (a0, b0) = (a0 as i64, b0 as i64);
            let mut val = 0.0;
            for db in 0..2i64 {
                let wb = if db == 0 { 1.0 - fb } else { fb };
                if wb == 0.0 {
                    continue;
                }
                for da in 0..2i64 {
                    let wa = if da == 0 { 1.0 - fa } else { fa };
                    if wa == 0.0 {
                        continue;
                    }
                    let (ai, bi) = (a0 + da, b0 + db);
                    if ai < 0 || bi < 0 || ai >= na as i64 || bi >= nb as i64 {
                        continue;
                    }
                    val += wa * wb * intermediate[bi as usize * na + ai as usize];
                }
            }
            *out = window_to_u8(val, window);
        }
    });

    Ok(GrayImage { width: w, height: h, pixels })
}

/// Reference renderer: direct trilinear sampling along each parallel ray at
/// quarter-voxel steps. Slow by design; used as the shear-warp oracle.
pub fn brute_force_raycast(volume: &CtVolume, params: &RenderParams) -> Result<GrayImage, RenderError> {
    check_volume(volume)?;
    params.validate()?;

    let basis = ViewBasis::new(&params.view);
    let d_vol = basis.ray_dir_volume();
    let sp = spacings(volume);
    let nd = dims(volume);
    let step_target = 0.25 * sp[0].min(sp[1]).min(sp[2]);

    let (w, h) = params.out_dims;
    let cx = (w as f64 + 1.0) / 2.0;
    let cy = (h as f64 + 1.0) / 2.0;

    let mut pixels = vec![0u8; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(row, out_row)| {
        let j = (row + 1) as f64;
        let y = (j - cy) * params.scale;
        for (col, out) in out_row.iter_mut().enumerate() {
            let i = (col + 1) as f64;
            let x = (i - cx) * params.scale;
            let o = basis.plane_origin_volume(x, y);
            // Clip to the trilinear support box, index range [-1, n] per axis.
            let mut t0 = f64::NEG_INFINITY;
            let mut t1 = f64::INFINITY;
            let mut hit = true;
            for ax in 0..3 {
                let oi = (o[ax] - volume.origin[ax]) / sp[ax];
                let di = d_vol[ax] / sp[ax];
                let (lo, hi) = (-1.0, nd[ax] as f64);
                if di.abs() < 1e-15 {
                    if oi < lo || oi > hi {
                        hit = false;
                        break;
                    }
                } else {
                    let ta = (lo - oi) / di;
                    let tb = (hi - oi) / di;
                    t0 = t0.max(ta.min(tb));
                    t1 = t1.min(ta.max(tb));
                }
            }
            let mut integral = 0.0;
            if hit && t1 > t0 {
                let len = t1 - t0;
                let m = (len / step_target).ceil().max(1.0);
                let step = len / m;
                for s in 0..m as usize {
                    let t = t0 + (s as f64 + 0.5) * step;
                    let p = o + d_vol * t;
                    integral += volume.sample_trilinear(volume.world_to_index([p.x, p.y, p.z]));
                }
                integral *= step;
            }
            *out = window_to_u8(integral, params.intensity_window);
        }
    });

    Ok(GrayImage { width: w, height: h, pixels })
}

/// Orthographic projection of the landmark set onto the rendering plane.
/// Out-of-frame landmarks are flagged invisible; visible coordinates lie in
/// [1, w] x [1, h].
pub fn project_landmarks_parallel(landmarks: &LandmarkSet3D, params: &RenderParams) -> Vec<ProjectedLandmark> {
    let m = pose_to_matrix(&params.view);
    let (w, h) = params.out_dims;
    let cx = (w as f64 + 1.0) / 2.0;
    let cy = (h as f64 + 1.0) / 2.0;
    landmarks
        .points
        .iter()
        .map(|p| {
            let q = m.transform_point(&p.position);
            let u = q.x / params.scale + cx;
            let v = q.y / params.scale + cy;
            let visible = u >= 1.0 && u <= w as f64 && v >= 1.0 && v <= h as f64;
            ProjectedLandmark { u, v, visible }
        })
        .collect()
}

/// Binary max-projection of the skull label: a pixel is set iff the parallel
/// ray through it intersects any labeled voxel. Uses exact ray/voxel-grid
/// traversal, so the mask covers every pixel whose label ray integral is
/// positive.
pub fn render_mask(volume: &CtVolume, params: &RenderParams) -> Result<GrayImage, RenderError> {
    check_volume(volume)?;
    params.validate()?;
    let labels = volume.skull_label.as_deref().ok_or(RenderError::MissingLabel)?;

    let basis = ViewBasis::new(&params.view);
    let d_vol = basis.ray_dir_volume();
    let sp = spacings(volume);
    let nd = dims(volume);
    let d_idx = [d_vol.x / sp[0], d_vol.y / sp[1], d_vol.z / sp[2]];

    let (w, h) = params.out_dims;
    let cx = (w as f64 + 1.0) / 2.0;
    let cy = (h as f64 + 1.0) / 2.0;

    let mut pixels = vec![0u8; w * h];
    pixels.par_chunks_mut(w).enumerate().for_each(|(row, out_row)| {
        let j = (row + 1) as f64;
        let y = (j - cy) * params.scale;
        for (col, out) in out_row.iter_mut().enumerate() {
            let i = (col + 1) as f64;
            let x = (i - cx) * params.scale;
            let o = basis.plane_origin_volume(x, y);
            let o_idx = volume.world_to_index([o.x, o.y, o.z]);
            if ray_hits_label(volume, labels, o_idx, d_idx, nd) {
                *out = 255;
            }
        }
    });

    Ok(GrayImage { width: w, height: h, pixels })
}

/// Amanatides-Woo traversal of the voxel grid; voxel (ix, iy, iz) occupies
/// index coordinates [i - 0.5, i + 0.5).
fn ray_hits_label(volume: &CtVolume, labels: &[bool], o: [f64; 3], d: [f64; 3], nd: [usize; 3]) -> bool {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for ax in 0..3 {
        let lo = -0.5;
        let hi = nd[ax] as f64 - 0.5;
        if d[ax].abs() < 1e-15 {
            if o[ax] < lo || o[ax] > hi {
                return false;
            }
        } else {
            let ta = (lo - o[ax]) / d[ax];
            let tb = (hi - o[ax]) / d[ax];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    if t0 >= t1 {
        return false;
    }
    let t_start = t0 + 1e-9 * (t1 - t0);
    let mut voxel = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for ax in 0..3 {
        let p = o[ax] + t_start * d[ax];
        voxel[ax] = ((p + 0.5).floor() as i64).clamp(0, nd[ax] as i64 - 1);
        if d[ax] > 1e-15 {
            step[ax] = 1;
            let boundary = voxel[ax] as f64 + 0.5;
            t_max[ax] = (boundary - o[ax]) / d[ax];
            t_delta[ax] = 1.0 / d[ax];
        } else if d[ax] < -1e-15 {
            step[ax] = -1;
            let boundary = voxel[ax] as f64 - 0.5;
            t_max[ax] = (boundary - o[ax]) / d[ax];
            t_delta[ax] = -1.0 / d[ax];
        }
    }
    loop {
        if volume.label_at(labels, voxel[0], voxel[1], voxel[2]) {
            return true;
        }
        let ax = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        if t_max[ax] > t1 {
            return false;
        }
        voxel[ax] += step[ax];
        if voxel[ax] < 0 || voxel[ax] >= nd[ax] as i64 {
            return false;
        }
        t_max[ax] += t_delta[ax];
    }
}

/// Renders image, landmarks, and (optionally) the mask into one record.
pub fn compose_drr(
    volume: &CtVolume,
    landmarks: &LandmarkSet3D,
    params: &RenderParams,
    with_mask: bool,
) -> Result<Drr, RenderError> {
    let image = render_drr(volume, params)?;
    let landmarks2d = project_landmarks_parallel(landmarks, params);
    let mask = if with_mask { Some(render_mask(volume, params)?) } else { None };
    Ok(Drr { image, landmarks2d, mask })
}

/// Zeroes image pixels outside the mask.
pub fn apply_mask(image: &mut GrayImage, mask: &GrayImage) {
    assert_eq!((image.width, image.height), (mask.width, mask.height));
    for (p, m) in image.pixels.iter_mut().zip(&mask.pixels) {
        if *m == 0 {
            *p = 0;
        }
    }
}
