//! CT volume storage and raw-file I/O.
//!
//! Voxels are stored x-fastest (`index = x + nx * (y + ny * z)`). The world
//! position of voxel (0, 0, 0) is `origin` and voxel centers are spaced by
//! `spacing` mm along the volume axes.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("volume dims must be >= 1 in each axis")]
    EmptyDims,
    #[error("voxel spacing must be positive")]
    BadSpacing,
    #[error("intensity buffer length {got} does not match dims product {want}")]
    SizeMismatch { got: usize, want: usize },
    #[error("malformed volume header: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// 3D voxel grid of attenuation values with physical spacing.
#[derive(Debug, Clone)]
pub struct CtVolume {
    /// Voxel counts (nx, ny, nz).
    pub dims: (usize, usize, usize),
    /// mm per voxel along each axis.
    pub spacing: (f64, f64, f64),
    /// World position of voxel (0, 0, 0), mm.
    pub origin: [f64; 3],
    /// Attenuation per voxel, x-fastest.
    pub intensities: Vec<f32>,
    /// Optional binary skull flag per voxel, same layout.
    pub skull_label: Option<Vec<bool>>,
}

impl CtVolume {
    pub fn new(
        dims: (usize, usize, usize),
        spacing: (f64, f64, f64),
        origin: [f64; 3],
        intensities: Vec<f32>,
        skull_label: Option<Vec<bool>>,
    ) -> Result<Self, VolumeError> {
        if dims.0 == 0 || dims.1 == 0 || dims.2 == 0 {
            return Err(VolumeError::EmptyDims);
        }
        if spacing.0 <= 0.0 || spacing.1 <= 0.0 || spacing.2 <= 0.0 {
            return Err(VolumeError::BadSpacing);
        }
        let want = dims.0 * dims.1 * dims.2;
        if intensities.len() != want {
            return Err(VolumeError::SizeMismatch { got: intensities.len(), want });
        }
        if let Some(l) = &skull_label {
            if l.len() != want {
                return Err(VolumeError::SizeMismatch { got: l.len(), want });
            }
        }
        Ok(Self { dims, spacing, origin, intensities, skull_label })
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims.0 * (y + self.dims.1 * z)
    }

    /// Intensity at an integer voxel index; zero outside the grid.
    #[inline]
    pub fn intensity_at(&self, x: i64, y: i64, z: i64) -> f64 {
        if x < 0 || y < 0 || z < 0 {
            return 0.0;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.0 || y >= self.dims.1 || z >= self.dims.2 {
            return 0.0;
        }
        self.intensities[self.index(x, y, z)] as f64
    }

    #[inline]
    pub fn label_at(&self, labels: &[bool], x: i64, y: i64, z: i64) -> bool {
        if x < 0 || y < 0 || z < 0 {
            return false;
        }
        let (x, y, z) = (x as usize, y as usize, z as usize);
        if x >= self.dims.0 || y >= self.dims.1 || z >= self.dims.2 {
            return false;
        }
        labels[self.index(x, y, z)]
    }

    /// World (mm) -> continuous voxel index coordinates.
    #[inline]
    pub fn world_to_index(&self, w: [f64; 3]) -> [f64; 3] {
        [
            (w[0] - self.origin[0]) / self.spacing.0,
            (w[1] - self.origin[1]) / self.spacing.1,
            (w[2] - self.origin[2]) / self.spacing.2,
        ]
    }

    /// Trilinear interpolation at continuous index coordinates, zero outside.
    pub fn sample_trilinear(&self, idx: [f64; 3]) -> f64 {
        let x0 = idx[0].floor();
        let y0 = idx[1].floor();
        let z0 = idx[2].floor();
        let fx = idx[0] - x0;
        let fy = idx[1] - y0;
        let fz = idx[2] - z0;
        let (x0, y0, z0) = (x0 as i64, y0 as i64, z0 as i64);
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - fz } else { fz };
            if wz == 0.0 {
                continue;
            }
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - fy } else { fy };
                if wy == 0.0 {
                    continue;
                }
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - fx } else { fx };
                    if wx == 0.0 {
                        continue;
                    }
                    acc += wx * wy * wz * self.intensity_at(x0 + dx, y0 + dy, z0 + dz);
                }
            }
        }
        acc
    }
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

/// Reads a volume from a plain-text header referencing raw little-endian
/// 16-bit voxel data (and an optional byte-per-voxel label file).
pub fn read_volume<P: AsRef<Path>>(header_path: P) -> Result<CtVolume, VolumeError> {
    let header_path = header_path.as_ref();
    let text = std::fs::read_to_string(header_path)?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut data_path = None;
    let mut label_path = None;
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some(l) if l.trim() == "dualfluoro-volume v1" => {}
        other => return Err(VolumeError::Malformed(format!("expected 'dualfluoro-volume v1', got {other:?}"))),
    }
    for line in lines {
        let mut it = line.split_whitespace();
        let key = it.next().unwrap();
        let rest: Vec<&str> = it.collect();
        match key {
            "dims" => {
                let v: Vec<usize> = rest
                    .iter()
                    .map(|t| t.parse().map_err(|_| VolumeError::Malformed(format!("bad dims token {t:?}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 3 {
                    return Err(VolumeError::Malformed("dims expects 3 values".into()));
                }
                dims = Some((v[0], v[1], v[2]));
            }
            "spacing" | "origin" => {
                let v: Vec<f64> = rest
                    .iter()
                    .map(|t| t.parse().map_err(|_| VolumeError::Malformed(format!("bad {key} token {t:?}"))))
                    .collect::<Result<_, _>>()?;
                if v.len() != 3 {
                    return Err(VolumeError::Malformed(format!("{key} expects 3 values")));
                }
                if key == "spacing" {
                    spacing = Some((v[0], v[1], v[2]));
                } else {
                    origin = Some([v[0], v[1], v[2]]);
                }
            }
            "data" => data_path = Some(rest.join(" ")),
            "label" => label_path = Some(rest.join(" ")),
            other => return Err(VolumeError::Malformed(format!("unknown header key {other:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| VolumeError::Malformed("missing dims".into()))?;
    let spacing = spacing.ok_or_else(|| VolumeError::Malformed("missing spacing".into()))?;
    let origin = origin.ok_or_else(|| VolumeError::Malformed("missing origin".into()))?;
    let data_path = data_path.ok_or_else(|| VolumeError::Malformed("missing data".into()))?;

    let n = dims.0 * dims.1 * dims.2;
    let mut raw = Vec::new();
    std::fs::File::open(resolve(header_path, &data_path))?.read_to_end(&mut raw)?;
    if raw.len() != n * 2 {
        return Err(VolumeError::SizeMismatch { got: raw.len() / 2, want: n });
    }
    let intensities: Vec<f32> = raw
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]) as f32)
        .collect();

    let skull_label = match label_path {
        None => None,
        Some(lp) => {
            let mut lraw = Vec::new();
            std::fs::File::open(resolve(header_path, &lp))?.read_to_end(&mut lraw)?;
            if lraw.len() != n {
                return Err(VolumeError::SizeMismatch { got: lraw.len(), want: n });
            }
            Some(lraw.into_iter().map(|b| b != 0).collect())
        }
    };

    CtVolume::new(dims, spacing, origin, intensities, skull_label)
}

/// Writes the header plus raw data (intensities clamped to u16) next to it.
///
/// `stem` names the data files: `<stem>.raw` and, when labels are present,
/// `<stem>.label.raw`.
pub fn write_volume<P: AsRef<Path>>(header_path: P, volume: &CtVolume, stem: &str) -> Result<(), VolumeError> {
    let header_path = header_path.as_ref();
    let dir = header_path.parent().unwrap_or_else(|| Path::new("."));
    let data_name = format!("{stem}.raw");
    let mut header = String::from("dualfluoro-volume v1\n");
    header.push_str(&format!("dims {} {} {}\n", volume.dims.0, volume.dims.1, volume.dims.2));
    header.push_str(&format!("spacing {} {} {}\n", volume.spacing.0, volume.spacing.1, volume.spacing.2));
    header.push_str(&format!("origin {} {} {}\n", volume.origin[0], volume.origin[1], volume.origin[2]));
    header.push_str(&format!("data {data_name}\n"));

    let mut data = Vec::with_capacity(volume.intensities.len() * 2);
    for &v in &volume.intensities {
        let q = v.clamp(0.0, 65535.0).round() as u16;
        data.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::File::create(dir.join(&data_name))?.write_all(&data)?;

    if let Some(labels) = &volume.skull_label {
        let label_name = format!("{stem}.label.raw");
        let bytes: Vec<u8> = labels.iter().map(|&b| if b { 1 } else { 0 }).collect();
        std::fs::File::create(dir.join(&label_name))?.write_all(&bytes)?;
        header.push_str(&format!("label {label_name}\n"));
    }

    std::fs::write(header_path, header)?;
    Ok(())
}
