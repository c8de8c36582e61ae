//! Named 3D model-frame landmarks and their left/right symmetry map.

use std::path::Path;

use nalgebra::Point3;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LandmarkError {
    #[error("symmetric pair index {0} out of range for {1} landmarks")]
    PairIndexOutOfRange(usize, usize),
    #[error("landmark {0} appears in more than one symmetric pair")]
    OverlappingPairs(usize),
    #[error("a symmetric pair must join two distinct landmarks")]
    SelfPair,
    #[error("skull configuration requires 33 landmarks with 13 symmetric pairs, got {n} with {pairs}")]
    NotSkullConfig { n: usize, pairs: usize },
    #[error("malformed landmark file: {0}")]
    Malformed(String),
    #[error("io error: {0}")]
    Io(String),
}

/// The expected skull configuration: 33 landmarks, 13 symmetric pairs.
pub const SKULL_LANDMARK_COUNT: usize = 33;
pub const SKULL_PAIR_COUNT: usize = 13;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedLandmark {
    pub name: String,
    pub position: Point3<f64>,
}

/// Model-frame landmark set with a disjoint symmetric-pair map (0-based
/// indices internally; files use 1-based indices).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet3D {
    pub points: Vec<NamedLandmark>,
    pub symmetric_pairs: Vec<(usize, usize)>,
}

impl LandmarkSet3D {
    pub fn new(points: Vec<NamedLandmark>, symmetric_pairs: Vec<(usize, usize)>) -> Result<Self, LandmarkError> {
        let n = points.len();
        let mut seen = vec![false; n];
        for &(a, b) in &symmetric_pairs {
            if a >= n {
                return Err(LandmarkError::PairIndexOutOfRange(a, n));
            }
            if b >= n {
                return Err(LandmarkError::PairIndexOutOfRange(b, n));
            }
            if a == b {
                return Err(LandmarkError::SelfPair);
            }
            for i in [a, b] {
                if seen[i] {
                    return Err(LandmarkError::OverlappingPairs(i));
                }
                seen[i] = true;
            }
        }
        Ok(Self { points, symmetric_pairs })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Point3<f64>> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// Checks the paper's skull configuration (33 landmarks, 13 pairs).
    pub fn validate_skull_config(&self) -> Result<(), LandmarkError> {
        if self.len() != SKULL_LANDMARK_COUNT || self.symmetric_pairs.len() != SKULL_PAIR_COUNT {
            return Err(LandmarkError::NotSkullConfig { n: self.len(), pairs: self.symmetric_pairs.len() });
        }
        Ok(())
    }
}

/// Serializes the set: `landmark <name> <x> <y> <z>` lines followed by
/// `pair <i> <j>` lines with 1-based indices.
pub fn format_landmark_file(set: &LandmarkSet3D) -> String {
    let mut s = String::from("dualfluoro-landmarks v1\n");
    for p in &set.points {
        s.push_str(&format!("landmark {} {} {} {}\n", p.name, p.position.x, p.position.y, p.position.z));
    }
    for &(a, b) in &set.symmetric_pairs {
        s.push_str(&format!("pair {} {}\n", a + 1, b + 1));
    }
    s
}

pub fn parse_landmark_file(text: &str) -> Result<LandmarkSet3D, LandmarkError> {
    let mut lines = text.lines().filter(|l| {
        let t = l.trim();
        !t.is_empty() && !t.starts_with('#')
    });
    match lines.next() {
        Some(l) if l.trim() == "dualfluoro-landmarks v1" => {}
        other => return Err(LandmarkError::Malformed(format!("expected 'dualfluoro-landmarks v1', got {other:?}"))),
    }
    let mut points = Vec::new();
    let mut pairs = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "landmark" => {
                if toks.len() != 5 {
                    return Err(LandmarkError::Malformed(format!("landmark line needs name + 3 coords: {line:?}")));
                }
                let coords: Vec<f64> = toks[2..5]
                    .iter()
                    .map(|t| t.parse().map_err(|_| LandmarkError::Malformed(format!("bad coordinate {t:?}"))))
                    .collect::<Result<_, _>>()?;
                points.push(NamedLandmark {
                    name: toks[1].to_string(),
                    position: Point3::new(coords[0], coords[1], coords[2]),
                });
            }
            "pair" => {
                if toks.len() != 3 {
                    return Err(LandmarkError::Malformed(format!("pair line needs two indices: {line:?}")));
                }
                let a: usize = toks[1].parse().map_err(|_| LandmarkError::Malformed(format!("bad index {:?}", toks[1])))?;
                let b: usize = toks[2].parse().map_err(|_| LandmarkError::Malformed(format!("bad index {:?}", toks[2])))?;
                if a == 0 || b == 0 {
                    return Err(LandmarkError::Malformed("pair indices are 1-based".into()));
                }
                pairs.push((a - 1, b - 1));
            }
            other => return Err(LandmarkError::Malformed(format!("unknown line kind {other:?}"))),
        }
    }
    LandmarkSet3D::new(points, pairs)
}

pub fn read_landmark_file<P: AsRef<Path>>(path: P) -> Result<LandmarkSet3D, LandmarkError> {
    let text = std::fs::read_to_string(path).map_err(|e| LandmarkError::Io(e.to_string()))?;
    parse_landmark_file(&text)
}

pub fn write_landmark_file<P: AsRef<Path>>(path: P, set: &LandmarkSet3D) -> Result<(), LandmarkError> {
    std::fs::write(path, format_landmark_file(set)).map_err(|e| LandmarkError::Io(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lm(name: &str, x: f64) -> NamedLandmark {
        NamedLandmark { name: name.into(), position: Point3::new(x, 0.0, 0.0) }
    }

    #[test]
    fn pair_validation() {
        let pts = vec![lm("a", 0.0), lm("b", 1.0), lm("c", 2.0)];
        assert!(LandmarkSet3D::new(pts.clone(), vec![(0, 1)]).is_ok());
        assert_eq!(
            LandmarkSet3D::new(pts.clone(), vec![(0, 3)]),
            Err(LandmarkError::PairIndexOutOfRange(3, 3))
        );
        assert_eq!(LandmarkSet3D::new(pts.clone(), vec![(1, 1)]), Err(LandmarkError::SelfPair));
        assert_eq!(
            LandmarkSet3D::new(pts, vec![(0, 1), (1, 2)]),
            Err(LandmarkError::OverlappingPairs(1))
        );
    }

    #[test]
    fn skull_config_check() {
        let pts: Vec<NamedLandmark> = (0..33).map(|i| lm(&format!("p{i}"), i as f64)).collect();
        let pairs: Vec<(usize, usize)> = (0..13).map(|i| (2 * i, 2 * i + 1)).collect();
        let set = LandmarkSet3D::new(pts, pairs).unwrap();
        set.validate_skull_config().unwrap();

        let small = LandmarkSet3D::new(vec![lm("a", 0.0)], vec![]).unwrap();
        assert!(matches!(small.validate_skull_config(), Err(LandmarkError::NotSkullConfig { .. })));
    }

    #[test]
    fn file_round_trip() {
        let pts = vec![lm("nasion", 0.5), lm("l_orbit", -3.25), lm("r_orbit", 3.25)];
        let set = LandmarkSet3D::new(pts, vec![(1, 2)]).unwrap();
        let text = format_landmark_file(&set);
        let back = parse_landmark_file(&text).unwrap();
        assert_eq!(back, set);
    }
}
