//! Bundle Adjustment in the Large text format.
//!
//! Layout: a header `num_cameras num_points num_observations`, one line per
//! observation `camera point u_x u_y`, then 9 parameters per camera (axis-angle,
//! translation, focal, k1, k2) and 3 per point, whitespace separated.

use std::fmt::Write as _;
use std::path::Path;

use asker::problem::rotation::Vec3;
use asker::problem::{BundleAdjustment, CameraPose, Intrinsics, Observation, ResidualMode};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum BalError {
    #[error("cannot read {path}: {error}")]
    Io { path: String, error: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] asker::Error),
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T, BalError> {
    Err(BalError::Parse { line, message: message.into() })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalObservation {
    pub camera: usize,
    pub point: usize,
    pub u: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalData {
    pub n_cameras: usize,
    pub n_points: usize,
    pub observations: Vec<BalObservation>,
    /// Axis-angle (3), translation (3), focal, k1, k2.
    pub cameras: Vec<[f64; 9]>,
    pub points: Vec<[f64; 3]>,
}

/// Whitespace tokens tagged with their 1-based line number.
struct Tokens<'a> {
    iter: Box<dyn Iterator<Item = (usize, &'a str)> + 'a>,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(lines: impl Iterator<Item = (usize, &'a str)> + 'a) -> Self {
        Self {
            iter: Box::new(lines.flat_map(|(n, l)| l.split_whitespace().map(move |t| (n + 1, t)))),
            last_line: 0,
        }
    }

    fn real(&mut self, what: &str) -> Result<f64, BalError> {
        let Some((line, tok)) = self.iter.next() else {
            return parse_err(self.last_line + 1, format!("unexpected end of file, expected {what}"));
        };
        self.last_line = line;
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => parse_err(line, format!("invalid {what} `{tok}`")),
        }
    }
}

fn parse_index(tok: &str, line: usize, what: &str, bound: usize) -> Result<usize, BalError> {
    let v: usize = tok.parse().or_else(|_| parse_err(line, format!("invalid {what} `{tok}`")))?;
    if v >= bound {
        return parse_err(line, format!("{what} {v} out of range (count {bound})"));
    }
    Ok(v)
}

impl BalData {
    pub fn parse(text: &str) -> Result<Self, BalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((hl, header)) = lines.next() else {
            return parse_err(1, "empty file, expected header `num_cameras num_points num_observations`");
        };
        let hl = hl + 1;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return parse_err(hl, format!("header needs 3 counts, found {} fields", fields.len()));
        }
        let mut counts = [0usize; 3];
        for (c, f) in counts.iter_mut().zip(&fields) {
            *c = f.parse().or_else(|_| parse_err(hl, format!("invalid count `{f}` in header")))?;
        }
        let [n_cameras, n_points, n_obs] = counts;
        if n_cameras == 0 || n_points == 0 || n_obs == 0 {
            return parse_err(hl, "header counts must be positive");
        }

        let mut observations = Vec::with_capacity(n_obs);
        for k in 0..n_obs {
            let Some((ln, l)) = lines.next() else {
                return parse_err(hl + k + 1, format!("unexpected end of file in observation {}", k + 1));
            };
            let ln = ln + 1;
            let f: Vec<&str> = l.split_whitespace().collect();
            if f.len() != 4 {
                return parse_err(
                    ln,
                    format!("observation {} of {n_obs} needs 4 fields `camera point u_x u_y`, found {}", k + 1, f.len()),
                );
            }
            let camera = parse_index(f[0], ln, "camera index", n_cameras)?;
            let point = parse_index(f[1], ln, "point index", n_points)?;
            let mut u = [0.0; 2];
            for (v, t) in u.iter_mut().zip(&f[2..]) {
                *v = t.parse().ok().filter(|x: &f64| x.is_finite()).map_or_else(
                    || parse_err(ln, format!("invalid image coordinate `{t}`")),
                    Ok,
                )?;
            }
            observations.push(BalObservation { camera, point, u });
        }

        let mut tokens = Tokens::new(lines);
        let mut cameras = Vec::with_capacity(n_cameras);
        for j in 0..n_cameras {
            let mut c = [0.0; 9];
            for v in c.iter_mut() {
                *v = tokens.real(&format!("parameter of camera {j}"))?;
            }
            cameras.push(c);
        }
        let mut points = Vec::with_capacity(n_points);
        for j in 0..n_points {
            let mut p = [0.0; 3];
            for v in p.iter_mut() {
                *v = tokens.real(&format!("coordinate of point {j}"))?;
            }
            points.push(p);
        }
        if let Some((line, tok)) = tokens.iter.next() {
            return parse_err(line, format!("trailing data `{tok}` after the last point"));
        }
        Ok(Self { n_cameras, n_points, observations, cameras, points })
    }

    pub fn read(path: &Path) -> Result<Self, BalError> {
        let text = std::fs::read_to_string(path)
            .map_err(|error| BalError::Io { path: path.display().to_string(), error })?;
        Self::parse(&text)
    }

    /// Same layout as the published files, reals with 17 significant digits.
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{} {} {}", self.n_cameras, self.n_points, self.observations.len()).unwrap();
        for o in &self.observations {
            writeln!(s, "{} {} {:.16e} {:.16e}", o.camera, o.point, o.u[0], o.u[1]).unwrap();
        }
        for v in self.cameras.iter().flatten().chain(self.points.iter().flatten()) {
            writeln!(s, "{v:.16e}").unwrap();
        }
        s
    }

    /// SHA-256 of the canonical serialization, lowercase hex.
    pub fn content_hash(&self) -> String {
        hex_digest(self.serialize().as_bytes())
    }

    /// Builds the problem and its initial parameters.
    ///
    /// BAL cameras look down −z. Metric mode flips to +z with D = diag(1, −1, −1)
    /// applied to the world frame (ω ← Dω, t ← Dt, X ← DX), removes the radial
    /// distortion and divides by the focal length; focal lengths become the
    /// per-camera scales used for pixel inlier thresholds.
    pub fn to_problem(&self, mode: ResidualMode) -> Result<(BundleAdjustment<f64>, Vec<f64>), BalError> {
        match mode {
            ResidualMode::Bal => {
                let obs = self
                    .observations
                    .iter()
                    .map(|o| Observation { camera: o.camera, point: o.point, u: o.u })
                    .collect();
                let problem = BundleAdjustment::new(mode, self.n_cameras, self.n_points, obs, None)?;
                let cams: Vec<CameraPose<f64>> = self
                    .cameras
                    .iter()
                    .map(|c| CameraPose {
                        rotation: [c[0], c[1], c[2]],
                        translation: [c[3], c[4], c[5]],
                        intrinsics: Some(Intrinsics { focal: c[6], k1: c[7], k2: c[8] }),
                    })
                    .collect();
                let theta = problem.pack(&cams, &self.points)?;
                Ok((problem, theta))
            }
            ResidualMode::Metric => {
                let mut obs = Vec::with_capacity(self.observations.len());
                for (k, o) in self.observations.iter().enumerate() {
                    let c = &self.cameras[o.camera];
                    if !(c[6] > 0.0) {
                        return Err(BalError::Invalid(format!(
                            "camera {} has non-positive focal length (observation {k})",
                            o.camera
                        )));
                    }
                    let p = undistort([o.u[0] / c[6], o.u[1] / c[6]], c[7], c[8]);
                    obs.push(Observation { camera: o.camera, point: o.point, u: [p[0], -p[1]] });
                }
                let scales = self.cameras.iter().map(|c| c[6]).collect();
                let problem = BundleAdjustment::new(mode, self.n_cameras, self.n_points, obs, Some(scales))?;
                let cams: Vec<CameraPose<f64>> = self
                    .cameras
                    .iter()
                    .map(|c| CameraPose { rotation: flip([c[0], c[1], c[2]]), translation: flip([c[3], c[4], c[5]]), intrinsics: None })
                    .collect();
                let points: Vec<Vec3<f64>> = self.points.iter().map(|&p| flip(p)).collect();
                let theta = problem.pack(&cams, &points)?;
                Ok((problem, theta))
            }
        }
    }

    /// Inverse of [`BalData::to_problem`]: writes a problem and parameters in
    /// BAL layout. Metric problems use their camera scales as focal lengths and
    /// zero distortion.
    pub fn from_problem(problem: &BundleAdjustment<f64>, theta: &[f64]) -> Result<Self, BalError> {
        let (cams, points) = problem.unpack(theta)?;
        let metric = problem.mode() == ResidualMode::Metric;
        let scales = problem.camera_scales();
        let observations = problem
            .observations()
            .iter()
            .map(|o| {
                let u = if metric {
                    let f = scales[o.camera];
                    [o.u[0] * f, -o.u[1] * f]
                } else {
                    o.u
                };
                BalObservation { camera: o.camera, point: o.point, u }
            })
            .collect();
        let cameras = cams
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let (w, t) = if metric { (flip(c.rotation), flip(c.translation)) } else { (c.rotation, c.translation) };
                let k = c.intrinsics.unwrap_or(Intrinsics { focal: scales[j], k1: 0.0, k2: 0.0 });
                [w[0], w[1], w[2], t[0], t[1], t[2], k.focal, k.k1, k.k2]
            })
            .collect();
        let points = points.iter().map(|&p| if metric { flip(p) } else { p }).collect();
        Ok(Self { n_cameras: problem.n_cameras(), n_points: problem.n_points(), observations, cameras, points })
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }
}

fn flip(v: Vec3<f64>) -> Vec3<f64> {
    [v[0], -v[1], -v[2]]
}

/// Solves d = p (1 + k1‖p‖² + k2‖p‖⁴) for p by fixed-point iteration.
fn undistort(d: [f64; 2], k1: f64, k2: f64) -> [f64; 2] {
    let mut p = d;
    for _ in 0..20 {
        let r2 = p[0] * p[0] + p[1] * p[1];
        let s = 1.0 + k1 * r2 + k2 * r2 * r2;
        if !(s > 0.0) {
            return d;
        }
        p = [d[0] / s, d[1] / s];
    }
    p
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use asker::Problem;

    const TINY: &str = "2 3 6
0 0 -3.859900e+02 3.871200e+02
1 0 -3.844000e+01 4.921200e+02
0 1 -6.679200e+02 1.231100e+02
1 1 -5.991700e+02 1.530300e+02
0 2 -1.000000e+01 2.000000e+01
1 2 3.000000e+01 -4.000000e+01
1.5741515942940262e-02
-1.2790936163850642e-02
-4.4008498081980789e-03
-3.4093839577186584e-02
-1.0751387104921525e-01
1.1202240291236032e+00
3.9975152639358436e+02
-3.1770643852803579e-07
5.8820490534559402e-13
1.5861964924504403e-02
-2.5234973936487149e-02
-9.4043748154426102e-03
-8.5675838279106445e-03
-1.2183225037208542e-01
7.1987099452200040e-01
4.0237965726850089e+02
-3.7803089979278303e-07
9.3071582579135300e-13
-1.2e-01
1.2e-01
-3.0e+00
2.0e-01
-1.0e-01
-2.5e+00
0.0
0.1
-3.5
";

    #[test]
    fn header_counts() {
        let b = BalData::parse(TINY).unwrap();
        assert_eq!((b.n_cameras, b.n_points, b.num_observations()), (2, 3, 6));
        assert_eq!(b.cameras[1][6], 4.0237965726850089e+02);
        assert_eq!(b.points[2], [0.0, 0.1, -3.5]);
    }

    #[test]
    fn round_trip_is_exact() {
        let a = BalData::parse(TINY).unwrap();
        let b = BalData::parse(&a.serialize()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.serialize(), b.serialize());
        assert_eq!(a.content_hash().len(), 64);
    }

    #[test]
    fn observation_count_mismatch_names_the_line() {
        let text = TINY.replacen("2 3 6", "2 3 7", 1);
        match BalData::parse(&text) {
            Err(BalError::Parse { line, message }) => {
                assert_eq!(line, 8, "{message}");
                assert!(message.contains("observation 7"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_inputs() {
        let err = |t: &str| match BalData::parse(t) {
            Err(BalError::Parse { line, .. }) => line,
            other => panic!("{other:?}"),
        };
        assert_eq!(err(""), 1);
        assert_eq!(err("2 3\n"), 1);
        assert_eq!(err(&TINY.replacen("1 2 3.0", "5 2 3.0", 1)), 7);
        let truncated: String = TINY.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert_eq!(err(&truncated), 21);
        assert_eq!(err(&format!("{TINY}7.0\n")), 35);
    }

    #[test]
    fn metric_conversion_round_trips() {
        let a = BalData::parse(TINY).unwrap();
        let zero_distortion = BalData {
            cameras: a.cameras.iter().map(|c| [c[0], c[1], c[2], c[3], c[4], c[5], c[6], 0.0, 0.0]).collect(),
            ..a
        };
        let (p, theta) = zero_distortion.to_problem(ResidualMode::Metric).unwrap();
        let back = BalData::from_problem(&p, &theta).unwrap();
        assert_eq!(back.cameras, zero_distortion.cameras);
        assert_eq!(back.points, zero_distortion.points);
        for (x, y) in back.observations.iter().zip(&zero_distortion.observations) {
            assert!((x.u[0] - y.u[0]).abs() < 1e-10 && (x.u[1] - y.u[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn metric_and_bal_residuals_agree_without_distortion() {
        let a = BalData::parse(TINY).unwrap();
        let a = BalData { cameras: a.cameras.iter().map(|c| { let mut c = *c; c[7] = 0.0; c[8] = 0.0; c }).collect(), ..a };
        let (pb, tb) = a.to_problem(ResidualMode::Bal).unwrap();
        let (pm, tm) = a.to_problem(ResidualMode::Metric).unwrap();
        for i in 0..pb.num_blocks() {
            let rb = pb.eval_block(i, &tb).unwrap();
            let rm = pm.eval_block(i, &tm).unwrap();
            let f = a.cameras[a.observations[i].camera][6];
            // pixels versus normalized units with the y axis flipped
            assert!((rb[0] - f * rm[0]).abs() < 1e-8 * f);
            assert!((rb[1] + f * rm[1]).abs() < 1e-8 * f);
        }
    }
}
