use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ba::{BundleAdjustment, CameraPose, Observation, ResidualMode};
use super::rotation::{exp_so3, log_so3, mat_mul, Vec3};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Synthetic metric bundle adjustment: a ring of cameras around a ball of
/// points. Observations are normalized image coordinates (pixels / focal).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthBaConfig {
    pub n_cameras: usize,
    pub n_points: usize,
    pub outlier_fraction: f64,
    /// Gaussian noise on each image coordinate, pixels.
    pub pixel_noise_sigma: f64,
    pub seed: u64,
    pub focal: f64,
    pub image_width: f64,
    pub image_height: f64,
    pub scene_radius: f64,
    pub ring_radius: f64,
    /// Per-axis standard deviation of the initial rotation error, radians.
    pub rotation_noise: f64,
    /// Initial translation error, as a fraction of the scene radius.
    pub translation_noise: f64,
    /// Initial point error, as a fraction of the scene radius.
    pub point_noise: f64,
}

impl Default for SynthBaConfig {
    fn default() -> Self {
        Self {
            n_cameras: 10,
            n_points: 100,
            outlier_fraction: 0.25,
            pixel_noise_sigma: 1.0,
            seed: 0,
            focal: 500.0,
            image_width: 640.0,
            image_height: 480.0,
            scene_radius: 1.0,
            ring_radius: 4.0,
            rotation_noise: 0.05,
            translation_noise: 0.05,
            point_noise: 0.0,
        }
    }
}

impl SynthBaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_cameras < 2 {
            return bad(format!("need at least 2 cameras, got {}", self.n_cameras));
        }
        if self.n_points < 4 {
            return bad(format!("need at least 4 points, got {}", self.n_points));
        }
        if !(0.0..=0.9).contains(&self.outlier_fraction) {
            return bad(format!("outlier fraction must lie in [0, 0.9], got {}", self.outlier_fraction));
        }
        for (name, v) in [
            ("pixel_noise_sigma", self.pixel_noise_sigma),
            ("rotation_noise", self.rotation_noise),
            ("translation_noise", self.translation_noise),
            ("point_noise", self.point_noise),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, v) in [
            ("focal", self.focal),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("scene_radius", self.scene_radius),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.ring_radius > 2.0 * self.scene_radius) {
            return bad("ring radius must exceed twice the scene radius".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthBa<T> {
    pub problem: BundleAdjustment<T>,
    pub theta_true: Vec<T>,
    pub theta_init: Vec<T>,
    /// `true` for observations replaced by gross outliers.
    pub outliers: Vec<bool>,
}

fn normalize(v: Vec3<f64>) -> Vec3<f64> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn cross(a: Vec3<f64>, b: Vec3<f64>) -> Vec3<f64> {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn cast<T: Real>(v: Vec3<f64>) -> Vec3<T> {
    [T::lit(v[0]), T::lit(v[1]), T::lit(v[2])]
}

pub fn synth_ba<T: Real>(config: &SynthBaConfig) -> Result<SynthBa<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let mut cameras = Vec::with_capacity(config.n_cameras);
    for j in 0..config.n_cameras {
        let phi = std::f64::consts::TAU * j as f64 / config.n_cameras as f64;
        let center = [
            config.ring_radius * phi.cos(),
            0.25 * config.scene_radius * (3.0 * phi).sin(),
            config.ring_radius * phi.sin(),
        ];
        let z = normalize([-center[0], -center[1], -center[2]]);
        let x = normalize(cross([0.0, 1.0, 0.0], z));
        let y = cross(z, x);
        let r = [x, y, z];
        let t = [
            -(r[0][0] * center[0] + r[0][1] * center[1] + r[0][2] * center[2]),
            -(r[1][0] * center[0] + r[1][1] * center[1] + r[1][2] * center[2]),
            -(r[2][0] * center[0] + r[2][1] * center[1] + r[2][2] * center[2]),
        ];
        cameras.push(CameraPose { rotation: log_so3(&r), translation: t, intrinsics: None });
    }

    let mut points = Vec::with_capacity(config.n_points);
    while points.len() < config.n_points {
        let p = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
            points.push([p[0] * config.scene_radius, p[1] * config.scene_radius, p[2] * config.scene_radius]);
        }
    }

    let half_w = 0.5 * config.image_width / config.focal;
    let half_h = 0.5 * config.image_height / config.focal;
    let noise = config.pixel_noise_sigma / config.focal;
    let mut observations = Vec::new();
    let mut outliers = Vec::new();
    for (ci, cam) in cameras.iter().enumerate() {
        for (pi, x) in points.iter().enumerate() {
            let p = cam.transform(x);
            let u = [p[0] / p[2], p[1] / p[2]];
            if p[2] <= 0.0 || u[0].abs() > half_w || u[1].abs() > half_h {
                continue;
            }
            let is_outlier = rng.random::<f64>() < config.outlier_fraction;
            let u = if is_outlier {
                [rng.random_range(-half_w..half_w), rng.random_range(-half_h..half_h)]
            } else {
                [u[0] + noise * unit.sample(&mut rng), u[1] + noise * unit.sample(&mut rng)]
            };
            observations.push(Observation { camera: ci, point: pi, u: [T::lit(u[0]), T::lit(u[1])] });
            outliers.push(is_outlier);
        }
    }

    let scales = vec![T::lit(config.focal); config.n_cameras];
    let problem = BundleAdjustment::new(ResidualMode::Metric, config.n_cameras, config.n_points, observations, Some(scales))?;

    let true_cams: Vec<CameraPose<T>> = cameras
        .iter()
        .map(|c| CameraPose { rotation: cast(c.rotation), translation: cast(c.translation), intrinsics: None })
        .collect();
    let true_points: Vec<Vec3<T>> = points.iter().map(|&p| cast(p)).collect();
    let theta_true = problem.pack(&true_cams, &true_points)?;

    let mut init_cams = Vec::with_capacity(cameras.len());
    for c in &cameras {
        let delta = [
            config.rotation_noise * unit.sample(&mut rng),
            config.rotation_noise * unit.sample(&mut rng),
            config.rotation_noise * unit.sample(&mut rng),
        ];
        let r = mat_mul(&exp_so3(&delta), &exp_so3(&c.rotation));
        let tn = config.translation_noise * config.scene_radius;
        let t = [
            c.translation[0] + tn * unit.sample(&mut rng),
            c.translation[1] + tn * unit.sample(&mut rng),
            c.translation[2] + tn * unit.sample(&mut rng),
        ];
        init_cams.push(CameraPose { rotation: cast(log_so3(&r)), translation: cast(t), intrinsics: None });
    }
    let pn = config.point_noise * config.scene_radius;
    let init_points: Vec<Vec3<T>> = points
        .iter()
        .map(|p| {
            cast([
                p[0] + pn * unit.sample(&mut rng),
                p[1] + pn * unit.sample(&mut rng),
                p[2] + pn * unit.sample(&mut rng),
            ])
        })
        .collect();
    let theta_init = problem.pack(&init_cams, &init_points)?;

    Ok(SynthBa { problem, theta_true, theta_init, outliers })
}
