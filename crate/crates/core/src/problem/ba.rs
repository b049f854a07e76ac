use super::rotation::{exp_so3, mat_vec, rotate_with_jacobian, Mat3, Vec3};
use super::Problem;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Smallest admissible depth of a transformed point.
pub const DEPTH_EPSILON: f64 = 1e-8;

/// How a bundle-adjustment residual is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResidualMode {
    /// u − π(R X + t) on normalized observations, camera looks along +z.
    /// Cameras carry 6 parameters (axis-angle, translation).
    Metric,
    /// BAL camera model: −z forward, focal length and two radial terms
    /// inside the residual, observations in pixels. 9 parameters per camera.
    Bal,
}

impl ResidualMode {
    pub fn camera_dim(self) -> usize {
        match self {
            ResidualMode::Metric => 6,
            ResidualMode::Bal => 9,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ResidualMode::Metric => "metric",
            ResidualMode::Bal => "bal",
        }
    }
}

impl std::str::FromStr for ResidualMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metric" => Ok(ResidualMode::Metric),
            "bal" => Ok(ResidualMode::Bal),
            other => Err(Error::InvalidConfig(format!("unknown residual mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics<T> {
    pub focal: T,
    pub k1: T,
    pub k2: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose<T> {
    /// Axis-angle, radians times unit axis.
    pub rotation: Vec3<T>,
    pub translation: Vec3<T>,
    /// Present in BAL mode only.
    pub intrinsics: Option<Intrinsics<T>>,
}

impl<T: Real> CameraPose<T> {
    pub fn rotation_matrix(&self) -> Mat3<T> {
        exp_so3(&self.rotation)
    }

    /// R X + t.
    pub fn transform(&self, x: &Vec3<T>) -> Vec3<T> {
        let p = mat_vec(&self.rotation_matrix(), x);
        [p[0] + self.translation[0], p[1] + self.translation[1], p[2] + self.translation[2]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T> {
    pub camera: usize,
    pub point: usize,
    pub u: [T; 2],
}

/// Bundle adjustment over cameras and 3-D points; one 2-D residual block per
/// observation. θ holds all cameras first, then all points.
#[derive(Debug, Clone, PartialEq)]
pub struct BundleAdjustment<T> {
    mode: ResidualMode,
    n_cameras: usize,
    n_points: usize,
    observations: Vec<Observation<T>>,
    supports: Vec<Vec<usize>>,
    camera_scales: Vec<T>,
}

impl<T: Real> BundleAdjustment<T> {
    /// `camera_scales` maps a residual norm to inlier-threshold units per
    /// camera (the focal length for normalized observations); pass `None` for 1.
    pub fn new(
        mode: ResidualMode,
        n_cameras: usize,
        n_points: usize,
        observations: Vec<Observation<T>>,
        camera_scales: Option<Vec<T>>,
    ) -> Result<Self> {
        if n_cameras == 0 || n_points == 0 || observations.is_empty() {
            return Err(Error::InvalidConfig(
                "bundle adjustment needs at least one camera, point and observation".into(),
            ));
        }
        let camera_scales = camera_scales.unwrap_or_else(|| vec![T::one(); n_cameras]);
        if camera_scales.len() != n_cameras || camera_scales.iter().any(|s| !(*s > T::zero())) {
            return Err(Error::InvalidConfig("camera scales must be positive, one per camera".into()));
        }
        let cd = mode.camera_dim();
        let point_base = cd * n_cameras;
        let mut supports = Vec::with_capacity(observations.len());
        for (k, o) in observations.iter().enumerate() {
            if o.camera >= n_cameras || o.point >= n_points {
                return Err(Error::InvalidConfig(format!(
                    "observation {k} references camera {} / point {} out of range",
                    o.camera, o.point
                )));
            }
            if !o.u[0].is_finite() || !o.u[1].is_finite() {
                return Err(Error::InvalidConfig(format!("observation {k} is not finite")));
            }
            let mut s: Vec<usize> = (o.camera * cd..(o.camera + 1) * cd).collect();
            s.extend(point_base + 3 * o.point..point_base + 3 * o.point + 3);
            supports.push(s);
        }
        Ok(Self { mode, n_cameras, n_points, observations, supports, camera_scales })
    }

    pub fn mode(&self) -> ResidualMode {
        self.mode
    }

    pub fn n_cameras(&self) -> usize {
        self.n_cameras
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn camera_scales(&self) -> &[T] {
        &self.camera_scales
    }

    fn point_offset(&self, j: usize) -> usize {
        self.mode.camera_dim() * self.n_cameras + 3 * j
    }

    /// Flattens cameras then points into θ.
    pub fn pack(&self, cameras: &[CameraPose<T>], points: &[Vec3<T>]) -> Result<Vec<T>> {
        if cameras.len() != self.n_cameras || points.len() != self.n_points {
            return Err(Error::InvalidConfig("camera/point count mismatch".into()));
        }
        let mut theta = Vec::with_capacity(self.param_dim());
        for c in cameras {
            theta.extend_from_slice(&c.rotation);
            theta.extend_from_slice(&c.translation);
            if self.mode == ResidualMode::Bal {
                let k = c
                    .intrinsics
                    .ok_or_else(|| Error::InvalidConfig("BAL mode requires camera intrinsics".into()))?;
                theta.extend_from_slice(&[k.focal, k.k1, k.k2]);
            }
        }
        for p in points {
            theta.extend_from_slice(p);
        }
        Ok(theta)
    }

    #[allow(clippy::type_complexity)]
    pub fn unpack(&self, theta: &[T]) -> Result<(Vec<CameraPose<T>>, Vec<Vec3<T>>)> {
        super::check_theta(self, theta)?;
        let cameras = (0..self.n_cameras).map(|j| self.camera(theta, j)).collect();
        let points = (0..self.n_points).map(|j| self.point(theta, j)).collect();
        Ok((cameras, points))
    }

    fn camera(&self, theta: &[T], j: usize) -> CameraPose<T> {
        let cd = self.mode.camera_dim();
        let c = &theta[j * cd..(j + 1) * cd];
        CameraPose {
            rotation: [c[0], c[1], c[2]],
            translation: [c[3], c[4], c[5]],
            intrinsics: (self.mode == ResidualMode::Bal).then(|| Intrinsics { focal: c[6], k1: c[7], k2: c[8] }),
        }
    }

    fn point(&self, theta: &[T], j: usize) -> Vec3<T> {
        let o = self.point_offset(j);
        [theta[o], theta[o + 1], theta[o + 2]]
    }

    fn depth_check(&self, i: usize, depth: T) -> Result<()> {
        if depth > T::lit(DEPTH_EPSILON) {
            Ok(())
        } else {
            Err(Error::Cheirality { block: i, depth: depth.to_f64_lossy(), epsilon: DEPTH_EPSILON })
        }
    }
}

impl<T: Real> Problem<T> for BundleAdjustment<T> {
    fn param_dim(&self) -> usize {
        self.mode.camera_dim() * self.n_cameras + 3 * self.n_points
    }

    fn num_blocks(&self) -> usize {
        self.observations.len()
    }

    fn block_dim(&self, _i: usize) -> usize {
        2
    }

    fn block_support(&self, i: usize) -> &[usize] {
        &self.supports[i]
    }

    fn residual_scale(&self, i: usize) -> T {
        self.camera_scales[self.observations[i].camera]
    }

    fn residual_into(&self, i: usize, theta: &[T], out: &mut [T]) -> Result<()> {
        let o = &self.observations[i];
        let cam = self.camera(theta, o.camera);
        let p = cam.transform(&self.point(theta, o.point));
        match self.mode {
            ResidualMode::Metric => {
                self.depth_check(i, p[2])?;
                out[0] = o.u[0] - p[0] / p[2];
                out[1] = o.u[1] - p[1] / p[2];
            }
            ResidualMode::Bal => {
                self.depth_check(i, -p[2])?;
                let k = cam.intrinsics.expect("bal camera");
                let (x, y) = (-p[0] / p[2], -p[1] / p[2]);
                let r2 = x * x + y * y;
                let d = T::one() + k.k1 * r2 + k.k2 * r2 * r2;
                out[0] = o.u[0] - k.focal * d * x;
                out[1] = o.u[1] - k.focal * d * y;
            }
        }
        Ok(())
    }

    fn jacobian_into(&self, i: usize, theta: &[T], out: &mut [T]) -> Result<()> {
        let o = &self.observations[i];
        let cam = self.camera(theta, o.camera);
        let x = self.point(theta, o.point);
        let (rx, d_omega) = rotate_with_jacobian(&cam.rotation, &x);
        let p = [rx[0] + cam.translation[0], rx[1] + cam.translation[1], rx[2] + cam.translation[2]];
        let rot = cam.rotation_matrix();
        let cd = self.mode.camera_dim();
        let cols = cd + 3;

        // a = ∂(P_x/P_z, P_y/P_z)/∂P
        let iz = T::one() / p[2];
        let a = [[iz, T::zero(), -p[0] * iz * iz], [T::zero(), iz, -p[1] * iz * iz]];

        // m = ∂r/∂P
        let mut m = [[T::zero(); 3]; 2];
        match self.mode {
            ResidualMode::Metric => {
                self.depth_check(i, p[2])?;
                for r in 0..2 {
                    for c in 0..3 {
                        m[r][c] = -a[r][c];
                    }
                }
            }
            ResidualMode::Bal => {
                self.depth_check(i, -p[2])?;
                let k = cam.intrinsics.expect("bal camera");
                let q = [-p[0] * iz, -p[1] * iz];
                let r2 = q[0] * q[0] + q[1] * q[1];
                let d = T::one() + k.k1 * r2 + k.k2 * r2 * r2;
                let dd = T::lit(2.0) * k.k1 + T::lit(4.0) * k.k2 * r2;
                // proj = f d q, ∂proj/∂q = f (d I + dd q qᵀ), ∂q/∂P = −a, r = u − proj
                for r in 0..2 {
                    for c in 0..3 {
                        let mut s = T::zero();
                        for l in 0..2 {
                            let dq = if r == l { d } else { T::zero() } + dd * q[r] * q[l];
                            s += k.focal * dq * (-a[l][c]);
                        }
                        m[r][c] = -s;
                    }
                }
                for r in 0..2 {
                    out[r * cols + 6] = -d * q[r];
                    out[r * cols + 7] = -k.focal * r2 * q[r];
                    out[r * cols + 8] = -k.focal * r2 * r2 * q[r];
                }
            }
        }

        for r in 0..2 {
            for c in 0..3 {
                out[r * cols + c] = (0..3).map(|l| m[r][l] * d_omega[l][c]).sum();
                out[r * cols + 3 + c] = m[r][c];
                out[r * cols + cd + c] = (0..3).map(|l| m[r][l] * rot[l][c]).sum();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_camera() -> CameraPose<f64> {
        CameraPose { rotation: [0.0; 3], translation: [0.0; 3], intrinsics: None }
    }

    #[test]
    fn metric_residual_example() {
        let obs = vec![Observation { camera: 0, point: 0, u: [1.0, 2.0] }];
        let ba = BundleAdjustment::new(ResidualMode::Metric, 1, 1, obs, None).unwrap();
        let theta = ba.pack(&[identity_camera()], &[[2.0, 4.0, 2.0]]).unwrap();
        assert_eq!(ba.eval_block(0, &theta).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn projection_jacobian_example() {
        let obs = vec![Observation { camera: 0, point: 0, u: [0.0, 0.0] }];
        let ba = BundleAdjustment::new(ResidualMode::Metric, 1, 1, obs, None).unwrap();
        let theta = ba.pack(&[identity_camera()], &[[0.0, 0.0, 1.0]]).unwrap();
        let j = ba.eval_block_jacobian(0, &theta).unwrap();
        // residual is u − π, so ∂r/∂X = −∂π/∂X = −[[1,0,0],[0,1,0]]
        let expect = [[-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]];
        for r in 0..2 {
            for c in 0..3 {
                assert!((j.get(r, 6 + c) - expect[r][c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cheirality_is_reported() {
        let obs = vec![Observation { camera: 0, point: 0, u: [0.0, 0.0] }];
        let ba = BundleAdjustment::new(ResidualMode::Metric, 1, 1, obs, None).unwrap();
        let theta = ba.pack(&[identity_camera()], &[[0.0, 0.0, -1.0]]).unwrap();
        assert!(matches!(ba.eval_block(0, &theta), Err(Error::Cheirality { .. })));
        assert!(matches!(ba.eval_block_jacobian(0, &theta), Err(Error::Cheirality { .. })));
    }

    #[test]
    fn rejects_bad_indices() {
        let obs = vec![Observation { camera: 1, point: 0, u: [0.0, 0.0] }];
        assert!(BundleAdjustment::<f64>::new(ResidualMode::Metric, 1, 1, obs, None).is_err());
    }

    #[test]
    fn layout_is_cameras_then_points() {
        let obs = vec![
            Observation { camera: 1, point: 2, u: [0.0, 0.0] },
            Observation { camera: 0, point: 0, u: [0.0, 0.0] },
        ];
        let ba = BundleAdjustment::<f64>::new(ResidualMode::Bal, 2, 3, obs, None).unwrap();
        assert_eq!(ba.param_dim(), 18 + 9);
        assert_eq!(ba.block_support(0), &[9, 10, 11, 12, 13, 14, 15, 16, 17, 24, 25, 26]);
        assert_eq!(ba.block_support(1), &[0, 1, 2, 3, 4, 5, 6, 7, 8, 18, 19, 20]);
    }
}
