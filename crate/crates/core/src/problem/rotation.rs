//! Axis-angle rotations: exponential map, logarithm and the derivative of a
//! rotated point with respect to the axis-angle vector.

use crate::scalar::Real;

pub type Vec3<T> = [T; 3];
pub type Mat3<T> = [[T; 3]; 3];

const SMALL_ANGLE: f64 = 1e-6;

pub fn skew<T: Real>(v: &Vec3<T>) -> Mat3<T> {
    let z = T::zero();
    [[z, -v[2], v[1]], [v[2], z, -v[0]], [-v[1], v[0], z]]
}

pub fn mat_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn mat_vec<T: Real>(a: &Mat3<T>, v: &Vec3<T>) -> Vec3<T> {
    [
        a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
        a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
        a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
    ]
}

pub fn transpose<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[j][i];
        }
    }
    out
}

fn identity<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

fn add_scaled<T: Real>(a: &mut Mat3<T>, b: &Mat3<T>, c: T) {
    for i in 0..3 {
        for j in 0..3 {
            a[i][j] += c * b[i][j];
        }
    }
}

/// Rodrigues' formula R = exp([ω]×).
pub fn exp_so3<T: Real>(omega: &Vec3<T>) -> Mat3<T> {
    let theta2 = omega.iter().map(|&x| x * x).sum::<T>();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let k2 = mat_mul(&k, &k);
    let (a, b) = if theta < T::lit(SMALL_ANGLE) {
        (T::one() - theta2 / T::lit(6.0), T::lit(0.5) - theta2 / T::lit(24.0))
    } else {
        (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
    };
    let mut r = identity();
    add_scaled(&mut r, &k, a);
    add_scaled(&mut r, &k2, b);
    r
}

/// Right Jacobian of SO(3): J_r(ω) = I − (1−cosθ)/θ² [ω]× + (θ−sinθ)/θ³ [ω]×².
pub fn right_jacobian<T: Real>(omega: &Vec3<T>) -> Mat3<T> {
    let theta2 = omega.iter().map(|&x| x * x).sum::<T>();
    let theta = theta2.sqrt();
    let k = skew(omega);
    let k2 = mat_mul(&k, &k);
    let (a, b) = if theta < T::lit(SMALL_ANGLE) {
        (T::lit(0.5) - theta2 / T::lit(24.0), T::one() / T::lit(6.0) - theta2 / T::lit(120.0))
    } else {
        ((T::one() - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let mut j = identity();
    add_scaled(&mut j, &k, -a);
    add_scaled(&mut j, &k2, b);
    j
}

/// Returns (R p, ∂(R p)/∂ω) with ∂(R p)/∂ω = −R [p]× J_r(ω).
pub fn rotate_with_jacobian<T: Real>(omega: &Vec3<T>, p: &Vec3<T>) -> (Vec3<T>, Mat3<T>) {
    let r = exp_so3(omega);
    let rp = mat_vec(&r, p);
    let m = mat_mul(&mat_mul(&r, &skew(p)), &right_jacobian(omega));
    let mut d = m;
    for row in d.iter_mut() {
        for v in row.iter_mut() {
            *v = -*v;
        }
    }
    (rp, d)
}

/// Logarithm of a rotation matrix, |ω| ∈ [0, π].
pub fn log_so3<T: Real>(r: &Mat3<T>) -> Vec3<T> {
    let half = T::lit(0.5);
    let trace = r[0][0] + r[1][1] + r[2][2];
    let cos = ((trace - T::one()) * half).max(-T::one()).min(T::one());
    let theta = cos.acos();
    let w = [r[2][1] - r[1][2], r[0][2] - r[2][0], r[1][0] - r[0][1]];
    if theta < T::lit(1e-4) {
        // sinθ/θ ≈ 1 − θ²/6
        let f = half / (T::one() - theta * theta / T::lit(6.0));
        return [w[0] * f, w[1] * f, w[2] * f];
    }
    let pi = T::lit(std::f64::consts::PI);
    if pi - theta > T::lit(1e-3) {
        let f = theta / (T::lit(2.0) * theta.sin());
        return [w[0] * f, w[1] * f, w[2] * f];
    }
    // near π: R ≈ 2aaᵀ − I, take the best-conditioned column of (R + I)/2
    let mut best = 0;
    for i in 1..3 {
        if r[i][i] > r[best][best] {
            best = i;
        }
    }
    let mut axis = [T::zero(); 3];
    for (i, a) in axis.iter_mut().enumerate() {
        *a = (r[i][best] + if i == best { T::one() } else { T::zero() }) * half;
    }
    let n = axis.iter().map(|&x| x * x).sum::<T>().sqrt();
    for a in axis.iter_mut() {
        *a /= n;
    }
    // resolve the sign with the skew part (2 sinθ a)
    let dot = axis[0] * w[0] + axis[1] * w[1] + axis[2] * w[2];
    let s = if dot < T::zero() { -T::one() } else { T::one() };
    [axis[0] * s * theta, axis[1] * s * theta, axis[2] * s * theta]
}
