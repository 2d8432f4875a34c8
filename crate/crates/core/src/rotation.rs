//! SO(3) helpers: Rodrigues' formula, rotation vectors and their derivatives.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this angle the trigonometric ratios switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

/// The cross-product matrix `[v]×`, so that `skew(v) * u == v.cross(&u)`.
#[inline]
pub fn skew(v: &Vec3) -> Mat3 {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation of `angle` radians about the unit `axis`:
/// `a aᵀ (1 − cos θ) + I cos θ + [a]× sin θ`.
pub fn rodrigues(axis: &Vec3, angle: f64) -> Mat3 {
    let (sin, cos) = angle.sin_cos();
    axis * axis.transpose() * (1.0 - cos) + Mat3::identity() * cos + skew(axis) * sin
}

/// Exponential map of a rotation vector (axis scaled by angle).
pub fn exp_so3(rotvec: &Vec3) -> Mat3 {
    let angle = rotvec.norm();
    if angle == 0.0 {
        return Mat3::identity();
    }
    rodrigues(&(rotvec / angle), angle)
}

/// Right Jacobian of SO(3) evaluated at the rotation vector `rotvec`.
pub fn right_jacobian(rotvec: &Vec3) -> Mat3 {
    let angle2 = rotvec.norm_squared();
    let angle = angle2.sqrt();
    let k = skew(rotvec);
    let (c1, c2) = if angle < SMALL_ANGLE {
        (0.5 - angle2 / 24.0, 1.0 / 6.0 - angle2 / 120.0)
    } else {
        let (sin, cos) = angle.sin_cos();
        ((1.0 - cos) / angle2, (angle - sin) / (angle2 * angle))
    };
    Mat3::identity() - k * c1 + k * k * c2
}

/// Jacobian of `exp_so3(rotvec) * r` with respect to `rotvec`.
pub fn rotate_jacobian(rotvec: &Vec3, r: &Vec3) -> Mat3 {
    -exp_so3(rotvec) * skew(r) * right_jacobian(rotvec)
}

/// Intrinsic X-Y-Z Euler angles: `Rx(e.x) · Ry(e.y) · Rz(e.z)`.
pub fn euler_xyz(euler: &Vec3) -> Mat3 {
    let rx = Rotation3::from_axis_angle(&Vector3::x_axis(), euler.x);
    let ry = Rotation3::from_axis_angle(&Vector3::y_axis(), euler.y);
    let rz = Rotation3::from_axis_angle(&Vector3::z_axis(), euler.z);
    (rx * ry * rz).into_inner()
}

/// Axis–angle decomposition of a rotation matrix. Identity maps to `(ẑ, 0)`.
pub fn axis_angle(rotation: &Mat3) -> (Vec3, f64) {
    let rot = Rotation3::from_matrix_unchecked(*rotation);
    match rot.axis_angle() {
        Some((axis, angle)) => (axis.into_inner(), angle),
        None => (Vector3::z(), 0.0),
    }
}

/// Normalizes `v`, falling back to `ẑ` for the zero vector.
pub fn unit_or_z(v: &Vec3) -> Vec3 {
    Unit::try_new(*v, 0.0)
        .map(Unit::into_inner)
        .unwrap_or_else(Vector3::z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn quarter_turn_about_z() {
        let r = rodrigues(&Vector3::z(), FRAC_PI_2);
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert_relative_eq!(r, expected, epsilon = 1e-15);
    }

    #[test]
    fn exp_matches_nalgebra() {
        let w = Vector3::new(0.3, -1.1, 0.7);
        let ours = exp_so3(&w);
        let theirs = Rotation3::from_scaled_axis(w).into_inner();
        assert_relative_eq!(ours, theirs, epsilon = 1e-14);
    }

    #[test]
    fn rotate_jacobian_matches_central_differences() {
        let r = Vector3::new(0.4, -0.2, 1.3);
        for w in [
            Vector3::zeros(),
            Vector3::new(1e-6, 0.0, -2e-6),
            Vector3::new(0.2, 0.5, -0.9),
            Vector3::new(2.0, -1.0, 0.5),
        ] {
            let jac = rotate_jacobian(&w, &r);
            let h = 1e-6;
            for k in 0..3 {
                let mut dw = Vector3::zeros();
                dw[k] = h;
                let fd = (exp_so3(&(w + dw)) * r - exp_so3(&(w - dw)) * r) / (2.0 * h);
                assert_relative_eq!(jac.column(k).into_owned(), fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn single_axis_euler_angles_keep_their_axis() {
        let (axis, angle) = axis_angle(&euler_xyz(&Vector3::new(0.0, 0.0, 0.3)));
        assert_relative_eq!(axis, Vector3::z(), epsilon = 1e-12);
        assert_relative_eq!(angle, 0.3, epsilon = 1e-12);
        let (axis, angle) = axis_angle(&euler_xyz(&Vector3::new(-0.4, 0.0, 0.0)));
        assert_relative_eq!(axis * angle, Vector3::new(-0.4, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn euler_is_intrinsic_xyz() {
        let e = Vector3::new(0.1, 0.2, 0.3);
        let expected = exp_so3(&(Vector3::x() * 0.1))
            * exp_so3(&(Vector3::y() * 0.2))
            * exp_so3(&(Vector3::z() * 0.3));
        assert_relative_eq!(euler_xyz(&e), expected, epsilon = 1e-14);
    }
}
