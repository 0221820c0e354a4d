//! Rotation encodings used by the pose vector and their conversions.
//!
//! Joints are encoded with the continuous 6D representation (first two
//! columns of the rotation matrix, decoded by Gram–Schmidt); the jaw uses
//! XYZ Euler angles. All kinematics composes [`RotMatrix`] values.
//!
//! Euler convention: `R = Rz(yaw) * Ry(roll) * Rx(pitch)`, i.e. extrinsic
//! rotations applied about x, then y, then z.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gram–Schmidt rejects columns whose (residual) norm falls below this.
pub const GRAM_SCHMIDT_EPS: f64 = 1e-12;
/// Orthonormality / determinant tolerance for [`RotMatrix::new`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Unnormalized first two columns of a rotation matrix: `[c0.x, c0.y, c0.z, c1.x, c1.y, c1.z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Rot6D(pub [f64; 6]);

impl Rot6D {
    pub const IDENTITY: Rot6D = Rot6D([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    fn columns(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = &self.0;
        (
            Vector3::new(r[0], r[1], r[2]),
            Vector3::new(r[3], r[4], r[5]),
        )
    }
}

impl Default for Rot6D {
    fn default() -> Self {
        Rot6D::IDENTITY
    }
}

/// XYZ Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EulerXYZ {
    pub pitch: f64,
    pub roll: f64,
    pub yaw: f64,
}

impl EulerXYZ {
    pub fn new(pitch: f64, roll: f64, yaw: f64) -> Self {
        EulerXYZ { pitch, roll, yaw }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.pitch, self.roll, self.yaw]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        EulerXYZ::new(a[0], a[1], a[2])
    }
}

/// A proper rotation: `RᵀR = I` and `det R = +1` within [`ROTATION_TOL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotMatrix(Matrix3<f64>);

impl RotMatrix {
    pub fn identity() -> Self {
        RotMatrix(Matrix3::identity())
    }

    /// Validates orthonormality and orientation.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).amax();
        if err > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!(
                "orthonormality error {err:.3e}"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::InvalidRotation(format!("determinant {det}")));
        }
        Ok(RotMatrix(m))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }

    pub fn transpose(&self) -> RotMatrix {
        RotMatrix(self.0.transpose())
    }

    pub fn compose(&self, other: &RotMatrix) -> RotMatrix {
        RotMatrix(self.0 * other.0)
    }

    /// Row-major 3×3 array.
    pub fn to_rows(&self) -> [[f64; 3]; 3] {
        let m = &self.0;
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    }
}

/// Decode a 6D encoding: normalize the first column, orthogonalize the
/// second against it, and complete with the cross product.
pub fn rot6d_to_matrix(r: &Rot6D) -> Result<RotMatrix> {
    if !r.0.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite 6D rotation".into()));
    }
    let (a1, a2) = r.columns();
    let n1 = a1.norm();
    if n1 < GRAM_SCHMIDT_EPS {
        return Err(Error::DegenerateInput(format!(
            "first column norm {n1:e} below tolerance"
        )));
    }
    let b1 = a1 / n1;
    let u2 = a2 - b1 * b1.dot(&a2);
    let n2 = u2.norm();
    if n2 < GRAM_SCHMIDT_EPS {
        return Err(Error::DegenerateInput(
            "second column parallel to first".into(),
        ));
    }
    let b2 = u2 / n2;
    let b3 = b1.cross(&b2);
    Ok(RotMatrix(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Vector-Jacobian product of [`rot6d_to_matrix`]: maps `∂L/∂R` to `∂L/∂r`.
pub fn rot6d_to_matrix_vjp(r: &Rot6D, grad: &Matrix3<f64>) -> Result<[f64; 6]> {
    let (a1, a2) = r.columns();
    let n1 = a1.norm();
    if n1 < GRAM_SCHMIDT_EPS {
        return Err(Error::DegenerateInput("first column norm".into()));
    }
    let b1 = a1 / n1;
    let proj = b1.dot(&a2);
    let u2 = a2 - b1 * proj;
    let n2 = u2.norm();
    if n2 < GRAM_SCHMIDT_EPS {
        return Err(Error::DegenerateInput("parallel columns".into()));
    }
    let b2 = u2 / n2;

    let mut g1: Vector3<f64> = grad.column(0).into();
    let mut g2: Vector3<f64> = grad.column(1).into();
    let g3: Vector3<f64> = grad.column(2).into();

    // b3 = b1 × b2
    g1 += b2.cross(&g3);
    g2 += g3.cross(&b1);
    // b2 = u2 / |u2|
    let gu2 = (g2 - b2 * b2.dot(&g2)) / n2;
    // u2 = a2 - (b1·a2) b1
    let ga2 = gu2 - b1 * b1.dot(&gu2);
    g1 -= gu2 * proj + a2 * b1.dot(&gu2);
    // b1 = a1 / |a1|
    let ga1 = (g1 - b1 * b1.dot(&g1)) / n1;
    Ok([ga1.x, ga1.y, ga1.z, ga2.x, ga2.y, ga2.z])
}

/// First two columns of `R`.
pub fn matrix_to_rot6d(r: &RotMatrix) -> Result<Rot6D> {
    let m = RotMatrix::new(r.0)?.0;
    Ok(Rot6D([
        m[(0, 0)],
        m[(1, 0)],
        m[(2, 0)],
        m[(0, 1)],
        m[(1, 1)],
        m[(2, 1)],
    ]))
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

fn drot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(0.0, 0.0, 0.0, 0.0, -s, -c, 0.0, c, -s)
}

fn drot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, 0.0, c, 0.0, 0.0, 0.0, -c, 0.0, -s)
}

fn drot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(-s, -c, 0.0, c, -s, 0.0, 0.0, 0.0, 0.0)
}

/// `R = Rz(yaw) · Ry(roll) · Rx(pitch)`.
pub fn euler_to_matrix(e: &EulerXYZ) -> Result<RotMatrix> {
    if !(e.pitch.is_finite() && e.roll.is_finite() && e.yaw.is_finite()) {
        return Err(Error::DegenerateInput("non-finite Euler angles".into()));
    }
    Ok(RotMatrix(rot_z(e.yaw) * rot_y(e.roll) * rot_x(e.pitch)))
}

/// Vector-Jacobian product of [`euler_to_matrix`], returned as `[pitch, roll, yaw]`.
pub fn euler_to_matrix_vjp(e: &EulerXYZ, grad: &Matrix3<f64>) -> [f64; 3] {
    let (rx, ry, rz) = (rot_x(e.pitch), rot_y(e.roll), rot_z(e.yaw));
    let dp = rz * ry * drot_x(e.pitch);
    let dr = rz * drot_y(e.roll) * rx;
    let dy = drot_z(e.yaw) * ry * rx;
    [grad.dot(&dp), grad.dot(&dr), grad.dot(&dy)]
}

/// Yaw angle (radians) of `R` under the Euler convention above.
pub fn matrix_yaw(r: &Matrix3<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

/// Gradient of [`matrix_yaw`] with respect to the matrix entries.
pub fn matrix_yaw_grad(r: &Matrix3<f64>) -> Matrix3<f64> {
    let (c, s) = (r[(0, 0)], r[(1, 0)]);
    let den = c * c + s * s;
    let mut g = Matrix3::zeros();
    if den > 0.0 {
        g[(0, 0)] = -s / den;
        g[(1, 0)] = c / den;
    }
    g
}

/// Rodrigues' formula; the zero vector maps to the identity.
pub fn axis_angle_to_matrix(a: &[f64; 3]) -> Result<RotMatrix> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateInput("non-finite axis-angle".into()));
    }
    let v = Vector3::new(a[0], a[1], a[2]);
    let theta = v.norm();
    if theta == 0.0 {
        return Ok(RotMatrix::identity());
    }
    let k = v / theta;
    let kx = k.cross_matrix();
    let (s, c) = theta.sin_cos();
    Ok(RotMatrix(
        Matrix3::identity() + kx * s + kx * kx * (1.0 - c),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
        (a - b).amax() <= tol
    }

    #[test]
    fn identity_6d() {
        let r = rot6d_to_matrix(&Rot6D::IDENTITY).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
        assert_eq!(matrix_to_rot6d(&RotMatrix::identity()).unwrap(), Rot6D::IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z_from_6d() {
        // Columns (0,1,0) and (-1,0,0): x maps to y, y maps to -x.
        let r = rot6d_to_matrix(&Rot6D([0.0, 1.0, 0.0, -1.0, 0.0, 0.0])).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(close(r.matrix(), &expected, 1e-15));
    }

    #[test]
    fn quarter_turn_about_x_to_6d() {
        let r = axis_angle_to_matrix(&[FRAC_PI_2, 0.0, 0.0]).unwrap();
        let six = matrix_to_rot6d(&r).unwrap();
        let expected = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        for (a, b) in six.0.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_6d_rejected() {
        assert!(matches!(
            rot6d_to_matrix(&Rot6D([0.0; 6])),
            Err(Error::DegenerateInput(_))
        ));
        assert!(matches!(
            rot6d_to_matrix(&Rot6D([1.0, 0.0, 0.0, 2.0, 0.0, 0.0])),
            Err(Error::DegenerateInput(_))
        ));
    }

    #[test]
    fn invalid_matrix_rejected() {
        let m = Matrix3::identity() * 2.0;
        assert!(matches!(RotMatrix::new(m), Err(Error::InvalidRotation(_))));
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RotMatrix::new(reflect).is_err());
    }

    #[test]
    fn euler_cases() {
        let r = euler_to_matrix(&EulerXYZ::default()).unwrap();
        assert_eq!(*r.matrix(), Matrix3::identity());
        let r = euler_to_matrix(&EulerXYZ::new(PI, 0.0, 0.0)).unwrap();
        let expected = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        assert!(close(r.matrix(), &expected, 1e-15));
    }

    #[test]
    fn euler_order_is_z_y_x() {
        let e = EulerXYZ::new(0.3, -0.7, 1.1);
        let r = euler_to_matrix(&e).unwrap();
        let ax = axis_angle_to_matrix(&[0.3, 0.0, 0.0]).unwrap();
        let ay = axis_angle_to_matrix(&[0.0, -0.7, 0.0]).unwrap();
        let az = axis_angle_to_matrix(&[0.0, 0.0, 1.1]).unwrap();
        let composed = az.compose(&ay).compose(&ax);
        assert!(close(r.matrix(), composed.matrix(), 1e-14));
        assert!((matrix_yaw(r.matrix()) - 1.1).abs() < 1e-12);
    }

    #[test]
    fn axis_angle_cases() {
        assert_eq!(
            *axis_angle_to_matrix(&[0.0; 3]).unwrap().matrix(),
            Matrix3::identity()
        );
        let r = axis_angle_to_matrix(&[0.0, 0.0, FRAC_PI_2]).unwrap();
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!(close(r.matrix(), &expected, 1e-15));
        let full = axis_angle_to_matrix(&[0.0, 2.0 * PI, 0.0]).unwrap();
        assert!(close(full.matrix(), &Matrix3::identity(), 1e-9));
    }

    #[test]
    fn vjps_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-6;
        for _ in 0..20 {
            let r = Rot6D(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
            let g = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let analytic = rot6d_to_matrix_vjp(&r, &g).unwrap();
            for k in 0..6 {
                let (mut p, mut m) = (r, r);
                p.0[k] += h;
                m.0[k] -= h;
                let fp = g.dot(rot6d_to_matrix(&p).unwrap().matrix());
                let fm = g.dot(rot6d_to_matrix(&m).unwrap().matrix());
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
            let e = EulerXYZ::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            let analytic = euler_to_matrix_vjp(&e, &g);
            for k in 0..3 {
                let (mut p, mut m) = (e.to_array(), e.to_array());
                p[k] += h;
                m[k] -= h;
                let fp = g.dot(euler_to_matrix(&EulerXYZ::from_array(p)).unwrap().matrix());
                let fm = g.dot(euler_to_matrix(&EulerXYZ::from_array(m)).unwrap().matrix());
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - analytic[k]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn six() -> impl Strategy<Value = [f64; 6]> {
            prop::array::uniform6(-10.0f64..10.0)
        }

        proptest! {
            #[test]
            fn decoded_is_proper_rotation(r in six()) {
                if let Ok(m) = rot6d_to_matrix(&Rot6D(r)) {
                    prop_assert!(RotMatrix::new(*m.matrix()).is_ok());
                }
            }

            #[test]
            fn first_column_scale_invariant(r in six(), alpha in 0.01f64..100.0) {
                let mut scaled = r;
                for v in &mut scaled[..3] { *v *= alpha; }
                if let (Ok(a), Ok(b)) = (rot6d_to_matrix(&Rot6D(r)), rot6d_to_matrix(&Rot6D(scaled))) {
                    prop_assert!(close(a.matrix(), b.matrix(), 1e-9));
                }
            }

            #[test]
            fn roundtrip(aa in prop::array::uniform3(-3.0f64..3.0)) {
                let r = axis_angle_to_matrix(&aa).unwrap();
                let back = rot6d_to_matrix(&matrix_to_rot6d(&r).unwrap()).unwrap();
                prop_assert!(close(r.matrix(), back.matrix(), 1e-9));
            }
        }
    }
}
