//! Kinematic (6x7) and augmented (7x7) Jacobians.
//!
//! Rows 0-2 are angular velocity, rows 3-5 the velocity (mm/s) of the tool
//! origin. For singular-value comparisons the angular rows, and the SEW row
//! of the augmented Jacobian, are scaled by [`CHARACTERISTIC_LENGTH_MM`] so
//! that every row carries length units.

use nalgebra::{SMatrix, SVector};

use crate::error::{KinematicsError, Result};
use crate::model::{forward_kinematics, JointVector, KinematicParams};
use crate::sew::sew_jacobian;
use crate::spatial::Vec3;

pub const CHARACTERISTIC_LENGTH_MM: f64 = 500.0;
/// Rank tolerance on `sigma_min / sigma_max` for exact inputs.
pub const RANK_TOL_EXACT: f64 = 1e-6;
/// Rank tolerance for configurations transcribed with two-decimal rounding.
pub const RANK_TOL_ROUNDED: f64 = 1e-3;

pub type Matrix6x7 = SMatrix<f64, 6, 7>;
pub type Matrix7 = SMatrix<f64, 7, 7>;

#[derive(Clone, Debug, PartialEq)]
pub struct KinematicJacobian(pub Matrix6x7);

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedJacobian(pub Matrix7);

fn sorted_desc(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

impl KinematicJacobian {
    pub fn normalized(&self) -> Matrix6x7 {
        let mut m = self.0;
        for r in 0..3 {
            m.row_mut(r).scale_mut(CHARACTERISTIC_LENGTH_MM);
        }
        m
    }

    /// Singular values of the normalized matrix, largest first.
    pub fn singular_values(&self) -> Vec<f64> {
        sorted_desc(self.normalized().singular_values().iter().copied().collect())
    }

    /// `sigma_6 / sigma_1` of the normalized matrix.
    pub fn sigma_ratio(&self) -> f64 {
        let s = self.singular_values();
        if s[0] == 0.0 {
            0.0
        } else {
            s[5] / s[0]
        }
    }

    /// Joint velocity producing the given twist `[w; v]`.
    pub fn apply(&self, qdot: &[f64; 7]) -> SVector<f64, 6> {
        self.0 * SVector::<f64, 7>::from_column_slice(qdot)
    }
}

impl AugmentedJacobian {
    pub fn kinematic(&self) -> KinematicJacobian {
        KinematicJacobian(self.0.fixed_rows::<6>(0).into_owned())
    }

    pub fn sew_row(&self) -> [f64; 7] {
        let mut out = [0.0; 7];
        for (i, v) in out.iter_mut().enumerate() {
            *v = self.0[(6, i)];
        }
        out
    }

    pub fn normalized(&self) -> Matrix7 {
        let mut m = self.0;
        for r in [0, 1, 2, 6] {
            m.row_mut(r).scale_mut(CHARACTERISTIC_LENGTH_MM);
        }
        m
    }

    pub fn singular_values(&self) -> Vec<f64> {
        sorted_desc(self.normalized().singular_values().iter().copied().collect())
    }

    pub fn sigma_min(&self) -> f64 {
        *self.singular_values().last().unwrap()
    }

    pub fn sigma_ratio(&self) -> f64 {
        let s = self.singular_values();
        if s[0] == 0.0 {
            0.0
        } else {
            s[6] / s[0]
        }
    }
}

/// Column `i` is `[w_i; w_i x (p_0T - O_i)]` with `w_i = R_{0,i-1} h_i`.
pub fn kinematic_jacobian(params: &KinematicParams, q: &JointVector) -> KinematicJacobian {
    let chain = forward_kinematics(params, q);
    let mut j = Matrix6x7::zeros();
    for i in 0..7 {
        let w = chain.axis(params, i + 1);
        let v = w.cross(&(chain.tool.p - chain.origins[i + 1]));
        j.fixed_view_mut::<3, 1>(0, i).copy_from(&w);
        j.fixed_view_mut::<3, 1>(3, i).copy_from(&v);
    }
    KinematicJacobian(j)
}

pub fn augmented_jacobian(
    params: &KinematicParams,
    q: &JointVector,
    e_r: &Vec3,
) -> Result<AugmentedJacobian> {
    let jk = kinematic_jacobian(params, q);
    let row = sew_jacobian(params, q, e_r)?;
    let mut m = Matrix7::zeros();
    m.fixed_rows_mut::<6>(0).copy_from(&jk.0);
    for (i, v) in row.iter().enumerate() {
        m[(6, i)] = *v;
    }
    Ok(AugmentedJacobian(m))
}

/// Unit joint velocity spanning the one-dimensional null space (the
/// self-motion direction), signed so its largest component is positive.
pub fn null_direction(j: &KinematicJacobian, rank_tol: f64) -> Result<[f64; 7]> {
    let ratio = j.sigma_ratio();
    if ratio < rank_tol {
        return Err(KinematicsError::AmbiguousNullSpace { ratio });
    }
    let mut padded = Matrix7::zeros();
    padded.fixed_rows_mut::<6>(0).copy_from(&j.normalized());
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    let mut v = [0.0; 7];
    for (c, out) in v.iter_mut().enumerate() {
        *out = v_t[(idx, c)];
    }
    let (imax, _) = v
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap();
    if v[imax] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::yumi_params;
    use crate::spatial::e_z;

    #[test]
    fn first_column_is_base_axis() {
        let params = yumi_params();
        for q in [JointVector::zeros(), JointVector::from_degrees([10.0, -40.0, 70.0, 20.0, 5.0, 60.0, -30.0])] {
            let j = kinematic_jacobian(&params, &q);
            assert_eq!(j.0[(0, 0)], 0.0);
            assert_eq!(j.0[(1, 0)], 0.0);
            assert_eq!(j.0[(2, 0)], 1.0);
        }
    }

    #[test]
    fn zero_configuration_is_kinematically_singular() {
        let j = kinematic_jacobian(&yumi_params(), &JointVector::zeros());
        assert!(j.sigma_ratio() < RANK_TOL_EXACT);
        assert!(matches!(null_direction(&j, RANK_TOL_EXACT), Err(KinematicsError::AmbiguousNullSpace { .. })));
    }

    #[test]
    fn augmented_contains_kinematic_rows() {
        let params = yumi_params();
        let q = JointVector::from_degrees([10.0, -40.0, 70.0, 20.0, 5.0, 60.0, -30.0]);
        let aug = augmented_jacobian(&params, &q, &e_z()).unwrap();
        assert_eq!(aug.kinematic(), kinematic_jacobian(&params, &q));
        assert_eq!(aug.sew_row(), sew_jacobian(&params, &q, &e_z()).unwrap());
        assert!(aug.sigma_min() > 0.0);
    }

    #[test]
    fn shoulder_null_direction_is_counterrotation() {
        let params = yumi_params();
        let q = JointVector::from_degrees([25.0, 0.0, -40.0, 50.0, 30.0, 70.0, 10.0]);
        let j = kinematic_jacobian(&params, &q);
        let v = null_direction(&j, RANK_TOL_EXACT).unwrap();
        let residual = j.apply(&v).norm();
        assert!(residual <= 1e-8 * j.0.norm(), "{residual}");
        assert!((v[0] + v[2]).abs() < 1e-9 && v[0].abs() > 0.7, "{v:?}");
    }
}
