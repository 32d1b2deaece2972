//! Reference tables shipped with the crate: arm angles for ten
//! configurations and the full solution set for one inverse kinematics
//! request. Values are degrees at two decimals, as displayed by RobotStudio.

use serde::Deserialize;

use crate::error::{KinematicsError, Result};
use crate::ik::IkRequest;
use crate::model::{JointVector, KinematicParams};
use crate::sew::Convention;
use crate::spatial::e_z;

pub const TABLE1_CSV: &str = include_str!("../fixtures/table1.csv");
pub const TABLE2_CSV: &str = include_str!("../fixtures/table2.csv");

/// One configuration of the arm angle comparison.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct ArmAngleRow {
    pub row: usize,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub q5: f64,
    pub q6: f64,
    pub q7: f64,
    pub psi_rs_z: f64,
    pub psi_abb_z: f64,
    pub psi_sign_z: f64,
    pub psi_rs_y: f64,
    pub psi_abb_y: f64,
    pub psi_sign_y: f64,
    #[serde(deserialize_with = "flag")]
    pub discrepant: bool,
}

/// One listed inverse kinematics solution.
#[derive(Clone, Copy, Debug, PartialEq, Deserialize)]
pub struct SolutionRow {
    pub row: usize,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub q5: f64,
    pub q6: f64,
    pub q7: f64,
    #[serde(deserialize_with = "flag")]
    pub in_limits: bool,
}

fn flag<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    match u8::deserialize(d)? {
        0 => Ok(false),
        1 => Ok(true),
        v => Err(serde::de::Error::custom(format!("expected 0 or 1, got {v}"))),
    }
}

impl ArmAngleRow {
    pub fn q_deg(&self) -> [f64; 7] {
        [self.q1, self.q2, self.q3, self.q4, self.q5, self.q6, self.q7]
    }

    pub fn q(&self) -> JointVector {
        JointVector::from_degrees(self.q_deg())
    }
}

impl SolutionRow {
    pub fn q_deg(&self) -> [f64; 7] {
        [self.q1, self.q2, self.q3, self.q4, self.q5, self.q6, self.q7]
    }

    pub fn q(&self) -> JointVector {
        JointVector::from_degrees(self.q_deg())
    }
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    reader.deserialize().map(|r| r.map_err(Into::into)).collect()
}

pub fn arm_angle_table() -> Result<Vec<ArmAngleRow>> {
    parse(TABLE1_CSV)
}

pub fn solution_table() -> Result<Vec<SolutionRow>> {
    parse(TABLE2_CSV)
}

/// The request behind the solution table. Its pose is not listed, so it is
/// rebuilt from the first row: tool pose and ABB arm angle about `e_z`.
pub fn solution_table_request(params: &KinematicParams) -> Result<IkRequest> {
    let rows = solution_table()?;
    let first = rows.first().ok_or_else(|| KinematicsError::InvalidInput("solution table is empty".into()))?;
    IkRequest::from_configuration(params, &first.q(), Convention::Abb, e_z())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_parse_completely() {
        let t1 = arm_angle_table().unwrap();
        assert_eq!(t1.len(), 10);
        assert_eq!(t1.iter().filter(|r| r.discrepant).count(), 5);
        assert!(t1.iter().enumerate().all(|(i, r)| r.row == i + 1));
        let t2 = solution_table().unwrap();
        assert_eq!(t2.len(), 10);
        assert_eq!(t2.iter().filter(|r| r.in_limits).map(|r| r.row).collect::<Vec<_>>(), vec![1, 2, 3, 4]);
    }
}
