use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::taxonomy::Branch;

/// Shape distribution of one branch class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchShape {
    /// Radius at the origin and at the tip, in mm; linear taper between.
    pub radius: [f64; 2],
    /// Length range in mm.
    pub length: [f64; 2],
    /// Range of the angle between the parent tangent and the initial
    /// direction, in degrees (ignored for roots).
    pub angle_deg: [f64; 2],
    /// Range of the origin position along the parent, as a fraction of the
    /// parent's vertex count (ignored for roots).
    pub origin_fraction: [f64; 2],
    /// Preferred heading: the absolute initial direction for roots, the
    /// side toward which a child turns away from its parent otherwise.
    pub heading: [f64; 3],
}

impl BranchShape {
    fn new(radius: [f64; 2], length: [f64; 2], angle_deg: [f64; 2], origin_fraction: [f64; 2], heading: [f64; 3]) -> Self {
        Self {
            radius,
            length,
            angle_deg,
            origin_fraction,
            heading,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub dims: [usize; 3],
    /// mm per voxel.
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    pub left_ostium: [f64; 3],
    pub right_ostium: [f64; 3],
    /// One entry per class, in class order (LM first).
    pub branches: Vec<BranchShape>,
    /// Probability that each optional branch (D2, OM2) is present.
    pub optional_probability: f64,
    /// Standard deviation of the per-millimeter direction perturbation, in
    /// radians.
    pub curvature_noise: f64,
    /// Fraction of the deviation from the initial direction removed at each
    /// step, keeping walks from wandering off.
    pub heading_pull: f64,
    /// Minimum gap between the tube surfaces of unrelated branches, mm.
    pub clearance: f64,
    /// Tries per tree before giving up on the clearance and bounds checks.
    pub max_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let lm = BranchShape::new([2.0, 1.6], [8.0, 11.0], [0.0, 0.0], [0.0, 0.0], [0.8, 0.1, -0.6]);
        let trunk = |length, angle, heading| BranchShape::new([1.8, 0.9], length, angle, [1.0, 1.0], heading);
        let side = |length, angle, fraction, heading| BranchShape::new([1.2, 0.7], length, angle, fraction, heading);
        Self {
            dims: [128, 128, 128],
            spacing: [0.35, 0.35, 0.6],
            origin: [0.0, 0.0, 0.0],
            left_ostium: [19.0, 16.0, 70.0],
            right_ostium: [12.0, 26.0, 70.0],
            branches: vec![
                lm,
                trunk([48.0, 58.0], [30.0, 45.0], [0.05, -0.12, -0.99]),
                trunk([32.0, 40.0], [30.0, 45.0], [0.2, 0.35, -0.9]),
                BranchShape::new([1.8, 0.9], [44.0, 52.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.2, -0.97]),
                side([15.0, 22.0], [30.0, 40.0], [0.3, 0.4], [1.0, 0.0, 0.0]),
                side([14.0, 20.0], [30.0, 40.0], [0.55, 0.7], [1.0, 0.0, 0.0]),
                side([15.0, 22.0], [35.0, 50.0], [0.35, 0.5], [0.2, 1.0, 0.0]),
                side([14.0, 20.0], [35.0, 50.0], [0.65, 0.8], [0.2, 1.0, 0.0]),
                side([16.0, 22.0], [30.0, 45.0], [1.0, 1.0], [1.0, 0.0, 0.0]),
                side([14.0, 20.0], [30.0, 45.0], [1.0, 1.0], [0.0, -1.0, 0.0]),
            ],
            optional_probability: 0.7,
            curvature_noise: 0.08,
            heading_pull: 0.15,
            clearance: 0.5,
            max_attempts: 500,
        }
    }
}

impl SynthConfig {
    pub fn shape(&self, branch: Branch) -> &BranchShape {
        &self.branches[branch.class() as usize - 1]
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.dims.contains(&0) {
            return bad(format!("grid dims {:?} must be positive", self.dims));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad(format!("spacing {:?} must be positive", self.spacing));
        }
        if self.branches.len() != Branch::ALL.len() {
            return bad(format!("{} branch shapes, expected {}", self.branches.len(), Branch::ALL.len()));
        }
        // Thinner tubes than one voxel vanish or fragment when voxelized.
        let min_radius = self.max_spacing();
        for b in Branch::ALL {
            let s = self.shape(b);
            let name = b.name();
            if s.radius.iter().any(|&r| r < min_radius) {
                return bad(format!("{name}: radius {:?} below the voxel size {min_radius}", s.radius));
            }
            if !(s.length[0] >= 1.0 && s.length[0] <= s.length[1]) {
                return bad(format!("{name}: bad length range {:?}", s.length));
            }
            if s.angle_deg[0] > s.angle_deg[1] || s.angle_deg[0] < 0.0 || s.angle_deg[1] >= 90.0 {
                return bad(format!("{name}: bad angle range {:?}", s.angle_deg));
            }
            if s.origin_fraction[0] > s.origin_fraction[1] || s.origin_fraction[0] < 0.0 || s.origin_fraction[1] > 1.0 {
                return bad(format!("{name}: bad origin fraction {:?}", s.origin_fraction));
            }
            if s.heading.iter().map(|v| v * v).sum::<f64>() == 0.0 {
                return bad(format!("{name}: zero heading"));
            }
        }
        if !(0.0..=1.0).contains(&self.optional_probability) {
            return bad(format!("optional_probability {} outside [0, 1]", self.optional_probability));
        }
        if self.curvature_noise < 0.0 || !(0.0..=1.0).contains(&self.heading_pull) {
            return bad("curvature_noise must be >= 0 and heading_pull in [0, 1]".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SynthConfig::default().validate().unwrap();
    }

    #[test]
    fn thin_tubes_are_rejected() {
        let mut c = SynthConfig::default();
        c.branches[4].radius = [1.2, 0.5];
        assert!(matches!(c.validate(), Err(Error::ConfigInvalid(m)) if m.contains("D1")));
    }

    #[test]
    fn json_overrides_merge_with_defaults() {
        let c: SynthConfig = serde_json::from_str(r#"{"optional_probability": 1.0}"#).unwrap();
        assert_eq!(c.optional_probability, 1.0);
        assert_eq!(c.dims, [128, 128, 128]);
    }
}
