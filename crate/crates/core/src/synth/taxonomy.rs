//! Branch classes of the synthetic coronary tree.

/// Class indices are dense from 1; 0 is background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Branch {
    Lm = 1,
    Lad = 2,
    Lcx = 3,
    Rca = 4,
    D1 = 5,
    D2 = 6,
    Om1 = 7,
    Om2 = 8,
    RPda = 9,
    RPlb = 10,
}

pub const NUM_CLASSES: usize = 10;

impl Branch {
    pub const ALL: [Branch; NUM_CLASSES] = [
        Branch::Lm,
        Branch::Lad,
        Branch::Lcx,
        Branch::Rca,
        Branch::D1,
        Branch::D2,
        Branch::Om1,
        Branch::Om2,
        Branch::RPda,
        Branch::RPlb,
    ];

    pub fn class(self) -> u8 {
        self as u8
    }

    pub fn from_class(class: u8) -> Option<Branch> {
        Self::ALL.get((class as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Branch::Lm => "LM",
            Branch::Lad => "LAD",
            Branch::Lcx => "LCX",
            Branch::Rca => "RCA",
            Branch::D1 => "D1",
            Branch::D2 => "D2",
            Branch::Om1 => "OM1",
            Branch::Om2 => "OM2",
            Branch::RPda => "R-PDA",
            Branch::RPlb => "R-PLB",
        }
    }

    pub fn parent(self) -> Option<Branch> {
        match self {
            Branch::Lm | Branch::Rca => None,
            Branch::Lad | Branch::Lcx => Some(Branch::Lm),
            Branch::D1 | Branch::D2 => Some(Branch::Lad),
            Branch::Om1 | Branch::Om2 => Some(Branch::Lcx),
            Branch::RPda | Branch::RPlb => Some(Branch::Rca),
        }
    }

    /// D2 and OM2 are present only in some trees.
    pub fn optional(self) -> bool {
        matches!(self, Branch::D2 | Branch::Om2)
    }
}

/// Display name of a class index, `"background"` for 0.
pub fn class_name(class: u8) -> &'static str {
    match Branch::from_class(class) {
        Some(b) => b.name(),
        None if class == 0 => "background",
        None => "unknown",
    }
}
