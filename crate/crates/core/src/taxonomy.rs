//! Moral foundations, their typed roles, and the fixed role tables.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// The five moral foundations. Declaration order is the tie-breaking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MoralFoundation {
    CareHarm,
    FairnessCheating,
    LoyaltyBetrayal,
    AuthoritySubversion,
    PurityDegradation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarity {
    Positive,
    Negative,
}

/// Entity roles, grouped by the foundation that owns them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MoralRole {
    TargetOfCareHarm,
    EntityCausingHarm,
    EntityProvidingCare,
    TargetOfFairnessCheating,
    EntityEnsuringFairness,
    EntityDoingCheating,
    TargetOfLoyaltyBetrayal,
    EntityBeingLoyal,
    EntityDoingBetrayal,
    JustifiedAuthority,
    JustifiedAuthorityOver,
    FailingAuthority,
    FailingAuthorityOver,
    TargetOfPurityDegradation,
    EntityPreservingPurity,
    EntityCausingDegradation,
}

/// How a role participates in an entity relation graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoleClass {
    Target,
    PositiveActor,
    NegativeActor,
}

impl MoralFoundation {
    pub const ALL: [MoralFoundation; 5] = [
        MoralFoundation::CareHarm,
        MoralFoundation::FairnessCheating,
        MoralFoundation::LoyaltyBetrayal,
        MoralFoundation::AuthoritySubversion,
        MoralFoundation::PurityDegradation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MoralFoundation::CareHarm => "CareHarm",
            MoralFoundation::FairnessCheating => "FairnessCheating",
            MoralFoundation::LoyaltyBetrayal => "LoyaltyBetrayal",
            MoralFoundation::AuthoritySubversion => "AuthoritySubversion",
            MoralFoundation::PurityDegradation => "PurityDegradation",
        }
    }

    /// Roles owned by this foundation, in declaration order.
    pub fn roles(self) -> &'static [MoralRole] {
        use MoralRole::*;
        match self {
            MoralFoundation::CareHarm => &[TargetOfCareHarm, EntityCausingHarm, EntityProvidingCare],
            MoralFoundation::FairnessCheating => {
                &[TargetOfFairnessCheating, EntityEnsuringFairness, EntityDoingCheating]
            }
            MoralFoundation::LoyaltyBetrayal => &[TargetOfLoyaltyBetrayal, EntityBeingLoyal, EntityDoingBetrayal],
            MoralFoundation::AuthoritySubversion => &[
                JustifiedAuthority,
                JustifiedAuthorityOver,
                FailingAuthority,
                FailingAuthorityOver,
            ],
            MoralFoundation::PurityDegradation => &[
                TargetOfPurityDegradation,
                EntityPreservingPurity,
                EntityCausingDegradation,
            ],
        }
    }
}

impl MoralRole {
    pub const ALL: [MoralRole; 16] = [
        MoralRole::TargetOfCareHarm,
        MoralRole::EntityCausingHarm,
        MoralRole::EntityProvidingCare,
        MoralRole::TargetOfFairnessCheating,
        MoralRole::EntityEnsuringFairness,
        MoralRole::EntityDoingCheating,
        MoralRole::TargetOfLoyaltyBetrayal,
        MoralRole::EntityBeingLoyal,
        MoralRole::EntityDoingBetrayal,
        MoralRole::JustifiedAuthority,
        MoralRole::JustifiedAuthorityOver,
        MoralRole::FailingAuthority,
        MoralRole::FailingAuthorityOver,
        MoralRole::TargetOfPurityDegradation,
        MoralRole::EntityPreservingPurity,
        MoralRole::EntityCausingDegradation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        use MoralRole::*;
        match self {
            TargetOfCareHarm => "TargetOfCareHarm",
            EntityCausingHarm => "EntityCausingHarm",
            EntityProvidingCare => "EntityProvidingCare",
            TargetOfFairnessCheating => "TargetOfFairnessCheating",
            EntityEnsuringFairness => "EntityEnsuringFairness",
            EntityDoingCheating => "EntityDoingCheating",
            TargetOfLoyaltyBetrayal => "TargetOfLoyaltyBetrayal",
            EntityBeingLoyal => "EntityBeingLoyal",
            EntityDoingBetrayal => "EntityDoingBetrayal",
            JustifiedAuthority => "JustifiedAuthority",
            JustifiedAuthorityOver => "JustifiedAuthorityOver",
            FailingAuthority => "FailingAuthority",
            FailingAuthorityOver => "FailingAuthorityOver",
            TargetOfPurityDegradation => "TargetOfPurityDegradation",
            EntityPreservingPurity => "EntityPreservingPurity",
            EntityCausingDegradation => "EntityCausingDegradation",
        }
    }

    /// Human-readable label, e.g. "Entity causing harm".
    pub fn label(self) -> &'static str {
        use MoralRole::*;
        match self {
            TargetOfCareHarm => "Target of care/harm",
            EntityCausingHarm => "Entity causing harm",
            EntityProvidingCare => "Entity providing care",
            TargetOfFairnessCheating => "Target of fairness/cheating",
            EntityEnsuringFairness => "Entity ensuring fairness",
            EntityDoingCheating => "Entity doing cheating",
            TargetOfLoyaltyBetrayal => "Target of loyalty/betrayal",
            EntityBeingLoyal => "Entity being loyal",
            EntityDoingBetrayal => "Entity doing betrayal",
            JustifiedAuthority => "Justified authority",
            JustifiedAuthorityOver => "Justified authority over",
            FailingAuthority => "Failing authority",
            FailingAuthorityOver => "Failing authority over",
            TargetOfPurityDegradation => "Target of purity/degradation",
            EntityPreservingPurity => "Entity preserving purity",
            EntityCausingDegradation => "Entity causing degradation",
        }
    }

    pub fn foundation(self) -> MoralFoundation {
        role_to_mf(self)
    }

    pub fn polarity(self) -> Polarity {
        role_polarity(self)
    }

    pub fn class(self) -> RoleClass {
        use MoralRole::*;
        match self {
            TargetOfCareHarm
            | TargetOfFairnessCheating
            | TargetOfLoyaltyBetrayal
            | TargetOfPurityDegradation
            | JustifiedAuthorityOver
            | FailingAuthorityOver => RoleClass::Target,
            r if r.polarity() == Polarity::Negative => RoleClass::NegativeActor,
            _ => RoleClass::PositiveActor,
        }
    }
}

pub fn role_to_mf(role: MoralRole) -> MoralFoundation {
    use MoralRole::*;
    match role {
        TargetOfCareHarm | EntityCausingHarm | EntityProvidingCare => MoralFoundation::CareHarm,
        TargetOfFairnessCheating | EntityEnsuringFairness | EntityDoingCheating => MoralFoundation::FairnessCheating,
        TargetOfLoyaltyBetrayal | EntityBeingLoyal | EntityDoingBetrayal => MoralFoundation::LoyaltyBetrayal,
        JustifiedAuthority | JustifiedAuthorityOver | FailingAuthority | FailingAuthorityOver => {
            MoralFoundation::AuthoritySubversion
        }
        TargetOfPurityDegradation | EntityPreservingPurity | EntityCausingDegradation => {
            MoralFoundation::PurityDegradation
        }
    }
}

/// One negative role per foundation; everything else is positive.
pub fn role_polarity(role: MoralRole) -> Polarity {
    use MoralRole::*;
    match role {
        EntityCausingHarm | EntityDoingCheating | EntityDoingBetrayal | FailingAuthority | EntityCausingDegradation => {
            Polarity::Negative
        }
        _ => Polarity::Positive,
    }
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Positive, Polarity::Negative];

    pub fn name(self) -> &'static str {
        match self {
            Polarity::Positive => "Positive",
            Polarity::Negative => "Negative",
        }
    }

    pub fn roles(self) -> impl Iterator<Item = MoralRole> {
        MoralRole::ALL.into_iter().filter(move |r| r.polarity() == self)
    }
}

/// Lowercase alphanumerics only, so "Entity causing harm", "entity_causing_harm"
/// and "EntityCausingHarm" all compare equal.
fn squash(s: &str) -> String {
    s.chars()
        .filter(|c| c.is_ascii_alphanumeric())
        .map(|c| c.to_ascii_lowercase())
        .collect()
}

impl FromStr for MoralFoundation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = squash(s);
        let found = MoralFoundation::ALL.into_iter().find(|f| squash(f.name()) == key);
        if let Some(f) = found {
            return Ok(f);
        }
        // Accept single-pole and dictionary-style names (e.g. "harm", "HarmVirtue").
        let by_stem = [
            (MoralFoundation::CareHarm, &["care", "harm"][..]),
            (MoralFoundation::FairnessCheating, &["fair", "cheat"][..]),
            (MoralFoundation::LoyaltyBetrayal, &["loyal", "betray", "ingroup"][..]),
            (MoralFoundation::AuthoritySubversion, &["author", "subver"][..]),
            (MoralFoundation::PurityDegradation, &["pur", "degrad", "sanct"][..]),
        ];
        by_stem
            .iter()
            .find(|(_, stems)| stems.iter().any(|st| key.starts_with(st)))
            .map(|(f, _)| *f)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl FromStr for MoralRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = squash(s);
        MoralRole::ALL
            .into_iter()
            .find(|r| squash(r.name()) == key || squash(r.label()) == key)
            .ok_or_else(|| Error::UnknownLabel(s.to_string()))
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match squash(s).as_str() {
            "positive" | "pos" => Ok(Polarity::Positive),
            "negative" | "neg" => Ok(Polarity::Negative),
            _ => Err(Error::UnknownLabel(s.to_string())),
        }
    }
}

impl fmt::Display for MoralFoundation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for MoralRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn role_counts_per_foundation() {
        let counts: Vec<usize> = MoralFoundation::ALL.iter().map(|f| f.roles().len()).collect();
        assert_eq!(counts, vec![3, 3, 3, 4, 3]);
        assert_eq!(counts.iter().sum::<usize>(), 16);
        for f in MoralFoundation::ALL {
            for r in f.roles() {
                assert_eq!(role_to_mf(*r), f);
            }
        }
    }

    #[test]
    fn role_to_mf_examples() {
        assert_eq!(role_to_mf(MoralRole::EntityCausingHarm), MoralFoundation::CareHarm);
        assert_eq!(
            role_to_mf(MoralRole::FailingAuthorityOver),
            MoralFoundation::AuthoritySubversion
        );
        assert_eq!(
            role_to_mf(MoralRole::TargetOfPurityDegradation),
            MoralFoundation::PurityDegradation
        );
    }

    #[test]
    fn polarity_lists() {
        assert_eq!(role_polarity(MoralRole::EntityDoingBetrayal), Polarity::Negative);
        assert_eq!(role_polarity(MoralRole::JustifiedAuthorityOver), Polarity::Positive);
        assert_eq!(role_polarity(MoralRole::FailingAuthorityOver), Polarity::Positive);
        let negatives: Vec<_> = Polarity::Negative.roles().collect();
        assert_eq!(negatives.len(), 5);
        assert_eq!(Polarity::Positive.roles().count(), 11);
        // one negative role per foundation
        for f in MoralFoundation::ALL {
            let n = f.roles().iter().filter(|r| r.polarity() == Polarity::Negative).count();
            assert_eq!(n, 1, "{f}");
        }
    }

    #[test]
    fn index_round_trip_and_order() {
        for (i, r) in MoralRole::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(MoralRole::from_index(i), Some(*r));
        }
        assert!(MoralFoundation::CareHarm < MoralFoundation::PurityDegradation);
    }

    #[test]
    fn parse_names() {
        assert_eq!(
            "care_harm".parse::<MoralFoundation>().unwrap(),
            MoralFoundation::CareHarm
        );
        assert_eq!(
            "Care/Harm".parse::<MoralFoundation>().unwrap(),
            MoralFoundation::CareHarm
        );
        assert_eq!(
            "HarmVice".parse::<MoralFoundation>().unwrap(),
            MoralFoundation::CareHarm
        );
        assert_eq!(
            "Entity causing harm".parse::<MoralRole>().unwrap(),
            MoralRole::EntityCausingHarm
        );
        assert_eq!(
            "failing_authority_over".parse::<MoralRole>().unwrap(),
            MoralRole::FailingAuthorityOver
        );
        assert!("nonsense".parse::<MoralRole>().is_err());
        assert!("xyz".parse::<MoralFoundation>().is_err());
    }

    #[test]
    fn role_classes() {
        assert_eq!(MoralRole::TargetOfCareHarm.class(), RoleClass::Target);
        assert_eq!(MoralRole::JustifiedAuthorityOver.class(), RoleClass::Target);
        assert_eq!(MoralRole::EntityCausingHarm.class(), RoleClass::NegativeActor);
        assert_eq!(MoralRole::EntityProvidingCare.class(), RoleClass::PositiveActor);
        assert_eq!(MoralRole::JustifiedAuthority.class(), RoleClass::PositiveActor);
        assert_eq!(MoralRole::FailingAuthority.class(), RoleClass::NegativeActor);
    }
}
