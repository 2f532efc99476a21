//! Named closed-form examples: harmonic maps, connections and immersions.

use serde::{Deserialize, Serialize};

use crate::error::{JacobiError, Result};
use crate::harmonic::SphereMap;
use crate::minimal::ImmersedSubmanifold;
use crate::yang_mills::BundleConnection;

/// Seed of the randomly perturbed control connection; fixed so the entry never changes.
pub const PERTURBED_CONTROL_SEED: u64 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Setting {
    Harmonic,
    YangMills,
    Minimal,
}

impl std::fmt::Display for Setting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Setting::Harmonic => "harmonic",
            Setting::YangMills => "yang-mills",
            Setting::Minimal => "minimal",
        })
    }
}

/// Metadata for one catalog object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogEntry {
    pub name: String,
    pub setting: Setting,
    /// Domain dimension (maps, connections) or submanifold dimension.
    pub m: usize,
    /// Target sphere dimension, bundle rank, or ambient sphere dimension.
    pub n_or_rank: usize,
    pub flags: Vec<String>,
    pub default_level: usize,
    /// Harmonic, Yang-Mills or minimal.
    pub critical: bool,
    /// The explicit eigensections have negative second variation.
    pub predicted_unstable: bool,
    /// Gram rank of the explicit eigensections; `None` for controls.
    pub expected_rank: Option<usize>,
    pub expected_lowest_eigenvalue: Option<f64>,
}

/// A constructed catalog object.
#[derive(Clone)]
pub enum CatalogObject {
    Map(SphereMap),
    Connection(BundleConnection),
    Immersion(ImmersedSubmanifold),
}

fn flags(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Every catalog entry in a stable order.
pub fn list_catalog() -> Vec<CatalogEntry> {
    let mut out = Vec::new();
    for m in 2..=6 {
        out.push(CatalogEntry {
            name: format!("identity-s{m}"),
            setting: Setting::Harmonic,
            m,
            n_or_rank: m,
            flags: flags(&["harmonic", "closed-form-jets"]),
            default_level: 2,
            critical: true,
            predicted_unstable: m >= 3,
            expected_rank: Some(m + 1),
            expected_lowest_eigenvalue: None,
        });
    }
    out.push(CatalogEntry {
        name: "hopf".into(),
        setting: Setting::Harmonic,
        m: 3,
        n_or_rank: 2,
        flags: flags(&["harmonic"]),
        default_level: 2,
        critical: true,
        predicted_unstable: true,
        expected_rank: Some(4),
        expected_lowest_eigenvalue: None,
    });
    out.push(CatalogEntry {
        name: "constant-s3-s2".into(),
        setting: Setting::Harmonic,
        m: 3,
        n_or_rank: 2,
        flags: flags(&["harmonic", "constant", "closed-form-jets"]),
        default_level: 2,
        critical: true,
        predicted_unstable: false,
        expected_rank: Some(0),
        expected_lowest_eigenvalue: None,
    });
    out.push(CatalogEntry {
        name: "equator-s2-in-s4".into(),
        setting: Setting::Harmonic,
        m: 2,
        n_or_rank: 4,
        flags: flags(&["harmonic", "closed-form-jets"]),
        default_level: 2,
        critical: true,
        predicted_unstable: false,
        expected_rank: Some(3),
        expected_lowest_eigenvalue: None,
    });
    for rank in [2, 3] {
        out.push(CatalogEntry {
            name: format!("flat-r{rank}-s5"),
            setting: Setting::YangMills,
            m: 5,
            n_or_rank: rank,
            flags: flags(&["yang-mills", "flat", "parallel-curvature"]),
            default_level: 1,
            critical: true,
            predicted_unstable: false,
            expected_rank: Some(0),
            expected_lowest_eigenvalue: None,
        });
    }
    for m in 4..=6 {
        out.push(CatalogEntry {
            name: format!("levicivita-ts{m}"),
            setting: Setting::YangMills,
            m,
            n_or_rank: m,
            flags: flags(&["yang-mills", "parallel-curvature"]),
            default_level: 1,
            critical: true,
            predicted_unstable: m >= 5,
            expected_rank: Some(m + 1),
            expected_lowest_eigenvalue: None,
        });
    }
    out.push(CatalogEntry {
        name: "perturbed-r3-s4".into(),
        setting: Setting::YangMills,
        m: 4,
        n_or_rank: 3,
        flags: flags(&["control"]),
        default_level: 1,
        critical: false,
        predicted_unstable: false,
        expected_rank: None,
        expected_lowest_eigenvalue: None,
    });
    for (m, n) in [(2, 3), (2, 5), (3, 5)] {
        out.push(CatalogEntry {
            name: format!("equator-{m}-{n}"),
            setting: Setting::Minimal,
            m,
            n_or_rank: n,
            flags: flags(&["minimal", "totally-geodesic", "parallel-second-fundamental-form"]),
            default_level: 2,
            critical: true,
            predicted_unstable: true,
            expected_rank: Some(n - m),
            expected_lowest_eigenvalue: Some(-(m as f64)),
        });
    }
    out.push(CatalogEntry {
        name: "clifford-torus".into(),
        setting: Setting::Minimal,
        m: 2,
        n_or_rank: 3,
        flags: flags(&["minimal", "parallel-second-fundamental-form"]),
        default_level: 2,
        critical: true,
        predicted_unstable: true,
        expected_rank: Some(4),
        expected_lowest_eigenvalue: Some(-4.0),
    });
    out.push(CatalogEntry {
        name: "clifford-1-2".into(),
        setting: Setting::Minimal,
        m: 3,
        n_or_rank: 4,
        flags: flags(&["minimal", "parallel-second-fundamental-form"]),
        default_level: 2,
        critical: true,
        predicted_unstable: true,
        expected_rank: Some(5),
        expected_lowest_eigenvalue: None,
    });
    out.push(CatalogEntry {
        name: "small-circle-0.6".into(),
        setting: Setting::Minimal,
        m: 1,
        n_or_rank: 2,
        flags: flags(&["control", "parallel-second-fundamental-form"]),
        default_level: 2,
        critical: false,
        predicted_unstable: false,
        expected_rank: Some(3),
        expected_lowest_eigenvalue: None,
    });
    out
}

/// Metadata for `name`, or `UnknownCatalog`.
pub fn catalog_entry(name: &str) -> Result<CatalogEntry> {
    list_catalog()
        .into_iter()
        .find(|e| e.name == name)
        .ok_or_else(|| JacobiError::UnknownCatalog(name.to_string()))
}

/// Builds the object named `name`.
pub fn build(name: &str) -> Result<CatalogObject> {
    let entry = catalog_entry(name)?;
    let (m, n) = (entry.m, entry.n_or_rank);
    Ok(match (entry.setting, name) {
        (Setting::Harmonic, "hopf") => CatalogObject::Map(SphereMap::hopf()),
        (Setting::Harmonic, "constant-s3-s2") => CatalogObject::Map(SphereMap::constant(3, 2)),
        (Setting::Harmonic, "equator-s2-in-s4") => CatalogObject::Map(SphereMap::equator(2, 4)),
        (Setting::Harmonic, _) => CatalogObject::Map(SphereMap::identity(m)),
        (Setting::YangMills, "perturbed-r3-s4") => {
            CatalogObject::Connection(BundleConnection::perturbed(4, 3, PERTURBED_CONTROL_SEED))
        }
        (Setting::YangMills, _) if entry.flags.iter().any(|f| f == "flat") => {
            CatalogObject::Connection(BundleConnection::flat(m, n))
        }
        (Setting::YangMills, _) => CatalogObject::Connection(BundleConnection::levi_civita(m)),
        (Setting::Minimal, "clifford-torus") => CatalogObject::Immersion(ImmersedSubmanifold::clifford_torus()),
        (Setting::Minimal, "clifford-1-2") => CatalogObject::Immersion(ImmersedSubmanifold::generalized_clifford(1, 2)),
        (Setting::Minimal, "small-circle-0.6") => CatalogObject::Immersion(ImmersedSubmanifold::small_circle(0.6)?),
        (Setting::Minimal, _) => CatalogObject::Immersion(ImmersedSubmanifold::equator(m, n)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique_and_buildable() {
        let entries = list_catalog();
        let mut names: Vec<_> = entries.iter().map(|e| e.name.clone()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), entries.len());
        for e in &entries {
            let built = build(&e.name).unwrap();
            let built_name = match &built {
                CatalogObject::Map(u) => u.name().to_string(),
                CatalogObject::Connection(d) => d.name().to_string(),
                CatalogObject::Immersion(m) => m.name().to_string(),
            };
            assert_eq!(built_name, e.name);
            match &built {
                CatalogObject::Map(u) => assert_eq!(u.domain_dim(), e.m),
                CatalogObject::Connection(d) => {
                    assert_eq!((d.base_dim(), d.rank()), (e.m, e.n_or_rank));
                }
                CatalogObject::Immersion(s) => {
                    assert_eq!((s.dim(), s.ambient_sphere_dim()), (e.m, e.n_or_rank));
                }
            }
        }
    }

    #[test]
    fn listing_contains_documented_entries() {
        let entries = list_catalog();
        let find = |n: &str| entries.iter().find(|e| e.name == n).unwrap().clone();
        let hopf = find("hopf");
        assert_eq!((hopf.setting, hopf.m, hopf.n_or_rank), (Setting::Harmonic, 3, 2));
        let ts5 = find("levicivita-ts5");
        assert_eq!((ts5.setting, ts5.m, ts5.n_or_rank), (Setting::YangMills, 5, 5));
        let cl = find("clifford-torus");
        assert_eq!((cl.setting, cl.m, cl.n_or_rank), (Setting::Minimal, 2, 3));
    }

    #[test]
    fn unknown_name_rejected() {
        assert!(matches!(build("torus-knot"), Err(JacobiError::UnknownCatalog(_))));
    }
}
