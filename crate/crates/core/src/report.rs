//! Run configuration, suite execution and the JSON verification report.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{build, catalog_entry, list_catalog, CatalogEntry, CatalogObject, Setting};
use crate::error::{JacobiError, Result};
use crate::forms::{bochner_residual, random_polynomial_form, Bundle, FdSteps};
use crate::harmonic::{
    differential_laplacian_residual, eigen_residual_harmonic, multiplicity_bound_harmonic, tension_sup, x_ell_field,
    x_ell_sup, EigenResidual, SphereMap, ZERO_SECTION_NORM,
};
use crate::linalg::{GramRank, Vector};
use crate::minimal::{
    beta_residuals, eigen_residual_minimal, lowest_eigenvalue_estimate, mean_curvature_sup, multiplicity_and_rigidity,
    v_ell_section, ImmersedSubmanifold, MinimalSteps,
};
use crate::sphere::{quadrature_grid, tangent_frame, LinearFunction, SpherePoint};
use crate::tolerance::{Method, ToleranceProfile};
use crate::variation::{second_variation_check, VariationFamily, VariationGrid, NULL_DIRECTION_RATIO};
use crate::yang_mills::{
    b_ell_form, b_ell_sup, bianchi_residual, coclosed_check, commutator_identity_check, eigen_residual_ym,
    laplacian_identity_residual, multiplicity_bound_ym, ym_residual, BundleConnection,
};

pub const SCHEMA_VERSION: u32 = 1;

/// ASCII "JACOBI".
pub const DEFAULT_SEED: u64 = 0x4A41_434F_4249;

/// Smallest `sup |H|` a non-minimal control has to show.
pub const NON_MINIMAL_MARGIN: f64 = 0.1;

/// Anchor for records that only exercise infrastructure.
pub const PLUMBING: &str = "plumbing";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Harmonic,
    YangMills,
    Minimal,
    Variation,
    Bochner,
    All,
}

impl FromStr for Suite {
    type Err = JacobiError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harmonic" => Ok(Suite::Harmonic),
            "yang-mills" => Ok(Suite::YangMills),
            "minimal" => Ok(Suite::Minimal),
            "variation" => Ok(Suite::Variation),
            "bochner" => Ok(Suite::Bochner),
            "all" => Ok(Suite::All),
            other => Err(JacobiError::Config(format!(
                "unknown suite `{other}` (known: harmonic, yang-mills, minimal, variation, bochner, all)"
            ))),
        }
    }
}

impl std::fmt::Display for Suite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Suite::Harmonic => "harmonic",
            Suite::YangMills => "yang-mills",
            Suite::Minimal => "minimal",
            Suite::Variation => "variation",
            Suite::Bochner => "bochner",
            Suite::All => "all",
        })
    }
}

impl Suite {
    fn applies_to(self, setting: Setting) -> bool {
        match self {
            Suite::Harmonic => setting == Setting::Harmonic,
            Suite::YangMills | Suite::Bochner => setting == Setting::YangMills,
            Suite::Minimal => setting == Setting::Minimal,
            Suite::Variation | Suite::All => true,
        }
    }

    fn expand(self, setting: Setting) -> Vec<Suite> {
        match self {
            Suite::All => match setting {
                Setting::Harmonic => vec![Suite::Harmonic, Suite::Variation],
                Setting::YangMills => vec![Suite::YangMills, Suite::Bochner, Suite::Variation],
                Setting::Minimal => vec![Suite::Minimal, Suite::Variation],
            },
            s => vec![s],
        }
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub suite: Suite,
    /// `None` runs every compatible catalog entry.
    pub object: Option<String>,
    /// `None` uses each entry's default level.
    pub level: Option<usize>,
    pub method: Method,
    pub profile: ToleranceProfile,
    pub out: Option<PathBuf>,
    pub seed: u64,
    /// Random forms per degree in the Bochner suite.
    pub bochner_forms: usize,
}

impl RunConfig {
    pub fn new(suite: Suite) -> Self {
        Self {
            suite,
            object: None,
            level: None,
            method: Method::Fd,
            profile: ToleranceProfile::default(),
            out: None,
            seed: DEFAULT_SEED,
            bochner_forms: 50,
        }
    }

    /// Checks that the object exists and fits the suite.
    pub fn validate(&self) -> Result<()> {
        if let Some(name) = &self.object {
            let entry = catalog_entry(name)?;
            if !self.suite.applies_to(entry.setting) {
                return Err(JacobiError::Config(format!(
                    "suite `{}` does not apply to `{name}` ({} object)",
                    self.suite, entry.setting
                )));
            }
        }
        if self.bochner_forms == 0 {
            return Err(JacobiError::Config("bochner_forms must be positive".into()));
        }
        Ok(())
    }
}

/// Overrides from the command line; `Some` wins over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub suite: Option<String>,
    pub object: Option<String>,
    pub level: Option<usize>,
    pub method: Option<String>,
    pub profile: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| JacobiError::Config(format!("line {}: expected key=value, got `{line}`", lineno + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(JacobiError::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(JacobiError::Config(format!("line {}: duplicate key `{k}`", lineno + 1)));
        }
    }
    Ok(out)
}

/// Decimal or `0x`-prefixed hexadecimal.
pub fn parse_seed(s: &str) -> Result<u64> {
    let s = s.trim();
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|_| JacobiError::Config(format!("invalid seed `{s}`")))
}

fn parse_level(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| JacobiError::Config(format!("invalid grid level `{s}`")))
}

/// Merges a config file (if any) with command-line overrides and validates the result.
pub fn resolve_config(file_text: Option<&str>, overrides: &ConfigOverrides) -> Result<RunConfig> {
    let mut file = match file_text {
        Some(t) => parse_config_text(t)?,
        None => BTreeMap::new(),
    };
    let mut take = |k: &str| file.remove(k);
    let file_suite = take("suite");
    let suite_text = overrides
        .suite
        .clone()
        .or(file_suite)
        .ok_or_else(|| JacobiError::Config("no suite given".into()))?;
    let mut cfg = RunConfig::new(suite_text.parse()?);
    let file_object = take("object");
    let file_level = take("level");
    let file_method = take("method");
    let file_profile = take("profile");
    let file_out = take("out");
    let file_seed = take("seed");
    let file_forms = take("bochner_forms");
    if let Some(k) = file.keys().next() {
        return Err(JacobiError::Config(format!("unknown config key `{k}`")));
    }
    cfg.object = overrides.object.clone().or(file_object);
    cfg.level = match (overrides.level, file_level) {
        (Some(l), _) => Some(l),
        (None, Some(s)) => Some(parse_level(&s)?),
        (None, None) => None,
    };
    if let Some(m) = overrides.method.clone().or(file_method) {
        cfg.method = m.parse()?;
    }
    if let Some(p) = overrides.profile.clone().or(file_profile) {
        cfg.profile = ToleranceProfile::preset(&p)?;
    }
    cfg.out = overrides.out.clone().or(file_out.map(PathBuf::from));
    cfg.seed = match (overrides.seed, file_seed) {
        (Some(s), _) => s,
        (None, Some(s)) => parse_seed(&s)?,
        (None, None) => DEFAULT_SEED,
    };
    if let Some(n) = file_forms {
        cfg.bochner_forms = n
            .parse()
            .map_err(|_| JacobiError::Config(format!("invalid bochner_forms `{n}`")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check_id: String,
    pub anchor: String,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub status: Status,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub method: Method,
    pub profile: String,
    pub fd_step_first: f64,
    pub fd_step_second: f64,
    pub variation_steps: [f64; 3],
    /// Grid level and node count per object.
    pub grids: BTreeMap<String, GridInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub level: usize,
    pub nodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_seconds: f64,
    pub per_object_seconds: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub schema_version: u32,
    pub suite: Suite,
    pub object: Option<String>,
    pub seed: u64,
    pub environment: Environment,
    pub records: Vec<CheckRecord>,
    pub summary: Summary,
    pub timing: Timing,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.summary.failed == 0
    }

    pub fn record(&self, check_id: &str) -> Option<&CheckRecord> {
        self.records.iter().find(|r| r.check_id == check_id)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| JacobiError::Io(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| JacobiError::Io(e.to_string()))
    }

    /// Writes the JSON through a temporary file in the target directory, then renames it into place.
    pub fn write_atomic(&self, path: &Path) -> Result<()> {
        let json = self.to_json()?;
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let io = |e: std::io::Error| JacobiError::Io(format!("{}: {e}", path.display()));
        let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(io)?;
        tmp.write_all(json.as_bytes()).map_err(io)?;
        tmp.write_all(b"\n").map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }
}

/// Collects records for one object.
struct Recorder {
    prefix: String,
    records: Vec<CheckRecord>,
}

impl Recorder {
    fn push(
        &mut self,
        id: &str,
        anchor: &str,
        value: Option<f64>,
        threshold: Option<f64>,
        status: Status,
        note: impl Into<String>,
    ) {
        let finite = |v: Option<f64>| v.filter(|x| x.is_finite());
        let mut note = note.into();
        if value.is_some_and(|v| !v.is_finite()) {
            note = format!("{note} (non-finite value)").trim().to_string();
        }
        let status = if value.is_some_and(|v| !v.is_finite()) && status == Status::Pass {
            Status::Fail
        } else {
            status
        };
        self.records.push(CheckRecord {
            check_id: format!("{}/{id}", self.prefix),
            anchor: anchor.to_string(),
            value: finite(value),
            threshold: finite(threshold),
            status,
            note,
        });
    }

    /// `value <= threshold`.
    fn at_most(&mut self, id: &str, anchor: &str, value: f64, threshold: f64) {
        let status = if value <= threshold { Status::Pass } else { Status::Fail };
        self.push(id, anchor, Some(value), Some(threshold), status, "");
    }

    /// Capability and degenerate-input errors are skips; anything else fails the check.
    fn error(&mut self, id: &str, anchor: &str, threshold: Option<f64>, err: &JacobiError) {
        let (status, note) = match err {
            JacobiError::Capability(_) => (Status::Skipped, format!("skipped: {err}")),
            JacobiError::DegenerateInput(_) => (Status::Skipped, format!("skipped-degenerate: {err}")),
            _ => (Status::Fail, err.to_string()),
        };
        self.push(id, anchor, None, threshold, status, note);
    }

    fn bounded(&mut self, id: &str, anchor: &str, value: Result<f64>, threshold: f64) {
        match value {
            Ok(v) => self.at_most(id, anchor, v, threshold),
            Err(e) => self.error(id, anchor, Some(threshold), &e),
        }
    }

    fn eigen(&mut self, id: &str, anchor: &str, value: Result<EigenResidual>, threshold: f64) {
        match value {
            Ok(r) => {
                let status = if r.residual <= threshold {
                    Status::Pass
                } else {
                    Status::Fail
                };
                self.push(
                    id,
                    anchor,
                    Some(r.residual),
                    Some(threshold),
                    status,
                    format!("eigenvalue {}", r.eigenvalue),
                );
            }
            Err(e) => self.error(id, anchor, Some(threshold), &e),
        }
    }

    fn rank(&mut self, entry: &CatalogEntry, gram: &GramRank, profile: &ToleranceProfile, anchor: &str) {
        let value = Some(gram.rank as f64);
        match entry.expected_rank {
            Some(expected) => {
                let status = if gram.rank == expected {
                    Status::Pass
                } else {
                    Status::Fail
                };
                self.push(
                    "rank",
                    anchor,
                    value,
                    Some(expected as f64),
                    status,
                    "Gram rank of the explicit family",
                );
                if expected > 0 {
                    let c = gram.retained_condition_ratio();
                    let status = if c >= profile.gram_condition {
                        Status::Pass
                    } else {
                        Status::Fail
                    };
                    self.push(
                        "rank.condition",
                        anchor,
                        Some(c),
                        Some(profile.gram_condition),
                        status,
                        "smallest retained singular value over the largest",
                    );
                }
            }
            None => self.push(
                "rank",
                anchor,
                value,
                None,
                Status::Skipped,
                "control entry: rank not asserted",
            ),
        }
    }
}

fn level_for(cfg: &RunConfig, entry: &CatalogEntry) -> usize {
    cfg.level.unwrap_or(entry.default_level)
}

fn random_sphere_point<G: Rng>(rng: &mut G, m: usize) -> SpherePoint {
    loop {
        let v = Vector::from_fn(m + 1, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if (0.1..=1.0).contains(&n) {
            return SpherePoint::new(v).expect("nonzero");
        }
    }
}

/// Seeded unit linear function on `R^{dim}`.
pub fn seeded_linear_function(seed: u64, dim: usize) -> LinearFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = Vector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
    let n = v.norm();
    LinearFunction::new(v / n)
}

const ANCHOR_HARMONIC_EIGEN: &str = "harmonic maps: J_u X_l = -(m-2) X_l for X_l = du(grad l)";
const ANCHOR_TENSION: &str = "harmonic maps: vanishing tension field";
const ANCHOR_DU_LAPLACIAN: &str = "harmonic maps: Bochner formula for the differential du";
const ANCHOR_HARMONIC_RANK: &str = "harmonic maps: multiplicity lower bound from span{X_l}";
const ANCHOR_HARMONIC_DEGENERATE: &str = "harmonic maps: X_l vanishes identically iff u is constant";
const ANCHOR_YM: &str = "Yang-Mills: d_D* R^D = 0";
const ANCHOR_BIANCHI: &str = "Yang-Mills: Bianchi identity d_D R^D = 0";
const ANCHOR_COMMUTATOR: &str = "Yang-Mills: 2 R(B_v)(X) = R(R)(v, X) for B_v = R(v, .)";
const ANCHOR_YM_EIGEN: &str = "Yang-Mills: J_D B_l = -(m-4) B_l for B_l = R^D(grad l, .)";
const ANCHOR_COCLOSED: &str = "Yang-Mills: d_D* B_l = 0";
const ANCHOR_YM_LAPLACIAN: &str = "Yang-Mills: rough Laplacian of B_l for parallel curvature";
const ANCHOR_YM_RANK: &str = "Yang-Mills: multiplicity lower bound from span{B_l}";
const ANCHOR_YM_DEGENERATE: &str = "Yang-Mills: B_l vanishes identically iff D is flat";
const ANCHOR_MEAN_CURVATURE: &str = "minimal submanifolds: vanishing mean curvature";
const ANCHOR_CODAZZI: &str = "minimal submanifolds: Codazzi equation d_D beta = 0";
const ANCHOR_BETA_COCLOSED: &str = "minimal submanifolds: d_D* beta = 0 for parallel mean curvature";
const ANCHOR_MINIMAL_EIGEN: &str = "minimal submanifolds: J_M V_l = -m V_l for V_l = (grad l)^normal";
const ANCHOR_MINIMAL_RANK: &str = "minimal submanifolds: multiplicity lower bound from span{V_l}";
const ANCHOR_TOTALLY_GEODESIC: &str = "minimal submanifolds: rank equality case is totally geodesic";
const ANCHOR_LOWEST: &str = "minimal submanifolds: lowest Jacobi eigenvalue is at most -m";
const ANCHOR_FIRST_VARIATION: &str = "second variation: base object is critical";
const ANCHOR_SECOND_VARIATION: &str = "second variation: d^2F/ds^2 = integral of <J V, V>";
const ANCHOR_INSTABILITY: &str = "second variation: explicit directions are destabilizing";
const ANCHOR_BOCHNER_1: &str = "Weitzenbock formula for bundle-valued 1-forms";
const ANCHOR_BOCHNER_2: &str = "Weitzenbock formula for bundle-valued 2-forms";

fn harmonic_checks(
    rec: &mut Recorder,
    u: &SphereMap,
    entry: &CatalogEntry,
    cfg: &RunConfig,
    grids: &mut BTreeMap<String, GridInfo>,
) -> Result<()> {
    let level = level_for(cfg, entry);
    let grid = quadrature_grid(u.domain_dim(), level)?;
    grids.insert(
        entry.name.clone(),
        GridInfo {
            level,
            nodes: grid.len(),
        },
    );
    let (p, steps, method) = (&cfg.profile, FdSteps::from(&cfg.profile), cfg.method);
    let tol = p.residual(method);
    rec.bounded("tension", ANCHOR_TENSION, tension_sup(u, &grid, method, steps), tol);
    rec.bounded(
        "du_laplacian",
        ANCHOR_DU_LAPLACIAN,
        differential_laplacian_residual(u, &grid, method, steps),
        tol,
    );
    for (i, l) in LinearFunction::coordinate_basis(u.domain_dim() + 1).iter().enumerate() {
        rec.eigen(
            &format!("eigen.l{i}"),
            ANCHOR_HARMONIC_EIGEN,
            eigen_residual_harmonic(u, l, &grid, method, steps),
            tol,
        );
    }
    let gram = multiplicity_bound_harmonic(u, &grid, p.rank_epsilon);
    rec.rank(entry, &gram, p, ANCHOR_HARMONIC_RANK);
    if u.is_constant() {
        let sup = LinearFunction::coordinate_basis(u.domain_dim() + 1)
            .iter()
            .map(|l| x_ell_sup(u, l, &grid))
            .fold(0.0, f64::max);
        rec.at_most(
            "degenerate.x_ell_zero",
            ANCHOR_HARMONIC_DEGENERATE,
            sup,
            ZERO_SECTION_NORM,
        );
    }
    Ok(())
}

fn yang_mills_checks(
    rec: &mut Recorder,
    d: &BundleConnection,
    entry: &CatalogEntry,
    cfg: &RunConfig,
    grids: &mut BTreeMap<String, GridInfo>,
) -> Result<()> {
    let level = level_for(cfg, entry);
    let grid = quadrature_grid(d.base_dim(), level)?;
    grids.insert(
        entry.name.clone(),
        GridInfo {
            level,
            nodes: grid.len(),
        },
    );
    let (p, steps, method) = (&cfg.profile, FdSteps::from(&cfg.profile), cfg.method);
    let tol = p.residual(method);
    match ym_residual(d, &grid, method, steps) {
        Ok(v) if entry.critical => rec.at_most("yang_mills", ANCHOR_YM, v, tol),
        Ok(v) => {
            let status = if v > p.yang_mills_admission {
                Status::Pass
            } else {
                Status::Fail
            };
            rec.push(
                "yang_mills",
                ANCHOR_YM,
                Some(v),
                Some(p.yang_mills_admission),
                status,
                "control: must be detected as non-critical",
            );
        }
        Err(e) => rec.error("yang_mills", ANCHOR_YM, Some(tol), &e),
    }
    rec.bounded(
        "bianchi",
        ANCHOR_BIANCHI,
        bianchi_residual(d, &grid, method, steps),
        tol,
    );
    let basis = LinearFunction::coordinate_basis(d.base_dim() + 1);
    let commutator = grid
        .map(|x| {
            let frame = tangent_frame(x);
            basis
                .iter()
                .flat_map(|l| {
                    frame
                        .vectors
                        .iter()
                        .map(|e| commutator_identity_check(d, l, x, e, &frame))
                        .collect::<Vec<_>>()
                })
                .fold(0.0, f64::max)
        })
        .into_iter()
        .fold(0.0, f64::max);
    rec.at_most("commutator_identity", ANCHOR_COMMUTATOR, commutator, p.algebraic);
    if entry.critical {
        for (i, l) in basis.iter().enumerate() {
            rec.eigen(
                &format!("eigen.l{i}"),
                ANCHOR_YM_EIGEN,
                eigen_residual_ym(d, l, &grid, method, steps),
                tol,
            );
            rec.bounded(
                &format!("coclosed.l{i}"),
                ANCHOR_COCLOSED,
                coclosed_check(d, l, &grid, method, steps),
                tol,
            );
            rec.bounded(
                &format!("laplacian_identity.l{i}"),
                ANCHOR_YM_LAPLACIAN,
                laplacian_identity_residual(d, l, &grid, method, steps),
                tol,
            );
        }
    } else {
        rec.push(
            "eigen",
            ANCHOR_YM_EIGEN,
            None,
            Some(tol),
            Status::Skipped,
            "skipped: connection is not Yang-Mills",
        );
    }
    let gram = multiplicity_bound_ym(d, &grid, p.rank_epsilon);
    rec.rank(entry, &gram, p, ANCHOR_YM_RANK);
    if d.is_flat() {
        let sup = basis.iter().map(|l| b_ell_sup(d, l, &grid)).fold(0.0, f64::max);
        rec.at_most("degenerate.b_ell_zero", ANCHOR_YM_DEGENERATE, sup, ZERO_SECTION_NORM);
    }
    Ok(())
}

fn minimal_checks(
    rec: &mut Recorder,
    s: &ImmersedSubmanifold,
    entry: &CatalogEntry,
    cfg: &RunConfig,
    grids: &mut BTreeMap<String, GridInfo>,
) -> Result<()> {
    let level = level_for(cfg, entry);
    let grid = s.grid(level)?;
    grids.insert(
        entry.name.clone(),
        GridInfo {
            level,
            nodes: grid.len(),
        },
    );
    let (p, method) = (&cfg.profile, cfg.method);
    let steps = MinimalSteps::from(p);
    let tol = p.residual(method);
    let h = mean_curvature_sup(s, &grid, method, steps);
    if entry.critical {
        rec.at_most("mean_curvature", ANCHOR_MEAN_CURVATURE, h, p.minimal_admission);
    } else {
        let status = if h > NON_MINIMAL_MARGIN {
            Status::Pass
        } else {
            Status::Fail
        };
        rec.push(
            "mean_curvature",
            ANCHOR_MEAN_CURVATURE,
            Some(h),
            Some(NON_MINIMAL_MARGIN),
            status,
            "control: must be detected as non-minimal",
        );
    }
    // the beta derivatives are always taken numerically; bound them with the fd residual
    let beta = beta_residuals(s, &grid, method, steps);
    rec.at_most("codazzi", ANCHOR_CODAZZI, beta.codazzi_residual, p.fd_residual);
    if s.parallel_second_fundamental_form() {
        rec.at_most(
            "beta_coclosed",
            ANCHOR_BETA_COCLOSED,
            beta.coclosed_residual,
            p.fd_residual,
        );
    }
    let basis = LinearFunction::coordinate_basis(s.ambient_sphere_dim() + 1);
    if entry.critical {
        for (i, l) in basis.iter().enumerate() {
            rec.eigen(
                &format!("eigen.l{i}"),
                ANCHOR_MINIMAL_EIGEN,
                eigen_residual_minimal(s, l, &grid, method, steps),
                tol,
            );
        }
    } else {
        rec.push(
            "eigen",
            ANCHOR_MINIMAL_EIGEN,
            None,
            Some(tol),
            Status::Skipped,
            "skipped: immersion is not minimal",
        );
    }
    let rigidity = multiplicity_and_rigidity(s, &grid, p.rank_epsilon, p.totally_geodesic, method, steps);
    rec.rank(entry, &rigidity.gram, p, ANCHOR_MINIMAL_RANK);
    let status = if rigidity.totally_geodesic == s.claims_totally_geodesic() {
        Status::Pass
    } else {
        Status::Fail
    };
    rec.push(
        "totally_geodesic",
        ANCHOR_TOTALLY_GEODESIC,
        Some(rigidity.second_fundamental_form_sup),
        Some(p.totally_geodesic),
        status,
        format!("totally_geodesic = {}", rigidity.totally_geodesic),
    );
    if entry.critical {
        match lowest_eigenvalue_estimate(s, level) {
            Ok(lambda) => {
                if let Some(expected) = entry.expected_lowest_eigenvalue {
                    let gap = (lambda - expected).abs() / expected.abs();
                    let status = if gap <= p.lowest_eigenvalue_rel {
                        Status::Pass
                    } else {
                        Status::Fail
                    };
                    rec.push(
                        "lowest_eigenvalue",
                        ANCHOR_LOWEST,
                        Some(lambda),
                        Some(expected),
                        status,
                        format!("relative deviation {gap:.3e}"),
                    );
                }
                let bound = -(s.dim() as f64) + p.lowest_eigenvalue_slack;
                let status = if lambda <= bound { Status::Pass } else { Status::Fail };
                rec.push(
                    "lowest_eigenvalue.bound",
                    ANCHOR_LOWEST,
                    Some(lambda),
                    Some(bound),
                    status,
                    "",
                );
            }
            Err(e) => rec.error("lowest_eigenvalue", ANCHOR_LOWEST, entry.expected_lowest_eigenvalue, &e),
        }
    }
    Ok(())
}

/// The family along the seeded `ℓ`-direction and the matching grid.
pub fn variation_family(
    object: &CatalogObject,
    entry: &CatalogEntry,
    level: usize,
    seed: u64,
) -> Result<(VariationFamily, VariationGrid)> {
    Ok(match object {
        CatalogObject::Map(u) => {
            let l = seeded_linear_function(seed, u.domain_dim() + 1);
            (
                VariationFamily::map(u.clone(), x_ell_field(u, &l))?,
                VariationGrid::Sphere(quadrature_grid(entry.m, level)?),
            )
        }
        CatalogObject::Connection(d) => {
            let l = seeded_linear_function(seed, d.base_dim() + 1);
            (
                VariationFamily::connection(d.clone(), b_ell_form(d, &l)),
                VariationGrid::Sphere(quadrature_grid(entry.m, level)?),
            )
        }
        CatalogObject::Immersion(s) => {
            let l = seeded_linear_function(seed, s.ambient_sphere_dim() + 1);
            (
                VariationFamily::submanifold(s.clone(), v_ell_section(s, &l)),
                VariationGrid::Submanifold(s.grid(level)?),
            )
        }
    })
}

fn variation_checks(
    rec: &mut Recorder,
    object: &CatalogObject,
    entry: &CatalogEntry,
    cfg: &RunConfig,
    grids: &mut BTreeMap<String, GridInfo>,
) -> Result<()> {
    let level = level_for(cfg, entry);
    let (family, grid) = variation_family(object, entry, level, cfg.seed)?;
    let nodes = match &grid {
        VariationGrid::Sphere(g) => g.len(),
        VariationGrid::Submanifold(g) => g.len(),
    };
    grids.insert(entry.name.clone(), GridInfo { level, nodes });
    let p = &cfg.profile;
    match second_variation_check(&family, &grid, cfg.method, p) {
        Ok(r) => {
            let threshold = p.first_variation_rel * r.functional_at_zero.abs() + p.first_variation_abs;
            if entry.critical {
                rec.at_most(
                    "variation.first",
                    ANCHOR_FIRST_VARIATION,
                    r.first_variation.abs(),
                    threshold,
                );
            } else {
                rec.push(
                    "variation.first",
                    ANCHOR_FIRST_VARIATION,
                    Some(r.first_variation.abs()),
                    Some(threshold),
                    Status::Fail,
                    "control was not rejected",
                );
            }
            let note = format!("fd {:.9e}, quadratic form {:.9e}", r.fd_value, r.quadratic_form_value);
            let status = if r.relative_gap <= p.second_variation_gap {
                Status::Pass
            } else {
                Status::Fail
            };
            rec.push(
                "variation.gap",
                ANCHOR_SECOND_VARIATION,
                Some(r.relative_gap),
                Some(p.second_variation_gap),
                status,
                note,
            );
            let null = NULL_DIRECTION_RATIO * r.direction_norm_sq;
            let (ok, note) = if entry.predicted_unstable {
                (
                    r.quadratic_form_value < 0.0 && r.fd_value < 0.0,
                    "both values must be negative",
                )
            } else {
                (
                    r.quadratic_form_value >= -null && r.fd_value >= -null,
                    "no instability predicted: values must be non-negative",
                )
            };
            let status = if ok { Status::Pass } else { Status::Fail };
            rec.push(
                "variation.sign",
                ANCHOR_INSTABILITY,
                Some(r.quadratic_form_value),
                Some(0.0),
                status,
                note,
            );
        }
        Err(e @ (JacobiError::NotCritical { .. } | JacobiError::NotCriticalResidual { .. })) => {
            let (value, threshold) = match e {
                JacobiError::NotCritical {
                    first_variation,
                    threshold,
                } => (first_variation.abs(), threshold),
                JacobiError::NotCriticalResidual { residual, threshold } => (residual, threshold),
                _ => unreachable!(),
            };
            let status = if entry.critical { Status::Fail } else { Status::Pass };
            rec.push(
                "variation.first",
                ANCHOR_FIRST_VARIATION,
                Some(value),
                Some(threshold),
                status,
                format!("rejected: {e}"),
            );
        }
        Err(e) => rec.error(
            "variation.gap",
            ANCHOR_SECOND_VARIATION,
            Some(p.second_variation_gap),
            &e,
        ),
    }
    Ok(())
}

fn bochner_checks(rec: &mut Recorder, d: &BundleConnection, entry: &CatalogEntry, cfg: &RunConfig) {
    let steps = FdSteps::from(&cfg.profile);
    let bundle = Bundle::vector(d.connection().clone());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (degree, anchor) in [(1, ANCHOR_BOCHNER_1), (2, ANCHOR_BOCHNER_2)] {
        let mut worst: Result<f64> = Ok(0.0);
        for _ in 0..cfg.bochner_forms {
            let form = random_polynomial_form(&bundle, degree, 3, &mut rng);
            let x = random_sphere_point(&mut rng, entry.m);
            let r = bochner_residual(&form, &x, &tangent_frame(&x), steps);
            worst = match (worst, r) {
                (Ok(a), Ok(b)) => Ok(a.max(b)),
                (Err(e), _) | (_, Err(e)) => Err(e),
            };
        }
        rec.bounded(&format!("bochner.degree{degree}"), anchor, worst, cfg.profile.bochner);
    }
    rec.push(
        "bochner.samples",
        PLUMBING,
        Some(cfg.bochner_forms as f64),
        None,
        Status::Pass,
        "random polynomial forms per degree, one random point each",
    );
}

/// Runs the configured suite and assembles the report.
pub fn run_suite(cfg: &RunConfig) -> Result<VerificationReport> {
    cfg.validate()?;
    let start = Instant::now();
    let entries: Vec<CatalogEntry> = match &cfg.object {
        Some(name) => vec![catalog_entry(name)?],
        None => list_catalog()
            .into_iter()
            .filter(|e| cfg.suite.applies_to(e.setting))
            .collect(),
    };
    let mut records = Vec::new();
    let mut grids = BTreeMap::new();
    let mut per_object = BTreeMap::new();
    for entry in &entries {
        let t = Instant::now();
        let object = build(&entry.name)?;
        for suite in cfg.suite.expand(entry.setting) {
            let mut rec = Recorder {
                prefix: format!("{}/{suite}", entry.name),
                records: Vec::new(),
            };
            let outcome = match (suite, &object) {
                (Suite::Harmonic, CatalogObject::Map(u)) => harmonic_checks(&mut rec, u, entry, cfg, &mut grids),
                (Suite::YangMills, CatalogObject::Connection(d)) => {
                    yang_mills_checks(&mut rec, d, entry, cfg, &mut grids)
                }
                (Suite::Bochner, CatalogObject::Connection(d)) => {
                    bochner_checks(&mut rec, d, entry, cfg);
                    Ok(())
                }
                (Suite::Minimal, CatalogObject::Immersion(s)) => minimal_checks(&mut rec, s, entry, cfg, &mut grids),
                (Suite::Variation, obj) => variation_checks(&mut rec, obj, entry, cfg, &mut grids),
                _ => Err(JacobiError::Config(format!(
                    "suite `{suite}` does not apply to `{}`",
                    entry.name
                ))),
            };
            if let Err(e) = outcome {
                rec.error("setup", PLUMBING, None, &e);
            }
            records.extend(rec.records);
        }
        per_object.insert(entry.name.clone(), t.elapsed().as_secs_f64());
    }
    let summary = Summary {
        total: records.len(),
        passed: records.iter().filter(|r| r.status == Status::Pass).count(),
        failed: records.iter().filter(|r| r.status == Status::Fail).count(),
        skipped: records.iter().filter(|r| r.status == Status::Skipped).count(),
    };
    Ok(VerificationReport {
        schema_version: SCHEMA_VERSION,
        suite: cfg.suite,
        object: cfg.object.clone(),
        seed: cfg.seed,
        environment: Environment {
            method: cfg.method,
            profile: cfg.profile.name.clone(),
            fd_step_first: cfg.profile.fd_step_first,
            fd_step_second: cfg.profile.fd_step_second,
            variation_steps: cfg.profile.variation_steps,
            grids,
        },
        records,
        summary,
        timing: Timing {
            total_seconds: start.elapsed().as_secs_f64(),
            per_object_seconds: per_object,
        },
    })
}

/// One line per catalog entry: name, setting, dimensions and flags.
pub fn format_catalog() -> String {
    let mut out = String::new();
    for e in list_catalog() {
        let dims = match e.setting {
            Setting::Harmonic => format!("m={}, target S^{}", e.m, e.n_or_rank),
            Setting::YangMills => format!("m={}, rank {}", e.m, e.n_or_rank),
            Setting::Minimal => format!("m={}, n={}", e.m, e.n_or_rank),
        };
        out.push_str(&format!(
            "{:<20} {:<11} {:<20} {}\n",
            e.name,
            e.setting.to_string(),
            dims,
            e.flags.join(",")
        ));
    }
    out
}
