//! Run-configuration file: a sectioned key = value text format with strict
//! validation. Unknown sections or keys are errors, as are missing required
//! keys, so a typo can never silently fall back to a default.

use crate::error::{Error, Result};
use std::path::Path;

/// Initial-data family of a scenario.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitialKind {
    Flat,
    /// Uniform i.i.d. perturbation components rescaled to the amplitude.
    Noise,
    Point,
    Segment,
    Dust,
    /// Conformal dip u = 1 - a exp(-d^2/(2 w^2)): scalar curvature is
    /// negative on the blob, deliberately violating nonnegativity.
    Bump,
}

impl InitialKind {
    fn parse(v: &str) -> Option<Self> {
        Some(match v {
            "flat" => InitialKind::Flat,
            "noise" => InitialKind::Noise,
            "point" => InitialKind::Point,
            "segment" => InitialKind::Segment,
            "dust" => InitialKind::Dust,
            "bump" => InitialKind::Bump,
            _ => return None,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            InitialKind::Flat => "flat",
            InitialKind::Noise => "noise",
            InitialKind::Point => "point",
            InitialKind::Segment => "segment",
            InitialKind::Dust => "dust",
            InitialKind::Bump => "bump",
        }
    }
}

/// Verification checks the runner knows how to schedule.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckName {
    MaxPrinciple,
    GlobalNnsc,
    BetaWeak,
    SpatialLowerBound,
    CkBounds,
    DerivativeDecay,
    Pairing,
}

impl CheckName {
    pub fn parse(v: &str) -> Option<Self> {
        Some(match v {
            "max_principle" => CheckName::MaxPrinciple,
            "global_nnsc" => CheckName::GlobalNnsc,
            "beta_weak" => CheckName::BetaWeak,
            "spatial_lower_bound" => CheckName::SpatialLowerBound,
            "ck_bounds" => CheckName::CkBounds,
            "derivative_decay" => CheckName::DerivativeDecay,
            "pairing" => CheckName::Pairing,
            _ => return None,
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            CheckName::MaxPrinciple => "max_principle",
            CheckName::GlobalNnsc => "global_nnsc",
            CheckName::BetaWeak => "beta_weak",
            CheckName::SpatialLowerBound => "spatial_lower_bound",
            CheckName::CkBounds => "ck_bounds",
            CheckName::DerivativeDecay => "derivative_decay",
            CheckName::Pairing => "pairing",
        }
    }
}

#[derive(Clone, Debug)]
pub struct LatticeConfig {
    pub n: usize,
    pub res: usize,
    pub extent: f64,
}

#[derive(Clone, Debug)]
pub struct InitialConfig {
    pub kind: InitialKind,
    pub amplitude: f64,
    /// Cantor recursion depth for the dust family.
    pub depth: usize,
    /// RNG seed for the noise family (CLI --seed overrides).
    pub seed: u64,
    /// Admissible sup-distance to flat for the generated-metric report.
    pub eps_bar: f64,
}

#[derive(Clone, Debug)]
pub struct FlowConfig {
    pub horizon: f64,
    pub sigma: f64,
    pub uniform: usize,
    pub dyadic: bool,
    /// Terminal time of the dense kernel-storage window, if any.
    pub kernel_t1: Option<f64>,
    pub kernel_count: usize,
}

#[derive(Clone, Debug)]
pub struct ChecksConfig {
    /// Explicit check list; empty means the kind-appropriate default set.
    pub run: Vec<CheckName>,
    pub beta: f64,
    pub kappa0: f64,
    /// Defaults to (1 - 2 beta) / 2 when absent.
    pub eta: Option<f64>,
    pub ck_order: usize,
    /// Artificial scalar floor injected on a corner ball (negative control).
    pub inject_floor: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct OutputConfig {
    /// Scenario identifier; defaults to the initial kind label.
    pub id: Option<String>,
    pub csv: bool,
    pub svg: bool,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub lattice: LatticeConfig,
    pub initial: InitialConfig,
    pub flow: FlowConfig,
    pub checks: ChecksConfig,
    pub output: OutputConfig,
}

impl Config {
    pub fn scenario_id(&self) -> String {
        self.output
            .id
            .clone()
            .unwrap_or_else(|| self.initial.kind.label().to_string())
    }

    pub fn eta(&self) -> f64 {
        self.checks
            .eta
            .unwrap_or((1.0 - 2.0 * self.checks.beta) / 2.0)
    }

    pub fn from_path(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        parse_config(&text)
    }
}

const SECTIONS: [&str; 5] = ["lattice", "initial", "flow", "checks", "output"];

struct RawItem {
    section: usize,
    key: String,
    value: String,
    line: usize,
}

fn tokenize(text: &str) -> Result<(Vec<RawItem>, [bool; 5])> {
    let mut items = Vec::new();
    let mut seen = [false; 5];
    let mut current: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            let name = name.trim();
            match SECTIONS.iter().position(|s| *s == name) {
                Some(k) => {
                    seen[k] = true;
                    current = Some(k);
                }
                None => {
                    return Err(Error::ConfigParse {
                        line,
                        reason: format!("unknown section [{name}]"),
                    })
                }
            }
            continue;
        }
        let Some(eq) = trimmed.find('=') else {
            return Err(Error::ConfigParse {
                line,
                reason: format!("expected key = value, got {trimmed:?}"),
            });
        };
        let key = trimmed[..eq].trim().to_string();
        let value = trimmed[eq + 1..].trim().to_string();
        if key.is_empty() {
            return Err(Error::ConfigParse {
                line,
                reason: "empty key".into(),
            });
        }
        let Some(section) = current else {
            return Err(Error::ConfigParse {
                line,
                reason: format!("key {key:?} appears before any section header"),
            });
        };
        items.push(RawItem {
            section,
            key,
            value,
            line,
        });
    }
    Ok((items, seen))
}

fn bad_value(item: &RawItem, what: &str) -> Error {
    Error::ConfigParse {
        line: item.line,
        reason: format!(
            "key [{}] {} expects {what}, got {:?}",
            SECTIONS[item.section], item.key, item.value
        ),
    }
}

fn get_f64(item: &RawItem) -> Result<f64> {
    item.value
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| bad_value(item, "a finite number"))
}

fn get_usize(item: &RawItem) -> Result<usize> {
    item.value
        .parse::<usize>()
        .map_err(|_| bad_value(item, "a nonnegative integer"))
}

fn get_u64(item: &RawItem) -> Result<u64> {
    item.value
        .parse::<u64>()
        .map_err(|_| bad_value(item, "a nonnegative integer"))
}

fn get_bool(item: &RawItem) -> Result<bool> {
    match item.value.as_str() {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad_value(item, "true or false")),
    }
}

/// Parse and validate the sectioned key = value text.
pub fn parse_config(text: &str) -> Result<Config> {
    let (items, seen) = tokenize(text)?;

    let mut lat_n = None;
    let mut lat_res = None;
    let mut lat_extent = None;
    let mut kind = None;
    let mut amplitude = 0.0f64;
    let mut depth = 3usize;
    let mut seed = 42u64;
    let mut eps_bar = 0.5f64;
    let mut horizon = None;
    let mut sigma = crate::flow::CFL_SIGMA;
    let mut uniform = 32usize;
    let mut dyadic = true;
    let mut kernel_t1 = None;
    let mut kernel_count = 128usize;
    let mut run = Vec::new();
    let mut beta = 0.1f64;
    let mut kappa0 = 0.0f64;
    let mut eta = None;
    let mut ck_order = 2usize;
    let mut inject_floor = None;
    let mut id = None;
    let mut csv = true;
    let mut svg = true;

    for item in &items {
        let section = SECTIONS[item.section];
        match (section, item.key.as_str()) {
            ("lattice", "n") => lat_n = Some(get_usize(item)?),
            ("lattice", "res") => lat_res = Some(get_usize(item)?),
            ("lattice", "extent") => lat_extent = Some(get_f64(item)?),
            ("initial", "kind") => {
                kind = Some(
                    InitialKind::parse(&item.value)
                        .ok_or_else(|| bad_value(item, "flat|noise|point|segment|dust|bump"))?,
                )
            }
            ("initial", "amplitude") => amplitude = get_f64(item)?,
            ("initial", "depth") => depth = get_usize(item)?,
            ("initial", "seed") => seed = get_u64(item)?,
            ("initial", "eps_bar") => eps_bar = get_f64(item)?,
            ("flow", "horizon") => horizon = Some(get_f64(item)?),
            ("flow", "sigma") => sigma = get_f64(item)?,
            ("flow", "uniform") => uniform = get_usize(item)?,
            ("flow", "dyadic") => dyadic = get_bool(item)?,
            ("flow", "kernel_t1") => kernel_t1 = Some(get_f64(item)?),
            ("flow", "kernel_count") => kernel_count = get_usize(item)?,
            ("checks", "run") => {
                for part in item.value.split(',') {
                    let name = part.trim();
                    if name.is_empty() {
                        continue;
                    }
                    run.push(
                        CheckName::parse(name)
                            .ok_or_else(|| bad_value(item, "a comma-separated check list"))?,
                    );
                }
            }
            ("checks", "beta") => beta = get_f64(item)?,
            ("checks", "kappa0") => kappa0 = get_f64(item)?,
            ("checks", "eta") => eta = Some(get_f64(item)?),
            ("checks", "ck_order") => ck_order = get_usize(item)?,
            ("checks", "inject_floor") => inject_floor = Some(get_f64(item)?),
            ("output", "id") => id = Some(item.value.clone()),
            ("output", "csv") => csv = get_bool(item)?,
            ("output", "svg") => svg = get_bool(item)?,
            _ => {
                return Err(Error::UnknownKey {
                    section: section.into(),
                    key: item.key.clone(),
                })
            }
        }
    }

    let missing = |section: &str, key: &str| Error::MissingKey {
        section: section.into(),
        key: key.into(),
    };
    if !seen[0] {
        return Err(missing("lattice", "n"));
    }
    let cfg = Config {
        lattice: LatticeConfig {
            n: lat_n.ok_or_else(|| missing("lattice", "n"))?,
            res: lat_res.ok_or_else(|| missing("lattice", "res"))?,
            extent: lat_extent.ok_or_else(|| missing("lattice", "extent"))?,
        },
        initial: InitialConfig {
            kind: kind.ok_or_else(|| missing("initial", "kind"))?,
            amplitude,
            depth,
            seed,
            eps_bar,
        },
        flow: FlowConfig {
            horizon: horizon.ok_or_else(|| missing("flow", "horizon"))?,
            sigma,
            uniform,
            dyadic,
            kernel_t1,
            kernel_count,
        },
        checks: ChecksConfig {
            run,
            beta,
            kappa0,
            eta,
            ck_order,
            inject_floor,
        },
        output: OutputConfig { id, csv, svg },
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &Config) -> Result<()> {
    let bad = |reason: String| Error::invalid("config", reason);
    if !(cfg.flow.horizon > 0.0) {
        return Err(bad(format!("horizon {} must be positive", cfg.flow.horizon)));
    }
    if !(cfg.flow.sigma > 0.0 && cfg.flow.sigma <= 1.0) {
        return Err(bad(format!("sigma {} outside (0, 1]", cfg.flow.sigma)));
    }
    if !(cfg.checks.beta > 0.0 && cfg.checks.beta < 0.5) {
        return Err(bad(format!("beta {} outside (0, 1/2)", cfg.checks.beta)));
    }
    let eta = cfg.eta();
    if !(eta > 0.0 && eta <= (1.0 - 2.0 * cfg.checks.beta) / 2.0 + 1e-12) {
        return Err(bad(format!(
            "eta {eta} outside (0, (1 - 2 beta)/2 = {}]",
            (1.0 - 2.0 * cfg.checks.beta) / 2.0
        )));
    }
    if cfg.checks.ck_order == 0 || cfg.checks.ck_order > 4 {
        return Err(bad(format!(
            "ck_order {} outside 1..=4",
            cfg.checks.ck_order
        )));
    }
    if let Some(t1) = cfg.flow.kernel_t1 {
        if !(t1 > 0.0 && t1 <= cfg.flow.horizon) {
            return Err(bad(format!("kernel_t1 {t1} outside (0, horizon]")));
        }
        if cfg.flow.kernel_count < 8 {
            return Err(bad(format!(
                "kernel_count {} below the 8-slice window minimum",
                cfg.flow.kernel_count
            )));
        }
    }
    if cfg.initial.amplitude < 0.0 {
        return Err(bad(format!(
            "amplitude {} must be nonnegative",
            cfg.initial.amplitude
        )));
    }
    if cfg.initial.kind == InitialKind::Bump && cfg.initial.amplitude >= 1.0 {
        return Err(bad("bump amplitude must stay below 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "\
# scenario file
[lattice]
n = 3
res = 16
extent = 2.0

[initial]
kind = point
amplitude = 0.02

[flow]
horizon = 0.5
kernel_t1 = 0.25
kernel_count = 16

[checks]
run = global_nnsc, max_principle
beta = 0.1

[output]
id = demo
";

    #[test]
    fn well_formed_file_parses_with_defaults() {
        let cfg = parse_config(GOOD).unwrap();
        assert_eq!(cfg.lattice.n, 3);
        assert_eq!(cfg.lattice.res, 16);
        assert_eq!(cfg.initial.kind, InitialKind::Point);
        assert_eq!(cfg.initial.amplitude, 0.02);
        assert_eq!(cfg.initial.depth, 3);
        assert_eq!(cfg.flow.sigma, crate::flow::CFL_SIGMA);
        assert_eq!(cfg.flow.kernel_t1, Some(0.25));
        assert_eq!(
            cfg.checks.run,
            vec![CheckName::GlobalNnsc, CheckName::MaxPrinciple]
        );
        assert_eq!(cfg.eta(), 0.4);
        assert_eq!(cfg.scenario_id(), "demo");
    }

    #[test]
    fn unknown_key_names_section_and_key() {
        let text = GOOD.replace("amplitude = 0.02", "amplitudee = 0.02");
        match parse_config(&text) {
            Err(Error::UnknownKey { section, key }) => {
                assert_eq!(section, "initial");
                assert_eq!(key, "amplitudee");
            }
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn missing_lattice_block_names_the_missing_key() {
        let text = GOOD.replace("[lattice]\nn = 3\nres = 16\nextent = 2.0\n", "");
        match parse_config(&text) {
            Err(Error::MissingKey { section, key }) => {
                assert_eq!(section, "lattice");
                assert_eq!(key, "n");
            }
            other => panic!("expected MissingKey, got {other:?}"),
        }
    }

    #[test]
    fn missing_single_required_key_is_reported() {
        let text = GOOD.replace("extent = 2.0\n", "");
        match parse_config(&text) {
            Err(Error::MissingKey { section, key }) => {
                assert_eq!(section, "lattice");
                assert_eq!(key, "extent");
            }
            other => panic!("expected MissingKey, got {other:?}"),
        }
    }

    #[test]
    fn malformed_lines_carry_line_numbers() {
        let text = "[lattice]\nn 3\n";
        match parse_config(text) {
            Err(Error::ConfigParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected ConfigParse, got {other:?}"),
        }
        let text = "n = 3\n";
        assert!(matches!(
            parse_config(text),
            Err(Error::ConfigParse { line: 1, .. })
        ));
        let text = "[lattice]\nn = three\n";
        match parse_config(text) {
            Err(Error::ConfigParse { line, reason }) => {
                assert_eq!(line, 2);
                assert!(reason.contains("[lattice] n"), "reason {reason}");
            }
            other => panic!("expected ConfigParse, got {other:?}"),
        }
    }

    #[test]
    fn unknown_section_and_check_names_are_rejected() {
        let text = format!("{GOOD}\n[plots]\nx = 1\n");
        assert!(matches!(
            parse_config(&text),
            Err(Error::ConfigParse { .. })
        ));
        let text = GOOD.replace("run = global_nnsc, max_principle", "run = nnsc_global");
        assert!(matches!(parse_config(&text), Err(Error::ConfigParse { .. })));
    }

    #[test]
    fn semantic_validation_rejects_bad_bands() {
        for (from, to) in [
            ("horizon = 0.5", "horizon = -1.0"),
            ("beta = 0.1", "beta = 0.5"),
            ("kernel_count = 16", "kernel_count = 4"),
            ("amplitude = 0.02", "amplitude = -0.1"),
        ] {
            let text = GOOD.replace(from, to);
            assert!(
                matches!(parse_config(&text), Err(Error::Invalid { .. })),
                "{to} accepted"
            );
        }
        let text = GOOD.replace("beta = 0.1", "beta = 0.1\neta = 0.45");
        assert!(matches!(parse_config(&text), Err(Error::Invalid { .. })));
    }
}
