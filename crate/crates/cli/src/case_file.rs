//! Case file loading and serialization.
//!
//! Cases are TOML documents with top-level `base_mva` plus `buses`,
//! `lines`, `generators`, and `loads` arrays; every electrical quantity
//! is per-unit on `base_mva` (see `docs/case-format.md`). Bus ids in a
//! file may be arbitrary unique integers; the loader renumbers them to
//! contiguous `0..n` in ascending id order before validation, which is
//! the form the rest of the toolkit works with.
//!
//! Four cases ship embedded in the binary and can be named instead of a
//! path: `ieee39` (New England 39-bus with classical transient
//! parameters), `wscc9` (3-machine 9-bus), `smib2` (machine against an
//! infinite bus over a double circuit), and `case2` (minimal slack+load).

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use tsa_core::grid::{Bus, BusKind, Generator, GridCase, Line, Load};

#[derive(Debug, Serialize, Deserialize)]
struct CaseFile {
    base_mva: f64,
    #[serde(default)]
    buses: Vec<BusEntry>,
    #[serde(default)]
    lines: Vec<LineEntry>,
    #[serde(default)]
    generators: Vec<GeneratorEntry>,
    #[serde(default)]
    loads: Vec<LoadEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BusEntry {
    id: u64,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    voltage_setpoint: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LineEntry {
    from_bus: u64,
    to_bus: u64,
    r: f64,
    x: f64,
    #[serde(default)]
    b_shunt: f64,
    #[serde(default = "default_true")]
    in_service: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorEntry {
    bus: u64,
    p_set: f64,
    inertia_h: f64,
    #[serde(default)]
    damping_d: f64,
    xd_prime: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LoadEntry {
    bus: u64,
    p: f64,
    q: f64,
}

fn default_true() -> bool {
    true
}

/// Embedded case text by short name.
pub fn bundled(name: &str) -> Option<&'static str> {
    match name {
        "ieee39" | "39bus" => Some(include_str!("../cases/ieee39.toml")),
        "wscc9" | "9bus" => Some(include_str!("../cases/wscc9.toml")),
        "smib2" | "smib" => Some(include_str!("../cases/smib2.toml")),
        "case2" | "2bus" => Some(include_str!("../cases/case2.toml")),
        _ => None,
    }
}

pub const BUNDLED_NAMES: &[&str] = &["ieee39", "wscc9", "smib2", "case2"];

/// Parse and validate case text. TOML errors carry line/column context;
/// validation errors name the violated invariant.
pub fn parse_case(text: &str) -> Result<GridCase> {
    let file: CaseFile = toml::from_str(text).context("case file parse error")?;

    // renumber arbitrary unique ids to contiguous 0..n by ascending id
    let mut id_map: BTreeMap<u64, usize> = BTreeMap::new();
    for bus in &file.buses {
        if id_map.insert(bus.id, 0).is_some() {
            bail!("duplicate bus id {} in case file", bus.id);
        }
    }
    for (internal, (_, slot)) in id_map.iter_mut().enumerate() {
        *slot = internal;
    }
    let lookup = |id: u64, what: &str| -> Result<usize> {
        id_map
            .get(&id)
            .copied()
            .ok_or_else(|| anyhow!("{what} references unknown bus {id}"))
    };

    let mut buses: Vec<Bus> = Vec::with_capacity(file.buses.len());
    for entry in &file.buses {
        let kind = match entry.kind.as_str() {
            "slack" => BusKind::Slack,
            "pv" => BusKind::Pv,
            "pq" => BusKind::Pq,
            other => bail!("bus {}: unknown kind `{other}` (slack|pv|pq)", entry.id),
        };
        buses.push(Bus {
            id: id_map[&entry.id],
            kind,
            voltage_setpoint: entry.voltage_setpoint,
        });
    }
    buses.sort_by_key(|b| b.id);

    let case = GridCase {
        base_mva: file.base_mva,
        buses,
        lines: file
            .lines
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(Line {
                    from_bus: lookup(l.from_bus, &format!("line {i}"))?,
                    to_bus: lookup(l.to_bus, &format!("line {i}"))?,
                    r: l.r,
                    x: l.x,
                    b_shunt: l.b_shunt,
                    in_service: l.in_service,
                })
            })
            .collect::<Result<_>>()?,
        generators: file
            .generators
            .iter()
            .enumerate()
            .map(|(i, g)| {
                Ok(Generator {
                    bus: lookup(g.bus, &format!("generator {i}"))?,
                    p_set: g.p_set,
                    inertia_h: g.inertia_h,
                    damping_d: g.damping_d,
                    xd_prime: g.xd_prime,
                })
            })
            .collect::<Result<_>>()?,
        loads: file
            .loads
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(Load {
                    bus: lookup(l.bus, &format!("load {i}"))?,
                    p: l.p,
                    q: l.q,
                })
            })
            .collect::<Result<_>>()?,
    };
    case.validate().context("case validation failed")?;
    Ok(case)
}

/// Load from a filesystem path or a bundled case name.
pub fn load_case(path_or_name: &str) -> Result<GridCase> {
    let text = if Path::new(path_or_name).exists() {
        std::fs::read_to_string(path_or_name)
            .with_context(|| format!("reading case file {path_or_name}"))?
    } else if let Some(text) = bundled(path_or_name) {
        text.to_string()
    } else {
        bail!(
            "`{path_or_name}` is neither a file nor a bundled case ({})",
            BUNDLED_NAMES.join(", ")
        );
    };
    parse_case(&text)
}

/// Serialize a (renumbered) case back to TOML. Floats round-trip exactly.
pub fn serialize_case(case: &GridCase) -> String {
    let file = CaseFile {
        base_mva: case.base_mva,
        buses: case
            .buses
            .iter()
            .map(|b| BusEntry {
                id: b.id as u64,
                kind: match b.kind {
                    BusKind::Slack => "slack",
                    BusKind::Pv => "pv",
                    BusKind::Pq => "pq",
                }
                .to_string(),
                voltage_setpoint: b.voltage_setpoint,
            })
            .collect(),
        lines: case
            .lines
            .iter()
            .map(|l| LineEntry {
                from_bus: l.from_bus as u64,
                to_bus: l.to_bus as u64,
                r: l.r,
                x: l.x,
                b_shunt: l.b_shunt,
                in_service: l.in_service,
            })
            .collect(),
        generators: case
            .generators
            .iter()
            .map(|g| GeneratorEntry {
                bus: g.bus as u64,
                p_set: g.p_set,
                inertia_h: g.inertia_h,
                damping_d: g.damping_d,
                xd_prime: g.xd_prime,
            })
            .collect(),
        loads: case
            .loads
            .iter()
            .map(|l| LoadEntry {
                bus: l.bus as u64,
                p: l.p,
                q: l.q,
            })
            .collect(),
    };
    toml::to_string(&file).expect("case serialization cannot fail")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_39_bus_matches_published_shape() {
        let case = load_case("ieee39").unwrap();
        assert_eq!(case.n_buses(), 39);
        assert_eq!(case.lines.len(), 46);
        assert_eq!(case.generators.len(), 10);
        assert_eq!(case.loads.len(), 19);
    }

    #[test]
    fn bundled_9_bus_loads() {
        let case = load_case("wscc9").unwrap();
        assert_eq!(case.n_buses(), 9);
        assert_eq!(case.lines.len(), 9);
        assert_eq!(case.generators.len(), 3);
    }

    #[test]
    fn minimal_two_bus_case() {
        let case = load_case("case2").unwrap();
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.buses[0].kind, BusKind::Slack);
        assert_eq!(case.buses[1].kind, BusKind::Pq);
        assert!(case.generators.is_empty());
    }

    #[test]
    fn duplicate_bus_id_rejected_with_message() {
        let text = r#"
base_mva = 100.0
[[buses]]
id = 1
kind = "slack"
voltage_setpoint = 1.0
[[buses]]
id = 1
kind = "pq"
"#;
        let err = parse_case(text).unwrap_err();
        assert!(err.to_string().contains("duplicate bus id 1"));
    }

    #[test]
    fn parse_error_reports_location() {
        let err = parse_case("base_mva = \"not a number\"").unwrap_err();
        let msg = format!("{err:#}");
        assert!(msg.contains("line 1"), "missing location in: {msg}");
    }

    #[test]
    fn validation_error_names_invariant() {
        let text = r#"
base_mva = 100.0
[[buses]]
id = 0
kind = "slack"
voltage_setpoint = 1.0
[[buses]]
id = 1
kind = "pq"
[[lines]]
from_bus = 0
to_bus = 1
r = 0.0
x = 0.0
"#;
        let err = parse_case(text).unwrap_err();
        assert!(format!("{err:#}").contains("zero reactance"));
    }

    #[test]
    fn arbitrary_ids_renumbered_in_ascending_order() {
        let text = r#"
base_mva = 100.0
[[buses]]
id = 100
kind = "pq"
[[buses]]
id = 7
kind = "slack"
voltage_setpoint = 1.0
[[lines]]
from_bus = 7
to_bus = 100
r = 0.01
x = 0.1
"#;
        let case = parse_case(text).unwrap();
        assert_eq!(case.buses[0].kind, BusKind::Slack); // id 7 -> 0
        assert_eq!(case.lines[0].from_bus, 0);
        assert_eq!(case.lines[0].to_bus, 1);
    }

    #[test]
    fn serialize_parse_round_trip_is_identical() {
        for name in BUNDLED_NAMES {
            let case = load_case(name).unwrap();
            let text = serialize_case(&case);
            let reparsed = parse_case(&text).unwrap();
            assert_eq!(case, reparsed, "round trip changed case {name}");
        }
    }
}
