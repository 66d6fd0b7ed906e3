//! Case-file parsing.
//!
//! The canonical format is a single JSON document with `base`, `buses` and
//! `branches` sections. A CSV variant carries the same column names as three
//! header-row tables (base, buses, branches) separated by blank lines.
//!
//! Quantities may be given per unit (bare column names) or in physical units
//! via suffixed names (`r_ohm`, `pd_kw`, `pd_mw`, `vset_kv`, ...); mixing is
//! allowed per field. Everything is converted to per unit on the case bases
//! at parse time. Unknown fields are rejected.

use serde::Deserialize;

use super::{kw_to_pu, z_base, BranchRecord, BusKind, BusRecord, CaseError, NetworkCase};
use crate::scalar::{cast, Real};

/// Supported case-file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Json,
    CsvPair,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseDoc {
    base: BaseDoc,
    buses: Vec<BusDoc>,
    branches: Vec<BranchDoc>,
    #[serde(default)]
    v_min: Option<f64>,
    #[serde(default)]
    v_max: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaseDoc {
    s_base_mva: f64,
    v_base_kv: f64,
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct BusDoc {
    id: u32,
    kind: KindTag,
    #[serde(default)]
    pd: Option<f64>,
    #[serde(default)]
    pd_kw: Option<f64>,
    #[serde(default)]
    pd_mw: Option<f64>,
    #[serde(default)]
    qd: Option<f64>,
    #[serde(default)]
    qd_kvar: Option<f64>,
    #[serde(default)]
    qd_mvar: Option<f64>,
    #[serde(default)]
    pg: Option<f64>,
    #[serde(default)]
    pg_kw: Option<f64>,
    #[serde(default)]
    pg_mw: Option<f64>,
    #[serde(default)]
    qg: Option<f64>,
    #[serde(default)]
    qg_kvar: Option<f64>,
    #[serde(default)]
    qg_mvar: Option<f64>,
    #[serde(default)]
    vset: Option<f64>,
    #[serde(default)]
    vset_kv: Option<f64>,
    #[serde(default)]
    theta: Option<f64>,
    #[serde(default)]
    shunt_b: Option<f64>,
}

#[derive(Debug, Deserialize, Default, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Slack,
    Pv,
    #[default]
    Pq,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchDoc {
    from: u32,
    to: u32,
    #[serde(default)]
    r: Option<f64>,
    #[serde(default)]
    r_ohm: Option<f64>,
    #[serde(default)]
    x: Option<f64>,
    #[serde(default)]
    x_ohm: Option<f64>,
    #[serde(default)]
    b_half: Option<f64>,
    #[serde(default)]
    status: Option<u8>,
    #[serde(default)]
    i_max: Option<f64>,
    #[serde(default)]
    i_min: Option<f64>,
}

/// Parses a case file in the declared format and converts it to per unit.
pub fn parse_case<T: Real>(text: &str, format: CaseFormat) -> Result<NetworkCase<T>, CaseError> {
    let doc = match format {
        CaseFormat::Json => serde_json::from_str::<CaseDoc>(text)
            .map_err(|e| CaseError::Malformed(e.to_string()))?,
        CaseFormat::CsvPair => parse_csv_pair(text)?,
    };
    build_case(doc)
}

fn parse_csv_pair(text: &str) -> Result<CaseDoc, CaseError> {
    let sections: Vec<&str> = text
        .split("\n\n")
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if sections.len() != 3 {
        return Err(CaseError::Malformed(format!(
            "csv case must contain base, bus and branch tables separated by blank lines (found {} sections)",
            sections.len()
        )));
    }
    let mut bases: Vec<BaseDoc> = read_csv_section(sections[0])?;
    if bases.len() != 1 {
        return Err(CaseError::Malformed(
            "base table must have exactly one row".into(),
        ));
    }
    let buses: Vec<BusDoc> = read_csv_section(sections[1])?;
    let branches: Vec<BranchDoc> = read_csv_section(sections[2])?;
    Ok(CaseDoc {
        base: bases.remove(0),
        buses,
        branches,
        v_min: None,
        v_max: None,
    })
}

fn read_csv_section<D: for<'de> Deserialize<'de>>(section: &str) -> Result<Vec<D>, CaseError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(section.as_bytes());
    reader
        .deserialize()
        .collect::<Result<Vec<D>, _>>()
        .map_err(|e| CaseError::Malformed(e.to_string()))
}

fn one_of(
    name: &str,
    candidates: [(&str, Option<f64>); 3],
) -> Result<Option<(usize, f64)>, CaseError> {
    let given: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .filter_map(|(i, (_, v))| v.map(|v| (i, v)))
        .collect();
    match given.len() {
        0 => Ok(None),
        1 => Ok(Some(given[0])),
        _ => Err(CaseError::ConflictingFields(format!(
            "{name}: give at most one of {}",
            candidates.map(|(n, _)| n).join("/")
        ))),
    }
}

fn power_pu<T: Real>(
    name: &str,
    pu: Option<f64>,
    kilo: Option<f64>,
    mega: Option<f64>,
    s_base: T,
) -> Result<Option<T>, CaseError> {
    Ok(
        one_of(name, [("pu", pu), ("k", kilo), ("M", mega)])?.map(|(which, v)| match which {
            0 => cast::<T>(v),
            1 => kw_to_pu(cast::<T>(v), s_base),
            _ => cast::<T>(v) / s_base,
        }),
    )
}

fn build_case<T: Real>(doc: CaseDoc) -> Result<NetworkCase<T>, CaseError> {
    if doc.base.s_base_mva <= 0.0 {
        return Err(CaseError::NonPositiveBase(format!(
            "s_base_mva = {}",
            doc.base.s_base_mva
        )));
    }
    if doc.base.v_base_kv <= 0.0 {
        return Err(CaseError::NonPositiveBase(format!(
            "v_base_kv = {}",
            doc.base.v_base_kv
        )));
    }
    let s_base = cast::<T>(doc.base.s_base_mva);
    let v_base = cast::<T>(doc.base.v_base_kv);
    let zb = z_base(s_base, v_base);

    let mut buses = Vec::with_capacity(doc.buses.len());
    for b in &doc.buses {
        let kind = match b.kind {
            KindTag::Slack => BusKind::Slack,
            KindTag::Pv => BusKind::Pv,
            KindTag::Pq => BusKind::Pq,
        };
        let label = format!("bus {}", b.id);
        let v_set = match one_of(
            &label,
            [("vset", b.vset), ("vset_kv", b.vset_kv), ("-", None)],
        )? {
            Some((0, v)) => Some(cast::<T>(v)),
            Some((_, v)) => Some(cast::<T>(v) / v_base),
            None => None,
        };
        buses.push(BusRecord {
            id: b.id,
            kind,
            p_demand: power_pu(&label, b.pd, b.pd_kw, b.pd_mw, s_base)?.unwrap_or_else(T::zero),
            q_demand: power_pu(&label, b.qd, b.qd_kvar, b.qd_mvar, s_base)?.unwrap_or_else(T::zero),
            p_gen: power_pu(&label, b.pg, b.pg_kw, b.pg_mw, s_base)?,
            q_gen: power_pu(&label, b.qg, b.qg_kvar, b.qg_mvar, s_base)?,
            v_set,
            theta_set: b.theta.map(cast::<T>),
            shunt_b: b.shunt_b.map(cast::<T>).unwrap_or_else(T::zero),
        });
    }

    let mut branches = Vec::with_capacity(doc.branches.len());
    for br in &doc.branches {
        let label = format!("branch {}-{}", br.from, br.to);
        let r = match one_of(&label, [("r", br.r), ("r_ohm", br.r_ohm), ("-", None)])? {
            Some((0, v)) => cast::<T>(v),
            Some((_, v)) => cast::<T>(v) / zb,
            None => return Err(CaseError::InvalidValue(format!("{label}: missing r"))),
        };
        let x = match one_of(&label, [("x", br.x), ("x_ohm", br.x_ohm), ("-", None)])? {
            Some((0, v)) => cast::<T>(v),
            Some((_, v)) => cast::<T>(v) / zb,
            None => return Err(CaseError::InvalidValue(format!("{label}: missing x"))),
        };
        let status = match br.status.unwrap_or(1) {
            0 => false,
            1 => true,
            other => {
                return Err(CaseError::InvalidValue(format!(
                    "{label}: status must be 0 or 1, got {other}"
                )))
            }
        };
        branches.push(BranchRecord {
            from_bus: br.from,
            to_bus: br.to,
            r,
            x,
            b_shunt_half: br.b_half.map(cast::<T>).unwrap_or_else(T::zero),
            status,
            i_max: br.i_max.map(cast::<T>),
            i_min: br.i_min.map(cast::<T>),
        });
    }

    NetworkCase::new(
        s_base,
        v_base,
        buses,
        branches,
        doc.v_min.map(cast::<T>),
        doc.v_max.map(cast::<T>),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TINY_JSON: &str = r#"{
        "base": {"s_base_mva": 100.0, "v_base_kv": 23.0},
        "buses": [
            {"id": 1, "kind": "slack", "vset": 1.0, "theta": 0.0},
            {"id": 2, "kind": "pq", "pd_kw": 2000.0, "qd_kvar": 1600.0}
        ],
        "branches": [
            {"from": 1, "to": 2, "r": 0.075, "x": 0.1}
        ]
    }"#;

    #[test]
    fn parses_canonical_json() {
        let case = parse_case::<f64>(TINY_JSON, CaseFormat::Json).unwrap();
        assert_eq!(case.n_buses(), 2);
        assert_relative_eq!(case.buses()[1].p_demand, 0.02);
        assert_relative_eq!(case.buses()[1].q_demand, 0.016);
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = TINY_JSON.replace("\"vset\": 1.0", "\"vset\": 1.0, \"color\": 3");
        assert!(matches!(
            parse_case::<f64>(&text, CaseFormat::Json),
            Err(CaseError::Malformed(_))
        ));
    }

    #[test]
    fn rejects_conflicting_unit_variants() {
        let text = TINY_JSON.replace("\"pd_kw\": 2000.0", "\"pd_kw\": 2000.0, \"pd\": 0.02");
        assert!(matches!(
            parse_case::<f64>(&text, CaseFormat::Json),
            Err(CaseError::ConflictingFields(_))
        ));
    }

    #[test]
    fn ohm_conversion_uses_impedance_base() {
        let text = TINY_JSON.replace(
            "\"r\": 0.075, \"x\": 0.1",
            "\"r_ohm\": 5.29, \"x_ohm\": 5.29",
        );
        let case = parse_case::<f64>(&text, CaseFormat::Json).unwrap();
        // z_base = 23^2 / 100 = 5.29 ohm
        assert_relative_eq!(case.branches()[0].r, 1.0, max_relative = 1e-12);
        assert_relative_eq!(case.branches()[0].x, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn parses_csv_pair() {
        let text = "\
s_base_mva,v_base_kv
100.0,23.0

id,kind,pd_kw,qd_kvar,vset,theta
1,slack,,,1.0,0.0
2,pq,2000.0,1600.0,,

from,to,r,x
1,2,0.075,0.1
";
        let case = parse_case::<f64>(text, CaseFormat::CsvPair).unwrap();
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.branches().len(), 1);
        assert_relative_eq!(case.buses()[1].p_demand, 0.02);
    }

    #[test]
    fn csv_with_missing_section_is_malformed() {
        let text = "s_base_mva,v_base_kv\n100,23\n\nid,kind\n1,slack\n";
        assert!(matches!(
            parse_case::<f64>(text, CaseFormat::CsvPair),
            Err(CaseError::Malformed(_))
        ));
    }

    #[test]
    fn per_unit_round_trip() {
        let case = parse_case::<f64>(TINY_JSON, CaseFormat::Json).unwrap();
        let zb = z_base(case.s_base_mva(), case.v_base_kv());
        // branch given per unit: converting to ohms and back is exact
        let r_ohm = case.branches()[0].r * zb;
        assert_relative_eq!(r_ohm / zb, 0.075, max_relative = 1e-12);
        // load given in kW
        let pd_kw = case.buses()[1].p_demand * case.s_base_mva() * 1000.0;
        assert_relative_eq!(pd_kw, 2000.0, max_relative = 1e-12);
    }
}
