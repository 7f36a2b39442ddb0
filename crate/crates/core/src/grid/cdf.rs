//! Reader for the IEEE Common Data Format.
//!
//! Only the title card and the bus and branch sections are consumed; loss
//! zones, interchange and tie-line sections are skipped. Values are converted
//! to per-unit on the MVA base given on the title card and angles to radians.

use super::case::{Branch, Bus, BusKind, Generator, NetworkCase};
use super::GridError;

const DEFAULT_V_MIN: f64 = 0.94;
const DEFAULT_V_MAX: f64 = 1.06;
/// Substituted when a bus card leaves base kV blank or zero.
const PLACEHOLDER_BASE_KV: f64 = 1.0;

/// 1-based inclusive column slice, trimmed. Short lines yield "".
fn columns(line: &str, first: usize, last: usize) -> &str {
    let bytes = line.as_bytes();
    let start = (first - 1).min(bytes.len());
    let end = last.min(bytes.len());
    line.get(start..end).unwrap_or("").trim()
}

fn number(line: &str, lineno: usize, first: usize, last: usize, what: &str) -> Result<f64, GridError> {
    let field = columns(line, first, last);
    if field.is_empty() {
        return Ok(0.0);
    }
    field.parse::<f64>().map_err(|_| GridError::Syntax {
        line: lineno,
        message: format!("bad {what} field {field:?} (columns {first}-{last})"),
    })
}

fn integer(line: &str, lineno: usize, first: usize, last: usize, what: &str) -> Result<i64, GridError> {
    let field = columns(line, first, last);
    field.parse::<i64>().map_err(|_| GridError::Syntax {
        line: lineno,
        message: format!("bad {what} field {field:?} (columns {first}-{last})"),
    })
}

pub fn parse_cdf(text: &str) -> Result<NetworkCase, GridError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (title_no, title) = lines.next().ok_or(GridError::Syntax {
        line: 1,
        message: "empty input".into(),
    })?;
    let base_mva = number(title, title_no, 32, 37, "MVA base")?;
    if !(base_mva > 0.0) {
        return Err(GridError::Syntax {
            line: title_no,
            message: "title card carries no positive MVA base".into(),
        });
    }

    let mut buses = Vec::new();
    let mut generators = Vec::new();
    let mut branches = Vec::new();
    let mut saw_bus = false;
    let mut saw_branch = false;

    while let Some((no, line)) = lines.next() {
        if line.starts_with("BUS DATA FOLLOWS") {
            saw_bus = true;
            for (no, line) in lines.by_ref() {
                if line.trim_start().starts_with("-999") {
                    break;
                }
                if line.trim().is_empty() {
                    continue;
                }
                let (bus, gen) = bus_card(line, no, base_mva)?;
                buses.push(bus);
                generators.extend(gen);
            }
        } else if line.starts_with("BRANCH DATA FOLLOWS") {
            saw_branch = true;
            for (no, line) in lines.by_ref() {
                if line.trim_start().starts_with("-999") {
                    break;
                }
                if line.trim().is_empty() {
                    continue;
                }
                branches.push(branch_card(line, no, base_mva)?);
            }
        } else if line.starts_with("END OF DATA") {
            break;
        } else if !saw_bus && !line.trim().is_empty() && no > 1 && !line.contains("FOLLOWS") {
            return Err(GridError::Syntax {
                line: no,
                message: "expected BUS DATA FOLLOWS section".into(),
            });
        }
    }
    if !saw_bus {
        return Err(GridError::Syntax {
            line: text.lines().count().max(1),
            message: "missing BUS DATA section".into(),
        });
    }
    if !saw_branch && buses.len() > 1 {
        return Err(GridError::Syntax {
            line: text.lines().count().max(1),
            message: "missing BRANCH DATA section".into(),
        });
    }
    NetworkCase::new(base_mva, buses, branches, generators)
}

fn bus_card(line: &str, no: usize, base: f64) -> Result<(Bus, Option<Generator>), GridError> {
    let id = integer(line, no, 1, 4, "bus number")?;
    let id = u32::try_from(id).map_err(|_| GridError::Syntax {
        line: no,
        message: format!("negative bus number {id}"),
    })?;
    let kind_code = integer(line, no, 25, 26, "bus type")?;
    let kind = match kind_code {
        0 | 1 => BusKind::PQ,
        2 => BusKind::PV,
        3 => BusKind::Slack,
        other => {
            return Err(GridError::Syntax {
                line: no,
                message: format!("unknown bus type {other}"),
            })
        }
    };
    let v_mag = number(line, no, 28, 33, "voltage")?;
    let v_ang = number(line, no, 34, 40, "angle")?.to_radians();
    let p_load = number(line, no, 41, 49, "load MW")? / base;
    let q_load = number(line, no, 50, 58, "load MVAR")? / base;
    let p_gen = number(line, no, 59, 67, "generation MW")? / base;
    let q_gen = number(line, no, 68, 75, "generation MVAR")? / base;
    let base_kv = number(line, no, 77, 83, "base kV")?;
    let desired = number(line, no, 85, 90, "desired volts")?;
    let upper = number(line, no, 91, 98, "max MVAR/V")?;
    let lower = number(line, no, 99, 106, "min MVAR/V")?;
    let g_shunt = number(line, no, 107, 114, "shunt G")?;
    let b_shunt = number(line, no, 115, 122, "shunt B")?;

    let (v_min, v_max) = if kind_code == 1 && lower > 0.0 && upper > lower {
        (lower, upper)
    } else {
        (DEFAULT_V_MIN, DEFAULT_V_MAX)
    };
    let bus = Bus {
        id,
        kind,
        p_load,
        q_load,
        g_shunt,
        b_shunt,
        v_mag: if v_mag > 0.0 { v_mag } else { 1.0 },
        v_ang,
        base_kv: if base_kv > 0.0 { base_kv } else { PLACEHOLDER_BASE_KV },
        v_min,
        v_max,
        q_comp: 0.0,
    };
    let gen = matches!(kind, BusKind::PV | BusKind::Slack).then(|| {
        let (q_min, q_max) = if upper >= lower {
            (lower / base, upper / base)
        } else {
            (upper / base, lower / base)
        };
        Generator {
            bus: id,
            p_gen,
            q_gen,
            q_min,
            q_max,
            v_set: if desired > 0.0 { desired } else { bus.v_mag },
            in_service: true,
        }
    });
    Ok((bus, gen))
}

fn branch_card(line: &str, no: usize, base: f64) -> Result<Branch, GridError> {
    let endpoint = |first, last, what| -> Result<u32, GridError> {
        let v = integer(line, no, first, last, what)?;
        u32::try_from(v).map_err(|_| GridError::Syntax {
            line: no,
            message: format!("negative {what} {v}"),
        })
    };
    let from_bus = endpoint(1, 4, "tap bus")?;
    let to_bus = endpoint(6, 9, "Z bus")?;
    let r = number(line, no, 20, 29, "R")?;
    let x = number(line, no, 30, 40, "X")?;
    let b_charging = number(line, no, 41, 50, "B")?;
    let rating = number(line, no, 51, 55, "rating")?;
    let ratio = number(line, no, 77, 82, "turns ratio")?;
    let shift = number(line, no, 84, 90, "phase shift")?;
    Ok(Branch {
        from_bus,
        to_bus,
        r,
        x,
        b_charging,
        tap: if ratio > 0.0 { ratio } else { 1.0 },
        shift: shift.to_radians(),
        in_service: true,
        mva_rating: rating / base,
    })
}
