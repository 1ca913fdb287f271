//! Portable text format for value tables and grid policies.
//!
//! ```text
//! mg-table 1
//! kind stationary-policy
//! n_states 6
//! ...
//! data
//! <stage> <id> <k_1> … <k_n> | <values>
//! end
//! ```
//!
//! Header lines are `key value`. Each record carries the lattice numerators
//! of its point so a reader can check it against its own grid. Stage is 0
//! for stationary objects. Floats use shortest round-trip formatting.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::belief::{ActionRule, BeliefGrid};
use crate::error::{Error, Result};
use crate::model::SystemConfig;
use crate::solver_finite::FiniteHorizonSolution;
use crate::solver_infinite::{StationaryPolicy, ValueTable};

pub const FORMAT_VERSION: u32 = 1;

const KIND_VALUES: &str = "value-table";
const KIND_POLICY: &str = "stationary-policy";
const KIND_FINITE: &str = "finite-solution";

fn header<W: Write>(out: &mut W, kind: &str, grid: &BeliefGrid, extra: &[(&str, String)]) -> std::io::Result<()> {
    writeln!(out, "mg-table {FORMAT_VERSION}")?;
    writeln!(out, "kind {kind}")?;
    writeln!(out, "n_states {}", grid.dim())?;
    writeln!(out, "denominator {}", grid.denominator())?;
    writeln!(out, "points {}", grid.len())?;
    for (k, v) in extra {
        writeln!(out, "{k} {v}")?;
    }
    writeln!(out, "data")
}

fn record<W: Write>(out: &mut W, stage: usize, id: usize, grid: &BeliefGrid, values: &[f64]) -> std::io::Result<()> {
    write!(out, "{stage} {id}")?;
    for k in grid.lattice(id) {
        write!(out, " {k}")?;
    }
    write!(out, " |")?;
    for v in values {
        write!(out, " {v:?}")?;
    }
    writeln!(out)
}

pub fn write_value_table<W: Write>(mut out: W, table: &ValueTable, grid: &BeliefGrid) -> Result<()> {
    header(&mut out, KIND_VALUES, grid, &[("lambda", format!("{:?}", table.lambda)), ("reference", table.reference.to_string())])?;
    for (id, v) in table.values.iter().enumerate() {
        record(&mut out, 0, id, grid, &[*v])?;
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn write_policy<W: Write>(mut out: W, policy: &StationaryPolicy, grid: &BeliefGrid, cfg: &SystemConfig) -> Result<()> {
    header(&mut out, KIND_POLICY, grid, &[("n_purchases", cfg.n_purchases().to_string())])?;
    for (id, rule) in policy.rules.iter().enumerate() {
        record(&mut out, 0, id, grid, rule.raw())?;
    }
    writeln!(out, "end")?;
    Ok(())
}

pub fn write_finite<W: Write>(mut out: W, sol: &FiniteHorizonSolution, cfg: &SystemConfig) -> Result<()> {
    let grid = &sol.grid;
    header(
        &mut out,
        KIND_FINITE,
        grid,
        &[
            ("n_purchases", cfg.n_purchases().to_string()),
            ("horizon", sol.horizon.to_string()),
            ("objective", format!("{:?}", sol.objective)),
        ],
    )?;
    for (t, rules) in sol.stage_rules.iter().enumerate() {
        for (id, rule) in rules.iter().enumerate() {
            record(&mut out, t + 1, id, grid, rule.raw())?;
        }
    }
    writeln!(out, "end")?;
    Ok(())
}

struct Parsed {
    header: BTreeMap<String, String>,
    records: Vec<(usize, usize, Vec<f64>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn parse<R: BufRead>(input: R, kind: &str, grid: &BeliefGrid) -> Result<Parsed> {
    let mut lines = input.lines().enumerate();
    let mut next = || -> Result<Option<(usize, String)>> {
        match lines.next() {
            None => Ok(None),
            Some((i, l)) => Ok(Some((i + 1, l?))),
        }
    };
    match next()? {
        Some((_, l)) if l.trim() == format!("mg-table {FORMAT_VERSION}") => {}
        Some((_, l)) => return Err(bad(format!("unsupported header {l:?}"))),
        None => return Err(bad("empty input")),
    }
    let mut header = BTreeMap::new();
    loop {
        let (n, line) = next()?.ok_or_else(|| bad("missing data section"))?;
        let line = line.trim().to_string();
        if line == "data" {
            break;
        }
        let (k, v) = line.split_once(' ').ok_or_else(|| bad(format!("line {n}: expected `key value`")))?;
        header.insert(k.to_string(), v.trim().to_string());
    }
    let expect = |key: &str, want: String| -> Result<()> {
        match header.get(key) {
            Some(v) if *v == want => Ok(()),
            Some(v) => Err(bad(format!("{key} is {v}, expected {want}"))),
            None => Err(bad(format!("missing header key {key}"))),
        }
    };
    expect("kind", kind.to_string())?;
    expect("n_states", grid.dim().to_string())?;
    expect("denominator", grid.denominator().to_string())?;
    expect("points", grid.len().to_string())?;
    let mut records = Vec::new();
    let mut ended = false;
    while let Some((n, line)) = next()? {
        let line = line.trim();
        if line == "end" {
            ended = true;
            break;
        }
        let (left, right) = line.split_once('|').ok_or_else(|| bad(format!("line {n}: missing '|'")))?;
        let ints: Vec<u32> = left
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("line {n}: bad integer {t:?}"))))
            .collect::<Result<_>>()?;
        if ints.len() != grid.dim() + 2 {
            return Err(bad(format!("line {n}: expected stage, id and {} numerators", grid.dim())));
        }
        let (stage, id) = (ints[0] as usize, ints[1] as usize);
        if grid.index_of(&ints[2..]) != Some(id) {
            return Err(bad(format!("line {n}: lattice point does not match id {id}")));
        }
        let vals: Vec<f64> = right
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad(format!("line {n}: bad number {t:?}"))))
            .collect::<Result<_>>()?;
        records.push((stage, id, vals));
    }
    if !ended {
        return Err(bad("missing end marker"));
    }
    Ok(Parsed { header, records })
}

fn header_num<T: std::str::FromStr>(p: &Parsed, key: &str) -> Result<T> {
    p.header
        .get(key)
        .ok_or_else(|| bad(format!("missing header key {key}")))?
        .parse()
        .map_err(|_| bad(format!("bad value for {key}")))
}

pub fn read_value_table<R: BufRead>(input: R, grid: &BeliefGrid) -> Result<ValueTable> {
    let p = parse(input, KIND_VALUES, grid)?;
    let mut values = vec![f64::NAN; grid.len()];
    for (stage, id, v) in &p.records {
        if *stage != 0 || v.len() != 1 {
            return Err(bad(format!("value record {id} malformed")));
        }
        values[*id] = v[0];
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(bad("value table incomplete or non-finite"));
    }
    Ok(ValueTable { values, lambda: header_num(&p, "lambda")?, reference: header_num(&p, "reference")? })
}

fn rules_from(records: &[(usize, usize, Vec<f64>)], stage: usize, grid: &BeliefGrid, cfg: &SystemConfig) -> Result<Vec<ActionRule>> {
    let mut rules: Vec<Option<ActionRule>> = vec![None; grid.len()];
    for (st, id, v) in records {
        if *st != stage {
            continue;
        }
        if v.len() != cfg.n_states() * 2 * cfg.n_purchases() {
            return Err(bad(format!("rule record {id} has {} entries", v.len())));
        }
        let rule = ActionRule::from_raw(cfg.n_states(), cfg.n_purchases(), v.clone());
        rule.validate(cfg).map_err(|e| bad(format!("rule record {id}: {e}")))?;
        rules[*id] = Some(rule);
    }
    rules.into_iter().enumerate().map(|(id, r)| r.ok_or_else(|| bad(format!("no rule for point {id}")))).collect()
}

pub fn read_policy<R: BufRead>(input: R, grid: &BeliefGrid, cfg: &SystemConfig) -> Result<StationaryPolicy> {
    let p = parse(input, KIND_POLICY, grid)?;
    Ok(StationaryPolicy { rules: rules_from(&p.records, 0, grid, cfg)? })
}

pub fn read_finite<R: BufRead>(input: R, grid: Arc<BeliefGrid>, cfg: &SystemConfig) -> Result<FiniteHorizonSolution> {
    let p = parse(input, KIND_FINITE, &grid)?;
    let horizon: usize = header_num(&p, "horizon")?;
    let stage_rules = (1..=horizon).map(|t| rules_from(&p.records, t, &grid, cfg).map(Arc::new)).collect::<Result<_>>()?;
    Ok(FiniteHorizonSolution { horizon, stage_rules, objective: header_num(&p, "objective")?, grid })
}
