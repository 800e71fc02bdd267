//! JSON model file: serde types, loading and validation.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use super::network::{BusKind, GridNetwork};
use super::GridError;

pub const FORMAT_VERSION: u32 = 1;

/// A controller or machine constant: either fixed or a tunable slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Fixed(f64),
    Slot(ParamSlot),
}

/// Tunable parameter. Missing or `null` bounds are infinite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSlot {
    pub name: String,
    pub initial: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

impl Param {
    pub fn slot(name: &str, initial: f64, lower: f64, upper: f64) -> Self {
        let finite = |x: f64| x.is_finite().then_some(x);
        Param::Slot(ParamSlot {
            name: name.to_string(),
            initial,
            lower: finite(lower),
            upper: finite(upper),
        })
    }

    pub fn initial(&self) -> f64 {
        match self {
            Param::Fixed(v) => *v,
            Param::Slot(s) => s.initial,
        }
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            Param::Fixed(v) => (*v, *v),
            Param::Slot(s) => (
                s.lower.unwrap_or(f64::NEG_INFINITY),
                s.upper.unwrap_or(f64::INFINITY),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format: u32,
    #[serde(default)]
    pub name: String,
    pub slack: SlackData,
    pub buses: Vec<BusData>,
    #[serde(default)]
    pub lines: Vec<LineData>,
    /// Explicit admittance matrix; replaces the one assembled from `lines`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admittance: Option<AdmittanceData>,
    #[serde(default)]
    pub static_prosumers: Vec<StaticProsumerData>,
    pub dynamic_prosumers: Vec<DynamicProsumerData>,
    /// Dynamic prosumer names whose frequency is an output. Empty means all.
    #[serde(default)]
    pub outputs: Vec<String>,
    pub disturbances: Vec<DisturbanceData>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlackData {
    pub bus: usize,
    pub voltage: f64,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusData {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

/// Pi-model line: series `r + jx`, total charging susceptance `b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineData {
    pub from: usize,
    pub to: usize,
    #[serde(default)]
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmittanceData {
    pub g: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticProsumerData {
    pub name: String,
    pub bus: usize,
    pub p: f64,
    pub q: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineModel {
    /// Swing equation with constant internal voltage.
    Classical,
    /// Swing equation plus transient field dynamics, `x_q = x'_d`.
    FluxDecay,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineData {
    pub model: MachineModel,
    /// Inertia constant in seconds.
    pub h: f64,
    pub d: f64,
    pub xd_prime: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xd: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub td0_prime: Option<f64>,
    /// Base angular frequency in rad/s.
    pub omega0: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerData {
    /// First-order exciter `ka / (1 + s ta)` acting on the voltage error.
    Avr { ka: Param, ta: Param },
    /// Droop governor `1 / (r (1 + s tg))` acting on the negative speed deviation.
    Governor { r: Param, tg: Param },
    /// Washout followed by two lead-lag stages, acting on the speed deviation.
    Pss {
        ks: Param,
        tw: Param,
        t1: Param,
        t2: Param,
        t3: Param,
        t4: Param,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicProsumerData {
    pub name: String,
    pub bus: usize,
    pub p_set: f64,
    pub v_set: f64,
    pub machine: MachineData,
    #[serde(default)]
    pub controllers: Vec<ControllerData>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    P,
    Q,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceData {
    pub prosumer: String,
    pub channel: Channel,
}

/// Global tunable-parameter table built from the slots of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterTable {
    pub names: Vec<String>,
    pub initial: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ParameterTable {
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// A model file that passed validation.
#[derive(Clone, Debug, PartialEq)]
pub struct GridModel {
    pub file: ModelFile,
    pub network: GridNetwork,
    pub params: ParameterTable,
}

impl ModelFile {
    /// Parses a JSON document. The format version is checked before the schema.
    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        match value.get("format").and_then(serde_json::Value::as_u64) {
            Some(v) if v == FORMAT_VERSION as u64 => {}
            Some(v) => return Err(GridError::Version { found: v }),
            None => {
                return Err(GridError::Parse {
                    line: 1,
                    column: 1,
                    message: "missing integer field `format`".into(),
                })
            }
        }
        serde_json::from_str(text).map_err(|e| GridError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn bus_label(&self, i: usize) -> String {
        match self.buses.get(i).map(|b| b.name.as_str()) {
            Some(name) if !name.is_empty() => format!("bus {i} ({name})"),
            _ => format!("bus {i}"),
        }
    }

    fn assemble_network(&self) -> Result<GridNetwork, GridError> {
        let n = self.buses.len();
        // declared shunt per bus: bus shunt plus half the charging of incident lines
        let mut shunt = vec![Complex::new(0.0, 0.0); n];
        for (i, bus) in self.buses.iter().enumerate() {
            shunt[i] = Complex::new(bus.shunt_g, bus.shunt_b);
        }
        let mut y = DMatrix::from_element(n, n, Complex::new(0.0, 0.0));
        for (l, line) in self.lines.iter().enumerate() {
            if line.from >= n || line.to >= n || line.from == line.to {
                return Err(GridError::Validation(format!(
                    "line {l} connects invalid buses {} and {}",
                    line.from, line.to
                )));
            }
            let z = Complex::new(line.r, line.x);
            if z.norm() == 0.0 || !z.norm().is_finite() {
                return Err(GridError::Validation(format!("line {l} has zero or non-finite impedance")));
            }
            let ys = z.inv();
            let half = Complex::new(0.0, line.b / 2.0);
            shunt[line.from] += half;
            shunt[line.to] += half;
            y[(line.from, line.from)] += ys;
            y[(line.to, line.to)] += ys;
            y[(line.from, line.to)] -= ys;
            y[(line.to, line.from)] -= ys;
        }
        for i in 0..n {
            y[(i, i)] += shunt[i];
        }
        if let Some(adm) = &self.admittance {
            if adm.g.len() != n || adm.b.len() != n || adm.g.iter().chain(&adm.b).any(|r| r.len() != n) {
                return Err(GridError::Shape(format!("admittance must be {n}x{n}")));
            }
            y = DMatrix::from_fn(n, n, |i, j| Complex::new(adm.g[i][j], adm.b[i][j]));
            for i in 0..n {
                let row: Complex<f64> = (0..n).map(|j| y[(i, j)]).sum();
                let tol = 1e-9 * (1.0 + (0..n).map(|j| y[(i, j)].norm()).fold(0.0, f64::max));
                if (row - shunt[i]).norm() > tol {
                    return Err(GridError::Validation(format!(
                        "admittance row of {} sums to {} but declared shunts give {}",
                        self.bus_label(i),
                        row,
                        shunt[i]
                    )));
                }
            }
        }
        let mut kinds = vec![BusKind::Passive; n];
        for s in &self.static_prosumers {
            if s.bus < n {
                kinds[s.bus] = BusKind::Static;
            }
        }
        for d in &self.dynamic_prosumers {
            if d.bus < n {
                kinds[d.bus] = BusKind::Dynamic;
            }
        }
        GridNetwork::new(y.map(|z| z.re), y.map(|z| z.im), kinds)
    }

    /// Checks every invariant of the format and collects the parameter slots.
    pub fn validate(self) -> Result<GridModel, GridError> {
        if self.format != FORMAT_VERSION {
            return Err(GridError::Version { found: self.format as u64 });
        }
        let n = self.buses.len();
        if n == 0 {
            return Err(GridError::Validation("model has no buses".into()));
        }
        if self.slack.bus >= n {
            return Err(GridError::Validation(format!("slack bus {} does not exist", self.slack.bus)));
        }
        if !(self.slack.voltage > 0.0) {
            return Err(GridError::Validation("slack voltage must be positive".into()));
        }
        let mut names = BTreeSet::new();
        for s in &self.static_prosumers {
            if s.bus >= n {
                return Err(GridError::Validation(format!("static prosumer {} at missing bus {}", s.name, s.bus)));
            }
            if !names.insert(s.name.clone()) {
                return Err(GridError::Validation(format!("duplicate prosumer name {}", s.name)));
            }
        }
        let mut dyn_buses = BTreeSet::new();
        for d in &self.dynamic_prosumers {
            if d.bus >= n {
                return Err(GridError::Validation(format!("dynamic prosumer {} at missing bus {}", d.name, d.bus)));
            }
            if d.bus == self.slack.bus {
                return Err(GridError::Validation(format!(
                    "dynamic prosumer {} sits on the slack bus, which is modeled as an infinite bus",
                    d.name
                )));
            }
            if !dyn_buses.insert(d.bus) {
                return Err(GridError::Validation(format!(
                    "{} hosts more than one dynamic prosumer",
                    self.bus_label(d.bus)
                )));
            }
            if !names.insert(d.name.clone()) {
                return Err(GridError::Validation(format!("duplicate prosumer name {}", d.name)));
            }
            validate_machine(d)?;
        }
        if self.dynamic_prosumers.is_empty() {
            return Err(GridError::Validation("model has no dynamic prosumer".into()));
        }
        for o in &self.outputs {
            if !self.dynamic_prosumers.iter().any(|d| &d.name == o) {
                return Err(GridError::Validation(format!("output {o} is not a dynamic prosumer")));
            }
        }
        if self.disturbances.is_empty() {
            return Err(GridError::Validation("at least one disturbance input is required".into()));
        }
        let mut seen = BTreeSet::new();
        for dist in &self.disturbances {
            let sp = self
                .static_prosumers
                .iter()
                .find(|s| s.name == dist.prosumer)
                .ok_or_else(|| GridError::Validation(format!("disturbance {} is not a static prosumer", dist.prosumer)))?;
            if sp.bus == self.slack.bus {
                return Err(GridError::Validation(format!(
                    "disturbance {} sits on the slack bus and has no effect",
                    dist.prosumer
                )));
            }
            if !seen.insert((dist.prosumer.clone(), dist.channel as u8)) {
                return Err(GridError::Validation(format!("duplicate disturbance {}", dist.prosumer)));
            }
        }
        let network = self.assemble_network()?;
        if !network.is_connected() {
            return Err(GridError::Validation("network is not connected".into()));
        }
        let params = collect_parameters(&self)?;
        Ok(GridModel {
            file: self,
            network,
            params,
        })
    }
}

fn validate_machine(d: &DynamicProsumerData) -> Result<(), GridError> {
    let m = &d.machine;
    let bad = |what: &str| Err(GridError::Validation(format!("dynamic prosumer {}: {what}", d.name)));
    if !(m.h > 0.0) {
        return bad("inertia H must be positive");
    }
    if !(m.xd_prime > 0.0) || !(m.omega0 > 0.0) || !m.d.is_finite() {
        return bad("x'd and omega0 must be positive, D finite");
    }
    if !(d.v_set > 0.0) {
        return bad("v_set must be positive");
    }
    let has = |tag: &str| {
        d.controllers
            .iter()
            .filter(|c| {
                matches!(
                    (tag, c),
                    ("avr", ControllerData::Avr { .. })
                        | ("governor", ControllerData::Governor { .. })
                        | ("pss", ControllerData::Pss { .. })
                )
            })
            .count()
    };
    for tag in ["avr", "governor", "pss"] {
        if has(tag) > 1 {
            return bad(&format!("more than one {tag}"));
        }
    }
    match m.model {
        MachineModel::Classical => {
            if has("avr") > 0 {
                return bad("a classical machine has no field winding for an AVR");
            }
        }
        MachineModel::FluxDecay => match (m.xd, m.td0_prime) {
            (Some(xd), Some(t)) if xd >= m.xd_prime && t > 0.0 => {}
            _ => return bad("flux-decay model needs xd >= x'd and td0_prime > 0"),
        },
    }
    if has("pss") > 0 && has("avr") == 0 {
        return bad("a PSS needs an AVR to act on");
    }
    for c in &d.controllers {
        let positive: Vec<(&str, &Param)> = match c {
            ControllerData::Avr { ta, .. } => vec![("ta", ta)],
            ControllerData::Governor { r, tg } => vec![("r", r), ("tg", tg)],
            ControllerData::Pss { tw, t1, t2, t3, t4, .. } => {
                vec![("tw", tw), ("t1", t1), ("t2", t2), ("t3", t3), ("t4", t4)]
            }
        };
        for (what, p) in positive {
            let (lo, _) = p.bounds();
            if !(lo > 0.0) || !(p.initial() > 0.0) {
                return bad(&format!("{what} must stay positive (lower bound {lo})"));
            }
        }
    }
    Ok(())
}

fn controller_params(c: &ControllerData) -> Vec<&Param> {
    match c {
        ControllerData::Avr { ka, ta } => vec![ka, ta],
        ControllerData::Governor { r, tg } => vec![r, tg],
        ControllerData::Pss { ks, tw, t1, t2, t3, t4 } => vec![ks, tw, t1, t2, t3, t4],
    }
}

fn collect_parameters(file: &ModelFile) -> Result<ParameterTable, GridError> {
    let mut seen: BTreeMap<String, ()> = BTreeMap::new();
    let (mut names, mut init, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for d in &file.dynamic_prosumers {
        for c in &d.controllers {
            for p in controller_params(c) {
                match p {
                    Param::Fixed(v) if !v.is_finite() => {
                        return Err(GridError::Validation(format!("non-finite constant in {}", d.name)))
                    }
                    Param::Fixed(_) => {}
                    Param::Slot(s) => {
                        if seen.insert(s.name.clone(), ()).is_some() {
                            return Err(GridError::Validation(format!("duplicate parameter slot {}", s.name)));
                        }
                        let (l, u) = p.bounds();
                        if !(l <= s.initial && s.initial <= u) || !s.initial.is_finite() {
                            return Err(GridError::Validation(format!(
                                "parameter {} = {} outside [{l}, {u}]",
                                s.name, s.initial
                            )));
                        }
                        names.push(s.name.clone());
                        init.push(s.initial);
                        lo.push(l);
                        hi.push(u);
                    }
                }
            }
        }
    }
    Ok(ParameterTable {
        names,
        initial: DVector::from_vec(init),
        lower: DVector::from_vec(lo),
        upper: DVector::from_vec(hi),
    })
}

/// Looks up the global index of a slot parameter.
pub(crate) fn param_index(table: &ParameterTable, p: &Param) -> Option<usize> {
    match p {
        Param::Fixed(_) => None,
        Param::Slot(s) => table.index_of(&s.name),
    }
}
