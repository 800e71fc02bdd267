//! Deterministic synthetic multi-machine benchmarks.
//!
//! Each benchmark ships a nominal parameter vector `K*` that is stable; the
//! variants `scale * K*` used for stabilization runs are unstable.

use nalgebra::DVector;

use super::file::{
    BusData, Channel, ControllerData, DisturbanceData, DynamicProsumerData, GridModel, LineData,
    MachineData, MachineModel, ModelFile, Param, SlackData, StaticProsumerData, FORMAT_VERSION,
};
use super::GridError;

pub const BENCHMARK_NAMES: [&str; 2] = ["two-area-4", "ring-10"];

/// A validated benchmark model with its nominal parameters.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub name: &'static str,
    pub model: GridModel,
    pub k_nominal: DVector<f64>,
    /// Scales at which the benchmark is known to be unstable.
    pub unstable_scales: &'static [f64],
}

impl Benchmark {
    /// `scale * K*`, clamped into the parameter box.
    pub fn k_scaled(&self, scale: f64) -> DVector<f64> {
        let p = &self.model.params;
        DVector::from_fn(self.k_nominal.len(), |i, _| {
            (scale * self.k_nominal[i]).clamp(p.lower[i], p.upper[i])
        })
    }
}

pub fn build_benchmark(name: &str) -> Result<Benchmark, GridError> {
    let (file, unstable_scales): (ModelFile, &'static [f64]) = match name {
        "two-area-4" => (two_area_4(), &[1.25, 1.5, 2.0]),
        "ring-10" => (ring_10(), &[1.5, 2.0]),
        other => return Err(GridError::UnknownBenchmark(other.to_string())),
    };
    let model = file.validate()?;
    let k_nominal = model.params.initial.clone();
    let name = BENCHMARK_NAMES.iter().find(|n| **n == name).expect("listed");
    Ok(Benchmark {
        name,
        model,
        k_nominal,
        unstable_scales,
    })
}

const NOMINAL_SCALE_TWO_AREA: f64 = 2.1;
const NOMINAL_SCALE_RING: f64 = 1.4;
const OMEGA0: f64 = 2.0 * std::f64::consts::PI * 60.0;

struct PlantSpec {
    h: f64,
    d: f64,
    ka: f64,
    ta: f64,
    ks: Option<f64>,
    t_lead: f64,
    r: f64,
    tg: f64,
}

fn slot(name: String, value: f64, lo_factor: f64, hi_factor: f64) -> Param {
    Param::slot(&name, value, value * lo_factor, value * hi_factor)
}

fn plant(name: &str, bus: usize, p_set: f64, v_set: f64, s: &PlantSpec) -> DynamicProsumerData {
    let mut controllers = vec![
        ControllerData::Avr {
            ka: slot(format!("{name}.ka"), s.ka, 0.05, 3.0),
            ta: Param::Fixed(s.ta),
        },
        ControllerData::Governor {
            r: Param::Fixed(s.r),
            tg: Param::Fixed(s.tg),
        },
    ];
    if let Some(ks) = s.ks {
        controllers.push(ControllerData::Pss {
            ks: slot(format!("{name}.ks"), ks, 0.0, 3.0),
            tw: Param::Fixed(10.0),
            t1: slot(format!("{name}.t1"), s.t_lead, 0.2, 3.0),
            t2: Param::Fixed(0.05),
            t3: slot(format!("{name}.t3"), s.t_lead, 0.2, 3.0),
            t4: Param::Fixed(0.05),
        });
    }
    DynamicProsumerData {
        name: name.to_string(),
        bus,
        p_set,
        v_set,
        machine: MachineData {
            model: MachineModel::FluxDecay,
            h: s.h,
            d: s.d,
            xd_prime: 0.3,
            xd: Some(1.8),
            td0_prime: Some(8.0),
            omega0: OMEGA0,
        },
        controllers,
    }
}

fn line(from: usize, to: usize, x: f64) -> LineData {
    LineData {
        from,
        to,
        r: x / 10.0,
        x,
        b: 0.0,
    }
}

fn load(name: &str, bus: usize, p: f64, q: f64) -> StaticProsumerData {
    StaticProsumerData {
        name: name.to_string(),
        bus,
        p: -p,
        q: -q,
    }
}

/// Two areas with two plants each, joined by a weak tie; bus 0 is an infinite bus.
fn two_area_4() -> ModelFile {
    let m = NOMINAL_SCALE_TWO_AREA;
    let spec = |h, ks: Option<f64>| PlantSpec {
        h,
        d: 0.0,
        ka: 100.0 * m,
        ta: 0.05,
        ks: ks.map(|k| k * m),
        t_lead: 0.15 * m,
        r: 0.05,
        tg: 0.5,
    };
    let buses = (0..7)
        .map(|i| BusData {
            name: format!("b{i}"),
            ..BusData::default()
        })
        .collect();
    ModelFile {
        format: FORMAT_VERSION,
        name: "two-area-4".into(),
        slack: SlackData { bus: 0, voltage: 1.0 },
        buses,
        lines: vec![
            line(1, 5, 0.15),
            line(2, 5, 0.15),
            line(3, 6, 0.15),
            line(4, 6, 0.15),
            line(5, 6, 0.6),
            line(6, 0, 0.3),
        ],
        admittance: None,
        static_prosumers: vec![load("L5", 5, 2.0, 0.3), load("L6", 6, 2.5, 0.3)],
        dynamic_prosumers: vec![
            plant("G1", 1, 1.0, 1.03, &spec(6.5, Some(10.0))),
            plant("G2", 2, 1.0, 1.01, &spec(6.5, None)),
            plant("G3", 3, 1.0, 1.03, &spec(6.2, Some(10.0))),
            plant("G4", 4, 1.0, 1.01, &spec(6.2, None)),
        ],
        outputs: Vec::new(),
        disturbances: vec![
            DisturbanceData {
                prosumer: "L5".into(),
                channel: Channel::P,
            },
            DisturbanceData {
                prosumer: "L6".into(),
                channel: Channel::P,
            },
        ],
    }
}

/// Ten plants on a ring with local loads; bus 0 is an infinite bus tied to bus 1.
fn ring_10() -> ModelFile {
    let n = 10;
    let mut buses = vec![BusData {
        name: "inf".into(),
        ..BusData::default()
    }];
    let mut lines = vec![line(0, 1, 0.3)];
    let mut statics = Vec::new();
    let mut plants = Vec::new();
    let mut disturbances = Vec::new();
    for i in 0..n {
        let bus = 2 * i + 1;
        let gen_bus = bus + 1;
        buses.push(BusData {
            name: format!("r{i}"),
            ..BusData::default()
        });
        buses.push(BusData {
            name: format!("g{i}"),
            ..BusData::default()
        });
        lines.push(line(gen_bus, bus, 0.15));
        let next = 2 * ((i + 1) % n) + 1;
        lines.push(line(bus, next, 0.2 + 0.02 * i as f64));
        let name = format!("L{i}");
        statics.push(load(&name, bus, 0.9, 0.1));
        if i % 3 == 0 {
            disturbances.push(DisturbanceData {
                prosumer: name,
                channel: Channel::P,
            });
        }
        let spec = PlantSpec {
            h: 4.0 + 0.3 * i as f64,
            d: 0.0,
            ka: 100.0 * NOMINAL_SCALE_RING,
            ta: 0.05,
            ks: (i % 2 == 0).then_some(10.0 * NOMINAL_SCALE_RING),
            t_lead: 0.15 * NOMINAL_SCALE_RING,
            r: 0.05,
            tg: 0.5,
        };
        plants.push(plant(&format!("G{i}"), gen_bus, 0.8, 1.02, &spec));
    }
    ModelFile {
        format: FORMAT_VERSION,
        name: "ring-10".into(),
        slack: SlackData { bus: 0, voltage: 1.0 },
        buses,
        lines,
        admittance: None,
        static_prosumers: statics,
        dynamic_prosumers: plants,
        outputs: Vec::new(),
        disturbances,
    }
}
