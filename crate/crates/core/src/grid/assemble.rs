//! Steady state, DAE linearization and elimination of the algebraic variables.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use super::blocks::{wire_chain, LinearBlock};
use super::file::{param_index, Channel, ControllerData, GridModel, MachineModel, Param};
use super::powerflow::{solve_power_flow, BusSpec, PowerFlowOptions};
use super::GridError;
use crate::expr::{Expr, ExprMatrix, LinearForm};
use crate::model::{ParameterMap, ParametricStateSpace};

/// Operating point of one machine.
#[derive(Clone, Debug, PartialEq)]
pub struct MachineEquilibrium {
    pub delta: f64,
    pub e_prime: f64,
    pub efd: f64,
    pub pm: f64,
    pub p: f64,
    pub q: f64,
}

/// Solved steady state. Controller states are deviations and sit at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct SteadyState {
    pub v: DVector<f64>,
    pub theta: DVector<f64>,
    pub machines: Vec<MachineEquilibrium>,
    pub iterations: usize,
    pub residual: f64,
}

/// `ẋ = Fx x + Fz z + Fw w`, `0 = Hx x + Hz z + Hw w`, `y = C x`.
#[derive(Clone, Debug)]
pub struct LinearizedDae {
    pub state_names: Vec<String>,
    pub algebraic_names: Vec<String>,
    pub input_names: Vec<String>,
    pub fx: ExprMatrix,
    pub fz: ExprMatrix,
    pub fw: ExprMatrix,
    pub hx: DMatrix<f64>,
    pub hz: DMatrix<f64>,
    pub hw: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// State index of each machine's speed deviation.
    pub omega_states: Vec<usize>,
}

/// Everything produced from a model file.
#[derive(Clone, Debug)]
pub struct GridSystem {
    pub system: ParametricStateSpace,
    pub dae: Arc<LinearizedDae>,
    pub steady: SteadyState,
    pub k0: DVector<f64>,
}

impl GridModel {
    fn bus_specs(&self) -> Vec<BusSpec> {
        let f = &self.file;
        let n = f.buses.len();
        let mut p = vec![0.0; n];
        let mut q = vec![0.0; n];
        for s in &f.static_prosumers {
            p[s.bus] += s.p;
            q[s.bus] += s.q;
        }
        let mut spec: Vec<BusSpec> = (0..n).map(|i| BusSpec::Pq { p: p[i], q: q[i] }).collect();
        for d in &f.dynamic_prosumers {
            spec[d.bus] = BusSpec::Pv {
                p: p[d.bus] + d.p_set,
                v: d.v_set,
            };
        }
        spec[f.slack.bus] = BusSpec::Slack { v: f.slack.voltage };
        spec
    }

    pub fn steady_state(&self) -> Result<SteadyState, GridError> {
        let pf = solve_power_flow(&self.network, &self.bus_specs(), PowerFlowOptions::default())?;
        let f = &self.file;
        let mut machines = Vec::with_capacity(f.dynamic_prosumers.len());
        for d in &f.dynamic_prosumers {
            let i = d.bus;
            let static_p: f64 = f.static_prosumers.iter().filter(|s| s.bus == i).map(|s| s.p).sum();
            let static_q: f64 = f.static_prosumers.iter().filter(|s| s.bus == i).map(|s| s.q).sum();
            let (p, q) = (pf.p[i] - static_p, pf.q[i] - static_q);
            let vb = Complex::from_polar(pf.v[i], pf.theta[i]);
            let current = (Complex::new(p, q) / vb).conj();
            let e = vb + Complex::new(0.0, d.machine.xd_prime) * current;
            let (e_prime, delta) = e.to_polar();
            let efd = match (d.machine.model, d.machine.xd) {
                (MachineModel::FluxDecay, Some(xd)) => {
                    let xp = d.machine.xd_prime;
                    e_prime + (xd - xp) * (e_prime - pf.v[i] * (delta - pf.theta[i]).cos()) / xp
                }
                _ => e_prime,
            };
            machines.push(MachineEquilibrium {
                delta,
                e_prime,
                efd,
                pm: p,
                p,
                q,
            });
        }
        Ok(SteadyState {
            v: pf.v,
            theta: pf.theta,
            machines,
            iterations: pf.iterations,
            residual: pf.residual,
        })
    }

    fn param_expr(&self, p: &Param) -> Expr {
        match param_index(&self.params, p) {
            Some(i) => Expr::param(i),
            None => Expr::constant(p.initial()),
        }
    }

    /// Linearizes the DAE at `steady`. Controller parameters stay symbolic.
    pub fn linearize(&self, steady: &SteadyState) -> Result<LinearizedDae, GridError> {
        let f = &self.file;
        let n_b = f.buses.len();
        let slack = f.slack.bus;

        // state layout
        let mut state_names = Vec::new();
        let mut first_state = Vec::new();
        for d in &f.dynamic_prosumers {
            first_state.push(state_names.len());
            state_names.push(format!("{}.delta", d.name));
            state_names.push(format!("{}.omega", d.name));
            if d.machine.model == MachineModel::FluxDecay {
                state_names.push(format!("{}.e_prime", d.name));
            }
            for c in ordered_controllers(&d.controllers) {
                for blk in self.controller_blocks(c) {
                    state_names.push(format!("{}.{}", d.name, blk.name));
                }
            }
        }
        let n_x = state_names.len();

        // algebraic layout: (theta, V) of every non-slack bus
        let mut zpos = vec![None; n_b];
        let mut algebraic_names = Vec::new();
        for i in 0..n_b {
            if i != slack {
                zpos[i] = Some(algebraic_names.len());
                algebraic_names.push(format!("theta[{}]", f.bus_label(i)));
                algebraic_names.push(format!("V[{}]", f.bus_label(i)));
            }
        }
        let n_z = algebraic_names.len();
        let input_names: Vec<String> = f
            .disturbances
            .iter()
            .map(|d| format!("{}.{}", d.prosumer, if d.channel == Channel::P { "p" } else { "q" }))
            .collect();
        let n_w = input_names.len();
        let zi = |bus: usize| zpos[bus].map(|p| n_x + p);

        let mut rows = vec![LinearForm::new(); n_x];
        let mut h = DMatrix::<f64>::zeros(n_z, n_x + n_z + n_w);
        let mut omega_states = Vec::new();

        for (g, d) in f.dynamic_prosumers.iter().enumerate() {
            let m = &d.machine;
            let eq = &steady.machines[g];
            let bus = d.bus;
            let (v0, th0) = (steady.v[bus], steady.theta[bus]);
            let (sn, cs) = (eq.delta - th0).sin_cos();
            let xp = m.xd_prime;
            let e0 = eq.e_prime;
            let flux = m.model == MachineModel::FluxDecay;
            let i_delta = first_state[g];
            let i_omega = i_delta + 1;
            let i_e = flux.then_some(i_delta + 2);
            omega_states.push(i_omega);
            let (th_var, v_var) = (zi(bus).expect("non-slack"), zi(bus).expect("non-slack") + 1);

            // electrical power partials
            let pe = [
                (i_delta, e0 * v0 * cs / xp),
                (th_var, -e0 * v0 * cs / xp),
                (v_var, e0 * sn / xp),
            ];
            let qg = [
                (i_delta, -e0 * v0 * sn / xp),
                (th_var, e0 * v0 * sn / xp),
                (v_var, (e0 * cs - 2.0 * v0) / xp),
            ];
            let mut pe_form = LinearForm::new();
            for (i, c) in pe {
                pe_form.add_term(i, &Expr::constant(c));
            }
            if let Some(ie) = i_e {
                pe_form.add_term(ie, &Expr::constant(v0 * sn / xp));
            }

            // network rows: subtract the machine injection
            let zr = zpos[bus].expect("non-slack");
            for (i, c) in pe {
                h[(zr, i)] -= c;
            }
            for (i, c) in qg {
                h[(zr + 1, i)] -= c;
            }
            if let Some(ie) = i_e {
                h[(zr, ie)] -= v0 * sn / xp;
                h[(zr + 1, ie)] -= v0 * cs / xp;
            }

            // controllers, states allocated after the machine states
            let mut next = i_delta + if flux { 3 } else { 2 };
            let mut gov_out = LinearForm::new();
            let mut pss_out = LinearForm::new();
            let mut avr_out = LinearForm::new();
            let ordered = ordered_controllers(&d.controllers);
            let mut starts = Vec::new();
            for c in &ordered {
                starts.push(next);
                next += self.controller_blocks(c).len();
            }
            // PSS first so its output can feed the AVR
            for (c, &start) in ordered.iter().zip(&starts).rev() {
                let blocks = self.controller_blocks(c);
                match c {
                    ControllerData::Pss { .. } => {
                        pss_out = wire_chain(&blocks, start, LinearForm::var(i_omega, 1.0), &mut rows);
                    }
                    ControllerData::Governor { .. } => {
                        gov_out = wire_chain(&blocks, start, LinearForm::var(i_omega, -1.0), &mut rows);
                    }
                    ControllerData::Avr { .. } => {
                        let input = LinearForm::var(v_var, -1.0).add(&pss_out);
                        avr_out = wire_chain(&blocks, start, input, &mut rows);
                    }
                }
            }

            rows[i_delta] = LinearForm::var(i_omega, m.omega0);
            let inv_2h = Expr::constant(1.0 / (2.0 * m.h));
            rows[i_omega] = gov_out
                .add(&pe_form.scale(&Expr::constant(-1.0)))
                .add(&LinearForm::var(i_omega, -m.d))
                .scale(&inv_2h);
            if let (Some(ie), Some(xd), Some(td0)) = (i_e, m.xd, m.td0_prime) {
                let k = (xd - xp) / xp;
                let mut field = avr_out;
                field.add_term(ie, &Expr::constant(-xd / xp));
                field.add_term(v_var, &Expr::constant(k * cs));
                field.add_term(i_delta, &Expr::constant(-k * v0 * sn));
                field.add_term(th_var, &Expr::constant(k * v0 * sn));
                rows[ie] = field.scale(&Expr::constant(1.0 / td0));
            }
        }

        // network partials over non-slack buses
        let jac = self.network.injection_jacobian(&steady.v, &steady.theta)?;
        for i in 0..n_b {
            let Some(r) = zpos[i] else { continue };
            for j in 0..n_b {
                let Some(cj) = zpos[j] else { continue };
                h[(r, n_x + cj)] += jac.dp_dtheta[(i, j)];
                h[(r, n_x + cj + 1)] += jac.dp_dv[(i, j)];
                h[(r + 1, n_x + cj)] += jac.dq_dtheta[(i, j)];
                h[(r + 1, n_x + cj + 1)] += jac.dq_dv[(i, j)];
            }
        }
        for (w, dist) in f.disturbances.iter().enumerate() {
            let sp = f
                .static_prosumers
                .iter()
                .find(|s| s.name == dist.prosumer)
                .expect("validated");
            let r = zpos[sp.bus].expect("validated") + if dist.channel == Channel::P { 0 } else { 1 };
            h[(r, n_x + n_z + w)] -= 1.0;
        }

        let mut fx = ExprMatrix::zeros(n_x, n_x);
        let mut fz = ExprMatrix::zeros(n_x, n_z);
        let mut fw = ExprMatrix::zeros(n_x, n_w);
        for (r, row) in rows.iter().enumerate() {
            for (i, e) in row.iter() {
                if i < n_x {
                    fx.add_to(r, i, e);
                } else if i < n_x + n_z {
                    fz.add_to(r, i - n_x, e);
                } else {
                    fw.add_to(r, i - n_x - n_z, e);
                }
            }
        }
        let outputs: Vec<usize> = if f.outputs.is_empty() {
            (0..f.dynamic_prosumers.len()).collect()
        } else {
            f.outputs
                .iter()
                .map(|o| f.dynamic_prosumers.iter().position(|d| &d.name == o).expect("validated"))
                .collect()
        };
        let mut c = DMatrix::zeros(outputs.len(), n_x);
        for (r, &g) in outputs.iter().enumerate() {
            c[(r, omega_states[g])] = 1.0;
        }
        Ok(LinearizedDae {
            state_names,
            algebraic_names,
            input_names,
            fx,
            fz,
            fw,
            hx: h.columns(0, n_x).into_owned(),
            hz: h.columns(n_x, n_z).into_owned(),
            hw: h.columns(n_x + n_z, n_w).into_owned(),
            c,
            omega_states,
        })
    }

    fn controller_blocks(&self, c: &ControllerData) -> Vec<LinearBlock> {
        let e = |p: &Param| self.param_expr(p);
        match c {
            ControllerData::Avr { ka, ta } => vec![LinearBlock::lag("avr", e(ka), e(ta))],
            ControllerData::Governor { r, tg } => {
                let inv_r = e(r).recip().expect("monomial");
                vec![LinearBlock::lag("governor", inv_r, e(tg))]
            }
            ControllerData::Pss { ks, tw, t1, t2, t3, t4 } => vec![
                LinearBlock::washout("pss.washout", e(ks), e(tw)),
                LinearBlock::lead_lag("pss.lead_lag1", e(t1), e(t2)),
                LinearBlock::lead_lag("pss.lead_lag2", e(t3), e(t4)),
            ],
        }
    }

    /// Steady state, linearization and reduction in one call.
    pub fn build(&self) -> Result<GridSystem, GridError> {
        let steady = self.steady_state()?;
        let dae = Arc::new(self.linearize(&steady)?);
        let system = dae.reduce(&self.params.names, &self.params.lower, &self.params.upper)?;
        Ok(GridSystem {
            system,
            dae,
            steady,
            k0: self.params.initial.clone(),
        })
    }
}

/// AVR, governor, PSS: the order in which controller states are laid out.
fn ordered_controllers(cs: &[ControllerData]) -> Vec<&ControllerData> {
    let rank = |c: &ControllerData| match c {
        ControllerData::Avr { .. } => 0,
        ControllerData::Governor { .. } => 1,
        ControllerData::Pss { .. } => 2,
    };
    let mut v: Vec<&ControllerData> = cs.iter().collect();
    v.sort_by_key(|c| rank(c));
    v
}

/// Numeric DAE matrices at one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct DaeMatrices {
    pub fx: DMatrix<f64>,
    pub fz: DMatrix<f64>,
    pub fw: DMatrix<f64>,
    pub hx: DMatrix<f64>,
    pub hz: DMatrix<f64>,
    pub hw: DMatrix<f64>,
}

impl LinearizedDae {
    pub fn n_x(&self) -> usize {
        self.state_names.len()
    }

    pub fn n_z(&self) -> usize {
        self.algebraic_names.len()
    }

    pub fn eval(&self, k: &[f64]) -> DaeMatrices {
        DaeMatrices {
            fx: self.fx.eval(k),
            fz: self.fz.eval(k),
            fw: self.fw.eval(k),
            hx: self.hx.clone(),
            hz: self.hz.clone(),
            hw: self.hw.clone(),
        }
    }

    /// Descriptor pencil `(E, Ā)` of the unreduced system: `E = diag(I, 0)`.
    pub fn pencil(&self, k: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let m = self.eval(k);
        let (n_x, n_z) = (self.n_x(), self.n_z());
        let n = n_x + n_z;
        let mut e = DMatrix::zeros(n, n);
        e.view_mut((0, 0), (n_x, n_x)).fill_with_identity();
        let mut a = DMatrix::zeros(n, n);
        a.view_mut((0, 0), (n_x, n_x)).copy_from(&m.fx);
        a.view_mut((0, n_x), (n_x, n_z)).copy_from(&m.fz);
        a.view_mut((n_x, 0), (n_z, n_x)).copy_from(&m.hx);
        a.view_mut((n_x, n_x), (n_z, n_z)).copy_from(&m.hz);
        (e, a)
    }

    /// Eliminates the algebraic variables: `A = Fx - Fz Hz⁻¹ Hx`, `B = Fw - Fz Hz⁻¹ Hw`.
    pub fn reduce(
        &self,
        names: &[String],
        lower: &DVector<f64>,
        upper: &DVector<f64>,
    ) -> Result<ParametricStateSpace, GridError> {
        let n_z = self.n_z();
        if n_z > 0 {
            let svd = self.hz.clone().svd(false, true);
            let (imin, smin) = svd.singular_values.argmin();
            let smax = svd.singular_values.max();
            if smin <= 1e-10 * smax.max(1.0) {
                let vt = svd.v_t.expect("requested");
                let row = vt.row(imin);
                let (_, j) = row.iamax_full();
                return Err(GridError::SingularAlgebraic {
                    variable: self.algebraic_names[j].clone(),
                    sigma_min: smin,
                });
            }
        }
        let lu = self.hz.clone().lu();
        let mx = lu.solve(&self.hx).ok_or_else(|| GridError::SingularAlgebraic {
            variable: "network".into(),
            sigma_min: 0.0,
        })?;
        let mw = lu.solve(&self.hw).expect("same factorization");
        let n_k = lower.len();
        let map = ReducedMap {
            dfx: (0..n_k).map(|l| self.fx.derivative(l)).collect(),
            dfz: (0..n_k).map(|l| self.fz.derivative(l)).collect(),
            dfw: (0..n_k).map(|l| self.fw.derivative(l)).collect(),
            fx: self.fx.clone(),
            fz: self.fz.clone(),
            fw: self.fw.clone(),
            mx,
            mw,
        };
        let sys = ParametricStateSpace::new(
            self.n_x(),
            self.hw.ncols(),
            self.c.clone(),
            lower.clone(),
            upper.clone(),
            Arc::new(map),
        )?;
        Ok(sys.with_names(names.to_vec())?)
    }
}

/// Reduced map evaluated at every `K`; the algebraic block is constant so its
/// factorization is computed once.
struct ReducedMap {
    fx: ExprMatrix,
    fz: ExprMatrix,
    fw: ExprMatrix,
    dfx: Vec<ExprMatrix>,
    dfz: Vec<ExprMatrix>,
    dfw: Vec<ExprMatrix>,
    mx: DMatrix<f64>,
    mw: DMatrix<f64>,
}

impl ParameterMap for ReducedMap {
    fn eval(&self, k: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let fz = self.fz.eval(k);
        (self.fx.eval(k) - &fz * &self.mx, self.fw.eval(k) - &fz * &self.mw)
    }

    fn jacobian(&self, k: &[f64]) -> Option<Vec<(DMatrix<f64>, DMatrix<f64>)>> {
        Some(
            (0..self.dfx.len())
                .map(|l| {
                    let dfz = self.dfz[l].eval(k);
                    (
                        self.dfx[l].eval(k) - &dfz * &self.mx,
                        self.dfw[l].eval(k) - &dfz * &self.mw,
                    )
                })
                .collect(),
        )
    }
}
