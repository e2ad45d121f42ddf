//! Scenario assembly: power flow, machine initialization and DAE layout.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;

use super::components::{
    AdmittanceEntry, Exciter, FaultShunt, Generator, Governor, Motor, MotorConstants, Stamp, VoltageMagnitude,
    ZipLoad,
};
use super::data::{BusKind, CaseData, LoadModel, Monitor};
use super::init::{init_generator, init_motor, MotorInitSystem, MotorSteady};
use super::network::{solve_power_flow, Admittance, PowerFlowSolution};
use super::system::PowerSystem;
use crate::bounds::ParameterBox;
use crate::dae::{
    check_consistent, integrate, DaeSystem, Event, EventSchedule, IntegratorConfig, TimeGrid, Trajectory,
};
use crate::error::{Error, Result};
use crate::sensitivity::{
    initial_sensitivity, integrate_with_sensitivities, n_pairs, Order, SecondOrder, SensitivitySeries, Tracking,
};

pub const CASE_A_DATA: &str = include_str!("../../data/case_a.txt");
pub const CASE_B_DATA: &str = include_str!("../../data/case_b.txt");
pub const CASE_C_DATA: &str = include_str!("../../data/case_c.txt");

/// Single-machine, single-load system with an impedance/constant-power load.
pub fn build_case_a() -> Result<Scenario> {
    Scenario::from_data(CaseData::parse(CASE_A_DATA)?)
}

/// Single-machine system with exciter and governor feeding a load split
/// between impedance and an induction motor.
pub fn build_case_b() -> Result<Scenario> {
    Scenario::from_data(CaseData::parse(CASE_B_DATA)?)
}

/// [`build_case_b`] with the fault resistance replaced (severity sweeps).
pub fn build_case_b_with_fault(resistance: f64) -> Result<Scenario> {
    let mut d = CaseData::parse(CASE_B_DATA)?;
    for f in &mut d.faults {
        f.r = resistance;
        f.x = 0.0;
    }
    Scenario::from_data(d)
}

/// 39-bus, 10-machine system with one uncertain fraction per load bus.
pub fn build_case_c() -> Result<Scenario> {
    Scenario::from_data(CaseData::parse(CASE_C_DATA)?)
}

/// Loads a bundled case by name (`a`, `b`, `c`) or a case file by path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    match name_or_path.to_ascii_lowercase().as_str() {
        "a" | "case_a" => build_case_a(),
        "b" | "case_b" => build_case_b(),
        "c" | "case_c" => build_case_c(),
        _ => Scenario::from_file(Path::new(name_or_path)),
    }
}

/// State slots of one motor, in [`super::init::MotorInit::to_array`] order.
#[derive(Clone, Copy, Debug)]
struct MotorSlots {
    idx: [usize; 7],
    bus: usize,
    alpha: Option<f64>,
    param: Option<usize>,
    constants: usize,
}

/// A ready-to-run case: the DAE, its event schedule and time grid, the
/// parameter box and a parameter-dependent consistent initial state.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub data: CaseData,
    pub events: EventSchedule,
    pub grid: TimeGrid,
    pub bounds: ParameterBox,
    pub integrator: IntegratorConfig,
    /// Mesh rows at which envelopes are evaluated by default.
    pub times_of_interest: Vec<usize>,
    pub power_flow: PowerFlowSolution,
    system: PowerSystem,
    motor_init: MotorInitSystem,
    motor_slots: Vec<MotorSlots>,
    motor_constants: Vec<MotorConstants>,
    base_state: Vec<f64>,
    names: Vec<String>,
}

struct Layout {
    next: usize,
    names: Vec<String>,
}

impl Layout {
    fn take(&mut self, name: String) -> usize {
        self.names.push(name);
        self.next += 1;
        self.next - 1
    }
}

impl Scenario {
    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_data(CaseData::from_file(path)?)
    }

    pub fn from_data(data: CaseData) -> Result<Self> {
        let nb = data.buses.len();
        let bi = |id: usize| data.bus_index(id).expect("validated bus id");
        let y = Admittance::build(nb, &data.branches, bi);

        let kinds: Vec<BusKind> = data.buses.iter().map(|b| b.kind).collect();
        let mut p_spec: Vec<f64> = data.buses.iter().map(|b| -b.p_load).collect();
        let q_spec: Vec<f64> = data.buses.iter().map(|b| -b.q_load).collect();
        for g in &data.generators {
            p_spec[bi(g.bus)] += g.p_set;
        }
        let v_set: Vec<f64> = data.buses.iter().map(|b| b.v_set).collect();
        let pf = solve_power_flow(&y, &kinds, &p_spec, &q_spec, &v_set, 1e-12, 30)?;

        let omega_b = 2.0 * std::f64::consts::PI * data.freq_hz;
        let mut lay = Layout { next: 0, names: Vec::new() };
        let mut base = Vec::new();

        // differential states
        struct GenIdx {
            diff: [usize; 4],
            efd: Option<usize>,
            pm: Option<usize>,
        }
        let mut gen_idx = Vec::new();
        for g in &data.generators {
            let tag = format!("gen{}", g.bus);
            let diff = ["delta", "omega", "eqp", "edp"].map(|s| lay.take(format!("{tag}.{s}")));
            let efd = data.exciters.iter().any(|x| x.bus == g.bus).then(|| lay.take(format!("{tag}.efd")));
            let pm = data.governors.iter().any(|x| x.bus == g.bus).then(|| lay.take(format!("{tag}.pm")));
            gen_idx.push(GenIdx { diff, efd, pm });
        }
        let mut mot_diff = Vec::new();
        for m in &data.motors {
            let tag = format!("mot{}", m.bus);
            mot_diff.push(["edp", "eqp", "slip", "tau", "ysh"].map(|s| lay.take(format!("{tag}.{s}"))));
        }
        let n_diff = lay.next;
        let bus_ef: Vec<[usize; 2]> = data
            .buses
            .iter()
            .map(|b| ["e", "f"].map(|s| lay.take(format!("bus{}.{s}", b.id))))
            .collect();
        let gen_i: Vec<[usize; 2]> =
            data.generators.iter().map(|g| ["id", "iq"].map(|s| lay.take(format!("gen{}.{s}", g.bus)))).collect();
        let mot_i: Vec<[usize; 2]> =
            data.motors.iter().map(|m| ["id", "iq"].map(|s| lay.take(format!("mot{}.{s}", m.bus)))).collect();
        let monitored: Vec<usize> = match &data.simulation.monitor {
            Monitor::All => (0..nb).collect(),
            Monitor::Buses(ids) => ids
                .iter()
                .map(|&id| data.bus_index(id).ok_or_else(|| Error::Config(format!("monitored bus {id} does not exist"))))
                .collect::<Result<_>>()?,
        };
        let vm_idx: Vec<(usize, usize)> =
            monitored.iter().map(|&k| (k, lay.take(format!("bus{}.vmag", data.buses[k].id)))).collect();
        let n_state = lay.next;
        base.resize(n_state, 0.0);

        let params: Vec<usize> =
            (0..nb).filter(|&k| data.buses[k].load == LoadModel::Parameter).collect();
        let param_of = |k: usize| params.iter().position(|&j| j == k);
        let n_param = params.len();

        let volt = |k: usize| Complex64::from_polar(pf.v[k], pf.theta[k]);
        for (k, ef) in bus_ef.iter().enumerate() {
            let v = volt(k);
            base[ef[0]] = v.re;
            base[ef[1]] = v.im;
        }
        for &(k, i) in &vm_idx {
            base[i] = pf.v[k];
        }

        // generators
        let mut gens = Vec::new();
        for ((g, gi), cur) in data.generators.iter().zip(&gen_idx).zip(&gen_i) {
            let k = bi(g.bus);
            let s = Complex64::new(pf.p[k] + data.buses[k].p_load, pf.q[k] + data.buses[k].q_load);
            let x0 = init_generator(g, volt(k), s);
            base[gi.diff[0]] = x0.delta;
            base[gi.diff[2]] = x0.eqp;
            base[gi.diff[3]] = x0.edp;
            base[cur[0]] = x0.id;
            base[cur[1]] = x0.iq;
            let exciter = data.exciters.iter().find(|x| x.bus == g.bus).map(|x| {
                let mut e = Exciter { ka: x.ka, ta: x.ta, c1: x.c1, c2: x.c2, vref: 0.0 };
                e.vref = pf.v[k] + (x0.efd + e.saturation(x0.efd)) / x.ka;
                e
            });
            let governor =
                data.governors.iter().find(|x| x.bus == g.bus).map(|x| Governor { r: x.r, tg: x.tg, pref: x0.pm });
            if let Some(i) = gi.efd {
                base[i] = x0.efd;
            }
            if let Some(i) = gi.pm {
                base[i] = x0.pm;
            }
            let mut vars = vec![gi.diff[0], gi.diff[1], gi.diff[2], gi.diff[3], cur[0], cur[1], bus_ef[k][0], bus_ef[k][1]];
            let mut rows = vec![gi.diff[0], gi.diff[1], gi.diff[2], gi.diff[3], cur[0], cur[1], bus_ef[k][0], bus_ef[k][1]];
            for i in [gi.efd, gi.pm].into_iter().flatten() {
                vars.push(i);
                rows.push(i);
            }
            let model = Generator {
                h: g.h,
                d: g.d,
                xd: g.xd,
                xq: g.xq,
                xdp: g.xdp,
                xqp: g.xqp,
                td0p: g.td0p,
                tq0p: g.tq0p,
                ra: g.ra,
                omega_b,
                efd0: x0.efd,
                pm0: x0.pm,
                exciter,
                governor,
            };
            gens.push((model, Stamp { vars, rows }));
        }

        // loads
        let mut loads = Vec::new();
        for (k, b) in data.buses.iter().enumerate() {
            let alpha = match b.load {
                LoadModel::None => continue,
                LoadModel::Parameter => None,
                LoadModel::Fixed(a) => Some(a),
            };
            let has_motor = data.motors.iter().any(|m| m.bus == b.id);
            let mut vars = vec![bus_ef[k][0], bus_ef[k][1]];
            if let Some(j) = param_of(k) {
                vars.push(n_state + j);
            }
            let model = ZipLoad { p0: b.p_load, q0: b.q_load, v0: pf.v[k], alpha, constant_power: !has_motor };
            loads.push((model, Stamp { vars, rows: vec![bus_ef[k][0], bus_ef[k][1]] }));
        }

        // motors
        let mut motors = Vec::new();
        let mut slots = Vec::new();
        let mut constants = Vec::new();
        let mut steady = Vec::new();
        for (mi, m) in data.motors.iter().enumerate() {
            let k = bi(m.bus);
            let c = MotorConstants { ra: m.ra, x0: m.x0, xp: m.xp, tp: m.tp, h: m.h, ws: omega_b };
            let d = mot_diff[mi];
            let cur = mot_i[mi];
            let idx = [d[0], d[1], d[2], cur[0], cur[1], d[3], d[4]];
            let vars = vec![d[0], d[1], d[2], d[3], d[4], cur[0], cur[1], bus_ef[k][0], bus_ef[k][1]];
            motors.push((Motor { c: c.clone() }, Stamp { vars: vars.clone(), rows: vars }));
            let alpha = match data.buses[k].load {
                LoadModel::Fixed(a) => Some(a),
                _ => None,
            };
            let v = volt(k);
            let mut svars: Vec<usize> = (7 * mi..7 * mi + 7).collect();
            if let Some(j) = param_of(k) {
                svars.push(7 * data.motors.len() + j);
            }
            steady.push((
                MotorSteady {
                    c: c.clone(),
                    vc: v.re,
                    vs: v.im,
                    p0: data.buses[k].p_load,
                    q0: data.buses[k].q_load,
                    alpha,
                },
                Stamp { vars: svars, rows: (7 * mi..7 * mi + 7).collect() },
            ));
            slots.push(MotorSlots { idx, bus: k, alpha, param: param_of(k), constants: mi });
            constants.push(c);
        }

        // faults and events
        let mut faults = Vec::new();
        let mut events = Vec::new();
        for (fi, f) in data.faults.iter().enumerate() {
            let k = bi(f.bus);
            let (gs, bs) = (2 * fi, 2 * fi + 1);
            let y = Complex64::new(1.0, 0.0) / Complex64::new(f.r, f.x);
            if !(y.re.is_finite() && y.im.is_finite()) {
                return Err(Error::Config(format!("fault at bus {} has zero impedance", f.bus)));
            }
            faults.push((FaultShunt { g_slot: gs, b_slot: bs }, Stamp {
                vars: bus_ef[k].to_vec(),
                rows: bus_ef[k].to_vec(),
            }));
            events.push(Event::new(f.t_on, format!("fault on at bus {}", f.bus), vec![(gs, y.re), (bs, y.im)]));
            events.push(Event::new(f.t_off, format!("fault cleared at bus {}", f.bus), vec![(gs, 0.0), (bs, 0.0)]));
        }
        // a fault still on at the horizon simply never clears
        events.retain(|e| e.time <= data.simulation.t_end);
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        let events = EventSchedule::new(events)?;

        // network
        let mut network = Vec::new();
        for i in 0..nb {
            for j in 0..nb {
                let (g, b) = (y.g[(i, j)], y.b[(i, j)]);
                if g == 0.0 && b == 0.0 {
                    continue;
                }
                let diagonal = i == j;
                let mut vars = bus_ef[i].to_vec();
                if !diagonal {
                    vars.extend_from_slice(&bus_ef[j]);
                }
                network.push((AdmittanceEntry { g, b, diagonal }, Stamp { vars, rows: bus_ef[i].to_vec() }));
            }
        }
        let vmags = vm_idx
            .iter()
            .map(|&(k, i)| (VoltageMagnitude, Stamp { vars: vec![i, bus_ef[k][0], bus_ef[k][1]], rows: vec![i] }))
            .collect();

        let system = PowerSystem {
            dims: crate::dae::Dims { n_diff, n_alg: n_state - n_diff, n_param },
            n_switch: 2 * data.faults.len(),
            gens,
            loads,
            motors,
            faults,
            network,
            vmags,
        };
        let motor_init = MotorInitSystem { n_param, parts: steady };

        let dt = 1.0 / data.simulation.steps_per_second;
        let grid = TimeGrid::uniform(0.0, data.simulation.t_end, dt, &events)?;
        let events = snap_events(events, &grid)?;
        let times_of_interest = (0..grid.len()).step_by(data.simulation.toi_stride).collect();
        let bounds = if n_param == 0 {
            return Err(Error::Config("case has no uncertain parameters".into()));
        } else {
            ParameterBox::new(
                data.parameters.iter().map(|r| r.lower).collect(),
                data.parameters.iter().map(|r| r.upper).collect(),
            )?
        };
        let integrator = IntegratorConfig { reuse_jacobian: data.simulation.reuse_jacobian, ..Default::default() };

        Ok(Scenario {
            name: data.name.clone(),
            events,
            grid,
            bounds,
            integrator,
            times_of_interest,
            power_flow: pf,
            system,
            motor_init,
            motor_slots: slots,
            motor_constants: constants,
            base_state: base,
            names: lay.names,
            data,
        })
    }

    pub fn system(&self) -> &dyn DaeSystem {
        &self.system
    }

    pub fn power_system(&self) -> &PowerSystem {
        &self.system
    }

    /// Motor initialization equations in the parameters.
    pub fn motor_init_system(&self) -> &MotorInitSystem {
        &self.motor_init
    }

    pub fn n_param(&self) -> usize {
        self.system.dims.n_param
    }

    pub fn n_state(&self) -> usize {
        self.system.dims.n_state()
    }

    /// Box midpoint.
    pub fn nominal(&self) -> Vec<f64> {
        self.bounds.midpoint()
    }

    pub fn state_names(&self) -> &[String] {
        &self.names
    }

    pub fn state_index(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownState(name.to_string()))
    }

    fn check_params(&self, p: &[f64]) -> Result<()> {
        if p.len() != self.n_param() || p.iter().any(|x| !x.is_finite()) {
            return Err(Error::Dimension(format!("expected {} finite parameters", self.n_param())));
        }
        Ok(())
    }

    fn alpha(&self, m: &MotorSlots, p: &[f64]) -> f64 {
        match (m.alpha, m.param) {
            (Some(a), _) => a,
            (None, Some(j)) => p[j],
            (None, None) => 0.0,
        }
    }

    /// Consistent initial state for parameters `p`.
    pub fn initial_state(&self, p: &[f64]) -> Result<Vec<f64>> {
        self.check_params(p)?;
        let mut z = self.base_state.clone();
        for m in &self.motor_slots {
            let a = self.alpha(m, p);
            let b = &self.data.buses[m.bus];
            let init = init_motor(
                self.power_flow.v[m.bus],
                self.power_flow.theta[m.bus],
                (1.0 - a) * b.p_load,
                (1.0 - a) * b.q_load,
                &self.motor_constants[m.constants],
            )?;
            for (slot, v) in m.idx.iter().zip(init.to_array()) {
                z[*slot] = v;
            }
        }
        Ok(z)
    }

    /// First- and second-order sensitivities of the initial state.
    pub fn initial_sensitivities(&self, p: &[f64]) -> Result<(DMatrix<f64>, SecondOrder)> {
        self.check_params(p)?;
        let (n, np) = (self.n_state(), self.n_param());
        let mut u = DMatrix::zeros(n, np);
        let mut v = SecondOrder::zeros(n, np);
        if self.motor_slots.is_empty() {
            return Ok((u, v));
        }
        let z = self.initial_state(p)?;
        let w: Vec<f64> = self.motor_slots.iter().flat_map(|m| m.idx.map(|i| z[i])).collect();
        let (uw, vw) = initial_sensitivity(&self.motor_init, &w, p)?;
        for (mi, m) in self.motor_slots.iter().enumerate() {
            for (r, &slot) in m.idx.iter().enumerate() {
                u.row_mut(slot).copy_from(&uw.row(7 * mi + r));
                v.m.row_mut(slot).copy_from(&vw.m.row(7 * mi + r));
            }
        }
        debug_assert_eq!(v.m.ncols(), n_pairs(np));
        Ok((u, v))
    }

    /// Checks the initial algebraic residual.
    pub fn check_initial(&self, p: &[f64]) -> Result<()> {
        let z = self.initial_state(p)?;
        check_consistent(&self.system, &z, p, self.grid.t0(), self.integrator.newton_tol)
    }

    pub fn simulate(&self, p: &[f64]) -> Result<Trajectory> {
        let z0 = self.initial_state(p)?;
        integrate(&self.system, &z0, p, &self.grid, &self.events, &self.integrator)
    }

    pub fn simulate_with_sensitivities(
        &self,
        p: &[f64],
        tracking: &Tracking,
        order: Order,
    ) -> Result<(Trajectory, SensitivitySeries)> {
        let z0 = self.initial_state(p)?;
        let (u0, v0) = self.initial_sensitivities(p)?;
        let v0 = (order == Order::Second).then_some(&v0);
        integrate_with_sensitivities(
            &self.system,
            &z0,
            p,
            &u0,
            v0,
            &self.grid,
            &self.events,
            &self.integrator,
            tracking,
            order,
        )
    }

    /// Same scenario on a different horizon; events past `t_end` are dropped.
    pub fn with_horizon(&self, t_end: f64) -> Result<Self> {
        let mut d = self.data.clone();
        d.simulation.t_end = t_end;
        let mut s = Self::from_data(d)?;
        s.integrator = self.integrator.clone();
        Ok(s)
    }
}

/// Moves event times onto the mesh points the grid snapped them to.
fn snap_events(events: EventSchedule, grid: &TimeGrid) -> Result<EventSchedule> {
    let snapped = events
        .events()
        .iter()
        .map(|e| {
            let t = grid.times()[grid.nearest_index(e.time)];
            Event { time: t, ..e.clone() }
        })
        .collect();
    EventSchedule::new(snapped)
}
