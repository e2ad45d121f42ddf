//! Plain-text case files.
//!
//! A case file is a list of `[section]` blocks. Key/value sections
//! (`system`, `simulation`) hold `key value` lines; table sections hold one
//! whitespace-separated row per line with the columns below. `#` starts a
//! comment. Per-unit quantities are on the system base.
//!
//! | section      | columns                                              |
//! |--------------|------------------------------------------------------|
//! | `buses`      | `id kind p_load q_load v_set load` where `kind` is `slack`, `pv` or `pq` and `load` is `none`, `param` or `fixed:<alpha>` |
//! | `branches`   | `from to r x b tap` (`tap` 0 means 1, applied at `from`) |
//! | `generators` | `bus p_set h d xd xq xdp xqp td0p tq0p ra`           |
//! | `exciters`   | `bus ka ta c1 c2`                                    |
//! | `governors`  | `bus r tg`                                           |
//! | `motors`     | `bus ra x0 xp tp h`                                  |
//! | `faults`     | `bus r x t_on t_off`                                 |
//! | `parameters` | `bus lower upper` (one per `param` load, same order) |
//!
//! `system` keys: `name`, `base_mva`, `freq_hz`. `simulation` keys:
//! `t_end`, `steps_per_second`, `monitor` (bus ids whose voltage magnitude
//! becomes a state; `all` for every bus), `toi_stride`, `reuse_jacobian`
//! (0 or 1).

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LoadModel {
    None,
    /// Impedance fraction is an uncertain parameter.
    Parameter,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct BusData {
    pub id: usize,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub v_set: f64,
    pub load: LoadModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchData {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    pub tap: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorData {
    pub bus: usize,
    pub p_set: f64,
    pub h: f64,
    pub d: f64,
    pub xd: f64,
    pub xq: f64,
    pub xdp: f64,
    pub xqp: f64,
    pub td0p: f64,
    pub tq0p: f64,
    pub ra: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExciterData {
    pub bus: usize,
    pub ka: f64,
    pub ta: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GovernorData {
    pub bus: usize,
    pub r: f64,
    pub tg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotorData {
    pub bus: usize,
    pub ra: f64,
    pub x0: f64,
    pub xp: f64,
    pub tp: f64,
    pub h: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaultData {
    pub bus: usize,
    pub r: f64,
    pub x: f64,
    pub t_on: f64,
    pub t_off: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterRange {
    pub bus: usize,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Monitor {
    All,
    Buses(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationData {
    pub t_end: f64,
    pub steps_per_second: f64,
    pub monitor: Monitor,
    /// Every `toi_stride`-th mesh point is a time of interest.
    pub toi_stride: usize,
    /// Simplified Newton (reuse the step factorization while it contracts).
    pub reuse_jacobian: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseData {
    pub name: String,
    pub base_mva: f64,
    pub freq_hz: f64,
    pub buses: Vec<BusData>,
    pub branches: Vec<BranchData>,
    pub generators: Vec<GeneratorData>,
    pub exciters: Vec<ExciterData>,
    pub governors: Vec<GovernorData>,
    pub motors: Vec<MotorData>,
    pub faults: Vec<FaultData>,
    pub parameters: Vec<ParameterRange>,
    pub simulation: SimulationData,
}

impl CaseData {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::DataFileMissing(path.display().to_string()),
            _ => Error::Io(format!("{}: {e}", path.display())),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = CaseData {
            name: String::from("case"),
            base_mva: 100.0,
            freq_hz: 60.0,
            buses: Vec::new(),
            branches: Vec::new(),
            generators: Vec::new(),
            exciters: Vec::new(),
            governors: Vec::new(),
            motors: Vec::new(),
            faults: Vec::new(),
            parameters: Vec::new(),
            simulation: SimulationData {
                t_end: 1.0,
                steps_per_second: 600.0,
                monitor: Monitor::All,
                toi_stride: 5,
                reuse_jacobian: false,
            },
        };
        let mut section = String::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if let Some(s) = body.strip_prefix('[') {
                section = s
                    .strip_suffix(']')
                    .ok_or_else(|| fmt_err(line, "unterminated section header"))?
                    .trim()
                    .to_string();
                continue;
            }
            let tok: Vec<&str> = body.split_whitespace().collect();
            let row = Row { tok: &tok, line };
            match section.as_str() {
                "system" => match tok[0] {
                    "name" => c.name = tok[1..].join(" "),
                    "base_mva" => c.base_mva = row.num(1)?,
                    "freq_hz" => c.freq_hz = row.num(1)?,
                    other => return Err(fmt_err(line, &format!("unknown system key `{other}`"))),
                },
                "simulation" => match tok[0] {
                    "t_end" => c.simulation.t_end = row.num(1)?,
                    "steps_per_second" => c.simulation.steps_per_second = row.num(1)?,
                    "toi_stride" => c.simulation.toi_stride = row.index(1)?,
                    "reuse_jacobian" => c.simulation.reuse_jacobian = row.index(1)? != 0,
                    "monitor" => {
                        c.simulation.monitor = if tok.get(1) == Some(&"all") {
                            Monitor::All
                        } else {
                            Monitor::Buses((1..tok.len()).map(|i| row.index(i)).collect::<Result<_>>()?)
                        }
                    }
                    other => return Err(fmt_err(line, &format!("unknown simulation key `{other}`"))),
                },
                "buses" => {
                    row.arity(6)?;
                    let kind = match tok[1] {
                        "slack" => BusKind::Slack,
                        "pv" => BusKind::Pv,
                        "pq" => BusKind::Pq,
                        other => return Err(fmt_err(line, &format!("unknown bus kind `{other}`"))),
                    };
                    let load = match tok[5] {
                        "none" => LoadModel::None,
                        "param" => LoadModel::Parameter,
                        s => match s.strip_prefix("fixed:") {
                            Some(a) => LoadModel::Fixed(
                                a.parse().map_err(|_| fmt_err(line, &format!("bad impedance fraction `{a}`")))?,
                            ),
                            None => return Err(fmt_err(line, &format!("unknown load model `{s}`"))),
                        },
                    };
                    c.buses.push(BusData {
                        id: row.index(0)?,
                        kind,
                        p_load: row.num(2)?,
                        q_load: row.num(3)?,
                        v_set: row.num(4)?,
                        load,
                    });
                }
                "branches" => {
                    row.arity(6)?;
                    c.branches.push(BranchData {
                        from: row.index(0)?,
                        to: row.index(1)?,
                        r: row.num(2)?,
                        x: row.num(3)?,
                        b: row.num(4)?,
                        tap: row.num(5)?,
                    });
                }
                "generators" => {
                    row.arity(11)?;
                    c.generators.push(GeneratorData {
                        bus: row.index(0)?,
                        p_set: row.num(1)?,
                        h: row.num(2)?,
                        d: row.num(3)?,
                        xd: row.num(4)?,
                        xq: row.num(5)?,
                        xdp: row.num(6)?,
                        xqp: row.num(7)?,
                        td0p: row.num(8)?,
                        tq0p: row.num(9)?,
                        ra: row.num(10)?,
                    });
                }
                "exciters" => {
                    row.arity(5)?;
                    c.exciters.push(ExciterData {
                        bus: row.index(0)?,
                        ka: row.num(1)?,
                        ta: row.num(2)?,
                        c1: row.num(3)?,
                        c2: row.num(4)?,
                    });
                }
                "governors" => {
                    row.arity(3)?;
                    c.governors.push(GovernorData { bus: row.index(0)?, r: row.num(1)?, tg: row.num(2)? });
                }
                "motors" => {
                    row.arity(6)?;
                    c.motors.push(MotorData {
                        bus: row.index(0)?,
                        ra: row.num(1)?,
                        x0: row.num(2)?,
                        xp: row.num(3)?,
                        tp: row.num(4)?,
                        h: row.num(5)?,
                    });
                }
                "faults" => {
                    row.arity(5)?;
                    c.faults.push(FaultData {
                        bus: row.index(0)?,
                        r: row.num(1)?,
                        x: row.num(2)?,
                        t_on: row.num(3)?,
                        t_off: row.num(4)?,
                    });
                }
                "parameters" => {
                    row.arity(3)?;
                    c.parameters.push(ParameterRange { bus: row.index(0)?, lower: row.num(1)?, upper: row.num(2)? });
                }
                "" => return Err(fmt_err(line, "data before the first section header")),
                other => return Err(fmt_err(line, &format!("unknown section `{other}`"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::DataFormat { line: 0, msg });
        if self.buses.is_empty() {
            return bad("no buses".into());
        }
        if self.buses.iter().filter(|b| b.kind == BusKind::Slack).count() != 1 {
            return bad("exactly one slack bus is required".into());
        }
        let known = |id: usize| self.buses.iter().any(|b| b.id == id);
        for br in &self.branches {
            if !known(br.from) || !known(br.to) {
                return bad(format!("branch {}-{} references an unknown bus", br.from, br.to));
            }
        }
        let attached = self
            .generators
            .iter()
            .map(|g| g.bus)
            .chain(self.exciters.iter().map(|x| x.bus))
            .chain(self.governors.iter().map(|x| x.bus))
            .chain(self.motors.iter().map(|x| x.bus))
            .chain(self.faults.iter().map(|x| x.bus));
        for bus in attached {
            if !known(bus) {
                return bad(format!("device attached to unknown bus {bus}"));
            }
        }
        for x in self.exciters.iter().map(|x| x.bus).chain(self.governors.iter().map(|x| x.bus)) {
            if !self.generators.iter().any(|g| g.bus == x) {
                return bad(format!("controller at bus {x} has no generator"));
            }
        }
        let params: Vec<usize> =
            self.buses.iter().filter(|b| b.load == LoadModel::Parameter).map(|b| b.id).collect();
        let ranges: Vec<usize> = self.parameters.iter().map(|r| r.bus).collect();
        if params != ranges {
            return bad("`parameters` rows must list every `param` load bus in bus order".into());
        }
        for b in &self.buses {
            let gens = self.generators.iter().filter(|g| g.bus == b.id).count();
            if (b.kind != BusKind::Pq) != (gens == 1) || gens > 1 {
                return bad(format!("bus {} must have one generator iff it is slack or pv", b.id));
            }
        }
        if let Some(b) = self.buses.iter().find(|b| b.load == LoadModel::None && (b.p_load != 0.0 || b.q_load != 0.0)) {
            return bad(format!("bus {} carries load but its load model is `none`", b.id));
        }
        if self.motors.iter().any(|m| self.buses.iter().find(|b| b.id == m.bus).is_some_and(|b| b.load == LoadModel::None)) {
            return bad("a motor must sit on a bus with a load".into());
        }
        if !(self.simulation.t_end > 0.0 && self.simulation.steps_per_second > 0.0 && self.simulation.toi_stride > 0) {
            return bad("simulation horizon, step rate and stride must be positive".into());
        }
        Ok(())
    }

    /// Position of bus `id` in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }
}

fn fmt_err(line: usize, msg: &str) -> Error {
    Error::DataFormat { line, msg: msg.to_string() }
}

struct Row<'a> {
    tok: &'a [&'a str],
    line: usize,
}

impl Row<'_> {
    fn arity(&self, n: usize) -> Result<()> {
        if self.tok.len() == n {
            Ok(())
        } else {
            Err(fmt_err(self.line, &format!("expected {n} columns, found {}", self.tok.len())))
        }
    }

    fn num(&self, i: usize) -> Result<f64> {
        let s = self.tok.get(i).ok_or_else(|| fmt_err(self.line, "missing value"))?;
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| fmt_err(self.line, &format!("bad number `{s}`")))
    }

    fn index(&self, i: usize) -> Result<usize> {
        let s = self.tok.get(i).ok_or_else(|| fmt_err(self.line, "missing value"))?;
        s.parse().map_err(|_| fmt_err(self.line, &format!("bad integer `{s}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TINY: &str = "
[system]
name tiny
[buses]
1 slack 0 0 1.0 none
2 pq 0.5 0.1 1.0 param
[branches]
1 2 0.0 0.1 0.0 0
[generators]
1 0 3 0 1.8 1.7 0.3 0.55 8 0.4 0
[parameters]
2 0.2 0.5
";

    #[test]
    fn parses_minimal_case() {
        let c = CaseData::parse(TINY).unwrap();
        assert_eq!(c.name, "tiny");
        assert_eq!(c.buses.len(), 2);
        assert_eq!(c.buses[1].load, LoadModel::Parameter);
        assert_eq!(c.parameters[0].upper, 0.5);
        assert_eq!(c.simulation.steps_per_second, 600.0);
    }

    #[test]
    fn reports_line_of_bad_number() {
        let text = TINY.replace("1 2 0.0 0.1 0.0 0", "1 2 0.0 abc 0.0 0");
        match CaseData::parse(&text) {
            Err(Error::DataFormat { line, .. }) => assert_eq!(line, 8),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_is_reported() {
        let e = CaseData::from_file(Path::new("/nonexistent/case.txt")).unwrap_err();
        assert!(matches!(e, Error::DataFileMissing(_)));
    }

    #[test]
    fn parameter_rows_must_match_param_loads() {
        let text = TINY.replace("[parameters]\n2 0.2 0.5\n", "");
        assert!(CaseData::parse(&text).is_err());
    }
}
