//! Acceptance suite: one PASS/FAIL line per criterion at its stated tolerance.
//!
//! Runs as a plain program (`harness = false`). Pass criterion numbers to run
//! a subset, e.g. `cargo test --release --test acceptance -- 3 4`. The exit
//! status is 0 unless `TRAJEX_ACCEPTANCE_STRICT` is set, in which case any
//! FAIL line makes it 1; the report itself is the deliverable.

mod common;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajex::extremes::{
    compute_envelope, error_metrics, taylor_baseline_envelope, EnvelopeConfig, ExtremeEnvelope, IntegrationCache,
};
use trajex::models::{build_case_a, build_case_b, build_case_b_with_fault, build_case_c, Scenario};
use trajex::oracle::{sample_envelope, SamplePlan};
use trajex::par::Execution;
use trajex::trust_region::{maximize, minimize, next_radius, Evaluation, TrustConfig, TrustResult, TrustStatus};
use trajex::ParameterBox;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn full_radius(s: &Scenario) -> EnvelopeConfig {
    EnvelopeConfig { trust: TrustConfig { delta0: Some(s.bounds.width()), ..TrustConfig::default() }, ..Default::default() }
}

fn grid_oracle(s: &Scenario, state: usize, points: usize, rows: &[usize]) -> ExtremeEnvelope {
    sample_envelope(s, state, &s.bounds, &SamplePlan::grid(points), rows, false, Execution::Parallel).unwrap().envelope
}

/// Minimizes one state at one mesh time from `start` with `delta0`.
fn single_time_minimum(s: &Scenario, state: &str, t: f64, start: f64, delta0: f64) -> TrustResult {
    let i = s.state_index(state).unwrap();
    let row = s.grid.nearest_index(t);
    let cache = IntegrationCache::new(s, i, true);
    let cfg = TrustConfig { delta0: Some(delta0), ..TrustConfig::default() };
    minimize(|p| cache.evaluate(p, row), &[start], &s.bounds, &cfg).unwrap()
}

fn sensitivities() -> Outcome {
    let mut worst = (0.0f64, 0.0f64);
    for (s, points) in [(build_case_a().unwrap(), [0.25, 0.35, 0.45]), (build_case_b().unwrap(), [0.4, 0.65, 0.9])] {
        for p in points {
            let (a, b) = common::sensitivity_errors(&s, &[p], 3e-3);
            worst = (worst.0.max(a), worst.1.max(b));
        }
    }
    outcome(
        worst.0 <= 1e-4 && worst.1 <= 1e-3,
        format!("worst first-order {:.2e} (<= 1e-4), second-order {:.2e} (<= 1e-3) on cases A and B", worst.0, worst.1),
    )
}

fn case_a_envelope() -> Outcome {
    let s = build_case_a().unwrap();
    let rows = s.times_of_interest.clone();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for state in ["bus2.vmag", "gen1.omega"] {
        let i = s.state_index(state).unwrap();
        let tr = compute_envelope(&s, i, &s.bounds, &EnvelopeConfig::default(), &rows).unwrap().envelope;
        let (eu, el) = error_metrics(&tr, &grid_oracle(&s, i, 100, &rows)).unwrap();
        worst = worst.max(eu).max(el);
        parts.push(format!("{state} eps_M {eu:.2e} eps_m {el:.2e}"));
    }
    outcome(worst <= 1e-4, format!("{} (<= 1e-4, 100-point grid)", parts.join(", ")))
}

fn case_a_iterates() -> Outcome {
    let s = build_case_a().unwrap();
    let r = single_time_minimum(&s, "gen1.omega", 0.288, 0.35, s.bounds.width());
    let rebuilds = r.models.len() - 1;
    let a = r.p_star[0];
    let path: Vec<String> = r.models.iter().map(|m| format!("{:.4}", m.base[0])).collect();
    outcome(
        (a - 0.4792).abs() <= 0.01 && rebuilds <= 3 && r.status == TrustStatus::Converged,
        format!("alpha* = {a:.4} (0.4792 +- 0.01), {rebuilds} rebuilds (<= 3), path {}", path.join(" -> ")),
    )
}

fn case_b_separation() -> Outcome {
    let s = build_case_b().unwrap();
    let i = s.state_index("gen1.omega").unwrap();
    let rows = s.times_of_interest.clone();
    let oracle = grid_oracle(&s, i, 1000, &rows);
    let tr = compute_envelope(&s, i, &s.bounds, &full_radius(&s), &rows).unwrap().envelope;
    let taylor = taylor_baseline_envelope(&s, i, &s.bounds, None, &rows).unwrap();
    let (_, tr_m) = error_metrics(&tr, &oracle).unwrap();
    let (_, ty_m) = error_metrics(&taylor, &oracle).unwrap();
    let separated = tr_m * 1e3 <= ty_m;

    let r = single_time_minimum(&s, "gen1.omega", 0.288, 0.65, s.bounds.width());
    let first = &r.log[0];
    let rejected = !first.accepted && first.rho < 0.25 && (first.trial[0] - 0.3).abs() < 1e-12;
    let a = r.p_star[0];
    outcome(
        separated && rejected && (a - 0.398).abs() <= 0.01,
        format!(
            "eps_m trust {tr_m:.2e} vs Taylor {ty_m:.2e} (ratio {:.1e} >= 1e3); first trial {:.3} rho {:.3} {}; alpha* = {a:.4} (0.398 +- 0.01)",
            ty_m / tr_m.max(f64::MIN_POSITIVE),
            first.trial[0],
            first.rho,
            if first.accepted { "accepted" } else { "rejected" },
        ),
    )
}

const SWEEP: [f64; 6] = [0.55, 0.45, 0.35, 0.25, 0.15, 0.05];

fn severity_sweep() -> Outcome {
    let states = ["gen1.omega", "gen1.delta", "bus2.vmag"];
    // errors[state][fault] = ((taylor_M, taylor_m), (trust_M, trust_m))
    let mut errors = vec![Vec::new(); states.len()];
    for &fault in &SWEEP {
        let s = build_case_b_with_fault(fault).unwrap();
        let rows = s.times_of_interest.clone();
        for (k, state) in states.iter().enumerate() {
            let i = s.state_index(state).unwrap();
            let oracle = grid_oracle(&s, i, 100, &rows);
            let tr = compute_envelope(&s, i, &s.bounds, &full_radius(&s), &rows).unwrap().envelope;
            let taylor = taylor_baseline_envelope(&s, i, &s.bounds, None, &rows).unwrap();
            errors[k].push((error_metrics(&taylor, &oracle).unwrap(), error_metrics(&tr, &oracle).unwrap()));
        }
    }
    // an exactly recovered optimum has zero error; treat anything below this
    // as zero when comparing orders of magnitude
    let floor = 1e-12;
    let last = SWEEP.len() - 1;
    let mut best: Option<(f64, String, bool)> = None;
    let (mut max_growth, mut max_at) = (0.0f64, String::new());
    for (k, state) in states.iter().enumerate() {
        for (side, pick) in [("upper", 0usize), ("lower", 1usize)] {
            let get = |e: (f64, f64)| if pick == 0 { e.0 } else { e.1 };
            let taylor: Vec<f64> = errors[k].iter().map(|e| get(e.0)).collect();
            let trust: Vec<f64> = errors[k].iter().map(|e| get(e.1)).collect();
            let growth = taylor[last].max(floor) / taylor[0].max(floor);
            let trust_spread = trust.iter().map(|e| e.max(floor) / trust[0].max(floor)).fold(0.0, f64::max);
            let pass = growth >= 100.0 && trust_spread <= 10.0;
            if growth > max_growth {
                max_growth = growth;
                max_at = format!("{state} {side}");
            }
            let line = format!(
                "{state} {side}: Taylor {:.2e} -> {:.2e} (x{growth:.1}), trust {:.2e} -> {:.2e} (max x{trust_spread:.1e} over mildest)",
                taylor[0], taylor[last], trust[0], trust[last]
            );
            let score = if pass { f64::INFINITY } else { growth.min(100.0) / trust_spread.max(1.0) };
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, line, pass));
            }
        }
    }
    let (_, line, pass) = best.unwrap();
    outcome(pass, format!("best {line}; largest Taylor growth x{max_growth:.1} ({max_at}); need x100 with trust within x10"))
}

fn case_c_desk_scale() -> Outcome {
    let window = (0.25, 0.42);
    let s = build_case_c().unwrap().with_horizon(window.1).unwrap();
    let i = s.state_index("gen30.omega").unwrap();
    let times = s.grid.times();
    let rows: Vec<usize> =
        s.times_of_interest.iter().copied().filter(|&r| times[r] >= window.0 && times[r] <= window.1).collect();

    let t0 = Instant::now();
    let cache = IntegrationCache::new(&s, i, true);
    let start = s.bounds.midpoint();
    let cfg = TrustConfig::default();
    let trust: Vec<TrustResult> =
        rows.iter().map(|&r| minimize(|p| cache.evaluate(p, r), &start, &s.bounds, &cfg).unwrap()).collect();
    let trust_secs = t0.elapsed().as_secs_f64();
    let integrations = cache.integrations();

    let t1 = Instant::now();
    let mc = sample_envelope(&s, i, &s.bounds, &SamplePlan::uniform(10_000, 0), &rows, false, Execution::Parallel).unwrap();
    let mc_secs = t1.elapsed().as_secs_f64();

    let dominated = trust.iter().zip(&mc.envelope.lower).all(|(r, m)| r.value <= m + 1e-6);
    let at_corner = trust.iter().all(|r| r.p_star.iter().all(|&x| x.abs() < 1e-9));
    let cheap = integrations as f64 <= 0.05 * mc.integrations as f64;
    let worst_gap = trust.iter().zip(&mc.envelope.lower).map(|(r, m)| r.value - m).fold(f64::NEG_INFINITY, f64::max);
    outcome(
        dominated && at_corner && cheap && mc.failures.is_empty(),
        format!(
            "{} rows in [{}, {}] s: max(trust - MC) = {worst_gap:.2e} (<= 1e-6), argmin at zeros: {at_corner}, \
             integrations {integrations} vs {} (<= 5%), MC failures {}, {trust_secs:.0} s vs {mc_secs:.0} s",
            rows.len(),
            window.0,
            window.1,
            mc.integrations,
            mc.failures.len()
        ),
    )
}

/// `Q = A^T A + shift I` with a random box and start.
fn random_quadratic(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>, ParameterBox, Vec<f64>) {
    let n = rng.random_range(1..=5);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let q = a.transpose() * &a + DMatrix::identity(n, n) * rng.random_range(0.05..1.0);
    let g = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
    let lower: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..0.0)).collect();
    let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.1..2.0)).collect();
    let bx = ParameterBox::new(lower, upper).unwrap();
    let frac: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
    let p0 = bx.lerp(&frac);
    (q, g, bx, p0)
}

fn optimizer_properties() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let instances = 1000;
    let mut failures = Vec::new();
    for k in 0..instances {
        let (q, g, bx, p0) = random_quadratic(&mut rng);
        let eval = |q: &DMatrix<f64>, g: &DVector<f64>, p: &[f64]| {
            let x = DVector::from_column_slice(p);
            let qx = q * &x;
            Evaluation { value: g.dot(&x) + 0.5 * x.dot(&qx), gradient: g + qx, hessian: q.clone() }
        };
        let cfg = TrustConfig::default();
        let (_, dmax) = cfg.radii(&bx).unwrap();
        let r = minimize(|p| Ok(eval(&q, &g, p)), &p0, &bx, &cfg).unwrap();
        let norm = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        let mut last = eval(&q, &g, &p0).value;
        for rec in &r.log {
            let s = norm(&rec.trial, &rec.p);
            if rec.delta_next != next_radius(rec.rho, s, rec.delta, dmax, &cfg) || rec.accepted != (rec.rho > cfg.eta) {
                failures.push(format!("{k}: radius table"));
            }
            if !(bx.contains(&rec.trial) && s <= rec.delta * (1.0 + 1e-12)) {
                failures.push(format!("{k}: feasibility"));
            }
            if rec.accepted {
                if rec.trial_value > last + 1e-14 * last.abs().max(1.0) {
                    failures.push(format!("{k}: monotonicity"));
                }
                last = rec.trial_value;
            }
        }
        // one step onto an interior minimizer placed at the box midpoint
        let mid = DVector::from_vec(bx.midpoint());
        let g_mid = -(&q * &mid);
        let cfg1 = TrustConfig { delta0: Some(bx.width()), ..TrustConfig::default() };
        let r1 = minimize(|p| Ok(eval(&q, &g_mid, p)), &bx.lerp(&vec![0.1; bx.dim()]), &bx, &cfg1).unwrap();
        let steps = r1.log.iter().filter(|x| x.accepted).count();
        if steps != 1 || norm(&r1.p_star, mid.as_slice()) > 1e-8 || r1.status != TrustStatus::Converged {
            failures.push(format!("{k}: one-step convergence"));
        }
        // maximizing -f is minimizing f
        let (nq, ng) = (-q.clone(), -g.clone());
        let hi = maximize(|p| Ok(eval(&nq, &ng, p)), &p0, &bx, &cfg).unwrap();
        if hi.p_star != r.p_star || hi.value != -r.value {
            failures.push(format!("{k}: maximize duality"));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        failures.is_empty() && secs < 10.0,
        format!(
            "{instances} seeded quadratics, {} violations{}, {secs:.2} s (< 10 s)",
            failures.len(),
            failures.first().map_or(String::new(), |f| format!(" (first: {f})"))
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 7] = [
        ("sensitivities match finite differences", sensitivities),
        ("case A envelopes match the grid oracle", case_a_envelope),
        ("case A single-time iterates", case_a_iterates),
        ("case B trust region separates from the Taylor baseline", case_b_separation),
        ("fault-severity sweep ordering", severity_sweep),
        ("case C desk-scale corner minimum and cost", case_c_desk_scale),
        ("optimizer unit properties", optimizer_properties),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {id} {} {name}: {} [{:.1} s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    if failed > 0 && std::env::var_os("TRAJEX_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
