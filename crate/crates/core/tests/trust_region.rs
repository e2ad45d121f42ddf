//! Optimizer properties on random convex quadratics.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use trajex::trust_region::{maximize, minimize, next_radius, Evaluation, TrustConfig, TrustResult, TrustStatus};
use trajex::ParameterBox;

#[derive(Clone, Debug)]
struct Quadratic {
    q: DMatrix<f64>,
    g: DVector<f64>,
    c: f64,
}

impl Quadratic {
    fn eval(&self, p: &[f64]) -> Evaluation {
        let x = DVector::from_column_slice(p);
        let qx = &self.q * &x;
        Evaluation {
            value: self.c + self.g.dot(&x) + 0.5 * x.dot(&qx),
            gradient: &self.g + qx,
            hessian: self.q.clone(),
        }
    }
}

/// `n`-dimensional instance: `Q = A^T A + shift I`, a box around the origin
/// and a start point given as box fractions.
fn instance() -> impl Strategy<Value = (Quadratic, ParameterBox, Vec<f64>)> {
    (1usize..=5).prop_flat_map(|n| {
        (
            prop::collection::vec(-1.0f64..1.0, n * n),
            prop::collection::vec(-2.0f64..2.0, n),
            0.05f64..1.0,
            prop::collection::vec((-2.0f64..0.0, 0.1f64..2.0), n),
            prop::collection::vec(0.0f64..1.0, n),
        )
            .prop_map(move |(a, g, shift, sides, frac)| {
                let a = DMatrix::from_vec(n, n, a);
                let q = a.transpose() * &a + DMatrix::identity(n, n) * shift;
                let lower: Vec<f64> = sides.iter().map(|s| s.0).collect();
                let upper: Vec<f64> = sides.iter().map(|s| s.0 + s.1).collect();
                let bx = ParameterBox::new(lower, upper).unwrap();
                let p0 = bx.lerp(&frac);
                (Quadratic { q, g: DVector::from_vec(g), c: 0.3 }, bx, p0)
            })
    })
}

fn run(f: &Quadratic, bx: &ParameterBox, p0: &[f64], cfg: &TrustConfig) -> TrustResult {
    minimize(|p| Ok(f.eval(p)), p0, bx, cfg).unwrap()
}

fn step_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn radius_updates_follow_the_table((f, bx, p0) in instance()) {
        let cfg = TrustConfig::default();
        let (_, dmax) = cfg.radii(&bx).unwrap();
        let r = run(&f, &bx, &p0, &cfg);
        for rec in &r.log {
            let s = step_norm(&rec.trial, &rec.p);
            let expected = if rec.rho < cfg.eta1 {
                rec.delta / 4.0
            } else if rec.rho > cfg.eta2 && (s - rec.delta).abs() <= 1e-12 * rec.delta {
                (2.0 * rec.delta).min(dmax)
            } else {
                rec.delta
            };
            prop_assert_eq!(rec.delta_next, expected);
            prop_assert_eq!(rec.delta_next, next_radius(rec.rho, s, rec.delta, dmax, &cfg));
            prop_assert_eq!(rec.accepted, rec.rho > cfg.eta);
        }
    }

    #[test]
    fn accepted_values_never_increase((f, bx, p0) in instance()) {
        let r = run(&f, &bx, &p0, &TrustConfig::default());
        let mut last = f.eval(&p0).value;
        for rec in r.log.iter().filter(|x| x.accepted) {
            prop_assert!(rec.trial_value <= last + 1e-14 * last.abs().max(1.0));
            last = rec.trial_value;
        }
        prop_assert!(r.value <= f.eval(&p0).value);
    }

    #[test]
    fn iterates_stay_in_the_box((f, bx, p0) in instance()) {
        let r = run(&f, &bx, &p0, &TrustConfig::default());
        prop_assert!(bx.contains(&r.p_star));
        for rec in &r.log {
            prop_assert!(bx.contains(&rec.trial) && bx.contains(&rec.p));
            prop_assert!(step_norm(&rec.trial, &rec.p) <= rec.delta * (1.0 + 1e-12));
        }
    }

    #[test]
    fn exact_models_give_unit_ratio((f, bx, p0) in instance()) {
        let r = run(&f, &bx, &p0, &TrustConfig::default());
        for rec in r.log.iter().filter(|x| x.accepted) {
            prop_assert!((rec.rho - 1.0).abs() <= 1e-12 * (1.0 + 1.0 / (rec.value - rec.model_value).abs()),
                "rho = {}", rec.rho);
        }
        prop_assert_eq!(r.status, TrustStatus::Converged);
    }

    #[test]
    fn interior_minimizer_is_reached_in_one_step((f, bx, _p0) in instance()) {
        // shift the linear term so the minimizer is the box midpoint
        let mid = DVector::from_vec(bx.midpoint());
        let g = -(&f.q * &mid);
        let f = Quadratic { g, ..f };
        let start = bx.lerp(&vec![0.1; bx.dim()]);
        let cfg = TrustConfig { delta0: Some(bx.width()), ..TrustConfig::default() };
        let r = run(&f, &bx, &start, &cfg);
        prop_assert_eq!(r.status, TrustStatus::Converged);
        prop_assert_eq!(r.log.iter().filter(|x| x.accepted).count(), 1);
        prop_assert!(step_norm(&r.p_star, mid.as_slice()) < 1e-8, "{:?}", r.p_star);
    }

    #[test]
    fn maximize_is_negated_minimize((f, bx, p0) in instance()) {
        let neg = Quadratic { q: -f.q.clone(), g: -f.g.clone(), c: -f.c };
        let cfg = TrustConfig::default();
        let hi = maximize(|p| Ok(neg.eval(p)), &p0, &bx, &cfg).unwrap();
        let lo = run(&f, &bx, &p0, &cfg);
        prop_assert_eq!(hi.p_star, lo.p_star);
        prop_assert_eq!(hi.value, -lo.value);
    }
}
