use expoloss::transform::{sigma, sigma_deriv, TransformParams};
use proptest::prelude::*;

const ES: [f64; 3] = [0.6, 0.75, 1.0];
const CS: [f64; 3] = [0.0, 0.005, 0.5];

fn grid(n: usize, lo: f64, hi: f64) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
}

#[test]
fn continuous_across_threshold() {
    for &e in &ES {
        for &c in &CS {
            let p = TransformParams::new(e, c).unwrap();
            let above = sigma(c * (1.0 + 1e-9), &p).unwrap();
            let below = sigma(c * (1.0 - 1e-9), &p).unwrap();
            assert!(
                (above - below).abs() < 1e-7 * c.powf(e).max(1.0),
                "e={e} c={c}"
            );
            let above = sigma(-c * (1.0 + 1e-9), &p).unwrap();
            let below = sigma(-c * (1.0 - 1e-9), &p).unwrap();
            assert!((above - below).abs() < 1e-7 * c.powf(e).max(1.0));
        }
    }
}

#[test]
fn exactly_odd() {
    for &e in &ES {
        for &c in &CS {
            let p = TransformParams::new(e, c).unwrap();
            for x in grid(10_000, -10.0, 10.0) {
                let a = sigma(x, &p).unwrap();
                let b = sigma(-x, &p).unwrap();
                assert_eq!(a.to_bits(), (-b).to_bits(), "x={x} e={e} c={c}");
            }
        }
    }
}

#[test]
fn strictly_increasing_on_grid() {
    for &e in &ES {
        for &c in &CS {
            let p = TransformParams::new(e, c).unwrap();
            let vals: Vec<f64> = grid(10_000, -10.0, 10.0)
                .map(|x| sigma(x, &p).unwrap())
                .collect();
            assert!(vals.windows(2).all(|w| w[0] < w[1]), "e={e} c={c}");
        }
    }
}

#[test]
fn identity_when_e_is_one() {
    for &c in &CS {
        let p = TransformParams::new(1.0, c).unwrap();
        for x in grid(10_000, -10.0, 10.0) {
            assert!((sigma(x, &p).unwrap() - x).abs() <= 1e-12);
            assert_eq!(sigma_deriv(x, &p).unwrap(), 1.0);
        }
    }
}

#[test]
fn derivative_matches_central_differences() {
    for &e in &ES {
        for &c in &CS {
            let p = TransformParams::new(e, c).unwrap();
            for x in grid(10_000, -10.0, 10.0) {
                if (x - c).abs().min((x + c).abs()) <= 1e-3 || x.abs() <= 1e-3 {
                    continue;
                }
                // relative step keeps truncation error small near the origin
                let h = 1e-5 * x.abs().max(1e-2);
                let fd = (sigma(x + h, &p).unwrap() - sigma(x - h, &p).unwrap()) / (2.0 * h);
                let an = sigma_deriv(x, &p).unwrap();
                let rel = (fd - an).abs() / an.abs();
                assert!(rel <= 1e-6, "x={x} e={e} c={c} fd={fd} an={an}");
            }
        }
    }
}

#[test]
fn contraction_outside_unit_interval() {
    for e in [0.0, 0.3, 0.6, 0.75, 0.99] {
        for &c in &[0.0, 0.005, 0.5, 2.0] {
            let p = TransformParams::new(e, c).unwrap();
            let lo = c.max(1.0);
            for x in grid(2_000, lo, lo + 50.0) {
                for s in [x, -x] {
                    assert!(sigma(s, &p).unwrap().abs() <= s.abs());
                    assert!(sigma_deriv(s, &p).unwrap() < 1.0, "x={s} e={e} c={c}");
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn monotone_on_random_pairs(e in 0.01f64..=1.0, c in 0.0f64..2.0, a in -50.0f64..50.0, b in -50.0f64..50.0) {
        prop_assume!((a - b).abs() > 1e-6);
        let p = TransformParams::new(e, c).unwrap();
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(sigma(lo, &p).unwrap() < sigma(hi, &p).unwrap());
    }

    #[test]
    fn odd_on_random_inputs(e in 0.0f64..=1.0, c in 0.0f64..2.0, x in -1e6f64..1e6) {
        let p = TransformParams::new(e, c).unwrap();
        prop_assert_eq!(sigma(-x, &p).unwrap(), -sigma(x, &p).unwrap());
        prop_assert_eq!(sigma_deriv(-x, &p).unwrap(), sigma_deriv(x, &p).unwrap());
    }
}
