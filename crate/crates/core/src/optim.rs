//! Derivative-free Nelder-Mead simplex minimisation with seeded restarts.
//!
//! Coefficients follow the dimension-adaptive scheme of Gao and Han (2012):
//! reflection 1, expansion `1 + 2/n`, contraction `0.75 - 1/(2n)`,
//! shrink `1 - 1/n`. A run stops when every vertex lies within
//! `xtol_rel * max(1, |best_i|)` of the best vertex in every coordinate, or
//! when the evaluation budget is spent.

use crate::rng::Xoshiro256;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    pub xtol_rel: f64,
    /// Additional runs started from the incumbent with a fresh random simplex.
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 50_000,
            xtol_rel: 1e-8,
            restarts: 3,
            seed: 0x5EED,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    /// The run that produced `x` met the simplex-size criterion.
    pub converged: bool,
    pub runs: Vec<RunSummary>,
}

pub fn minimize<F>(f: F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum
where
    F: Fn(&[f64]) -> f64,
{
    assert_eq!(x0.len(), step.len(), "start and step dimensions differ");
    let mut rng = Xoshiro256::new(opts.seed);
    let mut runs = Vec::with_capacity(opts.restarts + 1);

    let (mut best_x, mut best_f, first) = run(&f, x0, step, opts);
    let mut best_converged = first.converged;
    let mut evals = first.evals;
    runs.push(first);

    for _ in 0..opts.restarts {
        let jittered: Vec<f64> = step
            .iter()
            .map(|s| {
                let scale = 0.5 + rng.next_f64();
                if rng.next_f64() < 0.5 {
                    -s * scale
                } else {
                    s * scale
                }
            })
            .collect();
        let (x, fx, summary) = run(&f, &best_x, &jittered, opts);
        evals += summary.evals;
        if fx < best_f || (fx == best_f && summary.converged && !best_converged) {
            best_x = x;
            best_f = fx;
            best_converged = summary.converged;
        } else if fx == best_f {
            best_converged |= summary.converged;
        }
        runs.push(summary);
    }
    Minimum {
        x: best_x,
        f: best_f,
        evals,
        converged: best_converged,
        runs,
    }
}

fn run<F>(f: &F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> (Vec<f64>, f64, RunSummary)
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let nf = n.max(1) as f64;
    let (alpha, gamma, rho, shrink) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let evals = std::cell::Cell::new(0usize);
    let eval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += if step[i] != 0.0 { step[i] } else { 1e-3 * x0[i].abs().max(1.0) };
        simplex.push(v);
    }
    let mut values: Vec<f64> = simplex.iter().map(|v| eval(v)).collect();
    let mut converged = false;

    if n == 0 {
        let fx = values[0];
        return (x0.to_vec(), fx, RunSummary { f: fx, evals: evals.get(), converged: true });
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut centroid = vec![0.0; n];
    loop {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let size_ok = simplex.iter().all(|v| {
            v.iter()
                .zip(&simplex[best])
                .all(|(a, b)| (a - b).abs() <= opts.xtol_rel * b.abs().max(1.0))
        });
        if size_ok {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }

        centroid.iter_mut().for_each(|c| *c = 0.0);
        for &i in &order[..n] {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };

        let reflected = along(alpha);
        let f_r = eval(&reflected);
        if f_r < values[best] {
            let expanded = along(alpha * gamma);
            let f_e = eval(&expanded);
            if f_e < f_r {
                simplex[worst] = expanded;
                values[worst] = f_e;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_r;
            }
            continue;
        }
        if f_r < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_r;
            continue;
        }
        let (contracted, f_c, accept) = if f_r < values[worst] {
            let c = along(alpha * rho);
            let fc = eval(&c);
            let ok = fc <= f_r;
            (c, fc, ok)
        } else {
            let c = along(-rho);
            let fc = eval(&c);
            let ok = fc < values[worst];
            (c, fc, ok)
        };
        if accept {
            simplex[worst] = contracted;
            values[worst] = f_c;
            continue;
        }
        let anchor = simplex[best].clone();
        for &i in &order[1..] {
            for (x, a) in simplex[i].iter_mut().zip(&anchor) {
                *x = a + shrink * (*x - a);
            }
            values[i] = eval(&simplex[i]);
        }
    }

    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).expect("non-empty simplex");
    let fx = values[best];
    (simplex[best].clone(), fx, RunSummary { f: fx, evals: evals.get(), converged })
}
