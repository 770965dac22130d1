//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p predrec --test acceptance`. Criteria listed in
//! `KNOWN_BLOCKED` are still run at their stated thresholds and reported as
//! FAIL; the process only exits non-zero when the set of failures differs
//! from that list.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use predrec::cli::auto_grid;
use predrec::harness;
use predrec::ingest::{ingest_csv, ColumnSpec};
use predrec_core::copula::{self, InitialDensity, PredictiveState, YGridSpec};
use predrec_core::kernel::KernelFamily;
use predrec_core::npmle::{npmle_fit, NpmleOptions};
use predrec_core::pr::PrRecursion;
use predrec_core::robust::{prem_fit, RegressionOptions};
use predrec_core::semiparam::{prml_optimize, PrmlOptions, ThetaBox};
use predrec_core::sim::{self, EstimatorSpec, SimScenario};
use predrec_core::twogroups::{self, TwoGroupsOptions};
use predrec_core::{
    perm, pr_fit, pr_fit_averaged, pr_step, GridSpec, Kernel, MixingDensity, MixingGrid, Observation, WeightSchedule,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Criteria that cannot be met; see the project notes for the analysis.
const KNOWN_BLOCKED: &[u32] = &[5];

type Draw = Box<dyn Fn(&mut ChaCha8Rng) -> Observation>;
type Criterion = (u32, &'static str, Duration, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn grid(spec: &str) -> Arc<MixingGrid> {
    Arc::new(spec.parse::<GridSpec>().unwrap().build().unwrap())
}

fn uniform(spec: &str) -> MixingDensity {
    MixingDensity::uniform(grid(spec))
}

/// Non-uniform starting density so the one-step check is not trivially symmetric.
fn tilted(g: Arc<MixingGrid>) -> MixingDensity {
    let values = (0..g.len()).map(|j| 1.0 + 0.5 * (j as f64 * 0.37).sin()).collect();
    MixingDensity::from_values(g, values).unwrap()
}

fn c1_one_step_dp() -> Outcome {
    let alpha = 2.0;
    let sched = WeightSchedule::dirichlet(alpha).unwrap();
    let cases: Vec<(Kernel, Arc<MixingGrid>, Observation)> = vec![
        (Kernel::Poisson, grid("0:20:100"), Observation::new(3.0)),
        (Kernel::gauss(1.0).unwrap(), grid("-5:5:100"), Observation::new(0.7)),
        (Kernel::Binomial, grid("0:1:100"), Observation::binomial(19, 52)),
        (Kernel::GaussScale, grid("0.1:10:100:log"), Observation::new(1.3)),
        (
            Kernel::two_groups(0.1, 3.0, 1.2).unwrap(),
            Arc::new(twogroups::default_grid(50).unwrap()),
            Observation::new(2.0),
        ),
    ];
    let mut worst = 0.0_f64;
    for (kernel, g, obs) in cases {
        let p0 = tilted(g.clone());
        let fit = pr_fit(&[obs], &kernel, &p0, &sched).unwrap();
        // posterior mean of a DP(α, P0) after one draw: (α P0 + P0(·|Y)) / (α + 1)
        let k: Vec<f64> = g.nodes().iter().map(|&u| kernel.eval(&obs, u).unwrap()).collect();
        let f0: f64 = (0..g.len()).map(|j| k[j] * p0.values()[j] * g.weights()[j]).sum();
        for ((&p, &kj), &got) in p0.values().iter().zip(&k).zip(fit.density.values()) {
            let want = (alpha * p + kj * p / f0) / (alpha + 1.0);
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
    }
    outcome(
        worst <= 1e-12,
        format!("max scaled deviation {worst:.2e} over 5 kernel families (tol 1e-12)"),
    )
}

fn c2_hand_oracle() -> Outcome {
    let g = Arc::new(MixingGrid::atoms(&[1.0, 2.0]).unwrap());
    let p = g.normalize(vec![0.5, 0.5]).unwrap();
    let next = pr_step(&p, &Observation::new(0.0), &Kernel::Poisson, 0.5).unwrap();
    let m = next.masses();
    let dev = (m[0] - 0.6156).abs().max((m[1] - 0.3844).abs());
    outcome(
        dev <= 1e-4,
        format!("masses ({:.6}, {:.6}), max deviation {dev:.1e} (tol 1e-4)", m[0], m[1]),
    )
}

fn median_curve(name: &str, est: &EstimatorSpec, checkpoints: &[usize], reps: usize) -> Vec<(usize, f64)> {
    let runs = harness::replicates(0, reps, jobs(), |seed| {
        sim::convergence_curve(&SimScenario::named(name, 1, seed).unwrap(), est, checkpoints).unwrap()
    })
    .unwrap();
    checkpoints
        .iter()
        .enumerate()
        .map(|(k, &n)| (n, median(runs.iter().map(|(_, c)| c[k].1).collect())))
        .collect()
}

fn c3_consistency() -> Outcome {
    let est = EstimatorSpec {
        kernel: Kernel::Poisson,
        p0: uniform("0:25:400"),
        schedule: WeightSchedule::default(),
    };
    let m = median_curve("poisson-2atom", &est, &[0, 200, 2000], 50);
    let (k0, k200, k2000) = (m[0].1, m[1].1, m[2].1);
    outcome(
        k2000 < 0.5 * k200 && k2000 < k0,
        format!(
            "median KL: f0 {k0:.4}, n=200 {k200:.5}, n=2000 {k2000:.5} (ratio {:.3}, need < 0.5)",
            k2000 / k200
        ),
    )
}

fn c4_rate() -> Outcome {
    let sched = WeightSchedule::new(1.0, 0.75).unwrap();
    let cps = [100, 200, 400, 800, 1600, 3200, 6400];
    let poisson = EstimatorSpec {
        kernel: Kernel::Poisson,
        p0: uniform("0:25:400"),
        schedule: sched,
    };
    let gauss = EstimatorSpec {
        kernel: Kernel::gauss(1.0).unwrap(),
        p0: uniform("-5:5:400"),
        schedule: sched,
    };
    let sp = sim::loglog_slope(&median_curve("poisson-point", &poisson, &cps, 50));
    let sg = sim::loglog_slope(&median_curve("gauss-point", &gauss, &cps, 50));
    let ok = |s: f64| (-0.6..=-0.15).contains(&s);
    outcome(
        ok(sp) && ok(sg),
        format!("log-log KL slope, gamma 0.75: poisson-point {sp:.3}, gauss-point {sg:.3} (need [-0.6, -0.15])"),
    )
}

fn c5_pr_vs_npmle() -> Outcome {
    let s = SimScenario::named("poisson-zip", 600, 0).unwrap();
    let data = sim::simulate(&s);
    let g = grid("0:25:400");
    let fit = pr_fit_averaged(
        &data,
        &Kernel::Poisson,
        &MixingDensity::uniform(g.clone()),
        &WeightSchedule::default(),
        25,
        0,
    )
    .unwrap();
    let l_pr = fit.log_likelihood(&data).unwrap();
    let st = npmle_fit(&data, &Kernel::Poisson, g, &NpmleOptions::default()).unwrap();
    let l_np = st.log_likelihood();
    let l_true: f64 = data.iter().map(|o| s.true_density(o.y).ln()).sum();
    let ratio = (l_pr - l_np).exp();
    outcome(
        ratio >= 0.9,
        format!(
            "L_PR/L_NPMLE = {ratio:.4} (need >= 0.9); for reference L_true/L_NPMLE = {:.4}",
            (l_true - l_np).exp()
        ),
    )
}

fn c6_npmle_gradient() -> Outcome {
    let data = sim::simulate(&SimScenario::named("poisson-zip", 600, 11).unwrap());
    let st = npmle_fit(&data, &Kernel::Poisson, grid("0:25:400"), &NpmleOptions::default()).unwrap();
    let masses = st.density.masses();
    let on_support = st
        .gradient
        .iter()
        .zip(&masses)
        .filter(|(_, &q)| q >= 1e-6)
        .map(|(g, _)| (g - 1.0).abs())
        .fold(0.0_f64, f64::max);
    outcome(
        st.sup_gradient <= 1.0 + 1e-3 && on_support <= 1e-2,
        format!(
            "sup gradient {:.6} (<= 1.001), max |g-1| on nodes with mass >= 1e-6: {on_support:.2e} (<= 1e-2), {} iterations",
            st.sup_gradient, st.iterations
        ),
    )
}

fn prml_sigma_hits(gamma: f64) -> (usize, f64) {
    let sched = WeightSchedule::new(1.0, gamma).unwrap();
    let bounds = ThetaBox::interval(0.3, 3.0).unwrap();
    let p0 = uniform("-5:5:400");
    let runs = harness::replicates(1000, 50, jobs(), |seed| {
        let data = sim::simulate(&SimScenario::named("gauss-point", 1000, seed).unwrap());
        let opts = PrmlOptions {
            seed,
            ..PrmlOptions::default()
        };
        prml_optimize(&data, KernelFamily::Gauss, &bounds, &p0, &sched, &opts)
            .unwrap()
            .theta[0]
    })
    .unwrap();
    let sig: Vec<f64> = runs.into_iter().map(|r| r.1).collect();
    (sig.iter().filter(|s| (0.85..=1.15).contains(*s)).count(), median(sig))
}

fn c7_prml() -> Outcome {
    let (hits, med) = prml_sigma_hits(0.6);
    let (hits_default, med_default) = prml_sigma_hits(0.67);
    let galaxy = galaxy_reference();
    outcome(
        hits >= 45,
        format!(
            "gamma 0.6: {hits}/50 in [0.85, 1.15], median {med:.3} (need >= 45); \
             info: gamma 0.67 gives {hits_default}/50, median {med_default:.3}; galaxy sigma {galaxy:.3} (reference 0.82)"
        ),
    )
}

/// Galaxy velocities in file order, box [0.3, 3], default schedule.
fn galaxy_reference() -> f64 {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets/galaxy.csv");
    let data = ingest_csv(&path, &ColumnSpec::default()).unwrap();
    let spec = auto_grid(&Kernel::gauss(1.0).unwrap(), &data.responses());
    let p0 = MixingDensity::uniform(Arc::new(spec.build().unwrap()));
    let bounds = ThetaBox::interval(0.3, 3.0).unwrap();
    let res = prml_optimize(
        &data.observations,
        KernelFamily::Gauss,
        &bounds,
        &p0,
        &WeightSchedule::default(),
        &PrmlOptions::default(),
    )
    .unwrap();
    res.theta[0]
}

fn c8_two_groups() -> Outcome {
    let g = Arc::new(twogroups::default_grid(100).unwrap());
    let runs = harness::replicates(500, 50, jobs(), |seed| {
        let draws = sim::simulate_latent(&SimScenario::named("twogroups", 5000, seed).unwrap());
        let z: Vec<f64> = draws.iter().map(|d| d.1.y).collect();
        let fit = twogroups::twogroups_fit(
            &z,
            &twogroups::default_box(),
            &g,
            &WeightSchedule::default(),
            &TwoGroupsOptions::default(),
        )
        .unwrap();
        let dec = twogroups::fdr_test(&fit, &z, 0.1).unwrap();
        let false_rej = dec
            .reject
            .iter()
            .zip(&draws)
            .filter(|(r, d)| **r && d.0 == Some(0.0))
            .count();
        let fdp = false_rej as f64 / dec.n_rejected().max(1) as f64;
        let probes_ok = (0..10_000).all(|k| {
            let y = -12.0 + 24.0 * k as f64 / 9_999.0;
            (0.0..=1.0).contains(&twogroups::local_fdr(&fit, y))
        });
        (fit.pi_hat, fdp, probes_ok)
    })
    .unwrap();
    let pis: Vec<f64> = runs.iter().map(|r| r.1 .0).collect();
    let pi_med = median(pis.clone());
    let pi_each = pis.iter().filter(|p| (0.85..=0.95).contains(*p)).count();
    let fdp_ok = runs.iter().filter(|r| r.1 .1 <= 0.15).count();
    let probes = runs.iter().all(|r| r.1 .2);
    outcome(
        (0.85..=0.95).contains(&pi_med) && probes && fdp_ok >= 45,
        format!(
            "median pi_hat {pi_med:.4} in [0.85, 0.95] ({pi_each}/50 individually); fdr in [0, 1] at 1e4 probes: {probes}; \
             FDP <= 0.15 in {fdp_ok}/50 (need >= 45)"
        ),
    )
}

fn c9_robust() -> Outcome {
    let runs = harness::replicates(7000, 50, jobs(), |seed| {
        let d = sim::simulate_regression(200, &[1.0, 2.0, -1.0], 0.1, 10.0, seed).unwrap();
        let fit = prem_fit(&d.x, &d.y, &WeightSchedule::default(), &RegressionOptions::default()).unwrap();
        let err = |b: &[f64]| b.iter().zip(&d.beta).map(|(a, t)| (a - t).powi(2)).sum::<f64>().sqrt();
        err(&fit.beta) < err(&fit.beta_ols)
    })
    .unwrap();
    let wins = runs.iter().filter(|r| r.1).count();

    let exact = sim::simulate_regression(60, &[0.5, -1.5, 2.0], 0.0, 1.0, 3).unwrap();
    let y = exact.x.mul_vec(&exact.beta);
    let fit = prem_fit(&exact.x, &y, &WeightSchedule::default(), &RegressionOptions::default()).unwrap();
    let dev = fit
        .beta
        .iter()
        .zip(&exact.beta)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    outcome(
        wins >= 40 && dev <= 1e-8,
        format!("PR-EM beats OLS in {wins}/50 (need >= 40); zero-noise fixed point error {dev:.1e} (tol 1e-8)"),
    )
}

fn c10_copula() -> Outcome {
    let mut st = PredictiveState::new(
        -8.0,
        8.0,
        801,
        &InitialDensity::Normal { mean: 0.0, sd: 1.0 },
        &[],
        0.0,
        WeightSchedule::default(),
    )
    .unwrap();
    let before = st.density().to_vec();
    for y in [0.4, -1.1, 2.2, 0.0] {
        st.update(y).unwrap();
    }
    let ident = st
        .density()
        .iter()
        .zip(&before)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);

    let st = PredictiveState::new(
        -8.0,
        8.0,
        1601,
        &InitialDensity::Normal { mean: 0.0, sd: 1.0 },
        &[],
        0.9,
        WeightSchedule::new(1.0, 1.0).unwrap(),
    )
    .unwrap();
    let raw = st.raw_update(0.0).unwrap();
    let point = raw.values[800];

    let s = SimScenario::named("gauss-bimodal", 500, 0).unwrap();
    let ys: Vec<f64> = sim::simulate(&s).iter().map(|o| o.y).collect();
    let ygrid = YGridSpec::Explicit {
        lo: -10.0,
        hi: 10.0,
        m: 2001,
    };
    let f0 = InitialDensity::Normal { mean: 0.0, sd: 3.0 };
    let start = copula::copula_fit(&[], &f0, 0.9, WeightSchedule::default(), ygrid).unwrap();
    let end = copula::copula_fit(&ys, &f0, 0.9, WeightSchedule::default(), ygrid).unwrap();
    let kl = |state: &PredictiveState| -> f64 {
        let h = 20.0 / 2000.0;
        state
            .y_grid()
            .iter()
            .zip(state.density())
            .enumerate()
            .map(|(j, (&y, &f))| {
                let t = s.true_density(y);
                let w = if j == 0 || j == 2000 { 0.5 * h } else { h };
                if t > 0.0 {
                    w * t * (t / f).ln()
                } else {
                    0.0
                }
            })
            .sum()
    };
    let (k0, k1) = (kl(&start), kl(&end));
    outcome(
        ident <= 1e-12 && (point - 0.6571).abs() <= 1e-3 && k1 < k0,
        format!(
            "rho=0 drift {ident:.1e} (tol 1e-12); pointwise {point:.5} vs 0.6571 (tol 1e-3); KL {k0:.4} -> {k1:.4}"
        ),
    )
}

fn c11_invariants() -> Outcome {
    let mut rng = perm::rng(11);
    let sched = WeightSchedule::default();
    let mut notes = Vec::new();

    // normalization after every step
    let mut norm_dev = 0.0_f64;
    let families: Vec<(Kernel, &str, Draw)> = vec![
        (
            Kernel::Poisson,
            "0:20:200",
            Box::new(|r| Observation::new(r.random_range(0..15) as f64)),
        ),
        (
            Kernel::gauss(1.0).unwrap(),
            "-4:4:200",
            Box::new(|r| Observation::new(r.random_range(-3.0..3.0))),
        ),
        (
            Kernel::Binomial,
            "0:1:200",
            Box::new(|r| {
                let n = r.random_range(1..40);
                Observation::binomial(r.random_range(0..=n), n)
            }),
        ),
        (
            Kernel::GaussScale,
            "0.1:10:200:log",
            Box::new(|r| Observation::new(r.random_range(-4.0..4.0))),
        ),
        (
            Kernel::two_groups(0.0, 3.0, 1.0).unwrap(),
            "-1:1:100+atom@0",
            Box::new(|r| Observation::new(r.random_range(-5.0..5.0))),
        ),
    ];
    for (kernel, spec, draw) in &families {
        let mut rec = PrRecursion::new(*kernel, &uniform(spec)).unwrap();
        for i in 1..=300 {
            let obs = draw(&mut rng);
            rec.step(&obs, sched.weight(i), i - 1).unwrap();
            norm_dev = norm_dev.max((rec.density().total_mass() - 1.0).abs());
        }
    }
    let norm_ok = norm_dev <= 1e-10;
    notes.push(format!("mass drift {norm_dev:.1e}"));

    // zeros of p0 stay zero and positive values stay positive
    let g = grid("0:20:200");
    let values: Vec<f64> = (0..g.len()).map(|j| if j % 3 == 0 { 0.0 } else { 1.0 }).collect();
    let p0 = MixingDensity::from_values(g, values).unwrap();
    let data: Vec<Observation> = (0..500)
        .map(|_| Observation::new(rng.random_range(0..12) as f64))
        .collect();
    let fit = pr_fit(&data, &Kernel::Poisson, &p0, &sched).unwrap();
    let support_ok = fit
        .density
        .values()
        .iter()
        .zip(p0.values())
        .all(|(a, b)| (*a == 0.0) == (*b == 0.0));
    notes.push(format!("support preserved {support_ok}"));

    // exhaustive averaging ignores input order
    let mut perm_ok = true;
    for (kernel, spec, ys) in [
        (Kernel::Poisson, "0:20:120", vec![4.0, 0.0, 9.0, 1.0, 2.0]),
        (Kernel::gauss(1.0).unwrap(), "-4:4:120", vec![0.3, -1.7, 2.2, 0.0, 1.1]),
    ] {
        let p0 = uniform(spec);
        let a: Vec<Observation> = ys.iter().map(|&y| Observation::new(y)).collect();
        let mut b = a.clone();
        for _ in 0..5 {
            perm::shuffle(&mut b, &mut rng);
            let fa = pr_fit_averaged(&a, &kernel, &p0, &sched, 120, 1).unwrap();
            let fb = pr_fit_averaged(&b, &kernel, &p0, &sched, 120, 9).unwrap();
            perm_ok &= fa.density == fb.density;
        }
    }
    notes.push(format!("permutation invariance {perm_ok}"));

    // rejection sets grow with the cutoff
    let draws = sim::simulate(&SimScenario::named("twogroups", 800, 2).unwrap());
    let z: Vec<f64> = draws.iter().map(|o| o.y).collect();
    let tg = twogroups::twogroups_fit(
        &z,
        &twogroups::default_box(),
        &Arc::new(twogroups::default_grid(60).unwrap()),
        &sched,
        &TwoGroupsOptions::default(),
    )
    .unwrap();
    let cutoffs = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.9];
    let decisions: Vec<Vec<bool>> = cutoffs
        .iter()
        .map(|&c| twogroups::fdr_test(&tg, &z, c).unwrap().reject)
        .collect();
    let mono_ok = decisions
        .windows(2)
        .all(|w| w[0].iter().zip(&w[1]).all(|(lo, hi)| !*lo || *hi));
    notes.push(format!("fdr decisions nested {mono_ok}"));

    outcome(norm_ok && support_ok && perm_ok && mono_ok, notes.join("; "))
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        (1, "one-step DP correspondence", Duration::from_secs(1), c1_one_step_dp),
        (2, "hand-oracle PR step", Duration::from_secs(1), c2_hand_oracle),
        (3, "KL consistency trend", Duration::from_secs(60), c3_consistency),
        (4, "KL rate slope", Duration::from_secs(120), c4_rate),
        (
            5,
            "PR vs NPMLE likelihood ratio",
            Duration::from_secs(60),
            c5_pr_vs_npmle,
        ),
        (
            6,
            "NPMLE gradient criterion",
            Duration::from_secs(30),
            c6_npmle_gradient,
        ),
        (7, "PRML recovery of sigma", Duration::from_secs(300), c7_prml),
        (8, "two-groups fdr", Duration::from_secs(300), c8_two_groups),
        (9, "robust regression", Duration::from_secs(120), c9_robust),
        (10, "copula predictive", Duration::from_secs(30), c10_copula),
        (11, "invariant sweep", Duration::from_secs(60), c11_invariants),
    ];
    let filter: Option<u32> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = Vec::new();
    for (id, name, budget, run) in criteria {
        if filter.is_some_and(|f| f != id) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let elapsed = t.elapsed();
        let pass = out.pass && elapsed <= budget;
        if !pass {
            failed.push(id);
        }
        let tag = match (pass, KNOWN_BLOCKED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known blocker)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id:>2} {tag}: {name}: {} [{:.1}s / {}s]",
            out.detail,
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    let expected: Vec<u32> = KNOWN_BLOCKED
        .iter()
        .copied()
        .filter(|id| filter.is_none_or(|f| f == *id))
        .collect();
    if failed != expected {
        eprintln!("acceptance failures {failed:?} differ from the known blockers {expected:?}");
        std::process::exit(1);
    }
}
