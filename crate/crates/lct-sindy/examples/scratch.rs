use lct_sindy::lct::ErlangKernel;
use lct_sindy::selection::*;
use lct_sindy::signals::SplitSpec;
use lct_sindy::simulate::*;
use std::time::Instant;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "table4".into());
    match which.as_str() {
        "table4" => table4(),
        "table2" => table2(),
        "ikeda" => ikeda(),
        "diag" => diag(),
        _ => panic!("unknown"),
    }
}

fn diag() {
    use lct_sindy::features::{FeatureExpr, Signal};
    use lct_sindy::lct::{integrate_chain, Channel};
    use lct_sindy::preprocess::{build_interpolant, savitzky_golay};
    use lct_sindy::regression::{FitFlags, SparseModel};
    use ndarray::Array2;

    let params = Hes1Params::baseline();
    let (data, chain_true) = simulate_hes1_full(&params, (3.0, 100.0), 400.0, 0.02).unwrap();
    let config = hes1_config();
    let smoothed = savitzky_golay(&data, &config.smoother).unwrap();

    // Smoothing deviation on clean data: edges vs interior.
    let n = data.len();
    let dev = |range: std::ops::Range<usize>| -> (f64, f64) {
        let mut dm: f64 = 0.0;
        let mut dp: f64 = 0.0;
        for i in range {
            dm = dm.max((smoothed.values[[i, 0]] - data.values[[i, 0]]).abs());
            dp = dp.max((smoothed.values[[i, 1]] - data.values[[i, 1]]).abs());
        }
        (dm, dp)
    };
    println!("edge0 dev (M,P):     {:?}", dev(0..800));
    println!("interior dev (M,P):  {:?}", dev(800..n - 800));
    println!("edgeN dev (M,P):     {:?}", dev(n - 800..n));
    println!("smoothed(0) = ({}, {})", smoothed.values[[0, 0]], smoothed.values[[0, 1]]);

    // Chain reconstruction bias vs the generator's own chain states.
    let interp = build_interpolant(&smoothed);
    let channel = Channel { interp: &interp, component: 1 };
    let chain = integrate_chain(&params.kernel, &channel, &data.times, None).unwrap();
    let z_est = chain.last_state();
    let zp = chain_true.ncols() - 1;
    let mut worst = (0.0f64, 0usize);
    for i in 0..n {
        let e = (z_est[i] - chain_true[[i, zp]]).abs();
        if e > worst.0 {
            worst = (e, i);
        }
    }
    println!("max |z_est - z_true| = {:.3e} at t={}", worst.0, data.times[worst.1]);

    // Ground-truth model through the scoring path.
    let exprs = vec![
        FeatureExpr::Monomial(vec![(Signal::Component(0), 1)]),
        FeatureExpr::Monomial(vec![(Signal::Component(1), 1)]),
        FeatureExpr::Hill { arg: Signal::Chain(0), p0: 100.0, n: 5.0 },
    ];
    let names = vec!["M".into(), "P".into(), "hill".into()];
    let mut coef = Array2::zeros((3, 2));
    coef[[0, 0]] = -0.03;
    coef[[2, 0]] = 1.0;
    coef[[0, 1]] = 2.0;
    coef[[1, 1]] = -0.03;
    let mut active = Array2::from_elem((3, 2), false);
    active[[0, 0]] = true;
    active[[2, 0]] = true;
    active[[0, 1]] = true;
    active[[1, 1]] = true;
    let truth = SparseModel {
        coefficients: coef,
        active,
        feature_names: names,
        feature_exprs: exprs,
        k: 4,
        flags: vec![FitFlags::default(); 2],
    };
    for (label, init) in [
        ("smoothed(0) init", vec![smoothed.values[[0, 0]], smoothed.values[[0, 1]]]),
        ("raw(0) init", vec![data.values[[0, 0]], data.values[[0, 1]]]),
    ] {
        let sim = simulate_identified(&truth, &[(params.kernel, 1)], &init, &data.times).unwrap();
        let half = n / 2;
        let mut rel = [0.0f64; 2];
        for j in 0..2 {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in half..n {
                num += (sim.series.values[[i, j]] - data.values[[i, j]]).powi(2);
                den += data.values[[i, j]].powi(2);
            }
            rel[j] = (num / den).sqrt();
        }
        println!("truth model val rel_error ({label}): {rel:?}");
    }
}

fn hes1_config() -> PipelineConfig {
    PipelineConfig {
        smoother: lct_sindy::preprocess::SmootherConfig { window_span: 0.5, poly_degree: 3 },
        stridge: lct_sindy::regression::STRidgeConfig { threshold: 0.2, ..Default::default() },
        library: LibraryConfig {
            poly_degree: 2,
            include_constant: true,
            hill_on_delayed: Some((100.0, 5.0)),
            ..Default::default()
        },
        chain_driver: 1,
        split: SplitSpec { fraction: 0.5 },
        ..Default::default()
    }
}

fn table4() {
    let t0 = Instant::now();
    let params = Hes1Params::baseline();
    let data = simulate_hes1(&params, (3.0, 100.0), 400.0, 0.02).unwrap();
    println!("generated N={} in {:?}", data.len(), t0.elapsed());

    let config = hes1_config();
    let grid = CandidateGrid {
        taus: (10..=25).map(f64::from).collect(),
        ps: vec![1, 2, 3, 5, 10, 50, 100],
        ..Default::default()
    };
    let mut config = config; config.library.poly_degree = 4;
    let t1 = Instant::now();
    let out = identify(&data, &grid, &config).unwrap();
    println!("sweep {} candidates in {:?}", out.leaderboard.len(), t1.elapsed());
    println!("winner tau*={} p*={:?} bic={:.4e}", out.tau_star, out.p_star, out.score.bic);
    println!("rel_error = {:?}", out.score.rel_error);
    println!("dM/dt terms: {:?}", out.model.terms(0));
    println!("dP/dt terms: {:?}", out.model.terms(1));
    for e in out.leaderboard.iter().take(8) {
        println!("  tau={} p={:?} k={} mse={:.3e} bic={:.6e}", e.tau, e.p, e.k, e.mse, e.bic);
    }
}

fn table2() {
    let t_end: f64 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(400.0);
    let thresh: f64 = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(0.2);
    println!("t_end={t_end} threshold={thresh}");
    let params = Hes1Params::baseline();
    let data = simulate_hes1(&params, (3.0, 100.0), t_end, 0.02).unwrap();
    let mut config = hes1_config();
    config.library.poly_degree = 1;
    config.stridge.threshold = thresh;
    let taus: Vec<f64> = (10..=25).map(f64::from).collect();
    let t1 = Instant::now();
    let out = identify_discrete_baseline(&data, &taus, &config).unwrap();
    println!("discrete sweep in {:?}", t1.elapsed());
    println!("winner tau*={} bic={:.4e}", out.tau_star, out.score.bic);
    println!("dM/dt terms: {:?}", out.model.terms(0));
    println!("dP/dt terms: {:?}", out.model.terms(1));
    let mut by_tau = out.leaderboard.clone();
    by_tau.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    for e in &by_tau {
        println!("  tau={} k={} mse={:.3e} bic={:.6e}", e.tau, e.k, e.mse, e.bic);
    }

    // Derivative-fit landscape for the same sweep.
    let mut dconfig = config;
    dconfig.criterion = Criterion::DerivError;
    let dout = identify_discrete_baseline(&data, &taus, &dconfig).unwrap();
    println!("deriv-criterion winner tau*={}", dout.tau_star);
    let mut by_tau = dout.leaderboard.clone();
    by_tau.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    for e in &by_tau {
        println!("  tau={} k={} deriv={:.5}", e.tau, e.k, e.deriv_error.unwrap());
    }
    println!("deriv winner dM terms: {:?}", dout.model.terms(0));

    // p = 100 data: discrete baseline should recover tau = 20 nearly exactly.
    let mut params100 = Hes1Params::baseline();
    params100.kernel = ErlangKernel::from_mean(100, 20.0).unwrap();
    let data100 = simulate_hes1(&params100, (3.0, 100.0), t_end, 0.02).unwrap();
    let out100 = identify_discrete_baseline(&data100, &taus, &config).unwrap();
    println!("p100 winner tau*={}", out100.tau_star);
    for e in out100.leaderboard.iter().take(6) {
        println!("  tau={} k={} mse={:.3e} bic={:.6e}", e.tau, e.k, e.mse, e.bic);
    }
    println!("dM/dt terms: {:?}", out100.model.terms(0));
    println!("dP/dt terms: {:?}", out100.model.terms(1));
}

fn ikeda() {
    let p: u32 = std::env::args().nth(2).map(|v| v.parse().unwrap()).unwrap_or(100);
    let span: f64 = std::env::args().nth(3).map(|v| v.parse().unwrap()).unwrap_or(0.5);
    let noise: f64 = std::env::args().nth(4).map(|v| v.parse().unwrap()).unwrap_or(0.0);
    println!("p={p} span={span} noise={noise}");
    let params = IkedaParams { alpha: 6.0, tau: 1.59 };
    let clean = simulate_ikeda(&params, 1.0, 70.0, 0.05).unwrap();
    let data = lct_sindy::signals::add_noise(&clean, &lct_sindy::signals::NoiseSpec { level: noise, seed: 7 }).unwrap();
    let config = PipelineConfig {
        smoother: lct_sindy::preprocess::SmootherConfig { window_span: span, poly_degree: 3 },
        stridge: lct_sindy::regression::STRidgeConfig { threshold: 0.2, ..Default::default() },
        library: LibraryConfig {
            poly_degree: 3,
            include_constant: true,
            sin_on_delayed: true,
            ..Default::default()
        },
        chain_driver: 0,
        criterion: Criterion::DerivError,
        ..Default::default()
    };
    let taus: Vec<f64> = (100..=200).map(|i| i as f64 / 100.0).collect();
    let grid = CandidateGrid { taus, ps: vec![p], ..Default::default() };
    let t1 = Instant::now();
    let out = derivative_error_select(&data, &grid, &config).unwrap();
    println!("ikeda sweep {} candidates in {:?}", out.leaderboard.len(), t1.elapsed());
    println!("winner tau*={} deriv_err={:?}", out.tau_star, out.score.deriv_error);
    println!("dx/dt terms: {:?}", out.model.terms(0));
    for e in out.leaderboard.iter().take(5) {
        println!("  tau={} k={} deriv={:?}", e.tau, e.k, e.deriv_error);
    }
}
