//! Acceptance suite: one test per criterion, each printing a single PASS/FAIL
//! line (written straight to stdout so it shows without `--nocapture`).
//!
//! MNIST criteria read the IDX files from `XBARSIM_MNIST_DIR`, falling back
//! to the workspace `data/mnist`.

use std::io::Write;
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use xbarsim::bench::letter_dataset;
use xbarsim::crossbar::{Crossbar, ReadNoise};
use xbarsim::device::DeviceSpec;
use xbarsim::network::{Network, NetworkConfig, Weights};
use xbarsim::rng;
use xbarsim::training::{Arch, Engine, TrainHyper};
use xbarsim_harness::config::{TuningPattern, MNIST_ENV};
use xbarsim_harness::stats::{median, spearman};
use xbarsim_harness::{
    prepare, run_recipe, run_sweep, run_sweep_prepared, Axis, ExperimentConfig, Knob, Prepared,
    Recipe, SweepReport,
};

fn verdict(id: u32, title: &str, pass: bool, detail: &str) {
    let line = format!(
        "{} [{id:>2}] {title}: {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {id} ({title}) failed: {detail}");
}

fn config(recipe: Recipe) -> ExperimentConfig {
    ExperimentConfig::for_recipe(recipe)
}

#[test]
fn c01_vmm_matches_dense_product() {
    let start = Instant::now();
    let spec = DeviceSpec::ideal();
    let mut worst = 0.0f64;
    for k in 0..200u64 {
        let mut r = rng::rng(rng::derive(1, 0, k));
        let (rows, cols) = (r.random_range(1..=64), r.random_range(1..=64));
        let mut x = Crossbar::build(rows, cols, &spec, k).unwrap();
        let mut g = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                g[i * cols + j] = r.random_range(spec.g_min..=spec.g_max);
                x.force_conductance(i, j, g[i * cols + j]).unwrap();
            }
        }
        let v: Vec<f64> = (0..rows).map(|_| r.random_range(-0.2..=0.2)).collect();
        let got = x.vmm_currents(&v, spec.t_ref, &mut ReadNoise::off()).unwrap();
        for j in 0..cols {
            let exact: f64 = (0..rows).map(|i| g[i * cols + j] * v[i]).sum();
            let scale: f64 = (0..rows).map(|i| (g[i * cols + j] * v[i]).abs()).sum();
            worst = worst.max((got[j] - exact).abs() / scale);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        1,
        "VMM oracle equivalence",
        worst < 1e-9 && secs < 10.0,
        &format!("200 arrays up to 64x64, max relative error {worst:.2e}, {secs:.1} s"),
    );
}

#[test]
fn c02_write_verify_tuning() {
    let start = Instant::now();
    let mut cfg = config(Recipe::Tuning);
    cfg.device = DeviceSpec::default();
    cfg.tuning.pattern = TuningPattern::Random {
        rows: 20,
        cols: 20,
        g_lo: 10e-6,
        g_hi: 100e-6,
    };
    let rep = run_recipe(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let within = rep.median("within_fraction_working").unwrap();
    let max_err = rep.median("max_abs_error_converged").unwrap();
    let hist = rep.table("tuning_errors").unwrap();
    let hist_inside = hist.rows.iter().all(|r| {
        let (lo, hi): (f64, f64) = (r[1].parse().unwrap(), r[2].parse().unwrap());
        lo >= -5.0 && hi <= 5.0
    });
    verdict(
        2,
        "write-verify tuning",
        within >= 0.99 && max_err <= 0.05 && hist_inside && secs < 30.0,
        &format!(
            "{:.2}% of working cells within 5%, max converged error {:.3}%, {secs:.1} s",
            100.0 * within,
            100.0 * max_err
        ),
    );
}

/// Central 99% interval of Binomial(n, p), in counts.
fn binomial_interval(n: u64, p: f64) -> (u64, u64) {
    let mut pmf = (1.0 - p).powi(n as i32);
    let mut cdf = 0.0;
    let (mut lo, mut hi) = (None, n);
    for k in 0..=n {
        cdf += pmf;
        if lo.is_none() && cdf >= 0.005 {
            lo = Some(k);
        }
        if cdf >= 0.995 {
            hi = k;
            break;
        }
        pmf *= (n - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
    }
    (lo.unwrap_or(0), hi)
}

#[test]
fn c03_forming_statistics() {
    let cfg = config(Recipe::Forming);
    assert_eq!(cfg.device.forming_fail_prob, 0.1);
    let rep = run_recipe(&cfg).unwrap();
    let n = rep.median("voltage_devices").unwrap() as u64;
    let (lo, hi) = binomial_interval(n, 0.1);
    let rate = |m: &str| rep.median(&format!("{m}_intervention_rate")).unwrap();
    let (rv, ri) = (rate("voltage"), rate("current"));
    let inside = |r: f64| (lo as f64..=hi as f64).contains(&(r * n as f64).round());
    // two-proportion z test between the pulse modes
    let pooled = 0.5 * (rv + ri);
    let z = (rv - ri) / (pooled * (1.0 - pooled) * 2.0 / n as f64).sqrt();
    verdict(
        3,
        "forming statistics",
        n == 2000 && inside(rv) && inside(ri) && z.abs() < 2.576,
        &format!(
            "{n} devices per mode, intervention {:.2}% (voltage) / {:.2}% (current), 99% interval [{lo}, {hi}] devices, z = {z:.2}",
            100.0 * rv,
            100.0 * ri
        ),
    );
}

#[test]
fn c04_ex_situ_letters() {
    let start = Instant::now();
    let rep = run_recipe(&config(Recipe::ExSitu)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let sw = &rep.metrics["ex-situ_software_fidelity"].values;
    let hw = rep.median("ex-situ_train_fidelity").unwrap();
    let test = rep.median("ex-situ_test_fidelity").unwrap();
    verdict(
        4,
        "ex-situ letter task",
        sw.iter().all(|&f| f == 100.0) && (88.0..=100.0).contains(&hw) && secs < 120.0,
        &format!(
            "software 100% on {}/{} seeds, hardware median {hw:.1}%, test median {test:.1}% ({} flip patterns), {secs:.1} s",
            sw.iter().filter(|&&f| f == 100.0).count(),
            sw.len(),
            rep.notes["test_patterns"]
        ),
    );
}

#[test]
fn c05_defect_aware_letters() {
    let rep = run_recipe(&config(Recipe::DefectAware)).unwrap();
    let da = &rep.metrics["defect-aware_train_fidelity"].values;
    let perfect = da.iter().filter(|&&f| f == 100.0).count();
    verdict(
        5,
        "defect-aware ex-situ",
        perfect >= 15,
        &format!(
            "100% training fidelity on {perfect}/{} seeds with 10% stuck cells (plain ex-situ median {:.1}%)",
            da.len(),
            rep.median("ex-situ_train_fidelity").unwrap()
        ),
    );
}

#[test]
fn c06_in_situ_gap() {
    let rep = run_recipe(&config(Recipe::InSitu)).unwrap();
    let insitu = rep.median("in-situ_train_fidelity").unwrap();
    let exsitu = rep.median("ex-situ_train_fidelity").unwrap();
    let mut ideal = config(Recipe::InSitu);
    ideal.device.vset_sigma = 0.0;
    ideal.device.vreset_sigma = 0.0;
    let anchor = run_recipe(&ideal).unwrap().median("in-situ_train_fidelity").unwrap();
    verdict(
        6,
        "in-situ vs ex-situ gap",
        (55.0..=85.0).contains(&insitu) && exsitu >= 95.0 && anchor == 100.0,
        &format!("3 classes, sigma 0.15 V: in-situ median {insitu:.1}%, ex-situ {exsitu:.1}%; sigma 0: in-situ {anchor:.1}%"),
    );
}

fn mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist")))
}

fn mnist_config() -> ExperimentConfig {
    let mut cfg = config(Recipe::Mnist);
    cfg.mnist.dir = Some(mnist_dir());
    cfg
}

/// The precursor is trained once and shared by every MNIST criterion.
fn mnist_prep() -> &'static Prepared {
    static PREP: OnceLock<Prepared> = OnceLock::new();
    PREP.get_or_init(|| prepare(&mnist_config()).expect("MNIST data and precursor"))
}

struct TimedSweep {
    report: SweepReport,
    secs: f64,
}

/// Import-only sweeps are cheap, so the fault-sampling sweeps use more seeds.
const CHEAP_SEEDS: u64 = 10;

fn mnist_sweep(axes: &[Axis], hybrid: bool, seeds: Option<u64>) -> TimedSweep {
    let mut cfg = mnist_config();
    if let Some(n) = seeds {
        cfg.seeds = (0..n).collect();
    }
    if !hybrid {
        cfg.mnist.hybrid = None;
    }
    let start = Instant::now();
    let report = run_sweep_prepared(&cfg, axes, mnist_prep()).unwrap();
    TimedSweep {
        report,
        secs: start.elapsed().as_secs_f64(),
    }
}

fn stuck_sweep() -> &'static TimedSweep {
    static SWEEP: OnceLock<TimedSweep> = OnceLock::new();
    SWEEP.get_or_init(|| mnist_sweep(&[Axis::new(Knob::StuckFraction, &["0", "0.05", "0.1", "0.2"])], true, None))
}

#[test]
fn c07_hybrid_beats_ex_situ_under_defects() {
    let letters = run_recipe(&config(Recipe::Hybrid)).unwrap();
    let hy = letters.median("hybrid_train_fidelity").unwrap();
    let ex = letters.median("ex-situ_train_fidelity").unwrap();
    let s = &stuck_sweep().report;
    let (hyb, imp) = (s.medians("hybrid_error"), s.medians("import_only_error"));
    let mnist_ok = (1..4).all(|i| hyb[i] <= imp[i]);
    verdict(
        7,
        "hybrid superiority under defects",
        hy >= ex && mnist_ok,
        &format!(
            "letters 10% stuck: hybrid {hy:.1}% vs ex-situ {ex:.1}%; MNIST error at stuck 0.05/0.1/0.2: hybrid {:.1}/{:.1}/{:.1}% vs import-only {:.1}/{:.1}/{:.1}%",
            hyb[1], hyb[2], hyb[3], imp[1], imp[2], imp[3]
        ),
    );
}

fn rho(values: &[&str], errors: &[f64]) -> f64 {
    let x: Vec<f64> = values.iter().map(|v| v.parse().unwrap()).collect();
    spearman(&x, errors)
}

#[test]
fn c08_mnist_trends() {
    let Prepared::Mnist(data) = mnist_prep() else { unreachable!() };
    let baseline = data.software_error;
    let mut ok = baseline <= 5.0;
    let mut parts = vec![format!(
        "software error {baseline:.1}% ({} train / {} test images)",
        data.train.len(),
        data.test.len()
    )];
    let check = |ok: &mut bool, parts: &mut Vec<String>, name: &str, values: &[&str], errors: Vec<f64>, secs: f64| {
        let r = rho(values, &errors);
        *ok &= r >= 0.9 && secs < 600.0;
        let e: Vec<String> = errors.iter().map(|x| format!("{x:.1}")).collect();
        parts.push(format!("{name} rho {r:.2} [{}] {secs:.0}s", e.join(" ")));
    };

    let acc = ["0", "0.05", "0.1", "0.2", "0.3"];
    let s = mnist_sweep(&[Axis::new(Knob::ImportAccuracy, &acc)], false, Some(CHEAP_SEEDS));
    check(&mut ok, &mut parts, "import accuracy", &acc, s.report.medians("import_only_error"), s.secs);

    let stuck = ["0", "0.05", "0.1", "0.2"];
    let s = stuck_sweep();
    check(&mut ok, &mut parts, "stuck cells (import-only)", &stuck, s.report.medians("import_only_error"), s.secs);
    check(&mut ok, &mut parts, "stuck cells (hybrid)", &stuck, s.report.medians("hybrid_error"), s.secs);

    let bounds = ["0", "0.2", "0.4", "0.6"];
    let s = mnist_sweep(&[Axis::new(Knob::BoundSigma, &bounds)], true, None);
    check(&mut ok, &mut parts, "R_ON/R_OFF variation (hybrid)", &bounds, s.report.medians("hybrid_error"), s.secs);

    let sig = ["0", "0.05", "0.1", "0.15", "0.2"];
    let s = mnist_sweep(
        &[
            Axis::new(Knob::NoisePhase, &["import", "both"]),
            Axis::new(Knob::NoiseSigma, &sig),
        ],
        false,
        None,
    );
    let all = s.report.medians("import_only_error");
    let (imp, both) = (all[..5].to_vec(), all[5..].to_vec());
    check(&mut ok, &mut parts, "noise at import", &sig, imp.clone(), s.secs);
    check(&mut ok, &mut parts, "noise at import and inference", &sig, both.clone(), s.secs);
    let ordered = (1..5).all(|i| imp[i] < both[i]);
    ok &= ordered;
    parts.push(format!("import < both at every sigma > 0: {ordered}"));

    let neurons = ["0", "0.05", "0.1", "0.2"];
    let s = mnist_sweep(&[Axis::new(Knob::NeuronFraction, &neurons)], false, Some(CHEAP_SEEDS));
    check(&mut ok, &mut parts, "stuck neurons", &neurons, s.report.medians("import_only_error"), s.secs);

    verdict(8, "MNIST trends", ok, &parts.join("; "));
}

#[test]
fn c09_temperature_compensation() {
    let mut cfg = config(Recipe::Temperature);
    cfg.seeds = (0..10).collect();
    cfg.temperature.delta_ts = vec![50.0];
    let rep = run_recipe(&cfg).unwrap();
    let exact = rep.metrics["constant-alpha_residual_ratio"].values.iter().fold(0.0f64, |m, x| m.max(*x));
    let resid = rep.metrics["high_residual_ratio"].values.iter().fold(0.0f64, |m, x| m.max(*x));
    let low = median(&rep.metrics["low_residual_ratio"].values);
    verdict(
        9,
        "temperature compensation",
        exact < 1e-12 && resid <= 0.10,
        &format!(
            "dT 50 K over 10 seeds: constant alpha residual/fixed {exact:.1e}; conductance-dependent alpha, G_BIAS 90 uS: worst residual {:.1}% of fixed-resistor drift (25 uS mapping: {:.1}%)",
            100.0 * resid,
            100.0 * low
        ),
    );
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn written_csvs(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn determinism() -> (bool, String) {
    let mut cfg = config(Recipe::Hybrid);
    cfg.seeds = (0..6).collect();
    let run = |threads| {
        let dir = tempfile::tempdir().unwrap();
        let rep = in_pool(threads, || run_recipe(&cfg).unwrap());
        rep.write(&cfg, dir.path(), 0.0).unwrap();
        (written_csvs(dir.path()), std::fs::read(dir.path().join("summary.json")).unwrap())
    };
    let (a, b) = (run(1), run(4));
    let mut sweep_cfg = config(Recipe::ExSitu);
    sweep_cfg.seeds = (0..4).collect();
    let axes = [Axis::new(Knob::StuckFraction, &["0", "0.1"])];
    let sweep = |threads| {
        in_pool(threads, || run_sweep(&sweep_cfg, &axes).unwrap())
            .table()
            .to_csv()
            .unwrap()
    };
    let same = a == b && !a.0.is_empty() && sweep(1) == sweep(3);
    (same, format!("{} recipe CSVs and a sweep CSV identical across 1/4 and 1/3 threads: {same}", a.0.len()))
}

fn slot(w: &mut Weights, layer: usize, k: usize) -> &mut f64 {
    if layer == 0 {
        &mut w.w1.as_mut_slice()[k]
    } else {
        &mut w.w2.as_mut_slice()[k]
    }
}

fn gradient_check() -> (bool, String) {
    let (train, _) = letter_dataset(None, 4).unwrap();
    let net = Network::assemble(&NetworkConfig::letters(4), &DeviceSpec::ideal(), 0).unwrap();
    let arch = Arch::of(&net);
    let e = Engine::new(&arch, None).unwrap();
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for seed in 0..10u64 {
        let hyper = TrainHyper {
            seed,
            init_scale: 1.0,
            target_v: 4.0,
            ..Default::default()
        };
        let w = e.initial_weights(&hyper);
        let i = (seed as usize * 7) % train.len();
        let (x, label) = (&train.inputs[i], train.labels[i]);
        let (l0, g) = e.loss_and_grad(&w, x, label, &hyper).unwrap();
        if l0 == 0.0 {
            continue;
        }
        let fd = |layer: usize, k: usize, h: f64| {
            let mut p = w.clone();
            let base = *slot(&mut p, layer, k);
            let mut at = |d: f64| {
                *slot(&mut p, layer, k) = base + d;
                e.loss(&p, x, label, &hyper).unwrap()
            };
            (at(h) - at(-h)) / (2.0 * h)
        };
        for layer in 0..2 {
            let (n, an) = if layer == 0 { (w.w1.len(), &g.w1) } else { (w.w2.len(), &g.w2) };
            for k in 0..n {
                let an = an.as_slice()[k];
                let (f1, f2) = (fd(layer, k, 1e-6), fd(layer, k, 1e-7));
                // step-size disagreement marks an activation kink inside the stencil
                if (f1 - f2).abs() > 1e-6 * f1.abs().max(f2.abs()).max(1e-9) {
                    continue;
                }
                let scale = an.abs().max(f1.abs());
                if scale < 1e-4 * l0.abs().max(1.0) {
                    continue;
                }
                worst = worst.max(((an - f1) / scale).abs());
                checked += 1;
            }
        }
    }
    (
        worst <= 1e-5 && checked > 100,
        format!("{checked} gradient components, max relative error {worst:.1e}"),
    )
}

fn half_select_safety() -> (bool, String) {
    let spec = DeviceSpec::default();
    let mut x = Crossbar::build(8, 8, &spec, 3).unwrap();
    let min_thr = x
        .cells()
        .iter()
        .fold(f64::INFINITY, |m, c| m.min(c.v_set).min(c.v_reset));
    let mut r = rng::rng(99);
    let mut disturbed = 0usize;
    for _ in 0..100_000 {
        let (row, col) = (r.random_range(0..8), r.random_range(0..8));
        let v = r.random_range(0.0..2.0 * min_thr) * if r.random_bool(0.5) { 1.0 } else { -1.0 };
        let before = x.conductances();
        x.write_pulse(row, col, v, r.random_range(1e-7..1e-4)).unwrap();
        let after = x.conductances();
        disturbed += before
            .indexed()
            .filter(|&(i, j, g)| (i, j) != (row, col) && after.get(i, j) != g)
            .count();
    }
    (
        disturbed == 0,
        format!("1e5 pulses below twice the smallest threshold ({min_thr:.3} V), {disturbed} half-selected cells changed"),
    )
}

#[test]
fn c10_determinism_gradients_half_select() {
    let (d_ok, d) = determinism();
    let (g_ok, g) = gradient_check();
    let (h_ok, h) = half_select_safety();
    verdict(
        10,
        "determinism, gradients, half-select safety",
        d_ok && g_ok && h_ok,
        &format!("{d}; {g}; {h}"),
    );
}
