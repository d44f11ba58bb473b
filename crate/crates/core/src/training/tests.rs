use super::*;
use crate::bench::letter_dataset;
use crate::device::DeviceSpec;
use crate::network::NetworkConfig;
use proptest::prelude::*;
use rand::Rng;

fn letters(n: usize) -> (Dataset, Dataset) {
    letter_dataset(None, n).unwrap()
}

fn net(spec: &DeviceSpec, outputs: usize, seed: u64) -> Network {
    Network::assemble(&NetworkConfig::letters(outputs), spec, seed).unwrap()
}

#[test]
fn precursor_reaches_full_training_fidelity() {
    let (train, _) = letters(4);
    let n = net(&DeviceSpec::ideal(), 4, 1);
    let (w, trace) = train_precursor(&Arch::of(&n), &train, &TrainHyper::default()).unwrap();
    assert_eq!(trace.last().unwrap().fidelity, 100.0, "{:?}", trace.last());
    let soft = Arch::of(&n).software(&w).evaluate(&train).unwrap();
    assert_eq!(soft.fidelity, 100.0);
}

#[test]
fn zero_epochs_return_initial_weights() {
    let (train, _) = letters(4);
    let arch = Arch::of(&net(&DeviceSpec::ideal(), 4, 1));
    let hyper = TrainHyper {
        epochs: 0,
        early_stop_fidelity: None,
        ..Default::default()
    };
    let (w, trace) = train_precursor(&arch, &train, &hyper).unwrap();
    let e = Engine::new(&arch, None).unwrap();
    assert_eq!(w, e.initial_weights(&hyper));
    assert_eq!(trace.len(), 1);
}

#[test]
fn empty_constraints_reduce_to_precursor() {
    let (train, _) = letters(4);
    let arch = Arch::of(&net(&DeviceSpec::ideal(), 4, 1));
    let hyper = TrainHyper::default();
    let a = train_precursor(&arch, &train, &hyper).unwrap();
    let b = train_defect_aware(&arch, &train, None, &hyper).unwrap();
    assert_eq!(a.0, b.0);
}

#[test]
fn clean_hardware_measures_no_constraints() {
    let mut n = net(&DeviceSpec::ideal(), 4, 2);
    let (c, f1, _) = measure_constraints(&mut n, &TuneConfig::default()).unwrap();
    assert!(c.is_none());
    assert!(f1.iter().all(|d| *d == Defect::None));
}

#[test]
fn exact_import_matches_software() {
    let (train, test) = letters(4);
    let mut n = net(&DeviceSpec::ideal(), 4, 3);
    let arch = Arch::of(&n);
    let (w, _) = train_precursor(&arch, &train, &TrainHyper::default()).unwrap();
    import_weights(&mut n, &w, &ImportMethod::Exact, 0.0, 0).unwrap();
    let soft = arch.software(&w);
    for d in [&train, &test] {
        assert_eq!(
            n.evaluate(d, 25.0, 0).unwrap().fidelity,
            soft.evaluate(d).unwrap().fidelity
        );
    }
}

#[test]
fn zero_noise_is_identity() {
    let mut n = net(&DeviceSpec::ideal(), 4, 3);
    assert_eq!(apply_weight_noise(&mut n, 0.0, NoisePhase::Both).unwrap(), 0.0);
    assert_eq!(n.read_noise_sigma, 0.0);
    assert_eq!(apply_weight_noise(&mut n, 0.1, NoisePhase::Import).unwrap(), 0.1);
    assert_eq!(n.read_noise_sigma, 0.0);
    assert_eq!(apply_weight_noise(&mut n, 0.1, NoisePhase::Inference).unwrap(), 0.0);
    assert_eq!(n.read_noise_sigma, 0.1);
}

#[test]
fn inference_noise_depends_on_seed() {
    let (train, _) = letters(4);
    let mut n = net(&DeviceSpec::ideal(), 4, 3);
    let w = random_weights(&n, 0.5, 1);
    n.program_ideal(&w).unwrap();
    n.read_noise_sigma = 0.3;
    let p = |s| n.predict(&train, 25.0, s).unwrap();
    assert_eq!(p(1), p(1));
    assert!((0..5).any(|s| p(s) != p(s + 10)));
}

#[test]
fn insitu_fixed_point_and_single_weight_pulses() {
    let (train, _) = letters(4);
    let mut n = net(&DeviceSpec::ideal(), 4, 4);
    let arch = Arch::of(&n);
    let (w, _) = train_precursor(&arch, &train, &TrainHyper {
        learning_rate: 0.05,
        target_v: 1.0,
        ..Default::default()
    })
    .unwrap();
    n.program_ideal(&w).unwrap();
    // smallest signed output margin over the batch; any target below it has zero loss
    let t = n.spec().t_ref;
    let margin = train
        .inputs
        .iter()
        .zip(&train.labels)
        .flat_map(|(x, &label)| {
            let out = n.infer(x, t).unwrap().outputs;
            out.into_iter()
                .enumerate()
                .map(move |(k, o)| if k == label { o } else { -o })
        })
        .fold(f64::INFINITY, f64::min);
    assert!(margin > 0.0, "precursor margin {margin}");
    let before = (n.xbar1.conductances(), n.xbar2.conductances());
    let cfg = InSituConfig {
        target_v: 0.9 * margin,
        stop_when_perfect: false,
        ..Default::default()
    };
    let o = insitu_epoch(&mut n, &train, &cfg).unwrap();
    assert_eq!(o.errors, 0);
    assert_eq!((o.set_pulses, o.reset_pulses), (0, 0));
    assert_eq!(before, (n.xbar1.conductances(), n.xbar2.conductances()));
}

#[test]
fn one_pattern_one_output_moves_pairs_with_one_pulse_each() {
    let cfg_net = NetworkConfig {
        n_inputs: 2,
        n_hidden: 1,
        n_outputs: 1,
        ..NetworkConfig::default()
    };
    let mut n = Network::assemble(&cfg_net, &DeviceSpec::ideal(), 1).unwrap();
    n.program_mid().unwrap();
    let data = Dataset::new(vec![vec![1.0, 0.0]], vec![0], 1).unwrap();
    let cfg = InSituConfig {
        stop_when_perfect: false,
        ..Default::default()
    };
    // hidden output is 0 at mid-range, so only the layer-2 bias weight moves
    let before = n.xbar2.conductances();
    let o = insitu_epoch(&mut n, &data, &cfg).unwrap();
    let after = n.xbar2.conductances();
    assert_eq!((o.set_pulses, o.reset_pulses), (1, 1));
    assert!(after.get(1, 0) > before.get(1, 0));
    assert!(after.get(1, 1) < before.get(1, 1));
    assert_eq!(after.get(0, 0), before.get(0, 0));
}

#[test]
fn insitu_with_ideal_devices_learns_letters() {
    let (train, _) = letters(3);
    let spec = DeviceSpec {
        vset_sigma: 0.0,
        vreset_sigma: 0.0,
        ..DeviceSpec::ideal()
    };
    let n = net(&spec, 3, 5);
    let (_, rep) = run_scheme(Scheme::InSitu, n, &train, None, &SchemeConfig::default(), 5).unwrap();
    assert_eq!(rep.train_fidelity, 100.0, "{:?}", rep.insitu_trace.last());
}

#[test]
fn hybrid_without_epochs_equals_exsitu() {
    let (train, _) = letters(4);
    let mut cfg = SchemeConfig::default();
    cfg.hybrid.epochs = 0;
    let a = run_scheme(Scheme::ExSitu, net(&DeviceSpec::default(), 4, 6), &train, None, &cfg, 6).unwrap();
    let b = run_scheme(Scheme::Hybrid, net(&DeviceSpec::default(), 4, 6), &train, None, &cfg, 6).unwrap();
    assert_eq!(a.0.xbar1.conductances(), b.0.xbar1.conductances());
    assert_eq!(a.1.train_fidelity, b.1.train_fidelity);
}

#[test]
fn reports_are_deterministic() {
    let (train, _) = letters(4);
    let run = || {
        let mut r = run_scheme(Scheme::ExSitu, net(&DeviceSpec::default(), 4, 7), &train, None, &SchemeConfig::default(), 7)
            .unwrap()
            .1;
        r.wall_time_s = 0.0;
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(run(), run());
}

fn small_arch(seed: u64) -> Arch {
    let cfg = NetworkConfig {
        n_inputs: 3,
        n_hidden: 4,
        n_outputs: 2,
        ..NetworkConfig::default()
    };
    let mut a = Arch::of(&Network::assemble(&cfg, &DeviceSpec::ideal(), seed).unwrap());
    // larger feedback keeps the neurons busy in both regions
    for p in a.hidden.iter_mut().chain(a.output.iter_mut()) {
        p.r_f = 4000.0;
    }
    a
}

fn slot(w: &mut Weights, layer: usize, k: usize) -> &mut f64 {
    if layer == 0 {
        &mut w.w1.as_mut_slice()[k]
    } else {
        &mut w.w2.as_mut_slice()[k]
    }
}

fn fd_check(arch: &Arch, constraints: Option<&Constraints>, seed: u64, loss: Loss) -> std::result::Result<(), TestCaseError> {
    let e = Engine::new(arch, constraints).unwrap();
    let hyper = TrainHyper {
        seed,
        init_scale: 1.0,
        loss,
        target_v: 4.0,
        ..Default::default()
    };
    let w = e.initial_weights(&hyper);
    let mut r = rng::rng(seed ^ 0xabc);
    let x: Vec<f64> = (0..3).map(|_| r.random_range(0.0..1.0)).collect();
    let label = r.random_range(0..2);
    let (l0, g) = e.loss_and_grad(&w, &x, label, &hyper).unwrap();
    prop_assume!(l0 > 0.0);
    let fd = |layer: usize, k: usize, h: f64| {
        let mut p = w.clone();
        let base = *slot(&mut p, layer, k);
        let mut at = |d: f64| {
            *slot(&mut p, layer, k) = base + d;
            e.loss(&p, &x, label, &hyper).unwrap()
        };
        (at(h) - at(-h)) / (2.0 * h)
    };
    let mut checked = 0;
    for layer in 0..2 {
        let n = if layer == 0 { w.w1.len() } else { w.w2.len() };
        for k in 0..n {
            let an = if layer == 0 { g.w1.as_slice()[k] } else { g.w2.as_slice()[k] };
            let (f1, f2) = (fd(layer, k, 1e-6), fd(layer, k, 1e-7));
            // disagreeing step sizes mean an activation kink inside the stencil
            if (f1 - f2).abs() > 1e-6 * f1.abs().max(f2.abs()).max(1e-9) {
                continue;
            }
            let scale = an.abs().max(f1.abs());
            // below this, cancellation noise of the h = 1e-6 stencil exceeds the tolerance
            if scale < 1e-4 * l0.abs().max(1.0) {
                continue;
            }
            prop_assert!(((an - f1) / scale).abs() <= 1e-5, "layer {} k {} an {} fd {}", layer, k, an, f1);
            checked += 1;
        }
    }
    prop_assert!(checked > 0);
    Ok(())
}

fn asym_constraints(arch: &Arch, seed: u64) -> Constraints {
    let mut r = rng::rng(seed);
    let mut layer = |rows: usize, n: usize, scale: f64| {
        let flags = Grid::from_fn(rows, 2 * n, |_, _| match r.random_range(0..10) {
            0 => Defect::StuckOn,
            1 => Defect::StuckOff,
            _ => Defect::None,
        });
        let measured = Grid::from_fn(rows, 2 * n, |rr, c| match flags.get(rr, c) {
            Defect::StuckOn => 104e-6,
            Defect::StuckOff => 10.4e-6,
            Defect::None => 55e-6,
        });
        let asym = Grid::from_fn(rows, 2 * n, |_, _| r.random_range(2.0..15.0));
        LayerConstraints::from_maps(&arch.config, scale, &flags, &measured, &asym, 0.2).unwrap()
    };
    Constraints {
        layer1: layer(arch.config.rows1(), arch.config.n_hidden, arch.scale1),
        layer2: layer(arch.config.rows2(), arch.config.n_outputs, arch.scale2),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn precursor_gradient_matches_finite_differences(seed in 0u64..10_000) {
        fd_check(&small_arch(seed), None, seed, Loss::SquaredError)?;
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences(seed in 0u64..10_000) {
        fd_check(&small_arch(seed), None, seed, Loss::CrossEntropySoftmaxReadout)?;
    }

    #[test]
    fn defect_aware_gradient_matches_finite_differences(seed in 0u64..10_000) {
        let arch = small_arch(seed);
        let c = asym_constraints(&arch, seed);
        fd_check(&arch, Some(&c), seed, Loss::SquaredError)?;
    }

    #[test]
    fn manhattan_step_stays_in_bounds(seed in 0u64..1000) {
        let (train, _) = letters(4);
        let mut n = net(&DeviceSpec::default(), 4, seed);
        n.program_ideal(&random_weights(&n, 0.8, seed)).unwrap();
        let before = (n.xbar1.conductances(), n.xbar2.conductances());
        let cfg = InSituConfig { stop_when_perfect: false, ..Default::default() };
        insitu_epoch(&mut n, &train, &cfg).unwrap();
        let spec = DeviceSpec::default();
        for (x, b) in [(&n.xbar1, &before.0), (&n.xbar2, &before.1)] {
            for (r, c, &g) in x.conductances().indexed() {
                prop_assert!(g >= spec.g_min && g <= spec.g_max);
                // at most one selected pulse; half-select disturb needs a threshold below v/2
                let cell = x.cell(r, c);
                if cell.v_set <= 0.5 * cfg.v_pulse_set || cell.v_reset <= 0.5 * cfg.v_pulse_reset {
                    continue;
                }
                let od = (cfg.v_pulse_set - cell.v_set).max(cfg.v_pulse_reset - cell.v_reset).max(0.0);
                let rate = spec.beta_set.max(spec.beta_reset);
                prop_assert!((g - b.get(r, c)).abs() <= rate * od * cfg.width * (1.0 + 1e-12) + 1e-18);
            }
        }
    }
}
