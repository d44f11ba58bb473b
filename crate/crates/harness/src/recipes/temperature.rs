//! Output drift of the single-ended multiplier versus temperature, with fixed
//! resistor and memristor feedback, for high and low G_BIAS mappings, plus a
//! constant-alpha reference where memristive feedback cancels exactly.

use xbarsim::device::DeviceSpec;
use xbarsim::neuron::DriftStudy;

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::report::{num, SeedOutcome, Table};

pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let setup = &cfg.temperature;
    let high = DriftStudy {
        seed,
        ..setup.study.clone()
    };
    let low = DriftStudy {
        g_bias: setup.low_g_bias,
        ..high.clone()
    };
    let flat = DeviceSpec {
        alpha_exponent: 0.0,
        ..cfg.device.clone()
    };
    let runs = [
        ("high", &cfg.device, &high),
        ("low", &cfg.device, &low),
        ("constant-alpha", &flat, &high),
    ];
    let mut out = SeedOutcome::new(seed);
    let mut table = Table::new("drift", &["delta_t", "mapping", "feedback", "max_drift_v"]);
    let dt_max = setup.delta_ts.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    for (mapping, spec, study) in runs {
        let points = study.run(spec, &setup.delta_ts)?;
        for p in &points {
            table.push(vec![num(p.delta_t), mapping.into(), "fixed-resistor".into(), num(p.fixed_resistor)]);
            table.push(vec![num(p.delta_t), mapping.into(), "memristor".into(), num(p.memristor)]);
        }
        let worst = study.run(spec, &[dt_max])?[0];
        out.metric(&format!("{mapping}_fixed_drift_v"), worst.fixed_resistor);
        out.metric(&format!("{mapping}_memristor_drift_v"), worst.memristor);
        if worst.fixed_resistor > 0.0 {
            out.metric(&format!("{mapping}_residual_ratio"), worst.memristor / worst.fixed_resistor);
        }
    }
    out.tables = vec![table];
    Ok(out)
}
