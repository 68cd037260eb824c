use aegeo_core::catalog::{make_catalog_metric, MetricFamily};
use aegeo_core::chart::{Chart, ChartKind};
use aegeo_core::pipeline::{run_main_expansion, PipelineConfig};
use std::sync::Arc;

#[test]
fn dbg_cf_ae() {
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 1024.0, 41, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::ConformallyFlatAe { c: 0.5 }, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40; config.solve.n_theta = 12; config.solve.n_phi = 24;
    let t0 = std::time::Instant::now();
    let report = run_main_expansion(&g, &config).unwrap();
    println!("elapsed {:?}", t0.elapsed());
    println!("C_fit = {}   (target 0.5, tol 2e-3)", report.expansion.c);
    println!("C_mass = {}  (target 0.5)", report.mass.c);
    println!("|E - 2C| = {:?}", report.expansion.energy_cross);
    println!("4C coeff = {} (target 2.0 within 1%)", report.four_c_coefficient);
    println!("rem exp = {} (>= 1.05)", report.remainder_exponent);
    println!("gamma exp = {}", report.gamma_decay_exponent);
    println!("alpha_hat = {} compatible {}", report.map_classification.alpha, report.map_classification.compatible);
    println!("E = {}", report.energy);
    for (r, u) in &report.u_samples { println!("r={r}: u-1 = {:.6e} (C/r = {:.6e})", u - 1.0, 0.5/r); }
    for s in &report.stages { println!("stage {}: {} ({})", s.name, s.status, s.detail); }
}
