use aegeo_core::catalog::{make_catalog_metric, MetricFamily};
use aegeo_core::chart::{Chart, ChartKind};
use aegeo_core::pipeline::{run_main_expansion, PipelineConfig};
use std::sync::Arc;

#[test]
fn dbg_flat_gamma() {
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 1024.0, 41, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40; config.solve.n_theta = 12; config.solve.n_phi = 24;
    config.alpha_min = -100.0;
    let report = run_main_expansion(&g, &config).unwrap();
    println!("gamma exp = {}", report.gamma_decay_exponent);
    println!("C_fit = {:e}  C_mass = {:e}", report.expansion.c, report.mass.c);
    println!("4C = {:e} rem exp = {}", report.four_c_coefficient, report.remainder_exponent);
    for (r, m, sup) in &report.shell_samples {
        println!("r={r}: trace dev {m:.3e} sup rem {sup:.3e}");
    }
    for (r, u) in &report.u_samples {
        println!("r={r}: u-1 = {:.6e}", u - 1.0);
    }
    for s in &report.stages { println!("stage {}: {} ({})", s.name, s.status, s.detail); }
}
