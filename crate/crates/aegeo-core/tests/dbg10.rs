use aegeo_core::catalog::{make_catalog_metric, MetricFamily};
use aegeo_core::chart::{Chart, ChartKind};
use aegeo_core::pipeline::{compactify, PipelineConfig};
use aegeo_core::elliptic::harmonic::harmonic_coordinates;
use aegeo_core::map::NumericMap;
use std::sync::Arc;

#[test]
fn dbg_dev_profile() {
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 1024.0, 41, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40; config.solve.n_theta = 12; config.solve.n_phi = 24;
    let comp = compactify(&g, &config).unwrap();
    let mut solve = config.solve;
    solve.calibrate = true;
    let harm = harmonic_coordinates(&comp.g_hat, &solve).unwrap();
    for &rho in &[0.002f64, 0.004, 0.0078, 0.0156, 0.03, 0.0625, 0.125, 0.25] {
        let mut radial = 0.0;
        let mut norm = 0.0;
        let mut n = 0;
        for k in 0..48 {
            let th = std::f64::consts::PI * ((k % 8) as f64 + 0.5) / 8.0;
            let ph = 2.0 * std::f64::consts::PI * ((k / 8) as f64) / 6.0;
            let p = [rho * th.sin() * ph.cos(), rho * th.sin() * ph.sin(), rho * th.cos()];
            let y = harm.grid_map.value(p);
            let d = [y[0]-p[0], y[1]-p[1], y[2]-p[2]];
            radial += (d[0]*p[0]+d[1]*p[1]+d[2]*p[2])/rho;
            norm += (d[0]*d[0]+d[1]*d[1]+d[2]*d[2]).sqrt();
            n += 1;
        }
        println!("rho={rho}: mean radial dev = {:+.3e}  mean |dev| = {:.3e}", radial/n as f64, norm/n as f64);
    }
}
