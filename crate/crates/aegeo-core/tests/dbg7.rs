use aegeo_core::catalog::{make_catalog_metric, MetricFamily};
use aegeo_core::chart::{Chart, ChartKind};
use aegeo_core::pipeline::{compactify, PipelineConfig};
use aegeo_core::elliptic::harmonic::harmonic_coordinates;
use aegeo_core::map::NumericMap;
use std::sync::Arc;

#[test]
fn dbg_norm_quantities() {
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 512.0, 37, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40; config.solve.n_theta = 12; config.solve.n_phi = 24;
    let comp = compactify(&g, &config).unwrap();
    let mut solve = config.solve;
    solve.calibrate = true;
    let harm = harmonic_coordinates(&comp.g_hat, &solve).unwrap();
    println!("A = {:?}", harm.a_matrix);
    println!("center = {:?}", harm.grid_map.center);
    let p = [0.006, 0.0064, 0.0048];
    let raw_v = harm.grid_map.grid.value(p);
    let raw_j = harm.grid_map.grid.jacobian(p);
    println!("raw value ratio: {:?}", [raw_v[0]/p[0], raw_v[1]/p[1], raw_v[2]/p[2]]);
    println!("raw jac diag: {:?}", [raw_j[0][0], raw_j[1][1], raw_j[2][2]]);
    let v = harm.grid_map.value(p);
    let j = harm.grid_map.jacobian(p);
    println!("norm value ratio: {:?}", [v[0]/p[0], v[1]/p[1], v[2]/p[2]]);
    println!("norm jac diag: {:?}", [j[0][0], j[1][1], j[2][2]]);
}
