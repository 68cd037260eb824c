use aegeo_core::catalog::{make_catalog_metric, MetricFamily};
use aegeo_core::chart::{Chart, ChartKind};
use aegeo_core::pipeline::{compactify, PipelineConfig};
use std::sync::Arc;

#[test]
fn dbg_flat_chain() {
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 512.0, 37, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40;
    config.solve.n_theta = 12;
    config.solve.n_phi = 24;
    let comp = compactify(&g, &config).unwrap();
    println!("ghat(0): {:?}", comp.g_hat_at_center);
    // probe phi_tilde along a ray
    if let Some(pt) = &comp.phi_tilde {
        for r in [0.002f64, 0.01, 0.05, 0.2, 0.4] {
            let p = [r * 0.6, r * 0.64, r * 0.48];
            let j = pt.jet2(p);
            println!("r={r}: phi_tilde = {} scale {}", j.val, comp.phi_tilde_scale);
        }
    }
    // probe ghat along a ray: should be delta inside 0.25
    for r in [0.002f64, 0.01, 0.05, 0.2, 0.3, 0.45] {
        let p = [r * 0.6, r * 0.64, r * 0.48];
        let v = comp.g_hat.value(p).unwrap();
        println!("r={r}: ghat00 = {:.12} ghat01 = {:.3e}", v[0][0], v[0][1]);
    }
}

#[test]
fn dbg_flat_chain2() {
    use aegeo_core::elliptic::harmonic::{harmonic_coordinates, SolveResolution};
    use aegeo_core::map::NumericMap;
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 512.0, 37, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40;
    config.solve.n_theta = 12;
    config.solve.n_phi = 24;
    let comp = compactify(&g, &config).unwrap();
    let mut solve = config.solve;
    solve.calibrate = true;
    let harm = harmonic_coordinates(&comp.g_hat, &solve).unwrap();
    println!("A = {:?}", harm.a_matrix);
    for r in [0.002f64, 0.01, 0.0625, 0.1, 0.2, 0.4] {
        let p = [r * 0.6, r * 0.64, r * 0.48];
        let y = harm.grid_map.value(p);
        let d = [(y[0]-p[0])/r, (y[1]-p[1])/r, (y[2]-p[2])/r];
        println!("r={r}: rel displacement = {:.3e} {:.3e} {:.3e}", d[0], d[1], d[2]);
    }
}

#[test]
fn dbg_flat_chain3() {
    use aegeo_core::elliptic::harmonic::{harmonic_coordinates, SolveResolution};
    use aegeo_core::map::NumericMap;
    let chart = Arc::new(Chart::annulus("z", ChartKind::AsymptoticZ, 1.0, 512.0, 37, 12, 24).unwrap());
    let g = make_catalog_metric(&MetricFamily::Euclidean, Some(chart)).unwrap();
    let mut config = PipelineConfig::default();
    config.solve.n_ell = 40; config.solve.n_theta = 12; config.solve.n_phi = 24;
    let comp = compactify(&g, &config).unwrap();
    let mut solve = config.solve;
    solve.calibrate = true;
    let harm = harmonic_coordinates(&comp.g_hat, &solve).unwrap();
    // raw map = normalized * A + center... probe raw scale per level:
    // q(rho) ~ y.x/|x|^2 averaged over directions
    for lev in [0usize, 1, 2, 3, 4, 6, 8, 12, 16, 20, 24, 28, 32, 36] {
        let rho = (f64::ln(1.0/512.0) + (f64::ln(0.5) - f64::ln(1.0/512.0)) * lev as f64 / 40.0).exp();
        let mut q = 0.0;
        let mut n = 0;
        for k in 0..24 {
            let th = std::f64::consts::PI * ((k % 6) as f64 + 0.5) / 6.0;
            let ph = 2.0 * std::f64::consts::PI * (k as f64) / 24.0;
            let p = [rho * th.sin() * ph.cos(), rho * th.sin() * ph.sin(), rho * th.cos()];
            let y = harm.grid_map.value(p);
            q += (y[0]*p[0]+y[1]*p[1]+y[2]*p[2]) / (rho*rho);
            n += 1;
        }
        println!("lev {lev} rho {rho:.5}: q = {:.8}", q / n as f64);
    }
}
