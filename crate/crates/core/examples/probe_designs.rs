//! Exploratory probe of the standard 9→5 design pipeline (not shipped
//! functionality; a scratch harness for sizing the experiment defaults).

use carray::combiner::{materialize, CombiningMatrix, PhaseParametrization};
use carray::manifold::{ArrayGeometry, AzimuthGrid};
use carray::performance::*;
use carray::scf_design::{closed_form_design, optimize_scf, DesignTarget, ScfOptions};
use carray::simulate::{design_metric, CcdfMetric, MetricGrids, Scenario};

fn metrics(phi: &CombiningMatrix, geom: &ArrayGeometry, label: &str) -> (f64, f64, f64) {
    let scenario = Scenario::single_source(0.0, 0.0, 0.0, 1).unwrap();
    let grids = MetricGrids::default();
    let crb = design_metric(phi, geom, CcdfMetric::Crb, &scenario, &grids).unwrap();
    let msl = design_metric(phi, geom, CcdfMetric::MeanSidelobe, &scenario, &grids).unwrap();
    let grid = AzimuthGrid::uniform(360).unwrap();
    let mut worst_pd = 0.0f64;
    for &t in &theta0_grid(90) {
        let pd = carray::simulate::analytic_pd(
            phi,
            geom,
            &Scenario::single_source(t, 0.0, 0.0, 1).unwrap(),
            64,
            MainlobeDef::NullToNull,
            &grid,
        )
        .unwrap();
        worst_pd = worst_pd.max(pd);
    }
    println!("{label}: worstCRB={crb:.4} meanSL={msl:.4} worstPd={worst_pd:.4}");
    (crb, msl, worst_pd)
}

/// Structured matrix carrying the entrywise phases of an arbitrary matrix.
fn phase_projection(w: &carray::CMat, eta: f64) -> CombiningMatrix {
    let phases = w.mapv(|z| z.arg().rem_euclid(std::f64::consts::TAU));
    materialize(&PhaseParametrization::fully_meshed(phases, eta)).unwrap()
}

fn main() {
    let geom = ArrayGeometry::uca(9, 0.65).unwrap();
    let reference = ArrayGeometry::uca(5, 0.65).unwrap();
    let design_grid = AzimuthGrid::uniform(360).unwrap();
    let a = carray::manifold::manifold_matrix(&geom, &design_grid);
    let opts = ScfOptions::default();

    let kappa = 9.0 / 5.0;
    let t_scaled = {
        let b = carray::manifold::manifold_matrix(&reference, &design_grid);
        let t = carray::linalg::adjoint(&b).dot(&b).mapv(|z| z * kappa);
        DesignTarget::from_matrix(design_grid.clone(), t).unwrap()
    };
    let ideal = DesignTarget::ideal(design_grid.clone(), 9.0);

    for (label, target) in [("ref-scaled", &t_scaled), ("ideal", &ideal)] {
        let t0 = std::time::Instant::now();
        let r = optimize_scf(&geom, target, 5, 5, 1.0, 100, 7, &opts).unwrap();
        println!("SCF {label} 100 starts: cost={:.2e} ({:?})", r.cost, t0.elapsed());
        metrics(&r.matrix, &geom, &format!("SCF {label} x100"));

        // Closed-form phase seed, locally refined.
        let cf = closed_form_design(&a, target, 5).unwrap();
        let seed_phi = phase_projection(cf.result.matrix.weights(), 1.0);
        metrics(&seed_phi, &geom, &format!("{label} cf-phase seed (raw)"));
    }
}
