//! Closed-form geometry on the unit hypersphere: projection, the Log and
//! Exp maps, geodesic distance, and the round-trip identity between them.

use dsgk::sphere::{exp_map, geodesic_distance, geometry_suite, log_map, project_to_sphere};
use ndarray::{arr1, arr2};

fn main() -> dsgk::Result<()> {
    // Any vector or matrix projects onto the sphere by flattening and
    // normalizing.
    let p = project_to_sphere(arr1(&[3.0, 4.0, 0.0]).view())?;
    println!("project [3, 4, 0]        -> {:?}", p.coords().to_vec());
    let m = project_to_sphere(arr2(&[[1.0, 0.0], [0.0, 1.0]]).view())?;
    println!("project 2x2 identity     -> {:?}", m.coords().to_vec());

    // The Log map sends q into the tangent space at p; its norm is the
    // geodesic distance; the Exp map walks back.
    let q = project_to_sphere(arr1(&[0.0, 1.0, 1.0]).view())?;
    let v = log_map(&p, &q)?;
    let d = geodesic_distance(&p, &q)?;
    println!("log_map(p, q) norm       = {:.12}", v.norm());
    println!("geodesic_distance(p, q)  = {:.12}", d);
    println!("tangency <p, v>          = {:.3e}", p.coords().dot(&v.vec));

    let back = exp_map(&p, &v)?;
    let gap: f64 = back
        .coords()
        .iter()
        .zip(q.coords().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    println!("|exp_map(p, log_map) - q| = {:.3e}", gap);

    // The stress suite runs the same identities over random pairs in
    // dimensions 3, 16, and 100.
    let report = geometry_suite(2_000, 1)?;
    println!(
        "suite over {:?} ({} pairs/dim): roundtrip {:.2e}, tangency {:.2e}, \
         norm-gap {:.2e}, unit-norm {:.2e}",
        report.dims,
        report.pairs_per_dim,
        report.max_roundtrip,
        report.max_tangency,
        report.max_norm_gap,
        report.max_unit_norm_err
    );
    Ok(())
}
