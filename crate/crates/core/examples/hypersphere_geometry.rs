// Projection onto the unit sphere and the squared-distance range it implies.
//
// cargo run --example hypersphere_geometry

use polytuplet::manifold::{dot, project_to_sphere, project_to_sphere_backward, sq_distance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn run_example() -> polytuplet::Result<(f64, f64)> {
    let u = project_to_sphere(&[3.0, 4.0])?;
    println!("(3, 4) projects to {:?}", u.values());

    // Radial directions are removed by the backward pass.
    let g = project_to_sphere_backward(&[2.0, 0.0], &[1.0, 1.0])?;
    println!("backward at (2, 0) of (1, 1): {g:?}");

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (project_to_sphere(&a)?, project_to_sphere(&b)?);
        let d = sq_distance(&a, &b)?;
        assert!((d - (2.0 - 2.0 * dot(a.values(), b.values()))).abs() < 1e-9);
        lo = lo.min(d);
        hi = hi.max(d);
    }
    println!("observed distances in [{lo:.4}, {hi:.4}], bounds [0, 4]");

    match project_to_sphere(&[0.0, 0.0]) {
        Err(err) => println!("zero vector: {err}"),
        Ok(_) => unreachable!(),
    }
    Ok((lo, hi))
}

#[allow(dead_code)]
fn main() -> polytuplet::Result<()> {
    run_example().map(|_| ())
}
