//! Squared MMD between batches under the three kernel families.
//!
//! cargo run --example mmd_kernels

use driftwatch::mmd::{median_heuristic, mmd, KernelSpec, VectorBatch};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> VectorBatch {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|j| normal.sample(rng) + if j == 0 { shift } else { 0.0 }).collect())
        .collect();
    VectorBatch::from_rows(&rows).unwrap()
}

fn main() -> driftwatch::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let reference = batch(&mut rng, 200, 8, 0.0);
    let kernels = [KernelSpec::Linear, KernelSpec::polynomial(), KernelSpec::gaussian_median()];

    println!("{:>6} {:>12} {:>12} {:>12}", "shift", "linear", "polynomial", "gaussian");
    for shift in [0.0, 0.25, 0.5, 1.0, 2.0, 4.0] {
        let other = batch(&mut rng, 50, 8, shift);
        let vals: Vec<f64> = kernels
            .iter()
            .map(|k| mmd(&reference, &other, k))
            .collect::<Result<_, _>>()?;
        println!("{shift:>6.2} {:>12.5} {:>12.5} {:>12.5}", vals[0], vals[1], vals[2]);
    }

    let other = batch(&mut rng, 50, 8, 1.0);
    println!("median-heuristic sigma: {:.4}", median_heuristic(&reference, &other)?);
    println!("mmd(X, X) = {:e}", mmd(&reference, &reference, &KernelSpec::gaussian_median())?);
    Ok(())
}
