//! Histogram a series and fit `alpha * exp(-beta * x)` to the bars.

use mgfuse::graphs::{fit_exponential, histogram};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

fn main() -> mgfuse::Result<()> {
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let rate = 1.5;
    let series: Vec<f64> = Exp::new(rate).expect("positive rate").sample_iter(&mut r).take(5000).collect();
    let h = histogram(&series, 20, 0.0, 4.0)?;
    let fit = fit_exponential(&h.centers, &h.heights)?;
    println!("alpha {:.2} beta {:.3} (planted decay {rate}) rms residual {:.2}", fit.alpha, fit.beta, fit.residual);
    Ok(())
}
