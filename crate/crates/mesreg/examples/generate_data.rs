//! Regenerates the bundled demonstration CSV files under data/.
//!
//! Usage: cargo run -p mesreg --example generate_data

use std::io::Write;

use mesreg::sim::{simulate_dgp, SimConfig};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

fn write_fit_example() {
    let config = SimConfig::new(0.9, 500, 1, 42);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let ds = simulate_dgp(&config, &mut rng).unwrap();
    let mut out = String::from("y,x,z1,z2\n");
    for t in 0..ds.n() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            ds.y[t],
            ds.x[t],
            ds.z_v[(t, 1)],
            ds.z_v[(t, 2)]
        ));
    }
    let mut f = std::fs::File::create("data/example_fit.csv").unwrap();
    f.write_all(out.as_bytes()).unwrap();
    println!("wrote data/example_fit.csv ({} rows)", ds.n());
}

fn write_portfolio_example() {
    // five correlated t-distributed loss series with one persistent
    // volatility covariate; scales differ per asset so the equal-weight
    // portfolio has visibly unequal risk contributions
    let n = 600;
    let d = 5;
    let df = 6.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let chi = ChiSquared::new(df).unwrap();
    let scales = [0.8, 1.0, 1.2, 1.5, 2.0];
    let mut vix = 2.5_f64;
    let mut out = String::from("a1,a2,a3,a4,a5,vix\n");
    for _ in 0..n {
        vix = 2.5 + 0.88 * (vix - 2.5) + 0.35 * rng.sample::<f64, _>(StandardNormal);
        vix = vix.clamp(1.0, 6.5);
        let w = (chi.sample(&mut rng) / df as f64).sqrt();
        let common: f64 = rng.sample(StandardNormal);
        let mut row = Vec::with_capacity(d + 1);
        for j in 0..d {
            let idio: f64 = rng.sample(StandardNormal);
            let shock = (0.65 * common + 0.76 * idio) / w;
            let loss = scales[j] * (0.05 + 0.05 * vix) * shock;
            row.push(format!("{loss}"));
        }
        row.push(format!("{vix}"));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    let mut f = std::fs::File::create("data/portfolio_losses.csv").unwrap();
    f.write_all(out.as_bytes()).unwrap();
    println!("wrote data/portfolio_losses.csv ({n} rows)");
}

fn main() {
    write_fit_example();
    write_portfolio_example();
}
