//! Desk-scale training run followed by a held-out verification.
//!
//! `cargo run --release -p rccm --example desk_train -- [n_samples] [epochs]`

use std::time::Instant;

use rccm::certificate::{train, verify, Mode, TrainConfig};
use rccm::system::Quadrotor;
use rccm::Execution;

fn main() -> rccm::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut cfg = TrainConfig::desk();
    if let Some(&n) = args.first() {
        cfg.n_samples = n;
    }
    if let Some(&e) = args.get(1) {
        cfg.epochs = e;
    }
    let model = Quadrotor::default();
    let start = Instant::now();
    let out = train(&model, &cfg, Execution::Parallel, |r| {
        println!(
            "epoch {:>3} loss {:.5} R1 {:.4} R2 {:.4} C1 {:.4} C2 {:.4} C3 {:.4} bound {:.4} relu {:.4} alpha {:.4} mu {:.4} [{:.0}s]",
            r.epoch,
            r.mean_loss,
            r.lpd_r1,
            r.lpd_r2,
            r.lpd_c1,
            r.frob_c2,
            r.frob_c3,
            r.lpd_bound,
            r.relu_alpha,
            r.alpha,
            r.mu,
            start.elapsed().as_secs_f64()
        );
    })?;
    let report = verify(&model, &out.cert, &cfg.sampling, 4096, 1, Mode::Rccm, Execution::Parallel)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    rccm::nn::weights::save(&out.cert, std::path::Path::new(&std::env::var("DESK_WEIGHTS").unwrap_or_else(|_| "/tmp/desk_weights.json".into())))?;
    Ok(())
}
