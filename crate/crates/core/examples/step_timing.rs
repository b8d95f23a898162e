//! Wall time of single training iterations, per architecture and batch size.
//!
//! ```text
//! cargo run --release --example step_timing -- main 2500 2
//! ```

use std::time::Instant;

use ckgan::data::{DatasetKind, MixtureSpec};
use ckgan::nn::Architecture;
use ckgan::train::{BatchMode, TrainConfig, Trainer};

fn main() -> ckgan::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arch: Architecture = args.first().map_or("simple-ring", String::as_str).parse()?;
    let batch: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(2500);
    let steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let config = TrainConfig {
        architecture: arch,
        batch: if batch >= 2500 { BatchMode::Full } else { BatchMode::Minibatch(batch) },
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(config, MixtureSpec::standard(DatasetKind::Ring))?;
    let start = Instant::now();
    for _ in 0..steps {
        trainer.step()?;
    }
    let per_step = start.elapsed().as_secs_f64() / steps as f64;
    println!("{arch} batch {batch}: {per_step:.3} s per iteration");
    Ok(())
}
