//! Trains the desk network on the standard synthetic pairs (no rotation
//! augmentation) and evaluates it on randomly rotated held-out pairs.
//!
//! cargo run --release --example train_desk -- [epochs] [out_dir]

use spinkit::benchmark::{evaluate_pairs, rotate_pairs, standard_pairs, to_training, EvalConfig};
use spinkit::descriptor::{DescriptorConfig, Network};
use spinkit::training::{train_pairs, TrainConfig};

fn main() -> spinkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let epochs = args.get(1).map_or(Ok(20), |s| s.parse()).expect("epochs must be an integer");
    let out_dir = args.get(2).map(std::path::PathBuf::from);

    let train = to_training(&standard_pairs(1000, 20)?);
    let test = rotate_pairs(&standard_pairs(5000, 10)?, 77);
    let descriptor = DescriptorConfig::desk();
    let eval = EvalConfig::synthetic(descriptor.transformer.support_radius);

    let net = Network::new(descriptor, 0)?;
    let (before, _) = evaluate_pairs(&net, &test, &eval)?;
    println!("untrained: FMR {:.2}, SR {:.2}", before.fmr, before.success_rate);

    let cfg = TrainConfig {
        epochs,
        ..TrainConfig::desk()
    };
    let outcome = train_pairs(net, &train, &cfg, out_dir.as_deref())?;
    for (e, (t, v)) in outcome.epoch_losses.iter().zip(&outcome.validation_losses).enumerate() {
        println!("epoch {:2}: train {t:.4} validation {v:.4}", e + 1);
    }
    println!("best epoch {}", outcome.best_epoch + 1);

    let (after, _) = evaluate_pairs(&outcome.network, &test, &eval)?;
    println!("trained:   FMR {:.2}, SR {:.2}", after.fmr, after.success_rate);
    for p in &after.pairs {
        println!(
            "  {}: inlier ratio {:.3}, RRE {:.2}°, RTE {:.3} m",
            p.name,
            p.inlier_ratio.unwrap_or(0.0),
            p.rre.unwrap_or(f64::NAN),
            p.rte.unwrap_or(f64::NAN)
        );
    }
    if let Some(dir) = out_dir {
        println!("checkpoints in {}", dir.display());
    }
    Ok(())
}
