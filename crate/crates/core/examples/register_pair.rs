//! Registers a randomly rotated synthetic pair with descriptor matching and
//! RANSAC. Pass a checkpoint written by training (its config.toml sidecar
//! must sit next to it) or run with the untrained network.
//!
//! cargo run --release --example register_pair -- [checkpoint]

use spinkit::benchmark::{evaluate_pair, rotate_pairs, standard_spec, EvalConfig};
use spinkit::descriptor::{DescriptorConfig, Network};
use spinkit::engine::ParamStore;
use spinkit::synth::synth_pair;

fn main() -> spinkit::Result<()> {
    let descriptor = DescriptorConfig::desk();
    let net = match std::env::args().nth(1) {
        Some(path) => Network::from_params(descriptor.clone(), ParamStore::load_checkpoint(path.as_ref())?)?,
        None => Network::new(descriptor.clone(), 0)?,
    };
    let pair = rotate_pairs(&[synth_pair(&standard_spec(42))?], 5).remove(0);
    let cfg = EvalConfig::synthetic(descriptor.transformer.support_radius);
    let e = evaluate_pair(&net, &pair.frag_a, &pair.frag_b, &pair.transform, &cfg, 0)?;
    println!(
        "{} mutual matches, inlier ratio {:.3}",
        e.correspondences.len(),
        e.inlier_ratio.unwrap_or(0.0)
    );
    match e.errors {
        Some((rre, rte)) => {
            let t = &cfg.thresholds;
            let ok = rre < t.max_rotation_error && rte < t.max_translation_error;
            println!("RRE {rre:.3}°, RTE {rte:.4} m: {}", if ok { "success" } else { "failure" });
        }
        None => println!("RANSAC found no consensus"),
    }
    Ok(())
}
