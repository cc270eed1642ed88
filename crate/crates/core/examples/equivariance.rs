//! Numerical check of the three symmetry properties on an untrained network:
//! volume and convolution equivariance under azimuth shifts, and descriptor
//! invariance under rotations.

use spinkit::checks::{conv_equivariance, descriptor_invariance, synthetic_patches, volume_equivariance};
use spinkit::descriptor::{DescriptorConfig, Network};

fn main() -> spinkit::Result<()> {
    let cfg = DescriptorConfig::desk();
    let dev = volume_equivariance(&cfg.transformer, 1, 10, 400)?;
    println!("cylindrical volume, shift by every azimuth step: max deviation {dev:.1e}");

    let dev = conv_equivariance(1, 50)?;
    println!("cylindrical convolution, 50 random instances:    max deviation {dev:.1e}");

    let net = Network::new(cfg, 1)?;
    let patches = synthetic_patches(1, 20, net.config().transformer.support_radius)?;
    let inv = descriptor_invariance(&net, &patches, 1)?;
    println!(
        "descriptor, rotations by multiples of {} azimuth steps: max deviation {:.1e}",
        net.config().azimuth_period(),
        inv.grid_deviation
    );
    println!("descriptor, other grid rotations: max deviation {:.1e}", inv.off_period_deviation);
    println!(
        "descriptor, random 3D rotations: cosine mean {:.4}, min {:.4}",
        inv.mean_cosine(),
        inv.min_cosine()
    );
    let mean_dist = inv.distinct_distances.iter().sum::<f64>() / inv.distinct_distances.len() as f64;
    println!("distance between descriptors of different patches: mean {mean_dist:.3}");
    Ok(())
}
