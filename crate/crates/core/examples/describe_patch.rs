//! Describes a few anchors of a synthetic fragment, then describes them again
//! after rotating the whole fragment.

use spinkit::descriptor::{DescriptorConfig, Network};
use spinkit::geometry::{apply_transform, random_rotation, RigidTransform};
use spinkit::rng::rng_for;
use spinkit::spatial::SpatialIndex;
use spinkit::synth::{synth_pair, SyntheticSceneSpec};

fn main() -> spinkit::Result<()> {
    let pair = synth_pair(&SyntheticSceneSpec::default())?;
    let cloud = pair.frag_a;
    let net = Network::new(DescriptorConfig::desk(), 0)?;
    println!("desk network: {} parameters", net.num_parameters());

    let anchors = [10, 500, 1000, 1500];
    let set = net.describe_cloud(&cloud, &SpatialIndex::new(&cloud), &anchors)?;
    for (k, a) in set.anchors.iter().enumerate() {
        let d = &set.values[k * set.dim..(k + 1) * set.dim];
        println!("anchor {a:4}: [{:+.3}, {:+.3}, {:+.3}, ...]", d[0], d[1], d[2]);
    }

    // The sensor sits at the origin, so rotating about it co-rotates the viewpoint.
    let rot = RigidTransform::from_rotation(random_rotation(&mut rng_for(3, &[])));
    let turned = apply_transform(&rot, &cloud);
    let set2 = net.describe_cloud(&turned, &SpatialIndex::new(&turned), &anchors)?;
    for k in 0..set.anchors.len() {
        let (a, b) = (&set.values[k * set.dim..(k + 1) * set.dim], &set2.values[k * set.dim..(k + 1) * set.dim]);
        let cos: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        println!("anchor {:4}: cosine after rotation {cos:.4}", set.anchors[k]);
    }
    Ok(())
}
