//! Generates a synthetic fragment pair and writes it as ASCII XYZ.
//!
//! cargo run --example synth_pair -- [seed] [out_dir]

use spinkit::geometry::kabsch;
use spinkit::io::write_cloud;
use spinkit::spatial::median_spacing;
use spinkit::synth::{synth_pair, SyntheticSceneSpec};

fn main() -> spinkit::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let seed = args.get(1).map_or(Ok(7), |s| s.parse()).expect("seed must be an integer");
    let spec = SyntheticSceneSpec {
        seed,
        noise_sigma: 0.01,
        ..SyntheticSceneSpec::default()
    };
    let pair = synth_pair(&spec)?;
    println!("fragment A: {} points, median spacing {:.4} m", pair.frag_a.len(), median_spacing(&pair.frag_a));
    println!("fragment B: {} points, median spacing {:.4} m", pair.frag_b.len(), median_spacing(&pair.frag_b));
    println!("overlap fraction {:.3} (target {})", pair.overlap_fraction(), spec.overlap);
    println!("ground truth A -> B:\n{:?}", pair.transform.to_row_major());

    // The exact correspondences recover the transform up to the noise.
    let (src, dst): (Vec<_>, Vec<_>) = pair
        .correspondences
        .iter()
        .map(|&(i, j)| (pair.frag_a.points[i], pair.frag_b.points[j]))
        .unzip();
    let fit = kabsch(&src, &dst)?;
    println!(
        "Kabsch on {} correspondences: translation off by {:.2e} m",
        src.len(),
        (fit.translation - pair.transform.translation).norm()
    );

    if let Some(dir) = args.get(2) {
        let dir = std::path::Path::new(dir);
        std::fs::create_dir_all(dir)?;
        write_cloud(&dir.join("frag_a.xyz"), &pair.frag_a)?;
        write_cloud(&dir.join("frag_b.xyz"), &pair.frag_b)?;
        println!("wrote {}", dir.display());
    }
    Ok(())
}
