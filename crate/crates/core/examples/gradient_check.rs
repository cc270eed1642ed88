//! Central finite-difference check of every differentiable engine op.

use spinkit::gradcheck::{check_all, STEP};

fn main() -> spinkit::Result<()> {
    println!("step {STEP:e}, 20 random instances per op");
    for c in check_all(0, 20)? {
        println!(
            "{:<20} {:5} coordinates   max relative error {:.1e}",
            c.op, c.coordinates, c.max_relative_error
        );
    }
    Ok(())
}
