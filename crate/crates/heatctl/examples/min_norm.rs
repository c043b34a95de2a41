//! Steer the first sine mode to zero and print the certificate.

use heatctl::control::{min_norm_control_linear, DualOptions};
use heatctl::{Grid1D, PotentialField, RegionMask, TimeGrid, TimeSet};

fn main() -> Result<(), heatctl::Error> {
    let grid = Grid1D::new(99)?;
    let tgrid = TimeGrid::new(0.5, 250)?;
    let omega = RegionMask::new(&grid, 0.3, 0.7)?;
    let horizon = TimeSet::full(&tgrid);
    let w0 = grid.sine_mode(1);
    let cert = min_norm_control_linear(
        &grid,
        &tgrid,
        &PotentialField::zero(),
        &w0,
        &omega,
        &horizon,
        &DualOptions::default(),
    )?;
    println!(
        "minimal norm {:.4}, residual {:.2e} in {} iterations",
        cert.control.max_step_norm(),
        cert.terminal_residual,
        cert.iterations
    );
    Ok(())
}
