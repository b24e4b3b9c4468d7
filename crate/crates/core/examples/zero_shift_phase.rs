//! Finds the feedback phase at which the closed-loop frequency equals the
//! free-precession frequency.

use spinosc::experiments::{find_zfs, theta_grid, Experiment};
use spinosc::model::SystemParams;

fn main() -> spinosc::Result<()> {
    let exp = Experiment::new(SystemParams::default());
    let z = find_zfs(&exp, 2000.0, &theta_grid(10.0))?;

    for (theta, p) in z.coarse.sorted() {
        println!("{theta:5.1} deg  shift {:+.3e} Hz", p.osc_freq);
    }
    print!("{}", z.summary().to_text());
    Ok(())
}
