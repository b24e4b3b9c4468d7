//! Locates the self-oscillation threshold by a log grid plus bisection.

use spinosc::experiments::{log_space, sweep_gain, Experiment};
use spinosc::model::{threshold_gain, SystemParams};

fn main() -> spinosc::Result<()> {
    let exp = Experiment::new(SystemParams::default());
    let r = sweep_gain(&exp, 90.0, &log_space(10.0, 1e4, 4), 8)?;

    for (g, p) in r.sweep.sorted() {
        println!("G = {g:8.1}  sustained {}", p.sustained);
    }
    println!("empirical threshold {:.0}", r.threshold);
    println!("formula             {:.0}", threshold_gain(&exp.sys)?);
    Ok(())
}
