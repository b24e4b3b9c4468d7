//! Range of feedback phase that sustains oscillation, at two gains.

use spinosc::experiments::{sweep_phase, theta_grid, Experiment};
use spinosc::model::SystemParams;

fn main() -> spinosc::Result<()> {
    let exp = Experiment::new(SystemParams::default());
    let thetas = theta_grid(10.0);

    let low = sweep_phase(&exp, 2000.0, &thetas)?;
    let high = sweep_phase(&exp, 4000.0, &thetas)?;
    for (g, w) in [(2000, &low), (4000, &high)] {
        println!(
            "G = {g}: window [{}, {}] deg, asymmetry {} deg, contiguous {}",
            w.window.0, w.window.1, w.asymmetry, w.contiguous
        );
    }
    println!("larger gain contains smaller: {}", high.contains(&low));

    print!("{}", low.sweep.to_csv());
    Ok(())
}
