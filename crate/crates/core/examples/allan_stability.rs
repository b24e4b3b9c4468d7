//! Frequency stability of the running oscillator, with and without a slow
//! drift of the feedback phase.

use spinosc::experiments::{long_run_stability, Experiment, StabilityOptions};
use spinosc::model::SystemParams;

fn main() -> spinosc::Result<()> {
    let mut exp = Experiment::new(SystemParams::default());
    exp.chain.gain = 2000.0;
    let opts = StabilityOptions {
        duration: 1024.0,
        ..Default::default()
    };

    for drift in [0.0, 1e-3] {
        exp.chain.theta_drift = drift;
        let r = long_run_stability(&exp, &opts)?;
        println!("theta drift {drift} deg/s, mean {:.9} Hz", r.mean_freq);
        for (tau, a) in r.allan.taus.iter().zip(&r.allan.adev) {
            println!("  tau {tau:6.0} s  adev {a:.3e} Hz");
        }
    }
    Ok(())
}
