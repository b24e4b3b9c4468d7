//! Closing the loop above threshold: the precession no longer decays.

use spinosc::analysis::rms;
use spinosc::experiments::{classify_sustained, Experiment};
use spinosc::model::{threshold_gain, SystemParams};

fn main() -> spinosc::Result<()> {
    let mut exp = Experiment::new(SystemParams::default());
    exp.sim.duration = 300.0;
    let g_th = threshold_gain(&exp.sys)?;

    for g in [0.5 * g_th, 2.0 * g_th] {
        let ts = exp.run_closed(g, 90.0)?;
        let x = ts.channel("mx_rb").unwrap();
        let q = x.len() / 4;
        let class = classify_sustained(&ts, &exp.sys)?;
        println!(
            "G = {g:6.0}  sustained {:5}  rms q1 {:.3e}  q4 {:.3e}",
            class.sustained,
            rms(&x[..q]),
            rms(&x[3 * q..]),
        );
    }
    Ok(())
}
