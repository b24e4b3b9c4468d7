//! Free decay of the tipped Xe spins read out through the Rb magnetometer.

use spinosc::analysis::{estimate_frequency, fft_spectrum, fit_exp_envelope, Window};
use spinosc::model::SystemParams;
use spinosc::sim::{run, LoopMode, Mode, SimConfig};

fn main() -> spinosc::Result<()> {
    let sys = SystemParams::default();
    let cfg = SimConfig::new(Mode::Adiabatic, LoopMode::Open, 60.0);
    let ts = run(&sys, None, &cfg)?;

    let env = fit_exp_envelope(&ts, "mx_rb")?;
    // A constant-amplitude tone only fits the first couple of decay times.
    let head = ts.slice(0, (2.0 * sys.xe.t2 * ts.fs) as usize);
    let peak = fft_spectrum(&head, "mx_rb", Window::Rect)?.peak_freq;
    let fit = estimate_frequency(&head, "mx_rb", peak)?;

    println!(
        "decay time   {:.4} s (T2 = {} s)",
        env.decay_time, sys.xe.t2
    );
    println!("frequency    {:.6} Hz", fit.freq);
    println!("predicted    {:.6} Hz", sys.xe_open_loop_frequency());
    Ok(())
}
