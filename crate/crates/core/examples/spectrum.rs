//! Spectral tools on a noisy closed-loop record: peak, linewidth, sine fit,
//! Welch PSD and the equivalent field resolution.

use spinosc::analysis::{estimate_frequency, fft_spectrum, field_resolution, welch_psd, Window};
use spinosc::experiments::Experiment;
use spinosc::model::SystemParams;

fn main() -> spinosc::Result<()> {
    let mut exp = Experiment::new(SystemParams::default());
    exp.chain.noise_std = 1e-7;
    exp.sim.noise_seed = Some(7);
    exp.sim.duration = 200.0;
    let ts = exp.run_closed(2000.0, 90.0)?;
    let tail = ts.slice(ts.len() / 2, ts.len());

    let spec = fft_spectrum(&tail, "mx_rb", Window::Hann)?;
    let fit = estimate_frequency(&tail, "mx_rb", spec.peak_freq)?;
    let psd = welch_psd(&tail, "mx_rb", 8192, 0.5)?;
    let res = field_resolution(fit.sigma, exp.sys.xe.gamma)?;

    println!(
        "peak   {:.6} Hz, fwhm {:.3e} Hz, snr {:.0}",
        spec.peak_freq, spec.fwhm, spec.snr
    );
    println!("fit    {:.9} +/- {:.2e} Hz", fit.freq, fit.sigma);
    println!(
        "psd    {} segments, power near peak {:.3e} G^2",
        psd.segments,
        psd.integrate(34.0, 37.0)
    );
    println!("field  {:.3e} T", res.tesla);
    Ok(())
}
