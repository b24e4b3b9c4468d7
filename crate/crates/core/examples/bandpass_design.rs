//! Band-pass response of the feedback filter and the compensated chain.

use spinosc::feedback::{design_bandpass, ChainSpec, FeedbackChain};

fn main() -> spinosc::Result<()> {
    let spec = ChainSpec::default();
    let bp = design_bandpass(&spec.bandpass)?;
    println!("pole radius {:.6}", bp.pole_radius());
    for f in [30.0, 33.25, 35.0, 36.75, 40.0] {
        let h = bp.response(f, spec.bandpass.fs);
        println!(
            "{f:6.2} Hz  |H| {:.4}  phase {:+7.2} deg",
            h.norm(),
            h.arg().to_degrees()
        );
    }

    // Drive a unit tone through the full chain and read the steady gain.
    let mut chain = FeedbackChain::new(ChainSpec { gain: 1.0, ..spec })?;
    let (f, fs) = (spec.shifter.f_ref, spec.bandpass.fs);
    let mut peak: f64 = 0.0;
    for i in 0..20_000 {
        let y = chain.feedback_step((2.0 * std::f64::consts::PI * f * i as f64 / fs).sin());
        if i > 15_000 {
            peak = peak.max(y.abs());
        }
    }
    println!("chain amplitude at {f} Hz: {peak:.4}");
    Ok(())
}
