//! Building a configuration, writing it out and running from it.

use spinosc::cli::{dispatch, parse_config, Command, Config};

fn main() -> spinosc::Result<()> {
    let dir = std::env::temp_dir().join("spinosc-config-example");
    std::fs::create_dir_all(&dir)?;

    let mut cfg = Config::default();
    cfg.set("sim.loop", "closed")?;
    cfg.set("feedback.gain", "2000")?;
    cfg.set("sim.duration", "100")?;
    let path = dir.join("run.conf");
    std::fs::write(&path, cfg.to_text())?;

    let cfg = parse_config(&path)?;
    let manifest = dispatch(&Command::Simulate, &cfg, &dir.join("out"))?;
    println!(
        "wrote {:?} in {:.2} s",
        manifest.outputs, manifest.wall_seconds
    );
    print!(
        "{}",
        std::fs::read_to_string(dir.join("out").join("summary.txt"))?
    );
    Ok(())
}
