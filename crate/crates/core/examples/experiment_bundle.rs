//! Runs a configured experiment end to end and lists the bundle it wrote.
//!
//!     cargo run --release --example experiment_bundle -- [config.toml] [out-dir]

use std::path::PathBuf;

use cvon_lab::config::{load_config, parse_config};
use cvon_lab::harness::{execute, Command};

const DEFAULT: &str = r#"
name = "bundle-demo"
n_steps = 20000
replicates = 20

[schedule]
a = 0.5
b = 1.0
alpha = 0.75

[stability]
m = 2000
"#;

fn main() -> cvon_lab::Result<()> {
    let mut args = std::env::args().skip(1);
    let cfg = match args.next() {
        Some(path) => load_config(path.as_ref())?,
        None => parse_config(DEFAULT)?,
    };
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join(&cfg.name));
    let summary = execute(&cfg, Command::Run, &out, 0, true)?;

    println!("config hash {}", summary.manifest.config_hash);
    for f in &summary.manifest.files {
        println!("{:>9} bytes  {}  {}", f.bytes, &f.sha256[..12], f.path);
    }
    if let Some(fit) = summary.stability.as_ref().and_then(|s| s.fit) {
        println!("CV_on slope {:.3} (r^2 {:.4})", fit.slope, fit.r_squared);
    }
    if let Some(c) = &summary.convergence {
        println!("{}/{} replicates converged", c.converged, c.replicates);
    }
    Ok(())
}
