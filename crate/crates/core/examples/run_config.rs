//! Runs a JSON run config through the batch pipeline and writes the field
//! files and manifest, exactly as the `ldaction` binary does.
//!
//! cargo run --release --example run_config -- configs/harmonic_frequency.json /tmp/ld-out

use std::path::PathBuf;

use ldaction::cli::{execute, write_outputs, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let config_path = args.next().unwrap_or_else(|| "configs/harmonic_frequency.json".into());
    let out = PathBuf::from(args.next().unwrap_or_else(|| "ldaction-out".into()));

    let config = RunConfig::from_json(&std::fs::read_to_string(&config_path)?)?.resolve(None);
    let files = execute(&config)?;
    write_outputs(&out, &config, &files)?;
    for f in &files {
        println!("{:>10} bytes  {}", f.bytes.len(), out.join(&f.name).display());
    }
    println!("manifest: {}", out.join("manifest.json").display());
    Ok(())
}
