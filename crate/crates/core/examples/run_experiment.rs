//! Run a full experiment from a TOML config and print the accuracy table.
//!
//! ```text
//! cargo run --release --example run_experiment -- configs/single_source.toml
//! ```

use csuda::harness::{emit_reports, ExperimentConfig, Pipeline};

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let config = match std::env::args().nth(1) {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let mut pipeline = Pipeline::create(&config)?;
    pipeline.run()?;
    for record in &pipeline.manifest().phases {
        println!("{:>13} {:?} in {:.1}s", record.phase.name(), record.status, record.wall_seconds);
    }
    for path in emit_reports(pipeline.manifest(), pipeline.run_dir())? {
        println!("wrote {}", path.display());
    }
    print!("{}", std::fs::read_to_string(pipeline.run_dir().join("reports/table.txt"))?);
    Ok(())
}
