//! Running an experiment from a TOML description, as the `rayleigh` binary
//! does, and reading back its manifest.

use rayleigh::harness::{run, ExperimentSpec};

const CONFIG: &str = r#"
kind = "tree-stats"
seed = 11
workers = 2

[sweep]
c = [0.5, 1.0, 2.0]

[params]
samples = 5000
times = [0.5, 1.0]
"#;

fn main() -> rayleigh::Result<()> {
    let dir = std::env::temp_dir().join("rayleigh-example");
    let mut spec = ExperimentSpec::from_toml_str(CONFIG)?;
    spec.output_dir = dir.clone();
    let outcome = run(&spec)?;
    println!("config sha256 {}", outcome.manifest.config_sha256);
    for file in &outcome.files {
        println!("wrote {}", file.display());
    }
    for check in &outcome.report.checks {
        println!(
            "{} {}: {}",
            if check.passed { "ok  " } else { "FAIL" },
            check.name,
            check.detail
        );
    }
    print!("{}", std::fs::read_to_string(dir.join("tree_stats.csv"))?);
    Ok(())
}
