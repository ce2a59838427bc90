//! Run a small simulation study against a built-in model's truth fixture.
//!
//! Usage: `cargo run --release --example study -- <model> [replicates] [iterations] [leapfrog] [workers]`

use magidde::bench::{run_study_with, SimulationSpec};
use magidde::hmc::HmcConfig;
use magidde::models::builtin;
use magidde::pipeline::InferenceConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map_or("hutchinson-log", String::as_str);
    let arg = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (replicates, iterations, leapfrog, workers) = (arg(1, 2), arg(2, 4000), arg(3, 20), arg(4, 1));

    let model = builtin(name)?;
    let inference = InferenceConfig {
        hmc: HmcConfig {
            iterations,
            burn_in: iterations / 2,
            leapfrog_steps: leapfrog,
            ..Default::default()
        },
        ..Default::default()
    };
    let mut spec = SimulationSpec::from_truth(model.as_ref(), replicates, 2024, inference)?;
    if let Some(nu) = args.get(5) {
        spec.inference.nu = serde_json::from_str(&format!("\"{nu}\""))?;
    }
    if let Some(level) = args.get(6) {
        spec.inference.level = level.parse()?;
    }
    let report = run_study_with(model, &spec, workers)?;
    print!("{}", report.to_table());
    println!("nu {:?} level {}", spec.inference.nu, spec.inference.level);
    for r in &report.rows {
        println!(
            "#{} est {:?} sd {:?} traj {:.3} acc {:.2} {:.1}s {}",
            r.replicate,
            r.estimates,
            r.posterior_sd,
            r.trajectory_rmse,
            r.accept_rate,
            r.runtime_seconds,
            r.status.label()
        );
    }
    Ok(())
}
