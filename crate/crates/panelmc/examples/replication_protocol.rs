//! Run a simulation-study figure protocol at desk scale.
//!
//! The replication engine lays out experiment cells (a sweep over panel
//! length or shock size), generates panels, selects penalties by
//! cross-validation, fits six estimator variants per run, and aggregates
//! quantiles per cell. At scale 1.0 this reproduces the full study; the
//! `scale` knob shrinks dimensions linearly and replication counts
//! cubically so the whole pipeline runs in seconds.
//!
//! Run with `cargo run --example replication_protocol`.

use panelmc::replicate::{plan_cells, replicate, ReplicateSettings, Target};
use panelmc::Result;

fn main() -> Result<()> {
    let settings = ReplicateSettings {
        scale: 0.1,
        runs_override: Some(3),
        seed: 9,
        grid_points: 2,
        ..ReplicateSettings::new(Target::Fig10)
    };

    // The plan is deterministic and cheap to inspect before committing to
    // the runs: one cell per shock size, identical panels otherwise.
    println!("cells for {} at scale {}:", settings.target, settings.scale);
    for cell in plan_cells(&settings)? {
        println!(
            "  {} x {} panel, shock sd {}, {} runs (seed offset {})",
            cell.config.n_units,
            cell.config.n_periods,
            cell.config.sigma_eps,
            cell.runs,
            cell.seed_offset
        );
    }

    let outcome = replicate(&settings)?;
    println!("\nper-run rows: {}", outcome.rows.len());
    println!(
        "\n{:>9} {:>10} {:>7} {:>8} {:>8} {:>8}",
        "shock sd", "variant", "runs", "q25", "median", "q75"
    );
    for row in &outcome.summary {
        println!(
            "{:>9} {:>10} {:>7} {:>8.3} {:>8.3} {:>8.3}",
            row.sigma_eps,
            row.variant.to_string(),
            row.n_runs,
            row.q25,
            row.median,
            row.q75
        );
    }

    // This figure tracks the selected model size relative to the truth:
    // values above 1 mean the interaction support was overestimated. The
    // same engine backs the `panelmc replicate` subcommand, which writes
    // these rows to CSV instead.
    Ok(())
}
