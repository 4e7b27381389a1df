//! Desk-scale missing-channel experiment on synthetic data.
//!
//! `cargo run --release --example desk_experiment -- [seed] [epochs] [trials] [w1 w2 w3 hidden]`

use std::time::Instant;

use mcasc::audio::{synthesize_dataset, SyntheticDatasetConfig};
use mcasc::features::FeatureConfig;
use mcasc::harness::{run_plan, summary_table, ExperimentPlan, FeatureSet, MatchedSettings, RunOptions};

fn main() -> mcasc::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let seed = args.first().copied().unwrap_or(1);
    let epochs = args.get(1).copied().unwrap_or(20) as usize;
    let trials = args.get(2).copied().unwrap_or(4) as usize;
    let net: Vec<usize> = match args.get(3..7) {
        Some(v) => v.iter().map(|&x| x as usize).collect(),
        None => vec![16, 32, 64, 32],
    };

    let t0 = Instant::now();
    let clips = synthesize_dataset(&SyntheticDatasetConfig {
        n_classes: 4,
        clips_per_class: 50,
        channels: 8,
        duration_s: 1.0,
        sample_rate_hz: 16_000,
        seed,
    })?;
    let features = FeatureConfig {
        n_mels: 20,
        ..FeatureConfig::default()
    };
    let data = FeatureSet::from_synthetic(&clips, &features)?;
    eprintln!("features {:?} in {:.1?}", data.dims(), t0.elapsed());

    let mut plan = ExperimentPlan {
        seed,
        missing_counts: vec![0, 1, 2, 4],
        trials_per_count: trials,
        matched: Some(MatchedSettings {
            missing_counts: vec![4],
            trials_per_count: 2,
        }),
        ..ExperimentPlan::default()
    };
    plan.train.epochs = epochs;
    plan.train.batch_size = 16;
    plan.network.widths = [net[0], net[1], net[2]];
    plan.network.hidden = net[3];
    let report = run_plan(&plan, &data, RunOptions { jobs: 0, progress: true })?;
    let summary = report.summary_csv();
    println!("{}", summary_table(&summary, false)?);
    println!("{}", summary_table(&summary, true)?);
    eprintln!("total {:.1?}", t0.elapsed());
    Ok(())
}
