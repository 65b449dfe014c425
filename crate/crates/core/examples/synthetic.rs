//! Trains base and full models on a planted-partition graph and prints
//! test micro/macro F1.

use scalegnn::fixtures::{planted_partition, PlantedPartition};
use scalegnn::train::{evaluate, prepare, train_with};
use scalegnn::{Mode, Split, TrainConfig};

fn main() -> scalegnn::Result<()> {
    let ds = planted_partition(
        PlantedPartition {
            n: 600,
            classes: 4,
            features: 32,
            noise: 2.5,
            val: 100,
            test: 300,
            ..PlantedPartition::default()
        },
        7,
    )?;
    for mode in [Mode::Base, Mode::Full] {
        let cfg = TrainConfig {
            mode,
            epochs: 200,
            ..TrainConfig::default()
        };
        let start = std::time::Instant::now();
        let art = prepare(&ds, &cfg)?;
        let out = train_with(&art, &ds, &cfg)?;
        let (mi, ma) = evaluate(&art, &out.params, &out.schedule, &ds, Split::Test)?;
        println!(
            "{mode}: test micro {:.2}% macro {:.2}% best epoch {} sc {} ({:.2}s)",
            100.0 * mi,
            100.0 * ma,
            out.best_epoch,
            out.best_sc,
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
