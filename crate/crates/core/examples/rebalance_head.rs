//! Trains a head on an imbalanced corpus (10:1 healthy to broken, 5:1 to
//! flash), then re-balances it on ten class-balanced partitions.

use std::time::Instant;

use xai_triage::rebalance::{per_class_accuracy, rebalance_head, RebalanceConfig, SolverConfig};
use xai_triage::synth::{classes, corpus, fit_plain_head, shell_network, to_samples, ShellStyle};

fn main() -> xai_triage::Result<()> {
    let style = ShellStyle::default();
    let train = to_samples(&corpus([100, 200, 1000], &style, 1));
    let test = to_samples(&corpus([200, 200, 200], &style, 2));
    let names = classes();

    let t = Instant::now();
    let base = fit_plain_head(
        &shell_network(style.size, names.len())?,
        &train,
        &SolverConfig::default(),
    )?;
    let config = RebalanceConfig::for_classes(&names);
    let outcome = rebalance_head(&base, &train, &names, &config)?;
    println!(
        "{} partitions of {} shells, fitted in {:.1?}",
        outcome.partitions.len(),
        outcome.partitions[0].len(),
        t.elapsed()
    );

    println!(
        "{:>12} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "", "broken", "flash", "healthy", "macro", "worst"
    );
    for (name, net) in [("imbalanced", &base), ("rebalanced", &outcome.network)] {
        let acc = per_class_accuracy(net, &test)?.accuracy;
        let pc: Vec<f64> = acc
            .per_class
            .iter()
            .map(|a| a.unwrap_or(f64::NAN))
            .collect();
        println!(
            "{name:>12} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            pc[0],
            pc[1],
            pc[2],
            acc.macro_mean.unwrap_or(f64::NAN),
            acc.worst_class().unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
