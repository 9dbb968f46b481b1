//! Scores LRP heatmaps of damaged shells against their masks with the top-k
//! intersection metric, before and after head re-balancing.

use xai_triage::localization::{default_k, mean_tki};
use xai_triage::lrp::{relevance, RuleConfig};
use xai_triage::rebalance::{rebalance_head, RebalanceConfig, SolverConfig};
use xai_triage::synth::{
    classes, corpus, fit_plain_head, shell_network, to_samples, ShellStyle, HEALTHY,
};
use xai_triage::Network;

fn main() -> xai_triage::Result<()> {
    let style = ShellStyle::default();
    let names = classes();
    let train = to_samples(&corpus([100, 200, 1000], &style, 1));
    let base = fit_plain_head(
        &shell_network(style.size, names.len())?,
        &train,
        &SolverConfig::default(),
    )?;
    let rebalanced =
        rebalance_head(&base, &train, &names, &RebalanceConfig::for_classes(&names))?.network;

    let damaged: Vec<_> = corpus([200, 200, 0], &style, 2)
        .into_iter()
        .filter(|s| s.label != HEALTHY)
        .collect();
    let k = default_k(style.size, style.size);
    let score = |net: &Network| -> xai_triage::Result<f64> {
        let mut pairs = Vec::new();
        for s in &damaged {
            let trace = net.trace(&s.image.to_tensor())?;
            let pred = trace.logits().argmax().unwrap_or(0);
            pairs.push((
                relevance(net, &trace, pred, &RuleConfig::default())?,
                s.mask.clone(),
            ));
        }
        mean_tki(&pairs, k)
    };
    println!("{} damaged shells, k = {k}", damaged.len());
    println!("mean tki, imbalanced head: {:.3}", score(&base)?);
    println!("mean tki, rebalanced head: {:.3}", score(&rebalanced)?);
    Ok(())
}
