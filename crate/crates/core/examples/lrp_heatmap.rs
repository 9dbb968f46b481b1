//! Explains a flash-damaged shell with the composite rule set and prints the
//! heatmap next to the true damage mask.

use xai_triage::localization::{default_k, heatmap_tki, top_k_mask};
use xai_triage::lrp::{relevance, RuleConfig};
use xai_triage::rebalance::SolverConfig;
use xai_triage::render::render_heatmap;
use xai_triage::synth::{corpus, fit_plain_head, shell_network, to_samples, ShellStyle, FLASH};

fn main() -> xai_triage::Result<()> {
    let style = ShellStyle::default();
    let train = corpus([150, 150, 150], &style, 11);
    let net = fit_plain_head(
        &shell_network(style.size, 3)?,
        &to_samples(&train),
        &SolverConfig::default(),
    )?;

    let shells = corpus([0, 20, 0], &style, 12);
    let shell = shells
        .iter()
        .filter(|s| s.label == FLASH)
        .max_by_key(|s| s.mask.count())
        .expect("flash shells");
    let input = shell.image.to_tensor();
    let trace = net.trace(&input)?;
    let target = trace.logits().argmax().unwrap_or(0);
    println!(
        "logits {:?}, explaining class {target}",
        trace.logits().data()
    );

    for (name, rules) in [
        ("composite", RuleConfig::default()),
        ("basic", RuleConfig::basic()),
    ] {
        let h = match relevance(&net, &trace, target, &rules) {
            Ok(h) => h,
            Err(e) => {
                println!("{name}: {e}");
                continue;
            }
        };
        let k = default_k(h.width(), h.height());
        println!(
            "{name}: sum of relevance {:.4} (logit {:.4}), tki@{k} = {:.3}",
            h.sum(),
            trace.logits().data()[target],
            heatmap_tki(&h, &shell.mask, k)?
        );
    }

    let h = relevance(&net, &trace, target, &RuleConfig::default())?;
    let top = top_k_mask(&h, default_k(h.width(), h.height()))?;
    println!("\ntop-k pixels (#), mask (o), both (@):");
    for y in 0..h.height() {
        let row: String = (0..h.width())
            .map(|x| match (top.get(x, y), shell.mask.get(x, y)) {
                (true, true) => '@',
                (true, false) => '#',
                (false, true) => 'o',
                _ => '.',
            })
            .collect();
        println!("  {row}");
    }

    let overlay = render_heatmap(&h, &input)?;
    let path = std::env::temp_dir().join("lrp_heatmap_example.ppm");
    xai_triage::pnm::write_image(&path, &overlay)?;
    println!("\noverlay written to {}", path.display());
    Ok(())
}
