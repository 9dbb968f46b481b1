//! Blurs 30% of a test corpus, scores every image with the Laplacian
//! sharpness measure and sweeps the gate threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xai_triage::rebalance::{rebalance_head, RebalanceConfig, SolverConfig};
use xai_triage::sharpness::{image_sharpness, sweep_csv, sweep_thresholds};
use xai_triage::synth::{
    blur, classes, corpus, fit_plain_head, shell_network, to_samples, ShellStyle,
};
use xai_triage::Sample;

fn main() -> xai_triage::Result<()> {
    let style = ShellStyle::default();
    let names = classes();
    let train = to_samples(&corpus([100, 200, 1000], &style, 1));
    let base = fit_plain_head(
        &shell_network(style.size, names.len())?,
        &train,
        &SolverConfig::default(),
    )?;
    let net = rebalance_head(&base, &train, &names, &RebalanceConfig::for_classes(&names))?.network;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let test = corpus([200, 200, 200], &style, 2);
    let images: Vec<_> = test
        .iter()
        .map(|s| {
            if rng.random_bool(0.3) {
                blur(&s.image, 12)
            } else {
                s.image.clone()
            }
        })
        .collect();
    let scores = images
        .iter()
        .map(|i| image_sharpness(i).map(|s| s.normalized))
        .collect::<xai_triage::Result<Vec<_>>>()?;
    let samples: Vec<Sample> = images
        .iter()
        .zip(&test)
        .map(|(i, s)| Sample::new(i.to_tensor(), s.label))
        .collect();

    let max = scores.iter().copied().fold(0.0, f64::max);
    let thresholds: Vec<f64> = (0..=12).map(|i| max * i as f64 / 12.0).collect();
    let points = sweep_thresholds(&net, &samples, &scores, &thresholds)?;
    print!("{}", sweep_csv(&points, names.names()));
    Ok(())
}
