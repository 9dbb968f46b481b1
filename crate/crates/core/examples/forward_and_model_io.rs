//! Builds a small convolutional network, runs a traced forward pass and
//! round-trips it through the binary model format.

use xai_triage::model_io::{load_model, save_model};
use xai_triage::{Conv2d, Dense, Layer, Network, Pool, Tensor};

fn main() -> xai_triage::Result<()> {
    // 1x6x6 input, one 3x3 edge filter, 2x2 max pool, 2-class head
    let edge = Tensor::new(
        vec![1, 1, 3, 3],
        vec![-1., 0., 1., -2., 0., 2., -1., 0., 1.],
    )?;
    let conv = Conv2d::new(edge, Tensor::vector(vec![0.0]), 1, 1)?;
    let head = Dense::new(
        Tensor::new(vec![2, 9], [vec![0.5; 9], vec![-0.5; 9]].concat())?,
        Tensor::vector(vec![0.0, 1.0]),
    )?;
    let net = Network::new(
        vec![1, 6, 6],
        vec![
            Layer::Conv2d(conv),
            Layer::Relu,
            Layer::MaxPool(Pool::new(2)),
            Layer::Flatten,
            Layer::Dense(head),
        ],
    )?;
    for i in 0..=net.layers().len() {
        println!("shape after {i} layers: {:?}", net.shape_at(i));
    }

    let step = Tensor::new(
        vec![1, 6, 6],
        (0..36)
            .map(|i| if i % 6 >= 3 { 1.0 } else { 0.0 })
            .collect(),
    )?;
    let trace = net.trace(&step)?;
    println!("logits {:?}", trace.logits().data());
    println!("penultimate features {:?}", trace.penultimate().data());
    let (class, _) = net.predict_class(&step)?;
    println!("predicted class {class}");

    let mut bytes = Vec::new();
    save_model(&net, &mut bytes)?;
    let header_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(0);
    println!(
        "{} bytes, first line {:?}",
        bytes.len(),
        String::from_utf8_lossy(&bytes[..header_end])
    );
    let back = load_model(bytes.as_slice())?;
    assert_eq!(back.logits(&step)?, net.logits(&step)?);
    println!("reloaded model reproduces the logits exactly");
    Ok(())
}
