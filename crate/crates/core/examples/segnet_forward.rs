//! One training-mode pass through the default dual-encoder network,
//! showing where the two streams meet.
//!
//! `cargo run --release --example segnet_forward`

use fogsight::segnet::{build_network, forward, NetworkSpec};
use fogsight::tensor::{seeded_rng, NormMode};
use fogsight::{Tape, Tensor};

fn main() -> fogsight::Result<()> {
    let spec = NetworkSpec::default();
    let mut rng = seeded_rng(0);
    let mut params = build_network::<f32>(&spec, &mut rng)?;
    println!("{} trainable weights", params.param_count());

    let mut tape = Tape::<f32>::new();
    let rgb = tape.constant(Tensor::full(&[1, 3, 64, 128], 0.25f32));
    let aux = tape.constant(Tensor::full(&[1, 2, 64, 128], 0.5f32));
    let f = forward(&mut tape, &mut params, &spec, rgb, Some(aux), NormMode::Train, &mut rng)?;
    println!("logits     {:?}", tape.shape(f.outputs.logits));
    println!("bottleneck {:?}", tape.shape(f.outputs.bottleneck));
    for &(width, v) in &f.outputs.fused {
        println!("fusion at width {width:>3}: {:?}", tape.shape(v));
    }
    Ok(())
}
