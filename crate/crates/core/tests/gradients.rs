mod common;

use common::targets::{gradient_targets, Target};

const INSTANCES: usize = 50;
const TOLERANCE: f64 = 1e-4;

fn run(name: &str) {
    let targets = gradient_targets();
    let (_, f): &Target = targets.iter().find(|(n, _)| *n == name).expect("known target");
    let mut rng = common::rng(name.bytes().fold(7u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64)));
    for i in 0..INSTANCES {
        let err = f(&mut rng).unwrap_or_else(|e| panic!("{name} instance {i}: {e}"));
        assert!(err < TOLERANCE, "{name} instance {i}: relative error {err:e}");
    }
}

macro_rules! gradient_tests {
    ($($test:ident => $name:literal),* $(,)?) => {
        $( #[test] fn $test() { run($name); } )*

        #[test]
        fn every_target_has_a_test() {
            let listed = [$($name),*];
            for (n, _) in gradient_targets() {
                assert!(listed.contains(&n), "{n} has no test");
            }
        }
    };
}

gradient_tests! {
    conv2d => "conv2d",
    conv_transpose2d => "conv_transpose2d",
    linear => "linear",
    layer_norm => "layer_norm",
    batch_norm2d_train => "batch_norm2d_train",
    batch_norm2d_eval => "batch_norm2d_eval",
    gelu => "gelu",
    relu6 => "relu6",
    add => "add",
    mul => "mul",
    scale => "scale",
    concat_channels => "concat_channels",
    channel_shuffle => "channel_shuffle",
    npt_op1 => "npt_op1",
    npt_op2 => "npt_op2",
    npt_op3 => "npt_op3",
    pad2d => "pad2d",
    crop2d => "crop2d",
    sum => "sum",
    mean => "mean",
    masked_mse => "masked_mse",
    mlp_block => "mlp_block",
    larm_forward => "larm_forward",
    mobilevim_forward => "mobilevim_forward",
    fusion_none => "sfusion_forward/none",
    fusion_conv3x3 => "sfusion_forward/conv3x3",
    fusion_dw_separable => "sfusion_forward/dw_separable",
    fusion_sfusion => "sfusion_forward/sfusion",
    inverted_residual => "inverted_residual",
}

#[test]
fn disconnected_loss_yields_no_gradients() {
    let mut tape = lgm_core::Tape::<f64>::new();
    let x = tape.leaf(lgm_core::Tensor::ones([3]), true);
    let c = tape.constant(lgm_core::Tensor::ones([3]));
    let _ = tape.scale(x, 2.0);
    let loss = tape.sum(c);
    let g = tape.backward(loss).unwrap();
    assert!(g.is_empty());
    assert!(g.diagnostic().is_some());
}
