//! Hand-derived parameter and MAC counts for single layers and composite blocks.

use lgm_core::blocks::{
    BatchNorm2d, Conv2d, ConvTranspose2d, Fusion, FusionConfig, FusionMode, InvertedResidual, Larm, LayerNorm, Linear,
    MlpBlock, MobileVim, MobileVimSpec,
};
use lgm_core::cost::CostReport;
use lgm_core::Module;

/// `(params, macs)` as counted, and as derived by hand.
pub struct CostCase {
    pub counted: (u64, u64),
    pub derived: (u64, u64),
}

impl CostCase {
    pub fn ok(&self) -> bool {
        self.counted == self.derived
    }
}

pub type Case = (&'static str, fn() -> CostCase);

fn conv(ci: usize, co: usize, k: usize, s: usize, g: usize, bias: bool, input: [usize; 3], out: [usize; 3]) -> (u64, u64) {
    let c = Conv2d::<f32>::new(ci, co, k, s, k / 2, g, bias).unwrap();
    let mut r = CostReport::default();
    assert_eq!(c.cost("c", input, &mut r).unwrap(), out);
    assert_eq!(r.params(), c.param_count() as u64);
    (r.params(), r.macs())
}

fn deconv(ci: usize, co: usize, bias: bool, input: [usize; 3], out: [usize; 3]) -> (u64, u64) {
    let d = ConvTranspose2d::<f32>::new(ci, co, 4, 2, 1, bias);
    let mut r = CostReport::default();
    assert_eq!(d.cost("d", input, &mut r).unwrap(), out);
    (r.params(), r.macs())
}

pub fn single_layer_cases() -> Vec<Case> {
    vec![
        ("conv_3x3_stride2_bias", || CostCase {
            // out 16x16x12; weights 16*3*9 + 16; MACs 16*3*9*16*12
            counted: conv(3, 16, 3, 2, 1, true, [3, 32, 24], [16, 16, 12]),
            derived: (448, 82_944),
        }),
        ("conv_depthwise", || CostCase {
            counted: conv(16, 16, 3, 1, 16, false, [16, 8, 8], [16, 8, 8]),
            derived: (16 * 9, 16 * 9 * 64),
        }),
        ("conv_pointwise", || CostCase {
            counted: conv(16, 32, 1, 1, 1, true, [16, 10, 6], [32, 10, 6]),
            derived: (32 * 16 + 32, 32 * 16 * 60),
        }),
        ("conv_grouped_4", || CostCase {
            counted: conv(32, 32, 3, 1, 4, true, [32, 6, 6], [32, 6, 6]),
            derived: (32 * 8 * 9 + 32, 32 * 8 * 9 * 36),
        }),
        ("conv_5x5_odd_extent", || CostCase {
            counted: conv(8, 8, 5, 1, 1, false, [8, 7, 5], [8, 7, 5]),
            derived: (1_600, 1_600 * 35),
        }),
        ("deconv_4x4_stride2", || CostCase {
            // MACs in*out*k^2*Hin*Win
            counted: deconv(32, 16, false, [32, 8, 6], [16, 16, 12]),
            derived: (8_192, 8_192 * 48),
        }),
        ("deconv_bias", || CostCase {
            counted: deconv(8, 8, true, [8, 3, 3], [8, 6, 6]),
            derived: (8 * 8 * 16 + 8, 1_024 * 9),
        }),
        ("linear_leading_rows", || {
            let l = Linear::<f32>::new(12, 48, true);
            let mut r = CostReport::default();
            assert_eq!(l.cost("l", &[4, 5, 12], &mut r).unwrap(), vec![4, 5, 48]);
            CostCase { counted: (r.params(), r.macs()), derived: (12 * 48 + 48, 20 * 12 * 48) }
        }),
        ("layer_norm", || {
            let mut r = CostReport::default();
            LayerNorm::<f32>::new(24).cost("n", &[6, 24], &mut r);
            CostCase { counted: (r.params(), r.macs()), derived: (48, 0) }
        }),
        ("batch_norm", || {
            let n = BatchNorm2d::<f32>::new(16);
            let mut r = CostReport::default();
            n.cost("n", [16, 8, 8], &mut r);
            // Running statistics are buffers, not parameters.
            assert_eq!(n.named_params().len(), 4);
            CostCase { counted: (r.params(), r.macs()), derived: (32, 0) }
        }),
    ]
}

pub fn composite_cases() -> Vec<Case> {
    vec![
        ("mlp_block", || {
            // L=12, r=4, hidden 48: 2*12 + 12*48 + 48 + 48*12 + 12
            let m = MlpBlock::<f32>::new(12, 4).unwrap();
            let mut r = CostReport::default();
            m.cost("m", &[2, 3, 12], &mut r).unwrap();
            assert_eq!(MlpBlock::<f32>::closed_form_params(12, 4), 1_236);
            CostCase { counted: (r.params(), r.macs()), derived: (1_236, 6 * 2 * 12 * 48) }
        }),
        ("larm", || {
            // d=8, 8x6 map, 2x2 patches: N=12, P=4, ratio 2.
            // inter (L=12, hidden 24): 636 params over P*d = 32 rows
            // intra (L=4, hidden 8): 84 params over N*d = 96 rows
            let l = Larm::<f32>::new(8, 8, 6, (2, 2), 2, false).unwrap();
            let mut r = CostReport::default();
            l.cost("l", [8, 8, 6], &mut r).unwrap();
            CostCase { counted: (r.params(), r.macs()), derived: (720, 32 * 2 * 12 * 24 + 96 * 2 * 4 * 8) }
        }),
        ("mobilevim", || {
            // C=8, d=12, 8x8, 2x2 patches, ratio 2: N=16, P=4.
            let spec =
                MobileVimSpec { channels: 8, dim: 12, height: 8, width: 8, patch: (2, 2), mlp_ratio: 2, pad_to_fit: false };
            let b = MobileVim::<f32>::new(spec).unwrap();
            let mut r = CostReport::default();
            b.cost("b", [8, 8, 8], &mut r).unwrap();
            let inter = 2 * 16 + 16 * 32 + 32 + 32 * 16 + 16;
            let intra = 2 * 4 + 4 * 8 + 8 + 8 * 4 + 4;
            let convs = (9 * 64 + 8) + (8 * 12 + 12) + (12 * 8 + 8) + (9 * 16 * 8 + 8);
            let conv_macs = (9 * 64 + 8 * 12 + 12 * 8 + 9 * 16 * 8) * 64;
            let mlp_macs = (4 * 12) * 2 * 16 * 32 + (16 * 12) * 2 * 4 * 8;
            CostCase { counted: (r.params(), r.macs()), derived: (inter + intra + convs, conv_macs + mlp_macs) }
        }),
        ("inverted_residual", || {
            // 16 -> 24, stride 2, t=6: hidden 96, output 8x6.
            let b = InvertedResidual::<f32>::new(16, 24, 2, 6).unwrap();
            let mut r = CostReport::default();
            assert_eq!(b.cost("b", [16, 16, 12], &mut r).unwrap(), [24, 8, 6]);
            let params = (16 * 96 + 2 * 96) + (9 * 96 + 2 * 96) + (96 * 24 + 2 * 24);
            CostCase {
                counted: (r.params(), r.macs()),
                derived: (params, 96 * 16 * 192 + 96 * 9 * 48 + 24 * 96 * 48),
            }
        }),
        ("sfusion", || {
            // 16 + 16 -> 16, shuffle 2, conv groups 2: 16*16*9 + 16 weights.
            let f = Fusion::<f32>::new(FusionConfig::new(FusionMode::Sfusion, 2, 2), 16, 16, 16).unwrap();
            let mut r = CostReport::default();
            f.cost("f", [16, 16, 12], [16, 16, 12], &mut r).unwrap();
            CostCase { counted: (r.params(), r.macs()), derived: (2_320, 16 * 16 * 9 * 192) }
        }),
    ]
}
