//! Parameter and multiply-accumulate accounting by shape inference.

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
    Linear,
    LayerNorm,
    BatchNorm,
}

/// One parameterized layer of a cost report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CostEntry {
    pub name: String,
    pub kind: LayerKind,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub params: u64,
    /// Multiply-accumulates for a single sample.
    pub macs: u64,
}

/// Per-layer costs in execution order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub layers: Vec<CostEntry>,
}

impl CostReport {
    pub fn push(&mut self, entry: CostEntry) {
        self.layers.push(entry);
    }

    pub fn params(&self) -> u64 {
        self.layers.iter().map(|l| l.params).sum()
    }

    /// Total multiply-accumulates; this is the FLOP count (1 MAC = 1 FLOP).
    pub fn macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    /// Twice the MAC count, for tables that count multiplies and adds apart.
    pub fn flops_2x(&self) -> u64 {
        2 * self.macs()
    }

    /// MACs of convolution, transposed convolution and the 1x1 head. These
    /// are proportional to the number of output pixels.
    pub fn conv_macs(&self) -> u64 {
        self.layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv | LayerKind::ConvTranspose))
            .map(|l| l.macs)
            .sum()
    }

    pub fn linear_macs(&self) -> u64 {
        self.layers.iter().filter(|l| l.kind == LayerKind::Linear).map(|l| l.macs).sum()
    }

    /// Human-readable per-layer table.
    pub fn table(&self) -> String {
        let mut s = format!("{:<44} {:<15} {:>18} {:>10} {:>14}\n", "layer", "kind", "output", "params", "MACs");
        for l in &self.layers {
            s.push_str(&format!(
                "{:<44} {:<15} {:>18} {:>10} {:>14}\n",
                l.name,
                format!("{:?}", l.kind),
                format!("{:?}", l.output),
                l.params,
                l.macs
            ));
        }
        s.push_str(&format!(
            "total params {}  MACs {}  (2xMACs {})\n",
            self.params(),
            self.macs(),
            self.flops_2x()
        ));
        s
    }
}
