//! Forward-pass latency benchmark.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::heatmap::decode_batch;
use crate::model::{Model, ModelConfig, INPUT_CHANNELS};
use crate::tensor::Tensor;

/// Latency statistics of one benchmark run. All times in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config_name: Option<String>,
    /// SHA-256 of the canonical JSON form of the configuration.
    pub config_digest: String,
    /// `[width, height]`.
    pub input_size: [usize; 2],
    pub warmup: usize,
    pub iters: usize,
    pub threads: usize,
    pub params: usize,
    pub macs: u64,
    /// Forward-only wall time of every timed iteration.
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// `1000 / mean_ms`.
    pub fps: f64,
    /// Mean wall time of heatmap decoding, measured separately.
    pub decode_mean_ms: f64,
    /// SHA-256 of the output heatmaps of the last iteration.
    pub output_digest: String,
}

/// Nearest-rank percentile of an unsorted sample list.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let rank = ((p / 100.0) * s.len() as f64).ceil().max(1.0) as usize;
    s[rank.min(s.len()) - 1]
}

/// `(mean, p50, p95)`.
pub fn summarize(samples: &[f64]) -> (f64, f64, f64) {
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    (mean, percentile(samples, 50.0), percentile(samples, 95.0))
}

pub fn config_digest(cfg: &ModelConfig) -> String {
    hex(&Sha256::digest(serde_json::to_vec(cfg).expect("config serializes")))
}

pub fn tensor_digest(t: &Tensor<f32>) -> String {
    let mut h = Sha256::new();
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
    hex(&h.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl BenchReport {
    /// Whether mean, percentiles and FPS follow from the embedded samples.
    pub fn is_consistent(&self) -> bool {
        if self.samples_ms.len() != self.iters || self.iters == 0 {
            return false;
        }
        let (mean, p50, p95) = summarize(&self.samples_ms);
        mean == self.mean_ms && p50 == self.p50_ms && p95 == self.p95_ms && self.fps == 1000.0 / mean
    }

    pub fn table(&self) -> String {
        format!(
            "config        {} ({})\n\
             input (WxH)   {}x{}\n\
             threads       {}\n\
             params        {}\n\
             MACs          {}\n\
             warmup/iters  {}/{}\n\
             mean ms       {:.3}\n\
             p50 ms        {:.3}\n\
             p95 ms        {:.3}\n\
             FPS           {:.2}\n\
             decode ms     {:.4}\n",
            self.config_name.as_deref().unwrap_or("-"),
            &self.config_digest[..12],
            self.input_size[0],
            self.input_size[1],
            self.threads,
            self.params,
            self.macs,
            self.warmup,
            self.iters,
            self.mean_ms,
            self.p50_ms,
            self.p95_ms,
            self.fps,
            self.decode_mean_ms
        )
    }
}

/// Times `iters` forward passes of `cfg` rebuilt at `[width, height]`, after
/// `warmup` untimed passes, on a pool of `threads` workers. The model and
/// the single random input are derived from `seed`.
pub fn bench_run(
    cfg: &ModelConfig,
    input_wh: [usize; 2],
    warmup: usize,
    iters: usize,
    threads: usize,
    seed: u64,
) -> Result<BenchReport> {
    if iters == 0 {
        return Err(Error::InvalidArgument("benchmark needs at least one timed iteration".into()));
    }
    if threads == 0 {
        return Err(Error::InvalidArgument("thread count must be at least 1".into()));
    }
    let [w, h] = input_wh;
    let cfg = cfg.with_input_size(h, w);
    let model = Model::<f32>::with_seed(&cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = Tensor::from_fn([1, INPUT_CHANNELS, h, w], |_| rng.gen_range(-1.0f32..1.0));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build thread pool: {e}")))?;

    pool.install(|| {
        for _ in 0..warmup {
            model.forward(&input)?;
        }
        let mut samples = Vec::with_capacity(iters);
        let mut decode = Vec::with_capacity(iters);
        let mut last = None;
        for _ in 0..iters {
            let t0 = Instant::now();
            let out = model.forward(&input)?;
            samples.push(t0.elapsed().as_secs_f64() * 1e3);
            let t1 = Instant::now();
            std::hint::black_box(decode_batch(&out)?);
            decode.push(t1.elapsed().as_secs_f64() * 1e3);
            last = Some(out);
        }
        let (mean, p50, p95) = summarize(&samples);
        let report = model.cost_report();
        Ok(BenchReport {
            config_name: cfg.name.clone(),
            config_digest: config_digest(&cfg),
            input_size: input_wh,
            warmup,
            iters,
            threads,
            params: model.count_params(),
            macs: report.macs(),
            samples_ms: samples,
            mean_ms: mean,
            p50_ms: p50,
            p95_ms: p95,
            fps: 1000.0 / mean,
            decode_mean_ms: decode.iter().sum::<f64>() / decode.len() as f64,
            output_digest: tensor_digest(last.as_ref().expect("at least one iteration")),
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank() {
        let s = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(percentile(&s, 50.0), 3.0);
        assert_eq!(percentile(&s, 95.0), 5.0);
        assert_eq!(percentile(&[7.0], 50.0), 7.0);
    }

    #[test]
    fn single_iteration_report() {
        let r = bench_run(&ModelConfig::toy(), [64, 64], 0, 1, 1, 0).unwrap();
        assert_eq!(r.samples_ms.len(), 1);
        assert_eq!(r.p50_ms, r.mean_ms);
        assert!(r.is_consistent());
        assert!(bench_run(&ModelConfig::toy(), [64, 64], 0, 0, 1, 0).is_err());
    }
}
