use lgm_core::{Model, ModelConfig, Result, Tensor};

/// Largest absolute heatmap change in each quadrant (top-left, top-right,
/// bottom-left, bottom-right) after bumping input pixel `(y, x)` of every channel.
pub fn quadrant_response(cfg: &ModelConfig, y: usize, x: usize, seed: u64) -> Result<[f64; 4]> {
    let model = Model::<f64>::with_seed(cfg, seed)?;
    let [h, w] = cfg.input_size;
    let base_in = Tensor::<f64>::from_fn([3, h, w], |i| ((i as f64) * 0.618).sin() * 0.5);
    let mut bumped = base_in.clone();
    for c in 0..3 {
        let v = bumped.at(&[c, y, x]);
        bumped.set(&[c, y, x], v + 1.0);
    }
    let a = model.forward(&base_in)?;
    let b = model.forward(&bumped)?;
    let [k, hh, hw] = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let mut out = [0f64; 4];
    for c in 0..k {
        for i in 0..hh {
            for j in 0..hw {
                let q = usize::from(i >= hh / 2) * 2 + usize::from(j >= hw / 2);
                out[q] = out[q].max((a.at(&[c, i, j]) - b.at(&[c, i, j])).abs());
            }
        }
    }
    Ok(out)
}
