//! Interval bound propagation.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{IntervalBox, NetworkModel};

/// Pre- and post-activation intervals of every hidden layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerBounds {
    pub input: IntervalBox,
    /// Box over `v^k`, one per hidden layer.
    pub pre: Vec<IntervalBox>,
    /// Box over `x^{k+1} = φ(v^k)`.
    pub post: Vec<IntervalBox>,
}

impl LayerBounds {
    /// Box of variable layer `i` (0 = inputs).
    pub fn var_layer(&self, i: usize) -> &IntervalBox {
        if i == 0 {
            &self.input
        } else {
            &self.post[i - 1]
        }
    }

    /// Per-variable `(lo, hi)` in global index order.
    pub fn flat_var_bounds(&self) -> Vec<(f64, f64)> {
        std::iter::once(&self.input)
            .chain(&self.post)
            .flat_map(|b| b.lo.iter().copied().zip(b.hi.iter().copied()))
            .collect()
    }

    /// CSV with one row per hidden node: `layer,node,pre_lo,pre_hi,post_lo,post_hi`.
    /// Layers are numbered as variable layers, so the first hidden layer is 1.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "layer,node,pre_lo,pre_hi,post_lo,post_hi")?;
        for (k, (pre, post)) in self.pre.iter().zip(&self.post).enumerate() {
            for j in 0..pre.dim() {
                writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    k + 1,
                    j,
                    pre.lo[j],
                    pre.hi[j],
                    post.lo[j],
                    post.hi[j]
                )?;
            }
        }
        Ok(())
    }
}

/// Interval image of `W x + b` for `x` in a box.
pub fn affine_image(
    weights: &nalgebra::DMatrix<f64>,
    bias: &nalgebra::DVector<f64>,
    input: &IntervalBox,
) -> IntervalBox {
    let rows = weights.nrows();
    let mut lo = Vec::with_capacity(rows);
    let mut hi = Vec::with_capacity(rows);
    for r in 0..rows {
        let (mut l, mut h) = (bias[r], bias[r]);
        for c in 0..weights.ncols() {
            let w = weights[(r, c)];
            if w >= 0.0 {
                l += w * input.lo[c];
                h += w * input.hi[c];
            } else {
                l += w * input.hi[c];
                h += w * input.lo[c];
            }
        }
        lo.push(l);
        hi.push(h);
    }
    IntervalBox { lo, hi }
}

/// Forward pass in interval arithmetic. The activation is applied to the interval
/// endpoints, which is exact because every supported activation is monotone.
pub fn interval_propagate(model: &NetworkModel, input: &IntervalBox) -> Result<LayerBounds> {
    if input.dim() != model.n_inputs() {
        return Err(Error::Dimension {
            expected: model.n_inputs(),
            got: input.dim(),
        });
    }
    let act = model.activation();
    let mut pre = Vec::with_capacity(model.hidden_layers());
    let mut post: Vec<IntervalBox> = Vec::with_capacity(model.hidden_layers());
    for layer in &model.layers()[..model.hidden_layers()] {
        let prev = post.last().unwrap_or(input);
        let v = affine_image(&layer.weights, &layer.bias, prev);
        let x = IntervalBox {
            lo: v.lo.iter().map(|&z| act.apply(z)).collect(),
            hi: v.hi.iter().map(|&z| act.apply(z)).collect(),
        };
        pre.push(v);
        post.push(x);
    }
    Ok(LayerBounds {
        input: input.clone(),
        pre,
        post,
    })
}
