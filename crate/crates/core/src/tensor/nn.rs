use rand::Rng;
use rand_distr::StandardNormal;

use super::array::Tensor;
use super::optim::{Binding, ParamStore};
use super::tape::{Tape, Var};
use crate::error::Result;

/// Default MLP hidden width.
pub const HIDDEN_WIDTH: usize = 64;

/// Affine map `x·W + b` with `W: in × out`.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: String,
    bias: Option<String>,
    in_width: usize,
    out_width: usize,
}

impl Linear {
    /// He-style init: `W ~ N(0, 2 / fan_in)`, zero bias.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_width: usize,
        out_width: usize,
        bias: bool,
    ) -> Result<Self> {
        let std = (2.0 / in_width.max(1) as f64).sqrt();
        let w: Vec<f64> = (0..in_width * out_width).map(|_| std * rng.sample::<f64, _>(StandardNormal)).collect();
        let weight = format!("{name}.w");
        store.insert(weight.clone(), Tensor::new(in_width, out_width, w)?)?;
        let bias = if bias {
            let b = format!("{name}.b");
            store.insert(b.clone(), Tensor::zeros(1, out_width))?;
            Some(b)
        } else {
            None
        };
        Ok(Self { weight, bias, in_width, out_width })
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        let y = tape.matmul(x, params.get(&self.weight))?;
        match &self.bias {
            Some(b) => tape.add_row(y, params.get(b)),
            None => Ok(y),
        }
    }

    pub fn in_width(&self) -> usize {
        self.in_width
    }

    pub fn out_width(&self) -> usize {
        self.out_width
    }
}

/// Stack of [`Linear`] layers with SiLU between them (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, widths: &[usize]) -> Result<Self> {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layers })
    }

    /// The default two-layer shape `in → hidden → out`.
    pub fn two_layer<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_width: usize,
        hidden: usize,
        out_width: usize,
    ) -> Result<Self> {
        Self::new(store, rng, name, &[in_width, hidden, out_width])
    }

    pub fn forward(&self, tape: &mut Tape, params: &Binding, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, params, h)?;
            if i + 1 < self.layers.len() {
                h = tape.silu(h);
            }
        }
        Ok(h)
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[self.layers.len() - 1].out_width()
    }
}
