use rand::Rng;

use super::gauss::GaussVar;
use super::graph::{Graph, Var};
use super::params::{ParamId, ParamSet};

pub const LOG_STD_MIN: f64 = -9.210340371976182; // ln 1e-4
pub const LOG_STD_MAX: f64 = 4.605170185988092; // ln 1e2

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = ps.add_glorot(format!("{name}.w"), input, output, rng);
        let b = ps.add(format!("{name}.b"), super::Tensor::zeros(1, output));
        Linear { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// Dense layers with `tanh` between them (none after the last).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2);
        let layers = sizes.windows(2).enumerate().map(|(i, w)| Linear::new(ps, &format!("{name}.{i}"), w[0], w[1], rng)).collect();
        Mlp { layers }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Var {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x);
            if i + 1 < self.layers.len() {
                x = g.tanh(x);
            }
        }
        x
    }

    pub fn output(&self) -> usize {
        self.layers.last().unwrap().output
    }
}

/// Gated recurrent cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GruCell {
    /// Input projection for the update, reset and candidate gates.
    pub wx: Linear,
    pub uz: ParamId,
    pub ur: ParamId,
    pub un: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = Linear::new(ps, &format!("{name}.wx"), input, 3 * hidden, rng);
        let uz = ps.add_glorot(format!("{name}.uz"), hidden, hidden, rng);
        let ur = ps.add_glorot(format!("{name}.ur"), hidden, hidden, rng);
        let un = ps.add_glorot(format!("{name}.un"), hidden, hidden, rng);
        GruCell { wx, uz, ur, un, hidden }
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let d = self.hidden;
        let xp = self.wx.forward(g, x);
        let xz = g.slice(xp, 0, d);
        let xr = g.slice(xp, d, 2 * d);
        let xn = g.slice(xp, 2 * d, 3 * d);
        let (uz, ur, un) = (g.param(self.uz), g.param(self.ur), g.param(self.un));
        let hz = g.matmul(h, uz);
        let zs = g.add(xz, hz);
        let z = g.sigmoid(zs);
        let hr = g.matmul(h, ur);
        let rs = g.add(xr, hr);
        let r = g.sigmoid(rs);
        let rh = g.mul(r, h);
        let hn = g.matmul(rh, un);
        let ns = g.add(xn, hn);
        let n = g.tanh(ns);
        // h' = n + z * (h - n)
        let diff = g.sub(h, n);
        let zd = g.mul(z, diff);
        g.add(n, zd)
    }
}

/// Linear map to a diagonal Gaussian with clamped log standard deviation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianHead {
    pub proj: Linear,
    pub dim: usize,
}

impl GaussianHead {
    pub fn new<R: Rng>(ps: &mut ParamSet, name: &str, input: usize, dim: usize, rng: &mut R) -> Self {
        GaussianHead { proj: Linear::new(ps, name, input, 2 * dim, rng), dim }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> GaussVar {
        let out = self.proj.forward(g, x);
        let mean = g.slice(out, 0, self.dim);
        let raw = g.slice(out, self.dim, 2 * self.dim);
        let log_std = g.clamp(raw, LOG_STD_MIN, LOG_STD_MAX);
        GaussVar { mean, log_std }
    }
}
