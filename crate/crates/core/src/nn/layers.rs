use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;

/// Hands out contiguous ranges of a flat parameter buffer.
#[derive(Debug, Clone, Default)]
pub struct ParamLayout {
    len: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Fully connected layer, weights stored row-major `[out][in]`, optional
/// binary connectivity mask of the same shape.
#[derive(Debug, Clone)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    w: usize,
    b: usize,
    mask: Option<Vec<f64>>,
}

impl Dense {
    pub fn new(layout: &mut ParamLayout, n_in: usize, n_out: usize) -> Self {
        let w = layout.alloc(n_in * n_out);
        let b = layout.alloc(n_out);
        Self {
            n_in,
            n_out,
            w,
            b,
            mask: None,
        }
    }

    pub fn masked(layout: &mut ParamLayout, n_in: usize, n_out: usize, mask: Vec<f64>) -> Self {
        assert_eq!(mask.len(), n_in * n_out);
        let mut d = Self::new(layout, n_in, n_out);
        d.mask = Some(mask);
        d
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.w..self.w + self.n_in * self.n_out
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.b..self.b + self.n_out
    }

    /// Gaussian init with standard deviation `gain / sqrt(fan_in)`, zero bias.
    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut Rng) {
        let sd = gain / (self.n_in.max(1) as f64).sqrt();
        for (i, w) in p[self.weight_range()].iter_mut().enumerate() {
            let keep = self.mask.as_ref().map_or(1.0, |m| m[i]);
            *w = keep * sd * rng.sample::<f64, _>(StandardNormal);
        }
        p[self.bias_range()].fill(0.0);
    }

    pub fn zero(&self, p: &mut [f64]) {
        p[self.weight_range()].fill(0.0);
        p[self.bias_range()].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n_in);
        let w = &p[self.weight_range()];
        let b = &p[self.bias_range()];
        for o in 0..self.n_out {
            let row = &w[o * self.n_in..(o + 1) * self.n_in];
            let s: f64 = match &self.mask {
                None => row.iter().zip(x).map(|(a, b)| a * b).sum(),
                Some(m) => {
                    let mrow = &m[o * self.n_in..(o + 1) * self.n_in];
                    row.iter()
                        .zip(x)
                        .zip(mrow)
                        .map(|((a, b), k)| a * b * k)
                        .sum()
                }
            };
            out[o] = s + b[o];
        }
    }

    /// Accumulates parameter gradients into `grad` and, when requested,
    /// writes (overwrites) the input gradient.
    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        g_out: &[f64],
        grad: &mut [f64],
        g_in: Option<&mut [f64]>,
    ) {
        let (wr, br) = (self.weight_range(), self.bias_range());
        {
            let gw = &mut grad[wr.clone()];
            for o in 0..self.n_out {
                let go = g_out[o];
                if go == 0.0 {
                    continue;
                }
                let row = &mut gw[o * self.n_in..(o + 1) * self.n_in];
                match &self.mask {
                    None => row.iter_mut().zip(x).for_each(|(g, xi)| *g += go * xi),
                    Some(m) => {
                        let mrow = &m[o * self.n_in..(o + 1) * self.n_in];
                        row.iter_mut()
                            .zip(x)
                            .zip(mrow)
                            .for_each(|((g, xi), k)| *g += go * xi * k)
                    }
                }
            }
        }
        for (g, go) in grad[br].iter_mut().zip(g_out) {
            *g += go;
        }
        if let Some(gx) = g_in {
            gx.fill(0.0);
            let w = &p[wr];
            for o in 0..self.n_out {
                let go = g_out[o];
                if go == 0.0 {
                    continue;
                }
                let row = &w[o * self.n_in..(o + 1) * self.n_in];
                match &self.mask {
                    None => gx.iter_mut().zip(row).for_each(|(g, wi)| *g += go * wi),
                    Some(m) => {
                        let mrow = &m[o * self.n_in..(o + 1) * self.n_in];
                        gx.iter_mut()
                            .zip(row)
                            .zip(mrow)
                            .for_each(|((g, wi), k)| *g += go * wi * k)
                    }
                }
            }
        }
    }
}

/// Valid-padding strided 1-D convolution. Activations are laid out
/// channel-major: `x[ch * len + t]`. Weights are `[out][in][width]`.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub c_in: usize,
    pub c_out: usize,
    pub width: usize,
    pub stride: usize,
    w: usize,
    b: usize,
}

impl Conv1d {
    pub fn new(
        layout: &mut ParamLayout,
        c_in: usize,
        c_out: usize,
        width: usize,
        stride: usize,
    ) -> Self {
        let w = layout.alloc(c_out * c_in * width);
        let b = layout.alloc(c_out);
        Self {
            c_in,
            c_out,
            width,
            stride,
            w,
            b,
        }
    }

    pub fn out_len(&self, len: usize) -> usize {
        if len < self.width {
            0
        } else {
            (len - self.width) / self.stride + 1
        }
    }

    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.w..self.w + self.c_out * self.c_in * self.width
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        self.b..self.b + self.c_out
    }

    pub fn init(&self, p: &mut [f64], gain: f64, rng: &mut Rng) {
        let sd = gain / ((self.c_in * self.width) as f64).sqrt();
        for w in &mut p[self.weight_range()] {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
        p[self.bias_range()].fill(0.0);
    }

    pub fn forward(&self, p: &[f64], x: &[f64], len: usize, out: &mut [f64]) -> usize {
        let lo = self.out_len(len);
        let w = &p[self.weight_range()];
        let b = &p[self.bias_range()];
        for o in 0..self.c_out {
            let dst = &mut out[o * lo..(o + 1) * lo];
            dst.fill(b[o]);
            for i in 0..self.c_in {
                let src = &x[i * len..(i + 1) * len];
                let ker =
                    &w[(o * self.c_in + i) * self.width..(o * self.c_in + i + 1) * self.width];
                for (j, d) in dst.iter_mut().enumerate() {
                    let win = &src[j * self.stride..j * self.stride + self.width];
                    *d += ker.iter().zip(win).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        lo
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        len: usize,
        g_out: &[f64],
        grad: &mut [f64],
        g_in: Option<&mut [f64]>,
    ) {
        let lo = self.out_len(len);
        let (wr, br) = (self.weight_range(), self.bias_range());
        for o in 0..self.c_out {
            let go = &g_out[o * lo..(o + 1) * lo];
            grad[br.start + o] += go.iter().sum::<f64>();
            for i in 0..self.c_in {
                let src = &x[i * len..(i + 1) * len];
                let base = wr.start + (o * self.c_in + i) * self.width;
                for k in 0..self.width {
                    let mut s = 0.0;
                    for (j, g) in go.iter().enumerate() {
                        s += g * src[j * self.stride + k];
                    }
                    grad[base + k] += s;
                }
            }
        }
        if let Some(gx) = g_in {
            gx[..self.c_in * len].fill(0.0);
            let w = &p[wr];
            for o in 0..self.c_out {
                let go = &g_out[o * lo..(o + 1) * lo];
                for i in 0..self.c_in {
                    let ker =
                        &w[(o * self.c_in + i) * self.width..(o * self.c_in + i + 1) * self.width];
                    let dst = &mut gx[i * len..(i + 1) * len];
                    for (j, g) in go.iter().enumerate() {
                        let win = &mut dst[j * self.stride..j * self.stride + self.width];
                        for (d, kv) in win.iter_mut().zip(ker) {
                            *d += g * kv;
                        }
                    }
                }
            }
        }
    }
}
