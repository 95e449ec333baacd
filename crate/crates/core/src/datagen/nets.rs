//! Generator and discriminator with explicit backward passes.

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
/// Below this many rows a product is cheaper as row updates than through
/// gemm, which repacks the whole weight matrix on every call.
const FEW_ROWS: usize = 8;

fn small_or_gemm(x: ArrayView2<f64>, w: &Array2<f64>) -> Array2<f64> {
    if x.nrows() > FEW_ROWS {
        return x.dot(w);
    }
    let mut y = Array2::zeros((x.nrows(), w.ncols()));
    for (k, wk) in w.rows().into_iter().enumerate() {
        for (i, mut yi) in y.rows_mut().into_iter().enumerate() {
            let a = x[[i, k]];
            if a != 0.0 {
                yi.scaled_add(a, &wk);
            }
        }
    }
    y
}

/// `xᵀ · dy` in standard layout.
fn weight_grad(x: ArrayView2<f64>, dy: ArrayView2<f64>) -> Array2<f64> {
    let g = x.t().dot(&dy);
    if g.is_standard_layout() {
        g
    } else {
        g.as_standard_layout().into_owned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `fan_in × fan_out`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform in ±1/sqrt(fan_in) for weights and biases.
    pub fn init<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let k = 1.0 / (fan_in as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-k..k)),
            b: Array1::from_shape_fn(fan_out, |_| rng.random_range(-k..k)),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut y = small_or_gemm(x, &self.w);
        y += &self.b;
        y
    }

    fn backward(&self, x: ArrayView2<f64>, dy: ArrayView2<f64>) -> (LinearGrad, Array2<f64>) {
        let g = LinearGrad {
            w: weight_grad(x, dy),
            b: dy.sum_axis(Axis(0)),
        };
        (g, self.input_grad(dy))
    }

    fn input_grad(&self, dy: ArrayView2<f64>) -> Array2<f64> {
        if dy.nrows() > FEW_ROWS {
            return dy.dot(&self.w.t());
        }
        let mut dx = Array2::zeros((dy.nrows(), self.w.nrows()));
        for (k, w) in self.w.rows().into_iter().enumerate() {
            for (i, d) in dy.rows().into_iter().enumerate() {
                dx[[i, k]] = w.dot(&d);
            }
        }
        dx
    }

    fn params_mut(&mut self) -> [&mut [f64]; 2] {
        [
            self.w.as_slice_mut().expect("standard layout"),
            self.b.as_slice_mut().expect("standard layout"),
        ]
    }
}

impl LinearGrad {
    fn zeros_like(l: &Linear) -> Self {
        Self {
            w: Array2::zeros(l.w.raw_dim()),
            b: Array1::zeros(l.b.raw_dim()),
        }
    }

    fn slices(&self) -> [&[f64]; 2] {
        [
            self.w.as_slice().expect("standard layout"),
            self.b.as_slice().expect("standard layout"),
        ]
    }
}

/// Batch normalisation. Training normalises with the statistics of the
/// current batch and tracks running averages for inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

struct BnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
        }
    }

    fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, BnCache) {
        let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = &x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
        let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        let xhat = centered * &inv_std;
        let y = &xhat * &self.gamma + &self.beta;
        (y, BnCache { xhat, inv_std, mean, var })
    }

    fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let inv_std = self.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
        (&x - &self.running_mean) * &(inv_std * &self.gamma) + &self.beta
    }

    /// Exponential running averages; the variance is the unbiased estimate.
    fn track(&mut self, c: &BnCache) {
        let n = c.xhat.nrows() as f64;
        let unbiased = if n > 1.0 { &c.var * (n / (n - 1.0)) } else { c.var.clone() };
        self.running_mean = &self.running_mean * (1.0 - BN_MOMENTUM) + &c.mean * BN_MOMENTUM;
        self.running_var = &self.running_var * (1.0 - BN_MOMENTUM) + unbiased * BN_MOMENTUM;
    }

    fn backward(&self, dy: ArrayView2<f64>, c: &BnCache) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let n = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (&dy * &c.xhat).sum_axis(Axis(0));
        let dxhat = &dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &c.xhat).sum_axis(Axis(0));
        let dx = (dxhat * n - &sum_dxhat - &c.xhat * &sum_dxhat_xhat) * &(&c.inv_std / n);
        (dx, dgamma, dbeta)
    }
}

/// `concat(relu(bn(fc(x))), x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub fc: Linear,
    pub bn: BatchNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub blocks: Vec<Residual>,
    pub out: Linear,
}

pub struct GenCache {
    inputs: Vec<Array2<f64>>,
    bn: Vec<BnCache>,
    pre_relu: Vec<Array2<f64>>,
    last: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenGrads {
    blocks: Vec<(LinearGrad, Array1<f64>, Array1<f64>)>,
    out: LinearGrad,
}

impl Generator {
    pub fn init<R: Rng>(input_dim: usize, widths: &[usize], output_dim: usize, rng: &mut R) -> Self {
        let mut dim = input_dim;
        let mut blocks = Vec::with_capacity(widths.len());
        for &w in widths {
            blocks.push(Residual {
                fc: Linear::init(dim, w, rng),
                bn: BatchNorm::new(w),
            });
            dim += w;
        }
        Self {
            blocks,
            out: Linear::init(dim, output_dim, rng),
        }
    }

    /// Raw output logits, normalising with batch statistics.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, GenCache) {
        let mut a = x.to_owned();
        let mut inputs = Vec::with_capacity(self.blocks.len());
        let mut bn = Vec::with_capacity(self.blocks.len());
        let mut pre_relu = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let h = block.fc.forward(a.view());
            let (y, cache) = block.bn.forward(h.view());
            let r = y.mapv(|v| v.max(0.0));
            let next = concatenate![Axis(1), r, a];
            inputs.push(a);
            bn.push(cache);
            pre_relu.push(y);
            a = next;
        }
        let logits = self.out.forward(a.view());
        (
            logits,
            GenCache {
                inputs,
                bn,
                pre_relu,
                last: a,
            },
        )
    }

    /// Raw output logits, normalising with the running statistics.
    pub fn infer(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for block in &self.blocks {
            let h = block.fc.forward(a.view());
            let r = block.bn.infer(h.view()).mapv(|v| v.max(0.0));
            a = concatenate![Axis(1), r, a];
        }
        self.out.forward(a.view())
    }

    /// Folds the batch statistics of a training pass into the running ones.
    pub fn track_statistics(&mut self, cache: &GenCache) {
        for (block, c) in self.blocks.iter_mut().zip(&cache.bn) {
            block.bn.track(c);
        }
    }

    pub fn backward(&self, dlogits: ArrayView2<f64>, cache: &GenCache) -> GenGrads {
        let (out, mut da) = self.out.backward(cache.last.view(), dlogits);
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let w = block.fc.w.ncols();
            let mut dy = da.slice(s![.., ..w]).to_owned();
            let skip = da.slice(s![.., w..]).to_owned();
            Zip::from(&mut dy).and(&cache.pre_relu[i]).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0;
                }
            });
            let (dh, dgamma, dbeta) = block.bn.backward(dy.view(), &cache.bn[i]);
            let (fc, dx) = block.fc.backward(cache.inputs[i].view(), dh.view());
            blocks.push((fc, dgamma, dbeta));
            da = dx + skip;
        }
        blocks.reverse();
        GenGrads { blocks, out }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for b in &mut self.blocks {
            v.extend(b.fc.params_mut());
            v.push(b.bn.gamma.as_slice_mut().expect("standard layout"));
            v.push(b.bn.beta.as_slice_mut().expect("standard layout"));
        }
        v.extend(self.out.params_mut());
        v
    }

    pub fn is_finite(&self) -> bool {
        let finite = |a: &[f64]| a.iter().all(|v| v.is_finite());
        self.blocks.iter().all(|b| {
            finite(b.fc.w.as_slice().unwrap_or(&[]))
                && finite(b.fc.b.as_slice().unwrap_or(&[]))
                && finite(b.bn.gamma.as_slice().unwrap_or(&[]))
                && finite(b.bn.beta.as_slice().unwrap_or(&[]))
        }) && finite(self.out.w.as_slice().unwrap_or(&[]))
    }
}

impl GenGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for (fc, g, b) in &self.blocks {
            v.extend(fc.slices());
            v.push(g.as_slice().expect("standard layout"));
            v.push(b.as_slice().expect("standard layout"));
        }
        v.extend(self.out.slices());
        v
    }
}

/// Leaky-ReLU critic over packed inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discriminator {
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub slope: f64,
}

pub struct DiscCache {
    /// Input of every layer, the output layer last.
    inputs: Vec<Array2<f64>>,
    /// Activation slope (1 or `slope`) of every hidden unit.
    masks: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscGrads {
    pub hidden: Vec<LinearGrad>,
    pub out: LinearGrad,
}

impl Discriminator {
    pub fn init<R: Rng>(input_dim: usize, widths: &[usize], slope: f64, rng: &mut R) -> Self {
        let mut dim = input_dim;
        let mut hidden = Vec::with_capacity(widths.len());
        for &w in widths {
            hidden.push(Linear::init(dim, w, rng));
            dim = w;
        }
        Self {
            hidden,
            out: Linear::init(dim, 1, rng),
            slope,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().unwrap_or(&self.out).w.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, DiscCache) {
        let mut a = x.to_owned();
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut masks = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let h = layer.forward(a.view());
            let mask = h.mapv(|v| if v > 0.0 { 1.0 } else { self.slope });
            inputs.push(a);
            a = &h * &mask;
            masks.push(mask);
        }
        let out = self.out.forward(a.view());
        inputs.push(a);
        (out, DiscCache { inputs, masks })
    }

    /// Parameter gradients and the input gradient for `dout` at the output.
    pub fn backward(&self, dout: ArrayView2<f64>, cache: &DiscCache) -> (DiscGrads, Array2<f64>) {
        let m = self.hidden.len();
        let (out, mut da) = self.out.backward(cache.inputs[m].view(), dout);
        let mut hidden = Vec::with_capacity(m);
        for i in (0..m).rev() {
            let dh = da * &cache.masks[i];
            let (g, dx) = self.hidden[i].backward(cache.inputs[i].view(), dh.view());
            hidden.push(g);
            da = dx;
        }
        hidden.reverse();
        (DiscGrads { hidden, out }, da)
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, dout: ArrayView2<f64>, cache: &DiscCache) -> Array2<f64> {
        let mut da = self.out.input_grad(dout);
        for i in (0..self.hidden.len()).rev() {
            let dh = da * &cache.masks[i];
            da = self.hidden[i].input_grad(dh.view());
        }
        da
    }

    /// Input gradients `∂D/∂x` row by row, together with the intermediate
    /// `U_i = M_i ⊙ (U_{i+1} W_{i+1}ᵀ)` factors.
    fn input_gradient(&self, masks: &[Array2<f64>]) -> (Array2<f64>, Vec<Array2<f64>>) {
        let m = self.hidden.len();
        let n = masks.first().map_or(0, |k| k.nrows());
        let w_out = self.out.w.column(0);
        let mut us: Vec<Array2<f64>> = Vec::with_capacity(m);
        let mut u = &masks[m - 1] * &w_out;
        for i in (0..m - 1).rev() {
            us.push(u.clone());
            u = &masks[i] * &self.hidden[i + 1].input_grad(u.view());
        }
        us.push(u);
        us.reverse();
        let g = self.hidden[0].input_grad(us[0].view());
        debug_assert_eq!(g.nrows(), n);
        (g, us)
    }

    /// `λ · mean_r (‖∂D/∂x_r‖ − 1)²` and its parameter gradients. The critic
    /// is piecewise linear, so the penalty depends on the weights through the
    /// product of weight matrices and the (locally constant) activation
    /// slopes only; biases receive no gradient.
    pub fn gradient_penalty(&self, x: ArrayView2<f64>, weight: f64) -> (f64, DiscGrads) {
        assert!(!self.hidden.is_empty(), "critic needs a hidden layer");
        let (_, cache) = self.forward(x);
        let masks = &cache.masks;
        let (g, us) = self.input_gradient(masks);
        let n = g.nrows() as f64;
        let norms: Array1<f64> = g.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
        let penalty = weight * norms.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / n;

        // dP/dG_r = 2λ/n (‖G_r‖ − 1) G_r / ‖G_r‖
        let scale = norms.mapv(|v| 2.0 * weight / n * (v - 1.0) / v.max(1e-12));
        let gbar = &g * &scale.insert_axis(Axis(1));

        let m = self.hidden.len();
        let grad = |w: Array2<f64>, l: &Linear| LinearGrad { w, b: Array1::zeros(l.b.raw_dim()) };
        let mut hidden = Vec::with_capacity(m);
        hidden.push(grad(weight_grad(gbar.view(), us[0].view()), &self.hidden[0]));
        let mut ubar = small_or_gemm(gbar.view(), &self.hidden[0].w);
        for i in 0..m - 1 {
            let vbar = &masks[i] * &ubar;
            hidden.push(grad(weight_grad(vbar.view(), us[i + 1].view()), &self.hidden[i + 1]));
            ubar = small_or_gemm(vbar.view(), &self.hidden[i + 1].w);
        }
        let mut out = LinearGrad::zeros_like(&self.out);
        let dw_out = (&masks[m - 1] * &ubar).sum_axis(Axis(0));
        out.w.column_mut(0).assign(&dw_out);
        (penalty, DiscGrads { hidden, out })
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::new();
        for l in &mut self.hidden {
            v.extend(l.params_mut());
        }
        v.extend(self.out.params_mut());
        v
    }
}

impl DiscGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::new();
        for l in &self.hidden {
            v.extend(l.slices());
        }
        v.extend(self.out.slices());
        v
    }

    pub fn add(&mut self, other: &DiscGrads) {
        for (a, b) in self.hidden.iter_mut().zip(&other.hidden) {
            a.w += &b.w;
            a.b += &b.b;
        }
        self.out.w += &other.out.w;
        self.out.b += &other.out.b;
    }

    pub fn scale(&mut self, k: f64) {
        for a in &mut self.hidden {
            a.w *= k;
            a.b *= k;
        }
        self.out.w *= k;
        self.out.b *= k;
    }
}

/// `(n, dim)` rows grouped `pac` at a time into `(n / pac, pac·dim)`.
pub fn pack(x: &Array2<f64>, pac: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    assert_eq!(n % pac, 0, "batch not divisible by pac");
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n / pac, pac * d))
        .expect("contiguous")
}

pub fn unpack(x: Array2<f64>, dim: usize) -> Array2<f64> {
    let total = x.len();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((total / dim, dim))
        .expect("contiguous")
}
