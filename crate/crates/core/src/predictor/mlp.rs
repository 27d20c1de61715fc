//! Dense layers with rectifier activations, batched through `matrixmultiply`.

use num_traits::Float;
use rand::Rng;

/// Scalar type the network can run in. Training uses `f32`; gradient checks
/// use `f64`.
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + 'static {
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self;
    fn f64(self) -> f64;
}

impl Real for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        // SAFETY: forwarded from `gemm`, which checks every extent.
        unsafe { matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }

    fn of(x: f64) -> f32 {
        x as f32
    }

    fn f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        // SAFETY: forwarded from `gemm`, which checks every extent.
        unsafe { matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }

    fn of(x: f64) -> f64 {
        x
    }

    fn f64(self) -> f64 {
        self
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` on row-major buffers, where
/// `op(A)` is `m x k` and `op(B)` is `k x n`. A transposed operand is stored
/// with its dimensions swapped.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    alpha: T,
    a: &[T],
    a_trans: bool,
    b: &[T],
    b_trans: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "lhs extent");
    assert_eq!(b.len(), k * n, "rhs extent");
    assert_eq!(c.len(), m * n, "output extent");
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the extents asserted above cover every index the kernel reads
    // or writes for these strides.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Fully connected layer `y = W x + b`, `W` stored `[n_out][n_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            n_in,
            n_out,
            w: vec![T::zero(); n_in * n_out],
            b: vec![T::zero(); n_out],
        }
    }

    /// Uniform weights in `±sqrt(6 / n_in)`, zero bias.
    pub fn he_uniform<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / n_in as f64).sqrt();
        let mut layer = Self::zeros(n_in, n_out);
        for w in &mut layer.w {
            *w = T::of(rng.random_range(-limit..limit));
        }
        layer
    }

    pub fn n_params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Stack of dense layers; every layer but the last is followed by a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Outputs of each layer for one batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub batch: usize,
    /// `outputs[i]` is the (activated) output of layer `i`.
    pub outputs: Vec<Vec<T>>,
}

impl<T> Trace<T> {
    pub fn output(&self) -> &[T] {
        self.outputs.last().expect("at least one layer")
    }
}

impl<T: Real> Mlp<T> {
    /// Layer widths `sizes[0] -> sizes[1] -> ...`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            layers: sizes.windows(2).map(|s| Dense::he_uniform(s[0], s[1], rng)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().expect("nonempty").n_out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(Dense::n_params).sum()
    }

    pub fn forward(&self, x: &[T], batch: usize) -> Trace<T> {
        assert_eq!(x.len(), batch * self.n_in(), "input extent");
        let last = self.layers.len() - 1;
        let mut outputs: Vec<Vec<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 { x } else { &outputs[i - 1] };
            let mut y = Vec::with_capacity(batch * layer.n_out);
            for _ in 0..batch {
                y.extend_from_slice(&layer.b);
            }
            gemm(batch, layer.n_in, layer.n_out, T::one(), input, false, &layer.w, true, T::one(), &mut y);
            if i != last {
                y.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
            outputs.push(y);
        }
        Trace { batch, outputs }
    }

    /// Accumulates parameter gradients into `grads` given `d_out` (gradient of
    /// the loss with respect to the final output). Returns the gradient with
    /// respect to the input when `need_input` is set.
    pub fn backward(&self, x: &[T], trace: &Trace<T>, d_out: &[T], grads: &mut Mlp<T>, need_input: bool) -> Option<Vec<T>> {
        let batch = trace.batch;
        let mut delta = d_out.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = if i == 0 { x } else { &trace.outputs[i - 1] };
            let g = &mut grads.layers[i];
            gemm(layer.n_out, batch, layer.n_in, T::one(), &delta, true, input, false, T::one(), &mut g.w);
            for row in delta.chunks_exact(layer.n_out) {
                for (gb, d) in g.b.iter_mut().zip(row) {
                    *gb = *gb + *d;
                }
            }
            if i == 0 && !need_input {
                return None;
            }
            let mut d_in = vec![T::zero(); batch * layer.n_in];
            gemm(batch, layer.n_out, layer.n_in, T::one(), &delta, false, &layer.w, false, T::zero(), &mut d_in);
            if i > 0 {
                // rectifier of the previous layer
                for (d, y) in d_in.iter_mut().zip(input) {
                    if *y <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            delta = d_in;
        }
        Some(delta)
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn params(&self) -> impl Iterator<Item = &T> {
        self.layers.iter().flat_map(|l| l.w.iter().chain(&l.b))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.layers.iter_mut().flat_map(|l| l.w.iter_mut().chain(l.b.iter_mut()))
    }

    pub fn fill(&mut self, value: T) {
        self.params_mut().for_each(|p| *p = value);
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    w: l.w.iter().map(|x| U::of(x.f64())).collect(),
                    b: l.b.iter().map(|x| U::of(x.f64())).collect(),
                })
                .collect(),
        }
    }
}
