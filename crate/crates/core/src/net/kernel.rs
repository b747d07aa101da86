//! Precision-generic numerical engine behind the restoration network:
//! im2col 3×3 convolutions on a BLAS-style GEMM, ReLU, the residual
//! topology's forward/backward passes, and the composite loss with its
//! exact gradients. Instantiated at `f32` for production and at `f64` for
//! numerical verification (see [`crate::net::highprec`]).

use crate::error::{Error, Result};
use crate::fft::fft2;
use crate::rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::num_traits::{Float as NumFloat, NumAssignOps};
use rustfft::FftNum;

/// Scalar type the network kernels are generic over.
pub trait Scalar:
    FftNum + NumFloat + NumAssignOps + Default + std::iter::Sum<Self> + std::fmt::Display
{
    /// `C ← α·A·B + β·C` with explicit row/column strides (row-major here).
    ///
    /// # Safety
    /// Pointers must reference buffers consistent with `(m, k, n)` and the
    /// strides, exactly as documented by `matrixmultiply`.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
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
}

impl Scalar for f32 {
    unsafe fn gemm(
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
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Scalar for f64 {
    unsafe fn gemm(
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
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

#[inline]
pub fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite literal")
}

/// Dense rank-4 array in NCHW layout (batch, channels, height, width).
#[derive(Clone, Debug, PartialEq)]
pub struct TensorG<T> {
    shape: (usize, usize, usize, usize),
    data: Vec<T>,
}

impl<T: Scalar> TensorG<T> {
    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            shape: (batch, channels, height, width),
            data: vec![T::zero(); batch * channels * height * width],
        }
    }

    pub fn from_vec(
        batch: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        let want = batch * channels * height * width;
        if data.len() != want {
            return Err(Error::DimensionMismatch(format!(
                "tensor data length {} does not match shape ({batch},{channels},{height},{width})",
                data.len()
            )));
        }
        Ok(Self { shape: (batch, channels, height, width), data })
    }

    /// `(batch, channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// One batch item's `channels × height × width` slab.
    pub fn image(&self, b: usize) -> &[T] {
        let n = self.shape.1 * self.shape.2 * self.shape.3;
        &self.data[b * n..(b + 1) * n]
    }

    pub fn image_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape.1 * self.shape.2 * self.shape.3;
        &mut self.data[b * n..(b + 1) * n]
    }

    /// NaN/Inf tripwire; `what` names the producing operation for the error.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        ensure_finite(&self.data, what)
    }
}

pub fn ensure_finite<T: Scalar>(data: &[T], what: &str) -> Result<()> {
    if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value {bad} in {what}")));
    }
    Ok(())
}

/// One 3×3, stride-1, pad-1 convolution's parameters. Weights are row-major
/// `[out_c][in_c][3][3]`, biases one per output channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvG<T> {
    pub out_c: usize,
    pub in_c: usize,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvG<T> {
    pub fn zeros(out_c: usize, in_c: usize) -> Self {
        Self { out_c, in_c, weight: vec![T::zero(); out_c * in_c * 9], bias: vec![T::zero(); out_c] }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// One residual block: conv → ReLU → conv, plus the block-input skip.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockG<T> {
    pub conv1: ConvG<T>,
    pub conv2: ConvG<T>,
}

/// The full parameter set: head 1→C, `blocks` residual blocks at width C,
/// body-end conv C→C, tail C→1.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamsG<T> {
    pub channels: usize,
    pub head: ConvG<T>,
    pub blocks: Vec<BlockG<T>>,
    pub body_end: ConvG<T>,
    pub tail: ConvG<T>,
}

impl<T: Scalar> ParamsG<T> {
    pub fn zeros(channels: usize, blocks: usize) -> Self {
        Self {
            channels,
            head: ConvG::zeros(channels, 1),
            blocks: (0..blocks)
                .map(|_| BlockG {
                    conv1: ConvG::zeros(channels, channels),
                    conv2: ConvG::zeros(channels, channels),
                })
                .collect(),
            body_end: ConvG::zeros(channels, channels),
            tail: ConvG::zeros(1, channels),
        }
    }

    /// Kaiming fan-in normal initialization (σ = √(2/fan_in)), zero biases;
    /// deterministic per seed with one RNG stream per weight tensor.
    pub fn init(channels: usize, blocks: usize, seed: u64) -> Self {
        let mut params = Self::zeros(channels, blocks);
        for (index, (_, conv)) in params.convs_mut().into_iter().enumerate() {
            let sigma = cast::<T>((2.0 / (conv.in_c * 9) as f64).sqrt());
            let mut rng = rng::stream(seed, index as u64);
            for w in &mut conv.weight {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = sigma * cast::<T>(z);
            }
        }
        params
    }

    pub fn param_count(&self) -> usize {
        self.convs().iter().map(|(_, c)| c.param_count()).sum()
    }

    /// Convolutions in the canonical persistence order.
    pub fn convs(&self) -> Vec<(String, &ConvG<T>)> {
        let mut out: Vec<(String, &ConvG<T>)> = vec![("head".into(), &self.head)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i:02}.conv1"), &b.conv1));
            out.push((format!("block{i:02}.conv2"), &b.conv2));
        }
        out.push(("body_end".into(), &self.body_end));
        out.push(("tail".into(), &self.tail));
        out
    }

    pub fn convs_mut(&mut self) -> Vec<(String, &mut ConvG<T>)> {
        let mut out: Vec<(String, &mut ConvG<T>)> = vec![("head".into(), &mut self.head)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i:02}.conv1"), &mut b.conv1));
            out.push((format!("block{i:02}.conv2"), &mut b.conv2));
        }
        out.push(("body_end".into(), &mut self.body_end));
        out.push(("tail".into(), &mut self.tail));
        out
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        for (name, conv) in self.convs() {
            ensure_finite(&conv.weight, &format!("{what} ({name}.weight)"))?;
            ensure_finite(&conv.bias, &format!("{what} ({name}.bias)"))?;
        }
        Ok(())
    }

    pub fn to_f64(&self) -> ParamsG<f64> {
        map_params(self, |v| v.to_f64().unwrap())
    }
}

pub fn map_params<T: Scalar, U: Scalar>(p: &ParamsG<T>, f: impl Fn(T) -> U + Copy) -> ParamsG<U> {
    let conv = |c: &ConvG<T>| ConvG::<U> {
        out_c: c.out_c,
        in_c: c.in_c,
        weight: c.weight.iter().map(|&v| f(v)).collect(),
        bias: c.bias.iter().map(|&v| f(v)).collect(),
    };
    ParamsG {
        channels: p.channels,
        head: conv(&p.head),
        blocks: p
            .blocks
            .iter()
            .map(|b| BlockG { conv1: conv(&b.conv1), conv2: conv(&b.conv2) })
            .collect(),
        body_end: conv(&p.body_end),
        tail: conv(&p.tail),
    }
}

/// Spatial columns per GEMM call; caps im2col scratch at
/// `in_c·9·N_CHUNK` scalars regardless of frame size.
const N_CHUNK: usize = 1 << 16;

/// im2col for one spatial chunk `[n0, n1)` of a `in_c × h × w` slab; `cols`
/// is filled row-major `(in_c·9) × (n1−n0)`.
fn im2col<T: Scalar>(input: &[T], in_c: usize, h: usize, w: usize, n0: usize, n1: usize, cols: &mut [T]) {
    let nn = n1 - n0;
    for ic in 0..in_c {
        let chan = &input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &mut cols[(ic * 9 + ky * 3 + kx) * nn..(ic * 9 + ky * 3 + kx + 1) * nn];
                for (i, slot) in row.iter_mut().enumerate() {
                    let n = n0 + i;
                    let (y, x) = (n / w, n % w);
                    let sy = y as isize + ky as isize - 1;
                    let sx = x as isize + kx as isize - 1;
                    *slot = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        chan[sy as usize * w + sx as usize]
                    } else {
                        T::zero()
                    };
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds column gradients back to the input.
fn col2im_add<T: Scalar>(
    cols: &[T],
    in_c: usize,
    h: usize,
    w: usize,
    n0: usize,
    n1: usize,
    d_input: &mut [T],
) {
    let nn = n1 - n0;
    for ic in 0..in_c {
        let chan = &mut d_input[ic * h * w..(ic + 1) * h * w];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &cols[(ic * 9 + ky * 3 + kx) * nn..(ic * 9 + ky * 3 + kx + 1) * nn];
                for (i, &v) in row.iter().enumerate() {
                    let n = n0 + i;
                    let (y, x) = (n / w, n % w);
                    let sy = y as isize + ky as isize - 1;
                    let sx = x as isize + kx as isize - 1;
                    if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                        chan[sy as usize * w + sx as usize] += v;
                    }
                }
            }
        }
    }
}

/// 3×3/s1/p1 convolution of one `in_c × h × w` slab into `out_c × h × w`.
pub fn conv_forward<T: Scalar>(conv: &ConvG<T>, input: &[T], h: usize, w: usize, output: &mut [T]) {
    debug_assert_eq!(input.len(), conv.in_c * h * w);
    debug_assert_eq!(output.len(), conv.out_c * h * w);
    let n = h * w;
    let k = conv.in_c * 9;
    let mut cols = vec![T::zero(); k * N_CHUNK.min(n)];
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + N_CHUNK).min(n);
        let nn = n1 - n0;
        im2col(input, conv.in_c, h, w, n0, n1, &mut cols[..k * nn]);
        unsafe {
            T::gemm(
                conv.out_c,
                k,
                nn,
                T::one(),
                conv.weight.as_ptr(),
                k as isize,
                1,
                cols.as_ptr(),
                nn as isize,
                1,
                T::zero(),
                output[n0..].as_mut_ptr(),
                n as isize,
                1,
            );
        }
        n0 = n1;
    }
    for oc in 0..conv.out_c {
        let b = conv.bias[oc];
        for v in &mut output[oc * n..(oc + 1) * n] {
            *v += b;
        }
    }
}

/// Reverse-mode step for one convolution: accumulates `d_weight`/`d_bias`
/// (callers zero them before the first sample) and, when `d_input` is given,
/// adds the gradient with respect to the layer input into it.
pub fn conv_backward<T: Scalar>(
    conv: &ConvG<T>,
    input: &[T],
    h: usize,
    w: usize,
    d_output: &[T],
    d_weight: &mut [T],
    d_bias: &mut [T],
    mut d_input: Option<&mut [T]>,
) {
    let n = h * w;
    let k = conv.in_c * 9;
    let mut cols = vec![T::zero(); k * N_CHUNK.min(n)];
    let mut dcols = vec![T::zero(); k * N_CHUNK.min(n)];
    let mut n0 = 0;
    while n0 < n {
        let n1 = (n0 + N_CHUNK).min(n);
        let nn = n1 - n0;
        im2col(input, conv.in_c, h, w, n0, n1, &mut cols[..k * nn]);
        unsafe {
            // dW[O×K] += dOut[O×nn] · colsᵀ[nn×K]
            T::gemm(
                conv.out_c,
                nn,
                k,
                T::one(),
                d_output[n0..].as_ptr(),
                n as isize,
                1,
                cols.as_ptr(),
                1,
                nn as isize,
                T::one(),
                d_weight.as_mut_ptr(),
                k as isize,
                1,
            );
        }
        if let Some(d_in) = d_input.as_deref_mut() {
            unsafe {
                // dcols[K×nn] = Wᵀ[K×O] · dOut[O×nn]
                T::gemm(
                    k,
                    conv.out_c,
                    nn,
                    T::one(),
                    conv.weight.as_ptr(),
                    1,
                    k as isize,
                    d_output[n0..].as_ptr(),
                    n as isize,
                    1,
                    T::zero(),
                    dcols.as_mut_ptr(),
                    nn as isize,
                    1,
                );
            }
            col2im_add(&dcols[..k * nn], conv.in_c, h, w, n0, n1, d_in);
        }
        n0 = n1;
    }
    for oc in 0..conv.out_c {
        d_bias[oc] += d_output[oc * n..(oc + 1) * n].iter().copied().sum::<T>();
    }
}

/// Per-sample activations retained for reverse mode.
pub struct SampleCache<T> {
    pub head_out: Vec<T>,
    /// Per block: conv1 output before the ReLU.
    pub pre_relu: Vec<Vec<T>>,
    /// Per block: the block's output (input of the next block).
    pub block_out: Vec<Vec<T>>,
    /// body_end output + head skip — the tail's input.
    pub tail_in: Vec<T>,
}

/// Forward pass over one normalized single-channel sample (`1 × h × w` slab),
/// optionally retaining activations: head conv, residual blocks, body-end
/// conv with the head skip, tail conv with the global input skip.
pub fn forward_sample<T: Scalar>(
    params: &ParamsG<T>,
    x: &[T],
    h: usize,
    w: usize,
    want_cache: bool,
) -> Result<(Vec<T>, Option<SampleCache<T>>)> {
    let c = params.channels;
    let n = h * w;
    let mut head_out = vec![T::zero(); c * n];
    conv_forward(&params.head, x, h, w, &mut head_out);
    ensure_finite(&head_out, "head activations")?;

    let mut cache = want_cache.then(|| SampleCache {
        head_out: head_out.clone(),
        pre_relu: Vec::with_capacity(params.blocks.len()),
        block_out: Vec::with_capacity(params.blocks.len()),
        tail_in: Vec::new(),
    });

    let mut cur = head_out.clone();
    let mut pre = vec![T::zero(); c * n];
    let mut post = vec![T::zero(); c * n];
    for (bi, block) in params.blocks.iter().enumerate() {
        conv_forward(&block.conv1, &cur, h, w, &mut pre);
        if let Some(cache) = cache.as_mut() {
            cache.pre_relu.push(pre.clone());
        }
        let relu: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();
        conv_forward(&block.conv2, &relu, h, w, &mut post);
        for (o, i) in cur.iter_mut().zip(&post) {
            *o += *i;
        }
        ensure_finite(&cur, &format!("block {bi} activations"))?;
        if let Some(cache) = cache.as_mut() {
            cache.block_out.push(cur.clone());
        }
    }

    let mut body = vec![T::zero(); c * n];
    conv_forward(&params.body_end, &cur, h, w, &mut body);
    for (o, s) in body.iter_mut().zip(&head_out) {
        *o += *s;
    }
    ensure_finite(&body, "body activations")?;
    if let Some(cache) = cache.as_mut() {
        cache.tail_in = body.clone();
    }

    let mut out = vec![T::zero(); n];
    conv_forward(&params.tail, &body, h, w, &mut out);
    for (o, s) in out.iter_mut().zip(x) {
        *o += *s;
    }
    ensure_finite(&out, "network output")?;
    Ok((out, cache))
}

/// Reverse pass for one sample. `d_out` is ∂loss/∂(network output); gradients
/// accumulate into `grads` (zeroed by the caller before the first sample).
pub fn backward_sample<T: Scalar>(
    params: &ParamsG<T>,
    x: &[T],
    h: usize,
    w: usize,
    cache: &SampleCache<T>,
    d_out: &[T],
    grads: &mut ParamsG<T>,
) {
    let c = params.channels;
    let n = h * w;

    // Tail: out = tail(tail_in) + x. The global-skip term feeds ∂/∂x, which
    // no parameter depends on.
    let mut d_tail_in = vec![T::zero(); c * n];
    conv_backward(
        &params.tail,
        &cache.tail_in,
        h,
        w,
        d_out,
        &mut grads.tail.weight,
        &mut grads.tail.bias,
        Some(&mut d_tail_in),
    );

    // tail_in = body_end(last_block_out) + head_out.
    let mut d_head_out = d_tail_in.clone();
    let last_in =
        if params.blocks.is_empty() { &cache.head_out } else { &cache.block_out[params.blocks.len() - 1] };
    let mut d_cur = vec![T::zero(); c * n];
    conv_backward(
        &params.body_end,
        last_in,
        h,
        w,
        &d_tail_in,
        &mut grads.body_end.weight,
        &mut grads.body_end.bias,
        Some(&mut d_cur),
    );

    for bi in (0..params.blocks.len()).rev() {
        let block = &params.blocks[bi];
        let block_in = if bi == 0 { &cache.head_out } else { &cache.block_out[bi - 1] };
        let pre = &cache.pre_relu[bi];
        let relu: Vec<T> = pre.iter().map(|&v| v.max(T::zero())).collect();

        // block_out = conv2(relu(conv1(block_in))) + block_in.
        let gblock = &mut grads.blocks[bi];
        let mut d_relu = vec![T::zero(); c * n];
        conv_backward(
            &block.conv2,
            &relu,
            h,
            w,
            &d_cur,
            &mut gblock.conv2.weight,
            &mut gblock.conv2.bias,
            Some(&mut d_relu),
        );
        for (g, &p) in d_relu.iter_mut().zip(pre) {
            if p <= T::zero() {
                *g = T::zero();
            }
        }
        let mut d_block_in = vec![T::zero(); c * n];
        conv_backward(
            &block.conv1,
            block_in,
            h,
            w,
            &d_relu,
            &mut gblock.conv1.weight,
            &mut gblock.conv1.bias,
            Some(&mut d_block_in),
        );
        // Skip path adds the downstream gradient unchanged.
        for (o, &s) in d_block_in.iter_mut().zip(&d_cur) {
            *o += s;
        }
        d_cur = d_block_in;
        if bi == 0 {
            for (o, &s) in d_head_out.iter_mut().zip(&d_cur) {
                *o += s;
            }
        }
    }
    if params.blocks.is_empty() {
        for (o, &s) in d_head_out.iter_mut().zip(&d_cur) {
            *o += s;
        }
    }

    conv_backward(
        &params.head,
        x,
        h,
        w,
        &d_head_out,
        &mut grads.head.weight,
        &mut grads.head.bias,
        None,
    );
}

/// Mean absolute difference over all elements (accumulated in f64).
pub fn l1_value<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (*x - *y).abs().to_f64().unwrap()).sum();
    s / a.len() as f64
}

/// ∂(mean |a−b|)/∂a, scaled by `scale`; the subgradient at 0 is 0.
pub fn l1_grad_into<T: Scalar>(a: &[T], b: &[T], scale: T, d_a: &mut [T]) {
    let inv = scale / cast::<T>(a.len() as f64);
    for ((&x, &y), g) in a.iter().zip(b).zip(d_a.iter_mut()) {
        let d = x - y;
        *g += if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
}

/// Frequency-domain L1 for one sample: unnormalized 2-D DFT of `a−b`, then
/// the mean of |Re| + |Im| over the `h·w` bins. Returns the value and,
/// when `d_a` is given, adds `scale`·gradient into it.
pub fn fft_l1_sample<T: Scalar>(
    a: &[T],
    b: &[T],
    h: usize,
    w: usize,
    scale_and_grad: Option<(T, &mut [T])>,
) -> f64 {
    let n = h * w;
    let mut buf: Vec<Complex<T>> =
        a.iter().zip(b).map(|(&x, &y)| Complex::new(x - y, T::zero())).collect();
    fft2(&mut buf, w, h, false);
    let value: f64 = buf
        .iter()
        .map(|c| c.re.abs().to_f64().unwrap() + c.im.abs().to_f64().unwrap())
        .sum::<f64>()
        / n as f64;
    if let Some((scale, d_a)) = scale_and_grad {
        // d/dRe and d/dIm are sign masks; the adjoint of the unnormalized
        // forward DFT is the unnormalized inverse DFT, so the pixel-domain
        // gradient is Re(IDFT(sign masks)) / n.
        let mut masks: Vec<Complex<T>> =
            buf.iter().map(|c| Complex::new(sign(c.re), sign(c.im))).collect();
        fft2(&mut masks, w, h, true);
        let inv = scale / cast::<T>(n as f64);
        for (g, m) in d_a.iter_mut().zip(&masks) {
            *g += m.re * inv;
        }
    }
    value
}

#[inline]
fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

