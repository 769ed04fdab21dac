//! Convolution primitives, activations and operation counting.

use super::ClassifyError;

/// Dense f64 tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, ClassifyError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(ClassifyError::Shape(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ClassifyError::NonFinite("tensor data"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(crate) fn dims3(&self) -> Result<(usize, usize, usize), ClassifyError> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(ClassifyError::Shape(format!("expected (c, h, w), got {:?}", self.shape))),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Convolution geometry. `n_out` is the symbol N and `d_f` the output side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub d_k: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub d_f: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Spec for a square input of side `d_in`.
    pub fn for_input(d_in: usize, d_k: usize, n_in: usize, n_out: usize, stride: usize, padding: usize) -> Self {
        let d_f = (d_in + 2 * padding).saturating_sub(d_k) / stride.max(1) + 1;
        Self {
            d_k,
            n_in,
            n_out,
            d_f,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<(), ClassifyError> {
        if self.d_k % 2 == 0 {
            return Err(ClassifyError::Shape(format!("kernel size {} must be odd", self.d_k)));
        }
        if [self.d_k, self.n_in, self.n_out, self.d_f, self.stride].contains(&0) {
            return Err(ClassifyError::Shape("conv dims must be >= 1".into()));
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<usize, ClassifyError> {
        self.validate()?;
        let (c, h, w) = input.dims3()?;
        if c != self.n_in || h != w {
            return Err(ClassifyError::Shape(format!(
                "input {:?} does not fit {} square channels",
                input.shape, self.n_in
            )));
        }
        if h + 2 * self.padding < self.d_k || (h + 2 * self.padding - self.d_k) / self.stride + 1 != self.d_f {
            return Err(ClassifyError::Shape(format!(
                "input side {h} does not produce output side {}",
                self.d_f
            )));
        }
        Ok(h)
    }
}

/// Receives multiply-accumulate counts from the convolution loops.
pub trait Tally {
    fn add(&mut self, n: u64);
}

impl Tally for () {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

impl Tally for u64 {
    #[inline(always)]
    fn add(&mut self, n: u64) {
        *self += n;
    }
}

fn check_bias(bias: &[f64], n: usize) -> Result<(), ClassifyError> {
    if bias.len() != n {
        return Err(ClassifyError::Shape(format!("bias has {} entries, expected {n}", bias.len())));
    }
    Ok(())
}

/// Standard convolution; `kernel` is (n_out, n_in, d_k, d_k). Every kernel
/// tap counts as one MAC, padded taps included.
pub fn conv2d_counted(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    spec: &ConvSpec,
    tally: &mut impl Tally,
) -> Result<Tensor, ClassifyError> {
    let d_in = spec.check_input(input)?;
    let k = spec.d_k;
    if kernel.shape != [spec.n_out, spec.n_in, k, k] {
        return Err(ClassifyError::Shape(format!("kernel {:?} does not match {spec:?}", kernel.shape)));
    }
    check_bias(bias, spec.n_out)?;
    let d_f = spec.d_f;
    let mut out = Tensor::zeros(vec![spec.n_out, d_f, d_f]);
    for o in 0..spec.n_out {
        for oy in 0..d_f {
            for ox in 0..d_f {
                let mut acc = bias[o];
                for c in 0..spec.n_in {
                    for ky in 0..k {
                        let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                        for kx in 0..k {
                            tally.add(1);
                            let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                            if iy < 0 || ix < 0 || iy >= d_in as isize || ix >= d_in as isize {
                                continue;
                            }
                            acc += kernel.data[((o * spec.n_in + c) * k + ky) * k + kx]
                                * input.data[(c * d_in + iy as usize) * d_in + ix as usize];
                        }
                    }
                }
                out.data[(o * d_f + oy) * d_f + ox] = acc;
            }
        }
    }
    Ok(out)
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, bias: &[f64], spec: &ConvSpec) -> Result<Tensor, ClassifyError> {
    conv2d_counted(input, kernel, bias, spec, &mut ())
}

/// Per-channel convolution; `kernel` is (n_in, d_k, d_k) and the output
/// keeps n_in channels (`spec.n_out` is ignored).
pub fn depthwise_conv2d_counted(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    spec: &ConvSpec,
    tally: &mut impl Tally,
) -> Result<Tensor, ClassifyError> {
    let d_in = spec.check_input(input)?;
    let k = spec.d_k;
    if kernel.shape != [spec.n_in, k, k] {
        return Err(ClassifyError::Shape(format!("depthwise kernel {:?} does not match {spec:?}", kernel.shape)));
    }
    check_bias(bias, spec.n_in)?;
    let d_f = spec.d_f;
    let mut out = Tensor::zeros(vec![spec.n_in, d_f, d_f]);
    for c in 0..spec.n_in {
        for oy in 0..d_f {
            for ox in 0..d_f {
                let mut acc = bias[c];
                for ky in 0..k {
                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                    for kx in 0..k {
                        tally.add(1);
                        let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                        if iy < 0 || ix < 0 || iy >= d_in as isize || ix >= d_in as isize {
                            continue;
                        }
                        acc += kernel.data[(c * k + ky) * k + kx] * input.data[(c * d_in + iy as usize) * d_in + ix as usize];
                    }
                }
                out.data[(c * d_f + oy) * d_f + ox] = acc;
            }
        }
    }
    Ok(out)
}

pub fn depthwise_conv2d(input: &Tensor, kernel: &Tensor, bias: &[f64], spec: &ConvSpec) -> Result<Tensor, ClassifyError> {
    depthwise_conv2d_counted(input, kernel, bias, spec, &mut ())
}

/// 1x1 channel mixing; `kernel` is (n_out, n_in). The input's spatial size
/// is kept.
pub fn pointwise_conv2d_counted(
    input: &Tensor,
    kernel: &Tensor,
    bias: &[f64],
    tally: &mut impl Tally,
) -> Result<Tensor, ClassifyError> {
    let (c_in, h, w) = input.dims3()?;
    let [n_out, n_in] = kernel.shape[..] else {
        return Err(ClassifyError::Shape(format!("pointwise kernel {:?} is not 2-d", kernel.shape)));
    };
    if n_in != c_in {
        return Err(ClassifyError::Shape(format!("pointwise kernel expects {n_in} channels, input has {c_in}")));
    }
    check_bias(bias, n_out)?;
    let plane = h * w;
    let mut out = Tensor::zeros(vec![n_out, h, w]);
    for o in 0..n_out {
        let dst = &mut out.data[o * plane..(o + 1) * plane];
        dst.fill(bias[o]);
        for c in 0..n_in {
            let wgt = kernel.data[o * n_in + c];
            let src = &input.data[c * plane..(c + 1) * plane];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += wgt * s;
            }
            tally.add(plane as u64);
        }
    }
    Ok(out)
}

pub fn pointwise_conv2d(input: &Tensor, kernel: &Tensor, bias: &[f64]) -> Result<Tensor, ClassifyError> {
    pointwise_conv2d_counted(input, kernel, bias, &mut ())
}

/// MACs of a standard convolution: D_K^2 * n_in * N * D_F^2.
pub fn flops_standard(spec: &ConvSpec) -> u64 {
    (spec.d_k * spec.d_k * spec.n_in * spec.n_out * spec.d_f * spec.d_f) as u64
}

/// MACs of depthwise plus pointwise: D_K^2 * n_in * D_F^2 + n_in * N * D_F^2.
pub fn flops_separable(spec: &ConvSpec) -> u64 {
    let df2 = spec.d_f * spec.d_f;
    (spec.d_k * spec.d_k * spec.n_in * df2 + spec.n_in * spec.n_out * df2) as u64
}

/// True when `num / den == 1/n + 1/d_k^2`, compared exactly.
pub fn ratio_matches_reduction(num: u64, den: u64, n: u64, d_k: u64) -> bool {
    // num/den == (d_k^2 + n) / (n d_k^2)
    let lhs = num as u128 * (n as u128 * (d_k * d_k) as u128);
    let rhs = den as u128 * (d_k * d_k + n) as u128;
    lhs == rhs
}

pub fn relu(t: &Tensor) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, ClassifyError> {
    if logits.len() < 2 {
        return Err(ClassifyError::Shape("softmax needs at least 2 logits".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ClassifyError::NonFinite("logits"));
    }
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[target]` with p floored at 1e-12.
pub fn cross_entropy(probs: &[f64], target: usize) -> Result<f64, ClassifyError> {
    let p = probs.get(target).ok_or(ClassifyError::Label(target))?;
    Ok(-p.max(PROB_FLOOR).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    /// Textbook convolution over explicit zero padding.
    fn naive(input: &Tensor, kernel: &Tensor, bias: &[f64], s: &ConvSpec) -> Tensor {
        let (c, d, _) = input.dims3().unwrap();
        let dp = d + 2 * s.padding;
        let mut padded = vec![0.0; c * dp * dp];
        for ch in 0..c {
            for y in 0..d {
                for x in 0..d {
                    padded[(ch * dp + y + s.padding) * dp + x + s.padding] = input.data[(ch * d + y) * d + x];
                }
            }
        }
        Tensor::from_fn(vec![s.n_out, s.d_f, s.d_f], |i| {
            let (o, oy, ox) = (i / (s.d_f * s.d_f), i / s.d_f % s.d_f, i % s.d_f);
            let mut acc = bias[o];
            for ch in 0..c {
                for ky in 0..s.d_k {
                    for kx in 0..s.d_k {
                        acc += kernel.data[((o * c + ch) * s.d_k + ky) * s.d_k + kx]
                            * padded[(ch * dp + oy * s.stride + ky) * dp + ox * s.stride + kx];
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn trivial_convolutions() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.5]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let s = ConvSpec::for_input(1, 1, 1, 1, 1, 0);
        assert_eq!(conv2d(&x, &k, &[0.0], &s).unwrap().data(), &[2.5]);

        let ones = Tensor::from_fn(vec![1, 3, 3], |_| 1.0);
        let k = Tensor::from_fn(vec![1, 1, 3, 3], |_| 1.0);
        let s = ConvSpec::for_input(3, 3, 1, 1, 1, 1);
        let out = conv2d(&ones, &k, &[0.0], &s).unwrap();
        assert_eq!(out.data()[4], 9.0);
        assert_eq!(out.data()[0], 4.0);
    }

    #[test]
    fn conv_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, vec![4, 8, 8]);
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let s = ConvSpec::for_input(8, 3, 4, 5, stride, pad);
            let k = random(&mut rng, vec![5, 4, 3, 3]);
            let b: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = conv2d(&x, &k, &b, &s).unwrap().max_abs_diff(&naive(&x, &k, &b, &s));
            assert!(d < 1e-12, "{d}");
        }
    }

    #[test]
    fn depthwise_is_block_diagonal_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(&mut rng, vec![3, 7, 7]);
        let k = random(&mut rng, vec![3, 3, 3]);
        let b = vec![0.1, -0.2, 0.3];
        let s = ConvSpec::for_input(7, 3, 3, 3, 2, 1);
        let full = Tensor::from_fn(vec![3, 3, 3, 3], |i| {
            let (o, c, t) = (i / 27, i / 9 % 3, i % 9);
            if o == c {
                k.data[c * 9 + t]
            } else {
                0.0
            }
        });
        let d = depthwise_conv2d(&x, &k, &b, &s)
            .unwrap()
            .max_abs_diff(&conv2d(&x, &full, &b, &s).unwrap());
        assert!(d < 1e-12);

        let zero = Tensor::zeros(vec![3, 3, 3]);
        let out = depthwise_conv2d(&x, &zero, &b, &s).unwrap();
        assert!(out.data().chunks(16).zip(&b).all(|(ch, b)| ch.iter().all(|v| v == b)));

        let mut ident = Tensor::zeros(vec![3, 3, 3]);
        for c in 0..3 {
            ident.data_mut()[c * 9 + 4] = 1.0;
        }
        let s1 = ConvSpec::for_input(7, 3, 3, 3, 1, 1);
        assert_eq!(depthwise_conv2d(&x, &ident, &[0.0; 3], &s1).unwrap(), x);
    }

    #[test]
    fn pointwise_equals_1x1_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, vec![4, 5, 5]);
        let k = random(&mut rng, vec![6, 4]);
        let b: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let k4 = Tensor::new(vec![6, 4, 1, 1], k.data().to_vec()).unwrap();
        let s = ConvSpec::for_input(5, 1, 4, 6, 1, 0);
        let d = pointwise_conv2d(&x, &k, &b)
            .unwrap()
            .max_abs_diff(&conv2d(&x, &k4, &b, &s).unwrap());
        assert!(d < 1e-12);

        let sum = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let two = Tensor::new(vec![2, 1, 2], vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        assert_eq!(pointwise_conv2d(&two, &sum, &[0.0]).unwrap().data(), &[11.0, 22.0]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(vec![2, 4, 4]);
        let s = ConvSpec::for_input(4, 3, 3, 1, 1, 1);
        assert!(conv2d(&x, &Tensor::zeros(vec![1, 3, 3, 3]), &[0.0], &s).is_err());
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        let even = ConvSpec { d_k: 2, ..s };
        assert!(even.validate().is_err());
    }

    #[test]
    fn counted_macs_match_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, vec![3, 6, 6]);
        let s = ConvSpec::for_input(6, 3, 3, 8, 1, 1);
        let mut std_count = 0u64;
        conv2d_counted(&x, &Tensor::zeros(vec![8, 3, 3, 3]), &[0.0; 8], &s, &mut std_count).unwrap();
        let mut sep = 0u64;
        let dw = depthwise_conv2d_counted(&x, &Tensor::zeros(vec![3, 3, 3]), &[0.0; 3], &s, &mut sep).unwrap();
        pointwise_conv2d_counted(&dw, &Tensor::zeros(vec![8, 3]), &[0.0; 8], &mut sep).unwrap();
        assert_eq!(std_count, flops_standard(&s));
        assert_eq!(sep, flops_separable(&s));
        assert!(ratio_matches_reduction(sep, std_count, 8, 3));
    }

    #[test]
    fn reduction_ratio_examples() {
        let s = ConvSpec::for_input(14, 3, 32, 256, 1, 1);
        let r = flops_separable(&s) as f64 / flops_standard(&s) as f64;
        assert!((r - (1.0 / 256.0 + 1.0 / 9.0)).abs() < 1e-15);
        assert!((1.0 / r - 8.69).abs() < 0.01);
        let one = ConvSpec::for_input(14, 1, 32, 64, 1, 0);
        assert!(flops_separable(&one) > flops_standard(&one));
        assert!(ratio_matches_reduction(flops_separable(&one), flops_standard(&one), 64, 1));
    }

    #[test]
    fn relu_softmax_xent() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu(&relu(&t)), relu(&t));

        assert_eq!(softmax(&[1.0; 4]).unwrap(), vec![0.25; 4]);
        let p = softmax(&[0.0, 3f64.ln()]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.75).abs() < 1e-15);
        let q = softmax(&[1000.0, 1000.0 + 3f64.ln()]).unwrap();
        assert!((q[1] - p[1]).abs() < 1e-12);
        assert!(softmax(&[f64::NAN, 0.0]).is_err());

        assert_eq!(cross_entropy(&[1.0, 0.0], 0).unwrap(), 0.0);
        assert!((cross_entropy(&[0.2; 5], 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        assert!((cross_entropy(&[0.25, 0.75], 1).unwrap() - 0.2877).abs() < 1e-4);
        assert!((cross_entropy(&[1.0, 0.0], 1).unwrap() - 1e12f64.ln()).abs() < 1e-9);
        assert!(cross_entropy(&[0.5, 0.5], 2).is_err());
    }
}
