//! One-level orthonormal Haar decomposition and the two half-resolution
//! network inputs built from it.
//!
//! For a 2x2 block `[[a, b], [c, d]]` the four coefficients are
//!
//! ```text
//! ll = (a + b + c + d) / 2      lh = (a - b + c - d) / 2
//! hl = (a + b - c - d) / 2      hh = (a - b - c + d) / 2
//! ```
//!
//! which is `L X L^T`, `L X H^T`, `H X L^T`, `H X H^T` with the truncated
//! analysis matrices from [`HaarFilters::analysis_matrices`].

use std::f64::consts::FRAC_1_SQRT_2;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, ParamId, ParamSet, Tensor, Var};

/// The two Haar analysis filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarFilters {
    pub low: [f64; 2],
    pub high: [f64; 2],
}

impl Default for HaarFilters {
    fn default() -> Self {
        Self {
            low: [FRAC_1_SQRT_2, FRAC_1_SQRT_2],
            high: [FRAC_1_SQRT_2, -FRAC_1_SQRT_2],
        }
    }
}

impl HaarFilters {
    /// Row-major `(n/2) x n` matrices whose row `i` carries the filter taps at
    /// columns `2i` and `2i + 1`.
    pub fn analysis_matrices(&self, n: usize) -> (Vec<f64>, Vec<f64>) {
        let rows = n / 2;
        let mut l = vec![0.0; rows * n];
        let mut h = vec![0.0; rows * n];
        for i in 0..rows {
            for tap in 0..2 {
                l[i * n + 2 * i + tap] = self.low[tap];
                h[i * n + 2 * i + tap] = self.high[tap];
            }
        }
        (l, h)
    }
}

/// A single DWT component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Band {
    Ll,
    Lh,
    Hl,
    Hh,
}

/// The four half-resolution DWT components of an image or a batch of images.
/// Each has the source shape with the last two dims halved.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletQuad<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Float> WaveletQuad<T> {
    pub fn band(&self, band: Band) -> &Tensor<T> {
        match band {
            Band::Ll => &self.ll,
            Band::Lh => &self.lh,
            Band::Hl => &self.hl,
            Band::Hh => &self.hh,
        }
    }

    /// Sum of squares over all four components.
    pub fn energy(&self) -> f64 {
        [&self.ll, &self.lh, &self.hl, &self.hh]
            .iter()
            .map(|t| t.sum_squares())
            .sum()
    }
}

/// Forward transform over the last two dims of a rank-2, 3 or 4 tensor.
/// Height and width must both be even.
pub fn dwt2d<T: Float>(image: &Tensor<T>) -> Result<WaveletQuad<T>> {
    let shape = image.shape();
    if !(2..=4).contains(&shape.len()) {
        return Err(Error::shape("dwt2d", format!("unsupported rank {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "dwt2d",
            format!("height and width must be even, got {h}x{w}"),
        ));
    }
    let planes = image.numel() / (h * w);
    let (ho, wo) = (h / 2, w / 2);
    let half = T::of(0.5);
    let mut bands: [Vec<T>; 4] = std::array::from_fn(|_| Vec::with_capacity(planes * ho * wo));
    for plane in image.data().chunks(h * w) {
        for i in 0..ho {
            let top = &plane[2 * i * w..(2 * i + 1) * w];
            let bottom = &plane[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..wo {
                let (a, b) = (top[2 * j], top[2 * j + 1]);
                let (c, d) = (bottom[2 * j], bottom[2 * j + 1]);
                bands[0].push((a + b + c + d) * half);
                bands[1].push((a - b + c - d) * half);
                bands[2].push((a + b - c - d) * half);
                bands[3].push((a - b - c + d) * half);
            }
        }
    }
    let mut out_shape = shape.to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = ho;
    out_shape[r - 1] = wo;
    let [ll, lh, hl, hh] = bands;
    Ok(WaveletQuad {
        ll: Tensor::new(&out_shape, ll)?,
        lh: Tensor::new(&out_shape, lh)?,
        hl: Tensor::new(&out_shape, hl)?,
        hh: Tensor::new(&out_shape, hh)?,
    })
}

/// Inverse of [`dwt2d`].
pub fn idwt2d<T: Float>(quad: &WaveletQuad<T>) -> Result<Tensor<T>> {
    let shape = quad.ll.shape();
    for t in [&quad.lh, &quad.hl, &quad.hh] {
        if t.shape() != shape {
            return Err(Error::shape(
                "idwt2d",
                format!("component shapes {:?} and {:?} differ", shape, t.shape()),
            ));
        }
    }
    let r = shape.len();
    if r < 2 {
        return Err(Error::shape("idwt2d", format!("unsupported rank {shape:?}")));
    }
    let (ho, wo) = (shape[r - 2], shape[r - 1]);
    let (h, w) = (2 * ho, 2 * wo);
    let planes = quad.ll.numel() / (ho * wo);
    let half = T::of(0.5);
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = p * ho * wo;
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for i in 0..ho {
            for j in 0..wo {
                let k = src + i * wo + j;
                let (ll, lh, hl, hh) = (
                    quad.ll.data()[k],
                    quad.lh.data()[k],
                    quad.hl.data()[k],
                    quad.hh.data()[k],
                );
                dst[2 * i * w + 2 * j] = (ll + lh + hl + hh) * half;
                dst[2 * i * w + 2 * j + 1] = (ll - lh + hl - hh) * half;
                dst[(2 * i + 1) * w + 2 * j] = (ll + lh - hl - hh) * half;
                dst[(2 * i + 1) * w + 2 * j + 1] = (ll - lh - hl + hh) * half;
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[r - 2] = h;
    out_shape[r - 1] = w;
    Tensor::new(&out_shape, out)
}

/// The two network inputs at half resolution: the `ll` band and the
/// (possibly fused) high-frequency band.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyPair<T> {
    pub low: Tensor<T>,
    pub high: Tensor<T>,
}

/// Low-frequency input: the `ll` band alone.
pub fn low_pass<T: Float>(quad: &WaveletQuad<T>) -> &Tensor<T> {
    &quad.ll
}

/// Which DWT components feed the high-frequency branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Selection {
    LlOnly,
    LhOnly,
    HlOnly,
    HhOnly,
    /// All four components through the pointwise fuser.
    FuseAll,
    /// `lh` and `hl` through the fuser.
    FuseNoLlHh,
    /// `lh`, `hl` and `hh` through the fuser.
    #[default]
    FuseNoLl,
}

impl Selection {
    pub const ALL: [Selection; 7] = [
        Selection::LlOnly,
        Selection::LhOnly,
        Selection::HlOnly,
        Selection::HhOnly,
        Selection::FuseAll,
        Selection::FuseNoLlHh,
        Selection::FuseNoLl,
    ];

    /// Components used, in `ll, lh, hl, hh` order.
    pub fn bands(self) -> &'static [Band] {
        match self {
            Selection::LlOnly => &[Band::Ll],
            Selection::LhOnly => &[Band::Lh],
            Selection::HlOnly => &[Band::Hl],
            Selection::HhOnly => &[Band::Hh],
            Selection::FuseAll => &[Band::Ll, Band::Lh, Band::Hl, Band::Hh],
            Selection::FuseNoLlHh => &[Band::Lh, Band::Hl],
            Selection::FuseNoLl => &[Band::Lh, Band::Hl, Band::Hh],
        }
    }

    pub fn is_fused(self) -> bool {
        self.bands().len() > 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Selection::LlOnly => "ll_only",
            Selection::LhOnly => "lh_only",
            Selection::HlOnly => "hl_only",
            Selection::HhOnly => "hh_only",
            Selection::FuseAll => "fuse_all",
            Selection::FuseNoLlHh => "fuse_no_ll_hh",
            Selection::FuseNoLl => "fuse_no_ll",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

/// Learnable 1x1 convolution merging the selected components back to the
/// image channel count. Its weights live in the owning [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointwiseFuser {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl PointwiseFuser {
    /// Register a fuser for `selection` over `image_channels`-channel images.
    /// Weights are uniform in `±1/sqrt(fan_in)`, bias zero.
    pub fn new<T: Float, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        image_channels: usize,
        selection: Selection,
        rng: &mut R,
    ) -> Self {
        let in_channels = image_channels * selection.bands().len();
        let bound = 1.0 / (in_channels as f64).sqrt();
        let w: Vec<T> = (0..image_channels * in_channels)
            .map(|_| T::of(rng.gen_range(-bound..bound)))
            .collect();
        let weight = params.add(
            "fuser.weight",
            Tensor::new(&[image_channels, in_channels, 1, 1], w).expect("fuser weight shape"),
        );
        let bias = params.add("fuser.bias", Tensor::zeros(&[image_channels]));
        Self {
            weight,
            bias,
            in_channels,
            out_channels: image_channels,
        }
    }

    /// Disable learning for the fuser; forward behaviour is unchanged.
    pub fn freeze<T: Float>(&self, params: &mut ParamSet<T>) {
        params.freeze(self.weight);
        params.freeze(self.bias);
    }

    pub fn is_frozen<T: Float>(&self, params: &ParamSet<T>) -> bool {
        params.is_frozen(self.weight) && params.is_frozen(self.bias)
    }
}

fn as_batch<T: Float>(t: &Tensor<T>) -> Result<Tensor<T>> {
    match t.ndim() {
        4 => Ok(t.clone()),
        3 => {
            let mut s = vec![1];
            s.extend_from_slice(t.shape());
            t.clone().reshape(&s)
        }
        _ => Err(Error::shape("high_pass", format!("component shape {:?}", t.shape()))),
    }
}

/// High-frequency input, recorded in `graph` so gradients reach the fuser.
///
/// Single-component selections return that component as a constant; fused
/// selections concatenate the chosen components channelwise and apply the
/// fuser. Components of rank 3 are treated as a batch of one.
pub fn high_pass<T: Float>(
    graph: &mut Graph<T>,
    params: &ParamSet<T>,
    quad: &WaveletQuad<T>,
    fuser: Option<&PointwiseFuser>,
    selection: Selection,
) -> Result<Var> {
    let bands = selection.bands();
    if !selection.is_fused() {
        return Ok(graph.constant(as_batch(quad.band(bands[0]))?));
    }
    let fuser = fuser.ok_or_else(|| {
        Error::config("selection", format!("{} needs a pointwise fuser", selection.as_str()))
    })?;
    let parts = bands
        .iter()
        .map(|&b| as_batch(quad.band(b)).map(|t| graph.constant(t)))
        .collect::<Result<Vec<_>>>()?;
    let stacked = graph.concat_channels(&parts)?;
    if graph.shape(stacked)[1] != fuser.in_channels {
        return Err(Error::shape(
            "high_pass",
            format!(
                "selection {} yields {} channels, fuser expects {}",
                selection.as_str(),
                graph.shape(stacked)[1],
                fuser.in_channels
            ),
        ));
    }
    let w = graph.param(params, fuser.weight);
    let b = graph.param(params, fuser.bias);
    graph.conv2d(stacked, w, Some(b), 1, 0)
}

/// Value-only [`high_pass`].
pub fn high_pass_value<T: Float>(
    params: &ParamSet<T>,
    quad: &WaveletQuad<T>,
    fuser: Option<&PointwiseFuser>,
    selection: Selection,
) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let v = high_pass(&mut g, params, quad, fuser, selection)?;
    Ok(g.value(v).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, data).unwrap()
    }

    fn sample_quad() -> WaveletQuad<f64> {
        dwt2d(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap()
    }

    #[test]
    fn filters_are_orthonormal() {
        let f = HaarFilters::default();
        let dot = |a: [f64; 2], b: [f64; 2]| a[0] * b[0] + a[1] * b[1];
        assert!((dot(f.low, f.low) - 1.0).abs() < 1e-15);
        assert!((dot(f.high, f.high) - 1.0).abs() < 1e-15);
        assert!(dot(f.low, f.high).abs() < 1e-15);
    }

    #[test]
    fn constant_image() {
        let q = dwt2d(&t(&[1, 2, 2], &[1.0; 4])).unwrap();
        assert!((q.ll.data()[0] - 2.0).abs() < 1e-15);
        assert_eq!([q.lh.data()[0], q.hl.data()[0], q.hh.data()[0]], [0.0; 3]);
        assert!((low_pass(&q).data()[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_block() {
        let q = sample_quad();
        assert_eq!(q.ll.data(), [5.0]);
        assert_eq!(q.lh.data(), [-1.0]);
        assert_eq!(q.hl.data(), [-2.0]);
        assert_eq!(q.hh.data(), [0.0]);
        assert_eq!(low_pass(&q).data(), [5.0]);
    }

    #[test]
    fn inverse_examples() {
        let q = WaveletQuad {
            ll: t(&[1, 1, 1], &[2.0]),
            lh: t(&[1, 1, 1], &[0.0]),
            hl: t(&[1, 1, 1], &[0.0]),
            hh: t(&[1, 1, 1], &[0.0]),
        };
        assert_eq!(idwt2d(&q).unwrap().data(), [1.0; 4]);
        assert_eq!(idwt2d(&sample_quad()).unwrap().data(), [1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn odd_dimensions_rejected() {
        assert!(dwt2d(&Tensor::<f64>::zeros(&[3, 5, 4])).is_err());
        assert!(dwt2d(&Tensor::<f64>::zeros(&[3, 4, 3])).is_err());
    }

    #[test]
    fn inverse_rejects_mismatched_components() {
        let mut q = sample_quad();
        q.hh = Tensor::zeros(&[1, 2, 1]);
        assert!(idwt2d(&q).is_err());
    }

    #[test]
    fn single_component_selection() {
        let ps = ParamSet::<f64>::new();
        let out = high_pass_value(&ps, &sample_quad(), None, Selection::HhOnly).unwrap();
        assert_eq!(out.data(), [0.0]);
        assert_eq!(out.shape(), [1, 1, 1, 1]);
    }

    #[test]
    fn fuser_picking_lh() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f64>::new();
        let fuser = PointwiseFuser::new(&mut ps, 1, Selection::FuseNoLl, &mut rng);
        assert_eq!(fuser.in_channels, 3);
        ps.get_mut(fuser.weight).data_mut().copy_from_slice(&[1.0, 0.0, 0.0]);
        let out = high_pass_value(&ps, &sample_quad(), Some(&fuser), Selection::FuseNoLl).unwrap();
        assert_eq!(out.data(), [-1.0]);
    }

    #[test]
    fn zero_fuser_gives_zeros() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::<f64>::new();
        let fuser = PointwiseFuser::new(&mut ps, 3, Selection::FuseAll, &mut rng);
        ps.get_mut(fuser.weight).data_mut().fill(0.0);
        let img = Tensor::from_f64(&[3, 4, 6], &(0..72).map(|i| i as f64).collect::<Vec<_>>()).unwrap();
        let q = dwt2d(&img).unwrap();
        let out = high_pass_value(&ps, &q, Some(&fuser), Selection::FuseAll).unwrap();
        assert_eq!(out.shape(), [1, 3, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuser_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut ps = ParamSet::<f64>::new();
        let fuser = PointwiseFuser::new(&mut ps, 1, Selection::FuseNoLlHh, &mut rng);
        assert!(matches!(
            high_pass_value(&ps, &sample_quad(), Some(&fuser), Selection::FuseAll),
            Err(Error::Shape { .. })
        ));
        assert!(high_pass_value(&ps, &sample_quad(), None, Selection::FuseAll).is_err());
    }

    #[test]
    fn freeze_keeps_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::<f64>::new();
        let fuser = PointwiseFuser::new(&mut ps, 1, Selection::FuseAll, &mut rng);
        let before = high_pass_value(&ps, &sample_quad(), Some(&fuser), Selection::FuseAll).unwrap();
        fuser.freeze(&mut ps);
        assert!(fuser.is_frozen(&ps));
        let after = high_pass_value(&ps, &sample_quad(), Some(&fuser), Selection::FuseAll).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn selection_names_round_trip() {
        for s in Selection::ALL {
            assert_eq!(Selection::parse(s.as_str()), Some(s));
        }
        assert_eq!(Selection::default(), Selection::FuseNoLl);
    }
}
