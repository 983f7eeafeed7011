//! Dense tensors, 2D convolution/correlation and patch extraction.
//!
//! Everything in this module is a pure function of its inputs; values are
//! immutable once constructed and safe to share across threads.

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

fn check_finite(context: &'static str, data: &[f64]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::numeric(
            context,
            format!("non-finite value at flat index {pos}"),
        ));
    }
    Ok(())
}

/// A per-sample feature-map tensor: `channels x height x width`, row-major
/// (channel-major, then row, then column).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::dim(
                "Tensor3::new",
                format!(
                    "data length {} != {}x{}x{}",
                    data.len(),
                    channels,
                    height,
                    width
                ),
            ));
        }
        check_finite("Tensor3::new", &data)?;
        Ok(Tensor3 {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Tensor3 {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_image(image: &Image2) -> Self {
        Tensor3 {
            channels: 1,
            height: image.height(),
            width: image.width(),
            data: image.data().to_vec(),
        }
    }

    /// Single-channel tensors convert back to an image; anything else is a
    /// dimension error.
    pub fn into_image(self) -> Result<Image2> {
        if self.channels != 1 {
            return Err(Error::dim(
                "Tensor3::into_image",
                format!("expected 1 channel, got {}", self.channels),
            ));
        }
        Image2::new(self.height, self.width, self.data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, v: f64) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Elementwise scaling by one scalar; the output is `s * self` exactly.
    pub fn scaled(&self, s: f64) -> Tensor3 {
        Tensor3 {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| s * v).collect(),
        }
    }

    /// Applies a linear map across channels at every spatial position:
    /// `out[c', i, j] = sum_c map[c', c] * self[c, i, j]`.
    pub fn map_channels(&self, map: &DMatrix<f64>) -> Result<Tensor3> {
        if map.ncols() != self.channels {
            return Err(Error::dim(
                "Tensor3::map_channels",
                format!(
                    "map has {} columns but tensor has {} channels",
                    map.ncols(),
                    self.channels
                ),
            ));
        }
        let out_channels = map.nrows();
        let plane = self.height * self.width;
        let mut out = vec![0.0; out_channels * plane];
        for oc in 0..out_channels {
            for ic in 0..self.channels {
                let w = map[(oc, ic)];
                if w == 0.0 {
                    continue;
                }
                let src = &self.data[ic * plane..(ic + 1) * plane];
                let dst = &mut out[oc * plane..(oc + 1) * plane];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
        Tensor3::new(out_channels, self.height, self.width, out)
    }

    /// Channels-by-positions matrix view (one column per spatial position).
    pub fn as_channel_matrix(&self) -> DMatrix<f64> {
        let plane = self.height * self.width;
        DMatrix::from_fn(self.channels, plane, |c, p| self.data[c * plane + p])
    }
}

/// A 2D grayscale image (or any plain 2D channel), row-major, intensities
/// nominally in `[0, 1]` for acquisition data; intermediate channels may
/// carry arbitrary finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2 {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image2 {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(
                "Image2::new",
                format!("data length {} != {}x{}", data.len(), height, width),
            ));
        }
        check_finite("Image2::new", &data)?;
        Ok(Image2 {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image2 {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.width + j] = v;
    }

    pub fn clamped_unit(&self) -> Image2 {
        Image2 {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        }
    }
}

/// Borrowed 2D kernel, row-major.
#[derive(Debug, Clone, Copy)]
pub struct Filter2<'a> {
    pub height: usize,
    pub width: usize,
    pub data: &'a [f64],
}

impl<'a> Filter2<'a> {
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[u * self.width + v]
    }
}

/// A bank of `count` convolutional filters over `in_channels` input channels
/// with spatial support `fh x fw`.
///
/// Two regimes exist:
/// * `orthogonal_mode == false`: every filter satisfies `||f_k||_2^2 <= 1`;
/// * `orthogonal_mode == true`: the `count x (in_channels*fh*fw)` matrix of
///   vectorized filters has orthonormal rows (max-abs row-Gram deviation
///   from identity at most 1e-8), which requires `count <= in_channels*fh*fw`.
#[derive(Debug, Clone)]
pub struct FilterBank {
    count: usize,
    in_channels: usize,
    fh: usize,
    fw: usize,
    data: Vec<f64>,
    orthogonal_mode: bool,
}

pub const ORTHO_GRAM_TOL: f64 = 1e-8;
pub const UNIT_NORM_SLACK: f64 = 1e-9;

impl FilterBank {
    pub fn new(
        count: usize,
        in_channels: usize,
        support: (usize, usize),
        data: Vec<f64>,
        orthogonal_mode: bool,
    ) -> Result<Self> {
        let (fh, fw) = support;
        let patch_dim = in_channels * fh * fw;
        if count == 0 || patch_dim == 0 {
            return Err(Error::dim("FilterBank::new", "empty bank or support"));
        }
        if data.len() != count * patch_dim {
            return Err(Error::dim(
                "FilterBank::new",
                format!("data length {} != {}x{}", data.len(), count, patch_dim),
            ));
        }
        check_finite("FilterBank::new", &data)?;
        let bank = FilterBank {
            count,
            in_channels,
            fh,
            fw,
            data,
            orthogonal_mode,
        };
        if orthogonal_mode {
            if count > patch_dim {
                return Err(Error::dim(
                    "FilterBank::new",
                    format!("orthogonal mode requires count {count} <= patch dim {patch_dim}"),
                ));
            }
            let dev = bank.row_gram_deviation();
            if dev > ORTHO_GRAM_TOL {
                return Err(Error::numeric(
                    "FilterBank::new",
                    format!("row-Gram deviation {dev:.3e} exceeds {ORTHO_GRAM_TOL:.0e}"),
                ));
            }
        } else {
            for k in 0..count {
                let sq: f64 = bank.filter_vec(k).iter().map(|v| v * v).sum();
                if sq > 1.0 + UNIT_NORM_SLACK {
                    return Err(Error::numeric(
                        "FilterBank::new",
                        format!("filter {k} has squared norm {sq} > 1"),
                    ));
                }
            }
        }
        Ok(bank)
    }

    /// Builds an orthogonal-mode bank from a `count x patch_dim` matrix of
    /// vectorized filters.
    pub fn from_orthogonal_matrix(
        matrix: &DMatrix<f64>,
        in_channels: usize,
        support: (usize, usize),
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(matrix.nrows() * matrix.ncols());
        for r in 0..matrix.nrows() {
            for c in 0..matrix.ncols() {
                data.push(matrix[(r, c)]);
            }
        }
        FilterBank::new(matrix.nrows(), in_channels, support, data, true)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn support(&self) -> (usize, usize) {
        (self.fh, self.fw)
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.fh * self.fw
    }

    pub fn orthogonal_mode(&self) -> bool {
        self.orthogonal_mode
    }

    pub fn filter_vec(&self, k: usize) -> &[f64] {
        let d = self.patch_dim();
        &self.data[k * d..(k + 1) * d]
    }

    /// Spatial kernel of filter `k` restricted to input channel `c`.
    pub fn kernel(&self, k: usize, c: usize) -> Filter2<'_> {
        let d = self.patch_dim();
        let plane = self.fh * self.fw;
        Filter2 {
            height: self.fh,
            width: self.fw,
            data: &self.data[k * d + c * plane..k * d + (c + 1) * plane],
        }
    }

    /// `count x patch_dim` matrix of vectorized filters.
    pub fn as_matrix(&self) -> DMatrix<f64> {
        let d = self.patch_dim();
        DMatrix::from_fn(self.count, d, |k, j| self.data[k * d + j])
    }

    pub fn row_gram_deviation(&self) -> f64 {
        let a = self.as_matrix();
        let gram = &a * a.transpose();
        let mut dev: f64 = 0.0;
        for i in 0..self.count {
            for j in 0..self.count {
                let target = if i == j { 1.0 } else { 0.0 };
                dev = dev.max((gram[(i, j)] - target).abs());
            }
        }
        dev
    }
}

fn check_support(
    context: &'static str,
    img_h: usize,
    img_w: usize,
    fh: usize,
    fw: usize,
) -> Result<()> {
    if fh == 0 || fw == 0 {
        return Err(Error::dim(context, "empty filter support"));
    }
    if fh > img_h || fw > img_w {
        return Err(Error::dim(
            context,
            format!("support {fh}x{fw} exceeds image extent {img_h}x{img_w}"),
        ));
    }
    Ok(())
}

/// Valid-region true 2D convolution (kernel flipped), `Eq. out = x * f`.
/// Output extent is `input extent - support + 1` per axis.
pub fn conv2_valid(x: &Image2, f: Filter2<'_>) -> Result<Image2> {
    check_support("conv2_valid", x.height(), x.width(), f.height, f.width)?;
    let oh = x.height() - f.height + 1;
    let ow = x.width() - f.width + 1;
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for u in 0..f.height {
                for v in 0..f.width {
                    acc += f.get(u, v) * x.get(i + f.height - 1 - u, j + f.width - 1 - v);
                }
            }
            out[i * ow + j] = acc;
        }
    }
    Image2::new(oh, ow, out)
}

/// Valid-region cross-correlation (no kernel flip); the analysis-side twin of
/// [`conv2_valid`], used by encoder paths and gradients.
pub fn corr2_valid(x: &Image2, f: Filter2<'_>) -> Result<Image2> {
    check_support("corr2_valid", x.height(), x.width(), f.height, f.width)?;
    let oh = x.height() - f.height + 1;
    let ow = x.width() - f.width + 1;
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut acc = 0.0;
            for u in 0..f.height {
                for v in 0..f.width {
                    acc += f.get(u, v) * x.get(i + u, j + v);
                }
            }
            out[i * ow + j] = acc;
        }
    }
    Image2::new(oh, ow, out)
}

/// Full (zero-padded) spatial 2D convolution; output extent is
/// `a extent + b extent - 1` per axis.
pub fn conv2_full(a: &Image2, b: &Image2) -> Result<Image2> {
    if a.height() == 0 || a.width() == 0 || b.height() == 0 || b.width() == 0 {
        return Err(Error::dim("conv2_full", "empty input"));
    }
    let oh = a.height() + b.height() - 1;
    let ow = a.width() + b.width() - 1;
    let mut out = vec![0.0; oh * ow];
    for ia in 0..a.height() {
        for ja in 0..a.width() {
            let av = a.get(ia, ja);
            if av == 0.0 {
                continue;
            }
            for ib in 0..b.height() {
                for jb in 0..b.width() {
                    out[(ia + ib) * ow + (ja + jb)] += av * b.get(ib, jb);
                }
            }
        }
    }
    Image2::new(oh, ow, out)
}

fn fft2_in_place(
    planner: &mut FftPlanner<f64>,
    buf: &mut [Complex<f64>],
    h: usize,
    w: usize,
    inverse: bool,
) {
    let row_fft = if inverse {
        planner.plan_fft_inverse(w)
    } else {
        planner.plan_fft_forward(w)
    };
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = if inverse {
        planner.plan_fft_inverse(h)
    } else {
        planner.plan_fft_forward(h)
    };
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            col[i] = buf[i * w + j];
        }
        col_fft.process(&mut col);
        for i in 0..h {
            buf[i * w + j] = col[i];
        }
    }
}

/// Full 2D convolution computed in the frequency domain (element-wise
/// multiplication of padded spectra). Agrees with [`conv2_full`] to
/// round-off on unit-scale inputs.
pub fn conv2_full_fft(a: &Image2, b: &Image2) -> Result<Image2> {
    if a.height() == 0 || a.width() == 0 || b.height() == 0 || b.width() == 0 {
        return Err(Error::dim("conv2_full_fft", "empty input"));
    }
    let oh = a.height() + b.height() - 1;
    let ow = a.width() + b.width() - 1;
    let mut planner = FftPlanner::new();
    let mut fa = vec![Complex::new(0.0, 0.0); oh * ow];
    let mut fb = vec![Complex::new(0.0, 0.0); oh * ow];
    for i in 0..a.height() {
        for j in 0..a.width() {
            fa[i * ow + j] = Complex::new(a.get(i, j), 0.0);
        }
    }
    for i in 0..b.height() {
        for j in 0..b.width() {
            fb[i * ow + j] = Complex::new(b.get(i, j), 0.0);
        }
    }
    fft2_in_place(&mut planner, &mut fa, oh, ow, false);
    fft2_in_place(&mut planner, &mut fb, oh, ow, false);
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= *y;
    }
    fft2_in_place(&mut planner, &mut fa, oh, ow, true);
    let scale = 1.0 / (oh * ow) as f64;
    let out: Vec<f64> = fa.iter().map(|c| c.re * scale).collect();
    Image2::new(oh, ow, out)
}

/// Patch-grid bookkeeping shared by extraction, reassembly and the
/// patch-domain encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub in_channels: usize,
    pub in_height: usize,
    pub in_width: usize,
    pub fh: usize,
    pub fw: usize,
    pub stride: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl PatchGeometry {
    pub fn new(
        in_channels: usize,
        in_height: usize,
        in_width: usize,
        support: (usize, usize),
        stride: usize,
    ) -> Result<Self> {
        let (fh, fw) = support;
        if stride == 0 {
            return Err(Error::dim("PatchGeometry::new", "stride must be >= 1"));
        }
        check_support("PatchGeometry::new", in_height, in_width, fh, fw)?;
        Ok(PatchGeometry {
            in_channels,
            in_height,
            in_width,
            fh,
            fw,
            stride,
            grid_h: (in_height - fh) / stride + 1,
            grid_w: (in_width - fw) / stride + 1,
        })
    }

    pub fn patch_dim(&self) -> usize {
        self.in_channels * self.fh * self.fw
    }

    pub fn grid_len(&self) -> usize {
        self.grid_h * self.grid_w
    }
}

/// Extracts vectorized patches from a multi-channel tensor into a
/// `patch_dim x grid_len` matrix. Column `p` holds the channel-major,
/// row-major vectorization of the patch at grid position `p`; the grid is
/// traversed in row-major order.
pub fn extract_patches_t3(input: &Tensor3, geom: &PatchGeometry) -> Result<DMatrix<f64>> {
    if input.channels() != geom.in_channels
        || input.height() != geom.in_height
        || input.width() != geom.in_width
    {
        return Err(Error::dim(
            "extract_patches_t3",
            format!(
                "tensor {}x{}x{} inconsistent with geometry {}x{}x{}",
                input.channels(),
                input.height(),
                input.width(),
                geom.in_channels,
                geom.in_height,
                geom.in_width
            ),
        ));
    }
    let d = geom.patch_dim();
    let n = geom.grid_len();
    let mut out = DMatrix::zeros(d, n);
    let plane = geom.fh * geom.fw;
    for gi in 0..geom.grid_h {
        for gj in 0..geom.grid_w {
            let p = gi * geom.grid_w + gj;
            let (i0, j0) = (gi * geom.stride, gj * geom.stride);
            for c in 0..geom.in_channels {
                for u in 0..geom.fh {
                    for v in 0..geom.fw {
                        out[(c * plane + u * geom.fw + v, p)] = input.get(c, i0 + u, j0 + v);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Single-channel convenience wrapper over [`extract_patches_t3`].
pub fn extract_patches(
    image: &Image2,
    support: (usize, usize),
    stride: usize,
) -> Result<DMatrix<f64>> {
    let geom = PatchGeometry::new(1, image.height(), image.width(), support, stride)?;
    extract_patches_t3(&Tensor3::from_image(image), &geom)
}

/// Reassembles a patch matrix back into the tensor frame described by
/// `geom`. Overlapping contributions are averaged by per-pixel coverage
/// count; pixels never covered by the grid (possible when `stride > 1`)
/// are left at zero.
pub fn assemble_patches(patches: &DMatrix<f64>, geom: &PatchGeometry) -> Result<Tensor3> {
    if patches.nrows() != geom.patch_dim() || patches.ncols() != geom.grid_len() {
        return Err(Error::dim(
            "assemble_patches",
            format!(
                "patch matrix {}x{} inconsistent with geometry (expected {}x{})",
                patches.nrows(),
                patches.ncols(),
                geom.patch_dim(),
                geom.grid_len()
            ),
        ));
    }
    let plane = geom.fh * geom.fw;
    let mut acc = Tensor3::zeros(geom.in_channels, geom.in_height, geom.in_width);
    let mut coverage = vec![0.0f64; geom.in_height * geom.in_width];
    for gi in 0..geom.grid_h {
        for gj in 0..geom.grid_w {
            let p = gi * geom.grid_w + gj;
            let (i0, j0) = (gi * geom.stride, gj * geom.stride);
            for u in 0..geom.fh {
                for v in 0..geom.fw {
                    coverage[(i0 + u) * geom.in_width + (j0 + v)] += 1.0;
                    for c in 0..geom.in_channels {
                        let cur = acc.get(c, i0 + u, j0 + v);
                        acc.set(c, i0 + u, j0 + v, cur + patches[(c * plane + u * geom.fw + v, p)]);
                    }
                }
            }
        }
    }
    for i in 0..geom.in_height {
        for j in 0..geom.in_width {
            let cov = coverage[i * geom.in_width + j];
            if cov > 0.0 {
                for c in 0..geom.in_channels {
                    let cur = acc.get(c, i, j);
                    acc.set(c, i, j, cur / cov);
                }
            }
        }
    }
    Ok(acc)
}
