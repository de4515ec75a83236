//! Multi-channel feature maps and im2col convolution helpers shared by both
//! networks.

use ndarray::{Array2, ArrayView2, ArrayView4};

use crate::par;

/// Activations stored as `channels × (height·width)`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct FeatureMap {
    pub data: Array2<f64>,
    pub h: usize,
    pub w: usize,
}

impl FeatureMap {
    pub fn new(data: Array2<f64>, h: usize, w: usize) -> Self {
        debug_assert_eq!(data.ncols(), h * w);
        Self { data, h, w }
    }

    pub fn from_plane(plane: ArrayView2<'_, f64>) -> Self {
        let (h, w) = plane.dim();
        let flat: Vec<f64> = plane.iter().copied().collect();
        Self::new(Array2::from_shape_vec((1, h * w), flat).unwrap(), h, w)
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    /// Single-channel map back to a `h × w` array.
    pub fn to_plane(&self) -> Array2<f64> {
        debug_assert_eq!(self.channels(), 1);
        Array2::from_shape_vec((self.h, self.w), self.data.row(0).to_vec()).unwrap()
    }
}

/// Output side of a correlation with `k` taps and symmetric zero padding.
pub(crate) fn out_len(len: usize, k: usize, pad: usize) -> usize {
    len + 2 * pad + 1 - k
}

/// Unfolds every `kh × kw` window into a column. Row index is
/// `c·kh·kw + a·kw + b`, matching a row-major `(C, kh, kw)` filter.
pub(crate) fn im2col(x: &FeatureMap, kh: usize, kw: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = (x.channels(), x.h, x.w);
    let (oh, ow) = (out_len(h, kh, pad), out_len(w, kw, pad));
    let n = oh * ow;
    let mut cols = vec![0.0; c * kh * kw * n];
    let src = x.data.as_standard_layout();
    let src = src.as_slice().unwrap();
    par::for_each_chunk_mut(&mut cols, n, |row, out| {
        let ch = row / (kh * kw);
        let a = (row / kw) % kh;
        let b = row % kw;
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let r = i as i64 + a as i64 - pad as i64;
            let line = &mut out[i * ow..(i + 1) * ow];
            if r < 0 || r >= h as i64 {
                continue;
            }
            let r = r as usize;
            for (j, o) in line.iter_mut().enumerate() {
                let cc = j as i64 + b as i64 - pad as i64;
                if cc >= 0 && (cc as usize) < w {
                    *o = plane[r * w + cc as usize];
                }
            }
        }
    });
    Array2::from_shape_vec((c * kh * kw, n), cols).unwrap()
}

/// Adjoint of [`im2col`]: scatters columns back onto a `c × h × w` map.
pub(crate) fn col2im(
    cols: ArrayView2<'_, f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
) -> FeatureMap {
    let (oh, ow) = (out_len(h, kh, pad), out_len(w, kw, pad));
    let cols = cols.as_standard_layout();
    let cols = cols.as_slice().unwrap();
    let n = oh * ow;
    let mut out = vec![0.0; c * h * w];
    // Channels are independent; parallelize over them.
    par::for_each_chunk_mut(&mut out, h * w, |ch, plane| {
        for a in 0..kh {
            for b in 0..kw {
                let row = (ch * kh + a) * kw + b;
                let src = &cols[row * n..(row + 1) * n];
                for i in 0..oh {
                    let r = i as i64 + a as i64 - pad as i64;
                    if r < 0 || r >= h as i64 {
                        continue;
                    }
                    let r = r as usize;
                    for j in 0..ow {
                        let cc = j as i64 + b as i64 - pad as i64;
                        if cc >= 0 && (cc as usize) < w {
                            plane[r * w + cc as usize] += src[i * ow + j];
                        }
                    }
                }
            }
        }
    });
    FeatureMap::new(Array2::from_shape_vec((c, h * w), out).unwrap(), h, w)
}

/// Filter bank `(out, in, kh, kw)` flattened to `out × (in·kh·kw)`.
pub(crate) fn filter_matrix(wts: ArrayView4<'_, f64>) -> Array2<f64> {
    let (o, i, kh, kw) = wts.dim();
    let flat: Vec<f64> = wts.iter().copied().collect();
    Array2::from_shape_vec((o, i * kh * kw), flat).unwrap()
}

/// Multi-channel cross-correlation with zero padding `pad`, no bias.
pub(crate) fn conv2d(x: &FeatureMap, wts: ArrayView4<'_, f64>, pad: usize) -> FeatureMap {
    let (_, _, kh, kw) = wts.dim();
    let (oh, ow) = (out_len(x.h, kh, pad), out_len(x.w, kw, pad));
    let out = if kh == 1 && kw == 1 && pad == 0 {
        filter_matrix(wts).dot(&x.data)
    } else {
        filter_matrix(wts).dot(&im2col(x, kh, kw, pad))
    };
    FeatureMap::new(out, oh, ow)
}
