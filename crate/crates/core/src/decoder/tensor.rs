//! Dense `channels × height × width` tensors and the three decoder primitives.

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }
}

/// Depth to space: `out[c, 2y + i, 2x + j] = in[4c + 2i + j, y, x]`.
pub fn pixel_shuffle(t: &Tensor) -> Tensor {
    assert_eq!(t.c % 4, 0, "pixel shuffle needs a multiple of 4 channels");
    let mut out = Tensor::zeros(t.c / 4, 2 * t.h, 2 * t.w);
    for c in 0..out.c {
        for i in 0..2 {
            for j in 0..2 {
                let src = 4 * c + 2 * i + j;
                for y in 0..t.h {
                    for x in 0..t.w {
                        out.data[(c * out.h + 2 * y + i) * out.w + 2 * x + j] = t.at(src, y, x);
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle`]; also its adjoint, since the shuffle is a permutation.
pub fn pixel_unshuffle(t: &Tensor) -> Tensor {
    assert!(t.h % 2 == 0 && t.w % 2 == 0, "pixel unshuffle needs even extents");
    let mut out = Tensor::zeros(4 * t.c, t.h / 2, t.w / 2);
    for c in 0..t.c {
        for i in 0..2 {
            for j in 0..2 {
                let dst = 4 * c + 2 * i + j;
                for y in 0..out.h {
                    for x in 0..out.w {
                        out.data[(dst * out.h + y) * out.w + x] = t.at(c, 2 * y + i, 2 * x + j);
                    }
                }
            }
        }
    }
    out
}

/// Index ranges of output rows (or columns) that read input offset `k - 1`.
#[inline]
fn tap_range(k: usize, n: usize) -> (usize, usize) {
    (if k == 0 { 1 } else { 0 }, if k == 2 { n - 1 } else { n })
}

/// Visits every `(output index, input index)` pair of one 3×3 tap.
#[inline]
fn for_tap(h: usize, w: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize)) {
    let (y0, y1) = tap_range(ky, h);
    let (x0, x1) = tap_range(kx, w);
    if x0 >= x1 {
        return;
    }
    for y in y0..y1 {
        let o = y * w + x0;
        let i = (y + ky - 1) * w + x0 + kx - 1;
        f(o, i, x1 - x0);
    }
}

/// 3×3 convolution with zero padding; `weight` is `[cout][cin][3][3]`.
pub fn conv3x3(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize) -> Tensor {
    let (cin, h, w) = (x.c, x.h, x.w);
    let plane = h * w;
    let mut out = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        let dst = &mut out.data[co * plane..(co + 1) * plane];
        dst.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..cin {
            let src = &x.data[ci * plane..(ci + 1) * plane];
            let k = &weight[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for_tap(h, w, ky, kx, |o, i, len| {
                        for (d, s) in dst[o..o + len].iter_mut().zip(&src[i..i + len]) {
                            *d += wv * s;
                        }
                    });
                }
            }
        }
    }
    out
}

/// Gradient of [`conv3x3`] with respect to its input.
pub fn conv3x3_input_grad(g: &Tensor, weight: &[f64], cin: usize) -> Tensor {
    let (cout, h, w) = (g.c, g.h, g.w);
    let plane = h * w;
    let mut out = Tensor::zeros(cin, h, w);
    for ci in 0..cin {
        let dst = &mut out.data[ci * plane..(ci + 1) * plane];
        for co in 0..cout {
            let src = &g.data[co * plane..(co + 1) * plane];
            let k = &weight[(co * cin + ci) * 9..(co * cin + ci + 1) * 9];
            for ky in 0..3 {
                for kx in 0..3 {
                    let wv = k[ky * 3 + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for_tap(h, w, ky, kx, |o, i, len| {
                        for (d, s) in dst[i..i + len].iter_mut().zip(&src[o..o + len]) {
                            *d += wv * s;
                        }
                    });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shuffle_four_channels_to_two_by_two() {
        let t = Tensor::from_vec(4, 1, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let s = pixel_shuffle(&t);
        assert_eq!((s.c, s.h, s.w), (1, 2, 2));
        assert_eq!(s.data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.at(0, 0, 1), 2.0);
        assert_eq!(s.at(0, 1, 0), 3.0);
        assert_eq!(pixel_unshuffle(&s), t);
    }

    #[test]
    fn shuffle_round_trip() {
        let t = Tensor::from_vec(8, 3, 2, (0..48).map(|v| v as f64).collect());
        assert_eq!(pixel_unshuffle(&pixel_shuffle(&t)), t);
    }

    #[test]
    fn conv_centre_tap_is_identity() {
        let x = Tensor::from_vec(1, 3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(conv3x3(&x, &k, &[0.5], 1).data, vec![1.5, 2.5, 3.5, 4.5, 5.5, 6.5]);
    }

    #[test]
    fn conv_shift_and_padding() {
        // tap (ky=0, kx=1) reads the row above
        let x = Tensor::from_vec(1, 3, 1, vec![1.0, 2.0, 3.0]);
        let mut k = vec![0.0; 9];
        k[1] = 1.0;
        assert_eq!(conv3x3(&x, &k, &[0.0], 1).data, vec![0.0, 1.0, 2.0]);
    }
}
