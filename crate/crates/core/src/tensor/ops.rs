use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Elementwise sum of two identically shaped tensors.
pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "add",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    a.zip_map(b, |x, y| x + y)
}

/// Bilinear resize of an `(H, W, C)` image with corner-aligned sampling:
/// output pixel 0 samples input pixel 0 and the last output pixel samples
/// the last input pixel. A 1-pixel output axis samples the input center.
pub fn resize_bilinear<T: Element>(
    input: &Tensor<T>,
    out_h: usize,
    out_w: usize,
) -> Result<Tensor<T>> {
    let [h, w, c] = *input.shape() else {
        return Err(Error::shape(
            "resize_bilinear",
            format!("expected (H, W, C), got {:?}", input.shape()),
        ));
    };
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be positive, got {out_h}x{out_w}"
        )));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    let coords = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                let src = if n_out == 1 {
                    (n_in - 1) as f64 / 2.0
                } else {
                    i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64
                };
                let lo = (src.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let ys = coords(h, out_h);
    let xs = coords(w, out_w);
    let x = input.data();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let p = |yy: usize, xx: usize| x[(yy * w + xx) * c + ch].as_f64();
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bot = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(T::of(top * (1.0 - fy) + bot * fy));
            }
        }
    }
    Ok(Tensor::from_parts(vec![out_h, out_w, c], out))
}
