use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Non-overlapping 2x2 max pooling over `(H, W, C)` or `(B, H, W, C)`.
pub fn maxpool2<T: Element>(input: &Tensor<T>) -> Result<Tensor<T>> {
    maxpool2_with_indices(input).map(|(out, _)| out)
}

/// As [`maxpool2`], also returning for every output element the flat index
/// (within the whole input buffer) of the window element that won. Ties go
/// to the first element in row-major window order.
pub fn maxpool2_with_indices<T: Element>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (batch, h, w, c) = match *input.shape() {
        [h, w, c] => (1, h, w, c),
        [b, h, w, c] => (b, h, w, c),
        ref other => {
            return Err(Error::shape(
                "maxpool2",
                format!("expected (H, W, C) or (B, H, W, C), got {other:?}"),
            ))
        }
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2",
            format!("spatial dims must be even, got {h}x{w}"),
        ));
    }
    if input.len() > u32::MAX as usize {
        return Err(Error::InvalidArgument("maxpool2 input too large".into()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Vec::with_capacity(batch * oh * ow * c);
    let mut arg = Vec::with_capacity(batch * oh * ow * c);
    for b in 0..batch {
        let base = b * h * w * c;
        for oy in 0..oh {
            for ox in 0..ow {
                let corner = base + ((2 * oy) * w + 2 * ox) * c;
                for ch in 0..c {
                    let mut best = corner + ch;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = corner + (dy * w + dx) * c + ch;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    arg.push(best as u32);
                }
            }
        }
    }
    let mut shape = input.shape().to_vec();
    let r = shape.len();
    shape[r - 3] = oh;
    shape[r - 2] = ow;
    Ok((Tensor::from_parts(shape, out), arg))
}

/// Routes each output gradient to its recorded argmax position.
pub fn maxpool2_backward<T: Element>(
    input_shape: &[usize],
    argmax: &[u32],
    grad_output: &Tensor<T>,
) -> Result<Tensor<T>> {
    if argmax.len() != grad_output.len() {
        return Err(Error::shape(
            "maxpool2_backward",
            format!(
                "{} argmax entries for {} gradients",
                argmax.len(),
                grad_output.len()
            ),
        ));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec())?;
    let buf = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_output.data()) {
        let slot = &mut buf[i as usize];
        *slot = *slot + g;
    }
    Ok(dx)
}
