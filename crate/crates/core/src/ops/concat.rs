use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Joins two non-empty rank-1 tensors end to end.
pub fn concat(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.expect_rank("concat", 1)?;
    b.expect_rank("concat", 1)?;
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.data());
    data.extend_from_slice(b.data());
    Tensor::from_vec(data)
}

/// Splits `upstream` back into the gradients of the two concatenated parts,
/// the first of which had `first_len` elements.
pub fn concat_backward(upstream: &Tensor, first_len: usize) -> Result<(Tensor, Tensor)> {
    upstream.expect_rank("concat_backward", 1)?;
    if first_len == 0 || first_len >= upstream.len() {
        return Err(Error::invalid(
            "concat_backward",
            format!(
                "split point {first_len} must fall strictly inside length {}",
                upstream.len()
            ),
        ));
    }
    let (a, b) = upstream.data().split_at(first_len);
    Ok((Tensor::from_vec(a.to_vec())?, Tensor::from_vec(b.to_vec())?))
}
