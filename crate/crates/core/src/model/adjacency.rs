use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`. When
/// `directed` is false, `A` is first symmetrized as `A ∨ Aᵀ`.
pub fn normalize_adjacency(a: &Tensor, directed: bool) -> Result<Tensor> {
    let n = match a.shape() {
        [r, c] if r == c => *r,
        s => return Err(Error::dim("normalize_adjacency", s, &[s[0], s[0]])),
    };
    let d = a.data();
    if let Some(v) = d.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidAdjacency(format!("entry {v} is negative or NaN")));
    }
    if (0..n).any(|i| d[i * n + i] != 0.0) {
        return Err(Error::InvalidAdjacency("diagonal must be zero".into()));
    }
    let mut tilde = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let v = if directed {
                d[i * n + j]
            } else {
                d[i * n + j].max(d[j * n + i])
            };
            tilde[i * n + j] = v;
        }
        tilde[i * n + i] = 1.0;
    }
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| 1.0 / tilde[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            tilde[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    Tensor::new(vec![n, n], tilde)
}

/// Places square blocks along the diagonal of one larger matrix.
pub fn block_diagonal(blocks: &[&Tensor]) -> Result<Tensor> {
    let total: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut out = vec![0.0; total * total];
    let mut offset = 0;
    for b in blocks {
        let n = b.rows();
        if b.shape() != [n, n] {
            return Err(Error::dim("block_diagonal", b.shape(), &[n, n]));
        }
        for i in 0..n {
            let row = (offset + i) * total + offset;
            out[row..row + n].copy_from_slice(b.row(i));
        }
        offset += n;
    }
    Tensor::new(vec![total, total], out)
}
