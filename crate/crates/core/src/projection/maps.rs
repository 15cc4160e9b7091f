//! Coalescing matrix families and the normalized transposes derived from them.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Matrix = Tensor<f64>;

fn check_halving(d_large: usize, d_small: usize, block: usize) -> Result<usize> {
    if block == 0 || d_small == 0 || d_large != 2 * d_small || !d_small.is_multiple_of(block) {
        return Err(Error::Config(format!(
            "cannot halve {d_large} -> {d_small} in blocks of {block}"
        )));
    }
    Ok(d_small / block)
}

/// Block-pairing matrix `H (x) I_block` of shape `[d_large, d_small]` with
/// 0.5 at `(pair(j), j)` for both partners of small unit `j`.
fn paired(
    d_large: usize,
    d_small: usize,
    block: usize,
    partners: impl Fn(usize, usize) -> [usize; 2],
) -> Result<Matrix> {
    let blocks = check_halving(d_large, d_small, block)?;
    let mut h = Matrix::zeros(&[2 * blocks, blocks]);
    for j in 0..blocks {
        for i in partners(j, blocks) {
            h.set2(i, j, 0.5);
        }
    }
    h.kron(&Matrix::identity(block))
}

/// Stack pairing: small block `j` merges large blocks `j` and `j + d_small/block`.
pub fn build_width_stack(d_large: usize, d_small: usize, block: usize) -> Result<Matrix> {
    paired(d_large, d_small, block, |j, n| [j, j + n])
}

/// Adjacent pairing: small block `j` merges large blocks `2j` and `2j + 1`.
pub fn build_width_adjacent(d_large: usize, d_small: usize, block: usize) -> Result<Matrix> {
    paired(d_large, d_small, block, |j, _| [2 * j, 2 * j + 1])
}

/// Depth coalescing matrix `R` of shape `[layers_large, layers_small]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub r: Matrix,
}

/// Merges adjacent layers `2i` and `2i + 1` into small layer `i`.
pub fn build_depth_adjacent(l_large: usize, l_small: usize) -> Result<DepthMap> {
    Ok(DepthMap {
        r: build_width_adjacent(l_large, l_small, 1)?,
    })
}

/// Merges layers `i` and `i + l_small` (the inverse of layer stacking).
pub fn build_depth_stack(l_large: usize, l_small: usize) -> Result<DepthMap> {
    Ok(DepthMap {
        r: build_width_stack(l_large, l_small, 1)?,
    })
}

fn reciprocal(v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    v.into_iter()
        .enumerate()
        .map(|(i, x)| {
            if x == 0.0 || !x.is_finite() {
                Err(Error::SingularNormalization(format!(
                    "{what}: entry {i} is {x}"
                )))
            } else {
                Ok(1.0 / x)
            }
        })
        .collect()
}

/// `A^T diag(1 / colsum(A A^T))`: the shared normalized-transpose form of
/// `F_in`, `T_out` and `G`.
fn normalized_transpose(a: &Matrix, what: &str) -> Result<Matrix> {
    let aat = a.matmul(&a.transpose()?)?;
    let inv = reciprocal(aat.col_sums()?, what)?;
    a.transpose()?.scale_cols(&inv)
}

/// Input-side coalescing matrix of the next layer, `[d_small, d_large]`.
pub fn derive_f_in(f_out: &Matrix) -> Result<Matrix> {
    normalized_transpose(f_out, "colsum(F_out F_out^T)")
}

/// Output-side de-coalescing matrix, `[d_small, d_large]`.
pub fn derive_t_out(f_out: &Matrix) -> Result<Matrix> {
    normalized_transpose(f_out, "colsum(F_out F_out^T)")
}

/// Input-side de-coalescing matrix `diag(1 / rowsum(F_in^T F_in)) F_in^T`,
/// `[d_large, d_small]`.
pub fn derive_t_in(f_in: &Matrix) -> Result<Matrix> {
    let fit = f_in.transpose()?;
    let inv = reciprocal(fit.matmul(f_in)?.row_sums()?, "rowsum(F_in^T F_in)")?;
    fit.scale_rows(&inv)
}

/// Depth de-coalescing matrix `G = R^T diag(1 / colsum(R R^T))`,
/// `[layers_small, layers_large]`.
pub fn derive_g(r: &Matrix) -> Result<Matrix> {
    normalized_transpose(r, "colsum(R R^T)")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn stack_two_to_one() {
        assert_eq!(
            build_width_stack(2, 1, 1).unwrap(),
            m(&[vec![0.5], vec![0.5]])
        );
    }

    #[test]
    fn stack_four_to_two_pairs_j_with_j_plus_two() {
        let f = build_width_stack(4, 2, 1).unwrap();
        assert_eq!(
            f,
            m(&[
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![0.5, 0.0],
                vec![0.0, 0.5]
            ])
        );
    }

    #[test]
    fn adjacent_four_to_two() {
        let f = build_width_adjacent(4, 2, 1).unwrap();
        assert_eq!(
            f,
            m(&[
                vec![0.5, 0.0],
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![0.0, 0.5]
            ])
        );
    }

    #[test]
    fn adjacent_blocks_are_kronecker() {
        let h = build_width_adjacent(4, 2, 1).unwrap();
        let want = h.kron(&Matrix::identity(2)).unwrap();
        assert_eq!(build_width_adjacent(8, 4, 2).unwrap(), want);
    }

    #[test]
    fn column_sums_are_one() {
        for f in [
            build_width_stack(12, 6, 3).unwrap(),
            build_width_adjacent(12, 6, 2).unwrap(),
            build_depth_adjacent(6, 3).unwrap().r,
            build_depth_stack(6, 3).unwrap().r,
        ] {
            assert!(f.col_sums().unwrap().iter().all(|&s| s == 1.0));
        }
    }

    #[test]
    fn indivisible_dimensions_are_rejected() {
        assert!(build_width_stack(6, 2, 1).is_err());
        assert!(build_width_stack(8, 4, 3).is_err());
        assert!(build_depth_adjacent(5, 2).is_err());
    }

    #[test]
    fn depth_families() {
        let adj = build_depth_adjacent(4, 2).unwrap().r;
        assert_eq!(
            adj,
            m(&[
                vec![0.5, 0.0],
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![0.0, 0.5]
            ])
        );
        assert_eq!(adj.rank(1e-12).unwrap(), 2);
        let stack = build_depth_stack(4, 2).unwrap().r;
        assert_eq!(
            stack,
            m(&[
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![0.5, 0.0],
                vec![0.0, 0.5]
            ])
        );
    }

    #[test]
    fn f_in_of_half_half_is_ones() {
        let f_in = derive_f_in(&m(&[vec![0.5], vec![0.5]])).unwrap();
        assert_eq!(f_in, m(&[vec![1.0, 1.0]]));
        let id = Matrix::identity(3);
        assert_eq!(derive_f_in(&id).unwrap(), id);
        assert_eq!(derive_t_out(&id).unwrap(), id);
        assert_eq!(derive_g(&id).unwrap(), id);
    }

    #[test]
    fn default_stack_inverses() {
        // T_out = [I, I], T_in = [I/2, I/2]^T
        let f_out = build_width_stack(4, 2, 1).unwrap();
        let t_out = derive_t_out(&f_out).unwrap();
        assert_eq!(
            t_out,
            m(&[vec![1.0, 0.0, 1.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]])
        );
        let t_in = derive_t_in(&derive_f_in(&f_out).unwrap()).unwrap();
        assert_eq!(
            t_in,
            m(&[
                vec![0.5, 0.0],
                vec![0.0, 0.5],
                vec![0.5, 0.0],
                vec![0.0, 0.5]
            ])
        );
    }

    #[test]
    fn g_of_half_half_is_ones() {
        assert_eq!(
            derive_g(&m(&[vec![0.5], vec![0.5]])).unwrap(),
            m(&[vec![1.0, 1.0]])
        );
    }

    #[test]
    fn zero_row_is_singular() {
        let zero_row = m(&[vec![0.5], vec![0.0]]);
        assert!(matches!(
            derive_f_in(&zero_row),
            Err(Error::SingularNormalization(_))
        ));
    }
}
