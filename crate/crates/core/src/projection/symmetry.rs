//! Duplicated-neuron bookkeeping for de-coalesced models.
//!
//! Two large-side indices are duplicates when their columns of `T_out` are
//! identical: de-coalescing then writes the same small-model value into both,
//! and for symmetric maps they keep receiving equal gradients.

use crate::error::Result;
use crate::model::{param_specs, Axis, ParamSet};
use crate::projection::mapping::{Group, LevelMapping};
use crate::projection::maps::Matrix;
use crate::tensor::Element;

/// Partition of `0..d_large` into classes of identical `T_out` columns.
/// Singleton classes are included.
pub fn duplicate_classes(t_out: &Matrix) -> Result<Vec<Vec<usize>>> {
    let (rows, cols) = t_out.dims2()?;
    let column = |j: usize| (0..rows).map(|i| t_out.at2(i, j)).collect::<Vec<f64>>();
    let mut classes: Vec<(Vec<f64>, Vec<usize>)> = Vec::new();
    for j in 0..cols {
        let c = column(j);
        match classes.iter_mut().find(|(k, _)| *k == c) {
            Some((_, members)) => members.push(j),
            None => classes.push((c, vec![j])),
        }
    }
    Ok(classes.into_iter().map(|(_, m)| m).collect())
}

fn axis_classes(mapping: &LevelMapping, axis: Axis, len: usize) -> Result<Vec<Vec<usize>>> {
    match Group::of_axis(axis) {
        Some(g) if !mapping.group(g).identity => duplicate_classes(&mapping.group(g).t_out),
        _ => Ok((0..len).map(|i| vec![i]).collect()),
    }
}

/// Largest gradient spread inside any duplicate class, and the number of
/// duplicated index pairs inspected.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SymmetryReport {
    pub max_diff: f64,
    pub pairs: usize,
}

/// Scans every tensor of a large-level gradient set: for matrices, an entry
/// `(i, j)` is compared with all `(i', j')` where `i ~ i'` and `j ~ j'`.
/// Layers are not compared with each other.
pub fn duplicate_grad_spread<T: Element>(
    grads: &ParamSet<T>,
    mapping: &LevelMapping,
) -> Result<SymmetryReport> {
    let mut report = SymmetryReport::default();
    for spec in param_specs(&mapping.config_large) {
        let g = grads.get(&spec.name)?;
        let data = g.data();
        let classes: Vec<Vec<Vec<usize>>> = spec
            .axes
            .iter()
            .zip(&spec.shape)
            .map(|(&a, &n)| axis_classes(mapping, a, n))
            .collect::<Result<_>>()?;
        let mut visit = |idx: Vec<usize>| {
            if idx.len() < 2 {
                return;
            }
            let vals: Vec<f64> = idx.iter().map(|&k| data[k].as_f64()).collect();
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            report.max_diff = report.max_diff.max(hi - lo);
            report.pairs += idx.len() * (idx.len() - 1) / 2;
        };
        match classes.as_slice() {
            [rows] => rows.iter().for_each(|c| visit(c.clone())),
            [rows, cols] => {
                let n = spec.shape[1];
                for rc in rows {
                    for cc in cols {
                        visit(
                            rc.iter()
                                .flat_map(|&i| cc.iter().map(move |&j| i * n + j))
                                .collect(),
                        );
                    }
                }
            }
            _ => {}
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::projection::maps::build_width_stack;
    use crate::projection::maps::derive_t_out;
    use crate::tensor::Tensor;

    #[test]
    fn stack_classes_pair_j_with_j_plus_half() {
        let t = derive_t_out(&build_width_stack(4, 2, 1).unwrap()).unwrap();
        assert_eq!(duplicate_classes(&t).unwrap(), vec![vec![0, 2], vec![1, 3]]);
    }

    #[test]
    fn identity_has_singletons() {
        let t = Matrix::identity(3);
        assert_eq!(duplicate_classes(&t).unwrap().len(), 3);
    }

    #[test]
    fn spread_detects_a_perturbed_duplicate() {
        let large = ModelConfig::new(2, 2, 2, 5, 4);
        let m = LevelMapping::halving(&large).unwrap();
        let mut g = init_params::<f64>(&large, 0).unwrap();
        for (_, t) in g.iter_mut() {
            *t = Tensor::zeros(t.shape());
        }
        let r = duplicate_grad_spread(&g, &m).unwrap();
        assert_eq!(r.max_diff, 0.0);
        assert!(r.pairs > 0);
        g.get_mut("layers.1.bo").unwrap().data_mut()[0] = 0.25;
        assert_eq!(duplicate_grad_spread(&g, &m).unwrap().max_diff, 0.25);
    }
}
