//! Whole-model coalescing, de-coalescing and interpolation.
//!
//! Every tensor dimension is tagged with an [`Axis`]; the first dimension of a
//! matrix is its input side and picks the group's input-side matrix, the last
//! dimension picks the output-side matrix, and a vector is treated as a row on
//! the output side. Vocab and position axes are never mapped. Projection
//! arithmetic always runs in `f64` and is cast back to the parameter type.

use crate::error::{Error, Result};
use crate::model::params::{layer_name, LAYER_TENSORS};
use crate::model::{param_specs, Axis, ParamSet};
use crate::projection::mapping::{Group, LevelMapping};
use crate::projection::maps::Matrix;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy)]
enum Direction {
    Coalesce,
    Decoalesce,
}

impl LevelMapping {
    /// Matrix applied on the left of a tensor whose input axis is `axis`.
    fn input_matrix(&self, axis: Axis, dir: Direction) -> Option<&Matrix> {
        let g = self.group(Group::of_axis(axis)?);
        if g.identity {
            return None;
        }
        Some(match dir {
            Direction::Coalesce => &g.f_in,
            Direction::Decoalesce => &g.t_in,
        })
    }

    /// Matrix applied on the right of a tensor whose output axis is `axis`.
    fn output_matrix(&self, axis: Axis, dir: Direction) -> Option<&Matrix> {
        let g = self.group(Group::of_axis(axis)?);
        if g.identity {
            return None;
        }
        Some(match dir {
            Direction::Coalesce => &g.f_out,
            Direction::Decoalesce => &g.t_out,
        })
    }
}

fn map_width(
    t: &Tensor<f64>,
    axes: &[Axis],
    mapping: &LevelMapping,
    dir: Direction,
) -> Result<Tensor<f64>> {
    match axes {
        [a] => match mapping.output_matrix(*a, dir) {
            Some(m) => t.vecmat(m),
            None => Ok(t.clone()),
        },
        [a_in, a_out] => {
            let left = match mapping.input_matrix(*a_in, dir) {
                Some(m) => m.matmul(t)?,
                None => t.clone(),
            };
            match mapping.output_matrix(*a_out, dir) {
                Some(m) => left.matmul(m),
                None => Ok(left),
            }
        }
        _ => Err(Error::Shape(format!(
            "unsupported tensor rank {}",
            axes.len()
        ))),
    }
}

/// `out_j = sum_i w_i * coef[i, j]`, skipping zero coefficients.
fn mix_layers(inputs: &[Tensor<f64>], coef: &Matrix) -> Result<Vec<Tensor<f64>>> {
    let (rows, cols) = coef.dims2()?;
    if rows != inputs.len() {
        return Err(Error::Shape(format!(
            "depth matrix has {rows} rows for {} layers",
            inputs.len()
        )));
    }
    (0..cols)
        .map(|j| {
            let mut acc: Option<Tensor<f64>> = None;
            for (i, w) in inputs.iter().enumerate() {
                let c = coef.at2(i, j);
                if c == 0.0 {
                    continue;
                }
                let term = if c == 1.0 { w.clone() } else { w.scale(c) };
                acc = Some(match acc {
                    None => term,
                    Some(a) => a.add(&term)?,
                });
            }
            acc.ok_or_else(|| Error::Constraint(format!("depth column {j} is all zero")))
        })
        .collect()
}

fn project<T: Element>(
    params: &ParamSet<T>,
    mapping: &LevelMapping,
    dir: Direction,
) -> Result<ParamSet<T>> {
    let (from, to, depth) = match dir {
        Direction::Coalesce => (
            &mapping.config_large,
            &mapping.config_small,
            &mapping.depth.r,
        ),
        Direction::Decoalesce => (&mapping.config_small, &mapping.config_large, &mapping.g),
    };
    params.check_config(from)?;
    let mut out = ParamSet::new();

    for spec in param_specs(from).into_iter().filter(|s| s.layer.is_none()) {
        let t = params.get(&spec.name)?;
        let mapped = map_width(&t.cast(), &spec.axes, mapping, dir)?;
        out.insert(spec.name, mapped.cast());
    }

    for &(local, axes, _) in LAYER_TENSORS {
        let per_layer = params.layer_tensors(from, local)?;
        if mapping.depth_identity {
            for (l, t) in per_layer.iter().enumerate() {
                let mapped = map_width(&t.cast(), axes, mapping, dir)?;
                out.insert(layer_name(l, local), mapped.cast());
            }
            continue;
        }
        let widened = per_layer
            .iter()
            .map(|t| map_width(&t.cast(), axes, mapping, dir))
            .collect::<Result<Vec<_>>>()?;
        for (l, t) in mix_layers(&widened, depth)?.into_iter().enumerate() {
            out.insert(layer_name(l, local), t.cast());
        }
    }
    out.check_config(to)?;
    Ok(out)
}

/// Projects a large model onto the smaller level of `mapping`: width maps
/// per tensor first, then layers are merged through `R`.
pub fn coalesce_model<T: Element>(
    params: &ParamSet<T>,
    mapping: &LevelMapping,
) -> Result<ParamSet<T>> {
    project(params, mapping, Direction::Coalesce)
}

/// Expands a small model back to the larger level of `mapping` using the
/// de-coalescing matrices `T_in`, `T_out` and `G`.
pub fn decoalesce_model<T: Element>(
    params: &ParamSet<T>,
    mapping: &LevelMapping,
) -> Result<ParamSet<T>> {
    project(params, mapping, Direction::Decoalesce)
}

/// `(1 - alpha) * a + alpha * b` for every tensor. `alpha` of exactly 0 or 1
/// returns a bitwise copy of the corresponding input.
pub fn interpolate<T: Element>(
    a: &ParamSet<T>,
    b: &ParamSet<T>,
    alpha: f64,
) -> Result<ParamSet<T>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    a.check_compatible(b)?;
    if alpha == 0.0 {
        return Ok(a.clone());
    }
    if alpha == 1.0 {
        return Ok(b.clone());
    }
    let (wa, wb) = (T::from_f64(1.0 - alpha), T::from_f64(alpha));
    let mut out = ParamSet::new();
    for (name, ta) in a.iter() {
        let tb = b.get(name)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| wa * x + wb * y)
            .collect();
        out.insert(name.clone(), Tensor::new(ta.shape().to_vec(), data)?);
    }
    Ok(out)
}
