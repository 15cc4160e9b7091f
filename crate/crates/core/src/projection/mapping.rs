use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Axis, ModelConfig};
use crate::projection::maps::{
    build_depth_adjacent, build_depth_stack, build_width_adjacent, build_width_stack, derive_f_in,
    derive_g, derive_t_in, derive_t_out, DepthMap, Matrix,
};

/// Parameter groups that each own one width coalescing matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Group {
    Residual,
    QueryKey,
    Value,
    FfnInner,
}

impl Group {
    pub const ALL: [Group; 4] = [
        Group::Residual,
        Group::QueryKey,
        Group::Value,
        Group::FfnInner,
    ];

    pub fn of_axis(axis: Axis) -> Option<Group> {
        match axis {
            Axis::Residual => Some(Group::Residual),
            Axis::QueryKey => Some(Group::QueryKey),
            Axis::Value => Some(Group::Value),
            Axis::FfnInner => Some(Group::FfnInner),
            Axis::Vocab | Axis::Position => None,
        }
    }

    fn index(self) -> usize {
        match self {
            Group::Residual => 0,
            Group::QueryKey => 1,
            Group::Value => 2,
            Group::FfnInner => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Residual => "emb",
            Group::QueryKey => "qk",
            Group::Value => "v",
            Group::FfnInner => "fc1",
        }
    }
}

/// Named width-map family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WidthFamily {
    Stack,
    Adjacent,
    Identity,
}

/// Named depth-map family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthFamily {
    Adjacent,
    Stack,
    Identity,
}

macro_rules! family_str {
    ($ty:ident { $($var:ident => $s:literal),* }) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($ty::$var),)*
                    other => Err(Error::Config(format!(
                        concat!("unknown ", stringify!($ty), " {:?}"), other
                    ))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($ty::$var => $s,)* })
            }
        }
    };
}

family_str!(WidthFamily { Stack => "stack", Adjacent => "adjacent", Identity => "identity" });
family_str!(DepthFamily { Adjacent => "adjacent", Stack => "stack", Identity => "identity" });

/// One width coalescing matrix per parameter group, `[d_large, d_small]`.
#[derive(Clone, Debug, PartialEq)]
pub struct WidthMaps {
    pub emb_out: Matrix,
    pub qk_out: Matrix,
    pub v_out: Matrix,
    pub fc1_out: Matrix,
}

impl WidthMaps {
    pub fn get(&self, g: Group) -> &Matrix {
        match g {
            Group::Residual => &self.emb_out,
            Group::QueryKey => &self.qk_out,
            Group::Value => &self.v_out,
            Group::FfnInner => &self.fc1_out,
        }
    }
}

/// The four matrices of one group: `F_out` plus the derived `F_in`,
/// `T_out` and `T_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupMaps {
    pub f_out: Matrix,
    pub f_in: Matrix,
    pub t_out: Matrix,
    pub t_in: Matrix,
    pub identity: bool,
}

impl GroupMaps {
    fn derive(f_out: &Matrix) -> Result<Self> {
        let f_in = derive_f_in(f_out)?;
        let t_out = derive_t_out(f_out)?;
        let t_in = derive_t_in(&f_in)?;
        Ok(GroupMaps {
            identity: is_identity(f_out),
            f_out: f_out.clone(),
            f_in,
            t_out,
            t_in,
        })
    }
}

fn is_identity(m: &Matrix) -> bool {
    match m.dims2() {
        Ok((r, c)) if r == c => {
            (0..r).all(|i| (0..c).all(|j| m.at2(i, j) == if i == j { 1.0 } else { 0.0 }))
        }
        _ => false,
    }
}

/// Everything needed to move parameters between two adjacent levels.
#[derive(Clone, Debug)]
pub struct LevelMapping {
    pub width: WidthMaps,
    pub depth: DepthMap,
    groups: [GroupMaps; 4],
    /// Depth de-coalescing matrix, `[layers_small, layers_large]`.
    pub g: Matrix,
    pub depth_identity: bool,
    pub config_large: ModelConfig,
    pub config_small: ModelConfig,
}

const RANK_TOL: f64 = 1e-10;

fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<()> {
    let got = m.dims2()?;
    if got != (rows, cols) {
        return Err(Error::Shape(format!(
            "{name}: expected [{rows}, {cols}], got {got:?}"
        )));
    }
    Ok(())
}

fn check_full_column_rank(name: &str, m: &Matrix) -> Result<()> {
    let (_, cols) = m.dims2()?;
    let rank = m.rank(RANK_TOL)?;
    if rank != cols {
        return Err(Error::Constraint(format!(
            "{name} must have full column rank ({cols}), has rank {rank}"
        )));
    }
    Ok(())
}

/// Checks `m == H (x) I_block` for some `H`.
fn check_head_granular(name: &str, m: &Matrix, block: usize) -> Result<()> {
    let (r, c) = m.dims2()?;
    if r % block != 0 || c % block != 0 {
        return Err(Error::Constraint(format!(
            "{name} is not made of {block}-wide head blocks"
        )));
    }
    for bi in 0..r / block {
        for bj in 0..c / block {
            let h = m.at2(bi * block, bj * block);
            for i in 0..block {
                for j in 0..block {
                    let want = if i == j { h } else { 0.0 };
                    if m.at2(bi * block + i, bj * block + j) != want {
                        return Err(Error::Constraint(format!(
                            "{name} must map whole attention heads (H (x) I_{block})"
                        )));
                    }
                }
            }
        }
    }
    Ok(())
}

impl LevelMapping {
    /// Validates explicit maps against the two configs and derives the
    /// de-coalescing matrices.
    pub fn new(
        config_large: ModelConfig,
        config_small: ModelConfig,
        width: WidthMaps,
        depth: DepthMap,
    ) -> Result<Self> {
        config_large.validate()?;
        config_small.validate()?;
        let same = |what: &str, a: usize, b: usize| {
            if a == b {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "{what} differs between levels: {a} vs {b}"
                )))
            }
        };
        same("vocab", config_large.vocab, config_small.vocab)?;
        same("max_seq", config_large.max_seq, config_small.max_seq)?;
        same("head_dim", config_large.head_dim, config_small.head_dim)?;
        same("ffn_mult", config_large.ffn_mult, config_small.ffn_mult)?;

        let (el, es) = (config_large.hidden, config_small.hidden);
        check_shape("F_emb_out", &width.emb_out, el, es)?;
        check_shape("F_qk_out", &width.qk_out, el, es)?;
        check_shape("F_v_out", &width.v_out, el, es)?;
        check_shape(
            "F_fc1_out",
            &width.fc1_out,
            config_large.ffn_hidden(),
            config_small.ffn_hidden(),
        )?;
        check_shape(
            "R",
            &depth.r,
            config_large.num_layers,
            config_small.num_layers,
        )?;

        for g in Group::ALL {
            check_full_column_rank(&format!("F_{}_out", g.name()), width.get(g))?;
        }
        check_full_column_rank("R", &depth.r)?;
        if depth.r.col_sums()?.contains(&0.0) {
            return Err(Error::Constraint(
                "every column of R needs a nonzero".into(),
            ));
        }

        let d = config_large.head_dim;
        check_head_granular("F_qk_out", &width.qk_out, d)?;
        check_head_granular("F_v_out", &width.v_out, d)?;
        // Q and K share one map, and the same map is applied to V's input.
        // V's input is the residual stream, so that map has to be the
        // residual map too.
        if width.qk_out != width.emb_out {
            return Err(Error::Constraint(
                "F_qk_out must equal F_emb_out: W_V's input map is derived from F_qk_out \
                 while W_V reads the residual stream"
                    .into(),
            ));
        }

        let groups = [
            GroupMaps::derive(&width.emb_out)?,
            GroupMaps::derive(&width.qk_out)?,
            GroupMaps::derive(&width.v_out)?,
            GroupMaps::derive(&width.fc1_out)?,
        ];
        let g = derive_g(&depth.r)?;
        Ok(LevelMapping {
            depth_identity: is_identity(&depth.r),
            width,
            depth,
            groups,
            g,
            config_large,
            config_small,
        })
    }

    /// Maps from a named family pair. Width halving merges attention heads
    /// pairwise (head dim is kept); the FFN inner width is halved unit-wise.
    pub fn from_families(
        config_large: &ModelConfig,
        width: WidthFamily,
        depth: DepthFamily,
    ) -> Result<Self> {
        config_large.validate()?;
        let halve_width = width != WidthFamily::Identity;
        let halve_depth = depth != DepthFamily::Identity;
        let mut small = if halve_width {
            config_large.coarsened(halve_depth)?
        } else {
            config_large.clone()
        };
        if !halve_width && halve_depth {
            if !config_large.num_layers.is_multiple_of(2) {
                return Err(Error::Config(format!(
                    "cannot halve {} layers",
                    config_large.num_layers
                )));
            }
            small.num_layers = config_large.num_layers / 2;
        }
        let (el, es) = (config_large.hidden, small.hidden);
        let (fl, fs) = (config_large.ffn_hidden(), small.ffn_hidden());
        let d = config_large.head_dim;
        let build = |dl: usize, ds: usize, block: usize| -> Result<Matrix> {
            match width {
                WidthFamily::Stack => build_width_stack(dl, ds, block),
                WidthFamily::Adjacent => build_width_adjacent(dl, ds, block),
                WidthFamily::Identity => Ok(Matrix::identity(dl)),
            }
        };
        let head_map = build(el, es, d)?;
        let width_maps = WidthMaps {
            emb_out: head_map.clone(),
            qk_out: head_map.clone(),
            v_out: head_map,
            fc1_out: build(fl, fs, 1)?,
        };
        let (ll, ls) = (config_large.num_layers, small.num_layers);
        let depth_map = match depth {
            DepthFamily::Adjacent => build_depth_adjacent(ll, ls)?,
            DepthFamily::Stack => build_depth_stack(ll, ls)?,
            DepthFamily::Identity => DepthMap {
                r: Matrix::identity(ll),
            },
        };
        LevelMapping::new(config_large.clone(), small, width_maps, depth_map)
    }

    /// Halving with the default stack-width / adjacent-depth pair.
    pub fn halving(config_large: &ModelConfig) -> Result<Self> {
        Self::from_families(config_large, WidthFamily::Stack, DepthFamily::Adjacent)
    }

    pub fn group(&self, g: Group) -> &GroupMaps {
        &self.groups[g.index()]
    }
}
