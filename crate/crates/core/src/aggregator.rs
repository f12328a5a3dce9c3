//! Mixed-granularity local feature aggregation.
//!
//! Each query reads a `J×J×J` window of latent codes from every pyramid
//! level. Attention heads are split into groups and group `j` attends only to
//! the window of level `j`, with sinusoidal encodings of the key offsets
//! added to its keys and values. The per-level interpolated codes form the
//! query and a residual path.

use ndtensor::ops::sample::cell_center;
use ndtensor::{Bindings, Scalar, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::encoder::{Fusion, LatentPyramid};
use crate::error::{MgirError, Result};
use crate::nn::{self, Initializer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregatorConfig {
    /// Head groups, one per pyramid level starting at the finest.
    pub groups: usize,
    pub heads: usize,
    /// Window edge `J`; each level contributes `J³` keys.
    pub window: usize,
    pub model_dim: usize,
    pub rpe_frequencies: usize,
    pub rpe: bool,
    /// How the per-level query projections are merged.
    pub query_fusion: Fusion,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            groups: 4,
            heads: 4,
            window: 2,
            model_dim: 64,
            rpe_frequencies: 20,
            rpe: true,
            query_fusion: Fusion::Addition,
        }
    }
}

impl AggregatorConfig {
    pub fn validate(&self, levels: usize) -> Vec<String> {
        let mut errs = Vec::new();
        if self.groups == 0 || self.heads == 0 || self.window == 0 || self.model_dim == 0 || self.rpe_frequencies == 0 {
            errs.push("aggregator groups, heads, window, model_dim and rpe_frequencies must all be at least 1".into());
            return errs;
        }
        if self.groups > levels {
            errs.push(format!("aggregator.groups {} exceeds the {levels} pyramid levels", self.groups));
        }
        if self.heads % self.groups != 0 {
            errs.push(format!("aggregator.heads {} is not divisible by groups {}", self.heads, self.groups));
        }
        if self.model_dim % self.heads != 0 {
            errs.push(format!("aggregator.model_dim {} is not divisible by heads {}", self.model_dim, self.heads));
        }
        errs
    }

    fn check(&self, levels: usize) -> Result<()> {
        let errs = self.validate(levels);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(MgirError::Config(errs))
        }
    }

    pub fn keys_per_level(&self) -> usize {
        self.window.pow(3)
    }

    pub fn group_width(&self) -> usize {
        self.model_dim / self.groups
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    /// Width of the sinusoidal offset features before projection.
    pub fn rpe_features(&self) -> usize {
        6 * self.rpe_frequencies
    }
}

/// Initial RPE frequencies `2·e^i`, `i = 1..=R`.
pub fn initial_omegas(r: usize) -> Tensor<f32> {
    Tensor::from_fn([r], |i| (2.0 * ((i[0] + 1) as f64).exp()) as f32)
}

/// Registers parameters under `agg.`; `level_channels` lists the channels of
/// the pyramid levels, finest first.
pub fn init(cfg: &AggregatorConfig, level_channels: &[usize], init: &mut Initializer) -> Result<()> {
    cfg.check(level_channels.len())?;
    let (a, gw) = (cfg.model_dim, cfg.group_width());
    let q_out = match cfg.query_fusion {
        Fusion::Addition => a,
        Fusion::Concatenation => gw,
    };
    for (j, &c) in level_channels.iter().take(cfg.groups).enumerate() {
        init.linear(&format!("agg.proj{j}"), c, a, true)?;
        init.linear(&format!("agg.q{j}"), a, q_out, false)?;
        init.linear(&format!("agg.k{j}"), a, gw, false)?;
        init.linear(&format!("agg.v{j}"), a, gw, false)?;
    }
    if cfg.rpe {
        init.tensor("agg.rpe.omega".into(), initial_omegas(cfg.rpe_frequencies))?;
        init.linear("agg.rpe", cfg.rpe_features(), a, true)?;
    }
    Ok(())
}

/// A pyramid level projected to the model width, held both as a grid for
/// interpolation and as rows for window gathers.
#[derive(Clone, Copy, Debug)]
pub struct ProjectedLevel {
    /// `[A, D, H, W]`
    pub grid: Var,
    /// `[D·H·W, A]`
    pub rows: Var,
    pub extents: [usize; 3],
}

/// Projects the levels used by the aggregator. Independent of the queries,
/// so it runs once per encoded measurement.
pub fn project_levels<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bindings,
    pyramid: &LatentPyramid,
    cfg: &AggregatorConfig,
) -> Result<Vec<ProjectedLevel>> {
    cfg.check(pyramid.levels.len())?;
    let mut out = Vec::with_capacity(cfg.groups);
    for (j, &level) in pyramid.levels.iter().take(cfg.groups).enumerate() {
        let &[c, d, h, w] = tape.shape(level) else {
            return Err(MgirError::Shape {
                what: "pyramid level",
                expected: vec![0; 4],
                got: tape.shape(level).to_vec(),
            });
        };
        let flat = tape.reshape(level, &[c, d * h * w])?;
        let cols = tape.permute(flat, &[1, 0])?;
        let rows = nn::linear(tape, b, &format!("agg.proj{j}"), cols, true)?;
        let t = tape.permute(rows, &[1, 0])?;
        let grid = tape.reshape(t, &[cfg.model_dim, d, h, w])?;
        out.push(ProjectedLevel {
            grid,
            rows,
            extents: [d, h, w],
        });
    }
    Ok(out)
}

/// Indices of the `j` cell centers nearest to continuous index `u` on an axis
/// of extent `n`, clamped to the axis.
fn window_axis(u: f64, n: usize, j: usize) -> impl Iterator<Item = usize> {
    let start = (u - (j as f64 - 1.0) / 2.0 + 0.5).floor();
    let start = start.min(n as f64 - j as f64).max(0.0) as usize;
    (0..j).map(move |k| (start + k).min(n - 1))
}

/// Flat row indices `[P·J³]` of each query's window on a level of `extents`,
/// and the key-minus-query offsets `[P, J³, 3]`.
pub fn window_indices<T: Scalar>(coords: &Tensor<T>, extents: [usize; 3], window: usize) -> Result<(Vec<usize>, Tensor<T>)> {
    let p = coords_len(coords)?;
    let k = window.pow(3);
    let [d, h, w] = extents;
    let mut idx = Vec::with_capacity(p * k);
    let mut offsets = Vec::with_capacity(p * k * 3);
    for q in coords.data().chunks_exact(3) {
        let axes: Vec<Vec<usize>> = (0..3)
            .map(|ax| {
                let n = extents[ax];
                let c = q[ax].as_f64().clamp(-1.0, 1.0);
                window_axis(((c + 1.0) * n as f64 - 1.0) / 2.0, n, window).collect()
            })
            .collect();
        for &i in &axes[0] {
            for &y in &axes[1] {
                for &x in &axes[2] {
                    idx.push((i * h + y) * w + x);
                    offsets.push(cell_center::<T>(i, d) - q[0]);
                    offsets.push(cell_center::<T>(y, h) - q[1]);
                    offsets.push(cell_center::<T>(x, w) - q[2]);
                }
            }
        }
    }
    Ok((idx, Tensor::new([p, k, 3], offsets)?))
}

fn coords_len<T: Scalar>(coords: &Tensor<T>) -> Result<usize> {
    match coords.shape() {
        &[p, 3] => Ok(p),
        s => Err(MgirError::Shape {
            what: "query coordinates",
            expected: vec![0, 3],
            got: s.to_vec(),
        }),
    }
}

/// Per-level inputs of one query batch.
#[derive(Clone, Debug)]
pub struct QueryBatch {
    /// `[P, 3]` in (spectral, y, x) order.
    pub coords: Var,
    /// Interpolated query codes `[P, A]` per level.
    pub query_codes: Vec<Var>,
    /// Window codes `[P, J³, A]` per level.
    pub windows: Vec<Var>,
    /// Key-minus-query offsets `[P, J³, 3]` per level.
    pub offsets: Vec<Var>,
}

impl QueryBatch {
    pub fn len<T: Scalar>(&self, tape: &Tape<T>) -> usize {
        tape.shape(self.coords)[0]
    }
}

/// Interpolated code of a projected level at each point.
pub fn query_code<T: Scalar>(tape: &mut Tape<T>, level: &ProjectedLevel, points: Var) -> Result<Var> {
    Ok(tape.trilinear_sample(level.grid, points)?)
}

/// Gathers windows, offsets and query codes on every projected level.
pub fn gather_windows<T: Scalar>(
    tape: &mut Tape<T>,
    levels: &[ProjectedLevel],
    coords: &Tensor<T>,
    cfg: &AggregatorConfig,
) -> Result<QueryBatch> {
    if levels.len() != cfg.groups {
        return Err(MgirError::config(format!(
            "{} projected levels for {} aggregator groups",
            levels.len(),
            cfg.groups
        )));
    }
    let p = coords_len(coords)?;
    let k = cfg.keys_per_level();
    let points = tape.leaf(coords.clone());
    let mut batch = QueryBatch {
        coords: points,
        query_codes: Vec::new(),
        windows: Vec::new(),
        offsets: Vec::new(),
    };
    for level in levels {
        let (idx, offsets) = window_indices(coords, level.extents, cfg.window)?;
        let rows = tape.index_select(level.rows, &idx)?;
        batch.windows.push(tape.reshape(rows, &[p, k, cfg.model_dim])?);
        batch.offsets.push(tape.leaf(offsets));
        batch.query_codes.push(query_code(tape, level, points)?);
    }
    Ok(batch)
}

/// Sinusoidal offset features `[P, K, 6R]`, before projection.
pub fn rpe_features<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, offsets: Var) -> Result<Var> {
    let omegas = b.get("agg.rpe.omega")?;
    Ok(tape.fourier_features(offsets, omegas)?)
}

/// Relative position embedding `[P, K, A/G]` of group `group`, equal to
/// `rpe_features(offsets) · W[:, group] + b[group]`. All groups share one
/// projection and each reads its own slice of output channels.
///
/// A key's features are its per-axis features laid end to end, so the
/// product splits into one small product per axis over the distinct offsets
/// a query has along that axis (`J` of them for a regular window). The three
/// results are gathered back onto the keys and summed. Offsets are data; no
/// gradient flows into them.
pub fn rpe<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, offsets: Var, group: usize, cfg: &AggregatorConfig) -> Result<Var> {
    let gw = cfg.group_width();
    let two_r = 2 * cfg.rpe_frequencies;
    let (p, k) = match tape.shape(offsets) {
        &[p, k, 3] => (p, k),
        other => {
            return Err(MgirError::Shape {
                what: "window offsets",
                expected: vec![other.first().copied().unwrap_or(0), cfg.keys_per_level(), 3],
                got: other.to_vec(),
            })
        }
    };
    let off = tape.value(offsets).data().to_vec();
    let omegas = b.get("agg.rpe.omega")?;
    let w = tape.narrow(b.get("agg.rpe.w")?, 1, group * gw, gw)?;
    let mut sum: Option<Var> = None;
    for ax in 0..3 {
        let (distinct, slot) = distinct_offsets(&off, p, k, ax);
        let u = distinct.len() / p.max(1);
        let axis_off = tape.leaf(Tensor::new([p, u, 1], distinct)?);
        let feats = tape.fourier_features(axis_off, omegas)?;
        let w_ax = tape.narrow(w, 0, ax * two_r, two_r)?;
        let proj = tape.matmul(feats, w_ax)?;
        let proj = tape.reshape(proj, &[p * u, gw])?;
        let rows: Vec<usize> = slot.iter().enumerate().map(|(r, &s)| r / k * u + s).collect();
        let per_key = tape.index_select(proj, &rows)?;
        sum = Some(match sum {
            Some(acc) => tape.add(acc, per_key)?,
            None => per_key,
        });
    }
    let y = tape.reshape(sum.expect("three axes"), &[p, k, gw])?;
    let bias = tape.narrow(b.get("agg.rpe.b")?, 0, group * gw, gw)?;
    Ok(tape.add_bias(y, bias)?)
}

/// Distinct values of component `ax` per query, padded with zeros to a
/// common count `U` (`[P·U]`), and each key's slot among them (`[P·K]`).
fn distinct_offsets<T: Scalar>(off: &[T], p: usize, k: usize, ax: usize) -> (Vec<T>, Vec<usize>) {
    let mut per_query: Vec<Vec<T>> = Vec::with_capacity(p);
    let mut slot = Vec::with_capacity(p * k);
    for q in 0..p {
        let mut seen: Vec<T> = Vec::new();
        for key in 0..k {
            let v = off[(q * k + key) * 3 + ax];
            let s = match seen.iter().position(|&x| x == v) {
                Some(s) => s,
                None => {
                    seen.push(v);
                    seen.len() - 1
                }
            };
            slot.push(s);
        }
        per_query.push(seen);
    }
    let u = per_query.iter().map(Vec::len).max().unwrap_or(0);
    let mut distinct = Vec::with_capacity(p * u);
    for seen in per_query {
        let n = seen.len();
        distinct.extend(seen);
        distinct.extend(std::iter::repeat(T::zero()).take(u - n));
    }
    (distinct, slot)
}

/// Aggregated codes `[P, A]` and each group's attention weights
/// `[P, heads/G, 1, J³]`.
pub fn aggregate_traced<T: Scalar>(
    tape: &mut Tape<T>,
    b: &Bindings,
    batch: &QueryBatch,
    cfg: &AggregatorConfig,
) -> Result<(Var, Vec<Var>)> {
    if batch.windows.len() != cfg.groups {
        return Err(MgirError::config(format!(
            "query batch has {} levels for {} groups",
            batch.windows.len(),
            cfg.groups
        )));
    }
    let p = batch.len(tape);
    let (k, gw, dh) = (cfg.keys_per_level(), cfg.group_width(), cfg.head_dim());
    let hg = cfg.heads / cfg.groups;

    let mut qs = Vec::with_capacity(cfg.groups);
    for (j, &z) in batch.query_codes.iter().enumerate() {
        qs.push(nn::linear(tape, b, &format!("agg.q{j}"), z, false)?);
    }
    let q = match cfg.query_fusion {
        Fusion::Addition => {
            let mut acc = qs[0];
            for &qj in &qs[1..] {
                acc = tape.add(acc, qj)?;
            }
            acc
        }
        Fusion::Concatenation => tape.concat(&qs, 1)?,
    };

    let scale = T::one() / T::of(dh as f64).sqrt();
    let mut outs = Vec::with_capacity(cfg.groups);
    let mut weights = Vec::with_capacity(cfg.groups);
    for j in 0..cfg.groups {
        let z = batch.windows[j];
        let mut kj = nn::linear(tape, b, &format!("agg.k{j}"), z, false)?;
        let mut vj = nn::linear(tape, b, &format!("agg.v{j}"), z, false)?;
        if cfg.rpe {
            let pos = rpe(tape, b, batch.offsets[j], j, cfg)?;
            kj = tape.add(kj, pos)?;
            vj = tape.add(vj, pos)?;
        }
        let qj = tape.narrow(q, 1, j * gw, gw)?;
        let qj = tape.reshape(qj, &[p, hg, 1, dh])?;
        let kj = tape.reshape(kj, &[p, k, hg, dh])?;
        let kj = tape.permute(kj, &[0, 2, 3, 1])?;
        let vj = tape.reshape(vj, &[p, k, hg, dh])?;
        let vj = tape.permute(vj, &[0, 2, 1, 3])?;
        let logits = tape.matmul(qj, kj)?;
        let logits = tape.scale(logits, scale)?;
        let att = tape.softmax(logits, 3)?;
        let o = tape.matmul(att, vj)?;
        outs.push(tape.reshape(o, &[p, gw])?);
        weights.push(att);
    }
    let merged = tape.concat(&outs, 1)?;
    Ok((tape.add(merged, q)?, weights))
}

/// Mixed-granularity code `[P, A]` for every query in `batch`.
pub fn aggregate<T: Scalar>(tape: &mut Tape<T>, b: &Bindings, batch: &QueryBatch, cfg: &AggregatorConfig) -> Result<Var> {
    Ok(aggregate_traced(tape, b, batch, cfg)?.0)
}
