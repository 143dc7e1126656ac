//! Token-grid views, attention variants and their closed-form cost.
//!
//! A token grid has axes `(B, D, nN, nH, nW)`. Each view keeps `D` as the
//! feature axis and folds the axes it does not attend over into the batch:
//!
//! | view                | batch      | tokens     | positions |
//! |---------------------|------------|------------|-----------|
//! | spatial             | `B·nN`     | `nH·nW`    | `(h, w)`  |
//! | temporal            | `B·nH·nW`  | `nN`       | `t`       |
//! | vertical-temporal   | `B·nW`     | `nH·nN`    | `(h, t)`  |
//! | horizontal-temporal | `B·nH`     | `nW·nN`    | `(w, t)`  |

use std::collections::HashMap;

use serde::Serialize;

use crate::autograd::{Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::nn::attention::{transformer_block, AttentionBlockWeights, BlockDims};
use crate::nn::rope::{RopeParams, RopeTable, TokenPositions};
use crate::tensor::Real;

/// Extents of a `(B, D, nN, nH, nW)` token grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct GridShape {
    pub batch: usize,
    pub embed: usize,
    pub frames: usize,
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn new(batch: usize, embed: usize, frames: usize, rows: usize, cols: usize) -> Self {
        Self {
            batch,
            embed,
            frames,
            rows,
            cols,
        }
    }

    pub fn of(shape: &[usize]) -> Result<Self> {
        match *shape {
            [b, d, n, h, w] => Ok(Self::new(b, d, n, h, w)),
            _ => Err(shape_err!("token grid must have 5 axes, got {shape:?}")),
        }
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.batch, self.embed, self.frames, self.rows, self.cols]
    }

    /// Number of tokens, `B·nN·nH·nW`.
    pub fn tokens(&self) -> usize {
        self.batch * self.frames * self.rows * self.cols
    }

    pub fn numel(&self) -> usize {
        self.tokens() * self.embed
    }

    /// `(Batch', L)` of the sequences a view attends over.
    pub fn view_extent(&self, view: View) -> (usize, usize) {
        let (b, n, h, w) = (self.batch, self.frames, self.rows, self.cols);
        match view {
            View::Spatial => (b * n, h * w),
            View::Temporal => (b * h * w, n),
            View::VerticalTemporal => (b * w, h * n),
            View::HorizontalTemporal => (b * h, w * n),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Spatial,
    Temporal,
    VerticalTemporal,
    HorizontalTemporal,
}

impl View {
    /// Grid-axis order moved in front of `D` before flattening.
    fn order(self) -> [usize; 5] {
        match self {
            View::Spatial => [0, 2, 3, 4, 1],
            View::Temporal | View::HorizontalTemporal => [0, 3, 4, 2, 1],
            View::VerticalTemporal => [0, 4, 3, 2, 1],
        }
    }

    pub fn positions(self, shape: &GridShape) -> TokenPositions {
        match self {
            View::Spatial => TokenPositions::grid(shape.rows, shape.cols),
            View::Temporal => TokenPositions::linear(shape.frames),
            View::VerticalTemporal => TokenPositions::grid(shape.rows, shape.frames),
            View::HorizontalTemporal => TokenPositions::grid(shape.cols, shape.frames),
        }
    }
}

/// Rearrange `grid` into `[Batch', L, D]` sequences for `view`.
pub fn to_view<T: Real>(tape: &Tape<T>, grid: &Var<T>, view: View) -> Result<(Var<T>, TokenPositions)> {
    let shape = GridShape::of(grid.shape())?;
    let (batch, len) = shape.view_extent(view);
    let v = tape.permute(grid, &view.order())?;
    let v = tape.reshape(&v, &[batch, len, shape.embed])?;
    Ok((v, view.positions(&shape)))
}

/// Inverse of [`to_view`].
pub fn from_view<T: Real>(tape: &Tape<T>, tokens: &Var<T>, view: View, shape: &GridShape) -> Result<Var<T>> {
    let order = view.order();
    let dims = shape.dims();
    let permuted: Vec<usize> = order.iter().map(|&a| dims[a]).collect();
    let v = tape.reshape(tokens, &permuted)?;
    let mut inverse = [0; 5];
    for (i, &a) in order.iter().enumerate() {
        inverse[a] = i;
    }
    tape.permute(&v, &inverse)
}

/// Swap the `nH` and `nW` axes of a grid.
pub fn transpose_hw<T: Real>(tape: &Tape<T>, grid: &Var<T>) -> Result<Var<T>> {
    tape.permute(grid, &[0, 1, 2, 4, 3])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionVariant {
    Spatial,
    Temporal,
    SpatialTemporal,
    VerticalTemporal,
    HorizontalTemporal,
    /// All vertical-temporal blocks, then all horizontal-temporal blocks.
    DualAxialSerialVtHt,
    /// All horizontal-temporal blocks, then all vertical-temporal blocks.
    DualAxialSerialHtVt,
    /// Vertical-temporal and horizontal-temporal blocks alternate.
    DualAxialInterleaved,
}

impl AttentionVariant {
    pub const ALL: [AttentionVariant; 8] = [
        AttentionVariant::Spatial,
        AttentionVariant::Temporal,
        AttentionVariant::SpatialTemporal,
        AttentionVariant::VerticalTemporal,
        AttentionVariant::HorizontalTemporal,
        AttentionVariant::DualAxialSerialVtHt,
        AttentionVariant::DualAxialSerialHtVt,
        AttentionVariant::DualAxialInterleaved,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttentionVariant::Spatial => "spatial",
            AttentionVariant::Temporal => "temporal",
            AttentionVariant::SpatialTemporal => "spatial_temporal",
            AttentionVariant::VerticalTemporal => "vertical_temporal",
            AttentionVariant::HorizontalTemporal => "horizontal_temporal",
            AttentionVariant::DualAxialSerialVtHt => "dual_axial_serial_vt_ht",
            AttentionVariant::DualAxialSerialHtVt => "dual_axial_serial_ht_vt",
            AttentionVariant::DualAxialInterleaved => "dual_axial_interleaved",
        }
    }

    pub fn is_two_mechanism(self) -> bool {
        matches!(
            self,
            AttentionVariant::SpatialTemporal
                | AttentionVariant::DualAxialSerialVtHt
                | AttentionVariant::DualAxialSerialHtVt
                | AttentionVariant::DualAxialInterleaved
        )
    }

    /// View of each of `units` blocks in execution order. Two-mechanism
    /// variants split `units` evenly and need an even count.
    pub fn schedule(self, units: usize) -> Result<Vec<View>> {
        if units == 0 {
            return Err(config_err!("{} needs at least one attention unit", self.name()));
        }
        if self.is_two_mechanism() && units % 2 != 0 {
            return Err(config_err!("{} splits units evenly; {units} is odd", self.name()));
        }
        let half = units / 2;
        let alternate = |a: View, b: View| (0..units).map(|i| if i % 2 == 0 { a } else { b }).collect();
        let serial = |a: View, b: View| {
            let mut v = vec![a; half];
            v.extend(vec![b; half]);
            v
        };
        use View::*;
        Ok(match self {
            AttentionVariant::Spatial => vec![Spatial; units],
            AttentionVariant::Temporal => vec![Temporal; units],
            AttentionVariant::VerticalTemporal => vec![VerticalTemporal; units],
            AttentionVariant::HorizontalTemporal => vec![HorizontalTemporal; units],
            AttentionVariant::SpatialTemporal => alternate(Spatial, Temporal),
            AttentionVariant::DualAxialInterleaved => alternate(VerticalTemporal, HorizontalTemporal),
            AttentionVariant::DualAxialSerialVtHt => serial(VerticalTemporal, HorizontalTemporal),
            AttentionVariant::DualAxialSerialHtVt => serial(HorizontalTemporal, VerticalTemporal),
        })
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = crate::error::Error;

    fn from_str(s: &str) -> Result<Self> {
        AttentionVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err!("unknown attention variant {s:?}"))
    }
}

/// Run `blocks` over `grid` in the order `variant` prescribes. Consecutive
/// blocks sharing a view stay in that view's layout.
pub fn apply_variant<T: Real>(
    tape: &Tape<T>,
    grid: &Var<T>,
    variant: AttentionVariant,
    blocks: &[AttentionBlockWeights<'_, T>],
    rope_base: f64,
    eps: f64,
) -> Result<Var<T>> {
    let shape = GridShape::of(grid.shape())?;
    let schedule = variant.schedule(blocks.len())?;
    let mut tables: HashMap<View, RopeTable<T>> = HashMap::new();
    let mut current = grid.clone();
    let mut i = 0;
    while i < schedule.len() {
        let view = schedule[i];
        let (mut tokens, positions) = to_view(tape, &current, view)?;
        while i < schedule.len() && schedule[i] == view {
            let block = &blocks[i];
            if block.dims.embed != shape.embed {
                return Err(config_err!("block width {} on a grid of width {}", block.dims.embed, shape.embed));
            }
            if !tables.contains_key(&view) {
                let params = RopeParams::new(block.dims.head_dim(), rope_base)?;
                tables.insert(view, RopeTable::new(&positions, &params)?);
            }
            tokens = transformer_block(tape, &tokens, block, &tables[&view], eps)?;
            i += 1;
        }
        current = from_view(tape, &tokens, view, &shape)?;
    }
    Ok(current)
}

/// MAC components of a block stack. All counts are exact.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub params: u64,
    pub projections: u64,
    pub scores: u64,
    pub values: u64,
    pub mlp: u64,
}

impl CostReport {
    pub fn total_macs(&self) -> u64 {
        self.projections + self.scores + self.values + self.mlp
    }

    pub fn add(&self, other: &CostReport) -> CostReport {
        CostReport {
            params: self.params + other.params,
            projections: self.projections + other.projections,
            scores: self.scores + other.scores,
            values: self.values + other.values,
            mlp: self.mlp + other.mlp,
        }
    }
}

/// `Batch'·L²·D` for one view.
pub fn score_cost(view: View, shape: &GridShape) -> u64 {
    let (batch, len) = shape.view_extent(view);
    (batch * len * len * shape.embed) as u64
}

/// Full attention over all `nN·nH·nW` tokens at once.
pub fn omnidirectional_score_cost(shape: &GridShape) -> u64 {
    let l = (shape.frames * shape.rows * shape.cols) as u64;
    shape.batch as u64 * l * l * shape.embed as u64
}

/// Cost of one block of `dims` run in `view` on a grid of `shape`.
pub fn block_cost(view: View, shape: &GridShape, dims: &BlockDims) -> CostReport {
    let t = shape.tokens() as u64;
    let (d, m) = (dims.embed as u64, dims.mlp as u64);
    let s = score_cost(view, shape);
    CostReport {
        params: dims.param_count() as u64,
        projections: 4 * t * d * d,
        scores: s,
        values: s,
        mlp: 2 * t * d * m,
    }
}

/// Cost of the whole `variant` stack of `units` blocks.
pub fn attention_cost(variant: AttentionVariant, shape: &GridShape, dims: &BlockDims, units: usize) -> Result<CostReport> {
    Ok(variant
        .schedule(units)?
        .into_iter()
        .fold(CostReport::default(), |acc, v| acc.add(&block_cost(v, shape, dims))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::tensor::{Init, Tensor};

    fn random_grid(dims: &[usize], seed: u64) -> Tensor<f64> {
        Tensor::create(dims, Init::Normal { mean: 0.0, std: 1.0 }, &mut Rng::new(seed)).unwrap()
    }

    #[test]
    fn view_extents() {
        let tape = Tape::<f64>::inference();
        let g = tape.constant(random_grid(&[1, 8, 4, 6, 5], 1));
        let (vt, pos) = to_view(&tape, &g, View::VerticalTemporal).unwrap();
        assert_eq!(vt.shape(), &[5, 24, 8]);
        assert_eq!(pos.len(), 24);
        assert_eq!(vt.value().numel(), 960);
        let (t, _) = to_view(&tape, &g, View::Temporal).unwrap();
        assert_eq!(t.shape(), &[30, 4, 8]);
    }

    #[test]
    fn round_trips_are_exact() {
        let tape = Tape::<f64>::inference();
        let g = random_grid(&[2, 3, 4, 5, 6], 2);
        let gv = tape.constant(g.clone());
        let shape = GridShape::of(g.shape()).unwrap();
        for view in [View::Spatial, View::Temporal, View::VerticalTemporal, View::HorizontalTemporal] {
            let (v, _) = to_view(&tape, &gv, view).unwrap();
            let back = from_view(&tape, &v, view, &shape).unwrap();
            assert_eq!(back.value(), &g, "{view:?}");
        }
    }

    #[test]
    fn vertical_temporal_token_layout() {
        // Token h·nN + t of sequence (b, w) holds grid[b, :, t, h, w].
        let g = random_grid(&[2, 3, 4, 5, 6], 3);
        let tape = Tape::<f64>::inference();
        let (v, pos) = to_view(&tape, &tape.constant(g.clone()), View::VerticalTemporal).unwrap();
        let s = crate::tensor::strides(g.shape());
        for (b, w, h, t, d) in [(1, 5, 2, 3, 1), (0, 0, 4, 0, 2)] {
            let seq = b * 6 + w;
            let tok = h * 4 + t;
            let got = v.value().data()[(seq * 20 + tok) * 3 + d];
            let want = g.data()[b * s[0] + d * s[1] + t * s[2] + h * s[3] + w * s[4]];
            assert_eq!(got, want);
            assert_eq!((pos.coord(tok, 0), pos.coord(tok, 1)), (h, t));
        }
    }

    #[test]
    fn single_frame_vertical_view_is_columnwise() {
        let tape = Tape::<f64>::inference();
        let g = tape.constant(random_grid(&[1, 2, 1, 3, 4], 4));
        let (v, _) = to_view(&tape, &g, View::VerticalTemporal).unwrap();
        assert_eq!(v.shape(), &[4, 3, 2]);
    }

    #[test]
    fn schedules() {
        use View::*;
        assert_eq!(
            AttentionVariant::DualAxialSerialVtHt.schedule(4).unwrap(),
            vec![VerticalTemporal, VerticalTemporal, HorizontalTemporal, HorizontalTemporal]
        );
        assert_eq!(
            AttentionVariant::DualAxialInterleaved.schedule(4).unwrap(),
            vec![VerticalTemporal, HorizontalTemporal, VerticalTemporal, HorizontalTemporal]
        );
        assert_eq!(AttentionVariant::SpatialTemporal.schedule(2).unwrap(), vec![Spatial, Temporal]);
        assert!(AttentionVariant::DualAxialSerialHtVt.schedule(3).is_err());
        assert!(AttentionVariant::Spatial.schedule(0).is_err());
        for v in AttentionVariant::ALL {
            assert_eq!(v.schedule(24).unwrap().len(), 24);
            assert_eq!(v.name().parse::<AttentionVariant>().unwrap(), v);
        }
    }

    #[test]
    fn table_resolution_score_ordering() {
        let s = GridShape::new(1, 1280, 16, 90, 160);
        let spatial = score_cost(View::Spatial, &s) * 24;
        let st = (score_cost(View::Spatial, &s) + score_cost(View::Temporal, &s)) * 12;
        let dual = (score_cost(View::VerticalTemporal, &s) + score_cost(View::HorizontalTemporal, &s)) * 12;
        assert!(dual < st && st < spatial, "{dual} {st} {spatial}");
    }

    #[test]
    fn square_grids_have_symmetric_axial_cost() {
        let s = GridShape::new(2, 16, 5, 9, 9);
        assert_eq!(score_cost(View::VerticalTemporal, &s), score_cost(View::HorizontalTemporal, &s));
    }

    #[test]
    fn omnidirectional_ratio_grows_with_area() {
        let mut last = 0.0;
        for side in [4, 8, 16, 32, 64] {
            let s = GridShape::new(1, 8, 8, side, side);
            let dual = score_cost(View::VerticalTemporal, &s) + score_cost(View::HorizontalTemporal, &s);
            let ratio = omnidirectional_score_cost(&s) as f64 / dual as f64;
            assert!(ratio > last);
            last = ratio;
        }
    }

    #[test]
    fn report_totals() {
        let dims = BlockDims::new(8, 2, 16).unwrap();
        let s = GridShape::new(1, 8, 2, 3, 4);
        let c = attention_cost(AttentionVariant::DualAxialInterleaved, &s, &dims, 2).unwrap();
        assert_eq!(c.total_macs(), c.projections + c.scores + c.values + c.mlp);
        assert_eq!(c.params, 2 * dims.param_count() as u64);
        assert_eq!(c.projections, 2 * 4 * 24 * 64);
        assert_eq!(c.scores, 4 * 36 * 8 + 3 * 64 * 8);
    }
}
