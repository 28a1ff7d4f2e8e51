#![allow(dead_code)]

use std::sync::Arc;

use whls::grid::{lp_norm, LineFunction, LineGrid, RadialGrid};
use whls::kernel::{build_extension, build_with_shape, DiscreteOperator, KernelSpec, LineOperator};
use whls::params::HlsParams;
use whls::rearrange::{rearranged_line_grid, symm_decr_rearrange};

pub fn set_a() -> HlsParams {
    HlsParams::new(2, 1, 0.7, 0.05, 4.0 / 3.0, 4.0 / 3.0)
}

pub fn classical() -> HlsParams {
    HlsParams::new(1, 0, 0.5, 0.0, 4.0 / 3.0, 4.0 / 3.0)
}

/// Log grids on `[1e-3, r_max]` with `m` cells plus the zero cell, same
/// resolution on both axes.
pub fn log_operator(params: HlsParams, m: usize, r_max: f64) -> DiscreteOperator {
    let spec = KernelSpec::new(params).unwrap();
    let g = Arc::new(RadialGrid::log(params.base_dim(), 1e-3, r_max, m, true).unwrap());
    let perp = if params.k == 0 {
        Arc::new(RadialGrid::point())
    } else {
        Arc::new(RadialGrid::log(params.k, 1e-3, r_max, m, true).unwrap())
    };
    build_extension(&spec, g.clone(), g, perp).unwrap()
}

/// `‖E f‖_q` for line inputs and `‖E f⋆‖_q` for their rearrangements.
pub struct RieszBench {
    pub input: LineGrid,
    line_op: LineOperator,
    radial_op: DiscreteOperator,
    q: f64,
}

impl RieszBench {
    /// Input cells of width 0.25 on `[-2, 2]`; output line cells of width
    /// 0.25 centered at 0 and radial output shells of width 0.125, on which
    /// the `y'`-rearrangement of any output-cell-constant function is constant.
    pub fn new(params: HlsParams) -> Self {
        let spec = KernelSpec::new(params).unwrap();
        let w = 0.25;
        let input = LineGrid::symmetric(2.0, 16).unwrap();
        let output = LineGrid::symmetric(41.0 * w / 2.0, 41).unwrap();
        let perp = Arc::new(RadialGrid::log(params.k, 1e-2, 10.0, 16, true).unwrap());
        let line_op = LineOperator::build(spec.shape(), input, output, perp.clone()).unwrap();
        let radial_out = Arc::new(RadialGrid::uniform(1, 41.0 * w / 2.0, 41).unwrap());
        let star_in = Arc::new(rearranged_line_grid(&input).unwrap());
        let radial_op = build_with_shape(spec.shape(), star_in, radial_out, perp).unwrap();
        Self {
            input,
            line_op,
            radial_op,
            q: spec.derived.q,
        }
    }

    /// `(‖E f‖_q, ‖E f⋆‖_q)`.
    pub fn norms(&self, f: &LineFunction) -> (f64, f64) {
        let star = symm_decr_rearrange(f).unwrap();
        (
            lp_norm(&self.line_op.extend(f).unwrap(), self.q),
            lp_norm(&self.radial_op.extend(&star).unwrap(), self.q),
        )
    }
}
