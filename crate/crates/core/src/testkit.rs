//! Shared fixtures and brute-force oracles for unit tests.

use alloc::vec;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};

use crate::game_model::{
    build_cournot, AgentSpec, AggregativeGame, CapacityRange, CournotParams, GameInstance,
    LocalSetDesc, Range, SetShape,
};

/// Small Cournot game with two markets and a binding demand constraint.
pub fn toy(n_firms: usize, seed: u64) -> GameInstance {
    let p = CournotParams {
        n_firms,
        n_markets: 2,
        ..CournotParams::benchmark()
    };
    let p = CournotParams {
        d: Range::new(20.0, 30.0),
        r: CapacityRange::DemandMultiple { lo: 1.0, hi: 1.2 },
        ..p
    };
    build_cournot(&p, seed).unwrap()
}

/// One agent, one scalar decision in `[0, 10]`, cost `x² − 4x`, coupling `x ≤ 5`
/// (or `x ≤ offset`).
pub fn scalar_game(slater: f64) -> GameInstance {
    scalar_game_at(slater, 5.0)
}

pub fn scalar_game_with_offset(offset: f64) -> GameInstance {
    scalar_game_at(0.0, offset)
}

fn scalar_game_at(slater: f64, offset: f64) -> GameInstance {
    let set = LocalSetDesc::new(SetShape::Box {
        lower: vec![0.0],
        upper: vec![10.0],
    })
    .unwrap();
    let agent = AgentSpec {
        quad_matrix: DMatrix::from_element(1, 1, 1.0),
        lin_vector: DVector::from_element(1, -4.0),
        local_set: set,
        coupling_block: DMatrix::from_element(1, 1, 1.0),
        coupling_offset: DVector::from_element(1, offset),
    };
    GameInstance::new(vec![agent], vec![0.0], DVector::from_element(1, slater)).unwrap()
}

/// `min ½xᵀHx + fᵀx` s.t. `Gx ≤ h` by enumerating active sets of size ≤ dim.
/// `H` must be positive definite; exponential, for tiny problems only.
pub fn active_set_qp(
    h_mat: &DMatrix<f64>,
    f: &DVector<f64>,
    g: &DMatrix<f64>,
    h: &DVector<f64>,
) -> DVector<f64> {
    let (n, rows) = (h_mat.nrows(), g.nrows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    let mut subset: Vec<usize> = Vec::new();
    fn rec(
        start: usize,
        subset: &mut Vec<usize>,
        n: usize,
        rows: usize,
        visit: &mut dyn FnMut(&[usize]),
    ) {
        visit(subset);
        if subset.len() == n {
            return;
        }
        for r in start..rows {
            subset.push(r);
            rec(r + 1, subset, n, rows, visit);
            subset.pop();
        }
    }
    let mut visit = |s: &[usize]| {
        let k = s.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(h_mat);
        for j in 0..n {
            rhs[j] = -f[j];
        }
        for (a, &r) in s.iter().enumerate() {
            for j in 0..n {
                kkt[(n + a, j)] = g[(r, j)];
                kkt[(j, n + a)] = g[(r, j)];
            }
            rhs[n + a] = h[r];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return;
        };
        let x = sol.rows(0, n).into_owned();
        if (0..k).any(|a| sol[n + a] < -1e-9) || (g * &x - h).iter().any(|v| *v > 1e-9) {
            return;
        }
        let val = 0.5 * x.dot(&(h_mat * &x)) + f.dot(&x);
        if best.as_ref().is_none_or(|(b, _)| val < *b) {
            best = Some((val, x));
        }
    };
    rec(0, &mut subset, n, rows, &mut visit);
    best.expect("feasible QP").1
}

/// Dense QP `min J_1` over `Ω_1 ∩ {C_1 x ≤ c_1}` of a single-agent game.
pub fn single_agent_qp(game: &GameInstance) -> DVector<f64> {
    let a = &game.agents()[0];
    let n = game.decision_dim();
    let h_mat = (&a.quad_matrix
        + DMatrix::from_diagonal(&DVector::from_column_slice(game.agg_coupling())))
        * 2.0;
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::new();
    let (lo, hi) = a.local_set.bounds();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        rows.push((e.clone(), hi[j]));
        e[j] = -1.0;
        rows.push((e, -lo[j]));
    }
    if let SetShape::BoxHalfspace { normal, offset, .. } = a.local_set.shape() {
        rows.push((normal.clone(), *offset));
    }
    for l in 0..game.coupling_dim() {
        rows.push((
            (0..n).map(|j| a.coupling_block[(l, j)]).collect(),
            a.coupling_offset[l],
        ));
    }
    let g = DMatrix::from_fn(rows.len(), n, |r, j| rows[r].0[j]);
    let h = DVector::from_fn(rows.len(), |r, _| rows[r].1);
    active_set_qp(&h_mat, &a.lin_vector, &g, &h)
}
