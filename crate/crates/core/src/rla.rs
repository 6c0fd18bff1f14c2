//! Residual linear attention over unselected blocks.
//!
//! The residual is never computed by scanning unselected blocks. Instead a
//! global state accumulates every complete block, the sparse pass builds a
//! state over the selected blocks it already loaded, and the residual output
//! is the difference of the two readouts.

use crate::config::{FeatureMap, Precision};
use crate::error::{check_len, Result, SplaError};
use crate::ledger::IoLedger;
use crate::tensor::{max_of, Matrix};

/// Applies the feature map. Both variants shift by `max(x)` before
/// exponentiating, so entries lie in `(0, 1]`.
pub fn phi(x: &[f64], kind: FeatureMap) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let m = max_of(x);
    let mut out: Vec<f64> = x.iter().map(|&v| (v - m).exp()).collect();
    if kind == FeatureMap::SoftmaxNormalized {
        let z: f64 = out.iter().sum();
        out.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// `sum_t phi(k_t)^T v_t` over some token set, as a `d x d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearState {
    dim: usize,
    /// Row `i` holds `sum_t phi(k_t)[i] * v_t`.
    matrix: Vec<f64>,
    token_count: usize,
    precision: Precision,
}

impl LinearState {
    pub fn zeros(dim: usize, precision: Precision) -> Self {
        Self {
            dim,
            matrix: vec![0.0; dim * dim],
            token_count: 0,
            precision,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn token_count(&self) -> usize {
        self.token_count
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::from_vec(self.dim, self.dim, self.matrix.clone()).expect("d x d")
    }

    /// Adds `feature^T value` where `feature` is an already mapped key.
    pub fn accumulate_feature(&mut self, feature: &[f64], value: &[f64]) {
        let p = self.precision;
        for (row, &f) in self.matrix.chunks_exact_mut(self.dim).zip(feature) {
            for (m, &v) in row.iter_mut().zip(value) {
                *m = p.accumulate(*m, p.mul(f, v));
            }
        }
        self.token_count += 1;
    }

    /// `phi_q * S` for a mapped query.
    pub fn readout(&self, phi_q: &[f64]) -> Vec<f64> {
        let p = self.precision;
        let mut out = vec![0.0; self.dim];
        for (row, &f) in self.matrix.chunks_exact(self.dim).zip(phi_q) {
            for (o, &m) in out.iter_mut().zip(row) {
                *o = p.accumulate(*o, p.mul(f, m));
            }
        }
        out
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.matrix.iter().fold(0.0, |a, &x| a.max(x.abs()))
    }
}

/// Folds one token into the global state.
pub fn global_state_update(
    state: &mut LinearState,
    key: &[f64],
    value: &[f64],
    kind: FeatureMap,
) -> Result<()> {
    check_len("key", state.dim, key.len())?;
    check_len("value", state.dim, value.len())?;
    state.accumulate_feature(&phi(key, kind), value);
    Ok(())
}

/// `phi(q) S_global - phi(q) S_selected`.
///
/// Charges both `d x d` state reads to `ledger.state_elements`; raw KV is
/// never touched.
pub fn rla_subtract(
    q: &[f64],
    global_state: &LinearState,
    selected_state: &LinearState,
    kind: FeatureMap,
    ledger: &mut IoLedger,
) -> Result<Vec<f64>> {
    let q = Matrix::from_vec(1, q.len(), q.to_vec())?;
    Ok(rla_subtract_group(&q, global_state, selected_state, kind, ledger)?
        .row(0)
        .to_vec())
}

/// Per-head residual for a whole query group. The two states are loaded once
/// for the group, so the ledger is charged `2 d^2` regardless of group size.
pub fn rla_subtract_group(
    q_group: &Matrix,
    global_state: &LinearState,
    selected_state: &LinearState,
    kind: FeatureMap,
    ledger: &mut IoLedger,
) -> Result<Matrix> {
    let d = global_state.dim;
    check_len("query width", d, q_group.cols())?;
    check_len("selected state dim", d, selected_state.dim)?;
    if selected_state.token_count > global_state.token_count {
        return Err(SplaError::InconsistentState {
            selected: selected_state.token_count,
            global: global_state.token_count,
        });
    }
    ledger.charge_state(2 * (d * d) as u64);
    let mut out = Matrix::zeros(q_group.rows(), d);
    for (g, q) in q_group.iter_rows().enumerate() {
        let fq = phi(q, kind);
        let bar = global_state.readout(&fq);
        let tilde = selected_state.readout(&fq);
        for ((o, b), t) in out.row_mut(g).iter_mut().zip(bar).zip(tilde) {
            *o = b - t;
        }
    }
    Ok(out)
}
