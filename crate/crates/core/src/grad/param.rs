use serde::{Deserialize, Serialize};

use super::GradError;
use crate::matrix::Matrix;

/// Index of a table inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable table with its gradient buffer and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTable {
    pub name: String,
    pub values: Matrix,
    pub grads: Matrix,
    pub first_moment: Matrix,
    pub second_moment: Matrix,
}

impl ParamTable {
    pub fn new(name: impl Into<String>, values: Matrix) -> Self {
        let (r, c) = values.shape();
        Self {
            name: name.into(),
            values,
            grads: Matrix::zeros(r, c),
            first_moment: Matrix::zeros(r, c),
            second_moment: Matrix::zeros(r, c),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// All trainable tables plus the shared Adam step counter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    tables: Vec<ParamTable>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, values: Matrix) -> ParamId {
        self.tables.push(ParamTable::new(name, values));
        ParamId(self.tables.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &ParamTable {
        &self.tables[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTable {
        &mut self.tables[id.0]
    }

    pub fn values(&self, id: ParamId) -> &Matrix {
        &self.tables[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.tables[id.0].values
    }

    pub fn grads(&self, id: ParamId) -> &Matrix {
        &self.tables[id.0].grads
    }

    pub fn tables(&self) -> &[ParamTable] {
        &self.tables
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tables.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tables.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub(crate) fn from_parts(tables: Vec<ParamTable>, step: u64) -> Self {
        Self { tables, step }
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tables {
            t.grads.fill(0.0);
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, g: &Matrix) {
        self.tables[id.0].grads.add_assign(g);
    }

    /// One Adam update over every table. Leaves all values untouched and
    /// returns an error if any gradient entry is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<(), GradError> {
        for t in &self.tables {
            if let Some(pos) = t.grads.data().iter().position(|g| !g.is_finite()) {
                let cols = t.grads.cols().max(1);
                return Err(GradError::NonFiniteGradient {
                    param: t.name.clone(),
                    row: pos / cols,
                    col: pos % cols,
                    value: t.grads.data()[pos],
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - cfg.beta1.powi(t);
        let bias2 = 1.0 - cfg.beta2.powi(t);
        for table in &mut self.tables {
            let ParamTable {
                values,
                grads,
                first_moment,
                second_moment,
                ..
            } = table;
            let iter = values
                .data_mut()
                .iter_mut()
                .zip(grads.data())
                .zip(first_moment.data_mut().iter_mut())
                .zip(second_moment.data_mut().iter_mut());
            for (((w, &g), m), v) in iter {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}
