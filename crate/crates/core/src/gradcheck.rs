//! Central-finite-difference verification of tape gradients.
//!
//! Always runs in f64; the tolerances this is used with (1e-4 relative)
//! are not reachable in f32.

use crate::error::{Error, Result};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// Per-input outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    /// max over elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)
    pub max_rel_err: f64,
    /// Analytic gradient was identically zero (a frozen branch, e.g. behind
    /// stop-gradient). Numeric comparison is skipped for these inputs so the
    /// oracle only perturbs live branches.
    pub frozen: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    /// Worst relative error across live (non-frozen) inputs.
    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| !e.frozen)
            .map(|e| e.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }

    pub fn frozen_names(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.frozen)
            .map(|e| e.name.as_str())
            .collect()
    }
}

/// Compare tape gradients of a scalar-valued function against central finite
/// differences with step `h`.
///
/// `f` is called with a fresh tape and one leaf per input (same order); it
/// must be deterministic — if two unperturbed forward passes disagree this
/// returns a contract error.
pub fn grad_check<F>(
    inputs: &[(String, Tensor<f64>)],
    h: f64,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::<f64>::new();
        let ids: Vec<NodeId> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        tape.value(loss).item()
    };

    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    let y0 = eval(&base)?;
    let y0_again = eval(&base)?;
    if y0.to_bits() != y0_again.to_bits() {
        return Err(Error::contract(format!(
            "non-deterministic function: forward passes gave {y0} and {y0_again}"
        )));
    }

    // Analytic gradients.
    let mut tape = Tape::<f64>::new();
    let ids: Vec<NodeId> = base.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids.iter().map(|&id| tape.grad_or_zeros(id)).collect();

    let mut entries = Vec::with_capacity(inputs.len());
    for (idx, (name, _)) in inputs.iter().enumerate() {
        let a = &analytic[idx];
        let frozen = a.data().iter().all(|&g| g == 0.0);
        if frozen {
            entries.push(GradCheckEntry {
                name: name.clone(),
                max_rel_err: 0.0,
                frozen: true,
            });
            continue;
        }
        let mut max_rel = 0.0f64;
        for elem in 0..a.len() {
            let mut plus = base.clone();
            plus[idx].data_mut()[elem] += h;
            let mut minus = base.clone();
            minus[idx].data_mut()[elem] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let ana = a.data()[elem];
            let rel = (ana - numeric).abs() / f64::max(1e-8, ana.abs() + numeric.abs());
            max_rel = max_rel.max(rel);
        }
        entries.push(GradCheckEntry {
            name: name.clone(),
            max_rel_err: max_rel,
            frozen: false,
        });
    }
    Ok(GradCheckReport { entries })
}
