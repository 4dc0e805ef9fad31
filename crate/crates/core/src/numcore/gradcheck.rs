//! Central-difference gradient checks against the tape's analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{ParameterStore, SlotKind};
use super::tape::{Tape, Var};
use super::tensor::Tensor2;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct GradEntry {
    pub slot: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    /// Entries whose relative error exceeds the tolerance.
    pub failures: Vec<GradEntry>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Floor on the relative-error denominator so entries whose true gradient
/// is ~0 are judged on absolute error.
pub const REL_FLOOR: f64 = 1e-5;

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

/// Checks every trainable entry of `store`. The forward output is reduced
/// to a scalar through a fixed random projection so every output entry
/// contributes. Each forward gets a fresh tape with the same dropout seed.
pub fn gradcheck<F>(store: &mut ParameterStore, train: bool, h: f64, tolerance: f64, forward: F) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Var,
{
    gradcheck_with(store, train, h, tolerance, forward, |_, _| {})
}

/// Like [`gradcheck`], with a hook that may tamper with analytic gradients
/// (used for negative controls).
pub fn gradcheck_with<F, C>(
    store: &mut ParameterStore,
    train: bool,
    h: f64,
    tolerance: f64,
    forward: F,
    corrupt: C,
) -> Result<GradcheckReport>
where
    F: Fn(&mut Tape, &ParameterStore) -> Var,
    C: Fn(&str, &mut Tensor2),
{
    const TAPE_SEED: u64 = 17;
    let proj = {
        let mut t = Tape::new(train, TAPE_SEED);
        let out = forward(&mut t, store);
        t.status()?;
        let (r, c) = t.value(out).shape();
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        Tensor2::from_vec(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())?
    };
    let scalar = |t: &mut Tape, s: &ParameterStore| {
        let out = forward(t, s);
        let p = t.constant(proj.clone());
        let m = t.mul(out, p);
        t.sum_all(m)
    };

    store.zero_grad();
    let mut t = Tape::new(train, TAPE_SEED);
    let loss = scalar(&mut t, store);
    t.backward(loss, store)?;
    for i in 0..store.slots().len() {
        let name = store.slot(i).name.clone();
        corrupt(&name, &mut store.slot_mut(i).grad);
    }

    let eval = |s: &ParameterStore| -> Result<f64> {
        let mut t = Tape::new(train, TAPE_SEED);
        let l = scalar(&mut t, s);
        t.status()?;
        Ok(t.value(l).get(0, 0))
    };

    let mut report = GradcheckReport { max_rel_error: 0.0, checked: 0, tolerance, failures: Vec::new() };
    for i in 0..store.slots().len() {
        if store.slot(i).kind != SlotKind::Trainable {
            continue;
        }
        for j in 0..store.slot(i).value.len() {
            let orig = store.slot(i).value.data()[j];
            store.slot_mut(i).value.data_mut()[j] = orig + h;
            let up = eval(store)?;
            store.slot_mut(i).value.data_mut()[j] = orig - h;
            let down = eval(store)?;
            store.slot_mut(i).value.data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = store.slot(i).grad.data()[j];
            let e = rel_error(analytic, numeric);
            report.checked += 1;
            report.max_rel_error = report.max_rel_error.max(e);
            if e > tolerance {
                report.failures.push(GradEntry {
                    slot: store.slot(i).name.clone(),
                    index: j,
                    analytic,
                    numeric,
                    rel_error: e,
                });
            }
        }
    }
    store.zero_grad();
    Ok(report)
}
