//! Finite-difference gradient checking for unit tests.

use crate::module::Module;

/// Central differences of `f` with respect to every trainable tensor of `m`,
/// returned in a clone of `m`.
pub fn numeric_grads<M: Module>(m: &M, f: impl Fn(&M) -> f64) -> M {
    const H: f64 = 1e-5;
    let mut probe = m.clone();
    let mut out = m.zeros_like();
    let n = probe.tensors().len();
    for ti in 0..n {
        if !probe.tensors()[ti].kind.trainable() {
            continue;
        }
        let len = probe.tensors()[ti].tensor.len();
        for i in 0..len {
            let orig = probe.tensors()[ti].tensor.data()[i];
            probe.tensors_mut()[ti].tensor.data_mut()[i] = orig + H;
            let up = f(&probe);
            probe.tensors_mut()[ti].tensor.data_mut()[i] = orig - H;
            let down = f(&probe);
            probe.tensors_mut()[ti].tensor.data_mut()[i] = orig;
            out.tensors_mut()[ti].tensor.data_mut()[i] = (up - down) / (2.0 * H);
        }
    }
    out
}

/// Elementwise relative error `|a - n| / max(|a|, |n|, 1e-6)` over all
/// trainable tensors.
pub fn assert_grads_match<M: Module>(analytic: &M, numeric: &M, tol: f64) {
    for (a, n) in analytic.tensors().iter().zip(numeric.tensors()) {
        if !a.kind.trainable() {
            continue;
        }
        for (i, (x, y)) in a.tensor.data().iter().zip(n.tensor.data()).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-6);
            assert!(rel <= tol, "{}[{i}]: analytic {x} numeric {y} rel {rel}", a.name);
        }
    }
}
