use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

use super::StateSpaceModel;

/// Draws states and observations for `n` periods.
///
/// Diffuse initial states start at the matching entries of `start`; the
/// remaining states are drawn from `N(a1, P*)`.
pub fn simulate<R: Rng + ?Sized>(
    model: &StateSpaceModel<f64>,
    n: usize,
    start: &DVector<f64>,
    rng: &mut R,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = model.m();
    if start.len() != m {
        return Err(Error::Config(format!("start has {} entries for {m} states", start.len())));
    }
    let init = model.init();
    let mut draw = |k: usize| DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let chol = |a: &DMatrix<f64>| {
        let k = a.nrows();
        (a + DMatrix::identity(k, k) * 1e-12 * (1.0 + a.trace().abs()))
            .cholesky()
            .map(|c| c.l())
            .ok_or_else(|| Error::Config("covariance is not positive semidefinite".into()))
    };
    let mut a = &init.a1 + chol(&init.p_star)? * draw(m);
    for i in 0..m {
        if init.diffuse[i] {
            a[i] = start[i];
        }
    }
    let qd = model.q_dim();
    let q_l = chol(model.state_cov())?;
    let mut states = DMatrix::zeros(n, m);
    let mut y = DMatrix::zeros(n, model.p());
    for t in 0..n {
        states.row_mut(t).copy_from(&a.transpose());
        let mean = model.z_at(t) * &a;
        let e = draw(model.p());
        for i in 0..model.p() {
            y[(t, i)] = mean[i] + model.obs_var()[i].max(0.0).sqrt() * e[i];
        }
        a = model.transition() * &a + model.selection() * (&q_l * draw(qd));
    }
    Ok((states, y))
}
