//! System matrices of a linear-Gaussian state-space model.
//!
//! ```text
//! y_t     = Z_t a_t + e_t,        e_t ~ N(0, H),  H diagonal
//! a_{t+1} = T a_t + R n_t,        n_t ~ N(0, Q)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Initial condition of a single state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateInit<S> {
    /// Unknown initial value (infinite variance).
    Diffuse,
    /// Known initial variance.
    Exact(S),
}

/// Initial state distribution: a known part `N(a1, P*)` plus diffuse directions.
///
/// Rows and columns of `p_star` belonging to diffuse states must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization<S: Scalar> {
    pub a1: DVector<S>,
    pub p_star: DMatrix<S>,
    pub diffuse: Vec<bool>,
}

impl<S: Scalar> Initialization<S> {
    /// Per-state tags with zero mean and a diagonal known part.
    pub fn from_tags(tags: &[StateInit<S>]) -> Self {
        let m = tags.len();
        let mut p_star = DMatrix::zeros(m, m);
        let mut diffuse = vec![false; m];
        for (i, tag) in tags.iter().enumerate() {
            match *tag {
                StateInit::Diffuse => diffuse[i] = true,
                StateInit::Exact(v) => p_star[(i, i)] = v,
            }
        }
        Self { a1: DVector::zeros(m), p_star, diffuse }
    }

    pub fn all_diffuse(m: usize) -> Self {
        Self::from_tags(&vec![StateInit::Diffuse; m])
    }

    pub fn n_diffuse(&self) -> usize {
        self.diffuse.iter().filter(|&&d| d).count()
    }
}

/// One nonzero of a measurement row: a constant or a time-indexed value.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum ZValue<S> {
    Fixed(S),
    Series(usize),
}

/// Measurement loading `Z_t`: a constant matrix with optional time-varying cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement<S: Scalar> {
    base: DMatrix<S>,
    varying: Vec<(usize, usize, Vec<S>)>,
    pub(crate) rows: Vec<Vec<(usize, ZValue<S>)>>,
}

impl<S: Scalar> Measurement<S> {
    pub fn constant(z: DMatrix<S>) -> Self {
        Self::with_varying(z, Vec::new())
    }

    /// `base` with cells `(row, col)` replaced at time `t` by `values[t]`.
    pub fn with_varying(base: DMatrix<S>, varying: Vec<(usize, usize, Vec<S>)>) -> Self {
        let mut rows: Vec<Vec<(usize, ZValue<S>)>> = (0..base.nrows())
            .map(|i| {
                (0..base.ncols())
                    .filter(|&j| base[(i, j)] != S::zero())
                    .map(|j| (j, ZValue::Fixed(base[(i, j)])))
                    .collect()
            })
            .collect();
        for (k, (i, j, _)) in varying.iter().enumerate() {
            let row = &mut rows[*i];
            row.retain(|(c, _)| c != j);
            row.push((*j, ZValue::Series(k)));
            row.sort_by_key(|(c, _)| *c);
        }
        Self { base, varying, rows }
    }

    pub fn nrows(&self) -> usize {
        self.base.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.base.ncols()
    }

    /// Longest `T` supported, `None` when time-invariant.
    pub fn horizon(&self) -> Option<usize> {
        self.varying.iter().map(|(_, _, v)| v.len()).min()
    }

    pub fn is_time_varying(&self) -> bool {
        !self.varying.is_empty()
    }

    /// Dense `Z_t`.
    pub fn at(&self, t: usize) -> DMatrix<S> {
        let mut z = self.base.clone();
        for (i, j, v) in &self.varying {
            z[(*i, *j)] = v[t];
        }
        z
    }

    #[inline]
    pub(crate) fn value(&self, v: &ZValue<S>, t: usize) -> S {
        match v {
            ZValue::Fixed(x) => *x,
            ZValue::Series(k) => self.varying[*k].2[t],
        }
    }

    /// Whether row `i` is the same for every `t`.
    pub fn row_is_constant(&self, i: usize) -> bool {
        self.rows[i].iter().all(|(_, v)| matches!(v, ZValue::Fixed(_)))
    }

    pub fn base(&self) -> &DMatrix<S> {
        &self.base
    }

    /// Time-varying cells as `(row, col, values)`.
    pub fn varying_cells(&self) -> &[(usize, usize, Vec<S>)] {
        &self.varying
    }
}

/// An immutable, validated state-space model.
#[derive(Debug, Clone)]
pub struct StateSpaceModel<S: Scalar> {
    z: Measurement<S>,
    t: DMatrix<S>,
    r: DMatrix<S>,
    q: DMatrix<S>,
    h: DVector<S>,
    init: Initialization<S>,
    pub(crate) rqr: DMatrix<S>,
    pub(crate) t_rows: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> StateSpaceModel<S> {
    /// Validates dimensions, PSD-ness of `Q` and `H`, and the initialization.
    pub fn new(
        z: Measurement<S>,
        t: DMatrix<S>,
        r: DMatrix<S>,
        q: DMatrix<S>,
        h: DVector<S>,
        init: Initialization<S>,
    ) -> Result<Self> {
        let m = t.nrows();
        let p = z.nrows();
        if t.ncols() != m {
            return Err(Error::Config(format!("T is {}x{}, expected square", m, t.ncols())));
        }
        if z.ncols() != m {
            return Err(Error::Config(format!("Z has {} columns, state dimension is {m}", z.ncols())));
        }
        if r.nrows() != m || q.nrows() != r.ncols() || q.ncols() != r.ncols() {
            return Err(Error::Config(format!(
                "R is {}x{}, Q is {}x{}, state dimension {m}",
                r.nrows(),
                r.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        if h.len() != p {
            return Err(Error::Config(format!("H has {} entries, observation dimension is {p}", h.len())));
        }
        if init.a1.len() != m || init.p_star.nrows() != m || init.p_star.ncols() != m || init.diffuse.len() != m {
            return Err(Error::Config("initialization does not match state dimension".into()));
        }
        for (name, mat) in [("T", &t), ("R", &r), ("Q", &q), ("P*", &init.p_star)] {
            if mat.iter().any(|v| !v.is_finite_value()) {
                return Err(Error::Config(format!("{name} has non-finite entries")));
            }
        }
        if h.iter().any(|v| !v.is_finite_value() || *v < S::lit(-1e-10)) {
            return Err(Error::Config("H must be finite with nonnegative diagonal".into()));
        }
        check_psd(&q).map_err(|e| Error::Config(format!("Q is not PSD: {e}")))?;
        for i in 0..m {
            if init.diffuse[i] {
                let touched = (0..m).any(|j| init.p_star[(i, j)] != S::zero() || init.p_star[(j, i)] != S::zero());
                if touched {
                    return Err(Error::Config(format!("diffuse state {i} carries a known variance")));
                }
            } else if init.p_star[(i, i)] < S::zero() {
                return Err(Error::Config(format!("state {i} has negative initial variance")));
            }
        }
        let rqr = {
            let rq = &r * &q;
            let mut out = rq * r.transpose();
            symmetrize(&mut out);
            out
        };
        let t_rows = (0..m)
            .map(|i| (0..m).filter(|&j| t[(i, j)] != S::zero()).map(|j| (j, t[(i, j)])).collect())
            .collect();
        Ok(Self { z, t, r, q, h, init, rqr, t_rows })
    }

    pub fn m(&self) -> usize {
        self.t.nrows()
    }

    pub fn p(&self) -> usize {
        self.z.nrows()
    }

    pub fn q_dim(&self) -> usize {
        self.q.nrows()
    }

    pub fn measurement(&self) -> &Measurement<S> {
        &self.z
    }

    pub fn z_at(&self, t: usize) -> DMatrix<S> {
        self.z.at(t)
    }

    pub fn transition(&self) -> &DMatrix<S> {
        &self.t
    }

    pub fn selection(&self) -> &DMatrix<S> {
        &self.r
    }

    pub fn state_cov(&self) -> &DMatrix<S> {
        &self.q
    }

    /// Diagonal of `H`.
    pub fn obs_var(&self) -> &DVector<S> {
        &self.h
    }

    pub fn init(&self) -> &Initialization<S> {
        &self.init
    }

    /// `R Q R'`.
    pub fn state_noise(&self) -> &DMatrix<S> {
        &self.rqr
    }

    /// Same dynamics with a different measurement block.
    pub fn with_measurement(&self, z: Measurement<S>, h: DVector<S>) -> Result<Self> {
        Self::new(z, self.t.clone(), self.r.clone(), self.q.clone(), h, self.init.clone())
    }

    /// Same model with a replaced initialization.
    pub fn with_init(&self, init: Initialization<S>) -> Result<Self> {
        Self::new(self.z.clone(), self.t.clone(), self.r.clone(), self.q.clone(), self.h.clone(), init)
    }
}

pub(crate) fn symmetrize<S: Scalar>(p: &mut DMatrix<S>) {
    let n = p.nrows();
    let half = S::lit(0.5);
    for i in 0..n {
        for j in 0..i {
            let v = (p[(i, j)] + p[(j, i)]) * half;
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
}

/// PSD check up to round-off: symmetric, and a Cholesky factor exists after a tiny ridge.
pub fn check_psd<S: Scalar>(a: &DMatrix<S>) -> std::result::Result<(), String> {
    let n = a.nrows();
    if n == 0 {
        return Ok(());
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(S::zero(), |x, y| x.max(y)).max(S::one());
    for i in 0..n {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > S::lit(1e-10) * scale {
                return Err(format!("asymmetric at ({i},{j})"));
            }
        }
        if a[(i, i)] < S::lit(-1e-10) * scale {
            return Err(format!("negative diagonal at {i}"));
        }
    }
    let tol = S::lit(1e-10).max(S::default_epsilon() * S::lit(100.0));
    let mut ridge = a.clone();
    for i in 0..n {
        ridge[(i, i)] += tol * scale;
    }
    match ridge.cholesky() {
        Some(_) => Ok(()),
        None => Err("minimum eigenvalue below -1e-10".into()),
    }
}
