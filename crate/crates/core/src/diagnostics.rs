//! Normality tests for standardized prediction errors.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::ssm::FilterOutput;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn poly(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

/// Shapiro–Wilk `W` with Royston's coefficient approximation and normalizing transform.
pub fn shapiro_wilk(x: &[f64]) -> Result<TestResult> {
    let n = x.len();
    if !(3..=5000).contains(&n) {
        return Err(Error::Data(format!("Shapiro-Wilk needs 3 to 5000 observations, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("Shapiro-Wilk input must be finite".into()));
    }
    let mut xs = x.to_vec();
    xs.sort_by(f64::total_cmp);
    let range = xs[n - 1] - xs[0];
    if range <= 1e-19 * xs[0].abs().max(1.0) {
        return Err(Error::Data("Shapiro-Wilk input is constant".into()));
    }
    let nf = n as f64;
    let z = std_normal();

    let mut a = vec![0.0; n];
    if n == 3 {
        a[0] = -std::f64::consts::FRAC_1_SQRT_2;
        a[2] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let m: Vec<f64> = (1..=n).map(|i| z.inverse_cdf((i as f64 - 0.375) / (nf + 0.25))).collect();
        let mm: f64 = m.iter().map(|v| v * v).sum();
        let u = 1.0 / nf.sqrt();
        let an = m[n - 1] / mm.sqrt() + poly(&[0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056], u);
        let (phi, tail) = if n > 5 {
            let an1 = m[n - 2] / mm.sqrt() + poly(&[0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633], u);
            let phi = (mm - 2.0 * m[n - 1].powi(2) - 2.0 * m[n - 2].powi(2)) / (1.0 - 2.0 * an * an - 2.0 * an1 * an1);
            a[n - 2] = an1;
            a[1] = -an1;
            (phi, 2)
        } else {
            ((mm - 2.0 * m[n - 1].powi(2)) / (1.0 - 2.0 * an * an), 1)
        };
        a[n - 1] = an;
        a[0] = -an;
        for i in tail..n - tail {
            a[i] = m[i] / phi.sqrt();
        }
    }

    let mean = xs.iter().sum::<f64>() / nf;
    let ss: f64 = xs.iter().map(|v| (v - mean).powi(2)).sum();
    let num: f64 = a.iter().zip(&xs).map(|(a, x)| a * x).sum();
    let w = (num * num / ss).min(1.0);

    let p = if n == 3 {
        let p = 6.0 / std::f64::consts::PI * (w.sqrt().asin() - 0.75f64.sqrt().asin());
        p.clamp(0.0, 1.0)
    } else if n <= 11 {
        let gamma = -2.273 + 0.459 * nf;
        let mu = poly(&[0.5440, -0.39978, 0.025054, -0.0006714], nf);
        let sigma = poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp();
        let y = -(gamma - (1.0 - w).ln()).ln();
        z.sf((y - mu) / sigma)
    } else {
        let ln = nf.ln();
        let mu = poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln);
        let sigma = poly(&[-0.4803, -0.082676, 0.0030302], ln).exp();
        z.sf(((1.0 - w).ln() - mu) / sigma)
    };
    Ok(TestResult { statistic: w, p_value: p })
}

/// Bowman–Shenton `T(skew²/6 + (kurt−3)²/24)` against `χ²₂`.
pub fn bowman_shenton(x: &[f64]) -> Result<TestResult> {
    let n = x.len();
    if n < 3 {
        return Err(Error::Data(format!("Bowman-Shenton needs at least 3 observations, got {n}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("Bowman-Shenton input must be finite".into()));
    }
    let nf = n as f64;
    let mean = x.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= 0.0 {
        return Err(Error::Data("Bowman-Shenton input is constant".into()));
    }
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2);
    let stat = nf * (skew * skew / 6.0 + (kurt - 3.0).powi(2) / 24.0);
    // χ²₂ survival function
    Ok(TestResult { statistic: stat, p_value: (-stat / 2.0).exp() })
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct NormalityRow {
    pub series: String,
    pub n: usize,
    pub sw_stat: f64,
    pub sw_p: f64,
    pub bs_stat: f64,
    pub bs_p: f64,
}

/// Runs both tests on every column of a `T × p` matrix, dropping non-finite cells.
///
/// Columns with fewer than three usable values are omitted.
pub fn normality_table(columns: &[Vec<f64>], names: &[String]) -> Result<Vec<NormalityRow>> {
    if columns.len() != names.len() {
        return Err(Error::Config(format!("{} columns but {} names", columns.len(), names.len())));
    }
    let mut rows = Vec::new();
    for (col, name) in columns.iter().zip(names) {
        let v: Vec<f64> = col.iter().copied().filter(|x| x.is_finite()).collect();
        if v.len() < 3 || v.iter().all(|x| *x == v[0]) {
            continue;
        }
        let v = if v.len() > 5000 { v[v.len() - 5000..].to_vec() } else { v };
        let sw = shapiro_wilk(&v)?;
        let bs = bowman_shenton(&v)?;
        rows.push(NormalityRow {
            series: name.clone(),
            n: v.len(),
            sw_stat: sw.statistic,
            sw_p: sw.p_value,
            bs_stat: bs.statistic,
            bs_p: bs.p_value,
        });
    }
    Ok(rows)
}

/// Normality of each series' standardized one-step prediction errors after the diffuse periods.
///
/// No multiplicity correction is applied.
pub fn residual_normality_report(out: &FilterOutput<f64>, names: &[String]) -> Result<Vec<NormalityRow>> {
    if out.is_empty() {
        return Ok(Vec::new());
    }
    let p = out.innovations[0].len();
    if names.len() != p {
        return Err(Error::Config(format!("filter has {p} series but {} names", names.len())));
    }
    let std = out.standardized_innovations()?;
    let columns: Vec<Vec<f64>> = (0..p).map(|i| std.iter().map(|v| v[i]).collect()).collect();
    normality_table(&columns, names)
}
