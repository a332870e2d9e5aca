//! Uniform empirical measures on R^d and fields over their atoms.
//!
//! A [`ParticleEnsemble`] stands for `μ = (1/N) Σ δ_{x_i}`; weights are never
//! stored. A [`TangentField`] is an element of `L²_μ`, one vector per atom.
//! Both keep their data row-major in a flat buffer so they can be handed to
//! Krylov solvers without copying.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Default cap on the particle count accepted by [`w2_exact`].
pub const W2_EXACT_CAP: usize = 1000;

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    positions: Vec<f64>,
    count: usize,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    values: Vec<f64>,
    count: usize,
    dim: usize,
}

fn check_layout(len: usize, count: usize, dim: usize) -> Result<()> {
    if count == 0 || dim == 0 {
        return Err(Error::InvalidInput(format!(
            "count and dim must be positive (got count={count}, dim={dim})"
        )));
    }
    if len != count * dim {
        return Err(Error::Shape(format!(
            "buffer of length {len} does not hold {count}x{dim} entries"
        )));
    }
    Ok(())
}

impl ParticleEnsemble {
    pub fn new(count: usize, dim: usize, positions: Vec<f64>) -> Result<Self> {
        check_layout(positions.len(), count, dim)?;
        if let Some(bad) = positions.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite coordinate at particle {} (component {})",
                bad / dim,
                bad % dim
            )));
        }
        Ok(Self { positions, count, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::Shape("ragged particle rows".into()));
        }
        Self::new(rows.len(), dim, rows.concat())
    }

    /// All particles at the same location.
    pub fn dirac(count: usize, point: &[f64]) -> Result<Self> {
        Self::new(count, point.len(), point.repeat(count))
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.positions.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.positions
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.positions
    }

    /// Largest absolute coordinate.
    pub fn max_abs(&self) -> f64 {
        self.positions.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn zero_field(&self) -> TangentField {
        TangentField::zeros(self.count, self.dim)
    }

    pub fn check_field(&self, v: &TangentField) -> Result<()> {
        if v.count != self.count || v.dim != self.dim {
            return Err(Error::Shape(format!(
                "field is {}x{}, ensemble is {}x{}",
                v.count, v.dim, self.count, self.dim
            )));
        }
        Ok(())
    }
}

impl TangentField {
    pub fn new(count: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        check_layout(values.len(), count, dim)?;
        Ok(Self { values, count, dim })
    }

    pub fn zeros(count: usize, dim: usize) -> Self {
        Self { values: vec![0.0; count * dim], count, dim }
    }

    pub fn constant(count: usize, vector: &[f64]) -> Self {
        Self { values: vector.repeat(count), count, dim: vector.len() }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn at_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    pub fn same_shape(&self, other: &TangentField) -> Result<()> {
        if self.count != other.count || self.dim != other.dim {
            return Err(Error::Shape(format!(
                "fields are {}x{} and {}x{}",
                self.count, self.dim, other.count, other.dim
            )));
        }
        Ok(())
    }

    pub fn scaled(&self, s: f64) -> TangentField {
        TangentField {
            values: self.values.iter().map(|x| s * x).collect(),
            count: self.count,
            dim: self.dim,
        }
    }

    /// `self + s * other`.
    pub fn axpy(&self, s: f64, other: &TangentField) -> Result<TangentField> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + s * b).collect();
        Ok(TangentField { values, count: self.count, dim: self.dim })
    }

    /// `‖v‖_{L²_μ}`.
    pub fn norm(&self) -> f64 {
        (self.values.iter().map(|x| x * x).sum::<f64>() / self.count as f64).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// `⟨v, w⟩_{L²_μ} = (1/N) Σ_i v_i · w_i`.
pub fn l2_inner(v: &TangentField, w: &TangentField) -> Result<f64> {
    v.same_shape(w)?;
    let dot: f64 = v.values.iter().zip(&w.values).map(|(a, b)| a * b).sum();
    Ok(dot / v.count as f64)
}

/// Pushforward of `mu` by `Id + scale * v`.
pub fn push(mu: &ParticleEnsemble, v: &TangentField, scale: f64) -> Result<ParticleEnsemble> {
    mu.check_field(v)?;
    if !scale.is_finite() {
        return Err(Error::InvalidInput(format!("push scale must be finite, got {scale}")));
    }
    let positions = mu.positions.iter().zip(&v.values).map(|(x, d)| x + scale * d).collect();
    ParticleEnsemble::new(mu.count, mu.dim, positions)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Exact `W2` between equal-size uniform ensembles, with the default size cap.
pub fn w2_exact(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    w2_exact_capped(a, b, W2_EXACT_CAP)
}

pub fn w2_exact_capped(a: &ParticleEnsemble, b: &ParticleEnsemble, cap: usize) -> Result<f64> {
    if a.dim != b.dim {
        return Err(Error::Shape(format!("ensemble dims differ: {} vs {}", a.dim, b.dim)));
    }
    if a.count != b.count {
        return Err(Error::Unsupported(format!(
            "W2 between ensembles of different sizes ({} vs {}) is not supported",
            a.count, b.count
        )));
    }
    if a.count > cap {
        return Err(Error::CapExceeded { what: "w2_exact particle count".into(), size: a.count, cap });
    }
    let n = a.count;
    let cost: Vec<f64> =
        a.particles().flat_map(|x| b.particles().map(move |y| sq_dist(x, y))).collect();
    let total = min_assignment_cost(n, &cost);
    Ok((total.max(0.0) / n as f64).sqrt())
}

/// Minimum-cost perfect matching on a dense `n x n` cost matrix (row-major),
/// by successive shortest augmenting paths with dual potentials.
fn min_assignment_cost(n: usize, cost: &[f64]) -> f64 {
    // 1-based indexing; column 0 is the virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=n).map(|j| cost[(matched_row[j] - 1) * n + (j - 1)]).sum()
}

/// Exact `W2` in one dimension by sorted quantile matching.
pub fn w2_1d(a: &ParticleEnsemble, b: &ParticleEnsemble) -> Result<f64> {
    if a.dim != 1 || b.dim != 1 {
        return Err(Error::Unsupported(format!(
            "w2_1d needs dim 1 ensembles (got {} and {})",
            a.dim, b.dim
        )));
    }
    if a.count != b.count {
        return Err(Error::Unsupported(format!(
            "W2 between ensembles of different sizes ({} vs {}) is not supported",
            a.count, b.count
        )));
    }
    let mut xs = a.positions.clone();
    let mut ys = b.positions.clone();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let total: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((total / a.count as f64).sqrt())
}

/// Serialize as CSV: a `# dim=<d> count=<N>` comment row, a header
/// `x0,...,x{d-1}`, then one row per particle.
pub fn ensemble_to_csv(mu: &ParticleEnsemble) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# dim={} count={}", mu.dim, mu.count);
    let header: Vec<String> = (0..mu.dim).map(|k| format!("x{k}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in mu.particles() {
        let row: Vec<String> = p.iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn ensemble_from_csv(text: &str) -> Result<ParticleEnsemble> {
    let mut declared: Option<(usize, usize)> = None;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty()).peekable();
    if let Some(first) = lines.peek() {
        if let Some(meta) = first.trim().strip_prefix('#') {
            declared = Some(parse_sidecar(meta)?);
            lines.next();
        }
    }
    let header = lines.next().ok_or_else(|| Error::InvalidInput("missing CSV header".into()))?;
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    for (k, name) in columns.iter().enumerate() {
        if *name != format!("x{k}") {
            return Err(Error::InvalidInput(format!("unexpected column `{name}` at position {k}")));
        }
    }
    let dim = columns.len();
    let mut positions = Vec::new();
    let mut count = 0;
    for (lineno, line) in lines.enumerate() {
        if line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != dim {
            return Err(Error::Shape(format!(
                "row {} has {} fields, header has {dim}",
                lineno + 1,
                fields.len()
            )));
        }
        for f in fields {
            let x: f64 = f
                .parse()
                .map_err(|_| Error::InvalidInput(format!("row {}: bad number `{f}`", lineno + 1)))?;
            positions.push(x);
        }
        count += 1;
    }
    if let Some((d, n)) = declared {
        if d != dim || n != count {
            return Err(Error::Shape(format!(
                "sidecar declares dim={d} count={n}, body has dim={dim} count={count}"
            )));
        }
    }
    ParticleEnsemble::new(count, dim, positions)
}

fn parse_sidecar(meta: &str) -> Result<(usize, usize)> {
    let mut dim = None;
    let mut count = None;
    for token in meta.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::InvalidInput(format!("bad sidecar token `{token}`")))?;
        let value: usize =
            value.parse().map_err(|_| Error::InvalidInput(format!("bad sidecar value `{token}`")))?;
        match key {
            "dim" => dim = Some(value),
            "count" => count = Some(value),
            _ => return Err(Error::InvalidInput(format!("unknown sidecar key `{key}`"))),
        }
    }
    match (dim, count) {
        (Some(d), Some(n)) => Ok((d, n)),
        _ => Err(Error::InvalidInput("sidecar must carry dim and count".into())),
    }
}

pub fn read_ensemble(path: impl AsRef<Path>) -> Result<ParticleEnsemble> {
    ensemble_from_csv(&std::fs::read_to_string(path)?)
}

pub fn write_ensemble(path: impl AsRef<Path>, mu: &ParticleEnsemble) -> Result<()> {
    std::fs::write(path, ensemble_to_csv(mu))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(xs: &[f64]) -> ParticleEnsemble {
        ParticleEnsemble::new(xs.len(), 1, xs.to_vec()).unwrap()
    }

    fn field(count: usize, dim: usize, xs: &[f64]) -> TangentField {
        TangentField::new(count, dim, xs.to_vec()).unwrap()
    }

    #[test]
    fn inner_product_examples() {
        let z = TangentField::zeros(3, 2);
        assert_eq!(l2_inner(&z, &z).unwrap(), 0.0);
        let v = field(2, 1, &[1.0, 3.0]);
        let w = field(2, 1, &[2.0, 4.0]);
        assert_eq!(l2_inner(&v, &w).unwrap(), 7.0);
        let v = field(2, 1, &[3.0, 4.0]);
        assert_eq!(l2_inner(&v, &v).unwrap(), 12.5);
        assert!((v.norm() - 12.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inner_product_rejects_mismatch() {
        let v = TangentField::zeros(2, 1);
        let w = TangentField::zeros(1, 2);
        assert!(matches!(l2_inner(&v, &w), Err(Error::Shape(_))));
    }

    #[test]
    fn push_examples() {
        let mu = ParticleEnsemble::new(1, 2, vec![1.0, 1.0]).unwrap();
        let v = field(1, 2, &[1.0, -1.0]);
        assert_eq!(push(&mu, &v, 0.0).unwrap(), mu);
        assert_eq!(push(&mu, &v, 0.5).unwrap().as_slice(), &[1.5, 0.5]);
        // original untouched
        assert_eq!(mu.as_slice(), &[1.0, 1.0]);

        let mu = ParticleEnsemble::new(3, 2, vec![0.0, 1.0, 2.0, -1.0, 4.0, 0.5]).unwrap();
        let c = TangentField::constant(3, &[0.3, -0.7]);
        let twice = push(&push(&mu, &c, 0.25).unwrap(), &c, 1.5).unwrap();
        let once = push(&mu, &c, 1.75).unwrap();
        for (a, b) in twice.as_slice().iter().zip(once.as_slice()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn push_rejects_mismatch() {
        let mu = line(&[0.0, 1.0]);
        assert!(push(&mu, &TangentField::zeros(3, 1), 1.0).is_err());
    }

    #[test]
    fn w2_examples() {
        let a = line(&[0.0, 2.0]);
        let b = line(&[1.0, 3.0]);
        assert!((w2_exact(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert!((w2_1d(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(w2_exact(&a, &a).unwrap(), 0.0);
        assert_eq!(w2_1d(&a, &a).unwrap(), 0.0);
        assert_eq!(w2_1d(&line(&[5.0]), &line(&[2.0])).unwrap(), 3.0);
        let x = ParticleEnsemble::new(1, 2, vec![0.0, 0.0]).unwrap();
        let y = ParticleEnsemble::new(1, 2, vec![3.0, 4.0]).unwrap();
        assert_eq!(w2_exact(&x, &y).unwrap(), 5.0);
    }

    #[test]
    fn w2_errors() {
        let a = line(&[0.0, 2.0]);
        let b = line(&[1.0]);
        assert!(matches!(w2_exact(&a, &b), Err(Error::Unsupported(_))));
        assert!(matches!(w2_exact_capped(&a, &a, 1), Err(Error::CapExceeded { .. })));
        let p = ParticleEnsemble::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(w2_1d(&p, &p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn w2_is_permutation_invariant() {
        let a = ParticleEnsemble::new(3, 2, vec![0.0, 0.0, 1.0, 2.0, -1.0, 0.5]).unwrap();
        let b = ParticleEnsemble::new(3, 2, vec![-1.0, 0.5, 0.0, 0.0, 1.0, 2.0]).unwrap();
        assert!(w2_exact(&a, &b).unwrap() < 1e-15);
    }

    #[test]
    fn rejects_non_finite_positions() {
        assert!(ParticleEnsemble::new(1, 1, vec![f64::NAN]).is_err());
        assert!(ParticleEnsemble::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(ParticleEnsemble::new(2, 1, vec![0.0]).is_err());
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let mu = ParticleEnsemble::new(2, 3, vec![0.1, -2.0, 3.5e-9, 1.0, 2.0, 3.0]).unwrap();
        let text = ensemble_to_csv(&mu);
        assert!(text.starts_with("# dim=3 count=2\nx0,x1,x2\n"));
        assert_eq!(ensemble_from_csv(&text).unwrap(), mu);
        // sidecar optional
        assert_eq!(ensemble_from_csv("x0\n1\n2\n").unwrap(), line(&[1.0, 2.0]));
        assert!(ensemble_from_csv("# dim=1 count=3\nx0\n1\n2\n").is_err());
        assert!(ensemble_from_csv("x0,y\n1,2\n").is_err());
        assert!(ensemble_from_csv("x0,x1\n1\n").is_err());
    }
}
