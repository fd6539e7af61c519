//! Annealing schedules `A(s)`, `B(s)` on tabulated knots.
//!
//! Values between knots come from a monotone piecewise-cubic (Fritsch–Carlson)
//! interpolant, so the schedule and its first derivative are continuous and no
//! overshoot is introduced between knots.

use std::io::Read;

use crate::error::{Error, Result};

/// Fritsch–Carlson monotone cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slopes: Vec<f64>,
}

impl MonotoneCubic {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::InvalidSchedule(format!(
                "{} knots but {} values",
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::InvalidSchedule("at least two knots are required".into()));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidSchedule("knots must be strictly increasing".into()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSchedule("non-finite schedule value".into()));
        }

        let n = x.len();
        let secants: Vec<f64> = (0..n - 1)
            .map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k]))
            .collect();

        let mut slopes = vec![0.0; n];
        slopes[0] = secants[0];
        slopes[n - 1] = secants[n - 2];
        for k in 1..n - 1 {
            let (l, r) = (secants[k - 1], secants[k]);
            slopes[k] = if l * r <= 0.0 { 0.0 } else { 0.5 * (l + r) };
        }

        for k in 0..n - 1 {
            let d = secants[k];
            if d == 0.0 {
                slopes[k] = 0.0;
                slopes[k + 1] = 0.0;
                continue;
            }
            let alpha = slopes[k] / d;
            let beta = slopes[k + 1] / d;
            // endpoint slopes may point against the secant
            if alpha < 0.0 {
                slopes[k] = 0.0;
            }
            if beta < 0.0 {
                slopes[k + 1] = 0.0;
            }
            let (alpha, beta) = (slopes[k] / d, slopes[k + 1] / d);
            let radius = alpha.hypot(beta);
            if radius > 3.0 {
                let tau = 3.0 / radius;
                slopes[k] = tau * alpha * d;
                slopes[k + 1] = tau * beta * d;
            }
        }

        Ok(Self {
            x: x.to_vec(),
            y: y.to_vec(),
            slopes,
        })
    }

    fn locate(&self, s: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.total_cmp(&s)) {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let k = self.locate(s);
        let h = self.x[k + 1] - self.x[k];
        let t = (s - self.x[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[k] + h10 * h * self.slopes[k] + h01 * self.y[k + 1] + h11 * h * self.slopes[k + 1]
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let k = self.locate(s);
        let h = self.x[k + 1] - self.x[k];
        let t = (s - self.x[k]) / h;
        let t2 = t * t;
        let d00 = 6.0 * t2 - 6.0 * t;
        let d10 = 3.0 * t2 - 4.0 * t + 1.0;
        let d01 = -6.0 * t2 + 6.0 * t;
        let d11 = 3.0 * t2 - 2.0 * t;
        (d00 * self.y[k] + d01 * self.y[k + 1]) / h + d10 * self.slopes[k] + d11 * self.slopes[k + 1]
    }
}

/// Tabulated annealing schedule.
///
/// `A(s)` multiplies the driver (tunneling) term and `B(s)` the problem term.
/// Optional per-qubit driver tables `A_α(s)` replace the shared `A(s)` for the
/// corresponding qubit.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    knots: Vec<f64>,
    a_values: Vec<f64>,
    b_values: Vec<f64>,
    per_qubit_a: Option<Vec<Vec<f64>>>,
    a: MonotoneCubic,
    b: MonotoneCubic,
    per_qubit: Option<Vec<MonotoneCubic>>,
}

impl Schedule {
    pub fn new(knots: Vec<f64>, a_values: Vec<f64>, b_values: Vec<f64>) -> Result<Self> {
        Self::with_per_qubit(knots, a_values, b_values, None)
    }

    pub fn with_per_qubit(
        knots: Vec<f64>,
        a_values: Vec<f64>,
        b_values: Vec<f64>,
        per_qubit_a: Option<Vec<Vec<f64>>>,
    ) -> Result<Self> {
        const EDGE: f64 = 1e-12;
        if knots.is_empty() || knots[0].abs() > EDGE || (knots[knots.len() - 1] - 1.0).abs() > EDGE {
            return Err(Error::InvalidSchedule("knots must cover s = 0 and s = 1".into()));
        }
        let negative = |v: &[f64]| v.iter().any(|&x| x < 0.0);
        if negative(&a_values) || negative(&b_values) {
            return Err(Error::InvalidSchedule("A(s) and B(s) must be nonnegative".into()));
        }
        let a = MonotoneCubic::new(&knots, &a_values)?;
        let b = MonotoneCubic::new(&knots, &b_values)?;
        let per_qubit = match &per_qubit_a {
            Some(tables) => {
                if tables.iter().any(|t| negative(t)) {
                    return Err(Error::InvalidSchedule("per-qubit A(s) must be nonnegative".into()));
                }
                Some(
                    tables
                        .iter()
                        .map(|t| MonotoneCubic::new(&knots, t))
                        .collect::<Result<Vec<_>>>()?,
                )
            }
            None => None,
        };
        Ok(Self {
            knots,
            a_values,
            b_values,
            per_qubit_a,
            a,
            b,
            per_qubit,
        })
    }

    /// `A(s) = e0 (1 - s)`, `B(s) = e0 s`.
    pub fn linear(e0: f64) -> Self {
        Self::new(vec![0.0, 1.0], vec![e0, 0.0], vec![0.0, e0]).expect("valid linear schedule")
    }

    /// `A` and `B` held at constant values for every `s`.
    pub fn constant(a: f64, b: f64) -> Self {
        Self::new(vec![0.0, 1.0], vec![a, a], vec![b, b]).expect("valid constant schedule")
    }

    /// Parse a CSV table with header `s,A,B[,A_0,...]`.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.len() < 3 {
            return Err(Error::InvalidSchedule(
                "schedule CSV needs at least the columns s, A, B".into(),
            ));
        }
        let extra = headers.len() - 3;
        let (mut s, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
        let mut per = vec![Vec::new(); extra];
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column {}", line + 2, i + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}, column {}: {e}", line + 2, i + 1)))
            };
            s.push(parse(0)?);
            a.push(parse(1)?);
            b.push(parse(2)?);
            for (q, col) in per.iter_mut().enumerate() {
                col.push(parse(3 + q)?);
            }
        }
        let per = (extra > 0).then_some(per);
        Self::with_per_qubit(s, a, b, per)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn a_values(&self) -> &[f64] {
        &self.a_values
    }

    pub fn b_values(&self) -> &[f64] {
        &self.b_values
    }

    pub fn per_qubit_tables(&self) -> Option<&[Vec<f64>]> {
        self.per_qubit_a.as_deref()
    }

    pub fn per_qubit_count(&self) -> Option<usize> {
        self.per_qubit.as_ref().map(Vec::len)
    }

    pub fn a(&self, s: f64) -> f64 {
        self.a.value(s).max(0.0)
    }

    pub fn b(&self, s: f64) -> f64 {
        self.b.value(s).max(0.0)
    }

    pub fn a_prime(&self, s: f64) -> f64 {
        self.a.derivative(s)
    }

    pub fn b_prime(&self, s: f64) -> f64 {
        self.b.derivative(s)
    }

    /// Driver amplitude for one qubit, using its own table when present.
    pub fn a_qubit(&self, qubit: usize, s: f64) -> f64 {
        match &self.per_qubit {
            Some(tables) => tables[qubit].value(s).max(0.0),
            None => self.a(s),
        }
    }

    pub fn a_qubit_prime(&self, qubit: usize, s: f64) -> f64 {
        match &self.per_qubit {
            Some(tables) => tables[qubit].derivative(s),
            None => self.a_prime(s),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reproduces_knots() {
        let s = vec![0.0, 0.2, 0.5, 0.9, 1.0];
        let a = vec![5.0, 3.0, 1.0, 0.2, 0.0];
        let b = vec![0.0, 0.5, 2.0, 4.0, 4.5];
        let sched = Schedule::new(s.clone(), a.clone(), b.clone()).unwrap();
        for i in 0..s.len() {
            assert_eq!(sched.a(s[i]), a[i]);
            assert_eq!(sched.b(s[i]), b[i]);
        }
    }

    #[test]
    fn linear_data_stays_linear() {
        let sched = Schedule::linear(2.0);
        for &s in &[0.0, 0.13, 0.5, 0.77, 1.0] {
            assert!((sched.a(s) - 2.0 * (1.0 - s)).abs() < 1e-14);
            assert!((sched.b_prime(s) - 2.0).abs() < 1e-14);
            assert!((sched.a_prime(s) + 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn monotone_no_overshoot() {
        let s = vec![0.0, 0.1, 0.2, 0.6, 1.0];
        let b = vec![0.0, 0.0, 3.0, 3.1, 10.0];
        let sched = Schedule::new(s, vec![1.0; 5], b).unwrap();
        let mut prev = sched.b(0.0);
        for i in 1..=1000 {
            let v = sched.b(i as f64 / 1000.0);
            assert!(v >= prev - 1e-12, "not monotone at {i}");
            prev = v;
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let s = vec![0.0, 0.3, 0.45, 0.8, 1.0];
        let a = vec![4.0, 2.5, 1.1, 0.3, 0.0];
        let sched = Schedule::new(s, a, vec![0.0, 1.0, 2.0, 3.5, 4.0]).unwrap();
        let h = 1e-6;
        for &x in &[0.1, 0.37, 0.6, 0.93] {
            let fd = (sched.a(x + h) - sched.a(x - h)) / (2.0 * h);
            assert!((fd - sched.a_prime(x)).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(Schedule::new(vec![0.0, 0.5], vec![1.0, 1.0], vec![0.0, 1.0]).is_err());
        assert!(Schedule::new(vec![0.0, 0.5, 0.5, 1.0], vec![1.0; 4], vec![1.0; 4]).is_err());
        assert!(Schedule::new(vec![0.0, 1.0], vec![-1.0, 1.0], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn parses_csv_with_per_qubit_columns() {
        let text = "s,A,B,A_0,A_1\n0,2,0,2,1.9\n0.5,1,1,1,0.95\n1,0,2,0,0\n";
        let sched = Schedule::from_csv(text.as_bytes()).unwrap();
        assert_eq!(sched.per_qubit_count(), Some(2));
        assert_eq!(sched.a_qubit(1, 0.5), 0.95);
        assert_eq!(sched.b(1.0), 2.0);
    }
}
