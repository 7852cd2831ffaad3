//! Natural cubic spline interpolation with linear tail extrapolation.
//!
//! Used to fill in decision-rule values at counts that are absent from the
//! observed sample when evaluating the risk estimate over the bandwidth grid.

use crate::error::{Error, Result};

/// A fitted natural cubic spline: knots, values and second derivatives.
///
/// The natural boundary condition forces the second derivative to zero at
/// both end knots. With exactly two knots the spline degenerates to the
/// connecting line.
#[derive(Debug, Clone)]
pub struct SplineFit {
    knots: Vec<f64>,
    values: Vec<f64>,
    second: Vec<f64>,
}

/// Fit a natural cubic spline through `(knots, values)`.
///
/// Knots must be strictly increasing and at least two.
pub fn fit_natural_spline(knots: &[f64], values: &[f64]) -> Result<SplineFit> {
    if knots.len() != values.len() {
        return Err(Error::Dimension(format!(
            "{} knots vs {} values",
            knots.len(),
            values.len()
        )));
    }
    if knots.len() < 2 {
        return Err(Error::domain("spline needs at least two knots"));
    }
    for w in knots.windows(2) {
        if w[1] <= w[0] {
            return Err(Error::domain(format!(
                "knots must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }

    let n = knots.len();
    let mut second = vec![0.0; n];
    if n > 2 {
        // Tridiagonal system for interior second derivatives, solved by the
        // Thomas algorithm. Natural conditions pin second[0] = second[n-1] = 0.
        let rows = n - 2;
        let mut diag = vec![0.0; rows];
        let mut upper = vec![0.0; rows];
        let mut lower = vec![0.0; rows];
        let mut rhs = vec![0.0; rows];
        for i in 0..rows {
            let h0 = knots[i + 1] - knots[i];
            let h1 = knots[i + 2] - knots[i + 1];
            lower[i] = h0;
            diag[i] = 2.0 * (h0 + h1);
            upper[i] = h1;
            rhs[i] = 6.0
                * ((values[i + 2] - values[i + 1]) / h1 - (values[i + 1] - values[i]) / h0);
        }
        for i in 1..rows {
            let factor = lower[i] / diag[i - 1];
            diag[i] -= factor * upper[i - 1];
            rhs[i] -= factor * rhs[i - 1];
        }
        second[rows] = rhs[rows - 1] / diag[rows - 1];
        for i in (1..rows).rev() {
            second[i] = (rhs[i - 1] - upper[i - 1] * second[i + 1]) / diag[i - 1];
        }
    }

    Ok(SplineFit {
        knots: knots.to_vec(),
        values: values.to_vec(),
        second,
    })
}

impl SplineFit {
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Evaluate the spline at `x`.
    ///
    /// Inside the knot range this is the cubic interpolant; outside, the line
    /// through the nearest end knot with the spline's end slope.
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let first = self.knots[0];
        let last = self.knots[n - 1];
        if x < first {
            return self.values[0] + self.derivative(first) * (x - first);
        }
        if x > last {
            return self.values[n - 1] + self.derivative(last) * (x - last);
        }
        let seg = self.segment(x);
        let h = self.knots[seg + 1] - self.knots[seg];
        let a = (self.knots[seg + 1] - x) / h;
        let b = (x - self.knots[seg]) / h;
        a * self.values[seg]
            + b * self.values[seg + 1]
            + ((a * a * a - a) * self.second[seg] + (b * b * b - b) * self.second[seg + 1])
                * (h * h)
                / 6.0
    }

    /// First derivative of the spline at `x` (clamped to the knot range).
    pub fn derivative(&self, x: f64) -> f64 {
        let n = self.knots.len();
        let x = x.clamp(self.knots[0], self.knots[n - 1]);
        let seg = self.segment(x);
        let h = self.knots[seg + 1] - self.knots[seg];
        let a = (self.knots[seg + 1] - x) / h;
        let b = (x - self.knots[seg]) / h;
        (self.values[seg + 1] - self.values[seg]) / h
            + ((3.0 * b * b - 1.0) * self.second[seg + 1] - (3.0 * a * a - 1.0) * self.second[seg])
                * h
                / 6.0
    }

    fn segment(&self, x: f64) -> usize {
        let n = self.knots.len();
        match self.knots.binary_search_by(|k| k.partial_cmp(&x).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent second implementation: assemble and solve the full
    /// tridiagonal system with plain Gaussian elimination, then evaluate the
    /// Hermite form of each segment. Shares no code with `SplineFit`.
    fn reference_natural_spline(knots: &[f64], values: &[f64], x: f64) -> f64 {
        let n = knots.len();
        let mut m = vec![vec![0.0; n]; n];
        let mut rhs = vec![0.0; n];
        m[0][0] = 1.0;
        m[n - 1][n - 1] = 1.0;
        for i in 1..n - 1 {
            let h0 = knots[i] - knots[i - 1];
            let h1 = knots[i + 1] - knots[i];
            m[i][i - 1] = h0 / 6.0;
            m[i][i] = (h0 + h1) / 3.0;
            m[i][i + 1] = h1 / 6.0;
            rhs[i] = (values[i + 1] - values[i]) / h1 - (values[i] - values[i - 1]) / h0;
        }
        // Gaussian elimination without pivoting (diagonally dominant).
        for col in 0..n {
            for row in col + 1..n {
                if m[row][col] != 0.0 {
                    let f = m[row][col] / m[col][col];
                    for k in col..n {
                        m[row][k] -= f * m[col][k];
                    }
                    rhs[row] -= f * rhs[col];
                }
            }
        }
        let mut sec = vec![0.0; n];
        for row in (0..n).rev() {
            let mut s = rhs[row];
            for k in row + 1..n {
                s -= m[row][k] * sec[k];
            }
            sec[row] = s / m[row][row];
        }
        let mut seg = n - 2;
        for i in 0..n - 1 {
            if x <= knots[i + 1] {
                seg = i;
                break;
            }
        }
        let h = knots[seg + 1] - knots[seg];
        let a = (knots[seg + 1] - x) / h;
        let b = (x - knots[seg]) / h;
        a * values[seg] + b * values[seg + 1]
            + ((a * a * a - a) * sec[seg] + (b * b * b - b) * sec[seg + 1]) * h * h / 6.0
    }

    #[test]
    fn constant_values_give_constant_spline() {
        let fit = fit_natural_spline(&[0.0, 1.0, 2.5, 4.0], &[3.0, 3.0, 3.0, 3.0]).unwrap();
        for i in 0..=40 {
            let x = i as f64 * 0.1;
            assert!((fit.eval(x) - 3.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_knots_reduce_to_line() {
        let fit = fit_natural_spline(&[1.0, 3.0], &[2.0, 8.0]).unwrap();
        assert!((fit.eval(2.0) - 5.0).abs() < 1e-14);
        // extrapolation continues the same line on both sides
        assert!((fit.eval(4.0) - 11.0).abs() < 1e-14);
        assert!((fit.eval(0.0) + 1.0).abs() < 1e-14);
    }

    #[test]
    fn matches_independent_tridiagonal_solve_on_cubic_data() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let values: Vec<f64> = knots.iter().map(|x| x * x * x).collect();
        let fit = fit_natural_spline(&knots, &values).unwrap();
        for i in 0..=30 {
            let x = i as f64 * 0.1;
            let want = reference_natural_spline(&knots, &values, x);
            assert!(
                (fit.eval(x) - want).abs() < 1e-10,
                "x={x}: {} vs {}",
                fit.eval(x),
                want
            );
        }
    }

    #[test]
    fn interpolates_knots_exactly() {
        let knots = [0.0, 1.0, 2.0, 5.0, 7.0];
        let values = [1.0, -2.0, 0.5, 4.0, 3.0];
        let fit = fit_natural_spline(&knots, &values).unwrap();
        for (k, v) in knots.iter().zip(&values) {
            assert!((fit.eval(*k) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn natural_condition_zero_curvature_at_ends() {
        let knots = [0.0, 1.0, 2.0, 3.0, 4.0];
        let values = [0.0, 2.0, 1.0, 3.0, 2.5];
        let fit = fit_natural_spline(&knots, &values).unwrap();
        assert_eq!(fit.second[0], 0.0);
        assert_eq!(*fit.second.last().unwrap(), 0.0);
    }

    #[test]
    fn extrapolation_slope_matches_finite_differences() {
        let fit = fit_natural_spline(&[0.0, 1.0, 2.0], &[1.0, 2.0, 4.0]).unwrap();
        let step = 1e-4;
        let fd = (fit.eval(2.0) - fit.eval(2.0 - step)) / step;
        let extrapolated = fit.eval(3.0);
        assert!((extrapolated - (4.0 + fd * 1.0)).abs() < 1e-8);
    }

    #[test]
    fn derivative_matches_central_differences_in_interior() {
        let knots = [0.0, 1.0, 2.0, 3.0, 4.5];
        let values = [0.3, 1.9, 0.7, 2.2, 2.0];
        let fit = fit_natural_spline(&knots, &values).unwrap();
        let step = 1e-4;
        for x in [0.5, 1.25, 2.75, 3.9] {
            let fd = (fit.eval(x + step) - fit.eval(x - step)) / (2.0 * step);
            assert!((fit.derivative(x) - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_data_reproduced_everywhere() {
        let knots = [0.0, 1.0, 2.0, 3.0];
        let values: Vec<f64> = knots.iter().map(|x| 2.0 * x - 1.0).collect();
        let fit = fit_natural_spline(&knots, &values).unwrap();
        for x in [-1.0, 0.5, 1.7, 2.2, 5.0] {
            assert!((fit.eval(x) - (2.0 * x - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_knots_rejected() {
        assert!(fit_natural_spline(&[0.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }
}
