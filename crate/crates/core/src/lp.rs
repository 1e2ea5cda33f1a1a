//! Exact rational simplex (two-phase, Bland's rule) for the small polytopes
//! that arise from query hypergraphs.
//!
//! All variables are implicitly non-negative. Bland's rule makes every solve
//! deterministic and cycle-free; [`LinearProgram::solve_lexmin`] additionally
//! picks the lexicographically least optimal point when the optimum is not
//! unique.

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::Rational;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub coeffs: Vec<Rational>,
    pub relation: Relation,
    pub rhs: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LpError {
    #[error("linear program is infeasible")]
    Infeasible,
    #[error("linear program is unbounded")]
    Unbounded,
    #[error("constraint {row} has {got} coefficients, expected {expected}")]
    Dimension { row: usize, got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub value: Rational,
    pub x: Vec<Rational>,
}

#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub sense: Sense,
    pub objective: Vec<Rational>,
    pub constraints: Vec<Constraint>,
}

impl LinearProgram {
    pub fn new(sense: Sense, objective: Vec<Rational>) -> Self {
        LinearProgram { sense, objective, constraints: Vec::new() }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn constrain(&mut self, coeffs: Vec<Rational>, relation: Relation, rhs: Rational) -> &mut Self {
        self.constraints.push(Constraint { coeffs, relation, rhs });
        self
    }

    pub fn solve(&self) -> Result<Solution, LpError> {
        for (row, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != self.num_vars() {
                return Err(LpError::Dimension { row, got: c.coeffs.len(), expected: self.num_vars() });
            }
        }
        let mut tableau = Tableau::build(self);
        tableau.phase_one()?;
        let sign = match self.sense {
            Sense::Maximize => Rational::one(),
            Sense::Minimize => -Rational::one(),
        };
        let costs: Vec<Rational> = self.objective.iter().map(|c| c * &sign).collect();
        tableau.phase_two(&costs)?;
        let x = tableau.primal(self.num_vars());
        let value = x.iter().zip(&self.objective).map(|(a, b)| a * b).sum();
        Ok(Solution { value, x })
    }

    /// Optimal solution that is lexicographically least among all optima.
    pub fn solve_lexmin(&self) -> Result<Solution, LpError> {
        let first = self.solve()?;
        let mut fixed = self.clone();
        fixed.constrain(self.objective.clone(), Relation::Eq, first.value.clone());
        let n = self.num_vars();
        let mut x = Vec::with_capacity(n);
        for i in 0..n {
            let mut obj = vec![Rational::zero(); n];
            obj[i] = Rational::one();
            let lp = LinearProgram { sense: Sense::Minimize, objective: obj, constraints: fixed.constraints.clone() };
            let s = lp.solve()?;
            let mut row = vec![Rational::zero(); n];
            row[i] = Rational::one();
            fixed.constrain(row, Relation::Eq, s.value.clone());
            x.push(s.value);
        }
        Ok(Solution { value: first.value, x })
    }
}

struct Tableau {
    // rows[i] = coefficients over all columns followed by the rhs
    rows: Vec<Vec<Rational>>,
    basis: Vec<usize>,
    num_cols: usize,
    first_artificial: usize,
}

impl Tableau {
    fn build(lp: &LinearProgram) -> Self {
        let n = lp.num_vars();
        let mut normalized = Vec::with_capacity(lp.constraints.len());
        for c in &lp.constraints {
            if c.rhs.is_negative() {
                let rel = match c.relation {
                    Relation::Le => Relation::Ge,
                    Relation::Ge => Relation::Le,
                    Relation::Eq => Relation::Eq,
                };
                normalized.push((c.coeffs.iter().map(|v| -v).collect::<Vec<_>>(), rel, -&c.rhs));
            } else {
                normalized.push((c.coeffs.clone(), c.relation, c.rhs.clone()));
            }
        }
        let slacks = normalized.iter().filter(|c| c.1 != Relation::Eq).count();
        let artificials = normalized.iter().filter(|c| c.1 != Relation::Le).count();
        let num_cols = n + slacks + artificials;
        let first_artificial = n + slacks;
        let mut rows = Vec::with_capacity(normalized.len());
        let mut basis = Vec::with_capacity(normalized.len());
        let (mut s, mut a) = (n, first_artificial);
        for (coeffs, rel, rhs) in normalized {
            let mut row = vec![Rational::zero(); num_cols + 1];
            for (j, v) in coeffs.into_iter().enumerate() {
                row[j] = v;
            }
            row[num_cols] = rhs;
            match rel {
                Relation::Le => {
                    row[s] = Rational::one();
                    basis.push(s);
                    s += 1;
                }
                Relation::Ge => {
                    row[s] = -Rational::one();
                    s += 1;
                    row[a] = Rational::one();
                    basis.push(a);
                    a += 1;
                }
                Relation::Eq => {
                    row[a] = Rational::one();
                    basis.push(a);
                    a += 1;
                }
            }
            rows.push(row);
        }
        Tableau { rows, basis, num_cols, first_artificial }
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let inv = self.rows[r][c].recip();
        for v in self.rows[r].iter_mut() {
            *v *= &inv;
        }
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let f = row[c].clone();
            for (v, p) in row.iter_mut().zip(&pivot_row) {
                if !p.is_zero() {
                    *v -= &f * p;
                }
            }
        }
        self.basis[r] = c;
    }

    /// Maximizes `costs · x` over columns `< allowed`, starting from the
    /// current feasible basis.
    fn optimize(&mut self, costs: &[Rational], allowed: usize) -> Result<(), LpError> {
        let zero = Rational::zero();
        loop {
            // Bland: lowest-index column with negative reduced cost enters.
            let mut entering = None;
            for j in 0..allowed {
                if self.basis.contains(&j) {
                    continue;
                }
                let mut reduced = -costs.get(j).unwrap_or(&zero).clone();
                for (i, &b) in self.basis.iter().enumerate() {
                    let cb = costs.get(b).unwrap_or(&zero);
                    if !cb.is_zero() && !self.rows[i][j].is_zero() {
                        reduced += cb * &self.rows[i][j];
                    }
                }
                if reduced.is_negative() {
                    entering = Some(j);
                    break;
                }
            }
            let Some(c) = entering else { return Ok(()) };
            let mut leaving: Option<(usize, Rational)> = None;
            for (i, row) in self.rows.iter().enumerate() {
                if row[c].is_positive() {
                    let ratio = &row[self.num_cols] / &row[c];
                    let better = match &leaving {
                        None => true,
                        Some((li, lr)) => ratio < *lr || (ratio == *lr && self.basis[i] < self.basis[*li]),
                    };
                    if better {
                        leaving = Some((i, ratio));
                    }
                }
            }
            let Some((r, _)) = leaving else { return Err(LpError::Unbounded) };
            self.pivot(r, c);
        }
    }

    fn phase_one(&mut self) -> Result<(), LpError> {
        if self.first_artificial == self.num_cols {
            return Ok(());
        }
        let mut costs = vec![Rational::zero(); self.num_cols];
        for c in costs.iter_mut().skip(self.first_artificial) {
            *c = -Rational::one();
        }
        self.optimize(&costs, self.num_cols)?;
        let infeasibility: Rational = self
            .basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= self.first_artificial)
            .map(|(i, _)| self.rows[i][self.num_cols].clone())
            .sum();
        if infeasibility.is_positive() {
            return Err(LpError::Infeasible);
        }
        // drive zero-valued artificials out of the basis; drop redundant rows
        let mut i = 0;
        while i < self.rows.len() {
            if self.basis[i] >= self.first_artificial {
                match (0..self.first_artificial).find(|&j| !self.rows[i][j].is_zero()) {
                    Some(j) => {
                        self.pivot(i, j);
                        i += 1;
                    }
                    None => {
                        self.rows.remove(i);
                        self.basis.remove(i);
                    }
                }
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    fn phase_two(&mut self, costs: &[Rational]) -> Result<(), LpError> {
        let allowed = self.first_artificial;
        self.optimize(costs, allowed)
    }

    fn primal(&self, n: usize) -> Vec<Rational> {
        let mut x = vec![Rational::zero(); n];
        for (i, &b) in self.basis.iter().enumerate() {
            if b < n {
                x[b] = self.rows[i][self.num_cols].clone();
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};

    fn r(v: &[i64]) -> Vec<Rational> {
        v.iter().map(|&x| int(x)).collect()
    }

    #[test]
    fn single_variable_bound() {
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1]));
        lp.constrain(r(&[1]), Relation::Le, int(1));
        let s = lp.solve().unwrap();
        assert_eq!(s.value, int(1));
        assert_eq!(s.x, r(&[1]));
    }

    #[test]
    fn triangle_packing() {
        // u1+u3 <= 1 (x), u1+u2 <= 1 (y), u2+u3 <= 1 (z)
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1, 1, 1]));
        lp.constrain(r(&[1, 0, 1]), Relation::Le, int(1))
            .constrain(r(&[1, 1, 0]), Relation::Le, int(1))
            .constrain(r(&[0, 1, 1]), Relation::Le, int(1));
        let s = lp.solve().unwrap();
        assert_eq!(s.value, frac(3, 2));
        assert_eq!(s.x, vec![frac(1, 2); 3]);
    }

    #[test]
    fn degenerate_optimum_is_lexicographically_least() {
        // maximize x + y subject to x + y <= 1: every point on the segment is optimal
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1, 1]));
        lp.constrain(r(&[1, 1]), Relation::Le, int(1));
        let s = lp.solve_lexmin().unwrap();
        assert_eq!(s.value, int(1));
        assert_eq!(s.x, r(&[0, 1]));
        // deterministic across calls
        assert_eq!(lp.solve().unwrap(), lp.solve().unwrap());
    }

    #[test]
    fn cover_minimization_with_ge_rows() {
        // path x0 - x1 - x2 with edges a=(x0,x1), b=(x1,x2)
        let mut lp = LinearProgram::new(Sense::Minimize, r(&[1, 1]));
        lp.constrain(r(&[1, 0]), Relation::Ge, int(1))
            .constrain(r(&[1, 1]), Relation::Ge, int(1))
            .constrain(r(&[0, 1]), Relation::Ge, int(1));
        assert_eq!(lp.solve().unwrap().value, int(2));
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1]));
        lp.constrain(r(&[1]), Relation::Le, int(1)).constrain(r(&[1]), Relation::Ge, int(2));
        assert_eq!(lp.solve(), Err(LpError::Infeasible));
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1, 0]));
        lp.constrain(r(&[0, 1]), Relation::Le, int(1));
        assert_eq!(lp.solve(), Err(LpError::Unbounded));
    }

    #[test]
    fn equality_and_negative_rhs() {
        // x + y = 2, x - y <= -1  (i.e. y >= x + 1), minimize x
        let mut lp = LinearProgram::new(Sense::Minimize, r(&[1, 0]));
        lp.constrain(r(&[1, 1]), Relation::Eq, int(2)).constrain(r(&[1, -1]), Relation::Le, int(-1));
        let s = lp.solve().unwrap();
        assert_eq!(s.value, int(0));
        assert_eq!(s.x, r(&[0, 2]));
    }

    #[test]
    fn redundant_equalities_are_dropped() {
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1, 2]));
        lp.constrain(r(&[1, 1]), Relation::Eq, int(1)).constrain(r(&[2, 2]), Relation::Eq, int(2));
        let s = lp.solve().unwrap();
        assert_eq!(s.value, int(2));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mut lp = LinearProgram::new(Sense::Maximize, r(&[1, 1]));
        lp.constrain(r(&[1]), Relation::Le, int(1));
        assert!(matches!(lp.solve(), Err(LpError::Dimension { .. })));
    }
}
