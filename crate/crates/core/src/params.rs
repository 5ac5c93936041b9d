//! The exponent system: problem powers, Morrey parameter, the dependent
//! Lebesgue exponents and time weights, and the admissibility conditions that
//! the well-posedness theory requires.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Relative slack used for every strict inequality.
pub const STRICT_SLACK: f64 = 1e-9;

/// `a < b` with the relative slack of [`STRICT_SLACK`].
pub fn strictly_less(a: f64, b: f64) -> bool {
    a + STRICT_SLACK * a.abs().max(b.abs()) < b
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemParams {
    pub n: usize,
    pub p1: f64,
    pub p2: f64,
    pub mu: f64,
}

impl ProblemParams {
    /// Structural checks only: `n >= 3`, finite powers above one, `mu >= 0`.
    /// The remaining conditions are reported by [`check_admissible`].
    pub fn new(n: usize, p1: f64, p2: f64, mu: f64) -> Result<Self> {
        if n < 3 {
            return Err(invalid(format!("dimension n = {n} must be at least 3")));
        }
        if ![p1, p2, mu].iter().all(|v| v.is_finite()) {
            return Err(invalid("non-finite problem parameter"));
        }
        if p1 <= 1.0 || p2 <= 1.0 {
            return Err(invalid(format!("powers must exceed one (p1 = {p1}, p2 = {p2})")));
        }
        if mu < 0.0 || mu >= (n - 1) as f64 {
            return Err(invalid(format!("mu = {mu} outside [0, n-1)")));
        }
        Ok(Self { n, p1, p2, mu })
    }

    /// Parameters tied by `p1 = 2 p2 - 1`.
    pub fn scaling_invariant(n: usize, p2: f64, mu: f64) -> Result<Self> {
        Self::new(n, 2.0 * p2 - 1.0, p2, mu)
    }

    /// The shipped experiment configuration.
    pub fn witness() -> Self {
        Self { n: 3, p1: 6.0, p2: 3.5, mu: 0.5 }
    }

    pub fn nf(&self) -> f64 {
        self.n as f64
    }

    pub fn q0(&self) -> f64 {
        (self.nf() - self.mu) * (self.p1 - 1.0) / 2.0
    }

    /// Critical exponent of the boundary data space.
    pub fn qt0(&self) -> f64 {
        (self.nf() - 1.0 - self.mu) * (self.p1 - 1.0) / 2.0
    }

    /// Homogeneity degree of self-similar data, `1/(p2 - 1)`.
    pub fn self_similar_degree(&self) -> f64 {
        1.0 / (self.p2 - 1.0)
    }

    /// Lower bound on `p1` from the critical condition.
    pub fn critical_p1(&self) -> f64 {
        (self.nf() - self.mu) / (self.nf() - self.mu - 2.0)
    }

    pub fn scaling_tied(&self) -> bool {
        let target = 2.0 * self.p2 - 1.0;
        (self.p1 - target).abs() <= 1e-12 * target.abs().max(1.0)
    }
}

impl Default for ProblemParams {
    fn default() -> Self {
        Self::witness()
    }
}

/// All exponents derived from a [`ProblemParams`] and a choice of `(q1, q2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentSet {
    pub params: ProblemParams,
    pub q0: f64,
    pub qt0: f64,
    pub q1: f64,
    pub q2: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `q2 / p2`
    pub l_bnd: f64,
    /// `q1 / p1`
    pub l_int: f64,
    /// `(n - mu) q1 / (n - mu + 2 q1)`
    pub l1: f64,
    /// `q0 / p1`
    pub l2: f64,
}

pub fn derive_exponents(params: &ProblemParams, q1: f64, q2: f64) -> Result<ExponentSet> {
    if !q1.is_finite() || !q2.is_finite() {
        return Err(invalid("non-finite exponent"));
    }
    if q1 <= 1.0 || q2 <= 1.0 {
        return Err(invalid(format!("q1 = {q1}, q2 = {q2} must exceed one")));
    }
    let p = params;
    let nm = p.nf() - p.mu;
    let q0 = p.q0();
    Ok(ExponentSet {
        params: *p,
        q0,
        qt0: p.qt0(),
        q1,
        q2,
        alpha: 2.0 / (p.p1 - 1.0) - nm / q1,
        beta: 1.0 / (p.p2 - 1.0) - (nm - 1.0) / q2,
        l_bnd: q2 / p.p2,
        l_int: q1 / p.p1,
        l1: nm * q1 / (nm + 2.0 * q1),
        l2: q0 / p.p1,
    })
}

impl ExponentSet {
    pub fn witness() -> Self {
        derive_exponents(&ProblemParams::witness(), 8.0, 6.0).expect("witness exponents are finite")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub constraints: Vec<Constraint>,
    pub admissible: bool,
    /// The lemma-level range `mu < n - 1`, recorded without being enforced.
    pub lemma_mu_range: bool,
}

impl AdmissibilityReport {
    pub fn failed(&self) -> impl Iterator<Item = &Constraint> {
        self.constraints.iter().filter(|c| !c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Constraint> {
        self.constraints.iter().find(|c| c.name == name)
    }
}

pub const C_CHAIN_ALPHA: &str = "0 < alpha < beta*p2 < 1";
pub const C_CHAIN_BETA: &str = "0 < beta < alpha*p1 < 1";
pub const C_P1_Q1: &str = "p1 < q1";
pub const C_P2_Q2: &str = "p2 < q2";
pub const C_L_BND: &str = "l_bnd = q2/p2 > 1";
pub const C_L_INT: &str = "l_int = q1/p1 > 1";
pub const C_L1: &str = "l1 = (n-mu)q1/(n-mu+2q1) > 1";
/// Equivalent to the critical condition `p1 > (n-mu)/(n-mu-2)`.
pub const C_L2: &str = "p1 > (n-mu)/(n-mu-2)";
pub const C_ALPHA_WINDOW: &str = "alpha < n-1-1/q1";
pub const C_BETA_WINDOW: &str = "beta < n-1";
pub const C_MU_RANGE: &str = "0 <= mu < n-2";
pub const C_QT0: &str = "qt0 > 1";
pub const C_SCALING: &str = "p1 = 2*p2-1";

pub fn check_admissible(e: &ExponentSet) -> AdmissibilityReport {
    let p = &e.params;
    let n = p.nf();
    let lt = strictly_less;
    let mut constraints = Vec::with_capacity(13);
    let mut push = |name: &str, pass: bool, detail: String| {
        constraints.push(Constraint { name: name.to_string(), pass, detail });
    };
    let bp2 = e.beta * p.p2;
    let ap1 = e.alpha * p.p1;
    push(
        C_CHAIN_ALPHA,
        lt(0.0, e.alpha) && lt(e.alpha, bp2) && lt(bp2, 1.0),
        format!("alpha = {}, beta*p2 = {}", e.alpha, bp2),
    );
    push(
        C_CHAIN_BETA,
        lt(0.0, e.beta) && lt(e.beta, ap1) && lt(ap1, 1.0),
        format!("beta = {}, alpha*p1 = {}", e.beta, ap1),
    );
    push(C_P1_Q1, lt(p.p1, e.q1), format!("p1 = {}, q1 = {}", p.p1, e.q1));
    push(C_P2_Q2, lt(p.p2, e.q2), format!("p2 = {}, q2 = {}", p.p2, e.q2));
    push(C_L_BND, lt(1.0, e.l_bnd), format!("l_bnd = {}", e.l_bnd));
    push(C_L_INT, lt(1.0, e.l_int), format!("l_int = {}", e.l_int));
    push(C_L1, lt(1.0, e.l1), format!("l1 = {}", e.l1));
    push(
        C_L2,
        lt(1.0, e.l2),
        format!("l2 = q0/p1 = {}; p1 = {}, (n-mu)/(n-mu-2) = {}", e.l2, p.p1, p.critical_p1()),
    );
    push(
        C_ALPHA_WINDOW,
        lt(e.alpha, n - 1.0 - 1.0 / e.q1),
        format!("alpha = {}, n-1-1/q1 = {}", e.alpha, n - 1.0 - 1.0 / e.q1),
    );
    push(C_BETA_WINDOW, lt(e.beta, n - 1.0), format!("beta = {}", e.beta));
    push(
        C_MU_RANGE,
        p.mu >= 0.0 && lt(p.mu, n - 2.0),
        format!("mu = {}, n-2 = {}", p.mu, n - 2.0),
    );
    push(C_QT0, lt(1.0, e.qt0), format!("qt0 = {}", e.qt0));
    push(C_SCALING, p.scaling_tied(), format!("p1 = {}, 2*p2-1 = {}", p.p1, 2.0 * p.p2 - 1.0));
    let admissible = constraints.iter().all(|c| c.pass);
    AdmissibilityReport {
        constraints,
        admissible,
        lemma_mu_range: p.mu >= 0.0 && p.mu < n - 1.0,
    }
}

/// Why no admissible pair exists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Infeasibility {
    pub empty_interval: String,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    fn open() -> Self {
        Self { lo: f64::NEG_INFINITY, hi: f64::INFINITY }
    }
    fn above(&mut self, v: f64) {
        self.lo = self.lo.max(v);
    }
    fn below(&mut self, v: f64) {
        self.hi = self.hi.min(v);
    }
    fn nonempty(&self) -> bool {
        strictly_less(self.lo, self.hi)
    }
    /// Geometric midpoint for a positive interval.
    fn mid(&self) -> f64 {
        debug_assert!(self.lo >= 0.0);
        if self.lo > 0.0 {
            (self.lo * self.hi).sqrt()
        } else {
            0.5 * self.hi
        }
    }
}

/// Solve the admissibility system for `(q1, q2)`.
///
/// Every condition is monotone in `x = 1/q1` and, once `q1` is fixed, in
/// `y = 1/q2`. The coupled chains restrict `alpha` to a window in which a
/// compatible `beta` exists, so the feasible `x` form one open interval; `y`
/// then ranges over another. Midpoints are geometric.
pub fn find_admissible(params: &ProblemParams) -> std::result::Result<(f64, f64), Infeasibility> {
    let p = params;
    let n = p.nf();
    let nm = n - p.mu;
    let nm1 = nm - 1.0;
    let infeasible = |which: &str, detail: String| Infeasibility { empty_interval: which.into(), detail };

    // Parameter-only conditions.
    if !p.scaling_tied() {
        return Err(infeasible("params", format!("{C_SCALING} violated")));
    }
    if !(p.mu >= 0.0 && strictly_less(p.mu, n - 2.0)) {
        return Err(infeasible("params", format!("{C_MU_RANGE} violated (mu = {})", p.mu)));
    }
    if !strictly_less(1.0, p.qt0()) {
        return Err(infeasible("params", format!("{C_QT0} violated (qt0 = {})", p.qt0())));
    }
    if !strictly_less(1.0, p.q0() / p.p1) {
        return Err(infeasible(
            "params",
            format!("{C_L2} violated ({} <= {})", p.p1, p.critical_p1()),
        ));
    }

    let a0 = 2.0 / (p.p1 - 1.0); // alpha = a0 - nm x
    let b0 = 1.0 / (p.p2 - 1.0); // beta = b0 - nm1 y

    // Bounds on beta that do not involve alpha.
    let beta_floor = (b0 - nm1 / p.p2).max(0.0); // q2 > p2, beta > 0
    let beta_cap = (1.0 / p.p2).min(n - 1.0).min(b0); // beta p2 < 1, beta < n-1, q2 < inf

    // Window on alpha.
    let mut alpha = Interval::open();
    alpha.above(0.0);
    alpha.below(1.0 / p.p1);
    alpha.above(beta_floor / p.p1); // beta < alpha p1 needs alpha p1 > beta_floor
    alpha.below(p.p2 * beta_cap); // alpha < beta p2 needs alpha / p2 < beta_cap

    // Convert to x = 1/q1 and intersect with the x-only conditions.
    let mut x = Interval { lo: (a0 - alpha.hi) / nm, hi: (a0 - alpha.lo) / nm };
    x.above(0.0);
    x.below(1.0 / p.p1); // q1 > p1
    x.below((nm - 2.0) / nm); // l1 > 1
    if nm1 > 0.0 {
        x.above((a0 - (n - 1.0)) / nm1); // alpha < n-1-x
    }
    if !x.nonempty() {
        return Err(infeasible(
            "1/q1",
            format!("1/q1 interval ({}, {}) is empty", x.lo, x.hi),
        ));
    }
    let xm = x.mid();
    let am = a0 - nm * xm;

    let mut beta = Interval::open();
    beta.above(beta_floor);
    beta.above(am / p.p2);
    beta.below(beta_cap);
    beta.below(am * p.p1);
    let mut y = Interval { lo: (b0 - beta.hi) / nm1, hi: (b0 - beta.lo) / nm1 };
    y.above(0.0);
    y.below(1.0 / p.p2);
    if !y.nonempty() {
        return Err(infeasible(
            "1/q2",
            format!("1/q2 interval ({}, {}) is empty at q1 = {}", y.lo, y.hi, 1.0 / xm),
        ));
    }
    let ym = y.mid();
    Ok((1.0 / xm, 1.0 / ym))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn witness_exponents() {
        let e = ExponentSet::witness();
        assert!(close(e.alpha, 0.0875, 1e-12));
        assert!(close(e.beta, 0.15, 1e-12));
        assert!(close(e.q0, 6.25, 1e-12));
        assert!(close(e.qt0, 3.75, 1e-12));
        let r = check_admissible(&e);
        assert_eq!(r.constraints.len(), 13);
        assert!(r.admissible, "{:?}", r.failed().collect::<Vec<_>>());
    }

    #[test]
    fn four_dimensional_example() {
        let p = ProblemParams::new(4, 5.0, 3.0, 0.0).unwrap();
        let e = derive_exponents(&p, 10.0, 8.0).unwrap();
        assert!(close(e.alpha, 0.1, 1e-12));
        assert!(close(e.beta, 0.125, 1e-12));
    }

    #[test]
    fn beta_vanishes_at_critical_boundary_exponent() {
        let p = ProblemParams::witness();
        let e = derive_exponents(&p, 8.0, 3.75).unwrap();
        assert!(e.beta.abs() < 1e-15);
        assert!(!check_admissible(&e).get(C_CHAIN_BETA).unwrap().pass);
    }

    #[test]
    fn subcritical_power_fails() {
        let p = ProblemParams::new(3, 4.0, 2.5, 0.5).unwrap();
        let e = derive_exponents(&p, 8.0, 6.0).unwrap();
        let r = check_admissible(&e);
        assert!(!r.admissible);
        assert!(!r.get(C_L2).unwrap().pass);
        assert!(find_admissible(&p).is_err());
    }

    #[test]
    fn q1_equal_to_p1_fails() {
        let p = ProblemParams::witness();
        let e = derive_exponents(&p, p.p1, 6.0).unwrap();
        assert!(!check_admissible(&e).get(C_P1_Q1).unwrap().pass);
    }

    #[test]
    fn non_finite_inputs_rejected() {
        let p = ProblemParams::witness();
        assert!(derive_exponents(&p, f64::NAN, 6.0).is_err());
        assert!(ProblemParams::new(3, f64::INFINITY, 3.5, 0.5).is_err());
        assert!(ProblemParams::new(2, 3.0, 2.0, 0.0).is_err());
    }

    #[test]
    fn find_admissible_witness_params() {
        let p = ProblemParams::witness();
        let (q1, q2) = find_admissible(&p).unwrap();
        let e = derive_exponents(&p, q1, q2).unwrap();
        assert!(check_admissible(&e).admissible, "q1={q1} q2={q2}");
    }

    #[test]
    fn scaling_identity() {
        let p = ProblemParams::witness();
        assert!((2.0 / (p.p1 - 1.0) - 1.0 / (p.p2 - 1.0)).abs() < 1e-15);
    }
}
