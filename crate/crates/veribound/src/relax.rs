//! Sound per-operator linear relaxations on preactivation boxes.
//!
//! Each rule returns per-parent coefficient matrices and bias vectors such
//! that `Σ A_l x_j + b_l ≤ h(x) ≤ Σ A_u x_j + b_u` holds elementwise on the
//! given box. Affine operators relax exactly; curved operators use the
//! classical constructions: the three-case ReLU rule, secant/tangent pairs
//! classified by convexity for sin/cos/tanh/sigmoid, McCormick planes for
//! elementwise products, and midpoint-tangent/chord for squares.

use crate::graph::{sigmoid, Node, OpKind};
use crate::interval::Interval;
use ndarray::{Array1, Array2};
use thiserror::Error;

/// Bias padding applied to lines found by numeric tangent search, absorbing
/// floating-point error in the tangency condition.
const TANGENT_PAD: f64 = 1e-9;
/// Bisection tolerance for tangent-point search.
const BISECT_TOL: f64 = 1e-10;
/// Below this width an interval is treated as a point.
const DEGENERATE_WIDTH: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum RelaxError {
    #[error("operator `{0}` has no relaxation rule")]
    UnsupportedOp(&'static str),
    #[error("node `{node}` expects {expected} parent boxes, got {got}")]
    ParentCount { node: String, expected: usize, got: usize },
}

/// Interval bounds on one parent of the node being relaxed.
#[derive(Debug, Clone, PartialEq)]
pub struct PreBox {
    pub lower: Array1<f64>,
    pub upper: Array1<f64>,
}

impl PreBox {
    pub fn new(lower: Array1<f64>, upper: Array1<f64>) -> Self {
        debug_assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn from_interval(iv: Interval) -> Self {
        Self::new(Array1::from_elem(1, iv.lo), Array1::from_elem(1, iv.hi))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn interval(&self, i: usize) -> Interval {
        Interval::new(self.lower[i], self.upper[i])
    }
}

/// A sound linear relaxation of one node's primitive map.
#[derive(Debug, Clone)]
pub struct LinearRelaxation {
    /// Per-parent lower coefficient matrices `A_l^(j)`.
    pub lower_coeffs: Vec<Array2<f64>>,
    pub lower_bias: Array1<f64>,
    /// Per-parent upper coefficient matrices `A_u^(j)`.
    pub upper_coeffs: Vec<Array2<f64>>,
    pub upper_bias: Array1<f64>,
}

impl LinearRelaxation {
    /// Exact relaxation of a multi-parent affine map `Σ M_j x_j + c`.
    pub fn exact(coeffs: Vec<Array2<f64>>, bias: Array1<f64>) -> Self {
        Self {
            lower_coeffs: coeffs.clone(),
            lower_bias: bias.clone(),
            upper_coeffs: coeffs,
            upper_bias: bias,
        }
    }

    /// Relaxation of a parentless node (constant payload).
    pub fn constant(value: Array1<f64>) -> Self {
        Self::exact(Vec::new(), value)
    }

    /// Elementwise relaxation from per-coordinate lower/upper lines.
    fn diagonal(lower: &[Line], upper: &[Line]) -> Self {
        let ls = Array1::from_iter(lower.iter().map(|l| l.slope));
        let lb = Array1::from_iter(lower.iter().map(|l| l.bias));
        let us = Array1::from_iter(upper.iter().map(|l| l.slope));
        let ub = Array1::from_iter(upper.iter().map(|l| l.bias));
        Self {
            lower_coeffs: vec![Array2::from_diag(&ls)],
            lower_bias: lb,
            upper_coeffs: vec![Array2::from_diag(&us)],
            upper_bias: ub,
        }
    }
}

/// A scalar line `slope * x + bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub slope: f64,
    pub bias: f64,
}

impl Line {
    fn new(slope: f64, bias: f64) -> Self {
        Self { slope, bias }
    }

    fn constant(c: f64) -> Self {
        Self { slope: 0.0, bias: c }
    }

    fn tangent_at(t: f64, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Self {
        let s = df(t);
        Self { slope: s, bias: f(t) - s * t }
    }

    fn through(x: f64, y: f64, slope: f64) -> Self {
        Self { slope, bias: y - slope * x }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.slope * x + self.bias
    }

    fn pad_down(mut self) -> Self {
        self.bias -= TANGENT_PAD;
        self
    }

    fn pad_up(mut self) -> Self {
        self.bias += TANGENT_PAD;
        self
    }

    /// Shift the argument: a line in `z = x + shift` becomes a line in `x`.
    fn shift_arg(mut self, shift: f64) -> Self {
        self.bias += self.slope * shift;
        self
    }
}

/// Which McCormick plane to select on each side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaneChoice {
    First,
    Second,
}

/// Knobs shared by every relaxation dispatch.
#[derive(Debug, Clone)]
pub struct RelaxParams {
    /// Fixed lower slope for unstable ReLU coordinates; `None` selects the
    /// steeper envelope side per coordinate (`1` when `u > -l`, else `0`).
    pub relu_alpha: Option<f64>,
    pub mc_lower: PlaneChoice,
    pub mc_upper: PlaneChoice,
}

impl Default for RelaxParams {
    fn default() -> Self {
        Self { relu_alpha: None, mc_lower: PlaneChoice::First, mc_upper: PlaneChoice::First }
    }
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

/// Per-coordinate ReLU rule: identity when stably active, zero when stably
/// inactive, otherwise lower slope `alpha` and the chord upper bound.
pub fn relu_lines(iv: Interval, alpha: f64) -> (Line, Line) {
    let (l, u) = (iv.lo, iv.hi);
    if u <= 0.0 {
        (Line::constant(0.0), Line::constant(0.0))
    } else if l >= 0.0 {
        (Line::new(1.0, 0.0), Line::new(1.0, 0.0))
    } else {
        let s = u / (u - l);
        (Line::new(alpha, 0.0), Line::new(s, -s * l))
    }
}

pub fn relax_relu(pre: &PreBox, alpha: f64) -> LinearRelaxation {
    per_coordinate(pre, |iv| relu_lines(iv, alpha))
}

fn relax_relu_with(pre: &PreBox, params: &RelaxParams) -> LinearRelaxation {
    per_coordinate(pre, |iv| {
        let alpha = params
            .relu_alpha
            .unwrap_or(if iv.hi > -iv.lo { 1.0 } else { 0.0 });
        relu_lines(iv, alpha)
    })
}

// ---------------------------------------------------------------------------
// Step (Heaviside gate)
// ---------------------------------------------------------------------------

pub fn step_lines(iv: Interval) -> (Line, Line) {
    if iv.hi <= 0.0 {
        (Line::constant(0.0), Line::constant(0.0))
    } else if iv.lo > 0.0 {
        (Line::constant(1.0), Line::constant(1.0))
    } else {
        (Line::constant(0.0), Line::constant(1.0))
    }
}

// ---------------------------------------------------------------------------
// Curved unary operators: sin, cos, tanh, sigmoid
// ---------------------------------------------------------------------------

/// Convexity orientation of a mixed interval around a single inflection.
#[derive(Clone, Copy, PartialEq)]
enum Orient {
    /// Convex on `[l, c]`, concave on `[c, u]`.
    ConvexLeft,
    /// Concave on `[l, c]`, convex on `[c, u]`.
    ConcaveLeft,
}

/// Bisect `g` for a sign change on `[a, b]`; the value at `a` is given.
fn bisect(mut a: f64, mut b: f64, ga: f64, g: impl Fn(f64) -> f64) -> f64 {
    if ga == 0.0 {
        return a;
    }
    let sign_a = ga > 0.0;
    for _ in 0..200 {
        if b - a < BISECT_TOL {
            break;
        }
        let m = 0.5 * (a + b);
        if (g(m) > 0.0) == sign_a {
            a = m;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Lower bound line for an interval `[l, u]` crossing one inflection `c`.
fn mixed_lower(
    l: f64,
    u: f64,
    c: f64,
    orient: Orient,
    f: &impl Fn(f64) -> f64,
    df: &impl Fn(f64) -> f64,
) -> Line {
    let chord = (f(u) - f(l)) / (u - l);
    let line = match orient {
        Orient::ConvexLeft => {
            // Tangent on the convex branch [l, c], required to pass at or
            // below (u, f(u)).
            let gap = |t: f64| f(t) + df(t) * (u - t) - f(u);
            let (gl, gc) = (gap(l), gap(c));
            if gc <= 0.0 {
                Line::tangent_at(c, f, df)
            } else if gl <= 0.0 {
                let t = bisect(l, c, gl, gap);
                Line::tangent_at(t, f, df)
            } else {
                // No sound tangent exists; anchor at the left endpoint with a
                // slope shallow enough for both branches.
                Line::through(l, f(l), df(l).min(chord))
            }
        }
        Orient::ConcaveLeft => {
            // Tangent on the convex branch [c, u], passing at or below
            // (l, f(l)).
            let gap = |t: f64| f(t) + df(t) * (l - t) - f(l);
            let (gc, gu) = (gap(c), gap(u));
            if gc <= 0.0 {
                Line::tangent_at(c, f, df)
            } else if gu <= 0.0 {
                let t = bisect(c, u, gc, gap);
                Line::tangent_at(t, f, df)
            } else {
                Line::through(u, f(u), df(u).max(chord))
            }
        }
    };
    line.pad_down()
}

/// Upper bound line for an interval `[l, u]` crossing one inflection `c`.
fn mixed_upper(
    l: f64,
    u: f64,
    c: f64,
    orient: Orient,
    f: &impl Fn(f64) -> f64,
    df: &impl Fn(f64) -> f64,
) -> Line {
    let chord = (f(u) - f(l)) / (u - l);
    let line = match orient {
        Orient::ConvexLeft => {
            // Tangent on the concave branch [c, u], passing at or above
            // (l, f(l)).
            let gap = |t: f64| f(t) + df(t) * (l - t) - f(l);
            let (gc, gu) = (gap(c), gap(u));
            if gc >= 0.0 {
                Line::tangent_at(c, f, df)
            } else if gu >= 0.0 {
                let t = bisect(c, u, gc, gap);
                Line::tangent_at(t, f, df)
            } else {
                Line::through(u, f(u), df(u).min(chord))
            }
        }
        Orient::ConcaveLeft => {
            // Tangent on the concave branch [l, c], passing at or above
            // (u, f(u)).
            let gap = |t: f64| f(t) + df(t) * (u - t) - f(u);
            let (gl, gc) = (gap(l), gap(c));
            if gc >= 0.0 {
                Line::tangent_at(c, f, df)
            } else if gl >= 0.0 {
                let t = bisect(l, c, gl, gap);
                Line::tangent_at(t, f, df)
            } else {
                Line::through(l, f(l), df(l).max(chord))
            }
        }
    };
    line.pad_up()
}

/// Secant over `[l, u]` and tangent at the midpoint, the sound pair for a
/// purely concave or purely convex stretch.
fn secant_and_midpoint(
    l: f64,
    u: f64,
    f: &impl Fn(f64) -> f64,
    df: &impl Fn(f64) -> f64,
) -> (Line, Line) {
    let secant = Line::through(l, f(l), (f(u) - f(l)) / (u - l));
    let tangent = Line::tangent_at(0.5 * (l + u), f, df);
    (secant, tangent)
}

fn degenerate_lines(l: f64, u: f64, f: &impl Fn(f64) -> f64, lipschitz: f64) -> (Line, Line) {
    // Sound for any `lipschitz`-Lipschitz map; collapses to the exact value
    // at zero width.
    let w = (u - l) * lipschitz;
    let (fl, fu) = (f(l), f(u));
    (Line::constant(fl.min(fu) - w), Line::constant(fl.max(fu) + w))
}

/// Sine relaxation on the principal branch, extended by periodic reduction.
/// Intervals spanning at least one full period get constant bounds.
pub fn sin_lines(iv: Interval) -> (Line, Line) {
    use std::f64::consts::{PI, TAU};
    let (l0, u0) = (iv.lo, iv.hi);
    if u0 - l0 < DEGENERATE_WIDTH {
        return degenerate_lines(l0, u0, &f64::sin, 1.0);
    }
    if u0 - l0 >= TAU {
        return (Line::constant(-1.0), Line::constant(1.0));
    }
    // Shift so the left endpoint lands in [-π, π).
    let k = ((l0 + PI) / TAU).floor();
    let shift = k * TAU;
    let (l, u) = (l0 - shift, u0 - shift);

    let f = f64::sin;
    let df = f64::cos;
    // Inflections of sin strictly inside (l, u): multiples of π.
    let inflections: Vec<f64> = [0.0, PI, TAU]
        .into_iter()
        .filter(|&c| l < c && c < u)
        .collect();
    let (lower, upper) = match inflections.len() {
        0 => {
            let concave = (0.5 * (l + u)).sin() > 0.0;
            let (secant, tangent) = secant_and_midpoint(l, u, &f, &df);
            if concave {
                (secant, tangent)
            } else {
                (tangent, secant)
            }
        }
        1 => {
            let c = inflections[0];
            // sin is convex where it is negative.
            let orient = if (0.5 * (l + c)).sin() < 0.0 {
                Orient::ConvexLeft
            } else {
                Orient::ConcaveLeft
            };
            (mixed_lower(l, u, c, orient, &f, &df), mixed_upper(l, u, c, orient, &f, &df))
        }
        _ => {
            // Two inflections inside one period: fall back to the exact range
            // as constant bounds.
            let range = Interval::new(l, u).sin_range();
            (Line::constant(range.lo), Line::constant(range.hi))
        }
    };
    (lower.shift_arg(-shift), upper.shift_arg(-shift))
}

pub fn relax_sin(pre: &PreBox) -> LinearRelaxation {
    per_coordinate(pre, sin_lines)
}

/// Cosine is relaxed as `sin(x + π/2)`.
pub fn cos_lines(iv: Interval) -> (Line, Line) {
    let s = std::f64::consts::FRAC_PI_2;
    let (lo, hi) = sin_lines(Interval::new(iv.lo + s, iv.hi + s));
    (lo.shift_arg(s), hi.shift_arg(s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SShape {
    Tanh,
    Sigmoid,
}

impl SShape {
    fn f(&self, x: f64) -> f64 {
        match self {
            SShape::Tanh => x.tanh(),
            SShape::Sigmoid => sigmoid(x),
        }
    }

    fn df(&self, x: f64) -> f64 {
        match self {
            SShape::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            SShape::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
        }
    }
}

/// Tanh/sigmoid relaxation: convex below zero, concave above, with the mixed
/// region handled by the same tangent search as sine.
pub fn sshape_lines(kind: SShape, iv: Interval) -> (Line, Line) {
    let (l, u) = (iv.lo, iv.hi);
    let f = |x: f64| kind.f(x);
    let df = |x: f64| kind.df(x);
    if u - l < DEGENERATE_WIDTH {
        return degenerate_lines(l, u, &f, 1.0);
    }
    if u <= 0.0 {
        let (secant, tangent) = secant_and_midpoint(l, u, &f, &df);
        (tangent, secant)
    } else if l >= 0.0 {
        let (secant, tangent) = secant_and_midpoint(l, u, &f, &df);
        (secant, tangent)
    } else {
        (
            mixed_lower(l, u, 0.0, Orient::ConvexLeft, &f, &df),
            mixed_upper(l, u, 0.0, Orient::ConvexLeft, &f, &df),
        )
    }
}

pub fn relax_sshape(kind: SShape, pre: &PreBox) -> LinearRelaxation {
    per_coordinate(pre, |iv| sshape_lines(kind, iv))
}

// ---------------------------------------------------------------------------
// Square
// ---------------------------------------------------------------------------

/// Convex parabola: tangent at the midpoint below, chord above.
pub fn square_lines(iv: Interval) -> (Line, Line) {
    let (l, u) = (iv.lo, iv.hi);
    let m = 0.5 * (l + u);
    let lower = Line::new(2.0 * m, -m * m);
    let upper = Line::new(l + u, -l * u);
    (lower, upper)
}

pub fn relax_square(pre: &PreBox) -> LinearRelaxation {
    per_coordinate(pre, square_lines)
}

// ---------------------------------------------------------------------------
// Elementwise multiplication (McCormick)
// ---------------------------------------------------------------------------

/// One McCormick plane `cx·x + cy·y + bias`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McPlane {
    pub cx: f64,
    pub cy: f64,
    pub bias: f64,
}

impl McPlane {
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.cx * x + self.cy * y + self.bias
    }
}

/// The four optimal planes bounding `x·y` on a rectangle: two lower and two
/// upper. Any convex combination within a side stays valid.
pub fn mccormick_planes(x: Interval, y: Interval) -> ([McPlane; 2], [McPlane; 2]) {
    let (lx, ux, ly, uy) = (x.lo, x.hi, y.lo, y.hi);
    let lower = [
        McPlane { cx: ly, cy: lx, bias: -lx * ly },
        McPlane { cx: uy, cy: ux, bias: -ux * uy },
    ];
    let upper = [
        McPlane { cx: ly, cy: ux, bias: -ux * ly },
        McPlane { cx: uy, cy: lx, bias: -lx * uy },
    ];
    (lower, upper)
}

pub fn relax_mul(
    pre_x: &PreBox,
    pre_y: &PreBox,
    lower_choice: PlaneChoice,
    upper_choice: PlaneChoice,
) -> LinearRelaxation {
    let d = pre_x.dim();
    let pick = |c: PlaneChoice| match c {
        PlaneChoice::First => 0,
        PlaneChoice::Second => 1,
    };
    let mut lx = Array1::zeros(d);
    let mut ly = Array1::zeros(d);
    let mut lb = Array1::zeros(d);
    let mut ux = Array1::zeros(d);
    let mut uy = Array1::zeros(d);
    let mut ub = Array1::zeros(d);
    for i in 0..d {
        let (lower, upper) = mccormick_planes(pre_x.interval(i), pre_y.interval(i));
        let lo = lower[pick(lower_choice)];
        let up = upper[pick(upper_choice)];
        lx[i] = lo.cx;
        ly[i] = lo.cy;
        lb[i] = lo.bias;
        ux[i] = up.cx;
        uy[i] = up.cy;
        ub[i] = up.bias;
    }
    LinearRelaxation {
        lower_coeffs: vec![Array2::from_diag(&lx), Array2::from_diag(&ly)],
        lower_bias: lb,
        upper_coeffs: vec![Array2::from_diag(&ux), Array2::from_diag(&uy)],
        upper_bias: ub,
    }
}

// ---------------------------------------------------------------------------
// Affine family (exact)
// ---------------------------------------------------------------------------

/// Single-parent affine map: exact on both sides.
pub fn relax_affine(weight: &Array2<f64>, bias: &Array1<f64>) -> LinearRelaxation {
    LinearRelaxation::exact(vec![weight.clone()], bias.clone())
}

fn identity(d: usize) -> Array2<f64> {
    Array2::eye(d)
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

/// Relax one node given the interval boxes of its parents.
pub fn relax_node(
    node: &Node,
    parent_boxes: &[PreBox],
    params: &RelaxParams,
) -> Result<LinearRelaxation, RelaxError> {
    let expect = |n: usize| -> Result<(), RelaxError> {
        if parent_boxes.len() != n {
            Err(RelaxError::ParentCount {
                node: node.name.clone(),
                expected: n,
                got: parent_boxes.len(),
            })
        } else {
            Ok(())
        }
    };
    Ok(match &node.kind {
        OpKind::Input => return Err(RelaxError::UnsupportedOp("input")),
        OpKind::Constant(c) => LinearRelaxation::constant(c.clone()),
        OpKind::Affine { weight, bias } => relax_affine(weight, bias),
        OpKind::Add => {
            let d = node.dim;
            LinearRelaxation::exact(vec![identity(d), identity(d)], Array1::zeros(d))
        }
        OpKind::Sub => {
            let d = node.dim;
            LinearRelaxation::exact(vec![identity(d), -identity(d)], Array1::zeros(d))
        }
        OpKind::Neg => LinearRelaxation::exact(vec![-identity(node.dim)], Array1::zeros(node.dim)),
        OpKind::Scale(k) => {
            LinearRelaxation::exact(vec![identity(node.dim) * *k], Array1::zeros(node.dim))
        }
        OpKind::Mul => {
            expect(2)?;
            relax_mul(&parent_boxes[0], &parent_boxes[1], params.mc_lower, params.mc_upper)
        }
        OpKind::Relu => {
            expect(1)?;
            relax_relu_with(&parent_boxes[0], params)
        }
        OpKind::Tanh => {
            expect(1)?;
            relax_sshape(SShape::Tanh, &parent_boxes[0])
        }
        OpKind::Sigmoid => {
            expect(1)?;
            relax_sshape(SShape::Sigmoid, &parent_boxes[0])
        }
        OpKind::Sin => {
            expect(1)?;
            relax_sin(&parent_boxes[0])
        }
        OpKind::Cos => {
            expect(1)?;
            per_coordinate(&parent_boxes[0], cos_lines)
        }
        OpKind::Square => {
            expect(1)?;
            relax_square(&parent_boxes[0])
        }
        OpKind::Step => {
            expect(1)?;
            per_coordinate(&parent_boxes[0], step_lines)
        }
        OpKind::Concat => {
            // Block identity: parent j occupies its contiguous row range.
            let total = node.dim;
            let mut coeffs = Vec::with_capacity(parent_boxes.len());
            let mut offset = 0;
            for pb in parent_boxes {
                let mut m = Array2::zeros((total, pb.dim()));
                for i in 0..pb.dim() {
                    m[[offset + i, i]] = 1.0;
                }
                coeffs.push(m);
                offset += pb.dim();
            }
            LinearRelaxation::exact(coeffs, Array1::zeros(total))
        }
        OpKind::Slice { start, end } => {
            expect(1)?;
            let pdim = parent_boxes[0].dim();
            let mut m = Array2::zeros((end - start, pdim));
            for i in 0..(end - start) {
                m[[i, start + i]] = 1.0;
            }
            LinearRelaxation::exact(vec![m], Array1::zeros(end - start))
        }
        OpKind::SumReduce => {
            expect(1)?;
            let pdim = parent_boxes[0].dim();
            LinearRelaxation::exact(vec![Array2::ones((1, pdim))], Array1::zeros(1))
        }
    })
}

fn per_coordinate(pre: &PreBox, rule: impl Fn(Interval) -> (Line, Line)) -> LinearRelaxation {
    let d = pre.dim();
    let mut lower = Vec::with_capacity(d);
    let mut upper = Vec::with_capacity(d);
    for i in 0..d {
        let (lo, hi) = rule(pre.interval(i));
        lower.push(lo);
        upper.push(hi);
    }
    LinearRelaxation::diagonal(&lower, &upper)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn relu_unstable_case() {
        let (lo, hi) = relu_lines(Interval::new(-1.0, 2.0), 0.0);
        assert_eq!(lo, Line { slope: 0.0, bias: 0.0 });
        assert_close(hi.slope, 2.0 / 3.0, 1e-15);
        assert_close(hi.bias, 2.0 / 3.0, 1e-15);
    }

    #[test]
    fn relu_stable_cases() {
        let (lo, hi) = relu_lines(Interval::new(1.0, 5.0), 0.5);
        assert_eq!((lo.slope, lo.bias, hi.slope, hi.bias), (1.0, 0.0, 1.0, 0.0));
        let (lo, hi) = relu_lines(Interval::new(-5.0, -1.0), 0.5);
        assert_eq!((lo.slope, lo.bias, hi.slope, hi.bias), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn relu_upper_touches_both_endpoints() {
        for (l, u) in [(-1.0, 2.0), (-3.5, 0.25), (-0.01, 4.0)] {
            let (_, hi) = relu_lines(Interval::new(l, u), 0.0);
            assert_close(hi.eval(l), 0.0, 1e-12);
            assert_close(hi.eval(u), u, 1e-12);
        }
    }

    #[test]
    fn sin_concave_region_matches_secant_and_midpoint_tangent() {
        let (lo, hi) = sin_lines(Interval::new(0.0, FRAC_PI_2));
        assert_close(lo.slope, 2.0 / PI, 1e-12);
        assert_close(lo.bias, 0.0, 1e-12);
        assert_close(hi.slope, FRAC_PI_4.cos(), 1e-12);
        assert_close(hi.bias, FRAC_PI_4.sin() - FRAC_PI_4 * FRAC_PI_4.cos(), 1e-12);
    }

    #[test]
    fn sin_point_interval_is_exact() {
        let (lo, hi) = sin_lines(Interval::point(0.7));
        assert_eq!(lo.slope, 0.0);
        assert_eq!(hi.slope, 0.0);
        assert_close(lo.bias, 0.7f64.sin(), 1e-15);
        assert_close(hi.bias, 0.7f64.sin(), 1e-15);
    }

    #[test]
    fn sin_period_exceeding_interval_gets_constant_bounds() {
        let (lo, hi) = sin_lines(Interval::new(-3.0 * PI, 3.0 * PI));
        assert_eq!(lo, Line { slope: 0.0, bias: -1.0 });
        assert_eq!(hi, Line { slope: 0.0, bias: 1.0 });
    }

    /// Dense sampling soundness for every scalar rule on many random boxes;
    /// the universal invariant behind all of bound propagation.
    #[test]
    fn scalar_rules_sound_by_sampling() {
        use rand::Rng;
        let mut rng = crate::test_rng(7);
        let cases: Vec<(&str, fn(Interval) -> (Line, Line), fn(f64) -> f64)> = vec![
            ("sin", sin_lines, f64::sin),
            ("cos", cos_lines, f64::cos),
            ("tanh", |iv| sshape_lines(SShape::Tanh, iv), f64::tanh),
            ("sigmoid", |iv| sshape_lines(SShape::Sigmoid, iv), crate::graph::sigmoid),
            ("square", square_lines, |x| x * x),
            ("relu0", |iv| relu_lines(iv, 0.0), |x| x.max(0.0)),
            ("relu1", |iv| relu_lines(iv, 1.0), |x| x.max(0.0)),
            ("step", step_lines, |x| if x > 0.0 { 1.0 } else { 0.0 }),
        ];
        for (name, rule, f) in cases {
            for _ in 0..300 {
                let a: f64 = rng.random_range(-8.0..8.0);
                let w: f64 = rng.random_range(0.0..8.0);
                let iv = Interval::new(a, a + w);
                let (lo, hi) = rule(iv);
                for _ in 0..200 {
                    let x = rng.random_range(iv.lo..=iv.hi);
                    let v = f(x);
                    assert!(
                        lo.eval(x) <= v + 1e-9,
                        "{name}: lower unsound on [{}, {}] at {x}: {} > {v}",
                        iv.lo,
                        iv.hi,
                        lo.eval(x)
                    );
                    assert!(
                        hi.eval(x) >= v - 1e-9,
                        "{name}: upper unsound on [{}, {}] at {x}: {} < {v}",
                        iv.lo,
                        iv.hi,
                        hi.eval(x)
                    );
                }
            }
        }
    }

    #[test]
    fn mccormick_selected_planes_match_the_envelope() {
        let x = Interval::new(0.0, 2.0);
        let y = Interval::new(1.0, 3.0);
        let r = relax_mul(
            &PreBox::from_interval(x),
            &PreBox::from_interval(y),
            PlaneChoice::First,
            PlaneChoice::First,
        );
        // lower: 1·x + 0·y − 0; upper: 1·x + 2·y − 2
        assert_eq!(r.lower_coeffs[0][[0, 0]], 1.0);
        assert_eq!(r.lower_coeffs[1][[0, 0]], 0.0);
        assert_eq!(r.lower_bias[0], 0.0);
        assert_eq!(r.upper_coeffs[0][[0, 0]], 1.0);
        assert_eq!(r.upper_coeffs[1][[0, 0]], 2.0);
        assert_eq!(r.upper_bias[0], -2.0);
    }

    #[test]
    fn mccormick_lower_on_symmetric_square() {
        let (lower, _) = mccormick_planes(Interval::new(-1.0, 1.0), Interval::new(-1.0, 1.0));
        let p = lower[0];
        assert_eq!((p.cx, p.cy, p.bias), (-1.0, -1.0, -1.0));
        // xy ≥ −x − y − 1 on the square, checked on a grid
        for i in 0..=20 {
            for j in 0..=20 {
                let x = -1.0 + 0.1 * i as f64;
                let y = -1.0 + 0.1 * j as f64;
                assert!(x * y >= p.eval(x, y) - 1e-12);
            }
        }
    }

    #[test]
    fn mccormick_degenerate_factor_is_exact() {
        let c = 1.7;
        let (lower, upper) = mccormick_planes(Interval::point(c), Interval::new(-2.0, 3.0));
        for y in [-2.0, -0.3, 0.0, 1.1, 3.0] {
            for p in lower.iter().chain(upper.iter()) {
                assert_close(p.eval(c, y), c * y, 1e-12);
            }
        }
    }

    #[test]
    fn square_chord_matches_hand_computation() {
        let (lo, hi) = square_lines(Interval::new(-1.0, 2.0));
        assert_eq!(hi, Line { slope: 1.0, bias: 2.0 });
        assert_eq!(lo, Line { slope: 1.0, bias: -0.25 });
    }

    #[test]
    fn tanh_concave_secant_slope() {
        let (lo, _) = sshape_lines(SShape::Tanh, Interval::new(1.0, 2.0));
        let expect = (2.0f64.tanh() - 1.0f64.tanh()) / 1.0;
        assert_close(lo.slope, expect, 1e-12);
    }

    #[test]
    fn degenerate_boxes_collapse_to_exact_values() {
        for x in [-2.0, -0.5, 0.0, 0.3, 1.9] {
            let iv = Interval::point(x);
            for (rule, f) in [
                (sin_lines as fn(Interval) -> (Line, Line), f64::sin as fn(f64) -> f64),
                (cos_lines, f64::cos),
                (|iv| sshape_lines(SShape::Tanh, iv), f64::tanh),
                (square_lines, |x| x * x),
            ] {
                let (lo, hi) = rule(iv);
                assert_close(lo.eval(x), f(x), 1e-12);
                assert_close(hi.eval(x), f(x), 1e-12);
            }
        }
    }

    #[test]
    fn affine_relaxation_is_exact() {
        use ndarray::array;
        let r = relax_affine(&array![[2.0]], &array![-1.0]);
        assert_eq!(r.lower_coeffs, r.upper_coeffs);
        assert_eq!(r.lower_bias, r.upper_bias);
    }
}
