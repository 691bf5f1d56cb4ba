//! Gauss rules on the unit interval and on triangles.

/// Gauss-Legendre rule with `n` points on `[0, 1]`, as `(abscissa, weight)`.
///
/// `n` is clamped to `1..=5`; an `n`-point rule integrates polynomials of
/// degree `2n - 1` exactly.
pub fn gauss_legendre_unit(n: usize) -> &'static [(f64, f64)] {
    match n {
        0 | 1 => &GL1,
        2 => &GL2,
        3 => &GL3,
        4 => &GL4,
        _ => &GL5,
    }
}

const fn pt(xi: f64, w: f64) -> (f64, f64) {
    // maps a rule on [-1, 1] to [0, 1]
    (0.5 * (xi + 1.0), 0.5 * w)
}

static GL1: [(f64, f64); 1] = [pt(0.0, 2.0)];
static GL2: [(f64, f64); 2] = [
    pt(-0.577_350_269_189_625_8, 1.0),
    pt(0.577_350_269_189_625_8, 1.0),
];
static GL3: [(f64, f64); 3] = [
    pt(-0.774_596_669_241_483_4, 5.0 / 9.0),
    pt(0.0, 8.0 / 9.0),
    pt(0.774_596_669_241_483_4, 5.0 / 9.0),
];
static GL4: [(f64, f64); 4] = [
    pt(-0.861_136_311_594_052_6, 0.347_854_845_137_453_86),
    pt(-0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    pt(0.339_981_043_584_856_3, 0.652_145_154_862_546_1),
    pt(0.861_136_311_594_052_6, 0.347_854_845_137_453_86),
];
static GL5: [(f64, f64); 5] = [
    pt(-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    pt(-0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    pt(0.0, 0.568_888_888_888_888_9),
    pt(0.538_469_310_105_683_1, 0.478_628_670_499_366_47),
    pt(0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Collapsed (Duffy) Gauss product rule on the reference triangle
/// `{(s, t): s, t >= 0, s + t <= 1}`, returned as barycentric-free
/// `(s, t, weight)` triples whose weights sum to `1/2`.
///
/// With `n` points per direction it integrates degree `2n - 2` exactly.
pub fn triangle_rule(n: usize) -> alloc::vec::Vec<(f64, f64, f64)> {
    let rule = gauss_legendre_unit(n);
    let mut out = alloc::vec::Vec::with_capacity(rule.len() * rule.len());
    for &(a, wa) in rule {
        for &(b, wb) in rule {
            // s = a, t = b (1 - a), Jacobian (1 - a)
            out.push((a, b * (1.0 - a), wa * wb * (1.0 - a)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn integrate_unit(n: usize, f: impl Fn(f64) -> f64) -> f64 {
        gauss_legendre_unit(n).iter().map(|&(x, w)| w * f(x)).sum()
    }

    #[test]
    fn gauss_rules_are_exact_to_their_degree() {
        for n in 1..=5 {
            for deg in 0..(2 * n) {
                let exact = 1.0 / (deg as f64 + 1.0);
                let got = integrate_unit(n, |x| libm::pow(x, deg as f64));
                assert!((got - exact).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn triangle_rule_integrates_monomials() {
        // int_T s^a t^b = a! b! / (a + b + 2)!
        let fact = |k: u32| (1..=k).map(|v| v as f64).product::<f64>();
        let rule = triangle_rule(4);
        for a in 0..4u32 {
            for b in 0..(7 - a).min(4) {
                let exact = fact(a) * fact(b) / fact(a + b + 2);
                let got: f64 = rule
                    .iter()
                    .map(|&(s, t, w)| w * libm::pow(s, a as f64) * libm::pow(t, b as f64))
                    .sum();
                assert!((got - exact).abs() < 1e-14, "a={a} b={b}");
            }
        }
    }
}
