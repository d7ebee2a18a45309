//! One-dimensional optimisation, root finding and quadrature.

/// Brent's minimiser (golden section with parabolic steps) on `[a, b]`.
/// Returns the abscissa and the function value there.
pub fn brent_minimize(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const GOLD: f64 = 0.381_966_011_250_105_1;
    let (mut a, mut b) = if a <= b { (a, b) } else { (b, a) };
    let mut x = a + GOLD * (b - a);
    let (mut w, mut v) = (x, x);
    let mut fx = f(x);
    let (mut fw, mut fv) = (fx, fx);
    let mut d: f64 = 0.0;
    let mut e: f64 = 0.0;

    for _ in 0..500 {
        let m = 0.5 * (a + b);
        let tol1 = tol * x.abs() + 1e-14;
        let tol2 = 2.0 * tol1;
        if (x - m).abs() <= tol2 - 0.5 * (b - a) {
            break;
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            if p.abs() < (0.5 * q * e).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = if x < m { tol1 } else { -tol1 };
                }
                golden = false;
            }
        }
        if golden {
            e = if x < m { b - x } else { a - x };
            d = GOLD * e;
        }
        let u = if d.abs() >= tol1 { x + d } else { x + tol1.copysign(d) };
        let fu = f(u);
        if fu <= fx {
            if u < x {
                b = x;
            } else {
                a = x;
            }
            v = w;
            fv = fw;
            w = x;
            fw = fx;
            x = u;
            fx = fu;
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                v = w;
                fv = fw;
                w = u;
                fw = fu;
            } else if fu <= fv || v == x || v == w {
                v = u;
                fv = fu;
            }
        }
    }
    (x, fx)
}

/// Bisection for a sign change of `g` on `[lo, hi]`; `g(lo)` and `g(hi)`
/// must have opposite signs.
pub fn bisect(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let mut glo = g(lo);
    for _ in 0..400 {
        if (hi - lo).abs() <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if (gm < 0.0) == (glo < 0.0) {
            lo = mid;
            glo = gm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// A fixed quadrature rule: nodes and weights.
#[derive(Debug, Clone, Default)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`. Besides the integral,
/// returns the composite rule built from the accepted panels so further
/// functionals of the same density can reuse the refined mesh.
pub fn adaptive_simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, max_depth: u32) -> (f64, QuadratureRule) {
    struct Panel {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        depth: u32,
        tol: f64,
    }
    let simpson = |a: f64, b: f64, fa: f64, fm: f64, fb: f64| (b - a) / 6.0 * (fa + 4.0 * fm + fb);

    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    let whole = simpson(a, b, fa, fm, fb);
    // Seed with a coarse uniform pass so the tolerance is relative to a
    // sensible magnitude even for sharply peaked integrands.
    let seed_panels = 64;
    let h = (b - a) / seed_panels as f64;
    let mut coarse = 0.0;
    let mut stack = Vec::with_capacity(seed_panels);
    for i in (0..seed_panels).rev() {
        let (pa, pb) = (a + i as f64 * h, a + (i + 1) as f64 * h);
        let (fpa, fpm, fpb) = (f(pa), f(0.5 * (pa + pb)), f(pb));
        let w = simpson(pa, pb, fpa, fpm, fpb);
        coarse += w;
        stack.push(Panel { a: pa, b: pb, fa: fpa, fm: fpm, fb: fpb, whole: w, depth: 0, tol: 0.0 });
    }
    let scale = coarse.abs().max(whole.abs()).max(f64::MIN_POSITIVE);
    for p in &mut stack {
        p.tol = rel_tol * scale / seed_panels as f64;
    }

    let mut total = 0.0;
    let mut rule = QuadratureRule::default();
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let err = left + right - p.whole;
        if p.depth >= max_depth || err.abs() <= 15.0 * p.tol {
            total += left + right + err / 15.0;
            // Composite Simpson on the two halves (the Richardson term is
            // folded into the total only).
            let hl = (m - p.a) / 6.0;
            let hr = (p.b - m) / 6.0;
            rule.nodes.extend([p.a, lm, m, rm, p.b]);
            rule.weights.extend([hl, 4.0 * hl, hl + hr, 4.0 * hr, hr]);
        } else {
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
                depth: p.depth + 1,
                tol: p.tol / 2.0,
            });
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
                depth: p.depth + 1,
                tol: p.tol / 2.0,
            });
        }
    }
    (total, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_parabola_minimum() {
        let (x, fx) = brent_minimize(|x| (x - 1.3).powi(2) + 2.0, -5.0, 5.0, 1e-12);
        assert!((x - 1.3).abs() < 1e-8);
        assert!((fx - 2.0).abs() < 1e-14);
    }

    #[test]
    fn brent_handles_boundary_minimum() {
        let (x, _) = brent_minimize(|x| x, 0.0, 3.0, 1e-12);
        assert!(x < 1e-8);
    }

    #[test]
    fn bisect_finds_root() {
        let r = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-12);
        assert!((r - 2f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn simpson_integrates_gaussian() {
        let (v, rule) = adaptive_simpson(|x| (-x * x / 2.0).exp(), -10.0, 10.0, 1e-12, 30);
        let truth = (2.0 * std::f64::consts::PI).sqrt();
        assert!((v - truth).abs() < 1e-9);
        assert!((rule.integrate(|x| (-x * x / 2.0).exp()) - truth).abs() < 1e-8);
        assert!((rule.integrate(|_| 1.0) - 20.0).abs() < 1e-10);
    }
}
