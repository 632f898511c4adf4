//! Adaptive Simpson quadrature.

/// Hard cap on the number of panels accepted per integral.
pub const MAX_PANELS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub panels: usize,
    /// False when the panel cap was hit before every panel met its tolerance.
    pub converged: bool,
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
pub fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Integral {
    simpson_pieces(f, &[a, b], tol)
}

/// Integrates over consecutive pieces `breaks[i]..breaks[i+1]`, sharing the
/// tolerance and panel budget. Breakpoints should sit on kinks.
pub fn simpson_pieces<F: Fn(f64) -> f64>(f: &F, breaks: &[f64], tol: f64) -> Integral {
    struct Panel {
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    }

    let pieces: Vec<(f64, f64)> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| (w[0], w[1]))
        .collect();
    let mut out = Integral { value: 0.0, panels: 0, converged: true };
    if pieces.is_empty() {
        return out;
    }
    let span: f64 = pieces.iter().map(|(a, b)| b - a).sum();
    let mut stack: Vec<Panel> = Vec::new();
    for &(a, b) in pieces.iter().rev() {
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        stack.push(Panel {
            a,
            b,
            fa,
            fm,
            fb,
            whole: (b - a) / 6.0 * (fa + 4.0 * fm + fb),
            tol: tol * (b - a) / span,
            depth: 0,
        });
    }
    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let (lm, rm) = (0.5 * (p.a + m), 0.5 * (m + p.b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * flm + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * frm + p.fb);
        let delta = left + right - p.whole;
        let budget_left = out.panels + stack.len() + 2 > MAX_PANELS;
        if (p.depth >= 3 && delta.abs() <= 15.0 * p.tol) || budget_left || p.b - p.a < 1e-14 {
            if budget_left && delta.abs() > 15.0 * p.tol {
                out.converged = false;
            }
            out.value += left + right + delta / 15.0;
            out.panels += 1;
            continue;
        }
        let half = 0.5 * p.tol;
        stack.push(Panel { a: m, b: p.b, fa: p.fm, fm: frm, fb: p.fb, whole: right, tol: half, depth: p.depth + 1 });
        stack.push(Panel { a: p.a, b: m, fa: p.fa, fm: flm, fb: p.fm, whole: left, tol: half, depth: p.depth + 1 });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_and_exponentials() {
        let r = simpson(&|x: f64| x * x * x, 0.0, 2.0, 1e-10);
        assert!((r.value - 4.0).abs() < 1e-12 && r.converged);
        let r = simpson(&|x: f64| (-3.0 * x).exp(), 0.0, 1.0, 1e-10);
        assert!((r.value - (1.0 - (-3.0f64).exp()) / 3.0).abs() < 1e-10);
    }

    #[test]
    fn kink_on_breakpoint() {
        let f = |x: f64| (x - 0.3).abs();
        let r = simpson_pieces(&f, &[0.0, 0.3, 1.0], 1e-12);
        assert!((r.value - (0.045 + 0.245)).abs() < 1e-13);
    }

    #[test]
    fn panel_cap_reports_non_convergence() {
        let f = |x: f64| (1.0 / x.max(1e-300)).sin();
        let r = simpson(&f, 0.0, 1.0, 1e-15);
        assert!(r.panels <= MAX_PANELS);
        assert!(!r.converged);
    }
}
