//! Product-integration primitives for power-law kernels.
//!
//! The kernels appearing here — `(t-s)^{alpha-1}`, `(t-s)^{-alpha-1}`,
//! `(u-t)^{H-3/2}`, `|t-s|^{2H-2}` — are singular or kinked at an endpoint
//! or on the diagonal, where naive quadrature rules lose their order. Every
//! cell integral below pairs the exact antiderivative of the kernel with a
//! piecewise-linear (or piecewise-constant) model of the smooth factor.

/// `\int_c^d (s-o)^gamma * f(s) ds` with `f` linear on `[c,d]`, `o <= c`.
///
/// Valid for `gamma > -1` when `c == o`; for `gamma <= -1` the cell must not
/// touch the origin unless the linear model vanishes there.
pub fn int_kernel_below(c: f64, d: f64, o: f64, gamma: f64, fc: f64, fd: f64) -> f64 {
    debug_assert!(o <= c + 1e-14 && c < d);
    let b = (fd - fc) / (d - c);
    let a = fc - b * (c - o);
    let xc = c - o;
    let xd = d - o;
    let mut out = 0.0;
    if a != 0.0 {
        let p = gamma + 1.0;
        debug_assert!(p > 0.0 || xc > 0.0, "divergent endpoint with nonzero value");
        out += a * (xd.powf(p) - pow_or_zero(xc, p)) / p;
    }
    if b != 0.0 {
        let p = gamma + 2.0;
        out += b * (xd.powf(p) - pow_or_zero(xc, p)) / p;
    }
    out
}

/// `\int_c^d (o-s)^gamma * f(s) ds` with `f` linear on `[c,d]`, `o >= d`.
pub fn int_kernel_above(c: f64, d: f64, o: f64, gamma: f64, fc: f64, fd: f64) -> f64 {
    debug_assert!(o >= d - 1e-14 && c < d);
    // write f(s) = a + b*(o-s)
    let b = (fc - fd) / (d - c);
    let a = fd - b * (o - d);
    let xd = o - d;
    let xc = o - c;
    let mut out = 0.0;
    if a != 0.0 {
        let p = gamma + 1.0;
        debug_assert!(p > 0.0 || xd > 0.0, "divergent endpoint with nonzero value");
        out += a * (xc.powf(p) - pow_or_zero(xd, p)) / p;
    }
    if b != 0.0 {
        let p = gamma + 2.0;
        out += b * (xc.powf(p) - pow_or_zero(xd, p)) / p;
    }
    out
}

fn pow_or_zero(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        if p > 0.0 {
            0.0
        } else {
            f64::NAN // caller guarded by debug_assert
        }
    } else {
        x.powf(p)
    }
}

/// `\int_c^d |s-o|^gamma ds` for integrable `gamma > -1`; `o` may lie inside.
pub fn int_abs_power(c: f64, d: f64, o: f64, gamma: f64) -> f64 {
    debug_assert!(c <= d);
    let p = gamma + 1.0;
    let anti = |x: f64| -> f64 {
        // antiderivative of sign(x)|x|^gamma... integrated: |x|^p / p with sign
        if x == 0.0 {
            0.0
        } else {
            x.signum() * x.abs().powf(p) / p
        }
    };
    anti(d - o) - anti(c - o)
}

/// `\int_{t1}^{t2} \int_{s1}^{s2} |t-s|^gamma ds dt` in closed form,
/// `gamma` in `(-1, 0]`. Exact including cells crossing the diagonal.
pub fn int_abs_power_rect(s1: f64, s2: f64, t1: f64, t2: f64, gamma: f64) -> f64 {
    let p1 = gamma + 1.0;
    let p2 = gamma + 2.0;
    // F'' (x) = |x|^gamma ; F even
    let f2 = |x: f64| -> f64 {
        if x == 0.0 {
            0.0
        } else {
            x.abs().powf(p2) / (p1 * p2)
        }
    };
    f2(t2 - s1) - f2(t2 - s2) - f2(t1 - s1) + f2(t1 - s2)
}

/// Tail integral `\int_t^{nodes.end} (u-t)^gamma * g(u) du` with `g` the
/// piecewise-linear interpolant of `gvals` on `nodes`; `t` need not be a node.
pub fn integrate_tail_power(nodes: &[f64], gvals: &[f64], t: f64, gamma: f64) -> f64 {
    debug_assert_eq!(nodes.len(), gvals.len());
    let tend = *nodes.last().unwrap();
    if t >= tend {
        return 0.0;
    }
    let mut j = match nodes.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
        Ok(j) => j,
        Err(j) => j, // first node strictly above t is nodes[j]
    };
    let mut acc = 0.0;
    // partial first cell [t, nodes[j]]
    if j > 0 && nodes[j] > t && (nodes[j] - t) > 1e-300 {
        let k = j - 1;
        let w = (t - nodes[k]) / (nodes[k + 1] - nodes[k]);
        let gt = gvals[k] + w * (gvals[k + 1] - gvals[k]);
        acc += int_kernel_below(t, nodes[j], t, gamma, gt, gvals[j]);
    } else if j == 0 {
        // t at or below the first node
        if nodes[0] > t {
            // extend linearly leftwards from the first cell
            let slope = (gvals[1] - gvals[0]) / (nodes[1] - nodes[0]);
            let gt = gvals[0] - slope * (nodes[0] - t);
            acc += int_kernel_below(t, nodes[0], t, gamma, gt, gvals[0]);
        }
    }
    while j + 1 < nodes.len() {
        acc += int_kernel_below(nodes[j], nodes[j + 1], t, gamma, gvals[j], gvals[j + 1]);
        j += 1;
    }
    acc
}

/// Head integral `\int_{nodes.start}^t (t-u)^gamma * g(u) du`, piecewise-linear `g`.
pub fn integrate_head_power(nodes: &[f64], gvals: &[f64], t: f64, gamma: f64) -> f64 {
    debug_assert_eq!(nodes.len(), gvals.len());
    if t <= nodes[0] {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut k = 0;
    while k + 1 < nodes.len() && nodes[k + 1] <= t {
        acc += int_kernel_above(nodes[k], nodes[k + 1], t, gamma, gvals[k], gvals[k + 1]);
        k += 1;
    }
    if k + 1 < nodes.len() && nodes[k] < t {
        let w = (t - nodes[k]) / (nodes[k + 1] - nodes[k]);
        let gt = gvals[k] + w * (gvals[k + 1] - gvals[k]);
        acc += int_kernel_above(nodes[k], t, t, gamma, gvals[k], gt);
    }
    acc
}

/// Trapezoid rule over grid nodes.
pub fn trapezoid(nodes: &[f64], vals: &[f64]) -> f64 {
    let mut acc = 0.0;
    for k in 0..nodes.len() - 1 {
        acc += 0.5 * (vals[k] + vals[k + 1]) * (nodes[k + 1] - nodes[k]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn below_kernel_exact_powers() {
        // \int_0^1 s^{-0.5} * s ds = \int s^{0.5} = 2/3, single cell with f(s)=s
        let v = int_kernel_below(0.0, 1.0, 0.0, -0.5, 0.0, 1.0);
        assert_relative_eq!(v, 2.0 / 3.0, max_relative = 1e-14);
        // constant f: \int_0^1 s^{-0.5} ds = 2
        let v = int_kernel_below(0.0, 1.0, 0.0, -0.5, 1.0, 1.0);
        assert_relative_eq!(v, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn above_kernel_exact_powers() {
        // \int_0^1 (1-s)^{-0.5} ds = 2
        let v = int_kernel_above(0.0, 1.0, 1.0, -0.5, 1.0, 1.0);
        assert_relative_eq!(v, 2.0, max_relative = 1e-14);
        // \int_0^1 (1-s)^{-1.5} * (1-s) ds = \int (1-s)^{-0.5} = 2, with f(s) = 1-s
        let v = int_kernel_above(0.0, 1.0, 1.0, -1.5, 1.0, 0.0);
        assert_relative_eq!(v, 2.0, max_relative = 1e-14);
    }

    #[test]
    fn composite_tail_singular_smooth_product() {
        // \int_0^1 u^{0.25} u^{-0.5} du = 4/3; the residual error is the
        // piecewise-linear interpolation of u^{0.25} near its infinite slope
        let n = 4096;
        let nodes: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let gvals: Vec<f64> = nodes.iter().map(|u| u.powf(0.25)).collect();
        let v = integrate_tail_power(&nodes, &gvals, 0.0, -0.5);
        assert_relative_eq!(v, 4.0 / 3.0, max_relative = 2e-3);
        // smooth factor: exact to rounding
        let gvals2: Vec<f64> = nodes.iter().map(|u| 1.0 + 0.5 * u).collect();
        let v2 = integrate_tail_power(&nodes, &gvals2, 0.0, -0.5);
        assert_relative_eq!(v2, 2.0 + 1.0 / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn head_integral_shifted_power() {
        // \int_0^t (t-u)^{-0.3} du = t^{0.7} / 0.7 at t = 0.75
        let n = 1024;
        let nodes: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let gvals = vec![1.0; nodes.len()];
        let v = integrate_head_power(&nodes, &gvals, 0.75, -0.3);
        assert_relative_eq!(v, 0.75f64.powf(0.7) / 0.7, max_relative = 1e-12);
    }

    #[test]
    fn rect_abs_power_diagonal_cell() {
        // whole square [0,1]^2 of |t-s|^{-0.5}: 2*\int_0^1\int_0^t (t-s)^{-0.5} =
        // 2*\int_0^1 2 sqrt(t) dt = 8/3
        let v = int_abs_power_rect(0.0, 1.0, 0.0, 1.0, -0.5);
        assert_relative_eq!(v, 8.0 / 3.0, max_relative = 1e-13);
        // additivity across a split
        let v2 = int_abs_power_rect(0.0, 0.4, 0.0, 1.0, -0.5)
            + int_abs_power_rect(0.4, 1.0, 0.0, 1.0, -0.5);
        assert_relative_eq!(v, v2, max_relative = 1e-12);
    }

    #[test]
    fn abs_power_1d_spanning_origin() {
        // \int_{-1}^{2} |s|^{-0.5} ds = 2 + 2 sqrt(2)
        let v = int_abs_power(-1.0, 2.0, 0.0, -0.5);
        assert_relative_eq!(v, 2.0 + 2.0 * 2.0f64.sqrt(), max_relative = 1e-14);
    }
}
