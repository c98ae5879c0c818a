use serde::{Deserialize, Serialize};

use super::primitives::{Primitive, PrimitiveLibrary};
use crate::error::{KanError, Result};

/// Fewest samples [`fit_edge`] accepts.
pub const MIN_FIT_SAMPLES: usize = 20;

const A_GRID: usize = 41;
const A_MIN: f64 = 0.1;
const A_MAX: f64 = 30.0;
const B_GRID: usize = 31;
const B_SPAN: f64 = 3.0;
const B_BOUND: f64 = 10.0;
const A_BOUND: (f64, f64) = (A_MIN, 100.0);
/// Grid stage uses at most this many evenly strided samples.
/// Fitting runs on `z = x / max|x|`, so the `a` bounds above are relative
/// to the sample reach.
const GRID_SAMPLES: usize = 256;
const REFINED_PEAKS: usize = 4;

/// `phi(x) ~ c g(a x + b) + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolicFit {
    pub primitive: Primitive,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub r2: f64,
}

impl SymbolicFit {
    /// Fit of a constant function.
    pub fn constant(value: f64) -> Self {
        Self {
            primitive: Primitive::Identity,
            a: 1.0,
            b: 0.0,
            c: 0.0,
            d: value,
            r2: 1.0,
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.c * self.primitive.eval(self.a * x + self.b) + self.d
    }

    pub fn is_constant(&self) -> bool {
        self.c == 0.0
    }
}

/// Closed-form `(c, d)` and squared correlation for fixed `(a, b)`.
struct Regression {
    c: f64,
    d: f64,
    r2: f64,
}

fn regress(g: Primitive, a: f64, b: f64, xs: &[f64], ys: &[f64], y_mean: f64, syy: f64, buf: &mut Vec<f64>) -> Regression {
    buf.clear();
    buf.extend(xs.iter().map(|&x| g.eval(a * x + b)));
    let degenerate = Regression { c: 0.0, d: y_mean, r2: 0.0 };
    if buf.iter().any(|u| !u.is_finite()) {
        return degenerate;
    }
    let n = xs.len() as f64;
    let u_mean = buf.iter().sum::<f64>() / n;
    let (mut suu, mut suy) = (0.0, 0.0);
    for (u, y) in buf.iter().zip(ys) {
        let du = u - u_mean;
        suu += du * du;
        suy += du * (y - y_mean);
    }
    if !(suu > 0.0) || suu < 1e-300 {
        return degenerate;
    }
    let c = suy / suu;
    let r2 = ((suy / suu) * (suy / syy)).clamp(0.0, 1.0);
    Regression {
        c,
        d: y_mean - c * u_mean,
        r2: if r2.is_finite() { r2 } else { 0.0 },
    }
}

fn grid_a() -> Vec<f64> {
    let (lo, hi) = (A_MIN.ln(), A_MAX.ln());
    let mags: Vec<f64> = (0..A_GRID)
        .map(|k| (lo + (hi - lo) * k as f64 / (A_GRID - 1) as f64).exp())
        .collect();
    mags.iter().map(|m| -m).rev().chain(mags.iter().copied()).collect()
}

fn grid_b() -> Vec<f64> {
    (0..B_GRID)
        .map(|k| -B_SPAN + 2.0 * B_SPAN * k as f64 / (B_GRID - 1) as f64)
        .collect()
}

/// Minimise `f` over the plane from `start` with initial steps `step`.
fn nelder_mead(f: impl Fn([f64; 2]) -> f64, start: [f64; 2], step: [f64; 2], max_iter: usize) -> ([f64; 2], f64) {
    let mut simplex = [
        start,
        [start[0] + step[0], start[1]],
        [start[0], start[1] + step[1]],
    ];
    let mut values = simplex.map(&f);
    for _ in 0..max_iter {
        let mut idx = [0, 1, 2];
        idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = idx.map(|i| simplex[i]);
        values = idx.map(|i| values[i]);
        let size = (simplex[1][0] - simplex[0][0]).abs().max((simplex[2][0] - simplex[0][0]).abs())
            + (simplex[1][1] - simplex[0][1]).abs().max((simplex[2][1] - simplex[0][1]).abs());
        if (values[2] - values[0]).abs() <= 1e-16 && size < 1e-12 {
            break;
        }
        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let reflected = along(-1.0);
        let fr = f(reflected);
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded);
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
        } else if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
        } else {
            let contracted = if fr < values[2] { along(-0.5) } else { along(0.5) };
            let fc = f(contracted);
            if fc < values[2].min(fr) {
                simplex[2] = contracted;
                values[2] = fc;
            } else {
                for k in 1..3 {
                    simplex[k] = [
                        simplex[0][0] + 0.5 * (simplex[k][0] - simplex[0][0]),
                        simplex[0][1] + 0.5 * (simplex[k][1] - simplex[0][1]),
                    ];
                    values[k] = f(simplex[k]);
                }
            }
        }
    }
    let best = (0..3).min_by(|&i, &j| values[i].total_cmp(&values[j])).unwrap();
    (simplex[best], values[best])
}

fn fit_primitive(g: Primitive, xs: &[f64], ys: &[f64], coarse: (&[f64], &[f64]), y_mean: f64, syy: f64) -> SymbolicFit {
    let mut buf = Vec::with_capacity(xs.len());
    if g == Primitive::Identity {
        let reg = regress(g, 1.0, 0.0, xs, ys, y_mean, syy, &mut buf);
        return finish_fit(g, [1.0, 0.0], reg, &buf, ys, syy);
    }
    let (cx, cy) = coarse;
    let cy_mean = cy.iter().sum::<f64>() / cy.len() as f64;
    let csyy: f64 = cy.iter().map(|y| (y - cy_mean).powi(2)).sum();
    let a_grid = grid_a();
    let b_grid = grid_b();
    let scores: Vec<Vec<f64>> = a_grid
        .iter()
        .map(|&a| {
            b_grid
                .iter()
                .map(|&b| {
                    let r2 = if csyy > 0.0 {
                        regress(g, a, b, cx, cy, cy_mean, csyy, &mut buf).r2
                    } else {
                        0.0
                    };
                    if r2.is_nan() { f64::NEG_INFINITY } else { r2 }
                })
                .collect()
        })
        .collect();
    let objective = |p: [f64; 2]| {
        let (a, b) = (p[0], p[1]);
        if !(A_BOUND.0..=A_BOUND.1).contains(&a.abs()) || b.abs() > B_BOUND {
            return f64::INFINITY;
        }
        let mut buf = Vec::with_capacity(xs.len());
        1.0 - regress(g, a, b, xs, ys, y_mean, syy, &mut buf).r2
    };
    let mut p = [a_grid[a_grid.len() / 2], b_grid[0]];
    let mut p_loss = f64::INFINITY;
    for (ia, ib) in grid_peaks(&scores, REFINED_PEAKS) {
        let (a0, b0) = (a_grid[ia], b_grid[ib]);
        let (q, _) = nelder_mead(objective, [a0, b0], [0.1 * a0.abs(), 0.1], 400);
        // second pass from a fresh simplex around the optimum
        let (q, loss) = nelder_mead(objective, q, [0.01 * q[0].abs().max(1e-2), 0.01], 400);
        if loss < p_loss {
            p = q;
            p_loss = loss;
        }
    }
    let reg = regress(g, p[0], p[1], xs, ys, y_mean, syy, &mut buf);
    finish_fit(g, p, reg, &buf, ys, syy)
}

/// Grid cells that are no worse than any of their neighbours, best first.
fn grid_peaks(scores: &[Vec<f64>], count: usize) -> Vec<(usize, usize)> {
    let (na, nb) = (scores.len(), scores[0].len());
    let mut peaks = Vec::new();
    for ia in 0..na {
        for ib in 0..nb {
            let v = scores[ia][ib];
            let is_peak = (ia.saturating_sub(1)..(ia + 2).min(na))
                .all(|ja| (ib.saturating_sub(1)..(ib + 2).min(nb)).all(|jb| scores[ja][jb] <= v));
            if is_peak {
                peaks.push((ia, ib));
            }
        }
    }
    peaks.sort_by(|p, q| scores[q.0][q.1].total_cmp(&scores[p.0][p.1]));
    peaks.truncate(count);
    if peaks.is_empty() {
        peaks.push((na / 2, 0));
    }
    peaks
}

/// Final `r2` as `1 - SS_res / SS_tot`, exact 1 for a noiseless fit.
fn finish_fit(g: Primitive, p: [f64; 2], reg: Regression, buf: &[f64], ys: &[f64], syy: f64) -> SymbolicFit {
    let ss_res: f64 = buf
        .iter()
        .zip(ys)
        .map(|(u, y)| (reg.c * u + reg.d - y).powi(2))
        .sum();
    let r2 = if reg.c == 0.0 { 0.0 } else { (1.0 - ss_res / syy).clamp(f64::MIN, 1.0) };
    SymbolicFit {
        primitive: g,
        a: p[0],
        b: p[1],
        c: reg.c,
        d: reg.d,
        r2,
    }
}

/// Best affine-wrapped fit for every primitive, sorted by `r2` descending.
pub fn fit_edge(xs: &[f64], ys: &[f64], library: &PrimitiveLibrary) -> Result<Vec<SymbolicFit>> {
    if xs.len() != ys.len() {
        return Err(KanError::ShapeMismatch {
            what: "fit samples",
            expected: xs.len(),
            found: ys.len(),
        });
    }
    if xs.len() < MIN_FIT_SAMPLES {
        return Err(KanError::InsufficientSamples {
            needed: MIN_FIT_SAMPLES,
            found: xs.len(),
        });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(KanError::InvalidArgument("fit samples must be finite".into()));
    }
    let n = ys.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let syy: f64 = ys.iter().map(|y| (y - y_mean).powi(2)).sum();
    let scale = ys.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-300);
    if syy <= (1e-12 * scale).powi(2) * n {
        return Ok(vec![SymbolicFit::constant(y_mean)]);
    }

    let reach = xs.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    let scale = if reach > 0.0 { reach } else { 1.0 };
    let zs: Vec<f64> = xs.iter().map(|x| x / scale).collect();

    let stride = zs.len().div_ceil(GRID_SAMPLES);
    let cx: Vec<f64> = zs.iter().step_by(stride).copied().collect();
    let cy: Vec<f64> = ys.iter().step_by(stride).copied().collect();
    let mut fits: Vec<SymbolicFit> = library
        .primitives()
        .iter()
        .map(|&g| {
            let mut fit = fit_primitive(g, &zs, ys, (&cx, &cy), y_mean, syy);
            if g == Primitive::Identity {
                fit.c /= scale;
            } else {
                fit.a /= scale;
            }
            fit
        })
        .collect();
    fits.sort_by(|p, q| q.r2.total_cmp(&p.r2));
    Ok(fits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededRng, Stream};
    use crate::symbolic::bessel_j0;

    fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n).map(|k| lo + (hi - lo) * k as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn identity_samples() {
        let xs = grid(-1.0, 1.0, 100);
        let fits = fit_edge(&xs, &xs, &PrimitiveLibrary::default()).unwrap();
        assert_eq!(fits[0].primitive, Primitive::Identity);
        assert!(fits[0].r2 > 0.9999);
        assert_eq!(fits.len(), 11);
        assert!(fits.windows(2).all(|w| w[0].r2 >= w[1].r2));
    }

    #[test]
    fn sine_samples() {
        let xs = grid(-1.0, 1.0, 200);
        let ys: Vec<f64> = xs.iter().map(|x| (3.1 * x).sin()).collect();
        let top = fit_edge(&xs, &ys, &PrimitiveLibrary::default()).unwrap()[0];
        assert_eq!(top.primitive, Primitive::Sin);
        assert!(top.r2 > 0.999);
        // sin(a x + b) with (a, b) and (-a, pi - b) coincide
        assert!((top.a.abs() - 3.1).abs() < 1e-3, "{top:?}");
    }

    #[test]
    fn bessel_samples_rank_first() {
        let xs = grid(0.0, 1.0, 300);
        let ys: Vec<f64> = xs.iter().map(|x| bessel_j0(20.0 * x)).collect();
        let top = fit_edge(&xs, &ys, &PrimitiveLibrary::default()).unwrap()[0];
        assert_eq!(top.primitive, Primitive::BesselJ0, "{top:?}");
    }

    #[test]
    fn constant_samples() {
        let xs = grid(-1.0, 1.0, 50);
        let ys = vec![0.7; 50];
        let fits = fit_edge(&xs, &ys, &PrimitiveLibrary::default()).unwrap();
        assert_eq!(fits.len(), 1);
        assert_eq!(fits[0].primitive, Primitive::Identity);
        assert_eq!(fits[0].c, 0.0);
        assert!((fits[0].d - 0.7).abs() < 1e-15);
        assert_eq!(fits[0].r2, 1.0);
    }

    #[test]
    fn too_few_samples() {
        let xs = grid(-1.0, 1.0, 19);
        assert!(matches!(
            fit_edge(&xs, &xs, &PrimitiveLibrary::default()),
            Err(KanError::InsufficientSamples { needed: 20, found: 19 })
        ));
    }

    #[test]
    fn perfect_fit_has_unit_r2() {
        let xs = grid(-1.0, 1.0, 64);
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        let lib = PrimitiveLibrary::new(vec![Primitive::Identity]).unwrap();
        assert_eq!(fit_edge(&xs, &ys, &lib).unwrap()[0].r2, 1.0);
    }

    #[test]
    fn deterministic() {
        let xs = grid(-1.0, 1.0, 80);
        let ys: Vec<f64> = xs.iter().map(|x| (1.3 * x + 0.2).tanh()).collect();
        let lib = PrimitiveLibrary::default();
        assert_eq!(fit_edge(&xs, &ys, &lib).unwrap(), fit_edge(&xs, &ys, &lib).unwrap());
    }

    /// Argument stays positive and away from zero so log, sqrt and 1/x are
    /// smooth on the sample range.
    fn random_affine(rng: &mut SeededRng) -> (f64, f64, f64, f64) {
        let a = 0.5 + 1.5 * rng.uniform();
        let b = 1.2 + 0.8 * rng.uniform();
        let c = if rng.uniform() < 0.5 { -1.0 } else { 1.0 } * (0.5 + 2.0 * rng.uniform());
        let d = 2.0 * rng.uniform() - 1.0;
        (a, b, c, d)
    }

    #[test]
    fn every_primitive_is_identified() {
        let lib = PrimitiveLibrary::default();
        let xs = grid(-0.5, 0.5, 200);
        let mut rng = SeededRng::new(17, Stream::Data);
        for g in Primitive::ALL {
            let (a, b, c, d) = random_affine(&mut rng);
            let ys: Vec<f64> = xs.iter().map(|x| c * g.eval(a * x + b) + d).collect();
            let top = fit_edge(&xs, &ys, &lib).unwrap()[0];
            assert_eq!(top.primitive, g, "{g}: {top:?}");
            assert!(top.r2 > 0.999, "{g}: {top:?}");
        }
    }

    #[test]
    fn affine_closure() {
        let lib = PrimitiveLibrary::default();
        let xs = grid(-1.0, 1.0, 120);
        let ys: Vec<f64> = xs.iter().map(|x| (0.8 * x + 0.3).exp()).collect();
        let (alpha, beta) = (-2.5, 4.0);
        let shifted: Vec<f64> = ys.iter().map(|y| alpha * y + beta).collect();
        let f = fit_edge(&xs, &ys, &lib).unwrap()[0];
        let g = fit_edge(&xs, &shifted, &lib).unwrap()[0];
        assert_eq!(f.primitive, g.primitive);
        assert!((f.r2 - g.r2).abs() < 1e-9);
        let probe = 0.37;
        assert!((alpha * f.eval(probe) + beta - g.eval(probe)).abs() < 1e-6);
    }
}
