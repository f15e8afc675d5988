use nalgebra::{DMatrix, DVector};

use super::partition::Partition;
use crate::error::{Error, Result};

/// Iteration cap for the equilibrium solver.
pub const EQUILIBRIUM_MAX_ITER: usize = 500;
/// Sup-norm tolerance on the first-order conditions.
pub const FOC_TOLERANCE: f64 = 1e-10;

/// Logit shares with an outside good of utility zero.
pub fn logit_shares(delta: &DVector<f64>) -> DVector<f64> {
    let m = delta.iter().copied().fold(0.0, f64::max);
    let e = delta.map(|d| (d - m).exp());
    let denom = (-m).exp() + e.sum();
    e / denom
}

/// `Δ_jr = −∂D_r/∂p_j` within a group, zero across groups.
pub fn delta_matrix(partition: &Partition, shares: &DVector<f64>, alpha: f64, market_size: f64) -> DMatrix<f64> {
    let j = shares.len();
    let mut d = DMatrix::zeros(j, j);
    for g in partition.groups() {
        for &a in g {
            for &b in g {
                d[(a, b)] = if a == b {
                    -alpha * shares[a] * (1.0 - shares[a]) * market_size
                } else {
                    alpha * shares[a] * shares[b] * market_size
                };
            }
        }
    }
    d
}

/// `Δ⁻¹ D` for demand `D = M s`; the market size cancels.
pub fn markup(partition: &Partition, shares: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    Ok(share_markup(partition, shares)? / -alpha)
}

/// `K⁻¹ s` group by group, with `K_jr = s_j (1{j=r} − s_r)`. The markup is
/// this vector divided by `−α`.
pub fn share_markup(partition: &Partition, shares: &DVector<f64>) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(shares.len());
    for g in partition.groups() {
        if g.len() == 1 {
            let s = shares[g[0]];
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Singular("within-group delta matrix; check shares and price coefficient"));
            }
            out[g[0]] = 1.0 / (1.0 - s);
            continue;
        }
        let n = g.len();
        let k = DMatrix::from_fn(n, n, |a, b| {
            let (sa, sb) = (shares[g[a]], shares[g[b]]);
            if a == b {
                sa * (1.0 - sa)
            } else {
                -sa * sb
            }
        });
        let rhs = DVector::from_iterator(n, g.iter().map(|&f| shares[f]));
        let sol = k
            .lu()
            .solve(&rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .ok_or(Error::Singular("within-group delta matrix; check shares and price coefficient"))?;
        for (a, &f) in g.iter().enumerate() {
            out[f] = sol[a];
        }
    }
    Ok(out)
}

/// Market primitives that do not depend on prices.
#[derive(Clone, Debug)]
pub struct MarketPrimitives {
    /// Mean utility net of the price term.
    pub base_utility: DVector<f64>,
    pub marginal_cost: DVector<f64>,
    pub alpha: f64,
    pub market_size: f64,
}

#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub prices: DVector<f64>,
    pub shares: DVector<f64>,
    pub iterations: usize,
    /// `‖D − Δ (p − mc)‖∞`.
    pub foc_residual: f64,
}

/// `‖D(p) − Δ(p)(p − mc)‖∞`.
pub fn foc_residual(partition: &Partition, m: &MarketPrimitives, prices: &DVector<f64>) -> f64 {
    let s = logit_shares(&(&m.base_utility + prices * m.alpha));
    let d = delta_matrix(partition, &s, m.alpha, m.market_size);
    (&s * m.market_size - d * (prices - &m.marginal_cost)).amax()
}

/// Prices solving every group's joint-profit first-order conditions.
///
/// Works on the markup form `p − mc − Δ⁻¹D = 0`, which unlike the raw
/// conditions has no spurious root as prices diverge. Damped Newton with a
/// finite-difference Jacobian; falls back to the fixed point
/// `p ← mc + Δ⁻¹D` if a Newton step cannot make progress.
pub fn solve_equilibrium_prices(partition: &Partition, m: &MarketPrimitives) -> Result<Equilibrium> {
    let j = m.base_utility.len();
    if partition.num_firms() != j || m.marginal_cost.len() != j {
        return Err(Error::Dimension {
            context: "equilibrium inputs",
            expected: partition.num_firms(),
            got: j,
        });
    }
    if !(m.alpha < 0.0) {
        return Err(Error::config(format!("price coefficient must be negative, got {}", m.alpha)));
    }
    let gap = |p: &DVector<f64>| -> Result<DVector<f64>> {
        let s = logit_shares(&(&m.base_utility + p * m.alpha));
        Ok(p - &m.marginal_cost - markup(partition, &s, m.alpha)?)
    };

    let mut p = m.marginal_cost.add_scalar(1.0 / -m.alpha);
    let mut g = gap(&p)?;
    let mut newton = true;
    let mut iterations = 0;
    while iterations < EQUILIBRIUM_MAX_ITER {
        let norm = g.amax();
        if norm <= 1e-13 * (1.0 + p.amax()) {
            break;
        }
        iterations += 1;
        let mut moved = false;
        if newton {
            if let Some(step) = newton_step(&gap, &p, &g)? {
                let mut t = 1.0;
                while t > 1e-10 {
                    let trial = &p + &step * t;
                    if let Ok(gt) = gap(&trial) {
                        if gt.amax() < (1.0 - 1e-4 * t) * norm {
                            p = trial;
                            g = gt;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
            }
            if !moved {
                newton = false;
            }
        }
        if !moved {
            let s = logit_shares(&(&m.base_utility + &p * m.alpha));
            let next = &m.marginal_cost + markup(partition, &s, m.alpha)?;
            if (&next - &p).amax() <= 1e-15 * (1.0 + p.amax()) {
                break;
            }
            p = next;
            g = gap(&p)?;
        }
    }
    let residual = foc_residual(partition, m, &p);
    if !(residual < FOC_TOLERANCE) {
        return Err(Error::Equilibrium { iterations, residual });
    }
    Ok(Equilibrium {
        shares: logit_shares(&(&m.base_utility + &p * m.alpha)),
        prices: p,
        iterations,
        foc_residual: residual,
    })
}

fn newton_step<G>(gap: &G, p: &DVector<f64>, g: &DVector<f64>) -> Result<Option<DVector<f64>>>
where
    G: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let j = p.len();
    let mut jac = DMatrix::zeros(j, j);
    let mut x = p.clone();
    for c in 0..j {
        let h = 1e-6 * (1.0 + p[c].abs());
        x[c] = p[c] + h;
        let up = gap(&x)?;
        x[c] = p[c] - h;
        let down = gap(&x)?;
        x[c] = p[c];
        jac.set_column(c, &((up - down) / (2.0 * h)));
    }
    Ok(jac.lu().solve(&(-g)).filter(|s| s.iter().all(|v| v.is_finite())))
}
