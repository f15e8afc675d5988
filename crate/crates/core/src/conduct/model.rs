use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use super::market::{share_markup, solve_equilibrium_prices, MarketPrimitives};
use super::partition::Partition;
use crate::error::{Error, Result};
use crate::gmm::{Dataset, MomentModel, ParamBox};
use crate::rng::{derive_seed, stream_rng};

/// Demand characteristics per product: a constant and `x`.
pub const DEMAND_CHARS: usize = 2;
/// Cost characteristics per product: a constant, `x` and `w`.
pub const COST_CHARS: usize = 3;

/// Primitives of a simulated oligopoly panel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConductScenario {
    pub j: usize,
    pub t: usize,
    pub alpha: f64,
    pub beta: [f64; DEMAND_CHARS],
    pub gamma: [f64; COST_CHARS],
    /// Standard deviation of the characteristics `x` and `w`.
    pub char_sd: f64,
    /// Standard deviation of the demand and cost shocks.
    pub shock_sd: f64,
    pub market_size: f64,
    pub true_partition: Partition,
    pub seed: u64,
}

impl Default for ConductScenario {
    fn default() -> Self {
        Self {
            j: 3,
            t: 100,
            alpha: -0.1,
            beta: [2.0, 1.0],
            gamma: [3.0, 0.0, 1.0],
            char_sd: 0.1,
            shock_sd: 1.0,
            market_size: 1.0,
            true_partition: Partition::collusive(3),
            seed: 0,
        }
    }
}

impl ConductScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha < 0.0) {
            return Err(Error::config(format!("alpha must be negative, got {}", self.alpha)));
        }
        if !(self.char_sd > 0.0 && self.shock_sd > 0.0) {
            return Err(Error::config("char_sd and shock_sd must be positive"));
        }
        if !(self.market_size > 0.0) {
            return Err(Error::config("market_size must be positive"));
        }
        if self.true_partition.num_firms() != self.j {
            return Err(Error::config(format!(
                "true partition {} does not cover J = {}",
                self.true_partition, self.j
            )));
        }
        if self.t < 2 {
            return Err(Error::config("need at least 2 markets"));
        }
        Ok(())
    }
}

/// One simulated market.
#[derive(Clone, Debug)]
pub struct Market {
    /// `J × 2`: constant, `x`.
    pub x: DMatrix<f64>,
    /// `J × 3`: constant, `x`, `w`.
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub prices: DVector<f64>,
    pub shares: DVector<f64>,
    pub market_size: f64,
    pub xi: DVector<f64>,
    pub lambda: DVector<f64>,
    pub marginal_cost: DVector<f64>,
    pub foc_residual: f64,
}

#[derive(Clone, Debug)]
pub struct MarketPanel {
    pub markets: Vec<Market>,
}

/// Simulates replication `rep` of `scenario`. Markets are drawn sequentially
/// from one stream, so a shorter panel is a prefix of a longer one.
pub fn simulate_panel(scenario: &ConductScenario, rep: u64) -> Result<MarketPanel> {
    scenario.validate()?;
    let mut rng = stream_rng(derive_seed(scenario.seed, "conduct-data"), rep);
    let chars = Normal::new(0.0, scenario.char_sd).map_err(|e| Error::config(e.to_string()))?;
    let shocks = Normal::new(0.0, scenario.shock_sd).map_err(|e| Error::config(e.to_string()))?;
    let j = scenario.j;
    let [b0, b1] = scenario.beta;
    let [g0, g1, g2] = scenario.gamma;

    let mut markets = Vec::with_capacity(scenario.t);
    for _ in 0..scenario.t {
        let draw = |d: &Normal<f64>, rng: &mut crate::rng::StreamRng| {
            DVector::from_iterator(j, (0..j).map(|_| d.sample(rng)))
        };
        let xs = draw(&chars, &mut rng);
        let ws = draw(&chars, &mut rng);
        let xi = draw(&shocks, &mut rng);
        let lambda = draw(&shocks, &mut rng);
        let base_utility = xs.map(|x| b0 + b1 * x) + &xi;
        let marginal_cost = DVector::from_fn(j, |i, _| g0 + g1 * xs[i] + g2 * ws[i]) + &lambda;
        let prim = MarketPrimitives {
            base_utility,
            marginal_cost: marginal_cost.clone(),
            alpha: scenario.alpha,
            market_size: scenario.market_size,
        };
        let eq = solve_equilibrium_prices(&scenario.true_partition, &prim)?;
        markets.push(Market {
            x: DMatrix::from_fn(j, DEMAND_CHARS, |i, c| if c == 0 { 1.0 } else { xs[i] }),
            y: DMatrix::from_fn(j, COST_CHARS, |i, c| match c {
                0 => 1.0,
                1 => xs[i],
                _ => ws[i],
            }),
            z: DMatrix::zeros(j, 0),
            prices: eq.prices,
            shares: eq.shares,
            market_size: scenario.market_size,
            xi,
            lambda,
            marginal_cost,
            foc_residual: eq.foc_residual,
        });
    }
    let x: Vec<_> = markets.iter().map(|m| m.x.clone()).collect();
    let y: Vec<_> = markets.iter().map(|m| m.y.clone()).collect();
    for (m, z) in markets.iter_mut().zip(build_instruments(&x, &y)?) {
        m.z = z;
    }
    Ok(MarketPanel { markets })
}

/// Instruments per product: a constant, then for every distinct
/// non-constant characteristic its own value, its square, its market mean
/// and the square of the market mean (in that block order).
///
/// Characteristics come from the columns of `X` and `Y`. A column constant
/// over the whole panel is dropped (the constant column covers it), and a
/// column identical to an earlier one is dropped.
pub fn build_instruments(x: &[DMatrix<f64>], y: &[DMatrix<f64>]) -> Result<Vec<DMatrix<f64>>> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Data("X and Y must list the same nonempty set of markets".into()));
    }
    let columns = |t: usize| -> Vec<DVector<f64>> {
        x[t].column_iter()
            .chain(y[t].column_iter())
            .map(|c| c.into_owned())
            .collect()
    };
    let ncols = x[0].ncols() + y[0].ncols();
    let panel: Vec<Vec<DVector<f64>>> = (0..x.len()).map(columns).collect();
    if panel.iter().any(|m| m.len() != ncols) {
        return Err(Error::Data("characteristic count differs across markets".into()));
    }
    let mut keep: Vec<usize> = Vec::new();
    for c in 0..ncols {
        let v0 = panel[0][c][0];
        let constant = panel.iter().all(|m| m[c].iter().all(|&v| v == v0));
        let duplicate = keep
            .iter()
            .any(|&k| panel.iter().all(|m| m[c] == m[k]));
        if !constant && !duplicate {
            keep.push(c);
        }
    }
    let n = keep.len();
    Ok(panel
        .iter()
        .map(|m| {
            let rows = m[0].len();
            let mut z = DMatrix::zeros(rows, 1 + 4 * n);
            z.column_mut(0).fill(1.0);
            for (i, &c) in keep.iter().enumerate() {
                let v = &m[c];
                let mean = v.mean();
                for r in 0..rows {
                    z[(r, 1 + i)] = v[r];
                    z[(r, 1 + n + i)] = v[r] * v[r];
                    z[(r, 1 + 2 * n + i)] = mean;
                    z[(r, 1 + 3 * n + i)] = mean * mean;
                }
            }
            z
        })
        .collect())
}

impl MarketPanel {
    pub fn len(&self) -> usize {
        self.markets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.markets.is_empty()
    }

    pub fn num_products(&self) -> usize {
        self.markets.first().map_or(0, |m| m.prices.len())
    }

    pub fn num_instruments(&self) -> usize {
        self.markets.first().map_or(0, |m| m.z.ncols())
    }

    /// One observation per market: per product `[X row, Y row, p, s, Z row]`.
    /// Fails unless shares are positive and leave a positive outside share.
    pub fn to_dataset(&self) -> Result<Dataset> {
        let j = self.num_products();
        let c = self.num_instruments();
        let stride = DEMAND_CHARS + COST_CHARS + 2 + c;
        let mut values = Vec::with_capacity(self.len() * j * stride);
        for (t, m) in self.markets.iter().enumerate() {
            if m.prices.len() != j || m.z.ncols() != c {
                return Err(Error::Data(format!("market {t} has inconsistent dimensions")));
            }
            if m.shares.iter().any(|&s| !(s > 0.0)) || !(m.shares.sum() < 1.0) {
                return Err(Error::Data(format!(
                    "market {t}: shares must be positive with a positive outside share"
                )));
            }
            for i in 0..j {
                values.extend(m.x.row(i).iter());
                values.extend(m.y.row(i).iter());
                values.push(m.prices[i]);
                values.push(m.shares[i]);
                values.extend(m.z.row(i).iter());
            }
        }
        Dataset::new(j * stride, values)
    }
}

/// GMM model of one conduct hypothesis.
///
/// Parameters are `θ = (α, β, γ)`. Per product,
/// `ξ = ln s − ln s₀ − Xβ − αp` and `λ = p − Δ⁻¹D − Yγ`; the moments are the
/// market averages of `(ξ Z, λ Z)`.
#[derive(Clone, Debug)]
pub struct ConductModel {
    name: String,
    partition: Partition,
    j: usize,
    c: usize,
    bounds: ParamBox,
}

/// Default search box: `α ∈ [−5, −0.005]`, demand and cost coefficients in `[−50, 50]`.
pub fn default_conduct_box() -> ParamBox {
    let mut lower = vec![-5.0];
    let mut upper = vec![-0.005];
    lower.extend([-50.0; DEMAND_CHARS + COST_CHARS]);
    upper.extend([50.0; DEMAND_CHARS + COST_CHARS]);
    ParamBox::new(lower, upper).expect("valid default box")
}

struct Product<'a> {
    x: &'a [f64],
    y: &'a [f64],
    p: f64,
    s: f64,
    z: &'a [f64],
}

impl ConductModel {
    pub fn new(partition: Partition, num_instruments: usize) -> Self {
        Self {
            name: partition.to_string(),
            j: partition.num_firms(),
            partition,
            c: num_instruments,
            bounds: default_conduct_box(),
        }
    }

    pub fn with_bounds(mut self, bounds: ParamBox) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    fn products<'a>(&self, obs: &'a [f64]) -> impl Iterator<Item = Product<'a>> + 'a {
        let stride = DEMAND_CHARS + COST_CHARS + 2 + self.c;
        obs.chunks_exact(stride).map(|r| Product {
            x: &r[..DEMAND_CHARS],
            y: &r[DEMAND_CHARS..DEMAND_CHARS + COST_CHARS],
            p: r[DEMAND_CHARS + COST_CHARS],
            s: r[DEMAND_CHARS + COST_CHARS + 1],
            z: &r[DEMAND_CHARS + COST_CHARS + 2..],
        })
    }

    /// `(ln s − ln s₀, K⁻¹s)` per product; markup is the latter over `−α`.
    fn market_terms(&self, obs: &[f64]) -> Option<(Vec<f64>, DVector<f64>)> {
        let shares = DVector::from_iterator(self.j, self.products(obs).map(|p| p.s));
        let outside = 1.0 - shares.sum();
        if !(outside > 0.0) {
            return None;
        }
        let log_ratio = shares.iter().map(|s| (s / outside).ln()).collect();
        Some((log_ratio, share_markup(&self.partition, &shares).ok()?))
    }

    /// Residuals `(ξ, λ)` of one market at `θ`.
    pub fn residuals(&self, obs: &[f64], theta: &[f64]) -> Option<(DVector<f64>, DVector<f64>)> {
        let (log_ratio, km) = self.market_terms(obs)?;
        let alpha = theta[0];
        let beta = &theta[1..1 + DEMAND_CHARS];
        let gamma = &theta[1 + DEMAND_CHARS..];
        let mut xi = DVector::zeros(self.j);
        let mut lambda = DVector::zeros(self.j);
        for (i, pr) in self.products(obs).enumerate() {
            xi[i] = log_ratio[i] - dot(pr.x, beta) - alpha * pr.p;
            lambda[i] = pr.p + km[i] / alpha - dot(pr.y, gamma);
        }
        Some((xi, lambda))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MomentModel for ConductModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn num_params(&self) -> usize {
        1 + DEMAND_CHARS + COST_CHARS
    }
    fn num_moments(&self) -> usize {
        2 * self.c
    }
    fn param_box(&self) -> &ParamBox {
        &self.bounds
    }
    fn residual_blocks(&self) -> usize {
        2
    }

    fn moment(&self, obs: &[f64], theta: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let Some((xi, lambda)) = self.residuals(obs, theta) else {
            out.fill(f64::NAN);
            return;
        };
        let scale = 1.0 / self.j as f64;
        let (a, b) = out.split_at_mut(self.c);
        for (i, pr) in self.products(obs).enumerate() {
            for (k, z) in pr.z.iter().enumerate() {
                a[k] += scale * xi[i] * z;
                b[k] += scale * lambda[i] * z;
            }
        }
    }

    fn instrument_rows(&self, obs: &[f64]) -> Option<DMatrix<f64>> {
        let mut z = DMatrix::zeros(self.j, self.c);
        for (i, pr) in self.products(obs).enumerate() {
            z.row_mut(i).copy_from_slice(pr.z);
        }
        Some(z)
    }

    /// Concentrates `β` and `γ` out (both enter linearly) and searches the
    /// profile over `α`.
    fn warm_start(&self, data: &Dataset, weighting: &DMatrix<f64>) -> Option<DVector<f64>> {
        let c = self.c;
        let mut a0 = DVector::zeros(c);
        let mut ap = DVector::zeros(c);
        let mut bm = DVector::zeros(c);
        let mut ax = DMatrix::zeros(c, DEMAND_CHARS);
        let mut by = DMatrix::zeros(c, COST_CHARS);
        let scale = 1.0 / (self.j * data.len()) as f64;
        for obs in data.rows() {
            let (log_ratio, km) = self.market_terms(obs)?;
            for (i, pr) in self.products(obs).enumerate() {
                for (k, &z) in pr.z.iter().enumerate() {
                    let z = z * scale;
                    a0[k] += z * log_ratio[i];
                    ap[k] += z * pr.p;
                    bm[k] += z * km[i];
                    for (l, &x) in pr.x.iter().enumerate() {
                        ax[(k, l)] += z * x;
                    }
                    for (l, &y) in pr.y.iter().enumerate() {
                        by[(k, l)] += z * y;
                    }
                }
            }
        }
        let w1 = weighting.view((0, 0), (c, c)).into_owned();
        let w2 = weighting.view((c, c), (c, c)).into_owned();
        let fit = |a: &DMatrix<f64>, w: &DMatrix<f64>| {
            let awa = a.transpose() * w * a;
            let awa_inv = awa.try_inverse()?;
            Some(awa_inv * a.transpose() * w)
        };
        let (p1, p2) = (fit(&ax, &w1)?, fit(&by, &w2)?);
        let profile = |alpha: f64| {
            let r1 = &a0 - &ap * alpha;
            let r2 = &ap + &bm / alpha;
            let (beta, gamma) = (&p1 * &r1, &p2 * &r2);
            let e1 = r1 - &ax * &beta;
            let e2 = r2 - &by * &gamma;
            (e1.dot(&(&w1 * &e1)) + e2.dot(&(&w2 * &e2)), beta, gamma)
        };

        let (lo, hi) = (self.bounds.lower()[0], self.bounds.upper()[0]);
        let grid: Vec<f64> = if hi < 0.0 && lo.is_finite() {
            // Log-spaced in |α|.
            let (a, b) = ((-hi).ln(), (-lo).ln());
            (0..=160).map(|i| -(a + (b - a) * i as f64 / 160.0).exp()).collect()
        } else {
            let (lo, hi) = (lo.max(-1e3), hi.min(-1e-6));
            (0..=160).map(|i| lo + (hi - lo) * i as f64 / 160.0).collect()
        };
        let values: Vec<f64> = grid.iter().map(|&a| profile(a).0).collect();
        let best = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))?
            .0;
        let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[(best + 1).min(grid.len() - 1)]);
        // Golden-section refinement inside the bracketing grid cells.
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..80 {
            let m1 = b - phi * (b - a);
            let m2 = a + phi * (b - a);
            if profile(m1).0 <= profile(m2).0 {
                b = m2;
            } else {
                a = m1;
            }
        }
        let alpha = 0.5 * (a + b);
        let (_, beta, gamma) = profile(alpha);
        let mut theta = DVector::from_iterator(
            self.num_params(),
            std::iter::once(alpha).chain(beta.iter().copied()).chain(gamma.iter().copied()),
        );
        self.bounds.project(theta.as_mut_slice());
        Some(theta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{evaluate_objective, WeightingSpec};

    fn small(true_partition: Partition) -> ConductScenario {
        ConductScenario { t: 12, true_partition, seed: 7, ..ConductScenario::default() }
    }

    #[test]
    fn instruments_for_single_characteristic() {
        let x = vec![DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0])];
        let y = vec![DMatrix::from_row_slice(3, 1, &[1.0, 1.0, 1.0])];
        let z = &build_instruments(&x, &y).unwrap()[0];
        assert_eq!(z.ncols(), 5);
        assert_eq!(z.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0, 1.0, 2.0, 4.0]);
        assert_eq!(z.row(2).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0, 9.0, 2.0, 4.0]);
    }

    #[test]
    fn duplicate_characteristics_are_dropped() {
        let panel = simulate_panel(&small(Partition::collusive(3)), 0).unwrap();
        assert_eq!(panel.num_instruments(), 9);
    }

    #[test]
    fn round_trip_recovers_shocks() {
        for part in super::super::enumerate_partitions(3).unwrap() {
            let sc = small(part.clone());
            let panel = simulate_panel(&sc, 1).unwrap();
            let data = panel.to_dataset().unwrap();
            let model = ConductModel::new(part, panel.num_instruments());
            let theta = [sc.alpha, 2.0, 1.0, 3.0, 0.0, 1.0];
            for (t, obs) in data.rows().enumerate() {
                let (xi, lambda) = model.residuals(obs, &theta).unwrap();
                assert!((xi - &panel.markets[t].xi).amax() < 1e-10);
                assert!((lambda - &panel.markets[t].lambda).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn wrong_conduct_biases_cost_residuals() {
        let sc = ConductScenario { shock_sd: 1e-9, ..small(Partition::collusive(3)) };
        let panel = simulate_panel(&sc, 2).unwrap();
        let data = panel.to_dataset().unwrap();
        let theta = [sc.alpha, 2.0, 1.0, 3.0, 0.0, 1.0];
        let right = ConductModel::new(Partition::collusive(3), 9);
        let wrong = ConductModel::new(Partition::competitive(3), 9);
        let q_right = evaluate_objective(&right, &data, &theta, &WeightingSpec::InverseInstrumentGram).unwrap();
        let q_wrong = evaluate_objective(&wrong, &data, &theta, &WeightingSpec::InverseInstrumentGram).unwrap();
        assert!(q_right < 1e-14);
        assert!(q_wrong > 1e-2);
    }

    #[test]
    fn warm_start_is_near_truth_without_noise() {
        let sc = ConductScenario { shock_sd: 1e-6, t: 40, ..small(Partition::parse("{1,2}{3}").unwrap()) };
        let panel = simulate_panel(&sc, 3).unwrap();
        let data = panel.to_dataset().unwrap();
        let model = ConductModel::new(sc.true_partition.clone(), 9);
        let w = crate::gmm::resolve_weighting(&WeightingSpec::InverseInstrumentGram, &model, &data).unwrap();
        let th = model.warm_start(&data, &w.matrix).unwrap();
        assert!((th[0] - sc.alpha).abs() < 1e-3, "{th}");
    }

    #[test]
    fn zero_outside_share_is_rejected() {
        let mut panel = simulate_panel(&small(Partition::collusive(3)), 0).unwrap();
        panel.markets[0].shares[0] = 0.0;
        assert!(panel.to_dataset().is_err());
    }
}
