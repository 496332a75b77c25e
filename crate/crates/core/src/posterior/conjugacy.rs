//! Grid-integration checks of the conjugate updates on one-state toys.
//!
//! Each check evaluates prior × likelihood on a dense grid, normalises it
//! numerically and reports the largest relative deviation from the closed
//! form posterior density over the grid points carrying non-negligible mass.

use statrs::function::gamma::ln_gamma;

use super::NormalGamma;

/// Result of a grid check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridCheck {
    pub max_rel_error: f64,
    pub points_compared: usize,
}

fn ln_beta_pdf(x: f64, a: f64, b: f64) -> f64 {
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() + ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
}

/// Two-outcome Dirichlet (Beta) prior `alpha0` updated with `outcomes`
/// (each 0 or 1), against a midpoint grid on `(0, 1)`.
pub fn dirichlet_grid_check(alpha0: [f64; 2], outcomes: &[usize], grid: usize) -> GridCheck {
    let ones = outcomes.iter().filter(|&&o| o == 1).count() as f64;
    let zeros = outcomes.len() as f64 - ones;
    // Conjugate posterior on the probability of outcome 1.
    let (a_post, b_post) = (alpha0[1] + ones, alpha0[0] + zeros);

    let h = 1.0 / grid as f64;
    let xs: Vec<f64> = (0..grid).map(|i| (i as f64 + 0.5) * h).collect();
    let unnorm: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let prior = ln_beta_pdf(x, alpha0[1], alpha0[0]);
            let lik = ones * x.ln() + zeros * (1.0 - x).ln();
            prior + lik
        })
        .collect();
    compare(&unnorm, h, |i| ln_beta_pdf(xs[i], a_post, b_post))
}

/// Normal-Gamma prior updated with Gaussian `rewards`, against a grid over
/// `(mean, precision)`.
pub fn normal_gamma_grid_check(prior: NormalGamma, rewards: &[f64], grid: usize) -> GridCheck {
    let mut post = prior;
    for &r in rewards {
        post.update(r);
    }
    // Precision range covers the Gamma posterior far into both tails.
    let tau_mean = post.alpha / post.beta;
    let tau_sd = post.alpha.sqrt() / post.beta;
    let tau_hi = tau_mean + 12.0 * tau_sd;
    let mu_sd = (post.beta / (post.alpha * post.kappa)).sqrt();
    let (mu_lo, mu_hi) = (post.mu - 25.0 * mu_sd, post.mu + 25.0 * mu_sd);
    let h_tau = tau_hi / grid as f64;
    let h_mu = (mu_hi - mu_lo) / grid as f64;

    let mut unnorm = Vec::with_capacity(grid * grid);
    let mut exact = Vec::with_capacity(grid * grid);
    for i in 0..grid {
        let tau = (i as f64 + 0.5) * h_tau;
        for k in 0..grid {
            let mu = mu_lo + (k as f64 + 0.5) * h_mu;
            let lik: f64 = rewards
                .iter()
                .map(|&r| 0.5 * tau.ln() - 0.5 * tau * (r - mu).powi(2))
                .sum();
            unnorm.push(prior.ln_density(mu, tau) + lik);
            exact.push(post.ln_density(mu, tau));
        }
    }
    compare(&unnorm, h_tau * h_mu, |i| exact[i])
}

fn compare(ln_unnorm: &[f64], cell: f64, ln_exact: impl Fn(usize) -> f64) -> GridCheck {
    let max = ln_unnorm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mass: f64 = ln_unnorm.iter().map(|&l| (l - max).exp()).sum::<f64>() * cell;
    let ln_z = max + mass.ln();
    let exact: Vec<f64> = (0..ln_unnorm.len()).map(|i| ln_exact(i).exp()).collect();
    let peak = exact.iter().copied().fold(0.0, f64::max);
    let mut worst = 0.0f64;
    let mut compared = 0;
    for (i, &e) in exact.iter().enumerate() {
        if e < 1e-3 * peak {
            continue;
        }
        let numeric = (ln_unnorm[i] - ln_z).exp();
        worst = worst.max((numeric - e).abs() / e);
        compared += 1;
    }
    GridCheck {
        max_rel_error: worst,
        points_compared: compared,
    }
}
