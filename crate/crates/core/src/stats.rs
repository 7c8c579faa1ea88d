//! Two-sample Kolmogorov–Smirnov test and envelope-violation statistics.

use serde::{Deserialize, Serialize};

use crate::error::{HavaError, Result};
use crate::mdp::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
}

impl KsResult {
    /// Not distinguishable from the reference at the 5% level.
    pub fn indistinguishable(&self) -> bool {
        self.p_value > 0.05
    }
}

fn sorted(xs: &[f64]) -> Result<Vec<f64>> {
    if xs.iter().any(|x| x.is_nan()) {
        return Err(HavaError::InvalidParameter("sample contains NaN".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("no NaN"));
    Ok(v)
}

/// `sup |F_a − F_b|` by a merge over both sorted samples.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(HavaError::EmptySample);
    }
    let (a, b) = (sorted(a)?, sorted(b)?);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    Ok(d)
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    if lambda < 1.18 {
        // Jacobi-transformed form converges fast for small λ
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        for j in 1.. {
            let k = (2 * j - 1) as f64;
            let term = (-k * k * c).exp();
            sum += term;
            if term < 1e-12 {
                break;
            }
        }
        let cdf = (2.0 * std::f64::consts::PI).sqrt() / lambda * sum;
        return (1.0 - cdf).clamp(0.0, 1.0);
    }
    for j in 1.. {
        let jf = j as f64;
        let term = 2.0 * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Two-sample KS test with the asymptotic p-value at effective size `nm/(n+m)`.
pub fn ks_2samp(a: &[f64], b: &[f64]) -> Result<KsResult> {
    let d = ks_statistic(a, b)?;
    let (n, m) = (a.len(), b.len());
    let en = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_sf(en.sqrt() * d),
        n,
        m,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViolationStats {
    pub median: f64,
    pub mean: f64,
    /// Number of per-tick comparisons aggregated.
    pub samples: usize,
}

pub fn median(values: &[f64]) -> Result<f64> {
    let v = sorted(values)?;
    let n = v.len();
    if n == 0 {
        return Err(HavaError::EmptySample);
    }
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Per-tick distance of each agent speed to the human `[min, max]` speed at the
/// same tick, over the ticks every trajectory reaches.
pub fn violation_stats(agents: &[Trajectory], humans: &[Trajectory]) -> Result<ViolationStats> {
    if agents.is_empty() || humans.is_empty() {
        return Err(HavaError::EmptySample);
    }
    let horizon = agents
        .iter()
        .chain(humans)
        .map(Trajectory::len)
        .min()
        .unwrap_or(0);
    if horizon == 0 {
        return Err(HavaError::EmptySample);
    }
    let mut dists = Vec::with_capacity(horizon * agents.len());
    for t in 0..horizon {
        let (lo, hi) = humans
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
                let v = h.steps[t].action;
                (lo.min(v), hi.max(v))
            });
        for a in agents {
            let v = a.steps[t].action;
            dists.push(if v < lo {
                lo - v
            } else if v > hi {
                v - hi
            } else {
                0.0
            });
        }
    }
    Ok(ViolationStats {
        median: median(&dists)?,
        mean: dists.iter().sum::<f64>() / dists.len() as f64,
        samples: dists.len(),
    })
}

/// Scalar summary of a trajectory fed to the KS test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignFeature {
    /// Episode length in ticks.
    FinishTime,
    /// Every executed speed, pooled.
    SpeedProfile,
}

pub fn feature_sample(trajectories: &[Trajectory], feature: AlignFeature) -> Vec<f64> {
    match feature {
        AlignFeature::FinishTime => trajectories.iter().map(|t| t.len() as f64).collect(),
        AlignFeature::SpeedProfile => trajectories
            .iter()
            .flat_map(|t| t.steps.iter().map(|s| s.action))
            .collect(),
    }
}

/// KS test of agent trajectories against the human dataset on one feature.
pub fn align_test(
    agents: &[Trajectory],
    humans: &[Trajectory],
    feature: AlignFeature,
) -> Result<KsResult> {
    if agents.len() < 2 {
        return Err(HavaError::InvalidParameter(
            "need at least 2 agent trajectories".into(),
        ));
    }
    ks_2samp(
        &feature_sample(agents, feature),
        &feature_sample(humans, feature),
    )
}

/// Lower-triangular matrix of pairwise KS p-values, diagonal 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsMatrix {
    pub feature: AlignFeature,
    pub labels: Vec<String>,
    /// `p_values[i][j]` for `j ≤ i`.
    pub p_values: Vec<Vec<f64>>,
}

pub fn ks_matrix(
    labels: &[String],
    groups: &[Vec<Trajectory>],
    feature: AlignFeature,
) -> Result<KsMatrix> {
    if labels.len() != groups.len() {
        return Err(HavaError::InvalidParameter("one label per group".into()));
    }
    let samples: Vec<Vec<f64>> = groups.iter().map(|g| feature_sample(g, feature)).collect();
    let mut rows = Vec::with_capacity(samples.len());
    for i in 0..samples.len() {
        let mut row = Vec::with_capacity(i + 1);
        for j in 0..=i {
            row.push(if i == j {
                1.0
            } else {
                ks_2samp(&samples[i], &samples[j])?.p_value
            });
        }
        rows.push(row);
    }
    Ok(KsMatrix {
        feature,
        labels: labels.to_vec(),
        p_values: rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{EnvState, TrajectoryStep};

    fn speeds(vs: &[f64]) -> Trajectory {
        let mut t = Trajectory::new(0.99).unwrap();
        for &v in vs {
            t.steps.push(TrajectoryStep {
                state: EnvState::new(vec![], false),
                reputation: 1.0,
                action: v,
                raw_reward: 0.0,
                reward: 0.0,
            });
        }
        t
    }

    #[test]
    fn identical_samples() {
        let a = [1.0, 2.0, 3.0];
        let r = ks_2samp(&a, &a).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn disjoint_support() {
        let r = ks_2samp(&[1.0, 2.0], &[5.0, 6.0, 7.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn ties_across_samples() {
        // F_a jumps to 1 at 1; F_b is 0.5 there
        assert_eq!(ks_statistic(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.5);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(matches!(ks_2samp(&[], &[1.0]), Err(HavaError::EmptySample)));
    }

    #[test]
    fn kolmogorov_reference_values() {
        // P(K > 1.36) ≈ 0.049, P(K > 1.0) ≈ 0.270
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert!((kolmogorov_sf(1.0) - 0.2700).abs() < 1e-3);
        // both branches agree at the switch point
        assert!((kolmogorov_sf(1.18 - 1e-9) - kolmogorov_sf(1.18)).abs() < 1e-9);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn violation_examples() {
        let h = vec![
            speeds(&[10.0, 20.0, 30.0]),
            speeds(&[12.0, 22.0, 28.0, 5.0]),
        ];
        let same = violation_stats(&[h[0].clone()], &h).unwrap();
        assert_eq!((same.median, same.mean), (0.0, 0.0));
        let above = violation_stats(&[speeds(&[14.0, 24.0, 32.0])], &h).unwrap();
        assert_eq!((above.median, above.mean), (2.0, 2.0));
        assert!(violation_stats(&[], &h).is_err());
    }

    #[test]
    fn align_needs_two_agents() {
        let h = vec![speeds(&[1.0]), speeds(&[1.0, 2.0])];
        assert!(align_test(&h[..1], &h, AlignFeature::FinishTime).is_err());
        let r = align_test(&h, &h, AlignFeature::FinishTime).unwrap();
        assert!(r.indistinguishable());
    }

    #[test]
    fn matrix_shape() {
        let g = vec![
            vec![speeds(&[1.0]), speeds(&[1.0, 2.0])],
            vec![speeds(&[1.0; 9])],
        ];
        let m = ks_matrix(&["a".into(), "b".into()], &g, AlignFeature::FinishTime).unwrap();
        assert_eq!(m.p_values.len(), 2);
        assert_eq!(m.p_values[1].len(), 2);
        assert_eq!(m.p_values[1][1], 1.0);
    }
}
