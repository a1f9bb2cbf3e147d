//! Validation-set tuning of the sample count and the mixture weight, and the
//! `x,mean,stdev` plot data both produce.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax_first, mean_stdev, par_map, MixtureInputs, QaError};
use crate::logspace::{format_sig, LogSumAccumulator};

/// Pre-drawn log importance weights, one pool per choice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamplePool {
    pub label: usize,
    pub choices: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub x: f64,
    pub mean: f64,
    pub stdev: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KTuning {
    pub k: usize,
    /// Mean validation accuracy at the chosen `k`.
    pub accuracy: f64,
    /// Accuracy over trials for every `k` tried, as plot rows.
    pub curve: Vec<PlotRow>,
}

/// Picks the sample count. Each trial draws, for every example and choice,
/// a random ordering of the pool; the first `k` entries form that trial's
/// `k`-subset, so subsets are nested across `k` and every `k` sees the same
/// randomness. Accuracy is averaged over trials; ties go to the smaller `k`.
pub fn tune_samples(
    pools: &[ExamplePool],
    pool_size: usize,
    ks: &[usize],
    trials: usize,
    seed: u64,
    threads: usize,
) -> Result<KTuning, QaError> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    for &k in &ks {
        if k == 0 || k > pool_size {
            return Err(QaError::BadK { k, pool: pool_size });
        }
    }
    for p in pools {
        for c in &p.choices {
            if c.len() != pool_size {
                return Err(QaError::PoolMismatch {
                    expected: pool_size,
                    found: c.len(),
                });
            }
        }
    }
    let k_max = ks.last().copied().unwrap_or(0);
    let trial_ids: Vec<u64> = (0..trials as u64).collect();

    // correct[t][j]: examples right in trial t with k = ks[j].
    let correct: Vec<Vec<usize>> = par_map(&trial_ids, threads, |_, &t| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(t);
        let mut counts = vec![0; ks.len()];
        let mut order: Vec<usize> = (0..pool_size).collect();
        for ex in pools {
            // est[c][k - 1]: log mean of the first k weights of choice c.
            let est: Vec<Vec<f64>> = ex
                .choices
                .iter()
                .map(|weights| {
                    let (picked, _) = order.partial_shuffle(&mut rng, k_max);
                    let mut acc = LogSumAccumulator::new();
                    picked
                        .iter()
                        .enumerate()
                        .map(|(j, &i)| {
                            acc.add(weights[i]);
                            acc.value() - ((j + 1) as f64).ln()
                        })
                        .collect()
                })
                .collect();
            for (j, &k) in ks.iter().enumerate() {
                let scores: Vec<f64> = est.iter().map(|e| e[k - 1]).collect();
                if argmax_first(&scores).0 == ex.label {
                    counts[j] += 1;
                }
            }
        }
        counts
    });

    let n_ex = pools.len().max(1) as f64;
    let mut best = 0;
    let mut curve = Vec::with_capacity(ks.len());
    let mut totals = Vec::with_capacity(ks.len());
    for (j, &k) in ks.iter().enumerate() {
        let accs: Vec<f64> = correct.iter().map(|c| c[j] as f64 / n_ex).collect();
        let (mean, stdev) = mean_stdev(&accs);
        curve.push(PlotRow {
            x: k as f64,
            mean,
            stdev,
        });
        totals.push(correct.iter().map(|c| c[j]).sum::<usize>());
        if totals[j] > totals[best] {
            best = j;
        }
    }
    Ok(KTuning {
        k: ks.get(best).copied().unwrap_or(1),
        accuracy: curve.get(best).map_or(f64::NAN, |r| r.mean),
        curve,
    })
}

/// `points` evenly spaced weights from 0 to 1 inclusive.
pub fn alpha_grid(points: usize) -> Result<Vec<f64>, QaError> {
    if points < 2 {
        return Err(QaError::BadGrid(points));
    }
    let last = (points - 1) as f64;
    Ok((0..points).map(|j| j as f64 / last).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct AlphaTuning {
    pub alpha: f64,
    pub accuracy: f64,
    pub curve: Vec<PlotRow>,
}

fn correct_at(inputs: &[MixtureInputs], alpha: f64) -> usize {
    inputs.iter().filter(|x| x.is_correct(alpha)).count()
}

/// Picks the grid weight with the best validation accuracy; ties go to the
/// larger weight, i.e. closer to the canonical classifier.
pub fn tune_alpha(inputs: &[MixtureInputs], points: usize) -> Result<AlphaTuning, QaError> {
    let grid = alpha_grid(points)?;
    let n = inputs.len().max(1) as f64;
    let counts: Vec<usize> = grid.iter().map(|&a| correct_at(inputs, a)).collect();
    let mut best = grid.len() - 1;
    for j in (0..grid.len()).rev() {
        if counts[j] > counts[best] {
            best = j;
        }
    }
    Ok(AlphaTuning {
        alpha: grid[best],
        accuracy: counts[best] as f64 / n,
        curve: grid
            .iter()
            .zip(&counts)
            .map(|(&x, &c)| PlotRow {
                x,
                mean: c as f64 / n,
                stdev: 0.0,
            })
            .collect(),
    })
}

/// Mixture accuracy across the grid, mean and spread over runs (one run
/// per seed).
pub fn alpha_curve(runs: &[Vec<MixtureInputs>], points: usize) -> Result<Vec<PlotRow>, QaError> {
    let grid = alpha_grid(points)?;
    Ok(grid
        .into_iter()
        .map(|x| {
            let accs: Vec<f64> = runs
                .iter()
                .map(|r| correct_at(r, x) as f64 / r.len().max(1) as f64)
                .collect();
            let (mean, stdev) = mean_stdev(&accs);
            PlotRow { x, mean, stdev }
        })
        .collect())
}

/// Plot rows as CSV with header `x,mean,stdev`, 12 significant digits.
pub fn plot_csv(rows: &[PlotRow]) -> Result<String, QaError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["x", "mean", "stdev"])?;
    for r in rows {
        w.write_record([
            format_sig(r.x, 12),
            format_sig(r.mean, 12),
            format_sig(r.stdev, 12),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| QaError::Csv(e.into_error().into()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_plot_csv(text: &str) -> Result<Vec<PlotRow>, QaError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["x", "mean", "stdev"] {
        return Err(QaError::Parse {
            line: 1,
            reason: format!("expected header x,mean,stdev, got {:?}", header.as_slice()),
        });
    }
    r.deserialize()
        .map(|row| row.map_err(QaError::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_pool(label: usize, values: &[f64], size: usize) -> ExamplePool {
        ExamplePool {
            label,
            choices: values.iter().map(|&v| vec![v; size]).collect(),
        }
    }

    #[test]
    fn identical_samples_make_k_irrelevant() {
        let pools = vec![
            constant_pool(0, &[-1.0, -2.0], 16),
            constant_pool(1, &[-1.0, -2.0], 16),
        ];
        let ks: Vec<usize> = (1..=16).collect();
        let t = tune_samples(&pools, 16, &ks, 32, 5, 1).unwrap();
        assert_eq!(t.k, 1);
        assert!(t.curve.iter().all(|r| r.mean == 0.5 && r.stdev == 0.0));
    }

    #[test]
    fn pool_checks() {
        let pools = vec![constant_pool(0, &[0.0, 0.0], 8)];
        assert!(matches!(
            tune_samples(&pools, 16, &[1], 1, 0, 1),
            Err(QaError::PoolMismatch {
                expected: 16,
                found: 8
            })
        ));
        assert!(matches!(
            tune_samples(&pools, 8, &[9], 1, 0, 1),
            Err(QaError::BadK { k: 9, .. })
        ));
    }

    #[test]
    fn threads_do_not_change_tuning() {
        let mut pools = Vec::new();
        for e in 0..6 {
            let w: Vec<f64> = (0..32).map(|i| -(((i * 7 + e) % 11) as f64)).collect();
            pools.push(ExamplePool {
                label: e % 2,
                choices: vec![w.clone(), w.iter().rev().map(|x| x - 0.1).collect()],
            });
        }
        let ks: Vec<usize> = (1..=32).collect();
        let a = tune_samples(&pools, 32, &ks, 40, 3, 1).unwrap();
        let b = tune_samples(&pools, 32, &ks, 40, 3, 4).unwrap();
        assert_eq!(a.k, b.k);
        assert_eq!(a.curve, b.curve);
    }

    #[test]
    fn alpha_ties_go_to_canonical_side() {
        let perfect = MixtureInputs {
            label: 0,
            canonical: vec![0.0, -1.0],
            noncanonical: vec![-1.0, 0.0],
        };
        // Canonical is right; every alpha above the crossover also is.
        let t = tune_alpha(&[perfect], 11).unwrap();
        assert_eq!(t.alpha, 1.0);
        let flipped = MixtureInputs {
            label: 1,
            canonical: vec![0.0, -0.0001],
            noncanonical: vec![f64::NEG_INFINITY, 0.0],
        };
        assert_eq!(tune_alpha(&[flipped], 11).unwrap().alpha, 0.9);
        assert!(matches!(alpha_grid(1), Err(QaError::BadGrid(1))));
    }

    #[test]
    fn plot_csv_round_trip() {
        let rows = vec![
            PlotRow {
                x: 1.0,
                mean: 0.5,
                stdev: 0.125,
            },
            PlotRow {
                x: 0.05,
                mean: 1.0 / 3.0,
                stdev: 0.0,
            },
        ];
        let text = plot_csv(&rows).unwrap();
        assert!(text.starts_with("x,mean,stdev\n"));
        let back = parse_plot_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], rows[0]);
        assert!((back[1].mean - rows[1].mean).abs() < 1e-12);
        assert!(parse_plot_csv("a,b,c\n1,2,3\n").is_err());
    }
}
