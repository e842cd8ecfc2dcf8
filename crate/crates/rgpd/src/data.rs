//! Dataset ingestion (CMAPSS text format), RUL labeling, windowing,
//! normalization, Mixup, and a synthetic degradation generator for fast
//! deterministic tests.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CMAPSS_COLS: usize = 26;
pub const CMAPSS_SENSORS: usize = 21;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitTrajectory {
    pub unit_id: u32,
    pub cycles: Vec<u32>, // strictly increasing
    pub settings: Vec<Vec<f64>>,
    pub channels: Vec<Vec<f64>>, // rows × D, after channel dropping
    pub run_to_failure: bool,
    /// State-of-health series in (0, 1]; present for SOH-style datasets.
    pub soh: Option<Vec<f64>>,
}

impl UnitTrajectory {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorWindow {
    pub unit_id: u32,
    pub data: Vec<Vec<f64>>, // T × D
    /// Per-step cycle stamps divided by the unit's final cycle, in [0, 1].
    pub t_norm: Vec<f64>,
    pub label: f64,
    pub broken: bool,
    /// Set when the trajectory was shorter than the window and the first row
    /// was repeated to fill.
    pub padded: bool,
    pub end_cycle: u32,
}

impl SensorWindow {
    pub fn size(&self) -> usize {
        self.data.len()
    }
}

/// Parse the whitespace-separated 26-column CMAPSS text format into per-unit
/// trajectories. `drop_channels` lists sensor indices (0-based, 0..21) to
/// eliminate as uninformative.
pub fn load_cmapss(path: &Path, drop_channels: &[usize]) -> Result<Vec<UnitTrajectory>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_cmapss(&text, drop_channels)
}

pub fn parse_cmapss(text: &str, drop_channels: &[usize]) -> Result<Vec<UnitTrajectory>> {
    if let Some(&bad) = drop_channels.iter().find(|&&c| c >= CMAPSS_SENSORS) {
        return Err(Error::invalid(format!(
            "drop_channels index {bad} out of range 0..{CMAPSS_SENSORS}"
        )));
    }
    let mut order: Vec<u32> = Vec::new();
    let mut units: std::collections::HashMap<u32, Vec<(u32, Vec<f64>, Vec<f64>)>> =
        std::collections::HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != CMAPSS_COLS {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {CMAPSS_COLS} columns, found {}", fields.len()),
            });
        }
        let nums: Vec<f64> = fields
            .iter()
            .map(|f| {
                f.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("not a number: {f:?}"),
                })
            })
            .collect::<Result<_>>()?;
        let unit = nums[0] as u32;
        let cycle = nums[1] as u32;
        let settings = nums[2..5].to_vec();
        let sensors: Vec<f64> = nums[5..]
            .iter()
            .enumerate()
            .filter(|(i, _)| !drop_channels.contains(i))
            .map(|(_, &v)| v)
            .collect();
        if !units.contains_key(&unit) {
            order.push(unit);
        }
        units.entry(unit).or_default().push((cycle, settings, sensors));
    }
    let mut out = Vec::with_capacity(order.len());
    for unit_id in order {
        let mut rows = units.remove(&unit_id).unwrap();
        rows.sort_by_key(|r| r.0);
        let cycles: Vec<u32> = rows.iter().map(|r| r.0).collect();
        for w in cycles.windows(2) {
            if w[1] != w[0] + 1 {
                eprintln!(
                    "warning: unit {unit_id} has non-contiguous cycles {} -> {}",
                    w[0], w[1]
                );
            }
        }
        out.push(UnitTrajectory {
            unit_id,
            cycles,
            settings: rows.iter().map(|r| r.1.clone()).collect(),
            channels: rows.into_iter().map(|r| r.2).collect(),
            run_to_failure: true,
            soh: None,
        });
    }
    Ok(out)
}

/// Piecewise RUL: min(cap, last_cycle − cycle). The final cycle of a
/// run-to-failure unit gets 0.
pub fn label_rul(traj: &UnitTrajectory, cap: f64) -> Result<Vec<f64>> {
    if cap <= 0.0 {
        return Err(Error::invalid(format!("RUL cap {cap} must be > 0")));
    }
    let last = *traj.cycles.last().ok_or_else(|| Error::invalid("empty trajectory"))? as f64;
    Ok(traj
        .cycles
        .iter()
        .map(|&c| cap.min(last - c as f64))
        .collect())
}

/// Sliding windows over one trajectory for every requested size; a
/// trajectory shorter than a size yields one window left-padded by repeating
/// the first row, flagged `padded`. The label is the last covered cycle's
/// label; `broken` when label ≤ broken_threshold (0 for RUL, 0.8 for SOH).
pub fn make_windows(
    traj: &UnitTrajectory,
    labels: &[f64],
    sizes: &[usize],
    stride: usize,
    broken_threshold: f64,
) -> Result<Vec<SensorWindow>> {
    if sizes.is_empty() {
        return Err(Error::invalid("make_windows needs at least one window size"));
    }
    if stride == 0 || sizes.contains(&0) {
        return Err(Error::invalid("window sizes and stride must be positive"));
    }
    if labels.len() != traj.len() {
        return Err(Error::invalid(format!(
            "label count {} != trajectory length {}",
            labels.len(),
            traj.len()
        )));
    }
    let t_max = *traj.cycles.last().unwrap() as f64;
    let len = traj.len();
    let mut out = Vec::new();
    for &size in sizes {
        if len < size {
            let pad = size - len;
            let mut data = vec![traj.channels[0].clone(); pad];
            data.extend(traj.channels.iter().cloned());
            let mut t_norm = vec![traj.cycles[0] as f64 / t_max; pad];
            t_norm.extend(traj.cycles.iter().map(|&c| c as f64 / t_max));
            let label = labels[len - 1];
            out.push(SensorWindow {
                unit_id: traj.unit_id,
                data,
                t_norm,
                label,
                broken: label <= broken_threshold,
                padded: true,
                end_cycle: *traj.cycles.last().unwrap(),
            });
            continue;
        }
        let mut end = size;
        while end <= len {
            let label = labels[end - 1];
            out.push(SensorWindow {
                unit_id: traj.unit_id,
                data: traj.channels[end - size..end].to_vec(),
                t_norm: traj.cycles[end - size..end]
                    .iter()
                    .map(|&c| c as f64 / t_max)
                    .collect(),
                label,
                broken: label <= broken_threshold,
                padded: false,
                end_cycle: traj.cycles[end - 1],
            });
            end += stride;
        }
    }
    Ok(out)
}

/// Per-channel z-score statistics; fitting happens in the constructor, so
/// applying before fitting is unrepresentable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub const STD_FLOOR: f64 = 1e-8;

impl Normalizer {
    pub fn fit(train: &[SensorWindow]) -> Result<Normalizer> {
        let d = train
            .first()
            .and_then(|w| w.data.first())
            .map(Vec::len)
            .ok_or_else(|| Error::invalid("cannot fit a normalizer on no data"))?;
        let mut sum = vec![0.0; d];
        let mut sum_sq = vec![0.0; d];
        let mut n = 0usize;
        for w in train {
            for row in &w.data {
                if row.len() != d {
                    return Err(Error::invalid("inconsistent channel widths"));
                }
                for (c, &v) in row.iter().enumerate() {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
                n += 1;
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std: Vec<f64> = sum_sq
            .iter()
            .zip(&mean)
            .map(|(sq, m)| (sq / nf - m * m).max(0.0).sqrt())
            .collect();
        Ok(Normalizer { mean, std })
    }

    /// z-score with train statistics; near-constant channels map to 0.
    pub fn apply(&self, window: &SensorWindow) -> SensorWindow {
        let mut out = window.clone();
        for row in &mut out.data {
            for (c, v) in row.iter_mut().enumerate() {
                *v = if self.std[c] < STD_FLOOR {
                    0.0
                } else {
                    (*v - self.mean[c]) / self.std[c]
                };
            }
        }
        out
    }

    /// Inverse of `apply` for channels with real variance.
    pub fn denormalize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, &v)| {
                if self.std[c] < STD_FLOOR {
                    self.mean[c]
                } else {
                    v * self.std[c] + self.mean[c]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<SensorWindow>,
    pub valid: Vec<SensorWindow>,
    pub test: Vec<SensorWindow>,
    pub normalizer: Normalizer,
}

/// Split unit indices 80/20 (by unit, not by window), seeded.
pub fn split_units(n_units: usize, train_fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n_units).collect();
    // Fisher-Yates
    for i in (1..idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    let cut = ((n_units as f64 * train_fraction).round() as usize).clamp(1, n_units.saturating_sub(1).max(1));
    let valid = idx.split_off(cut.min(idx.len()));
    (idx, valid)
}

/// x̂ = λ·x_i + (1−λ)·x_j, ŷ = λ·y_i + (1−λ)·y_j with λ ∼ Beta(α, α).
pub fn mixup(
    x_i: &[Vec<f64>],
    y_i: f64,
    x_j: &[Vec<f64>],
    y_j: f64,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<Vec<f64>>, f64, f64)> {
    if x_i.len() != x_j.len() || x_i.iter().zip(x_j).any(|(a, b)| a.len() != b.len()) {
        return Err(Error::invalid("mixup inputs must share a shape"));
    }
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::invalid(format!("bad mixup alpha {alpha}: {e}")))?;
    let lambda: f64 = beta.sample(rng);
    Ok(mixup_with_lambda(x_i, y_i, x_j, y_j, lambda))
}

pub fn mixup_with_lambda(
    x_i: &[Vec<f64>],
    y_i: f64,
    x_j: &[Vec<f64>],
    y_j: f64,
    lambda: f64,
) -> (Vec<Vec<f64>>, f64, f64) {
    let x: Vec<Vec<f64>> = x_i
        .iter()
        .zip(x_j)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(&u, &v)| lambda * u + (1.0 - lambda) * v)
                .collect()
        })
        .collect();
    (x, lambda * y_i + (1.0 - lambda) * y_j, lambda)
}

pub struct SynthConfig {
    pub n_units: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub n_channels: usize,
    pub noise_sigma: f64,
}

/// Knee-shaped degradation: latent health holds at 1 until a random knee,
/// then decays to 0 at end of life; channels are affine transforms of health
/// plus Gaussian noise. SOH is health mapped to [0.7, 1].
pub fn synth_degradation(cfg: &SynthConfig, seed: u64) -> Vec<UnitTrajectory> {
    use rand::SeedableRng;
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cfg.n_units);
    for unit in 0..cfg.n_units {
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let knee = rng.gen_range(0.2..0.6) * len as f64;
        let power = rng.gen_range(1.5..2.5);
        let coeffs: Vec<(f64, f64)> = (0..cfg.n_channels)
            .map(|_| (rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let mut channels = Vec::with_capacity(len);
        let mut soh = Vec::with_capacity(len);
        for t in 1..=len {
            let h = if (t as f64) < knee {
                1.0
            } else {
                let frac = (t as f64 - knee) / (len as f64 - knee);
                (1.0 - frac.powf(power)).max(0.0)
            };
            soh.push(0.7 + 0.3 * h);
            channels.push(
                coeffs
                    .iter()
                    .map(|&(a, b)| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        a * h + b + cfg.noise_sigma * noise
                    })
                    .collect(),
            );
        }
        out.push(UnitTrajectory {
            unit_id: unit as u32 + 1,
            cycles: (1..=len as u32).collect(),
            settings: vec![vec![0.0; 3]; len],
            channels,
            run_to_failure: true,
            soh: Some(soh),
        });
    }
    out
}

/// One window-step per line, with a header row.
pub fn windows_to_csv(windows: &[SensorWindow]) -> String {
    let d = windows
        .first()
        .and_then(|w| w.data.first())
        .map_or(0, Vec::len);
    let mut s = String::from("unit,end_cycle,step,t_norm,label,broken,padded");
    for c in 0..d {
        let _ = write!(s, ",ch{c}");
    }
    s.push('\n');
    for w in windows {
        for (step, row) in w.data.iter().enumerate() {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{}",
                w.unit_id, w.end_cycle, step, w.t_norm[step], w.label, w.broken as u8, w.padded as u8
            );
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_line(unit: u32, cycle: u32, fill: f64) -> String {
        let mut cols = vec![unit.to_string(), cycle.to_string()];
        cols.extend((0..24).map(|i| format!("{}", fill + i as f64)));
        cols.join(" ")
    }

    fn toy_traj(len: usize) -> UnitTrajectory {
        UnitTrajectory {
            unit_id: 1,
            cycles: (1..=len as u32).collect(),
            settings: vec![vec![0.0; 3]; len],
            channels: (0..len).map(|i| vec![i as f64, 2.0 * i as f64]).collect(),
            run_to_failure: true,
            soh: None,
        }
    }

    #[test]
    fn parse_two_unit_toy_file() {
        let text: String = [
            toy_line(1, 1, 0.5),
            toy_line(1, 2, 0.6),
            toy_line(1, 3, 0.7),
            toy_line(2, 1, 1.5),
            toy_line(2, 2, 1.6),
            toy_line(2, 3, 1.7),
        ]
        .join("\n");
        let units = parse_cmapss(&text, &[]).unwrap();
        assert_eq!(units.len(), 2);
        assert_eq!(units[0].unit_id, 1);
        assert_eq!(units[0].len(), 3);
        assert_eq!(units[1].len(), 3);
        assert_eq!(units[0].num_channels(), 21);
        assert_eq!(units[0].settings[0], vec![0.5, 1.5, 2.5]);
        assert_eq!(units[0].channels[0][0], 3.5);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = format!("{}\n1 2 3\n", toy_line(1, 1, 0.0));
        match parse_cmapss(&text, &[]) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn channel_dropping() {
        let text = toy_line(1, 1, 0.0);
        let units = parse_cmapss(&text, &[0, 5, 20]).unwrap();
        assert_eq!(units[0].num_channels(), 18);
        // sensor 0 is column 5 (value 3.0 + fill); after dropping 0 the first
        // kept sensor is index 1 → raw value 4.0
        assert_eq!(units[0].channels[0][0], 4.0);
        assert!(parse_cmapss(&text, &[21]).is_err());
    }

    #[test]
    fn rul_labels() {
        let traj = toy_traj(5);
        assert_eq!(label_rul(&traj, 125.0).unwrap(), vec![4.0, 3.0, 2.0, 1.0, 0.0]);

        let traj = toy_traj(200);
        let labels = label_rul(&traj, 125.0).unwrap();
        assert!(labels[..75].iter().all(|&l| l == 125.0));
        assert_eq!(labels[75], 124.0);
        assert_eq!(*labels.last().unwrap(), 0.0);

        let labels = label_rul(&toy_traj(200), f64::INFINITY).unwrap();
        assert_eq!(labels[0], 199.0);
        assert!(label_rul(&traj, 0.0).is_err());
    }

    #[test]
    fn window_counts_and_labels() {
        let traj = toy_traj(5);
        let labels = label_rul(&traj, 125.0).unwrap();
        let ws = make_windows(&traj, &labels, &[3], 1, 0.0).unwrap();
        assert_eq!(ws.len(), 3);
        assert_eq!(
            ws.iter().map(|w| w.end_cycle).collect::<Vec<_>>(),
            vec![3, 4, 5]
        );
        assert_eq!(
            ws.iter().map(|w| w.label).collect::<Vec<_>>(),
            vec![2.0, 1.0, 0.0]
        );
        assert!(ws[2].broken && !ws[0].broken);

        let multi = make_windows(&traj, &labels, &[3, 4, 5], 1, 0.0).unwrap();
        assert_eq!(multi.len(), 3 + 2 + 1);
        assert!(make_windows(&traj, &labels, &[], 1, 0.0).is_err());
    }

    #[test]
    fn short_trajectory_left_pads() {
        let traj = toy_traj(3);
        let labels = label_rul(&traj, 125.0).unwrap();
        let ws = make_windows(&traj, &labels, &[5], 1, 0.0).unwrap();
        assert_eq!(ws.len(), 1);
        assert!(ws[0].padded);
        assert_eq!(ws[0].size(), 5);
        assert_eq!(ws[0].data[0], ws[0].data[1]); // repeated first row
        assert_eq!(ws[0].data[2], vec![0.0, 0.0]);
        assert_eq!(ws[0].label, 0.0);
    }

    #[test]
    fn normalizer_zero_mean_unit_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = UnitTrajectory {
            channels: (0..50)
                .map(|_| vec![rng.gen_range(-5.0..5.0), rng.gen_range(100.0..200.0), 7.0])
                .collect(),
            cycles: (1..=50).collect(),
            settings: vec![vec![0.0; 3]; 50],
            unit_id: 1,
            run_to_failure: true,
            soh: None,
        };
        let labels = label_rul(&traj, 125.0).unwrap();
        let ws = make_windows(&traj, &labels, &[50], 1, 0.0).unwrap();
        let norm = Normalizer::fit(&ws).unwrap();
        let applied = norm.apply(&ws[0]);
        for c in 0..2 {
            let vals: Vec<f64> = applied.data.iter().map(|r| r[c]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {c} std {}", var.sqrt());
        }
        // constant channel maps to exactly 0
        assert!(applied.data.iter().all(|r| r[2] == 0.0));
        // round-trip
        for (orig, row) in ws[0].data.iter().zip(&applied.data) {
            let back = norm.denormalize(row);
            for c in 0..3 {
                assert!((back[c] - orig[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn train_statistics_reused_verbatim() {
        let traj = toy_traj(10);
        let labels = label_rul(&traj, 125.0).unwrap();
        let ws = make_windows(&traj, &labels, &[5], 1, 0.0).unwrap();
        let norm = Normalizer::fit(&ws[..3]).unwrap();
        let again = Normalizer::fit(&ws[..3]).unwrap();
        assert_eq!(norm, again); // stats are a pure function of train
    }

    #[test]
    fn mixup_cases() {
        let x_i = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let x_j = vec![vec![5.0, 6.0], vec![7.0, 8.0]];
        let (x, y, _) = mixup_with_lambda(&x_i, 10.0, &x_j, 20.0, 1.0);
        assert_eq!(x, x_i);
        assert_eq!(y, 10.0);
        let (_, y, _) = mixup_with_lambda(&x_i, 10.0, &x_j, 20.0, 0.5);
        assert_eq!(y, 15.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (x, _, lambda) = mixup(&x_i, 10.0, &x_j, 20.0, 0.4, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&lambda));
            for (row, (a, b)) in x.iter().zip(x_i.iter().zip(&x_j)) {
                for (v, (&lo, &hi)) in row.iter().zip(a.iter().zip(b)) {
                    let (lo, hi) = (lo.min(hi), lo.max(hi));
                    assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
                }
            }
        }
        let short = vec![vec![1.0]];
        assert!(mixup(&x_i, 1.0, &short, 2.0, 0.4, &mut rng).is_err());
    }

    #[test]
    fn beta_lambda_stays_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beta = Beta::new(0.4, 0.4).unwrap();
        for _ in 0..100_000 {
            let l: f64 = beta.sample(&mut rng);
            assert!((0.0..=1.0).contains(&l));
        }
    }

    #[test]
    fn synth_is_deterministic_and_sized() {
        let cfg = SynthConfig {
            n_units: 50,
            min_len: 40,
            max_len: 80,
            n_channels: 4,
            noise_sigma: 0.05,
        };
        let a = synth_degradation(&cfg, 7);
        let b = synth_degradation(&cfg, 7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        for u in &a {
            assert!((40..=80).contains(&u.len()));
            assert_eq!(u.num_channels(), 4);
        }
        let c = synth_degradation(&cfg, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn noiseless_synth_is_monotone_in_health() {
        use crate::physics::monotonicity_loss;
        use crate::Tensor;
        let cfg = SynthConfig {
            n_units: 5,
            min_len: 30,
            max_len: 50,
            n_channels: 3,
            noise_sigma: 0.0,
        };
        for u in synth_degradation(&cfg, 3) {
            let soh = u.soh.clone().unwrap();
            // health never increases
            for w in soh.windows(2) {
                assert!(w[1] <= w[0] + 1e-12);
            }
            let t = Tensor::new(vec![1, soh.len()], soh).unwrap();
            let (_, loss) = monotonicity_loss(&t).unwrap();
            assert_eq!(loss.item(), 0.0);
            // true RUL labels are strictly decreasing → zero monotonicity loss
            let labels = label_rul(&u, f64::INFINITY).unwrap();
            let lt = Tensor::new(vec![1, labels.len()], labels).unwrap();
            let (_, loss) = monotonicity_loss(&lt).unwrap();
            assert_eq!(loss.item(), 0.0);
        }
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (train, valid) = split_units(100, 0.8, &mut rng);
        assert_eq!(train.len(), 80);
        assert_eq!(valid.len(), 20);
        let mut all: Vec<usize> = train.iter().chain(&valid).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        let mut rng2 = ChaCha8Rng::seed_from_u64(4);
        let (train2, _) = split_units(100, 0.8, &mut rng2);
        assert_eq!(train, train2);
    }

    #[test]
    fn csv_export_has_header_and_rows() {
        let traj = toy_traj(4);
        let labels = label_rul(&traj, 125.0).unwrap();
        let ws = make_windows(&traj, &labels, &[2], 1, 0.0).unwrap();
        let csv = windows_to_csv(&ws);
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "unit,end_cycle,step,t_norm,label,broken,padded,ch0,ch1"
        );
        assert_eq!(lines.count(), 3 * 2); // 3 windows × 2 steps
    }
}
