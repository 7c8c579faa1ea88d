//! Data-driven speed norms: a per-bin `[v_min, v_max]` envelope over the
//! speeds humans chose in each junction situation.
//!
//! A sample pairs the state a human was in with the speed it executed from
//! there. Bins are `(⌊position / width⌋, priority-passed flag)`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alignment::{min_distance, ActionSet, NormModel};
use crate::error::{HavaError, Result};
use crate::junction::{F_PASSED, F_POSITION};
use crate::mdp::{ActionValue, EnvState, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BinConfig {
    pub bin_width_m: f64,
    pub position_feature: usize,
    pub phase_feature: usize,
}

impl Default for BinConfig {
    fn default() -> Self {
        Self {
            bin_width_m: 2.0,
            position_feature: F_POSITION,
            phase_feature: F_PASSED,
        }
    }
}

impl BinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width_m > 0.0) || !self.bin_width_m.is_finite() {
            return Err(HavaError::InvalidParameter(format!(
                "bin_width_m must be > 0, got {}",
                self.bin_width_m
            )));
        }
        Ok(())
    }

    /// `(phase, position index)` of a state.
    pub fn bin_of(&self, state: &EnvState) -> Result<(u8, usize)> {
        let need = self.position_feature.max(self.phase_feature) + 1;
        if state.features.len() < need {
            return Err(HavaError::Format(format!(
                "state has {} features, binning needs {need}",
                state.features.len()
            )));
        }
        let x = state.features[self.position_feature];
        let phase = u8::from(state.features[self.phase_feature] != 0.0);
        let idx = (x.max(0.0) / self.bin_width_m).floor() as usize;
        Ok((phase, idx))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub v_min: f64,
    pub v_max: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinEntry {
    pub phase: u8,
    pub index: usize,
    #[serde(flatten)]
    pub envelope: Envelope,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredModel {
    config: BinConfig,
    dataset_hash: String,
    sample_count: usize,
    bins: Vec<BinEntry>,
}

/// Fitted envelope. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedEnvelopeModel {
    config: BinConfig,
    dataset_hash: String,
    sample_count: usize,
    /// Dense per-phase tables indexed by position bin.
    phases: [Vec<Option<Envelope>>; 2],
    /// Same tables with every gap filled by its fallback.
    resolved: [Vec<Envelope>; 2],
}

/// SHA-256 over the CSV form of every trajectory, in order.
pub fn dataset_hash(trajectories: &[Trajectory], feature_names: &[String]) -> Result<String> {
    let mut hasher = Sha256::new();
    for t in trajectories {
        let mut buf = Vec::new();
        t.write_csv(&mut buf, feature_names)?;
        hasher.update((buf.len() as u64).to_le_bytes());
        hasher.update(&buf);
    }
    Ok(hex::encode(hasher.finalize()))
}

impl SpeedEnvelopeModel {
    /// Min/max executed speed per bin over every step of every trajectory.
    pub fn fit(
        trajectories: &[Trajectory],
        feature_names: &[String],
        config: BinConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut phases: [Vec<Option<Envelope>>; 2] = [Vec::new(), Vec::new()];
        let mut n = 0;
        for t in trajectories {
            for step in &t.steps {
                let (phase, idx) = config.bin_of(&step.state)?;
                let v = step.action;
                if !v.is_finite() {
                    return Err(HavaError::Format(format!(
                        "non-finite speed {v} in dataset"
                    )));
                }
                let table = &mut phases[phase as usize];
                if table.len() <= idx {
                    table.resize(idx + 1, None);
                }
                let e = table[idx].get_or_insert(Envelope {
                    v_min: v,
                    v_max: v,
                    samples: 0,
                });
                e.v_min = e.v_min.min(v);
                e.v_max = e.v_max.max(v);
                e.samples += 1;
                n += 1;
            }
        }
        if n == 0 {
            return Err(HavaError::EmptySample);
        }
        Ok(Self {
            dataset_hash: dataset_hash(trajectories, feature_names)?,
            config,
            sample_count: n,
            resolved: Self::resolve(&phases),
            phases,
        })
    }

    pub fn config(&self) -> &BinConfig {
        &self.config
    }

    pub fn dataset_hash(&self) -> &str {
        &self.dataset_hash
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    /// Bins that were actually visited.
    pub fn bins(&self) -> Vec<BinEntry> {
        let mut out = Vec::new();
        for (phase, table) in self.phases.iter().enumerate() {
            for (index, e) in table.iter().enumerate() {
                if let Some(envelope) = e {
                    out.push(BinEntry {
                        phase: phase as u8,
                        index,
                        envelope: *envelope,
                    });
                }
            }
        }
        out
    }

    /// Unvisited `(phase, index)` bins below the highest visited index of their phase.
    /// States falling there use the fallback envelope.
    pub fn empty_bins(&self) -> Vec<(u8, usize)> {
        let mut out = Vec::new();
        for (phase, table) in self.phases.iter().enumerate() {
            for (i, e) in table.iter().enumerate() {
                if e.is_none() {
                    out.push((phase as u8, i));
                }
            }
        }
        out
    }

    /// Envelope of an exact bin, if visited.
    pub fn bin(&self, phase: u8, index: usize) -> Option<Envelope> {
        self.phases
            .get(phase as usize)?
            .get(index)
            .copied()
            .flatten()
    }

    fn nearest_in(table: &[Option<Envelope>], idx: usize) -> Option<Envelope> {
        table
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.map(|e| (i.abs_diff(idx), i, e)))
            .min_by_key(|&(d, i, _)| (d, i))
            .map(|(_, _, e)| e)
    }

    fn resolve(phases: &[Vec<Option<Envelope>>; 2]) -> [Vec<Envelope>; 2] {
        let mut out: [Vec<Envelope>; 2] = [Vec::new(), Vec::new()];
        for p in 0..2 {
            let src = if phases[p].is_empty() {
                &phases[1 - p]
            } else {
                &phases[p]
            };
            out[p] = (0..src.len())
                .map(|i| Self::nearest_in(src, i).expect("table has a visited bin"))
                .collect();
        }
        out
    }

    /// Envelope for a state: its own bin, else the nearest visited bin of the
    /// same phase (lower index on ties), else of the other phase.
    pub fn envelope_for(&self, state: &EnvState) -> Result<Envelope> {
        let (phase, idx) = self.config.bin_of(state)?;
        let table = &self.resolved[phase as usize];
        // past the last visited bin the nearest one is the last
        table
            .get(idx.min(table.len().saturating_sub(1)))
            .copied()
            .ok_or(HavaError::EmptySample)
    }

    pub fn predict(&self, state: &EnvState) -> Result<ActionSet> {
        let e = self.envelope_for(state)?;
        ActionSet::interval(e.v_min, e.v_max)
    }

    /// Distance of `speed` to the envelope of `state`.
    pub fn distance(&self, speed: f64, state: &EnvState) -> Result<f64> {
        min_distance(ActionValue::Continuous(speed), &self.predict(state)?)
    }

    /// Refuse a model fitted on different data.
    pub fn check_dataset(&self, hash: &str) -> Result<()> {
        if self.dataset_hash != hash {
            return Err(HavaError::DatasetMismatch {
                expected: self.dataset_hash.clone(),
                found: hash.to_string(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let stored = StoredModel {
            config: self.config.clone(),
            dataset_hash: self.dataset_hash.clone(),
            sample_count: self.sample_count,
            bins: self.bins(),
        };
        Ok(serde_json::to_string_pretty(&stored)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let stored: StoredModel = serde_json::from_str(text)?;
        stored.config.validate()?;
        let mut phases: [Vec<Option<Envelope>>; 2] = [Vec::new(), Vec::new()];
        let mut seen = BTreeMap::new();
        for b in stored.bins {
            if b.phase > 1 {
                return Err(HavaError::Format(format!(
                    "bin phase {} is not 0 or 1",
                    b.phase
                )));
            }
            if !(b.envelope.v_min <= b.envelope.v_max) {
                return Err(HavaError::Format(format!(
                    "bin ({}, {}) has v_min > v_max",
                    b.phase, b.index
                )));
            }
            if seen.insert((b.phase, b.index), ()).is_some() {
                return Err(HavaError::Format(format!(
                    "duplicate bin ({}, {})",
                    b.phase, b.index
                )));
            }
            let table = &mut phases[b.phase as usize];
            if table.len() <= b.index {
                table.resize(b.index + 1, None);
            }
            table[b.index] = Some(b.envelope);
        }
        if phases.iter().all(|t| t.is_empty()) {
            return Err(HavaError::EmptySample);
        }
        Ok(Self {
            config: stored.config,
            dataset_hash: stored.dataset_hash,
            sample_count: stored.sample_count,
            resolved: Self::resolve(&phases),
            phases,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| HavaError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HavaError::io(path, e))?;
        Self::from_json(&text)
    }
}

impl NormModel for SpeedEnvelopeModel {
    fn permitted(&self, state: &EnvState) -> Result<ActionSet> {
        self.predict(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::junction::feature_names;
    use crate::mdp::TrajectoryStep;

    fn traj(samples: &[(f64, f64, f64)]) -> Trajectory {
        let mut t = Trajectory::new(0.99).unwrap();
        for &(x, passed, v) in samples {
            let mut f = vec![0.0; 8];
            f[F_POSITION] = x;
            f[F_PASSED] = passed;
            t.steps.push(TrajectoryStep {
                state: EnvState::new(f, false),
                reputation: 1.0,
                action: v,
                raw_reward: -1.0,
                reward: -1.0,
            });
        }
        t
    }

    fn state(x: f64, passed: f64) -> EnvState {
        let mut f = vec![0.0; 8];
        f[F_POSITION] = x;
        f[F_PASSED] = passed;
        EnvState::new(f, false)
    }

    fn fit(ts: &[Trajectory]) -> SpeedEnvelopeModel {
        SpeedEnvelopeModel::fit(ts, &feature_names(), BinConfig::default()).unwrap()
    }

    #[test]
    fn constant_trajectory_gives_degenerate_envelopes() {
        let m = fit(&[traj(&[
            (0.0, 0.0, 30.0),
            (3.0, 0.0, 30.0),
            (5.0, 0.0, 30.0),
        ])]);
        for b in m.bins() {
            assert_eq!((b.envelope.v_min, b.envelope.v_max), (30.0, 30.0));
        }
        assert_eq!(m.bins().len(), 3);
    }

    #[test]
    fn distance_examples() {
        let m = fit(&[traj(&[(0.5, 0.0, 20.0), (1.0, 0.0, 40.0)])]);
        let s = state(1.5, 0.0);
        assert_eq!(m.distance(30.0, &s).unwrap(), 0.0);
        assert_eq!(m.distance(43.0, &s).unwrap(), 3.0);
        assert_eq!(m.distance(15.0, &s).unwrap(), 5.0);
    }

    #[test]
    fn fallback_prefers_same_phase_then_lower_index() {
        let m = fit(&[traj(&[
            (1.0, 0.0, 10.0),
            (9.0, 0.0, 30.0),
            (1.0, 1.0, 50.0),
        ])]);
        // bin 2 is equidistant from bins 0 and 4
        assert_eq!(
            m.predict(&state(4.5, 0.0)).unwrap(),
            ActionSet::interval(10.0, 10.0).unwrap()
        );
        assert_eq!(
            m.predict(&state(6.5, 0.0)).unwrap(),
            ActionSet::interval(30.0, 30.0).unwrap()
        );
        assert_eq!(
            m.predict(&state(99.0, 0.0)).unwrap(),
            ActionSet::interval(30.0, 30.0).unwrap()
        );
        assert_eq!(
            m.predict(&state(99.0, 1.0)).unwrap(),
            ActionSet::interval(50.0, 50.0).unwrap()
        );
        assert_eq!(m.empty_bins(), vec![(0, 1), (0, 2), (0, 3)]);

        let only_open = fit(&[traj(&[(1.0, 1.0, 50.0)])]);
        assert_eq!(
            only_open.predict(&state(1.0, 0.0)).unwrap(),
            ActionSet::interval(50.0, 50.0).unwrap()
        );
    }

    #[test]
    fn empty_dataset_is_rejected() {
        assert!(matches!(
            SpeedEnvelopeModel::fit(&[], &feature_names(), BinConfig::default()),
            Err(HavaError::EmptySample)
        ));
        let err = SpeedEnvelopeModel::fit(&[traj(&[])], &feature_names(), BinConfig::default());
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip_and_hash_check() {
        let data = [traj(&[(0.5, 0.0, 20.0), (3.0, 1.0, 40.0)])];
        let m = fit(&data);
        let back = SpeedEnvelopeModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), m.to_json().unwrap());
        let h = dataset_hash(&data, &feature_names()).unwrap();
        back.check_dataset(&h).unwrap();
        assert!(matches!(
            back.check_dataset("00"),
            Err(HavaError::DatasetMismatch { .. })
        ));
    }

    #[test]
    fn malformed_json_is_rejected() {
        let text = r#"{"config":{"bin_width_m":2.0,"position_feature":0,"phase_feature":6},
            "dataset_hash":"x","sample_count":1,
            "bins":[{"phase":0,"index":0,"v_min":5.0,"v_max":1.0,"samples":1}]}"#;
        assert!(SpeedEnvelopeModel::from_json(text).is_err());
    }
}
