use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DatasetManifest, SplitMode};
use crate::error::{CoreError, Result};
use crate::seed::derived_rng;

/// Identity of one stored frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRef {
    pub case_id: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<FrameRef>,
    pub test: Vec<FrameRef>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub train_per_case: usize,
    pub test_per_case: usize,
    pub mode: SplitMode,
}

fn shuffled(case_id: &str, frames: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..frames).collect();
    idx.shuffle(&mut derived_rng(seed, &[case_id, "split"]));
    idx
}

/// Seeded train/test assignment; each case is shuffled under its own
/// stream, so manifest order does not matter.
pub fn split(manifest: &DatasetManifest, cfg: &SplitConfig, seed: u64) -> Result<Split> {
    let mut cases: Vec<_> = manifest.cases.iter().collect();
    cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
    let held: BTreeSet<(u64, u64)> = match cfg.mode {
        SplitMode::PerCase => BTreeSet::new(),
        SplitMode::HoldOutLocations { count } => {
            let locs: BTreeSet<(u64, u64)> = cases.iter().map(|c| (c.p_x.to_bits(), c.p_y.to_bits())).collect();
            let mut locs: Vec<_> = locs.into_iter().collect();
            if count == 0 || count >= locs.len() {
                return Err(CoreError::Config(format!(
                    "cannot hold out {count} of {} locations",
                    locs.len()
                )));
            }
            locs.shuffle(&mut derived_rng(seed, &["holdout"]));
            locs.into_iter().take(count).collect()
        }
    };

    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in cases {
        let is_test_loc = held.contains(&(c.p_x.to_bits(), c.p_y.to_bits()));
        let need = match cfg.mode {
            SplitMode::PerCase => cfg.train_per_case + cfg.test_per_case,
            SplitMode::HoldOutLocations { .. } if is_test_loc => cfg.test_per_case,
            SplitMode::HoldOutLocations { .. } => cfg.train_per_case,
        };
        if c.frames < need {
            return Err(CoreError::InsufficientFrames {
                case_id: c.case_id.clone(),
                need,
                have: c.frames,
            });
        }
        let order = shuffled(&c.case_id, c.frames, seed);
        let refs = |ix: &[usize]| {
            let mut v: Vec<FrameRef> = ix
                .iter()
                .map(|&index| FrameRef {
                    case_id: c.case_id.clone(),
                    index,
                })
                .collect();
            v.sort();
            v
        };
        match cfg.mode {
            SplitMode::PerCase => {
                train.extend(refs(&order[..cfg.train_per_case]));
                test.extend(refs(&order[cfg.train_per_case..need]));
            }
            SplitMode::HoldOutLocations { .. } if is_test_loc => test.extend(refs(&order[..need])),
            SplitMode::HoldOutLocations { .. } => train.extend(refs(&order[..need])),
        }
    }
    Ok(Split { train, test })
}

/// Moves a seeded `fraction` of each case's training frames into a
/// validation set; every case keeps at least one training frame.
pub fn hold_out(train: &[FrameRef], fraction: f64, seed: u64) -> (Vec<FrameRef>, Vec<FrameRef>) {
    let mut by_case: std::collections::BTreeMap<&str, Vec<&FrameRef>> = Default::default();
    for f in train {
        by_case.entry(&f.case_id).or_default().push(f);
    }
    let mut keep = Vec::new();
    let mut val = Vec::new();
    for (id, mut frames) in by_case {
        frames.sort();
        frames.shuffle(&mut derived_rng(seed, &[id, "validation"]));
        let n_val = ((frames.len() as f64 * fraction).round() as usize).min(frames.len().saturating_sub(1));
        let (v, k) = frames.split_at(n_val);
        val.extend(v.iter().map(|f| (*f).clone()));
        keep.extend(k.iter().map(|f| (*f).clone()));
    }
    keep.sort();
    val.sort();
    (keep, val)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{CaseEntry, ModalityRule, FORMAT_VERSION};
    use crate::rig::RigModel;
    use crate::simulator::{LocationGrid, Timing};
    use crate::types::Direction;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn manifest(grid: LocationGrid, frames: usize) -> DatasetManifest {
        let cases = grid
            .cases()
            .into_iter()
            .map(|c| CaseEntry {
                case_id: c.id(),
                p_x: c.p_x,
                p_y: c.p_y,
                d: c.d,
                frames,
                pressure_available: c.p_y <= 100.0,
                files: vec![],
                checksum: String::new(),
            })
            .collect();
        DatasetManifest {
            version: FORMAT_VERSION,
            grid,
            image_size: 64,
            rig: RigModel::default(),
            timing: Timing::default(),
            pressure_rule: ModalityRule::default(),
            seed: 0,
            cases,
        }
    }

    fn per_case(train: usize, test: usize) -> SplitConfig {
        SplitConfig {
            train_per_case: train,
            test_per_case: test,
            mode: SplitMode::PerCase,
        }
    }

    #[test]
    fn split_counts_and_disjointness() {
        let m = manifest(LocationGrid::field(), 20);
        assert_eq!(m.cases.len(), 18);
        let s = split(&m, &per_case(10, 5), 3).unwrap();
        assert_eq!(s.train.len(), 180);
        assert_eq!(s.test.len(), 90);
        let train: HashSet<_> = s.train.iter().collect();
        assert!(s.test.iter().all(|f| !train.contains(f)));
        for c in &m.cases {
            assert_eq!(s.train.iter().filter(|f| f.case_id == c.case_id).count(), 10);
            assert_eq!(s.test.iter().filter(|f| f.case_id == c.case_id).count(), 5);
        }
        assert_eq!(split(&m, &per_case(10, 5), 3).unwrap(), s);
        assert_ne!(split(&m, &per_case(10, 5), 4).unwrap(), s);
    }

    #[test]
    fn insufficient_frames() {
        let m = manifest(LocationGrid::field(), 12);
        let err = split(&m, &per_case(10, 5), 0).unwrap_err();
        assert!(matches!(err, CoreError::InsufficientFrames { need: 15, have: 12, .. }));
    }

    #[test]
    fn location_holdout() {
        let m = manifest(LocationGrid::field(), 20);
        let cfg = SplitConfig {
            train_per_case: 10,
            test_per_case: 5,
            mode: SplitMode::HoldOutLocations { count: 2 },
        };
        let s = split(&m, &cfg, 1).unwrap();
        let test_cases: HashSet<_> = s.test.iter().map(|f| f.case_id.clone()).collect();
        let train_cases: HashSet<_> = s.train.iter().map(|f| f.case_id.clone()).collect();
        assert_eq!(test_cases.len(), 6);
        assert!(test_cases.is_disjoint(&train_cases));
        assert_eq!(s.train.len(), 12 * 10);
        assert!(split(&m, &SplitConfig { mode: SplitMode::HoldOutLocations { count: 6 }, ..cfg }, 1).is_err());
    }

    #[test]
    fn hold_out_keeps_every_case() {
        let m = manifest(LocationGrid::toy(), 12);
        let s = split(&m, &per_case(10, 2), 0).unwrap();
        let (keep, val) = hold_out(&s.train, 0.1, 7);
        assert_eq!(keep.len() + val.len(), s.train.len());
        assert_eq!(val.len(), 36);
        let k: HashSet<_> = keep.iter().collect();
        assert!(val.iter().all(|v| !k.contains(v)));
        let (keep1, val1) = hold_out(&s.train[..1], 0.9, 7);
        assert_eq!((keep1.len(), val1.len()), (1, 0));
    }

    proptest! {
        #[test]
        fn split_ignores_manifest_order(seed in any::<u64>(), rot in 0usize..18) {
            let m = manifest(LocationGrid::field(), 8);
            let mut shuffled = m.clone();
            shuffled.cases.rotate_left(rot);
            shuffled.cases.reverse();
            let cfg = per_case(5, 3);
            prop_assert_eq!(split(&m, &cfg, seed).unwrap(), split(&shuffled, &cfg, seed).unwrap());
        }
    }

    #[test]
    fn directions_present_in_both_sets() {
        let m = manifest(LocationGrid::toy(), 4);
        let s = split(&m, &per_case(3, 1), 0).unwrap();
        for set in [&s.train, &s.test] {
            for d in Direction::ALL {
                assert!(set.iter().any(|f| f.case_id.ends_with(&format!("_{d}"))));
            }
        }
    }
}
