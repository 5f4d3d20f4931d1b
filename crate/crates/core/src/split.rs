//! Chronological, subject-disjoint partitioning.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::Sample;

/// Splits a sorted sample list into consecutive parts with the given
/// ratios. Each cut lands at `floor(cumulative_ratio · n)`; a subject whose
/// samples straddle a cut is then moved wholesale to the part holding most
/// of its samples, ties going to the earliest such part.
pub fn chronological_parts(samples: &[Sample], ratios: &[f64], names: &[&'static str]) -> Result<Vec<Vec<Sample>>> {
    if ratios.len() != names.len() || ratios.is_empty() {
        return Err(Error::InvalidConfig("one name is needed per split ratio".into()));
    }
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(*r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("split ratios {ratios:?} must be positive and sum to 1")));
    }
    let n = samples.len();
    let mut cuts = Vec::with_capacity(ratios.len());
    let mut acc = 0.0;
    for r in &ratios[..ratios.len() - 1] {
        acc += r;
        cuts.push(((acc * n as f64) + 1e-9).floor() as usize);
    }
    let part_of = |i: usize| cuts.iter().take_while(|&&c| i >= c).count();

    let mut counts: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, s) in samples.iter().enumerate() {
        counts.entry(&s.subject_id).or_insert_with(|| vec![0; ratios.len()])[part_of(i)] += 1;
    }
    let home: HashMap<&str, usize> = counts
        .into_iter()
        .map(|(subject, c)| {
            let best = c.iter().copied().max().unwrap_or(0);
            (subject, c.iter().position(|&x| x == best).unwrap_or(0))
        })
        .collect();

    let mut parts: Vec<Vec<Sample>> = vec![Vec::new(); ratios.len()];
    for s in samples {
        parts[home[s.subject_id.as_str()]].push(s.clone());
    }
    if let Some(k) = parts.iter().position(Vec::is_empty) {
        return Err(Error::TooFewSubjects(format!("{} split would be empty", names[k])));
    }
    Ok(parts)
}

/// Development / post-development cut at `ratio`.
pub fn chronological_split(samples: &[Sample], ratio: f64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let mut parts = chronological_parts(samples, &[ratio, 1.0 - ratio], &["development", "post"])?;
    let post = parts.pop().unwrap_or_default();
    let dev = parts.pop().unwrap_or_default();
    Ok((dev, post))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DevSplits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Train / validation / test split of the development set.
pub fn dev_split(dev: &[Sample], ratios: [f64; 3]) -> Result<DevSplits> {
    let mut parts = chronological_parts(dev, &ratios, &["train", "validation", "test"])?;
    let test = parts.pop().unwrap_or_default();
    let val = parts.pop().unwrap_or_default();
    let train = parts.pop().unwrap_or_default();
    Ok(DevSplits { train, val, test })
}

/// Fails on the first subject present in two of the named groups.
pub fn audit_subjects(groups: &[(&'static str, &[Sample])]) -> Result<()> {
    let sets: Vec<BTreeSet<&str>> = groups
        .iter()
        .map(|(_, g)| g.iter().map(|s| s.subject_id.as_str()).collect())
        .collect();
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            if let Some(subject) = sets[i].intersection(&sets[j]).next() {
                return Err(Error::SubjectOverlap {
                    subject: (*subject).to_owned(),
                    first: groups[i].0,
                    second: groups[j].0,
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone, Utc};
    use proptest::prelude::*;

    fn stream(subjects: &[&str]) -> Vec<Sample> {
        let t0 = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
        subjects
            .iter()
            .enumerate()
            .map(|(i, subj)| Sample {
                sample_id: format!("x{i}"),
                subject_id: (*subj).to_owned(),
                timestamp: t0 + Duration::days(i as i64),
                label: Some((i % 2) as u8),
                segments: vec![vec![i as f64]],
            })
            .collect()
    }

    fn ids(s: &[Sample]) -> Vec<&str> {
        s.iter().map(|x| x.sample_id.as_str()).collect()
    }

    #[test]
    fn distinct_subjects_cut_at_index() {
        let names: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let (dev, post) = chronological_split(&stream(&refs), 0.7).unwrap();
        assert_eq!(ids(&dev), ["x0", "x1", "x2", "x3", "x4", "x5", "x6"]);
        assert_eq!(ids(&post), ["x7", "x8", "x9"]);
    }

    #[test]
    fn straddling_subject_follows_majority() {
        let subj = ["a", "b", "c", "d", "e", "f", "z", "z", "z", "g"];
        let (dev, post) = chronological_split(&stream(&subj), 0.7).unwrap();
        assert_eq!(dev.len(), 6);
        assert_eq!(ids(&post), ["x6", "x7", "x8", "x9"]);
    }

    #[test]
    fn tie_goes_to_development() {
        let subj = ["a", "b", "c", "d", "e", "z", "z", "f", "g", "h"];
        let (dev, _) = chronological_split(&stream(&subj), 0.6).unwrap();
        assert_eq!(ids(&dev).last(), Some(&"x6"));
    }

    #[test]
    fn single_subject_rejected() {
        let s = stream(&["solo"; 8]);
        assert!(matches!(chronological_split(&s, 0.7), Err(Error::TooFewSubjects(_))));
    }

    #[test]
    fn bad_ratios_rejected() {
        let s = stream(&["a", "b"]);
        assert!(matches!(dev_split(&s, [0.5, 0.5, 0.5]), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn audit_reports_overlap() {
        let a = stream(&["a", "b"]);
        let b = stream(&["c", "b"]);
        let err = audit_subjects(&[("train", &a), ("post", &b)]).unwrap_err();
        assert!(matches!(err, Error::SubjectOverlap { ref subject, .. } if subject == "b"));
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_complete(subj in prop::collection::vec(0u8..12, 10..80)) {
            let names: Vec<String> = subj.iter().map(|s| format!("p{s}")).collect();
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let s = stream(&refs);
            if let Ok(d) = dev_split(&s, [0.6, 0.2, 0.2]) {
                prop_assert_eq!(d.train.len() + d.val.len() + d.test.len(), s.len());
                prop_assert!(audit_subjects(&[("train", &d.train), ("val", &d.val), ("test", &d.test)]).is_ok());
            }
            if let Ok((dev, post)) = chronological_split(&s, 0.7) {
                prop_assert_eq!(dev.len() + post.len(), s.len());
                prop_assert!(audit_subjects(&[("dev", &dev), ("post", &post)]).is_ok());
                let mut all: Vec<&str> = ids(&dev);
                all.extend(ids(&post));
                all.sort();
                let mut want = ids(&s);
                want.sort();
                prop_assert_eq!(all, want);
            }
        }
    }
}
