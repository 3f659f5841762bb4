//! Compositional train/test splits over dataset manifests.
//!
//! A manifest lists sequences with a verb and a noun (object category).
//! S0 passes a given test set through, S1 holds out one noun per fold and
//! S2 holds out a pair of nouns per fold. In every fold no training record
//! uses a held-out noun, so verb-noun combinations seen at test time never
//! occur in training.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One dataset sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub subject: String,
    pub verb: String,
    pub noun: String,
    pub path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_count: Option<u64>,
}

impl SequenceRecord {
    /// Action label in `"verb noun"` form.
    pub fn action(&self) -> String {
        format!("{} {}", self.verb, self.noun)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub held_out: Vec<String>,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// On-disk layout of a list of folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldsFile {
    pub folds: Vec<Fold>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub fold: String,
    pub value: f64,
}

/// Per-fold top-1 accuracy with population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub per_fold: Vec<FoldScore>,
    pub mean: f64,
    pub std: f64,
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub fold: String,
    pub id: String,
    pub label: String,
}

/// One line of a ground-truth label file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub label: String,
}

/// Held-out object pairs of the H2O S2 benchmark.
pub const H2O_S2_PAIRS: [(&str, &str); 8] = [
    ("Book", "Cappuccino"),
    ("Espresso", "Chips"),
    ("Lotion", "Cocoa"),
    ("Spray", "Milk"),
    ("Lotion", "Spray"),
    ("Milk", "Cocoa"),
    ("Cocoa", "Chips"),
    ("Book", "Spray"),
];

/// Number of pairs drawn when S2 pairs come from a seed.
pub const S2_RANDOM_PAIRS: usize = 8;

/// How S2 chooses its held-out pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PairSource {
    Explicit(Vec<(String, String)>),
    Seeded(u64),
}

/// Checks id uniqueness and nonempty labels.
pub fn validate_manifest(manifest: &[SequenceRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    for r in manifest {
        if r.id.is_empty() {
            return Err(Error::InvalidParameter("record with empty id".into()));
        }
        if !seen.insert(r.id.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate record id `{}`", r.id)));
        }
        if r.verb.is_empty() || r.noun.is_empty() {
            return Err(Error::InvalidParameter(format!("record `{}` has an empty verb or noun", r.id)));
        }
    }
    Ok(())
}

/// Distinct nouns in lexicographic order.
pub fn nouns(manifest: &[SequenceRecord]) -> Vec<String> {
    manifest
        .iter()
        .map(|r| r.noun.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

fn partition(manifest: &[SequenceRecord], name: String, held_out: Vec<String>) -> Fold {
    let (test, train): (Vec<_>, Vec<_>) = manifest.iter().partition(|r| held_out.contains(&r.noun));
    Fold {
        name,
        held_out,
        train_ids: train.into_iter().map(|r| r.id.clone()).collect(),
        test_ids: test.into_iter().map(|r| r.id.clone()).collect(),
    }
}

fn check_noun(known: &[String], noun: &str) -> Result<()> {
    if known.binary_search_by(|k| k.as_str().cmp(noun)).is_ok() {
        Ok(())
    } else {
        Err(Error::UnknownNoun(noun.to_string()))
    }
}

/// A single fold whose test set is `test_ids` and whose training set is
/// every other record.
pub fn make_s0(manifest: &[SequenceRecord], test_ids: &[String]) -> Result<Vec<Fold>> {
    validate_manifest(manifest)?;
    let known: HashSet<&str> = manifest.iter().map(|r| r.id.as_str()).collect();
    if let Some(bad) = test_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::InvalidParameter(format!("test id `{bad}` is not in the manifest")));
    }
    let test: HashSet<&str> = test_ids.iter().map(String::as_str).collect();
    let (te, tr): (Vec<_>, Vec<_>) = manifest.iter().partition(|r| test.contains(r.id.as_str()));
    Ok(vec![Fold {
        name: "s0".into(),
        held_out: Vec::new(),
        train_ids: tr.into_iter().map(|r| r.id.clone()).collect(),
        test_ids: te.into_iter().map(|r| r.id.clone()).collect(),
    }])
}

/// One fold per noun, in lexicographic noun order. `only` restricts the
/// folds to a subset of nouns (the training sets still exclude just the
/// fold's own noun).
pub fn make_s1(manifest: &[SequenceRecord], only: Option<&[String]>) -> Result<Vec<Fold>> {
    validate_manifest(manifest)?;
    let all = nouns(manifest);
    if all.len() < 2 {
        return Err(Error::CannotComposeSplit(format!(
            "single-object holdout needs at least 2 distinct nouns, found {}",
            all.len()
        )));
    }
    let chosen: Vec<String> = match only {
        Some(subset) => {
            for n in subset {
                check_noun(&all, n)?;
            }
            let subset: BTreeSet<&String> = subset.iter().collect();
            all.iter().filter(|n| subset.contains(n)).cloned().collect()
        }
        None => all,
    };
    Ok(chosen
        .into_iter()
        .map(|n| partition(manifest, n.clone(), vec![n]))
        .collect())
}

/// One fold per held-out noun pair. Explicit pairs keep their order; seeded
/// pairs are drawn without replacement from all unordered pairs.
pub fn make_s2(manifest: &[SequenceRecord], pairs: &PairSource) -> Result<Vec<Fold>> {
    validate_manifest(manifest)?;
    let all = nouns(manifest);
    if all.len() < 3 {
        return Err(Error::CannotComposeSplit(format!(
            "object-pair holdout needs at least 3 distinct nouns, found {}",
            all.len()
        )));
    }
    let chosen: Vec<(String, String)> = match pairs {
        PairSource::Explicit(list) => {
            for (a, b) in list {
                check_noun(&all, a)?;
                check_noun(&all, b)?;
                if a == b {
                    return Err(Error::InvalidParameter(format!("pair repeats noun `{a}`")));
                }
            }
            list.clone()
        }
        PairSource::Seeded(seed) => {
            let mut candidates = Vec::new();
            for (i, a) in all.iter().enumerate() {
                for b in &all[i + 1..] {
                    candidates.push((a.clone(), b.clone()));
                }
            }
            let take = S2_RANDOM_PAIRS.min(candidates.len());
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            rand::seq::index::sample(&mut rng, candidates.len(), take)
                .into_iter()
                .map(|i| candidates[i].clone())
                .collect()
        }
    };
    Ok(chosen
        .into_iter()
        .map(|(a, b)| partition(manifest, format!("{a}+{b}"), vec![a, b]))
        .collect())
}

/// The H2O S2 pairs as owned strings.
pub fn h2o_s2_pairs() -> Vec<(String, String)> {
    H2O_S2_PAIRS.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
}

/// Exact rational with overflow detection.
#[derive(Debug, Clone, Copy)]
struct Ratio {
    num: i128,
    den: i128,
}

impl Ratio {
    fn new(num: i128, den: i128) -> Self {
        let g = gcd(num.unsigned_abs(), den.unsigned_abs()).max(1) as i128;
        let s = if den < 0 { -1 } else { 1 };
        Self {
            num: s * num / g,
            den: s * den / g,
        }
    }

    fn add(self, o: Self) -> Option<Self> {
        let num = self.num.checked_mul(o.den)?.checked_add(o.num.checked_mul(self.den)?)?;
        Some(Self::new(num, self.den.checked_mul(o.den)?))
    }

    fn sub(self, o: Self) -> Option<Self> {
        self.add(Self { num: -o.num, den: o.den })
    }

    fn mul(self, o: Self) -> Option<Self> {
        Some(Self::new(self.num.checked_mul(o.num)?, self.den.checked_mul(o.den)?))
    }

    fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn exact_moments(counts: &[(u64, u64)]) -> Option<(f64, f64)> {
    let k = Ratio::new(1, counts.len() as i128);
    let values: Vec<Ratio> = counts.iter().map(|&(c, n)| Ratio::new(c as i128, n as i128)).collect();
    let mut sum = Ratio::new(0, 1);
    for v in &values {
        sum = sum.add(*v)?;
    }
    let mean = sum.mul(k)?;
    let mut ss = Ratio::new(0, 1);
    for v in &values {
        let d = v.sub(mean)?;
        ss = ss.add(d.mul(d)?)?;
    }
    Some((mean.to_f64(), ss.mul(k)?.to_f64().sqrt()))
}

/// Population mean and standard deviation of `correct / total` ratios,
/// rounded once from exact arithmetic when it fits in 128 bits.
pub fn accuracy_moments(counts: &[(u64, u64)]) -> (f64, f64) {
    if counts.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    exact_moments(counts).unwrap_or_else(|| {
        let vals: Vec<f64> = counts.iter().map(|&(c, n)| c as f64 / n as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        (mean, var.sqrt())
    })
}

/// Top-1 accuracy per fold, then mean and population std across folds.
///
/// `predictions` maps fold name to (record id to predicted label) and must
/// cover exactly each fold's test set.
pub fn score_folds(
    folds: &[Fold],
    predictions: &BTreeMap<String, BTreeMap<String, String>>,
    labels: &BTreeMap<String, String>,
) -> Result<ScoreSummary> {
    if folds.is_empty() {
        return Err(Error::InvalidParameter("no folds to score".into()));
    }
    let empty = BTreeMap::new();
    let mut counts = Vec::with_capacity(folds.len());
    for fold in folds {
        let preds = predictions.get(&fold.name).unwrap_or(&empty);
        let test: BTreeSet<&String> = fold.test_ids.iter().collect();
        let missing: Vec<String> = test.iter().filter(|id| !preds.contains_key(**id)).map(|s| s.to_string()).collect();
        let extra: Vec<String> = preds.keys().filter(|id| !test.contains(id)).cloned().collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::PredictionMismatch {
                fold: fold.name.clone(),
                missing,
                extra,
            });
        }
        if test.is_empty() {
            return Err(Error::InvalidParameter(format!("fold `{}` has an empty test set", fold.name)));
        }
        let mut correct = 0u64;
        for id in &test {
            let truth = labels
                .get(*id)
                .ok_or_else(|| Error::InvalidParameter(format!("no ground-truth label for id `{id}`")))?;
            if preds[*id] == *truth {
                correct += 1;
            }
        }
        counts.push((correct, test.len() as u64));
    }
    let (mean, std) = accuracy_moments(&counts);
    Ok(ScoreSummary {
        per_fold: folds
            .iter()
            .zip(&counts)
            .map(|(f, &(c, n))| FoldScore {
                fold: f.name.clone(),
                value: c as f64 / n as f64,
            })
            .collect(),
        mean,
        std,
    })
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(text: &str, source: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(source, i + 1, e.to_string())))
        .collect()
}

/// Parses and validates a JSON-lines manifest.
pub fn read_manifest(text: &str, source: &str) -> Result<Vec<SequenceRecord>> {
    let records: Vec<SequenceRecord> = read_jsonl(text, source)?;
    validate_manifest(&records)?;
    Ok(records)
}

pub fn write_manifest(records: &[SequenceRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

/// Parses JSON-lines predictions into fold → (id → label).
pub fn read_predictions(text: &str, source: &str) -> Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::parse(source, i + 1, e.to_string()))?;
        let fold = out.entry(rec.fold.clone()).or_default();
        if fold.insert(rec.id.clone(), rec.label).is_some() {
            return Err(Error::parse(
                source,
                i + 1,
                format!("duplicate prediction for id `{}` in fold `{}`", rec.id, rec.fold),
            ));
        }
    }
    Ok(out)
}

/// Parses JSON-lines ground-truth labels into id → label.
pub fn read_labels(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let recs: Vec<LabelRecord> = read_jsonl(text, source)?;
    Ok(recs.into_iter().map(|r| (r.id, r.label)).collect())
}

/// Ground-truth action labels (`"verb noun"`) taken from a manifest.
pub fn manifest_labels(manifest: &[SequenceRecord]) -> BTreeMap<String, String> {
    manifest.iter().map(|r| (r.id.clone(), r.action())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, verb: &str, noun: &str) -> SequenceRecord {
        SequenceRecord {
            id: id.into(),
            subject: "s1".into(),
            verb: verb.into(),
            noun: noun.into(),
            path: format!("seq/{id}"),
            frame_count: None,
        }
    }

    fn toy() -> Vec<SequenceRecord> {
        vec![rec("a", "verb1", "objA"), rec("b", "verb1", "objB"), rec("c", "verb2", "objA")]
    }

    #[test]
    fn s1_toy() {
        let folds = make_s1(&toy(), None).unwrap();
        assert_eq!(folds.len(), 2);
        assert_eq!(folds[0].name, "objA");
        assert_eq!(folds[0].test_ids, vec!["a", "c"]);
        assert_eq!(folds[0].train_ids, vec!["b"]);
    }

    #[test]
    fn s1_single_noun_fails() {
        let m = vec![rec("a", "v", "x"), rec("b", "w", "x")];
        let err = make_s1(&m, None).unwrap_err();
        assert!(err.to_string().starts_with("cannot compose split"));
    }

    #[test]
    fn s1_noun_subset() {
        let mut m = toy();
        m.push(rec("d", "verb3", "objC"));
        let folds = make_s1(&m, Some(&["objC".to_string()])).unwrap();
        assert_eq!(folds.len(), 1);
        assert_eq!(folds[0].test_ids, vec!["d"]);
        assert!(make_s1(&m, Some(&["nope".to_string()])).is_err());
    }

    #[test]
    fn s2_toy_pair() {
        let mut m = toy();
        m.push(rec("d", "verb3", "objC"));
        let folds = make_s2(&m, &PairSource::Explicit(vec![("objA".into(), "objB".into())])).unwrap();
        assert_eq!(folds[0].train_ids, vec!["d"]);
        assert_eq!(folds[0].held_out, vec!["objA", "objB"]);
    }

    #[test]
    fn s2_unknown_noun_is_named() {
        let mut m = toy();
        m.push(rec("d", "verb3", "objC"));
        let err = make_s2(&m, &PairSource::Explicit(vec![("objA".into(), "objZ".into())])).unwrap_err();
        assert!(err.to_string().contains("objZ"));
    }

    #[test]
    fn s2_seeded_is_deterministic() {
        let m: Vec<_> = (0..40).map(|i| rec(&format!("r{i}"), "v", &format!("n{}", i % 6))).collect();
        let a = make_s2(&m, &PairSource::Seeded(3)).unwrap();
        let b = make_s2(&m, &PairSource::Seeded(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 8);
        let distinct: BTreeSet<_> = a.iter().map(|f| f.held_out.clone()).collect();
        assert_eq!(distinct.len(), 8);
        let few: Vec<_> = (0..9).map(|i| rec(&format!("r{i}"), "v", &format!("n{}", i % 3))).collect();
        assert_eq!(make_s2(&few, &PairSource::Seeded(1)).unwrap().len(), 3);
    }

    #[test]
    fn s0_passes_through() {
        let folds = make_s0(&toy(), &["b".to_string()]).unwrap();
        assert_eq!(folds[0].test_ids, vec!["b"]);
        assert_eq!(folds[0].train_ids, vec!["a", "c"]);
        assert!(make_s0(&toy(), &["zz".to_string()]).is_err());
    }

    #[test]
    fn manifest_validation() {
        let mut m = toy();
        m.push(rec("a", "v", "n"));
        assert!(validate_manifest(&m).is_err());
        assert!(validate_manifest(&[rec("x", "", "n")]).is_err());
    }

    fn preds(fold: &str, pairs: &[(&str, &str)]) -> BTreeMap<String, BTreeMap<String, String>> {
        let mut m = BTreeMap::new();
        m.insert(
            fold.to_string(),
            pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        );
        m
    }

    #[test]
    fn scores_two_folds_exactly() {
        let folds = vec![
            Fold { name: "f1".into(), held_out: vec![], train_ids: vec![], test_ids: (0..5).map(|i| format!("a{i}")).collect() },
            Fold { name: "f2".into(), held_out: vec![], train_ids: vec![], test_ids: (0..5).map(|i| format!("b{i}")).collect() },
        ];
        let mut labels = BTreeMap::new();
        let mut p = BTreeMap::new();
        for (fold, prefix, right) in [("f1", "a", 4), ("f2", "b", 3)] {
            let mut m = BTreeMap::new();
            for i in 0..5 {
                let id = format!("{prefix}{i}");
                labels.insert(id.clone(), "x".to_string());
                m.insert(id, if i < right { "x" } else { "y" }.to_string());
            }
            p.insert(fold.to_string(), m);
        }
        let s = score_folds(&folds, &p, &labels).unwrap();
        assert_eq!(s.mean, 0.7);
        assert_eq!(s.std, 0.1);
        assert_eq!(s.per_fold[0].value, 0.8);
    }

    #[test]
    fn perfect_predictions() {
        let folds = make_s1(&toy(), None).unwrap();
        let labels = manifest_labels(&toy());
        let mut p = BTreeMap::new();
        for f in &folds {
            p.insert(f.name.clone(), f.test_ids.iter().map(|id| (id.clone(), labels[id].clone())).collect());
        }
        let s = score_folds(&folds, &p, &labels).unwrap();
        assert_eq!((s.mean, s.std), (1.0, 0.0));
    }

    #[test]
    fn missing_prediction_is_named() {
        let folds = make_s1(&toy(), Some(&["objA".to_string()])).unwrap();
        let p = preds("objA", &[("a", "verb1 objA")]);
        let err = score_folds(&folds, &p, &manifest_labels(&toy())).unwrap_err();
        assert!(err.to_string().contains("\"c\""), "{err}");
        let p = preds("objA", &[("a", "x"), ("c", "x"), ("q", "x")]);
        let err = score_folds(&folds, &p, &manifest_labels(&toy())).unwrap_err();
        assert!(err.to_string().contains("\"q\""), "{err}");
    }

    #[test]
    fn jsonl_round_trip_and_errors() {
        let mut m = toy();
        m[1].frame_count = Some(120);
        let text = write_manifest(&m);
        assert_eq!(read_manifest(&text, "m.jsonl").unwrap(), m);
        assert!(!text.lines().next().unwrap().contains("frame_count"));
        let err = read_manifest("{\"id\":\"a\"}\n", "bad.jsonl").unwrap_err();
        assert!(err.to_string().contains("bad.jsonl line 1"), "{err}");
        let p = read_predictions("{\"fold\":\"f\",\"id\":\"a\",\"label\":\"x\"}\n\n", "p").unwrap();
        assert_eq!(p["f"]["a"], "x");
        assert!(read_predictions("{\"fold\":\"f\",\"id\":\"a\",\"label\":\"x\"}\n{\"fold\":\"f\",\"id\":\"a\",\"label\":\"y\"}", "p").is_err());
    }

    #[test]
    fn moments_fall_back_on_overflow() {
        let counts: Vec<(u64, u64)> = (0..40).map(|i| (i + 1, 1_000_003 + 2 * i)).collect();
        let (mean, std) = accuracy_moments(&counts);
        let vals: Vec<f64> = counts.iter().map(|&(c, n)| c as f64 / n as f64).collect();
        let m = vals.iter().sum::<f64>() / 40.0;
        assert!((mean - m).abs() < 1e-15);
        assert!(std > 0.0);
    }

    fn manifest_strategy() -> impl Strategy<Value = Vec<SequenceRecord>> {
        prop::collection::vec((0usize..4, 0usize..6), 3..80).prop_map(|rows| {
            rows.iter()
                .enumerate()
                .map(|(i, (v, n))| rec(&format!("id{i}"), &format!("verb{v}"), &format!("noun{n}")))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn s1_partition_invariants(m in manifest_strategy()) {
            prop_assume!(nouns(&m).len() >= 2);
            let folds = make_s1(&m, None).unwrap();
            let by_id: BTreeMap<&str, &SequenceRecord> = m.iter().map(|r| (r.id.as_str(), r)).collect();
            let mut seen = BTreeMap::new();
            for f in &folds {
                let train: BTreeSet<&String> = f.train_ids.iter().collect();
                prop_assert!(f.test_ids.iter().all(|id| !train.contains(id)));
                prop_assert!(f.test_ids.iter().all(|id| f.held_out.contains(&by_id[id.as_str()].noun)));
                prop_assert!(f.train_ids.iter().all(|id| !f.held_out.contains(&by_id[id.as_str()].noun)));
                prop_assert_eq!(f.train_ids.len() + f.test_ids.len(), m.len());
                for id in &f.test_ids {
                    *seen.entry(id.clone()).or_insert(0) += 1;
                }
            }
            prop_assert_eq!(seen.len(), m.len());
            prop_assert!(seen.values().all(|&c| c == 1));
        }

        #[test]
        fn s2_partition_invariants(m in manifest_strategy(), seed in any::<u64>()) {
            prop_assume!(nouns(&m).len() >= 3);
            let folds = make_s2(&m, &PairSource::Seeded(seed)).unwrap();
            let by_id: BTreeMap<&str, &SequenceRecord> = m.iter().map(|r| (r.id.as_str(), r)).collect();
            for f in &folds {
                prop_assert_eq!(f.held_out.len(), 2);
                prop_assert!(f.train_ids.iter().all(|id| !f.held_out.contains(&by_id[id.as_str()].noun)));
                prop_assert!(f.test_ids.iter().all(|id| f.held_out.contains(&by_id[id.as_str()].noun)));
            }
            prop_assert_eq!(folds, make_s2(&m, &PairSource::Seeded(seed)).unwrap());
        }
    }
}
