//! Object-discovery and classification metrics.
//!
//! FG-ARI and mBO score a predicted mask set against a ground-truth instance
//! map; accuracy, worst-group accuracy and the common/counter gap score
//! classification results.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::{iou, BinaryMask, MaskSet, MaskSource};

/// Ground-truth instance map: 0 is background, any other id is one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceSegmentation {
    height: usize,
    width: usize,
    labels: Vec<u16>,
}

impl InstanceSegmentation {
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidInput(format!(
                "label count {} != {}x{}",
                labels.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    /// Sorted distinct non-zero instance ids.
    pub fn instance_ids(&self) -> Vec<u16> {
        let mut ids: Vec<u16> = self.labels.iter().copied().filter(|&l| l > 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn instance_mask(&self, id: u16) -> BinaryMask {
        BinaryMask::new(
            self.height,
            self.width,
            self.labels.iter().map(|&l| l == id).collect(),
        )
        .expect("dims match by construction")
    }

    /// One mask per instance, in ascending id order.
    pub fn to_mask_set(&self) -> MaskSet {
        MaskSet {
            masks: self
                .instance_ids()
                .into_iter()
                .map(|id| self.instance_mask(id))
                .collect(),
            source: MaskSource::GroundTruth,
        }
    }

    /// Instance map from disjoint masks; mask `k` becomes id `k + 1`.
    pub fn from_masks(dims: (usize, usize), masks: &[BinaryMask]) -> Result<Self> {
        let mut labels = vec![0u16; dims.0 * dims.1];
        for (k, m) in masks.iter().enumerate() {
            m.ensure_dims(dims)?;
            let id = u16::try_from(k + 1)
                .map_err(|_| Error::InvalidInput("more than 65535 instances".into()))?;
            for (l, &b) in labels.iter_mut().zip(m.bits()) {
                if b {
                    *l = id;
                }
            }
        }
        Self::new(dims.0, dims.1, labels)
    }
}

/// Per-pixel cluster ids for a possibly-overlapping mask set. Pixels covered
/// by exactly the same set of masks share a cluster, so the partition does not
/// depend on mask order and reduces to one cluster per mask when masks are
/// disjoint. Uncovered pixels share id 0; other ids follow first appearance
/// in row-major order.
pub fn masks_to_partition(dims: (usize, usize), pred: &MaskSet) -> Result<Vec<u32>> {
    pred.ensure_dims(dims)?;
    let mut ids: HashMap<Vec<u32>, u32> = HashMap::new();
    ids.insert(Vec::new(), 0);
    let mut cover = Vec::with_capacity(pred.len());
    let mut part = vec![0u32; dims.0 * dims.1];
    for (p, slot) in part.iter_mut().enumerate() {
        cover.clear();
        cover.extend(
            pred.masks
                .iter()
                .enumerate()
                .filter(|(_, m)| m.bits()[p])
                .map(|(k, _)| k as u32),
        );
        *slot = match ids.get(cover.as_slice()) {
            Some(&id) => id,
            None => {
                let id = ids.len() as u32;
                ids.insert(cover.clone(), id);
                id
            }
        };
    }
    Ok(part)
}

#[inline]
fn pairs(n: u64) -> i128 {
    let n = n as i128;
    n * (n - 1) / 2
}

/// Adjusted Rand index over the pixels whose ground-truth label is non-zero.
pub fn fg_ari(gt: &InstanceSegmentation, pred: &MaskSet) -> Result<f64> {
    let part = masks_to_partition(gt.dims(), pred)?;
    let mut contingency: HashMap<(u16, u32), u64> = HashMap::new();
    let mut rows: HashMap<u16, u64> = HashMap::new();
    let mut cols: HashMap<u32, u64> = HashMap::new();
    let mut n = 0u64;
    for (&g, &p) in gt.labels.iter().zip(&part) {
        if g == 0 {
            continue;
        }
        n += 1;
        *contingency.entry((g, p)).or_default() += 1;
        *rows.entry(g).or_default() += 1;
        *cols.entry(p).or_default() += 1;
    }
    if n == 0 {
        return Err(Error::FgAriUndefined);
    }
    Ok(ari_from_counts(
        n,
        contingency.values().copied(),
        rows.values().copied(),
        cols.values().copied(),
    ))
}

/// ARI from contingency cell, row and column counts, with exact integer
/// pair sums and a single final division.
fn ari_from_counts(
    n: u64,
    cells: impl Iterator<Item = u64>,
    rows: impl Iterator<Item = u64>,
    cols: impl Iterator<Item = u64>,
) -> f64 {
    let index: i128 = cells.map(pairs).sum();
    let a: i128 = rows.map(pairs).sum();
    let b: i128 = cols.map(pairs).sum();
    let total = pairs(n);
    // (index - a*b/total) / ((a+b)/2 - a*b/total), scaled by 2*total
    let num = 2 * (index * total - a * b);
    let den = (a + b) * total - 2 * a * b;
    if den == 0 {
        // both partitions trivial and identical (single cluster or all singletons)
        return 1.0;
    }
    num as f64 / den as f64
}

/// Mean over ground-truth instances of the best IoU with any predicted mask.
pub fn mbo(gt: &InstanceSegmentation, pred: &MaskSet) -> Result<f64> {
    pred.ensure_dims(gt.dims())?;
    let ids = gt.instance_ids();
    if ids.is_empty() {
        return Err(Error::InvalidInput(
            "mBO needs at least one ground-truth instance".into(),
        ));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for id in &ids {
        let m = gt.instance_mask(*id);
        let mut best = 0.0f64;
        for p in &pred.masks {
            best = best.max(iou(&m, p)?);
        }
        total += best;
    }
    Ok(total / ids.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub sample_id: String,
    pub predicted: usize,
    pub true_class: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<usize>,
}

impl ResultRecord {
    pub fn correct(&self) -> bool {
        self.predicted == self.true_class
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupedResults {
    pub records: Vec<ResultRecord>,
}

impl GroupedResults {
    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

pub fn accuracy(results: &GroupedResults) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::InvalidInput(
            "accuracy of an empty result set".into(),
        ));
    }
    let correct = results.records.iter().filter(|r| r.correct()).count();
    Ok(correct as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstGroup {
    pub wga: f64,
    pub worst_group: usize,
    pub per_group: BTreeMap<usize, GroupAccuracy>,
}

/// Minimum within-group accuracy, with the full per-group breakdown.
pub fn worst_group_accuracy(results: &GroupedResults) -> Result<WorstGroup> {
    if results.is_empty() {
        return Err(Error::InvalidInput(
            "worst-group accuracy of an empty result set".into(),
        ));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in &results.records {
        let g = r
            .group
            .ok_or_else(|| Error::MissingGroup(r.sample_id.clone()))?;
        let e = counts.entry(g).or_default();
        e.0 += r.correct() as usize;
        e.1 += 1;
    }
    let per_group: BTreeMap<usize, GroupAccuracy> = counts
        .into_iter()
        .map(|(g, (correct, total))| {
            (
                g,
                GroupAccuracy {
                    correct,
                    total,
                    accuracy: correct as f64 / total as f64,
                },
            )
        })
        .collect();
    let (worst_group, worst) = per_group
        .iter()
        .fold(None::<(usize, f64)>, |acc, (&g, a)| match acc {
            Some((_, best)) if best <= a.accuracy => acc,
            _ => Some((g, a.accuracy)),
        })
        .expect("non-empty");
    Ok(WorstGroup {
        wga: worst,
        worst_group,
        per_group,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub gap: f64,
    pub acc_common: f64,
    pub acc_counter: f64,
}

impl GapReport {
    pub fn from_accuracies(acc_common: f64, acc_counter: f64) -> Self {
        Self {
            gap: acc_common - acc_counter,
            acc_common,
            acc_counter,
        }
    }
}

/// Signed accuracy difference, common split minus counter split.
pub fn common_counter_gap(common: &GroupedResults, counter: &GroupedResults) -> Result<GapReport> {
    Ok(GapReport::from_accuracies(
        accuracy(common)?,
        accuracy(counter)?,
    ))
}

/// One metric line of a JSON report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_group: Option<BTreeMap<String, f64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rec(id: usize, pred: usize, truth: usize, group: Option<usize>) -> ResultRecord {
        ResultRecord {
            sample_id: format!("s{id:03}"),
            predicted: pred,
            true_class: truth,
            group,
        }
    }

    /// ARI from the 2x2 pair-confusion matrix, enumerating every pixel pair.
    fn pair_enumeration_ari(gt: &[u16], pred: &[u32]) -> f64 {
        let idx: Vec<usize> = (0..gt.len()).filter(|&i| gt[i] > 0).collect();
        let (mut tp, mut fp, mut fnn, mut tn) = (0f64, 0f64, 0f64, 0f64);
        for (k, &i) in idx.iter().enumerate() {
            for &j in &idx[k + 1..] {
                match (gt[i] == gt[j], pred[i] == pred[j]) {
                    (true, true) => tp += 1.0,
                    (false, true) => fp += 1.0,
                    (true, false) => fnn += 1.0,
                    (false, false) => tn += 1.0,
                }
            }
        }
        let den = (tp + fnn) * (fnn + tn) + (tp + fp) * (fp + tn);
        if den == 0.0 {
            return 1.0;
        }
        2.0 * (tp * tn - fnn * fp) / den
    }

    fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> (InstanceSegmentation, MaskSet) {
        let k_gt = rng.gen_range(1..5u16);
        let labels: Vec<u16> = (0..n * n).map(|_| rng.gen_range(0..=k_gt)).collect();
        let gt = InstanceSegmentation::new(n, n, labels).unwrap();
        let k_pred = rng.gen_range(0..6);
        let masks = (0..k_pred)
            .map(|_| {
                let d = rng.gen_range(0.05..0.6);
                BinaryMask::from_fn(n, n, |_, _| rng.gen_bool(d))
            })
            .collect();
        (gt, MaskSet::new(masks, MaskSource::Synthetic).unwrap())
    }

    #[test]
    fn fg_ari_identity_is_one() {
        let gt = InstanceSegmentation::new(2, 3, vec![0, 1, 1, 2, 2, 0]).unwrap();
        let pred = gt.to_mask_set();
        assert_eq!(fg_ari(&gt, &pred).unwrap(), 1.0);
    }

    #[test]
    fn fg_ari_single_object_any_grouping() {
        let gt = InstanceSegmentation::new(3, 3, vec![0, 0, 0, 0, 1, 1, 0, 1, 1]).unwrap();
        // covers the object plus some background
        let pred = MaskSet::new(
            vec![BinaryMask::from_fn(3, 3, |r, _| r >= 1)],
            MaskSource::Synthetic,
        )
        .unwrap();
        assert_eq!(fg_ari(&gt, &pred).unwrap(), 1.0);
        assert_eq!(fg_ari(&gt, &MaskSet::default()).unwrap(), 1.0);
    }

    #[test]
    fn partition_of_overlaps_ignores_mask_order() {
        let a = BinaryMask::from_fn(4, 4, |_, c| c < 3);
        let b = BinaryMask::from_fn(4, 4, |_, c| c >= 2);
        let gt =
            InstanceSegmentation::new(4, 4, (0..16).map(|i| 1 + (i % 4 >= 2) as u16).collect())
                .unwrap();
        let ab = MaskSet::new(vec![a.clone(), b.clone()], MaskSource::Synthetic).unwrap();
        let ba = MaskSet::new(vec![b, a], MaskSource::Synthetic).unwrap();
        let part = masks_to_partition((4, 4), &ab).unwrap();
        // columns 0-1 only a, column 2 both, column 3 only b
        assert_eq!(&part[..4], &[1, 1, 2, 3]);
        assert_eq!(fg_ari(&gt, &ab).unwrap(), fg_ari(&gt, &ba).unwrap());
        assert_eq!(mbo(&gt, &ab).unwrap(), mbo(&gt, &ba).unwrap());
    }

    #[test]
    fn fg_ari_undefined_without_foreground() {
        let gt = InstanceSegmentation::new(2, 2, vec![0; 4]).unwrap();
        assert!(matches!(
            fg_ari(&gt, &MaskSet::default()),
            Err(Error::FgAriUndefined)
        ));
    }

    #[test]
    fn fg_ari_matches_pair_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..40 {
            let (gt, pred) = random_scene(&mut rng, 16);
            if gt.instance_ids().is_empty() {
                continue;
            }
            let part = masks_to_partition(gt.dims(), &pred).unwrap();
            assert_abs_diff_eq!(
                fg_ari(&gt, &pred).unwrap(),
                pair_enumeration_ari(gt.labels(), &part),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn fg_ari_ignores_background_predictions() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..20 {
            let (gt, pred) = random_scene(&mut rng, 12);
            if gt.instance_ids().is_empty() || pred.is_empty() {
                continue;
            }
            let base = fg_ari(&gt, &pred).unwrap();
            // scramble predictions on background pixels only
            let mut mutated = pred.clone();
            for m in &mut mutated.masks {
                for r in 0..12 {
                    for c in 0..12 {
                        if gt.labels()[r * 12 + c] == 0 {
                            m.set(r, c, rng.gen_bool(0.5));
                        }
                    }
                }
            }
            assert_eq!(fg_ari(&gt, &mutated).unwrap(), base);
        }
    }

    #[test]
    fn metrics_invariant_to_order_and_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            // disjoint predictions so ordering cannot change the partition
            let gt_labels: Vec<u16> = (0..100).map(|_| rng.gen_range(0..4)).collect();
            let gt = InstanceSegmentation::new(10, 10, gt_labels.clone()).unwrap();
            if gt.instance_ids().is_empty() {
                continue;
            }
            let pred_labels: Vec<u16> = (0..100).map(|_| rng.gen_range(0..5)).collect();
            let pred = InstanceSegmentation::new(10, 10, pred_labels)
                .unwrap()
                .to_mask_set();
            let mut shuffled = pred.clone();
            shuffled.masks.reverse();
            let relabeled = InstanceSegmentation::new(
                10,
                10,
                gt_labels
                    .iter()
                    .map(|&l| if l == 0 { 0 } else { 10 - l })
                    .collect(),
            )
            .unwrap();
            let ari = fg_ari(&gt, &pred).unwrap();
            let m = mbo(&gt, &pred).unwrap();
            assert_eq!(fg_ari(&gt, &shuffled).unwrap(), ari);
            assert_eq!(fg_ari(&relabeled, &pred).unwrap(), ari);
            // summation order over instances may differ in the last bit
            assert_abs_diff_eq!(mbo(&gt, &shuffled).unwrap(), m, epsilon = 1e-12);
            assert_abs_diff_eq!(mbo(&relabeled, &pred).unwrap(), m, epsilon = 1e-12);
        }
    }

    #[test]
    fn mbo_examples() {
        let gt = InstanceSegmentation::new(4, 4, {
            let mut l = vec![0u16; 16];
            l[5] = 1;
            l[6] = 1;
            l
        })
        .unwrap();
        assert_eq!(mbo(&gt, &gt.to_mask_set()).unwrap(), 1.0);
        // doubled area containing the object
        let doubled = BinaryMask::from_fn(4, 4, |r, c| (r == 1 || r == 2) && (c == 1 || c == 2));
        let pred = MaskSet::new(vec![doubled], MaskSource::Synthetic).unwrap();
        assert_eq!(mbo(&gt, &pred).unwrap(), 0.5);
        assert_eq!(mbo(&gt, &MaskSet::default()).unwrap(), 0.0);
        let none = InstanceSegmentation::new(4, 4, vec![0; 16]).unwrap();
        assert!(mbo(&none, &pred).is_err());
    }

    #[test]
    fn mbo_improves_when_prediction_replaced_by_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..30 {
            let (gt, mut pred) = random_scene(&mut rng, 10);
            let ids = gt.instance_ids();
            if ids.is_empty() || pred.is_empty() {
                continue;
            }
            let before = mbo(&gt, &pred).unwrap();
            let target = gt.instance_mask(ids[0]);
            let k = rng.gen_range(0..pred.len());
            pred.masks[k] = target;
            assert!(mbo(&gt, &pred).unwrap() >= before);
        }
    }

    #[test]
    fn accuracy_examples() {
        let all = GroupedResults {
            records: (0..4).map(|i| rec(i, 1, 1, None)).collect(),
        };
        assert_eq!(accuracy(&all).unwrap(), 1.0);
        let none = GroupedResults {
            records: (0..4).map(|i| rec(i, 0, 1, None)).collect(),
        };
        assert_eq!(accuracy(&none).unwrap(), 0.0);
        let three = GroupedResults {
            records: vec![
                rec(0, 1, 1, None),
                rec(1, 1, 1, None),
                rec(2, 0, 0, None),
                rec(3, 0, 1, None),
            ],
        };
        assert_eq!(accuracy(&three).unwrap(), 0.75);
        assert!(accuracy(&GroupedResults::default()).is_err());
    }

    #[test]
    fn wga_examples() {
        let r = GroupedResults {
            records: vec![
                rec(0, 1, 1, Some(0)),
                rec(1, 1, 1, Some(0)),
                rec(2, 1, 1, Some(5)),
                rec(3, 0, 1, Some(5)),
            ],
        };
        let w = worst_group_accuracy(&r).unwrap();
        assert_eq!(w.wga, 0.5);
        assert_eq!(w.worst_group, 5);
        assert_eq!(w.per_group[&0].accuracy, 1.0);

        let single = GroupedResults {
            records: vec![
                rec(0, 1, 1, Some(2)),
                rec(1, 0, 1, Some(2)),
                rec(2, 0, 0, Some(2)),
            ],
        };
        assert_eq!(
            worst_group_accuracy(&single).unwrap().wga,
            accuracy(&single).unwrap()
        );

        let missing = GroupedResults {
            records: vec![rec(0, 1, 1, Some(0)), rec(1, 1, 1, None)],
        };
        assert!(matches!(
            worst_group_accuracy(&missing),
            Err(Error::MissingGroup(_))
        ));
    }

    #[test]
    fn wga_matches_group_by_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        for _ in 0..50 {
            let n = rng.gen_range(1..200);
            let records: Vec<ResultRecord> = (0..n)
                .map(|i| {
                    rec(
                        i,
                        rng.gen_range(0..3),
                        rng.gen_range(0..3),
                        Some(rng.gen_range(0..6) * 7),
                    )
                })
                .collect();
            let r = GroupedResults { records };
            let w = worst_group_accuracy(&r).unwrap();
            let mut worst = f64::INFINITY;
            for g in (0..6).map(|g| g * 7) {
                let members: Vec<_> = r.records.iter().filter(|x| x.group == Some(g)).collect();
                if members.is_empty() {
                    continue;
                }
                let acc = members
                    .iter()
                    .filter(|x| x.predicted == x.true_class)
                    .count() as f64
                    / members.len() as f64;
                worst = worst.min(acc);
            }
            assert_eq!(w.wga, worst);
            assert!(w.wga <= accuracy(&r).unwrap() + 1e-15);
        }
    }

    #[test]
    fn gap_examples() {
        let g = GapReport::from_accuracies(79.0, 62.0);
        assert_abs_diff_eq!(g.gap, 17.0, epsilon = 1e-12);
        let g = GapReport::from_accuracies(84.4, 69.2);
        assert_abs_diff_eq!(g.gap, 15.2, epsilon = 1e-12);

        let make = |correct: usize| GroupedResults {
            records: (0..1000)
                .map(|i| rec(i, (i >= correct) as usize, 0, None))
                .collect(),
        };
        let g = common_counter_gap(&make(790), &make(620)).unwrap();
        assert_abs_diff_eq!(g.gap * 100.0, 17.0, epsilon = 1e-9);
        assert_eq!(common_counter_gap(&make(500), &make(500)).unwrap().gap, 0.0);
    }
}
