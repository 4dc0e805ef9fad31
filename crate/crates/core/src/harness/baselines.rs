use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::metrics::MetricsReport;
use crate::error::Result;
use crate::feature_store::{Dataset, ImageRecord, Split};
use crate::models::BaselineKind;

/// Label for one record. `rng` is only consulted by the random baseline.
pub fn baseline_predict<R: Rng>(kind: BaselineKind, record: &ImageRecord, person: usize, rng: &mut R) -> usize {
    match kind {
        BaselineKind::AllPrivate => 1,
        BaselineKind::AllPublic => 0,
        BaselineKind::Random => usize::from(rng.gen_bool(0.5)),
        BaselineKind::Pcs2 => usize::from(record.count_of(person) > 0),
        BaselineKind::Pcs3 => {
            let n = record.count_of(person);
            usize::from(n > 0 && n <= 2)
        }
    }
}

/// Baseline metrics on `split`, or on every record when `split` is `None`.
pub fn evaluate_baseline(kind: BaselineKind, ds: &Dataset, split: Option<Split>, seed: u64) -> Result<MetricsReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let person = ds.vocabulary.person();
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for r in ds.records.iter().filter(|r| split.is_none() || r.split == split) {
        truth.push(r.label as usize);
        pred.push(baseline_predict(kind, r, person, &mut rng));
    }
    MetricsReport::from_predictions(&truth, &pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::Detection;

    fn with_persons(n: usize) -> ImageRecord {
        let mut r = ImageRecord::new("x", 1);
        r.detections = (0..n).map(|_| Detection { category: 0, confidence: 0.9, bbox: [0.0; 4] }).collect();
        r
    }

    #[test]
    fn person_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(baseline_predict(BaselineKind::Pcs2, &with_persons(3), 0, &mut rng), 1);
        assert_eq!(baseline_predict(BaselineKind::Pcs3, &with_persons(3), 0, &mut rng), 0);
        assert_eq!(baseline_predict(BaselineKind::Pcs3, &with_persons(2), 0, &mut rng), 1);
        assert_eq!(baseline_predict(BaselineKind::Pcs2, &with_persons(0), 0, &mut rng), 0);
        assert_eq!(baseline_predict(BaselineKind::Pcs3, &with_persons(0), 0, &mut rng), 0);
    }
}
