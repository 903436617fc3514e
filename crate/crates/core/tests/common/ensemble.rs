//! Three score lists whose errors fall on disjoint utterances.

use avwws::eval::ScoreList;

pub struct EnsembleFixture {
    pub lists: [ScoreList; 3],
    pub labels: ScoreList,
}

/// `n` utterances alternating positive/negative. Model `k` gets utterance
/// `i` wrong exactly when `i < errors * 3` and `i % 3 == k`, so at most one
/// model errs per utterance.
pub fn disjoint_errors(n: usize, errors: usize) -> EnsembleFixture {
    let mut labels = ScoreList::default();
    let mut lists: [ScoreList; 3] = Default::default();
    for i in 0..n {
        let id = format!("utt{i:03}");
        let y = (i % 2) as f64;
        labels.push(id.clone(), y);
        for (k, l) in lists.iter_mut().enumerate() {
            let wrong = i < errors * 3 && i % 3 == k;
            let correct_side = if y == 1.0 { 0.8 } else { 0.2 };
            let s = if wrong { 1.0 - correct_side } else { correct_side };
            // Distinct values per model so a threshold shift would show up.
            l.push(id.clone(), s + 0.01 * k as f64);
        }
    }
    EnsembleFixture { lists, labels }
}
