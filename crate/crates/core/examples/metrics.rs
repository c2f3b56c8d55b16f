// ROC-AUC, PR-AUC and min(recall, precision) on a hand-sized example.

use strats::metrics::{MetricSet, ScoredLabels};

pub fn run_example() -> strats::Result<MetricSet> {
    let scored = ScoredLabels::new(vec![0.9, 0.8, 0.7, 0.6], vec![true, false, true, false])?;
    let m = MetricSet::compute(&scored)?;
    // ranks of the positives are 1 and 3: AP = (1/1 + 2/3) / 2
    println!(
        "ROC-AUC {:.4}  PR-AUC {:.4}  min(Re,Pr) {:.4}",
        m.roc_auc, m.pr_auc, m.min_re_pr
    );
    assert!((m.pr_auc - 5.0 / 6.0).abs() < 1e-12);
    Ok(m)
}

#[allow(dead_code)]
fn main() {
    run_example().unwrap();
}
