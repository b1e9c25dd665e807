//! Confusion matrix, per-class precision/recall/F1 and one-vs-rest ROC
//! curves for a set of noisy three-class scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pyroclass::metrics::{confusion_csv, evaluate_scores};
use pyroclass::Tensor;

fn main() -> pyroclass::Result<()> {
    let classes = ["crawling", "sitting", "standing"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 300;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let mut scores = Vec::with_capacity(n * 3);
    for &l in &labels {
        let raw: Vec<f64> = (0..3)
            .map(|c| rng.random_range(0.0..1.0) + if c == l { 0.8 } else { 0.0 })
            .collect();
        let total: f64 = raw.iter().sum();
        scores.extend(raw.iter().map(|v| v / total));
    }
    let scores = Tensor::new(vec![n, 3], scores)?;

    let (eval, roc) = evaluate_scores(&scores, &labels, &classes)?;
    println!("accuracy {:.3}, macro F1 {:.3}\n", eval.accuracy, eval.macro_f1);
    println!("row percentages (true class per row):\n{}", confusion_csv(&eval.confusion)?);
    for s in &eval.per_class {
        println!("{:>9}: precision {:.3} recall {:.3} F1 {:.3}", s.class, s.precision, s.recall, s.f1);
    }
    for c in roc.classes.iter().chain([&roc.micro, &roc.macro_avg]) {
        println!("{:>9} ROC area {:.3} over {} points", c.name, c.auc.unwrap_or(f64::NAN), c.points.len());
    }
    Ok(())
}
