//! Evaluation helpers: a pixel classifier with a shuffled-label control,
//! macro-averaged attribute metrics and the Mann-Whitney AUC.
//!
//!     cargo run --release -p latcon --example evaluation [MNIST_DIR]

mod common;

use latcon::eval::{attribute_metrics, auc, class_bits, train_classifier, ClassifierConfig};
use latcon::Rng;

fn main() -> latcon::Result<()> {
    // one of each outcome: TP, FP, FN, TN
    let m = attribute_metrics(&[vec![1], vec![1], vec![0], vec![0]], &[vec![1], vec![0], vec![1], vec![0]])?;
    println!("toy: precision {} recall {} f1 {}", m.precision, m.recall, m.f1);
    println!("toy AUC {}", auc(&[0.9, 0.4], &[0.5, 0.1]));

    let (train, held) = common::digits(112)?;
    let cfg = ClassifierConfig {
        hidden: vec![128],
        epochs: 5,
        ..ClassifierConfig::default()
    };
    let clf = train_classifier(&train.images, &train.label_indices(), &cfg)?;
    let pred = clf.predict(&held.images)?;
    let m = attribute_metrics(&class_bits(&pred, 10), &class_bits(&held.label_indices(), 10))?;
    println!(
        "held-out digits: accuracy {:.3} precision {:.3} recall {:.3} f1 {:.3}",
        m.exact_match, m.precision, m.recall, m.f1
    );

    let mut shuffled = train.label_indices();
    Rng::seeded(1).shuffle(&mut shuffled);
    let control = train_classifier(&train.images, &shuffled, &cfg)?;
    println!(
        "shuffled-label control: accuracy {:.3}",
        control.accuracy(&held.images, &held.label_indices())?
    );
    Ok(())
}
