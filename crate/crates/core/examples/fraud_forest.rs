//! Train the random-forest screener on synthetic labelled traffic and
//! report held-out accuracy across a few thresholds.

use txnguard::ads::{
    evaluate, generate_dataset, score, train_forest, ForestParams, TxnFeatures, FEATURE_NAMES,
};

fn main() {
    let data = generate_dataset(5_000, 0.1, 1).unwrap();
    let (train, test) = data.split(0.8, 2);
    let model = train_forest(&train, ForestParams::default(), 3).unwrap();
    println!(
        "{} trees trained on {} rows; features {:?}",
        model.trees.len(),
        train.len(),
        FEATURE_NAMES
    );
    for theta in [0.3, 0.5, 0.7] {
        let r = evaluate(&model, &test, theta).unwrap();
        println!(
            "theta {theta}: accuracy {:.4} precision {:.4} recall {:.4} fpr {:.4}",
            r.accuracy, r.precision, r.recall, r.false_positive_rate
        );
    }
    let everyday = TxnFeatures::from_array([30.0, 13.0, 2.0, 2.0, 15.0, 150.0]);
    let odd = TxnFeatures::from_array([2_500.0, 3.0, 9.0, 2_000.0, 0.0, 25.0]);
    println!("score(everyday) = {:.3}", score(&model, &everyday));
    println!("score(odd)      = {:.3}", score(&model, &odd));
}
