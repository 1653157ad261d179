//! Score a handful of hand-written rankings at several cutoffs.

use unipcr::config::PrecisionDenominator;
use unipcr::eval::{precision_recall_f1_at_k, random_ranking_expectation, TagEvalRecord};

fn record(id: u64, truth: &[&str], predicted: &[&str]) -> TagEvalRecord {
    TagEvalRecord {
        id,
        truth: truth.iter().map(|s| s.to_string()).collect(),
        predicted: predicted.iter().map(|s| s.to_string()).collect(),
    }
}

fn main() -> unipcr::Result<()> {
    let records = [
        record(1, &["python", "performance"], &["python", "java", "performance", "c++", "sql"]),
        record(2, &["javascript"], &["html", "css", "javascript", "node.js", "react"]),
        record(3, &["c#", "linq", "sql", "entity-framework"], &["c#", "sql", "java", "python", "linq"]),
    ];
    for denom in [PrecisionDenominator::Min, PrecisionDenominator::K] {
        for k in [1, 3, 5] {
            let m = precision_recall_f1_at_k(&records, k, denom)?;
            println!("{} @{k}: P {:.3} R {:.3} F1 {:.3}", denom.label(), m.precision, m.recall, m.f1);
        }
    }
    let r = random_ranking_expectation(424, 2, 5, PrecisionDenominator::Min);
    println!("random top-5 over 424 tags, 2 true tags: F1 {:.4}", r.f1);
    Ok(())
}
