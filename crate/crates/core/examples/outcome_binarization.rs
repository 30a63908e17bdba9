// Median binarization of length of stay and complication index.

use fusionbench::datapipe::{binarize_by_median, binarize_outcomes, MedianPopulation, Outcome, OutcomeRecord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let los = [2.0, 3.0, 4.0, 4.0, 6.0, 14.0, 5.0];
    let b = binarize_by_median(&los)?;
    println!("LoS threshold {} -> {:?}", b.threshold, b.labels);

    let records = vec![
        OutcomeRecord::new("p1", 3.0, 0.0)?,
        OutcomeRecord::new("p2", 4.0, 0.0)?,
        OutcomeRecord::new("p3", 9.0, 20.9)?,
        OutcomeRecord::new("p4", 14.0, 36.2)?,
        OutcomeRecord::new("p5", 5.0, 8.7)?,
    ];
    let train: Vec<String> = ["p1", "p2", "p3"].map(String::from).to_vec();
    for population in [MedianPopulation::TrainingSplit, MedianPopulation::FullCohort] {
        let cci = binarize_outcomes(&records, Outcome::Cci, population, &train)?;
        println!("CCI ({population:?}) threshold {} -> {:?}", cci.threshold, cci.labels);
    }
    Ok(())
}
