// Class-balanced sampling on a skewed label set, and the seeded batch feed.

use fusionbench::recipe::{batch_feed, BalancedSampler};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let labels: Vec<usize> = (0..500).map(|i| if i % 50 == 0 { 1 } else { 0 }).collect();
    let sampler = BalancedSampler::new(&labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let draws = 5000;
    let ones = (0..draws).filter(|_| labels[sampler.sample(&mut rng)] == 1).count();
    println!("raw class-1 share {:.3}, sampled {:.3}", 10.0 / 500.0, ones as f64 / draws as f64);

    let a: Vec<Vec<usize>> = batch_feed(sampler.clone(), 5, 4, 11, true).collect();
    let b: Vec<Vec<usize>> = batch_feed(sampler, 5, 4, 11, false).collect();
    println!("prefetch and inline feeds agree: {}", a == b);
    Ok(())
}
