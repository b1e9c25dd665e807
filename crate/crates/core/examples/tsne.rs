//! Embed three clusters of five-dimensional score-like vectors in 2-D with
//! exact t-SNE and write the coordinates as CSV.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use pyroclass::embed::{export_embedding, tsne, EmbedConfig};
use pyroclass::Tensor;

fn main() -> pyroclass::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.05).expect("valid deviation");
    let per_cluster = 60;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for c in 0..3 {
        for _ in 0..per_cluster {
            for d in 0..5 {
                data.push(if d == c { 0.8 } else { 0.05 } + noise.sample(&mut rng));
            }
            labels.push(format!("class{c}"));
        }
    }
    let points = Tensor::new(vec![3 * per_cluster, 5], data)?;
    let config = EmbedConfig {
        perplexity: 30.0,
        iterations: 500,
        ..EmbedConfig::default()
    };
    let embedding = tsne(&points, &config)?;
    println!("KL divergence {:.3} -> {:.3}", embedding.initial_kl, embedding.kl);

    let mut centroids = [[0.0f64; 2]; 3];
    for (i, p) in embedding.points.iter().enumerate() {
        let c = i / per_cluster;
        centroids[c][0] += p[0] / per_cluster as f64;
        centroids[c][1] += p[1] / per_cluster as f64;
    }
    for (c, [x, y]) in centroids.iter().enumerate() {
        println!("class{c} centroid ({x:7.2}, {y:7.2})");
    }
    let path = std::env::temp_dir().join("pyroclass-tsne.csv");
    export_embedding(&embedding, &labels, &path)?;
    println!("coordinates written to {}", path.display());
    Ok(())
}
