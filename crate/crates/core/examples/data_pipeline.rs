//! Write a synthetic frame corpus, then split it into train/test by video,
//! balance the classes with augmented copies and cut stratified folds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pyroclass::data::image::write_pgm;
use pyroclass::data::{
    augment, balance_classes, decode_and_resize_to, load_manifest, split_test, stratified_folds, AugmentSpec,
    GrayImage,
};
use pyroclass::synthetic::write_corpus;
use pyroclass::Task;

fn main() -> pyroclass::Result<()> {
    let dir = std::env::temp_dir().join("pyroclass-data-pipeline");
    write_corpus(&dir, Task::Poses, 40, 64, 8, 0)?;
    let dataset = load_manifest(&dir.join("manifest.csv"))?;
    println!("{} frames: {:?}", dataset.len(), dataset.class_counts());

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let split = split_test(&dataset, 0.1, &mut rng)?;
    println!("test {:?}", split.test.class_counts());
    println!("train/validation {:?}", split.train_val.class_counts());

    // Drop some standing frames to make the classes uneven, then pad them back.
    let keep: Vec<usize> = (0..split.train_val.len())
        .filter(|&i| split.train_val.records()[i].label != "standing" || i % 3 == 0)
        .collect();
    let uneven = split.train_val.subset(&keep)?;
    let spec = AugmentSpec::default();
    let balanced = balance_classes(&uneven, &spec)?;
    println!(
        "uneven {:?} -> balanced {:?} ({} augmented copies)",
        uneven.class_counts(),
        balanced.class_counts(),
        balanced.synthetic_count()
    );

    let folds = stratified_folds(&balanced, 9, &mut rng)?;
    for (f, fold) in folds.iter().enumerate().take(3) {
        println!("fold {f}: {} training, {} validation", fold.train.len(), fold.validation.len());
    }

    let frame = decode_and_resize_to(&dataset.records()[0].path, 64)?;
    let out = dir.join("augmented.pgm");
    write_pgm(&out, &GrayImage::from_unit_tensor(&augment(&frame, &spec, &mut rng)?)?)?;
    println!("one augmented frame written to {}", out.display());
    Ok(())
}
