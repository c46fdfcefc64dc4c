//! The flat binary checkpoint format: save, reload, hash, and verify that
//! the restored classifier predicts identically.

use dsgk::data::{generate_task, SyntheticTaskSpec};
use dsgk::harness::{evaluate, train, Evaluator, RunConfig};
use dsgk::network::NetworkParams;

fn main() -> dsgk::Result<()> {
    let spec = SyntheticTaskSpec {
        samples_per_class: 48,
        ..SyntheticTaskSpec::desk(4)
    };
    let (source, target) = generate_task(&spec)?;
    let evaluator = Evaluator::new(&target)?;
    let cfg = RunConfig {
        hidden_sizes: vec![32, 16],
        ..RunConfig::desk(4)
    };
    let output = train(&cfg, &source, target.unlabeled_view(), Some(&evaluator))?;

    let dir = std::env::temp_dir().join("dsgk-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("classifier.bin");
    output.params.save(&path)?;

    let bytes = std::fs::read(&path)?;
    println!("checkpoint: {} bytes, magic {:?}", bytes.len(), &bytes[..5]);
    println!("hash:       {}", output.params.checkpoint_hash());

    let restored = NetworkParams::load(&path)?;
    assert_eq!(restored.checkpoint_hash(), output.params.checkpoint_hash());
    let before = evaluate(&output.params, &target)?;
    let after = evaluate(&restored, &target)?;
    assert_eq!(before, after);
    println!("restored classifier scores identically: {after:.4}");
    Ok(())
}
