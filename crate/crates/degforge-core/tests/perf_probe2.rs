// Temporary fine-grained probe; deleted before release.
use degforge_core::img::synth::synth_corpus;
use degforge_core::recon::{ReconKind, ReconModelSpec};
use std::time::Instant;

#[test]
#[ignore]
fn batch_breakdown() {
    let imgs = synth_corpus(64, 32, 32, 99);
    let spec = ReconModelSpec::new(ReconKind::VqVae, 32);
    degforge_core::recon::profile_one_batch(&spec, &imgs);
    let t = Instant::now();
    for _ in 0..5 {
        degforge_core::recon::profile_one_batch(&spec, &imgs);
    }
    eprintln!("5 full steps: {:.2}s", t.elapsed().as_secs_f64());
}
