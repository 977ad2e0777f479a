// Temporary throughput probe; deleted before release.
use degforge_core::img::synth::synth_corpus;
use degforge_core::recon::{train_recon_with, ReconKind, ReconModelSpec, TrainReconOptions};
use std::time::Instant;

#[test]
#[ignore]
fn epoch_timing() {
    let imgs = synth_corpus(2000, 32, 32, 99);
    for kind in ReconKind::ALL {
        let spec = ReconModelSpec::new(kind, 32);
        let t = Instant::now();
        let out = train_recon_with(&spec, &imgs, 1, &[1], 7, &TrainReconOptions::default()).unwrap();
        eprintln!(
            "{}: {:.1}s per epoch (loss {:.4})",
            kind.name(),
            t.elapsed().as_secs_f64(),
            out.epoch_losses[0]
        );
    }
}
