// dev probe: per-SNR F1 breakdown of a trained checkpoint on the test split
use burstprop::data::{Dataset, Split};
use burstprop::metrics::MaskCounts;
use burstprop::model::load_checkpoint;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let ckpt = &args[1];
    let ds = Dataset::open(std::path::Path::new("/tmp/bp/data")).unwrap();
    let (mut model, _, _) = load_checkpoint(std::path::Path::new(ckpt)).unwrap();

    let members = ds.split_indices(Split::Test);
    for &snr in &[-12.0f64, -6.0, 0.0, 6.0] {
        let positions: Vec<usize> = members
            .iter()
            .enumerate()
            .filter(|(_, &idx)| ds.manifest.samples[idx].snr_db == snr)
            .map(|(pos, _)| pos)
            .collect();
        let mut counts = MaskCounts::default();
        for chunk in positions.chunks(32) {
            let batch = ds.load_batch(Split::Test, chunk).unwrap();
            let pred = model.predict_mask(&batch, 0.5).unwrap();
            counts.accumulate(&pred, &batch.mask).unwrap();
        }
        println!(
            "snr {snr:>5}: n={:<3} f1 {:.3} acc {:.1} (tp {} fp {} fn {})",
            positions.len(),
            counts.f1(),
            counts.accuracy(),
            counts.tp,
            counts.fp,
            counts.fn_
        );
    }
}
