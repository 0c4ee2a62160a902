// dev probe: mask statistics per SNR
use burstprop::data::{generate_dataset, Component, Dataset, SyntheticConfig};

fn main() {
    let tmp = std::env::temp_dir().join("bp_probe");
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let out = tmp.join("d");
    let cfg = SyntheticConfig::default();
    let manifest = generate_dataset(&cfg, 42, &out).unwrap();
    let ds = Dataset::open(&out).unwrap();
    println!("pos_weight = {:.3}", manifest.pos_weight);
    println!("audio norm mean {:.3} std {:.3}", manifest.audio_norm.mean, manifest.audio_norm.std);
    let mut per_snr: std::collections::BTreeMap<i64, (usize, usize)> = Default::default();
    for meta in &manifest.samples {
        let mask = ds.component(meta.index, Component::Mask).unwrap();
        let pos = mask.data().iter().filter(|&&v| v == 1.0).count();
        let entry = per_snr.entry(meta.snr_db as i64).or_insert((0, 0));
        entry.0 += pos;
        entry.1 += mask.numel();
    }
    for (snr, (pos, total)) in &per_snr {
        println!("snr {snr:>4} dB: positive rate {:.3}", *pos as f64 / *total as f64);
    }
}
