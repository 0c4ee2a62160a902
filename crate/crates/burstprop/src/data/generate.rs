//! Seeded synthetic generator.
//!
//! A sample's latent class picks a fixed dictionary pattern of smooth spectral
//! bands ("speech"); a per-sample colored noise field built from the same bump
//! family is mixed in at one of the configured SNRs. Low-SNR audio is therefore
//! ambiguous about the class on purpose: the class is always recoverable from
//! the rendered lip image, which is what makes the visual channel worth fusing.

use std::fs;
use std::path::Path;

use crate::data::{
    ibm, sample_path, Component, IbmParams, Manifest, NormStats, SampleMeta, Split,
    SyntheticConfig,
};
use crate::error::{Error, Result};
use crate::tensor::{f32_quantize, write_mbt, Rng, Stream, Tensor};

pub const NUM_CLASSES: usize = 8;
pub const NUM_NOISE_TYPES: usize = 4;
/// Shared grid of canonical band positions used by speech bands and
/// interferer spikes alike, so a narrow spectral spike never reveals by itself
/// whether it is speech or noise.
const CANONICAL_SLOTS: usize = 11;
const AUDIO_FLOOR: f64 = 1e-12;

fn slot_center(slot: usize, bins: usize) -> f64 {
    (0.12 + 0.76 * slot as f64 / (CANONICAL_SLOTS - 1) as f64) * bins as f64
}

fn spike_width(kind: usize, bins: usize) -> f64 {
    (0.012 + 0.007 * (kind % 3) as f64) * bins as f64
}

fn add_gaussian(pattern: &mut [f64], center: f64, width: f64, amp: f64) {
    for (f, slot) in pattern.iter_mut().enumerate() {
        let d = (f as f64 - center) / width;
        *slot += amp * (-0.5 * d * d).exp();
    }
}

/// The eight classes form two groups, each with a fixed doublet of weaker
/// shared bands plus two independent "twin" choices: each twin dimension puts
/// a dominant band on one of two dedicated slots. A competing-speech
/// interferer always occupies the other slot of each twin dimension, so the
/// group is readable from audio but the two twin sides are not: that is
/// precisely what the visual channel disambiguates.
struct GroupLayout {
    shared_slots: [usize; 2],
    twin_a: (usize, usize),
    twin_b: (usize, usize),
}

fn group_layout(group: usize) -> GroupLayout {
    match group % 2 {
        0 => GroupLayout {
            shared_slots: [0, 6],
            twin_a: (2, 9),
            twin_b: (4, 10),
        },
        _ => GroupLayout {
            shared_slots: [1, 7],
            twin_a: (3, 8),
            twin_b: (5, 0),
        },
    }
}

const SHARED_AMPS: [f64; 2] = [0.8, 0.45];
const TWIN_A_AMP: f64 = 1.0;
const TWIN_A_KIND: usize = 2;
const TWIN_B_AMP: f64 = 0.9;
const TWIN_B_KIND: usize = 1;

fn twin_sides(class: usize) -> (usize, usize, usize) {
    ((class / 4) % 2, (class / 2) % 2, class % 2)
}

/// Grid slots of a class's spectral bands as (slot, amp, width_kind).
pub fn class_bands(class: usize) -> Vec<(usize, f64, usize)> {
    let (group, side_a, side_b) = twin_sides(class);
    let layout = group_layout(group);
    let pick = |slots: (usize, usize), side: usize| if side == 0 { slots.0 } else { slots.1 };
    let mut bands: Vec<(usize, f64, usize)> = layout
        .shared_slots
        .iter()
        .enumerate()
        .map(|(j, &slot)| (slot, SHARED_AMPS[j], (group + j) % 3))
        .collect();
    bands.push((pick(layout.twin_a, side_a), TWIN_A_AMP, TWIN_A_KIND));
    bands.push((pick(layout.twin_b, side_b), TWIN_B_AMP, TWIN_B_KIND));
    bands
}

/// The twin slots the class does NOT occupy, with the band profile the
/// impersonating interferers reproduce there.
fn twin_complements(class: usize) -> Vec<(usize, f64, usize)> {
    let (group, side_a, side_b) = twin_sides(class);
    let layout = group_layout(group);
    let other = |slots: (usize, usize), side: usize| if side == 0 { slots.1 } else { slots.0 };
    vec![
        (other(layout.twin_a, side_a), TWIN_A_AMP, TWIN_A_KIND),
        (other(layout.twin_b, side_b), TWIN_B_AMP, TWIN_B_KIND),
    ]
}

/// Dictionary entry: narrow Gaussian bands on canonical grid slots, fixed
/// functions of the class index. Narrow bands keep local speech dominance
/// alive even when the global SNR is far below the mask's local criterion.
pub fn class_pattern(class: usize, bins: usize) -> Vec<f64> {
    let mut pattern = vec![0.0; bins];
    for (slot, amp, kind) in class_bands(class) {
        add_gaussian(
            &mut pattern,
            slot_center(slot, bins),
            spike_width(kind, bins),
            amp,
        );
    }
    pattern
}

/// Smooth canonical noise spectra, one per noise type (analogous to a small
/// set of recorded environments).
fn noise_type_envelope(noise_type: usize, x: f64) -> f64 {
    match noise_type % NUM_NOISE_TYPES {
        0 => 1.28 - 1.25 * x,
        1 => 0.03 + 1.25 * x,
        2 => 0.04 + 1.15 * (-(x - 0.5) * (x - 0.5) / (2.0 * 0.15 * 0.15)).exp(),
        _ => {
            0.03 + 0.8 * (-(x - 0.22) * (x - 0.22) / (2.0 * 0.09 * 0.09)).exp()
                + 0.8 * (-(x - 0.78) * (x - 0.78) / (2.0 * 0.09 * 0.09)).exp()
        }
    }
}

/// Renders the class as a lip-like double ellipse with mild seeded jitter.
fn render_visual(class: usize, h: usize, w: usize, rng: &mut Rng) -> Vec<f64> {
    let dx = rng.uniform(-1.0, 1.0);
    let dy = rng.uniform(-1.0, 1.0);
    let cx = w as f64 / 2.0 + dx;
    let cy = h as f64 / 2.0 + dy;
    let rx = (0.24 + 0.055 * (class % 4) as f64) * w as f64;
    let ry = (0.13 + 0.05 * (class / 4) as f64) * h as f64;
    let opening = 0.15 + 0.7 * (((3 * class + 1) % 8) as f64 / 7.0);
    let (orx, ory) = (rx * 0.6, ry * opening);

    // roughly zero-mean values keep first-layer statistics comparable with
    // the normalized audio channel
    let mut img = Vec::with_capacity(h * w);
    for py in 0..h {
        for px in 0..w {
            let nx = (px as f64 - cx) / rx;
            let ny = (py as f64 - cy) / ry;
            let outer = nx * nx + ny * ny <= 1.0;
            let mx = (px as f64 - cx) / orx;
            let my = (py as f64 - cy) / ory;
            let inner = mx * mx + my * my <= 1.0;
            let base = if outer && !inner {
                0.5
            } else if inner {
                -0.3
            } else {
                -0.4
            };
            img.push(base + rng.uniform(-0.06, 0.06));
        }
    }
    img
}

struct RawSample {
    class: usize,
    snr_db: f64,
    audio_log: Vec<f64>, // Ha*Wa, pre-normalization
    visual: Vec<f64>,    // Hv*Wv
    clean_q: Vec<f64>,   // F, f32-quantized current frame
    noise_q: Vec<f64>,   // F
    mask: Vec<f64>,      // F
}

fn synthesize(cfg: &SyntheticConfig, rng: &mut Rng, ibm_params: &IbmParams) -> Result<RawSample> {
    let [_, frames, bins] = cfg.audio_shape;
    let [_, vh, vw] = cfg.visual_shape;

    let class = rng.below(NUM_CLASSES);
    let noise_type = rng.below(NUM_NOISE_TYPES);
    // mid-set SNRs are drawn twice as often as the extremes (triangular
    // weighting over the sorted set)
    let snr_db = {
        let n = cfg.snr_db_set.len();
        let weights: Vec<usize> = (0..n).map(|i| (i + 1).min(n - i)).collect();
        let total: usize = weights.iter().sum();
        let mut draw = rng.below(total);
        let mut picked = 0;
        for (i, &w) in weights.iter().enumerate() {
            if draw < w {
                picked = i;
                break;
            }
            draw -= w;
        }
        cfg.snr_db_set[picked]
    };
    let gain = rng.uniform(0.9, 1.1);

    // clean power: class bands, each with its own temporal modulation phase,
    // under the same per-cell fluctuation the noise carries (a smooth band
    // against ragged interference would be recognizable by texture alone)
    let mut clean = vec![0.0; frames * bins];
    for (slot, amp, kind) in class_bands(class) {
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let center = slot_center(slot, bins);
        let width = spike_width(kind, bins);
        for t in 0..frames {
            let env = 0.5
                + 0.5 * (std::f64::consts::TAU * t as f64 / frames as f64 + phase).sin();
            let row = &mut clean[t * bins..(t + 1) * bins];
            for (f, slot_val) in row.iter_mut().enumerate() {
                let d = (f as f64 - center) / width;
                *slot_val += gain * amp * env * (-0.5 * d * d).exp();
            }
        }
    }
    for v in clean.iter_mut() {
        *v *= rng.uniform(0.85, 1.15);
    }

    // noise = broadband environment base + narrow interferers, mixed by power
    // shares. Interferers sit on the same canonical grid as the speech bumps
    // with matching temporal modulation and carry a third to two thirds of the
    // noise power budget, so at low and mid SNR an observed spectral spike is
    // genuinely ambiguous between speech and interference unless the class is
    // known from the visual channel.
    let current = frames - 1;
    let ripple_cycles = (1 + rng.below(2)) as f64;
    let ripple_phase = rng.uniform(0.0, std::f64::consts::TAU);
    let mut envelope = vec![0.02; bins];
    for (f, slot) in envelope.iter_mut().enumerate() {
        let x = f as f64 / bins as f64;
        let ripple = 1.0 + 0.15 * (std::f64::consts::TAU * ripple_cycles * x + ripple_phase).sin();
        *slot += noise_type_envelope(noise_type, x) * ripple;
    }
    let mut base = vec![0.0; frames * bins];
    for t in 0..frames {
        for f in 0..bins {
            base[t * bins + f] = envelope[f] * rng.uniform(0.85, 1.15);
        }
    }

    // interference imitating a competing speaker: spikes always sit on the two
    // twin slots this class does NOT occupy, built exactly like the dominant
    // speech bands there (same amp tier, width and modulation family), so the
    // twin sides are unreadable from audio alone; an occasional weaker spike
    // lands on a slot free of this sample's bands
    let band_slots: Vec<usize> = class_bands(class).iter().map(|&(s, _, _)| s).collect();
    let complements = twin_complements(class);
    let mut interferers = Vec::new();
    for &(slot, amp, kind) in &complements {
        let igain = rng.uniform(0.9, 1.1);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let mut spike = vec![0.0; bins];
        add_gaussian(
            &mut spike,
            slot_center(slot, bins),
            spike_width(kind, bins),
            amp * igain,
        );
        interferers.push((spike, phase));
    }
    let free_slots: Vec<usize> = (0..CANONICAL_SLOTS)
        .filter(|s| !band_slots.contains(s) && !complements.iter().any(|&(c, _, _)| c == *s))
        .collect();
    let extra_count = rng.below(2);
    for _ in 0..extra_count {
        let slot = free_slots[rng.below(free_slots.len())];
        let kind = rng.below(3);
        let amp = SHARED_AMPS[rng.below(2)] * rng.uniform(0.9, 1.1);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let mut spike = vec![0.0; bins];
        add_gaussian(&mut spike, slot_center(slot, bins), spike_width(kind, bins), amp);
        interferers.push((spike, phase));
    }
    let mut intf = vec![0.0; frames * bins];
    for t in 0..frames {
        let tx = std::f64::consts::TAU * t as f64 / frames as f64;
        for f in 0..bins {
            let mut level = 0.0;
            for (spike, phi) in &interferers {
                level += spike[f] * (0.5 + 0.5 * (tx + phi).sin());
            }
            intf[t * bins + f] = level * rng.uniform(0.85, 1.15);
        }
    }

    // realize the drawn SNR in power exactly on the current frame: the
    // speech-level interference keeps its absolute scale as long as the noise
    // budget allows (it dims only when the budget forces it), and the diffuse
    // background absorbs the remainder
    let clean_sum: f64 = clean[current * bins..].iter().sum();
    let noise_budget = clean_sum / 10f64.powf(snr_db / 10.0);
    let base_sum: f64 = base[current * bins..].iter().sum();
    let intf_sum: f64 = intf[current * bins..].iter().sum();
    let intf_scale = (0.92 * noise_budget / intf_sum).min(1.0);
    let base_scale = (noise_budget - intf_scale * intf_sum) / base_sum;
    let noise: Vec<f64> = base
        .iter()
        .zip(&intf)
        .map(|(&b, &i)| b * base_scale + i * intf_scale)
        .collect();

    let audio_log = clean
        .iter()
        .zip(&noise)
        .map(|(&c, &n)| (c + n + AUDIO_FLOOR).ln())
        .collect();

    // quantize through file precision first so a reloaded mask recomputes exactly
    let clean_q = f32_quantize(&Tensor::from_vec(clean[current * bins..].to_vec()));
    let noise_q = f32_quantize(&Tensor::from_vec(noise[current * bins..].to_vec()));
    let mask = ibm(&clean_q, &noise_q, ibm_params)?;

    Ok(RawSample {
        class,
        snr_db,
        audio_log,
        visual: render_visual(class, vh, vw, rng),
        clean_q: clean_q.data().to_vec(),
        noise_q: noise_q.data().to_vec(),
        mask: mask.data().to_vec(),
    })
}

/// Generates the dataset under `out_dir` (the directory itself is created,
/// but its parent must exist) and returns the manifest that was written.
pub fn generate_dataset(cfg: &SyntheticConfig, seed: u64, out_dir: &Path) -> Result<Manifest> {
    cfg.validate()?;
    if !out_dir.is_dir() {
        fs::create_dir(out_dir)?;
    }
    let samples_dir = out_dir.join("samples");
    if !samples_dir.is_dir() {
        fs::create_dir(&samples_dir)?;
    }

    // split assignment is a pure function of (seed, n_samples)
    let (n_train, n_test, _) = cfg.split_counts();
    let mut order: Vec<usize> = (0..cfg.n_samples).collect();
    Rng::seeded(seed, Stream::Shuffle).shuffle(&mut order);
    let mut split_of = vec![Split::Proxy; cfg.n_samples];
    for (rank, &index) in order.iter().enumerate() {
        split_of[index] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_test {
            Split::Test
        } else {
            Split::Proxy
        };
    }

    let ibm_params = IbmParams {
        lc_db: cfg.lc_db,
        ..IbmParams::default()
    };
    let mut rng = Rng::seeded(seed, Stream::Data);
    let mut raw: Vec<RawSample> = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        raw.push(synthesize(cfg, &mut rng, &ibm_params)?);
    }

    // train-split statistics for audio normalization and the class balance
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    let mut positives = 0usize;
    let mut negatives = 0usize;
    for (i, s) in raw.iter().enumerate() {
        if split_of[i] != Split::Train {
            continue;
        }
        for &v in &s.audio_log {
            sum += v;
            sum_sq += v * v;
            count += 1;
        }
        positives += s.mask.iter().filter(|&&m| m == 1.0).count();
        negatives += s.mask.iter().filter(|&&m| m == 0.0).count();
    }
    if count == 0 {
        return Err(Error::Config("train split is empty".into()));
    }
    if positives == 0 || negatives == 0 {
        return Err(Error::Config(
            "degenerate masks: train split needs both positive and negative cells".into(),
        ));
    }
    let mean = sum / count as f64;
    let std = (sum_sq / count as f64 - mean * mean).sqrt().max(1e-12);
    let pos_weight = negatives as f64 / positives as f64;

    let [_, frames, bins] = cfg.audio_shape;
    let [_, vh, vw] = cfg.visual_shape;
    let mut metas = Vec::with_capacity(cfg.n_samples);
    for (i, s) in raw.iter().enumerate() {
        let audio: Vec<f64> = s.audio_log.iter().map(|&v| (v - mean) / std).collect();
        write_mbt(
            &sample_path(out_dir, i, Component::Audio),
            &Tensor::new(vec![1, frames, bins], audio)?,
        )?;
        write_mbt(
            &sample_path(out_dir, i, Component::Visual),
            &Tensor::new(vec![1, vh, vw], s.visual.clone())?,
        )?;
        write_mbt(
            &sample_path(out_dir, i, Component::Mask),
            &Tensor::from_vec(s.mask.clone()),
        )?;
        write_mbt(
            &sample_path(out_dir, i, Component::Clean),
            &Tensor::from_vec(s.clean_q.clone()),
        )?;
        write_mbt(
            &sample_path(out_dir, i, Component::Noise),
            &Tensor::from_vec(s.noise_q.clone()),
        )?;
        metas.push(SampleMeta {
            index: i,
            class: s.class,
            snr_db: s.snr_db,
            split: split_of[i],
        });
    }

    let manifest = Manifest {
        version: 1,
        seed,
        n_samples: cfg.n_samples,
        audio_shape: cfg.audio_shape,
        visual_shape: cfg.visual_shape,
        mask_bins: cfg.mask_bins,
        snr_db_set: cfg.snr_db_set.clone(),
        split_fractions: cfg.split_fractions,
        lc_db: cfg.lc_db,
        pos_weight,
        audio_norm: NormStats { mean, std },
        samples: metas,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(out_dir.join("manifest.json"), text)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;
    use crate::tensor::read_mbt;

    fn small_cfg(n: usize) -> SyntheticConfig {
        SyntheticConfig {
            n_samples: n,
            ..SyntheticConfig::default()
        }
    }

    fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
        let mut entries = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else {
                    let rel = path.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                    entries.push((rel, fs::read(&path).unwrap()));
                }
            }
        }
        entries.sort();
        entries
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let cfg = small_cfg(24);
        generate_dataset(&cfg, 9, &a).unwrap();
        generate_dataset(&cfg, 9, &b).unwrap();
        assert_eq!(dir_bytes(&a), dir_bytes(&b));
    }

    #[test]
    fn different_seed_differs() {
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        let cfg = small_cfg(12);
        generate_dataset(&cfg, 1, &a).unwrap();
        generate_dataset(&cfg, 2, &b).unwrap();
        assert_ne!(dir_bytes(&a), dir_bytes(&b));
    }

    #[test]
    fn missing_parent_is_io_error() {
        let tmp = tempfile::tempdir().unwrap();
        let nested = tmp.path().join("does/not/exist");
        let err = generate_dataset(&small_cfg(12), 1, &nested).unwrap_err();
        assert!(matches!(err, Error::Io(_)));
    }

    #[test]
    fn split_counts_match_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        let manifest = generate_dataset(&small_cfg(40), 3, &out).unwrap();
        let count = |s: Split| manifest.samples.iter().filter(|m| m.split == s).count();
        assert_eq!(count(Split::Train), 32);
        assert_eq!(count(Split::Test), 6);
        assert_eq!(count(Split::Proxy), 2);
    }

    #[test]
    fn realized_snr_matches_drawn_snr() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        let manifest = generate_dataset(&small_cfg(16), 5, &out).unwrap();
        let ds = Dataset::open(&out).unwrap();
        for meta in &manifest.samples {
            let clean = ds.component(meta.index, Component::Clean).unwrap();
            let noise = ds.component(meta.index, Component::Noise).unwrap();
            let cs: f64 = clean.data().iter().sum();
            let ns: f64 = noise.data().iter().sum();
            let realized = 10.0 * (cs / ns).log10();
            assert!(
                (realized - meta.snr_db).abs() < 0.1,
                "sample {}: drawn {} realized {}",
                meta.index,
                meta.snr_db,
                realized
            );
        }
    }

    #[test]
    fn mask_roundtrips_through_files() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        let cfg = small_cfg(16);
        generate_dataset(&cfg, 7, &out).unwrap();
        let ds = Dataset::open(&out).unwrap();
        let params = IbmParams {
            lc_db: cfg.lc_db,
            ..IbmParams::default()
        };
        for index in 0..cfg.n_samples {
            let clean = ds.component(index, Component::Clean).unwrap();
            let noise = ds.component(index, Component::Noise).unwrap();
            let stored = ds.component(index, Component::Mask).unwrap();
            let recomputed = ibm(&clean, &noise, &params).unwrap();
            assert_eq!(stored, recomputed, "sample {index}");
        }
    }

    #[test]
    fn train_masks_are_mostly_dark() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        let manifest = generate_dataset(&small_cfg(64), 11, &out).unwrap();
        assert!(manifest.pos_weight > 1.0, "pos_weight {}", manifest.pos_weight);
    }

    #[test]
    fn nearest_centroid_recovers_class_from_visuals() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        let manifest = generate_dataset(&small_cfg(240), 13, &out).unwrap();
        let ds = Dataset::open(&out).unwrap();

        let mut centroids = vec![vec![]; NUM_CLASSES];
        let mut counts = vec![0usize; NUM_CLASSES];
        for meta in manifest.samples.iter().filter(|m| m.split == Split::Train) {
            let img = ds.component(meta.index, Component::Visual).unwrap();
            if centroids[meta.class].is_empty() {
                centroids[meta.class] = vec![0.0; img.numel()];
            }
            for (slot, &v) in centroids[meta.class].iter_mut().zip(img.data()) {
                *slot += v;
            }
            counts[meta.class] += 1;
        }
        for (c, count) in counts.iter().enumerate() {
            assert!(*count > 0, "class {c} absent from train split");
            for slot in centroids[c].iter_mut() {
                *slot /= *count as f64;
            }
        }

        let proxy: Vec<_> = manifest
            .samples
            .iter()
            .filter(|m| m.split == Split::Proxy)
            .collect();
        let mut hits = 0usize;
        for meta in &proxy {
            let img = ds.component(meta.index, Component::Visual).unwrap();
            let mut best = (f64::INFINITY, 0usize);
            for (c, centroid) in centroids.iter().enumerate() {
                let d: f64 = img
                    .data()
                    .iter()
                    .zip(centroid)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            if best.1 == meta.class {
                hits += 1;
            }
        }
        let acc = hits as f64 / proxy.len() as f64;
        assert!(acc > 0.95, "visual identifiability {acc}");
    }

    #[test]
    fn load_batch_and_bounds() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        let cfg = small_cfg(16);
        generate_dataset(&cfg, 17, &out).unwrap();
        let ds = Dataset::open(&out).unwrap();
        let batch = ds.load_batch(Split::Train, &[0, 1, 2]).unwrap();
        assert_eq!(batch.audio.shape(), &[3, 1, 8, 64]);
        assert_eq!(batch.visual.shape(), &[3, 1, 24, 24]);
        assert_eq!(batch.mask.shape(), &[3, 64]);
        let too_far = ds.split_indices(Split::Proxy).len();
        assert!(matches!(
            ds.load_batch(Split::Proxy, &[too_far]),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn resave_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        generate_dataset(&small_cfg(8), 19, &out).unwrap();
        let ds = Dataset::open(&out).unwrap();
        let copy = tmp.path().join("copy.mbt");
        ds.resave_component(0, Component::Audio, &copy).unwrap();
        let original = fs::read(sample_path(&out, 0, Component::Audio)).unwrap();
        assert_eq!(fs::read(&copy).unwrap(), original);
        // reading the copy agrees too
        assert_eq!(
            read_mbt(&copy).unwrap(),
            ds.component(0, Component::Audio).unwrap()
        );
    }

    #[test]
    fn corrupt_magic_is_format_error() {
        let tmp = tempfile::tempdir().unwrap();
        let out = tmp.path().join("d");
        generate_dataset(&small_cfg(8), 23, &out).unwrap();
        let victim = sample_path(&out, 0, Component::Mask);
        let mut bytes = fs::read(&victim).unwrap();
        bytes[0] = b'X';
        fs::write(&victim, bytes).unwrap();
        let ds = Dataset::open(&out).unwrap();
        assert!(matches!(
            ds.component(0, Component::Mask),
            Err(Error::Format(_))
        ));
    }
}
