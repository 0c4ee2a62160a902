// dev probe: sweep feedback-init regimes and scales, watch energy/f1
use burstprop::burst::{Activation, BurstConfig, BurstConv2dLayer, BurstDenseLayer};
use burstprop::data::{Dataset, SampleBatch, Split};
use burstprop::loss_opt::{wbce_grad, wbce_loss, Adam, AdamConfig};
use burstprop::metrics::MaskCounts;
use burstprop::tensor::{active_fraction, Conv2dSpec, Rng, Stream, Tensor};

#[derive(Clone, Copy, Debug)]
enum YInit {
    Sym,
    Rand0,    // zero-mean normal
    RandPos,  // uniform positive
    RandPosClip, // uniform positive, rectified after every update
}

struct Channel {
    conv1: BurstConv2dLayer,
    conv2: BurstConv2dLayer,
    embed: BurstDenseLayer,
    map: (usize, usize, usize),
}

fn make_y(w: &Tensor, shape: &[usize], kind: YInit, scale: f64, base_std: f64, rng: &mut Rng) -> Tensor {
    match kind {
        YInit::Sym => {
            let t = if shape.len() == 2 { w.transpose().unwrap() } else { w.clone() };
            t.scale(scale)
        }
        YInit::Rand0 => rng.normal_tensor(shape, base_std * scale),
        YInit::RandPos | YInit::RandPosClip => rng.uniform_tensor(shape, 0.0, 2.0 * base_std * scale),
    }
}

fn channel(input: [usize; 3], stride: usize, c: usize, e: usize, kind: YInit, yconv: f64, ydense: f64, wscale: f64, rng: &mut Rng) -> Channel {
    let s1 = Conv2dSpec::new(3, 3, stride, 1, 1, c).unwrap();
    let s2 = Conv2dSpec::new(3, 3, stride, 1, c, c).unwrap();
    let (h1, w1) = s1.out_hw(input[1], input[2]).unwrap();
    let (h2, w2) = s2.out_hw(h1, w1).unwrap();
    let std1 = (2.0 / 9.0f64).sqrt() * wscale;
    let std2 = (2.0 / (9.0 * c as f64)).sqrt() * wscale;
    let w1t = rng.normal_tensor(&s1.kernel_shape(), std1);
    let y1 = make_y(&w1t, &s1.kernel_shape(), kind, yconv, std1, rng);
    let w2t = rng.normal_tensor(&s2.kernel_shape(), std2);
    let y2 = make_y(&w2t, &s2.kernel_shape(), kind, yconv, std2, rng);
    let flat = c * h2 * w2;
    let stde = (2.0 / flat as f64).sqrt() * wscale;
    let we = rng.normal_tensor(&[e, flat], stde);
    let ye = make_y(&we, &[flat, e], kind, ydense, stde, rng);
    Channel {
        conv1: BurstConv2dLayer::new(w1t, y1, s1, Activation::Relu).unwrap(),
        conv2: BurstConv2dLayer::new(w2t, y2, s2, Activation::Relu).unwrap(),
        embed: BurstDenseLayer::new(we, ye, Activation::Relu).unwrap(),
        map: (c, h2, w2),
    }
}

impl Channel {
    fn forward(&mut self, x: &Tensor) -> Tensor {
        let a = self.conv1.forward(x).unwrap();
        let b = self.conv2.forward(&a).unwrap();
        let bs = b.shape()[0];
        let flat = b.reshape(&[bs, b.numel() / bs]).unwrap();
        self.embed.forward(&flat).unwrap()
    }

    fn feedback(&mut self, fb: &Tensor, fbb: &Tensor, cfg: &BurstConfig) -> Vec<(String, Tensor)> {
        self.embed.dendritic_potentials(fb, fbb, cfg).unwrap();
        self.embed.hidden_burst_prob(cfg).unwrap();
        self.embed.burst_rates().unwrap();
        let (f, fb2) = self.embed.project_feedback().unwrap();
        let bs = f.shape()[0];
        let (c, h, w) = self.map;
        let m = f.reshape(&[bs, c, h, w]).unwrap();
        let mb = fb2.reshape(&[bs, c, h, w]).unwrap();
        self.conv2.dendritic_potentials(&m, &mb, cfg).unwrap();
        self.conv2.hidden_burst_prob(cfg).unwrap();
        self.conv2.burst_rates().unwrap();
        let (d, db) = self.conv2.project_feedback().unwrap();
        self.conv1.dendritic_potentials(&d, &db, cfg).unwrap();
        self.conv1.hidden_burst_prob(cfg).unwrap();
        self.conv1.burst_rates().unwrap();
        let (g1w, g1y) = self.conv1.weight_update().unwrap();
        let (g2w, g2y) = self.conv2.weight_update().unwrap();
        let (gew, gey) = self.embed.weight_update().unwrap();
        vec![
            ("c1w".into(), g1w), ("c1y".into(), g1y),
            ("c2w".into(), g2w), ("c2y".into(), g2y),
            ("ew".into(), gew), ("ey".into(), gey),
        ]
    }

    fn energy(&self) -> (f64, f64, f64) {
        (
            active_fraction(self.conv1.event_rate().unwrap()),
            active_fraction(self.conv2.event_rate().unwrap()),
            active_fraction(self.embed.event_rate().unwrap()),
        )
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let kind = match args.get(1).map(|s| s.as_str()) {
        Some("sym") => YInit::Sym,
        Some("rand0") => YInit::Rand0,
        Some("randpos") => YInit::RandPos,
        Some("randposclip") => YInit::RandPosClip,
        _ => YInit::Sym,
    };
    let yconv: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let ydense: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let wscale: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let epochs: usize = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(12);
    let batch: usize = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(32);
    println!("kind {kind:?} yconv {yconv} ydense {ydense} wscale {wscale}");

    let ds = Dataset::open(std::path::Path::new("/tmp/bp/data")).unwrap();
    let train_pos: Vec<usize> = (0..ds.split_indices(Split::Train).len()).collect();
    let train = ds.load_batch(Split::Train, &train_pos).unwrap();
    let test_pos: Vec<usize> = (0..ds.split_indices(Split::Test).len()).collect();
    let test = ds.load_batch(Split::Test, &test_pos).unwrap();
    let pw = ds.manifest.pos_weight;

    let mut rng = Rng::seeded(1, Stream::Weights);
    let (c, e, f) = (8usize, 64usize, 64usize);
    let mut audio = channel([1, 8, 64], 1, c, e, kind, yconv, ydense, wscale, &mut rng);
    let mut visual = channel([1, 24, 24], 2, c, e, kind, yconv, ydense, wscale, &mut rng);
    let stdh = (1.0 / (2 * e) as f64).sqrt() * wscale;
    let wh = rng.normal_tensor(&[f, 2 * e], stdh);
    let yh = make_y(&wh, &[2 * e, f], kind, ydense, stdh, &mut rng);
    let mut head = BurstDenseLayer::new(wh, yh, Activation::Sigmoid).unwrap();

    let cfg = BurstConfig::default();
    let mut opt = Adam::new(AdamConfig::default());
    let mut shuffle = Rng::seeded(1, Stream::Shuffle);

    let fwd = |audio: &mut Channel, visual: &mut Channel, head: &mut BurstDenseLayer, b: &SampleBatch| -> Tensor {
        let ea = audio.forward(&b.audio);
        let ev = visual.forward(&b.visual);
        head.forward(&Tensor::concat_cols(&ea, &ev).unwrap()).unwrap()
    };

    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle.shuffle(&mut order);
        for chunk in order.chunks(batch) {
            let batch = train.gather(chunk).unwrap();
            let probs = fwd(&mut audio, &mut visual, &mut head, &batch);
            let grad = wbce_grad(&probs, &batch.mask, pw, 1e-7).unwrap();
            head.output_burst_prob(&grad, &cfg).unwrap();
            head.burst_rates().unwrap();
            let (fb, fbb) = head.project_feedback().unwrap();
            let (fa, fv) = fb.split_cols(e).unwrap();
            let (fab, fvb) = fbb.split_cols(e).unwrap();
            let (ghw, ghy) = head.weight_update().unwrap();
            let mut ups = vec![("hw".to_string(), ghw), ("hy".to_string(), ghy)];
            for (n, g) in audio.feedback(&fa, &fab, &cfg) {
                ups.push((format!("a.{n}"), g));
            }
            for (n, g) in visual.feedback(&fv, &fvb, &cfg) {
                ups.push((format!("v.{n}"), g));
            }
            for (name, g) in &ups {
                let p: &mut Tensor = match name.as_str() {
                    "hw" => head.w_mut(),
                    "hy" => head.y_mut(),
                    "a.c1w" => audio.conv1.w_mut(), "a.c1y" => audio.conv1.y_mut(),
                    "a.c2w" => audio.conv2.w_mut(), "a.c2y" => audio.conv2.y_mut(),
                    "a.ew" => audio.embed.w_mut(), "a.ey" => audio.embed.y_mut(),
                    "v.c1w" => visual.conv1.w_mut(), "v.c1y" => visual.conv1.y_mut(),
                    "v.c2w" => visual.conv2.w_mut(), "v.c2y" => visual.conv2.y_mut(),
                    "v.ew" => visual.embed.w_mut(), "v.ey" => visual.embed.y_mut(),
                    _ => unreachable!(),
                };
                opt.step(name, p, g).unwrap();
                if matches!(kind, YInit::RandPosClip) && name.ends_with('y') {
                    for v in p.data_mut() {
                        if *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
            }
        }
        // evaluate on test
        let mut counts = MaskCounts::default();
        let mut acc_energy = [0.0f64; 6];
        let mut batches = 0.0;
        let mut start = 0;
        while start < test.len() {
            let end = (start + 32).min(test.len());
            let rows: Vec<usize> = (start..end).collect();
            let b = test.gather(&rows).unwrap();
            let probs = fwd(&mut audio, &mut visual, &mut head, &b);
            let pred = probs.map(|p| if p >= 0.5 { 1.0 } else { 0.0 });
            counts.accumulate(&pred, &b.mask).unwrap();
            let (a1, a2, a3) = audio.energy();
            let (v1, v2, v3) = visual.energy();
            for (slot, val) in acc_energy.iter_mut().zip([a1, a2, a3, v1, v2, v3]) {
                *slot += val;
            }
            batches += 1.0;
            start = end;
        }
        let loss_probs = fwd(&mut audio, &mut visual, &mut head, &test);
        let loss = wbce_loss(&loss_probs, &test.mask, pw, 1e-7).unwrap();
        let units = [4096.0, 4096.0, 64.0, 1152.0, 288.0, 64.0];
        let pooled: f64 = acc_energy
            .iter()
            .zip(&units)
            .map(|(v, u)| v / batches * u)
            .sum::<f64>()
            / units.iter().sum::<f64>();
        let e: Vec<String> = acc_energy.iter().map(|v| format!("{:.2}", v / batches)).collect();
        println!(
            "epoch {epoch:>2} loss {loss:.4} f1 {:.3} acc {:.1} pooled {pooled:.3} energy [{}]",
            counts.f1(),
            counts.accuracy(),
            e.join(" ")
        );
    }
}
